"""Namespace-aware XML subset codec.

The wire dialect is deliberately small: elements, attributes, character
data and namespaces. DTDs, processing instructions and entity
declarations are rejected outright (comments are skipped), which closes
the XXE and entity-expansion attack surface without a schema validator.
Serialization is deterministic -- the same tree always yields the same
bytes -- so golden tests can compare output byte for byte.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from xml.parsers import expat

from .errors import MalformedXml, Oversize

XML_NS = "http://www.w3.org/XML/1998/namespace"

DEFAULT_MAX_SIZE = 1024 * 1024
DEFAULT_MAX_DEPTH = 32

# Stable prefixes for the namespaces that dominate DPWS traffic; anything
# else gets ns0, ns1, ... in first-appearance order.
PREFERRED_PREFIXES = {
    "http://www.w3.org/2003/05/soap-envelope": "s",
    "http://www.w3.org/2005/08/addressing": "wsa",
    "http://schemas.xmlsoap.org/ws/2004/08/addressing": "wsa",
    "http://docs.oasis-open.org/ws-dd/ns/discovery/2009/01": "wsd",
    "http://schemas.xmlsoap.org/ws/2005/04/discovery": "wsd",
    "http://docs.oasis-open.org/ws-dd/ns/dpws/2009/01": "dpws",
    "http://schemas.xmlsoap.org/ws/2006/02/devprof": "dpws",
    "http://schemas.xmlsoap.org/ws/2004/08/eventing": "wse",
    "http://schemas.xmlsoap.org/ws/2004/09/transfer": "wxf",
    "http://schemas.xmlsoap.org/ws/2004/09/mex": "mex",
}


@dataclass(frozen=True, order=True)
class QName:
    """Expanded XML name. Identity is the (namespace, local) pair; prefixes
    are serialization detail and never part of equality."""

    namespace: str
    local: str

    def __post_init__(self):
        if not self.local:
            raise ValueError("QName local part must be non-empty")
        if ":" in self.local or any(c.isspace() for c in self.local):
            raise ValueError(f"QName local part {self.local!r} contains ':' or whitespace")

    def __str__(self) -> str:
        return f"{{{self.namespace}}}{self.local}" if self.namespace else self.local

    @classmethod
    def parse(cls, text: str) -> "QName":
        """Parse Clark notation '{namespace}local' (or a bare local name)."""
        text = text.strip()
        if text.startswith("{"):
            ns, _, local = text[1:].partition("}")
            return cls(ns, local)
        return cls("", text)


@dataclass(frozen=True)
class XmlElement:
    """One element of the tree: name, ordered attributes, ordered children
    and the concatenation of all character data directly inside it.

    ``ns_decls`` carries prefix bindings declared on this element. The
    parser fills it in and the serializer re-emits it, so prefixed tokens
    in character data (QName lists) stay resolvable; it is not part of
    structural equality.
    """

    name: QName
    attributes: tuple[tuple[QName, str], ...] = ()
    children: tuple["XmlElement", ...] = ()
    text: str = ""
    ns_decls: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        seen = set()
        for attr_name, _ in self.attributes:
            if attr_name in seen:
                raise ValueError(f"duplicate attribute {attr_name}")
            seen.add(attr_name)

    def attr(self, name: QName | str) -> str | None:
        if isinstance(name, str):
            name = QName.parse(name)
        for attr_name, value in self.attributes:
            if attr_name == name:
                return value
        return None

    def find(self, name: QName) -> "XmlElement | None":
        for child in self.children:
            if child.name == name:
                return child
        return None

    def find_all(self, name: QName) -> list["XmlElement"]:
        return [child for child in self.children if child.name == name]


def element(
    name: QName,
    *children: XmlElement,
    text: str = "",
    attrs: tuple[tuple[QName, str], ...] = (),
    ns_decls: tuple[tuple[str, str], ...] = (),
) -> XmlElement:
    """Convenience constructor used by the message codecs."""
    return XmlElement(name=name, attributes=tuple(attrs), children=tuple(children),
                      text=text, ns_decls=tuple(ns_decls))


def structurally_equal(a: XmlElement, b: XmlElement) -> bool:
    """QName-level tree equality: prefix-insensitive by construction,
    namespace declarations ignored, whitespace-only text treated as empty."""
    if a.name != b.name or a.attributes != b.attributes:
        return False
    text_a = a.text if a.text.strip() else ""
    text_b = b.text if b.text.strip() else ""
    if text_a != text_b:
        return False
    if len(a.children) != len(b.children):
        return False
    return all(structurally_equal(ca, cb) for ca, cb in zip(a.children, b.children))


class _TreeBuilder:
    """Expat event sink that also enforces the subset restrictions."""

    def __init__(self, max_depth: int):
        self.max_depth = max_depth
        self.root: XmlElement | None = None
        # per open element: [name, attrs, children, text_parts, ns_decls]
        self._stack: list[list] = []
        self._pending_decls: list[tuple[str, str]] = []

    # -- forbidden constructs --

    def forbid_doctype(self, *args):
        raise MalformedXml("DOCTYPE declarations are not accepted")

    def forbid_pi(self, target, data):
        raise MalformedXml(f"processing instruction <?{target}?> is not accepted")

    def forbid_entity_decl(self, *args):
        raise MalformedXml("entity declarations are not accepted")

    def forbid_external_ref(self, *args):
        raise MalformedXml("external entity references are not accepted")

    def xml_decl(self, version, encoding, standalone):
        if encoding is not None and encoding.lower() not in ("utf-8", "utf8"):
            raise MalformedXml(f"only UTF-8 documents are accepted, got {encoding!r}")

    # -- tree building --

    def start_ns(self, prefix, uri):
        self._pending_decls.append((prefix or "", uri or ""))

    def end_ns(self, prefix):
        pass

    def start_element(self, tag, attrs):
        if len(self._stack) >= self.max_depth:
            raise MalformedXml(f"element tree deeper than {self.max_depth}")
        attributes = []
        for i in range(0, len(attrs), 2):
            attributes.append((self._split(attrs[i]), attrs[i + 1]))
        names = [n for n, _ in attributes]
        if len(names) != len(set(names)):
            raise MalformedXml("duplicate attribute after namespace resolution")
        decls = tuple(self._pending_decls)
        self._pending_decls = []
        self._stack.append([self._split(tag), tuple(attributes), [], [], decls])

    def end_element(self, tag):
        name, attributes, children, text_parts, decls = self._stack.pop()
        elem = XmlElement(name=name, attributes=attributes, children=tuple(children),
                          text="".join(text_parts), ns_decls=decls)
        if self._stack:
            self._stack[-1][2].append(elem)
        else:
            self.root = elem

    def characters(self, data):
        if self._stack:
            self._stack[-1][3].append(data)
        elif data.strip():
            raise MalformedXml("character data outside the root element")

    @staticmethod
    def _split(tag: str) -> QName:
        if " " in tag:
            ns, local = tag.split(" ", 1)
            return QName(ns, local)
        return QName("", tag)


def parse_xml(
    data: bytes,
    *,
    max_size: int = DEFAULT_MAX_SIZE,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> XmlElement:
    """Parse one document into an element tree.

    Raises Oversize before touching the parser if the input exceeds
    ``max_size`` octets, and MalformedXml for anything that is not
    well-formed UTF-8 XML inside the supported subset.
    """
    if len(data) > max_size:
        raise Oversize(f"document is {len(data)} octets, cap is {max_size}")
    parser = expat.ParserCreate(namespace_separator=" ")
    parser.ordered_attributes = True
    builder = _TreeBuilder(max_depth)
    parser.StartElementHandler = builder.start_element
    parser.EndElementHandler = builder.end_element
    parser.CharacterDataHandler = builder.characters
    parser.StartNamespaceDeclHandler = builder.start_ns
    parser.EndNamespaceDeclHandler = builder.end_ns
    parser.StartDoctypeDeclHandler = builder.forbid_doctype
    parser.ProcessingInstructionHandler = builder.forbid_pi
    parser.EntityDeclHandler = builder.forbid_entity_decl
    parser.UnparsedEntityDeclHandler = builder.forbid_entity_decl
    parser.NotationDeclHandler = builder.forbid_entity_decl
    parser.ExternalEntityRefHandler = builder.forbid_external_ref
    parser.XmlDeclHandler = builder.xml_decl
    try:
        parser.Parse(data, True)
    except expat.ExpatError as exc:
        raise MalformedXml(f"not well-formed: {exc}") from exc
    except ValueError as exc:
        raise MalformedXml(str(exc)) from exc
    if builder.root is None:
        raise MalformedXml("document has no root element")
    return builder.root


def _escape_text(value: str) -> str:
    return value.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _escape_attr(value: str) -> str:
    return (value.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


class _PrefixTable:
    def __init__(self):
        self.by_uri: dict[str, str] = {XML_NS: "xml"}
        self.taken: set[str] = {"xml", "xmlns"}
        self._counter = 0
        self._reserved_uris: dict[str, set[str]] = {}

    def reserve(self, prefix: str, uri: str):
        self.taken.add(prefix)
        self._reserved_uris.setdefault(prefix, set()).add(uri)

    def adopt_root_bindings(self, decls: tuple[tuple[str, str], ...]):
        """Reuse a binding declared on the root for auto-assignment, when
        no descendant rebinds that prefix to a different namespace."""
        for prefix, uri in decls:
            if not prefix or uri in self.by_uri:
                continue
            if len(self._reserved_uris.get(prefix, ())) == 1:
                self.by_uri[uri] = prefix

    def assign(self, uri: str) -> str:
        if uri in self.by_uri:
            return self.by_uri[uri]
        prefix = PREFERRED_PREFIXES.get(uri)
        if prefix is None or prefix in self.taken:
            while True:
                prefix = f"ns{self._counter}"
                self._counter += 1
                if prefix not in self.taken:
                    break
        self.by_uri[uri] = prefix
        self.taken.add(prefix)
        return prefix


def _collect_namespaces(elem: XmlElement, table: _PrefixTable):
    if elem.name.namespace:
        table.assign(elem.name.namespace)
    for attr_name, _ in elem.attributes:
        if attr_name.namespace:
            table.assign(attr_name.namespace)
    for child in elem.children:
        _collect_namespaces(child, table)


def _reserve_local_decls(elem: XmlElement, table: _PrefixTable):
    for prefix, uri in elem.ns_decls:
        if prefix:
            table.reserve(prefix, uri)
    for child in elem.children:
        _reserve_local_decls(child, table)


def serialize_xml(root: XmlElement, *, declaration: bool = True) -> bytes:
    """Serialize a tree to compact UTF-8, no BOM.

    Prefix assignment is deterministic (preferred table, then ns0, ns1,
    ... by first appearance), all auto-assigned bindings are declared on
    the root, and local ``ns_decls`` are re-emitted in place, so the same
    tree always produces identical bytes. Auto-assignment never invents a
    second prefix for a namespace the root already binds unambiguously,
    and never reuses a prefix that any local declaration claims for
    something else. Constructed trees should
    declare prefixed bindings only (the q0, q1, ... convention of
    qname_list_content); default-namespace declarations are merely
    round-tripped from parsed input.
    """
    table = _PrefixTable()
    _reserve_local_decls(root, table)
    table.adopt_root_bindings(root.ns_decls)
    _collect_namespaces(root, table)

    out: list[str] = []
    if declaration:
        out.append('<?xml version="1.0" encoding="utf-8"?>')

    def name_of(qname: QName) -> str:
        if not qname.namespace:
            return qname.local
        if qname.namespace == XML_NS:
            return f"xml:{qname.local}"
        return f"{table.by_uri[qname.namespace]}:{qname.local}"

    def emit(elem: XmlElement, is_root: bool):
        out.append(f"<{name_of(elem.name)}")
        if is_root:
            local = set(elem.ns_decls)
            for uri, prefix in sorted(table.by_uri.items(), key=lambda kv: kv[1]):
                if uri != XML_NS and (prefix, uri) not in local:
                    out.append(f' xmlns:{prefix}="{_escape_attr(uri)}"')
        for prefix, uri in elem.ns_decls:
            token = f"xmlns:{prefix}" if prefix else "xmlns"
            out.append(f' {token}="{_escape_attr(uri)}"')
        for attr_name, value in elem.attributes:
            out.append(f' {name_of(attr_name)}="{_escape_attr(value)}"')
        if not elem.text and not elem.children:
            out.append("/>")
            return
        out.append(">")
        if elem.text:
            out.append(_escape_text(elem.text))
        for child in elem.children:
            emit(child, False)
        out.append(f"</{name_of(elem.name)}>")

    emit(root, True)
    return "".join(out).encode("utf-8")


# --- QName lists in character data (WS-Discovery Types and friends) ---

def qname_list_content(qnames: list[QName] | tuple[QName, ...]) -> tuple[str, tuple[tuple[str, str], ...]]:
    """Render QNames as prefixed tokens plus the declarations they need.

    Returns (text, ns_decls) to place on the carrying element. Prefixes
    are q0, q1, ... per distinct namespace in order of first use.
    """
    decls: dict[str, str] = {}
    tokens = []
    for qn in qnames:
        if not qn.namespace:
            tokens.append(qn.local)
            continue
        prefix = decls.get(qn.namespace)
        if prefix is None:
            prefix = f"q{len(decls)}"
            decls[qn.namespace] = prefix
        tokens.append(f"{prefix}:{qn.local}")
    return " ".join(tokens), tuple((p, uri) for uri, p in decls.items())


def parse_qname_list(text: str, scope: dict[str, str]) -> tuple[QName, ...]:
    """Resolve space-separated prefixed tokens against in-scope bindings.

    Tokens with an unbound prefix are dropped: a foreign peer's sloppy
    message should degrade, not abort, discovery.
    """
    result = []
    for token in text.split():
        prefix, sep, local = token.rpartition(":")
        if not sep:
            result.append(QName(scope.get("", ""), token))
        elif prefix in scope:
            result.append(QName(scope[prefix], local))
    return tuple(result)


def ns_scope(*path: XmlElement) -> dict[str, str]:
    """Accumulate prefix bindings along a root-to-element path."""
    scope: dict[str, str] = {"xml": XML_NS}
    for elem in path:
        for prefix, uri in elem.ns_decls:
            scope[prefix] = uri
    return scope


def with_outer_scope(elem: XmlElement, *outer_decls: tuple[tuple[str, str], ...]) -> XmlElement:
    """Copy of ``elem`` with enclosing namespace declarations folded into
    its own, so a subtree detached from its document stays resolvable.

    Bindings the element itself declares win over the folded ones.
    """
    merged: dict[str, str] = {}
    for decls in outer_decls:
        merged.update(decls)
    if not merged:
        return elem
    own = {prefix for prefix, _ in elem.ns_decls}
    folded = tuple((p, u) for p, u in merged.items() if p not in own) + elem.ns_decls
    return XmlElement(name=elem.name, attributes=elem.attributes,
                      children=elem.children, text=elem.text, ns_decls=folded)
