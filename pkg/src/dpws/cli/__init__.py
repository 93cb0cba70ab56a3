"""Operator tooling: the dpwsd device host and the dpws multitool."""
