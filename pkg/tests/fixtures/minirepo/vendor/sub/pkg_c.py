"""Vendored dependency, excluded from scans."""

VENDORED_C = True
