"""Vendored dependency, excluded from scans."""

VENDORED_A = True
