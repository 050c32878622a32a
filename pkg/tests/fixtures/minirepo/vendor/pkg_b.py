"""Vendored dependency, excluded from scans."""

VENDORED_B = True
