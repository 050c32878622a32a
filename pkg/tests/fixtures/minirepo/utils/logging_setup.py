"""Logging configuration for the demo app."""

import logging


def setup_logging(level=logging.INFO):
    logging.basicConfig(level=level)
    return logging.getLogger("miniapp")
