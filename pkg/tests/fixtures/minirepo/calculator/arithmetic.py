"""Arithmetic operations."""


def add(a, b):
    """Add two numbers."""
    return a + b


def divide(a, b):
    """Divide a by b, crashing on zero divisors."""
    return a / b


class Accumulator:
    """Keeps a running total of added values."""

    def __init__(self):
        self.total = 0

    def add_value(self, value):
        self.total = add(self.total, value)
        return self.total

    def average(self, count):
        return divide(self.total, count)
