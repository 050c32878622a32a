"""Application entry point."""

from calculator.arithmetic import add, divide
from calculator.formatting import format_result


def run(a, b):
    total = add(a, b)
    ratio = divide(a, b)
    return format_result(total), format_result(ratio)
