"""Result formatting."""

from calculator.validation import validate_number


def format_result(value):
    validate_number(value)
    return f"= {value}"
