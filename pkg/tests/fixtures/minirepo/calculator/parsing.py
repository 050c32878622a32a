"""Expression parsing helpers."""


def tokenize_expr(text):
    return text.split()


def parse_expression(text):
    tokens = tokenize_expr(text)
    return [t for t in tokens if t]
