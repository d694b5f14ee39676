"""Importable flux callables for CLI custom-flux configs."""


def anti_monotone(x, y):
    return -y
