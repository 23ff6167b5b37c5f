"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or inconsistent user input (files, shapes, parameters)."""


class NumericalError(RuntimeError):
    """A numerical routine failed to produce a finite result."""
