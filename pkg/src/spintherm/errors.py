"""Exception types shared across the package.

The CLI maps these onto exit codes: :class:`ConfigError` -> 2,
:class:`DomainError` -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration (bad key, bad shape, out-of-range size)."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DomainError(ValueError):
    """A numerical quantity lies outside the admissible domain."""

    def __init__(self, message, quantity=None):
        super().__init__(message)
        self.quantity = quantity
