"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A value violates a documented precondition or invariant."""


class FormatError(ValueError):
    """A file or byte stream does not match its declared layout."""
