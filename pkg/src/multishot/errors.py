"""Exception types shared across modules.

Everything user-facing derives from ValueError so callers (and the CLI,
which maps validation failures to exit code 2) can catch one base class.
"""


class LayoutError(ValueError):
    """Invalid shot plan, reference spec, box, or token layout."""


class FullyMaskedRowError(ValueError):
    """A softmax row had no unmasked entry; upstream masks must prevent this."""
