"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: invariant violations exit with 2,
input/configuration/IO problems with 1.
"""


class InputError(ValueError):
    """A caller-supplied argument violates a documented precondition."""


class NumericalError(RuntimeError):
    """A computation left its valid numerical regime (e.g. a denominator
    that the math guarantees positive came out non-positive)."""


class InvariantViolation(RuntimeError):
    """A runtime invariant that should hold by construction was broken."""
