"""Exception hierarchy shared by every gridcharge module.

Exit-code mapping used by the command line front end:

====  =========================================================
code  raised for
====  =========================================================
2     input problems: ParseError, ValidationError, UnknownTemplate,
      MalformedUtility, MissingDistance, OutOfDomain, InfiniteCap,
      NonpositiveReactance, DisconnectedNetwork, IoError, OSError
3     AllLevelsInfeasible (no price level admits a feasible market)
4     numerical failures: SingularMatrix, NumericalBreakdown
====  =========================================================
"""

from __future__ import annotations


class GridChargeError(Exception):
    """Base class for all gridcharge errors."""


class SingularMatrix(GridChargeError):
    """A pivot fell below the singularity threshold during factorization."""


class NumericalBreakdown(GridChargeError):
    """An iterative solve exceeded its iteration cap or lost feasibility."""


class UnboundedProgram(GridChargeError):
    """Raised only when an unbounded program reaches a caller that cannot
    represent the condition in its result type."""


class NonpositiveReactance(GridChargeError):
    """A transmission line was given zero or negative reactance."""


class DisconnectedNetwork(GridChargeError):
    """The line list does not connect every bus to the reference bus."""


class UnbalancedInjections(GridChargeError):
    """Bus injections do not sum to zero within tolerance."""


class OutOfDomain(GridChargeError):
    """A piecewise-linear utility was evaluated outside its domain."""


class MalformedUtility(GridChargeError):
    """Utility segments violate ordering or concavity requirements."""


class MissingDistance(GridChargeError):
    """A trade pair references buses absent from the distance matrix."""


class IncompleteIndexMap(GridChargeError):
    """A program's column/row index map is not a bijection."""


class InfiniteCap(GridChargeError):
    """A finite constant was requested but some trade cap is infinite."""


class AllLevelsInfeasible(GridChargeError):
    """Every price level was excluded; no equilibrium exists on the grid."""


class ParseError(GridChargeError):
    """A scenario or profile file could not be parsed."""


class ValidationError(GridChargeError):
    """A parsed document violated the schema.

    ``pointer`` holds a JSON-pointer-style path to the offending field.
    """

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer
        self.reason = message


class UnknownTemplate(GridChargeError):
    """generate_scenario was asked for a bus template it does not bundle."""


class IoError(GridChargeError):
    """A report or scenario file could not be written."""
