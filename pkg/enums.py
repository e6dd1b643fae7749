"""Module for storing all enums."""

from enum import Enum, IntEnum, auto


class ParentEnum(Enum):
    def __str__(self):
        return self.name.lower()

    def __repr__(self) -> str:
        return self.name

    @classmethod
    def parse(cls, text: str):
        """Returns the member whose lower case name is `text`."""
        try:
            return cls[text.strip().upper()]
        except KeyError:
            choices = ", ".join(str(member) for member in cls)
            raise ValueError(f"'{text}' is not one of: {choices}.")


class QuadratureScheme(ParentEnum):
    TENSOR_MIDPOINT = auto()
    MONTE_CARLO = auto()


class Boundary(ParentEnum):
    PERIODIC = auto()
    FREE = auto()


class MoveType(ParentEnum):
    INSERT = auto()
    DELETE = auto()
    TRANSLATE = auto()


class SeriesKind(ParentEnum):
    A = auto()
    B = auto()


class Command(ParentEnum):
    SOLVE = auto()
    FORWARD = auto()
    SIMULATE = auto()
    VERIFY = auto()
    URSELL = auto()
    PROBE = auto()


class Stream(IntEnum):
    """First key of every random stream split off the run seed."""

    QUADRATURE = 1
    PROBE = 2
    SIMULATION = 3
    PACKING = 4
    TEST = 5


class ExitCode(IntEnum):
    OK = 0
    FAILURE = 1
    INADMISSIBLE = 2
    NO_CONVERGENCE = 3
    VERIFICATION_FAILED = 4
    USAGE = 64
