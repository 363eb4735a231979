"""The eight click-experiment conditions and their participant tallies.

Conditions D1-D4 re-rank the 20 pictures by cumulative clicks; S1-S4 keep
the initial order throughout. Class 0 is the cat pictures (initially on
top), class 1 the dog pictures (initially at the bottom); every picture
starts with one click. Type 0 participants are "cat persons", type 1 "dog
persons", type 2 neither.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["ExperimentCondition", "CONDITIONS", "CONDITIONS_BY_ID", "SIM2_TYPE_COUNTS", "M_TOTAL"]

M_TOTAL = 20


@dataclass(frozen=True)
class ExperimentCondition:
    id: str
    m0: int
    m1: int
    dynamic: bool
    n_type0: int
    n_type1: int
    n_type2: int

    @property
    def n_participants(self) -> int:
        return self.n_type0 + self.n_type1 + self.n_type2

    def type_counts(self) -> tuple[int, int, int]:
        return (self.n_type0, self.n_type1, self.n_type2)


CONDITIONS: tuple[ExperimentCondition, ...] = (
    ExperimentCondition("D1", m0=3, m1=17, dynamic=True, n_type0=34, n_type1=53, n_type2=9),
    ExperimentCondition("D2", m0=8, m1=12, dynamic=True, n_type0=30, n_type1=51, n_type2=21),
    ExperimentCondition("D3", m0=12, m1=8, dynamic=True, n_type0=24, n_type1=64, n_type2=11),
    ExperimentCondition("D4", m0=17, m1=3, dynamic=True, n_type0=29, n_type1=56, n_type2=16),
    ExperimentCondition("S1", m0=3, m1=17, dynamic=False, n_type0=34, n_type1=49, n_type2=13),
    ExperimentCondition("S2", m0=8, m1=12, dynamic=False, n_type0=30, n_type1=52, n_type2=19),
    ExperimentCondition("S3", m0=12, m1=8, dynamic=False, n_type0=25, n_type1=61, n_type2=9),
    ExperimentCondition("S4", m0=17, m1=3, dynamic=False, n_type0=33, n_type1=48, n_type2=15),
)

CONDITIONS_BY_ID = {c.id: c for c in CONDITIONS}

#: Standardized 100-user mix (type0, type1, type2) used when every
#: condition is simulated with the same type composition.
SIM2_TYPE_COUNTS = (30, 55, 15)
