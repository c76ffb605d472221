"""Leave-one-speaker-out fold plans.

Folds are ordered by speaker id. Run r tests on fold r, validates on
fold (r + 1) mod n and trains on the rest.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import SingleSpeaker


@dataclass(frozen=True)
class Run:
    test: int
    val: int
    train: tuple[int, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[str, ...], ...]
    runs: tuple[Run, ...]

    def speakers(self, indices) -> set[str]:
        return {s for i in indices for s in self.folds[i]}

    def check_disjoint(self) -> None:
        for run in self.runs:
            test, val, train = self.speakers([run.test]), self.speakers([run.val]), self.speakers(run.train)
            if test & val or test & train or val & train:
                raise AssertionError(f"run {run.test}: speaker roles overlap")


def build_folds(records, scheme: str = "by_speaker") -> FoldPlan:
    if scheme != "by_speaker":
        raise ValueError(f"unknown fold scheme {scheme!r}")
    speakers = sorted({r.speaker_id for r in records})
    n = len(speakers)
    if n < 3:
        raise SingleSpeaker(f"{n} speakers cannot fill disjoint train/validation/test roles")
    runs = tuple(Run(r, (r + 1) % n, tuple(i for i in range(n) if i not in (r, (r + 1) % n))) for r in range(n))
    plan = FoldPlan(tuple((s,) for s in speakers), runs)
    plan.check_disjoint()
    return plan
