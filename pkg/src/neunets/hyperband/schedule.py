"""Successive-halving schedules.

A schedule is a list of brackets; bracket ``s`` starts many configurations
at a small epoch allowance and repeatedly keeps the best ``1/eta`` of
them while multiplying the allowance by ``eta``.  Later brackets trade
breadth for depth, down to bracket 0 which trains a handful of
configurations at the full allowance ``R`` straight away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Rung:
    """``n`` configurations, each trained to ``r`` total epochs."""

    n: int
    r: int


@dataclass(frozen=True)
class Bracket:
    s: int
    rungs: tuple


@dataclass(frozen=True)
class HyperbandSchedule:
    R: int
    eta: int
    s_max: int
    brackets: tuple  # ordered s_max .. 0


def build_schedule(R: int, eta: int = 3) -> HyperbandSchedule:
    """Rung table for maximum resource ``R`` (epochs) and halving factor ``eta``.

    ``s_max = floor(log_eta R)``; bracket ``s`` opens with
    ``ceil((s_max+1)/(s+1)) * eta**s`` configurations at ``R // eta**s``
    epochs.  Within a bracket the counts floor-divide by ``eta`` and the
    epochs multiply by ``eta``, one rung per promotion.
    """
    if int(R) != R or R < 1:
        raise ValueError(f"R must be an integer >= 1, got {R!r}")
    if int(eta) != eta or eta < 2:
        raise ValueError(f"eta must be an integer >= 2, got {eta!r}")
    R, eta = int(R), int(eta)

    s_max = 0
    while eta ** (s_max + 1) <= R:
        s_max += 1

    brackets = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) / (s + 1)) * eta ** s
        r = R // eta ** s
        rungs = []
        for _ in range(s + 1):
            rungs.append(Rung(n=n, r=r))
            n //= eta
            r *= eta
        brackets.append(Bracket(s=s, rungs=tuple(rungs)))
    return HyperbandSchedule(R=R, eta=eta, s_max=s_max, brackets=tuple(brackets))
