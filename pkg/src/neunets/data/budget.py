"""Wall-clock budget tiers keyed on dataset size.

Image datasets up to 10K examples get 2 hours, up to 75K get 5 hours,
anything larger 16 hours; text thresholds are 250K and 2M.  Boundaries
are inclusive.  A divisor scales the caps down for desk-scale runs.
"""

from __future__ import annotations

from dataclasses import dataclass

_HOURS = 3600.0

_THRESHOLDS = {
    "image": ((10_000, "low"), (75_000, "medium")),
    "text": ((250_000, "low"), (2_000_000, "medium")),
}

_CAPS = {"low": 2 * _HOURS, "medium": 5 * _HOURS, "high": 16 * _HOURS}


@dataclass(frozen=True)
class BudgetTier:
    tier: str
    cap_seconds: float


def classify_budget(n_examples: int, domain: str, divisor: float = 1.0) -> BudgetTier:
    if n_examples < 1:
        raise ValueError(f"need at least one example, got {n_examples}")
    if domain not in _THRESHOLDS:
        raise ValueError(f"unknown domain {domain!r}; expected 'image' or 'text'")
    if divisor <= 0:
        raise ValueError("budget divisor must be positive")
    tier = "high"
    for bound, name in _THRESHOLDS[domain]:
        if n_examples <= bound:
            tier = name
            break
    return BudgetTier(tier, _CAPS[tier] / divisor)
