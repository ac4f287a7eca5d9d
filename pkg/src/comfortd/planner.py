"""Energy-minimal actuator planning under a comfort-target constraint.

The level grid is tiny (a handful of devices, a few levels each), so the
planner enumerates every combination and keeps the cheapest feasible one.
Ties break toward fewer active devices, then lexicographically lower levels.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class Actuator:
    """A device with discrete levels; level 0 is off (no power, no effect)."""

    name: str
    power_w: tuple[float, ...]  # per level, non-decreasing
    comfort_delta: tuple[float, ...]  # per level, |delta| non-decreasing

    def __post_init__(self):
        if len(self.power_w) != len(self.comfort_delta) or not self.power_w:
            raise ValueError(f"{self.name}: power and delta tables must align")
        if self.power_w[0] != 0.0 or self.comfort_delta[0] != 0.0:
            raise ValueError(f"{self.name}: level 0 must be off (0 W, 0 delta)")
        for i in range(1, len(self.power_w)):
            if self.power_w[i] < self.power_w[i - 1]:
                raise ValueError(f"{self.name}: power must be non-decreasing")
            if abs(self.comfort_delta[i]) < abs(self.comfort_delta[i - 1]):
                raise ValueError(f"{self.name}: |comfort_delta| must be non-decreasing")

    @property
    def n_levels(self) -> int:
        return len(self.power_w)


@dataclass(frozen=True)
class ActuatorPlan:
    levels: dict[str, int]
    total_power_w: float
    predicted_comfort_after: float
    target_unmet: bool = False


DEFAULT_CATALOG: tuple[Actuator, ...] = (
    Actuator("NECK_COOLER", (0.0, 4.0, 7.5), (0.0, 0.8, 1.5)),
    Actuator("FAN", (0.0, 12.0, 25.0, 45.0), (0.0, 0.5, 1.0, 1.6)),
    Actuator("CHAIR", (0.0, 35.0, 60.0), (0.0, 1.2, 2.2)),
)


def catalog_from_config(entries: Sequence[dict]) -> tuple[Actuator, ...]:
    return tuple(
        Actuator(
            name=str(e["name"]),
            power_w=tuple(float(v) for v in e["power_w"]),
            comfort_delta=tuple(float(v) for v in e["comfort_delta"]),
        )
        for e in entries
    )


def plan_actuation(
    current_comfort: float,
    comfort_target: float,
    catalog: Sequence[Actuator] = DEFAULT_CATALOG,
) -> ActuatorPlan:
    """Cheapest level assignment whose predicted comfort reaches the target.

    Comfort after actuation is ``current + sum(deltas)`` clamped to the VAS
    range [1, 10]. If even maximum levels miss the target, the plan pins all
    devices to their top level and sets ``target_unmet``.
    """
    best: tuple[float, int, tuple[int, ...]] | None = None
    for combo in itertools.product(*(range(a.n_levels) for a in catalog)):
        after = current_comfort + sum(a.comfort_delta[l] for a, l in zip(catalog, combo))
        after = min(10.0, max(1.0, after))
        if after < comfort_target:
            continue
        power = sum(a.power_w[l] for a, l in zip(catalog, combo))
        key = (power, sum(1 for l in combo if l > 0), combo)
        if best is None or key < best:
            best = key
    if best is None:
        combo = tuple(a.n_levels - 1 for a in catalog)
        after = current_comfort + sum(a.comfort_delta[-1] for a in catalog)
        return ActuatorPlan(
            levels={a.name: l for a, l in zip(catalog, combo)},
            total_power_w=float(sum(a.power_w[-1] for a in catalog)),
            predicted_comfort_after=float(min(10.0, max(1.0, after))),
            target_unmet=True,
        )
    power, _, combo = best
    after = current_comfort + sum(a.comfort_delta[l] for a, l in zip(catalog, combo))
    return ActuatorPlan(
        levels={a.name: l for a, l in zip(catalog, combo)},
        total_power_w=float(power),
        predicted_comfort_after=float(min(10.0, max(1.0, after))),
        target_unmet=False,
    )
