"""Width-ratio algebra: the ratio grid, slice-index selection, schedule math.

Everything here is exact rational arithmetic (``fractions.Fraction``); slice
endpoints are integers with no rounding anywhere, which is what makes nesting
and the isolated trailing block bit-reproducible.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple


class ValidationError(ValueError):
    """A configuration or argument violates a hard slicing constraint."""


def as_ratio(value) -> Fraction:
    """Parse a width ratio from a Fraction, int, or exact string like '5/16'.

    Floats are rejected: grid membership is exact, and float input would
    smuggle rounding into endpoints.
    """
    if isinstance(value, Fraction):
        r = value
    elif isinstance(value, int):
        r = Fraction(value)
    elif isinstance(value, str):
        try:
            r = Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValidationError(f"cannot parse ratio {value!r}: {exc}") from None
    else:
        raise ValidationError(f"ratio must be Fraction/int/str, got {type(value).__name__}")
    return r


class SliceMode(enum.Enum):
    LEADING = "leading"
    TRAILING = "trailing"
    FULL = "full"


class AxisRole(enum.Enum):
    SLICEABLE = "sliceable"
    FIXED = "fixed"


@dataclass(frozen=True)
class RatioGrid:
    """The deliverable ratio set {smallest, smallest+step, ..., largest}.

    ``smallest == largest`` (a single-ratio grid) is allowed so exported
    standalone models carry a valid config, but training rejects any grid
    whose sampling bands are empty (see ``validate_bands``).
    """

    smallest: Fraction
    largest: Fraction
    step: Fraction

    def __post_init__(self):
        s, l, eps = self.smallest, self.largest, self.step
        if not (0 < s <= l <= 1):
            raise ValidationError(f"grid bounds must satisfy 0 < s <= l <= 1, got s={s}, l={l}")
        if eps <= 0:
            raise ValidationError(f"grid step must be positive, got {eps}")
        span = (l - s) / eps
        if span.denominator != 1:
            raise ValidationError(f"(largest - smallest) / step = {span} is not an integer")

    @classmethod
    def parse(cls, smallest, largest, step) -> "RatioGrid":
        return cls(as_ratio(smallest), as_ratio(largest), as_ratio(step))

    def ratios(self) -> list[Fraction]:
        n = num_networks(self)
        return [self.smallest + k * self.step for k in range(n)]

    def __contains__(self, r) -> bool:
        r = as_ratio(r)
        if not (self.smallest <= r <= self.largest):
            return False
        return ((r - self.smallest) / self.step).denominator == 1

    def midpoint(self) -> Fraction:
        return (self.smallest + self.largest) / 2

    def lower_band(self) -> list[Fraction]:
        """Grid points in (smallest, midpoint]."""
        m = self.midpoint()
        return [r for r in self.ratios() if self.smallest < r <= m]

    def upper_band(self) -> list[Fraction]:
        """Grid points in (midpoint, largest)."""
        m = self.midpoint()
        return [r for r in self.ratios() if m < r < self.largest]

    def interior(self) -> list[Fraction]:
        """Grid points strictly inside (smallest, largest)."""
        return [r for r in self.ratios() if self.smallest < r < self.largest]

    def validate_bands(self):
        """Reject grids that cannot feed the two-band intermediate sampler."""
        if not self.lower_band() or not self.upper_band():
            raise ValidationError(
                f"grid {self.smallest}..{self.largest} step {self.step} has an empty "
                "sampling band; at least one grid point is required strictly inside "
                "each half of the slicing bound"
            )


def num_networks(grid: RatioGrid) -> int:
    """Deliverable network count: (largest - smallest) / step + 1."""
    return int((grid.largest - grid.smallest) / grid.step) + 1


class ExpectedEpochs(NamedTuple):
    epochs: Fraction
    constant_activation: bool


def expected_epochs(x: int, eta: int) -> ExpectedEpochs:
    """Expected optimization epochs for an intermediate subnet: 2*eta/(X-2).

    With X <= 2 there are no intermediates to share draws between; every
    delivered network is activated each iteration and trains for the full
    ``eta`` epochs, reported with ``constant_activation=True``.
    """
    if x < 2:
        raise ValidationError(f"at least 2 networks required, got X={x}")
    if x <= 2:
        return ExpectedEpochs(Fraction(eta), True)
    return ExpectedEpochs(Fraction(2 * eta, x - 2), False)


@dataclass(frozen=True)
class ScheduleStats:
    networks: int
    full_epochs: int
    intermediate_epochs: Fraction

    @classmethod
    def for_grid(cls, grid: RatioGrid, eta: int) -> "ScheduleStats":
        x = num_networks(grid)
        if x < 2:
            raise ValidationError(f"schedule needs X >= 2 networks, grid has {x}")
        return cls(x, eta, expected_epochs(x, eta).epochs)


def slice_indices(length: int, r: Fraction, mode: SliceMode) -> tuple[int, int]:
    """Index range of the width-``r`` block of an axis of ``length`` units.

    Leading -> [0, r*length); Trailing -> [length - r*length, length);
    Full -> [0, length). ``r*length`` must be an exact integer.
    """
    r = as_ratio(r)
    if mode is SliceMode.FULL:
        return (0, length)
    count = r * length
    if count.denominator != 1:
        raise ValidationError(f"ratio {r} of axis length {length} is not an integer")
    k = int(count)
    if not (0 < k <= length):
        raise ValidationError(f"ratio {r} of axis length {length} gives out-of-range count {k}")
    if mode is SliceMode.LEADING:
        return (0, k)
    return (length - k, length)


def mode_for(r, grid: RatioGrid, isolated_activation: bool) -> SliceMode:
    """Trailing exactly for the smallest ratio under Isolated Activation."""
    r = as_ratio(r)
    if r not in grid:
        raise ValidationError(f"ratio {r} is not on the grid {grid.smallest}..{grid.largest} step {grid.step}")
    if isolated_activation and r == grid.smallest:
        return SliceMode.TRAILING
    return SliceMode.LEADING


def resolve_slice(shape, roles, r, mode: SliceMode) -> tuple[tuple[int, int], ...]:
    """Per-axis index ranges for one parameter: sliceable axes take the
    width-``r`` block in ``mode``, fixed axes keep their full range."""
    if len(shape) != len(roles):
        raise ValidationError(f"shape {shape} has {len(shape)} axes but {len(roles)} roles given")
    out = []
    for length, role in zip(shape, roles):
        if role is AxisRole.FIXED:
            out.append((0, length))
        else:
            out.append(slice_indices(length, r, mode))
    return tuple(out)
