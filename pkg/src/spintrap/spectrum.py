"""Field-swept spectrum synthesis: hyperfine doublet plus broad background line.

Resonance only ever reduces the current, so the synthesized signal is a sum
of negative-going lines.  A species with hyperfine splitting contributes two
lines whose combined amplitude is conserved; the nuclear polarization tilts
the pair (negative polarization makes the high-field line the larger one).
Lineshapes are normalized to unit peak so the per-species amplitude is the
line depth in amperes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks as _scipy_find_peaks

from .spincore import Environment, SpinSpecies, manifold_labels, manifold_weight, resonance_field
from .trace import SignalTrace

__all__ = ["SweepSpec", "simulate_field_sweep", "find_peaks"]

LINESHAPES = ("gaussian", "lorentzian")


@dataclass(frozen=True)
class SweepSpec:
    """Field axis and lineshape of one synthesized spectrum."""

    b_start: float
    b_stop: float
    n_points: int = 2001
    lineshape: str = "gaussian"

    def __post_init__(self) -> None:
        if self.b_start >= self.b_stop:
            raise ValueError(f"b_start must be < b_stop, got {self.b_start} >= {self.b_stop}")
        if self.n_points < 2:
            raise ValueError(f"n_points must be >= 2, got {self.n_points}")
        if self.lineshape not in LINESHAPES:
            raise ValueError(f"lineshape must be one of {LINESHAPES}, got {self.lineshape!r}")

    def field_axis(self) -> np.ndarray:
        return np.linspace(self.b_start, self.b_stop, self.n_points)


def _unit_peak_line(b, center, width, lineshape):
    if lineshape == "gaussian":
        return np.exp(-((b - center) ** 2) / (2.0 * width**2))
    return 1.0 / (1.0 + ((b - center) / width) ** 2)


def simulate_field_sweep(
    species_amplitudes: list[tuple[SpinSpecies, float]],
    env: Environment,
    sweep: SweepSpec,
) -> SignalTrace:
    """Synthesize the current change dI(B) over a field sweep.

    ``species_amplitudes`` pairs each species with its total line depth in
    amperes.  A hyperfine pair splits that depth by the nuclear-manifold
    populations: the ``m_i = +1/2`` (low-field) line carries ``(1 + p)/2``
    for nuclear polarization ``p``.  dI <= 0 everywhere.
    """
    b = sweep.field_axis()
    di = np.zeros_like(b)
    for species, amplitude in species_amplitudes:
        if amplitude < 0:
            raise ValueError(f"line amplitude must be >= 0, got {amplitude} for {species.label!r}")
        for m_i in manifold_labels(species):
            center = resonance_field(species, env.mw_frequency, m_i)
            weight = manifold_weight(species, m_i)
            di -= amplitude * weight * _unit_peak_line(b, center, species.linewidth_field, sweep.lineshape)
    return SignalTrace(
        axis_kind="field",
        x=tuple(b),
        y=tuple(di),
        units="A",
        meta={"lineshape": sweep.lineshape, "mw_frequency": env.mw_frequency},
    )


def find_peaks(trace: SignalTrace, min_prominence: float = 0.02) -> list[tuple[float, float]]:
    """Locate resonance dips: local minima of dI(B), sorted by field.

    ``min_prominence`` is a fraction of the deepest excursion; shallower
    features are ignored.  Returns ``(field, depth)`` pairs with positive
    depth ``|dI|``.
    """
    if not 0.0 <= min_prominence <= 1.0:
        raise ValueError(f"min_prominence must lie in [0, 1], got {min_prominence}")
    y = -trace.y_array()
    span = float(np.max(y) - np.min(y))
    if span == 0.0:
        return []
    idx, _ = _scipy_find_peaks(y, prominence=min_prominence * span)
    fields = trace.x_array()[idx]
    depths = y[idx]
    order = np.argsort(fields)
    return [(float(fields[i]), float(depths[i])) for i in order]
