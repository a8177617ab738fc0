"""Spin-to-charge conversion by Pauli-blocked capture and slow reemission.

A conduction electron can only be captured by a donor whose spin is
anti-parallel (the pair must form a singlet), so flipping the donor spin
gates the photocurrent.  The minimal model matching the two observed
timescales is a two-compartment linear system: flipped donors capture an
electron at rate ``k_c`` (D0 -> D-), trapped electrons are reemitted at rate
``k_e`` (D- -> D0), and each trapped electron reduces the current by the
coupling amplitude.

Reemission randomizes the donor spin between the two anticorrelated pair
states.  In the operating regime ``k_c >> k_e`` the anti-parallel branch of
that randomization is recaptured within ``1/k_c``, so on the observed
timescale every completed release leaves the donor aligned with the (nearly
fully polarized) conduction bath.  ``emission_rate`` is therefore the *net*
release rate, which is what a fit to the current tail measures; with that
convention the current transient and the donor spin recovery share the same
time constant ``1/k_e``, which is the experimental signature this model is
built to reproduce.  :func:`randomize_after_reemission` exposes the
single-event expectation values for the microscopic bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trace import SignalTrace

__all__ = [
    "TrapParams",
    "TrapState",
    "capture_rate",
    "transient_response",
    "trapped_fraction",
    "flip_fraction_from_state",
    "charge_signal",
    "randomize_after_reemission",
    "spin_recovery_curve",
]


@dataclass(frozen=True)
class TrapParams:
    """Rates and electrical coupling of the capture/reemission process.

    The defaults encode the preset operating point: spin-allowed capture in
    ~100 us, reemission in 2.5 ms, 60 nA baseline photocurrent, and a
    coupling amplitude normalized so a fully flipped donor ensemble dips the
    current by 1% of baseline at the transient extremum (a plotting default,
    the measured quantity is relative).  ``conduction_polarization`` and
    ``donor_density`` are carried for rate computations and metadata.
    """

    capture_rate_k0: float = 1.0e4  # 1/s, spin-allowed capture rate
    emission_rate: float = 400.0  # 1/s, net release rate (2.5 ms)
    conduction_polarization: float = -0.968
    baseline_current: float = 60e-9  # A
    coupling_amplitude: float | None = None  # A per unit trapped fraction
    donor_density: float = 1e15  # cm^-3, metadata only

    def __post_init__(self) -> None:
        if self.capture_rate_k0 <= 0 or self.emission_rate <= 0:
            raise ValueError("capture and emission rates must be > 0")
        if not -1.0 <= self.conduction_polarization <= 1.0:
            raise ValueError(
                f"conduction_polarization must lie in [-1, 1], got {self.conduction_polarization}"
            )
        if self.baseline_current <= 0:
            raise ValueError(f"baseline_current must be > 0, got {self.baseline_current}")
        if self.coupling_amplitude is None:
            peak = _peak_trapped_fraction(self.flipped_capture_rate, self.emission_rate)
            object.__setattr__(self, "coupling_amplitude", 0.01 * self.baseline_current / peak)
        elif self.coupling_amplitude <= 0:
            raise ValueError(f"coupling_amplitude must be > 0, got {self.coupling_amplitude}")

    @property
    def flipped_capture_rate(self) -> float:
        """Capture rate seen by the flipped donor sub-population.

        A flipped donor is by construction fully anti-aligned with the
        majority conduction spins, so the Pauli factor is 1 and the rate is
        the full spin-allowed ``k0``.
        """
        return capture_rate(-1.0, +1.0, self.capture_rate_k0)


@dataclass(frozen=True)
class TrapState:
    """Donor charge/spin populations; fractions sum to one."""

    frac_d0_up: float
    frac_d0_down: float
    frac_dminus: float

    def __post_init__(self) -> None:
        for name in ("frac_d0_up", "frac_d0_down", "frac_dminus"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        total = self.frac_d0_up + self.frac_d0_down + self.frac_dminus
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"populations must sum to 1, got {total}")


def capture_rate(p_donor: float, p_conduction: float, k0: float) -> float:
    """Pauli-weighted capture rate ``k0 (1 - p_donor p_conduction)/2``.

    The factor is the anti-parallel (singlet-forming) pair fraction: 0 for
    co-aligned fully polarized spins, ``k0`` for fully anti-aligned ones.
    """
    for name, p in (("p_donor", p_donor), ("p_conduction", p_conduction)):
        if not -1.0 <= p <= 1.0:
            raise ValueError(f"{name} must lie in [-1, 1], got {p}")
    return k0 * (1.0 - p_donor * p_conduction) / 2.0


def _peak_trapped_fraction(k_c: float, k_e: float) -> float:
    if math.isclose(k_c, k_e, rel_tol=1e-12):
        return math.exp(-1.0)  # k t e^{-kt} peaks at 1/e
    t_star = math.log(k_c / k_e) / (k_c - k_e)
    return k_c / (k_c - k_e) * (math.exp(-k_e * t_star) - math.exp(-k_c * t_star))


def trapped_fraction(flip_fraction: float, params: TrapParams, t) -> np.ndarray:
    """D- population versus time after an instantaneous flip at t=0.

    Biexponential solution of the two-compartment rate equations; the
    degenerate case ``k_c = k_e`` uses the confluent limit ``f k t e^{-kt}``.
    """
    t = np.asarray(t, dtype=float)
    k_c = params.flipped_capture_rate
    k_e = params.emission_rate
    if math.isclose(k_c, k_e, rel_tol=1e-12):
        return flip_fraction * k_c * t * np.exp(-k_c * t)
    return flip_fraction * k_c / (k_c - k_e) * (np.exp(-k_e * t) - np.exp(-k_c * t))


def transient_response(flip_fraction: float, params: TrapParams, t_grid) -> SignalTrace:
    """Photocurrent change ``dI(t) = -coupling * trapped_fraction(t)``.

    ``dI`` is zero at t=0, everywhere non-positive, and returns to zero once
    the trapped electrons have been reemitted.
    """
    if not 0.0 <= flip_fraction <= 1.0:
        raise ValueError(f"flip_fraction must lie in [0, 1], got {flip_fraction}")
    t = np.asarray(t_grid, dtype=float)
    if t.size == 0:
        raise ValueError("t_grid must be non-empty")
    if np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be sorted, non-negative, strictly increasing")
    di = -params.coupling_amplitude * trapped_fraction(flip_fraction, params, t)
    return SignalTrace(
        axis_kind="time",
        x=tuple(t),
        y=tuple(di),
        units="A",
        meta={"flip_fraction": flip_fraction, "baseline_current": params.baseline_current},
    )


def flip_fraction_from_state(final_mz: float, equilibrium_mz: float) -> float:
    """Excess population moved into the capture-allowed spin state.

    ``(equilibrium_mz - final_mz)/2`` clipped to [0, 1]: zero when nothing was
    flipped, one for a perfect inversion of a fully polarized ensemble.
    """
    for name, v in (("final_mz", final_mz), ("equilibrium_mz", equilibrium_mz)):
        if not -1.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [-1, 1], got {v}")
    return float(np.clip((equilibrium_mz - final_mz) / 2.0, 0.0, 1.0))


def charge_signal(trace: SignalTrace, window_start: float, window_stop: float) -> float:
    """Boxcar charge: trapezoidal integral of the current change over a window.

    The window must overlap the trace span; endpoints inside the span are
    interpolated so the integral is exact on the sampled polyline.
    """
    if window_stop <= window_start:
        raise ValueError(f"empty window [{window_start}, {window_stop}]")
    t = trace.x_array()
    y = trace.y_array()
    if window_start < t[0] - 1e-15 or window_stop > t[-1] + 1e-15:
        raise ValueError(
            f"window [{window_start}, {window_stop}] outside trace span [{t[0]}, {t[-1]}]"
        )
    lo = max(window_start, t[0])
    hi = min(window_stop, t[-1])
    inside = (t > lo) & (t < hi)
    ts = np.concatenate([[lo], t[inside], [hi]])
    ys = np.interp(ts, t, y)
    return float(np.trapezoid(ys, ts))


def randomize_after_reemission(state: TrapState) -> TrapState:
    """Expectation value of one reemission event: D- splits evenly over D0 spins.

    Deterministic halves (no sampling); population is conserved exactly.
    """
    half = state.frac_dminus / 2.0
    return TrapState(
        frac_d0_up=state.frac_d0_up + half,
        frac_d0_down=state.frac_d0_down + half,
        frac_dminus=0.0,
    )


def spin_recovery_curve(params: TrapParams, t_grid, flip_fraction: float = 1.0) -> SignalTrace:
    """Donor mz recovery driven by repeated capture/reemission cycles.

    Flipped donors are captured at ``k_c``; completed releases return donors
    aligned with the conduction bath at the net rate ``k_e`` (see module
    docstring for why the anti-aligned reemission branch folds into ``k_e``
    when ``k_c >> k_e``).  Trapped donors are spin-silent singlets.  The
    recovery tail therefore carries the time constant ``1/k_e`` -- the same
    constant as the current transient.
    """
    if not 0.0 <= flip_fraction <= 1.0:
        raise ValueError(f"flip_fraction must lie in [0, 1], got {flip_fraction}")
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be sorted, non-negative, strictly increasing")
    k_c = params.flipped_capture_rate
    flipped = flip_fraction * np.exp(-k_c * t)
    trapped = trapped_fraction(flip_fraction, params, t)
    aligned = 1.0 - flipped - trapped
    mz = aligned - flipped  # trapped singlets contribute zero
    return SignalTrace(
        axis_kind="time",
        x=tuple(t),
        y=tuple(mz),
        units="dimensionless",
        meta={"flip_fraction": flip_fraction},
    )
