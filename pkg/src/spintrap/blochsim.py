"""Bloch-vector dynamics: pulses, relaxation, spectral diffusion, timelines.

The simulation picture is classical: each hyperfine manifold contributes a
weighted sub-ensemble of magnetization 3-vectors.  Pulses are exact rotations
about the effective rotating-frame field (relaxation is suspended during
pulses; at 480 ns against 160 us coherence times the error is below 1%), free
evolution applies precession plus T1/T2 decay, and dephasing by the nuclear
bath enters as a per-trajectory frequency random walk.

Rotation convention (right-handed, fixed by the tests): a +x-phase pi/2 pulse
takes +z to -y, and free precession with positive detuning takes +x towards
+y.

Noise model
-----------
Spectral diffusion is a Wiener frequency walk with diffusion constant
``D = 24 / t_s**3`` (rad^2/s^3), integrated with fixed step ``dt = d/200``
inside each free-evolution event of duration ``d``.  The accumulated phase
variance then reproduces ``exp(-4 t^3/t_s^3)`` free-induction decay and
``exp(-8 tau^3/t_s^3)`` Hahn-echo decay, which is exactly the cubic term of
the echo envelope; the Monte Carlo calibration against the closed form is an
acceptance test.  The walk persists across events within a trajectory and is
frozen during pulses.

Reproducibility
---------------
All randomness comes from counter-based Philox streams keyed by
``(rng_seed, stream)``: stream 0 draws the static detuning offsets, stream
``1 + static_index * n_noise + noise_index`` drives that trajectory's
frequency walk (streams are shared between hyperfine manifolds).  Trajectories
are therefore independent of block partitioning and worker count; partial
sums are accumulated per fixed-size block and reduced in block order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import trapdyn
from .seqlang import AcquireEvent, FreeEvolutionEvent, PulseEvent, Timeline
from .spincore import (
    BlochState,
    Environment,
    SpinSpecies,
    gyromagnetic_ratio,
    manifold_labels,
    manifold_weight,
    thermal_polarization,
)
from .spincore import detuning as line_detuning
from .trace import SignalTrace

__all__ = [
    "BlochState",
    "RelaxationParams",
    "EnsembleSpec",
    "apply_pulse",
    "evolve_free",
    "run_timeline",
    "run_timeline_by_channel",
    "echo_envelope_analytic",
    "nutation_curve",
    "inversion_recovery_curve",
]

_PHASE_ANGLES = {"+x": 0.0, "+y": 0.5 * math.pi, "-x": math.pi, "-y": 1.5 * math.pi}

# Fixed block size for ensemble propagation; results are identical for any
# worker count because blocks and their reduction order never change.
_BLOCK = 8192

# Fixed steps per free-evolution event: dt = duration / 200.
_NOISE_STEPS = 200

_STATIC_STREAM = 0
_TRAJECTORY_STREAM_BASE = 1
_SEED_MASK = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class RelaxationParams:
    """T1/T2/spectral-diffusion times in seconds; ``t_s`` may be infinite."""

    t1: float
    t2: float
    t_s: float = math.inf

    def __post_init__(self) -> None:
        if self.t1 <= 0:
            raise ValueError(f"t1 must be > 0, got {self.t1}")
        if not 0 < self.t2 <= 2 * self.t1:
            raise ValueError(f"t2 must satisfy 0 < t2 <= 2*t1, got t2={self.t2}, t1={self.t1}")
        if not self.t_s > 0:
            raise ValueError(f"t_s must be > 0 (may be inf), got {self.t_s}")

    @property
    def diffusion_constant(self) -> float:
        """Frequency random-walk diffusion constant D = 24/t_s^3 (rad^2/s^3)."""
        if math.isinf(self.t_s):
            return 0.0
        return 24.0 / self.t_s**3


@dataclass(frozen=True)
class EnsembleSpec:
    """Monte Carlo ensemble layout.

    ``n_static`` static-detuning samples (Gaussian, sigma from the species
    linewidth) times ``n_noise`` stochastic trajectories each.  Manifold
    weights default to the nuclear-polarization populations of the species;
    an explicit tuple overrides them.
    """

    n_static: int = 128
    n_noise: int = 32
    rng_seed: int = 20260810
    manifold_weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.n_static < 1 or self.n_noise < 1:
            raise ValueError("n_static and n_noise must be >= 1")
        if self.manifold_weights is not None:
            w = np.asarray(self.manifold_weights, dtype=float)
            if np.any(w < 0) or not math.isclose(float(w.sum()), 1.0, rel_tol=0, abs_tol=1e-9):
                raise ValueError("manifold_weights must be non-negative and sum to 1")

    @property
    def n_trajectories(self) -> int:
        return self.n_static * self.n_noise


def _philox(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed & _SEED_MASK, stream & _SEED_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class _StreamDrawer:
    """Draws from per-trajectory Philox streams without re-constructing.

    Re-keying one bit generator through its state dict produces streams
    bit-identical to fresh ``Philox(key=...)`` construction (covered by a
    regression test) while skipping the per-construction entropy syscall.
    Not thread-safe; each worker task owns its own instance.
    """

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & _SEED_MASK)
        self._bitgen = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
        self._gen = np.random.Generator(self._bitgen)
        self._template = self._bitgen.state

    def normals(self, stream: int, count: int) -> np.ndarray:
        state = dict(self._template)
        state["state"] = {
            "counter": np.zeros(4, dtype=np.uint64),
            "key": np.array([self._seed, stream & _SEED_MASK], dtype=np.uint64),
        }
        state["buffer"] = np.zeros(4, dtype=np.uint64)
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        self._bitgen.state = state
        return self._gen.standard_normal(count)


def _rotate(mx, my, mz, ax, ay, az, angle):
    """Rodrigues rotation of (mx,my,mz) about unit axis (ax,ay,az) by angle."""
    c = np.cos(angle)
    s = np.sin(angle)
    dot = ax * mx + ay * my + az * mz
    cx = ay * mz - az * my
    cy = az * mx - ax * mz
    cz = ax * my - ay * mx
    k = dot * (1.0 - c)
    return (
        mx * c + cx * s + ax * k,
        my * c + cy * s + ay * k,
        mz * c + cz * s + az * k,
    )


def _pulse_arrays(mx, my, mz, angle_rate, phase_axis, duration, det):
    """Vectorized finite-duration pulse about the effective field axis."""
    if duration == 0.0:
        return mx, my, mz
    phi = _PHASE_ANGLES[phase_axis]
    wx = angle_rate * math.cos(phi)
    wy = angle_rate * math.sin(phi)
    weff = np.sqrt(angle_rate * angle_rate + det * det)
    safe = np.where(weff > 0.0, weff, 1.0)
    ax, ay, az = wx / safe, wy / safe, det / safe
    angle = weff * duration
    return _rotate(mx, my, mz, ax, ay, az, angle)


def _free_arrays(mx, my, mz, phase, duration, relax, m_eq):
    """Precession by ``phase`` plus T2 shrinkage and T1 recovery."""
    decay = np.exp(-duration / relax.t2)
    c = np.cos(phase) * decay
    s = np.sin(phase) * decay
    mx, my = mx * c - my * s, mx * s + my * c
    mz = m_eq + (mz - m_eq) * np.exp(-duration / relax.t1)
    return mx, my, mz


def apply_pulse(
    state: BlochState,
    angle_rate: float,
    phase_axis: str,
    duration: float,
    detuning: float = 0.0,
) -> BlochState:
    """Rotate a Bloch vector by a finite-duration rotating-frame pulse.

    ``angle_rate`` is the on-resonance angular rotation rate
    ``2 pi * rabi_frequency``; the actual rotation happens about the tilted
    axis ``(w1 cos phi, w1 sin phi, detuning)`` by ``|w_eff| * duration``.
    Norm is preserved to machine precision; relaxation is not applied.
    """
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    if phase_axis not in _PHASE_ANGLES:
        raise ValueError(f"phase_axis must be one of {tuple(_PHASE_ANGLES)}, got {phase_axis!r}")
    mx, my, mz = _pulse_arrays(
        np.float64(state.mx),
        np.float64(state.my),
        np.float64(state.mz),
        float(angle_rate),
        phase_axis,
        float(duration),
        np.float64(detuning),
    )
    return BlochState(float(mx), float(my), float(mz))


def evolve_free(
    state: BlochState,
    duration: float,
    relax: RelaxationParams,
    detuning: float = 0.0,
    m_eq: float = 0.0,
) -> BlochState:
    """Free evolution: precession, transverse decay, longitudinal recovery."""
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    mx, my, mz = _free_arrays(
        np.float64(state.mx),
        np.float64(state.my),
        np.float64(state.mz),
        np.float64(detuning) * duration,
        float(duration),
        relax,
        float(m_eq),
    )
    return BlochState(float(mx), float(my), float(mz))


def echo_envelope_analytic(tau, relax: RelaxationParams):
    """Hahn-echo amplitude ``exp(-2 tau/t2 - 8 tau^3/t_s^3)`` at delay tau.

    With infinite ``t_s`` this is the pure exponential.  Accepts scalars or
    arrays; tau must be non-negative.
    """
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0):
        raise ValueError("tau must be >= 0")
    cubic = 0.0 if math.isinf(relax.t_s) else 8.0 * t**3 / relax.t_s**3
    out = np.exp(-2.0 * t / relax.t2 - cubic)
    return float(out) if np.isscalar(tau) else out


def inversion_recovery_curve(tau_grid, t1: float, m_eq: float) -> SignalTrace:
    """Longitudinal recovery after perfect inversion: ``m_eq (1 - 2 e^{-tau/t1})``."""
    tau = np.asarray(tau_grid, dtype=float)
    if tau.size == 0:
        raise ValueError("tau_grid must be non-empty")
    if np.any(tau < 0):
        raise ValueError("tau_grid must be non-negative")
    if t1 <= 0:
        raise ValueError(f"t1 must be > 0, got {t1}")
    y = m_eq * (1.0 - 2.0 * np.exp(-tau / t1))
    return SignalTrace(axis_kind="tau", x=tuple(tau), y=tuple(y), units="dimensionless")


def nutation_curve(
    pulse_durations,
    env: Environment,
    species: SpinSpecies,
    relax: RelaxationParams,
    ensemble: EnsembleSpec,
) -> SignalTrace:
    """Ensemble-averaged mz after one resonant pulse of each duration.

    The oscillation frequency equals the Rabi frequency; static detuning
    inhomogeneity (the species linewidth) damps the oscillations.  Relaxation
    is suspended during pulses, so the curve is closed-form per trajectory and
    needs no stochastic sampling.
    """
    durations = np.asarray(pulse_durations, dtype=float)
    if np.any(durations < 0):
        raise ValueError("pulse durations must be >= 0")
    m0 = thermal_polarization(species.g_factor, env.static_field_b0, env.temperature)
    w1 = 2.0 * math.pi * env.rabi_frequency
    sigma = gyromagnetic_ratio(species.g_factor) * species.linewidth_field
    offsets = _philox(ensemble.rng_seed, _STATIC_STREAM).standard_normal(ensemble.n_static) * sigma

    labels = manifold_labels(species)
    weights = _resolve_manifold_weights(species, ensemble, labels)
    y = np.zeros_like(durations)
    for m_i, weight in zip(labels, weights):
        det = line_detuning(species, env, m_i) + offsets
        weff2 = w1 * w1 + det * det
        frac = w1 * w1 / weff2  # depth of the generalized-Rabi dip per spin
        for k, tp in enumerate(durations):
            mz = m0 * (1.0 - 2.0 * frac * np.sin(np.sqrt(weff2) * tp / 2.0) ** 2)
            y[k] += weight * float(np.mean(mz))
    return SignalTrace(
        axis_kind="pulse_duration",
        x=tuple(durations),
        y=tuple(y),
        units="dimensionless",
        meta={"rng_seed": ensemble.rng_seed, "n_static": ensemble.n_static},
    )


def _resolve_manifold_weights(species, ensemble, labels):
    if ensemble.manifold_weights is not None:
        if len(ensemble.manifold_weights) != len(labels):
            raise ValueError(
                f"manifold_weights has {len(ensemble.manifold_weights)} entries; "
                f"species {species.label!r} has {len(labels)} manifolds"
            )
        return tuple(float(w) for w in ensemble.manifold_weights)
    return tuple(manifold_weight(species, m_i) for m_i in labels)


def _plan_events(timeline: Timeline, noise_on: bool):
    """Flatten the timeline into engine steps and count noise draws."""
    plan = []
    total_draws = 0
    acquire_count = 0
    for event in timeline.events:
        if isinstance(event, PulseEvent):
            plan.append(("pulse", event))
        elif isinstance(event, FreeEvolutionEvent):
            steps = _NOISE_STEPS if noise_on else 0
            plan.append(("free", event, steps))
            total_draws += steps
        elif isinstance(event, AcquireEvent):
            plan.append(("acquire", event, acquire_count))
            acquire_count += 1
            if event.duration > 0:
                steps = _NOISE_STEPS if noise_on else 0
                plan.append(("free", FreeEvolutionEvent(event.start, event.duration), steps))
                total_draws += steps
        else:  # pragma: no cover
            raise TypeError(f"unknown event {event!r}")
    return plan, total_draws, acquire_count


_ACC_FIELDS = 7  # sum_x, sum_y, sum_z, sum_xx, sum_yy, sum_xy, sum_zz


def _run_block(plan, total_draws, n_acquire, seed, lo, hi, n_noise,
               base_det, offsets, m0, w1, relax, diffusion):
    """Propagate trajectories [lo, hi) and return per-acquire moment sums."""
    n = hi - lo
    idx = np.arange(lo, hi)
    det = base_det + offsets[idx // n_noise]
    mx = np.zeros(n)
    my = np.zeros(n)
    mz = np.full(n, m0)

    draws = None
    if total_draws > 0:
        drawer = _StreamDrawer(seed)
        draws = np.empty((n, total_draws))
        for j, traj in enumerate(idx):
            draws[j] = drawer.normals(_TRAJECTORY_STREAM_BASE + int(traj), total_draws)

    acc = np.zeros((n_acquire, _ACC_FIELDS))
    walk = np.zeros(n)  # current frequency offset of the noise walk, rad/s
    cursor = 0
    for step in plan:
        kind = step[0]
        if kind == "pulse":
            event = step[1]
            mx, my, mz = _pulse_arrays(mx, my, mz, w1, event.phase, event.duration, det)
        elif kind == "free":
            event, steps = step[1], step[2]
            phase = det * event.duration
            if steps > 0:
                dt = event.duration / steps
                inc = draws[:, cursor:cursor + steps] * math.sqrt(diffusion * dt)
                cursor += steps
                nodes = walk[:, None] + np.cumsum(inc, axis=1)
                # trapezoid over the walk nodes = integral of the frequency
                # offset; the O(dt^2) bridge correction is negligible at 200
                # steps per event
                full = np.concatenate([walk[:, None], nodes], axis=1)
                phase = phase + np.trapezoid(full, dx=dt, axis=1)
                walk = nodes[:, -1].copy()
            mx, my, mz = _free_arrays(mx, my, mz, phase, event.duration, relax, m0)
        else:  # acquire
            k = step[2]
            acc[k, 0] = mx.sum()
            acc[k, 1] = my.sum()
            acc[k, 2] = mz.sum()
            acc[k, 3] = (mx * mx).sum()
            acc[k, 4] = (my * my).sum()
            acc[k, 5] = (mx * my).sum()
            acc[k, 6] = (mz * mz).sum()
    return acc


def _run_engine(timeline, env, species, relax, ensemble, workers=1):
    """Shared ensemble propagation; returns per-acquire statistics.

    Returns (acquire_events, stats) where stats[k] holds the weighted means
    and standard errors for acquire event k.
    """
    noise_on = relax.diffusion_constant > 0.0
    plan, total_draws, n_acquire = _plan_events(timeline, noise_on)
    if n_acquire == 0:
        raise ValueError("timeline has no acquisition events")

    m0 = thermal_polarization(species.g_factor, env.static_field_b0, env.temperature)
    w1 = 2.0 * math.pi * env.rabi_frequency
    sigma = gyromagnetic_ratio(species.g_factor) * species.linewidth_field
    offsets = _philox(ensemble.rng_seed, _STATIC_STREAM).standard_normal(ensemble.n_static) * sigma

    labels = manifold_labels(species)
    weights = _resolve_manifold_weights(species, ensemble, labels)
    n_traj = ensemble.n_trajectories
    blocks = [(lo, min(lo + _BLOCK, n_traj)) for lo in range(0, n_traj, _BLOCK)]

    tasks = []
    for mf, (m_i, weight) in enumerate(zip(labels, weights)):
        base_det = line_detuning(species, env, m_i)
        for b, (lo, hi) in enumerate(blocks):
            tasks.append((mf, b, base_det, lo, hi))

    def _task(args):
        mf, b, base_det, lo, hi = args
        acc = _run_block(plan, total_draws, n_acquire, ensemble.rng_seed, lo, hi,
                         ensemble.n_noise, base_det, offsets, m0, w1, relax,
                         relax.diffusion_constant)
        return mf, b, acc

    partials = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for mf, b, acc in pool.map(_task, tasks):
                partials[(mf, b)] = acc
    else:
        for args in tasks:
            mf, b, acc = _task(args)
            partials[(mf, b)] = acc

    # Reduce in fixed (manifold, block) order so results never depend on the
    # scheduling of the tasks above.
    per_manifold = [np.zeros((n_acquire, _ACC_FIELDS)) for _ in labels]
    for mf in range(len(labels)):
        for b in range(len(blocks)):
            per_manifold[mf] += partials[(mf, b)]

    acquire_events = [e for e in timeline.events if isinstance(e, AcquireEvent)]
    stats = []
    for k in range(n_acquire):
        mean = np.zeros(3)
        var = np.zeros(4)  # var_x, var_y, cov_xy, var_z, weighted by w^2/n
        for weight, acc in zip(weights, per_manifold):
            mx, my, mzv = acc[k, 0] / n_traj, acc[k, 1] / n_traj, acc[k, 2] / n_traj
            mean += weight * np.array([mx, my, mzv])
            vx = max(acc[k, 3] / n_traj - mx * mx, 0.0)
            vy = max(acc[k, 4] / n_traj - my * my, 0.0)
            cxy = acc[k, 5] / n_traj - mx * my
            vz = max(acc[k, 6] / n_traj - mzv * mzv, 0.0)
            var += weight * weight / n_traj * np.array([vx, vy, cxy, vz])
        stats.append({"mean": mean, "var": var})
    return acquire_events, stats, m0


def _channel_value(event, stat, m0, trap):
    """(value, stderr, units) of one acquire event."""
    mean = stat["mean"]
    vx, vy, cxy, vz = stat["var"]
    if event.channel == "mz":
        return mean[2], math.sqrt(vz), "dimensionless"
    if event.channel == "echo":
        amp = math.hypot(mean[0], mean[1])
        if amp > 0:
            ux, uy = mean[0] / amp, mean[1] / amp
        else:
            ux, uy = 1.0, 0.0
        se = math.sqrt(max(ux * ux * vx + 2 * ux * uy * cxy + uy * uy * vy, 0.0))
        return amp, se, "dimensionless"
    if event.channel == "charge":
        window = event.window if event.window is not None else 6.0 / trap.emission_rate
        fraction = trapdyn.flip_fraction_from_state(mean[2], m0)
        unit_trace = trapdyn.transient_response(1.0, trap, np.linspace(0.0, window, 2001))
        unit_charge = trapdyn.charge_signal(unit_trace, 0.0, window)
        se = abs(unit_charge) * math.sqrt(vz) / 2.0  # charge is linear in mz
        return unit_charge * fraction, se, "C"
    raise ValueError(f"unknown channel {event.channel!r}")  # pragma: no cover


def run_timeline_by_channel(
    timeline: Timeline,
    env: Environment,
    species: SpinSpecies,
    relax: RelaxationParams,
    ensemble: EnsembleSpec,
    trap: "trapdyn.TrapParams | None" = None,
    workers: int = 1,
) -> dict[str, SignalTrace]:
    """Run one compiled timeline; one trace per acquisition channel.

    Each trace's x axis holds the acquire-event start times.  Deterministic
    for a fixed ``ensemble.rng_seed`` regardless of ``workers``.
    """
    channels = {e.channel for e in timeline.events if isinstance(e, AcquireEvent)}
    if "charge" in channels and trap is None:
        raise ValueError("timeline acquires the charge channel but no trap parameters were given")
    acquire_events, stats, m0 = _run_engine(timeline, env, species, relax, ensemble, workers)

    out = {}
    for channel in sorted(channels):
        xs, ys, ses = [], [], []
        units = "dimensionless"
        for event, stat in zip(acquire_events, stats):
            if event.channel != channel:
                continue
            value, se, units = _channel_value(event, stat, m0, trap)
            xs.append(event.start)
            ys.append(value)
            ses.append(se)
        meta = {
            "rng_seed": ensemble.rng_seed,
            "n_static": ensemble.n_static,
            "n_noise": ensemble.n_noise,
            "equilibrium_mz": m0,
            "y_stderr": tuple(ses),
        }
        if timeline.sweep_value is not None:
            meta["sweep_value"] = timeline.sweep_value
        out[channel] = SignalTrace(axis_kind="time", x=tuple(xs), y=tuple(ys), units=units, meta=meta)
    return out


def run_timeline(
    timeline: Timeline,
    env: Environment,
    species: SpinSpecies,
    relax: RelaxationParams,
    ensemble: EnsembleSpec,
    trap: "trapdyn.TrapParams | None" = None,
    workers: int = 1,
) -> SignalTrace:
    """Run a single-channel timeline and return its trace.

    Use :func:`run_timeline_by_channel` for sequences acquiring more than one
    channel.
    """
    traces = run_timeline_by_channel(timeline, env, species, relax, ensemble, trap, workers)
    if len(traces) != 1:
        raise ValueError(
            f"timeline acquires {len(traces)} channels {sorted(traces)}; "
            "use run_timeline_by_channel"
        )
    return next(iter(traces.values()))
