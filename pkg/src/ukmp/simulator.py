"""Closed-loop movement synthesis on a simulated unit point mass.

Each control step queries every KMP at the current input, turns its
covariance into LQR gains, fuses the candidate commands by precision and
integrates the double-integrator dynamics exactly over one step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kmp, lqr
from .errors import NoConfidenceError, NumericalError, ValidationError
from .fusion import ControllerOutput, fuse, gamma_from_cov

log = logging.getLogger(__name__)

GAIN_CACHE_RTOL = 1e-8


@dataclass(frozen=True)
class PointMassState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.position, dtype=float))
        v = np.atleast_1d(np.asarray(self.velocity, dtype=float))
        if x.shape != v.shape:
            raise ValidationError("position and velocity must have equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise NumericalError("point-mass state became non-finite")
        object.__setattr__(self, "position", x)
        object.__setattr__(self, "velocity", v)

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


@dataclass(frozen=True)
class ControllerSpec:
    name: str
    model: kmp.KmpModel
    R: np.ndarray
    velocity_weight: float = 0.0

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape == (1, 1) and self.model.d_out > 1:
            R = R[0, 0] * np.eye(self.model.d_out)
        if R.shape != (self.model.d_out, self.model.d_out):
            raise ValidationError(f"R must be {self.model.d_out}x{self.model.d_out}")
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class ScenarioConfig:
    controllers: tuple
    input_times: np.ndarray
    input_values: np.ndarray
    dt: float
    duration: float
    initial_state: PointMassState
    seed: int = 0
    name: str = "custom"
    phases: tuple = ()

    def __post_init__(self):
        ctrls = tuple(self.controllers)
        if not ctrls:
            raise ValidationError("scenario needs at least one controller")
        names = [c.name for c in ctrls]
        if len(set(names)) != len(names):
            raise ValidationError("controller names must be unique")
        d_in, d_out = ctrls[0].model.d_in, ctrls[0].model.d_out
        if any(c.model.d_in != d_in or c.model.d_out != d_out for c in ctrls):
            raise ValidationError("all controllers must share input and output dimensions")
        if not (self.dt > 0 and self.duration > 0):
            raise ValidationError("dt and duration must be positive")
        times = np.asarray(self.input_times, dtype=float).reshape(-1)
        values = np.asarray(self.input_values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape != (times.shape[0], d_in):
            raise ValidationError(f"input signal must have shape ({times.shape[0]}, {d_in})")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("input signal times must be strictly increasing")
        if times[0] > 0 or times[-1] < self.duration - 1e-9:
            raise ValidationError("input signal must cover [0, duration]")
        if self.initial_state.position.shape[0] != d_out:
            raise ValidationError("initial state dimension must match controller outputs")
        object.__setattr__(self, "controllers", ctrls)
        object.__setattr__(self, "input_times", times)
        object.__setattr__(self, "input_values", values)
        object.__setattr__(self, "phases", tuple(tuple(p) for p in self.phases))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt)) + 1

    def input_at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.input_times, self.input_values[:, j])
                         for j in range(self.input_values.shape[1])])

    def phase_at(self, t: float) -> str:
        for start, end, label in self.phases:
            if start - 1e-9 <= t < end - 1e-9:
                return label
        return ""


@dataclass
class TraceRecord:
    """Per-step arrays; axis 0 is the step, axis 1 (where present) the controller."""

    controller_ids: tuple
    time: np.ndarray
    input: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    command: np.ndarray
    kp: np.ndarray
    kv: np.ndarray
    ratio: np.ndarray
    share: np.ndarray
    fused: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    tracking_error: np.ndarray
    phase: tuple
    events: list = field(default_factory=list)

    @property
    def var1(self) -> np.ndarray:
        """First diagonal entry of each controller's predicted covariance."""
        return self.cov[:, :, 0, 0]

    def __len__(self):
        return self.time.shape[0]


def step_dynamics(state: PointMassState, u, dt: float) -> PointMassState:
    """Exact update of a unit mass under constant acceleration ``u`` for ``dt``."""
    if dt <= 0:
        raise ValidationError("dt must be positive")
    u = np.asarray(u, dtype=float)
    x = state.position + state.velocity * dt + 0.5 * u * dt * dt
    v = state.velocity + u * dt
    return PointMassState(x, v)


class _GainCache:
    """Reuses gains while the covariance is unchanged; warm-starts otherwise."""

    def __init__(self, system, R):
        self.system = system
        self.R = R
        self.cov = None
        self.gains = None

    def get(self, cov, Q):
        if self.cov is not None:
            ref = np.linalg.norm(self.cov)
            if np.linalg.norm(cov - self.cov) <= GAIN_CACHE_RTOL * ref:
                return self.gains
        self.gains = lqr.infinite_horizon_gains(self.system, Q, self.R, initial_gains=self.gains)
        self.cov = cov
        return self.gains


def _empty_trace(config, n, d_in, n_c):
    p = len(config.controllers)
    return dict(
        time=np.empty(n), input=np.empty((n, d_in)), mean=np.empty((n, p, n_c)),
        cov=np.empty((n, p, n_c, n_c)), command=np.empty((n, p, n_c)),
        kp=np.empty((n, p, n_c, n_c)), kv=np.empty((n, p, n_c, n_c)),
        ratio=np.empty((n, p)), share=np.empty((n, p)), fused=np.empty((n, n_c)),
        position=np.empty((n, n_c)), velocity=np.empty((n, n_c)),
        tracking_error=np.empty(n))


def _precision_weighted_target(means, gammas):
    total = sum(gammas)
    return np.linalg.solve(total, sum(g @ m for g, m in zip(gammas, means)))


def run_scenario(config: ScenarioConfig) -> TraceRecord:
    """Run the movement-synthesis loop over the whole input signal.

    Targets are ``[mean, 0]``: the KMP predicts positions only, so the
    desired velocity is zero. A no-confidence fusion applies a zero command
    and is recorded in ``TraceRecord.events``.
    """
    ctrls = config.controllers
    d_in, n_c = ctrls[0].model.d_in, ctrls[0].model.d_out
    system = lqr.double_integrator(n_c)
    caches = [_GainCache(system, c.R) for c in ctrls]
    n = config.n_steps
    rec = _empty_trace(config, n, d_in, n_c)
    phases = []
    events = []
    state = config.initial_state
    for i in range(n):
        t = i * config.dt
        xi = config.input_at(t)
        outputs, means, gammas = [], [], []
        for p, (ctrl, cache) in enumerate(zip(ctrls, caches)):
            mean = kmp.predict_mean(ctrl.model, xi)
            cov = kmp.predict_cov(ctrl.model, xi)
            Q = lqr.weight_from_cov(cov, ctrl.velocity_weight)
            try:
                gains = cache.get(cov, Q)
            except NumericalError as exc:
                raise NumericalError(f"step {i} (t={t:.3f}s), controller {ctrl.name!r}: {exc}") from exc
            target = np.concatenate([mean, np.zeros(n_c)])
            u = lqr.control_command(gains, target, state.stacked)
            gamma = gamma_from_cov(cov)
            outputs.append(ControllerOutput(u, gamma, ctrl.name))
            means.append(mean)
            gammas.append(gamma)
            rec["mean"][i, p] = mean
            rec["cov"][i, p] = cov
            rec["command"][i, p] = u
            rec["kp"][i, p] = gains.Kp
            rec["kv"][i, p] = gains.Kv
            rec["ratio"][i, p] = kmp.is_uncertain(ctrl.model, cov)
        try:
            fused = fuse(outputs)
            u_hat = fused.command
            share = dict(zip(fused.source_ids, fused.per_controller_share))
            rec["share"][i] = [share[c.name] for c in ctrls]
        except NoConfidenceError as exc:
            log.warning("step %d: %s; applying zero command", i, exc)
            events.append((i, f"no-confidence: {exc}"))
            u_hat = np.zeros(n_c)
            rec["share"][i] = np.nan
        target_pos = _precision_weighted_target(means, gammas)
        rec["time"][i] = t
        rec["input"][i] = xi
        rec["fused"][i] = u_hat
        rec["position"][i] = state.position
        rec["velocity"][i] = state.velocity
        rec["tracking_error"][i] = np.linalg.norm(state.position - target_pos)
        phases.append(config.phase_at(t))
        if i < n - 1:
            state = step_dynamics(state, u_hat, config.dt)
    return TraceRecord(controller_ids=tuple(c.name for c in ctrls), phase=tuple(phases),
                       events=events, **rec)


def run_time_driven(config: ScenarioConfig) -> TraceRecord:
    """Single-controller variant for inputs known in advance (e.g. time).

    The whole reference is predicted up front and tracked with
    finite-horizon gains. Continuous weights are scaled by ``dt`` to form the
    per-step costs of the discretized problem.
    """
    if len(config.controllers) != 1:
        raise ValidationError("time-driven runs take exactly one controller")
    ctrl = config.controllers[0]
    n_c = ctrl.model.d_out
    system = lqr.double_integrator(n_c)
    n = config.n_steps
    times = np.arange(n) * config.dt
    inputs = np.array([config.input_at(t) for t in times])
    means, covs = kmp.predict_batch(ctrl.model, inputs)
    Qs = [lqr.weight_from_cov(c, ctrl.velocity_weight) * config.dt for c in covs]
    gains = lqr.finite_horizon_gains(system, Qs, ctrl.R * config.dt, config.dt)
    rec = _empty_trace(config, n, inputs.shape[1], n_c)
    state = config.initial_state
    for i in range(n):
        target = np.concatenate([means[i], np.zeros(n_c)])
        u = lqr.control_command(gains[i], target, state.stacked)
        rec["time"][i] = times[i]
        rec["input"][i] = inputs[i]
        rec["mean"][i, 0] = means[i]
        rec["cov"][i, 0] = covs[i]
        rec["command"][i, 0] = u
        rec["kp"][i, 0] = gains[i].Kp
        rec["kv"][i, 0] = gains[i].Kv
        rec["ratio"][i, 0] = kmp.is_uncertain(ctrl.model, covs[i])
        rec["share"][i, 0] = 1.0
        rec["fused"][i] = u
        rec["position"][i] = state.position
        rec["velocity"][i] = state.velocity
        rec["tracking_error"][i] = np.linalg.norm(state.position - means[i])
        if i < n - 1:
            state = step_dynamics(state, u, config.dt)
    return TraceRecord(controller_ids=(ctrl.name,),
                       phase=tuple(config.phase_at(t) for t in times), **rec)


class ProbeSample(NamedTuple):
    distance: float
    kp_diag: np.ndarray
    var1: float


def gains_vs_distance(model: kmp.KmpModel, base_query, direction, max_distance: float,
                      steps: int, R, velocity_weight: float = 0.0) -> list[ProbeSample]:
    """Stiffness along a ray leaving ``base_query``, at evenly spaced distances."""
    base = np.asarray(base_query, dtype=float).reshape(-1)
    direction = np.asarray(direction, dtype=float).reshape(-1)
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise ValidationError("probe direction must be non-zero")
    if steps < 1 or max_distance < 0:
        raise ValidationError("steps must be >= 1 and max_distance >= 0")
    direction = direction / norm
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape == (1, 1):
        R = R[0, 0] * np.eye(model.d_out)
    system = lqr.double_integrator(model.d_out)
    distances = np.linspace(0.0, max_distance, steps)
    covs = kmp.predict_cov_batch(model, base + distances[:, None] * direction)
    cache = _GainCache(system, R)
    samples = []
    for d, cov in zip(distances, covs):
        gains = cache.get(cov, lqr.weight_from_cov(cov, velocity_weight))
        samples.append(ProbeSample(float(d), np.diag(gains.Kp).copy(), float(cov[0, 0])))
    return samples


def half_decay_distance(samples: Sequence[ProbeSample], axis: int = 0) -> float:
    """First probed distance at which ``Kp[axis]`` is at most half its anchor value
    (linearly interpolated between samples); ``inf`` if never reached."""
    kp = np.array([s.kp_diag[axis] for s in samples])
    dist = np.array([s.distance for s in samples])
    half = 0.5 * kp[0]
    below = np.nonzero(kp <= half)[0]
    if below.size == 0:
        return float("inf")
    j = below[0]
    if j == 0:
        return 0.0
    frac = (kp[j - 1] - half) / (kp[j - 1] - kp[j])
    return float(dist[j - 1] + frac * (dist[j] - dist[j - 1]))
