"""Closed-loop simulation: adaptive Dormand-Prince integration with an
origin clamp, perturbation models, traces and the dilation-symmetry check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import LSODA

from .cone import ConeSpec
from .dilation import Dilation, canonical_norm, weighted_norm
from .exceptions import IntegrationError
from .synthesis import (HomogeneousController, LinearPlant, eval_control,
                        eval_mixed_control)

__all__ = [
    "SimConfig", "PerturbationSpec", "Trace", "ClosedLoop", "integrate", "build_rhs",
    "simulate", "settling_time", "min_barrier", "symmetry_check",
]

# Dormand-Prince 5(4) tableau and the quartic dense-output coefficients
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5


@dataclass(frozen=True)
class SimConfig:
    """Integration settings.

    ``origin_clamp`` is a radius in the homogeneous norm below which the
    state is set to exactly zero; ``stride`` is the output sampling period.
    ``method`` is ``"dp45"`` (explicit, default) or ``"lsoda"`` (switches to
    a stiff solver automatically).
    """

    t_final: float = 10.0
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    min_step: float = 1e-14
    origin_clamp: float = 1e-9
    stride: float = 1e-3
    method: str = "dp45"

    def __post_init__(self):
        if self.method not in ("dp45", "lsoda"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if not self.t_final > 0.0:
            raise ValueError("t_final must be positive")
        if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.min_step <= self.max_step:
            raise ValueError("need 0 < min_step <= max_step")
        if not self.stride > 0.0:
            raise ValueError("stride must be positive")
        if self.origin_clamp < 0.0:
            raise ValueError("origin_clamp must be nonnegative")


@dataclass(frozen=True)
class PerturbationSpec:
    """Disturbance model of a closed-loop run.

    kind
        ``"none"``; ``"state_multiplicative"`` adds ``D |q(t) x_1|^nu``;
        ``"noise_plus_additive"`` evaluates the feedback at ``x + q1(t)`` and
        adds ``q2(t)``.  ``q1`` is seeded uniform noise in
        ``[-noise_magnitude, noise_magnitude]^n`` held for ``hold`` seconds
        and ``q2(t) = additive_magnitude * additive_direction * sin(freq t)``.
    """

    kind: str = "none"
    D: np.ndarray | None = None
    nu: float = 0.125
    freq: float = 5.0
    noise_magnitude: float = 0.0
    additive_magnitude: float = 1.0
    additive_direction: np.ndarray | None = None
    hold: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "state_multiplicative", "noise_plus_additive"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "state_multiplicative" and not self.nu > 0.0:
            raise ValueError("nu must be positive")
        if self.noise_magnitude < 0.0 or not self.hold > 0.0:
            raise ValueError("noise magnitude must be >= 0 and hold > 0")

    def scaled(self, factor: float) -> "PerturbationSpec":
        """Copy with noise and additive magnitudes multiplied by `factor`."""
        return replace(self, noise_magnitude=self.noise_magnitude * factor,
                       additive_magnitude=self.additive_magnitude * factor)


@dataclass
class Trace:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    barriers: np.ndarray
    hom_norms: np.ndarray
    clamped_at: float | None = None
    stats: dict = field(default_factory=dict)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def columns(self):
        """Column names matching :meth:`table`."""
        n, m, p = self.states.shape[1], self.inputs.shape[1], self.barriers.shape[1]
        return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                + [f"phi{i + 1}" for i in range(p)] + ["homnorm"])

    def table(self) -> np.ndarray:
        return np.column_stack([self.times, self.states, self.inputs, self.barriers,
                                self.hom_norms])


class ClosedLoop:
    """Callable ``rhs(t, x)`` of a closed loop plus its feedback value."""

    def __init__(self, plant, control, pert, n):
        self.plant = plant
        self._control = control
        self.pert = pert
        self.breakpoints = None
        self._noise = None
        if pert.kind == "state_multiplicative":
            D = np.zeros(n) if pert.D is None else np.asarray(pert.D, dtype=float).ravel()
            if D.size != n:
                raise ValueError("perturbation channel D has the wrong length")
            self._D = D
        elif pert.kind == "noise_plus_additive":
            d = (np.ones(n) if pert.additive_direction is None
                 else np.asarray(pert.additive_direction, dtype=float).ravel())
            if d.size != n:
                raise ValueError("additive direction has the wrong length")
            self._q2 = pert.additive_magnitude * d
            self._rng_seed = pert.seed

    def prepare(self, t_final: float):
        """Draw the held noise sequence and breakpoints up to `t_final`."""
        if self.pert.kind != "noise_plus_additive":
            return
        n = self.plant.n
        count = int(math.ceil(t_final / self.pert.hold)) + 1
        rng = np.random.default_rng(self._rng_seed)
        self._noise = self.pert.noise_magnitude * rng.uniform(-1.0, 1.0, (count, n))
        self.breakpoints = self.pert.hold * np.arange(1, count)

    def q1(self, t):
        """Held noise sample, right-continuous at the breakpoints."""
        if self._noise is None:
            self.prepare(max(t, 1.0) * 2)
        k = int(np.searchsorted(self.breakpoints, t, side="right"))
        return self._noise[min(k, self._noise.shape[0] - 1)]

    def control(self, t, x):
        if self.pert.kind == "noise_plus_additive":
            return self._control(x + self.q1(t))
        return self._control(x)

    def __call__(self, t, x):
        A, B = self.plant.A, self.plant.B
        dx = A @ x + B @ self.control(t, x)
        kind = self.pert.kind
        if kind == "state_multiplicative":
            dx = dx + self._D * abs(math.sin(self.pert.freq * t) * x[0]) ** self.pert.nu
        elif kind == "noise_plus_additive":
            dx = dx + self._q2 * math.sin(self.pert.freq * t)
        return dx


def build_rhs(plant: LinearPlant, controller, pert: PerturbationSpec | None = None,
              mixed: bool = False) -> ClosedLoop:
    """Closed-loop right-hand side for a linear gain (array) or a
    :class:`HomogeneousController` (``mixed=True`` selects the linear law
    outside the unit ball)."""
    pert = PerturbationSpec() if pert is None else pert
    n, m = plant.n, plant.m
    if isinstance(controller, HomogeneousController):
        if controller.plant.n != n or controller.K.shape != (m, n):
            raise ValueError("controller and plant dimensions differ")
        if pert.kind == "state_multiplicative" and not pert.nu < 1.0 + controller.mu:
            raise ValueError(f"nu = {pert.nu} must be below 1 + mu = {1.0 + controller.mu}")
        fn = eval_mixed_control if mixed else eval_control
        control = lambda x: fn(controller, x)  # noqa: E731
    else:
        K = np.asarray(controller, dtype=float)
        if K.shape != (m, n):
            raise ValueError(f"gain must be {m} x {n}, got {K.shape}")
        control = lambda x: K @ x  # noqa: E731
    return ClosedLoop(plant, control, pert, n)


def _error_norm(err, x_old, x_new, cfg):
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(x_old), np.abs(x_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _clamp_norm(x, dilation):
    if dilation is None:
        return float(np.linalg.norm(x))
    if weighted_norm(dilation.weight, x) >= 1.0:
        return math.inf
    return canonical_norm(dilation, x).value


class _Grid:
    """Output grid filled from consecutive step interpolants."""

    def __init__(self, T, stride, x0):
        n_out = int(math.floor(T / stride + 1e-9)) + 1
        t = stride * np.arange(n_out)
        if T - t[-1] > 1e-9 * max(1.0, T):
            t = np.append(t, T)  # the horizon is always the last sample
        self.t = t
        n_out = t.size
        self.X = np.zeros((n_out, x0.size))
        self.X[0] = x0
        self.k = 1

    def due(self, t_new) -> bool:
        return self.k < self.t.size and self.t[self.k] <= t_new + 1e-12

    def fill(self, t_new, interp):
        while self.k < self.t.size and self.t[self.k] <= t_new + 1e-12:
            self.X[self.k] = interp(self.t[self.k])
            self.k += 1


def _next_stop(t, T, bps, bi):
    while bi < bps.size and bps[bi] <= t + 1e-12 * max(1.0, t):
        bi += 1
    return (bps[bi] if bi < bps.size else T), bi


def _segment_rhs(f, t_stop, is_break):
    """Evaluate stages landing on a breakpoint as left limits."""
    if not is_break:
        return f
    left = np.nextafter(t_stop, -np.inf)
    return lambda t, y: f(min(t, left), y)


def _run_dp45(f, x, T, cfg, bps, grid, clamp):
    n = x.size
    t = 0.0
    fx = f(t, x)
    # initial step from the usual derivative-scale heuristic
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(x)
    d0 = np.linalg.norm(x / scale) / math.sqrt(n)
    d1 = np.linalg.norm(fx / scale) / math.sqrt(n)
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h = min(h, cfg.max_step, T)
    err_prev = 1e-4
    accepted = rejected = 0
    bi = 0
    K = np.empty((7, n))

    while t < T:
        t_stop, bi = _next_stop(t, T, bps, bi)
        is_break = t_stop < T
        fs = _segment_rhs(f, t_stop, is_break)
        h = min(h, cfg.max_step)
        h_try = min(h, t_stop - t)
        if h_try < cfg.min_step and t_stop - t >= cfg.min_step:
            raise IntegrationError(f"step size underflow (h = {h_try:.3e})", t, x)
        K[0] = fx
        for s in range(1, 6):
            K[s] = fs(t + _C[s] * h_try, x + h_try * (np.dot(_A[s], K[:s])))
        x_new = x + h_try * (_B @ K[:6])
        f_new = fs(t + h_try, x_new)
        K[6] = f_new
        err = _error_norm(h_try * (_E @ K), x, x_new, cfg)
        if err <= 1.0:
            hits = h_try == t_stop - t
            t_new = t_stop if hits else t + h_try
            Q = K.T @ _P
            t0, x0, h0 = t, x, h_try
            grid.fill(t_new, lambda tt: x0 + h0 * (Q @ _theta_powers((tt - t0) / h0)))
            t, x, fx = t_new, x_new, f_new
            accepted += 1
            if clamp(t, x):
                x = np.zeros(n)
                fx = f(t, x)
            elif hits and is_break:
                fx = f(t, x)  # right limit for the next segment
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = min(_MAX_FACTOR, _SAFETY * err ** -_ALPHA * err_prev ** _BETA)
            err_prev = max(err, 1e-4)
            # a step shortened to reach a breakpoint does not shrink the next one
            h = max(h, h_try * max(factor, _MIN_FACTOR)) if hits else h_try * max(factor, _MIN_FACTOR)
        else:
            rejected += 1
            h = h_try * max(_MIN_FACTOR, _SAFETY * err ** -_ALPHA)
    return dict(accepted=accepted, rejected=rejected)


def _theta_powers(theta):
    return np.array([theta, theta * theta, theta ** 3, theta ** 4])


def _run_lsoda(f, x, T, cfg, bps, grid, clamp):
    t = 0.0
    bi = 0
    accepted = 0
    max_step = cfg.max_step if math.isfinite(cfg.max_step) else np.inf
    while t < T:
        t_stop, bi = _next_stop(t, T, bps, bi)
        solver = LSODA(_segment_rhs(f, t_stop, t_stop < T), t, x, t_stop, max_step=max_step, rtol=cfg.rel_tol,
                       atol=cfg.abs_tol, min_step=0.0)
        restart = False
        while solver.status == "running":
            msg = solver.step()
            if solver.status == "failed":
                raise IntegrationError(f"stiff solver failed: {msg}", solver.t, solver.y)
            accepted += 1
            if grid.due(solver.t):
                grid.fill(solver.t, solver.dense_output())
            t, x = solver.t, solver.y.copy()
            if clamp(t, x):
                x = np.zeros_like(x)
                restart = t < t_stop
                break
        if not restart:
            t = t_stop
    return dict(accepted=accepted, rejected=0)


def integrate(rhs: Callable, x0, cfg: SimConfig, dilation: Dilation | None = None,
              cone: ConeSpec | None = None, input_fn: Callable | None = None,
              breakpoints=None) -> Trace:
    """Integrate ``x' = rhs(t, x)`` on ``[0, cfg.t_final]``.

    The default method is Dormand-Prince 5(4) with a PI step-size
    controller and quartic dense output at multiples of ``cfg.stride``;
    ``cfg.method = "lsoda"`` switches to an automatic stiff/non-stiff
    multistep solver for fields that become stiff.  After every accepted
    step the state is replaced by exact zero when its homogeneous norm
    (Euclidean norm without a dilation) drops below ``cfg.origin_clamp``;
    the first such time is ``clamped_at``.  Steps never cross a breakpoint
    (defaults to ``rhs.breakpoints`` when present).

    `input_fn(t, x)` and `cone` only affect the recorded columns.

    Raises
    ------
    IntegrationError
        On a non-finite derivative or when the step size underflows.
    """
    x = np.array(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    T = float(cfg.t_final)
    if hasattr(rhs, "prepare"):
        rhs.prepare(T)
    if breakpoints is None:
        breakpoints = getattr(rhs, "breakpoints", None)
    bps = np.array([] if breakpoints is None else breakpoints, dtype=float)
    bps = np.sort(bps[(bps > 0.0) & (bps < T)])

    nfev = 0

    def f(t, y):
        nonlocal nfev
        nfev += 1
        d = np.asarray(rhs(t, y), dtype=float)
        if not np.all(np.isfinite(d)):
            raise IntegrationError("right-hand side returned a non-finite value", t, y)
        return d

    clamped_at = None

    def clamp(t, y):
        nonlocal clamped_at
        if cfg.origin_clamp > 0.0 and np.any(y != 0.0) \
                and _clamp_norm(y, dilation) < cfg.origin_clamp:
            if clamped_at is None:
                clamped_at = t
            return True
        return False

    if clamp(0.0, x):
        x = np.zeros_like(x)
    grid = _Grid(T, cfg.stride, x)
    runner = _run_dp45 if cfg.method == "dp45" else _run_lsoda
    stats = runner(f, x, T, cfg, bps, grid, clamp)
    stats["nfev"] = nfev
    return _record(grid.t, grid.X, dilation, cone, input_fn, clamped_at, stats)


def _record(times, X, dilation, cone, input_fn, clamped_at, stats):
    N, n = X.shape
    hom = np.zeros(N)
    Phi = np.zeros((N, 0 if cone is None else cone.p))
    m = 0 if input_fn is None else np.asarray(input_fn(times[0], X[0])).size
    U = np.zeros((N, m))
    for k in range(N):
        x = X[k]
        if input_fn is not None:
            U[k] = input_fn(times[k], x)
        if not np.any(x):
            continue
        if dilation is not None:
            res = canonical_norm(dilation, x)
            hom[k] = res.value
            if cone is not None:
                Phi[k] = cone.H @ (res.value * res.projection)
        else:
            hom[k] = float(np.linalg.norm(x))
            if cone is not None:
                Phi[k] = cone.H @ x
    return Trace(times, X, U, Phi, hom, clamped_at, stats)


def simulate(plant: LinearPlant, controller, x0, cfg: SimConfig | None = None,
             pert: PerturbationSpec | None = None, cone: ConeSpec | None = None,
             dilation: Dilation | None = None, mixed: bool = False) -> Trace:
    """Build the closed loop and integrate it.

    The dilation used for the clamp and the recorded barriers defaults to
    the controller's own.
    """
    cfg = SimConfig() if cfg is None else cfg
    rhs = build_rhs(plant, controller, pert, mixed)
    if dilation is None and isinstance(controller, HomogeneousController):
        dilation = controller.dilation
    return integrate(rhs, x0, cfg, dilation, cone, rhs.control)


def settling_time(trace: Trace, threshold: float):
    """First recorded time after which ``|x(t)| <= threshold`` holds for all
    later samples, or None.  A clamp inside the final crossing interval is
    returned exactly."""
    nrm = np.linalg.norm(trace.states, axis=1)
    above = np.nonzero(nrm > threshold)[0]
    if above.size == 0:
        return float(trace.times[0])
    idx = above[-1]
    if idx == len(trace.times) - 1:
        return None
    t_star = float(trace.times[idx + 1])
    if trace.clamped_at is not None and trace.times[idx] < trace.clamped_at <= t_star:
        return float(trace.clamped_at)
    return t_star


def min_barrier(trace: Trace) -> np.ndarray:
    """Per-constraint minimum of the recorded barrier values."""
    if trace.barriers.shape[0] == 0:
        return np.zeros(trace.barriers.shape[1])
    return trace.barriers.min(axis=0)


def symmetry_check(rhs: Callable, dil: Dilation, mu: float, x0, s: float,
                   cfg: SimConfig | None = None, rhs_scaled: Callable | None = None) -> float:
    """Largest deviation ``|x(t, d(s) x0) - d(s) x(e^{mu s} t, x0)|`` on the
    output grid.

    The right-hand side is integrated with stride and horizon multiplied by
    ``e^{mu s}`` so that both grids correspond.  For a perturbed loop pass
    the rescaled-disturbance system as `rhs_scaled` (used for the left
    side).
    """
    cfg = SimConfig(t_final=3.0) if cfg is None else cfg
    c = math.exp(mu * s)
    D = dil.matrix(s)
    x0 = np.asarray(x0, dtype=float)
    lhs = integrate(rhs if rhs_scaled is None else rhs_scaled, D @ x0, cfg, dil)
    cfg_r = replace(cfg, t_final=cfg.t_final * c, stride=cfg.stride * c,
                    max_step=cfg.max_step * c)
    rhs_run = integrate(rhs, x0, cfg_r, dil)
    N = min(len(lhs.times), len(rhs_run.times))
    diff = lhs.states[:N] - rhs_run.states[:N] @ D.T
    return float(np.max(np.linalg.norm(diff, axis=1)))
