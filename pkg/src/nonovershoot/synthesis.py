"""Design pipeline: linear nonovershooting gain, homogenization, degree
range, Lyapunov weight and evaluation of the homogeneous feedback.

The feedback is

    u(x) = K0 x + ||x||_d^{1+mu} (K - K0) d(-ln ||x||_d) x,

with ``d(s) = exp(s (I + mu G0))``.  On the weighted unit sphere it coincides
with the linear law ``u = K x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cone import ConeSpec, MarginReport, invariance_margin, is_metzler
from .dilation import Dilation, canonical_norm, weighted_norm
from .exceptions import NumericsError, PlantError, SynthesisError
from .numerics import (LpProblem, as_matrix, is_anti_hurwitz, is_hurwitz,
                       lp_solve, solve_lyapunov, sym)

__all__ = [
    "LinearPlant", "LinearSynthesisResult", "Homogenization", "HomogeneousController",
    "PipelineReport", "synth_linear", "solve_homogenization", "metzler_offset_range",
    "solve_lmi_weight", "lmi_residuals", "eval_control", "eval_mixed_control",
    "full_pipeline",
]

ELL_MIN = 1e-6
LMI_DELTA = 1e-6


@dataclass(frozen=True, eq=False)
class LinearPlant:
    """Controllable pair ``x' = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A", square=True)
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if B.ndim != 2 or B.shape[0] != A.shape[0] or B.shape[1] == 0:
            raise PlantError(f"B must be {A.shape[0]} x m, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise PlantError("B has non-finite entries")
        n = A.shape[0]
        blocks, AkB = [], B
        for _ in range(n):
            blocks.append(AkB)
            AkB = A @ AkB
        C = np.hstack(blocks)
        if np.linalg.matrix_rank(C) < n:
            raise PlantError("the pair (A, B) is not controllable")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass
class LinearSynthesisResult:
    K: np.ndarray
    ell: np.ndarray
    J: float
    iterations: int
    history: list = field(default_factory=list)


@dataclass
class Homogenization:
    G0: np.ndarray
    Y0: np.ndarray
    K0: np.ndarray
    residual: float
    tau: float = math.nan
    mu_range: tuple = (-1.0, 0.0)


@dataclass(frozen=True, eq=False)
class HomogeneousController:
    """Homogeneous feedback with its design data.

    Attributes
    ----------
    K, K0 : (m, n) ndarray
    G0 : (n, n) ndarray
    dilation : Dilation
        Generator ``I + mu G0`` and the Lyapunov weight P.
    mu : float
    plant : LinearPlant
    """

    K: np.ndarray
    K0: np.ndarray
    G0: np.ndarray
    dilation: Dilation
    mu: float
    plant: LinearPlant

    @classmethod
    def build(cls, plant, K, K0, G0, mu, P, validate=True):
        n = plant.n
        G0 = as_matrix(G0, "G0", square=True)
        dil = Dilation(np.eye(n) + mu * G0, P, validate=validate)
        return cls(as_matrix(K, "K"), as_matrix(K0, "K0"), G0, dil, float(mu), plant)

    @property
    def closed_loop_matrix(self) -> np.ndarray:
        return self.plant.A + self.plant.B @ self.K

    def field(self, x) -> np.ndarray:
        """Closed-loop vector field A x + B u(x)."""
        x = np.asarray(x, dtype=float)
        return self.plant.A @ x + self.plant.B @ eval_control(self, x)


@dataclass
class PipelineReport:
    linear: LinearSynthesisResult | None
    homogenization: Homogenization
    lmi: dict
    margins: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.margins)


# ---------------------------------------------------------------------------
# Linear gain
# ---------------------------------------------------------------------------

def _gain_basis(plant, cone):
    """Affine map k -> H (A + B K) H^{-1}, K row-major; returns (base, C) with
    ``Abar = base + C @ k`` on the last axis."""
    Hinv = cone.inverse()
    n, m = plant.n, plant.m
    base = cone.H @ plant.A @ Hinv
    HB = cone.H @ plant.B
    C = np.einsum("ia,bj->ijab", HB, Hinv).reshape(n, n, m * n)
    return base, C


def synth_linear(plant: LinearPlant, cone: ConeSpec, rho: float,
                 max_iters: int = 50, tol: float = 1e-10) -> LinearSynthesisResult:
    """Alternating LP for a gain K with ``H(A+BK)H^{-1}`` Metzler and stable.

    Minimizes ``J(K, l) = max_j l^T H(A+BK)H^{-1} e_j`` subject to
    ``Abar_ij >= 0`` (i != j) and ``|Abar_ij| <= rho``.  A negative J certifies
    that ``Abar`` is Hurwitz (l is a linear copositive Lyapunov vector).
    Starts from ``l = 1`` and alternates an LP in (K, t) with an LP in
    (l, t), ``l`` confined to ``[1e-6, 1]``.
    """
    if not rho > 0.0:
        raise ValueError("rho must be positive")
    if cone.n != plant.n:
        raise PlantError("cone and plant dimensions differ")
    base, C = _gain_basis(plant, cone)
    n, m = plant.n, plant.m
    nk = m * n
    off = ~np.eye(n, dtype=bool)

    # rows common to every K-step: Metzler and magnitude bounds on Abar
    rows, rhs = [], []
    for i in range(n):
        for j in range(n):
            r = np.zeros(nk + 1)
            r[:nk] = C[i, j]
            if off[i, j]:
                rows.append(-r)
                rhs.append(base[i, j])
            else:
                rows.append(-r)
                rhs.append(base[i, j] + rho)
            rows.append(r)
            rhs.append(rho - base[i, j])
    rows, rhs = np.array(rows), np.array(rhs)

    ell = np.ones(n)
    best = None
    J_prev = math.inf
    history = []
    for it in range(1, max_iters + 1):
        obj_rows = np.zeros((n, nk + 1))
        obj_rows[:, :nk] = np.einsum("i,ijk->jk", ell, C)
        obj_rows[:, -1] = -1.0
        c = np.zeros(nk + 1)
        c[-1] = 1.0
        res = lp_solve(LpProblem(c, np.vstack([obj_rows, rows]),
                                 np.concatenate([-(ell @ base), rhs]),
                                 [(None, None)] * (nk + 1)))
        if not res.success:
            raise SynthesisError(f"gain LP is {res.status} for rho = {rho}",
                                 stage="linear", detail=best)
        k = res.x[:nk]
        Abar = base + C @ k
        c2 = np.zeros(n + 1)
        c2[-1] = 1.0
        res2 = lp_solve(LpProblem(c2, np.column_stack([Abar.T, -np.ones(n)]), np.zeros(n),
                                  [(ELL_MIN, 1.0)] * n + [(None, None)]))
        if not res2.success:
            raise SynthesisError("multiplier LP failed", stage="linear", detail=best)
        ell = res2.x[:n]
        J = float(np.max(ell @ Abar))
        history.append(J)
        if best is None or J < best.J:
            best = LinearSynthesisResult(k.reshape(m, n), ell.copy(), J, it, history)
        if J_prev - J < tol:
            break
        J_prev = J
    best.iterations = len(history)
    if not best.J < 0.0:
        raise SynthesisError(f"alternating LP stalled with J = {best.J:.3e} >= 0",
                             stage="linear", detail=best)
    return best


# ---------------------------------------------------------------------------
# Homogenization
# ---------------------------------------------------------------------------

def _homogenization_operator(plant):
    n, m = plant.n, plant.m
    A, B = plant.A, plant.B
    I = np.eye(n)
    # row-major vectorization: vec(X M) = kron(I, M^T) vec X, vec(M X) = kron(M, I) vec X
    top = np.hstack([np.kron(A, I) - np.kron(I, A.T), np.kron(B, I)])
    bottom = np.hstack([np.kron(I, B.T), np.zeros((n * m, m * n))])
    op = np.vstack([top, bottom])
    rhs = np.concatenate([A.ravel(), np.zeros(n * m)])
    return op, rhs


def solve_homogenization(plant: LinearPlant, seed: int = 0,
                         cond_limit: float = 1e8) -> Homogenization:
    """Minimum-norm solution of ``A G0 - G0 A + B Y0 = A``, ``G0 B = 0``.

    ``K0 = Y0 (G0 - I)^{-1}``.  When ``G0 - I`` is (nearly) singular the
    solution is moved within the affine solution set by random null-space
    directions of growing size until ``cond(G0 - I) <= cond_limit``.
    """
    n, m = plant.n, plant.m
    op, rhs = _homogenization_operator(plant)
    sol, _, rank, sv = np.linalg.lstsq(op, rhs, rcond=None)
    residual = float(np.max(np.abs(op @ sol - rhs)))
    scale = 1.0 + float(np.max(np.abs(rhs)))
    if residual > 1e-9 * scale:
        raise SynthesisError(f"homogenization system is inconsistent (residual {residual:.3e})",
                             stage="homogenization", detail=residual)
    I = np.eye(n)

    def split(v):
        return v[:n * n].reshape(n, n), v[n * n:].reshape(m, n)

    G0, Y0 = split(sol)
    if np.linalg.cond(G0 - I) > cond_limit:
        _, _, vt = np.linalg.svd(op)
        null = vt[rank:]
        if null.shape[0] == 0:
            raise SynthesisError("G0 - I is singular and the solution is unique",
                                 stage="homogenization")
        rng = np.random.default_rng(seed)
        for amp in np.geomspace(1e-3, 10.0, 40):
            trial = sol + amp * (rng.standard_normal(null.shape[0]) @ null)
            G0, Y0 = split(trial)
            if np.linalg.cond(G0 - I) <= cond_limit:
                residual = float(np.max(np.abs(op @ trial - rhs)))
                break
        else:
            raise SynthesisError("could not make G0 - I invertible", stage="homogenization")
    K0 = np.linalg.solve((G0 - I).T, Y0.T).T
    return Homogenization(G0, Y0, K0, residual)


def homogenization_residual(plant: LinearPlant, G0, Y0) -> float:
    """Max-abs residual of both homogenization equations."""
    A, B = plant.A, plant.B
    r1 = A @ G0 + B @ Y0 - G0 @ A - A
    r2 = G0 @ B
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


def metzler_offset_range(cone: ConeSpec, K, G0, plant: LinearPlant,
                         tol: float = 1e-9, positive: bool = False):
    """Smallest tau with ``H(tau (A+BK) - G0)H^{-1}`` Metzler and the induced
    range of admissible degrees.

    Off-diagonal entries give ``tau a_ij >= g_ij``; entries with
    ``g_ij <= tol`` impose nothing.  Returns ``(tau_min, (lo, hi))`` with
    ``mu`` admissible for ``lo <= mu < hi`` (``lo = max(-1, -1/tau)``).

    With ``positive=True`` (experimental) the sign of G0 is flipped and the
    range is ``(0, 1/tau]``.
    """
    Hinv = cone.inverse()
    a = cone.H @ (plant.A + plant.B @ np.asarray(K, dtype=float)) @ Hinv
    g = cone.H @ np.asarray(G0, dtype=float) @ Hinv
    if positive:
        g = -g
    n = a.shape[0]
    tau, offending = 0.0, []
    for i in range(n):
        for j in range(n):
            if i == j or g[i, j] <= tol:
                continue
            if a[i, j] <= 0.0:
                offending.append((i, j, float(a[i, j]), float(g[i, j])))
                continue
            tau = max(tau, g[i, j] / a[i, j])
    if offending:
        raise SynthesisError(
            "no tau makes the offset matrix Metzler; entries (i, j, a_ij, g_ij): "
            + ", ".join(f"({i},{j},{aij:.3g},{gij:.3g})" for i, j, aij, gij in offending),
            stage="metzler", detail=offending)
    if positive:
        return tau, (0.0, math.inf if tau == 0.0 else 1.0 / tau)
    lo = -1.0 if tau <= 1.0 else -1.0 / tau
    return tau, (lo, 0.0)


# ---------------------------------------------------------------------------
# Lyapunov weight
# ---------------------------------------------------------------------------

def lmi_residuals(P, Acl, Gd):
    """(max eig sym(P Acl), min eig sym(P Gd), min eig P)."""
    P = np.asarray(P, dtype=float)
    return (float(np.max(np.linalg.eigvalsh(sym(P @ Acl)))),
            float(np.min(np.linalg.eigvalsh(sym(P @ Gd)))),
            float(np.min(np.linalg.eigvalsh(P))))


def _lmi_ok(P, Acl, Gd, delta):
    d = delta * np.linalg.norm(P, 2)
    a, b, c = lmi_residuals(P, Acl, Gd)
    return a <= -d and b >= d and c >= d


def _penalty(P, Acl, Gd):
    """Worst normalized violation and a subgradient with respect to P."""
    nP = np.linalg.norm(P, 2)
    terms = []
    w, V = np.linalg.eigh(sym(P @ Acl))
    v = V[:, -1]
    terms.append((w[-1] / nP, np.outer(v, Acl @ v) + np.outer(Acl @ v, v)))
    w, V = np.linalg.eigh(sym(P @ Gd))
    v = V[:, 0]
    terms.append((-w[0] / nP, -(np.outer(v, Gd @ v) + np.outer(Gd @ v, v))))
    w, V = np.linalg.eigh(P)
    v = V[:, 0]
    terms.append((-w[0] / nP, -2.0 * np.outer(v, v)))
    val, grad = max(terms, key=lambda t: t[0])
    return val, 0.5 * (grad + grad.T)


def solve_lmi_weight(plant: LinearPlant, K, G_d, cone: ConeSpec | None = None,
                     delta: float = LMI_DELTA, max_iter: int = 20000) -> np.ndarray:
    """Symmetric P with ``sym(P(A+BK)) < 0``, ``sym(P G_d) > 0``, ``P > 0``.

    Margins are ``delta * ||P||``.  Lyapunov solutions ``P Acl + Acl^T P = -Q``
    are tried for Q in a family built from I, H^T H (when a cone is given),
    G_d-weighted terms and their blends; if none is feasible a projected
    subgradient descent on the worst eigenvalue violation is run from the
    best candidate.

    Raises
    ------
    SynthesisError
        If no feasible P is found (try a degree closer to zero).
    """
    Acl = plant.A + plant.B @ as_matrix(K, "K")
    Gd = as_matrix(G_d, "G_d", square=True)
    if not is_hurwitz(Acl):
        raise SynthesisError("A + BK is not Hurwitz", stage="lmi")
    if not is_anti_hurwitz(Gd):
        raise SynthesisError("G_d is not anti-Hurwitz", stage="lmi")
    n = plant.n
    base = [np.eye(n), sym(Gd), Gd.T @ Gd]
    if cone is not None and cone.is_square:
        base.append(cone.H.T @ cone.H)
    base = [Q for Q in base if np.min(np.linalg.eigvalsh(sym(Q))) > 0.0]
    family = [Q / np.linalg.norm(Q, 2) for Q in base]
    for a in range(len(family)):
        for b in range(a + 1, len(family)):
            for t in (0.25, 0.5, 0.75):
                family.append(t * family[a] + (1.0 - t) * family[b])
    best, best_val = None, math.inf
    for Q in family:
        try:
            P = solve_lyapunov(Acl, Q)
        except NumericsError:
            continue
        P = P / np.linalg.norm(P, 2)
        if _lmi_ok(P, Acl, Gd, delta):
            return 0.5 * (P + P.T)
        val, _ = _penalty(P, Acl, Gd)
        if val < best_val:
            best, best_val = P, val
    if best is None:
        best = np.eye(n)
    P = best
    step0 = 0.1
    for k in range(1, max_iter + 1):
        val, g = _penalty(P, Acl, Gd)
        if val < -2.0 * delta and _lmi_ok(P, Acl, Gd, delta):
            return 0.5 * (P + P.T)
        gn = np.linalg.norm(g)
        if gn == 0.0:
            break
        P = P - (step0 / math.sqrt(k)) * g / gn
        P = 0.5 * (P + P.T)
        P = P / np.linalg.norm(P, 2)
    raise SynthesisError("no feasible Lyapunov weight found; reduce |mu|",
                         stage="lmi", detail=P)


# ---------------------------------------------------------------------------
# Feedback evaluation
# ---------------------------------------------------------------------------

def eval_control(ctrl: HomogeneousController, x) -> np.ndarray:
    """Homogeneous feedback value; ``u(0) = 0`` (also for mu = -1)."""
    x = np.asarray(x, dtype=float).ravel()
    res = canonical_norm(ctrl.dilation, x)
    if res.value == 0.0:
        return np.zeros(ctrl.K.shape[0])
    return ctrl.K0 @ x + res.value ** (1.0 + ctrl.mu) * ((ctrl.K - ctrl.K0) @ res.projection)


def eval_mixed_control(ctrl: HomogeneousController, x) -> np.ndarray:
    """Linear law outside the weighted unit ball, homogeneous law inside."""
    x = np.asarray(x, dtype=float).ravel()
    if weighted_norm(ctrl.dilation.weight, x) >= 1.0:
        return ctrl.K @ x
    return eval_control(ctrl, x)


def full_pipeline(plant: LinearPlant, cone: ConeSpec, rho: float, mu: float,
                  samples: int = 2048, K=None, positive: bool = False):
    """Run every design stage and attach the invariance margin.

    Parameters
    ----------
    K : array_like, optional
        Use this linear gain instead of solving the bilinear program.
    positive : bool
        Experimental positive-degree design.

    Returns
    -------
    (HomogeneousController, PipelineReport)
    """
    mu = float(mu)
    if not positive and not -1.0 <= mu < 0.0:
        raise ValueError(f"mu = {mu} is outside [-1, 0)")
    if positive and not mu > 0.0:
        raise ValueError("the positive-degree design needs mu > 0")
    lin = None
    if K is None:
        lin = synth_linear(plant, cone, rho)
        K = lin.K
    K = as_matrix(K, "K")
    Acl = plant.A + plant.B @ K
    if not is_hurwitz(Acl) or not is_metzler(cone.H @ Acl @ cone.inverse()):
        raise SynthesisError("linear gain is not a Metzler, Hurwitz design", stage="linear")
    hom = solve_homogenization(plant)
    tau, rng = metzler_offset_range(cone, K, hom.G0, plant, positive=positive)
    hom.tau, hom.mu_range = tau, rng
    lo, hi = rng
    inside = (lo < mu <= hi) if positive else (lo <= mu < hi)
    if not inside:
        raise SynthesisError(f"mu = {mu} is outside the admissible range [{lo}, {hi})",
                             stage="metzler", detail=rng)
    Gd = np.eye(plant.n) + mu * hom.G0
    P = solve_lmi_weight(plant, K, Gd, cone)
    ctrl = HomogeneousController.build(plant, K, hom.K0, hom.G0, mu, P)
    lmi = dict(zip(("max_eig_PAcl", "min_eig_PGd", "min_eig_P"), lmi_residuals(P, Acl, Gd)))
    report = PipelineReport(lin, hom, lmi)
    report.margins.append(invariance_margin(ctrl.field, ctrl.dilation, cone, samples))
    return ctrl, report
