"""Linear homogeneous cones and sampled invariance / robustness certificates.

A cone is given by rows h_i of a matrix H and is the set
``{x : h_i^T Psi(x) >= 0}``, i.e. an ordinary polyhedral cone after the
homeomorphism Psi.  The conditions checked here are universally quantified
over slices of the unit sphere (or affine slices for the safety margins);
they are evaluated on deterministic low-discrepancy samples and reported as
worst-case margins with a witness point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.stats import norm as _normal
from scipy.stats import qmc

from .dilation import Dilation, canonical_norm, dilate, psi, weighted_norm
from .exceptions import ConeError, DilationError
from .numerics import as_matrix

__all__ = [
    "ConeSpec", "MarginReport", "SliceSample", "EmbeddingReport", "barrier_values",
    "contains", "is_metzler", "sample_xi", "invariance_margin",
    "closed_loop_cone_matrix", "iss_margin", "issf_check", "embedding_check",
    "DEFAULT_SAMPLES", "CONTAINMENT_TOL",
]

DEFAULT_SAMPLES = 2048
CONTAINMENT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ConeSpec:
    """Constraint rows ``H`` (p x n) with optional labels."""

    H: np.ndarray
    labels: tuple = ()
    condition: float = field(init=False)

    def __post_init__(self):
        H = as_matrix(self.H, "H")
        if np.any(np.linalg.norm(H, axis=1) == 0.0):
            raise ConeError("cone rows must be nonzero")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)
        labels = tuple(self.labels) if self.labels else tuple(
            f"h{i + 1}" for i in range(H.shape[0]))
        if len(labels) != H.shape[0]:
            raise ConeError("one label per constraint row is required")
        object.__setattr__(self, "labels", labels)
        cond = float(np.linalg.cond(H)) if H.shape[0] == H.shape[1] else math.nan
        object.__setattr__(self, "condition", cond)

    @property
    def p(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def is_square(self) -> bool:
        return self.p == self.n

    def inverse(self) -> np.ndarray:
        """H^{-1}; raises :class:`ConeError` for non-square or singular H."""
        if not self.is_square:
            raise ConeError(f"H is {self.p}x{self.n}, a square matrix is required")
        if not np.isfinite(self.condition) or self.condition > 1e12:
            raise ConeError(f"H is singular (condition number {self.condition:.3e})")
        return np.linalg.inv(self.H)


@dataclass
class MarginReport:
    """Worst sampled margin of a universally quantified inequality.

    ``passed`` is true iff the overall worst margin exceeds ``-tolerance``.
    Constraints without any sample carry ``+inf``.
    """

    name: str
    per_constraint: np.ndarray
    witness: np.ndarray | None
    samples: int
    tolerance: float
    passed: bool = field(init=False)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.worst > -self.tolerance)

    @property
    def worst(self) -> float:
        return float(np.min(self.per_constraint)) if self.per_constraint.size else math.inf

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{self.name}: worst margin {self.worst:+.3e} over {self.samples} samples [{verdict}]"


@dataclass
class SliceSample:
    points: np.ndarray   # (k, n)
    feasible: bool


@dataclass
class EmbeddingReport:
    applicable: bool
    holds: bool
    samples: int
    counterexample: np.ndarray | None = None


def barrier_values(cone: ConeSpec, dil: Dilation, x) -> np.ndarray:
    """phi_i(x) = h_i^T Psi(x) for every row of H."""
    return cone.H @ psi(dil, x)


def contains(cone: ConeSpec, dil: Dilation, x, tol: float = CONTAINMENT_TOL) -> bool:
    return bool(np.all(barrier_values(cone, dil, x) >= -tol))


def is_metzler(M, tol: float = 1e-9) -> bool:
    """True iff every off-diagonal entry of M is >= -tol."""
    M = as_matrix(M, "M", square=True)
    off = M[~np.eye(M.shape[0], dtype=bool)]
    return bool(np.all(off >= -tol))


# ---------------------------------------------------------------------------
# Sampling of the boundary slices
# ---------------------------------------------------------------------------

def _directions(dim: int, count: int, seed: int) -> np.ndarray:
    """Deterministic, roughly uniform unit directions in R^dim."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = 2.0 * math.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    u = qmc.Sobol(dim, scramble=True, seed=seed).random(count)
    g = _normal.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    return g / np.linalg.norm(g, axis=1)[:, None]


def _orthant_directions(dim: int, count: int, seed: int) -> np.ndarray:
    """Deterministic directions in the closed nonnegative orthant of R^dim,
    including the coordinate axes and the pairwise edges."""
    if dim == 0:
        return np.zeros((1, 0))
    if dim == 1:
        return np.ones((1, 1))
    base = np.abs(_directions(dim, count, seed))
    extra = [np.eye(dim)]
    t = np.linspace(0.0, 1.0, 9)[1:-1]
    for a in range(dim):
        for b in range(a + 1, dim):
            E = np.zeros((t.size, dim))
            E[:, a] = np.cos(0.5 * math.pi * t)
            E[:, b] = np.sin(0.5 * math.pi * t)
            extra.append(E)
    return np.vstack([base] + extra)


def _dedupe(Z: np.ndarray) -> np.ndarray:
    if Z.shape[0] == 0:
        return Z
    _, idx = np.unique(np.round(Z, 12), axis=0, return_index=True)
    return Z[np.sort(idx)]


def _normalize(Z, P):
    nrm = np.sqrt(np.einsum("ij,jk,ik->i", Z, P, Z))
    keep = nrm > 1e-14
    return Z[keep] / nrm[keep, None]


def sample_xi(cone: ConeSpec, i: int, r=None, count: int = DEFAULT_SAMPLES,
              weight=None, radius: float | None = None, seed: int = 0,
              tol: float = 1e-12) -> SliceSample:
    """Sample the boundary slice of constraint `i`.

    With ``r`` omitted (or zero) the slice is
    ``{z : ||z|| = 1, h_i^T z = 0, h_j^T z >= 0 (j != i)}`` in the weighted
    norm given by `weight` (identity by default).  With an offset vector
    ``r >= 0`` it is the affine slice
    ``{z : h_i^T z + r_i = 0, h_j^T z + r_j >= 0}`` restricted to
    ``|z| <= radius`` (default ``100 max(r)``).

    Square, invertible cones are sampled exactly in the coordinates
    ``y = H z``; otherwise directions in the hyperplane are generated and
    filtered, and pairwise boundary edges are added.
    """
    H = cone.H
    n = cone.n
    P = np.eye(n) if weight is None else as_matrix(weight, "weight", square=True)
    affine = r is not None and np.any(np.asarray(r, dtype=float) != 0.0)
    if affine:
        r = np.asarray(r, dtype=float).ravel()
        if r.size != cone.p or np.any(r < 0.0):
            raise ValueError("offset r must be a nonnegative vector with one entry per row")
        if radius is None:
            radius = 100.0 * float(np.max(r))

    square_ok = cone.is_square and np.isfinite(cone.condition) and cone.condition < 1e12
    if square_ok:
        Hinv = np.linalg.inv(H)
        others = [j for j in range(n) if j != i]
        D = _orthant_directions(n - 1, count, seed)
        if not affine:
            Y = np.zeros((D.shape[0], n))
            Y[:, others] = D
            Z = _normalize(Y @ Hinv.T, P)
        else:
            # y_i = -r_i, y_j = -r_j + t_j with t_j >= 0 spread over scales
            scales = radius * np.geomspace(1e-3, 1.0, 16)
            Ys = []
            for sc in scales:
                Y = np.tile(-r, (D.shape[0], 1))
                Y[:, others] += sc * D
                Ys.append(Y)
            Y0 = -r.reshape(1, -1).copy()
            Z = np.vstack([Y0] + Ys) @ Hinv.T
            Z = Z[np.linalg.norm(Z, axis=1) <= radius]
        Z = _dedupe(Z)
        return SliceSample(Z, Z.shape[0] > 0)

    hi = H[i]
    shift = np.zeros(n)
    if affine:
        shift = -r[i] * hi / float(hi @ hi)
    N = null_space(hi.reshape(1, -1))
    candidates = []
    dirs = _directions(N.shape[1], count, seed) if N.shape[1] else np.zeros((0, 0))
    if affine:
        for sc in radius * np.geomspace(1e-3, 1.0, 16):
            candidates.append(shift + sc * dirs @ N.T)
        candidates.append(shift.reshape(1, -1))
    else:
        candidates.append(dirs @ N.T)
    # boundary edges h_i^T z = -r_i, h_j^T z = -r_j
    for j in range(cone.p):
        if j == i:
            continue
        Hij = H[[i, j]]
        rhs = -r[[i, j]] if affine else np.zeros(2)
        base = np.linalg.lstsq(Hij, rhs, rcond=None)[0]
        if np.linalg.norm(Hij @ base - rhs) > 1e-9:
            continue
        Nij = null_space(Hij)
        if Nij.shape[1] == 0:
            candidates.append(base.reshape(1, -1))
            continue
        e = _directions(Nij.shape[1], max(8, count // 8), seed + j + 1) @ Nij.T
        if affine:
            for sc in radius * np.geomspace(1e-3, 1.0, 8):
                candidates.append(base + sc * e)
        else:
            candidates.append(e)
    Z = np.vstack(candidates) if candidates else np.zeros((0, n))
    if affine:
        off = H @ Z.T + r[:, None]
        ok = np.all(off >= -tol * (1.0 + np.abs(r))[:, None], axis=0)
        Z = Z[ok]
        Z = Z[np.linalg.norm(Z, axis=1) <= radius]
    else:
        Z = _normalize(Z, P)
        ok = np.all(H @ Z.T >= -tol, axis=0)
        Z = Z[ok]
    Z = _dedupe(Z)
    return SliceSample(Z, Z.shape[0] > 0)


# ---------------------------------------------------------------------------
# Invariance and robustness margins
# ---------------------------------------------------------------------------

def _tangency_margin(hi, fz, z, P, G, hi_rhs):
    denom = float(z @ P @ G @ z)
    if denom <= 0.0:
        raise DilationError("z^T P G_d z <= 0 at a sample: dilation invariant violated")
    return float(hi @ fz) - float(z @ P @ fz) / denom * float(hi_rhs @ z)


def invariance_margin(field: Callable[[np.ndarray], np.ndarray], dil: Dilation,
                      cone: ConeSpec, samples: int = DEFAULT_SAMPLES,
                      constraints: Sequence[int] | None = None, seed: int = 0,
                      tol: float = CONTAINMENT_TOL) -> MarginReport:
    """Sampled tangency condition for positive invariance of the cone.

    For every constraint i and z on its boundary slice of the unit sphere,
    the margin is ``h_i^T g(z) - (z^T P g(z) / z^T P G_d z) h_i^T G_d z``.
    """
    P, G = dil.weight, dil.generator
    idx = range(cone.p) if constraints is None else constraints
    per = np.full(cone.p, math.inf)
    witness, worst, used = None, math.inf, 0
    for i in idx:
        Z = sample_xi(cone, i, count=samples, weight=P, seed=seed).points
        hi = cone.H[i]
        rhs = hi @ G
        for z in Z:
            m = _tangency_margin(hi, np.asarray(field(z), dtype=float), z, P, G, rhs)
            used += 1
            if m < per[i]:
                per[i] = m
            if m < worst:
                worst, witness = m, z
    return MarginReport("invariance", per, witness, used, tol)


def iss_margin(field: Callable[[np.ndarray, np.ndarray], np.ndarray], dil: Dilation,
               cone: ConeSpec, q_grid, samples: int = DEFAULT_SAMPLES,
               constraints: Sequence[int] | None = None, seed: int = 0,
               tol: float = CONTAINMENT_TOL) -> MarginReport:
    """Sampled robust tangency condition for a perturbed field f(x, q).

    Margin ``h_i^T f(z,q) - (z^T P f(z,q) / z^T P G_d z) h_i^T (G_d - I) z``
    over boundary slices and every q in `q_grid`.  On the slice
    ``h_i^T z = 0`` the shifted term coincides with the nominal one, so with
    ``q_grid = [0]`` this reduces to :func:`invariance_margin`.
    """
    P, G = dil.weight, dil.generator
    n = dil.dim
    shifted = G - np.eye(n)
    Q = [np.atleast_1d(np.asarray(q, dtype=float)) for q in q_grid]
    idx = range(cone.p) if constraints is None else constraints
    per = np.full(cone.p, math.inf)
    witness, worst, used = None, math.inf, 0
    for i in idx:
        Z = sample_xi(cone, i, count=samples, weight=P, seed=seed).points
        hi = cone.H[i]
        rhs = hi @ shifted
        for z in Z:
            for q in Q:
                m = _tangency_margin(hi, np.asarray(field(z, q), dtype=float), z, P, G, rhs)
                used += 1
                if m < per[i]:
                    per[i] = m
                if m < worst:
                    worst, witness = m, z
    return MarginReport("iss", per, witness, used, tol, details={"q_points": len(Q)})


def _gamma_tilde(ctrl, z):
    P = ctrl.dilation.weight
    Acl = ctrl.closed_loop_matrix
    return -float(z @ P @ Acl @ z) / float(z @ P @ ctrl.dilation.generator @ z)


def closed_loop_cone_matrix(ctrl, cone: ConeSpec, z) -> np.ndarray:
    """M(z) = H (A + BK + mu gamma(z) G0) H^{-1}.

    ``gamma(z) = -z^T P (A+BK) z / z^T P G_d z`` is invariant under scaling
    of z, so any nonzero z may be passed.
    """
    Hinv = cone.inverse()
    z = np.asarray(z, dtype=float).ravel()
    g = _gamma_tilde(ctrl, z)
    return cone.H @ (ctrl.closed_loop_matrix + ctrl.mu * g * ctrl.G0) @ Hinv


def issf_check(ctrl, cone: ConeSpec, r, samples: int = DEFAULT_SAMPLES,
               radius: float | None = None, seed: int = 0) -> MarginReport:
    """Sampled input-to-state-safety certificate ``-e_i^T M(z) r > 0``.

    ``z`` ranges over the affine slices ``h_i^T z + r_i = 0``,
    ``h_j^T z + r_j >= 0`` (window ``|z| <= radius``).  The static
    certificate ``-H(A+BK)H^{-1} r`` (the mu -> 0 limit) is reported in
    ``details["static_certificate"]``.  The verdict requires a strictly
    positive sampled margin.
    """
    r = np.asarray(r, dtype=float).ravel()
    if r.size != cone.p or np.any(r <= 0.0):
        raise ValueError("issf_check needs a strictly positive offset vector r")
    Hinv = cone.inverse()
    static = -(cone.H @ ctrl.closed_loop_matrix @ Hinv) @ r
    per = np.full(cone.p, math.inf)
    witness, worst, used = None, math.inf, 0
    for i in range(cone.p):
        sl = sample_xi(cone, i, r=r, count=samples, radius=radius, seed=seed)
        if not sl.feasible:
            raise ValueError(f"affine slice {i} is empty for r = {r}")
        for z in sl.points:
            m = -float(closed_loop_cone_matrix(ctrl, cone, z)[i] @ r)
            used += 1
            if m < per[i]:
                per[i] = m
            if m < worst:
                worst, witness = m, z
    return MarginReport("issf", per, witness, used, 0.0,
                        details={"static_certificate": static, "r": r})


def embedding_check(cone: ConeSpec, dil: Dilation, G0, samples: int = 10_000,
                    seed: int = 0) -> EmbeddingReport:
    """Check that the linear cone {Hx >= 0} inside the unit ball lies in the
    homogeneous cone, which is guaranteed when H(-G0)H^{-1} is Metzler.

    Returns ``applicable=False`` (and skips sampling) when that matrix is not
    Metzler.
    """
    Hinv = cone.inverse()
    if not is_metzler(cone.H @ (-np.asarray(G0, dtype=float)) @ Hinv):
        return EmbeddingReport(False, False, 0)
    n = cone.n
    P = dil.weight
    rng = np.random.default_rng(seed)
    Y = np.abs(rng.standard_normal((samples, n)))
    Y[rng.random((samples, n)) < 0.2] = 0.0  # put mass on the faces too
    X = _normalize(Y @ Hinv.T, P)
    radii = rng.random(X.shape[0]) ** (1.0 / n)
    for x, rad in zip(X, radii):
        pt = rad * x
        if not contains(cone, dil, pt):
            return EmbeddingReport(True, False, X.shape[0], pt)
    return EmbeddingReport(True, True, X.shape[0])
