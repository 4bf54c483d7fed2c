"""Linear dilations d(s) = e^{s G_d} and the canonical homogeneous norm.

The weighted Euclidean norm ``||x|| = sqrt(x^T P x)`` is used throughout.  A
generator/weight pair is accepted when ``G_d`` is anti-Hurwitz and
``P G_d + G_d^T P`` is positive definite; under those conditions
``s -> ||d(s) x||`` is strictly increasing for every ``x != 0`` and the
canonical homogeneous norm ``||x||_d = e^{s_x}``, ``||d(-s_x) x|| = 1``, is well
defined.
"""

from __future__ import annotations

import math
from dataclasses import InitVar, dataclass, field
from typing import Callable

import numpy as np

from .exceptions import DilationError, NumericsError
from .numerics import as_matrix, eigen_real_parts, expm, sym

__all__ = [
    "Dilation", "HomNormResult", "HomogeneityReport", "dilate", "canonical_norm",
    "canonical_norm_gradient", "psi", "psi_inverse", "hom_add",
    "check_field_homogeneity", "weighted_norm", "unit_sphere_samples",
]

_TINY = 1e-300
_LOG_TINY = math.log(_TINY)
# eigenvector condition number above which d(s) falls back to expm
_SPECTRAL_COND_LIMIT = 1e8


@dataclass(frozen=True, eq=False)
class Dilation:
    """Linear dilation with generator `generator` (G_d) and weight `weight` (P).

    Instances are immutable.  With ``validate=True`` (the default) the
    constructor refuses pairs that do not make the dilation strictly
    monotone; ``validate=False`` builds the object anyway so that the
    invariant can be inspected, but the norm routines still refuse to run.

    Attributes
    ----------
    monotonicity_margin : float
        Smallest eigenvalue of ``P G_d + G_d^T P`` (positive for a strictly
        monotone dilation).
    """

    generator: np.ndarray
    weight: np.ndarray
    validate: InitVar[bool] = True
    monotonicity_margin: float = field(init=False)

    def __post_init__(self, validate):
        G = as_matrix(self.generator, "generator", square=True)
        P = as_matrix(self.weight, "weight", square=True)
        if G.shape != P.shape:
            raise DilationError("generator and weight must have the same shape")
        P = 0.5 * (P + P.T)
        G.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "generator", G)
        object.__setattr__(self, "weight", P)
        margin = float(np.min(np.linalg.eigvalsh(sym(P @ G))))
        object.__setattr__(self, "monotonicity_margin", margin)
        object.__setattr__(self, "_PG", P @ G)
        object.__setattr__(self, "_standard", bool(np.array_equal(G, np.eye(G.shape[0]))))
        object.__setattr__(self, "_spectral", self._factorize(G))
        if validate:
            self.check()

    def _factorize(self, G):
        lam, V = np.linalg.eig(G)
        if np.linalg.cond(V) > _SPECTRAL_COND_LIMIT:
            return None
        # |d(-s) x|^2 = Re sum_jk conj(c_j) M_jk c_k exp(-(conj(l_j) + l_k) s), c = V^{-1} x
        Vinv = np.linalg.inv(V)
        group = None
        if not np.any(lam.imag):
            lam, V, Vinv = lam.real, V.real, Vinv.real
        M = V.conj().T @ self.weight @ V
        rates = (lam.conj()[:, None] + lam[None, :]).ravel()
        if not np.iscomplexobj(lam):
            # real spectrum: terms sharing a rate are summed with one product
            uniq = np.unique(np.round(rates, 12))
            S = (np.abs(rates[None, :] - uniq[:, None]) < 1e-9) * M.ravel()[None, :]
            n = G.shape[0]
            pairs = tuple(_symmetric_pairs(row.reshape(n, n)) for row in S)
            group = (tuple(float(b) for b in uniq), pairs, Vinv.tolist())
        return lam, V, Vinv, M, rates, group

    @classmethod
    def standard(cls, weight) -> "Dilation":
        """The standard dilation e^s I with the given weight."""
        P = as_matrix(weight, "weight", square=True)
        return cls(np.eye(P.shape[0]), P)

    @property
    def dim(self) -> int:
        return self.generator.shape[0]

    @property
    def is_standard(self) -> bool:
        return self._standard

    def check(self):
        """Raise :class:`DilationError` unless the dilation is strictly monotone."""
        if np.min(eigen_real_parts(self.generator)) <= 0.0:
            raise DilationError("generator is not anti-Hurwitz")
        if np.min(np.linalg.eigvalsh(self.weight)) <= 0.0:
            raise DilationError("weight is not positive definite")
        if self.monotonicity_margin <= 0.0:
            raise DilationError(
                f"P G_d + G_d^T P is not positive definite "
                f"(min eigenvalue {self.monotonicity_margin:.3e})")

    def matrix(self, s: float) -> np.ndarray:
        """The operator d(s) = e^{s G_d}."""
        if self._standard:
            return math.exp(s) * np.eye(self.dim)
        if self._spectral is None:
            return expm(self.generator, s)
        lam, V, Vinv = self._spectral[:3]
        return np.real((V * np.exp(s * lam)) @ Vinv)


@dataclass(frozen=True)
class HomNormResult:
    value: float
    s_x: float
    iterations: int
    projection: np.ndarray  # d(-s_x) x, a point of the weighted unit sphere


@dataclass
class HomogeneityReport:
    margin: float
    passed: bool
    samples: int
    worst_point: np.ndarray | None = None
    worst_s: float = math.nan
    tolerance: float = 1e-8


def _vec(x, n) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != n:
        raise ValueError(f"expected a vector of length {n}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector has non-finite entries")
    return x


def weighted_norm(P, x) -> float:
    x = np.asarray(x, dtype=float)
    return math.sqrt(max(float(x @ P @ x), 0.0))


def unit_sphere_samples(weight, count: int, rng=None) -> np.ndarray:
    """`count` random points with ``x^T P x = 1`` (rows of the result)."""
    rng = np.random.default_rng(rng)
    P = np.asarray(weight, dtype=float)
    X = rng.standard_normal((count, P.shape[0]))
    nrm = np.sqrt(np.einsum("ij,jk,ik->i", X, P, X))
    return X / nrm[:, None]


def dilate(dil: Dilation, s: float, x) -> np.ndarray:
    """Return d(s) x."""
    s = float(s)
    if not math.isfinite(s):
        raise ValueError("s must be finite")
    return dil.matrix(s) @ _vec(x, dil.dim)


def canonical_norm(dil: Dilation, x, s_guess: float | None = None,
                   tol: float = 1e-12, max_iter: int = 200) -> HomNormResult:
    """Canonical homogeneous norm ||x||_d induced by the weighted norm.

    Solves ``||d(-s) x|| = 1`` for s.  The log-norm ``f(s) = ln ||d(-s) x||``
    is strictly decreasing, so Newton steps are taken inside a bracket that
    tightens with every evaluation; a step that would leave the bracket is
    replaced by bisection.  Iteration stops when the update is below `tol`.

    Parameters
    ----------
    dil : Dilation
    x : (n,) array_like
    s_guess : float, optional
        Warm start for s_x; defaults to ``ln ||x||``.

    Returns
    -------
    HomNormResult
    """
    if dil.monotonicity_margin <= 0.0:
        raise DilationError("refusing to solve: dilation is not strictly monotone")
    x = _vec(x, dil.dim)
    spectral = dil._spectral
    if spectral is not None and spectral[5] is not None and not dil.is_standard:
        return _norm_grouped(dil, x, s_guess, tol, max_iter)
    P = dil.weight
    nx = weighted_norm(P, x)
    if nx < _TINY:
        return HomNormResult(0.0, -math.inf, 0, np.zeros_like(x))
    if dil.is_standard:
        return HomNormResult(nx, math.log(nx), 0, x / nx)

    if spectral is not None:
        return _norm_spectral(dil, x, nx, s_guess, tol, max_iter)
    PG = dil._PG
    s = math.log(nx) if s_guess is None or not math.isfinite(s_guess) else float(s_guess)
    lo, hi = -math.inf, math.inf
    for it in range(1, max_iter + 1):
        y = expm(dil.generator, -s) @ x
        q = float(y @ P @ y)
        f = 0.5 * math.log(q)
        if f > 0.0:
            lo = s
        elif f < 0.0:
            hi = s
        slope = -float(y @ PG @ y) / q
        if not slope < 0.0:
            raise DilationError("norm solve met a non-monotone direction")
        s_new, done = _newton_update(s, f, slope, lo, hi, tol)
        if done:
            y = expm(dil.generator, -s_new) @ x
            # the final step is below tol; rescaling removes the residual
            return HomNormResult(math.exp(s_new), s_new, it,
                                 y / math.sqrt(float(y @ P @ y)))
        s = s_new
    raise NumericsError(f"canonical_norm did not converge in {max_iter} iterations")


def _newton_update(s, f, slope, lo, hi, tol):
    """Safeguarded Newton step; returns (s_new, converged)."""
    step = -f / slope
    if abs(step) <= tol * (1.0 + abs(s)):
        return s + step, True
    s_new = s + max(min(step, 50.0), -50.0)
    if math.isfinite(lo) and math.isfinite(hi) and not lo < s_new < hi:
        s_new = 0.5 * (lo + hi)
        return s_new, abs(hi - lo) <= tol * (1.0 + abs(s))
    return s_new, False


def _symmetric_pairs(W):
    """Nonzero terms (i, j, w) of the quadratic form c^T W c with i <= j."""
    out = []
    n = W.shape[0]
    for i in range(n):
        for j in range(i, n):
            w = W[i, i] if i == j else W[i, j] + W[j, i]
            if w != 0.0:
                out.append((i, j, float(w)))
    return tuple(out)


def _norm_grouped(dil, x, s_guess, tol, max_iter):
    """Real-spectrum fast path on Python floats.

    ``q(s) = sum_k a_k exp(-beta_k s)`` has one coefficient per distinct
    rate.  ``ln q`` is evaluated in log-sum-exp form from the signs and
    logarithms of the coefficients, so states of any magnitude neither
    underflow nor overflow.
    """
    lam, V, _, _, _, (betas, pairs, Vinv) = dil._spectral
    xs = x.tolist()
    c = [sum([v * xi for v, xi in zip(row, xs)]) for row in Vinv]
    cs = max(abs(ci) for ci in c)
    if cs == 0.0:
        return HomNormResult(0.0, -math.inf, 0, np.zeros_like(x))
    ct = [ci / cs for ci in c]
    two_log_cs = 2.0 * math.log(cs)
    terms = []
    for b, prs in zip(betas, pairs):
        a = sum([w * ct[i] * ct[j] for i, j, w in prs])
        if a != 0.0:
            terms.append((math.copysign(1.0, a), math.log(abs(a)) + two_log_cs, b))

    def lqf(s):
        """(ln q(s), q'(s) / q(s))."""
        ex = [la - b * s for _, la, b in terms]
        m = max(ex)
        q = dq = 0.0
        for (sg, _, b), v in zip(terms, ex):
            e = sg * math.exp(v - m)
            q += e
            dq -= b * e
        if not q > 0.0:
            raise DilationError("norm solve met a non-positive quadratic form")
        return m + math.log(q), dq / q

    if not terms:
        return HomNormResult(0.0, -math.inf, 0, np.zeros_like(x))
    log_nx = 0.5 * lqf(0.0)[0]  # ln |x|_P
    if log_nx < _LOG_TINY:
        return HomNormResult(0.0, -math.inf, 0, np.zeros_like(x))
    s = log_nx if s_guess is None or not math.isfinite(s_guess) else float(s_guess)
    lo, hi = -math.inf, math.inf
    for it in range(1, max_iter + 1):
        lq, rate = lqf(s)
        f = 0.5 * lq
        if f > 0.0:
            lo = s
        elif f < 0.0:
            hi = s
        slope = 0.5 * rate
        if not slope < 0.0:
            raise DilationError("norm solve met a non-monotone direction")
        s_new, done = _newton_update(s, f, slope, lo, hi, tol)
        if done:
            w = np.array([ci * math.exp(-s_new * li) for ci, li in zip(c, lam.tolist())])
            # the final step is below tol; rescaling removes the residual
            return HomNormResult(math.exp(s_new), s_new, it,
                                 (V @ w) * math.exp(-0.5 * lqf(s_new)[0]))
        s = s_new
    raise NumericsError(f"canonical_norm did not converge in {max_iter} iterations")


def _norm_spectral(dil, x, nx, s_guess, tol, max_iter):
    """Newton iteration on the exponential sum ``q(s) = |d(-s) x|^2``
    (complex spectrum)."""
    lam, V, Vinv, M, rates, _ = dil._spectral
    c = Vinv @ x
    w = (c.conj()[:, None] * M * c[None, :]).ravel()

    def qf(s):
        e = w * np.exp(-s * rates)
        return float(np.sum(e).real), -float(np.sum(rates * e).real)

    s = math.log(nx) if s_guess is None or not math.isfinite(s_guess) else float(s_guess)
    lo, hi = -math.inf, math.inf
    for it in range(1, max_iter + 1):
        q, dq = qf(s)
        if not q > 0.0:
            raise DilationError("norm solve met a non-positive quadratic form")
        f = 0.5 * math.log(q)
        if f > 0.0:
            lo = s
        elif f < 0.0:
            hi = s
        slope = 0.5 * dq / q
        if not slope < 0.0:
            raise DilationError("norm solve met a non-monotone direction")
        s_new, done = _newton_update(s, f, slope, lo, hi, tol)
        if done:
            y = np.real(V @ (np.exp(-s_new * lam) * c))
            # the final step is below tol; rescaling removes the residual
            return HomNormResult(math.exp(s_new), s_new, it,
                                 y / math.sqrt(float(y @ dil.weight @ y)))
        s = s_new
    raise NumericsError(f"canonical_norm did not converge in {max_iter} iterations")


def canonical_norm_gradient(dil: Dilation, x) -> np.ndarray:
    """Gradient (as a 1-D array) of ||x||_d with respect to x, for x != 0."""
    x = _vec(x, dil.dim)
    res = canonical_norm(dil, x)
    if res.value == 0.0:
        raise ValueError("the homogeneous norm is not differentiable at the origin")
    s = res.s_x
    D = dil.matrix(-s)
    y = D @ x
    P = dil.weight
    return res.value * (y @ P @ D) / float(y @ dil._PG @ y)


def psi(dil: Dilation, x) -> np.ndarray:
    """Psi(x) = ||x||_d d(-ln ||x||_d) x, with Psi(0) = 0."""
    res = canonical_norm(dil, x)
    return res.value * res.projection


def psi_inverse(dil: Dilation, z) -> np.ndarray:
    """Psi^{-1}(z) = ||z||^{-1} d(ln ||z||) z, with Psi^{-1}(0) = 0."""
    z = _vec(z, dil.dim)
    nz = weighted_norm(dil.weight, z)
    if nz < _TINY:
        return np.zeros_like(z)
    return dil.matrix(math.log(nz)) @ z / nz


def hom_add(dil: Dilation, x, y) -> np.ndarray:
    """Homogeneous sum Psi^{-1}(Psi(x) + Psi(y))."""
    return psi_inverse(dil, psi(dil, x) + psi(dil, y))


def check_field_homogeneity(field: Callable[[np.ndarray], np.ndarray], dil: Dilation,
                            degree: float, samples: int = 64, s_values=None,
                            seed: int = 0, tol: float = 1e-8) -> HomogeneityReport:
    """Sampled test of g(d(s)x) = e^{degree*s} d(s) g(x).

    The margin is the maximum over random unit-sphere points and the `s`
    grid (default: 9 points in [-2, 2]) of
    ``|g(d(s)x) - e^{mu s} d(s) g(x)| / (1 + |g(x)|)``.
    """
    if s_values is None:
        s_values = np.linspace(-2.0, 2.0, 9)
    rng = np.random.default_rng(seed)
    worst, worst_x, worst_s = 0.0, None, math.nan
    for x in unit_sphere_samples(dil.weight, samples, rng):
        gx = np.asarray(field(x), dtype=float)
        scale = 1.0 + np.linalg.norm(gx)
        for s in s_values:
            D = dil.matrix(s)
            lhs = np.asarray(field(D @ x), dtype=float)
            err = np.linalg.norm(lhs - math.exp(degree * s) * (D @ gx)) / scale
            if err > worst or worst_x is None:
                worst, worst_x, worst_s = err, x, float(s)
    return HomogeneityReport(float(worst), bool(worst <= tol), samples,
                             worst_x, worst_s, tol)
