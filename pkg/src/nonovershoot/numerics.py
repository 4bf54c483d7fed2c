"""Dense linear-algebra and optimization substrate.

Everything here works on small dense ``numpy`` arrays (n <= 10 or so) and is a
pure function of its inputs.

Routines
--------
expm              : matrix exponential e^{sM} by scaling and squaring
eigen_real_parts  : real parts of the spectrum of a square matrix
solve_lyapunov    : A^T P + P A = -Q by vectorization
lp_solve          : two-phase dense simplex with Bland's anti-cycling rule
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NumericsError

__all__ = [
    "as_matrix", "sym", "expm", "eigen_real_parts", "is_hurwitz",
    "is_anti_hurwitz", "solve_lyapunov", "LpProblem", "LpResult", "lp_solve",
]

# Taylor order and the scaled-norm threshold of the squaring phase.  With
# ||A|| <= 0.5 the truncation term is 0.5**13 / 13! ~ 2e-14 relative.
_EXPM_ORDER = 12
_EXPM_THETA = 0.5


def as_matrix(M, name="matrix", square=False) -> np.ndarray:
    """Return `M` as a finite 2-D float array, raising ValueError otherwise."""
    arr = np.array(M, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if not square else arr
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if square and arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def sym(M: np.ndarray) -> np.ndarray:
    """Return M + M^T (the symmetric part used in the LMI conditions)."""
    return M + M.T


def expm(M, s: float = 1.0) -> np.ndarray:
    """Matrix exponential e^{sM}.

    Scaling and squaring around an order-12 truncated Taylor series evaluated
    in Horner form.

    Parameters
    ----------
    M : (n, n) array_like
        Square real matrix.
    s : float, optional
        Time/scale parameter, default 1.

    Returns
    -------
    E : (n, n) ndarray
        e^{sM}.
    """
    M = as_matrix(M, "M", square=True)
    s = float(s)
    if not math.isfinite(s):
        raise ValueError("s must be finite")
    n = M.shape[0]
    I = np.eye(n)
    if s == 0.0:
        return I
    A = s * M
    norm = np.linalg.norm(A, 1)
    squarings = 0
    if norm > _EXPM_THETA:
        squarings = int(math.ceil(math.log2(norm / _EXPM_THETA)))
        A = A / (2.0 ** squarings)
    E = I.copy()
    for k in range(_EXPM_ORDER, 0, -1):
        E = I + (A @ E) / k
    for _ in range(squarings):
        E = E @ E
    return E


def eigen_real_parts(M) -> np.ndarray:
    """Real parts of all eigenvalues of a square matrix (unordered).

    Backed by LAPACK's Hessenberg-QR (``numpy.linalg.eigvals``); a failure to
    converge is re-raised as :class:`NumericsError`.
    """
    M = as_matrix(M, "M", square=True)
    try:
        lam = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"eigenvalue iteration did not converge: {exc}") from exc
    return np.real(lam)


def is_hurwitz(M, margin: float = 0.0) -> bool:
    return bool(np.max(eigen_real_parts(M)) < -margin)


def is_anti_hurwitz(M, margin: float = 0.0) -> bool:
    return bool(np.min(eigen_real_parts(M)) > margin)


def solve_lyapunov(A, Q) -> np.ndarray:
    """Solve A^T P + P A = -Q for symmetric P.

    The equation is vectorized, (I kron A^T + A^T kron I) vec(P) = -vec(Q), and
    solved densely.  Intended for n <= 10.

    Raises
    ------
    NumericsError
        If A is not Hurwitz or the solution is not positive definite.
    """
    A = as_matrix(A, "A", square=True)
    Q = as_matrix(Q, "Q", square=True)
    n = A.shape[0]
    if Q.shape != A.shape:
        raise ValueError("A and Q must have the same shape")
    if not is_hurwitz(A):
        raise NumericsError("solve_lyapunov: A is not Hurwitz")
    Q = 0.5 * (Q + Q.T)
    I = np.eye(n)
    # row-major vec: vec(X B) = (I kron B^T) vec(X), vec(B X) = (B kron I) vec(X)
    L = np.kron(A.T, I) + np.kron(I, A.T)
    try:
        p = np.linalg.solve(L, -Q.ravel())
    except np.linalg.LinAlgError as exc:
        raise NumericsError("solve_lyapunov: singular Lyapunov operator") from exc
    P = p.reshape(n, n)
    P = 0.5 * (P + P.T)
    if np.min(np.linalg.eigvalsh(P)) <= 0.0:
        raise NumericsError("solve_lyapunov: solution is not positive definite")
    return P


# ---------------------------------------------------------------------------
# Linear programming
# ---------------------------------------------------------------------------

@dataclass
class LpProblem:
    """min c^T v  subject to  A_ub v <= b_ub,  lo <= v <= hi.

    `bounds` holds one ``(lo, hi)`` pair per variable; either end may be
    ``None`` or infinite.  Omitted bounds mean ``v >= 0``.
    """

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    bounds: list | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        nv = self.c.size
        if self.A_ub is None:
            self.A_ub = np.zeros((0, nv))
            self.b_ub = np.zeros(0)
        self.A_ub = np.asarray(self.A_ub, dtype=float).reshape(-1, nv)
        self.b_ub = np.asarray(self.b_ub, dtype=float).ravel()
        if self.A_ub.shape[0] != self.b_ub.size:
            raise ValueError("A_ub and b_ub have inconsistent row counts")
        if self.bounds is None:
            self.bounds = [(0.0, math.inf)] * nv
        if len(self.bounds) != nv:
            raise ValueError("one (lo, hi) pair per variable is required")
        clean = []
        for lo, hi in self.bounds:
            lo = -math.inf if lo is None else float(lo)
            hi = math.inf if hi is None else float(hi)
            if lo > hi:
                raise ValueError(f"empty variable bound [{lo}, {hi}]")
            clean.append((lo, hi))
        self.bounds = clean
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A_ub))
                and np.all(np.isfinite(self.b_ub))):
            raise ValueError("LP data must be finite")


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float = math.nan
    iterations: int = 0
    message: str = ""

    @property
    def success(self) -> bool:
        return self.status == "optimal"


@dataclass
class _Tableau:
    T: np.ndarray          # constraint rows, last column is the rhs
    basis: list
    iterations: int = 0


def _pivot(T, row, col):
    T[row] /= T[row, col]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * T[row]


def _run_simplex(tab: _Tableau, cost: np.ndarray, allowed: np.ndarray,
                 tol: float, max_iter: int) -> str:
    """Minimize cost over the tableau using Bland's rule.  Returns a status."""
    T = tab.T
    ncols = T.shape[1] - 1
    while True:
        if tab.iterations >= max_iter:
            raise NumericsError(f"simplex exceeded {max_iter} pivots")
        reduced = cost - cost[tab.basis] @ T[:, :ncols]
        entering = -1
        for j in range(ncols):
            if allowed[j] and reduced[j] < -tol:
                entering = j
                break
        if entering < 0:
            return "optimal"
        col = T[:, entering]
        leave = -1
        best = math.inf
        for i in range(T.shape[0]):
            if col[i] > tol:
                ratio = T[i, -1] / col[i]
                if ratio < best - tol or (abs(ratio - best) <= tol
                                          and tab.basis[i] < tab.basis[leave]):
                    best = ratio
                    leave = i
        if leave < 0:
            return "unbounded"
        _pivot(T, leave, entering)
        tab.basis[leave] = entering
        tab.iterations += 1


def lp_solve(problem: LpProblem, tol: float = 1e-9, max_iter: int = 5000) -> LpResult:
    """Solve a small dense LP with the two-phase simplex method.

    Variables are shifted/split so that every working variable is
    nonnegative, slacks turn the inequalities into equalities, and phase one
    drives artificial variables out of the basis.  Bland's rule (lowest index
    enters, lowest basic index leaves on ratio ties) prevents cycling.

    Infeasible and unbounded problems are reported through
    :attr:`LpResult.status`, never by raising.
    """
    p = problem
    nv = p.c.size
    # v = offset + Tmap @ w, w >= 0
    columns = []
    offset = np.zeros(nv)
    extra_rows = []  # (column index in w, upper limit)
    for k, (lo, hi) in enumerate(p.bounds):
        if math.isfinite(lo):
            offset[k] = lo
            columns.append((k, 1.0))
            if math.isfinite(hi):
                extra_rows.append((len(columns) - 1, hi - lo))
        elif math.isfinite(hi):
            offset[k] = hi
            columns.append((k, -1.0))
        else:
            columns.append((k, 1.0))
            columns.append((k, -1.0))
    nw = len(columns)
    Tmap = np.zeros((nv, nw))
    for j, (k, sgn) in enumerate(columns):
        Tmap[k, j] = sgn

    A = p.A_ub @ Tmap
    b = p.b_ub - p.A_ub @ offset
    if extra_rows:
        Ab = np.zeros((len(extra_rows), nw))
        for r, (j, lim) in enumerate(extra_rows):
            Ab[r, j] = 1.0
        A = np.vstack([A, Ab])
        b = np.concatenate([b, [lim for _, lim in extra_rows]])
    cost_w = Tmap.T @ p.c
    m = A.shape[0]

    if m == 0:
        if np.any(cost_w < -tol):
            return LpResult("unbounded", message="no constraints and a descent direction")
        x = offset.copy()
        return LpResult("optimal", x, float(p.c @ x), 0)

    neg = b < 0
    n_art = int(np.sum(neg))
    ncols = nw + m + n_art
    T = np.zeros((m, ncols + 1))
    T[:, :nw] = A
    T[:, nw:nw + m] = np.eye(m)
    T[:, -1] = b
    T[neg] *= -1.0
    basis = []
    a = 0
    for i in range(m):
        if neg[i]:
            T[i, nw + m + a] = 1.0
            basis.append(nw + m + a)
            a += 1
        else:
            basis.append(nw + i)
    tab = _Tableau(T, basis)
    is_art = np.zeros(ncols, dtype=bool)
    is_art[nw + m:] = True

    if n_art:
        c1 = np.zeros(ncols)
        c1[is_art] = 1.0
        _run_simplex(tab, c1, np.ones(ncols, dtype=bool), tol, max_iter)
        infeas = float(c1[tab.basis] @ tab.T[:, -1])
        if infeas > tol * max(1.0, np.max(np.abs(b))):
            return LpResult("infeasible", iterations=tab.iterations,
                            message=f"phase-one residual {infeas:.3e}")
        # drive remaining (zero-level) artificials out of the basis
        keep = []
        for i in range(m):
            if is_art[tab.basis[i]]:
                row = tab.T[i, :nw + m]
                cand = np.flatnonzero(np.abs(row) > tol)
                if cand.size:
                    _pivot(tab.T, i, int(cand[0]))
                    tab.basis[i] = int(cand[0])
                    keep.append(i)
                # else: redundant row, dropped below
            else:
                keep.append(i)
        tab.T = tab.T[keep]
        tab.basis = [tab.basis[i] for i in keep]

    c2 = np.zeros(ncols)
    c2[:nw] = cost_w
    status = _run_simplex(tab, c2, ~is_art, tol, max_iter)
    if status == "unbounded":
        return LpResult("unbounded", iterations=tab.iterations)
    w = np.zeros(ncols)
    w[tab.basis] = tab.T[:, -1]
    x = offset + Tmap @ w[:nw]
    return LpResult("optimal", x, float(p.c @ x), tab.iterations)
