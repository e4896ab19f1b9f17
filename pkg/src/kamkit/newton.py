"""Kolmogorov iteration in finite dimension and quadratically convergent drivers."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from . import series as sr

EPS = np.finfo(float).eps
CSV_VERSION = "# kamkit-csv v1"


class ResonanceError(ArithmeticError):
    def __init__(self, msg, where=None, report=None):
        super().__init__(msg)
        self.where = where
        self.report = report


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


# ---------------------------------------------------------------------------
# scale schedule

@dataclass(frozen=True)
class ScaleSchedule:
    """``s_{n+1} = s_n - step * 2^{-n/l}`` starting at ``s0``.

    ``step`` defaults to the value that places the limit at ``floor_fraction * s0``
    (a rescaled copy of the unit-step schedule).
    """

    s0: float = sr.S_MAX
    l: float = 4.0
    step: float | None = None
    floor_fraction: float = 0.5
    S: float = sr.S_MAX

    def __post_init__(self):
        if not (0 < self.s0 <= self.S <= sr.S_MAX):
            raise sr.DomainError(f"start scale {self.s0} outside (0, {self.S}]")
        if self.l <= 0:
            raise ValueError("l must be positive")
        if self.step is None:
            if not 0 < self.floor_fraction < 1:
                raise ValueError("floor_fraction must lie in (0, 1)")
            object.__setattr__(self, "step", self.s0 * (1 - self.floor_fraction) * (1 - 2 ** (-1 / self.l)))
        if self.floor <= 0:
            raise sr.DomainError(f"schedule floor {self.floor} is not positive")

    @property
    def ratio(self) -> float:
        return 2 ** (-1 / self.l)

    @property
    def floor(self) -> float:
        return self.s0 - self.step / (1 - self.ratio)

    def __getitem__(self, n: int) -> float:
        return self.s0 - self.step * (1 - self.ratio ** n) / (1 - self.ratio)

    def terms(self, count: int) -> list:
        return [self[n] for n in range(count)]

    def pair(self, n: int) -> sr.ScalePair:
        """Scales ``(s_{n+1}, s_n)`` used by step n."""
        return sr.ScalePair(self[n + 1], self[n], self.S)


# ---------------------------------------------------------------------------
# reports

@dataclass
class IterationRecord:
    n: int
    s: float
    e: float
    alpha: float = 0.0


@dataclass
class ConvergenceReport:
    iterations: list
    q: float = 2.0
    rho: float = math.nan
    prefactor: float = 1.0
    order: float = math.nan
    K: float = math.nan
    verdict: bool = False
    floor: float = 0.0
    sufficient: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def errors(self) -> list:
        return [r.e for r in self.iterations]

    @property
    def steps(self) -> int:
        return max(0, len(self.iterations) - 1)

    def envelope(self, n: int) -> float:
        if not math.isfinite(self.rho):
            return math.nan
        return self.prefactor * self.rho ** (self.q ** n)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"{CSV_VERSION} convergence-report q={self.q!r} rho={self.rho!r} order={self.order!r}\n")
        buf.write("n,s_n,e_n,alpha_n,envelope\n")
        for r in self.iterations:
            buf.write(f"{r.n},{r.s!r},{r.e!r},{r.alpha!r},{self.envelope(r.n)!r}\n")
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {"iterations": [[r.n, r.s, r.e, r.alpha] for r in self.iterations], "q": self.q,
                "rho": self.rho, "prefactor": self.prefactor, "order": self.order, "K": self.K,
                "verdict": self.verdict, "floor": self.floor, "sufficient": self.sufficient,
                "diagnostics": list(self.diagnostics),
                "extra": {k: v for k, v in self.extra.items() if isinstance(v, (int, float, str, bool, list))}}


def fit_order(errors, floor: float = 0.0, saturated=None) -> float:
    """Slope of ``log e_{n+1}`` against ``log e_n`` over pairs above the saturation floor."""
    sat = list(saturated) if saturated is not None else [False] * len(errors)
    xs, ys = [], []
    for i, (a, b) in enumerate(zip(errors, errors[1:])):
        if a > floor and b > floor and a < 1 and not sat[i] and not sat[i + 1]:
            xs.append(math.log(a))
            ys.append(math.log(b))
    if len(xs) < 2:
        if len(xs) == 1:
            # single pair: the order of the pair itself relative to the origin of the model e_{n+1} = e_n^p
            return ys[0] / xs[0]
        return math.nan
    return float(np.polyfit(xs, ys, 1)[0])


def quadratic_constant(errors, floor: float = 0.0, saturated=None) -> float:
    sat = list(saturated) if saturated is not None else [False] * len(errors)
    ks = [b / (a * a) for i, (a, b) in enumerate(zip(errors, errors[1:]))
          if a > floor and b > floor and not sat[i] and not sat[i + 1]]
    return max(ks) if ks else math.nan


def build_report(records, q=2.0, rho=None, prefactor=1.0, floor=0.0, k=1, l=4.0, diagnostics=None,
                 extra=None, saturated=None) -> ConvergenceReport:
    """Fit order, quadratic constant and envelope.

    Records with ``e_n <= floor`` or flagged in ``saturated`` (rounding level)
    are left out of the fits.
    """
    errs = [r.e for r in records]
    sat = list(saturated) if saturated is not None else [False] * len(records)
    live = [(r.n, r.e) for r, z in zip(records, sat) if r.e > floor and not z]
    if rho is None:
        cands = [(e / prefactor) ** (1.0 / q ** n) for n, e in live]
        rho = max(cands) if cands else 0.0
    verdict = rho < 1 and all(e <= prefactor * rho ** (q ** n) * (1 + 1e-12) for n, e in live)
    suff = [bool(2 ** (k * (n + 1) / l) * rho ** ((2 - q) * q ** n) <= 1) if rho > 0 else True
            for n in range(len(records))]
    return ConvergenceReport(list(records), q=q, rho=float(rho), prefactor=prefactor,
                             order=fit_order(errs, floor, sat), K=quadratic_constant(errs, floor, sat),
                             verdict=bool(verdict), floor=floor, sufficient=suff,
                             diagnostics=list(diagnostics or []), extra=dict(extra or {}))


# ---------------------------------------------------------------------------
# matrix Kolmogorov algorithm

def offdiag(A):
    return A - np.diag(np.diag(A))


def homological_matrix(X, d, gap_floor=1e-12):
    """Solve ``[xi, D] = X`` entrywise: ``xi_ij = X_ij / (d_j - d_i)``."""
    gaps = d[None, :] - d[:, None]
    np.fill_diagonal(gaps, 1.0)
    small = np.abs(gaps) < gap_floor
    if np.any(small):
        i, j = np.argwhere(small)[0]
        raise ResonanceError(f"eigenvalue gap collapse between {i} and {j}", where=(int(i), int(j)))
    xi = X / gaps
    np.fill_diagonal(xi, 0.0)
    return xi


@dataclass
class DiagonalizationResult:
    g: np.ndarray
    D: np.ndarray
    report: ConvergenceReport


def diagonalize_kolmogorov(A, tol: float = 1e-12, maxiter: int = 30, gap_floor: float = 1e-12,
                           floor: float | None = None) -> DiagonalizationResult:
    """Diagonalize ``A = D0 + X0`` by successive conjugations ``A <- e^{-xi} A e^{xi}``.

    ``xi`` solves the homological equation against the current diagonal. The
    returned ``g = e^{xi_0} e^{xi_1} ...`` satisfies ``g^{-1} A g = D`` up to ``tol``
    (it is the inverse of the product of the ``e^{-xi_i}``).
    """
    A = np.array(A, dtype=complex if np.iscomplexobj(A) else float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    n = A.shape[0]
    g = np.eye(n, dtype=A.dtype)
    cur = A.copy()
    records = []
    gsteps = []
    xi_norms = []
    if floor is None:
        floor = 64 * EPS * max(1.0, np.linalg.norm(A, 2))
    for it in range(maxiter + 1):
        d = np.diag(cur).copy()
        X = offdiag(cur)
        e = float(np.linalg.norm(X, 2))
        records.append(IterationRecord(it, math.nan, e, 0.0))
        if e <= tol:
            break
        if it == maxiter:
            rep = build_report(records, floor=floor)
            raise NonConvergenceError(f"off-diagonal norm {e:.3e} after {maxiter} iterations", rep)
        try:
            xi = homological_matrix(X, d, gap_floor)
        except ResonanceError as err:
            err.report = build_report(records, floor=floor)
            raise
        E = expm(xi)
        Einv = expm(-xi)
        cur = Einv @ cur @ E
        g_new = g @ E
        gsteps.append(float(np.linalg.norm(g_new - g, 2)))
        xi_norms.append(float(np.linalg.norm(xi, 2)))
        g = g_new
        records[-1].alpha = float(np.linalg.norm(np.diag(cur) - d))
    errs = [r.e for r in records]
    K = quadratic_constant(errs, floor)
    prefactor = 1.0 / K if K and math.isfinite(K) and K > 0 else 1.0
    rho = errs[0] * K if math.isfinite(K) else None
    rep = build_report(records, q=2.0, rho=rho, prefactor=prefactor, floor=floor,
                       extra={"cond_g": float(np.linalg.cond(g)), "g_steps": gsteps, "xi_norms": xi_norms})
    return DiagonalizationResult(g, np.diag(np.diag(cur)), rep)


# ---------------------------------------------------------------------------
# generic drivers

def kolmogorov_remainder_source(degree: int = 30) -> np.ndarray:
    """Borel source of ``e^{-z}(1+z) - 1``: coefficients ``(-1)^m (1-m)`` for ``m >= 2``."""
    c = np.zeros(degree + 1)
    for m in range(2, degree + 1):
        c[m] = (-1) ** m * (1 - m)
    return c


def _default_norm(u, s):
    if isinstance(u, sr.ScaledSeries):
        return sr.norm_majorant(u, s)
    arr = np.asarray(u)
    if arr.ndim == 2:
        return float(np.linalg.norm(arr, 2))
    return float(np.linalg.norm(arr))


def _default_evaluate(b, u):
    """``sum_m b_m u^m`` in the algebra containing u."""
    if isinstance(u, sr.ScaledSeries):
        out = sr.zero_like(u)
        power = sr.constant(u.dim, u.mode, 1.0, u.trunc)
        for m, c in enumerate(b):
            if m:
                power = power * u
            if c:
                out = out + power * c
        return out
    arr = np.asarray(u)
    mul = (lambda a, c: a @ c) if arr.ndim == 2 else (lambda a, c: a * c)
    power = np.eye(arr.shape[0]) if arr.ndim == 2 else np.ones_like(arr, dtype=float)
    out = power * b[0]
    for m in range(1, len(b)):
        power = mul(power, arr)
        out = out + b[m] * power
    return out


def iterate_homogeneous(j: Callable, f, u0, schedule: ScaleSchedule, q: float = 1.9, rho: float | None = None,
                        k: int = 1, norm: Callable | None = None, evaluate: Callable | None = None,
                        tol: float = 1e-12, maxiter: int = 30, floor: float = 0.0) -> ConvergenceReport:
    """Run ``u_{n+1} = j(Bf(u_n))`` and record ``|u_n|_{s_n}``.

    ``f`` is the Borel source (a coefficient vector vanishing to order 2).
    ``evaluate(b, u)`` computes ``sum b_m u^m`` for the Borel-transformed
    coefficients ``b``; the default works for scalars, square matrices and
    scaled series. The verdict checks ``|u_n| <= rho^{q^n}`` and the report lists
    the sufficient condition ``2^{k(n+1)/l} rho^{(2-q) q^n} <= 1`` per step.
    """
    f = np.asarray(f, dtype=float)
    if len(f) > 0 and f[0] != 0 or len(f) > 1 and f[1] != 0:
        raise ValueError("Borel source must vanish to order 2")
    if not 1 < q < 2:
        raise ValueError("q must lie in (1, 2)")
    norm = norm or _default_norm
    evaluate = evaluate or _default_evaluate
    b = sr.borel_transform(f)
    diags = []
    u = u0
    records = []
    for n in range(maxiter + 1):
        s = schedule[n]
        e = float(norm(u, s))
        records.append(IterationRecord(n, s, e))
        if n == 0 and rho is not None and e * e > rho:
            diags.append(f"initial norm {e:.3e} outside the basin |u0|^2 <= rho = {rho}")
        if e <= tol or n == maxiter:
            break
        u = j(evaluate(b, u))
    return build_report(records, q=q, rho=rho, floor=floor, k=k, l=schedule.l, diagnostics=diags)


def kolmogorov_matrix_instance(A, degree: int = 30):
    """Closures realizing the matrix algorithm as ``u_{n+1} = j(Bf(u_n))``.

    ``u_n`` is the homological solution ``xi_n``; ``Bf(u)`` is
    ``(e^{-ad xi}(1 + ad xi) - 1)(D_n)`` and updates the diagonal part in place;
    ``j`` solves the homological equation for the new off-diagonal part.
    The reported norm is ``|[xi_n, D_n]| = |X_n|``.
    """
    A = np.array(A, dtype=float)
    state = {"D": np.diag(np.diag(A))}

    def j(X):
        return homological_matrix(X, np.diag(state["D"]))

    def evaluate(b, xi):
        D = state["D"]
        out = np.zeros_like(D)
        term = D
        for m in range(1, len(b)):
            term = xi @ term - term @ xi
            if b[m]:
                out = out + b[m] * term
        newD = D + np.diag(np.diag(out))
        state["D"] = newD
        return offdiag(out)

    def norm(xi, s):
        D = state["D"]
        return float(np.linalg.norm(xi @ D - D @ xi, 2))

    u0 = homological_matrix(offdiag(A), np.diag(A))
    return dict(j=j, f=kolmogorov_remainder_source(degree), u0=u0, evaluate=evaluate, norm=norm, state=state)


def _as_two_variable(f):
    if callable(f):
        return f
    c = np.asarray(f, dtype=float)
    if c.ndim != 2:
        raise ValueError("two-variable series needs a 2-D coefficient array")
    if np.any(c[:, 0] != 0) or c.shape[1] > 1 and np.any(c[:, 1] != 0):
        raise ValueError("need f(z,0) = d_w f(z,0) = 0")

    def ev(a, x):
        out = 0.0
        for i in range(c.shape[0]):
            for jj in range(c.shape[1]):
                if c[i, jj]:
                    out = out + c[i, jj] * a ** i * x ** jj
        return out

    return ev


def iterate_parametric(j: Callable | None, f1, f2, a0, x0, schedule: ScaleSchedule, rho: float, R: float,
                       eps: float = 0.0, norm_a: Callable | None = None, norm_x: Callable | None = None,
                       tol: float = 1e-12, maxiter: int = 30, floor: float = 0.0) -> ConvergenceReport:
    """Iterate ``(a, x) -> j(a + f1(a, x), f2(a, x))``.

    Records ``e_n = |x_n|`` and the transversal step ``|a_{n+1} - a_n|`` and checks
    the budget ``|a_n| <= R/2 + R sum_{i<=n} rho^{2^i}``. The envelope is
    ``rho^{2^{n - eps}}``, i.e. ``q = 2`` with effective ``rho^{2^{-eps}}``.
    """
    f1 = _as_two_variable(f1)
    f2 = _as_two_variable(f2)
    j = j or (lambda a, x: (a, x))
    norm_a = norm_a or _default_norm
    norm_x = norm_x or _default_norm
    diags = []
    a, x = a0, x0
    if norm_x(x, schedule[0]) > rho:
        diags.append(f"|x0| = {norm_x(x, schedule[0]):.3e} exceeds rho = {rho}")
    if norm_a(a, schedule[0]) > R / 2:
        diags.append(f"|a0| = {norm_a(a, schedule[0]):.3e} exceeds R/2 = {R / 2}")
    records = []
    drift = 0.0
    budget_ok = True
    for n in range(maxiter + 1):
        s = schedule[n]
        e = float(norm_x(x, s))
        rec = IterationRecord(n, s, e)
        records.append(rec)
        budget = R / 2 + R * sum(rho ** (2 ** i) for i in range(n + 1))
        if norm_a(a, s) > budget:
            budget_ok = False
            diags.append(f"transversal budget exceeded at n={n}: |a_n| = {norm_a(a, s):.3e} > {budget:.3e}")
        if e <= tol or n == maxiter:
            break
        a_new, x = j(a + f1(a, x), f2(a, x))
        rec.alpha = float(norm_a(a_new - a, s))
        drift += rec.alpha
        a = a_new
    rep = build_report(records, q=2.0, rho=rho ** (2 ** -eps), floor=floor, l=schedule.l, diagnostics=diags,
                       extra={"drift": drift, "budget_ok": budget_ok, "a_final": a if np.isscalar(a) else None})
    return rep
