"""Invariant-torus and singular normal-form solvers."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import series as sr
from .arithmetic import best_constant
from .newton import (IterationRecord, NonConvergenceError, ResonanceError, ScaleSchedule, build_report)
from .operators import lie_exp
from .series import Mode, ScaledSeries, ScalePair, Trunc

HESS_COND_CAP = 1e12


class NonDegeneracyError(ArithmeticError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


# ---------------------------------------------------------------------------
# hamiltonians

@dataclass
class TorusHamiltonian:
    """``H = (alpha, p) + p^T beta p / 2 + R(t, q, p)`` with ``R`` divisible by t."""

    alpha: np.ndarray
    beta: np.ndarray
    remainder: ScaledSeries

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        n = len(self.alpha)
        if self.beta.shape != (n, n):
            raise ValueError("beta must be n x n")
        if not np.allclose(self.beta, self.beta.T, rtol=0, atol=1e-14 * max(1.0, np.abs(self.beta).max())):
            raise ValueError("beta must be symmetric")
        R = self.remainder
        if R.dim != n or R.mode is not Mode.TORUS:
            raise ValueError("remainder must be a torus series of matching dimension")
        if np.any(R.keys[:, 2 * n] == 0):
            raise ValueError("remainder must vanish at t = 0")

    @property
    def dim(self) -> int:
        return len(self.alpha)

    @property
    def trunc(self) -> Trunc:
        return self.remainder.trunc

    @property
    def det_beta(self) -> float:
        return float(np.linalg.det(self.beta))

    def to_series(self) -> ScaledSeries:
        n, tr = self.dim, self.trunc
        coeffs = {}
        for i in range(n):
            J = [0] * n
            J[i] = 1
            coeffs[(0,) * n + tuple(J) + (0,)] = self.alpha[i]
            for j in range(i, n):
                c = self.beta[i, j] if i != j else self.beta[i, i] / 2
                if c:
                    J = [0] * n
                    J[i] += 1
                    J[j] += 1
                    coeffs[(0,) * n + tuple(J) + (0,)] = c
        base = ScaledSeries(n, Mode.TORUS, coeffs, tr, real=True)
        return base + self.remainder

    def as_dict(self) -> dict:
        return {"kind": "torus", "dim": self.dim, "alpha": self.alpha.tolist(), "beta": self.beta.tolist(),
                "trunc": list(self.trunc), "remainder": sr.to_records(self.remainder)}

    @classmethod
    def from_dict(cls, d: dict) -> "TorusHamiltonian":
        n = int(d["dim"])
        R = sr.from_records(d.get("remainder", []), n, Mode.TORUS, tuple(d.get("trunc", (12, 4, 4))), real=True)
        return cls(np.array(d["alpha"], float), np.array(d.get("beta", np.zeros((n, n))), float), R)


@dataclass
class SingularHamiltonian:
    """``H = sum omega_i p_i q_i + R`` with ``R`` of order at least 3 at the origin."""

    omega: np.ndarray
    remainder: ScaledSeries

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        R = self.remainder
        n = len(self.omega)
        if R.dim != n or R.mode is not Mode.SINGULAR:
            raise ValueError("remainder must be a singular series of matching dimension")
        if np.any(R.keys[:, :2 * n].sum(axis=1) < 3):
            raise ValueError("remainder must have total degree >= 3")

    @property
    def dim(self) -> int:
        return len(self.omega)

    @property
    def trunc(self) -> Trunc:
        return self.remainder.trunc

    def quadratic_part(self) -> ScaledSeries:
        n = self.dim
        coeffs = {}
        for i in range(n):
            e = [0] * n
            e[i] = 1
            coeffs[tuple(e) + tuple(e) + (0,)] = self.omega[i]
        return ScaledSeries(n, Mode.SINGULAR, coeffs, self.trunc, real=True)

    def to_series(self) -> ScaledSeries:
        return self.quadratic_part() + self.remainder

    def as_dict(self) -> dict:
        return {"kind": "singular", "dim": self.dim, "omega": self.omega.tolist(), "trunc": list(self.trunc),
                "remainder": sr.to_records(self.remainder)}

    @classmethod
    def from_dict(cls, d: dict) -> "SingularHamiltonian":
        n = int(d["dim"])
        R = sr.from_records(d.get("remainder", []), n, Mode.SINGULAR, tuple(d.get("trunc", (8, 8, 0))), real=True)
        return cls(np.array(d["omega"], float), R)


def hamiltonian_from_dict(d: dict):
    kind = d.get("kind", "torus")
    if kind == "torus":
        return TorusHamiltonian.from_dict(d)
    if kind == "singular":
        return SingularHamiltonian.from_dict(d)
    raise ValueError(f"unknown hamiltonian kind {kind!r}")


# ---------------------------------------------------------------------------
# torus decomposition

@dataclass
class ErrorParts:
    pure_t: ScaledSeries
    mean_linear: np.ndarray  # (n, maxTdeg + 1) t-coefficients of the p_i
    osc_const: ScaledSeries
    osc_linear: ScaledSeries
    higher: ScaledSeries

    def mean_linear_series(self, like: ScaledSeries) -> ScaledSeries:
        return linear_in_p(self.mean_linear, like)

    def reconstruct(self) -> ScaledSeries:
        like = self.pure_t
        return self.pure_t + self.mean_linear_series(like) + self.osc_const + self.osc_linear + self.higher


def linear_in_p(coeffs, like: ScaledSeries) -> ScaledSeries:
    """``sum_i a_i(t) p_i`` from an (n, K+1) coefficient array."""
    n = like.dim
    coeffs = np.asarray(coeffs)
    keys, vals = [], []
    for i in range(n):
        for k, c in enumerate(coeffs[i]):
            if c != 0:
                row = [0] * (2 * n + 1)
                row[n + i] = 1
                row[2 * n] = k
                keys.append(row)
                vals.append(c)
    real = like.real and np.all(np.imag(coeffs) == 0)
    return ScaledSeries._from_terms(n, like.mode, like.trunc, real, np.array(keys, np.int64).reshape(-1, 2 * n + 1),
                                    np.array(vals, complex))


def _classes(x: ScaledSeries):
    n = x.dim
    K = x.keys
    zeroI = np.all(K[:, :n] == 0, axis=1)
    deg = K[:, n:2 * n].sum(axis=1)
    return zeroI, deg


def decompose_error(x: ScaledSeries) -> ErrorParts:
    """Partition by Fourier mean and momentum degree."""
    if x.mode is not Mode.TORUS:
        raise sr.UnsupportedShapeError("decompose_error needs a torus series")
    n = x.dim
    zeroI, deg = _classes(x)
    ml = np.zeros((n, x.trunc.max_tdeg + 1), dtype=complex)
    sel = zeroI & (deg == 1)
    for row, c in zip(x.keys[sel], x.values[sel]):
        ml[int(np.argmax(row[n:2 * n])), row[2 * n]] += c
    if np.all(ml.imag == 0):
        ml = ml.real.copy()
    return ErrorParts(pure_t=x.select(zeroI & (deg == 0)), mean_linear=ml,
                      osc_const=x.select(~zeroI & (deg == 0)), osc_linear=x.select(~zeroI & (deg == 1)),
                      higher=x.select(deg >= 2))


def error_part(x: ScaledSeries, alpha) -> ScaledSeries:
    """Component of ``x`` outside the normal form ``(alpha, p) + (pure t) + (p-quadratic)``."""
    parts = decompose_error(x)
    ml = parts.mean_linear.astype(complex)
    ml[:, 0] -= np.asarray(alpha)
    return parts.osc_const + parts.osc_linear + linear_in_p(ml, x)


def mean_hessian(x: ScaledSeries) -> np.ndarray:
    """q-averaged ``d^2 x / dp_i dp_j`` at p = 0 as an (n, n, K+1) array of t-coefficients."""
    n = x.dim
    zeroI, deg = _classes(x)
    H = np.zeros((n, n, x.trunc.max_tdeg + 1), dtype=complex)
    sel = zeroI & (deg == 2)
    for row, c in zip(x.keys[sel], x.values[sel]):
        J = row[n:2 * n]
        k = row[2 * n]
        idx = np.flatnonzero(J)
        if len(idx) == 1:
            i = idx[0]
            H[i, i, k] += 2 * c
        else:
            i, j = idx
            H[i, j, k] += c
            H[j, i, k] += c
    if np.all(H.imag == 0):
        H = H.real.copy()
    return H


# ---------------------------------------------------------------------------
# homological solvers

def _floors(divisor_floor, I):
    if callable(divisor_floor):
        return np.asarray(divisor_floor(I), dtype=float)
    return np.full(len(I), float(divisor_floor or 0.0))


def diophantine_floor(C: float, nu: float, safety: float = 0.5):
    """Per-index divisor floor ``safety * C / |I|^{n+nu}``."""

    def floor(I):
        I = np.asarray(I, dtype=float)
        r = np.sqrt((I * I).sum(axis=1))
        return safety * C / np.maximum(r, 1.0) ** (I.shape[1] + nu)

    return floor


def solve_homological_torus(P: ScaledSeries, alpha, divisor_floor=0.0) -> ScaledSeries:
    """``h`` with ``{(alpha, p), h} = P``: coefficients ``a / (sqrt(-1) (alpha, I))``."""
    if P.mode is not Mode.TORUS:
        raise sr.UnsupportedShapeError("torus solver needs a torus series")
    n = P.dim
    I = P.keys[:, :n]
    if np.any(np.all(I == 0, axis=1)):
        raise ValueError("right-hand side has a nonzero q-mean")
    d = sr.frequency_divisors(alpha, I)
    bad = np.abs(d) < _floors(divisor_floor, I)
    if np.any(bad) or np.any(d == 0):
        r = int(np.flatnonzero(bad | (d == 0))[0])
        raise ResonanceError(f"small divisor {d[r]:.3e} at Fourier index {tuple(int(x) for x in I[r])}",
                             where=tuple(int(x) for x in I[r]))
    vals = (-1j * P.values) / d
    return ScaledSeries._raw(n, P.mode, P.trunc, P.real, P.keys, vals)


def solve_homological_singular(P: ScaledSeries, omega, divisor_floor=0.0):
    """``(h, resonant)`` with ``{sum omega_i p_i q_i, h} = P - resonant``.

    The bracket multiplies ``q^I p^J`` by ``(omega, I - J)``; monomials with
    ``I = J`` cannot be reached and are returned in ``resonant``.
    """
    if P.mode is not Mode.SINGULAR:
        raise sr.UnsupportedShapeError("singular solver needs a singular series")
    n = P.dim
    I = P.keys[:, :n]
    J = P.keys[:, n:2 * n]
    res = np.all(I == J, axis=1)
    d = sr.frequency_divisors(omega, (I - J)[~res])
    bad = np.abs(d) < _floors(divisor_floor, (I - J)[~res])
    if np.any(bad) or np.any(d == 0):
        r = int(np.flatnonzero(bad | (d == 0))[0])
        row = P.keys[~res][r]
        raise ResonanceError(f"small divisor {d[r]:.3e} at q^{tuple(row[:n])} p^{tuple(row[n:2 * n])}",
                             where=(tuple(int(x) for x in row[:n]), tuple(int(x) for x in row[n:2 * n])))
    h = ScaledSeries._raw(n, P.mode, P.trunc, P.real, P.keys[~res], P.values[~res] / d)
    return h, P.select(res)


# ---------------------------------------------------------------------------
# frequency correction

def frequency_correction(mean_linear, hessian, cond_cap: float = HESS_COND_CAP) -> np.ndarray:
    """Solve ``Hess(t) a(t) = m(t)`` order by order in t.

    ``mean_linear`` is (n, K+1); ``hessian`` is (n, n, K+1) or a constant n x n matrix.
    """
    m = np.asarray(mean_linear)
    Hs = np.asarray(hessian)
    if Hs.ndim == 2:
        Hs = Hs[:, :, None]
    n, K1 = m.shape
    H0 = Hs[:, :, 0]
    if not np.all(np.isfinite(H0)) or np.linalg.cond(H0) > cond_cap:
        raise NonDegeneracyError(f"p-Hessian at t=0 is degenerate (cond = {np.linalg.cond(H0):.3e})")
    dtype = np.result_type(m, Hs, float)
    a = np.zeros((n, K1), dtype=dtype)
    for k in range(K1):
        rhs = m[:, k].astype(dtype)
        for j in range(1, min(k, Hs.shape[2] - 1) + 1):
            rhs = rhs - Hs[:, :, j] @ a[:, k - j]
        a[:, k] = np.linalg.solve(H0, rhs)
    if np.iscomplexobj(a) and np.all(a.imag == 0):
        a = a.real.copy()
    return a


# ---------------------------------------------------------------------------
# torus Newton step

@dataclass
class TransformStep:
    h: ScaledSeries
    shift: np.ndarray | None
    pair: ScalePair


@dataclass
class StepResult:
    new: ScaledSeries
    h: ScaledSeries
    shift: np.ndarray
    norms: dict


def _osc(x: ScaledSeries) -> ScaledSeries:
    return x.select(~np.all(x.keys[:, :x.dim] == 0, axis=1))


def _deg_select(x: ScaledSeries, degree: int) -> ScaledSeries:
    return x.select(x.keys[:, x.dim:2 * x.dim].sum(axis=1) == degree)


def kam_step(H: ScaledSeries, alpha, divisor_floor, pair: ScalePair, tscale: float = 1.0,
             cond_cap: float = HESS_COND_CAP) -> StepResult:
    """One Newton step towards ``(alpha, p) mod (p-quadratic + pure t)``.

    The linearized equation is triangular in the momentum degree. The J = 0
    part is killed by ``h0``; the mean of the J = 1 part by a p-translation
    through the averaged Hessian; its oscillating part by ``h1``. The new
    hamiltonian is the Lie series of ``{., h0 + h1} + a d/dp`` applied to ``H``.
    """
    alpha = np.asarray(alpha, float)
    parts = decompose_error(H)
    ml = parts.mean_linear.astype(complex)
    ml[:, 0] -= alpha
    T = parts.pure_t + parts.higher
    h0 = solve_homological_torus(-parts.osc_const, alpha, divisor_floor)
    c = _deg_select(sr.poisson_bracket(T, h0), 1)
    cm = decompose_error(c).mean_linear
    a = frequency_correction(-(ml + cm), mean_hessian(parts.higher), cond_cap)
    shift_term = sr.zero_like(H)
    for i in range(H.dim):
        ai = sr.pure_t(H.dim, a[i], Mode.TORUS, H.trunc)
        if not ai.is_zero():
            shift_term = shift_term + ai * _deg_select(sr.derive(parts.higher, "p", i), 1)
    rhs = parts.osc_linear + _osc(c) + _osc(shift_term)
    h1 = solve_homological_torus(-rhs, alpha, divisor_floor)
    h = h0 + h1
    new, info = lie_exp(h, list(a), H, pair, tscale=tscale, return_info=True)
    norms = {"h": sr.norm_majorant(h, pair.t, tscale=tscale),
             "shift": float(sum(sr.norm_majorant(sr.pure_t(H.dim, ai, Mode.TORUS, H.trunc), pair.t, tscale=tscale)
                                for ai in a)),
             "lie_nu": info.nu, "lie_depth": info.depth, "lie_tail": info.tail_bound, "lie_exact": info.exact}
    return StepResult(new, h, a, norms)


@dataclass
class NormalFormResult:
    transform_log: list
    final: ScaledSeries
    residual: object
    report: object
    residual_norm: float = 0.0
    drift: object = None
    certificate: object = None
    tail_budget: float = 0.0

    def apply(self, x: ScaledSeries, tscale: float = 1.0) -> ScaledSeries:
        """Apply the accumulated transform to another series."""
        for st in self.transform_log:
            x = lie_exp(st.h, None if st.shift is None else list(st.shift), x, st.pair, tscale=tscale)
        return x

    def as_dict(self) -> dict:
        out = {"transform_log": [{"h": sr.to_records(st.h),
                                  "shift": None if st.shift is None else np.real(st.shift).tolist(),
                                  "scales": [st.pair.s, st.pair.t]} for st in self.transform_log],
               "final": sr.to_records(self.final), "residual_norm": self.residual_norm,
               "report": self.report.as_dict(), "tail_budget": self.tail_budget}
        if self.drift is not None:
            out["drift"] = np.real(self.drift).tolist()
        if self.certificate is not None:
            out["certificate"] = self.certificate.as_dict()
        return out


def _attach(err, records, **kw):
    err.report = build_report(records, **kw)
    return err


def kam_run(H: TorusHamiltonian, t_value_scale: float = 1e-4, schedule: ScaleSchedule | None = None,
            tol: float = 1e-10, maxiter: int = 10, nu: float = 0.5, Ncut: int | None = None,
            safety: float = 0.5, q: float = 1.9, cond_cap: float = HESS_COND_CAP,
            warn_C: float = 1e-8) -> NormalFormResult:
    """Newton iteration to the invariant-torus normal form.

    ``e_n`` is the error norm at ``s_n`` with t weighted by ``t_value_scale``;
    the stopping residual is the same norm with unit t weight.
    """
    schedule = schedule or ScaleSchedule()
    x = H.to_series()
    n = H.dim
    hess0 = mean_hessian(x)[:, :, 0]
    if np.linalg.cond(hess0) > cond_cap:
        raise NonDegeneracyError(f"p-Hessian is degenerate (det beta = {H.det_beta:.3e})")
    Ncut = Ncut or max(1, H.trunc.max_fourier)
    cert = best_constant(H.alpha, nu, Ncut)
    if cert.C < warn_C:
        warnings.warn(f"Diophantine constant {cert.C:.3e} is small at radius {Ncut}", RuntimeWarning)
    floor = diophantine_floor(cert.C, nu, safety)
    # rounding level of the unit-weight residual
    sat = 64 * np.finfo(float).eps * max(1.0, sr.norm_majorant(x, schedule[0]))
    log, records = [], []
    residuals, budget = [], 0.0
    kw = dict(q=q, l=schedule.l)
    for it in range(maxiter + 1):
        s = schedule[it]
        err = error_part(x, H.alpha)
        e = sr.norm_majorant(err, s, tscale=t_value_scale)
        res = sr.norm_majorant(err, s)
        records.append(IterationRecord(it, s, e))
        residuals.append(res)
        if res <= tol:
            break
        if it == maxiter:
            raise _attach(NonConvergenceError(f"residual {res:.3e} after {maxiter} iterations"), records,
                          saturated=[r <= sat for r in residuals], **kw)
        try:
            step = kam_step(x, H.alpha, floor, schedule.pair(it), t_value_scale, cond_cap)
        except (ResonanceError, NonDegeneracyError) as exc:
            raise _attach(exc, records, saturated=[r <= sat for r in residuals], **kw)
        records[-1].alpha = step.norms["shift"]
        budget += step.norms["lie_tail"]
        log.append(TransformStep(step.h, step.shift, schedule.pair(it)))
        x = step.new
    report = build_report(records, extra={"residuals": residuals, "C": cert.C},
                          saturated=[r <= sat for r in residuals], **kw)
    return NormalFormResult(log, x, decompose_error(error_part(x, H.alpha)), report, residuals[-1],
                            certificate=cert, tail_budget=budget)


# ---------------------------------------------------------------------------
# singular normal form

@dataclass
class SingularParts:
    constant: ScaledSeries
    drift: ScaledSeries
    transversal: ScaledSeries
    error: ScaledSeries


def decompose_singular(x: ScaledSeries, omega) -> SingularParts:
    """Split ``x - sum omega_i p_i q_i`` into constants (pure t), ``q_i p_i`` drift,
    the square of the ideal, and the error (everything else)."""
    n = x.dim
    x = x - SingularHamiltonian(omega, sr.zero(n, Mode.SINGULAR, x.trunc)).quadratic_part().with_trunc(x.trunc)
    I = x.keys[:, :n]
    J = x.keys[:, n:2 * n]
    mins = np.minimum(I, J).sum(axis=1)
    const = np.all(I == 0, axis=1) & np.all(J == 0, axis=1)
    drift = np.all(I == J, axis=1) & (I.sum(axis=1) == 1)
    sq = mins >= 2
    err = ~(const | drift | sq)
    return SingularParts(x.select(const), x.select(drift), x.select(sq), x.select(err))


def frequency_drift(parts: SingularParts) -> np.ndarray:
    """Coefficients of ``q_i p_i t^k`` as an (n, K+1) array."""
    d = parts.drift
    n = d.dim
    out = np.zeros((n, d.trunc.max_tdeg + 1))
    for row, c in zip(d.keys, d.values):
        out[int(np.argmax(row[:n])), row[2 * n]] += c.real
    return out


def singular_step(x: ScaledSeries, omega, divisor_floor, pair: ScalePair, tscale: float = 1.0,
                  neumann_max: int = 64) -> StepResult:
    parts = decompose_singular(x, omega)
    T = parts.transversal + parts.drift
    E = parts.error
    h, _ = solve_homological_singular(-E, omega, divisor_floor)
    # {T, h} feeds back into the error class; nilpotent in degree on the truncated space
    for _ in range(neumann_max):
        fb = decompose_singular_error(sr.poisson_bracket(T, h))
        h_new, _ = solve_homological_singular(-(E + fb), omega, divisor_floor)
        change = (h_new - h).max_abs()
        h = h_new
        if change <= 1e-15 * max(1.0, h.max_abs()):
            break
    new, info = lie_exp(h, None, x, pair, tscale=tscale, return_info=True)
    norms = {"h": sr.norm_majorant(h, pair.t, tscale=tscale), "shift": 0.0, "lie_nu": info.nu,
             "lie_depth": info.depth, "lie_tail": info.tail_bound, "lie_exact": info.exact}
    return StepResult(new, h, None, norms)


def decompose_singular_error(y: ScaledSeries) -> ScaledSeries:
    """Error-class monomials: ``I != J`` and ``sum min(I, J) <= 1``."""
    n = y.dim
    I = y.keys[:, :n]
    J = y.keys[:, n:2 * n]
    return y.select(~np.all(I == J, axis=1) & (np.minimum(I, J).sum(axis=1) <= 1))


def kam_singular_run(H: SingularHamiltonian, schedule: ScaleSchedule | None = None, tol: float = 1e-10,
                     maxiter: int = 10, divisor_floor: float = 1e-8, tscale: float = 1.0,
                     q: float = 1.9) -> NormalFormResult:
    """Newton iteration to ``sum omega_i p_i q_i`` modulo constants and the square of the ideal.

    The residual is the norm of everything outside constants and the square of
    the ideal, drift included; the drift itself is reported.
    """
    schedule = schedule or ScaleSchedule(s0=0.02)
    x = H.to_series()
    sat = 64 * np.finfo(float).eps * max(1.0, sr.norm_majorant(x, schedule[0], tscale=tscale))
    records, residuals, log = [], [], []
    budget = 0.0
    kw = dict(q=q, floor=sat, l=schedule.l)
    for it in range(maxiter + 1):
        s = schedule[it]
        parts = decompose_singular(x, H.omega)
        e = sr.norm_majorant(parts.error, s, tscale=tscale)
        res = sr.norm_majorant(parts.error + parts.drift, s, tscale=tscale)
        records.append(IterationRecord(it, s, e))
        residuals.append(res)
        if e <= tol:
            break
        if it == maxiter:
            raise _attach(NonConvergenceError(f"error {e:.3e} after {maxiter} iterations"), records, **kw)
        try:
            step = singular_step(x, H.omega, divisor_floor, schedule.pair(it), tscale)
        except ResonanceError as exc:
            raise _attach(exc, records, **kw)
        budget += step.norms["lie_tail"]
        log.append(TransformStep(step.h, None, schedule.pair(it)))
        x = step.new
    parts = decompose_singular(x, H.omega)
    report = build_report(records, extra={"residuals": residuals}, **kw)
    return NormalFormResult(log, x, parts, report, residuals[-1], drift=frequency_drift(parts),
                            tail_budget=budget)
