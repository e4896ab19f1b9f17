"""k-bounded operators on scaled series.

An operator ``u`` is k-bounded with constant ``C`` when, for all ``s < t``,

    |u(x)|_s <= C / (e^2 (t - s)^k) * |x|_t          (k >= 1)
    |u(x)|_s <= C |x|_s                              (k = 0)

This is the normalization consumed by the Borel calculus and the composition
law below; with it ``q d/dq`` has constant ``e`` and ``d/dp`` has constant ``e^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import series as sr
from .series import Mode, ScalePair, ScaledSeries, Trunc

E = math.e
E2 = math.e ** 2
ULP_SLACK = 1 + 4 * np.finfo(float).eps


class DivergenceError(ValueError):
    """The Borel argument nu reaches the radius of convergence."""


class BoundViolation(AssertionError):
    """A bound that should hold by construction failed numerically."""


class ExponentiabilityError(ValueError):
    def __init__(self, msg, scale, nu):
        super().__init__(msg)
        self.scale = scale
        self.nu = nu


@dataclass(frozen=True)
class ScaledOperator:
    action: Callable[[ScaledSeries], ScaledSeries]
    declared_order: int
    declared_constant: float
    kind: str
    dim: int = 2
    mode: Mode = Mode.TORUS
    trunc: Trunc = Trunc(6, 3, 2)
    scale_factor: float = 1.0
    name: str = ""

    def __call__(self, x: ScaledSeries) -> ScaledSeries:
        return self.action(x)

    def norm_of(self, x: ScaledSeries, s: float, tscale: float = 1.0) -> float:
        return sr.norm_majorant(x, self.scale_factor * s, tscale=tscale)


def _domain(dim, mode, trunc):
    return dict(dim=dim, mode=Mode(mode), trunc=Trunc(*trunc))


def identity_operator(dim=2, mode=Mode.TORUS, trunc=(6, 3, 2)) -> ScaledOperator:
    return ScaledOperator(lambda x: x, 0, 1.0, "identity", name="id", **_domain(dim, mode, trunc))


def zero_operator(dim=2, mode=Mode.TORUS, trunc=(6, 3, 2)) -> ScaledOperator:
    return ScaledOperator(sr.zero_like, 0, 0.0, "zero", name="0", **_domain(dim, mode, trunc))


def derivation_operator(which: str, i: int = 0, coeff: float = 1.0, dim=2, mode=Mode.TORUS,
                        trunc=(6, 3, 2)) -> ScaledOperator:
    """``coeff * q_i d/dq_i`` (``which="q"``) or ``coeff * d/dp_i`` (``which="p"``).

    Declared constants come from the Cauchy inequalities:
    ``|q d_q f|_s <= |f|_t / (e (t-s))`` and ``|d_p f|_s <= |f|_t / (t-s)``.
    In singular mode ``"q"`` is the plain derivative, bounded like ``d/dp``.
    """
    mode = Mode(mode)
    if which == "q" and mode is Mode.TORUS or which == "qlog":
        base = E
    elif which in ("q", "p"):
        base = E2
    else:
        raise ValueError(which)
    c = coeff

    def act(x):
        return sr.derive(x, which, i) * c

    return ScaledOperator(act, 1, abs(c) * base, "derivation", name=f"{c}*d{which}{i}",
                          **_domain(dim, mode, trunc))


def hadamard_operator(f: ScaledSeries, order: int, constant: float) -> ScaledOperator:
    """``x -> f * x`` coefficientwise, with a caller-declared order and constant."""
    return ScaledOperator(lambda x: sr.hadamard_product(f, x), order, constant, "hadamard",
                          dim=f.dim, mode=f.mode, trunc=f.trunc, name="hadamard")


def _adjoint_constant(h: ScaledSeries, t: float) -> float:
    total = 0.0
    for i in range(h.dim):
        if h.mode is Mode.TORUS:
            total += sr.norm_majorant(sr.derive(h, "q", i), t) + sr.norm_majorant(sr.derive(h, "p", i), t) / E
        else:
            total += sr.norm_majorant(sr.derive(h, "q", i), t) + sr.norm_majorant(sr.derive(h, "p", i), t)
    return total


def poisson_adjoint_operator(h: ScaledSeries, S: float = sr.S_MAX) -> ScaledOperator:
    """``x -> {x, h}``; 1-bounded with constant ``e^2 * sum_i (|q_i d_{q_i} h|_S + |d_{p_i} h|_S / e)``."""
    return ScaledOperator(lambda x: sr.poisson_bracket(x, h), 1, E2 * _adjoint_constant(h, S),
                          "poisson-adjoint", dim=h.dim, mode=h.mode, trunc=h.trunc, name="{.,h}")


def _shift_series(shift, like: ScaledSeries):
    if shift is None:
        return []
    out = []
    for a in shift:
        if isinstance(a, ScaledSeries):
            out.append(a)
        else:
            out.append(sr.pure_t(like.dim, np.asarray(a), like.mode, like.trunc))
    return out


def p_shift_operator(shift, like: ScaledSeries, S: float = sr.S_MAX) -> ScaledOperator:
    """``x -> sum_i a_i(t) d/dp_i x``."""
    a = _shift_series(shift, like)

    def act(x):
        out = sr.zero_like(x)
        for i, ai in enumerate(a):
            if not ai.is_zero():
                out = out + ai * sr.derive(x, "p", i)
        return out

    const = E2 * sum(sr.norm_majorant(ai, S) for ai in a)
    return ScaledOperator(act, 1, const, "p-shift", dim=like.dim, mode=like.mode, trunc=like.trunc,
                          name="a.dp")


# ---------------------------------------------------------------------------
# certification

@dataclass
class BoundCertificate:
    order: int
    C_emp: float
    samples: list = field(repr=False)
    declared: float | None
    verdict: bool | None

    def as_dict(self) -> dict:
        return {"order": self.order, "C_emp": self.C_emp, "declared": self.declared,
                "verdict": self.verdict, "samples": [list(map(float, s)) for s in self.samples]}


def sample_ratio(u: ScaledOperator, x: ScaledSeries, s: float, t: float, k: int) -> float:
    """Smallest constant consistent with one sample."""
    nx_t = u.norm_of(x, t)
    if nx_t == 0:
        return 0.0
    y = u(x)
    if k == 0:
        nx_s = u.norm_of(x, s)
        return u.norm_of(y, s) / nx_s if nx_s else 0.0
    return u.norm_of(y, s) * (t - s) ** k * E2 / nx_t


def certify_bound(u: ScaledOperator, k: int | None = None, trials: int = 200, seed=0,
                  declared: float | None = None, nterms: int = 6, S: float = sr.S_MAX,
                  series_factory=None) -> BoundCertificate:
    """Empirical smallest k-bound constant over random series and scale pairs.

    Deterministic for a given seed. The verdict compares against ``declared``
    (default: the operator's declared constant) with a 4-ulp allowance.
    """
    k = u.declared_order if k is None else int(k)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    c_emp = 0.0
    for _ in range(trials):
        if series_factory is None:
            x = sr.random_series(rng, u.dim, u.mode, u.trunc, nterms=int(rng.integers(1, nterms + 1)))
        else:
            x = series_factory(rng)
        t = float(rng.uniform(0.02, S))
        s = t if k == 0 else float(rng.uniform(0.0, t))
        if s <= 0:
            s = t / 2
        r = sample_ratio(u, x, s, t, k)
        samples.append((s, t, r))
        c_emp = max(c_emp, r)
    declared = u.declared_constant if declared is None else declared
    verdict = None if declared is None else bool(c_emp <= declared * ULP_SLACK)
    return BoundCertificate(k, c_emp, samples, declared, verdict)


def compose(u: ScaledOperator, v: ScaledOperator) -> ScaledOperator:
    """``u o v`` with order ``k + k'`` and constant ``2^{k+k'} C_u C_v``."""
    if u.scale_factor != v.scale_factor:
        raise ValueError("operators act on differently rescaled spaces")
    k = u.declared_order + v.declared_order
    return ScaledOperator(lambda x: u(v(x)), k, 2.0 ** k * u.declared_constant * v.declared_constant,
                          "composite", dim=v.dim, mode=v.mode, trunc=v.trunc,
                          scale_factor=v.scale_factor, name=f"({u.name})({v.name})")


@dataclass(frozen=True)
class RescaledSeries:
    """A series read in the rescaled space: ``|f|'_s = |f|_{lambda s}``."""

    series: ScaledSeries
    lam: float

    def norm(self, s: float, tscale: float = 1.0) -> float:
        return sr.norm_majorant(self.series, self.lam * s, tscale=tscale)


def rescale(obj, lam: float):
    """Rescale a series or an operator by ``lam`` in (0, 1].

    Operators keep their order; the constant picks up ``lam^{-k}``.
    """
    if not (0 < lam <= 1):
        raise ValueError("lambda must lie in (0, 1]")
    if isinstance(obj, ScaledSeries):
        return obj if lam == 1 else RescaledSeries(obj, lam)
    if isinstance(obj, RescaledSeries):
        return RescaledSeries(obj.series, obj.lam * lam)
    if isinstance(obj, ScaledOperator):
        if lam == 1:
            return obj
        k = obj.declared_order
        return ScaledOperator(obj.action, k, obj.declared_constant * lam ** (-k), obj.kind, obj.dim,
                              obj.mode, obj.trunc, obj.scale_factor * lam, obj.name + "[rescaled]")
    raise TypeError(type(obj))


# ---------------------------------------------------------------------------
# Borel calculus

def _poly(coeffs, z):
    out = 0.0
    for c in reversed(list(coeffs)):
        out = out * z + c
    return out


def borel_nu(u: ScaledOperator, pair: ScalePair) -> float:
    if u.declared_order == 0:
        return u.declared_constant
    if u.declared_order != 1:
        raise ValueError("Borel estimate needs a 0- or 1-bounded operator")
    return u.declared_constant / (pair.t - pair.s)


def borel_apply(f, u: ScaledOperator, x: ScaledSeries, pair: ScalePair, radius: float = math.inf):
    """``y = sum_m (a_m / m!) u^m(x)`` and the bound ``f(nu) |x|_t``.

    ``f`` is a finite coefficient vector with non-negative entries and
    ``nu = C_u / (t - s)``. Raises :class:`DivergenceError` if ``nu >= radius`` and
    :class:`BoundViolation` if ``|y|_s`` exceeds the bound.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("Borel source must have non-negative coefficients")
    nu = borel_nu(u, pair)
    if nu >= radius:
        raise DivergenceError(f"nu = {nu} >= radius {radius}")
    b = sr.borel_transform(f)
    y = x * b[0] if b[0] != 0 else sr.zero_like(x)
    term = x
    for m in range(1, len(b)):
        term = u(term)
        if term.is_zero():
            break
        if b[m] != 0:
            y = y + term * b[m]
    bound = float(_poly(f, nu)) * u.norm_of(x, pair.t)
    ny = u.norm_of(y, pair.s)
    if ny > bound:
        raise BoundViolation(f"|Bf(u)x|_s = {ny} exceeds f(nu)|x|_t = {bound}")
    return y, bound


def attractor_bound(g, nu: float, r: float, order: int, x_norm_t: float) -> float:
    """``g(r) nu^order |x|_t`` for ``f = z^order g``, valid for ``nu <= r``."""
    if nu > r:
        raise ValueError("need nu <= r")
    return float(_poly(np.asarray(g, dtype=float), r)) * nu ** order * x_norm_t


def geometric_source(D: int) -> np.ndarray:
    """Coefficients of 1/(1-z) up to degree D; its Borel transform is exp."""
    return np.ones(D + 1)


# ---------------------------------------------------------------------------
# Lie series

@dataclass
class LieInfo:
    depth: int
    nu: float
    tail_bound: float
    exact: bool


def derivation_constant(h: ScaledSeries | None, shift, like: ScaledSeries, t: float, tscale: float = 1.0) -> float:
    """``K`` with ``|xi(y)|_s <= K |y|_t / (t - s)`` for ``xi = {., h} + sum a_i d/dp_i``."""
    K = 0.0
    if h is not None and not h.is_zero():
        for i in range(h.dim):
            dq = sr.norm_majorant(sr.derive(h, "q", i), t, tscale=tscale)
            dp = sr.norm_majorant(sr.derive(h, "p", i), t, tscale=tscale)
            K += dq + (dp / E if h.mode is Mode.TORUS else dp)
    for a in _shift_series(shift, like):
        K += sr.norm_majorant(a, t, tscale=tscale)
    return K


def make_derivation(h: ScaledSeries | None, shift, like: ScaledSeries):
    a = _shift_series(shift, like)

    def xi(y):
        out = sr.poisson_bracket(y, h) if h is not None and not h.is_zero() else sr.zero_like(y)
        for i, ai in enumerate(a):
            if not ai.is_zero():
                dy = sr.derive(y, "p", i)
                if not dy.is_zero():
                    out = out + ai * dy
        return out

    return xi


def lie_exp(h: ScaledSeries | None, shift, x: ScaledSeries, pair: ScalePair, D: int | None = None,
            tol: float = 1e-14, tscale: float = 1.0, max_depth: int = 64, return_info: bool = False):
    """Truncated Lie series ``sum_{m<=D} xi^m(x) / m!`` for ``xi = {., h} + sum a_i(t) d/dp_i``.

    With ``nu = e K / (t - s) < 1`` the depth is the smallest ``D`` with
    ``nu^{D+1} / (1 - nu) <= tol``. If ``nu >= 1`` the series is accepted only when
    it terminates exactly (nilpotent on the truncated space, e.g. ``h = O(t)``),
    otherwise :class:`ExponentiabilityError` is raised.
    """
    K = derivation_constant(h, shift, x, pair.t, tscale)
    nu = E * K / (pair.t - pair.s)
    xi = make_derivation(h, shift, x)
    if D is None:
        if nu == 0:
            D = 0
        elif nu < 1:
            D = max(1, math.ceil(math.log(tol * (1 - nu)) / math.log(nu)) - 1)
        else:
            D = max_depth
    y = x
    term = x
    exact = False
    depth = 0
    for m in range(1, D + 1):
        term = xi(term) * (1.0 / m)
        if term.is_zero():
            exact = True
            break
        y = y + term
        depth = m
    else:
        exact = nu == 0
    if not exact and nu >= 1:
        raise ExponentiabilityError(f"Lie series not exponentiable at scale t={pair.t} (nu={nu:.3g})", pair.t, nu)
    tail = 0.0 if exact else nu ** (D + 1) / (1 - nu) * sr.norm_majorant(x, pair.t, tscale=tscale)
    if return_info:
        return y, LieInfo(depth, nu, tail, exact)
    return y
