"""Truncated Fourier-Taylor series with scale-indexed majorant norms.

Two phase spaces are supported:

* ``TORUS``: monomials ``q^I p^J t^k`` with ``I`` in Z^n (``q_i = exp(i theta_i)``),
  ``J`` in N^n and a formal perturbation parameter ``t``.
* ``SINGULAR``: monomials ``q^I p^J t^k`` with ``I, J`` in N^n (Taylor germs at
  the origin).

Coefficients live in a sparse table (integer key rows plus a complex vector).
Values are immutable; every operation returns a new series.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, NamedTuple

import numpy as np

S_MAX = 0.5


class DomainError(ValueError):
    """Scale parameter outside the admissible range."""


class UnsupportedShapeError(ValueError):
    """Operation not defined for this kind of series."""


class ModeMismatchError(ValueError):
    """Operands live on different phase spaces."""


class Mode(str, Enum):
    TORUS = "torus"
    SINGULAR = "singular"


TorusMode = Mode.TORUS
SingularMode = Mode.SINGULAR


class Trunc(NamedTuple):
    """Truncation caps: sup-norm of the Fourier index, total momentum degree, t-degree."""

    max_fourier: int
    max_momentum: int
    max_tdeg: int

    def meet(self, other: "Trunc") -> "Trunc":
        return Trunc(*(min(a, b) for a, b in zip(self, other)))


@dataclass(frozen=True)
class MultiIndex:
    fourier: tuple
    momentum: tuple
    tdeg: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fourier", tuple(int(x) for x in self.fourier))
        object.__setattr__(self, "momentum", tuple(int(x) for x in self.momentum))
        object.__setattr__(self, "tdeg", int(self.tdeg))
        if len(self.fourier) != len(self.momentum):
            raise ValueError("fourier and momentum parts must have the same length")
        if any(j < 0 for j in self.momentum) or self.tdeg < 0:
            raise ValueError("momentum exponents and t-degree must be non-negative")

    @property
    def dim(self) -> int:
        return len(self.fourier)

    def row(self) -> tuple:
        return self.fourier + self.momentum + (self.tdeg,)

    @classmethod
    def from_row(cls, row, dim: int) -> "MultiIndex":
        row = [int(x) for x in row]
        return cls(tuple(row[:dim]), tuple(row[dim:2 * dim]), row[2 * dim])


@dataclass(frozen=True)
class ScalePair:
    """Two scales ``0 < s < t <= S <= 1/2``."""

    s: float
    t: float
    S: float = S_MAX

    def __post_init__(self):
        if not (0 < self.s < self.t <= self.S <= S_MAX):
            raise DomainError(f"need 0 < s < t <= S <= {S_MAX}, got s={self.s}, t={self.t}, S={self.S}")

    @property
    def gap(self) -> float:
        return self.t - self.s


class IdealClass:
    """Membership tests for the ideal, its square, constants and pure-t terms.

    Torus: the ideal is generated by the p_i. Singular: by the products p_i q_i.
    """

    def __init__(self, mode: Mode):
        self.mode = Mode(mode)

    def _order(self, I, J):
        I = np.asarray(I)
        J = np.asarray(J)
        if self.mode is Mode.TORUS:
            return J.sum(axis=-1)
        return np.minimum(I, J).sum(axis=-1)

    def order(self, idx: MultiIndex) -> int:
        return int(self._order(idx.fourier, idx.momentum))

    def in_ideal(self, idx: MultiIndex) -> bool:
        return self.order(idx) >= 1

    def in_ideal_sq(self, idx: MultiIndex) -> bool:
        return self.order(idx) >= 2

    def is_constant(self, idx: MultiIndex) -> bool:
        return not any(idx.fourier) and not any(idx.momentum) and idx.tdeg == 0

    def is_pure_t(self, idx: MultiIndex) -> bool:
        return not any(idx.fourier) and not any(idx.momentum)

    def order_array(self, keys: np.ndarray, dim: int) -> np.ndarray:
        return self._order(keys[:, :dim], keys[:, dim:2 * dim])


# ---------------------------------------------------------------------------
# sparse table helpers

def _trunc_mask(keys, dim, mode, trunc):
    I = keys[:, :dim]
    J = keys[:, dim:2 * dim]
    k = keys[:, 2 * dim]
    if mode is Mode.TORUS:
        ok = np.all(np.abs(I) <= trunc.max_fourier, axis=1)
    else:
        ok = np.all((I >= 0) & (I <= trunc.max_fourier), axis=1)
    ok &= J.sum(axis=1) <= trunc.max_momentum
    ok &= np.all(J >= 0, axis=1) & (k >= 0) & (k <= trunc.max_tdeg)
    return ok


def _aggregate(keys, vals):
    """Sum duplicate keys, drop exact zeros, return rows in lexicographic order."""
    if len(keys) == 0:
        return keys.reshape(0, keys.shape[1]), vals.reshape(0)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    if len(uniq) == len(keys):
        out = np.empty(len(uniq), dtype=complex)
        out[inv] = vals
    else:
        re = np.bincount(inv, weights=vals.real, minlength=len(uniq))
        im = np.bincount(inv, weights=vals.imag, minlength=len(uniq))
        out = re + 1j * im
    nz = out != 0
    return uniq[nz], out[nz]


def _symmetrize(keys, vals, dim, mode):
    if mode is Mode.SINGULAR:
        v = vals.real.astype(complex)
        nz = v != 0
        return keys[nz], v[nz]
    partner = keys.copy()
    partner[:, :dim] *= -1
    return _aggregate(np.vstack([keys, partner]), np.concatenate([vals / 2, np.conj(vals) / 2]))


class ScaledSeries:
    """Sparse truncated series ``sum a_{I,J,k} q^I p^J t^k``.

    Parameters
    ----------
    dim : int
        Number of degrees of freedom n.
    mode : Mode
        ``TORUS`` or ``SINGULAR``.
    coeffs : mapping, optional
        ``MultiIndex`` (or a flat ``(I..., J..., k)`` tuple) to complex.
    trunc : Trunc or 3-tuple
    real : bool
        Reality flag. Real torus series are stored conjugate-symmetric,
        real singular series with real coefficients.
    """

    __slots__ = ("dim", "mode", "trunc", "real", "_keys", "_vals")

    def __init__(self, dim: int, mode=Mode.TORUS, coeffs: Mapping | None = None,
                 trunc=(8, 4, 4), real: bool = False):
        mode = Mode(mode)
        trunc = Trunc(*trunc)
        rows, vals = [], []
        for key, val in (coeffs or {}).items():
            row = key.row() if isinstance(key, MultiIndex) else tuple(int(x) for x in key)
            if len(row) != 2 * dim + 1:
                raise ValueError(f"index {key!r} does not match dimension {dim}")
            rows.append(row)
            vals.append(complex(val))
        keys = np.array(rows, dtype=np.int64).reshape(len(rows), 2 * dim + 1)
        vals = np.array(vals, dtype=complex)
        if mode is Mode.SINGULAR and np.any(keys[:, :dim] < 0):
            raise ValueError("singular mode needs non-negative q exponents")
        if not np.all(_trunc_mask(keys, dim, mode, trunc)):
            raise ValueError("coefficient outside the truncation limits")
        keys, vals = _aggregate(keys, vals)
        if real:
            scale = np.max(np.abs(vals)) if len(vals) else 0.0
            if mode is Mode.SINGULAR:
                bad = np.any(np.abs(vals.imag) > 1e-12 * scale)
            else:
                probe = ScaledSeries._raw(dim, mode, trunc, False, keys, vals)
                bad = np.any(np.abs(vals - np.conj(probe._lookup(_neg_fourier(keys, dim)))) > 1e-12 * scale)
            if bad:
                raise ValueError("coefficients violate the reality condition")
            keys, vals = _symmetrize(keys, vals, dim, mode)
        self._init(dim, mode, trunc, real, keys, vals)

    def _init(self, dim, mode, trunc, real, keys, vals):
        self.dim = dim
        self.mode = mode
        self.trunc = trunc
        self.real = bool(real)
        keys.flags.writeable = False
        vals.flags.writeable = False
        self._keys = keys
        self._vals = vals

    @classmethod
    def _raw(cls, dim, mode, trunc, real, keys, vals):
        obj = cls.__new__(cls)
        obj._init(dim, Mode(mode), Trunc(*trunc), real, np.ascontiguousarray(keys, dtype=np.int64),
                  np.ascontiguousarray(vals, dtype=complex))
        return obj

    @classmethod
    def _from_terms(cls, dim, mode, trunc, real, keys, vals, with_tail=False):
        """Aggregate raw terms, truncate, optionally return the discarded tail."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 2 * dim + 1)
        vals = np.asarray(vals, dtype=complex).reshape(-1)
        mask = _trunc_mask(keys, dim, mode, trunc)
        tail = None
        if with_tail:
            tk, tv = _aggregate(keys[~mask], vals[~mask])
            tail = _tail_series(dim, mode, tk, tv)
        keys, vals = _aggregate(keys[mask], vals[mask])
        if real:
            keys, vals = _symmetrize(keys, vals, dim, mode)
        out = cls._raw(dim, mode, trunc, real, keys, vals)
        return (out, tail) if with_tail else out

    # -- inspection ---------------------------------------------------------
    @property
    def keys(self) -> np.ndarray:
        return self._keys

    @property
    def values(self) -> np.ndarray:
        return self._vals

    @property
    def coeffs(self) -> dict:
        return {MultiIndex.from_row(r, self.dim): complex(v) for r, v in zip(self._keys, self._vals)}

    def __len__(self):
        return len(self._vals)

    def is_zero(self) -> bool:
        return len(self._vals) == 0

    def __getitem__(self, idx) -> complex:
        row = idx.row() if isinstance(idx, MultiIndex) else tuple(idx)
        return complex(self._lookup(np.array([row], dtype=np.int64))[0])

    def _lookup(self, rows: np.ndarray) -> np.ndarray:
        """Coefficients at the given key rows (zero when absent)."""
        out = np.zeros(len(rows), dtype=complex)
        if len(rows) == 0 or len(self._keys) == 0:
            return out
        both = np.vstack([self._keys, rows])
        _, inv = np.unique(both, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        table = np.full(inv.max() + 1, -1)
        table[inv[: len(self._keys)]] = np.arange(len(self._keys))
        pos = table[inv[len(self._keys):]]
        hit = pos >= 0
        out[hit] = self._vals[pos[hit]]
        return out

    def like(self, keys, vals, trunc=None, real=None, with_tail=False):
        return ScaledSeries._from_terms(self.dim, self.mode, trunc or self.trunc,
                                        self.real if real is None else real, keys, vals, with_tail)

    def with_trunc(self, trunc) -> "ScaledSeries":
        return self.like(self._keys, self._vals, trunc=Trunc(*trunc))

    def select(self, mask) -> "ScaledSeries":
        mask = np.asarray(mask, dtype=bool)
        return ScaledSeries._raw(self.dim, self.mode, self.trunc, self.real, self._keys[mask], self._vals[mask])

    def map_values(self, func, real=None) -> "ScaledSeries":
        return self.like(self._keys, func(self._keys, self._vals), real=real)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self._vals))) if len(self._vals) else 0.0

    # -- arithmetic ----------------------------------------------------------
    def _check(self, other):
        if not isinstance(other, ScaledSeries):
            raise TypeError("expected a ScaledSeries")
        if other.mode is not self.mode:
            raise ModeMismatchError(f"{self.mode.value} vs {other.mode.value}")
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = constant(self.dim, self.mode, other, self.trunc, real=isinstance(other, (int, float)))
        self._check(other)
        return ScaledSeries._from_terms(self.dim, self.mode, self.trunc.meet(other.trunc),
                                        self.real and other.real, np.vstack([self._keys, other._keys]),
                                        np.concatenate([self._vals, other._vals]))

    __radd__ = __add__

    def __neg__(self):
        return ScaledSeries._raw(self.dim, self.mode, self.trunc, self.real, self._keys, -self._vals)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, ScaledSeries):
            return multiply(self, other)
        c = complex(other)
        real = self.real and c.imag == 0
        if c == 0:
            return zero_like(self)
        vals = self._vals * (c.real if c.imag == 0 else c)
        return ScaledSeries._raw(self.dim, self.mode, self.trunc, real, self._keys, vals)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def __eq__(self, other):
        if not isinstance(other, ScaledSeries):
            return NotImplemented
        return (self.dim == other.dim and self.mode is other.mode and self.trunc == other.trunc
                and self._keys.shape == other._keys.shape and np.array_equal(self._keys, other._keys)
                and np.array_equal(self._vals, other._vals))

    __hash__ = None

    def __repr__(self):
        return f"ScaledSeries(dim={self.dim}, mode={self.mode.value}, terms={len(self)}, trunc={tuple(self.trunc)}, real={self.real})"

    def norm(self, s: float, tscale: float = 1.0) -> float:
        return norm_majorant(self, s, tscale=tscale)


def _neg_fourier(keys, dim):
    out = np.array(keys, copy=True)
    out[:, :dim] *= -1
    return out


def _tail_series(dim, mode, keys, vals):
    if len(keys) == 0:
        return ScaledSeries._raw(dim, mode, Trunc(0, 0, 0), False, keys, vals)
    I = keys[:, :dim]
    cap = Trunc(int(np.abs(I).max()), int(keys[:, dim:2 * dim].sum(axis=1).max()), int(keys[:, 2 * dim].max()))
    return ScaledSeries._raw(dim, mode, cap, False, keys, vals)


# ---------------------------------------------------------------------------
# constructors

def zero(dim, mode=Mode.TORUS, trunc=(8, 4, 4), real=True) -> ScaledSeries:
    return ScaledSeries._raw(dim, mode, trunc, real, np.zeros((0, 2 * dim + 1), np.int64), np.zeros(0, complex))


def zero_like(f: ScaledSeries) -> ScaledSeries:
    return zero(f.dim, f.mode, f.trunc, f.real)


def monomial(dim, mode=Mode.TORUS, fourier=None, momentum=None, tdeg=0, coeff=1.0,
             trunc=(8, 4, 4), real=False) -> ScaledSeries:
    fourier = tuple(fourier) if fourier is not None else (0,) * dim
    momentum = tuple(momentum) if momentum is not None else (0,) * dim
    return ScaledSeries(dim, mode, {MultiIndex(fourier, momentum, tdeg): coeff}, trunc, real)


def constant(dim, mode=Mode.TORUS, value=1.0, trunc=(8, 4, 4), real=True) -> ScaledSeries:
    if value == 0:
        return zero(dim, mode, trunc, real)
    return monomial(dim, mode, coeff=value, trunc=trunc, real=real)


def unit(dim, i, var, mode=Mode.TORUS, trunc=(8, 4, 4), real=None) -> ScaledSeries:
    """The coordinate function ``q_i``, ``p_i`` or ``t``."""
    I = [0] * dim
    J = [0] * dim
    k = 0
    if var == "q":
        I[i] = 1
    elif var == "p":
        J[i] = 1
    elif var == "t":
        k = 1
    else:
        raise ValueError(var)
    if real is None:
        real = not (var == "q" and mode is Mode.TORUS)
    return monomial(dim, mode, I, J, k, 1.0, trunc, real)


def pure_t(dim, coeffs, mode=Mode.TORUS, trunc=(8, 4, 4), real=None) -> ScaledSeries:
    """Series in t alone from its coefficient vector."""
    coeffs = np.asarray(coeffs)
    keys = np.zeros((len(coeffs), 2 * dim + 1), np.int64)
    keys[:, 2 * dim] = np.arange(len(coeffs))
    if real is None:
        real = bool(np.all(np.imag(coeffs) == 0))
    return ScaledSeries._from_terms(dim, Mode(mode), Trunc(*trunc), real, keys, coeffs.astype(complex))


def random_series(rng: np.random.Generator, dim=2, mode=Mode.TORUS, trunc=(6, 3, 2), nterms=12,
                  real=False, scale=1.0) -> ScaledSeries:
    """Random sparse series inside ``trunc`` (test and certification helper)."""
    mode = Mode(mode)
    trunc = Trunc(*trunc)
    lo = -trunc.max_fourier if mode is Mode.TORUS else 0
    I = rng.integers(lo, trunc.max_fourier + 1, size=(nterms, dim))
    J = np.zeros((nterms, dim), np.int64)
    for r in range(nterms):
        deg = rng.integers(0, trunc.max_momentum + 1)
        for _ in range(deg):
            J[r, rng.integers(dim)] += 1
    k = rng.integers(0, trunc.max_tdeg + 1, size=(nterms, 1))
    keys = np.hstack([I, J, k]).astype(np.int64)
    vals = scale * (rng.standard_normal(nterms) + 1j * rng.standard_normal(nterms))
    if real and mode is Mode.SINGULAR:
        vals = vals.real.astype(complex)
    return ScaledSeries._from_terms(dim, mode, trunc, real, keys, vals)


# ---------------------------------------------------------------------------
# norms

def _check_scale(s, S=S_MAX):
    if not (0 < s <= S <= S_MAX):
        raise DomainError(f"scale {s} outside (0, {S}]")


def log_weights(f: ScaledSeries, s: float, tscale: float = 1.0) -> np.ndarray:
    n = f.dim
    I = np.abs(f.keys[:, :n]).sum(axis=1)
    J = f.keys[:, n:2 * n].sum(axis=1)
    k = f.keys[:, 2 * n]
    ls = math.log(s)
    tw = 2 * ls + math.log(tscale)
    if f.mode is Mode.TORUS:
        return s * I + ls * J + tw * k
    return ls * (I + J) + tw * k


def weights(f: ScaledSeries, s: float, tscale: float = 1.0) -> np.ndarray:
    return np.exp(log_weights(f, s, tscale))


def norm_majorant(f: ScaledSeries, s: float, S: float = S_MAX, tscale: float = 1.0) -> float:
    """Weighted l1 norm ``sum |a| w_s``.

    Torus weight ``e^{s|I|} s^{|J|} (tscale s^2)^k``; singular weight
    ``s^{|I|+|J|} (tscale s^2)^k``. Dominates the sup norm on the matching domain.
    """
    _check_scale(s, S)
    if f.is_zero():
        return 0.0
    return float(np.sum(np.abs(f.values) * weights(f, s, tscale)))


def _l2_gram(n: np.ndarray, s: float) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    out = np.empty_like(n)
    log_term = n == -1
    out[log_term] = math.log((1 + s) / (1 - s))
    m = 2 * n[~log_term] + 2
    out[~log_term] = ((1 + s) ** m - (1 - s) ** m) / m
    return out


def norm_l2_annulus(f: ScaledSeries, s: float) -> float:
    """L2 norm on the annulus ``1-s <= |z| <= 1+s`` for a one-variable Fourier series.

    Uses ``<z^n|z^n> = ((1+s)^{2n+2} - (1-s)^{2n+2})/(2n+2)`` and ``log((1+s)/(1-s))``
    for ``n = -1``; monomials are orthogonal.
    """
    if f.dim != 1 or f.mode is not Mode.TORUS:
        raise UnsupportedShapeError("L2 annulus norm needs a one-variable torus series")
    if f.is_zero():
        return 0.0
    if np.any(f.keys[:, 1:] != 0):
        raise UnsupportedShapeError("L2 annulus norm needs a pure Fourier series (no p or t)")
    if not (0 < s < 1):
        raise DomainError(f"annulus width {s} outside (0, 1)")
    g = _l2_gram(f.keys[:, 0], s)
    return float(math.sqrt(np.sum(np.abs(f.values) ** 2 * g)))


def pointwise_bound_from_l2(f: ScaledSeries, s: float, sigma: float, S: float = S_MAX) -> float:
    """``sigma^{-1} |f|_{L2, s+sigma}``, a bound for ``|f|`` on the s-annulus."""
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    _check_scale(s, S)
    _check_scale(s + sigma, S)
    return norm_l2_annulus(f, s + sigma) / sigma


# ---------------------------------------------------------------------------
# products, brackets, derivatives

_CHUNK = 1 << 21


def _product_terms(dim, mode, trunc, ka, va, kb, vb):
    """All pairwise products that survive truncation (unaggregated)."""
    if len(ka) == 0 or len(kb) == 0:
        return np.zeros((0, 2 * dim + 1), np.int64), np.zeros(0, complex)
    if len(ka) < len(kb):
        ka, va, kb, vb = kb, vb, ka, va
    step = max(1, _CHUNK // len(kb))
    keys_out, vals_out = [], []
    for lo in range(0, len(ka), step):
        keys = (ka[lo:lo + step, None, :] + kb[None, :, :]).reshape(-1, 2 * dim + 1)
        vals = (va[lo:lo + step, None] * vb[None, :]).reshape(-1)
        m = _trunc_mask(keys, dim, mode, trunc)
        keys_out.append(keys[m])
        vals_out.append(vals[m])
    return np.vstack(keys_out), np.concatenate(vals_out)


def _product_terms_full(dim, ka, va, kb, vb):
    keys = (ka[:, None, :] + kb[None, :, :]).reshape(-1, 2 * dim + 1)
    vals = (va[:, None] * vb[None, :]).reshape(-1)
    return keys, vals


def multiply(f: ScaledSeries, g: ScaledSeries, return_tail=False):
    f._check(g)
    trunc = f.trunc.meet(g.trunc)
    real = f.real and g.real
    if return_tail:
        keys, vals = _product_terms_full(f.dim, f.keys, f.values, g.keys, g.values)
        return ScaledSeries._from_terms(f.dim, f.mode, trunc, real, keys, vals, with_tail=True)
    keys, vals = _product_terms(f.dim, f.mode, trunc, f.keys, f.values, g.keys, g.values)
    return ScaledSeries._from_terms(f.dim, f.mode, trunc, real, keys, vals)


def _deriv_arrays(f: ScaledSeries, var: str, i: int = 0):
    n = f.dim
    keys = np.array(f.keys, copy=True)
    vals = f.values
    if var == "qlog":
        factor = keys[:, i].copy()
    elif var == "q":
        factor = keys[:, i].copy()
        keys[:, i] -= 1
    elif var == "p":
        factor = keys[:, n + i].copy()
        keys[:, n + i] -= 1
    elif var == "t":
        factor = keys[:, 2 * n].copy()
        keys[:, 2 * n] -= 1
    else:
        raise ValueError(f"unknown derivative {var!r}")
    nz = factor != 0
    return keys[nz], vals[nz] * factor[nz]


def derive(f: ScaledSeries, which: str, i: int = 0) -> ScaledSeries:
    """Exact coefficientwise derivative.

    ``which`` is ``"q"`` for the logarithmic derivative ``q_i d/dq_i`` in torus
    mode (plain ``d/dq_i`` in singular mode), ``"p"`` for ``d/dp_i`` and ``"t"``.
    ``"qlog"`` forces ``q_i d/dq_i`` in either mode.
    """
    if which not in ("q", "p", "t", "qlog"):
        raise ValueError(f"unknown derivative {which!r}")
    if which != "t" and not 0 <= i < f.dim:
        raise IndexError(i)
    var = which
    if which == "q" and f.mode is Mode.TORUS:
        var = "qlog"
    keys, vals = _deriv_arrays(f, var, i)
    real = f.real
    if var == "qlog" and f.mode is Mode.TORUS and f.real:
        # I * c_I is anti-symmetric under the reality involution
        real = False
    return ScaledSeries._raw(f.dim, f.mode, f.trunc, real, keys, vals)


def frequency_divisors(weights_vec, I: np.ndarray) -> np.ndarray:
    """``(w, I)`` for every row of ``I``; one shared routine keeps solves and brackets bit-consistent."""
    # elementwise accumulation in a fixed order: BLAS dot products may round
    # differently depending on array shape
    w = np.asarray(weights_vec)
    I = np.asarray(I)
    d = I[:, 0] * w[0]
    for i in range(1, I.shape[1]):
        d = d + I[:, i] * w[i]
    return d.astype(float) if np.isrealobj(w) else d


def _linear_symbol(f: ScaledSeries):
    """Frequency vector if f is ``sum a_i p_i`` (torus) or ``sum a_i p_i q_i`` (singular) with real a."""
    if f.is_zero() or np.any(f.values.imag != 0):
        return None
    n = f.dim
    K = f.keys
    if np.any(K[:, 2 * n] != 0) or np.any(K[:, n:2 * n].sum(axis=1) != 1):
        return None
    if f.mode is Mode.TORUS:
        if np.any(K[:, :n] != 0):
            return None
    elif np.any(K[:, :n] != K[:, n:2 * n]):
        return None
    w = np.zeros(n)
    for row, v in zip(K, f.values):
        w[int(np.argmax(row[n:2 * n]))] = v.real
    return w


def apply_linear_bracket(w, g: ScaledSeries) -> ScaledSeries:
    """``{H0, g}`` for ``H0 = sum w_i p_i`` (torus) or ``sum w_i p_i q_i`` (singular).

    The bracket is diagonal on monomials: multiplication by ``sqrt(-1)(w, I)``
    (torus) or ``(w, I - J)`` (singular).
    """
    n = g.dim
    I = g.keys[:, :n]
    if g.mode is Mode.SINGULAR:
        I = I - g.keys[:, n:2 * n]
    d = frequency_divisors(w, I)
    vals = d * g.values
    if g.mode is Mode.TORUS:
        vals = 1j * vals
    nz = vals != 0
    return ScaledSeries._raw(n, g.mode, g.trunc, g.real, g.keys[nz], vals[nz])


def poisson_bracket(f: ScaledSeries, g: ScaledSeries, return_tail=False):
    """Poisson bracket, t-linear.

    Torus: ``{f,g} = sqrt(-1) sum_i (d_{p_i} f * q_i d_{q_i} g - q_i d_{q_i} f * d_{p_i} g)``.
    Singular: ``{f,g} = sum_i d_{p_i} f d_{q_i} g - d_{q_i} f d_{p_i} g``.
    With ``return_tail`` the discarded terms come back as a second series.
    """
    f._check(g)
    n = f.dim
    trunc = f.trunc.meet(g.trunc)
    real = f.real and g.real
    if not return_tail:
        w = _linear_symbol(f)
        if w is not None:
            return apply_linear_bracket(w, g.with_trunc(trunc) if g.trunc != trunc else g)
        w = _linear_symbol(g)
        if w is not None:
            return -apply_linear_bracket(w, f.with_trunc(trunc) if f.trunc != trunc else f)
    qv = "qlog" if f.mode is Mode.TORUS else "q"
    keys, vals = [], []
    for i in range(n):
        for a, b, sign in ((f, g, 1.0), (g, f, -1.0)):
            ka, va = _deriv_arrays(a, "p", i)
            kb, vb = _deriv_arrays(b, qv, i)
            if return_tail:
                k, v = _product_terms_full(n, ka, va, kb, vb)
            else:
                k, v = _product_terms(n, f.mode, trunc, ka, va, kb, vb)
            keys.append(k)
            vals.append(sign * v)
    keys = np.vstack(keys)
    vals = np.concatenate(vals)
    if f.mode is Mode.TORUS:
        vals = 1j * vals
    return ScaledSeries._from_terms(n, f.mode, trunc, real, keys, vals, with_tail=return_tail)


def hadamard_product(f: ScaledSeries, g: ScaledSeries) -> ScaledSeries:
    """Coefficientwise product."""
    f._check(g)
    vals = f.values * g._lookup(f.keys)
    return ScaledSeries._from_terms(f.dim, f.mode, f.trunc.meet(g.trunc), f.real and g.real, f.keys, vals)


def borel_transform(coeffs) -> np.ndarray:
    """``sum a_n z^n -> sum a_n/n! z^n`` on a coefficient vector."""
    a = np.asarray(coeffs, dtype=float if np.isrealobj(coeffs) else complex)
    fact = np.array([math.factorial(m) for m in range(len(a))], dtype=float)
    return a / fact


def mean_over_q(f: ScaledSeries) -> ScaledSeries:
    """Projection on Fourier index 0 (average over the torus)."""
    if f.mode is not Mode.TORUS:
        raise UnsupportedShapeError("torus average needs a torus series")
    return f.select(np.all(f.keys[:, :f.dim] == 0, axis=1))


def evaluate(f: ScaledSeries, q, p, t=0.0):
    """Evaluate at points. ``q`` and ``p`` have shape (..., n); ``t`` broadcasts."""
    q = np.asarray(q, dtype=complex)
    p = np.asarray(p, dtype=complex)
    n = f.dim
    out = np.zeros(np.broadcast_shapes(q.shape[:-1], p.shape[:-1], np.shape(t)), dtype=complex)
    for row, c in zip(f.keys, f.values):
        term = c * np.prod(q ** row[:n], axis=-1) * np.prod(p ** row[n:2 * n], axis=-1) * np.asarray(t) ** row[2 * n]
        out = out + term
    return out


# ---------------------------------------------------------------------------
# text format

def to_text(f: ScaledSeries) -> str:
    lines = ["# scaled-series v1",
             f"dim {f.dim}",
             f"mode {f.mode.value}",
             "trunc {} {} {}".format(*f.trunc),
             f"real {int(f.real)}",
             f"terms {len(f)}",
             "# fourier[] momentum[] tdeg re im"]
    n = f.dim
    for row, c in zip(f.keys, f.values):
        lines.append("{} {} {} {!r} {!r}".format(
            ",".join(str(int(x)) for x in row[:n]),
            ",".join(str(int(x)) for x in row[n:2 * n]),
            int(row[2 * n]), float(c.real), float(c.imag)))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> ScaledSeries:
    header = {}
    rows, vals = [], []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] in ("dim", "mode", "trunc", "real", "terms"):
            header[parts[0]] = parts[1:]
            continue
        I, J, k, re, im = parts
        rows.append([int(x) for x in I.split(",")] + [int(x) for x in J.split(",")] + [int(k)])
        vals.append(complex(float(re), float(im)))
    dim = int(header["dim"][0])
    mode = Mode(header["mode"][0])
    trunc = Trunc(*(int(x) for x in header["trunc"]))
    real = bool(int(header["real"][0]))
    if "terms" in header and int(header["terms"][0]) != len(rows):
        raise ValueError("term count mismatch")
    keys = np.array(rows, dtype=np.int64).reshape(len(rows), 2 * dim + 1)
    if not np.all(_trunc_mask(keys, dim, mode, trunc)):
        raise ValueError("coefficient outside the truncation limits")
    k2, v2 = _aggregate(keys, np.array(vals, dtype=complex))
    return ScaledSeries._raw(dim, mode, trunc, real, k2, v2)


def to_records(f: ScaledSeries) -> list:
    n = f.dim
    return [{"fourier": [int(x) for x in r[:n]], "momentum": [int(x) for x in r[n:2 * n]],
             "tdeg": int(r[2 * n]), "re": float(c.real), "im": float(c.imag)}
            for r, c in zip(f.keys, f.values)]


def from_records(records: Iterable, dim, mode=Mode.TORUS, trunc=(8, 4, 4), real=False) -> ScaledSeries:
    coeffs = {}
    for rec in records:
        idx = MultiIndex(rec["fourier"], rec["momentum"], rec.get("tdeg", 0))
        coeffs[idx] = coeffs.get(idx, 0) + complex(rec.get("re", 0.0), rec.get("im", 0.0))
    return ScaledSeries(dim, mode, coeffs, trunc, real)
