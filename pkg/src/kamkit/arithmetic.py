"""Diophantine constants, the Liouville counterexample and a measure estimate."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class ResourceError(RuntimeError):
    """Search box too large; ``radius`` is the largest radius that would fit."""

    def __init__(self, msg, radius):
        super().__init__(msg)
        self.radius = radius


@dataclass
class DiophantineCertificate:
    alpha: tuple
    nu: float
    C: float
    Ncut: int
    worst_j: tuple
    exponent: float = field(init=False)

    def __post_init__(self):
        self.exponent = len(self.alpha) + self.nu

    def as_dict(self) -> dict:
        return {"alpha": [float(a) for a in self.alpha], "nu": float(self.nu), "C": float(self.C),
                "Ncut": int(self.Ncut), "worst_j": [int(j) for j in self.worst_j],
                "exponent": float(self.exponent)}


MAX_BOX = 4 * 10 ** 9


def _half_box_prefixes(n, N):
    """Prefixes (j_1..j_{n-1}) of the half box: the last coordinate is filled in vectorized."""
    if n == 1:
        yield ()
        return
    for pre in itertools.product(range(-N, N + 1), repeat=n - 1):
        first = next((x for x in pre if x != 0), 0)
        if first < 0:
            continue
        yield pre


def best_constant(alpha, nu: float, Ncut: int, max_box: int = MAX_BOX) -> DiophantineCertificate:
    """``C = min |(j, alpha)| * |j|^{n+nu}`` over ``0 < |j|_inf <= Ncut`` (Euclidean ``|j|``).

    ``j`` and ``-j`` give the same value, so only half of the box is scanned.
    Ties keep the first minimizer in scan order.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or len(alpha) == 0 or not np.all(np.isfinite(alpha)):
        raise ValueError("alpha must be a finite real vector")
    if not np.any(alpha != 0):
        raise ValueError("alpha must be nonzero")
    if nu <= 0:
        raise ValueError("nu must be positive")
    Ncut = int(Ncut)
    if Ncut < 1:
        raise ValueError("Ncut must be at least 1")
    n = len(alpha)
    if (2 * Ncut + 1) ** n > max_box:
        fit = int((max_box ** (1.0 / n) - 1) // 2)
        raise ResourceError(f"box of radius {Ncut} in dimension {n} exceeds {max_box} points", fit)
    expo = (n + nu) / 2.0
    best = math.inf
    best_j = None
    last_all = np.arange(-Ncut, Ncut + 1, dtype=np.int64)
    for pre in _half_box_prefixes(n, Ncut):
        if any(pre):
            last = last_all
        else:
            last = last_all[Ncut + 1:]
        pre_dot = 0.0
        for a, x in zip(alpha[:-1], pre):
            pre_dot += x * a
        pre_sq = sum(x * x for x in pre)
        vals = np.abs(pre_dot + last * alpha[-1]) * (pre_sq + last * last).astype(float) ** expo
        m = int(np.argmin(vals))
        if vals[m] < best:
            best = float(vals[m])
            best_j = tuple(pre) + (int(last[m]),)
    return DiophantineCertificate(tuple(float(a) for a in alpha), float(nu), best, Ncut, best_j)


def dirichlet_profile(alpha, radii) -> list:
    """``min |(j, alpha)| |j|^n`` over growing boxes (non-increasing by construction)."""
    return [_scan_exponent(alpha, len(alpha), N) for N in radii]


def _scan_exponent(alpha, exponent, N):
    alpha = np.asarray(alpha, dtype=float)
    n = len(alpha)
    best = math.inf
    last_all = np.arange(-N, N + 1, dtype=np.int64)
    for pre in _half_box_prefixes(n, N):
        last = last_all if any(pre) else last_all[N + 1:]
        pre_dot = sum(x * a for a, x in zip(alpha[:-1], pre))
        pre_sq = sum(x * x for x in pre)
        vals = np.abs(pre_dot + last * alpha[-1]) * (pre_sq + last * last).astype(float) ** (exponent / 2.0)
        best = min(best, float(vals.min()))
    return best


# ---------------------------------------------------------------------------
# Liouville number l = sum_{n>=0} 10^{-n!}

def liouville_partial(N: int) -> Fraction:
    return sum((Fraction(1, 10 ** math.factorial(n)) for n in range(N + 1)), Fraction(0))


def liouville_tail_bound(N: int) -> Fraction:
    """Upper bound ``2 * 10^{-(N+1)!}`` for ``l - l_N``."""
    return Fraction(2, 10 ** math.factorial(N + 1))


@dataclass
class LiouvilleWitness:
    N: int
    beta: tuple
    bound_sq: Fraction
    pairing_upper: Fraction
    norm_sq: int
    depth: int
    holds: bool
    norm_ok: bool
    tail_ok: bool


def liouville_witness(N: int) -> LiouvilleWitness:
    """Integer vector beta_N nearly orthogonal to alpha = (1, l).

    ``beta_N = (-sum_{n<=N} 10^{N!-n!}, 10^{N!})`` so that
    ``(alpha, beta_N) = 10^{N!} (l - l_N)``. The inequality
    ``|(alpha, beta_N)| <= 2 |beta_N|^{-N}`` is certified in exact rationals:
    the pairing is evaluated with ``l`` truncated at depth ``M = N+1`` plus the
    rigorous tail ``2 * 10^{-(N+2)!}``, and both sides are squared so the
    Euclidean norm enters only through the integer ``|beta_N|^2``.
    """
    if not 2 <= N <= 4:
        raise ValueError("supported range is 2 <= N <= 4")
    big = 10 ** math.factorial(N)
    b1 = -sum(10 ** (math.factorial(N) - math.factorial(n)) for n in range(N + 1))
    beta = (b1, big)
    M = N + 1
    lM = liouville_partial(M)
    pairing = abs(Fraction(b1) + big * lM) + big * liouville_tail_bound(M)
    norm_sq = b1 * b1 + big * big
    bound_sq = Fraction(4) / Fraction(norm_sq) ** N
    holds = pairing * pairing <= bound_sq
    tail_ok = liouville_partial(N + 3) - liouville_partial(N) <= liouville_tail_bound(N)
    return LiouvilleWitness(N=N, beta=beta, bound_sq=bound_sq, pairing_upper=pairing, norm_sq=norm_sq,
                            depth=M, holds=bool(holds), norm_ok=norm_sq >= big * big, tail_ok=bool(tail_ok))


# ---------------------------------------------------------------------------
# measure of the Diophantine complement

def lattice_zeta(nu: float, radius: int = 2000) -> float:
    """Upper bound for ``K_nu = sum_{j in Z^2 \\ 0} |j|^{-2-nu}``.

    Exact partial sum over ``|j|_inf <= radius`` plus an integral bound for the
    rest: every remaining ``j`` has ``|j| >= radius+1`` and its unit cell lies
    outside the disc of radius ``radius + 1 - sqrt(2)/2``.
    """
    p = 2.0 + nu
    total = 0.0
    xs = np.arange(-radius, radius + 1, dtype=float)
    for x in xs:
        r2 = x * x + xs * xs
        if x == 0:
            r2 = r2[r2 > 0]
        total += float(np.sum(r2 ** (-p / 2)))
    R = radius + 1 - math.sqrt(2) / 2
    growth = (1 + (math.sqrt(2) / 2) / (radius + 1)) ** p
    tail = growth * 2 * math.pi * R ** (2 - p) / (p - 2)
    return total + tail


_BLOCK = 4096


def measure_estimate(nu: float, C: float, N: float, samples: int, Ncut: int, seed: int,
                     zeta_radius: int = 2000):
    """Monte Carlo fraction of the square ``[-N, N]^2`` violating the Diophantine
    inequality for some ``0 < |j|_inf <= Ncut``, and the area bound
    ``4 K_nu C N / (2N)^2``.

    Sampling runs in fixed blocks, each with its own child stream of
    ``SeedSequence(seed)``, so results do not depend on how blocks are scheduled.
    Returns ``(empirical_fraction, paper_bound, sigma)`` where ``sigma`` is the
    binomial standard error at the bound.
    """
    if nu <= 0 or C < 0 or N <= 0 or samples < 1 or Ncut < 1:
        raise ValueError("need nu > 0, C >= 0, N > 0, samples >= 1, Ncut >= 1")
    K = lattice_zeta(nu, zeta_radius)
    bound = 4.0 * K * C * N / (2.0 * N) ** 2
    p = min(max(bound, 0.0), 1.0)
    sigma = math.sqrt(p * (1 - p) / samples)
    if C == 0:
        return 0.0, bound, sigma
    js = np.array([j for j in itertools.product(range(-Ncut, Ncut + 1), repeat=2)
                   if j > (0, 0)], dtype=float)
    thresh = C / np.sqrt((js ** 2).sum(axis=1)) ** (2 + nu)
    nblocks = -(-samples // _BLOCK)
    children = np.random.SeedSequence(seed).spawn(nblocks)
    bad = 0
    for b, child in enumerate(children):
        m = min(_BLOCK, samples - b * _BLOCK)
        pts = np.random.default_rng(child).uniform(-N, N, size=(m, 2))
        for lo in range(0, m, 512):
            chunk = pts[lo:lo + 512]
            dots = np.abs(chunk @ js.T)
            bad += int(np.count_nonzero(np.any(dots < thresh[None, :], axis=1)))
    return bad / samples, bound, sigma
