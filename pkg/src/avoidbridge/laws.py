"""Integer increment laws: finite-support, regularly varying left tail, stable domain.

A law is a mean-zero distribution on the integers given by a finite explicit
part plus optional parametric power-law tails.  Tails are never tabulated to a
cutoff when masses or moments are computed: those come from analytic series
sums, so the DP and mean-balancing layers see exact numbers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    AlphaOutOfRange,
    BetaOutOfRange,
    CannotBalanceMean,
    LeftTailTooHeavy,
    NonzeroMean,
    NotNormalized,
    Reducible,
)
from .quadutil import LogPower, as_log_power, power_log_tail_sum, tail_sum_converges

MASS_TOL = 1e-12
_TAIL_TABLE_RESIDUAL = 1e-12
_TAIL_TABLE_CAP = 1 << 22


@dataclass(frozen=True)
class TailSpec:
    """One parametric tail: pmf(side * w) = coef * sv(w) * w**-(index+1) for w >= w0."""

    index: float        # regular-variation index of the tail function F
    sv: LogPower        # slowly varying proxy
    w0: int             # first lattice point governed by the tail
    coef: float         # overall coefficient, fixed by mass/mean balancing

    def pmf_at(self, w):
        """Probability of a jump of magnitude w (w >= w0) on this side."""
        w = np.asarray(w, dtype=float)
        out = self.coef * self.sv(w) * w ** (-self.index - 1.0)
        return float(out) if out.ndim == 0 else out

    def moment(self, k: int) -> float:
        """sum_{w>=w0} w**k * pmf(w); +inf when divergent."""
        s = self.index + 1.0 - k
        if not tail_sum_converges(s, self.sv.gamma):
            return math.inf
        return self.coef * self.sv.c * power_log_tail_sum(s, self.sv.gamma, self.w0)

    def mass_from(self, w: int) -> float:
        """sum_{v >= w} pmf(v) for w >= w0, computed analytically."""
        w = max(int(w), self.w0)
        return self.coef * self.sv.c * power_log_tail_sum(
            self.index + 1.0, self.sv.gamma, w
        )

    def key(self):
        return (self.index, self.sv.key(), self.w0, self.coef)


class _AliasTable:
    """Vose alias sampler over a finite weight vector (exact, O(1) per draw)."""

    def __init__(self, weights: np.ndarray):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0):
            raise ValueError("alias table needs a nonempty nonnegative weight vector")
        n = w.size
        p = w * (n / w.sum())
        alias = np.zeros(n, dtype=np.int64)
        prob = np.ones(n, dtype=float)
        small = [i for i in range(n) if p[i] < 1.0]
        large = [i for i in range(n) if p[i] >= 1.0]
        p = p.copy()
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = p[s]
            alias[s] = g
            p[g] = (p[g] + p[s]) - 1.0
            (small if p[g] < 1.0 else large).append(g)
        for rest in (small, large):
            for i in rest:
                prob[i] = 1.0
                alias[i] = i
        self.prob = prob
        self.alias = alias

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in [0,1) to column indices (index and coin share one uniform)."""
        n = self.prob.size
        scaled = u * n
        idx = np.minimum(scaled.astype(np.int64), n - 1)
        coin = scaled - idx
        take_alias = coin >= self.prob[idx]
        return np.where(take_alias, self.alias[idx], idx)


@dataclass(frozen=True, eq=False)
class IncrementLaw:
    """A validated mean-zero integer step distribution."""

    pmf_core: dict[int, float]
    left_tail: TailSpec | None = None
    right_tail: TailSpec | None = None
    sigma2: float = 0.0
    mean: float = 0.0
    aperiodic: bool = True
    irreducible: bool = True
    can_overshoot_down: bool = False
    third_abs_left: float = 0.0     # E[|S1|^3; S1 < 0], +inf when divergent
    name: str = ""

    # ---- derived tables -------------------------------------------------

    @cached_property
    def _core_keys(self) -> np.ndarray:
        return np.array(sorted(self.pmf_core), dtype=np.int64)

    @cached_property
    def _core_probs(self) -> np.ndarray:
        return np.array([self.pmf_core[k] for k in self._core_keys], dtype=float)

    @cached_property
    def _core_cumsum(self) -> np.ndarray:
        return np.cumsum(self._core_probs)

    @cached_property
    def core_mass(self) -> float:
        return float(math.fsum(self.pmf_core.values()))

    @cached_property
    def left_tail_mass(self) -> float:
        return self.left_tail.moment(0) if self.left_tail else 0.0

    @cached_property
    def right_tail_mass(self) -> float:
        return self.right_tail.moment(0) if self.right_tail else 0.0

    @cached_property
    def _alias(self) -> _AliasTable:
        return _AliasTable(self._core_probs)

    def _tail_cumulative(self, tail: TailSpec) -> tuple[np.ndarray, int]:
        """Cumulative pmf table for one tail, long enough to leave <1e-12 residual."""
        total = tail.moment(0)
        length = 1 << 12
        while True:
            w = np.arange(tail.w0, tail.w0 + length, dtype=float)
            cum = np.cumsum(tail.pmf_at(w))
            if total - cum[-1] < _TAIL_TABLE_RESIDUAL * max(total, 1.0) or length >= _TAIL_TABLE_CAP:
                return cum, tail.w0
            length *= 2

    @cached_property
    def _left_cum(self):
        return self._tail_cumulative(self.left_tail) if self.left_tail else None

    @cached_property
    def _right_cum(self):
        return self._tail_cumulative(self.right_tail) if self.right_tail else None

    # ---- evaluation ------------------------------------------------------

    def pmf(self, x):
        """Exact step probability at integer offsets x (scalar or array)."""
        x = np.asarray(x, dtype=np.int64)
        out = np.zeros(x.shape if x.ndim else (1,), dtype=float)
        xf = np.atleast_1d(x)
        pos = np.searchsorted(self._core_keys, xf)
        hit = (pos < self._core_keys.size) & (self._core_keys[np.minimum(pos, self._core_keys.size - 1)] == xf)
        out[hit] = self._core_probs[pos[hit]]
        if self.left_tail is not None:
            m = xf <= -self.left_tail.w0
            out[m] += self.left_tail.pmf_at(-xf[m])
        if self.right_tail is not None:
            m = xf >= self.right_tail.w0
            out[m] += self.right_tail.pmf_at(xf[m])
        return float(out[0]) if x.ndim == 0 else out

    def _tail_mass_beyond(self, tail, cum_table, w) -> np.ndarray:
        """sum_{v>=w} tail pmf for integer w >= w0, via total minus partial sums."""
        total = tail.moment(0)
        cum, w0 = cum_table
        w = np.asarray(w, dtype=np.int64)
        out = np.empty(w.shape, dtype=float)
        idx = w - w0            # mass beyond w: total - cum[idx-1]
        inside = idx <= cum.size
        j = np.clip(idx[inside] - 1, -1, cum.size - 1)
        prev = np.where(idx[inside] <= 0, 0.0, cum[np.maximum(j, 0)])
        prev[idx[inside] <= 0] = 0.0
        out[inside] = total - prev
        if np.any(~inside):
            out[~inside] = [tail.mass_from(int(v)) for v in w[~inside]]
        return np.maximum(out, 0.0)

    def cdf_leq(self, u):
        """P[S1 <= u] for integer u, exact up to series tolerance."""
        u = np.asarray(u, dtype=np.int64)
        uf = np.atleast_1d(u)
        pos = np.searchsorted(self._core_keys, uf, side="right")
        out = np.where(pos > 0, self._core_cumsum[np.maximum(pos - 1, 0)], 0.0).astype(float)
        if self.left_tail is not None:
            w0 = self.left_tail.w0
            out = out + self.left_tail_mass
            m = uf < -w0  # subtract the part of the tail above u
            if np.any(m):
                out[m] -= self.left_tail_mass - self._tail_mass_beyond(
                    self.left_tail, self._left_cum, -uf[m]
                )
        if self.right_tail is not None:
            w0 = self.right_tail.w0
            m = uf >= w0
            if np.any(m):
                out[m] += self.right_tail_mass - self._tail_mass_beyond(
                    self.right_tail, self._right_cum, uf[m] + 1
                )
        return float(out[0]) if u.ndim == 0 else out

    def sf_geq(self, u):
        """P[S1 >= u] for integer u."""
        return self.total_mass - self.cdf_leq(np.asarray(u) - 1)

    @cached_property
    def total_mass(self) -> float:
        return self.core_mass + self.left_tail_mass + self.right_tail_mass

    def partial_third_left(self, a: float) -> float:
        """sum_{x<0} p(x) * min(|x|, a)**3, finite for every a (truncated moment)."""
        acc = 0.0
        for x, p in self.pmf_core.items():
            if x < 0:
                acc += p * min(-x, a) ** 3
        t = self.left_tail
        if t is not None:
            hi = int(math.floor(min(a, 1e7)))
            if hi >= t.w0:
                w = np.arange(t.w0, hi + 1, dtype=float)
                acc += float(np.sum(t.pmf_at(w) * np.minimum(w, a) ** 3))
            acc += a**3 * t.mass_from(max(t.w0, hi + 1))
        return acc

    # ---- sampling ---------------------------------------------------------

    def sample(self, rng: np.random.Generator, size=None):
        """Exact draws: alias table on the core, inverse CDF on the parametric tails."""
        scalar = size is None
        n = 1 if scalar else int(size)
        u = rng.random(n)
        out = np.empty(n, dtype=np.int64)
        mc = self.core_mass
        ml = self.left_tail_mass
        core = u < mc
        left = (~core) & (u < mc + ml)
        right = ~(core | left)
        if np.any(core):
            idx = self._alias.sample(u[core] / mc)
            out[core] = self._core_keys[idx]
        if np.any(left):
            cum, w0 = self._left_cum
            j = np.searchsorted(cum, u[left] - mc, side="right")
            out[left] = -(w0 + np.minimum(j, cum.size - 1))
        if np.any(right):
            cum, w0 = self._right_cum
            j = np.searchsorted(cum, u[right] - mc - ml, side="right")
            out[right] = w0 + np.minimum(j, cum.size - 1)
        return int(out[0]) if scalar else out

    # ---- structure --------------------------------------------------------

    def reflected(self) -> "IncrementLaw":
        """The law of -S1 (left and right structure swapped)."""
        return IncrementLaw(
            pmf_core={-k: v for k, v in self.pmf_core.items()},
            left_tail=self.right_tail,
            right_tail=self.left_tail,
            sigma2=self.sigma2,
            mean=-self.mean,
            aperiodic=self.aperiodic,
            irreducible=self.irreducible,
            can_overshoot_down=any(
                k > 1 for k in self.pmf_core
            ) or self.right_tail is not None,
            third_abs_left=_third_abs_right(self),
            name=self.name + "~reflected" if self.name else "",
        )

    @cached_property
    def support_bounds(self) -> tuple[float, float]:
        """(min, max) of the support; infinite on a parametric-tail side."""
        lo = -math.inf if self.left_tail else float(min(self.pmf_core))
        hi = math.inf if self.right_tail else float(max(self.pmf_core))
        return lo, hi

    @cached_property
    def definition(self) -> dict:
        d = {
            "pmf_core": {str(k): self.pmf_core[k] for k in sorted(self.pmf_core)},
            "left_tail": self.left_tail.key() if self.left_tail else None,
            "right_tail": self.right_tail.key() if self.right_tail else None,
        }
        return d

    @cached_property
    def content_hash(self) -> str:
        blob = json.dumps(self.definition, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def describe(self) -> dict:
        return {
            "name": self.name,
            "sigma2": self.sigma2,
            "mean": self.mean,
            "aperiodic": self.aperiodic,
            "irreducible": self.irreducible,
            "can_overshoot_down": self.can_overshoot_down,
            "third_abs_left": self.third_abs_left,
            "left_tail_index": self.left_tail.index if self.left_tail else None,
            "right_tail_index": self.right_tail.index if self.right_tail else None,
            "hash": self.content_hash,
        }


def _third_abs_right(law: IncrementLaw) -> float:
    acc = math.fsum(p * x**3 for x, p in law.pmf_core.items() if x > 0)
    if law.right_tail is not None:
        acc3 = law.right_tail.moment(3)
        acc = math.inf if math.isinf(acc3) else acc + acc3
    return acc


@dataclass(frozen=True)
class NormingSequence:
    """n -> lambda_n: sqrt(sigma^2 n) in variance mode, the stable norming else."""

    mode: str                       # "sqrt_variance" | "stable"
    sigma2: float = 0.0
    alpha: float = 0.0
    sv: LogPower | None = None

    def __call__(self, n) -> float:
        n = float(n)
        if self.mode == "sqrt_variance":
            return math.sqrt(self.sigma2 * n)
        # stable: solve lambda**alpha == n * L(lambda)
        from scipy.optimize import brentq

        f = lambda lam: self.alpha * math.log(lam) - math.log(n) - math.log(self.sv(lam))
        lo, hi = 1.0, max(4.0, (2.0 * n * max(self.sv(n), 1e-12)) ** (1.0 / self.alpha))
        while f(hi) < 0:
            hi *= 4.0
        while f(lo) > 0:
            lo /= 4.0
        return brentq(f, lo, hi, xtol=1e-12, rtol=1e-14)


# ---------------------------------------------------------------------------
# structural flags
# ---------------------------------------------------------------------------

def _representative_support(core_keys, left_tail, right_tail):
    sup = set(int(k) for k in core_keys)
    if left_tail is not None:
        sup.update({-left_tail.w0, -left_tail.w0 - 1})
    if right_tail is not None:
        sup.update({right_tail.w0, right_tail.w0 + 1})
    return sorted(sup)

def _return_times(support, max_n=50):
    """n <= max_n for which the n-fold sumset of the support contains 0."""
    times = []
    reachable = {0}
    bound = max_n * max(abs(s) for s in support)
    for n in range(1, max_n + 1):
        reachable = {
            r + s for r in reachable for s in support if abs(r + s) <= bound
        }
        if 0 in reachable:
            times.append(n)
    return times


def _structural_flags(core_keys, left_tail, right_tail):
    support = _representative_support(core_keys, left_tail, right_tail)
    nonzero = [s for s in support if s != 0]
    if not nonzero or all(s > 0 for s in nonzero) or all(s < 0 for s in nonzero):
        raise Reducible("support does not generate the integer lattice")
    g = 0
    for s in nonzero:
        g = math.gcd(g, abs(s))
    if g != 1:
        raise Reducible(f"support generates the sublattice {g}Z")
    times = _return_times(support)
    period = 0
    for t in times:
        period = math.gcd(period, t)
    aperiodic = period == 1
    can_down = any(s < -1 for s in support)
    return aperiodic, True, can_down


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def make_lattice_law(pmf: dict[int, float], name: str = "") -> IncrementLaw:
    """Validate a finite explicit pmf into a mean-zero lattice law."""
    clean = {}
    for k, v in pmf.items():
        kk = int(k)
        if kk != k:
            raise NotNormalized(f"support point {k!r} is not an integer")
        v = float(v)
        if v < 0:
            raise NotNormalized(f"negative probability at {kk}")
        if v > 0:
            clean[kk] = v
    if not clean:
        raise NotNormalized("empty support")
    total = math.fsum(clean.values())
    if abs(total - 1.0) > MASS_TOL:
        raise NotNormalized(f"total mass {total!r} differs from 1 by more than {MASS_TOL}")
    mean = math.fsum(x * p for x, p in clean.items())
    if abs(mean) > MASS_TOL:
        raise NonzeroMean(f"mean {mean!r} is not zero")
    aperiodic, irreducible, can_down = _structural_flags(sorted(clean), None, None)
    sigma2 = math.fsum(x * x * p for x, p in clean.items())
    third_left = math.fsum(-(x**3) * p for x, p in clean.items() if x < 0)
    return IncrementLaw(
        pmf_core=clean,
        sigma2=sigma2,
        mean=0.0,
        aperiodic=aperiodic,
        irreducible=irreducible,
        can_overshoot_down=can_down,
        third_abs_left=third_left,
        name=name,
    )


def make_heavy_tail_law(
    beta: float,
    L_minus=1.0,
    w0: int = 3,
    right_shape: dict[int, float] | None = None,
    name: str = "",
) -> IncrementLaw:
    """A law with left tail pmf(-w) = c * L_minus(w) * w**-(beta+1) for w >= w0.

    The tail shape is fixed; mass and mean balance is achieved by solving for
    the tail coefficient and a common rescaling of the finite right part, so
    the regular-variation hypothesis on the left tail holds exactly.
    """
    if not (2.0 <= beta <= 3.0):
        raise BetaOutOfRange(f"beta={beta} outside [2, 3]")
    w0 = int(w0)
    if w0 < 2:
        raise ValueError("w0 must be >= 2")
    sv = as_log_power(L_minus)
    if right_shape is None:
        right_shape = {1: 1.0, 2: 1.0}
    bad = [k for k in right_shape if int(k) < 1]
    if bad or not right_shape:
        raise CannotBalanceMean("right_shape must put mass on positive integers only")
    R0 = math.fsum(float(v) for v in right_shape.values())
    R1 = math.fsum(int(k) * float(v) for k, v in right_shape.items())
    if R0 <= 0 or R1 <= 0:
        raise CannotBalanceMean("right_shape carries no positive mean mass")
    # unit-coefficient tail sums
    T0 = sv.c * power_log_tail_sum(beta + 1.0, sv.gamma, w0)
    T1 = sv.c * power_log_tail_sum(beta, sv.gamma, w0)
    coef = 1.0 / (T0 + T1 * R0 / R1)
    scale = coef * T1 / R1
    core = {int(k): scale * float(v) for k, v in right_shape.items()}
    tail = TailSpec(index=beta, sv=sv, w0=w0, coef=coef)
    s2_exp = beta - 1.0
    if tail_sum_converges(s2_exp, sv.gamma):
        T2 = coef * sv.c * power_log_tail_sum(s2_exp, sv.gamma, w0)
        sigma2 = math.fsum(x * x * p for x, p in core.items()) + T2
    else:
        sigma2 = math.inf
    third_left = tail.moment(3)
    aperiodic, irreducible, can_down = _structural_flags(sorted(core), tail, None)
    return IncrementLaw(
        pmf_core=core,
        left_tail=tail,
        sigma2=sigma2,
        mean=0.0,
        aperiodic=aperiodic,
        irreducible=irreducible,
        can_overshoot_down=True,
        third_abs_left=third_left,
        name=name or f"heavy(beta={beta})",
    )


_LEFT_SHAPE_REACH = 1000


def make_stable_domain_law(
    alpha: float,
    L=1.0,
    left_shape: dict[int, float] | None = None,
    w0: int = 3,
    name: str = "",
) -> tuple[IncrementLaw, NormingSequence]:
    """A law in the domain of attraction of a spectrally positive stable law.

    Right tail pmf(w) = c * L(w) * w**-(alpha+1) for w >= w0; the finite left
    part is rescaled to balance the mean.  The left side must stay within
    (-1000, 0], which keeps it strictly lighter than the right tail.
    """
    if not (1.0 < alpha < 2.0):
        raise AlphaOutOfRange(f"alpha={alpha} outside (1, 2)")
    sv = as_log_power(L)
    if left_shape is None:
        left_shape = {-1: 1.0}
    keys = [int(k) for k in left_shape]
    if any(k > 0 for k in keys):
        raise CannotBalanceMean("left_shape must live on nonpositive integers")
    if any(k <= -_LEFT_SHAPE_REACH for k in keys):
        raise LeftTailTooHeavy(
            f"left_shape reaches below -{_LEFT_SHAPE_REACH}; the light part must stay local"
        )
    L0 = math.fsum(float(v) for v in left_shape.values())
    L1 = math.fsum(int(k) * float(v) for k, v in left_shape.items())
    if L1 >= 0:
        raise CannotBalanceMean("left_shape carries no negative mean mass")
    T0 = sv.c * power_log_tail_sum(alpha + 1.0, sv.gamma, w0)
    T1 = sv.c * power_log_tail_sum(alpha, sv.gamma, w0)
    coef = 1.0 / (T0 - T1 * L0 / L1)
    scale = -coef * T1 / L1
    core = {int(k): scale * float(v) for k, v in left_shape.items() if float(v) > 0}
    tail = TailSpec(index=alpha, sv=sv, w0=int(w0), coef=coef)
    aperiodic, irreducible, can_down = _structural_flags(sorted(core), None, tail)
    law = IncrementLaw(
        pmf_core=core,
        right_tail=tail,
        sigma2=math.inf,
        mean=0.0,
        aperiodic=aperiodic,
        irreducible=irreducible,
        can_overshoot_down=can_down,
        third_abs_left=math.fsum(-(x**3) * p for x, p in core.items() if x < 0),
        name=name or f"stable(alpha={alpha})",
    )
    norming = NormingSequence(mode="stable", alpha=alpha, sv=sv)
    return law, norming


def norming_for(law: IncrementLaw) -> NormingSequence:
    if not math.isfinite(law.sigma2):
        raise ValueError("variance norming requested for an infinite-variance law")
    return NormingSequence(mode="sqrt_variance", sigma2=law.sigma2)


# named presets used throughout the test batteries
def lace() -> IncrementLaw:
    return make_lattice_law(
        {-2: 1 / 6, -1: 1 / 3, 1: 1 / 3, 2: 1 / 6}, name="lace"
    )


def srw() -> IncrementLaw:
    return make_lattice_law({-1: 0.5, 1: 0.5}, name="srw")
