"""Killed transition kernels, potential function, Green function, hitting laws.

Everything here is exact dynamic programming or exact linear algebra on a
finite lattice window, with truncation accounted for explicitly: every table
row carries the probability mass that was killed and the mass that exited the
window (the "leaked" mass, an upper bound on what the truncation can change).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_banded, solve_toeplitz

from .errors import NoConvergence, NoStabilization, OutOfRange, WindowTooSmall
from .laws import IncrementLaw
from .quadutil import richardson_sqrt

# ---------------------------------------------------------------------------
# kill sets and windows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KillSet:
    """Either a finite set of lattice points or the half line (-inf, level]."""

    kind: str                      # "finite" | "halfline_le"
    points: frozenset[int] = frozenset()
    level: int = 0

    @staticmethod
    def finite(points) -> "KillSet":
        return KillSet(kind="finite", points=frozenset(int(p) for p in points))

    @staticmethod
    def halfline_le(level: int) -> "KillSet":
        return KillSet(kind="halfline_le", level=int(level))

    def mask(self, grid: np.ndarray) -> np.ndarray:
        if self.kind == "finite":
            return np.isin(grid, sorted(self.points))
        return grid <= self.level

    def reflected(self) -> "KillSet":
        if self.kind == "finite":
            return KillSet.finite({-p for p in self.points})
        raise ValueError("reflected half-line kill sets are not supported")

    def describe(self) -> str:
        if self.kind == "finite":
            return "{" + ",".join(str(p) for p in sorted(self.points)) + "}"
        return f"(-inf,{self.level}]"


def auto_window(law: IncrementLaw, kill: KillSet, n: int, anchors, M: float = 4.0):
    """Window [-(M+3)*lam_n - span, (M+3)*lam_n + span] extended to cover anchors."""
    lam = math.sqrt(law.sigma2 * max(n, 1)) if math.isfinite(law.sigma2) else None
    if lam is None:
        raise ValueError("auto window needs a finite-variance law")
    span = int(max(self_span(law), 4))
    lo = -int(math.ceil((M + 3.0) * lam)) - span
    hi = int(math.ceil((M + 3.0) * lam)) + span
    pts = list(anchors)
    if kill.kind == "finite":
        pts.extend(kill.points)
    lo = min(lo, min(pts) - span)
    hi = max(hi, max(pts) + span)
    return int(lo), int(hi)


def self_span(law: IncrementLaw) -> int:
    keys = sorted(law.pmf_core)
    span = (keys[-1] - keys[0]) if keys else 0
    if law.left_tail is not None:
        span = max(span, law.left_tail.w0 + 2)
    if law.right_tail is not None:
        span = max(span, law.right_tail.w0 + 2)
    return span


# ---------------------------------------------------------------------------
# one-step kernel on a window
# ---------------------------------------------------------------------------


class StepKernel:
    """One-step pmf restricted to a window, plus analytic out-of-window masses."""

    def __init__(self, law: IncrementLaw, lo: int, hi: int):
        self.law = law
        self.lo = int(lo)
        self.hi = int(hi)
        W = self.hi - self.lo + 1
        d_lo = self.lo - self.hi
        d_hi = self.hi - self.lo
        if law.left_tail is None:
            d_lo = max(d_lo, min(law.pmf_core))
        if law.right_tail is None:
            d_hi = min(d_hi, max(law.pmf_core))
        self.d_lo = d_lo
        self.d_hi = d_hi
        self.kern = law.pmf(np.arange(d_lo, d_hi + 1))
        grid = np.arange(self.lo, self.hi + 1)
        self.grid = grid
        # mass leaving the window in one step, from each source point
        self.below_out = law.cdf_leq(self.lo - 1 - grid)
        self.above_out = law.sf_geq(self.hi + 1 - grid)

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1

    def convolve_rows(self, rows: np.ndarray) -> np.ndarray:
        """Propagate (S, W) mass rows one step; arrivals outside the window dropped."""
        rows = np.atleast_2d(rows)
        W = self.width
        out = np.empty_like(rows)
        start = -self.d_lo
        for i in range(rows.shape[0]):
            full = np.convolve(rows[i], self.kern)
            out[i] = full[start : start + W]
        return out

    def correlate_rows(self, rows: np.ndarray) -> np.ndarray:
        """Adjoint propagation: out(z) = sum_d kern(d) rows(z + d)."""
        rows = np.atleast_2d(rows)
        W = self.width
        out = np.empty_like(rows)
        start = self.d_hi
        rev = self.kern[::-1]
        for i in range(rows.shape[0]):
            full = np.convolve(rows[i], rev)
            out[i] = full[start : start + W]
        return out


# ---------------------------------------------------------------------------
# kernel tables (full, unscaled; intended for moderate n * W^2)
# ---------------------------------------------------------------------------


@dataclass
class KernelTable:
    """Dense p^k_B(x, y) for selected start rows x, all k = 0..n, y in the window."""

    law: IncrementLaw
    kill: KillSet
    n: int
    lo: int
    hi: int
    starts: np.ndarray            # (S,)
    probs: np.ndarray             # (n+1, S, W)
    killed: np.ndarray            # (n+1, S) cumulative killed mass
    leaked: np.ndarray            # (n+1, S) cumulative out-of-window mass

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def _sidx(self, x: int) -> int:
        i = int(np.searchsorted(self.starts, x))
        if i >= self.starts.size or self.starts[i] != x:
            raise OutOfRange(f"start {x} not tabulated")
        return i

    def _yidx(self, y: int) -> int:
        if not (self.lo <= y <= self.hi):
            raise OutOfRange(f"state {y} outside window [{self.lo},{self.hi}]")
        return int(y - self.lo)

    def value(self, k: int, x: int, y: int) -> float:
        return float(self.probs[k, self._sidx(x), self._yidx(y)])

    def row(self, k: int, x: int) -> np.ndarray:
        return self.probs[k, self._sidx(x)]

    def row_sum_defect(self) -> float:
        """max over (k, x) of |in-window mass + killed + leaked - 1|."""
        tot = self.probs.sum(axis=2) + self.killed + self.leaked
        return float(np.max(np.abs(tot - 1.0)))

    def iter_entries(self, threshold: float = 0.0):
        for k in range(self.n + 1):
            for i, x in enumerate(self.starts):
                row = self.probs[k, i]
                for j in np.nonzero(row > threshold)[0]:
                    yield k, int(x), int(self.lo + j), float(row[j])


MEMORY_BUDGET_BYTES = 1 << 29


def killed_transition_table(
    law: IncrementLaw,
    kill: KillSet | set | frozenset,
    n: int,
    window=None,
    starts=None,
    M: float = 4.0,
    leak_bound: float | None = None,
) -> KernelTable:
    """Exact killed-kernel table by forward DP, one row per start point.

    `window` is either None (auto policy), or an explicit (lo, hi) pair.
    Raises WindowTooSmall when `leak_bound` is given and any row leaks more.
    """
    if not isinstance(kill, KillSet):
        kill = KillSet.finite(kill)
    if n < 0:
        raise ValueError("horizon must be >= 0")
    anchors = list(starts) if starts is not None else []
    if window is None:
        lo, hi = auto_window(law, kill, n, anchors or [0], M=M)
    else:
        lo, hi = int(window[0]), int(window[1])
    if starts is None:
        starts = np.arange(lo, hi + 1)
    else:
        starts = np.asarray(sorted(int(s) for s in starts), dtype=np.int64)
    if np.any((starts < lo) | (starts > hi)):
        raise OutOfRange("every start must lie inside the window")
    W = hi - lo + 1
    S = starts.size
    need = (n + 1) * S * W * 8
    if need > MEMORY_BUDGET_BYTES:
        raise ValueError(
            f"table of {need/1e9:.2f} GB exceeds budget; use the vector DP instead"
        )
    step = StepKernel(law, lo, hi)
    kmask = kill.mask(step.grid)
    probs = np.zeros((n + 1, S, W))
    killed = np.zeros((n + 1, S))
    leaked = np.zeros((n + 1, S))
    cur = np.zeros((S, W))
    cur[np.arange(S), starts - lo] = 1.0  # p^0 = identity, even on the kill set
    probs[0] = cur
    for k in range(1, n + 1):
        prev_mass = cur.sum(axis=1)
        nxt = step.convolve_rows(cur)
        kill_inc = nxt[:, kmask].sum(axis=1)
        nxt[:, kmask] = 0.0
        leak_inc = prev_mass - nxt.sum(axis=1) - kill_inc
        killed[k] = killed[k - 1] + kill_inc
        leaked[k] = leaked[k - 1] + np.maximum(leak_inc, 0.0)
        probs[k] = nxt
        cur = nxt
    table = KernelTable(
        law=law, kill=kill, n=n, lo=lo, hi=hi, starts=starts,
        probs=probs, killed=killed, leaked=leaked,
    )
    if leak_bound is not None and float(table.leaked[n].max()) > leak_bound:
        raise WindowTooSmall(
            f"leaked mass {table.leaked[n].max():.3e} exceeds bound {leak_bound:.3e}"
        )
    return table


# ---------------------------------------------------------------------------
# scaled vector DP (single anchor), used by the bridge engine
# ---------------------------------------------------------------------------


@dataclass
class VectorTable:
    """p^k(anchor, .) or p^k(., anchor) for k = 0..n, scaled per step.

    rows[k] * exp(logscale[k]) is the actual probability vector.
    """

    law_hash: str
    kill: KillSet
    direction: str                # "forward" | "backward"
    anchor: int
    n: int
    lo: int
    hi: int
    rows: np.ndarray              # (n+1, W), max-normalized
    logscale: np.ndarray          # (n+1,)
    killed: np.ndarray            # (n+1,) absolute
    leaked: np.ndarray            # (n+1,) absolute

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def value_log(self, k: int, y: int) -> float:
        j = y - self.lo
        v = self.rows[k, j]
        if v <= 0.0:
            return -math.inf
        return math.log(v) + self.logscale[k]

    def value(self, k: int, y: int) -> float:
        lv = self.value_log(k, y)
        return 0.0 if lv == -math.inf else math.exp(lv)

    def dense(self, k: int) -> np.ndarray:
        return self.rows[k] * math.exp(self.logscale[k])


def forward_table(
    law: IncrementLaw, kill: KillSet, start: int, n: int, lo: int, hi: int
) -> VectorTable:
    """Scaled forward DP: rows[k] ~ p^k_B(start, .) on the window."""
    step = StepKernel(law, lo, hi)
    kmask = kill.mask(step.grid)
    W = hi - lo + 1
    rows = np.zeros((n + 1, W))
    logscale = np.zeros(n + 1)
    killed = np.zeros(n + 1)
    leaked = np.zeros(n + 1)
    cur = np.zeros(W)
    if not (lo <= start <= hi):
        raise OutOfRange("start outside window")
    cur[start - lo] = 1.0
    rows[0] = cur
    scale = 0.0
    for k in range(1, n + 1):
        prev_mass = cur.sum()
        nxt = step.convolve_rows(cur[None, :])[0]
        kill_inc = nxt[kmask].sum()
        nxt[kmask] = 0.0
        leak_inc = max(prev_mass - nxt.sum() - kill_inc, 0.0)
        amp = math.exp(scale)
        killed[k] = killed[k - 1] + kill_inc * amp
        leaked[k] = leaked[k - 1] + leak_inc * amp
        m = nxt.max()
        if m > 0.0:
            nxt /= m
            scale += math.log(m)
        else:
            scale = -math.inf
        rows[k] = nxt
        logscale[k] = scale
        cur = rows[k]
    return VectorTable(
        law_hash=law.content_hash, kill=kill, direction="forward", anchor=start,
        n=n, lo=lo, hi=hi, rows=rows, logscale=logscale, killed=killed, leaked=leaked,
    )


def backward_table(
    law: IncrementLaw, kill: KillSet, target: int, n: int, lo: int, hi: int
) -> VectorTable:
    """Scaled backward DP: rows[k][z] ~ p^k_B(z, target) for z outside the kill set.

    Uses the reversal identity p^k_B(z, t) = p^k_{-B}(-t, -z) (same step law,
    negated states), so backward tables are forward tables on the mirrored
    window and the identity holds bitwise by construction.  Values at z inside
    the kill set are "start on the kill set" kernels and must not be used.
    """
    tab = forward_table(law, kill.reflected(), -target, n, -hi, -lo)
    return VectorTable(
        law_hash=law.content_hash, kill=kill, direction="backward", anchor=target,
        n=n, lo=lo, hi=hi, rows=tab.rows[:, ::-1].copy(), logscale=tab.logscale,
        killed=tab.killed, leaked=tab.leaked,
    )


def unkilled_pmf_rows(law: IncrementLaw, n: int, lo: int, hi: int, track=()):
    """p^k(0, .) for k <= n on a window; returns the tracked columns per step.

    Used by the series oracles for the potential and Green functions.
    """
    step = StepKernel(law, lo, hi)
    W = hi - lo + 1
    cur = np.zeros(W)
    cur[-lo] = 1.0
    track = np.asarray(list(track), dtype=np.int64)
    out = np.zeros((n + 1, track.size))
    out[0] = cur[track - lo]
    for k in range(1, n + 1):
        cur = step.convolve_rows(cur[None, :])[0]
        out[k] = cur[track - lo]
    return out


# ---------------------------------------------------------------------------
# potential function
# ---------------------------------------------------------------------------


@dataclass
class PotentialData:
    """Potential function a(x) on [-radius, radius] plus derived quantities."""

    law: IncrementLaw
    radius: int
    a_values: np.ndarray          # a(x) for x = -radius..radius
    tol: float                    # achieved cross-check accuracy

    def _idx(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if np.any(np.abs(x) > self.radius):
            raise OutOfRange(f"potential tabulated only on |x| <= {self.radius}")
        return x + self.radius

    def a(self, x):
        out = self.a_values[self._idx(x)]
        return float(out) if np.ndim(x) == 0 else out

    def a_dagger(self, x):
        x = np.asarray(x)
        out = self.a_values[self._idx(x)] + (x == 0)
        return float(out) if x.ndim == 0 else out

    def lam(self, x):
        """a(x) - x / sigma^2, the bounded-on-the-right harmonic part."""
        x = np.asarray(x)
        out = self.a_values[self._idx(x)] - x / self.law.sigma2
        return float(out) if x.ndim == 0 else out


def _phi_coefficients(law: IncrementLaw, m_lo: int, m_hi: int) -> np.ndarray:
    """phi(m) = P[Z >= m+1] for m >= 0 and -P[Z <= m] for m < 0."""
    m = np.arange(m_lo, m_hi + 1)
    out = np.where(m >= 0, law.sf_geq(m + 1), -law.cdf_leq(m))
    return out


def _phi_first_moment_above(law: IncrementLaw, k0: int) -> float:
    """sum_{m >= k0} phi(m) for k0 >= 0, i.e. E[(Z - k0)^+] summed analytically."""
    acc = 0.0
    for x, p in law.pmf_core.items():
        if x > k0:
            acc += p * (x - k0)
    t = law.right_tail
    if t is not None:
        lo = max(t.w0, k0 + 1)
        acc += t.coef * t.sv.c * (
            _tail_m1(t, lo) - k0 * _tail_m0(t, lo)
        )
    return acc


def _phi_first_moment_below(law: IncrementLaw, k0: int) -> float:
    """sum_{m <= k0} |phi(m)| for k0 < 0, i.e. E[(k0 - Z + ... )] analytically."""
    acc = 0.0
    for x, p in law.pmf_core.items():
        if x <= k0:
            acc += p * (k0 - x + 1)
    t = law.left_tail
    if t is not None:
        lo = max(t.w0, -k0)
        acc += t.coef * t.sv.c * (
            _tail_m1(t, lo) + (k0 + 1) * _tail_m0(t, lo)
        )
    return acc


def _tail_m0(t, lo):
    from .quadutil import power_log_tail_sum

    return power_log_tail_sum(t.index + 1.0, t.sv.gamma, lo)


def _tail_m1(t, lo):
    from .quadutil import power_log_tail_sum

    return power_log_tail_sum(t.index, t.sv.gamma, lo)


def potential_function(
    law: IncrementLaw,
    radius: int,
    tol: float = 1e-8,
    pad: int | None = None,
    cross_check: bool = True,
) -> PotentialData:
    """Potential function by an exact linear solve on first differences.

    The harmonicity system with unit defect at the origin is written for
    d(x) = a(x+1) - a(x); beyond a padded window d is pinned to its known
    limits +-1/sigma^2, which removes the free additive constants.  The
    resulting square system is Toeplitz and solved by Levinson recursion.
    An independent partial-sum oracle of the defining series (accelerated in
    n^-1/2) cross-checks a handful of points; disagreement beyond `tol`
    raises NoConvergence.
    """
    if not math.isfinite(law.sigma2):
        raise ValueError("potential machinery requires finite variance")
    if pad is None:
        pad = max(40, 6 * self_span(law), radius // 2)
    R = radius + pad
    sig2 = law.sigma2
    # Toeplitz system: rows x = -R..R-1, unknowns d(j), j = -R..R-1
    col = _phi_coefficients(law, -2 * R + 1, 0)[::-1]     # phi(-i), i = 0..2R-1
    row = _phi_coefficients(law, 0, 2 * R - 1)            # phi(l), l = 0..2R-1
    idx_x = np.arange(-R, R)
    rhs = np.where(idx_x == 0, 1.0, 0.0).astype(float)
    # substituted tails: d(j) = +1/sig2 for j >= R, -1/sig2 for j < -R
    above = np.array([_phi_first_moment_above(law, R - x) for x in idx_x])
    below = np.array([_phi_first_moment_below(law, -R - 1 - x) for x in idx_x])
    rhs -= (above + below) / sig2
    d = solve_toeplitz((col, row), rhs)
    a = np.zeros(2 * R + 1)
    a[R + 1 :] = np.cumsum(d[R:])
    a[:R] = -np.cumsum(d[:R][::-1])[::-1]
    a_vals = a[R - radius : R + radius + 1]
    achieved = 0.0
    if cross_check:
        # the oracle expansion needs n >> x^2, so the comparison stays at small x
        xs = sorted({1, -1, min(5, radius), -min(5, radius), min(10, radius)})
        xs = [x for x in xs if abs(x) <= radius and x != 0]
        worst = 0.0
        for x in xs:
            oracle = potential_series_oracle(law, x)
            worst = max(worst, abs(oracle - a_vals[radius + x]))
        achieved = worst
        if worst > tol:
            raise NoConvergence(
                f"potential solve and series oracle disagree by {worst:.3e} > {tol:.1e}"
            )
    return PotentialData(law=law, radius=radius, a_values=a_vals, tol=achieved)


def potential_series_oracle(
    law: IncrementLaw, x: int, n0: int = 1024, levels: int = 7
) -> float:
    """a(x) from partial sums of sum_k [p^k(0) - p^k(-x)].

    Partial sums are averaged over adjacent horizons (harmless for aperiodic
    walks, removes the parity oscillation for periodic ones) and then
    accelerated by Richardson extrapolation in powers of n^-1/2; the raw
    series converges far too slowly to be summed directly.
    """
    n_max = n0 * (1 << (levels - 1)) + 1
    halfw = int(10.0 * math.sqrt(law.sigma2 * n_max)) + 4 * self_span(law)
    cols = unkilled_pmf_rows(law, n_max, -halfw, halfw, track=(0, -x))
    terms = cols[:, 0] - cols[:, 1]
    csum = np.cumsum(terms)
    pts = []
    for j in range(levels):
        n = n0 * (1 << j)
        pts.append(0.5 * (csum[n] + csum[n - 1]))
    return richardson_sqrt(pts)


# ---------------------------------------------------------------------------
# Green function of the walk killed at the origin
# ---------------------------------------------------------------------------


def green_function_origin(pot: PotentialData, x: int, y: int) -> float:
    """Expected visits to y before hitting 0, from x: a+(x) + a(-y) - a(x-y)."""
    return float(pot.a_dagger(x) + pot.a(-y) - pot.a(x - y))


def green_series_oracle(
    law: IncrementLaw, x: int, y: int, n0: int = 256, levels: int = 4
) -> float:
    """sum_k p^k_{0}(x, y) by killed DP partial sums, Richardson-accelerated."""
    n_max = n0 * (1 << (levels - 1)) + 1
    halfw = int(8.0 * math.sqrt(law.sigma2 * n_max)) + 4 * self_span(law)
    kill = KillSet.finite({0})
    step = StepKernel(law, -halfw, halfw)
    kmask = kill.mask(step.grid)
    cur = np.zeros(step.width)
    cur[x + halfw] = 1.0
    yj = y + halfw
    vals = np.zeros(n_max + 1)
    vals[0] = cur[yj]
    for k in range(1, n_max + 1):
        cur = step.convolve_rows(cur[None, :])[0]
        cur[kmask] = 0.0
        vals[k] = cur[yj]
    csum = np.cumsum(vals)
    pts = [0.5 * (csum[n0 * (1 << j)] + csum[n0 * (1 << j) - 1]) for j in range(levels)]
    return richardson_sqrt(pts)


# ---------------------------------------------------------------------------
# hitting distribution of the negative half line
# ---------------------------------------------------------------------------


@dataclass
class HittingLaw:
    """Law of the first entry point of (-inf, 0], plus bookkeeping."""

    source: int | str             # start point, or "+inf"
    y_grid: np.ndarray            # y = y_floor..0
    probs: np.ndarray             # H(y) on y_grid
    far_mass: float               # mass entering below y_floor (aggregated)
    stabilization_tv: float | None = None
    time_resolved: dict | None = None

    def total(self) -> float:
        return float(self.probs.sum() + self.far_mass)

    def prob(self, y: int) -> float:
        j = y - int(self.y_grid[0])
        if not (0 <= j < self.y_grid.size):
            raise OutOfRange(f"{y} below the tabulated floor")
        return float(self.probs[j])

    def expectation(self, values: np.ndarray) -> float:
        """sum_y H(y) * values(y) over the tabulated grid (far mass ignored)."""
        return float(self.probs @ values)


def _visits_vectors(law: IncrementLaw, starts, R: int) -> np.ndarray:
    """Green function of the walk killed on (-inf,0]: v[i, w] = g(starts[i], w).

    Linear system on w = 1..R with the constant-tail closure v(w > R) = v(R);
    banded solve when the law has bounded support, dense otherwise.
    """
    grid = np.arange(1, R + 1)
    lo_w, hi_w = 1, R
    rhs = np.zeros((R, len(starts)))
    for i, x in enumerate(starts):
        if not (1 <= x <= R):
            raise OutOfRange("hitting start must lie in [1, R]")
        rhs[x - 1, i] = 1.0
    fold = law.cdf_leq(grid - R - 1)  # mass arriving at z from sources above R
    if law.left_tail is None and law.right_tail is None:
        span = max(abs(min(law.pmf_core)), abs(max(law.pmf_core)))
        ab = np.zeros((2 * span + 1, R))
        for off in range(-span, span + 1):
            pv = law.pmf(-off)
            band = np.full(R, -pv)
            ab[span + off] = band
        ab[span] += 1.0
        # fold the above-R closure into the last column
        band_mat = None
        # build banded matrix in solve_banded layout: ab[u + i - j, j] = M[i, j]
        M_band = np.zeros((2 * span + 1, R))
        for d in range(-span, span + 1):
            # M[i, j] for i - j = d: coefficient -p((i+1) - (j+1)) = -p(d)
            M_band[span + d, :] = -law.pmf(d)
        M_band[span, :] += 1.0
        # column R-1 (w = R): subtract fold(z) at rows z with |z - R| <= span
        for z in range(max(1, R - span), R + 1):
            d = (z - 1) - (R - 1)
            if -span <= d <= span:
                M_band[span + d, R - 1] -= fold[z - 1]
        sol = solve_banded((span, span), M_band, rhs)
    else:
        offs = grid[:, None] - grid[None, :]
        M = -law.pmf(offs.ravel()).reshape(R, R)
        M[np.arange(R), np.arange(R)] += 1.0
        M[:, R - 1] -= fold
        sol = np.linalg.solve(M, rhs)
    return sol.T


def hitting_distribution_halfline(
    law: IncrementLaw,
    source,
    y_floor: int | None = None,
    R: int | None = None,
    stab_tol: float = 1e-3,
    time_horizon: int | None = None,
) -> HittingLaw:
    """First-entry law of (-inf, 0] from `source` (an integer >= 1 or "+inf").

    Finite sources use an exact visits solve; the "started at infinity" law is
    the stabilized limit, accepted when the total-variation gap between the
    laws from x* and 2 x* falls below `stab_tol`.
    """
    span = self_span(law)
    if source == "+inf" or source == math.inf:
        x_star = max(48 * span, 192)
        starts = [x_star, 2 * x_star]
    else:
        x_star = int(source)
        if x_star < 1:
            raise OutOfRange("hitting source must be >= 1")
        starts = [x_star]
    if R is None:
        R = max(4 * max(starts), max(starts) + 20 * span, 256)
        if law.left_tail is not None:
            R = min(R, max(2 * max(starts), 1600))
    if y_floor is None:
        y_floor = -(4 * span + 64)
        if law.left_tail is not None:
            y_floor = -max(512, 8 * span)
    v = _visits_vectors(law, starts, R)
    y = np.arange(y_floor, 1)
    w = np.arange(1, R + 1)
    # H(y) = sum_w v(w) p(y - w) (+ closure contribution from w > R)
    pmat = law.pmf((y[:, None] - w[None, :]).ravel()).reshape(y.size, w.size)
    closure = law.cdf_leq(y - R - 1)  # sum_{w > R} p(y - w)
    laws = []
    for i in range(len(starts)):
        H = pmat @ v[i] + closure * v[i, -1]
        far = float(v[i] @ law.cdf_leq(y_floor - 1 - w)) + float(
            v[i, -1]
        ) * 0.0  # closure far mass negligible by construction
        laws.append((H, far))
    tv = None
    if len(laws) == 2:
        tv = 0.5 * float(np.abs(laws[0][0] - laws[1][0]).sum()) + 0.5 * abs(
            laws[0][1] - laws[1][1]
        )
        if tv > stab_tol:
            raise NoStabilization(
                f"hitting law from {starts[0]} and {starts[1]} differ by TV {tv:.2e}"
            )
        H, far = laws[1]
        src = "+inf"
    else:
        H, far = laws[0]
        src = starts[0]
    tr = None
    if time_horizon is not None:
        tr = _time_resolved_entry(law, starts[-1], y, time_horizon)
    return HittingLaw(
        source=src, y_grid=y, probs=H, far_mass=far,
        stabilization_tv=tv, time_resolved=tr,
    )


def _time_resolved_entry(law, x, y_grid, horizon):
    """h_x(n, y): space-time law of the first entry into (-inf, 0] (DP in time)."""
    span = self_span(law)
    hi = x + 20 * span + int(6 * math.sqrt(law.sigma2 * horizon)) if math.isfinite(
        law.sigma2
    ) else x + 40 * span
    step = StepKernel(law, 1, hi)
    cur = np.zeros(step.width)
    cur[x - 1] = 1.0
    w = np.arange(1, hi + 1)
    out = np.zeros((horizon + 1, y_grid.size))
    pmat = law.pmf((y_grid[:, None] - w[None, :]).ravel()).reshape(y_grid.size, w.size)
    for k in range(1, horizon + 1):
        out[k] = pmat @ cur
        cur = step.convolve_rows(cur[None, :])[0]
        neg = step.grid <= 0
        cur[neg] = 0.0
    return {"h": out, "y_grid": y_grid.copy()}


# ---------------------------------------------------------------------------
# the harmonic identity for lambda(x) = a(x) - x / sigma^2
# ---------------------------------------------------------------------------


@dataclass
class LambdaIdentityReport:
    x_values: list[int]
    residuals: list[float]
    limit_estimate: float | None    # stabilized value of sum_z H^inf(-z) lam(-z)
    limit_diverges: bool


def lambda_identity_check(
    law: IncrementLaw,
    x_list,
    pot: PotentialData | None = None,
    hit_kwargs: dict | None = None,
) -> LambdaIdentityReport:
    """Residuals |E[lam(entry point)] - lam(x)| plus the x -> inf limit diagnostics.

    The limit series converges exactly when the left third moment is finite;
    for heavier tails the partial sums grow without bound and the report flags
    divergence instead of a value.
    """
    hit_kwargs = dict(hit_kwargs or {})
    x_list = sorted(int(x) for x in x_list)
    if pot is None:
        rad = max(256, 4 * max(x_list), -hit_kwargs.get("y_floor", -256))
        pot = potential_function(law, rad, cross_check=False)
    residuals = []
    for x in x_list:
        h = hitting_distribution_halfline(law, x, **hit_kwargs)
        lam_y = pot.lam(h.y_grid)
        resid = abs(h.expectation(lam_y) - pot.lam(x))
        residuals.append(float(resid))
    diverges = math.isinf(law.third_abs_left)
    limit = None
    if not diverges:
        hinf = hitting_distribution_halfline(law, "+inf", **hit_kwargs)
        limit = float(hinf.expectation(pot.lam(hinf.y_grid)))
    return LambdaIdentityReport(
        x_values=x_list, residuals=residuals,
        limit_estimate=limit, limit_diverges=diverges,
    )
