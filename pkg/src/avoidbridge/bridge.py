"""Exact conditional marginals and exact sequential sampling of avoiding bridges.

The conditioned object is the walk started at b_N, pinned to -c_N at time n,
and forbidden from the finite set A at every intermediate step.  Forward and
backward killed tables turn that law into explicit one-step conditionals, so
sampling is exact (within the reported window truncation), not approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .errors import NullEvent, NumericalUnderflow, OutOfRange
from .kernels import KillSet, VectorTable, auto_window, backward_table, forward_table
from .laws import IncrementLaw, NormingSequence, norming_for


@dataclass(frozen=True)
class BridgeSpec:
    """Scaled bridge problem: endpoints, horizon, avoided set, lattice window."""

    law: IncrementLaw
    A: frozenset[int]             # avoided set, original coordinates
    b: float
    c: float
    T: float
    N: int
    b_N: int
    c_N: int
    n: int
    lo: int                       # window, normalized coordinates (max A = 0)
    hi: int
    shift: int                    # original = normalized + shift
    mode: str                     # "variance" | "stable"
    lam_N: float

    @property
    def kill(self) -> KillSet:
        return KillSet.finite({a - self.shift for a in self.A})

    @property
    def start(self) -> int:
        """Start point in normalized coordinates."""
        return self.b_N - self.shift

    @property
    def target(self) -> int:
        """End point in normalized coordinates."""
        return -self.c_N - self.shift

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)


def make_bridge_spec(
    law: IncrementLaw,
    A,
    b: float,
    c: float,
    T: float,
    N: int,
    window=None,
    M: float = 4.0,
    b_N: int | None = None,
    c_N: int | None = None,
    norming: NormingSequence | None = None,
) -> BridgeSpec:
    """Assemble a bridge spec; b_N = floor(b * lam_N), c_N = floor(c * lam_N)."""
    A = frozenset(int(a) for a in A)
    if not A:
        raise ValueError("A must be nonempty")
    shift = max(A)
    if norming is None:
        norming = norming_for(law)
    lam = norming(N)
    mode = "variance" if norming.mode == "sqrt_variance" else "stable"
    if b_N is None:
        b_N = int(math.floor(b * lam))
    if c_N is None:
        c_N = int(math.floor(c * lam))
    n = int(math.floor(N * T))
    if b_N <= shift:
        raise NullEvent("start does not lie above the avoided set")
    if -c_N in A:
        raise NullEvent("endpoint lies inside the avoided set")
    kill = KillSet.finite({a - shift for a in A})
    anchors = [b_N - shift, -c_N - shift]
    if window is None:
        lo, hi = auto_window(law, kill, n, anchors, M=M)
    else:
        lo, hi = int(window[0]), int(window[1])
    return BridgeSpec(
        law=law, A=A, b=float(b), c=float(c), T=float(T), N=int(N),
        b_N=int(b_N), c_N=int(c_N), n=n, lo=lo, hi=hi, shift=shift,
        mode=mode, lam_N=float(lam),
    )


@dataclass
class BridgeTables:
    """Forward table from the start and backward table into the endpoint."""

    spec: BridgeSpec
    forward: VectorTable
    backward: VectorTable

    @cached_property
    def event_log_prob(self) -> float:
        """log p^n_A(start, target); NullEvent when the event cannot happen."""
        lv = self.forward.value_log(self.spec.n, self.spec.target)
        if lv == -math.inf:
            raise NullEvent("conditioning event has zero probability in the window")
        return lv

    def consistency_gap(self) -> float:
        """Relative gap between the forward and backward values of the event mass."""
        a = self.forward.value_log(self.spec.n, self.spec.target)
        b = self.backward.value_log(self.spec.n, self.spec.start)
        if a == -math.inf or b == -math.inf:
            return math.inf
        return abs(math.expm1(a - b))


def build_tables(spec: BridgeSpec, need_forward: bool = True) -> BridgeTables:
    kill = spec.kill
    bwd = backward_table(spec.law, kill, spec.target, spec.n, spec.lo, spec.hi)
    fwd = None
    if need_forward:
        fwd = forward_table(spec.law, kill, spec.start, spec.n, spec.lo, spec.hi)
    tabs = BridgeTables(spec=spec, forward=fwd, backward=bwd)
    if need_forward:
        tabs.event_log_prob  # force the null-event check
    else:
        if bwd.value_log(spec.n, spec.start) == -math.inf:
            raise NullEvent("conditioning event has zero probability in the window")
    return tabs


def bridge_marginal(spec: BridgeSpec, k: int, tables: BridgeTables | None = None):
    """Exact conditioned pmf of S_k: grid (original coordinates) and probabilities.

    Also returns the normalization residual |sum f_k g_{n-k} / p^n - 1|, which
    quantifies how much window truncation distorted the conditioning.
    """
    if not (0 <= k <= spec.n):
        raise OutOfRange("marginal time outside the horizon")
    if tables is None:
        tables = build_tables(spec)
    f = tables.forward
    g = tables.backward
    m = f.rows[k] * g.rows[spec.n - k]
    tot = m.sum()
    if tot <= 0.0:
        raise NullEvent("no conditioned mass at this time slice")
    log_num = math.log(tot) + f.logscale[k] + g.logscale[spec.n - k]
    resid = abs(math.expm1(log_num - tables.event_log_prob))
    pmf = m / tot
    return spec.grid + spec.shift, pmf, resid


def sample_bridges(
    spec: BridgeSpec,
    rng: np.random.Generator,
    size: int,
    tables: BridgeTables | None = None,
) -> np.ndarray:
    """Draw `size` exact bridge paths; returns (size, n+1) integer positions.

    One-step law: P[S_{k+1} = y | S_k = z] proportional to p(y - z) g_{n-k-1}(y)
    over y in the window and outside A; the backward rows are kept
    max-normalized so deep bridges never underflow.
    """
    if tables is None:
        tables = build_tables(spec, need_forward=False)
    g = tables.backward
    lo, hi, n = spec.lo, spec.hi, spec.n
    W = hi - lo + 1
    grid = spec.grid
    kill_mask = spec.kill.mask(grid)
    pmf_offsets = spec.law.pmf(np.arange(lo - hi, hi - lo + 1))
    paths = np.empty((size, n + 1), dtype=np.int64)
    cur = np.full(size, spec.start, dtype=np.int64)
    paths[:, 0] = cur
    for k in range(n):
        gnext = g.rows[n - k - 1].copy()
        gnext[kill_mask] = 0.0
        uniq, inv = np.unique(cur, return_inverse=True)
        offs = grid[None, :] - uniq[:, None] + (W - 1)
        rows = pmf_offsets[offs] * gnext[None, :]
        cum = np.cumsum(rows, axis=1)
        tot = cum[:, -1]
        if np.any(tot <= 0.0) or not np.all(np.isfinite(tot)):
            raise NumericalUnderflow(
                "one-step conditional law vanished; window too small or event null"
            )
        u = rng.random(size)
        nxt = np.empty(size, dtype=np.int64)
        for ui in range(uniq.size):
            sel = inv == ui
            j = np.searchsorted(cum[ui], u[sel] * tot[ui], side="right")
            nxt[sel] = grid[np.minimum(j, W - 1)]
        cur = nxt
        paths[:, k + 1] = cur
    return paths + spec.shift


def sample_bridge(spec: BridgeSpec, rng: np.random.Generator, tables=None):
    """Single-path convenience wrapper around sample_bridges."""
    return BridgePath(spec=spec, values=sample_bridges(spec, rng, 1, tables)[0])


@dataclass
class BridgePath:
    """One conditioned path plus its crossing statistics."""

    spec: BridgeSpec
    values: np.ndarray            # original coordinates, length n+1

    @cached_property
    def _stats(self) -> dict:
        s = batch_statistics(self.values[None, :], self.spec)
        return {k: v[0] for k, v in s.items()}

    @property
    def zeta(self) -> int:
        return int(self._stats["zeta"])

    @property
    def zeta_prime(self) -> int:
        return int(self._stats["zeta_prime"])

    @property
    def overshoot(self) -> int:
        return int(self._stats["overshoot"])

    @property
    def prejump(self) -> int:
        return int(self._stats["prejump"])

    @property
    def max_down_step(self) -> int:
        return int(self._stats["max_down_step"])

    def modulus(self, delta: float, segment: str = "full") -> float:
        out = segment_moduli(self.values[None, :], self.spec, [delta])
        return float(out[segment][0, 0])


def batch_statistics(paths: np.ndarray, spec: BridgeSpec) -> dict:
    """Crossing statistics for a batch of paths (original coordinates).

    zeta is the first k >= 1 with normalized position <= 0, zeta' the last
    k with normalized position >= 1 (zeta' = zeta - 1 when the path never
    returns above the avoided set).
    """
    v = paths - spec.shift
    S, n1 = v.shape
    neg = v[:, 1:] <= 0
    if not np.all(neg.any(axis=1)):
        raise ValueError("a path never enters the nonpositive half line")
    zeta = neg.argmax(axis=1) + 1
    pos = v >= 1
    zeta_prime = n1 - 1 - pos[:, ::-1].argmax(axis=1)
    rows = np.arange(S)
    overshoot = v[rows, zeta]
    prejump = v[rows, zeta - 1]
    max_down = (v[:, :-1] - v[:, 1:]).max(axis=1)
    return {
        "zeta": zeta,
        "zeta_prime": zeta_prime,
        "overshoot": overshoot,
        "prejump": prejump,
        "max_down_step": max_down,
        "cross_step": prejump - overshoot,
    }


def _window_ranges(x: np.ndarray, m: int) -> np.ndarray:
    """range (max - min) of x over windows [k, k+m], k = 0..n-m, per row."""
    size = m + 1
    mx = maximum_filter1d(x, size=size, axis=1, mode="nearest")
    mn = minimum_filter1d(x, size=size, axis=1, mode="nearest")
    half = size // 2
    lo = half
    hi = half + x.shape[1] - m
    return (mx - mn)[:, lo:hi]


def segment_moduli(paths: np.ndarray, spec: BridgeSpec, deltas, chunk: int = 512):
    """Node moduli Lambda_{j,k}(delta) of the scaled paths, per segment.

    Returns arrays of shape (n_paths, n_deltas) for segments "full",
    "pre" ([0, zeta-1]), "mid" ([zeta, zeta']) and "post" ([zeta', n]).
    The modulus is evaluated over path nodes within round(delta * N) steps,
    the natural discrete version for a lattice path.
    """
    deltas = list(deltas)
    S, n1 = paths.shape
    n = n1 - 1
    out = {
        seg: np.zeros((S, len(deltas))) for seg in ("full", "pre", "mid", "post")
    }
    stats = batch_statistics(paths, spec)
    zeta, zp = stats["zeta"], stats["zeta_prime"]
    x = (paths - spec.shift) / spec.lam_N
    for c0 in range(0, S, chunk):
        c1 = min(c0 + chunk, S)
        xc = x[c0:c1]
        zc = zeta[c0:c1]
        zpc = zp[c0:c1]
        rows = np.arange(c1 - c0)
        cmax = np.maximum.accumulate(xc, axis=1)
        cmin = np.minimum.accumulate(xc, axis=1)
        rmax = np.maximum.accumulate(xc[:, ::-1], axis=1)[:, ::-1]
        rmin = np.minimum.accumulate(xc[:, ::-1], axis=1)[:, ::-1]
        for di, d in enumerate(deltas):
            m = max(1, int(round(d * spec.N)))
            if m >= n1:
                rng_all = cmax[:, -1] - cmin[:, -1]
                for seg in out:
                    out[seg][c0:c1, di] = rng_all
                continue
            rw = _window_ranges(xc, m)
            pref = np.maximum.accumulate(rw, axis=1)
            suff = np.maximum.accumulate(rw[:, ::-1], axis=1)[:, ::-1]
            out["full"][c0:c1, di] = pref[:, -1]
            # pre segment [0, e], e = zeta - 1
            e = zc - 1
            short = e <= m
            pre = np.where(
                short,
                cmax[rows, np.maximum(e, 0)] - cmin[rows, np.maximum(e, 0)],
                pref[rows, np.clip(e - m, 0, rw.shape[1] - 1)],
            )
            out["pre"][c0:c1, di] = pre
            # post segment [s0, n], s0 = zeta'
            s0 = np.minimum(zpc, n)
            short = n - s0 <= m
            post = np.where(
                short,
                rmax[rows, s0] - rmin[rows, s0],
                suff[rows, np.clip(s0, 0, rw.shape[1] - 1)],
            )
            out["post"][c0:c1, di] = post
            # mid segment [zeta, zeta'] (empty when zeta' = zeta - 1)
            a = zc
            bnd = zpc - m
            valid = bnd >= a
            mid = np.zeros(c1 - c0)
            if np.any(valid):
                k_idx = np.arange(rw.shape[1])
                mask = (k_idx[None, :] >= a[:, None]) & (k_idx[None, :] <= bnd[:, None])
                mid_vals = np.where(mask, rw, -np.inf).max(axis=1)
                mid = np.where(valid, mid_vals, 0.0)
            iv = ~valid & (zpc >= zc)
            if np.any(iv):
                mm = np.zeros(c1 - c0)
                for i in np.nonzero(iv)[0]:
                    seg = xc[i, zc[i] : zpc[i] + 1]
                    mm[i] = seg.max() - seg.min() if seg.size else 0.0
                mid = np.where(iv, mm, mid)
            out["mid"][c0:c1, di] = mid
    return out


class ScaledPath:
    """The rescaled path: piecewise linear in variance mode, a step function in stable mode."""

    def __init__(self, path_values: np.ndarray, spec: BridgeSpec):
        self.values = np.asarray(path_values, dtype=float) - spec.shift
        self.spec = spec

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        spec = self.spec
        pos = t * spec.N
        if spec.mode == "variance":
            k = np.clip(np.floor(pos).astype(np.int64), 0, spec.n - 1)
            frac = pos - k
            out = (self.values[k] * (1 - frac) + self.values[k + 1] * frac) / spec.lam_N
        else:
            k = np.clip(np.floor(pos).astype(np.int64), 0, spec.n)
            out = self.values[k] / spec.lam_N
        return float(out) if t.ndim == 0 else out


def scaled_path(path: BridgePath | np.ndarray, spec: BridgeSpec | None = None) -> ScaledPath:
    if isinstance(path, BridgePath):
        return ScaledPath(path.values, path.spec)
    return ScaledPath(path, spec)


def brute_force_bridge_distribution(spec: BridgeSpec) -> dict[tuple, float]:
    """Exhaustive conditioned path law for small horizons and finite-support laws.

    Enumerates every admissible path and normalizes; the reference object for
    exactness tests of the sequential sampler.
    """
    law = spec.law
    if law.left_tail is not None or law.right_tail is not None:
        raise ValueError("brute force enumeration needs a finite-support law")
    steps = sorted(law.pmf_core)
    if len(steps) ** spec.n > 20_000_000:
        raise ValueError("path space too large to enumerate")
    kill = {a - spec.shift for a in spec.A}
    target = spec.target
    probs: dict[tuple, float] = {}

    def rec(pos, k, acc, trail):
        if k == spec.n:
            if pos == target:
                probs[tuple(trail)] = probs.get(tuple(trail), 0.0) + acc
            return
        # prune: unreachable endpoint
        remaining = spec.n - k
        if pos + steps[-1] * remaining < target or pos + steps[0] * remaining > target:
            return
        for s in steps:
            y = pos + s
            if y in kill:
                continue
            rec(y, k + 1, acc * law.pmf_core[s], trail + [y])

    rec(spec.start, 0, 1.0, [spec.start])
    total = sum(probs.values())
    if total <= 0:
        raise NullEvent("no admissible path")
    return {p: v / total for p, v in probs.items()}
