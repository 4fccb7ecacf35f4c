"""Closed-form and quadrature evaluation of the limit-process laws, plus samplers.

The continuous objects: Gaussian kernel, the same kernel killed at the origin,
the first-passage density rho, the creeping transit density (a Brownian piece
glued to a sign-flipped Bessel-3 bridge), and the jumping transit density in
which the crossing is governed by a power-law jump kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.special import erfc

from .errors import (
    BetaNotIntegrable,
    BetaOutOfRange,
    GridTooCoarse,
    InverseCdfFailure,
    NonpositiveTime,
    OutOfRange,
    SignPattern,
    TimeOrder,
)
from .quadutil import quad_tol, trapezoid_cdf

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# base kernels
# ---------------------------------------------------------------------------


def gauss_kernel(t, x):
    """Heat kernel: exp(-x^2 / 2t) / sqrt(2 pi t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise NonpositiveTime("gauss_kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    out = np.exp(-(x * x) / (2.0 * t)) / np.sqrt(2.0 * math.pi * t)
    return float(out) if out.ndim == 0 else out


def killed_gauss_kernel(t, x, y):
    """Transition density of Brownian motion killed at 0 (same-sign x, y).

    Evaluated as -gauss(t, y - x) * expm1(-2 x y / t), which never cancels for
    same-sign arguments (the naive difference of two Gaussians does).
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = -gauss_kernel(t, y - x) * np.expm1(-2.0 * x * y / t)
    return float(out) if out.ndim == 0 else out


def passage_density(t, x):
    """First-passage density of level x at time t: |x| / t * gauss_kernel."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise NonpositiveTime("passage_density needs t > 0")
    x = np.asarray(x, dtype=float)
    out = np.abs(x) / t * np.exp(-(x * x) / (2.0 * t)) / np.sqrt(2.0 * math.pi * t)
    return float(out) if out.ndim == 0 else out


def base_kernels(t, x, y):
    """The triple (gauss, killed gauss, passage density) at (t, x[, y])."""
    return gauss_kernel(t, x), killed_gauss_kernel(t, x, y), passage_density(t, x)


# ---------------------------------------------------------------------------
# limit-law specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LimitLawSpec:
    """Parameters of the limit bridge: endpoints b, -c, horizon T, transit mode."""

    b: float
    c: float
    T: float
    mode: str                   # "creep" | "jump"
    beta: float | None = None

    def __post_init__(self):
        if min(self.b, self.c, self.T) <= 0:
            raise ValueError("b, c, T must all be positive")
        if self.mode not in ("creep", "jump"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "jump":
            if self.beta is None:
                raise ValueError("jump mode needs a tail exponent beta")
            if self.beta >= 3.0:
                raise BetaNotIntegrable("jump kernel diverges for beta >= 3")
            if self.beta < 2.0:
                raise ValueError("beta must lie in [2, 3)")

    @cached_property
    def crossing_norm(self) -> float:
        """Total crossing weight: rho_T(b+c) in creep mode, J_T(b, -c) in jump mode."""
        if self.mode == "creep":
            return float(passage_density(self.T, self.b + self.c))
        return jump_kernel(self.T, self.b, -self.c, self.beta)


# ---------------------------------------------------------------------------
# jump kernel
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = leggauss(32)


_GL4_NODES, _GL4_WEIGHTS = leggauss(4)


def _erfc_gap(base, lo, hi):
    """erfc(base + lo) - erfc(base + hi) for hi >= lo, cancellation-free.

    Small gaps use a 4-point Gauss-Legendre rule on the defining integral
    (2/sqrt(pi)) int exp(-v^2) dv; wide gaps are safe directly.  The interval
    half-width comes from (hi - lo) alone, so two calls sharing the same
    offsets see bitwise-identical widths and their difference stays clean.
    """
    base = np.asarray(base, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    half = 0.5 * (hi - lo)
    mid = base + 0.5 * (lo + hi)
    v = mid[..., None] + half[..., None] * _GL4_NODES
    gl = (2.0 / math.sqrt(math.pi)) * half * (np.exp(-v * v) @ _GL4_WEIGHTS)
    direct = erfc(base + lo) - erfc(base + hi)
    return np.where(hi - lo < 0.5, gl, direct)


def _erfc_block(w, z, x, yy, t):
    """Time integral of the killed-kernel product, in closed form.

    int_0^t g0_s(x, w) g0_{t-s}(z, yy) ds
      = (1/2) [erfc(a_mm) - erfc(a_mp) - erfc(a_pm) + erfc(a_pp)]
    with arguments (|w-x| or w+x) + (|z-yy| or z+yy), all over sqrt(2 t);
    the two inner differences are evaluated gap-wise so the block keeps
    relative accuracy as w z -> 0.
    """
    r = 1.0 / math.sqrt(2.0 * t)
    am = np.abs(w - x) * r
    ap = (w + x) * r
    bm = np.abs(z - yy) * r
    bp = (z + yy) * r
    return 0.5 * (_erfc_gap(am, bm, bp) - _erfc_gap(ap, bm, bp))


def _jump_u_integrand(u, x, yy, t, beta):
    """(beta/2) u^-beta int_-1^1 E dv; the 1/2 Jacobian sits inside the erfc block.

    The angular integral runs over p = 1 + v on the left half and q = 1 - v on
    the right half, keeping w = u p / 2 and z = u q / 2 exact near the edges
    where one of them vanishes (the kinks w = x and z = yy are panel cuts).
    """
    u = float(u)
    if u <= 0.0:
        return 0.0
    acc = 0.0
    for left_half in (True, False):
        # panel coordinate g in [0, 1]: g = p on the left, g = q on the right
        cuts = {0.0, 1.0}
        gw = 2.0 * x / u        # w = x boundary: p = gw
        gz = 2.0 * yy / u       # z = yy boundary: q = gz
        near = gw if left_half else gz
        far = 2.0 - (gz if left_half else gw)
        for cut in (near, far):
            if 0.0 < cut < 1.0:
                cuts.add(cut)
        ordered = sorted(cuts)
        panels = []
        for a, b in zip(ordered, ordered[1:]):
            if b <= a:
                continue
            # geometric refinement: wide dynamic range hides curvature at the
            # left edge that a single Gauss rule cannot see
            while a > 0.0 and b / a > 16.0:
                panels.append((a, 16.0 * a))
                a *= 16.0
            panels.append((a, b))
        for a, b in panels:
            mid = 0.5 * (a + b)
            half = 0.5 * (b - a)
            g = mid + half * _GL_NODES
            wv = u * g / 2.0 if left_half else u * (2.0 - g) / 2.0
            zv = u * (2.0 - g) / 2.0 if left_half else u * g / 2.0
            vals = _erfc_block(wv, zv, x, yy, t)
            acc += half * float(_GL_WEIGHTS @ vals)
    return 0.5 * beta * u ** (-beta) * acc


def jump_kernel(t, x, y, beta, tol: float = 1e-9) -> float:
    """The crossing kernel J_t(x, y) for y < 0 < x, 2 <= beta < 3.

    The time integral inside the defining triple integral has a closed erfc
    form, which leaves a two-dimensional integral.  Near w + z -> 0 the erfc
    block cancels to second order, so that region is replaced by its exact
    quadratic asymptote (integrable precisely because beta < 3, and evaluated
    in closed form); the remainder is adaptive quadrature.
    """
    t = float(t)
    if t <= 0:
        raise NonpositiveTime("jump kernel needs t > 0")
    if beta >= 3.0:
        raise BetaNotIntegrable("jump kernel diverges for beta >= 3")
    if beta < 2.0:
        raise BetaOutOfRange(f"beta={beta} below 2")
    x = float(x)
    yy = -float(y)
    if yy < 0.0 or x < 0.0:
        raise ValueError("jump kernel needs y < 0 < x")
    if x == 0.0 or yy == 0.0:
        return 0.0
    u_max = x + yy + 14.0 * math.sqrt(t) + 5.0
    # quadratic core: E ~ 2 w z h''(0), h(s) = erfc((x + yy + s) / sqrt(2t))
    C = x + yy
    r = 1.0 / math.sqrt(2.0 * t)
    h2 = 4.0 * r**3 * C / math.sqrt(math.pi) * math.exp(-(C * r) ** 2)
    u_c = 1e-3 * min(x, yy, math.sqrt(t), 1.0)
    core = (beta / 3.0) * h2 * u_c ** (3.0 - beta) / (3.0 - beta)
    # power map u = rho^p flattens the u^(2-beta) endpoint behavior
    p = 1.0 / (3.0 - beta)

    def f(rho):
        if rho <= 0.0:
            return 0.0
        u = rho**p
        return _jump_u_integrand(u, x, yy, t, beta) * p * rho ** (p - 1.0)

    pts = sorted(v ** (3.0 - beta) for v in (x, yy, x + yy) if u_c < v < u_max)
    val = core + quad_tol(
        f,
        u_c ** (3.0 - beta),
        u_max ** (3.0 - beta),
        epsabs=tol,
        epsrel=1e-9,
        points=pts,
        limit=400,
    )
    return float(val)


def jump_kernel_nested(t, x, y, beta, epsabs=1e-6) -> float:
    """Reference evaluation with the literal nesting (slow; for cross-checks).

    Outer integral over the crossing time, middle over the pre-jump level,
    inner over the post-jump level; tolerances are kept modest because the
    routine exists only to cross-check the fast erfc-based evaluation.
    """
    yy = -float(y)

    def inner_z(w, s):
        f = lambda z: beta * (w + z) ** (-1.0 - beta) * killed_gauss_kernel(t - s, z, yy)
        hi = yy + 8.0 * math.sqrt(t - s) + 1.0
        return integrate.quad(f, 0.0, hi, epsabs=epsabs * 1e-1, epsrel=1e-6, limit=60)[0]

    def inner_w(s):
        f = lambda w: killed_gauss_kernel(s, x, w) * inner_z(w, s)
        hi = x + 8.0 * math.sqrt(s) + 1.0
        return integrate.quad(f, 0.0, hi, epsabs=epsabs, epsrel=1e-5, limit=40)[0]

    return integrate.quad(inner_w, 0.0, t, epsabs=epsabs * 10.0, epsrel=1e-4, limit=30)[0]


def jump_kernel_mc(t, x, y, beta, n_points: int, rng) -> tuple[float, float]:
    """Monte Carlo value and standard error for the jump kernel.

    Stratified uniformly in the time variable; the (w, z) plane is sampled in
    the coordinates (u = (w+z), v) with u drawn through the power map that
    flattens the integrable singularity at u -> 0, so the estimator has finite
    variance for every beta < 3 (a plain uniform box is biased low there).
    """
    yy = -float(y)
    p = 1.0 / (3.0 - beta)
    u_max = x + yy + 12.0 * math.sqrt(t)
    r_max = u_max ** (3.0 - beta)
    strata = 64
    per = n_points // strata
    means, varis = [], []

    def g_ratio(tt, a, w):
        # killed_gauss_kernel(tt, a, w) / w, stable down to w -> 0
        w = np.maximum(w, 1e-300)
        return -gauss_kernel(tt, w - a) * np.expm1(-2.0 * a * w / tt) / w

    for j in range(strata):
        s = (j + rng.random(per)) * (t / strata)
        r = np.maximum(rng.random(per), 1e-300) * r_max
        v = rng.random(per) * 2.0 - 1.0
        u = r**p
        w = u * (1.0 + v) / 2.0
        z = u * (1.0 - v) / 2.0
        # grouped so that u^(2-beta) r^(p-1) == 1 exactly (p (3-beta) = 1)
        f = (
            g_ratio(s, x, w)
            * g_ratio(t - s, yy, z)
            * (1.0 - v * v)
            * 0.25
            * (beta * p / 2.0)
        )
        means.append(f.mean())
        varis.append(f.var() / per)
    vol = (t / strata) * r_max * 2.0
    val = vol * float(np.sum(means))
    se = vol * math.sqrt(float(np.sum(varis)))
    return val, se


# ---------------------------------------------------------------------------
# transition densities
# ---------------------------------------------------------------------------


def q_density(s, x, t, y, spec: LimitLawSpec):
    """Creeping-transit transition density q(s, x; t, y); zero for x < 0 < y."""
    if spec.mode != "creep":
        raise ValueError("q_density is the creep-mode kernel")
    return _transition(s, x, t, y, spec)


def breve_q_density(s, x, t, y, spec: LimitLawSpec):
    """Jumping-transit transition density (the jump kernel replaces rho)."""
    if spec.mode != "jump":
        raise ValueError("breve_q_density is the jump-mode kernel")
    return _transition(s, x, t, y, spec)


def transition_density(s, x, t, y, spec: LimitLawSpec):
    return _transition(s, x, t, y, spec)


def _cross_factor(dt, x, y, spec: LimitLawSpec):
    """Weight of a crossing from x >= 0 to y <= 0 over a window of length dt."""
    if spec.mode == "creep":
        return passage_density(dt, x - np.asarray(y, float))
    xs = np.broadcast_to(np.asarray(x, float), np.broadcast_shapes(np.shape(x), np.shape(y)))
    ys = np.broadcast_to(np.asarray(y, float), xs.shape)
    flat = [jump_kernel(dt, xi, yi, spec.beta) if xi > 0 and yi < 0 else 0.0
            for xi, yi in zip(np.atleast_1d(xs).ravel(), np.atleast_1d(ys).ravel())]
    out = np.array(flat).reshape(xs.shape) if xs.shape else float(flat[0])
    return out


def _survival_factor(dt, x, spec: LimitLawSpec):
    """Weight of reaching the endpoint -c from x >= 0 over a window of length dt."""
    if spec.mode == "creep":
        return passage_density(dt, np.asarray(x, float) + spec.c)
    xs = np.atleast_1d(np.asarray(x, float))
    flat = [jump_kernel(dt, xi, -spec.c, spec.beta) if xi > 0 else 0.0 for xi in xs]
    out = np.array(flat).reshape(np.shape(x)) if np.shape(x) else float(flat[0])
    return out


def _transition(s, x, t, y, spec: LimitLawSpec):
    s, t = float(s), float(t)
    if not (0.0 <= s < t < spec.T):
        raise TimeOrder(f"need 0 <= s < t < T, got s={s}, t={t}, T={spec.T}")
    x = float(x)
    if s == 0.0 and x <= 0.0:
        raise ValueError("the bridge starts at a positive level")
    if spec.mode == "jump" and x == 0.0:
        raise OutOfRange("the jumping process never sits at 0")
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    out = np.zeros_like(y)
    dt = t - s
    rest = spec.T - t
    if x >= 0.0:
        denom = _survival_factor(spec.T - s, x, spec)
        pos = y > 0
        if np.any(pos):
            out[pos] = (
                killed_gauss_kernel(dt, x, y[pos])
                * _survival_factor(rest, y[pos], spec)
                / denom
            )
        neg = ~pos
        if np.any(neg):
            out[neg] = (
                _cross_factor(dt, x, y[neg], spec)
                * killed_gauss_kernel(rest, y[neg], -spec.c)
                / denom
            )
    else:
        denom = killed_gauss_kernel(spec.T - s, x, -spec.c)
        neg = y <= 0
        if np.any(neg):
            out[neg] = (
                killed_gauss_kernel(dt, x, y[neg])
                * killed_gauss_kernel(rest, y[neg], -spec.c)
                / denom
            )
        # x < 0 < y keeps density zero
    return float(out[0]) if scalar else out


def fdd_density(times, values, spec: LimitLawSpec) -> float:
    """Finite-dimensional density of the limit bridge at interior times.

    The product of killed-kernel factors with a single crossing factor and an
    endpoint closure factor, normalized by the total crossing weight.
    """
    times = [float(t) for t in times]
    values = [float(v) for v in values]
    if len(times) != len(values) or not times:
        raise ValueError("times and values must be equal-length, nonempty")
    if any(not (0.0 < a < spec.T) for a in times):
        raise TimeOrder("interior times must lie strictly inside (0, T)")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise TimeOrder("times must be strictly increasing")
    signs = [v > 0 for v in values]
    seen_neg = False
    for pos in signs:
        if pos and seen_neg:
            raise SignPattern("a positive value occurs after a nonpositive one")
        seen_neg = seen_neg or not pos
    pts = list(zip(times, values))
    acc = 1.0
    prev_t, prev_v = 0.0, spec.b
    for t, v in pts:
        dt = t - prev_t
        if prev_v > 0 and v > 0:
            acc *= killed_gauss_kernel(dt, prev_v, v)
        elif prev_v > 0 and v <= 0:
            acc *= _cross_factor(dt, prev_v, v, spec)
        else:
            acc *= killed_gauss_kernel(dt, prev_v, v)
        prev_t, prev_v = t, v
    dt = spec.T - prev_t
    if prev_v > 0:
        acc *= _survival_factor(dt, prev_v, spec)
    else:
        acc *= killed_gauss_kernel(dt, prev_v, -spec.c)
    return acc / spec.crossing_norm


# ---------------------------------------------------------------------------
# one-step conditional sampling (inverse CDF on an adaptive grid)
# ---------------------------------------------------------------------------


def conditional_grid(s, x, t, spec: LimitLawSpec, n_pts: int = 900):
    """Abscissa grid for the one-step conditional q(s, x; t, .).

    Covers 8 standard deviations around the reachable region on both sides of
    the kink at 0 (always a knot), plus the endpoint basin around -c.
    """
    dt = t - s
    w = 8.0 * math.sqrt(dt)
    lo = min(x - w, -spec.c - 8.0 * math.sqrt(spec.T), -w)
    hi = max(x + w, 0.0) if x <= 0 else x + w
    if spec.mode == "jump" and x > 0:
        lo = min(lo, -spec.c - 10.0 * math.sqrt(spec.T) - spec.b - 2.0)
    neg = np.linspace(lo, 0.0, n_pts // 2, endpoint=False)
    pos = np.linspace(0.0, max(hi, 1e-9), n_pts - n_pts // 2)
    return np.concatenate([neg, pos])


def onestep_inverse_cdf(s, x, t, spec: LimitLawSpec, n_pts: int = 900):
    """(grid, cdf) table of the one-step conditional; raises on a broken table."""
    xs = conditional_grid(s, x, t, spec, n_pts)
    dens = _transition(s, x, t, xs, spec)
    if not np.all(np.isfinite(dens)) or dens.max() <= 0:
        raise InverseCdfFailure("conditional density not finite and positive")
    cdf = trapezoid_cdf(xs, dens)
    return xs, cdf


def sample_onestep(s, x, t, spec, rng, size: int) -> np.ndarray:
    xs, cdf = onestep_inverse_cdf(s, x, t, spec)
    u = rng.random(size)
    return np.interp(u, cdf, xs)


@dataclass
class GridPath:
    """A limit-process path observed on a regular grid."""

    times: np.ndarray
    values: np.ndarray
    jump_index: int | None = None

    def max_increment(self) -> float:
        return float(np.max(np.abs(np.diff(self.values))))


def sample_limit_path_sequential(
    spec: LimitLawSpec, m: int, rng: np.random.Generator
) -> GridPath:
    """One path by chaining one-step inverse-CDF draws (exact in law, slow)."""
    if m < 16:
        raise GridTooCoarse("need at least 16 grid cells")
    times = np.linspace(0.0, spec.T, m + 1)
    vals = np.empty(m + 1)
    vals[0] = spec.b
    x = spec.b
    for i in range(1, m):
        x = float(sample_onestep(times[i - 1], x, times[i], spec, rng, 1)[0])
        if spec.mode == "jump" and x == 0.0:
            x = -1e-12
        vals[i] = x
    vals[m] = -spec.c
    jump_idx = None
    if spec.mode == "jump":
        neg = np.nonzero(vals <= 0)[0]
        jump_idx = int(neg[0]) if neg.size else None
    return GridPath(times=times, values=vals, jump_index=jump_idx)


# ---------------------------------------------------------------------------
# constructive samplers
# ---------------------------------------------------------------------------


def _bessel3_bridge_rows(lengths, ends_a, ends_b, times, rng):
    """Norms of 3-d Brownian bridges, one row per sample.

    lengths: (S,) bridge lengths; ends_a, ends_b: scalar or (S,) endpoint
    norms; times: (S, K) ascending times in [0, length] per row.  Returns the
    (S, K) norm values.
    """
    S, K = times.shape
    lengths = np.broadcast_to(np.asarray(lengths, float), (S,))
    a = np.broadcast_to(np.asarray(ends_a, float), (S,))
    b = np.broadcast_to(np.asarray(ends_b, float), (S,))
    taug = np.concatenate([np.zeros((S, 1)), times, lengths[:, None]], axis=1)
    dt = np.maximum(np.diff(taug, axis=1), 0.0)
    inc = rng.standard_normal((S, dt.shape[1], 3)) * np.sqrt(dt)[..., None]
    W = np.cumsum(inc, axis=1)
    WL = W[:, -1, :]
    frac = (times / lengths[:, None])[..., None]
    Wt = W[:, :-1, :]
    bridge = Wt - frac * WL[:, None, :]
    bridge[..., 0] += a[:, None] * (1.0 - frac[..., 0]) + b[:, None] * frac[..., 0]
    return np.linalg.norm(bridge, axis=2)


def bessel3_bridge_sample(
    x_start: float, y_end: float, length: float, grid: np.ndarray, rng, size: int = 1
) -> np.ndarray:
    """Bessel-3 bridge from x_start to y_end over [0, length] at the grid times.

    Realized as the Euclidean norm of a 3-d Brownian bridge joining vectors of
    the prescribed norms.
    """
    grid = np.asarray(grid, dtype=float)
    times = np.broadcast_to(grid, (size, grid.size)).copy()
    return _bessel3_bridge_rows(
        np.full(size, float(length)), x_start, y_end, times, rng
    )


def bessel3_bridge_marginal_density(z, t, c, T):
    """Density of the Bessel-3 bridge from 0 to c at interior time t."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z, dtype=float)
    pos = z > 0
    out[pos] = (
        passage_density(t, z[pos])
        * killed_gauss_kernel(T - t, z[pos], c)
        / passage_density(T, c)
    )
    return out


def _crossing_time_table(spec: LimitLawSpec, n_pts: int = 4096):
    """Inverse-CDF table of the crossing time: density rho_s(b) rho_{T-s}(c)."""
    T = spec.T
    s = np.linspace(0.0, T, n_pts + 2)[1:-1]
    dens = passage_density(s, spec.b) * passage_density(T - s, spec.c)
    cdf = trapezoid_cdf(s, dens)
    return s, cdf


def sample_creep_paths(
    spec: LimitLawSpec, m: int, rng: np.random.Generator, size: int, chunk: int = 2048
) -> np.ndarray:
    """Creep-mode limit paths on the uniform m-grid, by the two-bridge construction.

    The crossing time has density rho_s(b) rho_{T-s}(c) (total passage weight
    rho_T(b+c)); before it the path is a first-passage bridge (a time-reversed
    Bessel-3 bridge), after it the negative of an independent Bessel-3 bridge.
    """
    if spec.mode != "creep":
        raise ValueError("creep sampler needs a creep spec")
    T = spec.T
    nodes = np.linspace(0.0, T, m + 1)
    sgrid, scdf = _crossing_time_table(spec)
    out = np.empty((size, m + 1))
    for c0 in range(0, size, chunk):
        c1 = min(c0 + chunk, size)
        S = c1 - c0
        tau = np.interp(rng.random(S), scdf, sgrid)
        tgrid = np.broadcast_to(nodes, (S, m + 1))
        before = tgrid < tau[:, None]
        # segment 1 at times t < tau: reversed Bessel bridge 0 -> b, length tau
        rev_times = np.where(before, tau[:, None] - tgrid, 0.0)
        rev_sorted = np.sort(rev_times, axis=1)
        seg1_sorted = _bessel3_bridge_rows(tau, 0.0, spec.b, rev_sorted, rng)
        order = np.argsort(rev_times, axis=1, kind="stable")
        seg1 = np.empty_like(seg1_sorted)
        rows = np.arange(S)[:, None]
        seg1[rows, order] = seg1_sorted
        # segment 2 at times t >= tau: negative Bessel bridge 0 -> c, length T - tau
        fwd_times = np.where(before, 0.0, tgrid - tau[:, None])
        seg2 = _bessel3_bridge_rows(T - tau, 0.0, spec.c, fwd_times, rng)
        vals = np.where(before, seg1, -seg2)
        vals[:, 0] = spec.b
        vals[:, m] = -spec.c
        out[c0:c1] = vals
    return out


@lru_cache(maxsize=32)
def _jump_hazard_table(b, c, T, beta, m, w_pts=192, z_pts=600):
    """h(t, w) = beta * int g0_{T-t}(z, c) (w+z)^(-1-beta) dz on a (t, w) grid."""
    tg = (np.arange(m) + 0.5) * (T / m)
    tg = tg[tg < T]
    wg = np.geomspace(1e-4, b + 12.0 * math.sqrt(T), w_pts)
    z_hi = c + 10.0 * math.sqrt(T)
    z = np.linspace(1e-9, z_hi, z_pts)
    out = np.empty((tg.size, wg.size))
    for i, t in enumerate(tg):
        g0 = killed_gauss_kernel(T - t, z, c)
        ker = (wg[:, None] + z[None, :]) ** (-1.0 - beta)
        out[i] = beta * np.trapezoid(ker * g0[None, :], z, axis=1)
    return tg, wg, out


def sample_jump_paths(
    spec: LimitLawSpec, m: int, rng: np.random.Generator, size: int, chunk: int = 4096
):
    """Jump-mode limit paths on the uniform m-grid (documented approximation).

    A Brownian path runs until its discretized zero hitting time; the jump
    cell is drawn proportionally to the discretized hazard along that path,
    the jump target from the exact conditional density at the chosen cell,
    and the remainder is a negated Bessel-3 bridge into -c.  The sequential
    one-step sampler is the exact-in-law reference.
    """
    if spec.mode != "jump":
        raise ValueError("jump sampler needs a jump spec")
    T, b, c, beta = spec.T, spec.b, spec.c, spec.beta
    dt = T / m
    nodes = np.linspace(0.0, T, m + 1)
    tg, wg, hz = _jump_hazard_table(b, c, T, beta, m)
    zg = np.linspace(1e-9, c + 10.0 * math.sqrt(T), 800)
    out = np.empty((size, m + 1))
    jump_idx = np.empty(size, dtype=np.int64)
    for c0 in range(0, size, chunk):
        c1 = min(c0 + chunk, size)
        S = c1 - c0
        inc = rng.standard_normal((S, m)) * math.sqrt(dt)
        W = b + np.cumsum(inc, axis=1)
        W = np.concatenate([np.full((S, 1), b), W], axis=1)
        alive = np.cumprod(W[:, :-1] > 0, axis=1).astype(bool)  # cells with W_k > 0
        # hazard weight of cell k uses the midpoint table at the cell's left value
        wk = np.clip(W[:, :-1], wg[0], wg[-1])
        ti = np.minimum(np.searchsorted(tg, nodes[:-1] + 0.5 * dt) , tg.size - 1)
        wi = np.searchsorted(wg, wk)
        wi = np.clip(wi, 1, wg.size - 1)
        w_lo = wg[wi - 1]
        w_hi = wg[wi]
        frac = (wk - w_lo) / (w_hi - w_lo)
        hvals = hz[ti[None, :], wi - 1] * (1 - frac) + hz[ti[None, :], wi] * frac
        weights = np.where(alive, hvals, 0.0) * dt
        tot = weights.sum(axis=1)
        if np.any(tot <= 0):
            bad = tot <= 0
            weights[bad, 0] = 1.0
            tot = weights.sum(axis=1)
        cums = np.cumsum(weights, axis=1)
        u = rng.random(S) * tot
        kjump = (cums < u[:, None]).sum(axis=1)
        kjump = np.minimum(kjump, m - 1)
        tau = nodes[kjump] + 0.5 * dt
        Wtau = W[np.arange(S), kjump]
        # jump target density: g0_{T-tau}(z, c) (Wtau + z)^(-1-beta)
        g0 = killed_gauss_kernel(
            np.maximum(T - tau, 1e-12)[:, None], zg[None, :], c
        )
        dens = g0 * (Wtau[:, None] + zg[None, :]) ** (-1.0 - beta)
        cdf = np.cumsum(dens, axis=1)
        eta = zg[
            np.minimum(
                (cdf < (rng.random(S) * cdf[:, -1])[:, None]).sum(axis=1), zg.size - 1
            )
        ]
        # post-jump: negative Bessel bridge eta -> c over [tau, T]
        tg_post = np.maximum(nodes[None, :] - tau[:, None], 0.0)
        seg2 = _bessel3_bridge_rows(np.maximum(T - tau, 1e-9), eta, c, tg_post, rng)
        before = nodes[None, :] <= nodes[kjump][:, None]
        vals = np.where(before, W, -seg2)
        vals[:, 0] = b
        vals[:, m] = -c
        out[c0:c1] = vals
        jump_idx[c0:c1] = kjump + 1
    return out, jump_idx


def sample_limit_path(
    spec: LimitLawSpec, grid_m: int, rng: np.random.Generator, method: str = "auto"
) -> GridPath:
    """One limit path on the m-cell grid.

    "sequential" chains exact one-step inverse-CDF draws; "constructive" uses
    the two-bridge (creep) or hazard (jump) construction.  "auto" picks the
    constructive sampler, the cheap option for path-level studies.
    """
    if grid_m < 16:
        raise GridTooCoarse("need at least 16 grid cells")
    if method == "sequential":
        return sample_limit_path_sequential(spec, grid_m, rng)
    times = np.linspace(0.0, spec.T, grid_m + 1)
    if spec.mode == "creep":
        vals = sample_creep_paths(spec, grid_m, rng, 1)[0]
        return GridPath(times=times, values=vals)
    vals, jidx = sample_jump_paths(spec, grid_m, rng, 1)
    return GridPath(times=times, values=vals[0], jump_index=int(jidx[0]))


# ---------------------------------------------------------------------------
# local-time-killed Brownian kernel (the appendix check)
# ---------------------------------------------------------------------------


def local_time_kill_check(lam: float, t: float, xi: float, eta: float):
    """Kernel of Brownian motion killed at rate lam * (local time at 0).

    Same-sign (xi, eta): q = g0_t + int_0^inf rho_t(|xi|+|eta|+u) e^(-lam u) du,
    compared to g0_t.  Opposite signs: q is the integral alone and lam * q is
    compared to rho_t(xi + |eta|).  Returns (q_lam, target, relative error).
    """
    if t <= 0:
        raise NonpositiveTime("need t > 0")
    if xi == 0.0:
        raise ValueError("xi must be nonzero")
    C = abs(xi) + abs(eta)

    tail = quad_tol(
        lambda v: math.exp(-v) * passage_density(t, C + v / lam) / lam,
        0.0,
        60.0,
        epsabs=1e-13,
        epsrel=1e-11,
    )
    if xi * eta > 0:
        g0 = killed_gauss_kernel(t, abs(xi), abs(eta))
        q = g0 + tail
        return q, g0, abs(q - g0) / g0
    q = tail
    target = passage_density(t, C)
    return q, target, abs(lam * q - target) / target


# ---------------------------------------------------------------------------
# identity residuals used by the verification harness
# ---------------------------------------------------------------------------


def entrance_identity_residual(t: float, s: float, y: float) -> float:
    """| int rho_t(z) g0_s(z, y) dz - rho_{t+s}(y) |."""
    hi = abs(y) + 10.0 * math.sqrt(t + s) + 10.0
    val = quad_tol(
        lambda z: passage_density(t, z) * killed_gauss_kernel(s, z, y),
        0.0,
        hi,
        epsabs=1e-12,
        epsrel=1e-11,
    )
    return abs(val - passage_density(t + s, y))


def passage_convolution_residual(t: float, x: float, y: float) -> float:
    """| int_0^t rho_{t-s}(x) rho_s(y) ds - rho_t(x+y) |."""
    val = quad_tol(
        lambda s: passage_density(t - s, x) * passage_density(s, y),
        0.0,
        t,
        epsabs=1e-12,
        epsrel=1e-11,
        points=[t * 0.5],
    )
    return abs(val - passage_density(t, x + y))


def normalization_residual(spec: LimitLawSpec, t: float, x: float | None = None,
                           s: float = 0.0, epsabs: float = 1e-9) -> float:
    """| int q(s, x; t, y) dy - 1 | for the requested kernel slice."""
    if x is None:
        x = spec.b
        s = 0.0
    lo = -spec.c - 10.0 * math.sqrt(spec.T) - spec.b - 3.0
    hi = max(x, spec.b) + 10.0 * math.sqrt(spec.T)
    f = lambda y: _transition(s, x, t, y, spec)
    val = quad_tol(f, lo, 0.0, epsabs=epsabs, epsrel=1e-8) + quad_tol(
        f, 0.0, hi, epsabs=epsabs, epsrel=1e-8
    )
    return abs(val - 1.0)


def chapman_residual(spec: LimitLawSpec, s: float, t: float, u: float,
                     x: float, z: float, epsabs: float = 1e-8) -> float:
    """| int q(s,x;t,y) q(t,y;u,z) dy - q(s,x;u,z) | at interior times s < t < u."""
    lo = -spec.c - 10.0 * math.sqrt(spec.T) - spec.b - 3.0
    hi = spec.b + abs(x) + 10.0 * math.sqrt(spec.T)
    f = lambda y: _transition(s, x, t, y, spec) * _transition(t, y, u, z, spec)
    val = quad_tol(f, lo, 0.0, epsabs=epsabs, epsrel=1e-7) + quad_tol(
        f, 0.0, hi, epsabs=epsabs, epsrel=1e-7
    )
    return abs(val - _transition(s, x, u, z, spec))
