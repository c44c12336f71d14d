"""Fixed-point solver for the perturbed IBA equation in sector 0.

Unknowns (lambda, mu) with z(omega xi) = lbar(xi) + lambda(xi) and hole
positions h_k = omega (1 + mu_k).  The map is

    N0 = K1[ceil(lbar + lambda - 1/2)] - lbar - 2p - sum_k (F(xi/(1+mu_k)) - F(xi))
    Nk = ((lbar(1+mu_k) - lbar(1)) / mu_k)^{-1} (sigma(k) + 1/2 - lbar(1) - lambda(1+mu_k))

K1 of the step function is evaluated exactly between crossing points y_j
(f(y_j) = j + 1/2) through F, and beyond the last tracked crossing by the
smooth integral of f plus Euler-Maclaurin corrections for the sawtooth
ceil(f - 1/2) - f.
"""
from dataclasses import dataclass, field
from math import ceil, pi, sqrt
import threading

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from . import wkb
from .errors import ConstraintViolation, DomainError, NonConvergence
from .partitions import Partition, check_admissible, holes_from_partition, sigma_map
from .special import f_alpha, kernel_k, mellin_tail

_GL8 = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class IbaConfig:
    grid_size: int = 400
    xi_max: float = None        # None: lbar(xi_max) >= k_max + 2 and xi_max >= xi_floor
    k_max: int = 200
    tol_fp: float = 1e-10
    tol_root: float = 1e-11
    max_iter: int = 200
    tail_tol: float = 1e-9
    xi_floor: float = 200.0

    def __post_init__(self):
        if self.grid_size < 16:
            raise DomainError("grid_size must be >= 16", grid_size=self.grid_size)
        if self.xi_max is not None and not self.xi_max > 1:
            raise DomainError("xi_max must be > 1", xi_max=self.xi_max)
        if min(self.tol_fp, self.tol_root, self.tail_tol) <= 0:
            raise DomainError("tolerances must be positive")
        if self.max_iter < 1 or self.k_max < 0:
            raise DomainError("max_iter >= 1 and k_max >= 0 required")
        if self.xi_floor < 30:
            # the large-xi series behind the tails is only trusted from here on
            raise DomainError("xi_floor must be >= 30", xi_floor=self.xi_floor)


@dataclass
class IbaState:
    lam: np.ndarray          # values on the log grid
    mu: np.ndarray
    omega: float


@dataclass
class IbaSolution:
    ctx: object
    p: float
    partition: Partition
    holeset: object
    omega: float
    linear: object
    state: IbaState
    h: np.ndarray
    roots: dict
    diagnostics: dict
    problem: object = field(repr=False, default=None)
    spline: object = field(repr=False, default=None)
    convolver: object = field(repr=False, default=None)

    @property
    def lam_end(self):
        return float(self.state.lam[-1])

    def z(self, x):
        return z_eval(self, x)


# ----------------------------------------------------------- lbar table

class ChebTable:
    """Piecewise Chebyshev interpolant of a vector-valued function of t = log xi."""

    def __init__(self, fun, t0, t1, width=0.05, degree=24):
        self.t0 = t0
        self.n = max(1, int(ceil((t1 - t0) / width)))
        self.h = (t1 - t0) / self.n
        k = np.arange(degree + 1)
        x = np.cos(pi * (k + 0.5) / (degree + 1))
        mids = t0 + self.h * (np.arange(self.n) + 0.5)
        ts = (mids[:, None] + 0.5 * self.h * x[None, :]).ravel()
        vals = np.asarray(fun(ts))                    # (rows, n * (deg + 1))
        self.rows = vals.shape[0]
        vals = vals.reshape(self.rows, self.n, degree + 1)
        T = np.cos(np.outer(k, pi * (k + 0.5) / (degree + 1)))     # T_j(x_k)
        c = np.einsum("rnk,jk->nrj", vals, T) * (2.0 / (degree + 1))
        c[:, :, 0] *= 0.5
        self.coef = c                                 # (n, rows, deg + 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(((t - self.t0) / self.h).astype(int), 0, self.n - 1)
        x = 2.0 * (t - self.t0 - (idx + 0.5) * self.h) / self.h
        c = self.coef[idx]                            # (m, rows, deg + 1)
        b1 = np.zeros(c.shape[:2])
        b2 = np.zeros_like(b1)
        x2 = 2.0 * x[:, None]
        for j in range(c.shape[2] - 1, 0, -1):
            b1, b2 = x2 * b1 - b2 + c[:, :, j], b1
        return (0.5 * x2 * b1 - b2 + c[:, :, 0]).T   # (rows, m)


# ----------------------------------------------------- root bracketing

def monotone_solve(fun, target, lo, hi, y0=None, tol=1e-13, max_iter=100):
    """Vectorised safeguarded Newton for increasing f: f(y) = target on [lo, hi].

    fun(y) returns (f, y f'(y)).  Requires f(lo) <= target <= f(hi).
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    y = 0.5 * (lo + hi) if y0 is None else np.clip(np.array(y0, dtype=float), lo, hi)
    scale = np.maximum(1.0, np.abs(target))
    for _ in range(max_iter):
        f, df = fun(y)
        r = f - target
        lo = np.where(r < 0, y, lo)
        hi = np.where(r >= 0, y, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            yn = y - r * y / df
        bad = ~np.isfinite(yn) | (yn <= lo) | (yn >= hi) | (df <= 0)
        yn = np.where(bad, 0.5 * (lo + hi), yn)
        small = np.abs(r) <= tol * scale
        tiny = np.abs(yn - y) <= 4e-16 * y
        y = np.where(small & tiny, y, yn)
        if np.all((small & tiny) | (hi - lo <= 4e-16 * hi)):
            return y
    f, _ = fun(y)
    if np.any(np.abs(f - target) > 10 * tol * scale):
        raise NonConvergence("crossing root search failed", worst=float(np.max(np.abs(f - target))))
    return y


# ------------------------------------------------ ceiling convolutions

@dataclass
class MonotoneFunction:
    """Strictly increasing f on [1, inf).

    fun(y) -> (f(y), y f'(y)) vectorised; for y >= y_tail f equals the series
    sum over tail_terms (e, c, d) of y^e (c + d log y), with every e < 1.
    """
    fun: object
    tail_terms: tuple
    y_tail: float


@dataclass
class Crossings:
    j0: int              # ceil(f(1) - 1/2)
    js: np.ndarray       # j0 .. J + 1
    y: np.ndarray        # f(y_j) = j + 1/2
    J: int               # first crossing beyond y_tail

    @property
    def iJ(self):
        return self.J - self.j0


class PhiCache:
    """Memo of the Mellin tail integrals at r = y_tail / xi, one row per exponent."""

    def __init__(self, ctx, maxsize=64):
        self.ctx = ctx
        self.maxsize = maxsize
        self._data = {}
        self._lock = threading.Lock()

    def rows(self, xi, y_tail, exps):
        key = (xi.tobytes(), float(y_tail), tuple(exps))
        with self._lock:
            hit = self._data.get(key)
        if hit is not None:
            return hit
        out = np.zeros((len(exps), 2, xi.size))
        for a, (e, has_log) in enumerate(exps):
            for b, x in enumerate(xi):
                r = y_tail / x
                out[a, 0, b] = mellin_tail(self.ctx, e, r, 0)
                if has_log:
                    out[a, 1, b] = mellin_tail(self.ctx, e, r, 1)
        with self._lock:
            if len(self._data) >= self.maxsize:
                self._data.clear()
            self._data[key] = out
        return out


def series_tail_integral(ctx, xi, terms, y_tail, cache=None):
    """int_{y_tail}^inf K(xi/y) f(y) dy/y for the series f, as sums of xi^e Phi(e; y_tail/xi)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.zeros_like(xi)
    pos = xi > 0                      # K(0) = 0: nothing to add at the origin
    if not np.any(pos):
        return out
    x = xi[pos]
    cache = cache or PhiCache(ctx)
    rows = cache.rows(x, y_tail, [(e, d != 0.0) for e, _, d in terms])
    L = np.log(x)
    acc = np.zeros_like(x)
    for a, (e, c, d) in enumerate(terms):
        acc += x ** e * ((c + d * L) * rows[a, 0] + d * rows[a, 1])
    out[pos] = acc
    return out


class StepConvolver:
    """K1[ceil(f - 1/2)] for a MonotoneFunction f (telescoped plus analytic tail)."""

    def __init__(self, ctx, f, tol_root=1e-13, samples=1600, seeds=None, cache=None):
        self.ctx = ctx
        self.f = f
        self.cache = cache or PhiCache(ctx)
        self.cross = self._crossings(tol_root, samples, seeds)

    def _crossings(self, tol, samples, seeds):
        fun = self.f.fun
        Y = self.f.y_tail
        one = np.array([1.0])
        j0 = int(ceil(fun(one)[0][0] - 0.5))
        jlast = int(ceil(fun(np.array([Y]))[0][0] - 0.5))      # its crossing lies beyond Y
        js = np.arange(j0, jlast + 2)
        targets = js + 0.5
        ys = np.exp(np.linspace(0.0, np.log(Y), samples))
        fs = fun(ys)[0]
        df = np.diff(fs)
        if np.any(df <= 0):
            i = int(np.argmin(df))
            raise ConstraintViolation("f is not increasing", y=float(ys[i]), step=float(df[i]))
        hi_end = Y
        while fun(np.array([hi_end]))[0][0] < targets[-1]:
            hi_end *= 1.5
            if hi_end > 1e250:
                raise NonConvergence("f stays below the next crossing level", level=float(targets[-1]))
        ys = np.append(ys, hi_end)
        fs = np.append(fs, fun(np.array([hi_end]))[0][0])
        i = np.clip(np.searchsorted(fs, targets), 1, ys.size - 1)
        y0 = None
        if seeds is not None and seeds.j0 == j0 and seeds.y.size >= js.size:
            y0 = seeds.y[: js.size]
        y = monotone_solve(fun, targets, ys[i - 1], ys[i], y0, tol=tol)
        if np.any(np.diff(y) <= 0):
            raise ConstraintViolation("crossings are not ordered")
        J = int(js[np.argmax(y > Y)])
        return Crossings(j0, js, y, J)

    def tail(self, xi):
        """sum_{j >= J} F(xi / y_j) through the smooth integral plus sawtooth corrections.

        Returns (values, bound) where bound is the size of the last correction kept.
        """
        ctx, f, cr = self.ctx, self.f, self.cross
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        Y = f.y_tail
        yJ = cr.y[cr.iJ]
        sm = series_tail_integral(ctx, xi, f.tail_terms, Y, self.cache) - cr.J * f_alpha(ctx, xi / Y)
        # remove int_Y^{y_J} K(xi/y) (f - J) dy/y
        xg, wg = _GL8
        a, b = np.log(Y), np.log(yJ)
        yy = np.exp(0.5 * (a + b) + 0.5 * (b - a) * xg)
        fv = f.fun(yy)[0]
        sm -= 0.5 * (b - a) * (kernel_k(ctx, xi[:, None] / yy[None, :]) * (fv - cr.J)) @ wg
        # int saw g du = g(0)/12 - g''(0)/720 - ..., g = K(xi/y)/(y f'(y)) in u = f(y)
        yn = cr.y[cr.iJ - 1: cr.iJ + 2] if cr.iJ >= 1 else cr.y[cr.iJ: cr.iJ + 3]
        g = kernel_k(ctx, xi[:, None] / yn[None, :]) / f.fun(yn)[1][None, :]
        gc = g[:, 1] if cr.iJ >= 1 else g[:, 0]
        g2 = g[:, 2] - 2 * g[:, 1] + g[:, 0]
        saw = gc / 12.0 - g2 / 720.0
        return sm + saw, float(np.max(np.abs(g2))) / 720.0

    def __call__(self, xi):
        """(K1[ceil(f - 1/2)](xi), tail bound)."""
        cr = self.cross
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        yin = cr.y[: cr.iJ]
        s = np.zeros_like(xi)
        chunk = max(1, 2_000_000 // max(1, yin.size))
        for i in range(0, xi.size, chunk):
            s[i:i + chunk] = f_alpha(self.ctx, xi[i:i + chunk, None] / yin[None, :]).sum(axis=1)
        t, bound = self.tail(xi)
        # pieces [y_{j-1}, y_j] carry the value j; the first one carries j0 on [1, y_j0]
        return cr.j0 * f_alpha(self.ctx, xi) + s + t, bound

    def restricted(self, xi, upper):
        """int_1^upper K(xi/y) ceil(f(y) - 1/2) dy / y, exactly."""
        cr = self.cross
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        yin = cr.y[cr.y < upper]
        c_last = cr.j0 + yin.size
        return (cr.j0 * f_alpha(self.ctx, xi) + f_alpha(self.ctx, xi[:, None] / yin[None, :]).sum(axis=1)
                - c_last * f_alpha(self.ctx, xi / upper))


def convolve_ceiling(ctx, f, xi, tol_root=1e-13, tail_tol=1e-9):
    """K1[ceil(f - 1/2)](xi) for a MonotoneFunction f."""
    conv, bound = StepConvolver(ctx, f, tol_root)(xi)
    if bound > tail_tol:
        raise NonConvergence("tail bound exceeds tail_tol; raise y_tail", bound=bound, tail_tol=tail_tol)
    return conv if np.ndim(xi) else float(conv[0])


# --------------------------------------------------------- the problem

class IbaProblem:
    """Everything about (alpha, p, partition, omega) that is fixed during iteration."""

    def __init__(self, ctx, p, nu, config=None, omega=None):
        self.ctx = ctx
        self.p = float(p)
        self.nu = nu if isinstance(nu, Partition) else Partition(tuple(nu))
        self.config = config or IbaConfig()
        check_admissible(self.nu.N, self.p)
        self.holeset = holes_from_partition(self.nu, self.p)
        self.H = self.holeset.H
        smap = sigma_map(self.nu) if self.H else {}
        self.sigma = np.array([smap[k] for k in range(1, self.H + 1)], dtype=int)
        self.omega = wkb.omega_h(ctx, self.p, self.H) if omega is None else float(omega)
        self.lin = wkb.linearized_solution(ctx, self.p, self.omega)
        self.s0 = ctx.exponent
        self.lbar_terms = self.lin.series()
        self.xi_max = self._choose_xi_max()
        lin = self.lin

        def table_fun(t):
            v = wkb.tau_all(ctx, np.exp(t))
            return np.stack([lin.p * v[0] - lin.coef * v[1], lin.p * v[1] - lin.coef * v[2]])

        self.table = ChebTable(table_fun, 0.0, np.log(self.xi_max) + 1e-9)
        n = self.config.grid_size
        self.t_grid = np.linspace(0.0, np.log(self.xi_max), n)
        self.xi_grid = np.exp(self.t_grid)
        self.xi_grid[0], self.xi_grid[-1] = 1.0, self.xi_max
        self.lbar_grid = self.lbar_both(self.xi_grid)[0]
        self.cache = PhiCache(ctx)

    def _choose_xi_max(self):
        cfg = self.config
        if cfg.xi_max is not None:
            return float(cfg.xi_max)
        xm = 2.0
        while self.lin.value(xm) < cfg.k_max + 2:
            xm *= 1.25
        return max(xm, cfg.xi_floor)

    def lbar_both(self, xi):
        """(lbar, D lbar) for xi >= 1: table up to xi_max, series beyond."""
        xi = np.asarray(xi, dtype=float)
        out = np.empty((2,) + xi.shape)
        inside = xi <= self.xi_max
        if np.any(inside):
            out[:, inside] = self.table(np.log(xi[inside]))
        if np.any(~inside):
            out[0, ~inside] = wkb.series_eval(self.lbar_terms, xi[~inside], 0)
            out[1, ~inside] = wkb.series_eval(self.lbar_terms, xi[~inside], 1)
        return out

    def lam_spline(self, lam):
        return CubicSpline(self.t_grid, lam, bc_type="not-a-knot")

    def lam_both(self, spline, lam_end, xi):
        """(lambda, D lambda); power decay xi^(-s0) beyond xi_max."""
        xi = np.asarray(xi, dtype=float)
        val = np.empty_like(xi)
        dv = np.empty_like(xi)
        inside = xi <= self.xi_max
        t = np.log(xi[inside])
        val[inside] = spline(t)
        dv[inside] = spline(t, 1)
        r = (xi[~inside] / self.xi_max) ** (-self.s0)
        val[~inside] = lam_end * r
        dv[~inside] = -self.s0 * lam_end * r
        return val, dv

    def f_both(self, spline, lam_end, xi):
        lb = self.lbar_both(xi)
        lv, ld = self.lam_both(spline, lam_end, xi)
        return lb[0] + lv, lb[1] + ld

    def tail_terms(self, lam_end):
        """Series of lbar + lambda valid beyond xi_max."""
        terms = [list(t) for t in self.lbar_terms]
        c = lam_end * self.xi_max ** self.s0
        for t in terms:
            if abs(t[0] + self.s0) < 1e-12:
                t[1] += c
                break
        else:
            terms.append([-self.s0, c, 0.0])
        return tuple(tuple(t) for t in terms)

    def monotone(self, spline, lam_end):
        return MonotoneFunction(lambda y: self.f_both(spline, lam_end, y),
                                self.tail_terms(lam_end), self.xi_max)

    def convolver(self, spline, lam_end, seeds=None):
        return StepConvolver(self.ctx, self.monotone(spline, lam_end), self.config.tol_root * 1e-2,
                             4 * self.config.grid_size, seeds, self.cache)

    # the map -------------------------------------------------------------
    def initial_state(self):
        a = self.ctx.alpha
        mu = sqrt(2.0) * a * (self.sigma + 0.5 - self.lin.value_at_1) / (self.p * (1 + a) ** 1.5)
        return IbaState(np.zeros(self.config.grid_size), np.asarray(mu, dtype=float), self.omega)

    def hole_terms(self, xi, mu):
        out = np.zeros_like(xi)
        for m in mu:
            out += f_alpha(self.ctx, xi / (1 + m)) - f_alpha(self.ctx, xi)
        return out

    def step(self, state, seeds=None):
        """One application of the map: (new state, convolver, tail bound)."""
        spline = self.lam_spline(state.lam)
        lam_end = float(state.lam[-1])
        conv = self.convolver(spline, lam_end, seeds)
        xi = self.xi_grid
        k1, bound = conv(xi)
        new_lam = k1 - self.lbar_grid - 2 * self.p - self.hole_terms(xi, state.mu)
        new_mu = np.array([self._mu_update(spline, lam_end, int(s), float(m))
                           for s, m in zip(self.sigma, state.mu)])
        return IbaState(new_lam, new_mu, state.omega), conv, bound

    def map_n(self, state):
        return self.step(state)[0]

    def _mu_update(self, spline, lam_end, sig, mu):
        l1 = self.lin.value_at_1
        if mu == 0.0:
            q = self.lbar_both(np.array([1.0]))[1][0]     # D lbar(1) = lbar'(1)
        else:
            q = (self.lbar_both(np.array([1.0 + mu]))[0][0] - l1) / mu
        if not np.isfinite(q) or q <= 1e-300:
            raise ConstraintViolation("difference quotient of lbar underflowed", mu=mu)
        lam_at = self.lam_both(spline, lam_end, np.array([1.0 + mu]))[0][0]
        return (sig + 0.5 - l1 - lam_at) / q

    def norm(self, lam, mu):
        return float(np.max(np.abs(lam))) + 2 * self.ctx.G * float(np.sum(np.abs(mu)))


# --------------------------------------------------------------- solve

_PROBLEMS = {}
_PROBLEMS_LOCK = threading.Lock()


def _problem_for(ctx, p, nu, config, omega):
    key = (ctx, float(p), tuple(nu.parts), config, float(omega))
    with _PROBLEMS_LOCK:
        pr = _PROBLEMS.get(key)
    if pr is None:
        pr = IbaProblem(ctx, p, nu, config, omega)
        with _PROBLEMS_LOCK:
            if len(_PROBLEMS) >= 16:
                _PROBLEMS.clear()
            _PROBLEMS[key] = pr
    return pr


def map_n(ctx, p, sigma, linear, state, config=None):
    """One application of the nonlinear map; sigma is the Partition, linear fixes omega."""
    nu = sigma if isinstance(sigma, Partition) else Partition(tuple(sigma))
    return _problem_for(ctx, p, nu, config or IbaConfig(), linear.omega).map_n(state)


def solve(ctx, p, nu, config=None, omega=None):
    """Iterate the map from (0, mu_hat) to its fixed point and validate the result.

    omega defaults to omega_H; any other value must satisfy the hole-count
    constraint or the validation raises ConstraintViolation.
    """
    config = config or IbaConfig()
    nu = nu if isinstance(nu, Partition) else Partition(tuple(nu))
    pr = IbaProblem(ctx, p, nu, config, omega)
    state = pr.initial_state()
    deltas = []
    conv = None
    for it in range(1, config.max_iter + 1):
        new, conv, bound = pr.step(state, conv.cross if conv else None)
        d = pr.norm(new.lam - state.lam, new.mu - state.mu)
        deltas.append(d)
        state = new
        if not np.isfinite(d):
            raise NonConvergence("iteration diverged", iterations=it, deltas=deltas[-5:])
        if d < config.tol_fp:
            break
    else:
        raise NonConvergence("fixed-point iteration budget exhausted",
                             iterations=config.max_iter, last_delta=deltas[-1], p=pr.p)
    # increments at the rounding floor carry no contraction information
    ratios = [deltas[i] / deltas[i - 1] for i in range(1, len(deltas))
              if deltas[i - 1] > 1e3 * config.tol_fp]
    diag = {
        "iterations": it,
        "contraction_ratio": max(ratios) if ratios else 0.0,
        "final_delta": deltas[-1],
        "deltas": deltas,
        "state_norm": pr.norm(state.lam, state.mu),
        "xi_max": pr.xi_max,
        "tail_bound": bound,
    }
    sol = _assemble(pr, state, diag)
    ks = [k for k, _ in sorted(sol.roots.items())[:20]]
    diag["residual_max"] = float(np.max(log_bae_residuals(sol, ks))) if ks else 0.0
    _validate(sol)
    return sol


def _assemble(pr, state, diag):
    spline = pr.lam_spline(state.lam)
    conv = pr.convolver(spline, float(state.lam[-1]))
    cr = conv.cross
    holes = set(pr.holeset.finite_holes)
    roots_ = {int(j): float(pr.omega * yj) for j, yj in zip(cr.js, cr.y)
              if int(j) not in holes and -pr.H <= j <= pr.config.k_max}
    h = pr.omega * (1 + state.mu)
    return IbaSolution(pr.ctx, pr.p, pr.nu, pr.holeset, pr.omega, pr.lin, state, h,
                       roots_, diag, pr, spline, conv)


def _validate(sol):
    pr = sol.problem
    st = sol.state
    cfg = pr.config
    small = {"iterations": sol.diagnostics["iterations"],
             "contraction_ratio": sol.diagnostics["contraction_ratio"], "p": pr.p}
    z1 = pr.lin.value_at_1 + st.lam[0]
    if ceil(z1 - 0.5) != -pr.H:
        raise ConstraintViolation("hole-count constraint fails", z_omega=float(z1), H=pr.H, **small)
    if np.any(np.diff(pr.lbar_grid + st.lam) <= 0):
        raise ConstraintViolation("z is not increasing on the grid", **small)
    bound = (pr.H + 0.25) * (pr.ctx.alpha - 1)
    if np.max(np.abs(st.lam)) > bound:
        raise ConstraintViolation("a-priori bound on lambda violated",
                                  lam_max=float(np.max(np.abs(st.lam))), bound=bound, **small)
    if np.any(st.mu < 0) or np.any(np.diff(st.mu) <= 0):
        raise ConstraintViolation("hole positions are not ordered", mu=st.mu.tolist(), **small)
    if sol.diagnostics["tail_bound"] > cfg.tail_tol:
        raise ConstraintViolation("tail bound exceeds tail_tol", bound=sol.diagnostics["tail_bound"], **small)
    for k, s in enumerate(pr.sigma):
        zh = z_eval(sol, sol.h[k])
        # z(h_k) misses sigma(k) + 1/2 by the last fixed-point increment at most
        if abs(zh - (s + 0.5)) > max(cfg.tol_root, 10 * cfg.tol_fp):
            raise ConstraintViolation("z(h_k) = sigma(k) + 1/2 fails", k=k + 1, z=float(zh),
                                      target=float(s + 0.5), **small)
    if sol.diagnostics["contraction_ratio"] >= 1.0:
        raise ConstraintViolation("measured contraction ratio >= 1", **small)


# ---------------------------------------------------------- evaluation

def z_eval(sol, x):
    """z(x) for x >= 0; the left part comes from the integral equation itself."""
    pr = sol.problem
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("z is evaluated on x >= 0")
    xi = np.atleast_1d(x / sol.omega).astype(float)
    out = np.empty_like(xi)
    right = xi >= 1.0
    if np.any(right):
        out[right] = pr.f_both(sol.spline, sol.lam_end, xi[right])[0]
    if np.any(~right):
        xl = xi[~right]
        conv, _ = sol.convolver(xl)
        hole = sum((f_alpha(pr.ctx, xl / (1 + m)) for m in sol.state.mu), np.zeros_like(xl))
        out[~right] = -2 * sol.p + conv + pr.H * f_alpha(pr.ctx, xl) - hole
    out = out.reshape(x.shape)
    return out if out.ndim else float(out)


def roots(sol, k_lo, k_hi):
    """[(k, x_k)] for admissible non-hole k in [k_lo, k_hi]."""
    if k_lo < -2 * sol.p - 0.5:
        raise DomainError("k below the admissible range", k=k_lo, p=sol.p)
    pr = sol.problem
    holes = set(pr.holeset.finite_holes)
    ks = [k for k in range(max(k_lo, -pr.H), k_hi + 1) if k not in holes]
    found = {k: sol.roots[k] for k in ks if k in sol.roots}
    missing = [k for k in ks if k not in found]
    if missing:
        fun = lambda y: pr.f_both(sol.spline, sol.lam_end, y)
        t = np.array(missing, dtype=float) + 0.5
        hi = np.full(t.size, pr.xi_max)
        while np.any(fun(hi)[0] < t):
            hi = hi * 2
        y = monotone_solve(fun, t, np.ones(t.size), hi, tol=pr.config.tol_root * 1e-2)
        for k, yk in zip(missing, y):
            found[k] = float(pr.omega * yk)
    return [(k, found[k]) for k in ks]


def _root_points(sol):
    """Roots below the last tracked crossing, in xi units."""
    cr = sol.convolver.cross
    holes = set(sol.holeset.finite_holes)
    keep = np.array([int(j) not in holes for j in cr.js[: cr.iJ]], dtype=bool)
    return cr.y[: cr.iJ][keep]


def log_bae_residuals(sol, ks):
    """|-2p + sum_j F(x_k/x_j) + tail - 1/2 - k| recomputed from the root set."""
    pr = sol.problem
    xk = np.array([x for _, x in (roots(sol, k, k)[0] for k in ks)]) / sol.omega
    yr = _root_points(sol)
    tail, _ = sol.convolver.tail(xk)
    s = f_alpha(pr.ctx, xk[:, None] / yr[None, :]).sum(axis=1)
    return np.abs(-2 * sol.p + s + tail - 0.5 - np.asarray(ks, dtype=float))


def log_bae_residual(sol, k):
    return float(log_bae_residuals(sol, [k])[0])


def _log_q_tail(sol, zeta):
    """sum_{j >= J} log(1 - zeta / y_j) via the smooth integral plus sawtooth corrections."""
    pr = sol.problem
    cr = sol.convolver.cross
    yJ = cr.y[cr.iJ]
    J = cr.J
    fun = lambda yy: pr.f_both(sol.spline, sol.lam_end, np.atleast_1d(yy))

    def psi(yy):
        return -zeta / (yy * (yy - zeta))

    def integrand(v, part):
        yy = yJ * np.exp(v)
        val = (fun(yy)[0][0] - J) * psi(yy) * yy
        return val.real if part == 0 else val.imag

    # the integrand decays like exp(-(1 - s0) v); 40 / (1 - s0) is exhaustive
    cuts = np.linspace(0.0, 40.0 / (1.0 - pr.s0), 9)
    re = im = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        re += integrate.quad(integrand, a, b, args=(0,), limit=200, epsabs=1e-15, epsrel=1e-13)[0]
        im += integrate.quad(integrand, a, b, args=(1,), limit=200, epsabs=1e-15, epsrel=1e-13)[0]
    yn = cr.y[cr.iJ - 1: cr.iJ + 2]
    g = psi(yn) * yn / fun(yn)[1]
    g2 = g[2] - 2 * g[1] + g[0]
    return re + 1j * im + g[1] / 12.0 - g2 / 720.0, float(abs(g2)) / 720.0


def log_q(sol, x):
    """(log Q(x), tail bound) with Q(x) = prod_k (1 - x/x_k)."""
    zeta = complex(x) / sol.omega
    if zeta == 0:
        return 0j, 0.0
    with np.errstate(divide="ignore"):
        s = np.sum(np.log(1 - zeta / _root_points(sol)))
    t, bound = _log_q_tail(sol, zeta)
    return s + t, float(bound)


def q_eval(sol, x, normalize=False, tail_tol=None):
    """(Q(x), tail bound); normalize divides by Q(1)."""
    lq, bound = log_q(sol, x)
    if normalize:
        l1, b1 = log_q(sol, 1.0)
        lq -= l1
        bound += b1
    tol = sol.problem.config.tail_tol if tail_tol is None else tail_tol
    if bound > tol:
        raise NonConvergence("Q tail bound exceeds tolerance", bound=bound, tail_tol=tol)
    return complex(np.exp(lq)), bound


def mult_bae_residual(sol, k):
    """(|e^{-4 pi i p} Q(x_k e^{-i theta}) / Q(x_k e^{i theta}) + 1|, tail bound)."""
    xk = roots(sol, k, k)[0][1]
    th = sol.ctx.theta
    lm, bm = log_q(sol, xk * np.exp(-1j * th))
    lp, bp = log_q(sol, xk * np.exp(1j * th))
    return abs(complex(np.exp(-4j * pi * sol.p + lm - lp) + 1.0)), bm + bp


def residuals(sol, k):
    if k in sol.holeset.finite_holes:
        raise DomainError("k is a hole, not a root", k=k)
    mult, bound = mult_bae_residual(sol, k)
    return {"log_bae": log_bae_residual(sol, k), "mult_bae": mult, "tail_bound": bound}


def convolve_lambda(sol, xi):
    """K1[lambda](xi) by composite Gauss-Legendre on the grid cells plus the power tail."""
    pr = sol.problem
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    xg, wg = _GL8
    a, b = pr.t_grid[:-1], pr.t_grid[1:]
    tt = (0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * xg[None, :]).ravel()
    ww = (0.5 * (b - a)[:, None] * wg[None, :]).ravel()
    lam = sol.spline(tt) * ww
    yy = np.exp(tt)
    body = np.array([np.dot(kernel_k(pr.ctx, x / yy), lam) for x in xi])
    c = sol.lam_end * pr.xi_max ** pr.s0
    return body + series_tail_integral(pr.ctx, xi, ((-pr.s0, c, 0.0),), pr.xi_max, pr.cache)


def oscillatory_part(sol, xi=None):
    """K1[<lbar + lambda>](xi) with <v> = v - ceil(v - 1/2).

    K1 of the smooth part uses K1[lbar] = lbar + 2p and a quadrature of K1[lambda].
    """
    pr = sol.problem
    xi = pr.xi_grid if xi is None else np.atleast_1d(np.asarray(xi, dtype=float))
    k1, _ = sol.convolver(xi)
    return pr.lbar_both(xi)[0] + 2 * sol.p + convolve_lambda(sol, xi) - k1


def check_asymptotics(sol, k_limit=50):
    """Deviation from the linearised roots and the fitted large-x constant."""
    pr = sol.problem
    p = sol.p
    devs = []
    for k, xk in sorted(sol.roots.items()):
        if k > k_limit:
            break
        xhat = sol.omega * xi_linear(pr, k)
        devs.append(abs(xk / xhat - 1) * p * p)
    # fit z - x^s0 + p(1+alpha) = C + sum_e b_e xi^e over the outer tenth of the grid,
    # with the decaying exponents taken from the lbar series
    xi = pr.xi_grid[pr.xi_grid >= pr.xi_max / 10]
    x = sol.omega * xi
    resid = z_eval(sol, x) - x ** pr.s0 + p * (1 + pr.ctx.alpha)
    exps = [e for e, _, _ in pr.lbar_terms if e < -1e-12][:2]
    basis = np.column_stack([np.ones_like(xi)] + [xi ** e for e in exps])
    coef = np.linalg.lstsq(basis, resid, rcond=None)[0]
    return {"uniform_deviation": max(devs) if devs else 0.0,
            "tail_constant": float(coef[0]),
            "edge_value": float(resid[-1]),
            "state_norm": pr.norm(sol.state.lam, sol.state.mu)}


def subleading_slope(ctx):
    """sqrt(2) alpha / (1+alpha)^{3/2}, the coefficient of (k+1/2)/p in x_k / (A p^{2a/(1+a)})."""
    a = ctx.alpha
    return sqrt(2.0) * a / (1 + a) ** 1.5


def root_remainder(sol, k=0):
    """|x_k p^{-2a/(1+a)}/A - 1 - slope (k+1/2)/p| p^2."""
    ctx, p = sol.ctx, sol.p
    scaled = sol.roots[k] * p ** (-2 * ctx.alpha / (1 + ctx.alpha)) / ctx.A
    return abs(scaled - 1 - subleading_slope(ctx) * (k + 0.5) / p) * p * p


def oscillation_scale(sol):
    """max over the grid of |K1[<lbar + lambda>](xi)| p xi^{(1+a)/(2a)}."""
    xi = sol.problem.xi_grid
    return float(np.max(np.abs(oscillatory_part(sol, xi)) * sol.p * xi ** sol.ctx.exponent))


def xi_linear(pr, k):
    """Solution of lbar(xi) = k + 1/2 (the linearised root prediction in xi units)."""
    target = np.array([k + 0.5])
    hi = np.array([pr.xi_max])
    while pr.lbar_both(hi)[0][0] < target[0]:
        hi = hi * 2
    return float(monotone_solve(lambda y: tuple(pr.lbar_both(y)), target, np.array([1.0]), hi)[0])


# ------------------------------------------------------- serialization

def solution_to_dict(sol):
    d = sol.diagnostics
    return {
        "alpha": sol.ctx.alpha,
        "p": sol.p,
        "partition": list(sol.partition.parts),
        "omega": sol.omega,
        "iterations": d["iterations"],
        "contraction_ratio": d["contraction_ratio"],
        "roots": [{"k": k, "x": x} for k, x in sorted(sol.roots.items())],
        "holes": [{"k": int(k), "h": float(h)} for k, h in zip(sol.problem.sigma, sol.h)],
        "residual_max": d["residual_max"],
        "tail_bound": d["tail_bound"],
    }


ROOT_CSV_HEADER = ("k", "x_k", "residual_log", "residual_mult")


def root_table(sol, ks=None):
    """Rows (k, x_k, log residual, multiplicative residual)."""
    if ks is None:
        ks = [k for k, _ in sorted(sol.roots.items())]
    logs = log_bae_residuals(sol, ks)
    return [(k, sol.roots[k], float(lb), mult_bae_residual(sol, k)[0]) for k, lb in zip(ks, logs)]
