"""WKB solution of the linearised IBA.

V(u; x) = x u^2 - u^(2 alpha + 2) - 1 has two positive roots u1 < u2 for
x > rho.  The action

    S(x) = (1/pi) int_{u1}^{u2} sqrt(V) du / u      (x > rho, else 0)

gives tau(xi) = 2 (1 + alpha) S(rho xi), and the linearised solution

    lbar(xi) = p tau(xi) - (2 alpha/(1+alpha)) (p - (omega/A)^((1+alpha)/(2 alpha))) D tau(xi).

Quadratures use u = m + w sin(phi), m = (u1+u2)/2, w = (u2-u1)/2, which turns
the square-root endpoints into an analytic integrand in phi.
"""
import threading
from dataclasses import dataclass
from functools import lru_cache
from math import pi, sqrt

import mpmath
import numpy as np
from scipy import optimize, special as sps

from .errors import DomainError, NonConvergence

GL_START = 80
GL_MAX = 5120
GL_AGREE = 1e-12


@dataclass(frozen=True)
class TurningPoints:
    u1: float
    u2: float


def _ustar(alpha):
    return alpha ** (-1.0 / (2.0 * (1.0 + alpha)))


def _V(alpha, u, x):
    return x * u * u - u ** (2 * alpha + 2) - 1.0


def _Vu(alpha, u, x):
    return 2 * x * u - (2 * alpha + 2) * u ** (2 * alpha + 1)


def _Vuu(alpha, u, x):
    return 2 * x - (2 * alpha + 2) * (2 * alpha + 1) * u ** (2 * alpha)


def _safe_newton(alpha, x, lo, hi, u0, increasing, iters=200):
    """Vectorised bracketed Newton for V(u; x) = 0 on [lo, hi]."""
    u = np.clip(u0, lo, hi)
    lo, hi = lo.copy(), hi.copy()
    for _ in range(iters):
        v = _V(alpha, u, x)
        neg = v < 0 if increasing else v > 0
        lo = np.where(neg, u, lo)
        hi = np.where(neg, hi, u)
        d = _Vu(alpha, u, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            un = u - v / d
        bad = ~np.isfinite(un) | (un <= lo) | (un >= hi)
        un = np.where(bad, 0.5 * (lo + hi), un)
        done = np.abs(un - u) <= 1e-16 * np.abs(u)
        u = un
        if np.all(done | (hi - lo <= 4e-16 * np.abs(u))):
            break
    return u


def turning_points_array(ctx, x):
    """Roots u1 <= u* <= u2 of V(u; x) for an array of x >= rho."""
    a = ctx.alpha
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < ctx.rho * (1 - 1e-15)):
        raise DomainError("turning points need x >= rho", x_min=float(x.min()))
    us = _ustar(a)
    eps = np.maximum(x - ctx.rho, 0.0)
    c1 = a ** (-1.0 / (a + 1.0)) / sqrt(2 * a + 2)
    ustar = np.full_like(x, us)
    lo1 = np.minimum(x ** -0.5, us)
    hi2 = np.maximum(x ** (1.0 / (2 * a)), us)
    g1 = np.where(eps < 0.1, us - c1 * np.sqrt(eps), x ** -0.5)
    g2 = np.where(eps < 0.1, us + c1 * np.sqrt(eps), x ** (1.0 / (2 * a)))
    u1 = _safe_newton(a, x, lo1, ustar, g1, True)
    u2 = _safe_newton(a, x, ustar, hi2, g2, False)
    at = eps == 0.0
    u1[at] = us
    u2[at] = us
    return u1, u2


def turning_points(ctx, x):
    u1, u2 = turning_points_array(ctx, x)
    return TurningPoints(float(u1[0]), float(u2[0]))


@lru_cache(maxsize=None)
def _gl(n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * pi * t, 0.5 * pi * w


def _dd(beta, a, d):
    """(b^beta - a^beta)/(b - a) with b = a + d, free of cancellation."""
    t = d / a
    with np.errstate(divide="ignore", invalid="ignore"):
        r = a ** (beta - 1) * np.expm1(beta * np.log1p(t)) / t
    return np.where(t == 0, beta * a ** (beta - 1), r)


def _integrands(a, x, u1, u2, phi):
    """Integrands (in phi) of pi S, 2 pi S' and 2 pi S''.

    x, u1, u2 have shape (m, 1); phi has shape (n,).  The smooth factor
    g = V / ((u - u1)(u2 - u)) is formed from divided differences of V
    around the nearer root, so no cancellation occurs near the endpoints.
    """
    Q = 2 * a + 2
    s = np.sin(phi)[None, :]
    c2 = np.cos(phi)[None, :] ** 2
    w = 0.5 * (u2 - u1)
    lower = s <= 0
    # 1 + sin(phi) and 1 - sin(phi) without cancellation
    one_p = 2 * np.sin(0.5 * phi + 0.25 * pi)[None, :] ** 2
    one_m = 2 * np.cos(0.5 * phi + 0.25 * pi)[None, :] ** 2
    d1 = w * one_p            # u - u1
    d2 = w * one_m            # u2 - u
    u = np.where(lower, u1 + d1, u2 - d2)
    ur = np.where(lower, u1, u2)            # nearer root
    dr = np.where(lower, d1, -d2)           # u - ur
    far = np.where(lower, d2, d1)
    sgn = np.where(lower, 1.0, -1.0)
    # V(u) = (u - ur) V[ur, u],  V[ur, u] = x (u + ur) - h[ur, u]
    vdd = x * (u + ur) - _dd(Q, ur, dr)
    g = sgn * vdd / far
    g = np.where(w == 0, -0.5 * _Vuu(a, u1, x), g)
    sg = np.sqrt(g)
    f0 = w * w * c2 * sg / u
    f1 = u / sg
    # x-derivative at fixed phi
    with np.errstate(divide="ignore", invalid="ignore"):
        du1 = -u1 * u1 / _Vu(a, u1, x)
        du2 = -u2 * u2 / _Vu(a, u2, x)
        ux = 0.5 * (du1 * one_m + du2 * one_p)
        wx = 0.5 * (du2 - du1)
        Lp = (du2 - du1) / (2 * w)
        # N(u) = V_u(u) u_x + u^2 vanishes at both roots; N = (u - ur) N[ur, u]
        vudd = 2 * x - Q * _dd(Q - 1, ur, dr)
        ndd = vudd * ux + _Vu(a, ur, x) * Lp + u + ur
        q = sgn * ndd / far
        gx = q - 2 * g * wx / w
        f2 = ux / sg - u * gx / (2 * g * sg)
    return f0, f1, f2


S2_XTRAP = 1e-3


def _action_all(ctx, x):
    """(S, S', S'') for an array of x > rho, with order doubling.

    Close to rho the turning points are only known to ~eps/sqrt(x - rho), which
    spoils S''; for x < rho (1 + S2_XTRAP) it is replaced by a quartic
    extrapolation from points further right (S'' is analytic at rho+).
    """
    a = ctx.alpha
    x = np.asarray(x, dtype=float)
    out = np.zeros((3, x.size))
    if x.size == 0:
        return out
    near = x < ctx.rho * (1 + S2_XTRAP)
    u1, u2 = turning_points_array(ctx, x)
    todo = np.arange(x.size)
    n = GL_START
    prev = None
    while todo.size:
        phi, wts = _gl(n)
        f0, f1, f2 = _integrands(a, x[todo, None], u1[todo, None], u2[todo, None], phi)
        cur = np.stack([f0 @ wts / pi, f1 @ wts / (2 * pi), f2 @ wts / (2 * pi)])
        if prev is not None:
            err = np.abs(cur - prev) / np.maximum(1.0, np.abs(cur))
            err[2, near[todo]] = 0.0
            ok = np.all(err < GL_AGREE, axis=0)
            out[:, todo[ok]] = cur[:, ok]
            todo, cur = todo[~ok], cur[:, ~ok]
            if todo.size and 2 * n > GL_MAX:
                raise NonConvergence("action quadrature did not settle", x=x[todo].tolist())
        prev = cur
        n *= 2
    if np.any(near):
        out[2, near] = _s2_near(ctx, x[near])
    return out


def _s2_near(ctx, x):
    h = S2_XTRAP * ctx.rho
    nodes = ctx.rho + h * np.array([1.0, 1.5, 2.0, 2.5, 3.0])
    vals = _action_all(ctx, nodes)[2]
    coef = np.polyfit((nodes - ctx.rho) / h, vals, 4)
    return np.polyval(coef, (x - ctx.rho) / h)


def _s_limits(ctx):
    a = ctx.alpha
    sp = a ** (-1.0 / (a + 1.0)) / (2.0 * sqrt(2 * a + 2))
    return sp


def _action_eval(ctx, x, which):
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    res = np.zeros(flat.size)
    above = flat > ctx.rho
    if np.any(above):
        res[above] = _action_all(ctx, flat[above])[which]
    at = flat == ctx.rho
    if which == 1 and np.any(at):
        res[at] = _s_limits(ctx)
    if which == 2 and np.any(at):
        res[at] = _action_second_at_rho(ctx)
    res = res.reshape(x.shape)
    return res if res.ndim else float(res)


def action_s(ctx, x):
    return _action_eval(ctx, x, 0)


def action_s_prime(ctx, x):
    """S'(x); at x = rho the right limit is returned, 0 for x < rho."""
    return _action_eval(ctx, x, 1)


def action_s_second(ctx, x):
    return _action_eval(ctx, x, 2)


def _action_second_at_rho(ctx):
    return float(_s2_near(ctx, np.array([ctx.rho]))[0])


def s_leading_constant(ctx):
    """lim x^{-(1+alpha)/(2 alpha)} S(x)."""
    a = ctx.alpha
    return sps.gamma((1 + 2 * a) / (2 * a)) / (2 * sqrt(pi) * sps.gamma((1 + 3 * a) / (2 * a)))


# ---------------------------------------------------------------- tau cache

class _TauCache:
    """Thread-safe memo of (tau, D tau, D^2 tau) keyed by the exact float xi."""

    def __init__(self, ctx):
        self.ctx = ctx
        self.lock = threading.Lock()
        self.data = {}

    def get(self, xi):
        xi = np.asarray(xi, dtype=float)
        flat = xi.ravel()
        out = np.zeros((3, flat.size))
        with self.lock:
            hits = [self.data.get(v) for v in flat.tolist()]
        miss = [i for i, h in enumerate(hits) if h is None]
        for i, h in enumerate(hits):
            if h is not None:
                out[:, i] = h
        if miss:
            vals = _tau_uncached(self.ctx, flat[miss])
            out[:, miss] = vals
            with self.lock:
                if len(self.data) > 2_000_000:
                    self.data.clear()
                for j, i in enumerate(miss):
                    self.data[float(flat[i])] = tuple(vals[:, j])
        return out.reshape((3,) + xi.shape)


_CACHES = {}
_CACHES_LOCK = threading.Lock()


def _cache(ctx):
    with _CACHES_LOCK:
        c = _CACHES.get(ctx)
        if c is None:
            c = _CACHES[ctx] = _TauCache(ctx)
        return c


def _tau_uncached(ctx, xi):
    """Rows: tau, D tau, D^2 tau for an array xi."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((3, xi.size))
    k = 2 * (1 + ctx.alpha)
    above = xi > 1.0
    if np.any(above):
        x = ctx.rho * xi[above]
        S, S1, S2 = _action_all(ctx, x)
        out[0, above] = k * S
        out[1, above] = k * x * S1
        out[2, above] = k * (x * S1 + x * x * S2)
    at = xi == 1.0
    if np.any(at):
        out[1, at] = tau_prime_at_one(ctx)
        x = ctx.rho
        out[2, at] = k * (x * _s_limits(ctx) + x * x * _action_second_at_rho(ctx))
    return out


def tau_all(ctx, xi):
    """(tau, D tau, D^2 tau) at xi (array), memoised."""
    return _cache(ctx).get(xi)


def _scalar(v):
    return v if np.ndim(v) else float(v)


def tau(ctx, xi):
    """tau(xi) = 2 (1 + alpha) S(rho xi); zero on [0, 1]."""
    return _scalar(tau_all(ctx, xi)[0])


def dtau(ctx, xi):
    """D tau = xi tau'(xi); the right limit is used at xi = 1."""
    return _scalar(tau_all(ctx, xi)[1])


def d2tau(ctx, xi):
    return _scalar(tau_all(ctx, xi)[2])


def tau_prime_at_one(ctx):
    """Closed form of tau'(1+): (1 + alpha)^{3/2} / (sqrt 2 alpha)."""
    a = ctx.alpha
    return (1 + a) ** 1.5 / (sqrt(2.0) * a)


def extrapolate_tau_prime(ctx, h0=1e-3, levels=6):
    """tau'(1+) from the values of D tau / xi at xi = 1 + h0 2^-j (Richardson)."""
    hs = h0 * 0.5 ** np.arange(levels)
    vals = dtau(ctx, 1.0 + hs) / (1.0 + hs)
    table = [list(vals)]
    for j in range(1, levels):
        prev = table[-1]
        table.append([(2 ** j * prev[i + 1] - prev[i]) / (2 ** j - 1) for i in range(len(prev) - 1)])
    return float(table[-1][0])


# ------------------------------------------------------ asymptotic series

def _mellin_integrand_mp(alpha):
    a = mpmath.mpf(alpha) / (1 + mpmath.mpf(alpha))
    al = mpmath.mpf(alpha)

    def M(s):
        return (al ** (a * s) * (1 + al) ** (1 - s) / (2 * mpmath.sqrt(mpmath.pi))
                * mpmath.gamma(-0.5 - a * s) * mpmath.gamma(1 - s / (1 + al))
                * mpmath.rgamma(-s) / s ** 2)
    return M


@lru_cache(maxsize=32)
def tau_series(alpha, min_exponent=-8.0):
    """Large-xi expansion tau(xi) ~ sum_j xi^e_j (c_j + d_j log xi).

    Terms are the residues of the Mellin representation of tau at its poles,
    computed by trapezoidal contour integrals on small circles (this handles
    double poles from coinciding Gamma poles).  Returns a tuple of
    (e, c, d) with e >= min_exponent, in decreasing order of e.
    """
    alpha = float(alpha)
    a = alpha / (1 + alpha)
    cands = [(n - 0.5) / a for n in range(0, 200) if -(n - 0.5) / a >= min_exponent - 1e-9]
    cands += [0.0]
    cands += [(1 + alpha) * (m + 1) for m in range(200) if -(1 + alpha) * (m + 1) >= min_exponent - 1e-9]
    cands = sorted(cands)
    poles = []
    for c in cands:
        if not poles or abs(c - poles[-1]) > 1e-9:
            poles.append(c)
    near = sorted(set(poles + [float(k) for k in range(-1, int(abs(min_exponent)) + 3)]))
    terms = []
    with mpmath.workdps(30):
        M = _mellin_integrand_mp(alpha)
        npts = 96
        for p0 in poles:
            dist = min([abs(p0 - q) for q in near if abs(p0 - q) > 1e-9] + [1.0])
            r = 0.3 * dist
            b1 = mpmath.mpf(0)
            b2 = mpmath.mpf(0)
            for j in range(npts):
                z = r * mpmath.expjpi(2 * mpmath.mpf(j) / npts)
                val = M(p0 + z)
                b1 += val * z
                b2 += val * z * z
            b1 = complex(b1 / npts).real
            b2 = complex(b2 / npts).real
            if abs(b1) < 1e-20 and abs(b2) < 1e-20:
                continue
            terms.append((-p0, -b1, b2 if abs(b2) > 1e-20 else 0.0))
    terms.sort(key=lambda t: -t[0])
    return tuple(terms)


def series_eval(terms, xi, n=0):
    """D^n of sum xi^e (c + d log xi) for n in {0, 1, 2}."""
    xi = np.asarray(xi, dtype=float)
    L = np.log(xi)
    out = np.zeros_like(xi)
    for e, c, d in terms:
        pw = xi ** e
        if n == 0:
            out += pw * (c + d * L)
        elif n == 1:
            out += pw * (e * (c + d * L) + d)
        else:
            out += pw * (e * e * (c + d * L) + 2 * e * d)
    return out if out.ndim else float(out)


def tau_asymptotic(ctx, xi, n=0):
    return series_eval(tau_series(ctx.alpha), xi, n)


def series_derivative(terms):
    """Terms of D f for f = sum xi^e (c + d log xi)."""
    return tuple((e, e * c + d, e * d) for e, c, d in terms)


def k1_transform(ctx, xi, fun, terms, y_max=400.0, panel=0.25, nodes=20):
    """K1[f](xi) = int_1^inf K(xi/y) f(y) dy/y.

    fun evaluates f on an array of y in [1, y_max]; beyond y_max f is replaced
    by its series terms and the tail is summed through Mellin tails.  The body
    is composite Gauss-Legendre in log y.
    """
    from .special import kernel_k, mellin_tail
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    lY = np.log(y_max)
    npan = max(1, int(np.ceil(lY / panel)))
    edges = np.linspace(0.0, lY, npan + 1)
    g, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * np.diff(edges)
    v = (0.5 * (edges[1:] + edges[:-1])[:, None] + half[:, None] * g[None, :]).ravel()
    wv = (half[:, None] * w[None, :]).ravel()
    y = np.exp(v)
    fy = np.asarray(fun(y), dtype=float)
    body = kernel_k(ctx, xi[:, None] / y[None, :]) @ (wv * fy)
    tail = np.zeros_like(xi)
    for i, x in enumerate(xi):
        r, L = y_max / x, np.log(x)
        for e, c, d in terms:
            t = (c + d * L) * mellin_tail(ctx, e, r)
            if d:
                t += d * mellin_tail(ctx, e, r, 1)
            tail[i] += x ** e * t
    return body + tail


def k1_tau(ctx, xi, n=0, y_max=400.0):
    """K1[D^n tau](xi) for n in {0, 1}, with the analytic series tail."""
    if n not in (0, 1):
        raise DomainError("n must be 0 or 1", n=n)
    terms = tau_series(ctx.alpha)
    if n == 1:
        terms = series_derivative(terms)
    return k1_transform(ctx, xi, lambda y: tau_all(ctx, y)[n], terms, y_max)


# ------------------------------------------------------------ Mellin oracle

def _mellin_integrand_np(alpha, s):
    a = alpha / (1 + alpha)
    lg = (a * s * np.log(alpha) + (1 - s) * np.log(1 + alpha) - np.log(2 * sqrt(pi))
          + sps.loggamma(-0.5 - a * s) + sps.loggamma(1 - s / (1 + alpha))
          - sps.loggamma(-s) - 2 * np.log(s))
    return lg


def tau_mellin(ctx, xi, tol=1e-8, t_start=64.0, t_max=2.0 ** 22):
    """tau(xi) from its Mellin contour integral along Re s = delta (oracle)."""
    xi = float(xi)
    if xi <= 1.0:
        raise DomainError("tau_mellin needs xi > 1", xi=xi)
    a = ctx.alpha
    delta = -(1 + a) / (2 * a) - 0.25
    nodes, wts = np.polynomial.legendre.leggauss(24)
    lx = np.log(xi)

    def piece(t0, t1):
        # panels no wider than a quarter oscillation period
        width = min(1.0, 0.5 * pi / max(lx, 1e-3))
        npan = max(1, int(np.ceil((t1 - t0) / width)))
        edges = np.linspace(t0, t1, npan + 1)
        total = 0.0
        for i in range(0, npan, 4096):           # bounded memory per chunk
            e = edges[i:i + 4097]
            mid = 0.5 * (e[1:] + e[:-1])[:, None]
            half = 0.5 * (e[1:] - e[:-1])[:, None]
            s = delta + 1j * (mid + half * nodes[None, :])
            val = np.exp(_mellin_integrand_np(a, s) - s * lx).real
            total += float(np.sum(val * wts[None, :] * half))
        return total / pi

    total = piece(0.0, t_start)
    T = t_start
    while True:
        inc = piece(T, 2 * T)
        total += inc
        T *= 2
        if abs(inc) < tol:
            return total
        if T > t_max:
            raise NonConvergence("Mellin contour tail above tolerance", increment=inc, T=T)


# ------------------------------------------------------ linearised solution

@dataclass(frozen=True)
class LinearizedSolution:
    ctx: object
    p: float
    omega: float
    value_at_1: float
    coef: float          # (2 alpha/(1+alpha)) (p - (omega/A)^{exponent})

    def value(self, xi):
        t = tau_all(self.ctx, xi)
        return _scalar(self.p * t[0] - self.coef * t[1])

    def dvalue(self, xi):
        """xi lbar'(xi)."""
        t = tau_all(self.ctx, xi)
        return _scalar(self.p * t[1] - self.coef * t[2])

    def both(self, xi):
        t = tau_all(self.ctx, xi)
        return self.p * t[0] - self.coef * t[1], self.p * t[1] - self.coef * t[2]

    def series(self):
        """Large-xi expansion terms of lbar, same format as tau_series."""
        out = []
        for e, c, d in tau_series(self.ctx.alpha):
            # D (xi^e (c + d log)) = xi^e (e c + d + e d log)
            out.append((e, self.p * c - self.coef * (e * c + d), self.p * d - self.coef * e * d))
        return tuple(out)


def linearized_solution(ctx, p, omega):
    if p <= 0 or omega <= 0:
        raise DomainError("need p > 0 and omega > 0", p=p, omega=omega)
    a = ctx.alpha
    w = (omega / ctx.A) ** ctx.exponent
    coef = 2 * a / (1 + a) * (p - w)
    l1 = sqrt(2 * (1 + a)) * (w - p)
    return LinearizedSolution(ctx, float(p), float(omega), float(l1), float(coef))


def omega_h(ctx, p, H):
    a = ctx.alpha
    base = p - H / sqrt(2 * (1 + a))
    if base <= 0:
        raise DomainError("p too small for omega_H", p=p, H=H)
    return ctx.A * base ** (2 * a / (1 + a))


def omega_window(ctx, p, H, C):
    a = ctx.alpha
    r = sqrt(2 * (1 + a))
    if C <= 0 or p < (H + C) / r:
        raise DomainError("need C > 0 and p >= (H + C)/sqrt(2(1+alpha))", p=p, H=H, C=C)
    pw = 2 * a / (1 + a)
    return (ctx.A * (p - (H + C) / r) ** pw, ctx.A * (p - (H - C) / r) ** pw)


def xi_k_linear(ctx, p, H, k):
    """Solve lbar(xi; omega_H, p) = k + 1/2 for xi >= 1."""
    if k < -H:
        raise DomainError("k must be >= -H", k=k, H=H)
    lin = linearized_solution(ctx, p, omega_h(ctx, p, H))
    target = k + 0.5
    f = lambda xi: lin.value(xi) - target
    lo, hi = 1.0, 1.0 + 1.0 / p
    while f(hi) <= 0:
        lo, hi = hi, 1.0 + 2 * (hi - 1.0)
        if hi > 1e12:
            raise NonConvergence("could not bracket xi_k", k=k)
    if f(lo) > 0:
        raise NonConvergence("lbar not increasing from xi = 1", k=k)
    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
