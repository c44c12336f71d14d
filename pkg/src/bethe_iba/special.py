"""Kernel K_alpha, its integral F_alpha and the Mellin constants Phi, Psi.

Conventions
-----------
theta = 2 pi / (1 + alpha), kappa_c = cos(theta), sigma_c = sin(theta).

    K(x)   = (sigma_c / pi) x / (1 + x^2 - 2 x kappa_c)
    F(x)   = int_0^x K(y) dy / y = -(1/pi) arg(1 - x e^{i theta})
    Phi(s; r) = (sigma_c / pi) int_r^inf t^s / (1 + t^2 - 2 t kappa_c) dt

so that int_Y^inf K(xi / y) y^(s-1) dy = xi^s Phi(s; Y / xi).
"""
from dataclasses import dataclass
from math import gamma, pi, sqrt

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError

QUAD_EPSREL = 1e-13
QUAD_LIMIT = 400


@dataclass(frozen=True)
class AlphaContext:
    alpha: float
    theta: float
    kappa_c: float
    sigma_c: float
    rho: float
    A: float
    eta: float
    G: float
    L: float

    @property
    def exponent(self):
        """Growth exponent (1 + alpha) / (2 alpha) of tau and z."""
        return (1.0 + self.alpha) / (2.0 * self.alpha)

    @property
    def f_inf(self):
        """lim F(x) as x -> inf, equal to Phi(alpha, 0)."""
        return (self.alpha - 1.0) / (self.alpha + 1.0)


def _sup_dk(alpha, theta, sig):
    if alpha <= 3.0:
        return sig / pi
    c1 = np.cos(2 * pi * (alpha + 3) / (3 * (alpha + 1)))
    c2 = np.cos(2 * pi / (alpha + 1))
    c3 = np.cos(pi * (alpha + 3) / (3 * (alpha + 1)))
    return -sig * (2 * c1 + 1) / (pi * (2 * c1 + 3 - 4 * c2 * c3) ** 2)


def alpha_context(alpha):
    """Build the context of derived constants for a degree alpha > 1."""
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha <= 1.0:
        raise DomainError("alpha must be > 1", alpha=alpha)
    theta = 2.0 * pi / (1.0 + alpha)
    kap, sig = np.cos(theta), np.sin(theta)
    rho = (alpha + 1.0) / alpha * alpha ** (1.0 / (alpha + 1.0))
    pw = 2.0 * alpha / (1.0 + alpha)
    A = (1.0 + alpha) * (gamma(1 / (2 * alpha)) / (sqrt(pi * alpha) * gamma((1 + alpha) / (2 * alpha)))) ** pw
    eta = (2.0 * sqrt(pi) * gamma(1.5 + 1 / (2 * alpha)) / gamma(1 + 1 / (2 * alpha))) ** pw
    G = sig / pi if alpha <= 3.0 else 1.0 / (pi * sig)
    L = _sup_dk(alpha, theta, sig)
    return AlphaContext(alpha, theta, float(kap), float(sig), rho, A, eta, G, float(L))


def kernel_k(ctx, x, n=0):
    """Euler derivative D^n K(x), D = x d/dx, for n in {0, 1, 2}.

    Accepts scalars or arrays (x >= 0).
    """
    x = np.asarray(x, dtype=float)
    c = ctx.sigma_c / pi
    den = 1.0 + x * x - 2.0 * ctx.kappa_c * x
    if n == 0:
        out = c * x / den
    elif n == 1:
        out = c * x * (1.0 - x * x) / den ** 2
    elif n == 2:
        out = c * x * ((1.0 - 3.0 * x * x) * den - 4.0 * x * (1.0 - x * x) * (x - ctx.kappa_c)) / den ** 3
    else:
        raise DomainError("n must be 0, 1 or 2", n=n)
    return out if out.ndim else float(out)


def kernel_dk(ctx, x):
    """Ordinary derivative K'(x)."""
    x = np.asarray(x, dtype=float)
    den = 1.0 + x * x - 2.0 * ctx.kappa_c * x
    out = ctx.sigma_c / pi * (1.0 - x * x) / den ** 2
    return out if out.ndim else float(out)


def f_alpha(ctx, x):
    """F_alpha(x) = (1/pi) atan2(x sin(theta), 1 - x cos(theta)), x >= 0."""
    x = np.asarray(x, dtype=float)
    out = np.arctan2(x * ctx.sigma_c, 1.0 - x * ctx.kappa_c) / pi
    return out if out.ndim else float(out)


def phi_complete(ctx, s):
    """Closed form sin(pi s (alpha-1)/(alpha+1)) / sin(pi s) for |s| < 1."""
    s = float(s)
    if abs(s) >= 1.0:
        raise DomainError("phi_complete needs |s| < 1", s=s)
    if s == 0.0:
        return ctx.f_inf
    return np.sin(pi * s * ctx.f_inf) / np.sin(pi * s)


def _quad(f, a, b, **kw):
    val, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT, **kw)
    return val


def mellin_tail(ctx, s, r, log_power=0):
    """(sigma_c/pi) int_r^inf t^s (log t)^k / (1 + t^2 - 2 t kappa_c) dt, k in {0, 1}.

    The range [1, inf) is folded onto (0, 1] by t -> 1/t and the algebraic
    (and logarithmic) endpoint factor is handled by QUADPACK's QAWS rule.
    """
    s, r = float(s), float(r)
    if s >= 1.0:
        raise DomainError("Mellin tail diverges for s >= 1", s=s)
    if r < 0.0 or (r == 0.0 and s <= -1.0):
        raise DomainError("need r > 0 when s <= -1", s=s, r=r)
    if log_power not in (0, 1):
        raise DomainError("log_power must be 0 or 1")
    kap = ctx.kappa_c
    inv = lambda v: 1.0 / (1.0 + v * v - 2.0 * kap * v)
    wname = "alg" if log_power == 0 else "alg-loga"
    sign = (-1.0) ** log_power      # log t = -log v under t = 1/v
    if r >= 1.0:
        total = sign * _quad(inv, 0.0, 1.0 / r, weight=wname, wvar=(-s, 0.0))
    else:
        total = sign * _quad(inv, 0.0, 1.0, weight=wname, wvar=(-s, 0.0))
        if r == 0.0:
            total += _quad(inv, 0.0, 1.0, weight=wname, wvar=(s, 0.0))
        else:
            # t = e^v on [log r, 0]; smooth for every s
            g = lambda v: np.exp((s + 1.0) * v) * v ** log_power * inv(np.exp(v))
            total += _quad(g, np.log(r), 0.0)
    return ctx.sigma_c / pi * total


def phi_incomplete(ctx, s, r):
    """Incomplete Mellin integral Phi(alpha, s; r) for s < 1, r >= 0."""
    return mellin_tail(ctx, s, r, 0)


def phi_quadrature(ctx, s):
    """Phi(alpha, s) computed from its defining integral (r = 0)."""
    return mellin_tail(ctx, s, 0.0, 0)


def kernel_zeros(ctx, n, grid_points=256, span=12.0):
    """Positive zeros of K(x; n) bracketed on a log grid and refined by bisection."""
    xs = np.logspace(-span, span, grid_points)
    vals = kernel_k(ctx, xs, n)
    zeros = []
    for a, b, fa, fb in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            zeros.append(a)
        elif fa * fb < 0.0:
            zeros.append(optimize.brentq(lambda t: kernel_k(ctx, t, n), a, b, xtol=1e-300, rtol=1e-15))
    return np.array(zeros)


def psi_norm(ctx, n):
    """Psi(alpha, 0; n) = int_0^inf |K(x; n)| dx / x.

    The integral is split at the sign changes of K(.; n) and each piece is
    integrated in the variable log x.
    """
    if n not in (0, 1, 2):
        raise DomainError("n must be 0, 1 or 2", n=n)
    # |K(e^v; n)| < e^{-|v|} beyond the cuts, so +-80 is exhaustive
    cuts = [-80.0] + [np.log(z) for z in kernel_zeros(ctx, n)] + [80.0]
    f = lambda v: kernel_k(ctx, np.exp(v), n)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += abs(_quad(f, a, b))
    return total
