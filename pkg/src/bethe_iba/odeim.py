"""Monster potentials, their apparent-singularity algebra and Schrodinger spectra.

The radial problem is psi'' = (V(t) - E) psi on t > 0 with

    V(t) = l(l+1)/t^2 + t^(2 alpha) - 2 d^2/dt^2 sum_k log(t^(2 alpha + 2) - z_k).

alpha = 1 (the harmonic family) is allowed here, so functions accept either
an AlphaContext or a plain float alpha >= 1.
"""
from dataclasses import dataclass
from math import cos, gamma, pi, sin, sqrt

import numpy as np
import sympy
from scipy import integrate, optimize

from . import wkb
from .errors import (DegenerateRoots, DomainError, MatchFailure, NonConvergence,
                     RealAxisSingularity)
from .partitions import Partition


def _alpha(ctx):
    a = float(getattr(ctx, "alpha", ctx))
    if not np.isfinite(a) or a < 1.0:
        raise DomainError("alpha must be >= 1 for the ODE side", alpha=a)
    return a


def eta_constant(ctx):
    """Leading coefficient of the eigenvalue counting function, raised to 2 alpha/(1+alpha)."""
    a = _alpha(ctx)
    base = 2 * sqrt(pi) * gamma(1.5 + 1 / (2 * a)) / gamma(1 + 1 / (2 * a))
    return base ** (2 * a / (1 + a))


# ------------------------------------------------------ Hermite Wronskians

@dataclass(frozen=True)
class WronskianPoly:
    coeffs: tuple          # exact integers, highest degree first

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def __call__(self, t):
        return np.polyval(np.array(self.coeffs, dtype=float), t)


_T = sympy.Symbol("t")


def hermite_he(n):
    """Probabilists' Hermite polynomial He_n as a sympy Poly with integer coefficients."""
    h0, h1 = sympy.Poly(1, _T), sympy.Poly(_T, _T)
    if n == 0:
        return h0
    for m in range(1, n):
        h0, h1 = h1, sympy.Poly(_T, _T) * h1 - m * h0
    return h1


def hermite_wronskian(nu):
    """Wr[He_{nu_H}, He_{nu_{H-1}+1}, ..., He_{nu_1+H-1}] with exact integer coefficients."""
    parts = list(nu.parts)
    H = len(parts)
    if H == 0:
        return WronskianPoly((1,))
    degs = [parts[H - 1 - i] + i for i in range(H)]
    polys = [hermite_he(d) for d in degs]
    rows = [polys]
    for _ in range(1, H):
        rows.append([q.diff(_T) for q in rows[-1]])
    det = sympy.Matrix([[q.as_expr() for q in r] for r in rows]).det(method="berkowitz")
    poly = sympy.Poly(sympy.expand(det), _T)
    coeffs = tuple(int(c) for c in poly.all_coeffs())
    if len(coeffs) - 1 != nu.N:
        raise DomainError("Wronskian degree mismatch", degree=len(coeffs) - 1, N=nu.N)
    return WronskianPoly(coeffs)


def wronskian_roots(P, tol=1e-12):
    """All complex roots (with multiplicity) from the companion matrix, Newton-polished."""
    if P.degree < 1:
        raise DomainError("polynomial has no roots", degree=P.degree)
    c = np.array(P.coeffs, dtype=float)
    dc = np.polyder(c)
    out = []
    for r in np.roots(c):
        r = complex(r)
        for _ in range(50):
            d = np.polyval(dc, r)
            if d == 0:
                break
            step = np.polyval(c, r) / d
            r_new = r - step
            if abs(np.polyval(c, r_new)) >= abs(np.polyval(c, r)):
                break
            r = r_new
            if abs(step) <= tol * max(1.0, abs(r)):
                break
        out.append(r)
    out = np.array(out)
    # enforce conjugate symmetry of a real polynomial
    return np.array(sorted(out, key=lambda v: (round(v.real, 9), v.imag)))


# -------------------------------------------------------- algebraic system

@dataclass
class MonsterPotential:
    ctx: object
    ell: float
    N: int
    z: np.ndarray
    residual: float = 0.0
    iterations: int = 0


def seed_z(ctx, nu, ell):
    a = _alpha(ctx)
    if ell <= 0:
        raise DomainError("ell must be positive", ell=ell)
    if nu.N == 0:
        return np.zeros(0, dtype=complex)
    v = wronskian_roots(hermite_wronskian(nu))
    return ell ** 2 / a + (2 * a + 2) ** 0.75 * v * ell ** 1.5 / a


def _system(a, ell, z):
    b = (3 + a) * (1 + 2 * a)
    c = a * (1 + 2 * a)
    rhs = -(4 * ell * (ell + 1) + 1 - 4 * a * a) / (16 * (a + 1))
    n = z.size
    F = -a * z / (4 * (1 + a)) - rhs
    J = np.diag(np.full(n, -a / (4 * (1 + a)), dtype=complex))
    for k in range(n):
        for j in range(n):
            if j == k:
                continue
            zk, zj = z[k], z[j]
            d = zk - zj
            num = zk * (zk * zk + b * zk * zj + c * zj * zj)
            F[k] += num / d ** 3
            J[k, k] += (3 * zk * zk + 2 * b * zk * zj + c * zj * zj) / d ** 3 - 3 * num / d ** 4
            J[k, j] += (b * zk * zk + 2 * c * zk * zj) / d ** 3 + 3 * num / d ** 4
    return F, J


def monster_residual(ctx, ell, z):
    F, _ = _system(_alpha(ctx), float(ell), np.asarray(z, dtype=complex))
    return float(np.max(np.abs(F))) if F.size else 0.0


def solve_monster(ctx, ell, nu, tol=1e-10, max_iter=100, z0=None):
    """Damped complex Newton on the apparent-singularity equations from seed_z."""
    a = _alpha(ctx)
    ell = float(ell)
    z = seed_z(ctx, nu, ell) if z0 is None else np.array(z0, dtype=complex)
    if z.size == 0:
        return MonsterPotential(ctx, ell, 0, z, 0.0, 0)
    F, J = _system(a, ell, z)
    r = np.max(np.abs(F))
    for it in range(1, max_iter + 1):
        if r < tol:
            break
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence("singular Jacobian", residual=float(r)) from exc
        lam = 1.0
        while lam > 1e-6:
            zn = z + lam * step
            Fn, Jn = _system(a, ell, zn)
            rn = np.max(np.abs(Fn))
            if np.isfinite(rn) and rn < r:
                break
            lam /= 2
        else:
            raise NonConvergence("line search failed", residual=float(r), iterations=it)
        z, F, J, r = zn, Fn, Jn, rn
    else:
        raise NonConvergence("Newton budget exhausted", residual=float(r), iterations=max_iter)
    scale = np.max(np.abs(z))
    for i in range(z.size):
        if abs(z[i]) < 1e-8 * scale:
            raise DegenerateRoots("z_k vanishes", k=i)
        for j in range(i):
            if abs(z[i] - z[j]) < 1e-8 * scale:
                raise DegenerateRoots("two z_k collide", pair=(j, i))
    return MonsterPotential(ctx, ell, z.size, z, float(r), it - 1)


def monster_n1_exact(ctx, ell):
    a = _alpha(ctx)
    return (4 * ell * (ell + 1) + 1 - 4 * a * a) / (4 * a)


# ------------------------------------------------------------- potential

def potential(ctx, ell, z, t, pole_tol=1e-10):
    """V(t) (complex); rational closed form of the log second derivative."""
    a = _alpha(ctx)
    z = np.asarray(z, dtype=complex)
    t = np.asarray(t, dtype=float)
    m = 2 * a + 2
    out = ell * (ell + 1) / t ** 2 + t ** (2 * a) + 0j
    if z.size:
        tm = t ** m
        u = tm[..., None] - z
        if np.any(np.abs(u) <= pole_tol * np.maximum(1.0, np.abs(z))):
            raise RealAxisSingularity("t^(2 alpha + 2) hits some z_k", t=t.tolist() if t.ndim else float(t))
        up = m * t[..., None] ** (m - 1)
        upp = m * (m - 1) * t[..., None] ** (m - 2)
        out = out - 2 * np.sum(upp / u - (up / u) ** 2, axis=-1)
    return out if np.ndim(out) else complex(out)


def _check_regular(a, z):
    """Refuse z sets whose poles touch the positive real axis."""
    m = 2 * a + 2
    for zk in np.asarray(z, dtype=complex):
        if abs(zk.imag) <= 1e-9 * abs(zk) and zk.real > 0:
            raise RealAxisSingularity("pole on the real axis", z=complex(zk))
    if z.size and np.max(np.abs(np.asarray(z).imag)) > 0:
        # nonreal conjugate-closed sets give a real potential; check that
        zs = np.asarray(z, dtype=complex)
        gap = np.abs(np.conj(zs)[:, None] - zs[None, :]).min(axis=1)
        if np.any(gap > 1e-10 * np.abs(zs)):
            raise DomainError("z set is not closed under conjugation")
    return m


# ----------------------------------------------------------- eigenvalues

_RTOL = 1e-12


class _Shooter:
    """Two-sided shooting for a real potential on (0, inf)."""

    def __init__(self, a, ell, z):
        self.a = a
        self.ell = float(ell)
        self.z = np.asarray(z, dtype=complex)
        self.m = _check_regular(a, self.z)
        self.c = self.ell * (self.ell + 1)
        self.a2 = 2 * a
        self.zs = [complex(v) for v in self.z]

    def V(self, t):
        return potential(self.a, self.ell, self.z, t).real

    def v_scalar(self, t):
        out = self.c / (t * t) + t ** self.a2
        if self.zs:
            m = self.m
            tm = t ** m
            up = m * tm / t
            upp = (m - 1) * up / t
            acc = 0j
            for zk in self.zs:
                u = tm - zk
                acc += upp / u - (up / u) ** 2
            out -= 2 * acc.real
        return out

    def dV(self, t, h=1e-6):
        return (self.V(t * (1 + h)) - self.V(t * (1 - h))) / (2 * h * t)

    def outer_turning(self, E):
        a = self.a
        t_hi = max(E, 1.0) ** (1 / (2 * a)) * 2 + 2
        while self.V(t_hi) <= E:
            t_hi *= 2
        # scan inward for the last sign change
        ts = np.linspace(t_hi, 1e-3, 2000)
        vs = self.V(ts) - E
        idx = np.nonzero(vs <= 0)[0]
        if idx.size == 0:
            return None
        i = idx[0]
        return optimize.brentq(lambda t: self.V(t) - E, ts[i], ts[i - 1], xtol=1e-14)

    def inner(self, E, t_m):
        ell = self.ell
        # Frobenius start: psi'/psi = (l+1)/t - E t/(2l+3) + O(t^3); next term below 1e-14
        t0 = min(sqrt(1e-7 * (2 * ell + 3) / max(abs(E), 1.0)),
                 (1e-14 * (2 * ell + 3)) ** (1 / (2 * self.a + 2)), 0.1 * t_m)
        y0 = (ell + 1) / t0 - E * t0 / (2 * ell + 3)
        th0 = np.arctan2(1.0, y0)        # cot(theta) = psi'/psi

        V = self.v_scalar

        def rhs(t, th):
            s, c = sin(th[0]), cos(th[0])
            return [c * c - (V(t) - E) * s * s]

        sol = integrate.solve_ivp(rhs, (t0, t_m), [th0], method="DOP853", rtol=_RTOL, atol=1e-13)
        if not sol.success:
            raise MatchFailure("inner integration failed", E=E, message=sol.message)
        return sol.y[0, -1]

    def outer(self, E, t_m):
        # march outward until the WKB decay integral exceeds 20: the start
        # error is damped by exp(-40) on the way back to t_m
        t_out, acc = t_m, 0.0
        step = max(0.05 * t_m, 0.05)
        while acc < 20.0:
            ts = np.linspace(t_out, t_out + step, 33)
            acc += np.trapezoid(np.sqrt(np.maximum(self.V(ts) - E, 0.0)), ts)
            t_out += step
            step *= 1.5
        q = self.V(t_out) - E
        y0 = -sqrt(q) - self.dV(t_out) / (4 * q)

        V = self.v_scalar

        def rhs(t, y):
            return [V(t) - E - y[0] * y[0]]

        sol = integrate.solve_ivp(rhs, (t_out, t_m), [y0], method="DOP853", rtol=_RTOL, atol=1e-13)
        if not sol.success:
            raise MatchFailure("outer integration failed", E=E, message=sol.message)
        y = sol.y[0, -1]
        return pi / 2 - np.arctan(y)     # arccot in (0, pi)

    def mismatch(self, E):
        t_m = self.outer_turning(E)
        if t_m is None:
            return -pi       # below the potential everywhere: no nodes, no match
        return self.inner(E, t_m) - self.outer(E, t_m)

    def count_below(self, E):
        return int(np.floor(self.mismatch(E) / pi)) + 1


def eigenvalues(ctx, ell, z=(), count=1, rtol=1e-9):
    """Lowest `count` eigenvalues with psi ~ t^(l+1) at 0 and decay at infinity."""
    a = _alpha(ctx)
    if ell <= -0.5:
        raise DomainError("ell must exceed -1/2", ell=ell)
    sh = _Shooter(a, ell, np.asarray(z, dtype=complex))
    ts = np.geomspace(1e-3, 1e3, 4000)
    e_min = float(np.min(sh.V(ts)))
    # grow an upper bound containing `count` levels
    lo = e_min
    hi = max(e_min, 0.0) + 4.0
    while sh.count_below(hi) < count:
        hi = lo + 2 * (hi - lo)
        if hi > 1e12:
            raise MatchFailure("could not bracket the requested levels", count=count)
    out = []
    for k in range(count):
        # isolate level k: smallest E with count_below(E) >= k + 1
        a_, b_ = (out[-1] if out else lo), hi
        fa = sh.mismatch(a_) - k * pi
        fb = sh.mismatch(b_) - k * pi
        guard = 0
        while fb <= 0 or fb > pi:
            # bisect on the counting function until the k-th root is isolated
            mid = 0.5 * (a_ + b_)
            fm = sh.mismatch(mid) - k * pi
            if fm > 0:
                b_, fb = mid, fm
            else:
                a_, fa = mid, fm
            guard += 1
            if guard > 200:
                raise MatchFailure("level isolation failed", k=k, bracket=(a_, b_))
        if fa > 0:
            raise MatchFailure("lower bracket already above level", k=k, bracket=(a_, b_))
        E = optimize.brentq(lambda e: sh.mismatch(e) - k * pi, a_, b_, xtol=1e-14, rtol=rtol * 1e-2)
        out.append(E)
    return np.array(out)


def wkb_levels(ctx, ell, count):
    """Solve S(E (l+1/2)^(-2a/(a+1))) = (2k+1)/(2l+1) for k < count."""
    a = ctx.alpha
    if ell <= 0:
        raise DomainError("ell must be positive", ell=ell)
    scale = (ell + 0.5) ** (2 * a / (a + 1))
    out = []
    rho = ctx.rho
    for k in range(count):
        target = (2 * k + 1) / (2 * ell + 1)
        hi = 2 * rho
        while wkb.action_s(ctx, hi) < target:
            hi *= 2
        x = optimize.brentq(lambda v: wkb.action_s(ctx, v) - target, rho, hi, xtol=1e-15, rtol=1e-14)
        out.append(x * scale)
    return np.array(out)


# ---------------------------------------------------------- dictionaries

def momentum_map(ctx, ell):
    a = _alpha(ctx)
    if ell <= -0.5:
        raise DomainError("ell must exceed -1/2", ell=ell)
    return (2 * ell + 1) / (a + 1)


def ell_from_momentum(ctx, p):
    return ((_alpha(ctx) + 1) * p - 1) / 2


@dataclass(frozen=True)
class CftParams:
    beta: float
    c: float
    Delta: float


def cft_params(ctx, p):
    a = _alpha(ctx)
    beta = (1 + a) ** -0.5
    b2 = beta * beta
    c = 13 - 6 * (b2 + 1 / b2)
    delta = 0.5 + p * p / b2 - 0.25 * (b2 + 1 / b2)
    return CftParams(beta, c, delta)


# ------------------------------------------------------------ crosscheck

# Candidate dictionaries between Bethe roots x_k(p) and levels E_k(l):
# x = E * eta^power, with l from p either by (2l+1) = (1+a) p or by (2l+1) = 4 (1+a) p.
ELL_MAPS = {
    "literal": lambda a, p: ((a + 1) * p - 1) / 2,
    "quarter": lambda a, p: 2 * (a + 1) * p - 0.5,
}


@dataclass
class Crosscheck:
    alpha: float
    p: float
    ell: float
    eta_power: int
    ell_map: str
    rows: list          # dicts k, x_k, E_k, scaled_ratio, deviation

    def header(self):
        return (f"# x = E * eta^{self.eta_power}; ell map {self.ell_map}; "
                f"alpha={self.alpha!r} p={self.p!r} ell={self.ell!r}")


def resolve_convention(ctx, x0, p, match_tol=0.10):
    """Pick the (eta power, ell map) whose lowest level lands within match_tol of x0.

    Both sides are computed at the same p; the ground-state level decides.
    """
    a = ctx.alpha
    eta = eta_constant(ctx)
    best = None
    for name, fmap in ELL_MAPS.items():
        ell = fmap(a, p)
        if ell <= -0.5:
            continue
        E0 = eigenvalues(ctx, ell, (), 1)[0]
        for power in (-1, 1):
            dev = abs(E0 * eta ** power / x0 - 1)
            if best is None or dev < best[0]:
                best = (dev, power, name)
    if best is None or best[0] > match_tol:
        raise MatchFailure("no candidate eta scaling matches the leading coefficient",
                           best_deviation=None if best is None else best[0])
    return best[1], best[2]


def crosscheck(ctx, p, nu, k_range, config=None, convention=None, solution=None):
    from . import iba
    if nu.N != 0:
        raise RealAxisSingularity("excited monster potentials have real-axis poles; only nu = () is compared")
    sol = solution or iba.solve(ctx, p, nu, config)
    ks = [k for k in k_range if k in sol.roots]
    if not ks:
        raise DomainError("no computed roots in k_range")
    if convention is None:
        x0 = iba.roots(sol, ks[0], ks[0])[0][1]
        convention = resolve_convention(ctx, x0, p)
    power, name = convention
    ell = ELL_MAPS[name](ctx.alpha, p)
    E = eigenvalues(ctx, ell, (), max(ks) + 1)
    eta = eta_constant(ctx)
    rows = []
    for k in ks:
        xk = sol.roots[k]
        ratio = E[k] * eta ** power / xk
        rows.append({"k": k, "x_k": xk, "E_k": float(E[k]), "scaled_ratio": ratio,
                     "deviation": abs(ratio - 1)})
    return Crosscheck(ctx.alpha, float(p), float(ell), power, name, rows)
