"""Independent reference computations used by the test suite.

None of these reuse the package's quadrature, tables or closed forms: the
integral families are evaluated with mpmath tanh-sinh quadrature, posterior
means by nested scipy quadrature over (g, |x|), and the incomplete gamma
functions by a power series and a Lentz continued fraction.
"""

import math

import mpmath as mp
import numpy as np
from scipy import integrate, special

_EXPONENTS = {"xi": (0, 0), "nu": (2, 1), "mu": (4, 2)}


def _breakpoints(dist, extra=()):
    lo, hi = dist.nominal_window
    pts = set(np.geomspace(lo / 1e3, hi * 1e3, 40)) | {float(p) for p in extra if p > 0}
    return [mp.mpf(0)] + [mp.mpf(p) for p in sorted(pts)] + [mp.inf]


def mp_family(kind, s, i, tau, dist, lam=None, dps=20):
    """``nu_i``, ``xi_i`` or ``mu_i`` at ``s`` by direct quadrature in ``g``.

    ``xi`` includes the inactive point mass when ``lam`` is given.
    """
    mp.mp.dps = dps
    pg, ph = _EXPONENTS[kind]
    s, tau = mp.mpf(s), mp.mpf(tau)
    b, c, gam = mp.mpf(dist.b), mp.mpf(dist.c), mp.mpf(dist.gamma)

    def f(g):
        if g == 0:
            return mp.mpf(0)
        h = g * g + tau * tau
        q = mp.sqrt(mp.pi) / 2 * mp.erfc(b * mp.log(g) + c)
        return g ** (pg - gam) * q / h ** (i + ph) * mp.exp(-s / h)

    val = mp.quad(f, _breakpoints(dist, extra=(float(tau), math.sqrt(float(s)) if s > 0 else 0)))
    if kind == "xi" and lam is not None and lam < 1:
        val += (1 - mp.mpf(lam)) / (mp.mpf(lam) * mp.mpf(dist.a)) * tau ** (-2 * i) * mp.exp(-s / tau**2)
    return float(val)


def mp_pdf_integral(dist, lo=None, hi=None):
    mp.mp.dps = 30

    def f(g):
        return dist.a * g ** (-dist.gamma) * mp.sqrt(mp.pi) / 2 * mp.erfc(dist.b * mp.log(g) + dist.c)

    glo, ghi = dist.nominal_window
    pts = [mp.mpf(x) for x in np.geomspace(glo * 1e-3, ghi * 1e3, 60)]
    lo = mp.mpf(0) if lo is None else mp.mpf(lo)
    if hi is None:
        return float(mp.quad(f, [lo] + [p for p in pts if p > lo] + [mp.inf]))
    return float(mp.quad(f, [lo] + [p for p in pts if lo < p < hi] + [mp.mpf(hi)]))


def mp_varphi(s, i, lam, dps=20):
    """``phi_i(s) = int t^i e^-t / (1 + (1-lam)/lam (1+s)^i e^{-s t}) dt``."""
    mp.mp.dps = dps
    s, lam = mp.mpf(s), mp.mpf(lam)
    k = (1 - lam) / lam * (1 + s) ** i

    def f(t):
        return t**i * mp.exp(-t) / (1 + k * mp.exp(-s * t))

    edge = mp.log(k) / s if k > 1 else mp.mpf(1)
    pts = sorted({mp.mpf(0), edge, edge + 5 / s, mp.mpf(i) + 1, mp.mpf(60 + 3 * i)})
    return float(mp.quad(f, pts + [mp.inf]))


def trapezoid_varphi(s, i, lam, t_max=80.0, n=2_000_001):
    t = np.linspace(0.0, t_max, n)
    k = (1 - lam) / lam * (1 + s) ** i
    f = t**i * np.exp(-t) * special.expit(s * t - math.log(k))
    return float(np.trapezoid(f, t))


# -- incomplete gamma -------------------------------------------------------------


def lower_gamma_series(m, x, terms=400):
    """``P(m, x)`` from ``x^m e^-x / Gamma(m+1) * sum x^k / (m+1)_k``."""
    term = 1.0
    total = 1.0
    for k in range(1, terms):
        term *= x / (m + k)
        total += term
        if term < 1e-17 * total:
            break
    return math.exp(m * math.log(x) - x - math.lgamma(m + 1)) * total


def upper_gamma_lentz(m, x, tiny=1e-300, eps=1e-16):
    """``Q(m, x)`` by the modified Lentz continued fraction (valid for ``x > m + 1``)."""
    b = x + 1 - m
    c = 1 / tiny
    d = 1 / b
    h = d
    for n in range(1, 500):
        an = -n * (n - m)
        b += 2
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < eps:
            break
    return math.exp(m * math.log(x) - x - math.lgamma(m)) * h


# -- posterior means by brute force over (g, |x|) -----------------------------------


def _inner(r, g, tau, order):
    """``int 2 rho^(1+order) exp(-rho^2/g^2 - (r-rho)^2/tau^2) I_order(2 r rho/tau^2) e^{-2 r rho/tau^2} d rho``.

    The angular integral of the complex Gaussian likelihood against
    ``exp(i*order*theta)`` gives the Bessel factor.
    """
    c = r * g * g / (g * g + tau * tau)
    w = g * tau / math.sqrt(g * g + tau * tau)
    lo, hi = max(0.0, c - 40 * w), c + 40 * w

    def f(y):
        rho = c + w * y
        if rho <= 0:
            return 0.0
        z = 2 * r * rho / tau**2
        return 2 * rho ** (1 + order) * math.exp(-((rho / g) ** 2) - ((r - rho) / tau) ** 2) * special.ive(order, z)

    val, _ = integrate.quad(f, (lo - c) / w, (hi - c) / w, points=[0.0], limit=200, epsabs=0, epsrel=1e-12)
    return val * w / (g * g)


def bayes_mean_known_g(x_tilde, g, tau, lam):
    """``E[x | x_tilde]`` for ``x ~ (1-lam) delta_0 + lam CN(0, g^2)`` in ``CN(0, tau^2)`` noise."""
    r = abs(x_tilde)
    if r == 0:
        return 0j
    num = lam * _inner(r, g, tau, 1)
    den = (1 - lam) * math.exp(-((r / tau) ** 2)) + lam * _inner(r, g, tau, 0)
    return num / den * x_tilde / r


def bayes_mean_stat(x_tilde, tau, lam, dist):
    """As :func:`bayes_mean_known_g` with ``g`` drawn from the large-scale density."""
    r = abs(x_tilde)
    if r == 0:
        return 0j
    lo, hi = dist.nominal_window
    u_lo, u_hi = math.log(lo) - 8, math.log(hi) + 6
    pts = np.linspace(u_lo, u_hi, 30)[1:-1].tolist() + [math.log(tau), math.log(r)]

    def outer(u, order):
        g = math.exp(u)
        return float(dist.pdf(g)) * g * _inner(r, g, tau, order)

    num, _ = integrate.quad(outer, u_lo, u_hi, args=(1,), points=pts, limit=500, epsabs=0, epsrel=1e-10)
    act, _ = integrate.quad(outer, u_lo, u_hi, args=(0,), points=pts, limit=500, epsabs=0, epsrel=1e-10)
    den = (1 - lam) * math.exp(-((r / tau) ** 2)) + lam * act
    return lam * num / den * x_tilde / r


def complex_fd_divergence(fn, x, h):
    """``mean_n d eta_n / d x_n`` (Wirtinger) by central differences, one coordinate at a time."""
    out = 0j
    for n in range(len(x)):
        e = np.zeros(len(x), dtype=complex)
        e[n] = h
        dx = (fn(x + e)[n] - fn(x - e)[n]) / (2 * h)
        dy = (fn(x + 1j * e)[n] - fn(x - 1j * e)[n]) / (2 * h)
        out += 0.5 * (dx - 1j * dy)
    return out / len(x)


def fd_jacobian(fn, rows, h):
    """Row-averaged Wirtinger Jacobian ``d eta_j / d r_k`` in row convention."""
    n, m = rows.shape
    J = np.zeros((m, m), dtype=complex)
    for i in range(n):
        for k in range(m):
            e = np.zeros(m, dtype=complex)
            e[k] = h
            dx = (fn(rows[i] + e) - fn(rows[i] - e)) / (2 * h)
            dy = (fn(rows[i] + 1j * e) - fn(rows[i] - 1j * e)) / (2 * h)
            J[k] += 0.5 * (dx - 1j * dy)
    return J / n
