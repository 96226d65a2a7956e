"""Cell geometry, large-scale fading statistics and synthetic access scenes.

A scene is one coherence block of the uplink: ``N`` potential users dropped
uniformly in a disc of radius ``R``, each active with probability ``lam``,
transmitting an i.i.d. complex Gaussian pilot of length ``L`` to an
``M``-antenna base station.

Large-scale fading ``g`` is an *amplitude* (the channel variance of an
active user is ``g**2``), combining path loss ``alpha + beta*log10(d)`` dB
and log-normal shadowing with standard deviation ``sigma_sf`` dB.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import special

SQRT_PI = math.sqrt(math.pi)
LN10 = math.log(10.0)

# Order matters: adding a component at the end must not perturb earlier streams.
_STREAMS = ("positions", "shadowing", "rayleigh", "activity", "pilots", "noise")


@dataclass(frozen=True)
class CellConfig:
    """Scenario parameters.

    ``pilot_energy_gain`` controls how the ``1/L`` pilot normalization is
    booked: when true the pilot energy over ``L`` symbols is ``L`` times the
    per-symbol transmit power, so the normalized noise variance of the scene
    is ``noise_variance(cfg) / L``.
    """

    num_users: int = 4000
    pilot_len: int = 800
    num_antennas: int = 1
    activity_prob: float = 0.05
    cell_radius: float = 1000.0
    pathloss_alpha: float = 15.3
    pathloss_beta: float = 37.6
    shadow_sigma: float = 8.0
    tx_power: float = 15.0
    noise_psd: float = -169.0
    bandwidth: float = 1e7
    pilot_energy_gain: bool = True

    def __post_init__(self):
        if self.num_users < 1 or self.pilot_len < 1 or self.num_antennas < 1:
            raise ValueError("num_users, pilot_len and num_antennas must be >= 1")
        if not 0.0 <= self.activity_prob <= 1.0:
            raise ValueError(f"activity_prob must lie in [0, 1], got {self.activity_prob}")
        if self.cell_radius <= 0 or self.pathloss_beta <= 0 or self.shadow_sigma <= 0:
            raise ValueError("cell_radius, pathloss_beta and shadow_sigma must be positive")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    def replace(self, **changes) -> "CellConfig":
        values = asdict(self)
        values.update(changes)
        return CellConfig(**values)


@dataclass(frozen=True)
class LargeScaleDist:
    """Density ``p(g) = a * g**(-gamma) * Q(g)`` of the large-scale amplitude.

    The geometry parameters it was derived from are kept so the distribution
    can be sampled and its CDF evaluated in closed form.
    """

    a: float
    b: float
    c: float
    gamma: float
    alpha: float
    beta: float
    sigma_sf: float
    radius: float

    @property
    def nominal_window(self) -> tuple[float, float]:
        """Amplitude range covering distances [0.1 m, R] and +-6 sigma shadowing."""
        worst = self.alpha + self.beta * math.log10(self.radius) + 6.0 * self.sigma_sf
        best = self.alpha + self.beta * math.log10(0.1) - 6.0 * self.sigma_sf
        return 10.0 ** (-worst / 20.0), 10.0 ** (-best / 20.0)

    def log_q(self, g):
        return log_q_factor(g, self)

    def log_pdf(self, g):
        g = np.asarray(g, dtype=float)
        return math.log(self.a) - self.gamma * np.log(g) + log_q_factor(g, self)

    def pdf(self, g):
        return np.exp(self.log_pdf(g))

    def cdf(self, g):
        return cdf_g(g, self)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        d = _sample_distance(rng, self.radius, size)
        shadow = rng.normal(0.0, self.sigma_sf, size)
        return _amplitude(self.alpha, self.beta, d, shadow)


def derive_lsf_constants(cfg: CellConfig) -> LargeScaleDist:
    alpha, beta, sig, R = cfg.pathloss_alpha, cfg.pathloss_beta, cfg.shadow_sigma, cfg.cell_radius
    a = 40.0 / (R**2 * beta * SQRT_PI) * math.exp(
        2.0 * LN10**2 * sig**2 / beta**2 - 2.0 * LN10 * alpha / beta
    )
    b = -10.0 * math.sqrt(2.0) / (LN10 * sig)
    c = (-alpha - beta * math.log10(R)) / (math.sqrt(2.0) * sig) - 20.0 / (beta * b)
    gamma = 40.0 / beta + 1.0
    return LargeScaleDist(a, b, c, gamma, alpha, beta, sig, R)


def _log_erfc(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x > 0
    # erfc underflows past x ~ 27; erfcx keeps the positive branch finite.
    out[pos] = np.log(special.erfcx(x[pos])) - x[pos] ** 2
    out[~pos] = np.log(special.erfc(x[~pos]))
    return out


def log_q_factor(g, dist: LargeScaleDist):
    g = np.asarray(g, dtype=float)
    arg = dist.b * np.log(g) + dist.c
    out = math.log(SQRT_PI / 2.0) + _log_erfc(arg)
    return out if out.ndim else float(out)


def q_factor(g, dist: LargeScaleDist):
    """Gaussian tail ``int_{b ln g + c}^inf exp(-s^2) ds``; nondecreasing in ``g``."""
    g = np.asarray(g, dtype=float)
    out = SQRT_PI / 2.0 * special.erfc(dist.b * np.log(g) + dist.c)
    return out if out.ndim else float(out)


def pdf_g(g, dist: LargeScaleDist):
    out = dist.pdf(g)
    return out if np.ndim(out) else float(out)


def cdf_g(g, dist: LargeScaleDist):
    """Closed-form CDF of the large-scale amplitude.

    ``G <= g`` iff the distance exceeds ``d*(x) = 10**((L_g - alpha - x)/beta)``
    for shadowing ``x``, with ``L_g = -20 log10 g``; averaging the uniform-disc
    tail ``1 - d*^2/R^2`` over the Gaussian shadowing gives two normal tails.
    """
    g = np.asarray(g, dtype=float)
    sig = dist.sigma_sf
    loss = -20.0 * np.log10(g)
    x0 = loss - dist.alpha - dist.beta * math.log10(dist.radius)
    kappa = 2.0 * LN10 / dist.beta
    first = special.ndtr(-x0 / sig)
    log_second = (
        kappa * (loss - dist.alpha)
        - 2.0 * math.log(dist.radius)
        + 0.5 * kappa**2 * sig**2
        + special.log_ndtr(-(x0 + kappa * sig**2) / sig)
    )
    out = np.clip(first - np.exp(log_second), 0.0, 1.0)
    return out if out.ndim else float(out)


def noise_variance(cfg: CellConfig) -> float:
    """Per-symbol noise power over per-symbol transmit power (linear)."""
    total_dbm = cfg.noise_psd + 10.0 * math.log10(cfg.bandwidth)
    return 10.0 ** ((total_dbm - cfg.tx_power) / 10.0)


def effective_noise_variance(cfg: CellConfig) -> float:
    """Noise variance of the normalized model ``Y = S X + W`` (unit-norm pilots)."""
    var = noise_variance(cfg)
    if cfg.pilot_energy_gain:
        var /= cfg.pilot_len
    return var


def _sample_distance(rng, radius, size):
    u = rng.random(size)
    # d = 0 would give an infinite gain; it has probability zero, so redraw.
    zero = u == 0.0
    while np.any(zero):
        u[zero] = rng.random(int(zero.sum()))
        zero = u == 0.0
    return radius * np.sqrt(u)


def _amplitude(alpha, beta, d, shadow_db):
    return 10.0 ** (-(alpha + beta * np.log10(d) + shadow_db) / 20.0)


def _complex_normal(rng, shape, var=1.0):
    scale = math.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Scene:
    """One realization ``Y = S X + W``; arrays are read-only."""

    cfg: CellConfig
    seed: int
    activity: np.ndarray  # (N,) bool
    lsf: np.ndarray  # (N,) large-scale amplitudes g_n
    channels: np.ndarray  # (N, M) rows a_n * g_n * rayleigh
    pilots: np.ndarray  # (L, N)
    received: np.ndarray  # (L, M)
    noise_var: float

    @property
    def x(self) -> np.ndarray:
        """Single-antenna signal vector (first antenna column)."""
        return self.channels[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.received[:, 0]

    @property
    def num_active(self) -> int:
        return int(self.activity.sum())

    def same_as(self, other: "Scene") -> bool:
        return (
            self.cfg == other.cfg
            and self.seed == other.seed
            and self.noise_var == other.noise_var
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("activity", "lsf", "channels", "pilots", "received")
            )
        )


def sample_scene(cfg: CellConfig, seed: int, fixed_support: bool = False,
                 noise_var: float | None = None) -> Scene:
    """Draw a scene; deterministic in ``seed``.

    With ``fixed_support`` exactly ``ceil(lam * N)`` users are active (chosen
    uniformly) instead of i.i.d. Bernoulli activity.
    """
    N, L, M = cfg.num_users, cfg.pilot_len, cfg.num_antennas
    ss = np.random.SeedSequence(seed)
    rngs = dict(zip(_STREAMS, (np.random.Generator(np.random.Philox(s)) for s in ss.spawn(len(_STREAMS)))))

    d = _sample_distance(rngs["positions"], cfg.cell_radius, N)
    shadow = rngs["shadowing"].normal(0.0, cfg.shadow_sigma, N)
    g = _amplitude(cfg.pathloss_alpha, cfg.pathloss_beta, d, shadow)
    rayleigh = _complex_normal(rngs["rayleigh"], (N, M))

    if fixed_support:
        k = math.ceil(cfg.activity_prob * N)
        active = np.zeros(N, dtype=bool)
        active[rngs["activity"].choice(N, size=k, replace=False)] = True
    else:
        active = rngs["activity"].random(N) < cfg.activity_prob

    X = np.where(active[:, None], g[:, None] * rayleigh, 0.0 + 0.0j)
    S = _complex_normal(rngs["pilots"], (L, N), 1.0 / L)
    sigma2 = effective_noise_variance(cfg) if noise_var is None else float(noise_var)
    W = _complex_normal(rngs["noise"], (L, M), sigma2)
    Y = S @ X + W
    return Scene(cfg, int(seed), _freeze(active), _freeze(g), _freeze(X), _freeze(S),
                 _freeze(Y), sigma2)


# -- text export --------------------------------------------------------------

_HEADER = "# ampdetect scene v1"


def _cfg_from_items(items: dict) -> CellConfig:
    kw = {}
    for f in fields(CellConfig):
        raw = items[f.name]
        if f.type in ("int", int):
            kw[f.name] = int(raw)
        elif f.type in ("bool", bool):
            kw[f.name] = raw == "True"
        else:
            kw[f.name] = float(raw)
    return CellConfig(**kw)


def _complex_rows(arr):
    arr = np.atleast_2d(arr)
    out = np.empty((arr.shape[0], 2 * arr.shape[1]))
    out[:, 0::2] = arr.real
    out[:, 1::2] = arr.imag
    return out


def write_scene(scene: Scene, path) -> None:
    """Write a scene as commented header lines followed by CSV blocks.

    Blocks are introduced by ``[name] rows=<r> cols=<c>``; complex matrices
    store interleaved ``re,im`` columns.  Floats use 17 significant digits so
    reading back is bit-exact.
    """
    lines = [_HEADER, f"# seed={scene.seed}", f"# noise_var={scene.noise_var!r}"]
    lines += [f"# {k}={v!r}" if not isinstance(v, bool) else f"# {k}={v}"
              for k, v in asdict(scene.cfg).items()]

    def block(name, mat, fmt):
        mat = np.atleast_2d(mat) if mat.ndim > 1 else mat[:, None]
        lines.append(f"[{name}] rows={mat.shape[0]} cols={mat.shape[1]}")
        lines.extend(",".join(fmt(v) for v in row) for row in mat)

    block("activity", scene.activity.astype(int), str)
    block("lsf", scene.lsf, repr_float)
    block("channels", _complex_rows(scene.channels), repr_float)
    block("pilots", _complex_rows(scene.pilots), repr_float)
    block("received", _complex_rows(scene.received), repr_float)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def repr_float(v) -> str:
    return f"{float(v):.17g}"


def read_scene(path) -> Scene:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0] != _HEADER:
        raise ValueError(f"{path}: not a scene file")
    items, blocks, i = {}, {}, 1
    while i < len(text) and text[i].startswith("#"):
        key, _, val = text[i][1:].strip().partition("=")
        items[key] = val.strip("'\"")
        i += 1
    while i < len(text):
        head = text[i].split()
        name = head[0].strip("[]")
        rows = int(head[1].split("=")[1])
        data = np.array([[float(v) for v in ln.split(",")] for ln in text[i + 1:i + 1 + rows]])
        blocks[name] = data
        i += 1 + rows

    def cplx(mat):
        return mat[:, 0::2] + 1j * mat[:, 1::2]

    cfg = _cfg_from_items(items)
    return Scene(
        cfg,
        int(items["seed"]),
        _freeze(blocks["activity"][:, 0].astype(bool)),
        _freeze(blocks["lsf"][:, 0]),
        _freeze(cplx(blocks["channels"])),
        _freeze(cplx(blocks["pilots"])),
        _freeze(cplx(blocks["received"])),
        float(items["noise_var"]),
    )
