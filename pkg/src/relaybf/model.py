"""Network configuration, channel draws and the bounded-error uncertainty model."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

MAX_VERTEX_RELAYS = 16


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def normalize_phase(v):
    """Rotate ``v`` so that its largest-magnitude entry is real and positive.

    Ties are broken by the lowest index.
    """
    v = np.asarray(v, dtype=complex)
    if v.size == 0:
        return v
    k = int(np.argmax(np.abs(v)))
    if abs(v[k]) == 0:
        return v
    out = v * (abs(v[k]) / v[k])
    out[k] = abs(v[k])
    return out


@dataclass(frozen=True)
class NetworkConfig:
    """Two-hop network with ``R`` multi-antenna relays.

    Powers are in linear units.
    """

    n_t: int
    relay_antennas: tuple
    p_s: float
    p_relay: tuple
    sigma2_r: float = 1.0
    sigma2_d: float = 1.0
    rho: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "relay_antennas", tuple(int(m) for m in self.relay_antennas))
        object.__setattr__(self, "p_relay", tuple(float(p) for p in self.p_relay))
        if self.n_t < 1:
            raise ValueError("n_t must be positive")
        if len(self.relay_antennas) < 1:
            raise ValueError("at least one relay is required")
        if len(self.relay_antennas) != len(self.p_relay):
            raise ValueError("relay_antennas and p_relay differ in length")
        if any(m < 1 for m in self.relay_antennas):
            raise ValueError("relay antenna counts must be positive")
        if self.p_s < 0 or any(p < 0 for p in self.p_relay):
            raise ValueError("powers must be nonnegative")
        if self.sigma2_r <= 0 or self.sigma2_d <= 0:
            raise ValueError("noise variances must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")

    @property
    def n_relays(self):
        return len(self.relay_antennas)

    @classmethod
    def symmetric(cls, n_t, n_relays, m, p_s, p_relay, **kw):
        """All relays share antenna count ``m`` and budget ``p_relay``."""
        return cls(n_t, (m,) * n_relays, p_s, (p_relay,) * n_relays, **kw)


@dataclass(frozen=True)
class ChannelRealization:
    """First-hop matrices ``h[i]`` (M_i x N_T), second-hop estimates and error radii."""

    h: tuple
    f_tilde: tuple
    eps: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        h = tuple(np.asarray(x, dtype=complex) for x in self.h)
        f = tuple(np.asarray(x, dtype=complex).ravel() for x in self.f_tilde)
        eps = np.asarray(self.eps, dtype=float)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "f_tilde", f)
        object.__setattr__(self, "eps", eps)
        if not (len(h) == len(f) == eps.size):
            raise ValueError("inconsistent relay count")
        n_t = h[0].shape[1]
        for hi, fi in zip(h, f):
            if hi.ndim != 2 or hi.shape[1] != n_t or hi.shape[0] != fi.size:
                raise ValueError("inconsistent channel shapes")
        if np.any(eps < 0) or np.any(eps > self.f_norms * (1 + 1e-12)):
            raise ValueError("error radii must satisfy 0 <= eps_i <= |f_i|")

    @property
    def n_relays(self):
        return len(self.h)

    @property
    def n_t(self):
        return self.h[0].shape[1]

    @property
    def f_norms(self):
        return np.array([np.linalg.norm(f) for f in self.f_tilde])

    def grams(self):
        """``H_i^H H_i`` for every relay."""
        return [hi.conj().T @ hi for hi in self.h]

    def with_eps(self, eps):
        """Same channels with different error radii."""
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (self.n_relays,))
        return ChannelRealization(self.h, self.f_tilde, eps.copy(), self.seed)

    def nominal(self):
        """Perfect-CSI view: the estimates are taken as the true channels."""
        return self.with_eps(0.0)


@dataclass(frozen=True)
class VertexSet:
    """All ``2^R`` magnitude combinations ``|f_i| +/- eps_i``.

    Row ``k`` of ``vertices`` uses bit ``i`` of ``k`` for the sign of relay
    ``i`` (0 is minus).
    """

    vertices: np.ndarray
    nominal: np.ndarray = field(default=None)

    @property
    def is_singleton(self):
        return bool(np.all(self.vertices == self.vertices[0]))

    def __len__(self):
        return self.vertices.shape[0]


@dataclass(frozen=True)
class EffectiveGains:
    u_norms: np.ndarray
    w: np.ndarray


@dataclass
class BeamformingSolution:
    g: np.ndarray
    c: np.ndarray
    relay_matrices: list
    worst_snr: float
    worst_vertex: int


def generate_channels(config: NetworkConfig, seed: int) -> ChannelRealization:
    """Draw i.i.d. CN(0, 1) channels; ``eps_i = sqrt(rho) |f_i|``.

    A draw with a zero second-hop vector is discarded and redrawn from the
    same stream.
    """
    rng = np.random.default_rng(seed)

    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)

    while True:
        h = tuple(cn(m, config.n_t) for m in config.relay_antennas)
        f = tuple(cn(m) for m in config.relay_antennas)
        norms = np.array([np.linalg.norm(x) for x in f])
        if np.all(norms > 0):
            break
    eps = np.sqrt(config.rho) * norms
    return ChannelRealization(h, f, eps, seed)


def vertex_set(ch: ChannelRealization) -> VertexSet:
    r = ch.n_relays
    if r > MAX_VERTEX_RELAYS:
        raise ValueError(f"vertex enumeration refused for R={r} > {MAX_VERTEX_RELAYS}")
    fn = ch.f_norms
    verts = fn[None, :] + sign_patterns(r) * ch.eps[None, :]
    return VertexSet(np.maximum(verts, 0.0), fn)


def sign_patterns(r):
    """Sign vectors in canonical vertex order, shape (2^R, R)."""
    return np.array(list(itertools.product((-1.0, 1.0), repeat=r)))[:, ::-1]


def effective_gains(ch: ChannelRealization, g) -> EffectiveGains:
    g = np.atleast_1d(np.asarray(g, dtype=complex))
    if g.size != ch.n_t:
        raise ValueError(f"g has length {g.size}, expected {ch.n_t}")
    u = np.array([np.linalg.norm(hi @ g) for hi in ch.h])
    return EffectiveGains(u, u**2)
