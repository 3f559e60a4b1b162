"""
Scalar belief math shared by the solver, the simulator and the baselines.

The state is the log-likelihood ratio l = log p(y|m=1)/p(y|m=0). Every function
accepts python floats or numpy arrays and returns the same shape.
"""

import math
from typing import NamedTuple, Union

import numpy as np
from scipy.special import erfc, expit

ArrayLike = Union[float, np.ndarray]

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Posterior(NamedTuple):
    p0: ArrayLike
    p1: ArrayLike


def _out(x: np.ndarray) -> ArrayLike:
    return float(x) if np.ndim(x) == 0 else x


def std_normal_pdf(t: ArrayLike) -> ArrayLike:
    t = np.asarray(t, dtype=float)
    return _out(INV_SQRT_2PI * np.exp(-0.5 * t * t))


def qfunc(a: ArrayLike) -> ArrayLike:
    """Gaussian upper tail Q(a), via erfc so both tails keep full precision."""
    a = np.asarray(a, dtype=float)
    return _out(0.5 * erfc(a / math.sqrt(2.0)))


def posterior(l: ArrayLike) -> Posterior:
    """Posterior (p0, p1) of the message given the LLR; p0 + p1 == 1."""
    l = np.asarray(l, dtype=float)
    losing = expit(-np.abs(l))
    winning = 1.0 - losing
    p1 = np.where(l >= 0, winning, losing)
    p0 = np.where(l >= 0, losing, winning)
    return Posterior(_out(p0), _out(p1))


def llr_update(l: float, u1, u0, y) -> float:
    """Decoder LLR recursion: l - |y-u1|²/2 + |y-u0|²/2 over all channel coordinates."""
    u1 = np.atleast_1d(np.asarray(u1, dtype=float))
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not (u1.shape == u0.shape == y.shape):
        raise ValueError(f"dimension mismatch: u1{u1.shape}, u0{u0.shape}, y{y.shape}")
    # per-coordinate terms; coordinates with u1 == u0 contribute exactly 0
    terms = 0.5 * (y - u0) ** 2 - 0.5 * (y - u1) ** 2
    return float(l + np.sum(terms))


def transition(l: ArrayLike, v: ArrayLike, m: int, z: ArrayLike) -> ArrayLike:
    """State dynamics seen by the encoder: l ± v²/2 + v·z for m = 1 / m = 0."""
    if m not in (0, 1):
        raise ValueError(f"message bit must be 0 or 1, got {m}")
    l = np.asarray(l, dtype=float)
    v = np.asarray(v, dtype=float)
    z = np.asarray(z, dtype=float)
    drift = 0.5 * v * v if m == 1 else -0.5 * v * v
    return _out(l + drift + v * z)


def stage_cost(l: ArrayLike, v: ArrayLike, lam: float) -> ArrayLike:
    p0, p1 = posterior(l)
    v = np.asarray(v, dtype=float)
    return _out(lam * np.asarray(p0) * np.asarray(p1) * v * v)


def terminal_cost(l: ArrayLike) -> ArrayLike:
    """Posterior probability of the hypothesis the ML decision rejects: 1/(e^|l| + 1)."""
    l = np.asarray(l, dtype=float)
    return _out(expit(-np.abs(l)))


def decide(l: ArrayLike) -> ArrayLike:
    """ML decision; a tie at l == 0 decodes as 0."""
    l = np.asarray(l)
    d = (l > 0).astype(int)
    return int(d) if np.ndim(d) == 0 else d


def eb_n0_db(S: ArrayLike) -> ArrayLike:
    """Energy per bit in dB with unit-variance noise (N0 = 2)."""
    S = np.asarray(S, dtype=float)
    return _out(10.0 * np.log10(S / 2.0))
