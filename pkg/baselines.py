"""
Reference schemes that bracket the optimal feedback policy:
no feedback, Schalkwijk-Kailath linear feedback, and two-stage one-bit feedback.
"""

import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy import integrate, optimize
from scipy.special import ndtr

from belief import qfunc, std_normal_pdf
from channel_sim import McReport, block_draws, build_report, default_block_size

ONE_BIT_TOL = 1e-10
SK_RHO_MIN = 0.01


class SkScheme(BaseModel):
    N: int = Field(ge=1)
    S: float = Field(gt=0)
    rho: float = Field(default=1.0, gt=0, le=1)

    @model_validator(mode="after")
    def _single_use(self):
        # with one channel use all energy goes to the first transmission
        if self.N == 1 and self.rho != 1.0:
            self.rho = 1.0
        return self

    @property
    def correction_power(self) -> float:
        return 0.0 if self.N == 1 else (1.0 - self.rho) * self.S / (self.N - 1)


class OneBitScheme(BaseModel):
    b: float = Field(ge=0, description="first-stage amplitude")
    a: float = Field(ge=0, description="feedback threshold on |y(1)|")
    c: float = Field(ge=0, description="second-stage amplitude, sent only when |y(1)| <= a")


# ---------- No feedback ----------
def no_feedback_ber(S: float) -> float:
    """Antipodal signalling, optimal without feedback for any number of uses: Q(√S)."""
    if S < 0:
        raise ValueError(f"energy must be non-negative, got {S}")
    return qfunc(math.sqrt(S))


def shannon_energy_marker() -> float:
    """Minimum energy per bit for reliable signalling, 2 ln 2 with unit noise variance."""
    return 2.0 * math.log(2.0)


# ---------- Schalkwijk-Kailath ----------
def _sk_log_snr(scheme: SkScheme) -> float:
    # log of the effective amplitude √(ρS)·(1+P)^((N-1)/2)
    return 0.5 * math.log(scheme.rho * scheme.S) + 0.5 * (scheme.N - 1) * math.log1p(scheme.correction_power)


def sk_ber(scheme: SkScheme) -> float:
    """
    Linear feedback scheme: stage 1 sends ±√(ρS); each of the N-1 correction rounds
    sends the receiver's scaled estimation error with power P, shrinking its variance
    by 1/(1+P). The final antipodal decision errs with Q(√(ρS)·(1+P)^((N-1)/2)).
    """
    return qfunc(math.exp(_sk_log_snr(scheme)))


def sk_optimize(N: int, S: float) -> Tuple[SkScheme, float]:
    """Best first-stage energy fraction ρ ∈ [0.01, 1] by bounded golden-section search."""
    if N == 1:
        scheme = SkScheme(N=1, S=S)
        return scheme, sk_ber(scheme)
    res = optimize.minimize_scalar(
        lambda rho: -_sk_log_snr(SkScheme(N=N, S=S, rho=rho)),
        bounds=(SK_RHO_MIN, 1.0), method="bounded", options={"xatol": 1e-8},
    )
    candidates = [SkScheme(N=N, S=S, rho=float(res.x)), SkScheme(N=N, S=S, rho=1.0)]
    best = max(candidates, key=_sk_log_snr)
    return best, sk_ber(best)


# ---------- One-bit feedback ----------
def _inside_probability(b: float, a: float) -> float:
    # P(|y(1)| <= a) with y(1) ~ N(b, 1); the same for both messages
    return float(ndtr(a - b) - ndtr(-a - b))


def one_bit_ber(scheme: OneBitScheme) -> Tuple[float, float]:
    """
    Exact (BER, energy) of the two-stage scheme. Stage 1 sends ±b; the transmitter
    learns only whether |y(1)| <= a, and if so sends ±c. The ML decoder thresholds
    b·y(1) + c·y(2) inside the region and b·y(1) outside it.
    """
    b, a, c = scheme.b, scheme.a, scheme.c
    inside = _inside_probability(b, a)
    energy = b * b + inside * c * c
    if b == 0.0 and c == 0.0:
        return 0.5, energy

    # outside the region errors need y(1) < -a (message 1 sent, by symmetry)
    outside_err = qfunc(a + b)
    lo, hi = max(-a, -b - 10.0), min(a, b + 10.0)
    if hi <= lo:
        return outside_err, energy
    if c == 0.0:
        # decision reduces to the sign of y(1)
        inside_err = float(ndtr(min(hi, 0.0) - b) - ndtr(lo - b)) if lo < 0 else 0.0
    else:
        integrand = lambda y: std_normal_pdf(y - b) * qfunc((b * y + c * c) / c)
        inside_err, _ = integrate.quad(integrand, lo, hi, epsabs=ONE_BIT_TOL, limit=200)
    return outside_err + inside_err, energy


def _one_bit_from(b: float, a: float, S: float):
    """Scheme with energy exactly S for the given (b, a), or None if infeasible."""
    if b < 0 or a < 0 or b * b > S:
        return None
    inside = _inside_probability(b, a)
    if inside < 1e-12:
        return None
    c = math.sqrt(max(S - b * b, 0.0) / inside)
    return OneBitScheme(b=b, a=a, c=c)


def one_bit_optimize(S: float, b_points: int = 21, a_points: int = 25, a_max: float = 6.0) -> Tuple[OneBitScheme, float]:
    """Search (b, a) on a grid with c fixed by the energy constraint, then refine with Nelder-Mead."""
    if S <= 0:
        raise ValueError(f"energy budget must be positive, got {S}")
    root = math.sqrt(S)
    best_scheme = OneBitScheme(b=root, a=0.0, c=0.0)
    best_ber, _ = one_bit_ber(best_scheme)

    for b in np.linspace(0.0, root, b_points):
        for a in np.linspace(a_max / a_points, a_max, a_points):
            scheme = _one_bit_from(float(b), float(a), S)
            if scheme is None:
                continue
            ber, _ = one_bit_ber(scheme)
            if ber < best_ber:
                best_scheme, best_ber = scheme, ber

    if best_scheme.a > 0:
        def objective(x):
            scheme = _one_bit_from(float(x[0]), float(x[1]), S)
            return 1.0 if scheme is None else one_bit_ber(scheme)[0]

        res = optimize.minimize(objective, x0=[best_scheme.b, best_scheme.a], method="Nelder-Mead",
                                options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 400})
        refined = _one_bit_from(float(res.x[0]), float(res.x[1]), S)
        if refined is not None:
            ber, _ = one_bit_ber(refined)
            if ber < best_ber:
                best_scheme, best_ber = refined, ber
    return best_scheme, best_ber


def one_bit_monte_carlo(scheme: OneBitScheme, trials: int, seed: int) -> McReport:
    """Simulate the one-bit scheme on the same seeded streams as monte_carlo."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    block_size = default_block_size()
    errors = 0
    energies = []
    for block in range(math.ceil(trials / block_size)):
        size = min(block_size, trials - block * block_size)
        messages, noise = block_draws(seed, block, block_size, 2, 1)
        messages, noise = messages[:size], noise[:size, :, 0]
        sign = np.where(messages == 1, 1.0, -1.0)
        y1 = sign * scheme.b + noise[:, 0]
        inside = np.abs(y1) <= scheme.a
        y2 = sign * scheme.c + noise[:, 1]
        stat = np.where(inside, scheme.b * y1 + scheme.c * y2, scheme.b * y1)
        errors += int(np.count_nonzero((stat > 0).astype(int) != messages))
        energies.append(scheme.b ** 2 + np.where(inside, scheme.c ** 2, 0.0))
    return build_report(errors, np.concatenate(energies), seed)
