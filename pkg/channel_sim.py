"""
Executable encoder/decoder for a PolicyTable over the AWGN channel with noiseless feedback.

Noise and message bits come from numpy SeedSequence streams keyed by
(seed, block), where a block is a fixed run of consecutive trial indices. A
trial's draws therefore depend only on (seed, trial index), never on how
blocks are scheduled across workers.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel

from belief import ArrayLike, decide, llr_update, posterior
from config import config
from dp_solver import Grid, PolicyTable

Z_95 = 1.959963984540054


@dataclass(frozen=True)
class EncoderSpec:
    policy: PolicyTable

    @property
    def grid(self) -> Grid:
        return self.policy.grid

    @property
    def N(self) -> int:
        return self.policy.N


@dataclass(frozen=True)
class MimoEncoder:
    """Vector encoder that puts all energy on coordinate 1."""

    base: EncoderSpec
    M: int

    def candidates(self, l: ArrayLike, v: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
        """Candidate vectors for m = 1 and m = 0, shape l.shape + (M,)."""
        u1, u0 = encoder_amplitudes(l, v)
        vec1 = np.zeros(np.shape(u1) + (self.M,))
        vec0 = np.zeros(np.shape(u0) + (self.M,))
        vec1[..., 0], vec0[..., 0] = u1, u0
        return vec1, vec0

    def transmit(self, l: float, v: float, m: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        vec1, vec0 = self.candidates(l, v)
        return (vec1 if m == 1 else vec0), vec1, vec0


@dataclass
class Trajectory:
    m: int
    llr: List[float] = field(default_factory=list)  # l_1 .. l_{N+1}
    amplitudes: List[float] = field(default_factory=list)
    candidates: List[Tuple[object, object]] = field(default_factory=list)  # (u1, u0) per stage
    sent: List[object] = field(default_factory=list)
    outputs: List[object] = field(default_factory=list)
    decoded: int = 0
    energy_spent: float = 0.0


class EnergyIdentity(NamedTuple):
    lhs: float
    rhs: float
    diff_se: float  # standard error of the paired per-trial difference


class McReport(BaseModel):
    trials: int
    errors: int
    ber_hat: float
    ber_se: float
    ber_ci95: Tuple[float, float]
    mean_energy: float
    energy_se: float
    energy_ci95: Tuple[float, float]
    energy_median: float
    energy_p95: float
    energy_max: float
    seed: int
    M: int = 1


# ---------- Encoder ----------
def encoder_amplitudes(l: ArrayLike, v: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """Minimum-energy pair with gap u1 - u0 = v and posterior mean p1 u1 + p0 u0 = 0."""
    p0, p1 = posterior(l)
    return p0 * v, -p1 * v


def mimo_embed(spec: EncoderSpec, M: int) -> MimoEncoder:
    if M < 1:
        raise ValueError(f"channel count must be >= 1, got {M}")
    return MimoEncoder(base=spec, M=M)


# ---------- Random streams ----------
def default_block_size() -> int:
    return int(config["FBDP_MC_BLOCK"])


def block_draws(seed: int, block: int, size: int, N: int, M: int) -> Tuple[np.ndarray, np.ndarray]:
    """Messages (size,) and noise (size, N, M) for one block of trials."""
    msg_ss, noise_ss, extra_ss = np.random.SeedSequence([seed, block]).spawn(3)
    messages = np.random.default_rng(msg_ss).integers(0, 2, size=size)
    noise = np.empty((size, N, M))
    noise[:, :, 0] = np.random.default_rng(noise_ss).standard_normal((size, N))
    if M > 1:
        # extra coordinates come from their own stream so coordinate 1 matches the scalar run
        noise[:, :, 1:] = np.random.default_rng(extra_ss).standard_normal((size, N, M - 1))
    return messages, noise


def trial_noise(seed: int, trial: int, N: int, M: int = 1, block_size: Optional[int] = None) -> np.ndarray:
    """Noise of one trial: shape (N,) for M == 1, else (N, M)."""
    block_size = block_size or default_block_size()
    block, offset = divmod(trial, block_size)
    _, noise = block_draws(seed, block, block_size, N, M)
    return noise[offset, :, 0].copy() if M == 1 else noise[offset].copy()


def trial_message(seed: int, trial: int, N: int, block_size: Optional[int] = None) -> int:
    block_size = block_size or default_block_size()
    block, offset = divmod(trial, block_size)
    messages, _ = block_draws(seed, block, block_size, N, 1)
    return int(messages[offset])


# ---------- Single trials ----------
def run_trial(spec: EncoderSpec, m: int, noise) -> Trajectory:
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (spec.N,):
        raise ValueError(f"expected {spec.N} noise samples, got shape {noise.shape}")
    traj = Trajectory(m=m, llr=[0.0])
    l = 0.0
    for k in range(1, spec.N + 1):
        v = float(spec.policy.lookup(k, l))
        u1, u0 = encoder_amplitudes(l, v)
        u = u1 if m == 1 else u0
        y = u + noise[k - 1]
        l = llr_update(l, u1, u0, y)
        traj.amplitudes.append(v)
        traj.candidates.append((u1, u0))
        traj.sent.append(u)
        traj.outputs.append(y)
        traj.llr.append(l)
        traj.energy_spent += u * u
    traj.decoded = decide(l)
    return traj


def run_mimo_trial(mimo: MimoEncoder, m: int, noise) -> Trajectory:
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (mimo.base.N, mimo.M):
        raise ValueError(f"expected noise of shape {(mimo.base.N, mimo.M)}, got {noise.shape}")
    traj = Trajectory(m=m, llr=[0.0])
    l = 0.0
    for k in range(1, mimo.base.N + 1):
        v = float(mimo.base.policy.lookup(k, l))
        u, vec1, vec0 = mimo.transmit(l, v, m)
        y = u + noise[k - 1]
        l = llr_update(l, vec1, vec0, y)
        traj.amplitudes.append(v)
        traj.candidates.append((vec1, vec0))
        traj.sent.append(u)
        traj.outputs.append(y)
        traj.llr.append(l)
        traj.energy_spent += float(np.sum(u * u))
    traj.decoded = decide(l)
    return traj


def replay_decoder(spec: EncoderSpec, outputs) -> List[float]:
    """LLR sequence the receiver reconstructs from the channel outputs alone."""
    l = 0.0
    llr = [l]
    for k, y in enumerate(outputs, start=1):
        v = float(spec.policy.lookup(k, l))
        if np.size(y) > 1:
            u1, u0 = mimo_embed(spec, np.size(y)).candidates(l, v)
        else:
            u1, u0 = encoder_amplitudes(l, v)
        l = llr_update(l, u1, u0, y)
        llr.append(l)
    return llr


# ---------- Monte Carlo ----------
def _simulate_block(mimo: MimoEncoder, messages: np.ndarray, noise: np.ndarray):
    """Vectorised run_mimo_trial over a block; returns (errors, energy spent, p0 p1 v² energy)."""
    n, N, M = noise.shape
    if M != mimo.M:
        raise ValueError(f"noise has {M} coordinates, encoder has {mimo.M}")
    policy = mimo.base.policy
    l = np.zeros(n)
    spent = np.zeros(n)
    expected = np.zeros(n)
    sends_one = (messages == 1)[:, None]
    for k in range(1, N + 1):
        v = policy.lookup(k, l)
        p0, p1 = posterior(l)
        vec1, vec0 = mimo.candidates(l, v)
        u = np.where(sends_one, vec1, vec0)
        y = u + noise[:, k - 1, :]
        l = l + np.sum(0.5 * (y - vec0) ** 2 - 0.5 * (y - vec1) ** 2, axis=1)
        spent += np.sum(u * u, axis=1)
        expected += p0 * p1 * v * v
    errors = decide(l) != messages
    return errors, spent, expected


def _run_blocks(mimo: MimoEncoder, trials: int, seed: int, workers: int, block_size: int):
    n_blocks = math.ceil(trials / block_size)

    def work(block: int):
        size = min(block_size, trials - block * block_size)
        messages, noise = block_draws(seed, block, block_size, mimo.base.N, mimo.M)
        return _simulate_block(mimo, messages[:size], noise[:size])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, range(n_blocks)))
    else:
        results = [work(b) for b in range(n_blocks)]
    return results


def monte_carlo(spec: Union[EncoderSpec, MimoEncoder], trials: int, seed: int, M: int = 1,
                workers: Optional[int] = None, block_size: Optional[int] = None) -> McReport:
    """Seeded estimate of BER and transmitted energy with 95% normal-approximation intervals.

    A MimoEncoder brings its own channel count; an EncoderSpec is embedded into M channels.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    mimo = spec if isinstance(spec, MimoEncoder) else mimo_embed(spec, M)
    workers = workers or int(config["FBDP_WORKERS"])
    block_size = block_size or default_block_size()

    results = _run_blocks(mimo, trials, seed, workers, block_size)
    errors = int(sum(int(np.count_nonzero(r[0])) for r in results))
    energy = np.concatenate([r[1] for r in results])
    return build_report(errors, energy, seed, mimo.M)


def build_report(errors: int, energy: np.ndarray, seed: int, M: int = 1) -> McReport:
    """Tally error count and per-trial energies into an McReport."""
    trials = int(energy.size)
    ber = errors / trials
    ber_se = math.sqrt(ber * (1.0 - ber) / trials)
    mean_energy = math.fsum(energy) / trials
    if trials > 1:
        var = math.fsum((energy - mean_energy) ** 2) / (trials - 1)
    else:
        var = 0.0
    energy_se = math.sqrt(var / trials)
    return McReport(
        trials=trials,
        errors=errors,
        ber_hat=ber,
        ber_se=ber_se,
        ber_ci95=(max(0.0, ber - Z_95 * ber_se), min(1.0, ber + Z_95 * ber_se)),
        mean_energy=mean_energy,
        energy_se=energy_se,
        energy_ci95=(mean_energy - Z_95 * energy_se, mean_energy + Z_95 * energy_se),
        energy_median=float(np.median(energy)),
        energy_p95=float(np.quantile(energy, 0.95)),
        energy_max=float(energy.max()),
        seed=seed,
        M=M,
    )


def energy_identity_check(spec: EncoderSpec, trials: int, seed: int) -> EnergyIdentity:
    """(E Σ|u^m|², E Σ p0 p1 v²) estimated from the same trials; equal in expectation."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    results = _run_blocks(mimo_embed(spec, 1), trials, seed, int(config["FBDP_WORKERS"]), default_block_size())
    spent = np.concatenate([r[1] for r in results])
    expected = np.concatenate([r[2] for r in results])
    diff = spent - expected
    diff_se = float(np.std(diff, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return EnergyIdentity(lhs=math.fsum(spent) / trials, rhs=math.fsum(expected) / trials, diff_se=diff_se)
