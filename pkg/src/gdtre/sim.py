"""Monte Carlo simulation of the jump system under linear strategies.

Trajectories are processed in fixed-size chunks. Each chunk draws from its
own generator keyed by (seed, chunk index), and chunk results are combined
in index order, so the output does not depend on the number of worker
threads.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDecay

OVERFLOW = 1e30
CHUNK = 1024


@dataclass(frozen=True)
class SimConfig:
    trajectories: int = 10_000
    horizon: int = 50
    seed: int = 0
    noise_law: str = "gaussian"
    antithetic: bool = False
    store_states: bool = False
    threads: int | None = None

    def __post_init__(self):
        if self.trajectories < 1 or self.horizon < 1:
            raise ValueError("trajectories and horizon must be >= 1")
        if self.noise_law not in ("gaussian", "rademacher"):
            raise ValueError(f"unknown noise law {self.noise_law!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


def chunk_generator(seed, index) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def draw_noise(rng, shape, law="gaussian"):
    if law == "gaussian":
        return rng.standard_normal(shape)
    return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0


def truncation_horizon(rho, period=1, eps=1e-6) -> int:
    """Smallest T with rho^(T/period) < eps."""
    if rho <= 0.0:
        return period
    if rho >= 1.0:
        raise ValueError("truncation needs rho < 1")
    return int(math.floor(period * math.log(eps) / math.log(rho))) + 1


def _initial_modes(rng, pi, count):
    return np.minimum((np.cumsum(pi)[None, :] < rng.random(count)[:, None]).sum(axis=1), len(pi) - 1)


def _chain_chunk(rng, P, pi, t0, T, count):
    N = P.shape[1]
    p = P.shape[0]
    modes = np.empty((count, T + 1), dtype=np.int64)
    modes[:, 0] = _initial_modes(rng, pi, count)
    cum = np.cumsum(P, axis=-1)
    for s in range(T):
        c = cum[(t0 + s) % p, modes[:, s]]
        nxt = (c < rng.random(count)[:, None]).sum(axis=1)
        modes[:, s + 1] = np.minimum(nxt, N - 1)
    return modes


def _threads(cfg_threads):
    if cfg_threads:
        return max(1, int(cfg_threads))
    env = os.environ.get("GDTRE_THREADS")
    return max(1, int(env)) if env else 1


def _chunks(total):
    return [(k, min(CHUNK, total - k * CHUNK)) for k in range((total + CHUNK - 1) // CHUNK)]


def sample_chain(markov, t0, T, seed, count=1):
    """Mode paths theta_{t0..t0+T} of shape (count, T+1)."""
    pi = markov.distribution(t0)
    P = markov.transition_matrices
    parts = [_chain_chunk(chunk_generator(seed, k), P, pi, t0, T, size) for k, size in _chunks(count)]
    return np.concatenate(parts, axis=0)


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    modes: np.ndarray  # (trajectories, T+1)
    costs: np.ndarray  # (trajectories,)
    overflow: np.ndarray  # (trajectories,) bool
    sq_sum: np.ndarray  # (N, T+1): sum of |x(t)|^2 grouped by initial mode
    counts: np.ndarray  # (N,): finite trajectories per initial mode
    t0: int
    states: np.ndarray | None = None  # (trajectories, T+1, n) when stored

    @property
    def horizon(self) -> int:
        return self.modes.shape[1] - 1

    def mean_sq_norm(self):
        """E|x(t)|^2 per initial mode, shape (N, T+1); NaN for unseen modes."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.sq_sum / self.counts[:, None]

    def overall_mean_sq_norm(self):
        return self.sq_sum.sum(axis=0) / max(1, int(self.counts.sum()))

    def cost_stats(self, by_mode=False):
        ok = ~self.overflow
        c = self.costs[ok]
        if not by_mode:
            n = c.size
            se = float(c.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
            return float(c.mean()) if n else float("nan"), se
        out = []
        first = self.modes[ok, 0]
        for i in range(self.sq_sum.shape[0]):
            ci = c[first == i]
            se = float(ci.std(ddof=1) / math.sqrt(ci.size)) if ci.size > 1 else float("nan")
            out.append((float(ci.mean()) if ci.size else float("nan"), se))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "mode", "step", "value"])
        msq = self.mean_sq_norm()
        for i in range(msq.shape[0]):
            for s in range(msq.shape[1]):
                w.writerow(["mean_sq_norm", i, s, repr(float(msq[i, s]))])
        mean, se = self.cost_stats()
        w.writerow(["cost_mean", "all", "", repr(mean)])
        w.writerow(["cost_stderr", "all", "", repr(se)])
        for i, (mi, si) in enumerate(self.cost_stats(by_mode=True)):
            w.writerow(["cost_mean", i, "", repr(mi)])
            w.writerow(["cost_stderr", i, "", repr(si)])
        w.writerow(["overflow_count", "all", "", int(self.overflow.sum())])
        return buf.getvalue()


def _simulate_chunk(spec, pair, x0, t0, cfg, index, size):
    rng = chunk_generator(cfg.seed, index)
    pi = spec.markov.distribution(t0)
    T, p, n, r = cfg.horizon, spec.period, spec.n, spec.r
    half = (size + 1) // 2 if cfg.antithetic else size
    modes = _chain_chunk(rng, spec.P, pi, t0, T, half)
    if cfg.antithetic:
        modes = np.concatenate([modes, modes], axis=0)[:size]
    Qs = np.stack([spec.Q(t) for t in range(p)])
    x = np.broadcast_to(np.asarray(x0, dtype=float), (size, n)).copy()
    costs = np.zeros(size)
    flag = np.zeros(size, dtype=bool)
    sq = np.empty((size, T + 1))
    sq[:, 0] = np.einsum("bi,bi->b", x, x)
    states = np.empty((size, T + 1, n)) if cfg.store_states else None
    if states is not None:
        states[:, 0] = x
    for s in range(T):
        ph = (t0 + s) % p
        th = modes[:, s]
        u1, u2 = pair.controls(ph, th, x)
        z = np.concatenate([x, u1, u2], axis=1)
        costs += np.einsum("bi,bij,bj->b", z, Qs[ph, th], z)
        AB = np.concatenate([spec.A[ph, th], spec.B[ph, th]], axis=-1)  # (b, r+1, n, n+m)
        moves = np.einsum("bkij,bj->bki", AB, z)
        w = draw_noise(rng, (half, r), cfg.noise_law)
        if cfg.antithetic:
            w = np.concatenate([w, -w], axis=0)[:size]
        x = moves[:, 0] + np.einsum("bk,bki->bi", w, moves[:, 1:])
        nrm = np.einsum("bi,bi->b", x, x)
        bad = ~(nrm <= OVERFLOW**2)
        if np.any(bad):
            flag |= bad
            x[bad] = 0.0
            nrm[bad] = 0.0
        sq[:, s + 1] = nrm
        if states is not None:
            states[:, s + 1] = x
    N = spec.N
    first = modes[:, 0]
    sq[flag] = 0.0
    sq_sum = np.zeros((N, T + 1))
    counts = np.zeros(N, dtype=np.int64)
    for i in range(N):
        sel = (first == i) & ~flag
        sq_sum[i] = sq[sel].sum(axis=0)
        counts[i] = int(sel.sum())
    return modes, costs, flag, sq_sum, counts, states


def simulate(spec, pair, x0, t0=0, cfg: SimConfig | None = None) -> TrajectoryBatch:
    """Simulate x(t+1) = A0 x + B0 u + sum_k w_k (A_k x + B_k u) under the pair's inputs.

    The strategy sees only the phase, the current mode and the current
    state (plus u1 for the full-information responder).
    """
    cfg = cfg or SimConfig()
    jobs = _chunks(cfg.trajectories)

    def run(job):
        return _simulate_chunk(spec, pair, x0, t0, cfg, *job)

    workers = _threads(cfg.threads)
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    sq_sum = np.zeros_like(parts[0][3])
    counts = np.zeros_like(parts[0][4])
    for part in parts:
        sq_sum += part[3]
        counts += part[4]
    states = np.concatenate([p[5] for p in parts]) if cfg.store_states else None
    return TrajectoryBatch(
        modes=np.concatenate([p[0] for p in parts]),
        costs=np.concatenate([p[1] for p in parts]),
        overflow=np.concatenate([p[2] for p in parts]),
        sq_sum=sq_sum,
        counts=counts,
        t0=t0,
        states=states,
    )


@dataclass(frozen=True)
class DecayEstimate:
    slope: float  # per step, all trajectories pooled
    slope_per_mode: np.ndarray  # per initial mode, NaN when unseen
    window: tuple


def _fit(y, steps):
    A = np.vstack([steps, np.ones_like(steps)]).T
    coef = np.linalg.lstsq(A, np.log(y), rcond=None)[0]
    return float(coef[0])


def empirical_decay(batch: TrajectoryBatch, window=None, floor=1e-300) -> DecayEstimate:
    """Least-squares slope of log E|x(t)|^2 over a window of steps (default: second half)."""
    T = batch.horizon
    lo, hi = window if window is not None else (T // 2, T)
    if hi - lo < 1:
        raise ValueError("decay window needs at least two steps")
    steps = np.arange(lo, hi + 1, dtype=float)
    pooled = batch.overall_mean_sq_norm()[lo:hi + 1]
    if not np.all(pooled > floor):
        raise InsufficientDecay("mean square norm hit the noise floor inside the window")
    per_mode = []
    msq = batch.mean_sq_norm()
    for i in range(msq.shape[0]):
        y = msq[i, lo:hi + 1]
        per_mode.append(_fit(y, steps) if batch.counts[i] and np.all(y > floor) else float("nan"))
    return DecayEstimate(_fit(pooled, steps), np.array(per_mode), (lo, hi))
