"""Synthetic trajectories from a known matrix, plus a brute-force MLE oracle.

Random streams use numpy's PCG64 bit generator. A run seeded with ``seed``
spawns one child ``SeedSequence`` per trajectory, so trajectory ``i`` is the
same whatever the trajectory count or evaluation order.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError, TooLarge, TruncatedTrajectory
from .estimation import TransitionMatrix, build_structural_mask, full_mask
from .taxonomy import (
    LABELS,
    NUM_STATES,
    START,
    STOP,
    LabelSet,
    TransitionObservation,
    transitions_of,
)

RNG_ALGORITHM = "PCG64/SeedSequence.spawn"


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    trajectory_count: int = 1000
    pair_probability: float = 0.0
    max_length: int = 200

    def __post_init__(self):
        if not 0.0 <= self.pair_probability <= 1.0:
            raise SchemaError("pair_probability must lie in [0, 1]")
        if self.trajectory_count < 1 or self.max_length < 1:
            raise SchemaError("trajectory_count and max_length must be positive")


def random_ground_truth(seed: int = 0, mean_length: float = 8.0, concentration: float = 1.0) -> TransitionMatrix:
    """A random 17-state matrix under the structural mask.

    Label rows stop with probability ``1/mean_length``, so the number of
    labelled segments per chain is geometric with that mean. The start row
    never jumps straight to stop.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    n = len(LABELS)
    P = np.zeros((NUM_STATES, NUM_STATES))
    p_stop = 1.0 / mean_length
    P[START, 1:STOP] = rng.dirichlet(np.full(n, concentration))
    for row in range(1, STOP):
        P[row, 1:STOP] = (1.0 - p_stop) * rng.dirichlet(np.full(n, concentration))
        P[row, STOP] = p_stop
    P[STOP, STOP] = 1.0
    return TransitionMatrix(P, build_structural_mask())


def balanced_ground_truth(seed: int = 0, mean_length: float = 8.0, support: int = 4) -> TransitionMatrix:
    """A sparse ground truth whose label block is doubly stochastic.

    The label block is a random convex combination of ``support`` permutation
    matrices and the start row is uniform, so every label is visited equally
    often at every step. Under equal occupancy the uniform within-set mixing
    used by the estimator matches the true posterior over which member of a
    widened set was the real state; with unequal occupancy the estimate is
    biased once ``pair_probability > 0``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    n = len(LABELS)
    weights = rng.dirichlet(np.ones(support))
    block = np.zeros((n, n))
    for w in weights:
        block[np.arange(n), rng.permutation(n)] += w
    p_stop = 1.0 / mean_length
    P = np.zeros((NUM_STATES, NUM_STATES))
    P[START, 1:STOP] = 1.0 / n
    P[1:STOP, 1:STOP] = (1.0 - p_stop) * block
    P[1:STOP, STOP] = p_stop
    P[STOP, STOP] = 1.0
    return TransitionMatrix(P, build_structural_mask())


def _widen(state: int, rng: np.random.Generator, pair_probability: float) -> LabelSet:
    if state in (START, STOP) or pair_probability <= 0 or rng.random() >= pair_probability:
        return LabelSet((state,))
    # co-label uniform over the 14 other labels
    other = int(rng.integers(len(LABELS) - 1)) + 1
    if other >= state:
        other += 1
    return LabelSet((state, other))


def simulate_chains(P_true: TransitionMatrix, cfg: GeneratorConfig) -> tuple[list[list[LabelSet]], int]:
    """Simulate label sequences (boundaries included) and count truncations."""
    if P_true.num_states != NUM_STATES:
        raise SchemaError(f"simulation needs a {NUM_STATES}-state matrix")
    cum = np.cumsum(P_true.values, axis=1)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.trajectory_count)
    chains: list[list[LabelSet]] = []
    truncated = 0
    for child in children:
        rng = np.random.Generator(np.random.PCG64(child))
        seq = [LabelSet.start()]
        state = START
        while state != STOP and len(seq) <= cfg.max_length:
            row = cum[state]
            state = min(int(np.searchsorted(row, rng.random() * row[-1], side="right")), NUM_STATES - 1)
            seq.append(_widen(state, rng, cfg.pair_probability))
        if state != STOP:
            truncated += 1
            continue
        chains.append(seq)
    return chains, truncated


def sample_trajectories(P_true: TransitionMatrix, cfg: GeneratorConfig) -> list[TransitionObservation]:
    chains, truncated = simulate_chains(P_true, cfg)
    if truncated:
        warnings.warn(f"{truncated} chains hit max_length={cfg.max_length}", TruncatedTrajectory, stacklevel=2)
    out: list[TransitionObservation] = []
    for seq in chains:
        out.extend(transitions_of(seq))
    return out


def _simplex_grid(parts: int, steps: int) -> np.ndarray:
    """All vectors of ``parts`` non-negative multiples of 1/steps summing to 1."""
    rows = []
    for bars in itertools.combinations(range(steps + parts - 1), parts - 1):
        edges = (-1, *bars, steps + parts - 1)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(parts)])
    return np.asarray(rows, dtype=np.float64) / steps


MAX_GRID_POINTS = 5_000_000


def brute_force_mle(observations, state_count: int, grid_step: float, mask: np.ndarray | None = None) -> TransitionMatrix:
    """Grid-search maximiser of the set-valued log-likelihood on a tiny state space.

    Every row of the candidate matrix ranges over the simplex grid with spacing
    ``grid_step`` on its allowed entries; all combinations are scored and the
    first maximiser is returned. The mask defaults to all-ones.
    """
    if state_count > 3:
        raise TooLarge(f"brute force supports at most 3 states, got {state_count}")
    steps = round(1.0 / grid_step)
    if steps < 1 or not math.isclose(steps * grid_step, 1.0, abs_tol=1e-9):
        raise SchemaError(f"grid_step {grid_step} does not divide 1")
    K = state_count
    mask = full_mask(K) if mask is None else np.asarray(mask, dtype=np.int8)

    # each distinct observation contributes count * log(<coef, P>)
    coefs: dict[tuple, np.ndarray] = {}
    counts: dict[tuple, int] = {}
    for obs in observations:
        if hasattr(obs, "index_pair"):
            I, J = obs.index_pair()
        else:
            I, J = tuple(obs[0]), tuple(obs[1])
        key = (tuple(sorted(set(I))), tuple(sorted(set(J))))
        if key not in coefs:
            c = np.zeros(K * K)
            for a in key[0]:
                for b in key[1]:
                    c[a * K + b] += 1.0 / (len(key[0]) * len(key[1]))
            coefs[key] = c * mask.reshape(-1)
        counts[key] = counts.get(key, 0) + 1
    W = np.array(list(coefs.values())).reshape(-1, K * K)
    n = np.array([counts[k] for k in coefs], dtype=np.float64)

    row_grids = []
    for a in range(K):
        allowed = np.flatnonzero(mask[a])
        full = np.zeros((1, K))
        if allowed.size:
            sub = _simplex_grid(allowed.size, steps)
            full = np.zeros((sub.shape[0], K))
            full[:, allowed] = sub
        row_grids.append(full)
    total = math.prod(g.shape[0] for g in row_grids)
    if total > MAX_GRID_POINTS:
        raise TooLarge(f"{total} grid points exceed the {MAX_GRID_POINTS} limit; use a coarser grid_step")

    best_ll, best = -np.inf, None
    sizes = [g.shape[0] for g in row_grids]
    # iterate over the first row in chunks to bound memory
    rest = [np.arange(s) for s in sizes[1:]]
    rest_idx = np.array(list(itertools.product(*rest)), dtype=np.int64).reshape(-1, K - 1)
    for i0 in range(sizes[0]):
        flat = np.empty((rest_idx.shape[0], K * K))
        flat[:, :K] = row_grids[0][i0]
        for r in range(1, K):
            flat[:, r * K:(r + 1) * K] = row_grids[r][rest_idx[:, r - 1]]
        probs = flat @ W.T
        with np.errstate(divide="ignore"):
            ll = np.log(probs) @ n
        j = int(np.argmax(ll))
        if ll[j] > best_ll:
            best_ll, best = ll[j], flat[j].reshape(K, K)
    if best is None:
        best = np.vstack([g[0] for g in row_grids])
    return TransitionMatrix(best, mask)
