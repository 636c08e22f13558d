"""Distribution evaluation and hyper-Erlang chain construction.

A residence-time bound `>= d` allows the environment to take longer than `d`,
so the chain we substitute for it must complete *no later* than `d`
(chain CDF pointwise >= target CDF); the environment recovers the slack by
blocking the chain's exit.  For `<= d` the chain must complete no earlier
(chain CDF <= target CDF) and the environment may cut it short.  Dominance is
certified on a finite grid; fits that cannot dominate at the requested
resolution raise, and the caller may raise the resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .model import GE, LE, Erlang, Exponential, HyperErlang

DOMINANCE_GRID_POINTS = 1024


class FitError(Exception):
    """Dominance cannot be certified at this resolution."""


def cdf(dist, t):
    """P(X <= t); vectorized over t."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    if isinstance(dist, Exponential):
        out[pos] = -np.expm1(-dist.rate * t[pos])
    elif isinstance(dist, Erlang):
        out[pos] = special.gammainc(dist.shape, dist.rate * t[pos])
    elif isinstance(dist, HyperErlang):
        acc = np.zeros_like(t[pos])
        for w, k, lam in dist.branches:
            acc += w * special.gammainc(k, lam * t[pos])
        out[pos] = acc
    else:
        raise TypeError(f"unsupported distribution {dist!r}")
    return out if out.ndim else float(out)


def pdf(dist, t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t >= 0
    if isinstance(dist, Exponential):
        out[pos] = dist.rate * np.exp(-dist.rate * t[pos])
    elif isinstance(dist, Erlang):
        k, lam = dist.shape, dist.rate
        logp = k * math.log(lam) + (k - 1) * np.log(np.maximum(t[pos], 1e-300)) - lam * t[pos]
        logp -= special.gammaln(k)
        out[pos] = np.exp(logp)
        if k > 1:
            out[pos & (t == 0)] = 0.0
    elif isinstance(dist, HyperErlang):
        acc = np.zeros_like(t[pos])
        for w, k, lam in dist.branches:
            acc += w * pdf(Erlang(k, lam), t[pos])
        out[pos] = acc
    else:
        raise TypeError(f"unsupported distribution {dist!r}")
    return out if out.ndim else float(out)


def mean(dist) -> float:
    if isinstance(dist, Exponential):
        return 1.0 / dist.rate
    if isinstance(dist, Erlang):
        return dist.shape / dist.rate
    if isinstance(dist, HyperErlang):
        return sum(w * k / lam for w, k, lam in dist.branches)
    raise TypeError(f"unsupported distribution {dist!r}")


def sample(dist, rng: np.random.Generator, size=None):
    """Exact sampling; reproducibility is owned by the caller through rng."""
    if isinstance(dist, Exponential):
        return rng.exponential(1.0 / dist.rate, size=size)
    if isinstance(dist, Erlang):
        return rng.gamma(dist.shape, 1.0 / dist.rate, size=size)
    if isinstance(dist, HyperErlang):
        n = 1 if size is None else int(np.prod(size))
        weights = np.array([w for w, _, _ in dist.branches])
        weights = weights / weights.sum()
        picks = rng.choice(len(dist.branches), p=weights, size=n)
        out = np.empty(n)
        for j, (_, k, lam) in enumerate(dist.branches):
            mask = picks == j
            cnt = int(mask.sum())
            if cnt:
                out[mask] = rng.gamma(k, 1.0 / lam, size=cnt)
        if size is None:
            return float(out[0])
        return out.reshape(size)
    raise TypeError(f"unsupported distribution {dist!r}")


def density_sup(dist) -> float:
    """sup_t f(t), closed form for Exponential/Erlang."""
    if isinstance(dist, Exponential):
        return dist.rate
    if isinstance(dist, Erlang):
        k, lam = dist.shape, dist.rate
        if k == 1:
            return lam
        mode = (k - 1) / lam
        return float(pdf(dist, mode))
    if isinstance(dist, HyperErlang):
        return sum(w * density_sup(Erlang(k, lam)) for w, k, lam in dist.branches)
    raise TypeError(f"unsupported distribution {dist!r}")


def density_derivative_sup(dist) -> float:
    """sup_t |f'(t)|; critical points of f' are closed-form for Erlang."""
    if isinstance(dist, Exponential):
        return dist.rate ** 2
    if isinstance(dist, Erlang):
        k, lam = dist.shape, dist.rate
        if k == 1:
            return lam ** 2
        candidates = [0.0]
        if k == 2:
            candidates.append(2.0 / lam)  # f'' root
        else:
            root = k - 1
            candidates.append((root - math.sqrt(root)) / lam)
            candidates.append((root + math.sqrt(root)) / lam)
        best = 0.0
        for t in candidates:
            f1 = _erlang_density_derivative(k, lam, t)
            best = max(best, abs(f1))
        return best
    if isinstance(dist, HyperErlang):
        return sum(w * density_derivative_sup(Erlang(k, lam)) for w, k, lam in dist.branches)
    raise TypeError(f"unsupported distribution {dist!r}")


def _erlang_density_derivative(k: int, lam: float, t: float) -> float:
    if t <= 0:
        return lam ** 2 if k == 1 else (lam ** 2 if k == 2 else 0.0)
    f = float(pdf(Erlang(k, lam), t))
    return f * ((k - 1) / t - lam)


def dominance_grid(horizon: float, points: int = DOMINANCE_GRID_POINTS) -> np.ndarray:
    """Uniform certification grid over [0, 4*horizon] plus the horizon itself."""
    grid = np.linspace(0.0, 4.0 * horizon, points)
    return np.unique(np.concatenate([grid, [horizon]]))


ENTRY_SPLIT = "split"


@dataclass(frozen=True)
class PhaseTypeChain:
    """Parallel Erlang branches of lengths 1..i with one common rate.

    `entry_mode` is either ENTRY_SPLIT (the branch is decided by the first
    Markovian race out of the entry state, which realizes the mixture exactly
    with bounded rates) or a float: a literal entry state with that total rate
    feeding full-length branches, kept for small-resolution fidelity
    experiments.
    """

    branch_weights: Tuple[float, ...]
    branch_rate: float
    direction: str
    resolution: int
    entry_mode: object = ENTRY_SPLIT

    def __post_init__(self) -> None:
        if abs(sum(self.branch_weights) - 1.0) > 1e-12:
            raise ValueError("branch weights must sum to 1")
        if len(self.branch_weights) != self.resolution:
            raise ValueError("need one weight per branch length 1..resolution")

    def as_distribution(self) -> HyperErlang:
        branches = tuple(
            (w, k + 1, self.branch_rate)
            for k, w in enumerate(self.branch_weights)
            if w > 0.0
        )
        return HyperErlang(branches)

    def cdf(self, t):
        return cdf(self.as_distribution(), t)

    def max_exit_rate(self) -> float:
        if self.entry_mode == ENTRY_SPLIT:
            return self.branch_rate
        return float(self.entry_mode)


def _erlang_cdf_table(resolution: int, rate: float, grid: np.ndarray) -> np.ndarray:
    """Row k-1 holds the Erlang(k, rate) CDF on the grid."""
    return np.stack([special.gammainc(k, rate * grid) for k in range(1, resolution + 1)])


def _exact_chain(dist, resolution: int, direction: str) -> Optional[PhaseTypeChain]:
    # Targets already of hyper-Erlang shape with one rate are emitted verbatim,
    # so exactness is never approximated away.
    if isinstance(dist, Exponential):
        weights = [0.0] * max(resolution, 1)
        weights[0] = 1.0
        return PhaseTypeChain(tuple(weights), dist.rate, direction, max(resolution, 1))
    if isinstance(dist, Erlang) and dist.shape <= resolution:
        weights = [0.0] * resolution
        weights[dist.shape - 1] = 1.0
        return PhaseTypeChain(tuple(weights), dist.rate, direction, resolution)
    if isinstance(dist, HyperErlang):
        rates = {lam for _, _, lam in dist.branches}
        shapes = [k for _, k, _ in dist.branches]
        if len(rates) == 1 and max(shapes) <= resolution:
            rate = rates.pop()
            weights = [0.0] * resolution
            for w, k, _ in dist.branches:
                weights[k - 1] += w
            return PhaseTypeChain(tuple(weights), rate, direction, resolution)
    return None


def hyper_erlang_fit(
    dist,
    resolution: int,
    direction: str,
    grid: Sequence[float],
    tol: float = 1e-12,
) -> PhaseTypeChain:
    """Fit branch weights so the chain CDF dominates the target on the grid.

    direction GE: chain CDF >= target CDF everywhere on the grid, weights
    lexicographically smallest (mass pushed to long branches).  direction LE:
    chain CDF <= target, weights lexicographically largest (mass pulled to
    short branches).  Each weight is located by binary search against the
    feasibility frontier; the completion bound for undecided mass is the
    next-shorter (GE) or longest (LE) branch, which is pointwise extremal.
    """
    if direction not in (GE, LE):
        raise ValueError(f"direction must be {GE!r} or {LE!r}")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    exact = _exact_chain(dist, resolution, direction)
    if exact is not None:
        return exact

    grid = np.asarray(grid, dtype=float)
    rate = math.sqrt(resolution)
    target = cdf(dist, grid)
    table = _erlang_cdf_table(resolution, rate, grid)

    def feasible_ge(weights: np.ndarray) -> bool:
        return bool(np.all(weights @ table >= target - tol))

    def feasible_le(weights: np.ndarray) -> bool:
        return bool(np.all(weights @ table <= target + tol))

    weights = np.zeros(resolution)

    if direction == GE:
        # All mass on the shortest branch is the most dominant mixture available.
        probe = np.zeros(resolution)
        probe[0] = 1.0
        if not feasible_ge(probe):
            _raise_infeasible(probe @ table, target, grid, GE)
        for k in range(0, resolution - 1):
            # Minimal weight for branch k+1 such that the remainder, completed
            # on the next-shorter open branch (its strongest completion),
            # still dominates.
            weights[k] = _bisect_min(
                lambda w, k=k: feasible_ge(_with(weights, k, w, fill=k + 1)),
                1.0 - weights[:k].sum(),
            )
        weights[-1] = 1.0 - weights[:-1].sum()
        if not feasible_ge(weights):
            _raise_infeasible(weights @ table, target, grid, GE)
    else:
        probe = np.zeros(resolution)
        probe[-1] = 1.0
        if not feasible_le(probe):
            _raise_infeasible(probe @ table, target, grid, LE)
        for k in range(0, resolution - 1):
            # Maximal weight for branch k+1; the remainder completes on the
            # longest branch, the slowest completion available.
            weights[k] = _bisect_max(
                lambda w, k=k: feasible_le(_with(weights, k, w, fill=resolution - 1)),
                1.0 - weights[:k].sum(),
            )
        weights[-1] = 1.0 - weights[:-1].sum()
        if not feasible_le(weights):
            _raise_infeasible(weights @ table, target, grid, LE)

    weights = np.clip(weights, 0.0, 1.0)
    weights[np.argmax(weights)] += 1.0 - weights.sum()
    return PhaseTypeChain(tuple(float(w) for w in weights), rate, direction, resolution)


def _with(weights: np.ndarray, k: int, value: float, fill: int) -> np.ndarray:
    probe = weights.copy()
    probe[k] = value
    assigned = probe.sum() - probe[fill]
    probe[fill] = 1.0 - assigned
    return probe


def _bisect_max(pred, upper: float, iterations: int = 60) -> float:
    """Largest w in [0, upper] with pred(w), assuming pred is down-closed."""
    if upper <= 0.0:
        return 0.0
    if pred(upper):
        return upper
    lo, hi = 0.0, upper  # pred(0) holds by the feasibility probe
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _bisect_min(pred, upper: float, iterations: int = 60) -> float:
    """Smallest w in [0, upper] with pred(w), assuming pred is up-closed."""
    if upper <= 0.0:
        return 0.0
    if pred(0.0):
        return 0.0
    lo, hi = 0.0, upper  # pred(upper) holds by the previous greedy step
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _raise_infeasible(got: np.ndarray, target: np.ndarray, grid: np.ndarray, direction: str):
    gap = (target - got) if direction == GE else (got - target)
    worst = int(np.argmax(gap))
    raise FitError(
        f"no {direction} dominant mixture at this resolution; worst violation "
        f"{gap[worst]:.3e} at t={grid[worst]:.6g} (raise the resolution)"
    )
