"""Core domain types: interactive Markov chains and modal continuous-time automata.

States and locations are strings in the surface syntax; every model interns
them to dense integer indices (`state_index`) so the analysis modules can use
array-shaped tables.  All types are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence, Tuple

TAU_NAME = "tau"
NOW_NAME = "Now"
CHANGE_NAME = "Change"
RESERVED_NAMES = frozenset({TAU_NAME, NOW_NAME, CHANGE_NAME})

KIND_EXTERNAL = "external"
KIND_TAU = "internal-tau"
KIND_BARRED = "barred-external"
KIND_NOW = "now"
KIND_CHANGE = "change"

#: Total exit rate beyond which a model is rejected (keeps discretization sane).
DEFAULT_RATE_CAP = 1e6


@dataclass(frozen=True, order=True)
class ActionLabel:
    """A transition label: external action, internal tau, or a synthetic label.

    Barred labels (`barred-external`) appear only in intermediate output of the
    assumption-to-chain translation, never in user models.
    """

    name: str
    kind: str = KIND_EXTERNAL

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("action label must be a non-empty identifier")

    @property
    def is_internal(self) -> bool:
        return self.kind == KIND_TAU

    def __str__(self) -> str:
        if self.kind == KIND_BARRED:
            return f"{self.name}!"
        return self.name


TAU = ActionLabel(TAU_NAME, KIND_TAU)
NOW = ActionLabel(NOW_NAME, KIND_NOW)
CHANGE = ActionLabel(CHANGE_NAME, KIND_CHANGE)


def external(name: str) -> ActionLabel:
    if name in RESERVED_NAMES:
        raise ValueError(f"{name!r} is reserved and cannot be a user action")
    return ActionLabel(name, KIND_EXTERNAL)


def barred(name: str) -> ActionLabel:
    return ActionLabel(name, KIND_BARRED)


class ModelError(Exception):
    """Structural error in a model or specification."""


@dataclass(frozen=True)
class ImcModel:
    """A finite interactive Markov chain.

    `interactive` holds (source, label, target) triples; `markovian` holds
    (source, rate, target) with rate > 0.  `goal` is the optional goal-state
    annotation carried by the surface format.
    """

    name: str
    states: Tuple[str, ...]
    actions: frozenset
    interactive: Tuple[Tuple[str, ActionLabel, str], ...]
    markovian: Tuple[Tuple[str, float, str], ...]
    initial: str
    goal: frozenset = frozenset()

    @cached_property
    def state_index(self) -> Mapping[str, int]:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def interactive_by_source(self) -> Mapping[str, Tuple[Tuple[ActionLabel, str], ...]]:
        out: dict = {s: [] for s in self.states}
        for src, lbl, dst in self.interactive:
            out[src].append((lbl, dst))
        return {s: tuple(v) for s, v in out.items()}

    @cached_property
    def markovian_by_source(self) -> Mapping[str, Tuple[Tuple[float, str], ...]]:
        out: dict = {s: [] for s in self.states}
        for src, rate, dst in self.markovian:
            out[src].append((rate, dst))
        return {s: tuple(v) for s, v in out.items()}

    def exit_rate(self, state: str) -> float:
        return sum(r for r, _ in self.markovian_by_source[state])

    def tau_successors(self, state: str) -> Tuple[str, ...]:
        return tuple(dst for lbl, dst in self.interactive_by_source[state] if lbl.is_internal)

    def has_tau(self, state: str) -> bool:
        return any(lbl.is_internal for lbl, _ in self.interactive_by_source[state])

    @property
    def closed(self) -> bool:
        """True iff every interactive transition is internal."""
        return all(lbl.is_internal for _, lbl, _ in self.interactive)

    @cached_property
    def max_exit_rate(self) -> float:
        if not self.markovian:
            return 0.0
        return max(self.exit_rate(s) for s in self.states)

    def interactive_only_cycle(self) -> Optional[Tuple[str, ...]]:
        """Return a cycle of the interactive-only subgraph, or None if acyclic."""
        WHITE, GREY, BLACK = 0, 1, 2
        color = {s: WHITE for s in self.states}
        stack_path: list = []

        def dfs(u: str) -> Optional[Tuple[str, ...]]:
            color[u] = GREY
            stack_path.append(u)
            for _, dst in self.interactive_by_source[u]:
                if color[dst] == GREY:
                    k = stack_path.index(dst)
                    return tuple(stack_path[k:] + [dst])
                if color[dst] == WHITE:
                    found = dfs(dst)
                    if found is not None:
                        return found
            color[u] = BLACK
            stack_path.pop()
            return None

        for s in self.states:
            if color[s] == WHITE:
                found = dfs(s)
                if found is not None:
                    return found
        return None

    def tau_topological_order(self) -> Tuple[str, ...]:
        """States ordered so every tau edge goes forward; requires acyclicity."""
        indeg = {s: 0 for s in self.states}
        for src, lbl, dst in self.interactive:
            if lbl.is_internal:
                indeg[dst] += 1
        frontier = [s for s in self.states if indeg[s] == 0]
        order: list = []
        while frontier:
            u = frontier.pop()
            order.append(u)
            for lbl, dst in self.interactive_by_source[u]:
                if lbl.is_internal:
                    indeg[dst] -= 1
                    if indeg[dst] == 0:
                        frontier.append(dst)
        if len(order) != len(self.states):
            raise ModelError("interactive-only subgraph has a cycle")
        return tuple(order)


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        return "ok" if self.ok else "\n".join(self.violations)


def validate(model: ImcModel, rate_cap: float = DEFAULT_RATE_CAP) -> ValidationReport:
    """Check every structural invariant; an accepted model has an empty report."""
    bad: list = []
    idx = set(model.states)
    if model.initial not in idx:
        bad.append(f"initial state {model.initial!r} is not declared")
    for src, lbl, dst in model.interactive:
        if src not in idx or dst not in idx:
            bad.append(f"interactive transition {src}->{dst} references undeclared state")
    for src, rate, dst in model.markovian:
        if src not in idx or dst not in idx:
            bad.append(f"markovian transition {src}->{dst} references undeclared state")
        if not (rate > 0.0) or not math.isfinite(rate):
            bad.append(f"markovian transition {src}->{dst} has non-positive rate {rate}")
    for g in model.goal:
        if g not in idx:
            bad.append(f"goal state {g!r} is not declared")
    for s in model.states:
        total = model.exit_rate(s)
        if total > rate_cap:
            bad.append(f"state {s!r} has total exit rate {total} above the cap {rate_cap}")
    cycle = model.interactive_only_cycle()
    if cycle is not None:
        bad.append("interactive-only cycle: " + " -> ".join(cycle))
    return ValidationReport(tuple(bad))


# ---------------------------------------------------------------------------
# Distribution specifications and continuous time constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self) -> None:
        if not (self.rate > 0):
            raise ValueError("exponential rate must be positive")

    def __str__(self) -> str:
        return f"exp({self.rate!r})"


@dataclass(frozen=True)
class Erlang:
    shape: int
    rate: float

    def __post_init__(self) -> None:
        if self.shape < 1:
            raise ValueError("erlang shape must be >= 1")
        if not (self.rate > 0):
            raise ValueError("erlang rate must be positive")

    def __str__(self) -> str:
        return f"erlang({self.shape},{self.rate!r})"


@dataclass(frozen=True)
class HyperErlang:
    """Mixture of Erlang branches: tuple of (weight, shape, rate)."""

    branches: Tuple[Tuple[float, int, float], ...]

    def __post_init__(self) -> None:
        if not self.branches:
            raise ValueError("hyper-erlang needs at least one branch")
        total = sum(w for w, _, _ in self.branches)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"hyper-erlang weights sum to {total}, expected 1")
        for w, k, lam in self.branches:
            if w < 0 or k < 1 or not (lam > 0):
                raise ValueError("malformed hyper-erlang branch")

    def __str__(self) -> str:
        inner = ";".join(f"{w!r}:{k}:{lam!r}" for w, k, lam in self.branches)
        return f"hypererlang({inner})"


DistributionSpec = object  # union of the three dataclasses above

LE = "<="
GE = ">="


@dataclass(frozen=True)
class TimeConstraint:
    """Either unconstrained (`top`) or a one-sided stochastic bound on residence."""

    direction: Optional[str] = None  # None means top
    dist: Optional[DistributionSpec] = None

    def __post_init__(self) -> None:
        if (self.direction is None) != (self.dist is None):
            raise ValueError("bounded constraint needs both direction and distribution")
        if self.direction is not None and self.direction not in (LE, GE):
            raise ValueError(f"bad constraint direction {self.direction!r}")

    @property
    def is_top(self) -> bool:
        return self.direction is None

    def __str__(self) -> str:
        if self.is_top:
            return "top"
        return f"{self.direction} {self.dist}"


TOP = TimeConstraint()


@dataclass(frozen=True)
class McaSpec:
    """Modal continuous-time automaton over external actions.

    `may` and `must` are partial maps (location, action-name) -> location with
    must contained in may; `flow` is total (parser fills missing entries with
    (top, self)).
    """

    name: str
    locations: Tuple[str, ...]
    initial: str
    may: Mapping[Tuple[str, str], str]
    must: Mapping[Tuple[str, str], str]
    flow: Mapping[str, Tuple[TimeConstraint, str]]

    def __post_init__(self) -> None:
        locs = set(self.locations)
        if self.initial not in locs:
            raise ModelError(f"initial location {self.initial!r} is not declared")
        for (loc, act), dst in self.must.items():
            if self.may.get((loc, act)) != dst:
                raise ModelError(
                    f"must transition {loc} -{act}-> {dst} has no matching may transition"
                )
        for (loc, act), dst in self.may.items():
            if loc not in locs or dst not in locs:
                raise ModelError(f"may transition {loc} -{act}-> {dst} uses unknown location")
        for loc in self.locations:
            if loc not in self.flow:
                raise ModelError(f"location {loc!r} has no flow entry")

    @cached_property
    def alphabet(self) -> frozenset:
        return frozenset(a for (_, a) in self.may)

    def may_edges(self, loc: str) -> Tuple[Tuple[str, str], ...]:
        return tuple((a, dst) for (l, a), dst in sorted(self.may.items()) if l == loc)

    def must_edges(self, loc: str) -> Tuple[Tuple[str, str], ...]:
        return tuple((a, dst) for (l, a), dst in sorted(self.must.items()) if l == loc)


def permissive_spec(actions: Iterable[str], name: str = "top") -> McaSpec:
    """The fully permissive one-location assumption: every action may loop."""
    acts = sorted(set(actions))
    may = {("q0", a): "q0" for a in acts}
    return McaSpec(
        name=name,
        locations=("q0",),
        initial="q0",
        may=may,
        must={},
        flow={"q0": (TOP, "q0")},
    )


@dataclass(frozen=True)
class GoalQuery:
    """Analysis query: goal set, horizon and discretization parameters.

    The horizon must be an integer number of steps (`horizon = slots * kappa`)
    and the controller clock resolution an integer multiple of the step
    (`delta = n * kappa`).
    """

    goal: frozenset
    horizon: float
    epsilon: float
    kappa: float
    delta: float
    erlang_resolution: int = 4

    def __post_init__(self) -> None:
        if not (self.horizon > 0):
            raise ValueError("horizon must be positive")
        if not (0 < self.epsilon < 1):
            raise ValueError("epsilon must lie in (0,1)")
        if not (self.kappa > 0) or not (self.delta > 0):
            raise ValueError("kappa and delta must be positive")
        if self.erlang_resolution < 1:
            raise ValueError("erlang resolution must be >= 1")
        if _ratio_is_fractional(self.delta, self.kappa):
            raise ValueError("delta must be an integer multiple of kappa")
        if _ratio_is_fractional(self.horizon, self.kappa):
            raise ValueError("horizon must be an integer multiple of kappa")

    @property
    def slots(self) -> int:
        return int(round(self.horizon / self.kappa))

    @property
    def coarse_factor(self) -> int:
        """Number of kappa-steps per clock-resolution tick."""
        return int(round(self.delta / self.kappa))


def _ratio_is_fractional(num: float, den: float, tol: float = 1e-9) -> bool:
    q = num / den
    return abs(q - round(q)) > tol * max(1.0, abs(q))
