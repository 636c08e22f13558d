"""Line-oriented text formats for models (`.imc`) and assumptions (`.mca`).

The grammar is deliberately small; `docs/format.md` pins it bit-exactly and
`docs/fixtures/` holds conformance inputs.  Printing then reparsing any valid
model reproduces it structurally.
"""

from __future__ import annotations

import re
from typing import Dict, List, Tuple

from .model import (
    GE,
    LE,
    TOP,
    Erlang,
    Exponential,
    HyperErlang,
    ImcModel,
    McaSpec,
    ModelError,
    RESERVED_NAMES,
    TAU,
    TimeConstraint,
    external,
    validate,
)

_IDENT = r"[A-Za-z_][A-Za-z0-9_.?~{},]*"
_NUM = r"[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?"

_RE_EXT = re.compile(rf"^({_IDENT})\s+-({_IDENT})->\s+({_IDENT})$")
_RE_MARKOV = re.compile(rf"^({_IDENT})\s+-\(({_NUM})\)->\s+({_IDENT})$")
_RE_MAY_MUST = re.compile(rf"^(may|must)\s+({_IDENT})\s+-({_IDENT})->\s+({_IDENT})$")
_RE_FLOW = re.compile(
    rf"^flow\s+({_IDENT})\s+(?:(<=|>=)\s+)?(top|exp\({_NUM}\)|erlang\([0-9]+,\s*{_NUM}\))"
    rf"\s+->\s+({_IDENT})$"
)


class ParseError(ModelError):
    """Syntax or consistency error, annotated with line and column."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def _logical_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            yield lineno, body


def parse_imc(text: str) -> ImcModel:
    """Parse `.imc` source into a validated model.

    Raises ParseError on malformed input and ModelError when a structural
    invariant (unknown state, bad rate, interactive-only cycle) is violated.
    """
    name = None
    initial = None
    states: List[str] = []
    seen = set()
    goal: List[str] = []
    interactive: List[Tuple[str, object, str]] = []
    markovian: List[Tuple[str, float, str]] = []
    pending = []  # (lineno, kind, payload) resolved after all states are known

    for lineno, body in _logical_lines(text):
        head, _, rest = body.partition(" ")
        rest = rest.strip()
        if head == "imc":
            if not rest:
                raise ParseError("missing model name", lineno)
            name = rest
        elif head == "initial":
            if not rest:
                raise ParseError("missing initial state", lineno)
            initial = rest
            pending.append((lineno, "state-ref", rest))
        elif head == "state":
            for tok in rest.split():
                if tok in seen:
                    raise ParseError(f"state {tok!r} declared twice", lineno)
                seen.add(tok)
                states.append(tok)
        elif head == "goal":
            for tok in rest.split():
                goal.append(tok)
                pending.append((lineno, "state-ref", tok))
        else:
            m = _RE_MARKOV.match(body)
            if m:
                src, rate_s, dst = m.groups()
                rate = float(rate_s)
                if not rate > 0:
                    raise ParseError(f"non-positive rate {rate_s}", lineno)
                markovian.append((src, rate, dst))
                pending.append((lineno, "state-ref", src))
                pending.append((lineno, "state-ref", dst))
                continue
            m = _RE_EXT.match(body)
            if m:
                src, act, dst = m.groups()
                label = TAU if act == "tau" else _user_action(act, lineno)
                interactive.append((src, label, dst))
                pending.append((lineno, "state-ref", src))
                pending.append((lineno, "state-ref", dst))
                continue
            raise ParseError(f"cannot parse {body!r}", lineno, column=1)

    if name is None:
        raise ParseError("missing 'imc <name>' header", 1)
    if initial is None:
        raise ParseError("missing 'initial <state>' line", 1)
    for lineno, _, ref in pending:
        if ref not in seen:
            raise ParseError(f"unknown state reference {ref!r}", lineno)

    model = ImcModel(
        name=name,
        states=tuple(states),
        actions=frozenset(l for _, l, _ in interactive if not l.is_internal),
        interactive=tuple(interactive),
        markovian=tuple(markovian),
        initial=initial,
        goal=frozenset(goal),
    )
    report = validate(model)
    if not report.ok:
        raise ModelError(str(report))
    return model


def _user_action(name: str, lineno: int):
    if name in RESERVED_NAMES:
        raise ParseError(f"action name {name!r} is reserved", lineno)
    return external(name)


def print_imc(model: ImcModel) -> str:
    lines = [f"imc {model.name}", f"initial {model.initial}"]
    if model.states:
        lines.append("state " + " ".join(model.states))
    if model.goal:
        lines.append("goal " + " ".join(sorted(model.goal)))
    for src, lbl, dst in model.interactive:
        lines.append(f"{src} -{lbl.name}-> {dst}")
    for src, rate, dst in model.markovian:
        lines.append(f"{src} -({rate!r})-> {dst}")
    return "\n".join(lines) + "\n"


def _parse_dist(token: str, lineno: int):
    if token == "top":
        return None
    if token.startswith("exp("):
        return Exponential(float(token[4:-1]))
    if token.startswith("erlang("):
        shape_s, rate_s = token[7:-1].split(",")
        return Erlang(int(shape_s), float(rate_s))
    raise ParseError(f"unknown distribution {token!r}", lineno)


def parse_mca(text: str) -> McaSpec:
    """Parse `.mca` source; locations without an explicit flow default to (top, self)."""
    name = None
    initial = None
    locations: List[str] = []
    seen = set()
    may: Dict[Tuple[str, str], str] = {}
    must: Dict[Tuple[str, str], str] = {}
    flow: Dict[str, Tuple[TimeConstraint, str]] = {}

    def touch(loc: str) -> None:
        if loc not in seen:
            seen.add(loc)
            locations.append(loc)

    for lineno, body in _logical_lines(text):
        head, _, rest = body.partition(" ")
        rest = rest.strip()
        if head == "mca":
            name = rest or None
            if name is None:
                raise ParseError("missing specification name", lineno)
            continue
        if head == "initial":
            if not rest:
                raise ParseError("missing initial location", lineno)
            initial = rest
            touch(rest)
            continue
        m = _RE_MAY_MUST.match(body)
        if m:
            kind, src, act, dst = m.groups()
            if act in RESERVED_NAMES:
                raise ParseError(f"action name {act!r} is reserved", lineno)
            touch(src)
            touch(dst)
            table = may if kind == "may" else must
            if (src, act) in table:
                raise ParseError(f"duplicate {kind} transition at ({src}, {act})", lineno)
            table[(src, act)] = dst
            continue
        m = _RE_FLOW.match(body)
        if m:
            src, direction, dist_s, dst = m.groups()
            touch(src)
            touch(dst)
            if src in flow:
                raise ParseError(f"duplicate flow at {src!r}", lineno)
            dist = _parse_dist(dist_s, lineno)
            if dist is None:
                if direction is not None:
                    raise ParseError("'top' takes no direction", lineno)
                flow[src] = (TOP, dst)
            else:
                if direction is None:
                    raise ParseError("bounded flow needs '<=' or '>='", lineno)
                flow[src] = (TimeConstraint(LE if direction == "<=" else GE, dist), dst)
            continue
        raise ParseError(f"cannot parse {body!r}", lineno)

    if name is None:
        raise ParseError("missing 'mca <name>' header", 1)
    if initial is None:
        raise ParseError("missing 'initial <location>' line", 1)
    for (loc, act), dst in must.items():
        if may.get((loc, act)) != dst:
            raise ParseError(
                f"must transition {loc} -{act}-> {dst} without matching may transition", 1
            )
    for loc in locations:
        flow.setdefault(loc, (TOP, loc))
    return McaSpec(
        name=name,
        locations=tuple(locations),
        initial=initial,
        may=dict(may),
        must=dict(must),
        flow=flow,
    )


def _print_ctc(ctc: TimeConstraint) -> str:
    if ctc.is_top:
        return "top"
    return f"{ctc.direction} {ctc.dist}"


def print_mca(spec: McaSpec) -> str:
    lines = [f"mca {spec.name}", f"initial {spec.initial}"]
    for (loc, act), dst in sorted(spec.may.items()):
        lines.append(f"may {loc} -{act}-> {dst}")
    for (loc, act), dst in sorted(spec.must.items()):
        lines.append(f"must {loc} -{act}-> {dst}")
    for loc in spec.locations:
        ctc, dst = spec.flow[loc]
        if ctc.is_top and dst == loc:
            continue  # the parser default; omitted on purpose
        lines.append(f"flow {loc} {_print_ctc(ctc)} -> {dst}")
    return "\n".join(lines) + "\n"
