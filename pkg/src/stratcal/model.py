"""Chronological models: determinations, contexts, relations and their constraints.

A model file is a JSON object::

    {
      "calendar_window": [7500, 6000],
      "contexts": [
        {"id": "E", "internally_ordered": true,
         "determinations": [{"label": "theta_6", "x": 5900, "sigma": 50}, ...]},
        ...
      ],
      "relations": [{"older": "G", "younger": "E"}, ...]
    }

All ages are in years BP (radiocarbon) or cal BP (calendar), so *larger is
older*. Determinations inside an internally ordered context are listed
oldest first. Every context carries an early boundary ``alpha_<id>`` and a
late boundary ``beta_<id>`` unless it sets ``"boundaries": false``, in which
case its dates are bounded only by the calendar window (and by each other
when ordered).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter

import numpy as np

from .errors import (
    CyclicConstraints,
    DuplicateLabel,
    EmptyModel,
    InfeasibleModel,
    ModelError,
    ModelSyntaxError,
    UnknownContext,
)

__all__ = [
    "Determination",
    "Context",
    "Relation",
    "ParameterIndex",
    "ChronModel",
    "Constraint",
    "ParameterState",
    "build_model",
    "parse_model",
    "model_to_dict",
    "constraint_set",
    "check_constraints",
    "feasible_init",
]


@dataclass(frozen=True)
class Determination:
    label: str
    x: float
    sigma: float
    context: str


@dataclass(frozen=True)
class Context:
    id: str
    determinations: tuple[str, ...] = ()
    internally_ordered: bool = False
    boundaries: bool = True

    @property
    def alpha(self) -> str:
        return f"alpha_{self.id}"

    @property
    def beta(self) -> str:
        return f"beta_{self.id}"


@dataclass(frozen=True)
class Relation:
    older: str
    younger: str
    abutting: bool = False


@dataclass(frozen=True)
class ParameterIndex:
    """Fixed slot layout: every theta first, then each context's (alpha, beta).

    Abutting relations alias a late boundary with the next context's early
    boundary; both symbols then map to one slot, labelled ``beta_X=alpha_Y``.
    """

    labels: tuple[str, ...]
    symbols: dict[str, int]
    n_theta: int

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, symbol: str) -> int:
        return self.symbols[symbol]

    def label_of(self, slot: int) -> str:
        return self.labels[slot]


@dataclass(frozen=True)
class Constraint:
    """One inequality ``value(older) >= value(younger)`` (``>`` when strict).

    Either side may be a fixed calendar bound instead of a slot: window
    constraints have ``older=None`` with ``bound=t_max`` or ``younger=None``
    with ``bound=t_min``.
    """

    older: int | None
    younger: int | None
    strict: bool
    kind: str
    bound: float | None = None

    def holds(self, values) -> np.ndarray | bool:
        values = np.asarray(values, dtype=np.float64)
        hi = self.bound if self.older is None else values[..., self.older]
        lo = self.bound if self.younger is None else values[..., self.younger]
        return hi > lo if self.strict else hi >= lo

    def describe(self, index: ParameterIndex) -> str:
        hi = repr(self.bound) if self.older is None else index.labels[self.older]
        lo = repr(self.bound) if self.younger is None else index.labels[self.younger]
        return f"{hi} {'>' if self.strict else '>='} {lo}  [{self.kind}]"


@dataclass(frozen=True)
class ParameterState:
    """A joint assignment of every slot, in cal BP."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise ValueError("parameter state must be a finite 1-D vector")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True, eq=False)
class ChronModel:
    """A validated chronological model. Build with ``build_model``/``parse_model``."""

    contexts: tuple[Context, ...]
    determinations: tuple[Determination, ...]
    relations: tuple[Relation, ...]
    calendar_window: tuple[float, float]
    index: ParameterIndex
    constraints: tuple[Constraint, ...] = field(repr=False)

    @property
    def n_params(self) -> int:
        return len(self.index)

    @property
    def labels(self) -> tuple[str, ...]:
        return self.index.labels

    @property
    def theta_labels(self) -> tuple[str, ...]:
        return tuple(d.label for d in self.determinations)

    @property
    def boundary_slots(self) -> list[int]:
        return list(range(self.index.n_theta, self.n_params))

    def context(self, cid: str) -> Context:
        for c in self.contexts:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def determination(self, label: str) -> Determination:
        for d in self.determinations:
            if d.label == label:
                return d
        raise KeyError(label)

    def __eq__(self, other):
        if not isinstance(other, ChronModel):
            return NotImplemented
        return model_to_dict(self) == model_to_dict(other)

    __hash__ = None


# --------------------------------------------------------------------------
# construction and validation


class _Aliases:
    """Union-find over boundary symbols, used for abutting relations."""

    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, s: str) -> str:
        self.parent.setdefault(s, s)
        while self.parent[s] != s:
            self.parent[s] = self.parent[self.parent[s]]
            s = self.parent[s]
        return s

    def union(self, a: str, b: str):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _build_index(contexts, determinations, relations) -> ParameterIndex:
    aliases = _Aliases()
    for r in relations:
        if r.abutting:
            aliases.union(f"beta_{r.older}", f"alpha_{r.younger}")

    symbols: dict[str, int] = {}
    names: list[list[str]] = []
    for d in determinations:
        symbols[d.label] = len(names)
        names.append([d.label])
    root_slot: dict[str, int] = {}
    for c in contexts:
        if not c.boundaries:
            continue
        for sym in (c.alpha, c.beta):
            root = aliases.find(sym)
            if root not in root_slot:
                root_slot[root] = len(names)
                names.append([])
            slot = root_slot[root]
            symbols[sym] = slot
            names[slot].append(sym)
    return ParameterIndex(tuple("=".join(n) for n in names), symbols, len(determinations))


def _raw_constraints(contexts, relations, window, index) -> list[Constraint]:
    out: list[Constraint] = []
    s = index.symbols
    for c in contexts:
        if c.boundaries:
            out.append(Constraint(s[c.alpha], s[c.beta], True, f"boundary order in {c.id}"))
            for lab in c.determinations:
                out.append(Constraint(s[c.alpha], s[lab], False, f"{lab} after start of {c.id}"))
                out.append(Constraint(s[lab], s[c.beta], False, f"{lab} before end of {c.id}"))
        if c.internally_ordered:
            for a, b in zip(c.determinations, c.determinations[1:]):
                out.append(Constraint(s[a], s[b], True, f"stratified within {c.id}"))
    for r in relations:
        out.append(Constraint(s[f"beta_{r.older}"], s[f"alpha_{r.younger}"], False,
                              f"{r.older} older than {r.younger}"))
    t_max, t_min = window
    for slot in range(len(index)):
        out.append(Constraint(None, slot, False, "calendar window", bound=t_max))
        out.append(Constraint(slot, None, False, "calendar window", bound=t_min))
    return out


def _slot_graph(n: int, constraints) -> dict[int, set[int]]:
    """Predecessor map for graphlib: younger slot depends on older slot."""
    graph: dict[int, set[int]] = {i: set() for i in range(n)}
    for c in constraints:
        if c.older is not None and c.younger is not None:
            graph[c.younger].add(c.older)
    return graph


def build_model(contexts, determinations, relations=(), calendar_window=None) -> ChronModel:
    """Validate the parts of a model and assemble a ``ChronModel``.

    ``determinations`` must be ``Determination`` objects whose ``context``
    fields name entries of ``contexts``; each context lists its own labels.
    """
    contexts = tuple(contexts)
    determinations = tuple(determinations)
    relations = tuple(relations)
    if not contexts:
        raise EmptyModel("model has no contexts", "contexts")
    if calendar_window is None:
        raise ModelError("calendar_window is required", "calendar_window")
    t_max, t_min = (float(v) for v in calendar_window)
    if not (math.isfinite(t_max) and math.isfinite(t_min)) or not t_max > t_min:
        raise ModelError(f"calendar_window must be [t_max, t_min] with t_max > t_min, "
                         f"got {[t_max, t_min]}", "calendar_window")

    ctx_ids: dict[str, int] = {}
    for i, c in enumerate(contexts):
        if c.id in ctx_ids:
            raise DuplicateLabel(f"duplicate context id {c.id!r}", f"contexts[{i}].id")
        ctx_ids[c.id] = i
        if not c.boundaries and not c.determinations:
            raise ModelError(f"context {c.id!r} has neither boundaries nor determinations",
                             f"contexts[{i}]")

    by_label: dict[str, Determination] = {}
    for d in determinations:
        if d.label in by_label:
            raise DuplicateLabel(f"duplicate determination label {d.label!r}")
        if d.context not in ctx_ids:
            raise UnknownContext(f"determination {d.label!r} names unknown context {d.context!r}")
        if not (d.sigma > 0 and math.isfinite(d.sigma) and math.isfinite(d.x)):
            raise ModelError(f"determination {d.label!r} needs finite x and sigma > 0")
        by_label[d.label] = d
    listed = 0
    for i, c in enumerate(contexts):
        for lab in c.determinations:
            if lab not in by_label or by_label[lab].context != c.id:
                raise UnknownContext(f"context {c.id!r} lists unknown determination {lab!r}",
                                     f"contexts[{i}].determinations")
        listed += len(c.determinations)
    if listed != len(determinations):
        raise ModelError("every determination must be listed by exactly one context")

    # canonical order: theta slots follow context listing order
    determinations = tuple(by_label[lab] for c in contexts for lab in c.determinations)

    boundary_syms = {s for c in contexts if c.boundaries for s in (c.alpha, c.beta)}
    clash = boundary_syms & set(by_label)
    if clash:
        raise DuplicateLabel(f"determination label(s) {sorted(clash)} clash with boundary names")

    for i, r in enumerate(relations):
        loc = f"relations[{i}]"
        for cid in (r.older, r.younger):
            if cid not in ctx_ids:
                raise UnknownContext(f"relation names unknown context {cid!r}", loc)
            if not contexts[ctx_ids[cid]].boundaries:
                raise ModelError(f"context {cid!r} has no boundaries and cannot take part "
                                 "in a relation", loc)
        if r.older == r.younger:
            raise CyclicConstraints(f"{loc}: context {r.older!r} cannot be older than itself",
                                    [r.older])

    index = _build_index(contexts, determinations, relations)
    for c in contexts:
        if c.boundaries and index[c.alpha] == index[c.beta]:
            raise CyclicConstraints(
                f"abutting relations collapse both boundaries of context {c.id!r}", [c.id])

    raw = _raw_constraints(contexts, relations, (t_max, t_min), index)
    constraints = tuple(c for c in raw if c.older != c.younger or c.older is None)

    graph = _slot_graph(len(index), constraints)
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        cycle = [index.labels[s] for s in exc.args[1]]
        raise CyclicConstraints("cyclic ordering constraints: " + " -> ".join(cycle),
                                cycle) from None

    return ChronModel(contexts, determinations, relations, (t_max, t_min), index, constraints)


# --------------------------------------------------------------------------
# model file


_TOP_KEYS = {"calendar_window", "contexts", "relations"}
_CTX_KEYS = {"id", "internally_ordered", "determinations", "boundaries"}
_DET_KEYS = {"label", "x", "sigma"}
_REL_KEYS = {"older", "younger", "abutting"}


def _expect(value, kind, loc):
    checks = {
        "object": lambda v: isinstance(v, dict),
        "array": lambda v: isinstance(v, list),
        "string": lambda v: isinstance(v, str) and v != "",
        "bool": lambda v: isinstance(v, bool),
        "number": lambda v: (isinstance(v, (int, float)) and not isinstance(v, bool)),
    }
    if not checks[kind](value):
        raise ModelError(f"expected {'non-empty ' if kind == 'string' else ''}{kind}, "
                         f"got {type(value).__name__} {value!r:.40}", loc)
    if kind == "number":
        try:
            value = float(value)
        except OverflowError:
            raise ModelError("number out of range", loc) from None
        if not math.isfinite(value):
            raise ModelError("number must be finite", loc)
    return value


def _check_keys(obj: dict, allowed: set, required: set, loc: str):
    for k in obj:
        if k not in allowed:
            raise ModelError(f"unknown key {k!r}", loc)
    for k in sorted(required):
        if k not in obj:
            raise ModelError(f"missing key {k!r}", loc)


def parse_model(text: str | bytes) -> ChronModel:
    """Parse and validate a JSON model document.

    Every failure is raised as a ``ModelError`` subclass carrying a location:
    ``line L, col C`` for syntax errors, a JSON path such as
    ``contexts[2].determinations[0].sigma`` for structural ones.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelSyntaxError(f"invalid UTF-8: {exc.reason}", f"byte {exc.start}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelSyntaxError(exc.msg, f"line {exc.lineno}, col {exc.colno}") from None
    except RecursionError:
        raise ModelSyntaxError("document nested too deeply", "line 1, col 1") from None
    except ValueError as exc:
        # e.g. integer literals beyond the interpreter's digit limit
        raise ModelSyntaxError(str(exc), "line 1, col 1") from None

    _expect(doc, "object", "$")
    _check_keys(doc, _TOP_KEYS, {"calendar_window", "contexts"}, "$")
    win = _expect(doc["calendar_window"], "array", "calendar_window")
    if len(win) != 2:
        raise ModelError("calendar_window must have exactly two entries", "calendar_window")
    window = tuple(_expect(v, "number", f"calendar_window[{i}]") for i, v in enumerate(win))

    contexts, dets = [], []
    for i, raw in enumerate(_expect(doc["contexts"], "array", "contexts")):
        loc = f"contexts[{i}]"
        _expect(raw, "object", loc)
        _check_keys(raw, _CTX_KEYS, {"id"}, loc)
        cid = _expect(raw["id"], "string", f"{loc}.id")
        ordered = _expect(raw.get("internally_ordered", False), "bool", f"{loc}.internally_ordered")
        bounded = _expect(raw.get("boundaries", True), "bool", f"{loc}.boundaries")
        labels = []
        for k, rd in enumerate(_expect(raw.get("determinations", []), "array",
                                       f"{loc}.determinations")):
            dloc = f"{loc}.determinations[{k}]"
            _expect(rd, "object", dloc)
            _check_keys(rd, _DET_KEYS, _DET_KEYS, dloc)
            label = _expect(rd["label"], "string", f"{dloc}.label")
            x = _expect(rd["x"], "number", f"{dloc}.x")
            sigma = _expect(rd["sigma"], "number", f"{dloc}.sigma")
            if sigma <= 0:
                raise ModelError(f"sigma must be > 0, got {sigma!r}", f"{dloc}.sigma")
            if any(d.label == label for d in dets):
                raise DuplicateLabel(f"duplicate determination label {label!r}", f"{dloc}.label")
            dets.append(Determination(label, x, sigma, cid))
            labels.append(label)
        contexts.append(Context(cid, tuple(labels), ordered, bounded))

    relations = []
    for i, raw in enumerate(_expect(doc.get("relations", []), "array", "relations")):
        loc = f"relations[{i}]"
        _expect(raw, "object", loc)
        _check_keys(raw, _REL_KEYS, {"older", "younger"}, loc)
        relations.append(Relation(_expect(raw["older"], "string", f"{loc}.older"),
                                  _expect(raw["younger"], "string", f"{loc}.younger"),
                                  _expect(raw.get("abutting", False), "bool", f"{loc}.abutting")))
    return build_model(contexts, dets, relations, window)


def model_to_dict(model: ChronModel) -> dict:
    """Inverse of ``parse_model``: a JSON-ready dict describing ``model``."""
    ctxs = []
    for c in model.contexts:
        entry = {"id": c.id, "internally_ordered": c.internally_ordered}
        if not c.boundaries:
            entry["boundaries"] = False
        entry["determinations"] = [
            {"label": d.label, "x": d.x, "sigma": d.sigma}
            for d in (model.determination(lab) for lab in c.determinations)
        ]
        ctxs.append(entry)
    rels = []
    for r in model.relations:
        entry = {"older": r.older, "younger": r.younger}
        if r.abutting:
            entry["abutting"] = True
        rels.append(entry)
    return {"calendar_window": list(model.calendar_window), "contexts": ctxs, "relations": rels}


# --------------------------------------------------------------------------
# constraints and initialisation


def constraint_set(model: ChronModel) -> list[Constraint]:
    """Every ordering inequality the prior imposes, over ParameterIndex slots.

    Emitted: alpha > beta per bounded context; alpha >= theta >= beta for its
    dates; strict theta chains in ordered contexts; beta_older >= alpha_younger
    per relation; and t_max >= value >= t_min for every slot.
    """
    return list(model.constraints)


def check_constraints(values, constraints) -> np.ndarray | bool:
    """True where a state (or a stack of states, last axis = slots) satisfies all."""
    values = np.asarray(values, dtype=np.float64)
    ok = np.ones(values.shape[:-1], dtype=bool)
    for c in constraints:
        ok &= c.holds(values)
    return ok if ok.ndim else bool(ok)


def constraint_levels(model: ChronModel) -> np.ndarray:
    """Longest-path depth of each slot in the constraint DAG (0 = oldest)."""
    graph = _slot_graph(model.n_params, model.constraints)
    level = np.zeros(model.n_params, dtype=np.int64)
    for slot in TopologicalSorter(graph).static_order():
        preds = graph[slot]
        if preds:
            level[slot] = 1 + max(level[p] for p in preds)
    return level


def sampling_range(model: ChronModel, curve) -> tuple[float, float]:
    """Calendar window intersected with the curve domain, as ``(hi, lo)``."""
    t_max, t_min = model.calendar_window
    c_lo, c_hi = curve.domain
    return min(t_max, c_hi), max(t_min, c_lo)


def feasible_init(model: ChronModel, curve, seed: int, resolution: float = 1.0) -> ParameterState:
    """A starting state that satisfies every constraint.

    Slots are layered by their longest-path depth in the constraint DAG and
    layers are spread evenly, oldest first, across the calendar window
    (clipped to the curve domain). Each value gets a seeded jitter of up to
    40% of the layer spacing, which cannot reorder layers.

    Raises
    ------
    InfeasibleModel
        If the window cannot fit the longest ordering chain at ``resolution``
        calendar years between successive layers.
    """
    hi, lo = sampling_range(model, curve)
    level = constraint_levels(model)
    n_layers = int(level.max()) + 1
    span = hi - lo
    step = span / (n_layers + 1) if span > 0 else 0.0
    if step < resolution:
        raise InfeasibleModel(
            f"window [{hi}, {lo}] cal BP cannot hold a strictly ordered chain of "
            f"{n_layers} values at {resolution} yr spacing")
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-0.4, 0.4, size=model.n_params) * step
    values = hi - (level + 1) * step + jitter
    state = ParameterState(values)
    assert check_constraints(state.values, model.constraints)
    return state
