"""Deterministic rule-based planner.

Instructions are matched against task templates declared by the scenario
(keywords plus a regular expression with named slots). Each template kind
expands into a fixed subtask-graph shape:

``fetch``    one subtask per item: bring it onto a target.
``deliver``  parallel fetches at depth 1, then one delivery at depth 2; when
             several robots fetched, the delivery is a collaboration in which
             givers hand their items to a courier.
``prepare``  recipe steps at depth 1 (assemble items onto a vessel, or pour),
             then serving the vessel at depth 2.
``pack``     open a container and fetch an item in parallel, then place the
             item inside.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from ..errors import InfeasibleTaskError, PlanValidationError, UnmatchedTemplateError
from . import goals
from .types import PlannerInput, ReasoningTrace, Subtask, SubtaskGraph, validate_graph

TEMPLATE_KINDS = ("fetch", "deliver", "prepare", "pack")
_ARTICLES = ("a ", "an ", "the ", "some ", "one ")

FETCH_SKILLS = frozenset({"navigate", "detect", "grasp"})


def norm(text: str) -> str:
    return re.sub(r"[\s_\-]+", " ", text.strip().lower()).strip(" .!?,")


def strip_article(text: str) -> str:
    text = norm(text)
    for art in _ARTICLES:
        if text.startswith(art):
            return text[len(art):]
    return text


def split_items(text: str) -> list[str]:
    parts = re.split(r",|\band\b|&", text)
    return [strip_article(p) for p in parts if strip_article(p)]


@dataclass(frozen=True)
class TaskTemplate:
    name: str
    kind: str
    pattern: str
    keywords: tuple = ()
    target: str | None = None
    recipes: Mapping[str, Any] = field(default_factory=dict)
    phrasing: str | None = None
    slots: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TEMPLATE_KINDS:
            raise ValueError(f"unknown template kind {self.kind!r}")
        re.compile(self.pattern)

    def match(self, instruction: str) -> dict | None:
        text = norm(instruction)
        if self.keywords and not any(norm(k) in text for k in self.keywords):
            return None
        m = re.search(self.pattern, text, re.IGNORECASE)
        if m is None:
            return None
        return {k: v for k, v in m.groupdict().items() if v is not None}

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "pattern": self.pattern,
             "keywords": list(self.keywords)}
        if self.target:
            d["target"] = self.target
        if self.recipes:
            d["recipes"] = dict(self.recipes)
        if self.phrasing:
            d["phrasing"] = self.phrasing
        if self.slots:
            d["slots"] = dict(self.slots)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "TaskTemplate":
        return cls(data["name"], data["kind"], data["pattern"], tuple(data.get("keywords", ())),
                   data.get("target"), data.get("recipes", {}), data.get("phrasing"),
                   data.get("slots", {}))


class _Planning:
    """Lookups shared by the template expanders for one planner call."""

    def __init__(self, inp: PlannerInput, defaults: Mapping[str, str], graph_id: str):
        self.inp = inp
        self.g = inp.spatial
        self.defaults = {norm(k): v for k, v in defaults.items()}
        self.graph_id = graph_id
        self.trace: list[str] = []
        self.subtasks: dict[str, Subtask] = {}
        self.load: dict[str, int] = {}

    # ------------------------------------------------------------- the scene

    def locate(self, label: str) -> tuple[str, str | None]:
        """(room, node id or None) for an item label; raises if unknown."""
        key = norm(label)
        for m in self.g.query(labels=self._label_variants(key)):
            if m.node.kind == "object" and not m.node.attributes.get("robot"):
                return self.g.room_of(m.id), m.id
        if key in self.defaults:
            return self.defaults[key], None
        raise InfeasibleTaskError(f"no {label!r} in the scene or the scenario defaults")

    def _label_variants(self, key: str) -> list[str]:
        labels = {n.label for n in self.g.nodes.values()}
        return sorted(l for l in labels if norm(l) == key)

    def label_of(self, phrase: str) -> str:
        key = norm(phrase)
        variants = self._label_variants(key)
        return variants[0] if variants else key

    def resolve(self, phrase: str) -> str:
        """Node id for a target phrase, matching ids first, then labels."""
        key = norm(phrase)
        nodes = self.g.nodes
        for nid in sorted(nodes):
            if norm(nid) == key and not nodes[nid].attributes.get("robot"):
                return nid
        for nid in sorted(nodes):
            if norm(nodes[nid].label) == key and not nodes[nid].attributes.get("robot"):
                return nid
        raise InfeasibleTaskError(f"no target {phrase!r} in the scene")

    def room(self, node_id: str) -> str:
        return self.g.room_of(node_id)

    def room_distance(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        pa, pb = self.g.node(a).position, self.g.node(b).position
        return math.dist(pa, pb)

    # ------------------------------------------------------------ the robots

    def holder(self, label: str) -> str | None:
        """The robot already carrying an object with this label, if any."""
        for m in self.g.query(labels=self._label_variants(norm(label))):
            parent = self.g.parent(m.id)
            if parent is not None and self.g.node(parent).attributes.get("robot"):
                return parent
        return None

    def candidates(self, skills: Iterable[str], rooms: Iterable[str], capacity: int = 0,
                   avoid: Iterable[str] = (), prefer: str | None = None) -> list[str]:
        """Eligible robots, best first.

        Never offline. A robot already holding the item comes first; then
        robots not yet loaded by this plan, idle before busy, highest
        battery, then id.
        """
        skills, rooms, avoid = set(skills), set(rooms), set(avoid)
        out = []
        for rid, state in self.inp.robot_states.items():
            if state.status == "offline":
                continue
            prof = self.inp.profiles.get(rid)
            have = set(self.inp.skill_catalog.get(rid, ()))
            domain = set(prof.motion_domain) if prof else set()
            cap = prof.capacity if prof else 0
            if skills <= have and rooms <= domain and cap >= capacity:
                out.append(rid)
        return sorted(out, key=lambda r: (r != prefer, r in avoid, self.load.get(r, 0),
                                          self.inp.robot_states[r].status != "idle",
                                          -self.inp.robot_states[r].battery, r))

    def pick(self, skills, rooms, capacity=1, avoid=(), why="", prefer=None) -> str:
        found = self.candidates(skills, rooms, capacity, avoid, prefer)
        if not found:
            raise InfeasibleTaskError(
                f"no available robot with {sorted(skills)} covering rooms {sorted(rooms)}"
                + (f" for {why}" if why else ""))
        return found[0]

    # ------------------------------------------------------------- subtasks

    def add(self, description: str, assignees: Iterable[str], goal: Mapping,
            template: str, skills: Iterable[str], prerequisites: Iterable[str] = (),
            **params) -> str:
        sid = f"{self.graph_id}/s{len(self.subtasks) + 1}"
        assignees = tuple(sorted(assignees))
        prerequisites = frozenset(prerequisites)
        depth = 1 + max((self.subtasks[p].depth for p in prerequisites), default=0)
        kind = "single" if len(assignees) == 1 else "collaboration"
        self.subtasks[sid] = Subtask(sid, description, depth, assignees, kind, prerequisites,
                                     dict(goal), template, dict(params), frozenset(skills))
        for r in assignees:
            self.load[r] = self.load.get(r, 0) + 1
        self.trace.append(f"{Subtask(sid, '', depth, assignees).label} {description}")
        return sid

    def search_hint(self, label: str) -> dict:
        room, node = self.locate(label)
        return {label: room} if node is None else {}

    def fetch_rooms(self, label: str) -> set[str]:
        return {self.locate(label)[0]}


# -------------------------------------------------------------- expanders


def _fetch_to(ctx: _Planning, item: str, target: str, prerequisites=(), avoid=()) -> str:
    label = ctx.label_of(item)
    rooms = ctx.fetch_rooms(label) | {ctx.room(target)}
    skills = set(FETCH_SKILLS | {"place"})
    if "openable" in ctx.g.node(target).affordances:
        skills.add("open_container")
    robot = ctx.pick(skills, rooms, 1, avoid, why=f"{label} -> {target}",
                     prefer=ctx.holder(label))
    return ctx.add(f"Search for the {label} and place it on the {ctx.g.node(target).label}",
                   [robot], goals.on(label, target), "fetch", skills, prerequisites,
                   items=[label], target=target, search=ctx.search_hint(label))


def expand_fetch(ctx: _Planning, tpl: TaskTemplate, slots: dict) -> None:
    items = split_items(slots.get("items", slots.get("item", "")))
    target = ctx.resolve(slots.get("target") or tpl.target or "")
    if not items:
        raise InfeasibleTaskError("no items named")
    used: list[str] = []
    for item in items:
        sid = _fetch_to(ctx, item, target, avoid=used)
        used.extend(ctx.subtasks[sid].assignees)


def _courier_delivery(ctx: _Planning, fetched: list[tuple[str, str, str]], target: str,
                      verb: str, prerequisites: list[str]) -> str:
    """Delivery of already-fetched items ``(label, robot, subtask)`` to ``target``."""
    target_room = ctx.room(target)
    labels = [label for label, _, _ in fetched]
    fetchers = sorted({robot for _, robot, _ in fetched})
    place_skills = {"navigate", "place"}
    if len(fetchers) == 1:
        robot = fetchers[0]
        prof = ctx.inp.profiles[robot]
        if target_room in prof.motion_domain:
            return ctx.add(f"{verb} {' and '.join(labels)} to the {ctx.g.node(target).label}",
                           [robot], goals.all_of(goals.on(l, target) for l in labels),
                           "deliver", place_skills, prerequisites, items=labels, target=target)

    collab_skills = place_skills | {"handover"}
    eligible = ctx.candidates(collab_skills, {target_room}, len(labels))
    # prefer a fetcher as courier so fewer items change hands
    ranked = [r for r in eligible if r in fetchers] + [r for r in eligible if r not in fetchers]
    for courier in ranked:
        cdomain = ctx.inp.profiles[courier].motion_domain
        rendezvous = {}
        for giver in fetchers:
            if giver == courier:
                continue
            common = sorted(set(ctx.inp.profiles[giver].motion_domain) & set(cdomain),
                            key=lambda room: (ctx.room_distance(room, target_room), room))
            if not common or "handover" not in ctx.inp.skill_catalog.get(giver, ()):
                break
            rendezvous[giver] = common[0]
        else:
            break
    else:
        raise InfeasibleTaskError(f"no courier can bring {labels} to {target}")

    roles = {}
    handovers = []
    for label, robot, _ in fetched:
        if robot != courier:
            handovers.append({"object": label, "giver": robot, "room": rendezvous[robot]})
            roles[robot] = goals.all_of(goals.held_by(l, courier) for l, r, _ in fetched
                                        if r == robot)
    goal = goals.all_of(goals.on(l, target) for l in labels)
    roles[courier] = goal
    return ctx.add(f"Hand {' and '.join(labels)} to {courier} and {verb.lower()} them to the "
                   f"{ctx.g.node(target).label}",
                   [courier, *roles.keys() - {courier}], goal, "deliver", collab_skills,
                   prerequisites, items=labels, target=target, courier=courier,
                   handovers=handovers, roles=roles)


def expand_deliver(ctx: _Planning, tpl: TaskTemplate, slots: dict) -> None:
    items = split_items(slots.get("items", ""))
    if not items:
        raise InfeasibleTaskError("no items named")
    target = ctx.resolve(slots.get("target") or tpl.target or "")
    fetched = []
    used: list[str] = []
    for item in items:
        label = ctx.label_of(item)
        robot = ctx.pick(FETCH_SKILLS, ctx.fetch_rooms(label), 1, used, why=label,
                         prefer=ctx.holder(label))
        used.append(robot)
        sid = ctx.add(f"Fetch the {label}", [robot], goals.held_by(label, robot), "fetch",
                      FETCH_SKILLS, items=[label], search=ctx.search_hint(label))
        fetched.append((label, robot, sid))
    _courier_delivery(ctx, fetched, target, "Deliver", [sid for _, _, sid in fetched])


def expand_prepare(ctx: _Planning, tpl: TaskTemplate, slots: dict) -> None:
    dish_key = norm(slots.get("dish", ""))
    recipes = {norm(k): v for k, v in tpl.recipes.items()}
    if dish_key not in recipes:
        raise InfeasibleTaskError(f"no recipe for {slots.get('dish')!r}")
    recipe = recipes[dish_key]
    target = ctx.resolve(slots.get("target") or tpl.target or "")
    steps: list[str] = []
    used: list[str] = []
    if "pour" in recipe:
        source = ctx.label_of(recipe["pour"]["source"])
        vessel = ctx.resolve(recipe["pour"]["into"])
        station = _station(ctx, vessel)
        skills = FETCH_SKILLS | {"pour", "place"}
        rooms = ctx.fetch_rooms(source) | {ctx.room(vessel)}
        robot = ctx.pick(skills, rooms, 1, why=f"pouring {source}")
        goal = goals.all_of([goals.attr(vessel, "filled", True, {"tool": "pour", "source": source}),
                             goals.on(source, station)])
        steps.append(ctx.add(f"Pour the {source} into the {ctx.g.node(vessel).label}", [robot],
                             goal, "prepare", skills, items=[source], target=vessel,
                             search=ctx.search_hint(source)))
        used.append(robot)
    else:
        vessel = ctx.resolve(recipe["assemble_on"])
        for item in recipe.get("items", ()):
            sid = _fetch_to(ctx, item, vessel, avoid=used)
            steps.append(sid)
            used.extend(ctx.subtasks[sid].assignees)
    vlabel = ctx.g.node(vessel).label
    rooms = {ctx.room(vessel), ctx.room(target)}
    skills = FETCH_SKILLS | {"place"}
    robot = ctx.pick(skills, rooms, 1, why=f"serving {vlabel}")
    ctx.add(f"Serve the {vlabel} at the {ctx.g.node(target).label}", [robot],
            goals.on(vlabel, target), "prepare", skills, steps, items=[vlabel], target=target)


def expand_pack(ctx: _Planning, tpl: TaskTemplate, slots: dict) -> None:
    items = split_items(slots.get("items", slots.get("item", "")))
    container = ctx.resolve(slots.get("container") or tpl.target or "")
    if not items:
        raise InfeasibleTaskError("no items named")
    if "openable" not in ctx.g.node(container).affordances:
        raise InfeasibleTaskError(f"{container} cannot be opened")
    croom = ctx.room(container)
    clabel = ctx.g.node(container).label
    fetchers = []
    used: list[str] = []
    for item in items:
        label = ctx.label_of(item)
        skills = FETCH_SKILLS | {"place"}
        robot = ctx.pick(skills, ctx.fetch_rooms(label) | {croom}, 1, used, why=label,
                         prefer=ctx.holder(label))
        used.append(robot)
        sid = ctx.add(f"Select the {label}", [robot], goals.held_by(label, robot), "pack",
                      FETCH_SKILLS, items=[label], search=ctx.search_hint(label))
        fetchers.append((label, robot, sid))
    opener = ctx.pick({"navigate", "open_container"}, {croom}, 0, used, why=f"opening {clabel}")
    opened = ctx.add(f"Open the {clabel}", [opener], goals.attr(container, "open", True),
                     "pack", {"navigate", "open_container"}, target=container)
    for label, robot, sid in fetchers:
        ctx.add(f"Place the {label} into the {clabel}", [robot], goals.on(label, container),
                "pack", {"navigate", "place"}, [sid, opened], items=[label], target=container)


def _station(ctx: _Planning, node_id: str) -> str:
    g = ctx.g
    cur = node_id
    while True:
        parent = g.parent(cur)
        if parent is None or g.node(parent).kind != "object":
            return cur
        cur = parent


_EXPANDERS = {"fetch": expand_fetch, "deliver": expand_deliver,
              "prepare": expand_prepare, "pack": expand_pack}


def graph_id_for(task) -> str:
    return f"g-{task.task_id}"


def rule_based_plan(inp: PlannerInput, templates: Iterable[TaskTemplate],
                    object_defaults: Mapping[str, str] | None = None,
                    graph_id: str | None = None) -> tuple[ReasoningTrace, SubtaskGraph]:
    """Plan ``inp.task`` with the first template whose keywords and pattern match."""
    templates = list(templates)
    for tpl in templates:
        slots = tpl.match(inp.task.instruction)
        if slots is not None:
            break
    else:
        raise UnmatchedTemplateError(f"no template matches {inp.task.instruction!r}")
    ctx = _Planning(inp, object_defaults or {}, graph_id or graph_id_for(inp.task))
    ctx.trace.append(f"template {tpl.name} ({tpl.kind}) with slots "
                     + ", ".join(f"{k}={v}" for k, v in sorted(slots.items())))
    _EXPANDERS[tpl.kind](ctx, tpl, slots)
    graph = SubtaskGraph(ctx.graph_id, dict(ctx.subtasks), inp.task)
    violations = validate_graph(graph, inp.robot_states, inp.skill_catalog)
    if violations:
        raise PlanValidationError(violations)
    return ReasoningTrace(tuple(ctx.trace)), graph


class RuleBasedPlanner:
    """Planner contract backed by :func:`rule_based_plan`."""

    def __init__(self, templates: Iterable[TaskTemplate],
                 object_defaults: Mapping[str, str] | None = None):
        self.templates = list(templates)
        self.object_defaults = dict(object_defaults or {})

    def plan(self, inp: PlannerInput, graph_id: str | None = None
             ) -> tuple[ReasoningTrace, SubtaskGraph]:
        return rule_based_plan(inp, self.templates, self.object_defaults, graph_id)
