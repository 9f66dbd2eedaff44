"""Instance reduction for the line-ordering problem.

Shrinks a line graph without changing the optimal objective, then breaks
the result into independently solvable components:

* chain contraction: a degree-2 node whose two incident edges carry the
  same line set hosts no unavoidable events, so the node is dropped and
  the edges merge into one.
* bundle collapse: lines that share an identical carrier edge set admit
  an optimal solution where they run adjacent in one fixed order, so the
  group becomes a single line weighted by its member count.
* terminus edge removal: an edge whose lines all end at both endpoints
  cannot influence any event, so its ordering is arbitrary.
* edge cut: a single-line edge transmits no ordering information between
  its endpoints and is cut into two dangling halves.
* terminus detach: an edge whose lines all end at one endpoint transmits
  no ordering information through that endpoint and is re-pointed to a
  fresh dangling node there.

Every change is recorded as a reversible action in a ReductionMap, and
unfold() replays the record backwards to translate per-component
orderings into an ordering of the original graph.  Chain contraction is
only sound when events moved off the deleted node cannot get more
expensive elsewhere; nodes whose weights violate that are left alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteSolution, MalformedOrdering, SchemaViolation
from .geometry import Polyline
from .gtfs import TransitLine
from .ilp_model import Ordering, WeightPolicy
from .line_graph import LGEdge, LGNode, LineGraph

__all__ = [
    "BundleCollapse",
    "ChainContraction",
    "EdgeCut",
    "ReductionMap",
    "TerminusDetach",
    "TerminusEdgeRemoval",
    "prune",
    "split_components",
    "unfold",
]


# ── reversible actions ───────────────────────────────────────────────


@dataclass(frozen=True)
class ChainContraction:
    """A degree-2 node was removed and its two edges merged.

    The merged edge runs from edge_a's far endpoint to edge_b's far
    endpoint.  reversed_a / reversed_b say whether the merged ordering
    must be flipped to match the canonical direction of the original
    edge."""

    node: str
    edge_a: str
    edge_b: str
    merged_edge: str
    reversed_a: bool
    reversed_b: bool

    def to_dict(self) -> dict:
        return {
            "kind": "chain_contraction",
            "node": self.node,
            "edge_a": self.edge_a,
            "edge_b": self.edge_b,
            "merged_edge": self.merged_edge,
            "reversed_a": self.reversed_a,
            "reversed_b": self.reversed_b,
        }


@dataclass(frozen=True)
class BundleCollapse:
    """Lines with identical carrier edges were replaced by one line.

    members is the recorded expansion order (lexicographic).  reversal
    maps each carrier edge to True when the block must be expanded in
    reverse there to stay geometrically consistent with the carriers'
    canonical directions."""

    members: tuple[str, ...]
    collapsed: str
    reversal: tuple[tuple[str, bool], ...]

    def to_dict(self) -> dict:
        return {
            "kind": "bundle_collapse",
            "members": list(self.members),
            "collapsed": self.collapsed,
            "reversal": {eid: flag for eid, flag in self.reversal},
        }


@dataclass(frozen=True)
class TerminusEdgeRemoval:
    """An edge whose lines all terminate at both endpoints was removed."""

    edge: str
    lines: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "kind": "terminus_edge_removal",
            "edge": self.edge,
            "lines": list(self.lines),
        }


@dataclass(frozen=True)
class EdgeCut:
    """A single-line edge was cut into two dangling halves.

    half_a keeps the original a endpoint, half_b the original b
    endpoint; each ends at its own fresh node at the cut point."""

    edge: str
    line: str
    half_a: str
    half_b: str

    def to_dict(self) -> dict:
        return {
            "kind": "edge_cut",
            "edge": self.edge,
            "line": self.line,
            "half_a": self.half_a,
            "half_b": self.half_b,
        }


@dataclass(frozen=True)
class TerminusDetach:
    """An edge was re-pointed from node to a fresh dangling node.

    The edge keeps its id, lines, and path, so solved orderings carry
    over without translation."""

    edge: str
    node: str
    fresh_node: str

    def to_dict(self) -> dict:
        return {
            "kind": "terminus_detach",
            "edge": self.edge,
            "node": self.node,
            "fresh_node": self.fresh_node,
        }


_Action = (
    ChainContraction
    | BundleCollapse
    | TerminusEdgeRemoval
    | EdgeCut
    | TerminusDetach
)


@dataclass
class ReductionMap:
    """Ordered record of reductions, replayable in reverse by unfold()."""

    actions: list[_Action] = field(default_factory=list)

    def record(self, action: _Action) -> None:
        self.actions.append(action)

    def to_dict(self) -> dict:
        return {"actions": [a.to_dict() for a in self.actions]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


class _IdMaker:
    """Fresh ids with a fixed prefix, skipping anything already taken."""

    def __init__(self, prefix: str, taken: set[str]) -> None:
        self.prefix = prefix
        self.taken = taken
        self.n = 0

    def __call__(self) -> str:
        while f"{self.prefix}{self.n}" in self.taken:
            self.n += 1
        out = f"{self.prefix}{self.n}"
        self.taken.add(out)
        return out


# ── pruning ──────────────────────────────────────────────────────────


def _terminates(g: LineGraph, line: str, node_id: str) -> bool:
    """True when node_id is an endpoint of line's travel (one carrier)."""
    count = 0
    for eid in g.incident(node_id):
        if line in g.edges[eid].lines:
            count += 1
    return count == 1


def _contract_chains(
    nodes: dict[str, LGNode],
    edges: dict[str, LGEdge],
    lines: dict[str, TransitLine],
    weights: WeightPolicy,
    new_edge_id: _IdMaker,
    rmap: ReductionMap,
) -> bool:
    """Merge edge pairs across degree-2 nodes with equal line sets.

    Skips nodes where the move could raise the objective (penalty below
    the global maximum a displaced event might land on), nodes whose
    contraction would create a self-loop, and nodes missing from the
    weight table."""
    max_split = weights.max_split_cross()
    max_sep = weights.max_separation()
    did = False
    while True:
        cur = LineGraph(nodes, edges, lines)
        pick = None
        for v in sorted(nodes):
            if cur.degree(v) != 2:
                continue
            ea_id, eb_id = sorted(cur.incident(v))
            ea, eb = edges[ea_id], edges[eb_id]
            if ea.lines != eb.lines:
                continue
            u, w = ea.other(v), eb.other(v)
            if u == w:
                continue
            try:
                nw = weights.for_node(v)
            except KeyError:
                continue
            if nw.same_cross < max_split or nw.separation < max_sep:
                continue
            pick = (v, ea_id, eb_id, u, w)
            break
        if pick is None:
            return did
        v, ea_id, eb_id, u, w = pick
        ea, eb = edges.pop(ea_id), edges.pop(eb_id)
        nodes.pop(v)
        pa = ea.path.pts if ea.b == v else ea.path.reversed().pts
        pb = eb.path.pts if eb.a == v else eb.path.reversed().pts
        mid = new_edge_id()
        edges[mid] = LGEdge(
            id=mid, a=u, b=w, lines=ea.lines, path=Polyline(np.vstack([pa, pb]))
        )
        rmap.record(
            ChainContraction(
                node=v,
                edge_a=ea_id,
                edge_b=eb_id,
                merged_edge=mid,
                reversed_a=ea.b != v,
                reversed_b=eb.a != v,
            )
        )
        did = True


def _orientation_flags(g: LineGraph, carrier: tuple[str, ...]) -> dict[str, bool]:
    """Expansion-reversal flag per carrier edge of one bundle.

    Walking a continuation from edge e1 into e2 at node n preserves the
    physical strand order exactly when the arrival indicators of the two
    edges differ, which fixes e2's flag from e1's by parity.  Around a
    carrier cycle each edge contributes each of its endpoints once, so
    the parities always close up and the seed choice per stretch (False
    at the smallest edge id) is free."""
    carrier_set = set(carrier)
    adj: dict[str, list[tuple[str, str]]] = {eid: [] for eid in carrier}
    seen_nodes: set[str] = set()
    for eid in carrier:
        for nid in (g.edges[eid].a, g.edges[eid].b):
            if nid in seen_nodes:
                continue
            seen_nodes.add(nid)
            inc = [x for x in g.incident(nid) if x in carrier_set]
            if len(inc) == 2:
                adj[inc[0]].append((inc[1], nid))
                adj[inc[1]].append((inc[0], nid))
    flags: dict[str, bool] = {}
    for seed in carrier:
        if seed in flags:
            continue
        flags[seed] = False
        stack = [seed]
        while stack:
            e1 = stack.pop()
            for e2, nid in adj[e1]:
                into1 = 1 if g.edges[e1].b == nid else 0
                into2 = 1 if g.edges[e2].b == nid else 0
                f2 = (1 + into1 + into2 + int(flags[e1])) % 2 == 1
                if e2 in flags:
                    if flags[e2] != f2:
                        raise SchemaViolation(
                            f"inconsistent bundle orientation at node {nid!r}"
                        )
                else:
                    flags[e2] = f2
                    stack.append(e2)
    return flags


def _collapse_bundles(
    nodes: dict[str, LGNode],
    edges: dict[str, LGEdge],
    lines: dict[str, TransitLine],
    weight: dict[str, int],
    rmap: ReductionMap,
) -> bool:
    """Replace every group of lines with identical carriers by one line."""
    carriers: dict[str, list[str]] = {lid: [] for lid in lines}
    for eid in sorted(edges):
        for lid in edges[eid].lines:
            carriers[lid].append(eid)
    groups: dict[tuple[str, ...], list[str]] = {}
    for lid, ce in carriers.items():
        if ce:
            groups.setdefault(tuple(ce), []).append(lid)
    cur = LineGraph(nodes, edges, lines)
    did = False
    for carrier, group in sorted(groups.items()):
        if len(group) < 2:
            continue
        members = tuple(sorted(group))
        cid = "+".join(members)
        while cid in lines:
            cid += "_"
        flags = _orientation_flags(cur, carrier)
        label = "+".join(lines[m].label for m in members)
        color = lines[members[0]].color
        total = sum(weight.get(m, 1) for m in members)
        member_set = set(members)
        for m in members:
            lines.pop(m)
            weight.pop(m, None)
        lines[cid] = TransitLine(id=cid, label=label, color=color)
        weight[cid] = total
        for eid in carrier:
            e = edges[eid]
            kept = [lid for lid in e.lines if lid not in member_set] + [cid]
            edges[eid] = LGEdge(
                id=eid, a=e.a, b=e.b, lines=tuple(sorted(kept)), path=e.path
            )
        rmap.record(
            BundleCollapse(
                members=members,
                collapsed=cid,
                reversal=tuple((eid, flags[eid]) for eid in sorted(flags)),
            )
        )
        did = True
    return did


def _drop_terminus_edges(
    nodes: dict[str, LGNode],
    edges: dict[str, LGEdge],
    lines: dict[str, TransitLine],
    rmap: ReductionMap,
) -> bool:
    """Remove edges whose lines all terminate at both endpoints.

    Candidates never share a line with another incident edge, so one
    sweep over a snapshot is safe."""
    cur = LineGraph(nodes, edges, lines)
    doomed = []
    for eid in sorted(edges):
        e = edges[eid]
        if all(
            _terminates(cur, lid, e.a) and _terminates(cur, lid, e.b)
            for lid in e.lines
        ):
            doomed.append(eid)
    for eid in doomed:
        rmap.record(TerminusEdgeRemoval(edge=eid, lines=edges[eid].lines))
        edges.pop(eid)
    return bool(doomed)


def prune(
    g: LineGraph, weights: WeightPolicy, collapse_bundles: bool = True
) -> tuple[LineGraph, ReductionMap]:
    """Reduce g to its ordering-relevant core.

    Applies chain contraction, bundle collapse, and terminus edge
    removal to a fixed point.  collapse_bundles=False keeps every line
    distinct, which objectives that price separation events need: a
    collapsed block hides which member sits at the block boundary, so
    adjacency with outside lines would be priced wrong."""
    g.validate()
    nodes = dict(g.nodes)
    edges = dict(g.edges)
    lines = dict(g.lines)
    weight = dict(g.line_weight)
    rmap = ReductionMap()
    new_edge_id = _IdMaker("m", set(edges))
    changed = True
    while changed:
        changed = _contract_chains(nodes, edges, lines, weights, new_edge_id, rmap)
        if collapse_bundles:
            changed = _collapse_bundles(nodes, edges, lines, weight, rmap) or changed
        changed = _drop_terminus_edges(nodes, edges, lines, rmap) or changed
    return LineGraph(nodes, edges, lines, weight), rmap


# ── splitting ────────────────────────────────────────────────────────


def split_components(
    core: LineGraph, reduction: ReductionMap | None = None
) -> list[LineGraph]:
    """Split a pruned graph into ordering-relevant connected components.

    Single-line edges are cut into two dangling halves at their
    midpoint, and edges whose lines all terminate at a node of degree
    above one are re-pointed to a fresh dangling node there.  Cut and
    detach actions are appended to reduction when given; unfold() needs
    them to reassemble a full ordering.  Components come back sorted by
    their smallest edge id, with node and line tables restricted to what
    each component touches."""
    nodes = dict(core.nodes)
    edges = dict(core.edges)
    actions: list[_Action] = []
    new_edge_id = _IdMaker("c", set(edges))
    new_node_id = _IdMaker("q", set(nodes))

    for eid in sorted(core.edges):
        e = edges[eid]
        if len(e.lines) != 1:
            continue
        mid = e.path.param_point(0.5)
        na, nb = new_node_id(), new_node_id()
        nodes[na] = LGNode(id=na, kind="aux", x=float(mid[0]), y=float(mid[1]))
        nodes[nb] = LGNode(id=nb, kind="aux", x=float(mid[0]), y=float(mid[1]))
        ha, hb = new_edge_id(), new_edge_id()
        edges.pop(eid)
        edges[ha] = LGEdge(id=ha, a=e.a, b=na, lines=e.lines, path=e.path.sub(0.0, 0.5))
        edges[hb] = LGEdge(id=hb, a=nb, b=e.b, lines=e.lines, path=e.path.sub(0.5, 1.0))
        actions.append(EdgeCut(edge=eid, line=e.lines[0], half_a=ha, half_b=hb))

    changed = True
    while changed:
        changed = False
        cur = LineGraph(nodes, edges, core.lines)
        for eid in sorted(edges):
            e = edges[eid]
            for v in (e.a, e.b):
                if cur.degree(v) <= 1:
                    continue
                if not all(_terminates(cur, lid, v) for lid in e.lines):
                    continue
                fresh = new_node_id()
                old = nodes[v]
                nodes[fresh] = LGNode(id=fresh, kind="aux", x=old.x, y=old.y)
                if v == e.a:
                    edges[eid] = LGEdge(
                        id=eid, a=fresh, b=e.b, lines=e.lines, path=e.path
                    )
                else:
                    edges[eid] = LGEdge(
                        id=eid, a=e.a, b=fresh, lines=e.lines, path=e.path
                    )
                actions.append(TerminusDetach(edge=eid, node=v, fresh_node=fresh))
                changed = True
                break
            if changed:
                break

    fin = LineGraph(nodes, edges, core.lines, core.line_weight)
    comps: list[LineGraph] = []
    seen: set[str] = set()
    for start in sorted(nodes):
        if start in seen or fin.degree(start) == 0:
            continue
        comp_nodes = {start}
        comp_edges: set[str] = set()
        stack = [start]
        while stack:
            nid = stack.pop()
            for eid in fin.incident(nid):
                comp_edges.add(eid)
                other = edges[eid].other(nid)
                if other not in comp_nodes:
                    comp_nodes.add(other)
                    stack.append(other)
        seen |= comp_nodes
        comp_lines = sorted({lid for eid in comp_edges for lid in edges[eid].lines})
        comps.append(
            LineGraph(
                {nid: nodes[nid] for nid in sorted(comp_nodes)},
                {eid: edges[eid] for eid in sorted(comp_edges)},
                {lid: core.lines[lid] for lid in comp_lines},
                {
                    lid: core.line_weight[lid]
                    for lid in comp_lines
                    if lid in core.line_weight
                },
            )
        )
    comps.sort(key=lambda c: min(c.edges))
    if reduction is not None:
        for action in actions:
            reduction.record(action)
    return comps


# ── unfolding ────────────────────────────────────────────────────────


def unfold(
    component_orderings: list[Ordering], reduction: ReductionMap, g: LineGraph
) -> Ordering:
    """Translate per-component orderings back to the original graph.

    Replays the recorded actions newest first: cut halves recombine,
    detached edges keep their solved ordering, removed edges get their
    lines in lexicographic order, collapsed lines expand in the recorded
    member order (reversed where the carrier runs counter to the
    propagation seed), and merged chain edges hand their sequence to
    both original edges with the recorded direction fixups.  Raises
    IncompleteSolution when an edge of g ends up without an ordering."""
    merged: dict[str, tuple[str, ...]] = {}
    for ordering in component_orderings:
        for eid in ordering.edges():
            if eid in merged:
                raise MalformedOrdering(f"edge {eid!r} is ordered by two components")
            merged[eid] = ordering.lines_at(eid)

    for action in reversed(reduction.actions):
        if isinstance(action, EdgeCut):
            for half in (action.half_a, action.half_b):
                if half not in merged:
                    raise IncompleteSolution(
                        f"no ordering for cut half {half!r} of edge {action.edge!r}"
                    )
                merged.pop(half)
            merged[action.edge] = (action.line,)
        elif isinstance(action, TerminusDetach):
            if action.edge not in merged:
                raise IncompleteSolution(
                    f"no ordering for detached edge {action.edge!r}"
                )
        elif isinstance(action, TerminusEdgeRemoval):
            merged[action.edge] = tuple(sorted(action.lines))
        elif isinstance(action, BundleCollapse):
            for eid, flipped in action.reversal:
                seq = merged.get(eid)
                if seq is None:
                    raise IncompleteSolution(
                        f"no ordering for bundle carrier {eid!r}"
                    )
                if action.collapsed not in seq:
                    raise MalformedOrdering(
                        f"carrier {eid!r} lost collapsed line {action.collapsed!r}"
                    )
                i = seq.index(action.collapsed)
                block = tuple(reversed(action.members)) if flipped else action.members
                merged[eid] = seq[:i] + block + seq[i + 1 :]
        elif isinstance(action, ChainContraction):
            seq = merged.pop(action.merged_edge, None)
            if seq is None:
                raise IncompleteSolution(
                    f"no ordering for merged edge {action.merged_edge!r}"
                )
            merged[action.edge_a] = (
                tuple(reversed(seq)) if action.reversed_a else seq
            )
            merged[action.edge_b] = (
                tuple(reversed(seq)) if action.reversed_b else seq
            )
        else:
            raise SchemaViolation(
                f"unknown reduction action {type(action).__name__}"
            )

    missing = sorted(set(g.edges) - set(merged))
    if missing:
        raise IncompleteSolution(f"no ordering for edges {missing!r}")
    out = Ordering({eid: merged[eid] for eid in g.edges})
    out.validate_for(g)
    return out
