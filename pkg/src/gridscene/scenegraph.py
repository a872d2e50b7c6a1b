"""Scene graphs over grid layouts.

A scene graph is a set of labeled nodes plus directed spatial relations
(left_of, right_of, above, below).  Relations constrain strict ordering
within a shared row or column and do NOT require adjacency: left_of(a, b)
holds whenever a and b sit in the same row with a strictly left of b, any
number of cells apart.

`solve_layouts` enumerates every injective node-to-cell assignment and
keeps those satisfying all edges; it is exponential in the node count and
meant for the small grids this package targets.  `graph_from_layout` goes
the other way, emitting only adjacent-pair relations, which is exactly how
the dataset builder annotates its grids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import permutations

RELATIONS = ("left_of", "right_of", "above", "below")


class SceneGraphError(ValueError):
    """Malformed scene-graph document or misuse of a layout operation."""


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple[tuple[int, int], ...]  # (node_id, label) in document order
    edges: tuple[tuple[int, str, int], ...]  # (source_id, relation, target_id)
    label_names: tuple[tuple[int, str], ...] = ()  # optional id -> display name

    def __post_init__(self):
        ids = [i for i, _ in self.nodes]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise SceneGraphError(f"duplicate node ids: {dupes}")
        known = set(ids)
        for src, rel, dst in self.edges:
            if rel not in RELATIONS:
                raise SceneGraphError(f"unknown relation {rel!r}; expected one of {RELATIONS}")
            if src not in known or dst not in known:
                raise SceneGraphError(f"edge ({src}, {rel}, {dst}) references a missing node")
            if src == dst:
                raise SceneGraphError(f"edge ({src}, {rel}, {dst}) relates a node to itself")
        for node_id, _ in self.label_names:
            if node_id not in known:
                raise SceneGraphError(f"label_name for missing node {node_id}")

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def label_of(self, node_id: int) -> int:
        for nid, label in self.nodes:
            if nid == node_id:
                return label
        raise SceneGraphError(f"no node {node_id}")

    def canonical(self) -> "SceneGraph":
        """Nodes sorted by id, edges sorted lexicographically."""
        return SceneGraph(
            nodes=tuple(sorted(self.nodes)),
            edges=tuple(sorted(self.edges)),
            label_names=tuple(sorted(self.label_names)),
        )


def parse_scene_graph(text: str) -> SceneGraph:
    """Parse the JSON scene-graph format.

    Expected shape: {"nodes": [{"id": 0, "label": 3, "label_name": "3"?}, ...],
    "edges": [[src, "left_of", dst], ...]}.  Syntax errors report line and
    column; semantic errors name the offending node or edge.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneGraphError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(doc, dict):
        raise SceneGraphError("top level must be an object with 'nodes' and 'edges'")
    for key in ("nodes", "edges"):
        if key not in doc or not isinstance(doc[key], list):
            raise SceneGraphError(f"missing or non-array {key!r} field")

    nodes = []
    names = []
    for i, item in enumerate(doc["nodes"]):
        if not isinstance(item, dict):
            raise SceneGraphError(f"nodes[{i}] must be an object")
        if not isinstance(item.get("id"), int) or not isinstance(item.get("label"), int):
            raise SceneGraphError(f"nodes[{i}] needs integer 'id' and 'label'")
        nodes.append((item["id"], item["label"]))
        if "label_name" in item:
            if not isinstance(item["label_name"], str):
                raise SceneGraphError(f"nodes[{i}].label_name must be a string")
            names.append((item["id"], item["label_name"]))

    edges = []
    for i, item in enumerate(doc["edges"]):
        ok = (
            isinstance(item, list)
            and len(item) == 3
            and isinstance(item[0], int)
            and isinstance(item[1], str)
            and isinstance(item[2], int)
        )
        if not ok:
            raise SceneGraphError(f"edges[{i}] must be [source_id, relation, target_id]")
        edges.append((item[0], item[1], item[2]))

    return SceneGraph(tuple(nodes), tuple(edges), tuple(names))


def serialize_scene_graph(graph: SceneGraph) -> str:
    """Canonical JSON: nodes sorted by id, edges sorted, compact separators."""
    g = graph.canonical()
    names = dict(g.label_names)
    nodes = []
    for nid, label in g.nodes:
        node: dict = {"id": nid, "label": label}
        if nid in names:
            node["label_name"] = names[nid]
        nodes.append(node)
    doc = {"nodes": nodes, "edges": [list(e) for e in g.edges]}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class GridLayout:
    rows: int
    cols: int
    cells: tuple[tuple[int, int, int], ...]  # (node_id, row, col), sorted by id

    def __post_init__(self):
        seen_ids = set()
        seen_cells = set()
        for node_id, r, c in self.cells:
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise SceneGraphError(f"cell ({r}, {c}) outside {self.rows}x{self.cols} grid")
            if node_id in seen_ids:
                raise SceneGraphError(f"node {node_id} placed twice")
            if (r, c) in seen_cells:
                raise SceneGraphError(f"cell ({r}, {c}) occupied twice")
            seen_ids.add(node_id)
            seen_cells.add((r, c))
        object.__setattr__(self, "cells", tuple(sorted(self.cells)))

    def positions(self) -> dict[int, tuple[int, int]]:
        return {nid: (r, c) for nid, r, c in self.cells}


def satisfies(layout: GridLayout, graph: SceneGraph) -> tuple[bool, list]:
    """Check every edge of `graph` against `layout`.

    Returns (all_satisfied, violated_edges).  Every graph node must be
    placed in the layout.
    """
    pos = layout.positions()
    missing = [nid for nid, _ in graph.nodes if nid not in pos]
    if missing:
        raise SceneGraphError(f"layout does not place nodes {missing}")
    violated = []
    for src, rel, dst in graph.edges:
        (sr, sc), (dr, dc) = pos[src], pos[dst]
        if rel == "left_of":
            ok = sr == dr and sc < dc
        elif rel == "right_of":
            ok = sr == dr and sc > dc
        elif rel == "above":
            ok = sc == dc and sr < dr
        else:  # below
            ok = sc == dc and sr > dr
        if not ok:
            violated.append((src, rel, dst))
    return not violated, violated


def solve_layouts(graph: SceneGraph, rows: int, cols: int) -> list[GridLayout]:
    """All injective placements of the graph's nodes that satisfy every edge.

    Exhaustive over P(rows*cols, n) permutations; fine for the small grids
    this package works with, exponential beyond them.
    """
    if graph.node_count > rows * cols:
        raise SceneGraphError(
            f"{graph.node_count} nodes cannot be placed on a {rows}x{cols} grid"
        )
    node_ids = [nid for nid, _ in graph.nodes]
    all_cells = [(r, c) for r in range(rows) for c in range(cols)]
    found = []
    for combo in permutations(all_cells, len(node_ids)):
        layout = GridLayout(rows, cols, tuple((nid, r, c) for nid, (r, c) in zip(node_ids, combo)))
        ok, _ = satisfies(layout, graph)
        if ok:
            found.append(layout)
    return found


def graph_from_layout(
    layout: GridLayout, labels: dict[int, int], label_names: dict[int, str] | None = None
) -> SceneGraph:
    """Scene graph with one edge per horizontally/vertically adjacent pair.

    Emits (a, left_of, b) for a immediately left of b and (a, above, b) for
    a immediately above b; the redundant mirror relations are omitted.
    """
    pos = layout.positions()
    missing = [nid for nid in pos if nid not in labels]
    if missing:
        raise SceneGraphError(f"no labels for nodes {sorted(missing)}")
    by_cell = {rc: nid for nid, rc in pos.items()}
    edges = []
    for (r, c), nid in by_cell.items():
        right = by_cell.get((r, c + 1))
        if right is not None:
            edges.append((nid, "left_of", right))
        under = by_cell.get((r + 1, c))
        if under is not None:
            edges.append((nid, "above", under))
    nodes = tuple(sorted((nid, labels[nid]) for nid in pos))
    names = tuple(sorted((label_names or {}).items())) if label_names else ()
    names = tuple((nid, name) for nid, name in names if nid in pos)
    return SceneGraph(nodes, tuple(sorted(edges)), names)
