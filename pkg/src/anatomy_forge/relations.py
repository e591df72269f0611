"""Relation graph: class names plus containment / adjacency / exclusion
edges with per-edge thresholds, parsed from a small line-oriented config.

Format, one directive per line ('#' starts a comment):

    class <id> <name>
    containment <child> <parent> [ratio_threshold]
    adjacency <a> <b> [contact_voxels]
    exclusion <a> <b> [iou_threshold]
    weights <anchor> <overlap> <containment> <adjacency>

Classes may be referenced by declared name or by numeric id. Omitted
thresholds take the defaults below. Containment and adjacency edges are
directed (the first class is the one being scored); exclusion is checked
symmetrically at scoring time regardless of declaration direction.
"""

from dataclasses import dataclass, field

from .errors import GraphParseError

DEFAULT_TAU_IN = 0.30
DEFAULT_NU_CONTACT = 20.0
DEFAULT_TAU_HARD = 0.35

EDGE_KINDS = ("containment", "adjacency", "exclusion")


@dataclass(frozen=True)
class Weights:
    """Score-term magnitudes; the signs live in the scoring formulas."""

    anchor: float = 1.0
    overlap: float = 1.0
    containment: float = 1.0
    adjacency: float = 0.8


DEFAULT_WEIGHTS = Weights()


@dataclass(frozen=True)
class RelationEdge:
    """kind-specific threshold: containment ratio in (0, 1], adjacency
    minimum contact voxel count >= 1, exclusion IoU ceiling in (0, 1]."""

    kind: str
    a: int
    b: int
    threshold: float


@dataclass
class RelationGraph:
    n_classes: int
    names: dict[int, str] = field(default_factory=dict)
    edges: list[RelationEdge] = field(default_factory=list)
    weights: Weights = DEFAULT_WEIGHTS

    def edges_for(self, class_id: int, kind: str) -> list[RelationEdge]:
        """Directed edges of one kind whose first endpoint is class_id,
        in declaration order."""
        if kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {kind!r}")
        return [e for e in self.edges if e.kind == kind and e.a == class_id]

    def exclusion_partners(self, class_id: int) -> list[tuple[RelationEdge, int]]:
        """Exclusion edges touching class_id from either side, with the
        opposite endpoint, in declaration order."""
        out = []
        for e in self.edges:
            if e.kind == "exclusion" and class_id in (e.a, e.b):
                out.append((e, e.b if e.a == class_id else e.a))
        return out


_DEFAULT_THRESHOLDS = {
    "containment": DEFAULT_TAU_IN,
    "adjacency": DEFAULT_NU_CONTACT,
    "exclusion": DEFAULT_TAU_HARD,
}


def load_graph(text: str, n_classes: int) -> RelationGraph:
    """Parse a relation-graph config; every rejection carries its line number."""
    if n_classes < 1:
        raise GraphParseError("graph needs at least one class")
    lines = text.splitlines()

    names: dict[int, str] = {}
    name_to_id: dict[str, int] = {}
    for lineno, raw_line in enumerate(lines, start=1):
        tokens = raw_line.split("#", 1)[0].split()
        if not tokens or tokens[0] != "class":
            continue
        if len(tokens) != 3:
            raise GraphParseError(f"line {lineno}: class takes <id> <name>")
        try:
            cid = int(tokens[1])
        except ValueError:
            raise GraphParseError(f"line {lineno}: class id {tokens[1]!r} is not an integer")
        name = tokens[2]
        if not 1 <= cid <= n_classes:
            raise GraphParseError(f"line {lineno}: class id {cid} outside 1..{n_classes}")
        if cid in names:
            raise GraphParseError(f"line {lineno}: class id {cid} declared twice")
        if name in name_to_id:
            raise GraphParseError(f"line {lineno}: class name {name!r} declared twice")
        names[cid] = name
        name_to_id[name] = cid

    def resolve(token: str, lineno: int) -> int:
        if token in name_to_id:
            return name_to_id[token]
        try:
            cid = int(token)
        except ValueError:
            raise GraphParseError(f"line {lineno}: unknown class {token!r}")
        if not 1 <= cid <= n_classes:
            raise GraphParseError(f"line {lineno}: class id {cid} outside 1..{n_classes}")
        return cid

    edges: list[RelationEdge] = []
    seen: set[tuple[str, int, int]] = set()
    weights: Weights | None = None
    for lineno, raw_line in enumerate(lines, start=1):
        tokens = raw_line.split("#", 1)[0].split()
        if not tokens or tokens[0] == "class":
            continue
        directive = tokens[0]
        if directive == "weights":
            if weights is not None:
                raise GraphParseError(f"line {lineno}: duplicate weights line")
            if len(tokens) != 5:
                raise GraphParseError(f"line {lineno}: weights takes 4 values")
            try:
                vals = [float(t) for t in tokens[1:]]
            except ValueError:
                raise GraphParseError(f"line {lineno}: non-numeric weight")
            if any(v < 0 for v in vals):
                raise GraphParseError(f"line {lineno}: weights must be non-negative")
            weights = Weights(*vals)
            continue
        if directive not in EDGE_KINDS:
            raise GraphParseError(f"line {lineno}: unknown directive {directive!r}")
        if len(tokens) not in (3, 4):
            raise GraphParseError(f"line {lineno}: {directive} takes <a> <b> [threshold]")
        a = resolve(tokens[1], lineno)
        b = resolve(tokens[2], lineno)
        if a == b:
            raise GraphParseError(f"line {lineno}: {directive} edge from a class to itself")
        if len(tokens) == 4:
            try:
                threshold = float(tokens[3])
            except ValueError:
                raise GraphParseError(f"line {lineno}: non-numeric threshold {tokens[3]!r}")
        else:
            threshold = _DEFAULT_THRESHOLDS[directive]
        if directive in ("containment", "exclusion") and not 0.0 < threshold <= 1.0:
            raise GraphParseError(f"line {lineno}: {directive} threshold must be in (0, 1]")
        if directive == "adjacency" and threshold < 1.0:
            raise GraphParseError(f"line {lineno}: adjacency contact count must be >= 1")
        key = (directive, a, b)
        if key in seen:
            raise GraphParseError(f"line {lineno}: duplicate {directive} edge {a} -> {b}")
        seen.add(key)
        edges.append(RelationEdge(directive, a, b, threshold))

    _check_containment_acyclic(edges, names)
    return RelationGraph(n_classes, names, edges, weights or DEFAULT_WEIGHTS)


def _check_containment_acyclic(edges, names):
    children: dict[int, list[int]] = {}
    for e in edges:
        if e.kind == "containment":
            children.setdefault(e.a, []).append(e.b)
    state: dict[int, int] = {}  # 1 in progress, 2 done

    def visit(node, trail):
        state[node] = 1
        for nxt in children.get(node, []):
            if state.get(nxt) == 1:
                cycle = trail + [nxt]
                pretty = " -> ".join(names.get(c, str(c)) for c in cycle)
                raise GraphParseError(f"cyclic containment: {pretty}")
            if state.get(nxt) != 2:
                visit(nxt, trail + [nxt])
        state[node] = 2

    for node in list(children):
        if state.get(node) != 2:
            visit(node, [node])


def serialize_graph(graph: RelationGraph) -> str:
    """Emit config text that load_graph parses back to an equal graph."""
    lines = [f"# anatomy-forge relation graph ({graph.n_classes} classes)"]
    for cid in sorted(graph.names):
        lines.append(f"class {cid} {graph.names[cid]}")
    for e in graph.edges:
        lines.append(f"{e.kind} {e.a} {e.b} {e.threshold:.17g}")
    w = graph.weights
    lines.append(f"weights {w.anchor:.17g} {w.overlap:.17g} "
                 f"{w.containment:.17g} {w.adjacency:.17g}")
    return "\n".join(lines) + "\n"
