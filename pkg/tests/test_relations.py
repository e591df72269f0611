import pytest

from anatomy_forge.errors import GraphParseError
from anatomy_forge.relations import (DEFAULT_NU_CONTACT, DEFAULT_TAU_HARD,
                                     DEFAULT_TAU_IN, RelationGraph, Weights,
                                     load_graph, serialize_graph)

BASIC = """\
class 1 lung
class 2 trachea
class 3 liver
containment trachea lung
adjacency 3 lung 25
exclusion liver trachea 0.2
weights 1 1 1 0.8
"""


def test_parse_names_ids_and_defaults():
    g = load_graph(BASIC, 4)
    assert g.n_classes == 4
    assert g.names == {1: "lung", 2: "trachea", 3: "liver"}
    kinds = [(e.kind, e.a, e.b, e.threshold) for e in g.edges]
    assert kinds == [
        ("containment", 2, 1, DEFAULT_TAU_IN),
        ("adjacency", 3, 1, 25.0),
        ("exclusion", 3, 2, 0.2),
    ]
    assert g.weights == Weights(1.0, 1.0, 1.0, 0.8)


def test_edge_defaults():
    g = load_graph("containment 1 2\nadjacency 1 2\nexclusion 1 2\n", 2)
    by_kind = {e.kind: e.threshold for e in g.edges}
    assert by_kind == {"containment": DEFAULT_TAU_IN,
                       "adjacency": DEFAULT_NU_CONTACT,
                       "exclusion": DEFAULT_TAU_HARD}
    assert g.weights == Weights()


def test_edges_for_is_directed_and_ordered():
    g = load_graph("containment 1 2\ncontainment 1 3\ncontainment 2 3\n", 3)
    assert [(e.a, e.b) for e in g.edges_for(1, "containment")] == [(1, 2), (1, 3)]
    assert g.edges_for(2, "containment")[0].b == 3
    assert g.edges_for(3, "containment") == []


def test_exclusion_partners_sees_both_sides():
    g = load_graph("exclusion 1 2 0.5\n", 2)
    assert [(e.threshold, p) for e, p in g.exclusion_partners(1)] == [(0.5, 2)]
    assert [(e.threshold, p) for e, p in g.exclusion_partners(2)] == [(0.5, 1)]
    assert g.exclusion_partners(1) != []
    assert g.edges_for(2, "exclusion") == []         # directed view stays one-sided


@pytest.mark.parametrize("text,lineno,needle", [
    ("class 1\n", 1, "class takes"),
    ("class x lung\n", 1, "not an integer"),
    ("class 9 lung\n", 1, "outside 1..4"),
    ("class 1 lung\nclass 1 liver\n", 2, "declared twice"),
    ("class 1 lung\nclass 2 lung\n", 2, "declared twice"),
    ("\nfoo 1 2\n", 2, "unknown directive"),
    ("containment 1\n", 1, "takes"),
    ("containment 1 2 0.3 9\n", 1, "takes"),
    ("containment stomach 2\n", 1, "unknown class"),
    ("containment 1 7\n", 1, "outside"),
    ("containment 1 1\n", 1, "itself"),
    ("containment 1 2 nope\n", 1, "non-numeric threshold"),
    ("containment 1 2 0\n", 1, r"\(0, 1\]"),
    ("containment 1 2 1.2\n", 1, r"\(0, 1\]"),
    ("exclusion 1 2 -0.1\n", 1, r"\(0, 1\]"),
    ("adjacency 1 2 0.5\n", 1, ">= 1"),
    ("containment 1 2\ncontainment 1 2 0.4\n", 2, "duplicate containment"),
    ("weights 1 1 1\n", 1, "4 values"),
    ("weights 1 1 1 x\n", 1, "non-numeric weight"),
    ("weights 1 1 -1 1\n", 1, "non-negative"),
    ("weights 1 1 1 1\nweights 1 1 1 1\n", 2, "duplicate weights"),
])
def test_parse_errors_carry_line_numbers(text, lineno, needle):
    with pytest.raises(GraphParseError, match=needle) as err:
        load_graph(text, 4)
    assert f"line {lineno}" in str(err.value)


def test_containment_cycle_detected_with_names():
    text = ("class 1 a\nclass 2 b\nclass 3 c\n"
            "containment 1 2\ncontainment 2 3\ncontainment 3 1\n")
    with pytest.raises(GraphParseError, match="cyclic containment") as err:
        load_graph(text, 3)
    msg = str(err.value)
    assert "->" in msg and "a" in msg


def test_adjacency_and_exclusion_may_cycle():
    g = load_graph("adjacency 1 2\nadjacency 2 1\nexclusion 1 2\n", 2)
    assert len(g.edges) == 3


def test_serialize_round_trip():
    g = load_graph(BASIC, 4)
    again = load_graph(serialize_graph(g), 4)
    assert again == g
    assert serialize_graph(again) == serialize_graph(g)


def test_comments_and_blank_lines_ignored():
    g = load_graph("# top\n\nclass 1 a   # inline\nclass 2 b\nexclusion 1 2 # x\n", 2)
    assert len(g.edges) == 1 and g.names[1] == "a"


def test_graph_needs_classes():
    with pytest.raises(GraphParseError):
        load_graph("", 0)
    empty = load_graph("", 3)
    assert isinstance(empty, RelationGraph)
    assert empty.edges == [] and empty.weights == Weights()
