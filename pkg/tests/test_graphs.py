import itertools
import tempfile
import unittest
from pathlib import Path

from hypothesis import given, settings
from hypothesis import strategies as st

from cf_parity.errors import InputError, ModelError
from cf_parity.graphs import (
    Admg,
    ancestors,
    d_separated,
    d_separated_by_paths,
    implies_dp,
    latent_projection,
    load_graph,
    parse_graph,
    reference_graph,
    topological_order,
)

EDGE_KINDS = ("none", "directed", "bidirected", "both")


def build_graph(n, kinds):
    """Nodes V0..V{n-1}; directed edges only point forward, so the graph is acyclic."""
    nodes = tuple(f"V{i}" for i in range(n))
    directed, bidirected = [], []
    for (i, j), kind in zip(itertools.combinations(range(n), 2), kinds):
        if kind in ("directed", "both"):
            directed.append((nodes[i], nodes[j]))
        if kind in ("bidirected", "both"):
            bidirected.append((nodes[i], nodes[j]))
    return Admg(nodes, tuple(directed), tuple(bidirected))


@st.composite
def graph_queries(draw, max_nodes=7):
    n = draw(st.integers(min_value=2, max_value=max_nodes))
    pairs = n * (n - 1) // 2
    kinds = draw(st.lists(st.sampled_from(EDGE_KINDS), min_size=pairs, max_size=pairs))
    g = build_graph(n, kinds)
    src, dst = draw(st.lists(st.sampled_from(g.nodes), min_size=2, max_size=2, unique=True))
    rest = [v for v in g.nodes if v not in (src, dst)]
    conditioning = draw(st.lists(st.sampled_from(rest), unique=True)) if rest else []
    return g, src, dst, conditioning


@st.composite
def edge_additions(draw):
    """A query on a graph plus a denser copy with one more forward edge."""
    g, src, dst, conditioning = draw(graph_queries())
    i, j = sorted(draw(st.lists(st.integers(0, len(g.nodes) - 1), min_size=2, max_size=2, unique=True)))
    edge = ((g.nodes[i], g.nodes[j]),)
    if draw(st.booleans()):
        denser = Admg(g.nodes, g.directed_edges + edge, g.bidirected_edges)
    else:
        denser = Admg(g.nodes, g.directed_edges, g.bidirected_edges + edge)
    return g, denser, src, dst, conditioning


class TestReferenceGraphs(unittest.TestCase):

    def test_only_unconfounded_graph_implies_parity(self):
        """Yhat is d-separated from A with empty conditioning only in the unconfounded graph."""
        self.assertTrue(d_separated(reference_graph("unconfounded"), "Yhat", "A"))
        self.assertFalse(d_separated(reference_graph("confounded"), "Yhat", "A"))
        self.assertFalse(d_separated(reference_graph("pretreatment"), "Yhat", "A"))

    def test_implies_dp_matches_d_separation(self):
        for name, expected in (("unconfounded", True), ("confounded", False), ("pretreatment", False)):
            self.assertEqual(implies_dp(reference_graph(name), "A", "Yhat"), expected, name)

    def test_conditioning_on_collider_opens_path(self):
        g = reference_graph("unconfounded")
        self.assertTrue(d_separated(g, "A", "U"))
        self.assertFalse(d_separated(g, "A", "U", ["X"]))
        self.assertFalse(d_separated(g, "A", "Yhat", ["X"]))

    def test_unknown_reference_graph(self):
        with self.assertRaises(InputError):
            reference_graph("fig1a")


class TestParseGraph(unittest.TestCase):

    def test_comments_blank_lines_and_isolated_nodes(self):
        g = parse_graph("# header\nA -> X   # edge\n\nU <-> A\nLonely\n")
        self.assertEqual(g.nodes, ("A", "X", "U", "Lonely"))
        self.assertEqual(g.directed_edges, (("A", "X"),))
        self.assertEqual(g.bidirected_edges, (("A", "U"),))
        self.assertEqual(g.spouses("A"), frozenset({"U"}))

    def test_bidirected_edges_are_unordered(self):
        g = parse_graph("A <-> B\nB <-> A")
        self.assertEqual(g.bidirected_edges, (("A", "B"),))

    def test_malformed_line_reports_line_number(self):
        with self.assertRaises(InputError) as ctx:
            parse_graph("A -> B\nA => B\n")
        self.assertIn("Line 2", str(ctx.exception))

    def test_cycle_is_a_model_error(self):
        with self.assertRaises(ModelError) as ctx:
            parse_graph("A -> B\nB -> C\nC -> A\nD -> A")
        for node in ("A", "B", "C"):
            self.assertIn(node, str(ctx.exception))

    def test_self_loop_is_a_model_error(self):
        with self.assertRaises(ModelError):
            parse_graph("A -> A")

    def test_undeclared_node(self):
        with self.assertRaises(InputError):
            Admg(("A",), (("A", "B"),))

    def test_load_graph_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "g.txt"
            path.write_text("A -> X\nU -> X\nU -> Yhat\n", encoding="utf-8")
            self.assertTrue(d_separated(load_graph(path), "Yhat", "A"))


class TestGraphQueries(unittest.TestCase):

    def setUp(self):
        self.g = parse_graph("A -> B\nC -> B\nB -> D\nA -> E")

    def test_topological_order_is_deterministic(self):
        self.assertEqual(topological_order(self.g), ("A", "C", "E", "B", "D"))

    def test_latent_projection(self):
        g = parse_graph("A -> X\nA <-> U\nU -> X")
        dag = latent_projection(g)
        self.assertEqual(set(dag.successors(("latent", "A", "U"))), {"A", "U"})
        self.assertEqual(set(dag.predecessors("A")), {("latent", "A", "U")})
        self.assertEqual(ancestors(g, ["X"]), frozenset({"A", "U", "X"}))

    def test_ancestors_are_reflexive(self):
        self.assertEqual(ancestors(self.g, ["D"]), frozenset({"A", "B", "C", "D"}))
        self.assertEqual(ancestors(self.g, ["C"]), frozenset({"C"}))

    def test_descendant_of_collider_opens_path(self):
        self.assertTrue(d_separated(self.g, "A", "C"))
        self.assertFalse(d_separated(self.g, "A", "C", ["D"]))

    def test_query_validation(self):
        with self.assertRaises(InputError):
            d_separated(self.g, "A", "A")
        with self.assertRaises(InputError):
            d_separated(self.g, "A", "C", ["A"])
        with self.assertRaises(InputError):
            d_separated(self.g, "A", "Z")


class TestDSeparationOracle(unittest.TestCase):

    def test_exhaustive_agreement_up_to_four_nodes(self):
        """Reachability and path enumeration agree on every query of every small graph."""
        for n in (2, 3, 4):
            pairs = n * (n - 1) // 2
            for kinds in itertools.product(EDGE_KINDS, repeat=pairs):
                g = build_graph(n, kinds)
                for src, dst in itertools.combinations(g.nodes, 2):
                    rest = [v for v in g.nodes if v not in (src, dst)]
                    for k in range(len(rest) + 1):
                        for conditioning in itertools.combinations(rest, k):
                            self.assertEqual(
                                d_separated(g, src, dst, conditioning),
                                d_separated_by_paths(g, src, dst, conditioning),
                                f"{kinds} {src} {dst} | {conditioning}",
                            )

    @settings(max_examples=300, deadline=None)
    @given(graph_queries())
    def test_agreement_up_to_seven_nodes(self, query):
        g, src, dst, conditioning = query
        self.assertEqual(d_separated(g, src, dst, conditioning), d_separated_by_paths(g, src, dst, conditioning))

    @settings(max_examples=300, deadline=None)
    @given(graph_queries())
    def test_symmetry(self, query):
        g, src, dst, conditioning = query
        self.assertEqual(d_separated(g, src, dst, conditioning), d_separated(g, dst, src, conditioning))

    @settings(max_examples=200, deadline=None)
    @given(graph_queries())
    def test_adjacent_nodes_are_never_separated(self, query):
        g, src, dst, conditioning = query
        denser = Admg(g.nodes, g.directed_edges, g.bidirected_edges + ((src, dst),))
        self.assertFalse(d_separated(denser, src, dst, conditioning))

    @settings(max_examples=300, deadline=None)
    @given(edge_additions())
    def test_adding_an_edge_never_separates(self, case):
        """With the conditioning set fixed, an extra edge can only open paths."""
        g, denser, src, dst, conditioning = case
        separated_after = d_separated(denser, src, dst, conditioning)
        self.assertEqual(separated_after, d_separated_by_paths(denser, src, dst, conditioning))
        if separated_after:
            self.assertTrue(d_separated_by_paths(g, src, dst, conditioning))


if __name__ == "__main__":
    unittest.main()
