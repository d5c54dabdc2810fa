"""Topology construction, distances, and ancestry queries."""

from __future__ import annotations

from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from gridpulse.errors import ConfigurationError
from gridpulse.topology import (
    ancestors,
    build_layered,
    build_line_with_replicated_ends,
    distance,
    from_edges,
    k_faulty_class,
    parse_edge_list,
)


def bfs_oracle(adjacency, source):
    dist = {source: 0}
    queue = deque([source])
    while queue:
        x = queue.popleft()
        for y in adjacency[x]:
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    return dist


class TestLineReplicatedEnds:
    def test_replicas_are_adjacent(self):
        g = build_line_with_replicated_ends(4)
        assert distance(g, 0, 1) == 1

    def test_line_distance(self):
        g = build_line_with_replicated_ends(4)
        # v_1..v_4 are vertices 2..5
        assert distance(g, 2, 5) == 3

    def test_diameter_matches_bfs_oracle(self):
        g = build_line_with_replicated_ends(4)
        adjacency = {v: list(g.adjacency[v]) for v in g.vertices}
        worst = max(
            max(bfs_oracle(adjacency, v).values()) for v in g.vertices
        )
        assert g.diameter == worst == 5

    def test_min_degree_two(self):
        for m in (2, 3, 8):
            g = build_line_with_replicated_ends(m)
            assert min(g.degree(v) for v in g.vertices) >= 2

    def test_too_short_rejected(self):
        with pytest.raises(ConfigurationError):
            build_line_with_replicated_ends(1)

    def test_hop_indices(self):
        g = build_line_with_replicated_ends(5)
        info = g.line_info
        assert info.hop(info.line[0]) == 1
        assert info.hop(info.line[-1]) == 5
        assert info.hop(info.start_replicas[0]) == 1
        assert info.hop(info.end_replicas[1]) == 5


class TestLayeredGraph:
    def test_path_piece_predecessors(self):
        g = build_line_with_replicated_ends(4)
        lg = build_layered(g, 5)
        # v_2 (vertex 3) has line neighbors v_1 (2) and v_3 (4)
        assert lg.predecessors((3, 2)) == ((2, 1), (3, 1), (4, 1))

    def test_successors_mirror_predecessors(self):
        g = build_line_with_replicated_ends(4)
        lg = build_layered(g, 4)
        for v, layer in lg.nodes():
            for succ in lg.successors((v, layer)):
                assert (v, layer) in lg.predecessors(succ)

    def test_end_vertex_in_degree(self):
        g = build_line_with_replicated_ends(4)
        lg = build_layered(g, 3)
        # v_1 (vertex 2): self, v_2, both start replicas
        assert len(lg.predecessors((2, 1))) == 4

    def test_predecessor_count_is_degree_plus_one(self):
        g = build_line_with_replicated_ends(6)
        lg = build_layered(g, 4)
        for v in g.vertices:
            for layer in range(1, 4):
                assert len(lg.predecessors((v, layer))) == g.degree(v) + 1

    def test_layer_zero_has_no_predecessors(self):
        g = build_line_with_replicated_ends(3)
        lg = build_layered(g, 2)
        assert lg.predecessors((2, 0)) == ()


class TestDistanceMetric:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=2, max_value=10), st.integers(min_value=0, max_value=2**30))
    def test_metric_properties_on_random_graphs(self, m, seed):
        import random

        rng = random.Random(seed)
        g = build_line_with_replicated_ends(m)
        # densify with a few random chords; the construction stays valid
        extra = [
            (a, b)
            for a in g.vertices
            for b in g.vertices
            if a < b and rng.random() < 0.15
        ]
        edges = {
            (a, b)
            for a in g.vertices
            for b in g.adjacency[a]
            if a < b
        } | set(extra)
        dense = from_edges(sorted(edges))
        n = dense.num_vertices
        for v in range(n):
            assert dense.distance_table[v][v] == 0
            for w in range(n):
                assert dense.distance_table[v][w] == dense.distance_table[w][v]
                if v != w:
                    assert dense.distance_table[v][w] > 0
                for x in range(n):
                    assert (
                        dense.distance_table[v][x]
                        <= dense.distance_table[v][w] + dense.distance_table[w][x]
                    )

    def test_unknown_vertex(self):
        g = build_line_with_replicated_ends(3)
        with pytest.raises(ConfigurationError):
            distance(g, 0, 99)


class TestAncestry:
    def setup_method(self):
        self.g = build_line_with_replicated_ends(6)
        self.lg = build_layered(self.g, 6)

    def test_zero_radius_empty(self):
        assert ancestors(self.lg, (4, 3), 0).members == frozenset()

    def test_radius_one_is_predecessors(self):
        a = ancestors(self.lg, (4, 3), 1)
        assert a.members == frozenset(self.lg.predecessors((4, 3)))

    def test_interior_radius_two(self):
        # interior line vertex: 3 predecessors plus 5 distinct grand-predecessors
        assert len(ancestors(self.lg, (4, 3), 2).members) == 8

    def test_monotone_in_radius(self):
        for delta in range(4):
            small = ancestors(self.lg, (5, 4), delta).members
            big = ancestors(self.lg, (5, 4), delta + 1).members
            assert small <= big

    def test_reverse_bfs_oracle(self):
        def oracle(node, delta):
            seen = set()
            frontier = {node}
            for _ in range(delta):
                frontier = {
                    p for x in frontier for p in self.lg.predecessors(x)
                }
                seen |= frontier
            return seen - {node}

        for node in [(2, 2), (7, 5), (0, 1)]:
            for delta in range(4):
                assert ancestors(self.lg, node, delta).members == frozenset(
                    oracle(node, delta)
                )


class TestKFaultyClass:
    def setup_method(self):
        self.g = build_line_with_replicated_ends(6)
        self.lg = build_layered(self.g, 8)

    def test_empty_faults(self):
        assert k_faulty_class(self.lg, (4, 6), 1, frozenset()) == 0

    def test_single_close_fault(self):
        node = (4, 6)
        fault = next(iter(ancestors(self.lg, node, 1).members))
        assert k_faulty_class(self.lg, node, 1, {fault}) == 1

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=2**30))
    def test_matches_definition_scan(self, seed):
        import random

        rng = random.Random(seed)
        faults = {
            (v, layer)
            for layer in range(self.lg.num_layers)
            for v in self.g.vertices
            if rng.random() < 0.08
        }
        node = (rng.choice(self.g.vertices), rng.randrange(1, self.lg.num_layers))
        delta = rng.randint(1, 3)

        def oracle():
            for k in range(len(faults) + 1):
                within = ancestors(self.lg, node, (k + 1) * delta).members
                if len(within & faults) <= k:
                    return k
            raise AssertionError("unreachable")

        assert k_faulty_class(self.lg, node, delta, faults) == oracle()


class TestEdgeList:
    def test_round_trip(self):
        text = """
        # a square
        0 1
        1 2
        2 3
        3 0
        """
        g = parse_edge_list(text)
        assert g.num_vertices == 4
        assert g.diameter == 2

    def test_degree_one_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_edge_list("0 1\n1 2\n")

    def test_disconnected_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_edge_list("0 1\n1 2\n2 0\n3 4\n4 5\n5 3\n")

    def test_bad_line(self):
        with pytest.raises(ConfigurationError):
            parse_edge_list("0 1 2\n")
