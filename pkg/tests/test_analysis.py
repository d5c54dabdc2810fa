"""Skew, potential, and condition checkers over synthetic and simulated traces."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from gridpulse import analysis
from gridpulse.engine import PulseRecord, RunConfig, RunResult, run
from gridpulse.faults import FaultBehavior, FaultPlacement
from gridpulse.protocol import IterationSnapshot, SourceMode
from gridpulse.timing import Params, local_skew_budget
from gridpulse.topology import build_layered, build_line_with_replicated_ends

PARAMS = Params.derive(d=1.0, u=0.002, theta=1.0002, lam=2.0)
KAPPA = PARAMS.kappa


def synthetic_result(layer_times: dict, m=4, pulses=1, placement=None,
                     snapshots=None) -> RunResult:
    """Result with hand-written pulse times: layer_times[layer][vertex] -> list."""
    base = build_line_with_replicated_ends(m)
    layers = max(layer_times) + 1
    cfg = RunConfig(
        base=base, layers=layers, params=PARAMS,
        source=SourceMode(kind="ideal", jitter=0.0), pulses=pulses,
        placement=placement or FaultPlacement.empty(),
    )
    trace = {}
    for layer in range(layers):
        for v in base.vertices:
            times = layer_times.get(layer, {}).get(v, [])
            trace[(v, layer)] = [
                PulseRecord(v, layer, k + 1, t, t) for k, t in enumerate(times)
            ]
    return RunResult(
        config=cfg, graph=build_layered(base, layers), trace=trace,
        snapshots=snapshots or {}, diagnostics=None, validation=[],
        completed=True, incomplete_nodes=[],
    )


class TestLocalSkew:
    def test_equal_times_zero(self):
        res = synthetic_result({0: {v: [1.0] for v in range(8)}})
        view = analysis.TraceView(res)
        skew = analysis.local_skew(view)
        assert skew.per_layer[0] == 0.0

    def test_path_example(self):
        # v1=0.10, v2=0.00, v3=0.05 on the line (vertices 2, 3, 4)
        times = {v: [0.0] for v in range(8)}
        times[2] = [0.10]
        times[3] = [0.00]
        times[4] = [0.05]
        res = synthetic_result({0: times})
        view = analysis.TraceView(res)
        skew = analysis.local_skew(view)
        # brute force over adjacent pairs
        expected = max(
            abs(times[a][0] - times[b][0])
            for a in range(8)
            for b in res.config.base.adjacency[a]
        )
        assert skew.per_layer[0] == pytest.approx(expected) == pytest.approx(0.10)

    def test_cascade_pairing_zero_for_ideal_grid(self):
        layer_times = {
            layer: {v: [(k - 1) * 2.0 + layer * 2.0 for k in (1, 2, 3)] for v in range(8)}
            for layer in range(3)
        }
        res = synthetic_result(layer_times, pulses=3)
        view = analysis.TraceView(res)
        skew = analysis.local_skew(view)
        assert all(x == 0.0 for x in skew.per_layer_pair)
        assert skew.overall == 0.0

    def test_faulty_layer_pair_undefined(self):
        placement = FaultPlacement(
            behaviors={(v, 0): FaultBehavior(kind="silent") for v in range(8)},
            strict=False,
        )
        res = synthetic_result({0: {}, 1: {v: [2.0] for v in range(8)}},
                               placement=placement)
        view = analysis.TraceView(res)
        skew = analysis.local_skew(view)
        assert skew.per_layer[0] is None


class TestPotentials:
    def test_equal_times_zero_everywhere(self):
        res = synthetic_result({0: {v: [5.0] for v in range(8)}})
        view = analysis.TraceView(res)
        table = analysis.potentials(view, kappa=0.01, s_max=3)
        assert np.nanmax(table.psi) == 0.0

    def test_two_node_formula(self):
        # offset 0.1 at distance 1 with kappa=0.01, s=1: 0.1 - 0.04 = 0.06
        times = {v: [0.0] for v in range(8)}
        times[3] = [0.1]
        res = synthetic_result({0: times})
        view = analysis.TraceView(res)
        table = analysis.potentials(view, kappa=0.01, s_max=1)
        assert table.psi[1, 0, 0] == pytest.approx(0.06)
        v, w, k, value = table.witnesses[(1, 0)]
        assert (v, w) == (3, 2) or (v, w) == (3, 4)
        assert value == pytest.approx(0.06)

    def test_xi_dominates_psi(self):
        times = {v: [0.013 * v] for v in range(8)}
        res = synthetic_result({0: times})
        view = analysis.TraceView(res)
        table = analysis.potentials(view, kappa=0.004, s_max=4)
        assert np.all(table.xi[1:] >= table.psi[1:] - 1e-15)
        # xi at level s is bounded by psi at level s-1
        for s in range(1, 5):
            assert np.nanmax(table.xi[s]) <= np.nanmax(table.psi[s - 1]) + 1e-15

    def test_skew_bounded_by_potential(self):
        times = {v: [0.001 * (v % 3)] for v in range(8)}
        res = synthetic_result({0: times})
        view = analysis.TraceView(res)
        table = analysis.potentials(view, kappa=0.0005, s_max=3)
        assert analysis.skew_vs_potential_violations(view, table, 0.0005) == []


class TestConditions:
    def make_result(self, corrections: dict):
        """Symmetric senders on layer 1, checked receivers on layer 2 so the
        fast and jump conditions apply (they need input layers >= 1)."""
        layer_times = {
            0: {v: [8.0] for v in range(8)},
            1: {v: [10.0] for v in range(8)},
            2: {v: [12.0] for v in range(8)},
        }
        snapshots = {
            (v, 2, 1): IterationSnapshot(
                h_own=11.0, h_min=11.0, h_max=11.0,
                correction=corrections.get(v, 0.0), arm="corrected", exit_local=11.0,
            )
            for v in range(8)
        }
        return synthetic_result(layer_times, snapshots=snapshots)

    @staticmethod
    def failures(res, s_max=3):
        view = analysis.TraceView(res)
        return analysis.check_conditions(res, view, s_max=s_max)

    def test_zero_correction_passes_everything(self):
        assert self.failures(self.make_result({})) == []

    def test_kappa_correction_passes_fast_and_jump(self):
        # the fast condition holds through its unconditional disjunct, the
        # jump condition through its in-range disjunct; the slow condition
        # rightly complains (a positive correction with symmetric inputs)
        fails = self.failures(self.make_result({v: KAPPA for v in range(8)}))
        assert not [f for f in fails if f.condition.startswith("FC")]
        assert not [f for f in fails if f.condition == "JC"]

    def test_in_range_correction_passes_jump(self):
        fails = self.failures(self.make_result({v: PARAMS.theta * KAPPA for v in range(8)}))
        assert not [f for f in fails if f.condition == "JC"]

    def test_forged_large_correction_fails(self):
        # a huge positive correction with symmetric inputs violates the
        # slow condition for every s and the jump condition
        fails = self.failures(self.make_result({4: 50 * KAPPA}), s_max=2)
        conds = {f.condition for f in fails if f.vertex == 4}
        assert "SC(0)" in conds
        assert "JC" in conds

    def test_forged_negative_correction_fails_fast(self):
        fails = self.failures(self.make_result({4: -50 * KAPPA}), s_max=2)
        conds = {f.condition for f in fails if f.vertex == 4}
        assert any(c.startswith("FC") for c in conds)
        assert "JC" in conds

    def test_full_report_mode(self):
        res = self.make_result({})
        view = analysis.TraceView(res)
        verdicts = analysis.check_conditions(res, view, s_max=1, failures_only=False)
        assert verdicts and all(v.passed for v in verdicts)


class TestEnvelopeArithmetic:
    def test_reference_window(self):
        # t_min=10, t_max=10.05, lam=2, kappa~0.0044: window [11.9912, 12.0588]
        base = build_line_with_replicated_ends(4)
        placement = FaultPlacement(behaviors={(3, 0): FaultBehavior(kind="silent")},
                                   strict=False)
        layer_times = {
            0: {v: [10.0 if v != 4 else 10.05] for v in base.vertices if v != 3},
            1: {v: [12.0] for v in base.vertices},
        }
        res = synthetic_result(layer_times, placement=placement)
        view = analysis.TraceView(res)
        violations = analysis.check_fault_envelope(res, view)
        assert violations == []
        # move the successor outside the window and it must be flagged
        layer_times[1][3] = [12.1]
        res2 = synthetic_result(layer_times, placement=placement)
        view2 = analysis.TraceView(res2)
        bad = analysis.check_fault_envelope(res2, view2)
        assert any(v["vertex"] == 3 for v in bad)
        window = [v for v in bad if v["vertex"] == 3][0]["window"]
        assert window[0] == pytest.approx(10.0 + 2.0 - 2 * KAPPA)
        assert window[1] == pytest.approx(10.05 + 2.0 + 2 * KAPPA)


class TestPeriodConsistency:
    def test_exact_period_passes(self):
        layer_times = {0: {v: [1.0, 3.0, 5.0] for v in range(8)}}
        res = synthetic_result(layer_times, pulses=3)
        view = analysis.TraceView(res)
        assert analysis.period_consistency(res, view) == []

    def test_jitter_flagged(self):
        layer_times = {0: {v: [1.0, 3.0, 5.1] for v in range(8)}}
        res = synthetic_result(layer_times, pulses=3)
        view = analysis.TraceView(res)
        assert analysis.period_consistency(res, view)


class TestStabilizationMetric:
    def test_clean_run_is_one(self):
        layer_times = {0: {v: [1.0, 3.0, 5.0] for v in range(8)}}
        res = synthetic_result(layer_times, pulses=3)
        assert analysis.stabilization_pulse(res, res) == 1.0

    def test_index_shift_allowed(self):
        ref = synthetic_result({0: {v: [1.0, 3.0, 5.0] for v in range(8)}}, pulses=3)
        shifted = synthetic_result({0: {v: [3.0, 5.0, 7.0] for v in range(8)}}, pulses=3)
        assert analysis.stabilization_pulse(shifted, ref) == 1.0

    def test_junk_prefix_counted(self):
        ref = synthetic_result({0: {v: [1.0, 3.0, 5.0, 7.0] for v in range(8)}}, pulses=4)
        messy = synthetic_result({0: {v: [0.4, 3.0, 5.0, 7.0] for v in range(8)}}, pulses=4)
        assert analysis.stabilization_pulse(messy, ref) == 2.0

    def test_never_locking_is_unstabilized(self):
        ref = synthetic_result({0: {v: [1.0, 3.0] for v in range(8)}}, pulses=2)
        wild = synthetic_result({0: {v: [1.0, 3.7] for v in range(8)}}, pulses=2)
        assert math.isinf(analysis.stabilization_pulse(wild, ref))


@pytest.fixture(scope="module")
def sim():
    base = build_line_with_replicated_ends(8)
    cfg = RunConfig(
        base=base, layers=12, params=PARAMS,
        source=SourceMode(kind="ideal", jitter=KAPPA / 4, seed=2),
        pulses=8, delay_strategy="uniform-random", delay_seed=5,
        clock_strategy="uniform", clock_seed=6,
    )
    res = run(cfg)
    return res, analysis.TraceView(res)


class TestEndToEndCheckers:
    """A realistic validated run satisfies every measured inequality."""

    def test_skew_within_budget(self, sim):
        res, view = sim
        skew = analysis.local_skew(view)
        assert skew.max_layer_skew() <= local_skew_budget(PARAMS, res.config.base.diameter)

    def test_zero_condition_failures(self, sim):
        res, view = sim
        s_max = math.ceil(math.log2(res.config.base.diameter)) + 1
        assert analysis.check_conditions(res, view, s_max=s_max) == []

    def test_drift_and_estimates_hold(self, sim):
        res, view = sim
        assert analysis.check_drift(res, view) == []
        assert analysis.check_estimates(res, view) == []

    def test_potential_recursion_holds(self, sim):
        res, view = sim
        s_max = math.ceil(math.log2(res.config.base.diameter)) + 1
        table = analysis.potentials(view, KAPPA, s_max=s_max)
        assert analysis.psi_bound_violations(table, KAPPA) == []
        assert analysis.skew_vs_potential_violations(view, table, KAPPA) == []

    def test_moved_pulse_detected(self, sim):
        """Hand-moving one pulse by 10*kappa trips the condition checker."""
        res, view = sim
        node = (5, 6)
        records = res.trace[node]
        moved = dict(res.trace)
        moved[node] = [
            dataclasses.replace(r, time=r.time + 10 * KAPPA) if r.index == 4 else r
            for r in records
        ]
        tampered = dataclasses.replace(res, trace=moved)
        tview = analysis.TraceView(tampered)
        s_max = 2
        fails = analysis.check_conditions(tampered, tview, s_max=s_max)
        assert fails
