"""Integration, event localization, and hybrid-trace extraction."""

import math

import numpy as np
import pytest

import lyagate as lg
from lyagate import expr as ex
from lyagate.errors import ChatteringError, StrategyError


class TestIntegrate:
    def test_decay_closed_form(self, ex1d):
        tr = lg.integrate(ex1d.sys, ex1d.g0, (3.0,), math.log(3.0), 1e-4)
        assert tr.states[-1][0] == pytest.approx(1.0, abs=1e-8)

    def test_growth_closed_form(self, ex1d):
        tr = lg.integrate(ex1d.sys, ex1d.g2x, (1.0,), math.log(3.0), 1e-4)
        assert tr.states[-1][0] == pytest.approx(3.0, abs=1e-8)

    def test_zero_field_constant(self):
        box = lg.Box((-1.0,), (1.0,))
        sysz = lg.ControlSystem(n=1, m=1, domain=box,
                                f=(ex.parse_expression("0*x1 + 0*u1", 1, 1),))
        g = lg.ControlLaw("z", (ex.parse_expression("0", 1, 0),))
        tr = lg.integrate(sysz, g, (0.3,), 1.0, 1e-3)
        assert np.all(tr.states[:, 0] == 0.3)

    def test_domain_exit_stops(self, ex1d):
        tr = lg.integrate(ex1d.sys, ex1d.g2x, (2.0,), 10.0, 1e-3)
        assert tr.exited
        assert tr.times[-1] < 10.0

    def test_times_strictly_increasing(self, ex1d):
        tr = lg.integrate(ex1d.sys, ex1d.g0, (2.0,), 1.0, 1e-3)
        assert np.all(np.diff(tr.times) > 0)


class TestClosedLoop:
    def test_single_event_g0(self, ex1d):
        kappa = {c: "g0" for c in ex1d.complex.cell_ids()}
        tr = lg.simulate_closed_loop(ex1d.sys, kappa, ex1d.complex, (2.5,),
                                     10.0, 1e-3, controls=ex1d.controls)
        assert len(tr.events) == 1
        e = tr.events[0]
        assert e.time == pytest.approx(math.log(2.5), abs=1e-8)
        assert ex1d.complex.cell(e.old_cell).label == "[1,3]"
        assert ex1d.complex.cell(e.new_cell).label == "[-1,1]"

    def test_equilibrium_no_events(self, ex1d):
        kappa = {c: "g2x" for c in ex1d.complex.cell_ids()}
        tr = lg.simulate_closed_loop(ex1d.sys, kappa, ex1d.complex, (0.0,),
                                     5.0, 1e-3, controls=ex1d.controls)
        assert tr.events == []

    def test_growth_to_sink(self, ex1d):
        kappa = {c: "g2x" for c in ex1d.complex.cell_ids()}
        tr = lg.simulate_closed_loop(ex1d.sys, kappa, ex1d.complex, (0.5,),
                                     10.0, 1e-3, controls=ex1d.controls)
        assert len(tr.events) == 2
        assert tr.events[0].time == pytest.approx(math.log(2.0), abs=1e-8)
        assert tr.events[1].time == pytest.approx(math.log(6.0), abs=1e-8)
        assert tr.events[1].new_cell == "sink"
        assert tr.trajectory.exited

    def test_event_on_level_surface(self, ex1d):
        """phi at every recorded level event sits on the crossed level."""
        kappa = {c: "g0" for c in ex1d.complex.cell_ids()}
        phi = ex.compile_scalar(ex1d.fam.phi)
        for x0 in (2.9, -2.2, 1.4):
            tr = lg.simulate_closed_loop(ex1d.sys, kappa, ex1d.complex, (x0,),
                                         8.0, 1e-3, controls=ex1d.controls)
            for e in tr.events:
                if e.kind == "level":
                    assert phi(e.state) == pytest.approx(e.level, abs=1e-8)

    def test_trace_cells_follow_adjacency(self, nav2d):
        import lyagate.game as gm
        res = gm.synthesize_reach(nav2d.tga, nav2d.goal)
        rng = np.random.default_rng(0)
        x0 = nav2d.complex.uniform_point_in(nav2d.initial[0], rng)
        tr = lg.simulate_closed_loop(nav2d.sys, res.strategy, nav2d.complex,
                                     x0, 6.0, 2e-3, controls=nav2d.controls)
        pairs = {(a.a, a.b) for a in nav2d.complex.adjacency}
        pairs |= {(b, a) for a, b in pairs}
        prev = tr.cells[0]
        for e in tr.events:
            if e.new_cell == "sink":
                break
            assert (e.old_cell, e.new_cell) in pairs
            assert e.old_cell == prev
            prev = e.new_cell

    def test_event_time_convergence_order(self, ex1d):
        """Halving the step changes event times at fourth order (>= 3.5)."""
        kappa = {c: "g0" for c in ex1d.complex.cell_ids()}

        def event_time(h):
            tr = lg.simulate_closed_loop(ex1d.sys, kappa, ex1d.complex, (2.7,),
                                         3.0, h, controls=ex1d.controls)
            return tr.events[0].time

        t1, t2, t4 = event_time(2e-2), event_time(1e-2), event_time(5e-3)
        e12 = abs(t1 - t2)
        e24 = abs(t2 - t4)
        order = math.log2(e12 / e24)
        assert order >= 3.5

    def test_chattering_guard(self, ex1d):
        # adversarial switcher: always pick the control that pushes back
        def flip(cell_id, n_events, rng):
            lbl = ex1d.complex.cell(cell_id).label
            return "g2x" if lbl == "[-1,1]" else "g0"

        with pytest.raises(ChatteringError):
            lg.simulate_closed_loop(ex1d.sys, flip, ex1d.complex, (1.5,),
                                    20.0, 1e-3, controls=ex1d.controls)

    def test_unknown_control_rejected(self, ex1d):
        kappa = {c: "nope" for c in ex1d.complex.cell_ids()}
        with pytest.raises(StrategyError):
            lg.simulate_closed_loop(ex1d.sys, kappa, ex1d.complex, (0.5,),
                                    1.0, 1e-3, controls=ex1d.controls)


class TestTraceArtifacts:
    def test_csv_export(self, ex1d, tmp_path):
        kappa = {c: "g0" for c in ex1d.complex.cell_ids()}
        tr = lg.simulate_closed_loop(ex1d.sys, kappa, ex1d.complex, (2.0,),
                                     2.0, 1e-3, controls=ex1d.controls)
        path = tmp_path / "trace.csv"
        tr.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,x1,cell,control"
        assert len(lines) == len(tr.trajectory) + 1

    def test_location_sequence(self, ex1d):
        kappa = {c: "g0" for c in ex1d.complex.cell_ids()}
        tr = lg.simulate_closed_loop(ex1d.sys, kappa, ex1d.complex, (2.0,),
                                     3.0, 1e-3, controls=ex1d.controls)
        seq = tr.location_sequence(kappa)
        assert seq[0][0] == ex1d.right and seq[0][2] == 0.0
        assert seq[1][0] == ex1d.mid

    def test_default_step(self, ex1d):
        h = lg.default_step(ex1d.sys, ex1d.controls, ex1d.families)
        # smallest level gap 1, largest |f_g| = 3 at x = +-3
        assert h == pytest.approx(1e-3 / 3.0, rel=0.05)
