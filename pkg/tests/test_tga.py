"""Automaton construction, clock algebra, and run replay."""

import math

import numpy as np
import pytest

import lyagate as lg
from lyagate import tga as ta
from lyagate.errors import NegativeClockError, UnboundedRatioError

REL = 0.005


def loc(ex1d, cell_attr, control):
    return "(%s,%s)" % (getattr(ex1d, cell_attr), control)


class TestBuild:
    def test_location_count(self, ex1d):
        assert len(ex1d.tga.non_sink_locations()) == 6
        assert ex1d.tga.k == 1

    def test_invariants(self, ex1d):
        inv = ex1d.tga.invariant_of(loc(ex1d, "right", "g0"))
        assert len(inv) == 1
        assert inv[0][0] == 1
        assert inv[0][1] == pytest.approx(4.0, rel=REL)
        assert ex1d.tga.invariant_of(loc(ex1d, "mid", "g0")) == ()

    def test_downward_crossing(self, ex1d):
        ts = [t for t in ex1d.tga.transitions
              if t.source == loc(ex1d, "right", "g0") and t.kind == "u"]
        assert len(ts) == 1
        t = ts[0]
        assert t.target == loc(ex1d, "mid", "g0")
        assert t.guard[0][0] == 1
        assert t.guard[0][1] == pytest.approx(4.0 / 9.0, rel=REL)
        assert dict(t.update.entries)[1].is_reset

    def test_mid_cell_up_has_two_targets(self, ex1d):
        ts = [t.target for t in ex1d.tga.transitions
              if t.source == loc(ex1d, "mid", "g2x") and t.kind == "u"]
        assert sorted(ts) == sorted([loc(ex1d, "left", "g2x"),
                                     loc(ex1d, "right", "g2x")])

    def test_sink_edges_only_for_outward_g2x(self, ex1d):
        sinks = [t.source for t in ex1d.tga.transitions if t.target == "sink"]
        assert sorted(sinks) == sorted([loc(ex1d, "left", "g2x"),
                                        loc(ex1d, "right", "g2x")])

    def test_mid_cell_has_no_exit_under_g0(self, ex1d):
        ts = [t for t in ex1d.tga.transitions
              if t.source == loc(ex1d, "mid", "g0") and t.kind == "u"]
        assert ts == []

    def test_switches_skipped_in_unbounded_slice(self, ex1d):
        skipped_cells = {s[0] for s in ex1d.tga.skipped_switches}
        assert skipped_cells == {ex1d.mid}

    def test_crossing_family_matches_band_change(self, ex1d, nav2d):
        for auto in (ex1d.tga, nav2d.tga):
            cx = auto.complex
            for t in auto.transitions:
                if t.kind != "u":
                    continue
                src = auto.locations[t.source]
                dst = auto.locations[t.target]
                if dst.is_sink:
                    continue
                ya = cx.cell(src.cell).y
                yb = cx.cell(dst.cell).y
                fams = [cx.families[i].index
                        for i in range(len(ya)) if ya[i] != yb[i]]
                assert fams == [t.family]

    def test_extended_mode_locations(self, ex1d):
        auto = lg.build_tga(ex1d.complex, ex1d.controls, ex1d.bounds,
                            ex1d.signs, mode="extended-cells")
        names = {l.cell for l in auto.non_sink_locations()}
        assert names == {"e1", "e2"}
        assert len(auto.non_sink_locations()) == 4


class TestValuations:
    def test_delay(self):
        assert ta.delay(((0.0, 0.0),), 1.5) == ((1.5, 1.5),)
        assert ta.delay(((1.0, 2.0),), 0.0) == ((1.0, 2.0),)
        assert ta.delay(((0.4, 0.1),), 0.6) == ((1.0, 0.7),)

    def test_delay_additivity(self):
        # dyadic delays make float addition exact, so equality is exact
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = tuple((rng.integers(0, 256) / 64.0, rng.integers(0, 256) / 64.0)
                      for _ in range(2))
            s = rng.integers(0, 256) / 64.0
            t = rng.integers(0, 256) / 64.0
            assert ta.delay(v, s + t) == ta.delay(ta.delay(v, s), t)

    def test_reset(self):
        u = ta.UpdateMap.of({1: ta.RESET})
        assert ta.apply_update(((3.0, 1.0),), u) == ((0.0, 0.0),)

    def test_reset_idempotent(self):
        u = ta.UpdateMap.of({1: ta.RESET})
        v = ((2.0, 5.0),)
        assert ta.apply_update(ta.apply_update(v, u), u) == ((0.0, 0.0),)

    def test_affine(self):
        fu = ta.FamilyUpdate(alpha=(1.0, 1.0), beta=((1.0, 0.0), (0.0, 1.0)))
        u = ta.UpdateMap.of({1: fu})
        assert ta.apply_update(((2.0, 3.0),), u) == ((3.0, 4.0),)

    def test_negative_clock_rejected(self):
        fu = ta.FamilyUpdate(alpha=(-1.0, 0.0), beta=((0.0, 0.0), (0.0, 0.0)))
        with pytest.raises(NegativeClockError):
            ta.apply_update(((0.0, 0.0),), ta.UpdateMap.of({1: fu}))

    def test_untouched_family_kept(self):
        u = ta.UpdateMap.of({2: ta.RESET})
        v = ((1.0, 2.0), (3.0, 4.0))
        assert ta.apply_update(v, u) == ((1.0, 2.0), (0.0, 0.0))


class TestSwitchUpdate:
    def tb(self, t_lo, t_hi):
        return lg.TimingBounds(1, 2, "g", t_lo=t_lo, t_hi=t_hi, delta_a=8.0)

    def test_equal_same_sign_is_identity(self):
        b = self.tb(4.0 / 9.0, 4.0)
        fu = ta.switch_update(b, b, same_sign=True)
        rng = np.random.default_rng(1)
        for _ in range(1000):
            v = ((float(rng.uniform(0, 4)), float(rng.uniform(0, 4))),)
            assert ta.apply_update(v, ta.UpdateMap.of({1: fu})) == v

    def test_opposite_sign_values(self):
        b = self.tb(4.0 / 9.0, 4.0)
        fu = ta.switch_update(b, b, same_sign=False)
        out = ta.apply_update(((0.2, 0.2),), ta.UpdateMap.of({1: fu}))
        assert out[0][0] == pytest.approx(4.0 - 9.0 * 0.2)
        assert out[0][1] == pytest.approx(4.0 / 9.0 - 0.2 / 9.0)

    def test_opposite_sign_at_zero_saturates(self):
        b = self.tb(4.0 / 9.0, 4.0)
        fu = ta.switch_update(b, b, same_sign=False)
        out = ta.apply_update(((0.0, 0.0),), ta.UpdateMap.of({1: fu}))
        assert out == ((4.0, 4.0 / 9.0),)

    def test_opposite_sign_involution(self):
        b = self.tb(4.0 / 9.0, 4.0)
        fu = ta.switch_update(b, b, same_sign=False)
        u = ta.UpdateMap.of({1: fu})
        once = ta.apply_update(((0.0, 0.0),), u)
        twice = ta.apply_update(once, u)
        assert twice == ((0.0, 0.0),)

    def test_same_sign_scaling(self):
        src = self.tb(4.0 / 9.0, 4.0)
        dst = self.tb(2.0 / 9.0, 2.0)
        fu = ta.switch_update(src, dst, same_sign=True)
        out = ta.apply_update(((1.0, 0.2),), ta.UpdateMap.of({1: fu}))
        assert out[0][0] == pytest.approx(0.5)
        assert out[0][1] == pytest.approx(0.1)

    def test_unbounded_divisor_rejected(self):
        good = self.tb(0.5, 4.0)
        bad = self.tb(0.5, math.inf)
        with pytest.raises(UnboundedRatioError):
            ta.switch_update(bad, good, same_sign=True)
        with pytest.raises(UnboundedRatioError):
            ta.switch_update(good, bad, same_sign=False)


class TestEnabled:
    def test_guard_gates_uncontrollable(self, ex1d):
        name = loc(ex1d, "right", "g0")
        en = ta.enabled((name, ((0.5, 0.5),)), ex1d.tga)
        kinds = sorted(t.kind for t in en)
        assert kinds == ["c", "u"]
        en2 = ta.enabled((name, ((0.1, 0.1),)), ex1d.tga)
        assert [t.kind for t in en2] == ["c"]

    def test_sink_absorbing(self, ex1d):
        assert ta.enabled(("sink", ((0.0, 0.0),)), ex1d.tga) == []


class TestRunFeasible:
    def test_full_traversal_feasible(self, ex1d):
        seq = [(loc(ex1d, "right", "g0"), 0.0),
               (loc(ex1d, "mid", "g0"), math.log(3.0))]
        rep = ta.run_feasible(ex1d.tga, seq)
        assert rep.feasible

    def test_early_exit_violates_guard(self, ex1d):
        seq = [(loc(ex1d, "right", "g0"), 0.0), (loc(ex1d, "mid", "g0"), 0.1)]
        rep = ta.run_feasible(ex1d.tga, seq)
        assert not rep.feasible
        assert rep.first_violation()["kind"] == "guard"

    def test_late_exit_violates_invariant(self, ex1d):
        seq = [(loc(ex1d, "right", "g0"), 0.0), (loc(ex1d, "mid", "g0"), 5.0)]
        rep = ta.run_feasible(ex1d.tga, seq)
        assert not rep.feasible
        assert rep.first_violation()["kind"] == "invariant"

    def test_missing_edge_reported(self, ex1d):
        seq = [(loc(ex1d, "mid", "g0"), 0.0), (loc(ex1d, "right", "g0"), 1.0)]
        rep = ta.run_feasible(ex1d.tga, seq)
        assert not rep.feasible
        assert rep.first_violation()["kind"] == "missing-edge"

    def test_final_dwell_checked(self, ex1d):
        seq = [(loc(ex1d, "right", "g0"), 0.0)]
        ok = ta.run_feasible(ex1d.tga, seq, final_dwell=1.0)
        assert ok.feasible
        bad = ta.run_feasible(ex1d.tga, seq, final_dwell=10.0)
        assert not bad.feasible


class TestExports:
    def test_dot_styles(self, ex1d):
        dot = ex1d.tga.to_dot()
        assert "style=dashed" in dot     # uncontrollable
        assert "style=solid" in dot      # controllable
        assert '"sink"' in dot

    def test_json_inf_encoding(self, ex1d):
        d = ex1d.tga.to_dict()
        assert d["clock_pairs"] == 1
        mids = [l for l in d["locations"] if l["name"] == loc(ex1d, "mid", "g0")]
        assert mids[0]["invariant"] == []

    def test_prop2_structural(self, ex1d):
        """Extended automaton has {extended cells} x K_U locations and its
        reachable cell projection contains the cell-mode automaton's."""
        import lyagate.game as gm
        auto_ex = lg.build_tga(ex1d.complex, ex1d.controls, ex1d.bounds,
                               ex1d.signs, mode="extended-cells")
        ys = {tuple(c.y) for c in ex1d.complex.cells}
        assert len(auto_ex.non_sink_locations()) == len(ys) * len(ex1d.controls)

        kappa = {c: "g0" for c in ex1d.tga.cells()}
        kex = {z: "g0" for z in auto_ex.cells()}
        r_cell = gm.reach_locations(
            gm.restrict(ex1d.tga, kappa),
            ["(%s,g0)" % ex1d.right], 10.0)
        r_ext = gm.reach_locations(
            gm.restrict(auto_ex, kex), ["(e2,g0)"], 10.0)

        def project(name):
            cell = name[1:name.index(",")]
            if cell == "sink":
                return name
            y = ex1d.complex.cell(cell).y
            return "(e%s,%s)" % (".".join(map(str, y)), name[name.index(",") + 1:-1])

        projected = {project(n) for n in r_cell.locations()}
        assert projected <= r_ext.locations()
