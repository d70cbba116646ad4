"""Shared fixtures: the 1-D toy system and the phase-plane navigation scenario."""

import pytest

import lyagate as lg
from lyagate import expr as ex


class Example1D:
    """dx = -x + u on [-3, 3], phi = x^2, levels (0, 1, 9), controls {0, 2x}."""

    def __init__(self, grid=64):
        self.n, self.m = 1, 1
        self.box = lg.Box((-3.0,), (3.0,))
        self.sys = lg.ControlSystem(
            n=1, m=1, domain=self.box,
            f=(ex.parse_expression("-x1 + u1", 1, 1),))
        self.g0 = lg.ControlLaw("g0", (ex.parse_expression("0", 1, 0),))
        self.g2x = lg.ControlLaw("g2x", (ex.parse_expression("2*x1", 1, 0),))
        self.controls = [self.g0, self.g2x]
        self.fam = lg.PartitioningFamily(
            index=1, phi=ex.parse_expression("x1^2", 1, 0),
            levels=(0.0, 1.0, 9.0))
        self.families = [self.fam]
        self.slices = {1: lg.build_slices(self.fam, self.box, grid=grid)}
        self.signs, self.sign_tables = lg.admissibility_map(
            self.sys, self.controls, self.families, grid=128)
        self.complex = lg.build_cells(self.families, self.box, grid=grid)
        lg.attach_system(self.complex, self.sys)
        lg.attach_controls(self.complex, self.controls)
        self.bounds = lg.compute_bounds(
            self.sys, self.controls, self.families, self.slices, grid=grid)
        self.tga = lg.build_tga(self.complex, self.controls, self.bounds,
                                self.signs, mode="cells")
        by_label = {c.label: c.id for c in self.complex.cells}
        self.mid = by_label["[-1,1]"]
        self.left = by_label["[-3,-1]"]
        self.right = by_label["[1,3]"]


class PhasePlane:
    """Double integrator dx1 = x2, dx2 = u1 on [-3,3]^2 with two quadratic
    level stacks (the second refines the first), two braking controls, a goal
    ring, and an outer obstacle ring."""

    def __init__(self, grid=96):
        self.n, self.m = 2, 1
        self.box = lg.Box((-3.0, -3.0), (3.0, 3.0))
        self.sys = lg.ControlSystem(
            n=2, m=1, domain=self.box,
            f=(ex.parse_expression("x2", 2, 1),
               ex.parse_expression("u1", 2, 1)))
        self.brake = lg.ControlLaw(
            "brake", (ex.parse_expression("-x1 - 2*x2", 2, 0),))
        self.firm = lg.ControlLaw(
            "firm", (ex.parse_expression("-2*x1 - 3*x2", 2, 0),))
        self.controls = [self.brake, self.firm]
        self.fam1 = lg.PartitioningFamily(
            index=1,
            phi=ex.parse_expression("1.5*x1^2 + x1*x2 + 0.5*x2^2", 2, 0),
            levels=(0.0, 1.0, 2.5, 5.0, 9.0, 27.5))
        self.fam2 = lg.PartitioningFamily(
            index=2,
            phi=ex.parse_expression("3*x1^2 + 2*x1*x2 + x2^2", 2, 0),
            levels=(0.0, 1.0, 7.0, 20.0, 56.0))
        self.families = [self.fam1, self.fam2]
        self.slices = {f.index: lg.build_slices(f, self.box, grid=grid)
                       for f in self.families}
        self.signs, _ = lg.admissibility_map(
            self.sys, self.controls, self.families, grid=grid)
        self.complex = lg.build_cells(self.families, self.box, grid=grid)
        lg.attach_system(self.complex, self.sys)
        lg.attach_controls(self.complex, self.controls)
        self.bounds = lg.compute_bounds(
            self.sys, self.controls, self.families, self.slices, grid=grid)
        self.tga = lg.build_tga(self.complex, self.controls, self.bounds,
                                self.signs, mode="cells")
        self.goal = [c.id for c in self.complex.cells if c.y[0] == 2]
        self.obstacle = [c.id for c in self.complex.cells if c.y[1] == 4]
        self.initial = [c.id for c in self.complex.cells if c.y == (4, 3)]


@pytest.fixture(scope="session")
def ex1d():
    return Example1D()


@pytest.fixture(scope="session")
def nav2d():
    return PhasePlane()
