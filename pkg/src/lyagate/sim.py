"""Closed-loop integration, level-crossing detection, and hybrid traces.

Fixed-step classic Runge-Kutta drives the continuous state; each step is
checked against the current cell's bands, and a crossing is localized by
bisection on phi(x(t)) - a within the step (the dense state comes from
re-taking the RK4 step with a shorter length, so event states are exactly
reproducible). Leaving the box, or crossing a level with no cell on the
other side, ends the trace with a sink event. More than 10 events inside a
10-step window aborts with a chattering error, the stand-in for sliding
behaviour this toolkit does not model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import expr as ex
from .errors import ChatteringError, NonFiniteStateError, StrategyError
from .partition import CellComplex

EVENT_TIME_TOL = 1e-10
_EVENT_NUDGE = 1e-9      # fraction of a step used to probe the far side


@dataclass
class Event:
    time: float
    family: int | None       # None for a plain domain exit
    level: float | None
    old_cell: str
    new_cell: str             # 'sink' when the trajectory leaves
    state: tuple
    kind: str                 # 'level' | 'domain'


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: list            # control name per sample
    step: float
    exited: bool = False

    def __len__(self):
        return len(self.times)

    def state_at(self, i):
        return tuple(float(v) for v in self.states[i])


@dataclass
class HybridTrace:
    trajectory: Trajectory
    events: list
    cells: list               # cell id per sample
    strategy_name: str = ""

    @property
    def step(self):
        return self.trajectory.step

    def segments(self):
        """(control, t_start, t_end) pieces between consecutive events."""
        times = self.trajectory.times
        bounds = [times[0]] + [e.time for e in self.events] + [times[-1]]
        ctrls = []
        idx = 0
        out = []
        for a, b in zip(bounds, bounds[1:]):
            while idx + 1 < len(times) and times[idx] < a - 1e-15:
                idx += 1
            out.append((self.trajectory.controls[idx], float(a), float(b)))
        return [s for s in out if s[2] > s[1]]

    def location_sequence(self, strategy):
        """[(cell, control, entry time), ...] for embedding into the automaton."""
        seq = [(self.cells[0], strategy[self.cells[0]],
                float(self.trajectory.times[0]))]
        for e in self.events:
            if e.new_cell == "sink":
                seq.append(("sink", None, e.time))
            else:
                seq.append((e.new_cell, strategy[e.new_cell], e.time))
        return seq

    def write_csv(self, path):
        traj = self.trajectory
        n = traj.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + ["x%d" % (i + 1) for i in range(n)]
                       + ["cell", "control"])
            for i in range(len(traj)):
                w.writerow([repr(float(traj.times[i]))]
                           + [repr(float(v)) for v in traj.states[i]]
                           + [self.cells[i], traj.controls[i]])


def _rk4_step(f, x, h):
    k1 = f(x)
    x2 = tuple(xi + 0.5 * h * ki for xi, ki in zip(x, k1))
    k2 = f(x2)
    x3 = tuple(xi + 0.5 * h * ki for xi, ki in zip(x, k2))
    k3 = f(x3)
    x4 = tuple(xi + h * ki for xi, ki in zip(x, k3))
    k4 = f(x4)
    s = h / 6.0
    return tuple(xi + s * (a + 2.0 * b + 2.0 * c + d)
                 for xi, a, b, c, d in zip(x, k1, k2, k3, k4))


def integrate(sys, g, x0, horizon, h):
    """Fixed-step RK4 under one control; stops at the horizon or domain exit."""
    if h <= 0:
        raise ValueError("step must be positive")
    f = sys.field_function(g)
    x = tuple(float(v) for v in x0)
    if not sys.domain.contains(x, tol=1e-12):
        raise NonFiniteStateError("x0 %s outside the domain" % (x,))
    times = [0.0]
    states = [x]
    t = 0.0
    exited = False
    while t < horizon - 1e-15:
        step = min(h, horizon - t)
        xn = _rk4_step(f, x, step)
        if not all(math.isfinite(v) for v in xn):
            raise NonFiniteStateError("non-finite state at t=%g" % (t + step))
        t += step
        x = xn
        times.append(t)
        states.append(x)
        if not sys.domain.contains(x, tol=1e-9):
            exited = True
            break
    return Trajectory(times=np.array(times), states=np.array(states),
                      controls=[g.name] * len(times), step=h, exited=exited)


def default_step(sys, controls, families, grid=32, scale=1e-3):
    """Suggested RK4 step: scale * (smallest level gap / largest field norm)."""
    gaps = [b - a for fam in families for a, b in zip(fam.levels, fam.levels[1:])]
    pts = sys.domain.grid(grid)
    vmax = 0.0
    for g in controls:
        fg = sys.closed_loop(g)
        sq = np.zeros(len(pts))
        for comp in fg:
            sq += ex.compile_vector(comp)(pts) ** 2
        vmax = max(vmax, float(np.sqrt(sq.max())))
    if vmax == 0.0:
        return scale * min(gaps)
    return scale * min(gaps) / vmax


def _as_chooser(strategy):
    if callable(strategy):
        return strategy
    if isinstance(strategy, Mapping):
        def chooser(cell_id, n_events, rng):
            if cell_id not in strategy:
                raise StrategyError("strategy misses cell %s" % cell_id)
            return strategy[cell_id]
        return chooser
    raise StrategyError("strategy must be a mapping or a callable")


def simulate_closed_loop(sys, strategy, complex: CellComplex, x0, horizon, h,
                         controls=None, rng=None, chatter_limit=10):
    """Integrate dx/dt = f(x, g(x)) with g chosen per cell by the strategy.

    ``strategy`` is either a mapping cell id -> control name or a callable
    (cell id, event count, rng) -> control name (used for randomized
    switching experiments). Returns a HybridTrace whose events carry the
    crossed family, level, and both cells.
    """
    chooser = _as_chooser(strategy)
    if controls is None:
        controls = getattr(complex, "_controls", [])
    controls = {g.name: g for g in controls}
    if not controls:
        raise StrategyError("no control laws supplied; pass controls= or "
                            "call attach_controls(complex, controls)")
    fields = {name: sys.field_function(g) for name, g in controls.items()}
    families = complex.families
    phi_fns = {fam.index: ex.compile_scalar(fam.phi) for fam in families}
    fam_pos = {fam.index: i for i, fam in enumerate(families)}

    x = tuple(float(v) for v in x0)
    res = complex.locate(x)
    cell = res.primary
    ctrl = chooser(cell, 0, rng)
    if ctrl not in controls:
        raise StrategyError("unknown control '%s'" % ctrl)

    times = [0.0]
    states = [x]
    ctrl_names = [ctrl]
    cells = [cell]
    events = []
    recent = []

    def band_of(cell_id, fam):
        y = complex.cell(cell_id).y
        return fam.band(y[fam_pos[fam.index]])

    t = 0.0
    while t < horizon - 1e-15:
        f = fields[ctrl]
        step = min(h, horizon - t)
        xn = _rk4_step(f, x, step)
        if not all(math.isfinite(v) for v in xn):
            raise NonFiniteStateError("non-finite state at t=%g" % (t + step))

        # earliest boundary event inside this step, if any
        best = None   # (tau, kind, family, level, direction)
        for fam in families:
            lo, hi = band_of(cell, fam)
            v = phi_fns[fam.index](xn)
            crossed = None
            if v > hi:
                crossed, direction = hi, +1
            elif v < lo:
                crossed, direction = lo, -1
            if crossed is None:
                continue
            tau = _bisect_event(
                lambda s: phi_fns[fam.index](_rk4_step(f, x, s)) - crossed,
                step, phi_fns[fam.index](x) - crossed)
            if best is None or tau < best[0]:
                best = (tau, "level", fam.index, crossed, direction)
        for d in range(sys.n):
            lo_d = sys.domain.lower[d]
            hi_d = sys.domain.upper[d]
            crossed = None
            if xn[d] > hi_d + 1e-12:
                crossed = hi_d
            elif xn[d] < lo_d - 1e-12:
                crossed = lo_d
            if crossed is None:
                continue
            tau = _bisect_event(
                lambda s: _rk4_step(f, x, s)[d] - crossed, step, x[d] - crossed)
            if best is None or tau < best[0]:
                best = (tau, "domain", None, crossed, 0)

        if best is None:
            t += step
            x = xn
            times.append(t)
            states.append(x)
            ctrl_names.append(ctrl)
            cells.append(cell)
            continue

        tau, kind, fam_idx, level, direction = best
        tau = max(tau, 1e-15)
        x_event = _rk4_step(f, x, tau)
        t_event = t + tau

        recent.append(t_event)
        recent = [te for te in recent if te > t_event - chatter_limit * h]
        if len(recent) > chatter_limit:
            raise ChatteringError(
                "%d events within %g time units at t=%g"
                % (len(recent), chatter_limit * h, t_event))

        if kind == "domain":
            events.append(Event(time=t_event, family=None, level=level,
                                old_cell=cell, new_cell="sink",
                                state=x_event, kind="domain"))
            times.append(t_event)
            states.append(x_event)
            ctrl_names.append(ctrl)
            cells.append(cell)
            return _finish(times, states, ctrl_names, cells, events, h,
                           strategy, exited=True)

        fam = families[fam_pos[fam_idx]]
        partners = complex.neighbors_toward(cell, fam_idx, direction)
        if not partners:
            events.append(Event(time=t_event, family=fam_idx, level=level,
                                old_cell=cell, new_cell="sink",
                                state=x_event, kind="level"))
            times.append(t_event)
            states.append(x_event)
            ctrl_names.append(ctrl)
            cells.append(cell)
            return _finish(times, states, ctrl_names, cells, events, h,
                           strategy, exited=True)

        # disambiguate the component by probing just past the surface
        probe = _rk4_step(f, x, min(tau * (1.0 + _EVENT_NUDGE) + 1e-15, step))
        new_cell = None
        if len(partners) == 1:
            new_cell = partners[0].other(cell)
        else:
            try:
                loc = complex.locate(tuple(probe))
                cand = {adj.other(cell) for adj in partners}
                for cid in (loc.primary,) + loc.cells:
                    if cid in cand:
                        new_cell = cid
                        break
            except Exception:
                new_cell = None
            if new_cell is None:
                pa = np.asarray(probe)
                dist = [(min(np.linalg.norm(np.asarray(p) - pa)
                             for p in adj.facet_points), adj.other(cell))
                        for adj in partners]
                new_cell = min(dist)[1]

        events.append(Event(time=t_event, family=fam_idx, level=level,
                            old_cell=cell, new_cell=new_cell,
                            state=x_event, kind="level"))
        cell = new_cell
        ctrl = chooser(cell, len(events), rng)
        if ctrl not in controls:
            raise StrategyError("unknown control '%s'" % ctrl)
        t = t_event
        x = x_event
        times.append(t)
        states.append(x)
        ctrl_names.append(ctrl)
        cells.append(cell)

    return _finish(times, states, ctrl_names, cells, events, h, strategy,
                   exited=False)


def _finish(times, states, ctrls, cells, events, h, strategy, exited):
    name = strategy if isinstance(strategy, str) else getattr(strategy, "name", "")
    traj = Trajectory(times=np.array(times), states=np.array(states),
                      controls=ctrls, step=h, exited=exited)
    return HybridTrace(trajectory=traj, events=events, cells=cells,
                       strategy_name=str(name))


def _bisect_event(fun, step, f0, tol=EVENT_TIME_TOL, iters=80):
    """First zero of fun on (0, step]; fun(step) has the opposite sign of f0."""
    s0 = f0 > 0
    if (fun(step) > 0) == s0:
        # already past the edge at the start of the step: immediate event
        return min(tol, step)
    lo, hi = 0.0, step
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if (fun(mid) > 0) == s0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return hi


def attach_controls(complex, controls):
    """Record the control set on the complex for closed-loop simulation."""
    complex._controls = list(controls)
    return complex
