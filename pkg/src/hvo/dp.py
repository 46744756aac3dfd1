"""Deterministic finite-horizon dynamic programming on gridded spaces.

Backward value recursion with multilinear interpolation of the cost-to-go,
then a forward rollout that re-optimizes the control against the interpolated
value field from the actual continuous state. Infeasibility is represented by
+inf; interpolation never crosses an infeasible corner, so constraint
boundaries cannot leak optimistic values.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import AllInfeasible, DeadEnd, InvalidArgument, ParseError

INFEASIBLE = np.inf
_NODE_SNAP = 1e-12  # relative weight below which a query sits on a grid node

# Soft-barrier weight for state-window violations inside the hybrid DP
# problems (cost per unit of SOC outside the window). Hard infeasibility at
# the window edge either erodes the value field by a full cell per backward
# stage (forced drift much smaller than the grid pitch) or, with one-sided
# interpolation, lets trajectories ride the boundary into genuine dead ends;
# a steep finite barrier avoids both while leaving optimal trajectories
# strictly inside the window.
WINDOW_BARRIER = 1e9


@dataclass
class DpProblem:
    """Finite-horizon problem over gridded state and control spaces.

    ``evaluate(k, state, control) -> (next_state, stage_cost, feasible)`` is
    the scalar contract; it must be total (infeasibility is a value). The
    optional hooks accelerate the same math:

    - ``evaluate_controls(k, state)``: vectorized over the flat control grid,
      returning (next_states[nc, ndim], costs[nc], feasible[nc]).
    - ``backward_stage(k, v_next)``: computes one full backward stage,
      returning (values, flat_policy) over the state mesh.
    - ``detail(k, state, control)``: optional rich per-step record used when
      logging rollouts.
    """

    state_axes: tuple
    control_axes: tuple
    n_stages: int
    evaluate: Callable
    terminal_cost: Callable
    evaluate_controls: Optional[Callable] = None
    backward_stage: Optional[Callable] = None
    detail: Optional[Callable] = None

    def __post_init__(self):
        self.state_axes = tuple(np.asarray(a, dtype=float) for a in self.state_axes)
        self.control_axes = tuple(np.asarray(a, dtype=float) for a in self.control_axes)
        for axes in (self.state_axes, self.control_axes):
            for a in axes:
                if a.ndim != 1 or a.size < 1 or (a.size > 1 and np.any(np.diff(a) <= 0)):
                    raise InvalidArgument("grid axes must be 1-D and strictly ascending")
        if self.n_stages < 1:
            raise InvalidArgument("need at least one decision stage")

    @property
    def state_shape(self):
        return tuple(a.size for a in self.state_axes)

    @property
    def control_shape(self):
        return tuple(a.size for a in self.control_axes)

    def control_values(self, flat_index: int) -> tuple:
        idx = np.unravel_index(flat_index, self.control_shape)
        return tuple(float(a[i]) for a, i in zip(self.control_axes, idx))

    def iter_controls(self):
        for flat, idx in enumerate(itertools.product(*(range(a.size) for a in self.control_axes))):
            yield flat, tuple(float(a[i]) for a, i in zip(self.control_axes, idx))


@dataclass
class DpSolution:
    value: np.ndarray  # (n_stages + 1, *state_shape)
    policy: np.ndarray  # (n_stages, *state_shape), flat control index, -1 infeasible


@dataclass
class Trajectory:
    states: np.ndarray  # (n_stages + 1, ndim)
    control_indices: np.ndarray  # (n_stages,)
    controls: np.ndarray  # (n_stages, n_control_dims)
    stage_costs: np.ndarray  # (n_stages,)
    terminal_cost: float
    total_cost: float
    step_results: list = field(default_factory=list)


def interp_value(values: np.ndarray, axes, point) -> float:
    """Multilinear interpolation with infeasibility-aware corner handling.

    Points outside the grid hull are INFEASIBLE. A query exactly on a node
    (within relative snap tolerance) uses the node value alone. Inside a
    cell, INFEASIBLE corners never enter the blend: the value is the
    weighted average over the finite corners only, and a cell whose
    relevant corners are all INFEASIBLE absorbs the transition. Restricting
    to finite corners (instead of poisoning the whole cell) keeps the
    feasible set from artificially eroding one cell per stage when the true
    state drift is much smaller than the grid pitch.
    """
    idx = []
    weights = []
    for a, x in zip(axes, point):
        if a.size == 1:
            if abs(x - a[0]) > _NODE_SNAP * max(1.0, abs(a[0])):
                return INFEASIBLE
            idx.append(0)
            weights.append(0.0)
            continue
        if x < a[0] or x > a[-1]:
            return INFEASIBLE
        i = min(int(np.searchsorted(a, x, side="right")) - 1, a.size - 2)
        i = max(i, 0)
        span = a[i + 1] - a[i]
        w = (x - a[i]) / span
        snap = _NODE_SNAP * max(1.0, abs(a[i]), abs(a[i + 1])) / span
        if w <= snap:
            w = 0.0
        elif w >= 1.0 - snap:
            w = 1.0
        idx.append(i)
        weights.append(w)

    total = 0.0
    weight_sum = 0.0
    for corner in itertools.product(*((0, 1) for _ in idx)):
        wprod = 1.0
        for c, w in zip(corner, weights):
            wprod *= w if c else (1.0 - w)
        if wprod == 0.0:
            continue
        v = values[tuple(i + c for i, c in zip(idx, corner))]
        if not np.isfinite(v):
            continue
        total += wprod * v
        weight_sum += wprod
    if weight_sum == 0.0:
        return INFEASIBLE
    return total / weight_sum


def solve_backward(problem: DpProblem) -> DpSolution:
    """Backward Bellman recursion over the state grid.

    Ties between controls break toward the lowest flat control index
    (lexicographic over the control axes), which keeps results identical
    across runs and worker counts.
    """
    shape = problem.state_shape
    n_stages = problem.n_stages
    value = np.full((n_stages + 1,) + shape, INFEASIBLE, dtype=float)
    policy = np.full((n_stages,) + shape, -1, dtype=np.int64)

    node_indices = list(itertools.product(*(range(n) for n in shape)))
    nodes = [tuple(float(problem.state_axes[d][i]) for d, i in enumerate(ix)) for ix in node_indices]

    for ix, state in zip(node_indices, nodes):
        value[(n_stages,) + ix] = problem.terminal_cost(state)

    for k in range(n_stages - 1, -1, -1):
        v_next = value[k + 1]
        if problem.backward_stage is not None:
            vk, pk = problem.backward_stage(k, v_next)
            value[k] = vk
            policy[k] = pk
            continue
        for ix, state in zip(node_indices, nodes):
            best = INFEASIBLE
            best_u = -1
            if problem.evaluate_controls is not None:
                nxt, costs, feas = problem.evaluate_controls(k, state)
                for flat in range(costs.size):
                    if not feas[flat]:
                        continue
                    w = interp_value(v_next, problem.state_axes, tuple(nxt[flat]))
                    if not np.isfinite(w):
                        continue
                    tot = costs[flat] + w
                    if tot < best:
                        best = tot
                        best_u = flat
            else:
                for flat, control in problem.iter_controls():
                    nxt, cost, feas = problem.evaluate(k, state, control)
                    if not feas:
                        continue
                    w = interp_value(v_next, problem.state_axes, nxt)
                    if not np.isfinite(w):
                        continue
                    tot = cost + w
                    if tot < best:
                        best = tot
                        best_u = flat
            value[(k,) + ix] = best
            policy[(k,) + ix] = best_u

    if not np.isfinite(value[0]).any():
        raise AllInfeasible("no finite cost-to-go at any first-stage state")
    return DpSolution(value=value, policy=policy)


def rollout(problem: DpProblem, solution: DpSolution, x0) -> Trajectory:
    """Forward pass re-optimizing each control from the continuous state."""
    x0 = tuple(float(v) for v in x0)
    if not np.isfinite(interp_value(solution.value[0], problem.state_axes, x0)):
        raise DeadEnd(0, f"initial state {x0} has no finite cost-to-go")

    ndim = len(problem.state_axes)
    states = np.zeros((problem.n_stages + 1, ndim))
    states[0] = x0
    ctrl_idx = np.zeros(problem.n_stages, dtype=np.int64)
    n_ctrl_dims = len(problem.control_axes)
    controls = np.zeros((problem.n_stages, n_ctrl_dims))
    costs = np.zeros(problem.n_stages)
    details = []

    x = x0
    for k in range(problem.n_stages):
        v_next = solution.value[k + 1]
        best = INFEASIBLE
        best_u = -1
        best_next = None
        best_cost = 0.0
        if problem.evaluate_controls is not None:
            nxt, stage_costs, feas = problem.evaluate_controls(k, x)
            for flat in range(stage_costs.size):
                if not feas[flat]:
                    continue
                w = interp_value(v_next, problem.state_axes, tuple(nxt[flat]))
                if not np.isfinite(w):
                    continue
                tot = stage_costs[flat] + w
                if tot < best:
                    best, best_u = tot, flat
                    best_next, best_cost = tuple(nxt[flat]), float(stage_costs[flat])
        else:
            for flat, control in problem.iter_controls():
                nxt, cost, feas = problem.evaluate(k, x, control)
                if not feas:
                    continue
                w = interp_value(v_next, problem.state_axes, nxt)
                if not np.isfinite(w):
                    continue
                tot = cost + w
                if tot < best:
                    best, best_u = tot, flat
                    best_next, best_cost = nxt, cost
        if best_u < 0:
            raise DeadEnd(k)
        ctrl_idx[k] = best_u
        controls[k] = problem.control_values(best_u)
        costs[k] = best_cost
        if problem.detail is not None:
            details.append(problem.detail(k, x, tuple(controls[k])))
        states[k + 1] = best_next
        x = best_next

    term = float(problem.terminal_cost(tuple(states[-1])))
    return Trajectory(
        states=states,
        control_indices=ctrl_idx,
        controls=controls,
        stage_costs=costs,
        terminal_cost=term,
        total_cost=float(costs.sum()) + term,
        step_results=details,
    )


def terminal_soc_penalty(soc_terminal: float, soc_target: float, weight: float) -> float:
    """One-sided linear charge-sustaining penalty: deficits cost, surplus is free."""
    if weight <= 0:
        raise InvalidArgument("penalty weight must be positive")
    return weight * max(0.0, soc_target - soc_terminal)


# ---------------------------------------------------------------------------
# Binary value-field cache (magic 'DPV1', little-endian doubles)

_MAGIC = b"DPV1"


def save_value_field(path, solution: DpSolution, state_axes) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(state_axes)))
        for a in state_axes:
            a = np.asarray(a, dtype="<f8")
            fh.write(struct.pack("<I", a.size))
            fh.write(a.tobytes())
        n_stages = solution.policy.shape[0]
        fh.write(struct.pack("<I", n_stages))
        fh.write(solution.value.astype("<f8").tobytes())
        fh.write(solution.policy.astype("<i8").tobytes())


def load_value_field(path):
    """Load (state_axes, DpSolution) written by save_value_field."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        if raw[:4] != _MAGIC:
            raise ParseError(f"{path}: bad magic bytes")
        off = 4
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        axes = []
        for _ in range(ndim):
            (n,) = struct.unpack_from("<I", raw, off)
            off += 4
            axes.append(np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy())
            off += 8 * n
        (n_stages,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = tuple(a.size for a in axes)
        n_nodes = int(np.prod(shape))
        value = np.frombuffer(raw, dtype="<f8", count=(n_stages + 1) * n_nodes, offset=off).copy()
        off += 8 * (n_stages + 1) * n_nodes
        policy = np.frombuffer(raw, dtype="<i8", count=n_stages * n_nodes, offset=off).copy()
        off += 8 * n_stages * n_nodes
        if off != len(raw):
            raise ParseError(f"{path}: trailing bytes")
        return tuple(axes), DpSolution(
            value=value.reshape((n_stages + 1,) + shape),
            policy=policy.reshape((n_stages,) + shape),
        )
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: truncated or corrupt value cache: {exc}") from exc
