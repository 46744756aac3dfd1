import itertools

import numpy as np
import pytest

from hvo import dp
from hvo.errors import AllInfeasible, InvalidArgument, ParseError


def make_table_problem(next_idx, costs, terminal, state_axis, control_axis, feasible=None):
    """Problem whose transitions land exactly on grid nodes (table-driven).

    next_idx[k][i][u] -> node index of the next state; costs[k][i][u] -> stage
    cost; feasible[k][i][u] -> bool.
    """
    n_stages = len(next_idx)

    def evaluate(k, state, control):
        i = int(np.searchsorted(state_axis, state[0]))
        u = int(np.searchsorted(control_axis, control[0]))
        if feasible is not None and not feasible[k][i][u]:
            return None, np.inf, False
        return (float(state_axis[next_idx[k][i][u]]),), float(costs[k][i][u]), True

    return dp.DpProblem(
        state_axes=(state_axis,),
        control_axes=(control_axis,),
        n_stages=n_stages,
        evaluate=evaluate,
        terminal_cost=lambda s: float(terminal[int(np.searchsorted(state_axis, s[0]))]),
    )


def brute_force(problem, next_idx, costs, terminal, feasible=None):
    """Exhaustive enumeration over all control sequences from every start node."""
    n_stages = len(next_idx)
    n_states = len(next_idx[0])
    n_controls = len(next_idx[0][0])
    best = np.full(n_states, np.inf)
    for i0 in range(n_states):
        for seq in itertools.product(range(n_controls), repeat=n_stages):
            i = i0
            total = 0.0
            ok = True
            for k, u in enumerate(seq):
                if feasible is not None and not feasible[k][i][u]:
                    ok = False
                    break
                total = total + costs[k][i][u]
                i = next_idx[k][i][u]
            if ok:
                total = total + terminal[i]
                if total < best[i0]:
                    best[i0] = total
    return best


def random_problem(rng):
    n_states = int(rng.integers(2, 6))
    n_controls = int(rng.integers(1, 4))
    n_stages = int(rng.integers(1, 5))
    state_axis = np.sort(rng.choice(np.arange(0.0, 20.0), size=n_states, replace=False))
    control_axis = np.arange(float(n_controls))
    next_idx = rng.integers(0, n_states, size=(n_stages, n_states, n_controls))
    costs = rng.integers(0, 50, size=(n_stages, n_states, n_controls)).astype(float)
    terminal = rng.integers(0, 20, size=n_states).astype(float)
    feasible = rng.uniform(size=(n_stages, n_states, n_controls)) > 0.2
    problem = make_table_problem(next_idx, costs, terminal, state_axis, control_axis, feasible)
    return problem, next_idx, costs, terminal, feasible


class TestInterpValue:
    def test_node_exact(self):
        axes = (np.array([0.0, 1.0, 2.0]),)
        values = np.array([5.0, 7.0, 9.0])
        assert dp.interp_value(values, axes, (1.0,)) == 7.0

    def test_linear_between_nodes(self):
        axes = (np.array([0.0, 1.0]),)
        assert dp.interp_value(np.array([0.0, 10.0]), axes, (0.25,)) == pytest.approx(2.5)

    def test_outside_hull(self):
        axes = (np.array([0.0, 1.0]),)
        assert dp.interp_value(np.array([0.0, 1.0]), axes, (1.5,)) == np.inf

    def test_all_infeasible_neighborhood_absorbs(self):
        axes = (np.array([0.0, 1.0, 2.0]),)
        values = np.array([np.inf, np.inf, 3.0])
        assert dp.interp_value(values, axes, (0.5,)) == np.inf

    def test_node_next_to_infeasible_is_usable(self):
        axes = (np.array([0.0, 1.0]),)
        values = np.array([np.inf, 3.0])
        assert dp.interp_value(values, axes, (1.0,)) == 3.0
        assert dp.interp_value(values, axes, (0.0,)) == np.inf

    def test_single_finite_corner_used_inside_cell(self):
        # no blending across the sentinel: the finite corner carries the cell
        axes = (np.array([0.0, 1.0]),)
        values = np.array([np.inf, 3.0])
        assert dp.interp_value(values, axes, (0.5,)) == 3.0

    def test_2d_multilinear(self):
        axes = (np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        values = np.array([[0.0, 0.0], [0.0, 4.0]])
        assert dp.interp_value(values, axes, (0.5, 0.5)) == pytest.approx(1.0)

    def test_2d_second_dim_on_node(self):
        axes = (np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        values = np.array([[1.0, np.inf], [3.0, np.inf]])
        assert dp.interp_value(values, axes, (0.5, 0.0)) == pytest.approx(2.0)


class TestSolveBackward:
    def test_single_path(self):
        problem = make_table_problem(
            next_idx=[[[0]]], costs=[[[1.0]]], terminal=[0.0],
            state_axis=np.array([0.0]), control_axis=np.array([0.0]),
        )
        sol = dp.solve_backward(problem)
        assert sol.value[0][0] == 1.0
        assert sol.policy[0][0] == 0

    def test_three_stage_toy_vs_enumeration(self):
        rng = np.random.default_rng(1234)
        next_idx = rng.integers(0, 3, size=(3, 3, 2))
        costs = rng.integers(0, 9, size=(3, 3, 2)).astype(float)
        terminal = np.array([0.0, 2.0, 5.0])
        axis = np.array([0.0, 1.0, 2.0])
        problem = make_table_problem(next_idx, costs, terminal, axis, np.array([0.0, 1.0]))
        sol = dp.solve_backward(problem)
        expected = brute_force(problem, next_idx, costs, terminal)
        np.testing.assert_array_equal(sol.value[0], expected)

    def test_randomized_oracle_equivalence(self):
        rng = np.random.default_rng(99)
        for _ in range(25):
            problem, next_idx, costs, terminal, feasible = random_problem(rng)
            expected = brute_force(problem, next_idx, costs, terminal, feasible)
            if not np.isfinite(expected).any():
                with pytest.raises(AllInfeasible):
                    dp.solve_backward(problem)
                continue
            sol = dp.solve_backward(problem)
            np.testing.assert_array_equal(sol.value[0], expected)
            for i0, v in enumerate(expected):
                if np.isfinite(v):
                    traj = dp.rollout(problem, sol, (problem.state_axes[0][i0],))
                    assert traj.total_cost == v

    def test_nonnegative_costs_give_nonnegative_values(self):
        rng = np.random.default_rng(7)
        problem, *_ = random_problem(rng)
        try:
            sol = dp.solve_backward(problem)
        except AllInfeasible:
            return
        finite = sol.value[np.isfinite(sol.value)]
        assert np.all(finite >= 0.0)

    def test_prepending_identity_stage_preserves_values(self):
        rng = np.random.default_rng(55)
        next_idx = rng.integers(0, 3, size=(2, 3, 2))
        costs = rng.integers(0, 9, size=(2, 3, 2)).astype(float)
        terminal = np.array([1.0, 0.0, 4.0])
        axis = np.array([0.0, 1.0, 2.0])
        base = make_table_problem(next_idx, costs, terminal, axis, np.array([0.0, 1.0]))
        sol_base = dp.solve_backward(base)

        next2 = np.concatenate([np.tile(np.arange(3)[None, :, None], (1, 1, 2)), next_idx])
        costs2 = np.concatenate([np.zeros((1, 3, 2)), costs])
        ext = make_table_problem(next2, costs2, terminal, axis, np.array([0.0, 1.0]))
        sol_ext = dp.solve_backward(ext)
        np.testing.assert_array_equal(sol_ext.value[1:], sol_base.value)
        np.testing.assert_array_equal(sol_ext.value[0], sol_base.value[0])

    def test_tie_breaks_to_lowest_control_index(self):
        next_idx = [[[0, 0]]]
        costs = [[[3.0, 3.0]]]
        problem = make_table_problem(next_idx, costs, [0.0], np.array([0.0]), np.array([0.0, 1.0]))
        sol = dp.solve_backward(problem)
        assert sol.policy[0][0] == 0

    def test_all_infeasible_raises(self):
        feasible = [[[False]]]
        problem = make_table_problem([[[0]]], [[[1.0]]], [0.0], np.array([0.0]),
                                     np.array([0.0]), feasible)
        with pytest.raises(AllInfeasible):
            dp.solve_backward(problem)


class TestRollout:
    def test_deterministic_single_control_iterates(self):
        # next state = (state + 1) clipped; unique control, states must match
        axis = np.arange(5.0)

        def evaluate(k, state, control):
            return (min(state[0] + 1.0, 4.0),), 1.0, True

        problem = dp.DpProblem((axis,), (np.array([0.0]),), 3, evaluate, lambda s: 0.0)
        sol = dp.solve_backward(problem)
        traj = dp.rollout(problem, sol, (0.0,))
        np.testing.assert_array_equal(traj.states[:, 0], [0.0, 1.0, 2.0, 3.0])

    def test_dead_end_reports_stage(self):
        def evaluate(k, state, control):
            if k == 1:
                return None, np.inf, False
            return (state[0],), 0.0, True

        problem = dp.DpProblem((np.array([0.0]),), (np.array([0.0]),), 3, evaluate, lambda s: 0.0)
        with pytest.raises(AllInfeasible):
            dp.solve_backward(problem)

    def test_rollout_reoptimizes_from_continuous_state(self):
        # value field favors moving toward 0; start off-grid
        axis = np.array([0.0, 1.0, 2.0])
        controls = np.array([-1.0, 0.0, 1.0])

        def evaluate(k, state, control):
            nxt = state[0] + control[0]
            if nxt < 0.0 or nxt > 2.0:
                return None, np.inf, False
            return (nxt,), abs(control[0]), True

        problem = dp.DpProblem((axis,), (controls,), 2, evaluate, lambda s: 10.0 * s[0])
        sol = dp.solve_backward(problem)
        traj = dp.rollout(problem, sol, (1.5,))
        # off-grid start walks down as far as the +-1 steps allow: 1.5 -> 0.5
        np.testing.assert_array_equal(traj.states[:, 0], [1.5, 0.5, 0.5])
        assert traj.total_cost == pytest.approx(1.0 + 0.0 + 5.0)

    def test_terminal_penalty(self):
        assert dp.terminal_soc_penalty(0.6, 0.6, 1000.0) == 0.0
        assert dp.terminal_soc_penalty(0.55, 0.6, 1000.0) == pytest.approx(50.0)
        assert dp.terminal_soc_penalty(0.65, 0.6, 1000.0) == 0.0
        with pytest.raises(InvalidArgument):
            dp.terminal_soc_penalty(0.6, 0.6, 0.0)


class TestValueCache:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1234)
        next_idx = rng.integers(0, 3, size=(3, 3, 2))
        costs = rng.integers(0, 9, size=(3, 3, 2)).astype(float)
        problem = make_table_problem(next_idx, costs, np.zeros(3), np.array([0.0, 1.0, 2.0]),
                                     np.array([0.0, 1.0]))
        sol = dp.solve_backward(problem)
        path = tmp_path / "cache.dpv"
        dp.save_value_field(path, sol, problem.state_axes)
        axes, loaded = dp.load_value_field(path)
        np.testing.assert_array_equal(axes[0], problem.state_axes[0])
        np.testing.assert_array_equal(loaded.value, sol.value)
        np.testing.assert_array_equal(loaded.policy, sol.policy)
        assert path.read_bytes()[:4] == b"DPV1"

    def test_truncated_raises(self, tmp_path):
        rng = np.random.default_rng(1234)
        next_idx = rng.integers(0, 3, size=(3, 3, 2))
        costs = rng.integers(0, 9, size=(3, 3, 2)).astype(float)
        problem = make_table_problem(next_idx, costs, np.zeros(3), np.array([0.0, 1.0, 2.0]),
                                     np.array([0.0, 1.0]))
        sol = dp.solve_backward(problem)
        path = tmp_path / "cache.dpv"
        dp.save_value_field(path, sol, problem.state_axes)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(ParseError):
            dp.load_value_field(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dpv"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ParseError):
            dp.load_value_field(path)
