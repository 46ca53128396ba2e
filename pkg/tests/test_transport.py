import numpy as np
import pytest

from oracles import oracle_lp_cost
from tikzmill.transport import (
    TransportPlan,
    solve_transport_entropic,
    solve_transport_exact,
)


class TestExactSolver:
    def test_single_cell_forced(self):
        plan = solve_transport_exact(np.array([[0.7]]))
        assert plan.flow == pytest.approx(np.array([[1.0]]))
        assert plan.cost == pytest.approx(0.7)

    def test_identity_cost_zero(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 3))
        # self-distance matrix has a zero diagonal
        dist = 1.0 - (x / np.linalg.norm(x, axis=1, keepdims=True)) @ (
            x / np.linalg.norm(x, axis=1, keepdims=True)
        ).T
        plan = solve_transport_exact(np.clip(dist, 0, 2))
        assert plan.cost == pytest.approx(0.0, abs=1e-12)

    def test_derived_two_by_two(self):
        # rows {e1, e2} vs columns {e1, e1}: half the mass moves at distance 1
        plan = solve_transport_exact(np.array([[0.0, 0.0], [1.0, 1.0]]))
        assert plan.cost == pytest.approx(0.5, abs=1e-12)

    def test_matches_lp_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            m, n = rng.integers(1, 7, size=2)
            dist = rng.uniform(0.0, 2.0, size=(m, n))
            plan = solve_transport_exact(dist)
            plan.validate()
            assert plan.cost == pytest.approx(oracle_lp_cost(dist), abs=1e-9)

    def test_marginals(self):
        rng = np.random.default_rng(1)
        plan = solve_transport_exact(rng.uniform(0, 2, size=(4, 6)))
        plan.validate(tol=1e-12)
        assert plan.flow.sum() == pytest.approx(1.0)

    def test_degenerate_rows_match_general_path(self):
        rng = np.random.default_rng(2)
        for shape in [(1, 5), (5, 1), (1, 1)]:
            dist = rng.uniform(0, 2, size=shape)
            forced = solve_transport_exact(dist)
            assert forced.cost == pytest.approx(oracle_lp_cost(dist), abs=1e-9)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            solve_transport_exact(np.array([[np.inf]]))
        with pytest.raises(ValueError):
            solve_transport_exact(np.zeros((0, 3)))


class TestEntropicSolver:
    def test_close_to_exact_at_small_epsilon(self):
        rng = np.random.default_rng(5)
        dist = rng.uniform(0, 2, size=(5, 4))
        exact = solve_transport_exact(dist)
        approx = solve_transport_entropic(dist, epsilon=0.005)
        assert approx.cost == pytest.approx(exact.cost, abs=1e-4)

    def test_marginals_satisfied(self):
        rng = np.random.default_rng(6)
        plan = solve_transport_entropic(rng.uniform(0, 2, size=(6, 3)), epsilon=0.1)
        plan.validate(tol=1e-6)

    def test_rejects_nonpositive_epsilon(self):
        with pytest.raises(ValueError):
            solve_transport_entropic(np.ones((2, 2)), epsilon=0.0)


class TestPlanValidation:
    def test_validate_flags_broken_marginals(self):
        plan = TransportPlan(flow=np.array([[0.9, 0.0], [0.0, 0.1]]), cost=0.0)
        with pytest.raises(ValueError):
            plan.validate()
