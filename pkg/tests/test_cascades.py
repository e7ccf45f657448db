import numpy as np
import pytest

from rostlab.cascades import (
    RpcSpec,
    build_rpc,
    build_two_sphere,
    build_uncoupled_rem,
    pd_invariance_check,
    pd_moment,
    rem_ensemble,
    rpc_ensemble,
    sample_poisson_dirichlet,
    truncation_shift,
    two_sphere_overlaps,
)
from rostlab.measures import (
    catalog,
    exact_moments,
    moment_vector,
    support_radii,
    ultrametricity_score,
)
from rostlab.rng import substream


class TestPoissonDirichlet:
    def test_sorted_and_normalized(self):
        pd = sample_poisson_dirichlet(0.5, 500, substream(0, "pd"))
        assert np.all(np.diff(pd.weights) <= 0)
        assert pd.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(pd.weights > 0)

    def test_exponent_bounds(self):
        rng = substream(1, "pd")
        for x in (0.0, 1.0, -0.2, 1.3):
            with pytest.raises(ValueError):
                sample_poisson_dirichlet(x, 10, rng)
        with pytest.raises(ValueError):
            sample_poisson_dirichlet(0.5, 1, rng)

    def test_second_moment_matches_high_m_oracle(self):
        # independent high-M oracle for E[sum w^2]; confirms the analytic
        # target 1 - x before the target is used anywhere else
        x = 0.5
        rng = substream(2, "pd-oracle")
        reps = 4000
        vals = np.empty(reps)
        for r in range(reps):
            vals[r] = pd_moment(sample_poisson_dirichlet(x, 100_000, rng).weights, 2)
        oracle, oracle_se = vals.mean(), vals.std(ddof=1) / np.sqrt(reps)
        assert abs(oracle - (1 - x)) < 4 * oracle_se
        # the working truncation reproduces the oracle value within 4 sigma
        small = np.array([
            pd_moment(sample_poisson_dirichlet(x, 10_000, rng).weights, 2)
            for _ in range(reps)])
        z = (small.mean() - oracle) / np.hypot(oracle_se,
                                               small.std(ddof=1) / np.sqrt(reps))
        assert abs(z) < 4

    def test_largest_weight_median_decreases_in_x(self):
        rng = substream(3, "pd-med")
        medians = []
        for x in (0.3, 0.5, 0.7, 0.9):
            tops = [sample_poisson_dirichlet(x, 2000, rng).weights[0]
                    for _ in range(400)]
            medians.append(np.median(tops))
        assert all(medians[i + 1] < medians[i] for i in range(3))


class TestPdInvariance:
    def test_lambda_zero_noise_level(self):
        rep = pd_invariance_check(0.5, 0.0, 2000, reps=400, seed=1)
        assert rep.max_abs_z() < 4

    def test_invariance_at_default_budgets(self):
        for x in (0.3, 0.5, 0.7):
            rep = pd_invariance_check(x, 1.0, 10_000, reps=800, seed=2)
            assert rep.max_abs_z() < 4, (x, rep.max_abs_z())

    def test_truncation_sensitivity(self):
        # doubling M moves each moment by less than its stderr
        out = truncation_shift(
            lambda M, rng: sample_poisson_dirichlet(0.5, M, rng).weights,
            lambda w: pd_moment(w, 2), M=2000, reps=600, seed=3)
        assert abs(out["shift"]) < 2 * out["pooled_stderr"]


class TestRpcSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            RpcSpec(x=(0.7, 0.3), q=(0.0, 0.5, 1.0))
        with pytest.raises(ValueError):
            RpcSpec(x=(0.5,), q=(0.5, 0.2))
        with pytest.raises(ValueError):
            RpcSpec(x=(0.5,), q=(0.0, 0.5), M=1)

    def test_overlap_law(self):
        spec = RpcSpec(x=(0.3, 0.7), q=(0.1, 0.5, 0.9))
        vals, probs = spec.overlap_law()
        assert probs.sum() == pytest.approx(1.0)
        assert np.allclose(probs, [0.3, 0.4, 0.3])
        assert spec.overlap_moment(1) == pytest.approx(0.1 * 0.3 + 0.5 * 0.4 + 0.9 * 0.3)

    def test_json_round_trip(self):
        spec = RpcSpec(x=(0.25, 0.5), q=(0.0, 0.3, 0.8), M=64)
        assert RpcSpec.from_json(spec.to_json()) == spec


class TestBuildRpc:
    def test_one_level_overlaps_zero_one(self):
        spec = RpcSpec(x=(0.5,), q=(0.0, 1.0), M=64)
        m = build_rpc(spec, substream(4, "rpc"))
        m.validate()
        ii = np.repeat(np.arange(8), 8)
        jj = np.tile(np.arange(8), 8)
        vals = set(np.round(m.pair_overlaps(ii, jj), 12))
        assert vals <= {0.0, 1.0}
        e = rpc_ensemble(spec, 5, seed=0)
        rate, _ = ultrametricity_score(e, 3000, seed=1)
        assert rate == 0.0

    def test_two_level_triples_ultrametric(self):
        spec = RpcSpec(x=(0.3, 0.6), q=(0.05, 0.4, 0.9), M=20)
        e = rpc_ensemble(spec, 8, seed=2)
        rate, worst = ultrametricity_score(e, 5000, seed=3)
        assert rate == 0.0 and worst <= 1e-12

    def test_q12_composition_oracle(self):
        # E q12 = q1 * E[sum w^2] for the one-level cascade; cross-checked through
        # the generic moment machinery
        q1 = 0.7
        spec = RpcSpec(x=(0.4,), q=(0.0, q1), M=1000)
        e = rpc_ensemble(spec, 150, seed=4)
        rep = moment_vector(e, catalog("q12"), mode="mc", budget=50_000, seed=5)
        target = q1 * (1 - 0.4)
        ent = rep.entry("q12")
        assert abs(ent.estimate - target) < 4 * ent.stderr + 0.01  # truncation slack

    def test_atom_count_guard(self):
        with pytest.raises(ValueError):
            build_rpc(RpcSpec(x=(0.3, 0.6), q=(0.0, 0.5, 1.0), M=1000),
                      substream(0, "big"))

    def test_weights_are_path_products(self):
        spec = RpcSpec(x=(0.3, 0.6), q=(0.0, 0.5, 1.0), M=3)
        m = build_rpc(spec, substream(5, "prod"))
        w = m.weights.reshape(3, 3)
        # within each level-1 block the conditional weights sum to the block mass
        assert np.allclose(w.sum(axis=1).sum(), 1.0)


class TestTwoSphere:
    def test_constraint_solved_exactly(self):
        q1, q2 = two_sphere_overlaps(0.25, 0.5)
        assert (q1, q2) == pytest.approx((0.4, 0.6), abs=1e-15)
        assert abs((1 - 0.25) * q1 - (1 - 0.5) * q2) < 1e-14
        assert q1 + q2 == pytest.approx(1.0, abs=1e-15)

    def test_radii(self):
        m = build_two_sphere(0.25, 0.5, 400, substream(6, "ts"))
        r_min, r_max = support_radii(m)
        assert r_min == pytest.approx(np.sqrt(0.4), abs=1e-12)
        assert r_max == pytest.approx(np.sqrt(0.6), abs=1e-12)

    def test_rejects_equal_exponents(self):
        with pytest.raises(ValueError):
            two_sphere_overlaps(0.5, 0.5)

    def test_block_mass_modes(self):
        m_half = build_two_sphere(0.3, 0.6, 100, substream(7, "a"), "half")
        assert m_half.weights[:100].sum() == pytest.approx(0.5, abs=1e-12)
        m_ppp = build_two_sphere(0.3, 0.6, 100, substream(7, "b"), "ppp")
        assert m_ppp.weights[:100].sum() != pytest.approx(0.5, abs=1e-6)


class TestUncoupledRem:
    def test_witness_gram_entries(self):
        M = 30
        m = build_uncoupled_rem(0.3, 0.6, M, substream(8, "rem"))
        # atoms (1,1), (1,2), (2,2) in 1-based block labels
        a_11, a_12, a_22 = 0, 1, M + 1
        assert m.pair_overlaps(np.array([a_11]), np.array([a_12]))[0] == 0.5
        assert m.pair_overlaps(np.array([a_11]), np.array([a_22]))[0] == 0.0
        assert m.pair_overlaps(np.array([a_12]), np.array([a_22]))[0] == 0.5
        assert np.all(m.overlap_diag() == 1.0)

    def test_ultrametric_violations_witnessed(self):
        e = rem_ensemble(0.3, 0.6, 40, size=5, seed=9)
        rate, worst = ultrametricity_score(e, 20_000, seed=10)
        assert rate > 0.0
        assert worst == pytest.approx(0.5, abs=1e-12)

    def test_guard(self):
        with pytest.raises(ValueError):
            build_uncoupled_rem(0.3, 0.6, 400, substream(0, "g"))

    def test_every_built_measure_validates(self):
        rng = substream(11, "val")
        build_two_sphere(0.2, 0.7, 200, rng).validate()
        build_uncoupled_rem(0.2, 0.7, 50, rng).validate()
        build_rpc(RpcSpec(x=(0.5,), q=(0.1, 0.9), M=100), rng).validate()
