import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rostlab.cascades import RpcSpec, build_rpc, rpc_ensemble
from rostlab.gibbs import enumerate_gibbs
from rostlab.measures import (
    CoordMeasure,
    GramMeasure,
    Monomial,
    OrthogonalMeasure,
    catalog,
    effective_dimension,
    exact_moments,
    fixed_ensemble,
    gibbs_ensemble,
    mc_moments,
    measure_from_gram,
    measure_from_json,
    measure_to_json,
    moment_vector,
    orthonormal_measure,
    pivoted_cholesky,
    rost_distance,
    rost_from_gibbs,
    sample_overlap_matrix,
    single_atom_measure,
    support_radii,
    ultrametricity_score,
)
from rostlab.rng import substream
from rostlab.spin_models import MixedCouplings, ModelDescriptor, build_disorder


def uniform_gibbs_rost(n, kernel="r"):
    d = build_disorder("sk", n, MixedCouplings.sk(0.5), seed=17)
    return rost_from_gibbs(enumerate_gibbs(d, 0.0), kernel)


class TestMonomial:
    def test_parse_and_name(self):
        m = Monomial.parse("q12^2*q13")
        assert m.name == "q12^2*q13"
        assert m.n_replicas == 3

    def test_duplicate_edges_merge(self):
        m = Monomial((((1, 2), 1), ((2, 1), 2)))
        assert m.edges == (((1, 2), 3),)

    def test_rejects_self_pair(self):
        with pytest.raises(ValueError):
            Monomial((((1, 1), 1),))

    @given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)),
                    min_size=1, max_size=4))
    @settings(max_examples=50, deadline=None)
    def test_parse_round_trip(self, raw):
        edges = tuple(((a, b), k) for a, b, k in raw if a != b)
        if not edges:
            return
        m = Monomial(edges)
        assert Monomial.parse(m.name) == m


class TestValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            OrthogonalMeasure([0.4, 0.4], [1.0, 1.0])

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            OrthogonalMeasure([1.5, -0.5], [1.0, 1.0])

    def test_gram_psd_validation(self):
        bad = np.array([[1.0, 0.999], [0.999, 0.5]])  # not PSD-compatible? it is PSD
        good = measure_from_gram([0.5, 0.5], np.array([[1.0, 0.3], [0.3, 0.9]]))
        good.validate()
        with pytest.raises(ValueError):
            measure_from_gram([0.5, 0.5], np.array([[1.0, 1.2], [1.2, 1.0]]))

    def test_diagonal_range(self):
        with pytest.raises(ValueError):
            measure_from_gram([1.0], np.array([[1.5]]))

    def test_pivoted_cholesky_reconstruction(self):
        rng = substream(3, "pc")
        V = rng.standard_normal((12, 4)) * 0.25
        G = V @ V.T
        L = pivoted_cholesky(G)
        assert np.abs(G - L @ L.T).max() < 1e-8 * G.shape[0]


class TestFromGibbs:
    def test_beta_zero_uniform_n2(self):
        d = build_disorder("sk", 2, MixedCouplings.sk(0.5), seed=0)
        m = rost_from_gibbs(enumerate_gibbs(d, 0.0), "r")
        assert np.allclose(m.weights, 0.25)
        G = m.gram()
        assert np.allclose(np.diag(G), 1.0)
        assert set(np.round(G.ravel(), 12)) <= {-1.0, 0.0, 1.0}

    def test_r2_is_square_of_r(self):
        d = build_disorder("sk", 4, MixedCouplings.sk(0.5), seed=1)
        t = enumerate_gibbs(d, 0.7)
        m_r = rost_from_gibbs(t, "r")
        m_r2 = rost_from_gibbs(t, "r2")
        # r2 merges each configuration with its flip; compare moments instead
        e2 = exact_moments(m_r, catalog("q12^2", "q12^4"))
        e1 = exact_moments(m_r2, catalog("q12", "q12^2"))
        assert np.allclose(e2, e1, rtol=1e-10)

    def test_diagonal_is_one(self):
        for kernel in ("r", "r2"):
            m = uniform_gibbs_rost(5, kernel)
            assert np.allclose(m.overlap_diag(), 1.0)

    def test_ea_kernel(self):
        d = build_disorder("ea", 6, seed=3, lattice=(2, 3))
        t = enumerate_gibbs(d, 0.5)
        m = rost_from_gibbs(t, "ea-edge", disorder=d)
        assert np.allclose(m.overlap_diag(), 1.0)
        m.validate()

    def test_duplicate_merge_halves_even_p_table(self):
        m = uniform_gibbs_rost(5, "r2")
        assert m.n_atoms == 16  # 2^5 configurations merged with their flips
        assert np.isclose(m.weights.sum(), 1.0)


class TestSampling:
    def test_single_atom_matrix(self):
        m = single_atom_measure(0.49)
        Q = sample_overlap_matrix(m, 3, substream(0, "s"))
        assert np.allclose(np.diag(Q), 1.0)
        off = Q[~np.eye(3, dtype=bool)]
        assert np.allclose(off, 0.49)

    def test_two_orthogonal_atoms_distribution(self):
        m = OrthogonalMeasure([0.5, 0.5], [0.7, 0.7])
        rng = substream(1, "s")
        vals = [sample_overlap_matrix(m, 2, rng)[0, 1] for _ in range(4000)]
        vals = np.array(vals)
        assert set(np.round(vals, 12)) <= {0.0, 0.7}
        frac = np.mean(vals == 0.7)
        assert abs(frac - 0.5) < 4 * np.sqrt(0.25 / vals.size)

    def test_multinomial_frequencies(self):
        w = np.array([0.5, 0.3, 0.2])
        m = orthonormal_measure(w)
        rng = substream(2, "s")
        n = 100_000
        idx = rng.choice(3, size=(n, 2), p=w)
        same = idx[:, 0] == idx[:, 1]
        p_same = float((w**2).sum())
        assert abs(same.mean() - p_same) < 4 * np.sqrt(p_same * (1 - p_same) / n)

    def test_rejects_single_replica(self):
        with pytest.raises(ValueError):
            sample_overlap_matrix(single_atom_measure(), 1, substream(0, "x"))


class TestMoments:
    def test_single_atom_q12_is_norm(self):
        m = single_atom_measure(0.3)
        assert exact_moments(m, catalog("q12"))[0] == pytest.approx(0.3)

    def test_two_orthogonal_unit_atoms(self):
        m = orthonormal_measure([0.5, 0.5])
        assert exact_moments(m, catalog("q12"))[0] == pytest.approx(0.5)

    def test_exact_matches_mc_small_measure(self):
        # K <= 100, s <= 3: the two modes agree within 4 pooled stderr
        d = build_disorder("sk", 6, MixedCouplings.sk(0.6), seed=4)
        m = rost_from_gibbs(enumerate_gibbs(d, 0.9), "r")
        monos = catalog("q12", "q12^2", "q12*q13", "q12*q13*q23")
        exact = exact_moments(m, monos)
        reps = 24
        est = np.empty((reps, len(monos)))
        for r in range(reps):
            est[r] = mc_moments(m, monos, 20_000, substream(7, "mc", r))
        se = est.std(axis=0, ddof=1) / np.sqrt(reps)
        z = (est.mean(axis=0) - exact) / se
        assert np.all(np.abs(z) < 4)

    def test_exact_mode_guard(self):
        rng = substream(9, "guard")
        V = rng.standard_normal((300, 2)) * 0.2
        m = CoordMeasure(np.full(300, 1 / 300), V)
        with pytest.raises(ValueError):
            exact_moments(m, catalog("q12*q34"))

    def test_isometry_invariance(self):
        # moments depend only on (weights, gram): rotate the coordinates
        rng = substream(5, "iso")
        V = rng.standard_normal((8, 3)) * 0.3
        w = np.full(8, 1 / 8)
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        a = CoordMeasure(w, V)
        b = CoordMeasure(w, V @ Q)
        monos = catalog("q12", "q12^2", "q12*q13")
        assert np.allclose(exact_moments(a, monos), exact_moments(b, monos), atol=1e-12)

    def test_coordinates_reproduce_gram(self):
        rng = substream(6, "coords")
        V = rng.standard_normal((10, 4)) * 0.2
        m = measure_from_gram(np.full(10, 0.1), V @ V.T)
        W = m.coords()
        assert np.abs(W @ W.T - V @ V.T).max() < 1e-8

    def test_moment_vector_over_ensemble(self):
        e = rpc_ensemble(RpcSpec(x=(0.5,), q=(0.0, 0.8), M=200), size=50, seed=3)
        rep = moment_vector(e, catalog("q12"), mode="mc", budget=20_000, seed=1)
        # E q12 = q * E[sum w^2] = 0.8 * 0.5
        assert rep.entry("q12").estimate == pytest.approx(0.4, abs=5 * rep.entry("q12").stderr + 0.02)


class TestDistance:
    def test_identical_reports_zero(self):
        e = fixed_ensemble(orthonormal_measure([0.6, 0.4]), 10)
        r1 = moment_vector(e, catalog("q12", "q12^2"), mode="exact", seed=0)
        r2 = moment_vector(e, catalog("q12", "q12^2"), mode="exact", seed=0)
        d, z = rost_distance(r1, r2)
        assert d == 0.0 and z == 0.0

    def test_same_ensemble_two_seeds(self):
        e1 = rpc_ensemble(RpcSpec(x=(0.5,), q=(0.0, 1.0), M=300), 80, seed=1)
        e2 = rpc_ensemble(RpcSpec(x=(0.5,), q=(0.0, 1.0), M=300), 80, seed=2)
        monos = catalog("q12", "q12^2")
        r1 = moment_vector(e1, monos, mode="mc", budget=20_000, seed=5)
        r2 = moment_vector(e2, monos, mode="mc", budget=20_000, seed=6)
        _, z = rost_distance(r1, r2)
        assert z < 4

    def test_uniform_gibbs_vs_rpc_separation(self):
        monos = catalog("q12")
        gibbs_e = gibbs_ensemble(ModelDescriptor.sk(6, 0.5), 0.0, "r", 20, seed=1)
        rpc_e = rpc_ensemble(RpcSpec(x=(0.5,), q=(0.0, 1.0), M=300), 20, seed=2)
        r1 = moment_vector(gibbs_e, monos, mode="exact", seed=3)
        r2 = moment_vector(rpc_e, monos, mode="mc", budget=20_000, seed=4)
        d, z = rost_distance(r1, r2)
        assert d > 0.3  # 0 for the uniform measure vs ~0.5 for the cascade
        assert z > 4

    def test_catalog_mismatch(self):
        e = fixed_ensemble(orthonormal_measure([1.0]), 4)
        r1 = moment_vector(e, catalog("q12"), mode="exact", seed=0)
        r2 = moment_vector(e, catalog("q12^2"), mode="exact", seed=0)
        with pytest.raises(ValueError):
            rost_distance(r1, r2)


class TestDiagnostics:
    def test_single_atom_dimension(self):
        assert effective_dimension(single_atom_measure(1.0)) == 1

    def test_orthogonal_dimension(self):
        for k in (2, 5, 9):
            m = orthonormal_measure(np.full(k, 1.0 / k))
            assert effective_dimension(m) == k

    def test_rpc_dimension_matches_dense_eigensolver(self):
        spec = RpcSpec(x=(0.4, 0.7), q=(0.1, 0.5, 0.9), M=4)
        tree = build_rpc(spec, substream(4, "rpc"))
        dim = effective_dimension(tree)
        G = tree.gram()
        sw = np.sqrt(tree.weights)
        lam = np.linalg.eigvalsh(sw[:, None] * G * sw[None, :])
        tr = float((tree.weights * tree.overlap_diag()).sum())
        assert dim == int(np.sum(lam > 1e-8 * tr))
        assert dim == tree.n_atoms  # generic q's: one dimension per leaf

    def test_support_radii_single_atom(self):
        assert support_radii(single_atom_measure(1.0)) == (1.0, 1.0)

    def test_support_radii_sphere(self):
        m = OrthogonalMeasure(np.full(5, 0.2), np.full(5, 0.36))
        assert support_radii(m) == (0.6, 0.6)

    def test_radii_exclude_zero_weight_atoms(self):
        m = OrthogonalMeasure([1.0 - 1e-16, 1e-16], [0.25, 1.0])
        assert support_radii(m) == (0.5, 0.5)

    def test_ultrametricity_single_atom(self):
        e = fixed_ensemble(single_atom_measure(0.8), 3)
        rate, worst = ultrametricity_score(e, 500, seed=0)
        assert rate == 0.0 and worst == 0.0

    def test_ultrametricity_rpc_exact_zero(self):
        e = rpc_ensemble(RpcSpec(x=(0.3, 0.6), q=(0.0, 0.4, 1.0), M=12), 5, seed=1)
        rate, worst = ultrametricity_score(e, 5000, seed=2)
        assert rate == 0.0
        assert worst <= 1e-12


class TestSerialization:
    def test_json_round_trip(self):
        rng = substream(8, "ser")
        V = rng.standard_normal((6, 2)) * 0.3
        m = measure_from_gram(np.full(6, 1 / 6), V @ V.T, label="demo")
        back = measure_from_json(measure_to_json(m))
        assert back.label == "demo"
        assert np.allclose(back.gram(), m.gram(), atol=1e-15)
        assert np.allclose(back.weights, m.weights)


class TestEnsemble:
    def test_draws_are_deterministic(self):
        e = rpc_ensemble(RpcSpec(x=(0.5,), q=(0.0, 1.0), M=50), 5, seed=9)
        a = e.draw(2).weights
        b = e.draw(2).weights
        assert np.array_equal(a, b)

    def test_out_of_range(self):
        e = fixed_ensemble(single_atom_measure(), 3)
        with pytest.raises(IndexError):
            e.draw(3)
