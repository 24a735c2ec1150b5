import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import truncation_instance
from multires.transport import (
    DimensionMismatchError,
    EmpiricalMeasure,
    InversePairError,
    LinearMap,
    MalformedLayoutError,
    UnsupportedModeError,
    lipschitz_estimate,
    load_maps,
    load_measure,
    project_measure,
    pushforward,
    same_measure,
    save_measure,
    truncation_gap,
    wasserstein2,
)
from multires.wavelet import HierarchySpec


def brute_w2(a, b):
    n = len(a)
    best = min(
        sum(np.sum((a[i] - b[p[i]]) ** 2) for i in range(n)) / n
        for p in itertools.permutations(range(n))
    )
    return np.sqrt(best)


class TestWasserstein:
    def test_diracs(self):
        a, b = np.array([1.0, 2.0]), np.array([-2.0, 6.0])
        assert wasserstein2(EmpiricalMeasure.dirac(a), EmpiricalMeasure.dirac(b)) == pytest.approx(5.0)

    def test_identical(self):
        mu = EmpiricalMeasure.uniform(np.random.default_rng(0).normal(size=(5, 3)))
        assert wasserstein2(mu, mu) == 0.0

    def test_four_points_matches_permutations(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        got = wasserstein2(EmpiricalMeasure.uniform(a), EmpiricalMeasure.uniform(b))
        assert got == pytest.approx(brute_w2(a, b), rel=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 6])
    def test_brute_force_small(self, n):
        rng = np.random.default_rng(n)
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        got = wasserstein2(EmpiricalMeasure.uniform(a), EmpiricalMeasure.uniform(b))
        assert got == pytest.approx(brute_w2(a, b), rel=1e-12)

    def test_symmetry_and_multiset(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(6, 2))
        mu = EmpiricalMeasure.uniform(a)
        nu = EmpiricalMeasure.uniform(a[::-1])
        assert wasserstein2(mu, nu) == 0.0
        b = rng.normal(size=(6, 2))
        other = EmpiricalMeasure.uniform(b)
        assert wasserstein2(mu, other) == wasserstein2(other, mu)
        assert wasserstein2(mu, other) > 0

    def test_triangle(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            m = [EmpiricalMeasure.uniform(rng.normal(size=(7, 3))) for _ in range(3)]
            assert wasserstein2(m[0], m[2]) <= wasserstein2(m[0], m[1]) + wasserstein2(m[1], m[2]) + 1e-9

    def test_merged_atoms_expand(self):
        mu = EmpiricalMeasure([[0.0], [1.0]], [0.75, 0.25])
        nu = EmpiricalMeasure.uniform([[0.0], [0.0], [0.0], [3.0]])
        # optimal plan moves the 1/4 mass at 1 to 3
        assert wasserstein2(mu, nu) == pytest.approx(np.sqrt(0.25 * 4.0))

    def test_errors(self):
        with pytest.raises(DimensionMismatchError):
            wasserstein2(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([0.0, 1.0]))
        irrational = EmpiricalMeasure([[0.0], [1.0]], [1 / np.pi, 1 - 1 / np.pi])
        with pytest.raises(UnsupportedModeError):
            wasserstein2(irrational, EmpiricalMeasure.uniform([[0.0], [1.0]]))


class TestPushforward:
    def test_identity(self):
        mu = EmpiricalMeasure.uniform(np.random.default_rng(4).normal(size=(5, 3)))
        assert same_measure(pushforward(mu, LinearMap(np.eye(3))), mu)

    def test_zero_map_is_dirac(self):
        mu = EmpiricalMeasure.uniform(np.random.default_rng(5).normal(size=(5, 3)))
        merged = pushforward(mu, LinearMap(np.zeros((2, 3)))).merged()
        assert merged.size == 1
        np.testing.assert_array_equal(merged.points, [[0.0, 0.0]])
        assert merged.weights[0] == pytest.approx(1.0)

    def test_rotation_preserves_w2(self):
        rng = np.random.default_rng(6)
        mu = EmpiricalMeasure.uniform(rng.normal(size=(8, 3)))
        nu = EmpiricalMeasure.uniform(rng.normal(size=(8, 3)))
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        rot = LinearMap(q)
        assert wasserstein2(pushforward(mu, rot), pushforward(nu, rot)) == pytest.approx(
            wasserstein2(mu, nu), rel=1e-12
        )

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            pushforward(EmpiricalMeasure.dirac([1.0, 2.0]), LinearMap(np.eye(3)))


class TestProjectMeasure:
    def test_already_coarse(self):
        pts = np.zeros((3, 8))
        pts[:, :2] = np.random.default_rng(7).normal(size=(3, 2))
        mu = EmpiricalMeasure.uniform(pts)
        assert same_measure(project_measure(mu, 1), mu)

    def test_fine_details_only(self):
        pts = np.zeros(8)
        pts[4:] = [1.0, -2.0, 3.0, 0.5]
        out = project_measure(EmpiricalMeasure.dirac(pts), 2)
        np.testing.assert_array_equal(out.points, np.zeros((1, 8)))

    def test_removed_energy(self):
        rng = np.random.default_rng(8)
        mu = EmpiricalMeasure.uniform(rng.normal(size=(10, 16)))
        removed = mu.second_moment() - project_measure(mu, 1).second_moment()
        # bands between level 1 and 4 occupy coordinates 2..15
        direct = sum(np.mean(np.sum(mu.points[:, 2**i : 2 ** (i + 1)] ** 2, axis=1)) for i in range(1, 4))
        assert removed == pytest.approx(direct, rel=1e-12)

    def test_idempotent(self):
        mu = EmpiricalMeasure.uniform(np.random.default_rng(9).normal(size=(4, 16)))
        once = project_measure(mu, 2)
        assert same_measure(project_measure(once, 2), once)

    def test_2d_layout(self):
        mu = EmpiricalMeasure.uniform(np.ones((2, 16)))
        out = project_measure(mu, 1, ndim=2)
        assert np.all(out.points[:, :4] == 1) and np.all(out.points[:, 4:] == 0)

    def test_malformed(self):
        with pytest.raises(MalformedLayoutError):
            project_measure(EmpiricalMeasure.dirac(np.zeros(6)), 1)


class TestLipschitz:
    def test_identity(self):
        assert lipschitz_estimate(LinearMap(np.eye(3))) == pytest.approx(1.0, rel=1e-12)

    def test_diagonal(self):
        assert lipschitz_estimate(LinearMap(np.diag([2.0, 1.0]))) == pytest.approx(2.0, rel=1e-10)

    def test_zero(self):
        assert lipschitz_estimate(LinearMap(np.zeros((2, 2)))) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_svd(self, seed):
        a = np.random.default_rng(seed).normal(size=(6, 6))
        sigma = np.linalg.svd(a, compute_uv=False)[0]
        est = lipschitz_estimate(LinearMap(a))
        assert abs(est - sigma) <= 1e-6 * sigma
        assert est >= sigma * (1 - 1e-8)

    def test_submultiplicative(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            a, b = LinearMap(rng.normal(size=(4, 5))), LinearMap(rng.normal(size=(5, 3)))
            assert lipschitz_estimate(a.compose(b)) <= lipschitz_estimate(a) * lipschitz_estimate(b) + 1e-8


class TestTruncationGap:
    def test_coarse_data_identity_maps(self):
        pts = np.zeros((16, 8))
        pts[:, 0] = np.random.default_rng(11).normal(size=16)
        eye = [LinearMap(np.eye(2**j)) for j in range(1, 4)]
        rep = truncation_gap(EmpiricalMeasure.uniform(pts), eye, eye, HierarchySpec((0, 0.2, 0.4, 0.6)))
        assert rep.lhs_sum == 0.0 and rep.w2_squared == pytest.approx(0.0, abs=1e-24)
        assert rep.holds

    def test_rotation_into_details(self):
        rng = np.random.default_rng(12)
        data = EmpiricalMeasure.uniform(rng.normal(size=(16, 8)))
        fwd, bwd = [], []
        for j in range(1, 4):
            d = 2**j
            # reverse coordinate order: coarse energy is pushed to the detail band
            perm = np.eye(d)[::-1]
            fwd.append(LinearMap(perm))
            bwd.append(LinearMap(perm.T))
        rep = truncation_gap(data, fwd, bwd)
        assert rep.lhs_sum > 0
        assert rep.holds
        assert rep.w2_squared <= rep.coupling_cost + 1e-12

    def test_random_instances(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            rep = truncation_gap(*truncation_instance(rng))
            assert rep.holds, rep.to_dict()

    def test_lhs_terms_direct(self):
        # identity maps: each term is exactly the data energy in that band
        rng = np.random.default_rng(14)
        data = EmpiricalMeasure.uniform(rng.normal(size=(16, 8)))
        eye = [LinearMap(np.eye(2**j)) for j in range(1, 4)]
        rep = truncation_gap(data, eye, eye)
        for j in range(1, 4):
            band = data.points[:, 2 ** (j - 1) : 2**j]
            assert rep.lhs_terms[j - 1] == pytest.approx(np.mean(np.sum(band**2, axis=1)))
        assert rep.coupling_cost == pytest.approx(rep.lhs_sum)

    def test_inverse_pair_violation(self):
        data = EmpiricalMeasure.uniform(np.ones((4, 4)))
        fwd = [LinearMap(np.eye(2)), LinearMap(2 * np.eye(4))]
        with pytest.raises(InversePairError):
            truncation_gap(data, fwd, [LinearMap(np.eye(2)), LinearMap(np.eye(4))])


def test_measure_json_round_trip(tmp_path):
    mu = EmpiricalMeasure([[0.1, 0.2], [1 / 3, 2.0]], [0.25, 0.75])
    save_measure(tmp_path / "m.json", mu)
    back = load_measure(tmp_path / "m.json")
    np.testing.assert_array_equal(back.points, mu.points)
    np.testing.assert_array_equal(back.weights, mu.weights)


def test_maps_file_without_backwards(tmp_path):
    import json

    (tmp_path / "maps.json").write_text(json.dumps({"forwards": [[[2.0, 0.0], [0.0, 1.0]]], "times": [0, 0.5]}))
    fwd, bwd, hier = load_maps(tmp_path / "maps.json")
    np.testing.assert_allclose(bwd[0].matrix, [[0.5, 0.0], [0.0, 1.0]])
    assert hier.levels == 1



@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_w2_metric_properties(n, d, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (EmpiricalMeasure.uniform(rng.normal(size=(n, d))) for _ in range(3))
    ab = wasserstein2(a, b)
    assert ab == pytest.approx(wasserstein2(b, a), rel=1e-12, abs=1e-15)
    assert ab <= wasserstein2(a, c) + wasserstein2(c, b) + 1e-12
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    rot = LinearMap(q)
    assert wasserstein2(pushforward(a, rot), pushforward(b, rot)) == pytest.approx(ab, rel=1e-9, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_truncation_bound_property(seed):
    assert truncation_gap(*truncation_instance(np.random.default_rng(seed))).holds
