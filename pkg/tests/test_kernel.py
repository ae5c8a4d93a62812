import json
import math

import numpy as np
import pytest

from fermidiag import (
    KMatrixBundle,
    Momentum,
    Potential,
    build_K,
    build_bundles,
    build_db,
    build_fermi_system,
    build_patch_scheme,
    cosh_2K_minus_identity,
)
from fermidiag.kernel import DbMatrices, NoActivePatchesError, SpdError


def test_potential_is_even():
    pot = Potential.from_entries([(Momentum(0, 0, 1), 2.5)])
    assert pot.v_hat(Momentum(0, 0, 1)) == 2.5
    assert pot.v_hat(Momentum(0, 0, -1)) == 2.5
    assert pot.v_hat(Momentum(1, 1, 1)) == 0.0


def test_potential_conflict_rejected():
    with pytest.raises(ValueError):
        Potential.from_entries(
            [(Momentum(0, 0, 1), 1.0), (Momentum(0, 0, -1), 2.0)]
        )


def test_potential_json_table(tmp_path):
    path = tmp_path / "pot.json"
    path.write_text(json.dumps([{"k": [0, 0, 1], "v_hat": 0.5}]))
    pot = Potential.load(str(path))
    assert pot.v_hat(Momentum(0, 0, -1)) == 0.5


def test_build_db_zero_potential(toy_system, toy_scheme):
    db = build_db(toy_system, toy_scheme, Momentum(0, 0, 1), Potential.zero())
    assert not np.any(db.b)


def test_build_db_diagonal_in_unit_interval(toy_system, toy_scheme, toy_potential):
    for k in (Momentum(0, 0, 1), Momentum(0, 1, 0)):
        db = build_db(toy_system, toy_scheme, k, toy_potential)
        assert np.all(db.d > 0.0)
        assert np.all(db.d <= 1.0)


def test_build_db_scalar_cross_check(toy_system, toy_scheme, toy_potential):
    # recompute the prefactor and the pair counts from scratch
    k = Momentum(0, 0, 1)
    db = build_db(toy_system, toy_scheme, k, toy_potential)
    sys = toy_system
    prefactor = toy_potential.v_hat(k) / (2.0 * sys.hbar * sys.kappa * sys.N * k.norm)
    kf_sq = sys.k_fermi**2
    counts = {}
    for alpha in db.plus:
        n_sq = 0
        for p, claimed in toy_scheme.claims.items():
            if claimed != alpha or p.norm_sq <= kf_sq:
                continue
            h = p - k
            if toy_scheme.claims.get(h) == alpha and h.norm_sq <= kf_sq:
                n_sq += 1
        counts[alpha] = math.sqrt(n_sq)
    for i, a in enumerate(db.plus):
        for j, b in enumerate(db.plus):
            assert db.b[i, j] == pytest.approx(
                prefactor * counts[a] * counts[b], rel=1e-14
            )


def test_build_db_minus_labels_are_antipodes(toy_system, toy_scheme, toy_potential):
    db = build_db(toy_system, toy_scheme, Momentum(0, 0, 1), toy_potential)
    assert db.minus == tuple(toy_scheme.antipode[a] for a in db.plus)


def test_no_active_patches_error():
    sys = build_fermi_system(1.0, 1.5)
    scheme = build_patch_scheme(sys, 2, 1 / 12, 1.1)
    with pytest.raises(NoActivePatchesError):
        build_db(sys, scheme, Momentum(1, 1, 0), Potential.uniform(1.0, 2.0))


def test_zero_b_short_circuits_exactly(toy_system, toy_scheme):
    db = build_db(toy_system, toy_scheme, Momentum(0, 0, 1), Potential.zero())
    bundle = build_K(db)
    assert np.array_equal(bundle.K, np.zeros_like(bundle.K))
    assert np.array_equal(bundle.S1, np.eye(2))
    assert np.array_equal(bundle.E, bundle.D)


def _random_db(rng, m, scale=0.3):
    d = rng.uniform(0.2, 1.0, size=m)
    n = rng.uniform(0.5, 2.0, size=m)
    b = scale * rng.uniform(-0.2, 1.0) * np.outer(n, n)
    labels = tuple(range(1, m + 1))
    anti = tuple(range(m + 1, 2 * m + 1))
    n_by_alpha = {a: n[i] for i, a in enumerate(labels)}
    n_by_alpha.update({a: n[i] for i, a in enumerate(anti)})
    return DbMatrices(
        k=Momentum(0, 0, 1), plus=labels, minus=anti, d=d, b=b, n_by_alpha=n_by_alpha
    )


def test_K_is_symmetric_on_random_inputs():
    rng = np.random.default_rng(7)
    for _ in range(25):
        bundle = build_K(_random_db(rng, int(rng.integers(1, 5))))
        assert np.abs(bundle.K - bundle.K.T).max() < 1e-10


def test_K_first_order_finite_difference():
    # the pipeline linearizes cleanly: K(eps) agrees with the central
    # difference slope to second order
    rng = np.random.default_rng(3)
    base = _random_db(rng, 3, scale=1.0)
    eps = 1e-6

    def k_of(scale):
        db = DbMatrices(
            k=base.k, plus=base.plus, minus=base.minus,
            d=base.d, b=scale * base.b, n_by_alpha=base.n_by_alpha,
        )
        return build_K(db).K

    k_plus, k_minus = k_of(eps), k_of(-eps)
    slope = (k_plus - k_minus) / (2.0 * eps)
    assert np.abs(k_plus - eps * slope).max() < 1e-9


def test_E_reconstruction_identity(toy_system, toy_scheme, toy_potential):
    db = build_db(toy_system, toy_scheme, Momentum(0, 0, 1), toy_potential)
    bundle = build_K(db)
    a_minus = bundle.D + bundle.W - bundle.W_tilde
    a_plus = bundle.D + bundle.W + bundle.W_tilde
    w, v = np.linalg.eigh(a_minus)
    sqrt_am = (v * np.sqrt(w)) @ v.T
    inner = sqrt_am @ a_plus @ sqrt_am
    w2, v2 = np.linalg.eigh(0.5 * (inner + inner.T))
    e_again = (v2 * np.sqrt(w2)) @ v2.T
    assert np.abs(bundle.E - e_again).max() < 1e-9


def test_block_swap_commutation(toy_bundles):
    for bundle in toy_bundles.values():
        m = bundle.half_dim
        swap = np.block(
            [[np.zeros((m, m)), np.eye(m)], [np.eye(m), np.zeros((m, m))]]
        )
        assert np.abs(swap @ bundle.K @ swap - bundle.K).max() < 1e-9


def test_spd_failure_carries_min_eigenvalue(toy_system, toy_scheme):
    pot = Potential.uniform(-3.0, 1.0)  # strongly attractive
    with pytest.raises(SpdError) as err:
        build_bundles(toy_system, toy_scheme, pot)
    assert err.value.min_eigenvalue < 0.0


def test_user_injected_K_bundle(toy_bundles):
    ref = toy_bundles[Momentum(0, 0, 1)]
    bundle = KMatrixBundle.from_K(ref.k, ref.labels, ref.K, ref.n_by_alpha)
    assert bundle.index == ref.index
    assert np.array_equal(bundle.K, ref.K)
    with pytest.raises(ValueError):
        KMatrixBundle.from_K(ref.k, ref.labels[:1], ref.K, ref.n_by_alpha)


def test_cosh_matches_taylor_oracle():
    rng = np.random.default_rng(11)
    for _ in range(10):
        dim = int(rng.integers(1, 5))
        sym = rng.normal(size=(dim, dim))
        k_mat = 0.5 * (sym + sym.T)
        k_mat *= 1.0 / max(1.0, np.abs(np.linalg.eigvalsh(k_mat)).max())
        bundle = KMatrixBundle.from_K(
            Momentum(0, 0, 1), tuple(range(1, dim + 1)), k_mat,
            {a: 1.0 for a in range(1, dim + 1)},
        )
        direct = cosh_2K_minus_identity(bundle)
        taylor = np.zeros_like(k_mat)
        power = np.eye(dim)
        for n in range(1, 21):
            power = power @ (2.0 * k_mat) / n
            if n % 2 == 0:
                taylor += power
        assert np.abs(direct - taylor).max() < 1e-10
        assert np.all(np.diag(direct) >= -1e-15)


def test_cosh_of_zero_is_zero(toy_system, toy_scheme):
    db = build_db(toy_system, toy_scheme, Momentum(0, 0, 1), Potential.zero())
    bundle = build_K(db)
    assert np.array_equal(cosh_2K_minus_identity(bundle), np.zeros((2, 2)))


def test_bundle_json_round_trip(toy_bundles):
    bundle = toy_bundles[Momentum(0, 0, 1)]
    blob = json.dumps(bundle.to_json_dict(), sort_keys=True)
    parsed = json.loads(blob)
    assert parsed["k"] == [0, 0, 1]
    assert parsed["labels"] == [3, 6]
    assert np.allclose(parsed["K"], bundle.K)
