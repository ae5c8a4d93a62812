import logging
import math

import numpy as np
import pytest

from fermidiag import (
    Momentum,
    Potential,
    build_bundles,
    build_fermi_system,
    build_patch_scheme,
    nq,
    nq_bosonized_closed,
    s_norm_bound,
    series_tail,
)
from fermidiag import fock, series


def test_sign_pattern_counts():
    assert len(series.enumerate_sign_patterns(2)) == 2
    assert len(series.enumerate_sign_patterns(4)) == 6
    assert len(series.enumerate_sign_patterns(6)) == 20
    for sp in series.enumerate_sign_patterns(4):
        assert sum(sp.xi) == 0


def test_odd_order_rejected():
    with pytest.raises(ValueError, match="even"):
        series.enumerate_sign_patterns(3)


def test_order_two_pair_counts():
    # frozen from exhaustive generation: 24 bijection pairs, 16 admissible
    total = admissible = 0
    for sp in series.enumerate_sign_patterns(2):
        total += len(
            series.enumerate_contraction_pairs(sp, "outside", admissible_only=False)
        )
        admissible += len(series.enumerate_contraction_pairs(sp, "outside"))
    assert total == 24
    assert admissible == 16
    assert total > admissible  # the admissibility filter strictly prunes


def test_all_returned_pairs_are_admissible():
    for q_side in ("outside", "inside"):
        for sp in series.enumerate_sign_patterns(4):
            for pair in series.enumerate_contraction_pairs(sp, q_side):
                assert series.is_admissible(sp, pair)


def test_contraction_sign_odd_inversion_fixture():
    # explicit order-2 diagram whose fused contraction maps carry three
    # inversions (an odd count), hence sign -1
    sp = series.SignPattern(n=2, xi=(1, -1))
    pair = series.ContractionPair(
        pi_p=((2, 4), (8, 6), (10, 0)),
        pi_h=((9, 5), (11, 7)),
    )
    assert series.is_admissible(sp, pair)
    assert series.contraction_sign(sp, pair, "outside") == -1


def test_contraction_sign_is_storage_order_invariant():
    sp = series.SignPattern(n=2, xi=(1, -1))
    pair = series.ContractionPair(
        pi_p=((2, 4), (8, 6), (10, 0)), pi_h=((9, 5), (11, 7))
    )
    scrambled = series.ContractionPair(
        pi_p=((10, 0), (2, 4), (8, 6)), pi_h=((11, 7), (9, 5))
    )
    assert series.contraction_sign(sp, pair, "outside") == series.contraction_sign(
        sp, scrambled, "outside"
    )


def test_bosonized_filter_counts_and_signs():
    for n in (2, 4):
        kept = 0
        for sp in series.enumerate_sign_patterns(n):
            for pair in series.enumerate_contraction_pairs(sp, "outside"):
                if series.bosonized_filter(sp, pair, "outside"):
                    kept += 1
                    assert series.contraction_sign(sp, pair, "outside") == 1
        assert kept == 2 ** (2 * n - 1)


def test_bosonized_filter_equals_short_loop_condition():
    for q_side in ("outside", "inside"):
        for n in (2, 4):
            for sp in series.enumerate_sign_patterns(n):
                for pair in series.enumerate_contraction_pairs(sp, q_side):
                    report = series.loop_decomposition(sp, pair, q_side)
                    assert series.bosonized_filter(sp, pair, q_side) is (
                        report.all_length_two
                    )


def test_direct_generation_matches_filtering():
    for q_side in ("outside", "inside"):
        for n in (2, 4):
            filtered = set()
            for sp in series.enumerate_sign_patterns(n):
                for pair in series.enumerate_contraction_pairs(sp, q_side):
                    if series.bosonized_filter(sp, pair, q_side):
                        filtered.add((sp, pair))
            direct = set(series.generate_bosonized_diagrams(n, q_side))
            assert direct == filtered
            assert len(direct) == 2 ** (2 * n - 1)


def test_generated_bosonized_diagram_passes_filter_at_order_six():
    count = 0
    for sp, pair in series.generate_bosonized_diagrams(6, "outside"):
        count += 1
        if count <= 32:
            assert series.is_admissible(sp, pair)
            assert series.bosonized_filter(sp, pair, "outside")
    assert count == 2 ** 11


def test_loop_decomposition_mixed_lengths_fixture():
    # hand-built order-6 diagram with an external loop through six nodes,
    # one four-node loop, and one two-node loop
    sp = series.SignPattern(n=6, xi=(1, -1, 1, -1, 1, -1))
    pair = series.ContractionPair(
        pi_p=((2, 4), (8, 12), (10, 6), (16, 20), (18, 14), (24, 0), (26, 22)),
        pi_h=((9, 5), (11, 15), (17, 13), (19, 7), (25, 21), (27, 23)),
    )
    assert series.is_admissible(sp, pair)
    report = series.loop_decomposition(sp, pair, "outside")
    assert report.histogram == {2: 1, 4: 1, 6: 1}
    assert report.q_loop.length == 6
    assert not report.all_length_two


def test_bosonized_loops_all_have_length_two():
    for n in (2, 4, 6):
        sp, pair = next(iter(series.generate_bosonized_diagrams(n, "outside")))
        report = series.loop_decomposition(sp, pair, "outside")
        assert report.histogram == {2: n}
        assert report.all_length_two


def test_loop_count_bound():
    for sp in series.enumerate_sign_patterns(4):
        for pair in series.enumerate_contraction_pairs(sp, "outside"):
            report = series.loop_decomposition(sp, pair, "outside")
            assert len(report.loops) <= 4 + 1
            assert (len(report.loops) == 4) == report.all_length_two
            assert sum(l.length for l in report.loops) == 2 * 4


def test_exact_terms_match_oracle(
    toy_system, toy_scheme, toy_bundles, toy_mode_set, toy_generator, toy_q_out, toy_q_in
):
    for q in (toy_q_out, toy_q_in):
        ev = series.SeriesEvaluator(toy_system, toy_scheme, toy_bundles, q)
        for n in (2, 4):
            term = ev.exact_term(n).value
            oracle = fock.multicommutator_expectation(
                toy_mode_set, toy_generator, q, n
            ) / math.factorial(n)
            assert term == pytest.approx(oracle, rel=1e-10)


def test_exact_terms_match_oracle_with_mixed_transfers():
    # five active transfers sharing modes force diagrams whose loops mix
    # different transfer momenta
    sys = build_fermi_system(1.0, 1.5)
    scheme = build_patch_scheme(sys, 2, 1 / 12, 1.1)
    pot = Potential.from_entries(
        [
            (Momentum(0, 0, 1), 1.0),
            (Momentum(0, 1, 1), 0.6),
            (Momentum(0, -1, 1), 0.6),
            (Momentum(1, 0, 1), 0.4),
            (Momentum(-1, 0, 1), 0.4),
        ]
    )
    bundles = build_bundles(sys, scheme, pot)
    assert len(bundles) == 5
    q = Momentum(0, 0, 2)
    ms = fock.mode_set_for(scheme, sys, bundles, extra=[q])
    gen = fock.build_S(ms, scheme, sys, bundles)
    ev = series.SeriesEvaluator(sys, scheme, bundles, q)
    for n in (2, 4):
        term = ev.exact_term(n).value
        oracle = fock.multicommutator_expectation(ms, gen, q, n) / math.factorial(n)
        assert term == pytest.approx(oracle, rel=1e-10)


def test_exact_terms_match_oracle_with_zonal_patches():
    # four zonal cells exercise the general even-M construction end to end
    from fermidiag import pair_list

    sys = build_fermi_system(1.0, 1.0)
    scheme = build_patch_scheme(sys, 4, 1 / 12, 1.1)
    bundles = build_bundles(sys, scheme, Potential.uniform(1.0, 1.0))
    assert bundles, "at least one transfer must stay active"
    k = next(iter(bundles))
    alpha = bundles[k].labels[0]
    qs = list(pair_list(scheme, sys, alpha, k)[0])  # one particle, one hole
    ms = fock.mode_set_for(scheme, sys, bundles, extra=qs)
    gen = fock.build_S(ms, scheme, sys, bundles)
    for q in qs:
        ev = series.SeriesEvaluator(sys, scheme, bundles, q)
        for n in (2, 4):
            term = ev.exact_term(n).value
            oracle = fock.multicommutator_expectation(ms, gen, q, n) / math.factorial(n)
            assert term == pytest.approx(oracle, rel=1e-10)
        assert ev.closed_form() >= 0.0


def test_bosonized_term_matches_power_formula(
    toy_system, toy_scheme, toy_bundles, toy_q_out
):
    ev = series.SeriesEvaluator(toy_system, toy_scheme, toy_bundles, toy_q_out)
    for n in (2, 4, 6):
        parts = []
        for k in ev.active_transfers():
            bundle = toy_bundles[k]
            i = bundle.index[ev.alpha_q]
            nv = bundle.n_by_alpha[ev.alpha_q]
            parts.append(np.linalg.matrix_power(bundle.K, n)[i, i] / (nv * nv))
        expected = 2 ** (n - 1) / math.factorial(n) * math.fsum(parts)
        assert ev.bosonized_term(n).value == pytest.approx(expected, abs=1e-10)


def test_bosonized_enumeration_strategies_agree(
    toy_system, toy_scheme, toy_bundles, toy_q_in
):
    ev = series.SeriesEvaluator(toy_system, toy_scheme, toy_bundles, toy_q_in)
    for n in (2, 4):
        direct = ev.bosonized_term(n, enumeration="direct")
        filtered = ev.bosonized_term(n, enumeration="filter")
        assert direct.value == filtered.value
        assert direct.diagram_count == filtered.diagram_count


def test_closed_form_value(toy_system, toy_scheme, toy_bundles, toy_q_out):
    ev = series.SeriesEvaluator(toy_system, toy_scheme, toy_bundles, toy_q_out)
    closed = ev.closed_form()
    assert closed == nq_bosonized_closed(toy_q_out, toy_system, toy_scheme, toy_bundles)
    assert closed >= 0.0
    partial = math.fsum(ev.bosonized_term(n).value for n in (2, 4, 6, 8))
    two_k = 2.0 * max(
        np.abs(np.linalg.eigvalsh(b.K)).max() for b in toy_bundles.values()
    )
    assert abs(closed - partial) <= series_tail(two_k, 8) + 1e-12


def test_zero_potential_series_is_exactly_zero(toy_system, toy_scheme, toy_q_out):
    bundles = build_bundles(toy_system, toy_scheme, Potential.zero())
    ev = series.SeriesEvaluator(toy_system, toy_scheme, bundles, toy_q_out)
    assert ev.exact_term(2).value == 0.0
    assert ev.bosonized_term(2).value == 0.0
    assert ev.closed_form() == 0.0
    assert s_norm_bound(toy_scheme, toy_system, bundles) == 0.0


def test_unclaimed_momentum_warns_and_returns_zero(
    toy_system, toy_scheme, toy_bundles, caplog
):
    far = Momentum(0, 0, 5)
    ev = series.SeriesEvaluator(toy_system, toy_scheme, toy_bundles, far)
    with caplog.at_level(logging.WARNING):
        assert ev.exact_term(2).value == 0.0
        assert ev.closed_form() == 0.0
    assert any("no patch" in rec.message for rec in caplog.records)


def test_diagram_budget_guard(toy_system, toy_scheme, toy_bundles, toy_q_out):
    ev = series.SeriesEvaluator(toy_system, toy_scheme, toy_bundles, toy_q_out)
    with pytest.raises(series.DiagramBudgetError):
        ev.exact_term(8)
    with pytest.raises(series.DiagramBudgetError):
        ev.bosonized_term(12)


def test_norm_bound_is_monotone_in_coupling(toy_system, toy_scheme):
    bounds = []
    for strength in (0.5, 1.0, 2.0):
        bundles = build_bundles(
            toy_system, toy_scheme, Potential.uniform(strength, 1.0)
        )
        bounds.append(s_norm_bound(toy_scheme, toy_system, bundles))
    assert bounds[0] < bounds[1] < bounds[2]


def test_series_tail_values():
    assert series_tail(0.0, 4) == 0.0
    # against a straightforward partial sum of the exponential series
    bound = 1.3
    direct = sum(bound**m / math.factorial(m) for m in range(5, 60))
    assert series_tail(bound, 4) == pytest.approx(direct, rel=1e-12)


def test_nq_methods_and_breakdown(toy_system, toy_scheme, toy_bundles, toy_q_out):
    res = nq(toy_q_out, "exact-truncated", toy_system, toy_scheme, toy_bundles, n_max=4)
    assert res.side == "outside"
    assert [n for n, _ in res.per_order] == [2, 4]
    assert res.value == pytest.approx(math.fsum(v for _, v in res.per_order))
    oracle = nq(toy_q_out, "oracle", toy_system, toy_scheme, toy_bundles)
    bound = s_norm_bound(toy_scheme, toy_system, toy_bundles)
    assert abs(oracle.value - res.value) <= series_tail(bound, 4)
    with pytest.raises(ValueError):
        nq(toy_q_out, "exact-truncated", toy_system, toy_scheme, toy_bundles, n_max=3)
    with pytest.raises(ValueError):
        nq(toy_q_out, "no-such-method", toy_system, toy_scheme, toy_bundles)


def test_nq_json_schema(toy_system, toy_scheme, toy_bundles, toy_q_in):
    res = nq(toy_q_in, "bosonized-series", toy_system, toy_scheme, toy_bundles, n_max=4)
    blob = res.to_json_dict()
    assert blob["q"] == [0, 0, 1]
    assert blob["side"] == "inside"
    assert blob["method"] == "bosonized-series"
    assert blob["n_max"] == 4
    assert set(blob) == {
        "q", "side", "method", "n_max", "value",
        "per_order", "diagram_counts", "loop_histogram",
    }


def test_collected_diagram_values_sum_to_the_term(
    toy_system, toy_scheme, toy_bundles, toy_q_out
):
    ev = series.SeriesEvaluator(toy_system, toy_scheme, toy_bundles, toy_q_out)
    result = ev.exact_term(2, collect=True)
    assert len(result.diagrams) == 16
    assert math.fsum(d.value for d in result.diagrams) == pytest.approx(
        result.value, abs=1e-18
    )
    for d in result.diagrams:
        assert d.sign in (-1, 1)
        assert sum(length * count for length, count in d.loop_histogram.items()) == 4
        # the recorded sign matches a recomputation from the stored maps
        assert d.sign == series.contraction_sign(
            series.SignPattern(n=2, xi=d.xi), d.pair, "outside"
        )


def test_evaluation_is_bitwise_repeatable(
    toy_system, toy_scheme, toy_bundles, toy_q_out
):
    ev1 = series.SeriesEvaluator(toy_system, toy_scheme, toy_bundles, toy_q_out)
    ev2 = series.SeriesEvaluator(toy_system, toy_scheme, toy_bundles, toy_q_out)
    assert ev1.exact_term(4).value == ev2.exact_term(4).value
    assert ev1.closed_form() == ev2.closed_form()
