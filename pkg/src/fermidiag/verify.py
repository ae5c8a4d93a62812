"""Self-contained invariant suite behind the verify endpoint and CLI command.

Each check returns (passed, one-line detail).  The suite is the runtime
counterpart of the test suite: it exercises the oracle equivalences on
the configured system so a deployment can be validated end to end.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .lattice import Momentum, build_fermi_system
from .patches import active_index_sets
from .kernel import Potential, build_bundles
from .models import CheckResult, Problem, RunConfig
from . import diagrams, fock, series


def random_operator(
    rng: np.random.Generator,
    modes: list[Momentum],
    max_legs: int = 3,
    statistics: str = diagrams.FERMIONIC,
    max_keys: int = 3,
) -> diagrams.NormalOrderedOperator:
    """A random finite-kernel normal-ordered operator for oracle tests."""
    while True:
        n = int(rng.integers(0, max_legs + 1))
        m = int(rng.integers(0, max_legs + 1))
        if n or m:
            break
    kernel = {}
    for _ in range(int(rng.integers(1, max_keys + 1))):
        key = tuple(modes[int(i)] for i in rng.integers(0, len(modes), n + m))
        kernel[key] = float(rng.uniform(-1.0, 1.0))
    return diagrams.NormalOrderedOperator(n, m, kernel, statistics)


def _check_car_exactness(problem: Problem, rng) -> tuple[bool, str]:
    modes = [Momentum(i, 0, 0) for i in range(10)]
    ms = fock.ModeSet(modes)
    eye = np.eye(ms.dim, dtype=np.int64)
    worst = 0
    for a in modes:
        ca = fock.creation(ms, a, dtype=np.int64)
        sq = (ca @ ca).toarray()
        worst = max(worst, int(np.abs(sq).max()))
        for b in modes:
            ann = fock.annihilation(ms, b, dtype=np.int64)
            anti = (ann @ ca + ca @ ann).toarray()
            expected = eye if a == b else np.zeros_like(eye)
            if not np.array_equal(anti, expected):
                return False, f"anticommutator failed for modes {a}, {b}"
    if worst != 0:
        return False, "creation operator is not nilpotent"
    return True, "anticommutators and nilpotency exact on 10 modes (integer arithmetic)"


def _check_bracket_oracle_fermionic(problem: Problem, rng) -> tuple[bool, str]:
    modes = [Momentum(i, 0, 0) for i in range(6)]
    ms = fock.ModeSet(modes)
    worst = 0.0
    for _ in range(30):
        a1 = random_operator(rng, modes)
        a2 = random_operator(rng, modes)
        res = diagrams.bracket(a1, a2)
        symbolic = diagrams.materialize_fermionic(res.result, ms).toarray()
        m1 = diagrams.materialize_fermionic(a1, ms)
        m2 = diagrams.materialize_fermionic(a2, ms)
        direct = (
            (m1 @ m2 - m2 @ m1) if res.kind == "commutator" else (m1 @ m2 + m2 @ m1)
        ).toarray()
        worst = max(worst, float(np.abs(symbolic - direct).max()))
    return worst <= 1e-12, f"max deviation {worst:.2e} over 30 fermionic pairs"


def _check_bracket_oracle_bosonic(problem: Problem, rng) -> tuple[bool, str]:
    modes = [Momentum(i, 0, 0) for i in range(3)]
    cap = 8
    space = diagrams.BosonSpace(modes, cap=cap)
    worst = 0.0
    for _ in range(10):
        a1 = random_operator(rng, modes, statistics=diagrams.BOSONIC)
        a2 = random_operator(rng, modes, statistics=diagrams.BOSONIC)
        res = diagrams.bracket(a1, a2)
        symbolic = diagrams.materialize_bosonic(res.result, space)
        m1 = diagrams.materialize_bosonic(a1, space)
        m2 = diagrams.materialize_bosonic(a2, space)
        direct = m1 @ m2 - m2 @ m1
        # occupancy capping truncates column spaces that climb past the cap;
        # compare only input states with room for every creation leg
        head = a1.n_left + a2.n_left
        cols = [
            s
            for s in range(space.dim)
            if max(space.occupations(s)) + head <= cap
        ]
        worst = max(worst, float(np.abs((symbolic - direct)[:, cols]).max()))
    return worst <= 1e-12, f"max deviation {worst:.2e} over 10 bosonic pairs"


def _check_crossing_sign_fixture(problem: Problem, rng) -> tuple[bool, str]:
    # 3 right-connectors against 2 left-connectors, both crossings tied
    # top-to-top: three swaps are needed on the right side
    a1 = diagrams.NormalOrderedOperator(4, 3, {}, diagrams.FERMIONIC)
    a2 = diagrams.NormalOrderedOperator(2, 3, {}, diagrams.FERMIONIC)
    cfg = diagrams.ContractionConfig(c=2, pi=(2, 1), pi_prime=(1, 2))
    pref, s_sigma, s_sigma_prime = diagrams.fermionic_sign_parts(a1, a2, cfg)
    ok = s_sigma_prime == -1 and s_sigma == 1 and pref == 1
    return ok, f"prefactor {pref}, sgn(sigma) {s_sigma}, sgn(sigma') {s_sigma_prime}"


def _check_approximate_ccr(problem: Problem, rng) -> tuple[bool, str]:
    sys, scheme, bundles = problem.sys, problem.scheme, problem.bundles
    ms = fock.mode_set_for(scheme, sys, bundles)
    ks = sorted(bundles, key=lambda k: k.sort_key)
    worst = 0.0
    combos = 0
    for k in ks:
        for l in ks:
            for alpha in bundles[k].labels:
                for beta in bundles[l].labels:
                    ca = fock.build_c_star(ms, scheme, sys, alpha, k)
                    cb = fock.build_c_star(ms, scheme, sys, beta, l)
                    comm = (ca.T @ cb - cb @ ca.T).toarray()
                    if alpha == beta:
                        err = fock.ccr_error_operator(ms, scheme, sys, alpha, k, l)
                        expected = err.toarray()
                        if k == l:
                            expected = expected + np.eye(ms.dim)
                    else:
                        expected = np.zeros((ms.dim, ms.dim))
                    worst = max(worst, float(np.abs(comm - expected).max()))
                    combos += 1
    return worst <= 1e-12, f"max deviation {worst:.2e} over {combos} combinations"


def _check_pair_norm_bound(problem: Problem, rng) -> tuple[bool, str]:
    sys, scheme, bundles = problem.sys, problem.scheme, problem.bundles
    ms = fock.mode_set_for(scheme, sys, bundles)
    worst = -math.inf
    for k, bundle in sorted(bundles.items(), key=lambda kv: kv[0].sort_key):
        for alpha in bundle.labels:
            c = fock.build_c_star(ms, scheme, sys, alpha, k)
            margin = fock.operator_norm(c) - bundle.n_by_alpha[alpha]
            worst = max(worst, margin)
    return worst <= 1e-10, f"max norm excess over the pair count {worst:.2e}"


def _check_generator_antisymmetry(problem: Problem, rng) -> tuple[bool, str]:
    sys, scheme, bundles = problem.sys, problem.scheme, problem.bundles
    ms = fock.mode_set_for(scheme, sys, bundles)
    gen = fock.build_S(ms, scheme, sys, bundles)
    s = gen.matrix
    anti = float(np.abs((s + s.T).toarray()).max())
    splus = gen.plus_matrix
    split = float(np.abs((s - (splus - splus.T)).toarray()).max())
    bound = series.s_norm_bound(scheme, sys, bundles)
    opnorm = 2.0 * fock.operator_norm(s)
    ok = anti <= 1e-12 and split <= 1e-12 and opnorm <= bound + 1e-9
    return ok, (
        f"antisymmetry {anti:.2e}, creation/annihilation split {split:.2e}, "
        f"2||S|| = {opnorm:.4f} <= bound {bound:.4f}"
    )


def _series_oracle_orders(problem: Problem, orders) -> tuple[bool, str]:
    sys, scheme, bundles = problem.sys, problem.scheme, problem.bundles
    qs = _probe_momenta(problem)
    ms = fock.mode_set_for(scheme, sys, bundles, extra=qs)
    gen = fock.build_S(ms, scheme, sys, bundles)
    worst = 0.0
    for q in qs:
        ev = series.SeriesEvaluator(sys, scheme, bundles, q)
        for n in orders:
            lhs = ev.exact_term(n).value
            rhs = fock.multicommutator_expectation(ms, gen, q, n) / math.factorial(n)
            scale = max(abs(rhs), 1e-30)
            worst = max(worst, abs(lhs - rhs) / scale)
    return worst <= 1e-10, f"max relative deviation {worst:.2e} (orders {list(orders)})"


def _check_series_oracle(problem: Problem, rng) -> tuple[bool, str]:
    return _series_oracle_orders(problem, (2,))


def _check_series_oracle_deep(problem: Problem, rng) -> tuple[bool, str]:
    return _series_oracle_orders(problem, (2, 4))


def _check_odd_orders_vanish(problem: Problem, rng) -> tuple[bool, str]:
    sys, scheme, bundles = problem.sys, problem.scheme, problem.bundles
    qs = _probe_momenta(problem)
    ms = fock.mode_set_for(scheme, sys, bundles, extra=qs)
    gen = fock.build_S(ms, scheme, sys, bundles)
    worst = max(
        abs(fock.multicommutator_expectation(ms, gen, q, n))
        for q in qs
        for n in (1, 3)
    )
    return worst <= 1e-12, f"max odd-order expectation {worst:.2e}"


def _check_bosonized_structure(problem: Problem, rng) -> tuple[bool, str]:
    sys, scheme, bundles = problem.sys, problem.scheme, problem.bundles
    q = _probe_momenta(problem)[0]
    ev = series.SeriesEvaluator(sys, scheme, bundles, q)
    for n in (2, 4):
        kept = []
        for sp in series.enumerate_sign_patterns(n):
            for pair in series.enumerate_contraction_pairs(sp, ev.q_side):
                if series.bosonized_filter(sp, pair, ev.q_side):
                    kept.append((sp, pair))
                    if series.contraction_sign(sp, pair, ev.q_side) != 1:
                        return False, f"restricted diagram with sign -1 at order {n}"
                    report = series.loop_decomposition(sp, pair, ev.q_side)
                    if not report.all_length_two:
                        return False, f"restricted diagram with a long loop at order {n}"
        if len(kept) != 2 ** (2 * n - 1):
            return False, (
                f"order {n}: {len(kept)} restricted diagrams, "
                f"expected {2 ** (2 * n - 1)}"
            )
        direct = set(series.generate_bosonized_diagrams(n, ev.q_side))
        if direct != set(kept):
            return False, f"direct generation disagrees with filtering at order {n}"
    return True, "counts 2^(2n-1), all signs +1, generation matches filtering (n=2,4)"


def _check_bosonized_closed_form(problem: Problem, rng) -> tuple[bool, str]:
    sys, scheme, bundles = problem.sys, problem.scheme, problem.bundles
    worst = 0.0
    for q in _probe_momenta(problem):
        ev = series.SeriesEvaluator(sys, scheme, bundles, q)
        for n in (2, 4, 6):
            lhs = ev.bosonized_term(n).value
            rhs_parts = []
            for k in ev.active_transfers():
                bundle = bundles[k]
                i = bundle.index[ev.alpha_q]
                kn = np.linalg.matrix_power(bundle.K, n)
                nv = bundle.n_by_alpha[ev.alpha_q]
                rhs_parts.append(kn[i, i] / (nv * nv))
            rhs = 2 ** (n - 1) / math.factorial(n) * math.fsum(rhs_parts)
            worst = max(worst, abs(lhs - rhs))
        partial = math.fsum(ev.bosonized_term(n).value for n in (2, 4, 6))
        closed = ev.closed_form()
        two_k = max(
            (2.0 * float(np.abs(np.linalg.eigvalsh(b.K)).max()) for b in bundles.values()),
            default=0.0,
        )
        tail = series.series_tail(two_k, 6)
        if abs(closed - partial) > tail + 1e-12:
            return False, (
                f"partial sums {partial:.3e} vs closed form {closed:.3e} "
                f"exceed tail {tail:.3e}"
            )
    return worst <= 1e-10, f"max term deviation from the power formula {worst:.2e}"


def _check_convergence_envelope(problem: Problem, rng) -> tuple[bool, str]:
    sys, scheme, bundles = problem.sys, problem.scheme, problem.bundles
    bound = series.s_norm_bound(scheme, sys, bundles)
    tail = series.series_tail(bound, 4)
    worst = 0.0
    for q in _probe_momenta(problem):
        oracle = series.nq(q, "oracle", sys, scheme, bundles).value
        truncated = series.nq(q, "exact-truncated", sys, scheme, bundles, n_max=4).value
        worst = max(worst, abs(oracle - truncated))
    return worst <= tail, f"max |oracle - truncated| {worst:.2e} <= tail {tail:.2e}"


def _check_zero_potential_chain(problem: Problem, rng) -> tuple[bool, str]:
    config = problem.config.model_copy(
        update={"potential": problem.config.potential.model_copy(update={"kind": "zero"})}
    )
    zero_problem = Problem(config)
    sys, scheme, bundles = zero_problem.sys, zero_problem.scheme, zero_problem.bundles
    for k, bundle in bundles.items():
        if np.any(bundle.b) or np.any(bundle.K):
            return False, f"b or K nonzero at {k} for the zero potential"
    q = _probe_momenta(zero_problem)[0]
    for method in ("exact-truncated", "bosonized-series", "bosonized-closed", "oracle"):
        value = series.nq(q, method, sys, scheme, bundles, n_max=2).value
        if value != 0.0:
            return False, f"method {method} returned {value!r} instead of exactly 0"
    return True, "b = 0, K = 0 and every method returns exactly 0"


def _check_repeat_determinism(problem: Problem, rng) -> tuple[bool, str]:
    from .service import compute_nq_records
    from .models import NqRequest

    req1 = NqRequest(
        config=problem.config,
        methods=["bosonized-closed", "bosonized-series"],
        q_list="all-in-shell",
        n_max=4,
        threads=1,
    )
    req4 = req1.model_copy(update={"threads": 4})
    rec1 = [r.model_dump_json() for r in compute_nq_records(req1)]
    rec4 = [r.model_dump_json() for r in compute_nq_records(req4)]
    return rec1 == rec4, f"{len(rec1)} records identical across 1 and 4 workers"


def _probe_momenta(problem: Problem) -> list[Momentum]:
    """One claimed momentum outside and one inside the Fermi ball."""
    scheme, sys = problem.scheme, problem.sys
    outside = inside = None
    for k in problem.shell_momenta():
        if sys.in_fermi_ball(k):
            inside = inside or k
        else:
            outside = outside or k
        if inside and outside:
            break
    out = [q for q in (outside, inside) if q is not None]
    if not out:
        raise ValueError("configuration claims no shell momenta")
    return out


_CHECKS: list[tuple[str, bool, Callable]] = [
    ("car-exactness", False, _check_car_exactness),
    ("bracket-oracle-fermionic", False, _check_bracket_oracle_fermionic),
    ("bracket-oracle-bosonic", False, _check_bracket_oracle_bosonic),
    ("crossing-sign-fixture", False, _check_crossing_sign_fixture),
    ("approximate-ccr", False, _check_approximate_ccr),
    ("pair-norm-bound", False, _check_pair_norm_bound),
    ("generator-antisymmetry", False, _check_generator_antisymmetry),
    ("series-order-oracle", False, _check_series_oracle),
    ("series-order-oracle-deep", True, _check_series_oracle_deep),
    ("odd-orders-vanish", False, _check_odd_orders_vanish),
    ("bosonized-structure", False, _check_bosonized_structure),
    ("bosonized-closed-form", False, _check_bosonized_closed_form),
    ("convergence-envelope", False, _check_convergence_envelope),
    ("zero-potential-chain", False, _check_zero_potential_chain),
    ("repeat-determinism", False, _check_repeat_determinism),
]


def run_checks(
    config: RunConfig,
    deep: bool = False,
    seed: int = 0,
    names: list[str] | None = None,
) -> list[CheckResult]:
    problem = Problem(config)
    results = []
    for name, deep_only, fn in _CHECKS:
        if names is not None and name not in names:
            continue
        if deep_only and not deep:
            continue
        rng = np.random.default_rng(seed)
        try:
            passed, detail = fn(problem, rng)
        except Exception as exc:  # a crashed check is a failed check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name=name, passed=passed, detail=detail))
    return results
