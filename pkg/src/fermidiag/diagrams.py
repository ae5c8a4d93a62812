"""Normal-ordered operators, contraction configurations, and attached products.

An operator is a finite kernel f over (n + m)-tuples of momenta standing
for sum_f f(q_1..q_n, q'_1..q'_m) a*_{q_n} ... a*_{q_1} a_{q'_1} ... a_{q'_m}.
The product of two such operators decomposes into contraction
configurations; (anti-)commutators are differences/sums of the two
attached products, which keep only configurations with at least one
contraction.

The fermionic sign of a configuration is the parity of the permutations
taking it to the maximally crossed layout (last right-connector of the
left operand tied to the first left-connector of the right operand, and
so on), times (-1)^((m1 - C)(n2 - C)) for the uncontracted legs jumping
past each other.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from .lattice import Momentum
from . import fock

FERMIONIC = "fermionic"
BOSONIC = "bosonic"

# test hook: verification suites flip this to confirm the sign bookkeeping
# is actually load-bearing in the oracle comparisons
_SIGN_FLIP_FOR_TESTS = False


class ParityError(ValueError):
    """The requested bracket does not match the leg-count parity."""


@dataclass(frozen=True)
class NormalOrderedOperator:
    """Kernel + leg counts + statistics flag.

    Kernel keys are (q_1, ..., q_n, q'_1, ..., q'_m); q_1 labels the
    rightmost creation operator and q'_1 the leftmost annihilation
    operator in the displayed ordering.
    """

    n_left: int
    m_right: int
    kernel: Mapping[tuple[Momentum, ...], float]
    statistics: str = FERMIONIC

    def __post_init__(self):
        if self.n_left < 0 or self.m_right < 0:
            raise ValueError("leg counts must be nonnegative")
        if self.statistics not in (FERMIONIC, BOSONIC):
            raise ValueError(f"unknown statistics {self.statistics!r}")
        for key in self.kernel:
            if len(key) != self.n_left + self.m_right:
                raise ValueError(
                    f"kernel key {key} does not have {self.n_left}+{self.m_right} entries"
                )

    @property
    def degree(self) -> int:
        return self.n_left + self.m_right


@dataclass(frozen=True)
class ContractionConfig:
    """C contractions: pi picks left connectors of the right operand in
    strictly decreasing order, pi_prime injectively picks right
    connectors of the left operand (connector indices are 1-based)."""

    c: int
    pi: tuple[int, ...]
    pi_prime: tuple[int, ...]


def enumerate_contraction_configs(
    a1: NormalOrderedOperator, a2: NormalOrderedOperator
) -> list[ContractionConfig]:
    """All configurations with 1 <= C <= min(m1, n2)."""
    out: list[ContractionConfig] = []
    top = min(a1.m_right, a2.n_left)
    for c in range(1, top + 1):
        for pi_set in itertools.combinations(range(a2.n_left, 0, -1), c):
            for prime_set in itertools.combinations(range(1, a1.m_right + 1), c):
                for pi_prime in itertools.permutations(prime_set):
                    out.append(
                        ContractionConfig(c=c, pi=pi_set, pi_prime=pi_prime)
                    )
    return out


def config_count(m1: int, n2: int) -> int:
    """Closed-form count: sum_C binom(m1, C) binom(n2, C) C!."""
    return sum(
        math.comb(m1, c) * math.comb(n2, c) * math.factorial(c)
        for c in range(1, min(m1, n2) + 1)
    )


def _perm_parity(perm: Sequence[int]) -> int:
    flips = 0
    for i in range(len(perm)):
        for j in range(i + 1, len(perm)):
            if perm[i] > perm[j]:
                flips += 1
    return -1 if flips & 1 else 1


def fermionic_sign_parts(
    a1: NormalOrderedOperator, a2: NormalOrderedOperator, cfg: ContractionConfig
) -> tuple[int, int, int]:
    """(leg-jump prefactor, sgn(sigma), sgn(sigma_prime)).

    sigma permutes the left connectors of a2 so that the c-th contraction
    lands on connector n2 - c + 1, keeping uncontracted connectors in
    order; sigma_prime does the same on the right connectors of a1 with
    target m1 - c + 1.
    """
    m1, n2, c = a1.m_right, a2.n_left, cfg.c
    prefactor = -1 if ((m1 - c) * (n2 - c)) & 1 else 1

    def crossing(total: int, contracted: Sequence[int]) -> int:
        target = {j: total - ci for ci, j in enumerate(contracted)}
        free = sorted(set(range(1, total + 1)) - set(contracted))
        spots = sorted(set(range(1, total + 1)) - set(target.values()))
        for j, s in zip(free, spots):
            target[j] = s
        return _perm_parity([target[j] for j in range(1, total + 1)])

    return prefactor, crossing(n2, cfg.pi), crossing(m1, cfg.pi_prime)


def fermionic_sign(
    a1: NormalOrderedOperator, a2: NormalOrderedOperator, cfg: ContractionConfig
) -> int:
    pref, s_sigma, s_sigma_prime = fermionic_sign_parts(a1, a2, cfg)
    sign = pref * s_sigma * s_sigma_prime
    if _SIGN_FLIP_FOR_TESTS:
        sign = -sign
    return sign


class OperatorSum:
    """Sum of normal-ordered operators grouped by leg signature (n, m)."""

    def __init__(self, statistics: str):
        self.statistics = statistics
        self.terms: dict[tuple[int, int], dict[tuple[Momentum, ...], float]] = {}

    def add(self, n: int, m: int, key: tuple[Momentum, ...], value: float) -> None:
        if value == 0.0:
            return
        table = self.terms.setdefault((n, m), {})
        table[key] = table.get(key, 0.0) + value

    def add_operator(self, op: NormalOrderedOperator, scale: float = 1.0) -> None:
        for key, value in op.kernel.items():
            self.add(op.n_left, op.m_right, key, scale * value)

    def iadd(self, other: "OperatorSum", scale: float = 1.0) -> "OperatorSum":
        for (n, m), table in other.terms.items():
            for key, value in table.items():
                self.add(n, m, key, scale * value)
        return self

    def operators(self) -> list[NormalOrderedOperator]:
        return [
            NormalOrderedOperator(n, m, dict(table), self.statistics)
            for (n, m), table in sorted(self.terms.items())
        ]


def attached_product(
    a1: NormalOrderedOperator, a2: NormalOrderedOperator
) -> OperatorSum:
    """Sum over all left-to-right contraction configurations of a1 with a2.

    Result legs follow the displayed ordering: a1 creators, then the
    uncontracted a2 creators, then the uncontracted a1 annihilators, then
    a2 annihilators.
    """
    if a1.statistics != a2.statistics:
        raise ValueError("cannot attach operators with mixed statistics")
    fermi = a1.statistics == FERMIONIC
    n1, m1 = a1.n_left, a1.m_right
    n2, m2 = a2.n_left, a2.m_right
    out = OperatorSum(a1.statistics)
    for cfg in enumerate_contraction_configs(a1, a2):
        c = cfg.c
        sign = fermionic_sign(a1, a2, cfg) if fermi else 1
        u_left = sorted(set(range(1, n2 + 1)) - set(cfg.pi))  # uncontracted a2 creators
        u_right = sorted(set(range(1, m1 + 1)) - set(cfg.pi_prime))
        n_res = n1 + n2 - c
        m_res = m1 + m2 - c
        for key1, v1 in a1.kernel.items():
            cr1, an1 = key1[:n1], key1[n1:]
            for key2, v2 in a2.kernel.items():
                cr2, an2 = key2[:n2], key2[n2:]
                if any(
                    an1[cfg.pi_prime[ci] - 1] != cr2[cfg.pi[ci] - 1]
                    for ci in range(c)
                ):
                    continue
                new_key = (
                    tuple(cr2[j - 1] for j in u_left)
                    + cr1
                    + tuple(an1[j - 1] for j in u_right)
                    + an2
                )
                out.add(n_res, m_res, new_key, sign * v1 * v2)
    return out


def bracket_kind(a1: NormalOrderedOperator, a2: NormalOrderedOperator) -> str:
    """Which bracket the attached products reproduce.

    For fermions this is the commutator when the total leg counts
    (n1 + m1)(n2 + m2) multiply to an even number and the anticommutator
    otherwise; the uncontracted normal-ordered parts only cancel under
    that parity.  Bosonic operators always commute in the uncontracted
    part, so the commutator form holds unconditionally.
    """
    if a1.statistics == BOSONIC:
        return "commutator"
    return "commutator" if (a1.degree * a2.degree) % 2 == 0 else "anticommutator"


@dataclass(frozen=True)
class BracketResult:
    kind: str
    result: OperatorSum


def bracket(
    a1: NormalOrderedOperator, a2: NormalOrderedOperator
) -> BracketResult:
    """[a1, a2] or {a1, a2} per the leg parity, as attached products."""
    kind = bracket_kind(a1, a2)
    out = attached_product(a1, a2)
    out.iadd(attached_product(a2, a1), scale=-1.0 if kind == "commutator" else 1.0)
    return BracketResult(kind=kind, result=out)


def commutator(
    a1: NormalOrderedOperator, a2: NormalOrderedOperator
) -> OperatorSum:
    res = bracket(a1, a2)
    if res.kind != "commutator":
        raise ParityError(
            "odd leg parity: only the anticommutator has attached-product form"
        )
    return res.result


def anticommutator(
    a1: NormalOrderedOperator, a2: NormalOrderedOperator
) -> OperatorSum:
    res = bracket(a1, a2)
    if res.kind != "anticommutator":
        raise ParityError(
            "even leg parity: only the commutator has attached-product form"
        )
    return res.result


# -- materialization on oracle spaces ---------------------------------------


def materialize_fermionic(op, ms: fock.ModeSet):
    """Sparse matrix of an operator or operator sum on the fermionic space."""
    ops = op.operators() if isinstance(op, OperatorSum) else [op]
    mat = sparse.csr_matrix((ms.dim, ms.dim))
    for o in ops:
        n = o.n_left
        for key, value in o.kernel.items():
            creators = key[:n]
            annihilators = key[n:]
            term = sparse.identity(ms.dim, format="csr")
            for q in reversed(creators):  # display order a*_{q_n} ... a*_{q_1}
                term = term @ fock.creation(ms, q)
            for q in annihilators:
                term = term @ fock.annihilation(ms, q)
            mat = mat + value * term
    return mat


class BosonSpace:
    """Occupancy-capped bosonic modes for oracle materialization only."""

    def __init__(self, modes: Sequence[Momentum], cap: int = 4):
        self.modes = tuple(modes)
        self.cap = cap
        self.index = {m: i for i, m in enumerate(self.modes)}
        self.dim = (cap + 1) ** len(self.modes)
        self._ladders: dict[tuple[int, bool], sparse.csr_matrix] = {}

    def occupations(self, state: int) -> tuple[int, ...]:
        base = self.cap + 1
        occ = []
        for _ in self.modes:
            occ.append(state % base)
            state //= base
        return tuple(occ)

    def pack(self, occ: Sequence[int]) -> int:
        base = self.cap + 1
        out = 0
        for o in reversed(occ):
            out = out * base + o
        return out

    def ladder(self, mode: Momentum, create: bool) -> sparse.csr_matrix:
        j = self.index[mode]
        if (j, create) in self._ladders:
            return self._ladders[(j, create)]
        base = self.cap + 1
        states = np.arange(self.dim)
        occ = (states // base**j) % base
        if create:
            keep = occ + 1 <= self.cap
            rows = states[keep] + base**j
            amps = np.sqrt(occ[keep] + 1.0)
        else:
            keep = occ >= 1
            rows = states[keep] - base**j
            amps = np.sqrt(occ[keep].astype(float))
        mat = sparse.csr_matrix((amps, (rows, states[keep])), shape=(self.dim, self.dim))
        self._ladders[(j, create)] = mat
        return mat


def materialize_bosonic(op, space: BosonSpace) -> np.ndarray:
    ops = op.operators() if isinstance(op, OperatorSum) else [op]
    mat = sparse.csr_matrix((space.dim, space.dim))
    for o in ops:
        n = o.n_left
        for key, value in o.kernel.items():
            term = sparse.identity(space.dim, format="csr")
            for q in reversed(key[:n]):
                term = term @ space.ladder(q, True)
            for q in key[n:]:
                term = term @ space.ladder(q, False)
            mat = mat + value * term
    return mat.toarray()


def format_diagram(
    a1: NormalOrderedOperator, a2: NormalOrderedOperator, cfg: ContractionConfig
) -> str:
    """Text rendering of a two-vertex diagram, for messages and docs."""
    lines = [
        f"left vertex: {a1.n_left} creators / {a1.m_right} annihilators",
        f"right vertex: {a2.n_left} creators / {a2.m_right} annihilators",
    ]
    for ci in range(cfg.c):
        lines.append(
            f"  contraction {ci + 1}: right-connector {cfg.pi_prime[ci]} of the "
            f"left vertex -> left-connector {cfg.pi[ci]} of the right vertex"
        )
    if a1.statistics == FERMIONIC:
        pref, s1, s2 = fermionic_sign_parts(a1, a2, cfg)
        lines.append(
            f"  sign: prefactor {pref:+d}, crossing {s1:+d} x {s2:+d} "
            f"=> {pref * s1 * s2:+d}"
        )
    return "\n".join(lines)
