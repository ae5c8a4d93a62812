"""Exact sparse oracle on a truncated fermionic Fock space.

Basis states are occupation bitmasks over a finite, ordered mode set
(mode i equals bit i); ladder operators carry Jordan-Wigner sign strings
over the lower bits, so the anticommutation relations hold exactly in
integer arithmetic.

Explicit sparse matrices are used up to 2^19 dimensions.  The
exponential e^(-S) is never materialized: it is applied to vectors term
by term (mode cap 24, i.e. a 16.7M-dimensional space).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import svds

from .lattice import Momentum, FermiSystem
from .patches import PatchScheme, pair_list
from .kernel import KMatrixBundle

MODE_CAP = 24
MATRIX_MODE_CAP = 19


class ModeCapError(ValueError):
    def __init__(self, requested: int, cap: int):
        super().__init__(
            f"mode set would need {requested} modes but the cap is {cap}; "
            "choose a smaller toy configuration (smaller k_fermi, "
            "transfer_radius or shell_thickness)"
        )


class ModeSet:
    """Ordered mode list with an index map; the oracle's single-particle basis."""

    def __init__(self, modes: Iterable[Momentum]):
        self.modes = tuple(sorted(set(modes), key=lambda k: k.sort_key))
        if len(self.modes) > MODE_CAP:
            raise ModeCapError(len(self.modes), MODE_CAP)
        self.index = {m: i for i, m in enumerate(self.modes)}
        self._ladders: dict[tuple[int, bool, str], sparse.csr_matrix] = {}

    def __len__(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return 1 << len(self.modes)

    def index_of(self, mode: Momentum) -> int:
        try:
            return self.index[mode]
        except KeyError:
            raise ValueError(f"mode {mode} is not in the oracle mode set") from None

    def _require_matrices(self) -> None:
        if len(self.modes) > MATRIX_MODE_CAP:
            raise ModeCapError(len(self.modes), MATRIX_MODE_CAP)


def mode_set_for(
    scheme: PatchScheme,
    sys: FermiSystem,
    bundles: dict[Momentum, KMatrixBundle],
    extra: Iterable[Momentum] = (),
) -> ModeSet:
    """Closure of all modes appearing in the generator, plus `extra`.

    Fails loudly when the toy configuration exceeds the mode cap; a
    silently truncated generator would invalidate every oracle check.
    """
    modes: set[Momentum] = set(extra)
    for k, bundle in bundles.items():
        for alpha in bundle.labels:
            for p, h in pair_list(scheme, sys, alpha, k):
                modes.add(p)
                modes.add(h)
    return ModeSet(modes)


def _parity_of_masked(idx: np.ndarray, mask: int) -> np.ndarray:
    """(-1)^(number of set bits of idx & mask), vectorized."""
    masked = np.bitwise_and(idx, mask)
    return 1 - 2 * (np.bitwise_count(masked).astype(np.int64) & 1)


def ladder_matrix(ms: ModeSet, mode: Momentum, create: bool, dtype=np.float64):
    """Sparse creation/annihilation matrix with Jordan-Wigner signs."""
    ms._require_matrices()
    j = ms.index_of(mode)
    key = (j, create, np.dtype(dtype).name)
    if key in ms._ladders:
        return ms._ladders[key]
    dim = ms.dim
    idx = np.arange(dim, dtype=np.int64)
    bit = (idx >> j) & 1
    cols = idx[bit == (0 if create else 1)]
    rows = cols ^ (1 << j)
    sign = _parity_of_masked(cols, (1 << j) - 1)
    mat = sparse.csr_matrix(
        (sign.astype(dtype), (rows, cols)), shape=(dim, dim)
    )
    ms._ladders[key] = mat
    return mat


def creation(ms: ModeSet, mode: Momentum, dtype=np.float64):
    return ladder_matrix(ms, mode, True, dtype)


def annihilation(ms: ModeSet, mode: Momentum, dtype=np.float64):
    return ladder_matrix(ms, mode, False, dtype)


def number_op(ms: ModeSet, mode: Momentum):
    ms._require_matrices()
    j = ms.index_of(mode)
    idx = np.arange(ms.dim, dtype=np.int64)
    occ = ((idx >> j) & 1).astype(np.float64)
    return sparse.diags(occ, format="csr")


def vacuum(ms: ModeSet) -> np.ndarray:
    v = np.zeros(ms.dim)
    v[0] = 1.0
    return v


def operator_norm(mat) -> float:
    """Largest singular value; deterministic start vector."""
    dim = mat.shape[0]
    if dim <= 64:
        return float(np.linalg.norm(np.asarray(mat.todense()), 2))
    v0 = np.full(dim, 1.0 / math.sqrt(dim))
    s = svds(mat.astype(np.float64), k=1, v0=v0, return_singular_vectors=False)
    return float(s[0])


# -- pair operators --------------------------------------------------------


def build_c_star(
    ms: ModeSet, scheme: PatchScheme, sys: FermiSystem, alpha: int, k: Momentum
):
    """Normalized pair creator: (1/n) sum over pairs of a*_p a*_h."""
    pairs = pair_list(scheme, sys, alpha, k)
    if not pairs:
        raise ValueError(f"patch {alpha} has no particle-hole pairs for {k}")
    n = math.sqrt(len(pairs))
    mat = sparse.csr_matrix((ms.dim, ms.dim))
    for p, h in pairs:
        mat = mat + creation(ms, p) @ creation(ms, h)
    return mat / n


def ccr_error_from_pairs(ms: ModeSet, pairs_k, pairs_l):
    """Commutation-error operator built from two explicit pair lists.

    Both sums are normal ordered (annihilators on the right) and weighted
    by 1/(n_k n_l); the operator vanishes identically when the two lists
    share neither a particle nor a hole.
    """
    weight = 1.0 / (math.sqrt(len(pairs_k)) * math.sqrt(len(pairs_l)))
    hole_k = {p: h for p, h in pairs_k}
    hole_l = {p: h for p, h in pairs_l}
    part_k = {h: p for p, h in pairs_k}
    part_l = {h: p for p, h in pairs_l}
    mat = sparse.csr_matrix((ms.dim, ms.dim))
    # hole-exchange term: shared particle p, holes h1 = p -+ k, h2 = p -+ l
    for p, h1 in hole_k.items():
        if p in hole_l:
            h2 = hole_l[p]
            mat = mat - weight * (creation(ms, h2) @ annihilation(ms, h1))
    # particle-exchange term: shared hole h, particles p1, p2
    for h, p1 in part_k.items():
        if h in part_l:
            p2 = part_l[h]
            mat = mat - weight * (creation(ms, p2) @ annihilation(ms, p1))
    return mat


def ccr_error_operator(
    ms: ModeSet,
    scheme: PatchScheme,
    sys: FermiSystem,
    alpha: int,
    k: Momentum,
    l: Momentum,
):
    """The quadratic commutation-error operator for [c_a(k), c*_a(l)]."""
    pairs_k = pair_list(scheme, sys, alpha, k)
    pairs_l = pair_list(scheme, sys, alpha, l)
    if not pairs_k or not pairs_l:
        raise ValueError(f"patch {alpha} inactive for {k} or {l}")
    return ccr_error_from_pairs(ms, pairs_k, pairs_l)


# -- the generator ---------------------------------------------------------

# a term is (coefficient, ops) with ops in display order, applied right to left;
# each op is (mode position, create?)
Term = tuple[float, tuple[tuple[int, bool], ...]]


@dataclass
class Generator:
    """The antisymmetric quartic generator, as terms and (optionally) a matrix."""

    mode_set: ModeSet
    terms: list[Term]
    matrix: sparse.csr_matrix | None

    @property
    def plus_matrix(self):
        """Creation half only (the matrix of the c* c* part)."""
        self.mode_set._require_matrices()
        mat = sparse.csr_matrix((self.mode_set.dim, self.mode_set.dim))
        for coeff, ops in self.terms:
            if all(create for _, create in ops):
                mat = mat + coeff * _term_matrix(self.mode_set, ops)
        return mat


def _term_matrix(ms: ModeSet, ops: Sequence[tuple[int, bool]]):
    mat = sparse.identity(ms.dim, format="csr")
    for pos, create in ops:
        mode = ms.modes[pos]
        mat = mat @ ladder_matrix(ms, mode, create)
    return mat


def build_S_terms(
    ms: ModeSet,
    scheme: PatchScheme,
    sys: FermiSystem,
    bundles: dict[Momentum, KMatrixBundle],
) -> list[Term]:
    """Expand -1/2 sum_k sum_ab K(k)_ab (c*_a c*_b - h.c.) into mode strings."""
    terms: list[Term] = []
    for k in sorted(bundles, key=lambda k: k.sort_key):
        bundle = bundles[k]
        pairs = {a: pair_list(scheme, sys, a, k) for a in bundle.labels}
        for i, a in enumerate(bundle.labels):
            for j, b in enumerate(bundle.labels):
                kab = float(bundle.K[i, j])
                if kab == 0.0:
                    continue
                norm = bundle.n_by_alpha[a] * bundle.n_by_alpha[b]
                coeff = -0.5 * kab / norm
                for p1, h1 in pairs[a]:
                    for p2, h2 in pairs[b]:
                        ops = (
                            (ms.index_of(p1), True),
                            (ms.index_of(h1), True),
                            (ms.index_of(p2), True),
                            (ms.index_of(h2), True),
                        )
                        terms.append((coeff, ops))
                        # hermitian conjugate, with opposite sign
                        ops_hc = tuple(
                            (pos, False) for pos, _ in reversed(ops)
                        )
                        terms.append((-coeff, ops_hc))
    return terms


def build_S(
    ms: ModeSet,
    scheme: PatchScheme,
    sys: FermiSystem,
    bundles: dict[Momentum, KMatrixBundle],
) -> Generator:
    terms = build_S_terms(ms, scheme, sys, bundles)
    matrix = None
    if len(ms) <= MATRIX_MODE_CAP:
        matrix = sparse.csr_matrix((ms.dim, ms.dim))
        for coeff, ops in terms:
            matrix = matrix + coeff * _term_matrix(ms, ops)
    return Generator(mode_set=ms, terms=terms, matrix=matrix)


# -- term-by-term application to sparse vectors -----------------------------


def _apply_term(
    ms: ModeSet, ops: Sequence[tuple[int, bool]], idx: np.ndarray, val: np.ndarray
):
    for pos, create in reversed(ops):  # rightmost operator acts first
        bit = np.int64(1) << pos
        occupied = (idx & bit) != 0
        keep = ~occupied if create else occupied
        idx = idx[keep]
        val = val[keep]
        if idx.size == 0:
            break
        val = val * _parity_of_masked(idx, int(bit) - 1)
        idx = idx ^ bit
    return idx, val


def apply_terms(
    ms: ModeSet, terms: Sequence[Term], idx: np.ndarray, val: np.ndarray
):
    """Apply a sum of normal-ordered terms to a sparse vector."""
    chunks_i = []
    chunks_v = []
    for coeff, ops in terms:
        ti, tv = _apply_term(ms, ops, idx, val)
        if ti.size:
            chunks_i.append(ti)
            chunks_v.append(coeff * tv)
    if not chunks_i:
        return np.empty(0, dtype=np.int64), np.empty(0)
    all_i = np.concatenate(chunks_i)
    all_v = np.concatenate(chunks_v)
    uniq, inv = np.unique(all_i, return_inverse=True)
    out = np.zeros(uniq.size)
    np.add.at(out, inv, all_v)
    keep = out != 0.0
    return uniq[keep], out[keep]


class ExponentialActionError(RuntimeError):
    def __init__(self, residual: float, orders: int):
        self.residual = residual
        self.orders = orders
        super().__init__(
            f"Taylor application of e^(-S) did not converge after {orders} "
            f"orders (residual {residual:.3e})"
        )


@dataclass(frozen=True)
class ExactNqResult:
    q: Momentum
    value: float
    state_norm: float
    orders: int


def exact_nq(
    ms: ModeSet,
    generator: Generator,
    q: Momentum,
    tol: float = 1e-12,
    max_orders: int = 400,
) -> ExactNqResult:
    """Excitation density from the exactly propagated vector e^(-S) vacuum.

    The deviation from the step profile equals the mode occupation of the
    propagated vacuum for q inside and outside the Fermi ball alike (the
    particle-hole flip that distinguishes the two sides cancels against
    the same flip in the definition of the deviation).
    """
    pos = ms.index_of(q)
    neg_terms = [(-c, ops) for c, ops in generator.terms]
    idx = np.array([0], dtype=np.int64)
    val = np.array([1.0])
    acc: dict[int, float] = {0: 1.0}
    orders = 0
    residual = 1.0
    for order in range(1, max_orders + 1):
        idx, val = apply_terms(ms, neg_terms, idx, val)
        if idx.size == 0:
            residual = 0.0
            orders = order
            break
        val = val / order
        for i, v in zip(idx.tolist(), val.tolist()):
            acc[i] = acc.get(i, 0.0) + v
        residual = float(np.linalg.norm(val))
        orders = order
        if residual < tol * 1e-2:
            break
    else:
        raise ExponentialActionError(residual, max_orders)
    items = sorted(acc.items())
    states = np.array([i for i, _ in items], dtype=np.int64)
    amps = np.array([v for _, v in items])
    norm = float(np.linalg.norm(amps))
    occupied = ((states >> pos) & 1).astype(np.float64)
    value = float(np.dot(occupied * amps, amps))
    return ExactNqResult(q=q, value=value, state_norm=norm, orders=orders)


def multicommutator_expectation(
    ms: ModeSet, generator: Generator, q: Momentum, n: int
) -> float:
    """Vacuum expectation of the n-fold nested commutator of S with a*_q a_q."""
    if n < 0:
        raise ValueError("order must be nonnegative")
    ms._require_matrices()
    if generator.matrix is None:
        raise ModeCapError(len(ms), MATRIX_MODE_CAP)
    s = generator.matrix
    b = number_op(ms, q)
    for _ in range(n):
        b = s @ b - b @ s
    return float(b[0, 0])
