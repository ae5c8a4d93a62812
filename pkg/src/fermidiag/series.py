"""Order-by-order evaluation of the excitation-density series.

Each even order n is a signed sum over contraction diagrams.  A diagram
is indexed by a sign pattern xi (which of the n generator insertions
contributes its creation or annihilation half) together with a pair of
bijections (pi_p, pi_h) contracting particle and hole slots.  Slots are
encoded as integers 4*j + kind with vertex j (0 is the number-operator
vertex) and kind in {p, h, p', h'}.

Contractions force equal momenta, so every diagram factorizes into
loops: closed chains of pair-kernel applications that share one patch
index and are summed over a single free momentum.  The q-loop is pinned
to the external momentum at both ends.  Diagram values are products of
coupling-matrix entries over the vertices, loop counts, and inverse
pair-count normalizations; signs are inversion parities of the
contraction maps with respect to the slot order.
"""
from __future__ import annotations

import itertools
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterator, Literal

from .lattice import Momentum, FermiSystem
from .patches import PatchScheme, pair_list
from .kernel import KMatrixBundle, cosh_2K_minus_identity
from . import fock

logger = logging.getLogger(__name__)

KIND_P, KIND_H, KIND_PP, KIND_HP = 0, 1, 2, 3
_OTHER_KIND = {KIND_P: KIND_H, KIND_H: KIND_P, KIND_PP: KIND_HP, KIND_HP: KIND_PP}

QSide = Literal["inside", "outside"]

DEFAULT_EXACT_ORDER = 4
DEFAULT_BOSONIZED_ORDER = 8
# enumeration beyond these orders needs an explicit opt-in; the raised
# error reports the diagram count the run would have to visit
MAX_UNGUARDED_EXACT_ORDER = 6
MAX_UNGUARDED_BOSONIZED_ORDER = 8


class DiagramBudgetError(RuntimeError):
    def __init__(self, n: int, count: int):
        super().__init__(
            f"order {n} would enumerate about {count} diagrams; "
            "pass allow_large=True to opt in"
        )
        self.count = count


@dataclass(frozen=True)
class SignPattern:
    """Which insertions act with their creation half (+1) vs annihilation
    half (-1); the two halves must balance."""

    n: int
    xi: tuple[int, ...]


def enumerate_sign_patterns(n: int) -> list[SignPattern]:
    if n < 2 or n % 2 != 0:
        raise ValueError("only even orders >= 2 contribute")
    out = []
    for plus_positions in itertools.combinations(range(n), n // 2):
        xi = [-1] * n
        for p in plus_positions:
            xi[p] = 1
        out.append(SignPattern(n=n, xi=tuple(xi)))
    return out


@dataclass(frozen=True)
class ContractionPair:
    """Particle and hole contraction maps as sorted (source, target) slot
    pairs; sources are annihilation-side slots, targets creation-side."""

    pi_p: tuple[tuple[int, int], ...]
    pi_h: tuple[tuple[int, int], ...]


def _slot(j: int, kind: int) -> int:
    return 4 * j + kind


def _slot_layout(sp: SignPattern, q_side: QSide):
    """Slot lists (p_minus, p_plus, h_minus, h_plus), each sorted ascending."""
    p_minus, p_plus, h_minus, h_plus = [], [], [], []
    if q_side == "outside":
        p_plus.append(_slot(0, KIND_P))
        p_minus.append(_slot(0, KIND_PP))
    else:
        h_plus.append(_slot(0, KIND_H))
        h_minus.append(_slot(0, KIND_HP))
    for j, s in enumerate(sp.xi, start=1):
        if s == 1:
            p_plus += [_slot(j, KIND_P), _slot(j, KIND_PP)]
            h_plus += [_slot(j, KIND_H), _slot(j, KIND_HP)]
        else:
            p_minus += [_slot(j, KIND_P), _slot(j, KIND_PP)]
            h_minus += [_slot(j, KIND_H), _slot(j, KIND_HP)]
    return sorted(p_minus), sorted(p_plus), sorted(h_minus), sorted(h_plus)


def is_admissible(sp: SignPattern, pair: ContractionPair) -> bool:
    """Every insertion must be contracted directly to an earlier vertex
    (vertex 0, the number operator, counts as earlier for both halves)."""
    licensed = [False] * (sp.n + 1)
    for src, dst in itertools.chain(pair.pi_p, pair.pi_h):
        vs, vd = src // 4, dst // 4
        if vd > vs:
            licensed[vd] = True
        elif vs > vd:
            licensed[vs] = True
    return all(licensed[1:])


def enumerate_contraction_pairs(
    sp: SignPattern, q_side: QSide, admissible_only: bool = True
) -> list[ContractionPair]:
    """All (admissible) contraction-map pairs for one sign pattern."""
    p_minus, p_plus, h_minus, h_plus = _slot_layout(sp, q_side)
    out = []
    for perm_p in itertools.permutations(p_plus):
        pi_p = tuple(zip(p_minus, perm_p))
        for perm_h in itertools.permutations(h_plus):
            pair = ContractionPair(pi_p=pi_p, pi_h=tuple(zip(h_minus, perm_h)))
            if admissible_only and not is_admissible(sp, pair):
                continue
            out.append(pair)
    return out


def contraction_sign(sp: SignPattern, pair: ContractionPair, q_side: QSide) -> int:
    """Inversion parity of the combined contraction maps.

    Annihilation-side slots are ordered by vertex and then p < h < p' < h'
    within a vertex; a pair of sources in that order whose targets appear
    in the opposite order contributes one factor of -1.  The
    number-operator vertex is dropped first: its two contractions fuse
    into one effective edge, because the crossing swaps it would require
    come in pairs and cancel.
    """
    pmap, hmap = dict(pair.pi_p), dict(pair.pi_h)
    if q_side == "outside":
        q_in, q_out, fuse = _slot(0, KIND_P), _slot(0, KIND_PP), pmap
    else:
        q_in, q_out, fuse = _slot(0, KIND_H), _slot(0, KIND_HP), hmap
    target = fuse.pop(q_out)
    if target != q_in:
        src = next(s for s, d in fuse.items() if d == q_in)
        fuse[src] = target
    sources = sorted(itertools.chain(pmap, hmap))
    images = [pmap[s] if s % 4 in (KIND_P, KIND_PP) else hmap[s] for s in sources]
    inversions = 0
    for i in range(len(images)):
        for j in range(i + 1, len(images)):
            if images[i] > images[j]:
                inversions += 1
    return -1 if inversions & 1 else 1


def _hole_slot_of(slot: int) -> int:
    j, kind = divmod(slot, 4)
    return _slot(j, KIND_HP if kind == KIND_PP else KIND_H)


def _particle_slot_of(slot: int) -> int:
    j, kind = divmod(slot, 4)
    return _slot(j, KIND_PP if kind == KIND_HP else KIND_P)


def bosonized_filter(sp: SignPattern, pair: ContractionPair, q_side: QSide) -> bool:
    """True iff the diagram has the paired-contraction (length-2 loop)
    structure: particle contractions between two insertions are doubled
    by the hole contraction of the same node pair, and the two nodes tied
    to the number-operator vertex are hole-linked (particle-linked for q
    inside the Fermi ball) to each other."""
    pmap, hmap = dict(pair.pi_p), dict(pair.pi_h)
    if q_side == "outside":
        for src, dst in pmap.items():
            if src // 4 == 0 or dst // 4 == 0:
                continue
            if hmap.get(_hole_slot_of(src)) != _hole_slot_of(dst):
                return False
        into_q = next(s for s, d in pmap.items() if d == _slot(0, KIND_P))
        from_q = pmap[_slot(0, KIND_PP)]
        return hmap.get(_hole_slot_of(into_q)) == _hole_slot_of(from_q)
    for src, dst in hmap.items():
        if src // 4 == 0 or dst // 4 == 0:
            continue
        if pmap.get(_particle_slot_of(src)) != _particle_slot_of(dst):
            return False
    into_q = next(s for s, d in hmap.items() if d == _slot(0, KIND_H))
    from_q = hmap[_slot(0, KIND_HP)]
    return pmap.get(_particle_slot_of(into_q)) == _particle_slot_of(from_q)


@dataclass(frozen=True)
class Loop:
    """A closed contraction chain; `nodes` lists the pair-operator nodes
    (vertex, primed) it passes through and `walk` the traversal order with
    the slot kind each node is entered through."""

    nodes: tuple[tuple[int, bool], ...]
    includes_q: bool
    walk: tuple[tuple[int, bool], ...]  # (vertex, entered_via_particle_slot)

    @property
    def length(self) -> int:
        return len(self.nodes)

    @property
    def vertices(self) -> frozenset[int]:
        return frozenset(j for j, _ in self.nodes)


@dataclass(frozen=True)
class LoopReport:
    loops: tuple[Loop, ...]
    histogram: dict[int, int]
    all_length_two: bool

    @property
    def q_loop(self) -> Loop:
        return next(l for l in self.loops if l.includes_q)


def loop_decomposition(
    sp: SignPattern, pair: ContractionPair, q_side: QSide
) -> LoopReport:
    partner: dict[int, int] = {}
    for src, dst in itertools.chain(pair.pi_p, pair.pi_h):
        partner[src] = dst
        partner[dst] = src

    def walk_from(start_slot: int, stop_slot: int):
        nodes, walk = [], []
        cur = partner[start_slot]
        for _ in range(4 * sp.n + 2):
            if cur == stop_slot:
                return nodes, walk
            j, kind = divmod(cur, 4)
            nodes.append((j, kind >= KIND_PP))
            walk.append((j, kind in (KIND_P, KIND_PP)))
            cur = partner[_slot(j, _OTHER_KIND[kind])]
        raise ValueError("contraction maps do not close into loops")

    loops = []
    seen: set[tuple[int, bool]] = set()
    # the q-loop, walked from the primed slot of the number-operator vertex
    # back to its unprimed slot
    if q_side == "outside":
        q_start, q_stop = _slot(0, KIND_PP), _slot(0, KIND_P)
    else:
        q_start, q_stop = _slot(0, KIND_HP), _slot(0, KIND_H)
    nodes, walk = walk_from(q_start, q_stop)
    loops.append(Loop(nodes=tuple(nodes), includes_q=True, walk=tuple(walk)))
    seen.update(nodes)
    # remaining free loops, each started at its smallest node via the p slot
    all_nodes = sorted(
        (j, primed) for j in range(1, sp.n + 1) for primed in (False, True)
    )
    for node in all_nodes:
        if node in seen:
            continue
        j, primed = node
        tail_nodes, tail_walk = walk_from(
            _slot(j, KIND_HP if primed else KIND_H),
            _slot(j, KIND_PP if primed else KIND_P),
        )
        loop = Loop(
            nodes=(node, *tail_nodes),
            includes_q=False,
            walk=((j, True), *tail_walk),
        )
        loops.append(loop)
        seen.update(loop.nodes)
    hist = Counter(l.length for l in loops)
    return LoopReport(
        loops=tuple(loops),
        histogram=dict(sorted(hist.items())),
        all_length_two=all(l.length == 2 for l in loops),
    )


def generate_bosonized_diagrams(
    n: int, q_side: QSide
) -> Iterator[tuple[SignPattern, ContractionPair]]:
    """Directly construct every diagram with only length-2 loops.

    The loop structure is a single cycle through the number-operator
    vertex; a diagram is fixed by the order in which insertions extend
    the cycle (one end or the other, 2^(n-1) choices) and by which of the
    two nodes of each insertion faces the external vertex (2^n choices).
    """
    if n < 2 or n % 2 != 0:
        raise ValueError("only even orders >= 2 contribute")

    def pslot(j, primed):
        return _slot(j, KIND_PP if primed else KIND_P)

    def hslot(j, primed):
        return _slot(j, KIND_HP if primed else KIND_H)

    # valid vertex arrangements around the cycle are exactly those where
    # every vertex has a lower-numbered neighbor (the external vertex
    # counting as 0), i.e. permutations with no interior local minimum;
    # they are generated by inserting vertices at either end in
    # decreasing label order
    for bits in itertools.product((0, 1), repeat=n - 1):
        order = deque([n])
        for j, bit in zip(range(n - 1, 0, -1), bits):
            if bit:
                order.appendleft(j)
            else:
                order.append(j)
        u = tuple(order)
        xi = [0] * n
        for i, vtx in enumerate(u, start=1):
            xi[vtx - 1] = 1 if i % 2 == 1 else -1
        sp = SignPattern(n=n, xi=tuple(xi))
        for obits in itertools.product((False, True), repeat=n):
            lp = {vtx: obits[vtx - 1] for vtx in range(1, n + 1)}
            pi_p: dict[int, int] = {}
            pi_h: dict[int, int] = {}
            v1, vn = u[0], u[-1]
            if q_side == "outside":
                pi_p[_slot(0, KIND_PP)] = pslot(v1, lp[v1])
                pi_p[pslot(vn, not lp[vn])] = _slot(0, KIND_P)
                pi_h[hslot(vn, not lp[vn])] = hslot(v1, lp[v1])
            else:
                pi_h[_slot(0, KIND_HP)] = hslot(v1, lp[v1])
                pi_h[hslot(vn, not lp[vn])] = _slot(0, KIND_H)
                pi_p[pslot(vn, not lp[vn])] = pslot(v1, lp[v1])
            for i in range(n - 1):
                a, b = u[i], u[i + 1]
                ra_p, ra_h = pslot(a, not lp[a]), hslot(a, not lp[a])
                lb_p, lb_h = pslot(b, lp[b]), hslot(b, lp[b])
                if xi[a - 1] == 1:
                    pi_p[lb_p], pi_h[lb_h] = ra_p, ra_h
                else:
                    pi_p[ra_p], pi_h[ra_h] = lb_p, lb_h
            yield sp, ContractionPair(
                pi_p=tuple(sorted(pi_p.items())),
                pi_h=tuple(sorted(pi_h.items())),
            )


# -- numeric evaluation ------------------------------------------------------


@dataclass(frozen=True)
class DiagramTermValue:
    n: int
    xi: tuple[int, ...]
    pair: ContractionPair
    sign: int
    loop_histogram: dict[int, int]
    value: float  # contribution including sign and the 1/(2^n n!) prefactor


@dataclass(frozen=True)
class TermResult:
    order: int
    value: float
    diagram_count: int
    loop_histogram: dict[int, int]
    diagrams: tuple[DiagramTermValue, ...] | None = None


@dataclass(frozen=True)
class NqResult:
    q: Momentum
    side: QSide
    method: str
    n_max: int | None
    value: float
    per_order: tuple[tuple[int, float], ...] = ()
    diagram_counts: dict[int, int] = field(default_factory=dict)
    loop_histogram: dict[int, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "q": self.q.to_list(),
            "side": self.side,
            "method": self.method,
            "n_max": self.n_max,
            "value": self.value,
            "per_order": [[n, v] for n, v in self.per_order],
            "diagram_counts": {str(k): v for k, v in sorted(self.diagram_counts.items())},
            "loop_histogram": {str(k): v for k, v in sorted(self.loop_histogram.items())},
        }


class _PairMaps:
    __slots__ = ("hole_of", "particle_of", "n")

    def __init__(self, pairs, n):
        self.hole_of = {p: h for p, h in pairs}
        self.particle_of = {h: p for p, h in pairs}
        self.n = n


class SeriesEvaluator:
    """Evaluates series terms for one external momentum q.

    Immutable inputs; a fresh evaluator per (configuration, q) is cheap
    and safe to use from one worker thread.
    """

    def __init__(
        self,
        sys: FermiSystem,
        scheme: PatchScheme,
        bundles: dict[Momentum, KMatrixBundle],
        q: Momentum,
    ):
        self.sys = sys
        self.scheme = scheme
        self.bundles = bundles
        self.q = q
        self.q_side: QSide = "inside" if sys.in_fermi_ball(q) else "outside"
        self.alpha_q = scheme.claimed_patch(q)
        self.ks = tuple(sorted(bundles, key=lambda k: k.sort_key))
        self._maps: dict[tuple[int, Momentum], _PairMaps] = {}
        self._active: dict[Momentum, frozenset[int]] = {}
        self._K: dict[Momentum, list[list[float]]] = {}
        self._kidx: dict[Momentum, dict[int, int]] = {}
        for k in self.ks:
            bundle = bundles[k]
            self._active[k] = frozenset(bundle.labels)
            self._K[k] = bundle.K.tolist()
            self._kidx[k] = bundle.index
            for alpha in bundle.labels:
                pairs = pair_list(scheme, sys, alpha, k)
                self._maps[(alpha, k)] = _PairMaps(pairs, bundle.n_by_alpha[alpha])
        self._chain_cache: dict = {}
        self._all_two_cache: dict[int, float] = {}

    # -- loop chain counting -------------------------------------------------

    def _chain_count(self, loop: Loop, kv: list, alpha: int) -> float:
        key = (loop.includes_q, alpha, tuple(kv[j] for j, _ in loop.walk))
        cached = self._chain_cache.get(key)
        if cached is not None:
            return cached
        if loop.includes_q:
            v = self.q
            for j, enter_p in loop.walk:
                maps = self._maps.get((alpha, kv[j]))
                if maps is None:
                    v = None
                    break
                v = (maps.hole_of if enter_p else maps.particle_of).get(v)
                if v is None:
                    break
            count = 1.0 if v == self.q else 0.0
        else:
            j0, _ = loop.walk[0]
            start = self._maps.get((alpha, kv[j0]))
            count = 0.0
            if start is not None:
                for p0 in start.hole_of:
                    v = p0
                    for j, enter_p in loop.walk:
                        maps = self._maps.get((alpha, kv[j]))
                        if maps is None:
                            v = None
                            break
                        v = (maps.hole_of if enter_p else maps.particle_of).get(v)
                        if v is None:
                            break
                    if v == p0:
                        count += 1.0
        self._chain_cache[key] = count
        return count

    # -- one diagram ---------------------------------------------------------

    def _diagram_weight(self, n: int, loops: tuple[Loop, ...]) -> float:
        all_two = all(l.length == 2 for l in loops)
        if all_two and n in self._all_two_cache:
            return self._all_two_cache[n]

        # transfers of insertions tied by a length-2 loop must coincide
        parent = list(range(n + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for loop in loops:
            if loop.length == 2:
                (j1, _), (j2, _) = loop.nodes
                parent[find(j1)] = find(j2)
        classes = sorted({find(j) for j in range(1, n + 1)})
        cls_of = {j: classes.index(find(j)) for j in range(1, n + 1)}

        loop_of_node = {}
        for li, loop in enumerate(loops):
            for node in loop.nodes:
                loop_of_node[node] = li

        totals = []
        for assign in itertools.product(self.ks, repeat=len(classes)):
            kv = [None] * (n + 1)
            for j in range(1, n + 1):
                kv[j] = assign[cls_of[j]]
            per_loop = []
            dead = False
            for loop in loops:
                cands: frozenset[int] | None = None
                for j in loop.vertices:
                    s = self._active[kv[j]]
                    cands = s if cands is None else cands & s
                if loop.includes_q:
                    cands = cands & {self.alpha_q}
                opts = []
                for alpha in sorted(cands):
                    cnt = self._chain_count(loop, kv, alpha)
                    if cnt:
                        w = cnt
                        for j, _ in loop.walk:
                            w /= self._maps[(alpha, kv[j])].n
                        opts.append((alpha, w))
                if not opts:
                    dead = True
                    break
                per_loop.append(opts)
            if dead:
                continue
            for combo in itertools.product(*per_loop):
                val = 1.0
                for _, w in combo:
                    val *= w
                for j in range(1, n + 1):
                    kmat = self._K[kv[j]]
                    idx = self._kidx[kv[j]]
                    a_u = combo[loop_of_node[(j, False)]][0]
                    a_p = combo[loop_of_node[(j, True)]][0]
                    val *= kmat[idx[a_u]][idx[a_p]]
                    if val == 0.0:
                        break
                if val:
                    totals.append(val)
        weight = math.fsum(totals)
        if all_two:
            self._all_two_cache[n] = weight
        return weight

    # -- order terms -----------------------------------------------------

    def _accumulate(self, n, diagrams, collect):
        contributions = []
        hist: Counter = Counter()
        details = []
        count = 0
        prefactor = 1.0 / (2**n * math.factorial(n))
        for sp, pair in diagrams:
            count += 1
            report = loop_decomposition(sp, pair, self.q_side)
            hist.update(report.histogram)
            sign = contraction_sign(sp, pair, self.q_side)
            weight = self._diagram_weight(n, report.loops)
            if weight:
                contributions.append(sign * weight)
            if collect:
                details.append(
                    DiagramTermValue(
                        n=n,
                        xi=sp.xi,
                        pair=pair,
                        sign=sign,
                        loop_histogram=report.histogram,
                        value=sign * weight * prefactor,
                    )
                )
        return TermResult(
            order=n,
            value=math.fsum(contributions) * prefactor,
            diagram_count=count,
            loop_histogram=dict(sorted(hist.items())),
            diagrams=tuple(details) if collect else None,
        )

    def _admissible_diagrams(self, n):
        for sp in enumerate_sign_patterns(n):
            for pair in enumerate_contraction_pairs(sp, self.q_side):
                yield sp, pair

    def exact_term(
        self, n: int, collect: bool = False, allow_large: bool = False
    ) -> TermResult:
        """The order-n summand of the excitation-density series."""
        if n % 2 != 0 or n < 2:
            raise ValueError("only even orders >= 2 contribute")
        if self.alpha_q is None:
            logger.warning("momentum %s is claimed by no patch; term is 0", self.q)
            return TermResult(order=n, value=0.0, diagram_count=0, loop_histogram={})
        if n > MAX_UNGUARDED_EXACT_ORDER and not allow_large:
            estimate = (
                math.comb(n, n // 2) * math.factorial(n + 1) * math.factorial(n)
            )
            raise DiagramBudgetError(n, estimate)
        return self._accumulate(n, self._admissible_diagrams(n), collect)

    def bosonized_term(
        self,
        n: int,
        collect: bool = False,
        enumeration: Literal["direct", "filter"] = "direct",
        allow_large: bool = False,
    ) -> TermResult:
        """The order-n summand restricted to length-2-loop diagrams."""
        if n % 2 != 0 or n < 2:
            raise ValueError("only even orders >= 2 contribute")
        if self.alpha_q is None:
            logger.warning("momentum %s is claimed by no patch; term is 0", self.q)
            return TermResult(order=n, value=0.0, diagram_count=0, loop_histogram={})
        if enumeration == "filter":
            diagrams = (
                (sp, pair)
                for sp, pair in self._admissible_diagrams(n)
                if bosonized_filter(sp, pair, self.q_side)
            )
        else:
            if n > MAX_UNGUARDED_BOSONIZED_ORDER and not allow_large:
                raise DiagramBudgetError(n, 2 ** (2 * n - 1))
            diagrams = generate_bosonized_diagrams(n, self.q_side)
        return self._accumulate(n, diagrams, collect)

    # -- closed form -----------------------------------------------------

    def active_transfers(self) -> list[Momentum]:
        """Transfers coupling q into its own patch (the closed-form support)."""
        if self.alpha_q is None:
            return []
        out = []
        for k in self.ks:
            maps = self._maps.get((self.alpha_q, k))
            if maps is None:
                continue
            table = maps.hole_of if self.q_side == "outside" else maps.particle_of
            if self.q in table:
                out.append(k)
        return out

    def closed_form(self) -> float:
        """One half of the diagonal of cosh(2K) - 1, summed over the
        transfers coupling q, each normalized by the squared pair count."""
        if self.alpha_q is None:
            logger.warning("momentum %s is claimed by no patch; value is 0", self.q)
            return 0.0
        parts = []
        for k in self.active_transfers():
            bundle = self.bundles[k]
            i = bundle.index[self.alpha_q]
            c2k = cosh_2K_minus_identity(bundle)
            n = bundle.n_by_alpha[self.alpha_q]
            parts.append(0.5 * c2k[i, i] / (n * n))
        return math.fsum(parts)


def nq_bosonized_closed(
    q: Momentum,
    sys: FermiSystem,
    scheme: PatchScheme,
    bundles: dict[Momentum, KMatrixBundle],
) -> float:
    """Closed form of the length-2-loop series at q."""
    return SeriesEvaluator(sys, scheme, bundles, q).closed_form()


def s_norm_bound(
    scheme: PatchScheme,
    sys: FermiSystem,
    bundles: dict[Momentum, KMatrixBundle],
) -> float:
    """Upper bound on twice the generator norm:
    2 sum_k sum_ab |K(k)_ab| n_a n_b (each pair operator has norm <= n)."""
    parts = []
    for k in sorted(bundles, key=lambda k: k.sort_key):
        bundle = bundles[k]
        for i, a in enumerate(bundle.labels):
            for j, b in enumerate(bundle.labels):
                parts.append(
                    abs(float(bundle.K[i, j]))
                    * bundle.n_by_alpha[a]
                    * bundle.n_by_alpha[b]
                )
    return 2.0 * math.fsum(parts)


def series_tail(bound: float, n_max: int) -> float:
    """sum_{m > n_max} bound^m / m!, the truncation envelope."""
    term = bound ** (n_max + 1) / math.factorial(n_max + 1)
    total = 0.0
    m = n_max + 1
    while term > 0.0 and (total == 0.0 or term > 1e-18 * total):
        total += term
        m += 1
        term *= bound / m
        if m > n_max + 1000:
            break
    return total


def nq(
    q: Momentum,
    method: str,
    sys: FermiSystem,
    scheme: PatchScheme,
    bundles: dict[Momentum, KMatrixBundle],
    n_max: int | None = None,
    allow_large: bool = False,
) -> NqResult:
    """Excitation density at q by the requested method."""
    side: QSide = "inside" if sys.in_fermi_ball(q) else "outside"
    if method == "oracle":
        ms = fock.mode_set_for(scheme, sys, bundles, extra=[q])
        gen = fock.build_S(ms, scheme, sys, bundles)
        res = fock.exact_nq(ms, gen, q)
        return NqResult(q=q, side=side, method=method, n_max=None, value=res.value)
    if method == "bosonized-closed":
        ev = SeriesEvaluator(sys, scheme, bundles, q)
        return NqResult(
            q=q, side=side, method=method, n_max=None, value=ev.closed_form()
        )
    if method == "exact-truncated":
        order_cap = DEFAULT_EXACT_ORDER if n_max is None else n_max
        term = "exact"
    elif method == "bosonized-series":
        order_cap = DEFAULT_BOSONIZED_ORDER if n_max is None else n_max
        term = "bosonized"
    else:
        raise ValueError(f"unknown method {method!r}")
    if order_cap % 2 != 0 or order_cap < 2:
        raise ValueError("series order cap must be an even integer >= 2")
    ev = SeriesEvaluator(sys, scheme, bundles, q)
    per_order = []
    counts = {}
    hist: Counter = Counter()
    for n in range(2, order_cap + 1, 2):
        res = (
            ev.exact_term(n, allow_large=allow_large)
            if term == "exact"
            else ev.bosonized_term(n, allow_large=allow_large)
        )
        per_order.append((n, res.value))
        counts[n] = res.diagram_count
        hist.update(res.loop_histogram)
    return NqResult(
        q=q,
        side=side,
        method=method,
        n_max=order_cap,
        value=math.fsum(v for _, v in per_order),
        per_order=tuple(per_order),
        diagram_counts=counts,
        loop_histogram=dict(sorted(hist.items())),
    )
