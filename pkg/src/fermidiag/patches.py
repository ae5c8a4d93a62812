"""Angular patch decomposition of a shell around the Fermi surface.

Patches are antipodally symmetric, equal-solid-angle angular cells that
claim the lattice points of the shell k_F - t <= |k| <= k_F + t.  Three
constructions are used:

* M = 2: two hemispheres with centers +-e_z,
* M = 6: six axis-aligned cones (cube-face cells), centers +-e_i,
* general even M: a zonal equal-area partition of the half-sphere,
  mirrored through the origin.

Antipodal symmetry is enforced by construction: a direction outside the
northern half-space is assigned to the antipode of the cell claiming its
negation.  A direction on a shared cell boundary goes to the candidate
cell with the smallest id (determinism).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import Momentum, FermiSystem, ball_points, in_northern_half, transfer_set

DELTA_MAX = 1.0 / 6.0


@dataclass(frozen=True)
class Patch:
    """One angular cell: id (1-based), center on the Fermi surface, unit center."""

    id: int
    center: tuple[float, float, float]
    unit_center: tuple[float, float, float]


@dataclass(frozen=True)
class IndexSets:
    """Patches aligned (plus) and anti-aligned (minus) with a transfer k."""

    k: Momentum
    plus: tuple[int, ...]
    minus: tuple[int, ...]

    def side(self, alpha: int) -> int:
        if alpha in self.plus:
            return +1
        if alpha in self.minus:
            return -1
        raise ValueError(f"patch {alpha} is in neither index set of {self.k}")

    def contains(self, alpha: int) -> bool:
        return alpha in self.plus or alpha in self.minus


@dataclass(frozen=True)
class PairCount:
    alpha: int
    k: Momentum
    n_squared: int
    n: float


class _ZonalCells:
    """Equal-area (z, phi)-box cells covering the half-sphere z in [0, 1].

    Band b holds sectors[b] sectors; each cell has solid angle exactly
    2*pi/m because the z-extent of a band is proportional to its sector
    count.
    """

    def __init__(self, m: int):
        self.m = m
        if m == 1:
            self.bands = [(0.0, 1.0, 1)]
        else:
            n_bands = max(1, round(math.sqrt(m)))
            # provisional equal-z bands; sector share proportional to the
            # band's mid-latitude circumference, fixed up to sum exactly m
            mids = [1.0 - (b + 0.5) / n_bands for b in range(n_bands)]
            weights = [math.sqrt(max(1.0 - z * z, 1e-12)) for z in mids]
            total = sum(weights)
            shares = [m * w / total for w in weights]
            counts = [max(1, int(s)) for s in shares]
            while sum(counts) > m:
                counts[counts.index(max(counts))] -= 1
            order = sorted(range(n_bands), key=lambda b: counts[b] - shares[b])
            i = 0
            while sum(counts) < m:
                counts[order[i % n_bands]] += 1
                i += 1
            bands = []
            z_hi = 1.0
            for c in counts:
                z_lo = z_hi - c / m
                bands.append((max(z_lo, 0.0), z_hi, c))
                z_hi = z_lo
            self.bands = bands
        # cell id offsets per band
        self.offsets = []
        off = 0
        for _, _, c in self.bands:
            self.offsets.append(off)
            off += c

    def candidates(self, v: np.ndarray) -> list[int]:
        """All base cells (0-based) whose closed region contains direction v."""
        z = v[2]
        phi = math.atan2(v[1], v[0]) % (2.0 * math.pi)
        out = []
        for b, (z_lo, z_hi, c) in enumerate(self.bands):
            if not (z_lo <= z <= z_hi):
                continue
            width = 2.0 * math.pi / c
            for s in range(c):
                lo, hi = s * width, (s + 1) * width
                if lo <= phi <= hi or lo <= phi + 2.0 * math.pi <= hi:
                    out.append(self.offsets[b] + s)
        return out

    def center(self, cell: int) -> np.ndarray:
        for b, (z_lo, z_hi, c) in enumerate(self.bands):
            if self.offsets[b] <= cell < self.offsets[b] + c:
                s = cell - self.offsets[b]
                if c == 1 and b == 0 and z_hi == 1.0:
                    return np.array([0.0, 0.0, 1.0])
                z = 0.5 * (z_lo + z_hi)
                width = 2.0 * math.pi / c
                phi = (s + 0.5) * width
                rho = math.sqrt(max(1.0 - z * z, 0.0))
                return np.array([rho * math.cos(phi), rho * math.sin(phi), z])
        raise ValueError(f"no zonal cell {cell}")


_CONE_AXES = (
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 0.0, 1.0),
)


class PatchScheme:
    """Immutable patch decomposition; safe for concurrent reads."""

    def __init__(self, sys: FermiSystem, M: int, delta: float, shell_thickness: float):
        if M < 2 or M % 2 != 0:
            raise ValueError("patch count M must be an even integer >= 2")
        if not (0.0 < delta < DELTA_MAX):
            raise ValueError("delta must lie in (0, 1/6)")
        if shell_thickness <= 0:
            raise ValueError("shell_thickness must be positive")
        self.M = M
        self.delta = delta
        self.shell_thickness = shell_thickness
        self._k_fermi = sys.k_fermi
        half = M // 2
        self.antipode = {a: a + half if a <= half else a - half for a in range(1, M + 1)}

        self._zonal = None
        if M == 6:
            dirs = [np.array(a) for a in _CONE_AXES]
        elif M == 2:
            dirs = [np.array([0.0, 0.0, 1.0])]
        else:
            self._zonal = _ZonalCells(half)
            dirs = [self._zonal.center(c) for c in range(half)]
        units = dirs + [-d for d in dirs]
        self.patches = tuple(
            Patch(
                id=i + 1,
                center=tuple(float(x) * sys.k_fermi for x in u),
                unit_center=tuple(float(x) for x in u),
            )
            for i, u in enumerate(units)
        )

        # claim the shell lattice points once, deterministically
        lo = sys.k_fermi - shell_thickness
        hi = sys.k_fermi + shell_thickness
        claims: dict[Momentum, int] = {}
        for k in ball_points(hi):
            if k.norm_sq == 0:
                continue  # the origin has no direction and is claimed by no patch
            r = k.norm
            if r < lo or r > hi:
                continue
            claims[k] = self.patch_of_direction((k.x / r, k.y / r, k.z / r))
        self.claims = claims

        particles: dict[int, list[Momentum]] = {a: [] for a in range(1, M + 1)}
        holes: dict[int, list[Momentum]] = {a: [] for a in range(1, M + 1)}
        kf_sq = sys.k_fermi * sys.k_fermi
        for k in sorted(claims, key=lambda k: k.sort_key):
            (holes if k.norm_sq <= kf_sq else particles)[claims[k]].append(k)
        self.particles = {a: tuple(v) for a, v in particles.items()}
        self.holes = {a: tuple(v) for a, v in holes.items()}
        self._hole_sets = {a: frozenset(v) for a, v in holes.items()}

    # -- direction assignment ------------------------------------------------

    def _northern_candidates(self, v: np.ndarray) -> list[int]:
        if self.M == 2:
            return [1]
        if self.M == 6:
            mx = max(abs(v[0]), abs(v[1]), abs(v[2]))
            out = []
            for i in range(3):
                if abs(v[i]) == mx:
                    out.append(i + 1 if v[i] > 0 else i + 4)
            return out
        return [c + 1 for c in self._zonal.candidates(v)]

    def patch_of_direction(self, v) -> int:
        """Patch id claiming the (nonzero) direction v.

        Boundary ties resolve to the smallest candidate id, applied to the
        northern representative of the +-v pair so that the assignment is
        exactly antipodally symmetric.
        """
        w = np.asarray(v, dtype=float)
        if in_northern_half(w):
            return min(self._northern_candidates(w))
        return self.antipode[min(self._northern_candidates(-w))]

    # -- lattice claims ------------------------------------------------------

    def claimed_patch(self, k: Momentum) -> int | None:
        return self.claims.get(k)

    def patch_claims(self, alpha: int, k: Momentum) -> bool:
        return self.claims.get(k) == alpha

    def is_hole(self, alpha: int, k: Momentum) -> bool:
        return k in self._hole_sets[alpha]


def build_patch_scheme(
    sys: FermiSystem, M: int, delta: float, shell_thickness: float
) -> PatchScheme:
    return PatchScheme(sys, M, delta, shell_thickness)


def index_sets(scheme: PatchScheme, sys: FermiSystem, k: Momentum) -> IndexSets:
    """Patches whose center direction is aligned/anti-aligned with k.

    The alignment test uses the unnormalized transfer: k . unit_center
    against the threshold N^(-delta).
    """
    thr = sys.N ** (-scheme.delta)
    plus = tuple(p.id for p in scheme.patches if k.dot(p.unit_center) >= thr)
    minus = tuple(p.id for p in scheme.patches if k.dot(p.unit_center) <= -thr)
    return IndexSets(k=k, plus=plus, minus=minus)


def signed_transfer(alpha: int, k: Momentum, sets: IndexSets) -> Momentum:
    """+k for aligned patches, -k for anti-aligned ones."""
    side = sets.side(alpha)  # raises if alpha is in neither set (caller bug)
    return k if side > 0 else -k


def pair_list(
    scheme: PatchScheme, sys: FermiSystem, alpha: int, k: Momentum
) -> list[tuple[Momentum, Momentum]]:
    """All particle-hole pairs (p, h = p -+ k) claimed by patch alpha."""
    sets = index_sets(scheme, sys, k)
    side = sets.side(alpha)
    step = -k if side > 0 else k
    out = []
    for p in scheme.particles[alpha]:
        h = p + step
        if h in scheme._hole_sets[alpha]:
            out.append((p, h))
    return out


def pair_count(
    scheme: PatchScheme, sys: FermiSystem, alpha: int, k: Momentum
) -> PairCount:
    n_sq = len(pair_list(scheme, sys, alpha, k))
    return PairCount(alpha=alpha, k=k, n_squared=n_sq, n=math.sqrt(n_sq))


def active_index_sets(scheme: PatchScheme, sys: FermiSystem, k: Momentum) -> IndexSets:
    """Index sets with zero-pair-count patches dropped.

    A patch with no particle-hole pair carries an identically vanishing
    pair-creation kernel, so dropping it changes no sum.
    """
    raw = index_sets(scheme, sys, k)
    plus = tuple(
        a for a in raw.plus if pair_count(scheme, sys, a, k).n_squared > 0
    )
    minus = tuple(
        a for a in raw.minus if pair_count(scheme, sys, a, k).n_squared > 0
    )
    return IndexSets(k=k, plus=plus, minus=minus)


def export_patch_summary(scheme: PatchScheme, sys: FermiSystem) -> dict:
    """JSON-friendly summary: ids, centers, per-k index sets, pair counts."""
    def diameter(points):
        # diagnostic only; the asymptotic regularity conditions on patch
        # diameters cannot hold at desk scale and are never asserted
        best = 0.0
        for i, a in enumerate(points):
            for b in points[i + 1 :]:
                best = max(best, (a - b).norm)
        return best

    out = {
        "patch_count": scheme.M,
        "delta": scheme.delta,
        "shell_thickness": scheme.shell_thickness,
        "patches": [
            {
                "id": p.id,
                "center": list(p.center),
                "unit_center": list(p.unit_center),
                "antipode": scheme.antipode[p.id],
                "hole_count": len(scheme.holes[p.id]),
                "particle_count": len(scheme.particles[p.id]),
                "diameter": diameter(
                    list(scheme.holes[p.id]) + list(scheme.particles[p.id])
                ),
            }
            for p in scheme.patches
        ],
        "transfers": [],
    }
    for k in transfer_set(sys):
        sets = index_sets(scheme, sys, k)
        counts = [
            {
                "alpha": a,
                "n_squared": pair_count(scheme, sys, a, k).n_squared,
            }
            for a in sorted(sets.plus + sets.minus)
        ]
        out["transfers"].append(
            {
                "k": k.to_list(),
                "plus": list(sets.plus),
                "minus": list(sets.minus),
                "pair_counts": counts,
            }
        )
    return out
