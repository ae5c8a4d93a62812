"""Interaction data and the per-transfer matrix pipeline producing K(k).

For each transfer momentum k the pipeline assembles the diagonal cosine
matrix d and the rank-one interaction matrix b over the aligned patches,
replicates them into 2x2 blocks D, W, W~, and evaluates

    K = log |S1^T|,   S1 = (D+W-W~)^(1/2) E^(-1/2),
    E = ((D+W-W~)^(1/2) (D+W+W~) (D+W-W~)^(1/2))^(1/2),

with |A| = (A A^T)^(1/2).  All matrix functions go through dense
symmetric eigendecompositions; matrices are tiny at desk scale.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .lattice import Momentum, FermiSystem, ball_points, transfer_set
from .patches import PatchScheme, active_index_sets, pair_count

SPD_RTOL = 1e-12


class SpdError(RuntimeError):
    """An intermediate matrix that must be positive definite is not.

    Carries the offending minimum eigenvalue.  This can happen for
    attractive potentials (negative Fourier coefficients); the diagram
    machinery still runs if the caller supplies K directly via
    ``KMatrixBundle.from_K``.
    """

    def __init__(self, name: str, k: Momentum, min_eigenvalue: float):
        self.name = name
        self.k = k
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"matrix {name} for transfer {k} is not positive definite "
            f"(min eigenvalue {min_eigenvalue:.3e})"
        )


class NoActivePatchesError(ValueError):
    """No aligned patch with a nonzero pair count for this transfer."""


@dataclass(frozen=True)
class Potential:
    """Finite table of real-even Fourier coefficients V^(k)."""

    coefficients: Mapping[Momentum, float]
    support_radius: float

    def v_hat(self, k: Momentum) -> float:
        return self.coefficients.get(k, 0.0)

    @classmethod
    def zero(cls) -> "Potential":
        return cls(coefficients={}, support_radius=0.0)

    @classmethod
    def uniform(cls, strength: float, radius: float) -> "Potential":
        """V^(k) = strength on all lattice k with |k| <= radius."""
        coeff = {k: float(strength) for k in ball_points(radius)}
        return cls(coefficients=coeff, support_radius=radius)

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[Momentum, float]]) -> "Potential":
        coeff: dict[Momentum, float] = {}
        for k, v in entries:
            for key in (k, -k):  # real even potential
                if key in coeff and coeff[key] != float(v):
                    raise ValueError(
                        f"conflicting coefficients for {key}: "
                        f"{coeff[key]} vs {v} (potential must be even)"
                    )
                coeff[key] = float(v)
        radius = max((k.norm for k in coeff), default=0.0)
        return cls(coefficients=coeff, support_radius=radius)

    @classmethod
    def from_json_obj(cls, obj) -> "Potential":
        """Load from a JSON table of records {"k": [x, y, z], "v_hat": value}."""
        entries = []
        for rec in obj:
            kx, ky, kz = rec["k"]
            entries.append((Momentum(int(kx), int(ky), int(kz)), float(rec["v_hat"])))
        return cls.from_entries(entries)

    @classmethod
    def load(cls, path: str) -> "Potential":
        with open(path) as fh:
            return cls.from_json_obj(json.load(fh))


@dataclass(frozen=True)
class DbMatrices:
    """The aligned-patch d, b matrices for one transfer."""

    k: Momentum
    plus: tuple[int, ...]
    minus: tuple[int, ...]  # antipodes of `plus`, in the same order
    d: np.ndarray  # diagonal entries, shape (m,)
    b: np.ndarray  # shape (m, m)
    n_by_alpha: dict[int, float]


def build_db(
    sys: FermiSystem, scheme: PatchScheme, k: Momentum, potential: Potential
) -> DbMatrices:
    """d = diag(|k^ . w^_a|) and b = V^(k) n_a n_b / (2 hbar kappa N |k|)."""
    sets = active_index_sets(scheme, sys, k)
    if not sets.plus:
        raise NoActivePatchesError(f"no active patches for transfer {k}")
    plus = tuple(sorted(sets.plus))
    minus = tuple(scheme.antipode[a] for a in plus)
    if set(minus) != set(sets.minus):
        raise RuntimeError(
            f"pair-count pruning broke antipodal symmetry at {k}: "
            f"{minus} vs {sets.minus}"
        )
    knorm = k.norm
    khat = (k.x / knorm, k.y / knorm, k.z / knorm)
    units = {p.id: p.unit_center for p in scheme.patches}
    d = np.array([abs(khat[0] * units[a][0] + khat[1] * units[a][1] + khat[2] * units[a][2]) for a in plus])
    n_by_alpha = {
        a: pair_count(scheme, sys, a, k).n for a in plus + minus
    }
    pref = potential.v_hat(k) / (2.0 * sys.hbar * sys.kappa * sys.N * knorm)
    nvec = np.array([n_by_alpha[a] for a in plus])
    b = pref * np.outer(nvec, nvec)
    return DbMatrices(k=k, plus=plus, minus=minus, d=d, b=b, n_by_alpha=n_by_alpha)


@dataclass(frozen=True)
class KMatrixBundle:
    """Per-transfer matrices, labeled plus-block first then minus-block."""

    k: Momentum
    labels: tuple[int, ...]
    half_dim: int
    K: np.ndarray
    n_by_alpha: dict[int, float]
    d: np.ndarray | None = None
    b: np.ndarray | None = None
    D: np.ndarray | None = None
    W: np.ndarray | None = None
    W_tilde: np.ndarray | None = None
    S1: np.ndarray | None = None
    E: np.ndarray | None = None

    @property
    def index(self) -> dict[int, int]:
        return {a: i for i, a in enumerate(self.labels)}

    @classmethod
    def from_K(
        cls,
        k: Momentum,
        labels: tuple[int, ...],
        K: np.ndarray,
        n_by_alpha: dict[int, float],
    ) -> "KMatrixBundle":
        """User-supplied K, bypassing the d/b pipeline."""
        K = np.asarray(K, dtype=float)
        if K.shape != (len(labels), len(labels)):
            raise ValueError("K shape does not match the label list")
        return cls(
            k=k, labels=tuple(labels), half_dim=len(labels) // 2,
            K=K, n_by_alpha=dict(n_by_alpha),
        )

    def to_json_dict(self) -> dict:
        out = {
            "k": self.k.to_list(),
            "labels": list(self.labels),
            "K": self.K.tolist(),
            "pair_counts": {str(a): self.n_by_alpha[a] for a in self.labels},
        }
        for name in ("d", "b", "S1", "E"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val.tolist()
        return out


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _spd_fun(a: np.ndarray, fn, name: str, k: Momentum) -> np.ndarray:
    """Apply fn to the spectrum of a symmetric matrix, requiring SPD."""
    w, v = np.linalg.eigh(_sym(a))
    if w.min() <= SPD_RTOL * max(w.max(), 0.0):
        raise SpdError(name, k, float(w.min()))
    return (v * fn(w)) @ v.T


def build_K(db: DbMatrices) -> KMatrixBundle:
    """Assemble the 2x2 block matrices and evaluate K for one transfer."""
    m = len(db.plus)
    eye = np.eye(m)
    zero = np.zeros((m, m))
    dmat = np.diag(db.d)
    D = np.block([[dmat, zero], [zero, dmat]])
    W = np.block([[db.b, zero], [zero, db.b]])
    Wt = np.block([[zero, db.b], [db.b, zero]])
    labels = db.plus + db.minus
    if not np.any(db.b):
        # vanishing interaction short-circuits to K = 0 exactly
        return KMatrixBundle(
            k=db.k, labels=labels, half_dim=m, K=np.zeros((2 * m, 2 * m)),
            n_by_alpha=dict(db.n_by_alpha), d=db.d, b=db.b,
            D=D, W=W, W_tilde=Wt, S1=np.eye(2 * m), E=D.copy(),
        )
    a_minus = D + W - Wt
    a_plus = D + W + Wt
    sqrt_am = _spd_fun(a_minus, np.sqrt, "D+W-W~", db.k)
    # a_plus must be SPD as well; checked while forming E
    E = _spd_fun(_sym(sqrt_am @ a_plus @ sqrt_am), np.sqrt, "inner product matrix", db.k)
    inv_sqrt_E = _spd_fun(E, lambda w: 1.0 / np.sqrt(w), "E", db.k)
    S1 = sqrt_am @ inv_sqrt_E
    # |S1^T| = (S1^T S1)^(1/2), so K = 0.5 * log(E^(-1/2) (D+W-W~) E^(-1/2))
    K = 0.5 * _spd_fun(_sym(inv_sqrt_E @ a_minus @ inv_sqrt_E), np.log, "|S1^T|^2", db.k)
    return KMatrixBundle(
        k=db.k, labels=labels, half_dim=m, K=_sym(K),
        n_by_alpha=dict(db.n_by_alpha), d=db.d, b=db.b,
        D=D, W=W, W_tilde=Wt, S1=S1, E=E,
    )


def cosh_2K_minus_identity(bundle: KMatrixBundle) -> np.ndarray:
    """cosh(2K) - 1 through the eigendecomposition of K."""
    K = bundle.K
    if not np.any(K):
        return np.zeros_like(K)
    w, v = np.linalg.eigh(_sym(K))
    return (v * (np.cosh(2.0 * w) - 1.0)) @ v.T


def build_bundles(
    sys: FermiSystem, scheme: PatchScheme, potential: Potential
) -> dict[Momentum, KMatrixBundle]:
    """K bundles for every transfer with at least one active patch."""
    out: dict[Momentum, KMatrixBundle] = {}
    for k in transfer_set(sys):
        try:
            db = build_db(sys, scheme, k, potential)
        except NoActivePatchesError:
            continue
        out[k] = build_K(db)
    return out
