"""Integer momentum lattice, Fermi ball, and transfer-momentum sets.

The torus side length is fixed to 2*pi, so momentum modes live on the
integer lattice Z^3 and all norms below are plain euclidean norms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True, slots=True)
class Momentum:
    """A lattice momentum (units of the reciprocal-lattice spacing)."""

    x: int
    y: int
    z: int

    def __add__(self, other: "Momentum") -> "Momentum":
        return Momentum(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Momentum") -> "Momentum":
        return Momentum(self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Momentum":
        return Momentum(-self.x, -self.y, -self.z)

    def __getitem__(self, i: int) -> int:
        return (self.x, self.y, self.z)[i]

    def dot(self, v: Sequence[float]) -> float:
        """Dot product with any 3-sequence (integer or float components)."""
        return self.x * v[0] + self.y * v[1] + self.z * v[2]

    @property
    def norm_sq(self) -> int:
        return self.x * self.x + self.y * self.y + self.z * self.z

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq)

    @property
    def sort_key(self) -> tuple[int, int, int]:
        # iteration order is (z, then y, then x) so downstream sums are reproducible
        return (self.z, self.y, self.x)

    def to_list(self) -> list[int]:
        return [self.x, self.y, self.z]

    def __str__(self) -> str:
        return f"({self.x},{self.y},{self.z})"


ZERO = Momentum(0, 0, 0)


def in_northern_half(k) -> bool:
    """True iff k lies in the half-space picking one of each +-k pair.

    The rule is: k_z > 0, or k_z = 0 and k_y > 0, or k_z = k_y = 0 and
    k_x > 0.  Works for `Momentum` and for any real 3-sequence.
    """
    kx, ky, kz = k[0], k[1], k[2]
    if kz > 0:
        return True
    if kz == 0 and ky > 0:
        return True
    return kz == 0 and ky == 0 and kx > 0


def ball_points(radius: float) -> list[Momentum]:
    """All lattice points with |k| <= radius, in deterministic order."""
    if radius < 0:
        return []
    r = math.floor(radius)
    r_sq = radius * radius
    pts = [
        Momentum(x, y, z)
        for z in range(-r, r + 1)
        for y in range(-r, r + 1)
        for x in range(-r, r + 1)
        if x * x + y * y + z * z <= r_sq
    ]
    pts.sort(key=lambda k: k.sort_key)
    return pts


@dataclass(frozen=True)
class FermiSystem:
    """Fermi ball data and the derived scaling constants.

    hbar = N^(-1/3) and kappa = k_fermi * N^(-1/3) are stored exactly as
    derived from the enumerated particle number N = |fermi_ball|.
    """

    k_fermi: float
    transfer_radius: float
    fermi_ball: tuple[Momentum, ...]
    N: int
    hbar: float
    kappa: float

    def in_fermi_ball(self, k: Momentum) -> bool:
        return k.norm_sq <= self.k_fermi * self.k_fermi


def build_fermi_system(k_fermi: float, transfer_radius: float) -> FermiSystem:
    """Enumerate the Fermi ball and derive N, hbar, kappa."""
    if k_fermi < 0:
        raise ValueError("k_fermi must be nonnegative")
    if transfer_radius <= 0:
        raise ValueError("transfer_radius must be positive")
    ball = tuple(ball_points(k_fermi))
    n = len(ball)
    hbar = n ** (-1.0 / 3.0)
    return FermiSystem(
        k_fermi=k_fermi,
        transfer_radius=transfer_radius,
        fermi_ball=ball,
        N=n,
        hbar=hbar,
        kappa=k_fermi * hbar,
    )


def transfer_set(sys: FermiSystem) -> tuple[Momentum, ...]:
    """Lattice momenta in the closed transfer ball, restricted to the
    northern half-space.  The ball is taken closed so that radius 1.0
    includes the unit vectors."""
    return tuple(
        k for k in ball_points(sys.transfer_radius) if in_northern_half(k)
    )
