"""Pydantic request/response models shared by the service and the CLI."""
from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .lattice import Momentum, FermiSystem, build_fermi_system
from .patches import PatchScheme, build_patch_scheme
from .kernel import KMatrixBundle, Potential, build_bundles

Method = Literal["exact-truncated", "bosonized-series", "bosonized-closed", "oracle"]

METHODS: tuple[str, ...] = (
    "exact-truncated",
    "bosonized-series",
    "bosonized-closed",
    "oracle",
)


class PotentialEntry(BaseModel):
    k: tuple[int, int, int]
    v_hat: float


class PotentialSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["zero", "uniform", "table"] = "uniform"
    strength: float = 1.0
    radius: Optional[float] = None
    entries: Optional[tuple[PotentialEntry, ...]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "table" and not self.entries:
            raise ValueError("table potential requires entries")
        return self

    def build(self) -> Potential:
        if self.kind == "zero":
            return Potential.zero()
        if self.kind == "uniform":
            radius = self.radius if self.radius is not None else 1.0
            return Potential.uniform(self.strength, radius)
        return Potential.from_entries(
            [(Momentum(*e.k), e.v_hat) for e in self.entries]
        )


class RunConfig(BaseModel):
    """Run configuration; every physics parameter is explicit.

    The trailing fields (q_list, methods, n_max, threads, seed) are
    defaults for computations over this system and can be overridden per
    request or per CLI invocation.
    """

    model_config = ConfigDict(frozen=True)

    k_fermi: float = 1.0
    transfer_radius: float = 1.0
    patch_count: int = 6
    delta: float = 1.0 / 12.0
    shell_thickness: float = 1.1
    potential: PotentialSpec = PotentialSpec(kind="uniform", strength=1.0, radius=1.0)
    q_list: Union[Literal["all-in-shell"], tuple[tuple[int, int, int], ...]] = (
        "all-in-shell"
    )
    methods: tuple[Method, ...] = ("bosonized-closed",)
    n_max: Optional[int] = None
    threads: int = 1
    seed: int = 0

    @field_validator("k_fermi")
    @classmethod
    def _kf(cls, v):
        if v < 0:
            raise ValueError("k_fermi must be nonnegative")
        return v

    @field_validator("transfer_radius", "shell_thickness")
    @classmethod
    def _positive(cls, v):
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @field_validator("patch_count")
    @classmethod
    def _even(cls, v):
        if v < 2 or v % 2 != 0:
            raise ValueError("patch_count must be an even integer >= 2")
        return v

    @field_validator("delta")
    @classmethod
    def _delta(cls, v):
        if not (0.0 < v < 1.0 / 6.0):
            raise ValueError("delta must lie in (0, 1/6)")
        return v

    @field_validator("n_max")
    @classmethod
    def _even_order(cls, v):
        if v is not None and (v < 2 or v % 2 != 0):
            raise ValueError("n_max must be an even integer >= 2")
        return v

    @field_validator("threads")
    @classmethod
    def _threads(cls, v):
        if v < 1:
            raise ValueError("threads must be >= 1")
        return v

    _PHYSICS_FIELDS = (
        "k_fermi",
        "transfer_radius",
        "patch_count",
        "delta",
        "shell_thickness",
        "potential",
    )

    def physics_json(self) -> str:
        dump = self.model_dump(mode="json", include=set(self._PHYSICS_FIELDS))
        return json.dumps(dump, sort_keys=True)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


class Problem:
    """Assembled domain objects for one configuration."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.sys: FermiSystem = build_fermi_system(
            config.k_fermi, config.transfer_radius
        )
        self.scheme: PatchScheme = build_patch_scheme(
            self.sys, config.patch_count, config.delta, config.shell_thickness
        )
        self.potential: Potential = config.potential.build()
        self.bundles: dict[Momentum, KMatrixBundle] = build_bundles(
            self.sys, self.scheme, self.potential
        )

    def shell_momenta(self) -> list[Momentum]:
        return sorted(self.scheme.claims, key=lambda k: k.sort_key)


@lru_cache(maxsize=8)
def _problem_for(physics: str) -> Problem:
    return Problem(RunConfig.model_validate_json(physics))


def build_problem(config: RunConfig) -> Problem:
    """Problem assembly cached on the physics fields of the configuration."""
    return _problem_for(config.physics_json())


# -- request/response models -------------------------------------------------


class InfoRequest(BaseModel):
    config: RunConfig = RunConfig()


class TransferInfo(BaseModel):
    k: tuple[int, int, int]
    plus: list[int]
    minus: list[int]
    pair_counts: dict[str, int]


class InfoResponse(BaseModel):
    config_hash: str
    particle_count: int
    transfer_count: int
    patch_count: int
    mode_count_estimate: int
    transfers: list[TransferInfo]
    generator_norm_bound: float
    convergence_envelope: float
    tail_at_default_order: float


class NqRequest(BaseModel):
    """A table request; unset fields fall back to the config defaults."""

    config: RunConfig = RunConfig()
    methods: Optional[list[Method]] = None
    q_list: Optional[Union[Literal["all-in-shell"], list[tuple[int, int, int]]]] = None
    n_max: Optional[int] = None
    threads: Optional[int] = None

    @field_validator("n_max")
    @classmethod
    def _even_order(cls, v):
        if v is not None and (v < 2 or v % 2 != 0):
            raise ValueError("n_max must be an even integer >= 2")
        return v

    @field_validator("threads")
    @classmethod
    def _threads(cls, v):
        if v is not None and v < 1:
            raise ValueError("threads must be >= 1")
        return v

    def resolved(self) -> tuple[list[str], Union[str, list], Optional[int], int]:
        methods = list(self.methods if self.methods is not None else self.config.methods)
        q_list = self.q_list if self.q_list is not None else self.config.q_list
        n_max = self.n_max if self.n_max is not None else self.config.n_max
        threads = self.threads if self.threads is not None else self.config.threads
        return methods, q_list, n_max, threads


class NqRecord(BaseModel):
    q: tuple[int, int, int]
    side: str
    method: str
    n_max: Optional[int]
    value: float
    per_order: list[tuple[int, float]] = Field(default_factory=list)
    diagram_counts: dict[str, int] = Field(default_factory=dict)
    loop_histogram: dict[str, int] = Field(default_factory=dict)


class NqResponse(BaseModel):
    config_hash: str
    records: list[NqRecord]


class VerifyRequest(BaseModel):
    config: RunConfig = RunConfig()
    deep: bool = False
    seed: int = 0


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str


class VerifyResponse(BaseModel):
    config_hash: str
    passed: bool
    checks: list[CheckResult]


class PatchExportResponse(BaseModel):
    config_hash: str
    summary: dict
