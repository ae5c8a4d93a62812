"""fermidiag: excitation density of a patched Fermi-gas trial state.

The package builds a quartic pair-excitation generator over antipodally
symmetric Fermi-surface patches, evaluates the resulting
excitation-density series by enumerating contraction diagrams with exact
fermionic signs, evaluates the length-2-loop (bosonized) restriction and
its closed form, and cross-validates everything against an exact sparse
Fock-space oracle at desk scale.
"""

from .lattice import Momentum, FermiSystem, build_fermi_system, in_northern_half, transfer_set
from .patches import (
    IndexSets,
    PairCount,
    Patch,
    PatchScheme,
    active_index_sets,
    build_patch_scheme,
    export_patch_summary,
    index_sets,
    pair_count,
    pair_list,
    signed_transfer,
)
from .kernel import (
    KMatrixBundle,
    Potential,
    SpdError,
    build_K,
    build_bundles,
    build_db,
    cosh_2K_minus_identity,
)
from .series import (
    NqResult,
    SeriesEvaluator,
    nq,
    nq_bosonized_closed,
    s_norm_bound,
    series_tail,
)
from .models import RunConfig

__version__ = "0.1.0"

__all__ = [
    "Momentum",
    "FermiSystem",
    "build_fermi_system",
    "in_northern_half",
    "transfer_set",
    "Patch",
    "PatchScheme",
    "IndexSets",
    "PairCount",
    "build_patch_scheme",
    "index_sets",
    "active_index_sets",
    "signed_transfer",
    "pair_count",
    "pair_list",
    "export_patch_summary",
    "Potential",
    "KMatrixBundle",
    "SpdError",
    "build_db",
    "build_K",
    "build_bundles",
    "cosh_2K_minus_identity",
    "SeriesEvaluator",
    "NqResult",
    "nq",
    "nq_bosonized_closed",
    "s_norm_bound",
    "series_tail",
    "RunConfig",
    "__version__",
]
