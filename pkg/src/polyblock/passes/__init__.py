"""Program rewrites and the pipeline that strings them together."""

from .boundary import NoInteriorRegion, interior_box, separate_boundary
from .fusion import Refusal, fuse
from .layout import ExternalBufferImmutable, transpose_layout
from .memory import localize, scalarize
from .partition import NotPartitionable, partition
from .pipeline import (
    PASSES,
    PassConfig,
    PassFailed,
    Pipeline,
    UnknownPass,
    apply_pipeline,
    get_pass,
    register_pass,
)
from .schedule import greedy_order, place, reorder, schedule
from .stencil import StencilSpec, stencil_match
from .tiling import (
    InvalidTile,
    NotTileable,
    TileCostReport,
    TileShape,
    autotile,
    autotile_search,
    tile_cost,
    tile_rewrite,
)

__all__ = [
    "PASSES",
    "ExternalBufferImmutable",
    "InvalidTile",
    "NoInteriorRegion",
    "NotPartitionable",
    "NotTileable",
    "PassConfig",
    "PassFailed",
    "Pipeline",
    "Refusal",
    "StencilSpec",
    "TileCostReport",
    "TileShape",
    "UnknownPass",
    "apply_pipeline",
    "get_pass",
    "autotile",
    "autotile_search",
    "fuse",
    "greedy_order",
    "interior_box",
    "localize",
    "partition",
    "place",
    "register_pass",
    "reorder",
    "scalarize",
    "schedule",
    "separate_boundary",
    "stencil_match",
    "tile_cost",
    "tile_rewrite",
    "transpose_layout",
]
