"""Building footprint detection with a graph-convolutional polygon head."""

from ._polygcn import (
    Detector,
    cyclic_polygon_loss,
    decode_deltas,
    default_config,
    encode_deltas,
    generate_scene,
    match_and_score,
    normalize_config,
    polygon_iou,
    render_overlay,
)

__all__ = [
    "Detector",
    "cyclic_polygon_loss",
    "decode_deltas",
    "default_config",
    "encode_deltas",
    "generate_scene",
    "match_and_score",
    "normalize_config",
    "polygon_iou",
    "render_overlay",
]
