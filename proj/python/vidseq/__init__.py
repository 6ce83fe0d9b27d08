"""Python bindings for the vidseq C++ core."""

from ._vidseq import (
    Model,
    Vocabulary,
    beam_search,
    bleu4,
    box_iou,
    dequantize_time,
    generate,
    greedy_decode,
    load_checkpoint,
    parse_output,
    quantize_bin,
    bin_center,
    quantize_time,
    quantize_box,
    dequantize_box,
    run_cli,
    segment_iou,
    synth_vocabulary,
    tracking_metrics,
    dvp_prf,
    encode_target,
    train,
)

__all__ = [
    "Model",
    "Vocabulary",
    "beam_search",
    "bin_center",
    "bleu4",
    "box_iou",
    "dequantize_box",
    "dequantize_time",
    "dvp_prf",
    "encode_target",
    "generate",
    "greedy_decode",
    "load_checkpoint",
    "parse_output",
    "quantize_bin",
    "quantize_box",
    "quantize_time",
    "run_cli",
    "segment_iou",
    "synth_vocabulary",
    "tracking_metrics",
    "train",
]
