import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def single_torch_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


MICRO_CONVNEXT = {
    "stem": {"kind": "patchify", "kernel_size": 4, "stride": 4, "out_channels": 8,
             "norm_kind": "layer", "act_kind": None},
    "stages": [{"blocks": 2, "width": 8, "block": {
        "channels": 8, "kernel_size": 7, "inner_ratio": 4.0,
        "spatial_position": "first", "grouping": "depthwise",
        "norm_kind": "layer", "norm_placement": "single_before_pointwise",
        "act_kind": "gelu", "act_placement": "single_between_pointwise",
        "layer_scale_init": 0.5}}],
    "downsampling": "in_block",
    "head": {"num_classes": 3, "final_norm": True},
}

MICRO_CLASSIC = {
    "stem": {"kind": "resnet", "kernel_size": 7, "stride": 2, "out_channels": 8,
             "norm_kind": "batch", "act_kind": "relu"},
    "stages": [
        {"blocks": 2, "width": 16, "block": {
            "channels": 16, "kernel_size": 3, "inner_ratio": 0.25,
            "spatial_position": "middle", "grouping": "dense",
            "norm_kind": "batch", "norm_placement": "per_conv",
            "act_kind": "relu", "act_placement": "per_conv"}},
        {"blocks": 1, "width": 32, "block": {
            "channels": 32, "kernel_size": 3, "inner_ratio": 0.25,
            "spatial_position": "middle", "grouping": "dense",
            "norm_kind": "batch", "norm_placement": "per_conv",
            "act_kind": "relu", "act_placement": "per_conv"}}],
    "downsampling": "in_block",
    "head": {"num_classes": 3, "final_norm": False},
}

# moved-up depthwise with in-block downsampling: the strided intermediate
MICRO_MOVED_UP = {
    "stem": {"kind": "patchify", "kernel_size": 4, "stride": 4, "out_channels": 8,
             "norm_kind": "batch", "act_kind": "relu"},
    "stages": [
        {"blocks": 1, "width": 8, "block": {
            "channels": 8, "kernel_size": 5, "inner_ratio": 4.0,
            "spatial_position": "first", "grouping": "depthwise",
            "norm_kind": "batch", "norm_placement": "per_conv",
            "act_kind": "relu", "act_placement": "per_conv"}},
        {"blocks": 1, "width": 16, "block": {
            "channels": 16, "kernel_size": 5, "inner_ratio": 4.0,
            "spatial_position": "first", "grouping": "depthwise",
            "norm_kind": "batch", "norm_placement": "per_conv",
            "act_kind": "relu", "act_placement": "per_conv"}}],
    "downsampling": "in_block",
    "head": {"num_classes": 3, "final_norm": False},
}
