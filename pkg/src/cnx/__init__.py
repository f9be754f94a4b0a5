"""CPU engine for the ResNet-to-ConvNeXt modernization roadmap.

Architecture transforms as executable spec rewrites, forward inference and
reverse-mode differentiation on CPU, exact parameter/MAC accounting, and a
portable weight container.
"""

from .analysis import (CostReport, block_composition, cost_report, count_macs, count_params,
                       roadmap_cost_table, stage_output_sizes, stage_summaries)
from .arch import (Downsampling, HeadSpec, ModelSpec, ModelWeights, Regime, RoadmapStep,
                   StageSpec, StepId, VARIANT_NAMES, apply_step, build_variant, forward,
                   forward_probed, init_weights, micro_isotropic, parameter_defs,
                   parameter_shapes, roadmap, spec_from_dict, spec_from_json, spec_to_dict,
                   spec_to_json)
from .autograd import GradCheckReport, Grads, Runner, Tape, finite_diff_check
from .blocks import (ActKind, ActPlacement, BlockSpec, Grouping, NormKind, NormPlacement,
                     ShortcutKind, SpatialPosition, StemKind, StemSpec, block_forward,
                     block_layers, block_param_shapes, bottleneck_forward, downsample_forward,
                     drop_path_multiplier, patchify_stem, resnet_stem, stem_forward)
from .gradcheck import run_gradcheck
from .tensor import (ConvParams, NormParams, Tensor, batch_norm_inference, conv2d, gelu,
                     global_avg_pool, layer_norm, linear, max_pool, relu)
from .train import (AdamState, LabeledDataset, TrainConfig, TrainResult, adamw_step,
                    cross_entropy_smoothed, lr_at, make_blobs, make_random_labels, train_toy)
from .weights_io import (BadMagicError, BindError, ContainerError, DuplicateNameError,
                         EntryBoundsError, Fixture, HeaderMismatchError, TruncatedPayloadError,
                         WeightStore, bind, load, load_fixture, save, save_fixture,
                         store_from_model, validate_fixture)

__version__ = "0.1.0"
