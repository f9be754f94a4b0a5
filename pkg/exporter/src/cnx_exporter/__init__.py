"""Checkpoint and activation exporter for the cnx engine.

Converts torch-side weights (torchvision ConvNeXt or spec-schema micro models)
into the portable container and produces reference-activation fixtures that
serve as the engine's cross-framework parity oracle.
"""

from .container import lint_container, write_container, write_fixture
from .export import (ExtentMismatchError, adapt_tensor, export_fixture, export_random_micro,
                     export_weights, fixture_input, make_seeded_checkpoint)
from .manifest import (ExportManifest, MappingError, UnmappedParameterError, torchvision_manifest,
                       torchvision_mapping)
from .reference import (assert_exact_gelu, build_torchvision_model, random_spec_params,
                        spec_forward, torchvision_forward_with_probes)

__version__ = "0.1.0"
