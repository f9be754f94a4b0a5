"""Export manifests: source checkpoint, name mapping, normalization, probes.

One manifest per supported variant is checked into ``manifests/``. The
mapping must be a bijection from source parameter names onto the canonical
names the engine's spec demands.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from cnx import arch

PROBES = ("stem_out", "stage0_out", "stage1_out", "stage2_out", "stage3_out", "pooled", "logits")

IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]


class MappingError(ValueError):
    """Name mapping is not a bijection onto the spec's canonical names."""


class UnmappedParameterError(MappingError):
    """A source checkpoint parameter has no mapping row."""


@dataclass
class ExportManifest:
    variant: str
    source_path: str
    mapping: dict[str, str]  # source parameter name -> canonical layer name
    mean: list[float] = field(default_factory=lambda: list(IMAGENET_MEAN))
    std: list[float] = field(default_factory=lambda: list(IMAGENET_STD))
    probes: tuple[str, ...] = PROBES
    source_url: Optional[str] = None
    num_classes: int = 1000

    def spec(self) -> arch.ModelSpec:
        return arch.build_variant(self.variant, self.num_classes)

    def validate(self) -> None:
        """Mapping must biject onto the spec's parameter plan."""
        expected = set(arch.parameter_shapes(self.spec()))
        targets = list(self.mapping.values())
        if len(set(targets)) != len(targets):
            dupes = sorted({t for t in targets if targets.count(t) > 1})
            raise MappingError(f"mapping targets duplicated: {', '.join(dupes)}")
        missing = sorted(expected - set(targets))
        extra = sorted(set(targets) - expected)
        if missing:
            raise MappingError(f"canonical names not covered by mapping: {', '.join(missing[:5])}"
                               + (" ..." if len(missing) > 5 else ""))
        if extra:
            raise MappingError(f"mapping targets unknown to the spec: {', '.join(extra[:5])}")

    def inverse(self) -> dict[str, str]:
        return {canonical: source for source, canonical in self.mapping.items()}

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "source": {"path": self.source_path, "url": self.source_url},
            "normalization": {"mean": self.mean, "std": self.std},
            "probes": list(self.probes),
            "num_classes": self.num_classes,
            "mapping": self.mapping,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ExportManifest":
        d = json.loads(Path(path).read_text())
        return cls(
            variant=d["variant"],
            source_path=d["source"]["path"],
            source_url=d["source"].get("url"),
            mapping=d["mapping"],
            mean=d["normalization"]["mean"],
            std=d["normalization"]["std"],
            probes=tuple(d.get("probes", PROBES)),
            num_classes=d.get("num_classes", 1000),
        )


def torchvision_mapping(variant: str, num_classes: int = 1000) -> dict[str, str]:
    """Source-name table for torchvision's ConvNeXt state_dict layout.

    Stages sit at features[1,3,5,7], downsamplers at features[2,4,6]; each
    block holds dwconv/LN/linear/linear at block[0,2,3,5] plus layer_scale.
    """
    spec = arch.build_variant(variant, num_classes)
    mapping = {
        "features.0.0.weight": "stem.conv.weight",
        "features.0.0.bias": "stem.conv.bias",
        "features.0.1.weight": "stem.norm.gamma",
        "features.0.1.bias": "stem.norm.beta",
        "classifier.0.weight": "head.norm.gamma",
        "classifier.0.bias": "head.norm.beta",
        "classifier.2.weight": "head.fc.weight",
        "classifier.2.bias": "head.fc.bias",
    }
    inner = {"block.0": "spatial", "block.2": "norm1", "block.3": "pw1", "block.5": "pw2"}
    for i, stage in enumerate(spec.stages):
        fi = 2 * i + 1
        for j in range(stage.blocks):
            prefix = f"stages.{i}.blocks.{j}"
            for src, dst in inner.items():
                suffixes = (("weight", "gamma"), ("bias", "beta")) if dst == "norm1" else \
                           (("weight", "weight"), ("bias", "bias"))
                for s_suf, d_suf in suffixes:
                    mapping[f"features.{fi}.{j}.{src}.{s_suf}"] = f"{prefix}.{dst}.{d_suf}"
            mapping[f"features.{fi}.{j}.layer_scale"] = f"{prefix}.gamma"
        if i > 0:
            fd = 2 * i
            mapping[f"features.{fd}.0.weight"] = f"downsamplers.{i - 1}.norm.gamma"
            mapping[f"features.{fd}.0.bias"] = f"downsamplers.{i - 1}.norm.beta"
            mapping[f"features.{fd}.1.weight"] = f"downsamplers.{i - 1}.conv.weight"
            mapping[f"features.{fd}.1.bias"] = f"downsamplers.{i - 1}.conv.bias"
    return mapping


def torchvision_manifest(variant: str, source_path: str, num_classes: int = 1000,
                         source_url: Optional[str] = None) -> ExportManifest:
    manifest = ExportManifest(
        variant=variant, source_path=str(source_path), source_url=source_url,
        mapping=torchvision_mapping(variant, num_classes), num_classes=num_classes,
    )
    manifest.validate()
    return manifest
