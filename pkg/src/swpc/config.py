"""One configuration document for the whole pipeline.

Experiments are sweeps over this structure, so it round-trips through
JSON and every stage reads from it rather than taking loose arguments.
The ablation switches control which pipeline components run: the two SSL
stages and the run-averaging of Eq-style probability smoothing at decode
time (averaging off means each gated window is judged alone).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .augment import AugmentParams
from .datagen import SynthSpec
from .stream_engine import StreamConfig
from .training import SslConfig, SupervisedConfig

MODES = ("within_subject", "cross_subject")


@dataclass(frozen=True)
class AblationSwitches:
    ssl_prescreen: bool = True
    ssl_classification: bool = True
    averaging: bool = True


@dataclass
class SwpcConfig:
    supervised: SupervisedConfig = field(default_factory=SupervisedConfig)
    ssl: SslConfig = field(default_factory=SslConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    augment: AugmentParams = field(default_factory=AugmentParams)
    ablation: AblationSwitches = field(default_factory=AblationSwitches)
    # Architecture overrides applied on top of the data-derived defaults,
    # e.g. {"f1": 4, "depth_mult": 2, "f2": 8}.
    net: dict = field(default_factory=dict)
    mode: str = "within_subject"
    offline_adapt: bool = False
    seeds: list[int] = field(default_factory=lambda: [0])
    train_trials_per_class: int = 40

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.train_trials_per_class < 2:
            raise ValueError("need at least two training trials per class")
        self.supervised.validate()
        self.ssl.validate()
        self.stream.validate()
        self.synth.validate()
        self.augment.validate()

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def config_from_dict(doc: dict) -> SwpcConfig:
    doc = dict(doc)
    synth_doc = dict(doc.get("synth", {}))
    if "rest_len_range_s" in synth_doc:
        synth_doc["rest_len_range_s"] = tuple(synth_doc["rest_len_range_s"])
    if synth_doc.get("class_channels") is not None:
        synth_doc["class_channels"] = tuple(tuple(c) for c in synth_doc["class_channels"])
    aug_doc = dict(doc.get("augment", {}))
    if "scale_choices" in aug_doc:
        aug_doc["scale_choices"] = tuple(aug_doc["scale_choices"])
    cfg = SwpcConfig(
        supervised=SupervisedConfig(**doc.get("supervised", {})),
        ssl=SslConfig(**doc.get("ssl", {})),
        stream=StreamConfig(**doc.get("stream", {})),
        synth=SynthSpec(**synth_doc),
        augment=AugmentParams(**aug_doc),
        ablation=AblationSwitches(**doc.get("ablation", {})),
        net=dict(doc.get("net", {})),
        mode=doc.get("mode", "within_subject"),
        offline_adapt=bool(doc.get("offline_adapt", False)),
        seeds=list(doc.get("seeds", [0])),
        train_trials_per_class=int(doc.get("train_trials_per_class", 40)),
    )
    cfg.validate()
    return cfg


def config_from_json(text: str) -> SwpcConfig:
    return config_from_dict(json.loads(text))
