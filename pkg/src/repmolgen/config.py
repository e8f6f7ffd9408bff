"""Experiment configuration: one JSON document with per-stage sections.

Parsing is strict: unknown keys anywhere in the document are rejected so that
typos fail loudly instead of silently falling back to defaults.  The corpus
section reuses :class:`~repmolgen.data.corpus.CorpusConfig`; the remaining
sections pair the network hyperparameters with their training budgets.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from repmolgen.data.corpus import CorpusConfig
from repmolgen.encoder import EncoderConfig
from repmolgen.errors import ConfigError
from repmolgen.moldiff import MolDenoiserConfig, TrainTricks
from repmolgen.repdiff import LowTempParams, RepDenoiserConfig


@dataclass(frozen=True)
class EncoderTrainConfig:
    """Encoder architecture plus its denoising-pretraining budget."""

    d_r: int = 64
    layers: int = 3
    hidden: int = 64
    n_rbf: int = 16
    r_max: float = 6.0
    reflection_sensitive: bool = False
    pretext_noise: float = 0.3
    head_rounds: int = 3
    steps: int = 5000
    batch_size: int = 24
    lr: float = 2e-3

    def model_config(self) -> EncoderConfig:
        return EncoderConfig(
            d_r=self.d_r,
            layers=self.layers,
            hidden=self.hidden,
            n_rbf=self.n_rbf,
            r_max=self.r_max,
            reflection_sensitive=self.reflection_sensitive,
            pretext_noise=self.pretext_noise,
        )

    def validate(self) -> None:
        self.model_config().validate()
        _positive_ints(self, "head_rounds", "steps", "batch_size")
        _positive_floats(self, "lr")


@dataclass(frozen=True)
class RepTrainConfig:
    """Representation generator: network, noise schedule, training, sampling."""

    blocks: int = 6
    hidden: int = 256
    cond_width: int = 64
    t_emb_dim: int = 32
    n_steps: int = 500
    beta_min: float = 1e-4
    beta_max: float = 0.02
    train_steps: int = 4000
    batch_size: int = 64
    lr: float = 1e-3
    temperature: float = 1.0
    psi: float = 1.0
    corrector_steps: int = 1
    snr: float = 0.15

    def model_config(self, d_r: int, n_min: int, n_max: int,
                     with_property: bool = False) -> RepDenoiserConfig:
        return RepDenoiserConfig(
            d_r=d_r,
            blocks=self.blocks,
            hidden=self.hidden,
            cond_width=self.cond_width,
            t_emb_dim=self.t_emb_dim,
            n_min=n_min,
            n_max=n_max,
            with_property=with_property,
        )

    def lowtemp(self, temperature: float | None = None,
                psi: float | None = None,
                corrector_steps: int | None = None) -> LowTempParams:
        return LowTempParams(
            temperature=self.temperature if temperature is None else temperature,
            psi=self.psi if psi is None else psi,
            corrector_steps=(self.corrector_steps if corrector_steps is None
                             else corrector_steps),
            snr=self.snr,
        )

    def validate(self) -> None:
        self.model_config(d_r=1, n_min=1, n_max=1).validate()
        _positive_ints(self, "n_steps", "train_steps", "batch_size")
        _positive_floats(self, "beta_min", "beta_max", "lr", "temperature",
                         "snr")
        if not 0.0 < self.beta_min <= self.beta_max < 1.0:
            raise ConfigError("rep schedule needs 0 < beta_min <= beta_max < 1")
        if not 0.0 < self.temperature <= 1.0:
            raise ConfigError("rep.temperature must lie in (0, 1]")
        if not 0.0 <= self.psi <= 1.0:
            raise ConfigError("rep.psi must lie in [0, 1]")
        if self.corrector_steps < 0:
            raise ConfigError("rep.corrector_steps must be >= 0")


@dataclass(frozen=True)
class MolTrainConfig:
    """Molecule generator: network, noise schedule, training, guidance."""

    layers: int = 4
    hidden: int = 128
    t_emb_dim: int = 32
    feature_scale: float = 0.25
    coord_range: float = 15.0
    n_steps: int = 500
    power: float = 2.0
    train_steps: int = 6000
    batch_size: int = 16
    lr: float = 1e-3
    sigma_rep: float = 0.3
    p_fake: float = 0.1
    rep_align_weight: float = 0.0
    guidance_w: float = 0.0
    sample_steps: int | None = None

    def model_config(self, n_elements: int, d_r: int) -> MolDenoiserConfig:
        return MolDenoiserConfig(
            n_elements=n_elements,
            d_r=d_r,
            layers=self.layers,
            hidden=self.hidden,
            t_emb_dim=self.t_emb_dim,
            feature_scale=self.feature_scale,
            coord_range=self.coord_range,
        )

    def tricks(self) -> TrainTricks:
        return TrainTricks(sigma_rep=self.sigma_rep, p_fake=self.p_fake,
                           rho=self.rep_align_weight)

    def validate(self) -> None:
        _positive_ints(self, "layers", "hidden", "t_emb_dim", "n_steps",
                       "train_steps", "batch_size")
        _positive_floats(self, "feature_scale", "coord_range", "power", "lr")
        try:
            self.tricks()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.guidance_w < 0:
            raise ConfigError("mol.guidance_w must be >= 0")
        if self.sample_steps is not None and not (
                1 <= self.sample_steps <= self.n_steps):
            raise ConfigError("mol.sample_steps must lie in [1, mol.n_steps]")


@dataclass(frozen=True)
class MetricConfig:
    """Evaluation settings: held-out split size and condition binning."""

    reference_fraction: float = 0.25
    cond_bins: int = 32

    def validate(self) -> None:
        if not 0.0 < self.reference_fraction < 1.0:
            raise ConfigError("metrics.reference_fraction must lie in (0, 1)")
        if self.cond_bins < 1:
            raise ConfigError("metrics.cond_bins must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    encoder: EncoderTrainConfig = field(default_factory=EncoderTrainConfig)
    rep: RepTrainConfig = field(default_factory=RepTrainConfig)
    mol: MolTrainConfig = field(default_factory=MolTrainConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        sections = (("corpus", self.corpus), ("encoder", self.encoder),
                    ("rep", self.rep), ("mol", self.mol),
                    ("metrics", self.metrics))
        for name, section in sections:
            try:
                section.validate()
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config section '{name}': {exc}") from exc

    # -- (de)serialization ----------------------------------------------------

    @classmethod
    def from_mapping(cls, data) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        sections = {
            "corpus": CorpusConfig,
            "encoder": EncoderTrainConfig,
            "rep": RepTrainConfig,
            "mol": MolTrainConfig,
            "metrics": MetricConfig,
        }
        kwargs: dict = {}
        for key, value in data.items():
            if key == "seed":
                kwargs["seed"] = value
            elif key in sections:
                kwargs[key] = _section_from_mapping(sections[key], value, key)
            else:
                raise ConfigError(f"unknown config key '{key}'")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_mapping(data)

    def to_mapping(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_mapping(), indent=2, sort_keys=True) + "\n"


def _section_from_mapping(cls, data, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section '{section}' must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown config key '{section}.{key}'")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{section}': {exc}") from exc


def _positive_ints(obj, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"{type(obj).__name__}.{name} must be a positive "
                              f"integer, got {value!r}")


def _positive_floats(obj, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        if not isinstance(value, (int, float)) or isinstance(value, bool) \
                or not value > 0:
            raise ConfigError(f"{type(obj).__name__}.{name} must be positive, "
                              f"got {value!r}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        return ExperimentConfig.from_json(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
