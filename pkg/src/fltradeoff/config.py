"""Run configuration: one TOML or JSON document with a ``version`` field.

Unknown keys are rejected at every level. :func:`load_config` parses and
validates a file; :meth:`RunConfig.canonical_json` is the serialized form
whose SHA-256 is embedded in every report.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attack import AttackConfig, AttackMode, Similarity
from .data import ClientDataset, load_csv, make_federated_blobs
from .errors import ConfigError, TradeoffError
from .estimation import EstimationConfig
from .flsim import FLConfig
from .mechanisms import MechanismSpec
from .model import num_params

CONFIG_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataSection(_Section):
    num_clients: int = Field(2, ge=1)
    pool_size: int = Field(16, ge=1)
    n_classes: int = Field(4, ge=2)
    n_features: int = Field(2, ge=1)
    test_size: int = Field(400, ge=1)
    spread: float = Field(0.6, gt=0)
    # One CSV per client; synthetic blobs are generated when omitted.
    paths: Optional[list[str]] = None
    test_path: Optional[str] = None

    @model_validator(mode="after")
    def _paths_match_clients(self):
        if self.paths is not None and len(self.paths) != self.num_clients:
            raise ValueError(f"data.paths lists {len(self.paths)} files for {self.num_clients} clients")
        return self


class FLSection(_Section):
    rounds: int = Field(50, ge=1)
    local_steps: int = Field(1, ge=1)
    learning_rate: float = Field(0.5, gt=0)
    batch_size: int = Field(4, ge=1)
    init_scale: float = Field(0.01, ge=0)
    paillier_prime_bits: int = Field(128, ge=8)
    scale_bits: int = Field(32, ge=1)


class AttackSection(_Section):
    trials: int = Field(200, ge=1)
    threshold: float = -1e-6
    similarity: Similarity = Similarity.NEG_SQUARED_ERROR
    mode: AttackMode = AttackMode.CANDIDATE_MATCH
    dlg_steps: int = Field(300, ge=1)
    dlg_lr: float = Field(0.5, gt=0)
    dlg_restarts: int = Field(3, ge=1)
    optimizer: Literal["lbfgs", "gd"] = "lbfgs"
    batch_size: int = Field(1, ge=1)
    step_size: float = Field(0.1, ge=0)
    attack_point: Literal["updated", "original"] = "updated"
    exhaustive_limit: int = Field(5000, ge=1)
    he_prime_bits: int = Field(64, ge=8)


class EstimationSection(_Section):
    num_models: int = Field(8, ge=1)
    sgd_steps: int = Field(50, ge=0)
    learning_rate: float = Field(0.5, gt=0)
    batch_size: int = Field(4, ge=1)
    smoothing_alpha: float = Field(1e-6, ge=0)
    init_scale: float = Field(1.0, ge=0)
    include_leftover: bool = True
    error_eps: float = Field(0.1, gt=0, lt=1)
    c4: float = Field(1.0, ge=0)
    c5: float = Field(0.0, ge=0)
    attack: AttackSection = AttackSection()


class TuneSection(_Section):
    budget: float = Field(0.5, gt=0)
    eta_u: float = Field(1.0, ge=0)
    eta_e: float = Field(1.0, ge=0)
    phi: Optional[float] = Field(None, ge=0)
    curve_points: int = Field(65, ge=2)


class SimulateSection(_Section):
    num_seeds: int = Field(10, ge=1)
    # Parameter sweep; the mechanism's own parameter is used when omitted.
    gamma: Optional[list[float]] = None


class CheckBoundsSection(_Section):
    num_worlds: int = Field(200, ge=1)
    max_pool: int = Field(8, ge=2)
    max_params: int = Field(8, ge=2)


class OutputSection(_Section):
    dir: str = "out"


class RunConfig(_Section):
    version: int
    experiment: str = "experiment"
    seed: int = Field(0, ge=0)
    data: DataSection = DataSection()
    flsim: FLSection = FLSection()
    estimation: EstimationSection = EstimationSection()
    # Same shape as MechanismSpec.to_dict; "m" defaults to the model size.
    mechanism: Optional[dict[str, Any]] = None
    tune: TuneSection = TuneSection()
    simulate: SimulateSection = SimulateSection()
    check_bounds: CheckBoundsSection = CheckBoundsSection()
    constants: Optional[str] = None
    output: OutputSection = OutputSection()

    @field_validator("version")
    @classmethod
    def _known_version(cls, v: int) -> int:
        if v != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {v}; expected {CONFIG_VERSION}")
        return v

    @model_validator(mode="after")
    def _mechanism_valid(self):
        if self.mechanism is not None:
            try:
                self.mechanism_spec()
            except (TradeoffError, TypeError, ValueError) as exc:
                raise ValueError(f"invalid mechanism: {exc}") from exc
        return self

    @property
    def model_size(self) -> int:
        return num_params(self.data.n_features, self.data.n_classes)

    def mechanism_spec(self) -> MechanismSpec | None:
        if self.mechanism is None:
            return None
        raw = dict(self.mechanism)
        raw.setdefault("m", self.model_size)
        return MechanismSpec.from_dict(raw)

    def fl_config(self, mechanism: MechanismSpec | None = None, seed: int | None = None) -> FLConfig:
        f = self.flsim
        return FLConfig(
            num_clients=self.data.num_clients, rounds=f.rounds, local_steps=f.local_steps,
            learning_rate=f.learning_rate, batch_size=f.batch_size, mechanism=mechanism,
            seed=self.seed if seed is None else seed, init_scale=f.init_scale,
            paillier_prime_bits=f.paillier_prime_bits, scale_bits=f.scale_bits,
        )

    def attack_config(self) -> AttackConfig:
        return AttackConfig(**self.estimation.attack.model_dump())

    def estimation_config(self) -> EstimationConfig:
        e = self.estimation
        return EstimationConfig(
            num_models=e.num_models, sgd_steps=e.sgd_steps, learning_rate=e.learning_rate,
            batch_size=e.batch_size, attack=self.attack_config(), smoothing_alpha=e.smoothing_alpha,
            init_scale=e.init_scale, include_leftover=e.include_leftover,
        )

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "RunConfig":
        raw = self.to_dict()
        if seed is not None:
            raw["seed"] = seed
        if out is not None:
            raw["output"] = {"dir": out}
        return parse_config(raw)

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def parse_config(raw: Any) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_config(path: str | Path) -> RunConfig:
    """Read a ``.toml`` or ``.json`` config; the suffix picks the parser."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".toml":
            raw = tomllib.loads(text)
        else:
            raw = json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw)


def load_data(cfg: RunConfig, base: Path | None = None) -> tuple[list[ClientDataset], ClientDataset | None]:
    """Client datasets and the held-out set, from CSV files or synthetic blobs.

    Relative paths resolve against ``base`` (the config's directory).
    Missing files raise :class:`ConfigError` with "dataset not found".
    """
    d = cfg.data
    if d.paths is None:
        clients, test = make_federated_blobs(
            d.num_clients, d.pool_size, d.n_classes, d.n_features, d.test_size, d.spread, seed=cfg.seed
        )
        return clients, test

    def read(p: str) -> ClientDataset:
        full = Path(p) if base is None or Path(p).is_absolute() else base / p
        try:
            ds = load_csv(full, n_classes=d.n_classes)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from exc
        if ds.n_features != d.n_features:
            raise ConfigError(f"{full} has {ds.n_features} features, config says {d.n_features}")
        return ds

    clients = [read(p) for p in d.paths]
    test = read(d.test_path) if d.test_path else None
    return clients, test
