"""Declarative run configuration.

A single JSON file drives every CLI command. Validation is strict: any key
the schema does not know is an error, so typos never silently fall back to
defaults. Hyperparameter defaults follow the experiment setup this package
targets (hidden dim 96, batch 32, epochs 5/1/50 for the transfer loops,
250 single-city epochs, city-model learning rate 1e-3, meta rate 5e-4).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthSpec
from .model import ConfigError, ModelConfig
from .simulate import SimulationConfig
from .transfer import TransferConfig

DEFAULT_TRAIN_EPOCHS = 250


def _require_keys(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


@dataclass(frozen=True)
class CitySpec:
    name: str
    synth: SynthSpec | None = None
    raw_path: str | None = None
    ingest_seed: int = 0

    def __post_init__(self):
        if (self.synth is None) == (self.raw_path is None):
            raise ConfigError(
                f"city {self.name!r}: exactly one of 'synth' or 'raw_path' is required"
            )


@dataclass(frozen=True)
class RunConfig:
    seeds: tuple[int, ...]
    data_dir: str
    out_dir: str
    model: ModelConfig
    transfer: TransferConfig
    simulation: SimulationConfig
    cities: tuple[CitySpec, ...]
    train_epochs: int = DEFAULT_TRAIN_EPOCHS
    half_open: bool = True
    post_hoc: bool = True
    raw: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        if not self.cities:
            raise ConfigError("at least one city must be configured")
        names = [c.name for c in self.cities]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate city names in {names}")
        if self.train_epochs < 1:
            raise ConfigError("train_epochs must be positive")

    def city(self, name: str) -> CitySpec:
        for c in self.cities:
            if c.name == name:
                return c
        raise ConfigError(f"unknown city {name!r}; configured: {[c.name for c in self.cities]}")

    def dataset_dir(self, name: str) -> Path:
        return Path(self.data_dir) / self.city(name).name

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


_MODEL_KEYS = {
    "hidden_dim",
    "num_heads",
    "num_layers",
    "proj_layers",
    "max_seq_len",
    "dropout_rate",
}
_TRANSFER_KEYS = {
    "epochs_meta",
    "epochs_source",
    "epochs_target",
    "lr_source",
    "lr_target",
    "lr_meta",
    "batch_size",
    "checkpoint_every",
}
_SIM_KEYS = {"num_trajectories", "horizon", "tau", "adjustment"}
_SYNTH_KEYS = {
    "n_locations",
    "num_users",
    "days",
    "zipf_exponent",
    "seed",
    "grid_extent_km",
    "decay_km",
    "stay_weight",
    "min_steps",
    "max_steps",
    "center_lat",
    "center_lon",
    "dwell_hazard",
}
_CITY_KEYS = {"name", "synth", "raw_path", "ingest_seed"}
_TOP_KEYS = {
    "seeds",
    "data_dir",
    "out_dir",
    "model",
    "transfer",
    "simulation",
    "cities",
    "train_epochs",
    "ablation",
}


def parse_config(payload: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("configuration root must be an object")
    _require_keys(payload, _TOP_KEYS, "config")

    model_raw = dict(payload.get("model", {}))
    _require_keys(model_raw, _MODEL_KEYS, "config.model")
    model = ModelConfig(num_locations=1, **model_raw)

    transfer_raw = dict(payload.get("transfer", {}))
    _require_keys(transfer_raw, _TRANSFER_KEYS, "config.transfer")
    transfer = TransferConfig(**transfer_raw)

    sim_raw = dict(payload.get("simulation", {}))
    _require_keys(sim_raw, _SIM_KEYS, "config.simulation")
    sim_raw.setdefault("num_trajectories", 200)
    sim_raw.setdefault("horizon", 24)
    simulation = SimulationConfig(seed=0, **sim_raw)

    ablation_raw = dict(payload.get("ablation", {}))
    _require_keys(ablation_raw, {"half_open", "post_hoc"}, "config.ablation")

    cities = []
    for entry in payload.get("cities", []):
        entry = dict(entry)
        _require_keys(entry, _CITY_KEYS, f"config.cities[{entry.get('name', '?')}]")
        if "name" not in entry:
            raise ConfigError("every city needs a name")
        synth = None
        if "synth" in entry:
            synth_raw = dict(entry["synth"])
            _require_keys(synth_raw, _SYNTH_KEYS, f"city {entry['name']}.synth")
            if "dwell_hazard" in synth_raw and synth_raw["dwell_hazard"] is not None:
                synth_raw["dwell_hazard"] = tuple(synth_raw["dwell_hazard"])
            synth = SynthSpec(**synth_raw)
        raw_path = entry.get("raw_path")
        if raw_path is not None and base_dir is not None and not Path(raw_path).is_absolute():
            raw_path = str(base_dir / raw_path)
        cities.append(
            CitySpec(
                name=entry["name"],
                synth=synth,
                raw_path=raw_path,
                ingest_seed=int(entry.get("ingest_seed", 0)),
            )
        )

    def _resolve(path_value: str) -> str:
        p = Path(path_value)
        if base_dir is not None and not p.is_absolute():
            return str(base_dir / p)
        return str(p)

    return RunConfig(
        seeds=tuple(int(s) for s in payload.get("seeds", [0])),
        data_dir=_resolve(payload.get("data_dir", "data")),
        out_dir=_resolve(payload.get("out_dir", "runs")),
        model=model,
        transfer=transfer,
        simulation=simulation,
        cities=tuple(cities),
        train_epochs=int(payload.get("train_epochs", DEFAULT_TRAIN_EPOCHS)),
        half_open=bool(ablation_raw.get("half_open", True)),
        post_hoc=bool(ablation_raw.get("post_hoc", True)),
        raw=payload,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(payload, base_dir=path.parent.resolve())
