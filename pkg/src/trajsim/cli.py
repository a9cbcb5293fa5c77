"""Command-line pipeline driver.

Subcommands: synth, ingest, train, transfer, simulate, evaluate, ablate,
report. Every command is a pure function of (config file, seeds, inputs):
re-running one overwrites its outputs with identical bytes. Outputs land
under ``<out>/<command>/<city>/<seed>/`` with a manifest recording the
config hash and package version; per-epoch progress goes to stderr, machine
traces to files only.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    CityDataset,
    DataError,
    Trajectory,
    ingest,
    load_dataset,
    save_dataset,
    synth_city,
)
from .data.corpus import read_split_file, write_split_file
from .evaluate import (
    METRIC_NAMES,
    evaluate_corpora,
    load_report_scores,
    write_report,
)
from .model import (
    ConfigError,
    ModelConfig,
    ParameterSet,
    RegistryError,
    TrajectoryTransformer,
    checkpoint_digest,
    load_checkpoint,
    save_checkpoint,
)
from .runconfig import RunConfig, load_config
from .simulate import SimulationConfig, simulate
from .transfer import (
    TraceRow,
    run_transfer,
    train_single_city,
    write_trace_csv,
)

ABLATION_VARIANTS = (
    ("NONE", False, False),
    ("w/o HA", False, True),
    ("w/o PO", True, False),
    ("COLA", True, True),
)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _trace_logger(prefix: str):
    def log_row(row: TraceRow) -> None:
        _log(
            f"{prefix} meta_epoch={row.meta_epoch} phase={row.phase} "
            f"city={row.city} epoch={row.epoch} loss={row.mean_loss:.4f}"
        )

    return log_row


def _write_manifest(directory: Path, cfg: RunConfig, command: str, **extra) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "version": __version__,
        **extra,
    }
    (directory / "manifest.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _materialize_city(cfg: RunConfig, name: str) -> CityDataset:
    spec = cfg.city(name)
    if spec.synth is not None:
        return synth_city(name, spec.synth)
    if not Path(spec.raw_path).exists():
        raise DataError(f"city {name!r}: raw file {spec.raw_path} does not exist")
    return ingest(spec.raw_path, name, spec.ingest_seed)


def _load_city(cfg: RunConfig, name: str) -> CityDataset:
    directory = cfg.dataset_dir(name)
    if not directory.exists():
        raise DataError(
            f"dataset for city {name!r} not found at {directory}; run 'synth' or 'ingest' first"
        )
    return load_dataset(directory)


def _model_config_for(cfg: RunConfig, n_locations: int) -> ModelConfig:
    return replace(cfg.model, num_locations=n_locations)


# -- commands -----------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> None:
    """Materialize every configured city dataset into the data directory."""
    for spec in cfg.cities:
        ds = _materialize_city(cfg, spec.name)
        save_dataset(ds, cfg.dataset_dir(spec.name))
        _log(
            f"[{spec.name}] {ds.vocab.size} locations, "
            f"{len(ds.train)}/{len(ds.valid)}/{len(ds.test)} train/valid/test"
        )


def cmd_ingest(cfg: RunConfig) -> None:
    """Like synth, but only for cities backed by raw check-in files."""
    found = False
    for spec in cfg.cities:
        if spec.raw_path is None:
            continue
        found = True
        ds = _materialize_city(cfg, spec.name)
        save_dataset(ds, cfg.dataset_dir(spec.name))
        _log(f"[{spec.name}] ingested {len(ds.train) + len(ds.valid) + len(ds.test)} trajectories")
    if not found:
        raise ConfigError("no city in the configuration has a raw_path to ingest")


def _save_models(directory: Path, result) -> None:
    save_checkpoint(result.target_model.params, directory / "target.ckpt", {"role": "target"})
    save_checkpoint(result.meta, directory / "meta.ckpt", {"role": "meta"})
    for city, model in result.source_models.items():
        save_checkpoint(model.params, directory / f"src_{city}.ckpt", {"role": f"source:{city}"})


def cmd_train(cfg: RunConfig, city: str, seeds: tuple[int, ...], out: Path) -> None:
    """Single-city training: one checkpoint and loss trace per seed."""
    ds = _load_city(cfg, city)
    for seed in seeds:
        run_dir = out / "train" / city / str(seed)
        result = train_single_city(
            ds,
            cfg.model,
            epochs=cfg.train_epochs,
            master_seed=seed,
            lr=cfg.transfer.lr_target,
            batch_size=cfg.transfer.batch_size,
            half_open=cfg.half_open,
            on_trace=_trace_logger(f"[train {city} seed {seed}]"),
        )
        run_dir.mkdir(parents=True, exist_ok=True)
        _save_models(run_dir, result)
        write_trace_csv(result.trace, run_dir / "trace.csv")
        _write_manifest(run_dir, cfg, "train", city=city, seed=seed)


def _transfer_once(
    cfg: RunConfig, target: str, sources: list[str], seed: int, run_dir: Path, half_open: bool
):
    datasets = {name: _load_city(cfg, name) for name in [*sources, target]}

    def periodic_checkpoint(meta_epoch, registry, target_model):
        epoch_dir = run_dir / f"epoch_{meta_epoch:04d}"
        epoch_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(registry.meta, epoch_dir / "meta.ckpt", {"role": "meta"})
        save_checkpoint(target_model.params, epoch_dir / "target.ckpt", {"role": "target"})
        for city, model in registry.models.items():
            if city != target:
                save_checkpoint(
                    model.params, epoch_dir / f"src_{city}.ckpt", {"role": f"source:{city}"}
                )

    result = run_transfer(
        datasets,
        target,
        sources,
        cfg.model,
        cfg.transfer,
        master_seed=seed,
        half_open=half_open,
        on_trace=_trace_logger(f"[transfer {target} seed {seed}]"),
        checkpoint_cb=periodic_checkpoint if cfg.transfer.checkpoint_every > 0 else None,
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    _save_models(run_dir, result)
    write_trace_csv(result.trace, run_dir / "trace.csv")
    _write_manifest(
        run_dir,
        cfg,
        "transfer",
        city=target,
        seed=seed,
        sources=list(sources),
        half_open=half_open,
    )
    return result


def cmd_transfer(
    cfg: RunConfig,
    target: str,
    seeds: tuple[int, ...],
    out: Path,
    sources: list[str] | None = None,
    all_combinations: bool = False,
    half_open: bool | None = None,
) -> None:
    """Cross-city transfer onto the target; sources default to every other city."""
    if sources is None:
        sources = [c.name for c in cfg.cities if c.name != target]
    for name in sources:
        cfg.city(name)
    cfg.city(target)
    ha = cfg.half_open if half_open is None else half_open
    for seed in seeds:
        if all_combinations:
            for r in range(1, len(sources) + 1):
                for combo in itertools.combinations(sources, r):
                    tag = "+".join(combo)
                    run_dir = out / "transfer" / target / str(seed) / f"combo-{tag}"
                    _transfer_once(cfg, target, list(combo), seed, run_dir, ha)
        else:
            run_dir = out / "transfer" / target / str(seed)
            _transfer_once(cfg, target, sources, seed, run_dir, ha)


def _model_from_checkpoint(cfg: RunConfig, path: Path) -> TrajectoryTransformer:
    params, _extra = load_checkpoint(path)
    n_plus_start = params["embedding"].shape[0]
    model_cfg = _model_config_for(cfg, n_plus_start - 1)
    reference = TrajectoryTransformer.initialize(model_cfg, 0, half_open=True).params
    if set(reference.names()) != set(params.names()):
        raise ConfigError(
            f"checkpoint {path} does not match the configured model architecture"
        )
    for name in reference.names():
        if reference[name].shape != params[name].shape:
            raise ConfigError(
                f"checkpoint tensor {name!r} has shape {params[name].shape}, "
                f"expected {reference[name].shape}"
            )
    return TrajectoryTransformer(model_cfg, params)


def _save_sim_corpus(corpus: list[Trajectory], directory: Path, provenance: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    write_split_file(directory / "sim.tsv", corpus)
    (directory / "meta.json").write_text(
        json.dumps(provenance, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_sim_corpus(directory: Path) -> list[Trajectory]:
    return read_split_file(Path(directory) / "sim.tsv")


def cmd_simulate(
    cfg: RunConfig,
    city: str,
    seeds: tuple[int, ...],
    out: Path,
    checkpoint: Path | None = None,
    tau: float | None = None,
    post_hoc: bool | None = None,
) -> None:
    """Generate a corpus from a trained checkpoint with the target's profile."""
    ds = _load_city(cfg, city)
    adjustment = cfg.post_hoc if post_hoc is None else post_hoc
    for seed in seeds:
        ckpt = checkpoint
        if ckpt is None:
            for candidate in (
                out / "transfer" / city / str(seed) / "target.ckpt",
                out / "train" / city / str(seed) / "target.ckpt",
            ):
                if candidate.exists():
                    ckpt = candidate
                    break
        if ckpt is None or not Path(ckpt).exists():
            raise DataError(
                f"no checkpoint for city {city!r} seed {seed}; pass --checkpoint or train first"
            )
        model = _model_from_checkpoint(cfg, Path(ckpt))
        sim_cfg = SimulationConfig(
            num_trajectories=cfg.simulation.num_trajectories,
            horizon=cfg.simulation.horizon,
            tau=cfg.simulation.tau if tau is None else tau,
            seed=seed,
            adjustment=adjustment,
        )
        corpus = simulate(model, sim_cfg, ds.vocab, ds.frequencies)
        run_dir = out / "simulate" / city / str(seed)
        _save_sim_corpus(
            corpus,
            run_dir,
            {
                "checkpoint": checkpoint_digest(ckpt),
                "tau": sim_cfg.tau,
                "adjustment": adjustment,
                "seed": seed,
                "num_trajectories": sim_cfg.num_trajectories,
                "horizon": sim_cfg.horizon,
            },
        )
        _write_manifest(run_dir, cfg, "simulate", city=city, seed=seed)
        _log(f"[simulate {city} seed {seed}] {len(corpus)} trajectories")


def cmd_evaluate(
    cfg: RunConfig,
    city: str,
    seeds: tuple[int, ...],
    out: Path,
    sim_dir: Path | None = None,
    split: str = "test",
) -> None:
    """Score simulated corpora against a real split; per-seed and mean reports."""
    ds = _load_city(cfg, city)
    real = ds.split(split)
    per_seed: dict[int, dict[str, float]] = {}
    for seed in seeds:
        source = Path(sim_dir) if sim_dir is not None else out / "simulate" / city / str(seed)
        if not (source / "sim.tsv").exists():
            raise DataError(f"no simulated corpus at {source}; run 'simulate' first")
        sim = load_sim_corpus(source)
        report = evaluate_corpora(
            real, sim, ds.vocab, metadata={"city": city, "seed": seed, "split": split}
        )
        run_dir = out / "evaluate" / city / str(seed)
        write_report(report, run_dir)
        _write_manifest(run_dir, cfg, "evaluate", city=city, seed=seed)
        per_seed[seed] = report.scores
        _log(
            f"[evaluate {city} seed {seed}] "
            + " ".join(f"{m}={report.scores[m]:.4f}" for m in METRIC_NAMES)
        )
    _write_mean_report(out / "evaluate" / city, per_seed)


def _write_mean_report(directory: Path, per_seed: dict[int, dict[str, float]]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "mean_report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "seeds"])
        for metric in METRIC_NAMES:
            values = [per_seed[s][metric] for s in sorted(per_seed)]
            writer.writerow([metric, repr(math.fsum(values) / len(values)), len(values)])


def cmd_ablate(cfg: RunConfig, target: str, seeds: tuple[int, ...], out: Path) -> None:
    """2x2 grid over the parameter split and the sampling adjustment.

    All four variants share seeds and datasets; the comparison table lists
    one row per variant with the six mean scores.
    """
    sources = [c.name for c in cfg.cities if c.name != target]
    if not sources:
        raise ConfigError("ablation needs at least one source city besides the target")
    ds = _load_city(cfg, target)
    for name in sources:
        other = _load_city(cfg, name)
        if other.vocab.size != ds.vocab.size:
            raise ConfigError(
                f"ablation requires equal vocabulary sizes (full sharing makes the "
                f"embedding table shared): {name} has {other.vocab.size}, "
                f"{target} has {ds.vocab.size}"
            )
    scores: dict[str, list[dict[str, float]]] = {name: [] for name, _, _ in ABLATION_VARIANTS}
    for seed in seeds:
        models: dict[bool, TrajectoryTransformer] = {}
        for half_open in (False, True):
            datasets = {name: _load_city(cfg, name) for name in [*sources, target]}
            result = run_transfer(
                datasets,
                target,
                sources,
                cfg.model,
                cfg.transfer,
                master_seed=seed,
                half_open=half_open,
            )
            models[half_open] = result.target_model
        for name, half_open, post_hoc in ABLATION_VARIANTS:
            sim_cfg = SimulationConfig(
                num_trajectories=cfg.simulation.num_trajectories,
                horizon=cfg.simulation.horizon,
                tau=cfg.simulation.tau,
                seed=seed,
                adjustment=post_hoc,
            )
            corpus = simulate(models[half_open], sim_cfg, ds.vocab, ds.frequencies)
            report = evaluate_corpora(
                ds.test,
                corpus,
                ds.vocab,
                metadata={"variant": name, "seed": seed, "city": target},
            )
            slug = name.replace("/", "").replace(" ", "_")
            run_dir = out / "ablate" / target / str(seed) / slug
            write_report(report, run_dir)
            _write_manifest(run_dir, cfg, "ablate", city=target, seed=seed, variant=name)
            scores[name].append(report.scores)
            _log(
                f"[ablate {target} seed {seed} {name}] "
                + " ".join(f"{m}={report.scores[m]:.4f}" for m in METRIC_NAMES)
            )
    table_dir = out / "ablate" / target
    table_dir.mkdir(parents=True, exist_ok=True)
    with open(table_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", *METRIC_NAMES])
        for name, _, _ in ABLATION_VARIANTS:
            row = [name]
            for metric in METRIC_NAMES:
                values = [s[metric] for s in scores[name]]
                row.append(repr(math.fsum(values) / len(values)))
            writer.writerow(row)
    _write_manifest(table_dir, cfg, "ablate", city=target, seeds=list(seeds))


def cmd_report(out: Path) -> None:
    """Aggregate every report.json under the output tree into a summary."""
    rows = []
    for path in sorted(Path(out).rglob("report.json")):
        payload = json.loads(path.read_text(encoding="utf-8"))
        meta = payload.get("metadata", {})
        rows.append(
            {
                "path": str(path.parent.relative_to(out)),
                "city": meta.get("city", ""),
                "seed": meta.get("seed", ""),
                "variant": meta.get("variant", ""),
                **payload["scores"],
            }
        )
    if not rows:
        raise DataError(f"no report.json files under {out}")
    summary = Path(out) / "summary.csv"
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "city", "seed", "variant", *METRIC_NAMES])
        for row in rows:
            writer.writerow(
                [row["path"], row["city"], row["seed"], row["variant"]]
                + [repr(row[m]) for m in METRIC_NAMES]
            )
    for row in rows:
        _log(
            f"{row['path']}: " + " ".join(f"{m}={row[m]:.4f}" for m in METRIC_NAMES)
        )
    _log(f"wrote {summary}")


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajsim", description="Cross-city trajectory simulation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, city_flag=None):
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--seed", type=int, action="append", help="override config seeds (repeatable)")
        p.add_argument("--out", help="override the output directory")
        if city_flag:
            p.add_argument(city_flag, required=True)

    common(sub.add_parser("synth", help="generate configured synthetic cities"))
    common(sub.add_parser("ingest", help="ingest configured raw check-in files"))
    common(sub.add_parser("train", help="single-city training"), "--city")

    p_tr = sub.add_parser("transfer", help="cross-city transfer training")
    common(p_tr, "--target")
    p_tr.add_argument("--sources", help="comma-separated source cities (default: all others)")
    p_tr.add_argument(
        "--all-source-combinations",
        action="store_true",
        help="run every nonempty subset of the sources",
    )
    p_tr.add_argument("--no-half-open", action="store_true", help="share all parameters")

    p_sim = sub.add_parser("simulate", help="generate trajectories from a checkpoint")
    common(p_sim, "--city")
    p_sim.add_argument("--checkpoint", help="explicit checkpoint path")
    p_sim.add_argument("--tau", type=float, help="override the adjustment exponent")
    p_sim.add_argument("--no-post-hoc", action="store_true", help="disable the adjustment")

    p_ev = sub.add_parser("evaluate", help="score simulated against real trajectories")
    common(p_ev, "--city")
    p_ev.add_argument("--sim", help="simulated corpus directory (default: simulate output)")
    p_ev.add_argument("--split", default="test", choices=("train", "valid", "test"))

    common(sub.add_parser("ablate", help="run the 2x2 component ablation grid"), "--target")

    p_rep = sub.add_parser("report", help="aggregate metric reports under an output tree")
    p_rep.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            cmd_report(Path(args.out))
            return 0
        cfg = load_config(args.config)
        seeds = tuple(args.seed) if args.seed else cfg.seeds
        out = Path(args.out) if args.out else Path(cfg.out_dir)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "ingest":
            cmd_ingest(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.city, seeds, out)
        elif args.command == "transfer":
            sources = args.sources.split(",") if args.sources else None
            cmd_transfer(
                cfg,
                args.target,
                seeds,
                out,
                sources=sources,
                all_combinations=args.all_source_combinations,
                half_open=False if args.no_half_open else None,
            )
        elif args.command == "simulate":
            cmd_simulate(
                cfg,
                args.city,
                seeds,
                out,
                checkpoint=Path(args.checkpoint) if args.checkpoint else None,
                tau=args.tau,
                post_hoc=False if args.no_post_hoc else None,
            )
        elif args.command == "evaluate":
            cmd_evaluate(
                cfg,
                args.city,
                seeds,
                out,
                sim_dir=Path(args.sim) if args.sim else None,
                split=args.split,
            )
        elif args.command == "ablate":
            cmd_ablate(cfg, args.target, seeds, out)
        return 0
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3
    except RegistryError as exc:
        print(f"error[registry]: {exc}", file=sys.stderr)
        return 4
    except (ValueError, RuntimeError, IndexError) as exc:
        print(f"error[runtime]: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
