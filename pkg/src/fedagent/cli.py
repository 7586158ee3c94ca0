"""Command-line front end: data, partitions, training runs, evaluation, reports.

Exit codes: 0 success, 2 configuration error, 3 scheme or verification
error, 4 input/output error. Errors print ``error: <Tag>: <message>`` to
stderr, where the tag is the exception class name.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    AppCatalog,
    app_sort_key,
    category_sort_key,
    dataset_stats,
    read_dataset,
    write_dataset,
)
from .errors import (
    ConfigError,
    CorruptCheckpoint,
    DataError,
    FedAgentError,
    InvalidSpec,
    MissingMetrics,
    PartitionError,
    VersionMismatch,
)
from .evaluation import DEFAULT_THRESHOLD, evaluate
from .fedalgo import AdaptiveServerConfig
from .localmodel import N_ACTIONS, N_ARGS, LocalTrainConfig
from .orchestrator import ALL_ALGORITHMS, ExperimentConfig, run_experiment
from .partition import (
    PartitionAssignment,
    PartitionScheme,
    client_counts,
    distribution_matrix,
    heatmap_csv,
    partition,
    read_assignment,
    verify_partition,
    write_assignment,
)
from .synth import PRESETS, SyntheticSpec, generate_synthetic_dataset

log = logging.getLogger("fedagent")

EXIT_OK, EXIT_CONFIG, EXIT_SCHEME, EXIT_IO = 0, 2, 3, 4

# defaults for every train option; a JSON config file overrides these and
# explicit flags override the file
TRAIN_DEFAULTS: dict[str, Any] = {
    "algorithm": "fedavg",
    "rounds": 10,
    "clients_per_round": 3,
    "seed": 0,
    "subsample": 0.1,
    "lr": LocalTrainConfig.learning_rate,
    "epochs": LocalTrainConfig.epochs,
    "batch_size": LocalTrainConfig.batch_size,
    "dim": LocalTrainConfig.dim,
    "mu": 0.2,
    "momentum": 0.9,
    "server_lr": AdaptiveServerConfig.eta,
    "beta1": AdaptiveServerConfig.beta1,
    "beta2": AdaptiveServerConfig.beta2,
    "tau": AdaptiveServerConfig.tau,
    "eta_s": 1.0,
    "lam": 7.0,
    "local_k": None,
    "low_level": False,
    "threshold": DEFAULT_THRESHOLD,
    "eval_every_round": False,
    "threads": 1,
}


class CliError(Exception):
    def __init__(self, code: int, tag: str, message: str):
        super().__init__(message)
        self.code, self.tag = code, tag


# ---------------------------------------------------------------------------
# file helpers


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_catalog(path: str | None) -> AppCatalog:
    base = AppCatalog.default()
    return base if path is None else base.merged(AppCatalog.from_file(path))


# ---------------------------------------------------------------------------
# gen-data / ingest / presets / stats


def _stats_summary(episodes) -> dict[str, Any]:
    st = dataset_stats(episodes)
    return {
        "n_episodes": st.n_episodes,
        "n_steps": st.n_steps,
        "n_apps": st.n_apps,
        "n_categories": st.n_categories,
        "per_category": {k: list(v) for k, v in st.per_category.items()},
    }


def cmd_gen_data(args: argparse.Namespace) -> int:
    if args.preset is not None:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; see `fedagent presets`")
        preset = PRESETS[args.preset]
        spec = preset.train_spec(args.seed)
        test_spec = preset.test_spec(args.seed)
        if args.episodes is not None:
            spec = replace(spec, n_episodes=args.episodes, total_steps=None)
    else:
        if args.episodes is None:
            raise ConfigError("give --preset or --episodes")
        apps = [a.strip() for a in (args.apps or "").split(",") if a.strip()]
        if not apps:
            raise InvalidSpec("--apps must name at least one app")
        spec = SyntheticSpec(args.episodes, {a: 1.0 for a in apps}, args.mean_steps, args.seed)
        test_spec = None
    if args.mean_steps is not None and args.preset is not None:
        spec = replace(spec, mean_steps=args.mean_steps, total_steps=None)

    train = generate_synthetic_dataset(spec)
    write_dataset(train, args.out)
    summary = {"train": _stats_summary(train)}
    if args.test_out is not None:
        if test_spec is None:
            test_spec = replace(spec, n_episodes=max(1, spec.n_episodes // 10), id_prefix="test")
        test = generate_synthetic_dataset(test_spec, stream=1)
        write_dataset(test, args.test_out)
        summary["test"] = _stats_summary(test)
    print(_dump_json(summary), end="")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    episodes = read_dataset(args.input, _load_catalog(args.catalog))
    write_dataset(episodes, args.out)
    print(_dump_json(_stats_summary(episodes)), end="")
    return EXIT_OK


def cmd_presets(args: argparse.Namespace) -> int:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["preset", "train_episodes", "test_episodes", "apps", "clients", "schemes"])
    for name, p in PRESETS.items():
        w.writerow([name, p.n_train, p.n_test, len(p.app_weights), p.n_clients, " ".join(p.schemes)])
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    episodes = read_dataset(args.dataset, _load_catalog(args.catalog))
    out: dict[str, Any] = {"dataset": dataset_stats(episodes).to_dict()}
    if args.assignment:
        assignment = read_assignment(args.assignment)
        counts = client_counts(episodes, assignment)
        report = verify_partition(episodes, assignment)
        out["scheme"] = assignment.scheme.name
        out["clients"] = [{"client": k, "episodes": int(e), "steps": int(s)} for k, (e, s) in enumerate(counts)]
        out["verify"] = {"ok": report.ok, "violations": [str(v) for v in report.violations]}
    print(_dump_json(out), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# partition


def cmd_partition(args: argparse.Namespace) -> int:
    episodes = read_dataset(args.dataset, _load_catalog(args.catalog))
    scheme = PartitionScheme.parse(args.scheme, args.clients, args.seed)
    assignment = partition(episodes, scheme)
    write_assignment(assignment, args.out)
    axis = args.axis or ("category" if scheme.family == "category-level" else "app")
    labels, mat = distribution_matrix(episodes, assignment, axis)
    if args.heatmap:
        Path(args.heatmap).write_text(heatmap_csv(labels, mat), encoding="utf-8", newline="\n")
    counts = client_counts(episodes, assignment)
    print(_dump_json({
        "scheme": scheme.name,
        "clients": [{"client": k, "episodes": int(e), "steps": int(s)} for k, (e, s) in enumerate(counts)],
        "verify": {"ok": True, "violations": []},
    }), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _read_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in raw.items()}
    unknown = sorted(set(cfg) - set(TRAIN_DEFAULTS))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {', '.join(unknown)}")
    return cfg


def effective_train_config(args: argparse.Namespace) -> dict[str, Any]:
    merged = dict(TRAIN_DEFAULTS)
    merged.update(_read_config_file(args.config))
    for key in TRAIN_DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    if merged["algorithm"] not in ALL_ALGORITHMS:
        raise ConfigError(f"unknown algorithm {merged['algorithm']!r}")
    return merged


def build_experiment_config(c: dict[str, Any]) -> ExperimentConfig:
    try:
        local = LocalTrainConfig(
            learning_rate=float(c["lr"]),
            epochs=int(c["epochs"]),
            batch_size=int(c["batch_size"]),
            subsample_fraction=float(c["subsample"]),
            dim=int(c["dim"]),
            low_level=bool(c["low_level"]),
        )
        adaptive = AdaptiveServerConfig(float(c["beta1"]), float(c["beta2"]), float(c["server_lr"]), float(c["tau"]))
        return ExperimentConfig(
            algorithm=c["algorithm"],
            rounds=int(c["rounds"]),
            clients_per_round=int(c["clients_per_round"]),
            local=local,
            seed=int(c["seed"]),
            low_level=bool(c["low_level"]),
            local_k_index=None if c["local_k"] is None else int(c["local_k"]),
            mu=float(c["mu"]),
            fedavgm_h=float(c["momentum"]),
            adaptive=adaptive,
            eta_s=float(c["eta_s"]),
            lam=float(c["lam"]),
            threshold=float(c["threshold"]),
            eval_every_round=bool(c["eval_every_round"]),
            threads=int(c["threads"]),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args: argparse.Namespace) -> int:
    conf = effective_train_config(args)
    cfg = build_experiment_config(conf)
    algo = cfg.algorithm
    if algo != "zero_shot" and args.data is None:
        raise ConfigError(f"--data is required for {algo}")
    if algo not in ("zero_shot", "central") and args.assignment is None:
        raise ConfigError(f"--assignment is required for {algo}")

    # digests first, so the manifest describes exactly what was read
    inputs = {}
    for label, path in (("data", args.data), ("assignment", args.assignment), ("test", args.test), ("config", args.config)):
        if path is not None:
            inputs[label] = {"path": str(path), "sha256": sha256_file(path)}

    catalog = _load_catalog(args.catalog)
    dataset = read_dataset(args.data, catalog) if args.data else []
    test = read_dataset(args.test, catalog) if args.test else None
    if args.assignment is not None:
        assignment = read_assignment(args.assignment)
    else:
        assignment = PartitionAssignment({ep.episode_id: 0 for ep in dataset}, PartitionScheme("basic-iid", "iid", 1))

    result = run_experiment(cfg, dataset, assignment, test)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = {"metrics": out / "metrics.jsonl", "checkpoint": out / "checkpoint.bin"}
    _atomic_text(outputs["metrics"], "\n".join(result.metrics_lines()) + "\n")
    save_checkpoint(result.state, outputs["checkpoint"])
    if result.final is not None:
        outputs["eval"] = out / "eval.json"
        outputs["steps"] = out / "steps.csv"
        _atomic_text(outputs["eval"], _dump_json(result.final.to_dict()))
        _atomic_text(outputs["steps"], result.final.steps_csv())
    manifest = {
        "tool": "fedagent",
        "version": __version__,
        "seed": cfg.seed,
        "config": conf,
        "inputs": inputs,
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    _atomic_text(out / "manifest.json", _dump_json(manifest))
    if result.final is not None:
        print(f"step_accuracy={result.final.step_accuracy:.4f} episode_accuracy={result.final.episode_accuracy:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def infer_dim(n_params: int) -> int:
    out = N_ACTIONS + N_ARGS
    if n_params % out:
        raise CorruptCheckpoint(f"{n_params} parameters do not fit a {out}-output model")
    return n_params // out - 1


def cmd_evaluate(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.checkpoint)
    test = read_dataset(args.test, _load_catalog(args.catalog))
    report = evaluate(state.global_params, test, args.low_level, args.threshold, infer_dim(state.global_params.size))
    text = _dump_json(report.to_dict())
    if args.out:
        _atomic_text(Path(args.out), text)
    else:
        print(text, end="")
    if args.steps_csv:
        _atomic_text(Path(args.steps_csv), report.steps_csv())
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _run_name(spec: str) -> tuple[str, Path]:
    name, sep, path = spec.partition("=")
    if sep and name:
        return name, Path(path)
    p = Path(spec)
    return (p.parent.name if p.name == "metrics.jsonl" and p.parent.name else p.stem), p


def _final_record(path: Path) -> dict[str, Any]:
    final = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                if "final" in rec:
                    final = rec["final"]
    if not final:
        raise MissingMetrics(f"{path}: no final evaluation record")
    return final


def report_table(specs: Sequence[str], axis: str = "app") -> str:
    """CSV with one row per run: per-label step accuracy plus a step-weighted Avg."""
    if not specs:
        raise MissingMetrics("no metrics files given")
    acc_key, n_key = ("by_app", "steps_by_app") if axis == "app" else ("by_category", "steps_by_category")
    runs = []
    for spec in specs:
        name, path = _run_name(spec)
        runs.append((name, _final_record(path)))
    runs.sort(key=lambda r: r[0])
    labels = sorted({lab for _, f in runs for lab in f[acc_key]}, key=app_sort_key if axis == "app" else category_sort_key)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", *labels, "Avg."])
    for name, f in runs:
        acc, n = f[acc_key], f[n_key]
        total = sum(n.values())
        avg = sum(acc[lab] * n[lab] for lab in acc) / total if total else 0.0
        w.writerow([name, *(f"{acc[lab]:.6f}" if lab in acc else "" for lab in labels), f"{avg:.6f}"])
    return buf.getvalue()


def cmd_report(args: argparse.Namespace) -> int:
    table = report_table(args.metrics, args.axis)
    if args.out:
        _atomic_text(Path(args.out), table)
    else:
        print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedagent", description="Federated training simulator for mobile-agent episodes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a dataset")
    g.add_argument("--preset", help="preset name (see `fedagent presets`)")
    g.add_argument("--episodes", type=int, help="episode count (overrides the preset)")
    g.add_argument("--apps", help="comma-separated app names when no preset is given")
    g.add_argument("--mean-steps", type=float, help="mean steps per episode")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="training dataset path (JSON lines)")
    g.add_argument("--test-out", help="also write a held-out test set here")
    g.set_defaults(func=cmd_gen_data)

    i = sub.add_parser("ingest", help="normalize an external JSON-lines episode file")
    i.add_argument("input")
    i.add_argument("--out", required=True)
    i.add_argument("--catalog", help="extra app<TAB>category catalog merged over the default")
    i.set_defaults(func=cmd_ingest)

    pr = sub.add_parser("presets", help="list dataset presets")
    pr.set_defaults(func=cmd_presets)

    s = sub.add_parser("stats", help="dataset statistics, optionally per client")
    s.add_argument("dataset")
    s.add_argument("--assignment", help="assignment file to summarize and verify")
    s.add_argument("--catalog")
    s.set_defaults(func=cmd_stats)

    pa = sub.add_parser("partition", help="assign episodes to clients under a scheme")
    pa.add_argument("dataset")
    pa.add_argument("--scheme", required=True, help="family/variant, e.g. app-level/skew")
    pa.add_argument("--clients", type=int, required=True)
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--out", required=True, help="assignment file (episode_id<TAB>client)")
    pa.add_argument("--heatmap", help="write the client x label count matrix as CSV")
    pa.add_argument("--axis", choices=("app", "category"), help="heatmap labels (default depends on family)")
    pa.add_argument("--catalog")
    pa.set_defaults(func=cmd_partition)

    t = sub.add_parser("train", help="run one experiment")
    t.add_argument("--algorithm", choices=ALL_ALGORITHMS)
    t.add_argument("--rounds", type=int, help="communication rounds (10)")
    t.add_argument("--clients-per-round", type=int, help="clients sampled per round (3)")
    t.add_argument("--seed", type=int)
    t.add_argument("--subsample", type=float, help="fraction of each client's episodes used per round (0.1)")
    t.add_argument("--lr", type=float, help=f"local learning rate ({TRAIN_DEFAULTS['lr']})")
    t.add_argument("--epochs", type=int, help=f"local epochs per round ({TRAIN_DEFAULTS['epochs']})")
    t.add_argument("--batch-size", type=int, help=f"local mini-batch size ({TRAIN_DEFAULTS['batch_size']})")
    t.add_argument("--dim", type=int, help="feature-hashing dimension (256)")
    t.add_argument("--mu", type=float, help="FedProx proximal weight (0.2)")
    t.add_argument("--momentum", type=float, help="FedAvgM interpolation h (0.9)")
    t.add_argument("--server-lr", type=float, help="adaptive server step size (1e-3)")
    t.add_argument("--beta1", type=float, help="adaptive server beta1 (0.9)")
    t.add_argument("--beta2", type=float, help="adaptive server beta2 (0.999)")
    t.add_argument("--tau", type=float, help="adaptive server tau (1e-6)")
    t.add_argument("--eta-s", type=float, help="SCAFFOLD server step size (1.0)")
    t.add_argument("--lam", type=float, help="FedMobileAgent episode weight lambda (7.0)")
    t.add_argument("--local-k", type=int, help="client index for the local_k baseline")
    t.add_argument("--low-level", action="store_true", default=None, help="feed step subgoals to the model")
    t.add_argument("--threshold", type=float, help="TF-IDF similarity threshold (0.5)")
    t.add_argument("--eval-every-round", action="store_true", default=None, help="evaluate after every round")
    t.add_argument("--threads", type=int, help="parallel local-training workers (1); results do not depend on it")
    t.add_argument("--config", help="JSON file of option values; explicit flags win")
    t.add_argument("--data", help="training dataset")
    t.add_argument("--assignment", help="assignment file from `fedagent partition`")
    t.add_argument("--test", help="test dataset evaluated after the final round")
    t.add_argument("--catalog")
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a test set")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--low-level", action="store_true")
    e.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    e.add_argument("--out", help="JSON report path (stdout if omitted)")
    e.add_argument("--steps-csv", help="per-step results CSV")
    e.add_argument("--catalog")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="tabulate final accuracies of several runs")
    r.add_argument("metrics", nargs="*", help="metrics.jsonl paths, optionally NAME=PATH")
    r.add_argument("--axis", choices=("app", "category"), default="app")
    r.add_argument("--out", help="CSV path (stdout if omitted)")
    r.set_defaults(func=cmd_report)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, InvalidSpec, MissingMetrics)):
        return EXIT_CONFIG
    if isinstance(exc, PartitionError):
        return EXIT_SCHEME
    if isinstance(exc, (OSError, DataError, CorruptCheckpoint, VersionMismatch, json.JSONDecodeError)):
        return EXIT_IO
    return EXIT_CONFIG


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FedAgentError, OSError, ValueError) as exc:
        tag = type(exc).__name__
        print(f"error: {tag}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
