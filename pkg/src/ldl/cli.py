"""Command-line entry point: ``ldl {bench,train,eval,inspect}``.

Settings resolve as defaults < ``--config`` JSON file < command-line flags.
The data directory falls back to ``$LDL_DATA_DIR``. Exit codes: 0 success,
1 run failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

import ldl
from ldl import bench
from ldl.baselines import BASELINE_DEFAULTS, NaiveBank, naive_scores
from ldl.data import MNIST_FILES, load_mnist, load_omniglot
from ldl.distill import TrainConfig
from ldl.linalg import make_rng
from ldl.model import class_scores

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
COMMANDS = ("bench", "train", "eval", "inspect")

DEFAULTS = {
    "dataset": "mnist",
    "methods": ["o2md", "bd"],
    "ways": [10],
    "shots": list(bench.MNIST_SHOTS),
    "output_dims": [784],
    "trials": 100,
    "seed": 0,
    "data_dir": None,
    "out_dir": "runs/latest",
    "fast": False,
    "jobs": None,
    "query_per_class": 1,
    "no_timing": False,
    "mlp_hidden": [256],
    "epochs": None,
    "lr": None,
    "m2ord_lr": None,
    "optimizer": None,
    "schedule": None,
    "batch_size": None,
    "checkpoint": None,
    "index": 0,
    "save_models": False,
}


@dataclass
class RunConfig:
    command: str
    dataset: str = "mnist"
    methods: list = field(default_factory=lambda: ["o2md", "bd"])
    ways: list = field(default_factory=lambda: [10])
    shots: list = field(default_factory=lambda: list(bench.MNIST_SHOTS))
    output_dims: list = field(default_factory=lambda: [784])
    trials: int = 100
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs/latest"
    fast: bool = False
    jobs: int = 1
    query_per_class: int = 1
    no_timing: bool = False
    mlp_hidden: list = field(default_factory=lambda: [256])
    train_overlay: dict = field(default_factory=dict)
    checkpoint: str | None = None
    index: int = 0
    save_models: bool = False

    def train_config(self, method: str) -> TrainConfig:
        base = BASELINE_DEFAULTS.get(method, bench.LDL_DEFAULTS)
        return replace(base, **self.train_overlay) if self.train_overlay else base

    def bench_config(self) -> bench.BenchConfig:
        return bench.BenchConfig(
            dataset=self.dataset,
            methods=tuple(self.methods),
            ways=tuple(self.ways),
            shots=tuple(self.shots),
            output_dims=tuple(self.output_dims),
            trials=self.trials,
            seed=self.seed,
            query_per_class=self.query_per_class,
            fast=self.fast,
            jobs=self.jobs,
            record_time=not self.no_timing,
            mlp_hidden=tuple(self.mlp_hidden),
            train={m: self.train_config(m) for m in self.methods},
            checkpoint_dir=str(Path(self.out_dir) / "checkpoints") if self.save_models else None,
        )


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"values must be positive integers, got {text!r}")
    return vals


def _methods(text: str) -> list[str]:
    names = [m.strip().lower() for m in str(text).split(",") if m.strip()]
    bad = [m for m in names if m not in bench.METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"unknown method(s) {', '.join(bad) or '(none)'}; valid methods: {', '.join(bench.METHODS)}"
        )
    return names


def _schedule(text: str) -> list[tuple[str, int]]:
    out = []
    for item in str(text).split(","):
        phase, _, count = item.partition(":")
        if phase.strip() not in ("m2ord", "o2md") or not count.strip().isdigit():
            raise argparse.ArgumentTypeError(f"schedule entries look like 'm2ord:1,o2md:1', got {item!r}")
        out.append((phase.strip(), int(count)))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldl", description="Linear distillation learning benchmarks")
    parser.add_argument("--version", action="version", version=f"ldl {ldl.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings (overridden by flags)")
    common.add_argument("--dataset", choices=("mnist", "omniglot"), default=None)
    common.add_argument("--data-dir", dest="data_dir", default=None,
                        help="dataset directory (default: $LDL_DATA_DIR, then ./data)")
    common.add_argument("--out", dest="out_dir", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="master seed")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int, default=None)
    training.add_argument("--lr", type=float, default=None, help="learning rate (O2MD phase and baselines)")
    training.add_argument("--m2ord-lr", dest="m2ord_lr", type=float, default=None,
                          help="learning rate of the target during M2ORD phases")
    training.add_argument("--optimizer", choices=("sgd", "adam", "adadelta"), default=None)
    training.add_argument("--schedule", type=_schedule, default=None,
                          help="per-epoch alternation, e.g. m2ord:1,o2md:1")
    training.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    training.add_argument("--mlp-hidden", dest="mlp_hidden", type=_int_list, default=None,
                          help="MLP hidden widths, e.g. 256 or 1024,1024")

    p = sub.add_parser("bench", parents=[common, training], help="run the few-shot benchmark grid")
    p.add_argument("--methods", type=_methods, default=None, help=f"comma list of {','.join(bench.METHODS)}")
    p.add_argument("--ways", type=_int_list, default=None)
    p.add_argument("--shots", type=_int_list, default=None)
    p.add_argument("--output-dims", dest="output_dims", type=_int_list, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--query-per-class", dest="query_per_class", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel trials (default: available cores)")
    p.add_argument("--fast", action="store_true", default=None, help="score MNIST on a 1000-sample test subset")
    p.add_argument("--no-timing", dest="no_timing", action="store_true", default=None,
                   help="write 0 for wall time so results files are byte-reproducible")
    p.add_argument("--save-models", dest="save_models", action="store_true", default=None,
                   help="write every trained model to OUT/checkpoints")

    p = sub.add_parser("train", parents=[common, training], help="train one model on one episode")
    p.add_argument("--method", dest="methods", type=_methods, default=None)
    p.add_argument("--way", dest="ways", type=_int_list, default=None)
    p.add_argument("--shot", dest="shots", type=_int_list, default=None)
    p.add_argument("--output-dim", dest="output_dims", type=_int_list, default=None)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on the MNIST test split")
    p.add_argument("checkpoint")

    p = sub.add_parser("inspect", parents=[common], help="per-class distances for one test sample")
    p.add_argument("checkpoint")
    p.add_argument("--index", type=int, default=None, help="test sample index")
    return parser


def _expected_files(dataset: str) -> list[str]:
    if dataset == "mnist":
        return [name for pair in MNIST_FILES.values() for name in pair]
    return ["omniglot.ldlt"]


def _check_data_dir(parser, dataset: str, data_dir: str) -> None:
    d = Path(data_dir)
    missing = [f for f in _expected_files(dataset)
               if not (d / f).exists() and not (d / (f + ".gz")).exists()]
    if missing:
        parser.error(f"data directory {d} not found or incomplete: expected {', '.join(missing)} "
                     f"(set --data-dir or LDL_DATA_DIR)")


def parse_args(argv=None) -> RunConfig:
    parser = build_parser()
    ns = parser.parse_args(argv)
    settings = dict(DEFAULTS)
    if ns.config:
        try:
            file_cfg = json.loads(Path(ns.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config file {ns.config}: {exc}")
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        settings.update(file_cfg)
    settings.update({k: v for k, v in vars(ns).items() if v is not None and k in DEFAULTS})
    # config-file values skip argparse, so normalize and validate them the same way
    try:
        settings["methods"] = _methods(",".join(settings["methods"]) if isinstance(settings["methods"], list)
                                       else settings["methods"])
        for key in ("ways", "shots", "output_dims", "mlp_hidden"):
            val = settings[key]
            settings[key] = _int_list(",".join(map(str, val)) if isinstance(val, list) else val)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    data_dir = settings["data_dir"] or os.environ.get("LDL_DATA_DIR") or "data"
    if ns.command == "train":
        for key in ("methods", "ways", "shots", "output_dims"):
            settings[key] = settings[key][:1]
        if settings["ways"] == [10] and settings["dataset"] == "omniglot":
            settings["ways"] = [5]

    overlay = {}
    for key, field_name in (("epochs", "epochs"), ("lr", "learning_rate"), ("m2ord_lr", "m2ord_learning_rate"),
                            ("optimizer", "optimizer"), ("schedule", "schedule"), ("batch_size", "batch_size")):
        if settings.get(key) is not None:
            overlay[field_name] = tuple(map(tuple, settings[key])) if key == "schedule" else settings[key]
    try:
        TrainConfig(**overlay)
    except (TypeError, ValueError) as exc:
        parser.error(str(exc))
    if settings["trials"] < 1:
        parser.error("--trials must be positive")

    dataset = settings["dataset"]
    needs = dataset if ns.command in ("bench", "train") else "mnist"
    _check_data_dir(parser, needs, data_dir)
    if ns.command in ("eval", "inspect") and not Path(settings["checkpoint"]).exists():
        parser.error(f"checkpoint not found: {settings['checkpoint']}")

    jobs = settings["jobs"] or bench.default_jobs()
    return RunConfig(
        command=ns.command,
        dataset=dataset,
        methods=list(settings["methods"]),
        ways=list(settings["ways"]),
        shots=list(settings["shots"]),
        output_dims=list(settings["output_dims"]),
        trials=int(settings["trials"]),
        seed=int(settings["seed"]),
        data_dir=data_dir,
        out_dir=settings["out_dir"],
        fast=bool(settings["fast"]),
        jobs=int(jobs),
        query_per_class=int(settings["query_per_class"]),
        no_timing=bool(settings["no_timing"]),
        mlp_hidden=list(settings["mlp_hidden"]),
        train_overlay=overlay,
        checkpoint=settings["checkpoint"],
        index=int(settings["index"]),
        save_models=bool(settings["save_models"]),
    )


def write_manifest(cfg: RunConfig, out: Path, extra: dict | None = None) -> None:
    manifest = {
        "version": ldl.__version__,
        "kernel_backend": ldl.kernels.BACKEND,
        "numpy": np.__version__,
        "config": asdict(cfg),
        "train_configs": {m: asdict(cfg.train_config(m)) for m in cfg.methods},
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=list) + "\n")


def _cmd_bench(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bcfg = cfg.bench_config()
    if cfg.dataset == "mnist":
        if bcfg.ways != (10,):
            print("note: MNIST runs with way=10 only; other ways restrict the test split", file=sys.stderr)
        result = bench.run_mnist_benchmark(bcfg, cfg.data_dir)
    else:
        result = bench.run_omniglot_benchmark(bcfg, cfg.data_dir)
    write_manifest(cfg, out)
    bench.write_results_csv(out / "results.csv", result.reports)
    summary = bench.aggregate(result.reports)
    bench.write_summary_csv(out / "summary.csv", summary)
    bench.write_history_csv(out / "loss_history.csv", result.history)
    print(bench.format_summary(summary))
    for task, err in result.failures:
        print(f"trial {task} failed:\n{err}", file=sys.stderr)
    return EXIT_FAILURE if result.failures else EXIT_OK


def _load_pool(cfg: RunConfig):
    if cfg.dataset == "mnist":
        return load_mnist(cfg.data_dir, "train"), load_mnist(cfg.data_dir, "test")
    return load_omniglot(cfg.data_dir, part="eval"), None


def _cmd_train(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    method, way, shot, k = cfg.methods[0], cfg.ways[0], cfg.shots[0], cfg.output_dims[0]
    pool, test = _load_pool(cfg)
    bcfg = replace(cfg.bench_config(), methods=(method,), ways=(way,), shots=(shot,),
                   output_dims=(k,), trials=1, jobs=1)
    seed = bench.trial_seed(cfg.seed, way, shot, 0)
    ep_ss, model_ss = np.random.SeedSequence(seed).spawn(2)
    episode = bench.sample_episode(pool, way, shot, 0 if test is not None else cfg.query_per_class,
                                   make_rng(ep_ss), seed=seed)
    model_rng = make_rng(model_ss)
    tcfg = replace(bcfg.train_config(method), seed=int(model_rng.integers(2**63)))
    model = bench.fit_method(method, episode.support, k if method in ("o2md", "bd") else pool.dim,
                             tcfg, model_rng, bcfg.mlp_hidden)
    bench.save_model(out / "model.ldlm", model)
    history = [(method, way, shot, k, 0, r.epoch, r.phase, r.class_or_target, r.mean_loss)
               for r in getattr(model, "history", [])]
    bench.write_history_csv(out / "loss_history.csv", history)
    write_manifest(cfg, out, {"trial_seed": seed, "classes": episode.classes.tolist()})
    eval_set = test if test is not None else episode.query
    if test is not None and way != test.n_classes:
        eval_set = bench.restrict_to_classes(test, episode.classes)
    if eval_set is not None:
        correct, total = bench.accuracy(model, eval_set)
        print(f"{method} way={way} shot={shot}: accuracy {correct / total:.4f} ({correct}/{total})")
    print(f"checkpoint written to {out / 'model.ldlm'}")
    return EXIT_OK


def _cmd_eval(cfg: RunConfig) -> int:
    model = bench.load_model(cfg.checkpoint)
    test = load_mnist(cfg.data_dir, "test")
    correct, total = bench.accuracy(model, test)
    print(f"accuracy {correct / total:.4f} ({correct}/{total})")
    return EXIT_OK


def inspect(checkpoint, sample_index: int, data_dir) -> str:
    """Per-class score table for one MNIST test sample, with the chosen label and margin."""
    model = bench.load_model(checkpoint)
    test = load_mnist(data_dir, "test")
    if not 0 <= sample_index < len(test):
        raise IndexError(f"sample index {sample_index} outside 0..{len(test) - 1}")
    x = test.x[:, sample_index]
    if isinstance(model, bench.TrainedModel):
        scores = class_scores(model.bank, model.target, x)
    elif isinstance(model, NaiveBank):
        scores = naive_scores(model, x)
    else:
        raise ValueError("inspect needs a distance-based checkpoint (ldl or naive)")
    chosen = int(np.argmin(scores))
    ranked = np.sort(scores)
    margin = float(ranked[1] - ranked[0]) if len(scores) > 1 else 0.0
    lines = [f"sample {sample_index}  true label {int(test.y[sample_index])}", "class  score"]
    lines += [f"{c:>5}  {s:.6f}{'  <-' if c == chosen else ''}" for c, s in enumerate(scores)]
    lines.append(f"chosen {chosen}  margin {margin:.6f}")
    return "\n".join(lines)


def _cmd_inspect(cfg: RunConfig) -> int:
    print(inspect(cfg.checkpoint, cfg.index, cfg.data_dir))
    return EXIT_OK


def execute(cfg: RunConfig) -> int:
    handler = {"bench": _cmd_bench, "train": _cmd_train, "eval": _cmd_eval, "inspect": _cmd_inspect}[cfg.command]
    try:
        return handler(cfg)
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main(argv=None) -> int:
    try:
        cfg = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
