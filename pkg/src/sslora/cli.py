"""Command-line entry point: ``sslora <subcommand> --config cfg.json``.

Exit codes: 0 success, 1 user/configuration error, 2 numerical failure.

Config file layout (every section optional except where a command needs it)::

    {
      "data":     {DomainDatasetSpec fields},
      "network":  {NetworkSpec fields; input_dim/num_classes/num_domains
                   default to the dataset's},
      "pretrain": {"epochs": 20, "lr": 0.001, "batch_size": 32, "seed": 0},
      "train":    {TrainConfig fields},
      "paths":    {"data_dir", "base_weights", "decomposition", "checkpoint",
                   "metrics", "adapters", "eval", "report"}
    }

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import analysis, data, persist
from .errors import NumericalError, SsloraError
from .linalg import deterministic_kernels
from .model import NetworkSpec, build, pretrain_base
from .subspace import decompose, summary
from .train import (TrainConfig, evaluate, export_adapters, load_checkpoint,
                    resume_state, train_loop)

log = logging.getLogger("sslora")

DEFAULT_PATHS = {
    "data_dir": "data",
    "base_weights": "base.sslw",
    "decomposition": "decomposition.sslw",
    "checkpoint": "checkpoint.sslw",
    "metrics": "metrics.csv",
    "adapters": "adapters.sslw",
    "eval": "eval.json",
    "report": "report.csv",
}


SECTIONS = {"data", "network", "pretrain", "train", "paths"}


class UsageError(SsloraError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class Config:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        try:
            self.raw = json.loads(self.path.read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {self.path}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(self.raw, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(self.raw) - SECTIONS
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")

    def section(self, name: str) -> dict:
        sec = self.raw.get(name, {})
        if not isinstance(sec, dict):
            raise UsageError(f"config section {name!r} must be an object")
        return sec

    def path_for(self, key: str) -> Path:
        p = Path(self.section("paths").get(key, DEFAULT_PATHS[key]))
        return p if p.is_absolute() else self.path.parent / p

    def dataset_spec(self) -> data.DomainDatasetSpec:
        return _make(data.DomainDatasetSpec, self.section("data"), "data")

    def train_config(self) -> TrainConfig:
        return _make(TrainConfig, self.section("train"), "train")

    def network_spec(self, manifest: dict) -> NetworkSpec:
        net = {"input_dim": manifest["input_dim"], "hidden_dim": 64, "num_blocks": 2,
               "num_classes": manifest["C"], "num_domains": manifest["D"]}
        net.update(self.section("network"))
        return _make(NetworkSpec, net, "network")


def _make(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise UsageError(f"bad [{section}] section: {exc}") from exc


def _load_base(cfg: Config, spec: NetworkSpec) -> list[np.ndarray]:
    path = cfg.path_for("base_weights")
    if not path.exists():
        raise UsageError(f"base weights not found: {path} (run `pretrain` first)")
    tensors = persist.load(path).tensors
    return [tensors[f"layer{idx}.W"] for idx in range(spec.num_layers)]


def cmd_gen_data(args) -> int:
    cfg = Config(args.config)
    task = data.generate(cfg.dataset_spec())
    out = cfg.path_for("data_dir")
    data.save_task(task, out)
    print(f"wrote {2 * task.spec.num_domains} split files and manifest to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = Config(args.config)
    manifest, train_sets, _ = data.load_task(cfg.path_for("data_dir"))
    spec = cfg.network_spec(manifest)
    opts = {"epochs": 20, "lr": 1e-3, "batch_size": 32, "seed": 0}
    opts.update(cfg.section("pretrain"))
    x = np.concatenate([ds.x for ds in train_sets])
    y = np.concatenate([ds.labels for ds in train_sets])
    weights, acc = pretrain_base(spec, x, y, epochs=int(opts["epochs"]), lr=float(opts["lr"]),
                                 batch_size=int(opts["batch_size"]), seed=int(opts["seed"]))
    out = cfg.path_for("base_weights")
    persist.save(out, {f"layer{idx}.W": w for idx, w in enumerate(weights)},
                 {"network_spec": json.dumps(spec.to_dict(), sort_keys=True),
                  "pooled_train_accuracy": repr(acc)})
    print(f"pooled train accuracy {acc:.4f}; base weights written to {out}")
    return 0


def cmd_decompose(args) -> int:
    if args.weights:
        weights_path = Path(args.weights)
        threshold = args.threshold if args.threshold is not None else 0.95
        out = Path(args.out) if args.out else weights_path.with_name("decomposition.sslw")
    elif args.config:
        cfg = Config(args.config)
        weights_path = cfg.path_for("base_weights")
        threshold = args.threshold if args.threshold is not None else float(
            cfg.section("network").get("threshold", 0.95))
        out = Path(args.out) if args.out else cfg.path_for("decomposition")
    else:
        raise UsageError("decompose needs --weights or --config")
    if not weights_path.exists():
        raise UsageError(f"weight file not found: {weights_path}")
    weights = persist.load(weights_path).tensors
    names = sorted((n for n in weights if n.endswith(".W")),
                   key=lambda n: int(n.split(".")[0].removeprefix("layer")))
    tensors, records = {}, []
    for name in names:
        idx = int(name.split(".")[0].removeprefix("layer"))
        dec = decompose(weights[name], threshold)
        for key, arr in (("U_m", dec.u_m), ("U_n", dec.u_n), ("sigma_m", dec.sigma_m),
                         ("V_m", dec.v_m), ("V_n", dec.v_n)):
            tensors[f"layer{idx}.{key}"] = arr
        records.append(summary(dec, idx))
    persist.save(out, tensors, {"threshold": repr(threshold)})
    summary_path = out.with_suffix(".json")
    persist.save_json(summary_path, records)
    for rec in records:
        print(json.dumps(rec))
    return 0


def cmd_train(args) -> int:
    cfg = Config(args.config)
    manifest, train_sets, val_sets = data.load_task(cfg.path_for("data_dir"))
    config = cfg.train_config()
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        net = ckpt.net
        state = resume_state(ckpt, config)
    else:
        spec = cfg.network_spec(manifest)
        net = build(spec, _load_base(cfg, spec), seed=config.seed)
        state = None
    state, _ = train_loop(net, train_sets, config, val_sets=val_sets, state=state,
                          metrics_path=cfg.path_for("metrics"),
                          checkpoint_path=cfg.path_for("checkpoint"))
    export_adapters(cfg.path_for("adapters"), net)
    print(f"trained to step {state.step}; checkpoint {cfg.path_for('checkpoint')}")
    return 0


def cmd_eval(args) -> int:
    cfg = Config(args.config)
    _, _, val_sets = data.load_task(cfg.path_for("data_dir"))
    ckpt_path = Path(args.ckpt) if args.ckpt else cfg.path_for("checkpoint")
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    net = load_checkpoint(ckpt_path).net
    results = {}
    for ds in val_sets:
        acc, ce = evaluate(net, ds, ds.domain)
        results[f"domain{ds.domain}"] = {"accuracy": acc, "ce": ce}
    persist.save_json(cfg.path_for("eval"), results)
    print(json.dumps(results, indent=2, sort_keys=True))
    return 0


def cmd_analyze(args) -> int:
    ckpt_path = Path(args.ckpt)
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    net = load_checkpoint(ckpt_path).net
    rep = analysis.report(net, on=args.on)
    out, pairs = analysis.write_report(rep, args.out, net.spec.rank)
    print(f"wrote {out} and {pairs}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sslora", description=(
        "Subspace-constrained multi-domain LoRA: data generation, pretraining, "
        "decomposition, training, evaluation and adapter analysis."))
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the synthetic multi-domain dataset")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="fit the base network on pooled data")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("decompose", help="split each base weight into column / null space")
    p.add_argument("--config")
    p.add_argument("--weights", help="weight container (overrides the config path)")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("train", help="train the adapters")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", metavar="CKPT")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="merged-weight validation accuracy per domain")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="contribution curves and subspace distances")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--on", choices=("B", "delta"), default="B")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with deterministic_kernels():
            return args.func(args)
    except NumericalError as exc:
        print(f"sslora: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (SsloraError, OSError, KeyError) as exc:
        print(f"sslora: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
