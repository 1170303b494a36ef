"""Command line front end.

Subcommands: gen-data, pretrain, adapt, eval, experiment, sweep. Every
numeric field of :class:`trainer.AdaptConfig` is exposed as a kebab-case
flag, and a flat ``key=value`` config file can preload any of them (explicit
flags win). Commands exit 0 on success and 1 with a single ``error:`` line
on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import data, experiments, model, trainer


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_hidden_dims(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _parse_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _parse_optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


def _parse_optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


# field name -> (converter, help)
_CONFIG_FIELDS: dict[str, tuple] = {
    "lambda0": (float, "weight of the pseudo-label loss"),
    "alpha": (float, "propagation damping in (0, 1)"),
    "k_hat": (int, "neighbours kept per graph row"),
    "eps_smooth": (float, "label smoothing amount for pretraining"),
    "eps_vat": (float, "L2 radius of the adversarial perturbation"),
    "vat_xi": (_parse_optional_float, "probe scale for power iteration"),
    "vat_power_iters": (int, "power iteration rounds"),
    "lr_encoder": (float, "encoder learning rate"),
    "lr_bottleneck": (float, "bottleneck learning rate"),
    "lr_classifier": (float, "classifier learning rate (pretraining)"),
    "momentum": (float, "SGD momentum"),
    "batch_size": (int, "minibatch size"),
    "epochs": (int, "adaptation epochs"),
    "pretrain_epochs": (int, "source pretraining epochs"),
    "steps_per_epoch": (_parse_optional_int, "steps per epoch (default: one unlabeled pass)"),
    "mc_passes": (int, "stochastic passes for uncertainty"),
    "dropout_rate": (float, "dropout rate for stochastic passes"),
    "hidden_dims": (_parse_hidden_dims, "comma-separated encoder widths"),
    "bottleneck_dim": (int, "bottleneck width"),
    "seed": (int, "run seed"),
}
_FLAG_FIELDS: dict[str, str] = {
    "no_augmentation": "disable uncertainty-selected extra seeds",
    "no_ent": "disable the entropy term",
    "no_ps": "disable pseudo-label propagation",
    "no_vat": "disable adversarial smoothing",
    "no_div": "disable the diversity term",
}

_TASK_FIELDS: dict[str, tuple] = {
    "num_classes": (int, "number of classes"),
    "lift_dim": (int, "ambient feature dimension"),
    "n_source": (int, "source sample count"),
    "m_target": (int, "target sample count"),
    "rotation_deg": (float, "target rotation in degrees"),
    "translation": (float, "target translation magnitude"),
    "noise_std": (float, "blob noise standard deviation"),
    "shots": (int, "labeled target samples per class"),
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training configuration")
    for name, (conv, help_text) in _CONFIG_FIELDS.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=conv,
                           default=None, help=help_text)
    for name, help_text in _FLAG_FIELDS.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=name,
                           action="store_true", default=None, help=help_text)
    parser.add_argument("--config", type=Path, default=None,
                        help="flat key=value file with any of the above fields")


def _add_task_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("synthetic task")
    for name, (conv, help_text) in _TASK_FIELDS.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=conv,
                           default=None, help=help_text)


def read_config_file(path) -> dict[str, str]:
    """Parse a flat key=value file, ignoring blanks and # comments."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {line_no}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _build_config(args: argparse.Namespace) -> trainer.AdaptConfig:
    values: dict = {}
    if getattr(args, "config", None) is not None:
        raw = read_config_file(args.config)
        for key, text in raw.items():
            if key in _CONFIG_FIELDS:
                values[key] = _CONFIG_FIELDS[key][0](text)
            elif key in _FLAG_FIELDS:
                values[key] = _parse_bool(text)
            # task/selector keys are picked up by _build_task / callers
    for name in list(_CONFIG_FIELDS) + list(_FLAG_FIELDS):
        given = getattr(args, name, None)
        if given is not None:
            values[name] = given
    return trainer.AdaptConfig(**values)


def _build_task(args: argparse.Namespace) -> experiments.SyntheticTask:
    values: dict = {}
    if getattr(args, "config", None) is not None:
        raw = read_config_file(args.config)
        for key, text in raw.items():
            if key in _TASK_FIELDS:
                values[key] = _TASK_FIELDS[key][0](text)
    for name in _TASK_FIELDS:
        given = getattr(args, name, None)
        if given is not None:
            values[name] = given
    return experiments.SyntheticTask(**values)


def _config_file_fallback(args: argparse.Namespace, key: str, conv):
    """Selector fields (method, seeds) may also come from the config file."""
    if getattr(args, key, None) is not None:
        return conv(getattr(args, key)) if isinstance(getattr(args, key), str) else getattr(args, key)
    if getattr(args, "config", None) is not None:
        raw = read_config_file(args.config)
        if key in raw:
            return conv(raw[key])
    return None


def _cmd_gen_data(args: argparse.Namespace) -> int:
    task = _build_task(args)
    seed = args.seed if args.seed is not None else 2021
    source, pool = data.gen_synthetic_shift(
        num_classes=task.num_classes,
        n_source=task.n_source,
        m_target=task.m_target,
        rotation_deg=task.rotation_deg,
        translation=task.translation,
        noise_std=task.noise_std,
        seed=seed,
        lift_dim=task.lift_dim,
    )
    target = data.split_nshot(pool, task.shots, seed=seed) if task.shots > 0 else pool
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.save_dataset(source, out / "source.tsv")
    data.save_dataset(target, out / "target.tsv")
    print(f"wrote {out / 'source.tsv'} ({source.n} rows) and {out / 'target.tsv'} ({target.n} rows)")
    return 0


def _cmd_pretrain(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    source = data.load_dataset(args.source)
    dims = cfg.model_dims(source.n_features, source.num_classes)
    net = model.init_model(dims, seed=cfg.seed)
    fitted = trainer.pretrain_source(net, source, cfg)
    model.save_model(fitted, args.out)
    val_acc = trainer.evaluate(fitted, source.subset("val"))
    print(f"wrote {args.out} (val accuracy {val_acc:.4f})")
    return 0


def _cmd_adapt(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if args.method is not None:
        cfg = experiments.apply_method(cfg, args.method)
    net = model.load_model(args.model)
    target = data.load_dataset(args.target)
    adapted, report = trainer.adapt(net, target, cfg, debug_graph_dir=args.debug_graph)
    model.save_model(adapted, args.out)
    if args.report is not None:
        trainer.write_train_report(report, args.report)
    print(f"wrote {args.out} (final accuracy {report.final_accuracy!r})")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    net = model.load_model(args.model)
    ds = data.load_dataset(args.data)
    subset = ds if args.split == "all" else ds.subset(args.split)
    accuracy = trainer.evaluate(net, subset)
    print(repr(accuracy))
    return 0


def _make_spec(args: argparse.Namespace) -> experiments.ExperimentSpec:
    cfg = _build_config(args)
    method = _config_file_fallback(args, "method", str) or "MESH"
    seeds = _config_file_fallback(args, "seeds", _parse_seeds) or (2021, 2022, 2023)
    if args.source is not None or args.target is not None:
        return experiments.ExperimentSpec(
            method=method, config=cfg, seeds=seeds, out_path=args.out,
            task=None, source_path=args.source, target_path=args.target,
        )
    return experiments.ExperimentSpec(
        method=method, config=cfg, seeds=seeds, out_path=args.out, task=_build_task(args)
    )


def _cmd_experiment(args: argparse.Namespace) -> int:
    spec = _make_spec(args)
    result = experiments.run_experiment(spec)
    for outcome in result.outcomes:
        print(f"seed {outcome.seed}: accuracy {outcome.accuracy:.4f}")
    print(f"mean {result.mean_accuracy:.4f} std {result.std_accuracy:.4f}")
    if spec.out_path is not None:
        print(f"wrote {spec.out_path}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    spec = _make_spec(args)
    spec = replace(spec, out_path=None)
    param = args.param.replace("-", "_")
    conv = int if param in ("k_hat", "shots") else float
    values = [conv(tok) for tok in args.values.replace(",", " ").split()]
    rows = experiments.run_sweep(spec, param, values, args.out)
    for value, result in rows:
        print(f"{param}={value}: mean {result.mean_accuracy:.4f} std {result.std_accuracy:.4f}")
    print(f"wrote {Path(args.out) / f'sweep_{param}.txt'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshadapt",
        description="Source-free semi-supervised domain adaptation on synthetic shifted blobs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a source/target dataset pair")
    _add_task_flags(p)
    p.add_argument("--seed", type=int, default=None, help="generation seed")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="fit a model on the source domain")
    _add_config_flags(p)
    p.add_argument("--source", required=True, help="source dataset file")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("adapt", help="adapt a pretrained model to a target dataset")
    _add_config_flags(p)
    p.add_argument("--model", required=True, help="pretrained checkpoint")
    p.add_argument("--target", required=True, help="split target dataset file")
    p.add_argument("--method", default=None, choices=experiments.METHODS,
                   help="ablation preset to apply on top of the config")
    p.add_argument("--out", required=True, help="adapted checkpoint to write")
    p.add_argument("--report", default=None, help="training report to write")
    p.add_argument("--debug-graph", default=None,
                   help="directory for per-epoch graph edge/score dumps")
    p.set_defaults(func=_cmd_adapt)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test",
                   choices=list(data.SPLITS) + ["all"], help="rows to score")
    p.set_defaults(func=_cmd_eval)

    for name, help_text in (
        ("experiment", "multi-seed run of one method"),
        ("sweep", "repeat an experiment over a hyperparameter grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        _add_task_flags(p)
        p.add_argument("--method", default=None, choices=experiments.METHODS)
        p.add_argument("--seeds", type=_parse_seeds, default=None,
                       help="comma-separated run seeds")
        p.add_argument("--source", default=None, help="source dataset file (file mode)")
        p.add_argument("--target", default=None, help="split target dataset file (file mode)")
        if name == "experiment":
            p.add_argument("--out", default=None, help="report file to write")
            p.set_defaults(func=_cmd_experiment)
        else:
            p.add_argument("--param", required=True,
                           choices=["lambda0", "k-hat", "k_hat", "shots"])
            p.add_argument("--values", required=True,
                           help="comma-separated sweep values")
            p.add_argument("--out", required=True, help="directory for reports")
            p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line error contract
        message = " ".join(str(exc).split()) or exc.__class__.__name__
        print(f"error: {message}", file=sys.stderr)
        return 1
