"""Command-line experiment runner.

Subcommands: gen-data, train, eval, ablate-graphs, conditional-eval,
check-gradients. Every command accepts ``--config FILE`` (key=value lines);
flags given on the command line win over the file. Log verbosity comes from
the ``JOINTPRED_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import autodiff as ad
from .evaluation import evaluate
from .graph import GRAPH_TYPES
from .metrics import METRIC_COLUMNS, MetricReport
from .pipeline import POTENTIAL_MODES, JointPredictor, ModelConfig
from .scene import SCENE_KINDS, ConfigurationError, GeneratorConfig, generate_dataset, generate_scene, read_dataset, write_dataset
from .training import (TrainConfig, full_model_gradient_check, gradient_equivalence_check, jittered_params,
                       read_config_file, train)

log = logging.getLogger("jointpred")

LOG_ENV = "JOINTPRED_LOG_LEVEL"
MODEL_FILE = "model.json"
PARAMS_FILE = "params.npz"
GRAPH_CHOICES = tuple(g.replace("_", "-") for g in GRAPH_TYPES)
GRADIENT_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


def _kind_list(text: str) -> str:
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in SCENE_KINDS]
    if bad or not kinds:
        raise UsageError(f"unknown scene kind(s) {bad or text!r}; expected {','.join(SCENE_KINDS)}")
    return ",".join(kinds)


# name -> (type, default, help); shared across the commands that list the name
OPTIONS = {
    "kind": (_kind_list, "intersection", "comma-separated scene kinds"),
    "count": (int, 10, "number of scenes"),
    "seed": (int, 0, "random seed"),
    "out": (str, None, "output path"),
    "background_agents": (int, 0, "non-interacting vehicles added to interactive scenes"),
    "data": (str, None, "dataset file (JSON lines)"),
    "checkpoint": (str, None, "directory written by train"),
    "k": (int, 6, "candidates per agent"),
    "graph": (str, "dynamic", "interaction graph: " + ", ".join(GRAPH_CHOICES)),
    "potential": (str, "learned", "pair potentials: " + ", ".join(POTENTIAL_MODES)),
    "iterations": (int, 3, "message-passing iterations"),
    "lr": (float, 1e-3, "learning rate"),
    "steps": (int, 2000, "training steps (one scene each)"),
    "weight_decay": (float, 0.0, "AdamW weight decay"),
    "huber_delta": (float, 1.0, "Huber threshold of the regression loss"),
    "lr_decay_step": (int, 0, "halve the learning rate once at this step (0: never)"),
    "scenario_mix": (_kind_list, "intersection,merge,queue", "scene kinds generated when --data is absent"),
    "scene_kind": (str, "intersection", "scene kind used by check-gradients"),
    "max_entries": (int, 12, "sampled coordinates per parameter array in check-gradients"),
}

COMMANDS = {
    "gen-data": ("write a synthetic dataset", ("kind", "count", "seed", "background_agents", "out")),
    "train": ("train a model and write a checkpoint plus loss log",
              ("data", "count", "seed", "k", "graph", "potential", "iterations", "lr", "steps", "weight_decay",
               "huber_delta", "lr_decay_step", "scenario_mix", "out")),
    "eval": ("evaluate a checkpoint", ("checkpoint", "data", "graph", "potential", "seed", "out")),
    "ablate-graphs": ("evaluate a checkpoint under every graph type", ("checkpoint", "data", "potential", "seed", "out")),
    "conditional-eval": ("evaluate with the AV clamped to its most likely candidate",
                         ("checkpoint", "data", "graph", "potential", "seed", "out")),
    "check-gradients": ("finite-difference and exact-likelihood gradient checks",
                        ("seed", "k", "scene_kind", "max_entries")),
}

REQUIRED = {"gen-data": ("out",), "train": ("out",), "eval": ("checkpoint", "data"),
            "ablate-graphs": ("checkpoint", "data"), "conditional-eval": ("checkpoint", "data")}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointpred", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key=value file; command-line flags override it")
        for opt in opts:
            _, default, opt_help = OPTIONS[opt]
            # defaults are applied after merging the config file, so flags parse as raw strings
            p.add_argument("--" + opt.replace("_", "-"), dest=opt, default=None,
                           help=f"{opt_help} (default: {default})")
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags; values are typed and validated."""
    allowed = COMMANDS[args.command][1]
    merged = {opt: OPTIONS[opt][1] for opt in allowed}
    if args.config:
        for key, value in read_config_file(args.config).items():
            name = key.replace("-", "_")
            if name not in allowed:
                raise UsageError(f"{args.config}: unknown key {key!r} for {args.command}")
            merged[name] = value
    for opt in allowed:
        value = getattr(args, opt)
        if value is not None:
            merged[opt] = value
    out = {}
    for opt, value in merged.items():
        kind = OPTIONS[opt][0]
        if value is None or not isinstance(value, str) or kind is str:
            out[opt] = value
            continue
        try:
            out[opt] = kind(value)
        except ValueError:
            raise UsageError(f"--{opt.replace('_', '-')}: cannot parse {value!r}") from None
    for opt in REQUIRED.get(args.command, ()):
        if out.get(opt) is None:
            raise UsageError(f"{args.command} needs --{opt}")
    if "graph" in out and out["graph"] is not None:
        if out["graph"].replace("_", "-") not in GRAPH_CHOICES:
            raise UsageError(f"--graph must be one of {', '.join(GRAPH_CHOICES)}")
    if "potential" in out and out["potential"] not in POTENTIAL_MODES:
        raise UsageError(f"--potential must be one of {', '.join(POTENTIAL_MODES)}")
    return out


# -- reports ------------------------------------------------------------------

def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_table(reports: list[MetricReport]) -> str:
    header = ["label", *METRIC_COLUMNS]
    rows = [[r.label or f"run{n}", *(_cell(getattr(r, c)) for c in METRIC_COLUMNS)]
            for n, r in enumerate(reports)]
    widths = [max(len(row[c]) for row in [header, *rows]) for c in range(len(header))]
    lines = ["  ".join(cell.rjust(w) if c else cell.ljust(w) for c, (cell, w) in enumerate(zip(row, widths)))
             for row in [header, *rows]]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def emit_report(reports: list[MetricReport], out_dir=None) -> str:
    """Aligned summary table; with ``out_dir`` also writes the table, the full
    reports as JSON and one ``series_<metric>.csv`` per metric column."""
    if not reports:
        raise ValueError("emit_report needs at least one report")
    table = format_table(reports)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.txt").write_text(table, encoding="utf-8")
        payload = [r.to_dict() for r in reports]
        (out / "reports.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        for column in METRIC_COLUMNS:
            lines = ["label,value"]
            for n, r in enumerate(reports):
                value = getattr(r, column)
                lines.append(f"{r.label or f'run{n}'},{'' if value is None else repr(float(value))}")
            (out / f"series_{column}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return table


# -- checkpoints ----------------------------------------------------------------

def save_model(model: JointPredictor, out_dir, extra: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.params.save(out / PARAMS_FILE)
    cfg = model.config
    meta = {"k": cfg.k, "graph": cfg.graph, "potential": cfg.potential, "iterations": cfg.iterations}
    meta.update(extra or {})
    (out / MODEL_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(checkpoint) -> JointPredictor:
    path = Path(checkpoint)
    try:
        meta = json.loads((path / MODEL_FILE).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: no {MODEL_FILE}; is this a train output directory?") from None
    config = ModelConfig(meta["k"], meta["graph"], meta["potential"], meta["iterations"])
    return JointPredictor(config, ad.ParamStore.load(path / PARAMS_FILE))


# -- commands -------------------------------------------------------------------

def cmd_gen_data(opts: dict) -> int:
    cfg = GeneratorConfig(background_agents=opts["background_agents"])
    scenes = generate_dataset(opts["kind"].split(","), opts["count"], opts["seed"], cfg)
    n = write_dataset(opts["out"], scenes)
    print(f"wrote {n} scenes to {opts['out']}")
    return 0


def cmd_train(opts: dict) -> int:
    keys = ("seed", "k", "graph", "potential", "iterations", "lr", "steps", "weight_decay", "huber_delta",
            "lr_decay_step", "scenario_mix")
    config = TrainConfig.from_mapping({k: opts[k] for k in keys})
    if opts["data"]:
        dataset = read_dataset(opts["data"])
    else:
        dataset = generate_dataset(config.scenario_mix.split(","), opts["count"], config.seed)
    result = train(dataset, config)
    save_model(result.model, opts["out"], {"train": config.as_dict(), "data": opts["data"],
                                           "scenes": len(dataset)})
    result.write_log(Path(opts["out"]) / "loss_log.csv")
    first, last = result.log[0]["total"] if result.log else None, result.log[-1]["total"] if result.log else None
    print(f"trained {config.steps} steps on {len(dataset)} scenes; first loss {_cell(first)}, "
          f"last loss {_cell(last)}; checkpoint in {opts['out']}")
    return 0


def _evaluate_runs(opts: dict, runs: list[dict]) -> int:
    model = load_model(opts["checkpoint"])
    scenes = read_dataset(opts["data"])
    reports = [evaluate(model, scenes, seed=opts["seed"], **run) for run in runs]
    print(emit_report(reports, opts.get("out")), end="")
    return 0


def cmd_eval(opts: dict) -> int:
    return _evaluate_runs(opts, [dict(graph=opts["graph"], potential=opts["potential"],
                                      label=f"{opts['graph']}/{opts['potential']}")])


def cmd_ablate_graphs(opts: dict) -> int:
    order = ("none", "random-star", "av-star", "dynamic", "fully-connected")
    return _evaluate_runs(opts, [dict(graph=g, potential=opts["potential"], label=g) for g in order])


def cmd_conditional_eval(opts: dict) -> int:
    base = dict(graph=opts["graph"], potential=opts["potential"])
    return _evaluate_runs(opts, [dict(base, label="joint"), dict(base, conditional=True, label="conditional")])


def cmd_check_gradients(opts: dict) -> int:
    seed, k = opts["seed"], opts["k"]
    scene = generate_scene(opts["scene_kind"], seed, GeneratorConfig(background_agents=1))
    config = ModelConfig(k, "av_star", "learned", max(3, scene.num_agents - 1))
    checks = []
    fresh = JointPredictor(config, seed=seed)
    jittered = JointPredictor(config, params=jittered_params(k, seed))
    for label, model in (("fresh", fresh), ("jittered", jittered)):
        res = full_model_gradient_check(scene, model, max_entries=opts["max_entries"], seed=seed)
        checks.append((f"full model ({label}): max rel err {res.max_rel_error:.3e} over {res.checked} "
                       f"entries, {res.skipped} skipped at kinks, worst {res.worst_param}",
                       res.passed(GRADIENT_TOLERANCE)))
    eq = gradient_equivalence_check(scene, jittered, graph="av_star", seed=seed)
    checks.append((f"loss vs exact likelihood gradient: max rel err {eq.max_rel_error:.3e}, "
                   f"max abs dev {eq.max_abs_deviation:.3e}", eq.max_rel_error < GRADIENT_TOLERANCE))
    for line, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {line}")
    return 0 if all(ok for _, ok in checks) else 1


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate-graphs": cmd_ablate_graphs,
            "conditional-eval": cmd_conditional_eval, "check-gradients": cmd_check_gradients}


def _configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def run_command(argv: list[str] | None = None) -> int:
    """Parse ``argv`` and run one command. Returns the exit status (0 ok, 1 runtime failure, 2 usage)."""
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = resolve_options(args)
    except (UsageError, ConfigurationError) as exc:
        parser.print_usage(sys.stderr)
        print(f"jointpred {args.command}: error: {exc}", file=sys.stderr)
        return 2
    try:
        return HANDLERS[args.command](opts)
    except ConfigurationError as exc:
        print(f"jointpred {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes a diagnostic and exit 1
        log.debug("command failed", exc_info=True)
        print(f"jointpred {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
