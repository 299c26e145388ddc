"""Command-line surface: world generation through evaluation and cost simulation.

One experiment is described by one JSON config file; flags override config
values. Every command prints its resolved configuration before running and
writes outputs to a temp file followed by an atomic rename, so a crash never
leaves a partial artifact. Exit status: 0 success, 1 usage error, 2 data or
validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import core, distill_data, evaluation, pipeline, rerank_sim, scorer, trainer

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad flags or flag combinations (exit status 1)."""


class ConfigError(ValueError):
    """Invalid or unknown configuration content (exit status 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map usage errors to 1
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScorerSpec:
    architecture: str = scorer.LINEAR
    hidden_width: int = 8
    init_seed: int = 0


@dataclass(frozen=True)
class DistillSpec:
    retriever: str = "strong"
    depth: int = 100


@dataclass(frozen=True)
class EvalSpec:
    retriever: str = "strong"
    depth: int = 100
    k: int = 10
    significance_level: float = 0.05


@dataclass(frozen=True)
class AblationSpec:
    depths: tuple[int, ...] = (10, 25, 50, 100)
    fractions: tuple[float, ...] = (0.1, 0.25, 0.5, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    world: distill_data.WorldConfig
    split: dict[str, float]
    sampling: distill_data.SamplingConfig
    scorer: ScorerSpec
    distill: DistillSpec
    stage1: trainer.TrainConfig
    stage2: trainer.TrainConfig
    eval: EvalSpec
    ablation: AblationSpec


_STAGE1_DEFAULTS = {"loss": trainer.LOSS_INFONCE, "max_steps": 2000}
_STAGE2_DEFAULTS = {"loss": trainer.LOSS_RANKNET, "max_steps": 2000}
_SPLIT_DEFAULT = {"train": 0.7, "validation": 0.15, "test": 0.15}


def _build_section(cls, data: Mapping, where: str, defaults: Mapping | None = None):
    merged = dict(defaults or {})
    merged.update(data)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"unknown keys in config section {where!r}: {unknown}")
    for key, value in merged.items():
        if isinstance(value, list):
            merged[key] = tuple(value)
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config section {where!r}: {exc}") from None


def load_experiment_config(path: str | None, overrides: argparse.Namespace) -> ExperimentConfig:
    """Read the config file (or defaults) and apply flag overrides."""
    raw: dict = {}
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a JSON object")
    known_sections = {
        "world",
        "split",
        "sampling",
        "scorer",
        "distill",
        "stage1",
        "stage2",
        "eval",
        "ablation",
    }
    unknown = sorted(set(raw) - known_sections)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {unknown}")

    world_raw = dict(raw.get("world", {}))
    sampling_raw = dict(raw.get("sampling", {}))
    scorer_raw = dict(raw.get("scorer", {}))
    stage1_raw = dict(raw.get("stage1", {}))
    stage2_raw = dict(raw.get("stage2", {}))
    distill_raw = dict(raw.get("distill", {}))
    eval_raw = dict(raw.get("eval", {}))
    ablation_raw = dict(raw.get("ablation", {}))
    split = dict(raw.get("split", _SPLIT_DEFAULT))

    seed = getattr(overrides, "seed", None)
    if seed is not None:
        world_raw["seed"] = seed
        sampling_raw["seed"] = seed
        scorer_raw["init_seed"] = seed
        stage1_raw["seed"] = seed
        stage2_raw["seed"] = seed
    depth = getattr(overrides, "depth", None)
    if depth is not None:
        distill_raw["depth"] = depth
    loss = getattr(overrides, "loss", None)
    if loss is not None and loss != trainer.LOSS_INFONCE:
        stage2_raw["loss"] = loss
    alpha = getattr(overrides, "alpha", None)
    if alpha is not None:
        stage2_raw["alpha"] = alpha

    return ExperimentConfig(
        world=_build_section(distill_data.WorldConfig, world_raw, "world"),
        split=split,
        sampling=_build_section(distill_data.SamplingConfig, sampling_raw, "sampling"),
        scorer=_build_section(ScorerSpec, scorer_raw, "scorer"),
        distill=_build_section(DistillSpec, distill_raw, "distill"),
        stage1=_build_section(trainer.TrainConfig, stage1_raw, "stage1", _STAGE1_DEFAULTS),
        stage2=_build_section(trainer.TrainConfig, stage2_raw, "stage2", _STAGE2_DEFAULTS),
        eval=_build_section(EvalSpec, eval_raw, "eval"),
        ablation=_build_section(AblationSpec, ablation_raw, "ablation"),
    )


def _print_resolved(command: str, config: ExperimentConfig | dict, args: argparse.Namespace):
    resolved = dataclasses.asdict(config) if dataclasses.is_dataclass(config) else dict(config)
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    print(f"[{command}] resolved config:")
    print(json.dumps({"config": resolved, "flags": flags}, indent=2, sort_keys=True, default=str))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _out_dir(args) -> Path:
    return Path(args.out)


def _init_scorer(spec: ScorerSpec, feature_dim: int) -> scorer.ScorerModel:
    hidden = spec.hidden_width if spec.architecture == scorer.MLP else 0
    return scorer.init_model(spec.architecture, feature_dim, hidden, seed=spec.init_seed)


def _splits(cfg: ExperimentConfig, world) -> dict[str, tuple[str, ...]]:
    return pipeline.split_query_ids(world.query_ids, cfg.split)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_world(args) -> int:
    cfg = load_experiment_config(args.config, args)
    _print_resolved("world", cfg, args)
    world = distill_data.generate_world(cfg.world)
    out = _out_dir(args)
    _atomic_write(
        out / "world_config.json",
        json.dumps(dataclasses.asdict(cfg.world), indent=2, sort_keys=True) + "\n",
    )
    _atomic_write(out / "qrels.txt", core.write_qrels(world.qrels()))
    for name in world.retriever_names:
        run = world.first_stage_run(name)
        _atomic_write(out / f"run_{name}.trec", core.write_run(run, tag=name))
    print(
        f"world: {cfg.world.num_queries} queries, pool {cfg.world.docs_per_query}, "
        f"retrievers {list(world.retriever_names)} -> {out}"
    )
    return 0


def cmd_distill(args) -> int:
    cfg = load_experiment_config(args.config, args)
    _print_resolved("distill", cfg, args)
    world = distill_data.generate_world(cfg.world)
    splits = _splits(cfg, world)
    run = pipeline.restrict_run(world.first_stage_run(cfg.distill.retriever), splits["train"])
    dataset = distill_data.build_teacher_dataset(
        run, world.teacher, world.features_for, depth=cfg.distill.depth
    )
    out = _out_dir(args)
    _atomic_write(out / "distill_dataset.jsonl", core.write_distill_dataset(dataset))
    print(
        f"distill: {len(dataset)} queries at depth {cfg.distill.depth} "
        f"from retriever {cfg.distill.retriever!r} -> {out / 'distill_dataset.jsonl'}"
    )
    return 0


def _write_train_outputs(out: Path, tag: str, report: trainer.TrainReport) -> None:
    _atomic_write(
        out / f"report_{tag}.json",
        json.dumps(dataclasses.asdict(report), indent=2, sort_keys=True) + "\n",
    )
    _atomic_write(out / f"metrics_{tag}.jsonl", "\n".join(report.metrics_lines()) + "\n")


def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config, args)
    _print_resolved("train", cfg, args)
    loss = args.loss or cfg.stage2.loss
    if args.stage == "two" and loss == trainer.LOSS_INFONCE:
        raise UsageError("--stage two requires a distillation loss (ranknet or adr-mse)")
    world = distill_data.generate_world(cfg.world)
    splits = _splits(cfg, world)
    model = _init_scorer(cfg.scorer, cfg.world.feature_dim)
    out = _out_dir(args)

    needs_distill = not (args.stage == "single" and loss == trainer.LOSS_INFONCE)
    dataset = None
    if needs_distill:
        if args.dataset:
            dataset = core.parse_distill_dataset(Path(args.dataset).read_text(encoding="utf-8"))
        else:
            run = pipeline.restrict_run(
                world.first_stage_run(cfg.distill.retriever), splits["train"]
            )
            dataset = distill_data.build_teacher_dataset(
                run, world.teacher, world.features_for, depth=cfg.distill.depth
            )
    validation = pipeline.make_validation(
        world, cfg.eval.retriever, splits["validation"], cfg.eval.depth
    )

    if args.stage == "single" and loss == trainer.LOSS_INFONCE:
        groups = distill_data.build_hard_negative_groups(
            pipeline.restrict_run(world.first_stage_run(cfg.distill.retriever), splits["train"]),
            world.qrels(),
            cfg.sampling,
        )
        model, report = trainer.train_stage1(model, groups, world.features_for, cfg.stage1)
        _write_train_outputs(out, "stage1", report)
    elif args.stage == "single":
        model, report = trainer.train_distill(model, dataset, validation, cfg.stage2)
        _write_train_outputs(out, "distill", report)
    else:
        groups = distill_data.build_hard_negative_groups(
            pipeline.restrict_run(world.first_stage_run(cfg.distill.retriever), splits["train"]),
            world.qrels(),
            cfg.sampling,
        )
        model, (report1, report2) = trainer.train_two_stage(
            model, groups, world.features_for, dataset, validation, cfg.stage1, cfg.stage2
        )
        _write_train_outputs(out, "stage1", report1)
        _write_train_outputs(out, "distill", report2)

    _atomic_write(out / "checkpoint.txt", scorer.checkpoint_text(model))
    test_pools = pipeline.build_rerank_pools(
        world, world.first_stage_run(cfg.eval.retriever), splits["test"], cfg.eval.depth
    )
    test_scores = pipeline.evaluate_model(model, test_pools, world.qrels(), cfg.eval.k)
    _atomic_write(
        out / "test_run.trec",
        core.write_run(pipeline.rerank_run(model, test_pools), tag="ltrlab"),
    )
    _atomic_write(
        out / "test_per_query.tsv",
        evaluation.per_query_scores_text(test_scores, f"nDCG@{cfg.eval.k}"),
    )
    mean_test = sum(test_scores.values()) / len(test_scores) if test_scores else 0.0
    summary = {
        "stage": args.stage,
        "loss": loss,
        "num_test_queries": len(test_scores),
        f"mean_test_ndcg{cfg.eval.k}": mean_test,
    }
    _atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"train: stage={args.stage} loss={loss} test nDCG@{cfg.eval.k}={mean_test:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    flags = {"run": args.run, "qrels": args.qrels, "k": args.k, "out": args.out}
    _print_resolved("eval", flags, args)
    run = core.parse_run(Path(args.run).read_text(encoding="utf-8"))
    qrels = core.parse_qrels(Path(args.qrels).read_text(encoding="utf-8"))
    scores = {qid: evaluation.ndcg_at_k(ranking, qrels, args.k) for qid, ranking in run.items()}
    if not scores:
        raise ConfigError(f"run file {args.run!r} contains no queries")
    out = _out_dir(args)
    _atomic_write(
        out / "per_query.tsv", evaluation.per_query_scores_text(scores, f"nDCG@{args.k}")
    )
    mean = sum(scores.values()) / len(scores)
    _atomic_write(
        out / "eval_summary.json",
        json.dumps(
            {"metric": f"nDCG@{args.k}", "num_queries": len(scores), "mean": mean},
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )
    print(f"eval: mean nDCG@{args.k} over {len(scores)} queries = {mean:.4f}")
    return 0


def cmd_significance(args) -> int:
    flags = {
        "qrels": args.qrels,
        "baseline": args.baseline,
        "candidates": args.candidate,
        "k": args.k,
        "alpha": args.alpha,
        "out": args.out,
    }
    _print_resolved("significance", flags, args)
    qrels = core.parse_qrels(Path(args.qrels).read_text(encoding="utf-8"))

    def run_scores(path: str) -> dict[str, float]:
        run = core.parse_run(Path(path).read_text(encoding="utf-8"))
        return {qid: evaluation.ndcg_at_k(ranking, qrels, args.k) for qid, ranking in run.items()}

    baseline_name = Path(args.baseline).stem
    per_system = {baseline_name: run_scores(args.baseline)}
    for cand in args.candidate:
        name = Path(cand).stem
        if name in per_system:
            raise ConfigError(f"duplicate system name {name!r}; rename the run files")
        per_system[name] = run_scores(cand)
    report = evaluation.significance_report(per_system, baseline_name, args.alpha)
    out = _out_dir(args)
    _atomic_write(out / "significance.txt", report.to_text())
    _atomic_write(out / "significance.jsonl", report.to_jsonl())
    print(report.to_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_experiment_config(args.config, args)
    _print_resolved("ablate", cfg, args)
    world = distill_data.generate_world(cfg.world)
    splits = _splits(cfg, world)
    depths = sorted(cfg.ablation.depths)
    max_depth = depths[-1]
    run = pipeline.restrict_run(world.first_stage_run(cfg.distill.retriever), splits["train"])
    full = distill_data.build_teacher_dataset(
        run, world.teacher, world.features_for, depth=max_depth
    )
    datasets = {
        d: (full if d == max_depth else distill_data.subsample_depth(full, d)) for d in depths
    }
    validation = pipeline.make_validation(
        world, cfg.eval.retriever, splits["validation"], cfg.eval.depth
    )
    base_model = _init_scorer(cfg.scorer, cfg.world.feature_dim)
    cells = pipeline.ablation_grid(
        datasets, cfg.ablation.fractions, base_model, validation, cfg.stage2
    )
    out = _out_dir(args)
    tsv_lines = ["depth\tquery_fraction\tnum_queries\tmean_ndcg10\tsteps"]
    for c in cells:
        tsv_lines.append(
            f"{c.depth}\t{c.query_fraction}\t{c.num_queries}\t{repr(c.mean_ndcg10)}\t{c.steps_executed}"
        )
    _atomic_write(out / "ablation.tsv", "\n".join(tsv_lines) + "\n")
    _atomic_write(
        out / "ablation.jsonl",
        "\n".join(json.dumps(dataclasses.asdict(c), separators=(",", ":")) for c in cells) + "\n",
    )
    print("\n".join(tsv_lines))
    return 0


def _parse_system(text: str) -> tuple[str, rerank_sim.StrategySpec, rerank_sim.CostModel]:
    parts = text.split(",")
    if len(parts) not in (4, 6):
        raise UsageError(
            f"--system needs name,kind,per_call_latency,memory_gb[,window,stride]; got {text!r}"
        )
    name, kind = parts[0], parts[1]
    try:
        latency, memory = float(parts[2]), float(parts[3])
    except ValueError:
        raise UsageError(f"bad numbers in --system {text!r}") from None
    if kind == "pointwise":
        spec = rerank_sim.pointwise()
    elif kind == "window":
        window, stride = (int(parts[4]), int(parts[5])) if len(parts) == 6 else (20, 10)
        spec = rerank_sim.sliding_window(window, stride)
    else:
        raise UsageError(f"unknown strategy kind {kind!r} in --system {text!r}")
    return name, spec, rerank_sim.CostModel(latency, memory)


def cmd_bench(args) -> int:
    flags = {"depth": args.depth, "systems": args.system, "baseline": args.baseline, "out": args.out}
    _print_resolved("bench", flags, args)
    if not args.system:
        raise UsageError("at least one --system is required")
    systems = [_parse_system(s) for s in args.system]
    names = [name for name, _, _ in systems]
    if len(set(names)) != len(names):
        raise UsageError("duplicate system names in --system")
    baseline_name = args.baseline or names[0]
    if baseline_name not in names:
        raise UsageError(f"--baseline {baseline_name!r} is not among the given systems")
    by_name = {name: (spec, cost) for name, spec, cost in systems}
    base_spec, base_cost = by_name[baseline_name]
    baseline_est = rerank_sim.estimate(args.depth, base_spec, base_cost)
    rows = []
    for name, spec, cost in systems:
        rows.append((name, rerank_sim.estimate(args.depth, spec, cost, baseline=baseline_est)))
    text = rerank_sim.cost_report(rows)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        _atomic_write(out / "bench.txt", text)
        _atomic_write(out / "bench.jsonl", rerank_sim.cost_report_jsonl(rows))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and entry point
# ---------------------------------------------------------------------------


def _add_common(p: _Parser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="JSON experiment config file")
        p.add_argument("--seed", type=int, help="master seed override for all stages")
        p.add_argument("--jobs", type=int, default=1, help="worker cap (compute is vectorized)")
    p.add_argument("--out", default=".", help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="ltrlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("world", help="generate a synthetic world and write qrels/runs")
    _add_common(p)
    p.set_defaults(func=cmd_world)

    p = sub.add_parser("distill", help="build the teacher-ranked distillation dataset")
    _add_common(p)
    p.add_argument("--depth", type=int, help="retrieval depth for the dataset")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("train", help="train the scorer (single- or two-stage)")
    _add_common(p)
    p.add_argument("--stage", choices=["single", "two"], default="single")
    p.add_argument(
        "--loss",
        choices=[trainer.LOSS_INFONCE, trainer.LOSS_RANKNET, trainer.LOSS_ADR_MSE],
        help="training loss; infonce with --stage single trains on labels only",
    )
    p.add_argument("--alpha", type=float, help="sigmoid sharpness for adr-mse")
    p.add_argument("--depth", type=int, help="distillation depth override")
    p.add_argument("--dataset", help="pre-built distillation dataset (jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--k", type=int, default=10)
    _add_common(p, config=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("significance", help="paired t-tests with Holm correction")
    p.add_argument("--qrels", required=True)
    p.add_argument("--baseline", required=True, help="baseline run file")
    p.add_argument("--candidate", action="append", default=[], help="candidate run file")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.05)
    _add_common(p, config=False)
    p.set_defaults(func=cmd_significance)

    p = sub.add_parser("ablate", help="depth x query-count ablation grid")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="re-ranking cost simulation")
    p.add_argument("--depth", type=int, default=100)
    p.add_argument(
        "--system",
        action="append",
        default=[],
        help="name,kind,per_call_latency,memory_gb[,window,stride]; kind is pointwise or window",
    )
    p.add_argument("--baseline", help="system name to compute ratios against")
    p.add_argument("--out", default=None, help="optional output directory")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("usage error: --jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, core.ParseError, trainer.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_entry()
