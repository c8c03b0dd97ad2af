"""Command line entry point.

Subcommands cover the full pipeline: generate a synthetic cohort,
analyze a dataset (feature significance + topic divergence), refine the
graph, train and evaluate the detector, run the ablation grid, and
assemble a markdown report. Exit codes: 0 success, 2 configuration
error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, EarlySdError
from .graph import (
    Label,
    load_dataset,
    load_graph,
    save_graph,
    stratified_split,
)
from .stats import feature_significance_report, jsd, render_significance_markdown
from .synth import CohortConfig, generate_cohort, load_cohort_config, save_cohort
from .detector import EarlySdModel, ModelConfig, evaluate
from .experiment import (
    ExperimentConfig,
    load_experiment_config,
    load_raw_graph,
    refine_graph,
    run_ablation,
    run_single,
    write_ablation,
    write_metrics,
    write_training_log,
)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_experiment_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
        cfg.augment = replace(cfg.augment, seed=args.seed)
        cfg.model = replace(cfg.model, seed=args.seed)
    if getattr(args, "mask", None):
        cfg.modality_mask = args.mask
    for flag in ("expand_topics", "aug_uu", "aug_ut"):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, flag, value)
    return cfg.validate()


def _dump_json(payload, path: Path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_generate(args):
    cfg = load_cohort_config(args.config) if args.config else CohortConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.signal is not None:
        cfg.signal_strength = args.signal
    cfg.validate()
    users, topics, ut_edges, truth = generate_cohort(cfg)
    out = _out_dir(args)
    save_cohort(users, topics, ut_edges, truth, out)
    print(f"wrote cohort of {len(users)} users, {len(topics)} topics, "
          f"{len(ut_edges)} interest edges to {out}")
    return 0


def cmd_analyze(args):
    users, topics, ut_edges = load_dataset(args.dataset)
    findings = feature_significance_report(users)
    topic_pos = {t.id: i for i, t in enumerate(topics)}
    hist = {lab: np.zeros(len(topics)) for lab in Label}
    label_of = {u.id: u.label for u in users}
    for e in ut_edges:
        hist[label_of[e.user]][topic_pos[e.topic]] += 1.0
    divergences = {}
    labs = list(Label)
    for i in range(len(labs)):
        for j in range(i + 1, len(labs)):
            a, b = hist[labs[i]], hist[labs[j]]
            if a.sum() == 0 or b.sum() == 0:
                continue
            key = f"{labs[i].value}|{labs[j].value}"
            divergences[key] = jsd(a / a.sum(), b / b.sum())
    payload = {
        "n_users": len(users),
        "n_topics": len(topics),
        "n_ut_edges": len(ut_edges),
        "group_sizes": {lab.value: sum(1 for u in users if u.label is lab)
                        for lab in Label},
        "feature_significance": [
            {"feature": f.feature, "f_stat": f.f_stat, "p_value": f.p_value,
             "direction": f.direction}
            for f in findings
        ],
        "topic_jsd": divergences,
    }
    out = _out_dir(args)
    _dump_json(payload, out / "analysis_report.json")
    md = [render_significance_markdown(findings), "",
          "## Topic interest divergence (JSD, log base 2)", ""]
    for key in sorted(divergences):
        md.append(f"- {key}: {divergences[key]:.4f}")
    (out / "analysis_report.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    print(f"wrote analysis report to {out}")
    return 0


def cmd_augment(args):
    cfg = _experiment_config(args)
    graph = load_raw_graph(args.dataset)
    seed = cfg.seeds[0] if cfg.seeds else cfg.augment.seed
    refined, predictor = refine_graph(graph, cfg, seed=int(seed))
    out = _out_dir(args)
    save_graph(refined, out)
    summary = {
        "n_users": refined.N,
        "n_topics": len(refined.topics),
        "n_uu_edges": len(refined.uu_edges),
        "n_ut_edges": len(refined.ut_edges),
    }
    if predictor is not None and predictor.holdout_auc is not None:
        summary["lp_holdout_auc"] = predictor.holdout_auc
    _dump_json(summary, out / "augment_summary.json")
    print(f"wrote refined graph to {out} "
          f"({summary['n_uu_edges']} u-u, {summary['n_ut_edges']} u-t edges)")
    return 0


def cmd_train(args):
    cfg = _experiment_config(args)
    graph = load_raw_graph(args.dataset)
    seed = int(cfg.seeds[0]) if cfg.seeds else 0
    result, artifacts = run_single(graph, cfg, seed)
    out = _out_dir(args)
    artifacts.model.save(out / "model.esd")
    write_metrics(result, out)
    write_training_log(artifacts.log, out)
    print(f"test acc={result['metrics']['acc']:.4f} "
          f"f1={result['metrics']['f1']:.4f}; artifacts in {out}")
    return 0


def cmd_evaluate(args):
    cfg = _experiment_config(args)
    model_path = Path(args.model)
    sidecar = model_path.with_suffix(".toml")
    model_cfg = ModelConfig()
    if sidecar.exists():
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(sidecar, "rb") as fh:
            hyper = tomllib.load(fh)
        for key in ("hidden", "dropout", "lr", "aggregation",
                    "modality_mask", "homogeneous", "seed"):
            if key in hyper:
                setattr(model_cfg, key, hyper[key])
    model = EarlySdModel.load(model_path, model_cfg.validate())
    graph = load_graph(args.dataset) if (
        Path(args.dataset) / "uu_edges.csv").exists() else load_raw_graph(args.dataset)
    seed = int(cfg.seeds[0]) if cfg.seeds else 0
    split = stratified_split(graph.users, cfg.split_ratios, seed)
    report = evaluate(model, graph, split.test)
    out = _out_dir(args)
    _dump_json({"seed": seed, "metrics": report.to_dict()}, out / "metrics.json")
    print(f"test acc={report.acc:.4f} f1={report.f1:.4f}; metrics in {out}")
    return 0


def cmd_ablate(args):
    cfg = _experiment_config(args)
    graph = load_raw_graph(args.dataset)
    rows = run_ablation(graph, cfg)
    out = _out_dir(args)
    write_ablation(rows, out)
    print(f"wrote {len(rows)}-row ablation table to {out}")
    return 0


def cmd_report(args):
    out = _out_dir(args)
    sections = ["# Early detection pipeline report", ""]
    metrics_path = out / "metrics.json"
    if metrics_path.exists():
        result = json.loads(metrics_path.read_text(encoding="utf-8"))
        m = result.get("metrics", {})
        sections += ["## Detector test metrics", ""]
        sections += [f"- {k}: {m[k]:.4f}" if isinstance(m[k], float)
                     else f"- {k}: {m[k]}" for k in sorted(m)]
        sections.append("")
        for name, bm in sorted(result.get("baselines", {}).items()):
            sections.append(f"- baseline {name}: acc={bm['acc']:.4f} "
                            f"f1={bm['f1']:.4f}")
        sections.append("")
    analysis_path = out / "analysis_report.md"
    if analysis_path.exists():
        sections += [analysis_path.read_text(encoding="utf-8").rstrip(), ""]
    ablation_path = out / "ablation.md"
    if ablation_path.exists():
        sections += ["## Ablation", "",
                     ablation_path.read_text(encoding="utf-8").rstrip(), ""]
    if len(sections) <= 2:
        raise ConfigError(f"no artifacts found under {out}")
    (out / "report.md").write_text("\n".join(sections), encoding="utf-8")
    print(f"wrote report.md to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, dataset=True, config=True, seed=True):
    if dataset:
        p.add_argument("dataset", help="dataset or refined-graph directory")
    if config:
        p.add_argument("--config", help="TOML configuration file")
    if seed:
        p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="earlysd",
        description="Early detection of problematic short-form video use "
                    "from heterogeneous social graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a calibrated cohort")
    _add_common(p, dataset=False)
    p.add_argument("--signal", type=float, default=None,
                   help="label-signal strength in [0, 1]")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", help="feature significance and topic JSD")
    _add_common(p, config=False, seed=False)
    p.set_defaults(func=cmd_analyze)

    def _aug_flags(p):
        p.add_argument("--mask", default=None, help="modality mask, e.g. PCT")
        for flag in ("expand-topics", "aug-uu", "aug-ut"):
            dest = flag.replace("-", "_")
            group = p.add_mutually_exclusive_group()
            group.add_argument(f"--{flag}", dest=dest, action="store_true",
                               default=None)
            group.add_argument(f"--no-{flag}", dest=dest, action="store_false")

    p = sub.add_parser("augment", help="refine the graph and save it")
    _add_common(p)
    _aug_flags(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the detector end to end")
    _add_common(p)
    _aug_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model on the test split")
    _add_common(p)
    p.add_argument("--model", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the refinement ablation grid")
    _add_common(p, seed=False)
    p.add_argument("--mask", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="assemble report.md from artifacts")
    _add_common(p, dataset=False, config=False, seed=False)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except EarlySdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
