"""Command-line surface.

Subcommands: train, ablate, project, gradcheck, synth.  Every command
prints its fully resolved configuration as a run header, writes the same
configuration to <out>/manifest.json, and can be replayed bit-for-bit with
--manifest.  Exit codes: 0 success, 1 ingestion error, 2 divergence,
3 configuration or usage error, 4 failed gradient check.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from . import autodiff as ad
from .data import DatasetBundle, SyntheticSpec, generate_synthetic, load_bundle, save_bundle
from .errors import (
    ConfigError,
    DivergenceError,
    GlsslError,
    GradCheckError,
    IngestionError,
)
from .graph_prior import build_prior
from .model import (
    ATTENTION_GRAPHS,
    DEGREE_MODES,
    GRAPH_LOSS_FEATURES,
    VARIANTS,
    ModelConfig,
    forward,
    load_checkpoint,
)
from .projection import top2_components
from .training import (
    TrainConfig,
    check_memory_budget,
    grad_check,
    run,
)

ABLATION_ORDER = ("glgcn", "dgl-non-local", "dgl-shallow-metric", "dgl")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 3)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_model_flags(p: argparse.ArgumentParser, with_variant: bool = True):
    if with_variant:
        p.add_argument("--variant", choices=VARIANTS, default="dgl")
    p.add_argument("--d0", type=int, default=70)
    p.add_argument("--d1", type=int, default=30)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--lambda1", type=float, default=0.1)
    p.add_argument("--lambda2", type=float, default=0.01)
    p.add_argument("--lambda3", type=float, default=0.001)
    p.add_argument("--degree-from", choices=DEGREE_MODES, default="a_hat")
    p.add_argument("--attention-graph", choices=ATTENTION_GRAPHS, default="a1")
    p.add_argument("--graph-loss-features", choices=GRAPH_LOSS_FEATURES, default="raw")
    p.add_argument("--zero-metric-init", action="store_true")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--select", choices=("best_val", "final"), default="best_val")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--normalize-features", action="store_true",
                   help="L1-normalize feature rows at load time")
    p.add_argument("--mem-budget-gb", type=float, default=6.0)
    p.add_argument("--force", action="store_true",
                   help="run even when the memory estimate exceeds the budget")


def _add_prior_flags(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--use-prior", dest="use_prior", action="store_const", const=True,
                   default=None, help="require and use the bundle edge graph")
    g.add_argument("--no-prior", dest="use_prior", action="store_const", const=False,
                   help="ignore bundle edges, use the all-ones prior")


def build_parser() -> _Parser:
    parser = _Parser(prog="glssl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"glssl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="train one variant on a bundle")
    p_train.add_argument("--bundle", type=str)
    _add_prior_flags(p_train)
    _add_model_flags(p_train)
    _add_train_flags(p_train)
    p_train.add_argument("--out", type=str, default="runs/train")
    p_train.add_argument("--manifest", type=str, help="replay a saved manifest")
    p_train.set_defaults(func=cmd_train)

    p_abl = sub.add_parser("ablate", help="run the variant sweep with seeded repeats")
    p_abl.add_argument("--bundle", type=str)
    _add_prior_flags(p_abl)
    _add_model_flags(p_abl, with_variant=False)
    _add_train_flags(p_abl)
    p_abl.add_argument("--out", type=str, default="runs/ablate")
    p_abl.add_argument("--manifest", type=str)
    p_abl.set_defaults(func=cmd_ablate)

    p_proj = sub.add_parser("project", help="export a 2-D PCA of the fused representation")
    p_proj.add_argument("--checkpoint", type=str)
    p_proj.add_argument("--bundle", type=str)
    _add_prior_flags(p_proj)
    p_proj.add_argument("--normalize-features", action="store_true")
    p_proj.add_argument("--out", type=str, default="runs/project")
    p_proj.add_argument("--manifest", type=str)
    p_proj.set_defaults(func=cmd_project)

    p_gc = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p_gc.add_argument("--variant", choices=VARIANTS + ("all",), default="all")
    p_gc.add_argument("--n", type=int, default=8)
    p_gc.add_argument("--d", type=int, default=5)
    p_gc.add_argument("--c", type=int, default=3)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--seeds", type=int, default=1)
    p_gc.add_argument("--tol", type=float, default=1e-4)
    p_gc.add_argument("--prior", choices=("edges", "ones", "both"), default="both")
    p_gc.add_argument("--out", type=str, default="runs/gradcheck")
    p_gc.add_argument("--manifest", type=str)
    p_gc.set_defaults(func=cmd_gradcheck)

    p_syn = sub.add_parser("synth", help="generate the Gaussian-blob bundle")
    p_syn.add_argument("--classes", type=int, default=4)
    p_syn.add_argument("--per-class", type=int, default=1000)
    p_syn.add_argument("--dim", type=int, default=200)
    p_syn.add_argument("--labeled-per-class", type=int, default=4)
    p_syn.add_argument("--separation", type=float, default=4.0)
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--out", type=str, default="data/synth")
    p_syn.add_argument("--manifest", type=str)
    p_syn.set_defaults(func=cmd_synth)
    return parser


# ---------------------------------------------------------------------------
# spec handling


def _resolve_spec(args, keys) -> dict:
    """Build the fully resolved run spec, replaying a manifest if given."""
    if getattr(args, "manifest", None):
        path = Path(args.manifest)
        if not path.is_file():
            raise IngestionError(f"manifest not found: {path}")
        stored = json.loads(path.read_text())
        spec = dict(stored["config"])
        spec["out"] = args.out  # destination always comes from the command line
        return spec
    return {k: getattr(args, k) for k in keys}


def _start_run(command: str, spec: dict) -> Path:
    header = {"command": command, "version": __version__, "config": spec}
    print(f"[glssl {command}] {json.dumps(spec, sort_keys=True)}")
    out = Path(spec["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    return out


def _load_bundle_spec(spec: dict) -> DatasetBundle:
    if not spec.get("bundle"):
        raise ConfigError("--bundle is required")
    bundle = load_bundle(spec["bundle"])
    if spec.get("normalize_features"):
        from .data import row_normalize_features

        bundle.x = row_normalize_features(bundle.x)
    return bundle


def _resolve_prior(bundle: DatasetBundle, use_prior):
    if use_prior is True and bundle.edges is None:
        raise ConfigError(f"bundle {bundle.name} has no edges.tsv, cannot --use-prior")
    if use_prior is None:
        use_prior = bundle.edges is not None
    return build_prior(bundle.n, bundle.edges if use_prior else None), use_prior


def _model_cfg(spec: dict, num_classes: int) -> ModelConfig:
    return ModelConfig(
        variant=spec.get("variant", "dgl"),
        d0=spec["d0"],
        d1=spec["d1"],
        c=num_classes,
        lambda1=spec["lambda1"],
        lambda2=spec["lambda2"],
        lambda3=spec["lambda3"],
        dropout=spec["dropout"],
        degree_from=spec["degree_from"],
        attention_graph=spec["attention_graph"],
        graph_loss_features=spec["graph_loss_features"],
        zero_metric_init=spec["zero_metric_init"],
        seed=spec["seed"],
    )


def _train_cfg(spec: dict) -> TrainConfig:
    return TrainConfig(
        episodes=spec["episodes"],
        lr=spec["lr"],
        optimizer=spec["optimizer"],
        weight_decay=spec["weight_decay"],
        select=spec["select"],
        seed=spec["seed"],
    )


def _budget_bytes(spec: dict) -> int:
    return int(spec["mem_budget_gb"] * 1024**3)


_TRAIN_KEYS = (
    "bundle", "use_prior", "variant", "d0", "d1", "dropout", "lambda1", "lambda2",
    "lambda3", "degree_from", "attention_graph", "graph_loss_features",
    "zero_metric_init", "episodes", "lr", "optimizer", "weight_decay", "select",
    "seed", "seeds", "normalize_features", "mem_budget_gb", "force", "out",
)


def cmd_train(args) -> int:
    spec = _resolve_spec(args, _TRAIN_KEYS)
    out = _start_run("train", spec)
    bundle = _load_bundle_spec(spec)
    prior, used = _resolve_prior(bundle, spec["use_prior"])
    model_cfg = _model_cfg(spec, bundle.num_classes)
    train_cfg = _train_cfg(spec)
    budget = _budget_bytes(spec)

    reports = []
    best_state = None
    best_val = -1.0
    for i in range(spec["seeds"]):
        cfg_i = replace(train_cfg, seed=train_cfg.seed + i)
        state, rep = run(bundle, prior, model_cfg, cfg_i, budget, spec["force"])
        reports.append(rep)
        if rep.best_val_acc > best_val:
            best_val = rep.best_val_acc
            best_state = state
        print(
            f"seed {cfg_i.seed}: test accuracy {rep.test_acc:.4f}"
            f" (val {rep.best_val_acc:.4f} at episode {rep.best_episode})"
        )

    with open(out / "report.jsonl", "w") as fh:
        for rep in reports:
            for rec in rep.jsonl_records():
                fh.write(json.dumps({"seed": rep.seed, **rec}) + "\n")
    accs = np.array([r.test_acc for r in reports])
    summary = {
        "bundle": bundle.name,
        "variant": model_cfg.variant,
        "used_prior": used,
        "seeds": [r.seed for r in reports],
        "test_acc_mean": float(accs.mean()),
        "test_acc_std": float(accs.std(ddof=1)) if len(reports) > 1 else 0.0,
        "per_seed": [r.summary() for r in reports],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    best_state.save(out / "checkpoint.bin")
    print(f"test accuracy: {summary['test_acc_mean']:.4f} +- {summary['test_acc_std']:.4f}")
    return 0


_ABLATE_KEYS = tuple(k for k in _TRAIN_KEYS if k != "variant")


def cmd_ablate(args) -> int:
    spec = _resolve_spec(args, _ABLATE_KEYS)
    out = _start_run("ablate", spec)
    bundle = _load_bundle_spec(spec)
    prior, used = _resolve_prior(bundle, spec["use_prior"])
    train_cfg = _train_cfg(spec)
    budget = _budget_bytes(spec)
    k = spec["seeds"]

    rows = []
    for variant in ABLATION_ORDER:
        model_cfg = _model_cfg({**spec, "variant": variant}, bundle.num_classes)
        accs = []
        for i in range(k):
            cfg_i = replace(train_cfg, seed=train_cfg.seed + i)
            _, rep = run(bundle, prior, model_cfg, cfg_i, budget, spec["force"])
            accs.append(rep.test_acc)
        accs = np.array(accs)
        mean = float(accs.mean())
        std = float(accs.std(ddof=1)) if k > 1 else 0.0
        rows.append({"variant": variant, "mean_acc": mean, "std_acc": std})
        print(f"{variant:>20}: {100 * mean:5.1f} +- {100 * std:4.1f}")

    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "mean_acc", "std_acc"])
        writer.writeheader()
        writer.writerows(rows)
    lines = [f"{'variant':>20}  {'accuracy %':>12}"]
    for r in rows:
        lines.append(f"{r['variant']:>20}  {100 * r['mean_acc']:6.1f} +- {100 * r['std_acc']:.1f}")
    (out / "ablation.txt").write_text("\n".join(lines) + "\n")
    (out / "summary.json").write_text(json.dumps({"bundle": bundle.name,
                                                  "used_prior": used,
                                                  "rows": rows}, indent=2) + "\n")
    return 0


_PROJECT_KEYS = ("checkpoint", "bundle", "use_prior", "normalize_features", "out")


def cmd_project(args) -> int:
    spec = _resolve_spec(args, _PROJECT_KEYS)
    out = _start_run("project", spec)
    if not spec.get("checkpoint"):
        raise ConfigError("--checkpoint is required")
    state = load_checkpoint(spec["checkpoint"])
    bundle = _load_bundle_spec(spec)
    prior, _ = _resolve_prior(bundle, spec["use_prior"])
    check_memory_budget(bundle.n, state.cfg.variant, None, True)  # estimate only, no refusal
    outs = forward(state, ad.tensor(bundle.x), prior, training=False)
    coords, _, _ = top2_components(outs.logits.data)
    membership = np.full(bundle.n, "none", dtype=object)
    for name in ("train", "val", "test"):
        membership[getattr(bundle, name)] = name
    with open(out / "nodes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label", "split"])
        for i in range(bundle.n):
            writer.writerow([repr(coords[i, 0]), repr(coords[i, 1]),
                             int(bundle.y[i]), membership[i]])
    print(f"wrote {out / 'nodes.csv'} ({bundle.n} rows)")
    return 0


_GRADCHECK_KEYS = ("variant", "n", "d", "c", "seed", "seeds", "tol", "prior", "out")


def cmd_gradcheck(args) -> int:
    spec = _resolve_spec(args, _GRADCHECK_KEYS)
    out = _start_run("gradcheck", spec)
    variants = VARIANTS if spec["variant"] == "all" else (spec["variant"],)
    modes = {"edges": (True,), "ones": (False,), "both": (True, False)}[spec["prior"]]
    results = []
    failed = False
    for variant in variants:
        for seed in range(spec["seed"], spec["seed"] + spec["seeds"]):
            for use_edges in modes:
                rep = grad_check(
                    variant=variant, n=spec["n"], d=spec["d"], c=spec["c"],
                    seed=seed, tol=spec["tol"], use_edges=use_edges,
                )
                results.append(
                    {
                        "variant": variant,
                        "seed": seed,
                        "prior": "edges" if use_edges else "ones",
                        "max_rel_err": rep.max_rel_err,
                        "checked": rep.n_checked,
                        "excluded": rep.n_excluded,
                        "passed": rep.passed,
                        "per_param": rep.per_param,
                    }
                )
                status = "ok" if rep.passed else "FAIL"
                print(
                    f"{variant:>20} seed={seed} prior={'edges' if use_edges else 'ones '}"
                    f" max_rel_err={rep.max_rel_err:.3e} excluded={rep.n_excluded:3d} {status}"
                )
                for row in rep.per_param:
                    print(
                        f"{'':>22}{row['name']:>8}: {row['max_rel_err']:.3e}"
                        f" ({row['entries']} entries, {row['excluded']} excluded)"
                    )
                failed = failed or not rep.passed
    (out / "gradcheck.json").write_text(json.dumps(results, indent=2) + "\n")
    if failed:
        raise GradCheckError(f"gradient check failed at tol {spec['tol']}")
    return 0


_SYNTH_KEYS = ("classes", "per_class", "dim", "labeled_per_class", "separation", "seed", "out")


def cmd_synth(args) -> int:
    spec = _resolve_spec(args, _SYNTH_KEYS)
    out = _start_run("synth", spec)
    bundle = generate_synthetic(
        SyntheticSpec(
            classes=spec["classes"],
            per_class=spec["per_class"],
            dim=spec["dim"],
            labeled_per_class=spec["labeled_per_class"],
            separation=spec["separation"],
            seed=spec["seed"],
        )
    )
    save_bundle(bundle, out)
    print(
        f"wrote bundle {bundle.name} to {out}: n={bundle.n} d={bundle.dim}"
        f" splits {bundle.train.size}/{bundle.val.size}/{bundle.test.size}"
    )
    return 0


def main(argv=None) -> int:
    kernels.apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GradCheckError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except GlsslError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
