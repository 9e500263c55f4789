"""Command line interface: ``caqubo <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline
from .annealing import SolverConfig, exhaustive_solve, repeated_solve_vote, simulated_anneal
from .counterfactual import counterfactual_scores, save_counterfactual
from .datasets import (
    HoldoutSplit,
    SyntheticSpec,
    generate_synthetic,
    load_with_header,
    save_sparse_matrix,
    split_holdout,
)
from .infometrics import build_target, compute_mi_stats
from .itemknn import EvalParams, KnnParams, fit_item_knn, ndcg_at_k
from .qubo import add_cardinality_penalty, build_caqubo, dump_qubo, energy, load_qubo, scale


def _indices(text):
    return [int(v) for v in text.split(",") if v.strip()] if text else None


def _add_knn_eval(p):
    p.add_argument("--n-neighbors", type=int, default=100)
    p.add_argument("--shrink", type=float, default=0.0)
    p.add_argument("--cutoff", type=int, default=10)
    p.add_argument("--user-sample-fraction", type=float, default=1.0)
    p.add_argument("--sample-seed", type=int, default=0)


def _load_split(args):
    train = load_with_header(args.urm_train)
    test = load_with_header(args.urm_test)
    n_items = max(train.shape[1], test.shape[1])
    n_users = max(train.shape[0], test.shape[0])
    train.resize((n_users, n_items))
    test.resize((n_users, n_items))
    return HoldoutSplit(train, test)


def cmd_synth(args):
    spec = SyntheticSpec(
        n_users=args.n_users,
        n_items=args.n_items,
        n_features=args.n_features,
        n_informative=args.n_informative,
        noise_rate=args.noise_rate,
        interaction_density=args.density,
        seed=args.seed,
    )
    urm, icm, planted = generate_synthetic(spec)
    out = Path(args.out)
    save_sparse_matrix(urm, out / "urm.tsv")
    save_sparse_matrix(icm, out / "icm.tsv")
    (out / "planted.txt").write_text("".join(f"{i}\n" for i in planted), encoding="utf-8")
    print(f"wrote {out}/urm.tsv ({urm.shape[0]}x{urm.shape[1]}, nnz={urm.nnz}), icm.tsv, planted.txt")


def cmd_split(args):
    split = split_holdout(load_with_header(args.urm), args.ratio, args.seed)
    out = Path(args.out)
    save_sparse_matrix(split.train, out / "urm_train.tsv")
    save_sparse_matrix(split.test, out / "urm_test.tsv")
    print(f"train nnz={split.train.nnz} test nnz={split.test.nnz}")


def cmd_mistats(args):
    icm = load_with_header(args.icm)
    train = load_with_header(args.urm_train)
    train.resize((train.shape[0], icm.shape[0]))
    stats = compute_mi_stats(icm, build_target(train), _indices(args.features))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "mi.tsv", "w", encoding="utf-8") as fh:
        for i, v in zip(stats.features, stats.mi):
            fh.write(f"{i}\t{float(v)!r}\n")
    with open(out / "cmi.tsv", "w", encoding="utf-8") as fh:
        for a, i in enumerate(stats.features):
            for b, j in enumerate(stats.features):
                if a != b:
                    fh.write(f"{i}\t{j}\t{float(stats.cmi[a, b])!r}\n")
    print(f"wrote mi.tsv and cmi.tsv for {stats.m} features")


def cmd_counterfactual(args):
    icm = load_with_header(args.icm)
    split = _load_split(args)
    knn = KnnParams(args.n_neighbors, args.shrink)
    ev = EvalParams(args.cutoff, args.user_sample_fraction, args.sample_seed)
    scores = counterfactual_scores(icm, split, knn, ev, _indices(args.features), n_jobs=args.n_jobs)
    save_counterfactual(scores, args.out)
    print(f"base nDCG@{ev.cutoff} {scores.base_ndcg:.4f}; wrote {args.out}/e.tsv")


def cmd_eval(args):
    icm = load_with_header(args.icm)
    split = _load_split(args)
    mask = pipeline.read_mask(args.mask, icm.shape[1])
    model = fit_item_knn(icm, mask, KnnParams(args.n_neighbors, args.shrink))
    value = ndcg_at_k(model, split, EvalParams(args.cutoff, args.user_sample_fraction, args.sample_seed))
    print(f"{value:.{args.digits}f}")


def cmd_solve(args):
    qm = load_qubo(args.qubo)
    t0 = time.perf_counter()
    if args.exhaustive:
        mask, seeds = exhaustive_solve(qm).mask, None
    else:
        cfg = SolverConfig("sa", args.sweeps, args.t_start, args.t_end, args.runs, args.vote_threshold, args.seed)
        schedule = cfg.schedule_for(qm)
        if args.runs == 1:
            mask = simulated_anneal(qm, schedule, args.seed).mask
        else:
            mask, _, _ = repeated_solve_vote(qm, schedule, args.runs, args.vote_threshold, cfg.seeds())
        seeds = cfg.seeds()
    out = Path(args.out)
    pipeline.write_mask(mask, out / "mask.txt")
    summary = {
        "energy": energy(qm, mask),
        "popcount": int(np.sum(mask)),
        "seeds": seeds,
        "wall_time": time.perf_counter() - t0,
    }
    (out / "solve.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary))


def _config_from(args):
    overrides = {
        name: getattr(args, name) for name in pipeline.CONFIG_FIELDS if getattr(args, name, None) is not None
    }
    if args.no_cache:
        overrides["use_cache"] = "false"
    return pipeline.load_config(args.config, overrides)


def cmd_select(args):
    config = _config_from(args)
    stages = pipeline.Stages(config)
    mask, row = pipeline.run_caqubo(config, stages=stages)
    out = Path(config.output_dir)
    pipeline.write_mask(mask, out / "mask.txt")
    qm = scale(build_caqubo(stages.mi_stats(), stages.counterfactual(), row.lam), config.mu)
    dump_qubo(add_cardinality_penalty(qm, row.k, config.gamma), out / "qubo.txt")
    print(f"selected {row.n_selected} features; nDCG@{config.cutoff} {row.ndcg:.4f}; energy {row.energy:.6g}")


def cmd_grid(args):
    config = _config_from(args)
    report = pipeline.run_grid(config)
    print(pipeline.report_markdown(report), end="")
    failed = [r for r in report.rows if r.error]
    if failed:
        print(f"{len(failed)} cell(s) failed; see report.csv", file=sys.stderr)


def _add_config_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--no-cache", action="store_true", help="ignore and do not write the stage cache")
    for name in pipeline.CONFIG_FIELDS:
        if name == "use_cache":
            continue
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, metavar="VALUE")


def build_parser():
    parser = argparse.ArgumentParser(prog="caqubo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate planted-feature synthetic data")
    p.add_argument("--n-users", type=int, default=200)
    p.add_argument("--n-items", type=int, default=300)
    p.add_argument("--n-features", type=int, default=50)
    p.add_argument("--n-informative", type=int, default=10)
    p.add_argument("--noise-rate", type=float, default=0.05)
    p.add_argument("--density", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="per-user train/test holdout split")
    p.add_argument("--urm", required=True)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("mistats", help="MI and CMI against the popularity target")
    p.add_argument("--icm", required=True)
    p.add_argument("--urm-train", required=True)
    p.add_argument("--features", help="comma-separated feature subset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mistats)

    p = sub.add_parser("counterfactual", help="leave-one-feature-out nDCG deltas")
    p.add_argument("--icm", required=True)
    p.add_argument("--urm-train", required=True)
    p.add_argument("--urm-test", required=True)
    _add_knn_eval(p)
    p.add_argument("--features", help="comma-separated feature subset")
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("select", help="one CAQUBO selection (single lambda and k)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("grid", help="lambda x k grid with report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("solve", help="solve a QUBO dump")
    p.add_argument("qubo")
    p.add_argument("--sweeps", type=int, default=200)
    p.add_argument("--t-start", type=float, default=None)
    p.add_argument("--t-end", type=float, default=1e-3)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--vote-threshold", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="nDCG of Item-KNN on a feature mask")
    p.add_argument("--urm-train", required=True)
    p.add_argument("--urm-test", required=True)
    p.add_argument("--icm", required=True)
    p.add_argument("--mask", required=True, help="file with one selected feature index per line")
    _add_knn_eval(p)
    p.add_argument("--digits", type=int, default=4)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except pipeline.StageError as exc:
        print(f"caqubo {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"caqubo {args.command}: [{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
