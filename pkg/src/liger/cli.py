"""``liger`` command line: one subcommand per pipeline stage.

Exit status is 0 on success, 1 when an input fails validation, 2 on usage
errors. Every subcommand prints ``key=value`` summary lines on stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .data import (
    EmbeddingDataset,
    EngineConfig,
    load_config,
    load_embeddings,
    load_labels,
    load_votes,
    parse_float_list,
    parse_int_list,
    store_embeddings,
    store_labels,
    store_votes,
)
from .errors import FormatError, LigerError
from .evaluate import (
    bench_bias_variance,
    bench_extension,
    compute_metrics,
    default_radius_grid,
    tune,
)
from .extend import coverage_delta, extend_all, store_extended
from .label_model import fit, load_model, predict, store_model, summary
from .partition import kmeans_fit, part_diameters, store_partition
from .smoothness import NeighborhoodSpec, smoothness_report
from .synthetic import (
    SyntheticModelSpec,
    checkerboard_task,
    default_checkerboard,
    sample_dataset,
    spec_from_targets,
    two_population_dataset,
)

log = logging.getLogger("liger")


def _fmt(value) -> str:
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _emit(**pairs) -> None:
    for k, v in pairs.items():
        print(f"{k}={_fmt(v)}")


def _radii_from_args(args, parser, m, metric):
    if args.radii is not None and args.sim_thresholds is not None:
        parser.error("give at most one of --radii and --sim-thresholds")
    if args.sim_thresholds is not None:
        if metric != "cosine":
            parser.error("--sim-thresholds requires cosine embeddings")
        radii = [1.0 - t for t in parse_float_list(args.sim_thresholds, "sim-thresholds")]
    elif args.radii is not None:
        radii = parse_float_list(args.radii, "radii")
    else:
        return None
    if len(radii) == 1 and m > 1:
        radii = radii * m
    return radii


def _load_emb(path, metric):
    return load_embeddings(path, metric=metric if str(path).lower().endswith(".csv") else None)


# ---------------------------------------------------------------------------
# subcommands

def cmd_partition(args, parser):
    emb = _load_emb(args.embeddings, args.metric)
    cfg = load_config(args.config) if args.config else EngineConfig()
    part = kmeans_fit(emb, args.s, args.seed, cfg.kmeans_max_iters, cfg.kmeans_tol)
    store_partition(part, args.out)
    _, avg = part_diameters(emb, part)
    _emit(s=part.s, part_sizes=part.part_sizes.tolist(), objective=part.objective_history[-1],
          average_diameter=avg)


def cmd_extend(args, parser):
    emb = _load_emb(args.embeddings, args.metric)
    votes = load_votes(args.votes, emb.n)
    radii = _radii_from_args(args, parser, votes.m, emb.metric)
    if radii is None:
        parser.error("extend needs --radii or --sim-thresholds")
    ext = extend_all(emb, votes, radii)
    store_extended(ext, args.out)
    delta = coverage_delta(votes, ext)
    _emit(coverage_before=delta.before, coverage_after=delta.after, coverage_delta=delta.delta,
          source_coverage_before=delta.per_source_before.tolist(),
          source_coverage_after=delta.per_source_after.tolist())


def _config_with_overrides(args, parser, m, metric):
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "s", None) is not None:
        changes["s"] = args.s
    radii = _radii_from_args(args, parser, m, metric)
    if radii is not None:
        changes["radii"] = tuple(radii)
    return cfg.replace(**changes) if changes else cfg


def cmd_fit(args, parser):
    emb = _load_emb(args.embeddings, args.metric)
    votes = load_votes(args.votes, emb.n)
    cfg = _config_with_overrides(args, parser, votes.m, emb.metric)
    dev_emb = _load_emb(args.dev_embeddings, args.metric) if args.dev_embeddings else None
    dev_labels = load_labels(args.dev_labels) if args.dev_labels else None
    ext = extend_all(emb, votes, cfg.radii_for(votes.m))
    model = fit(emb, ext, cfg, dev_labels=dev_labels, dev_embeddings=dev_emb, support_votes=votes)
    store_model(model, args.out)
    info = summary(model)
    _emit(**info)


def cmd_predict(args, parser):
    model = load_model(args.model)
    emb = _load_emb(args.embeddings, args.metric)
    votes = load_votes(args.votes, emb.n)
    if (args.test_embeddings is None) != (args.test_votes is None):
        parser.error("--test-embeddings and --test-votes go together")
    if args.test_embeddings:
        test_emb = _load_emb(args.test_embeddings, args.metric)
        test_votes = load_votes(args.test_votes, test_emb.n)
    else:
        test_emb, test_votes = emb, votes
    pred = predict(model, test_emb, test_votes, support_emb=emb, support_votes=votes)
    Path(args.out).write_text(pred.to_csv())
    _emit(n=int(pred.posterior.shape[0]), positive=int(np.count_nonzero(pred.label == 1)),
          mean_posterior=float(np.mean(pred.posterior)) if pred.posterior.size else 0.0)


def _read_predictions(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "part", "posterior", "label", "abstains"]:
            raise FormatError("header: expected id,part,posterior,label,abstains")
        rows = list(reader)
    return np.array([float(r["posterior"]) for r in rows])


def cmd_evaluate(args, parser):
    post = _read_predictions(args.predictions)
    labels = load_labels(args.labels, post.shape[0])
    report = compute_metrics(post, labels)
    if args.out:
        Path(args.out).write_text(json.dumps(report.as_dict(), sort_keys=True) + "\n")
    _emit(**report.as_dict())


def cmd_tune(args, parser):
    emb = _load_emb(args.embeddings, args.metric)
    votes = load_votes(args.votes, emb.n)
    dev_emb = _load_emb(args.dev_embeddings, args.metric)
    dev_votes = load_votes(args.dev_votes, dev_emb.n)
    dev_labels = load_labels(args.dev_labels, dev_emb.n)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    grid = parse_float_list(args.r_grid, "r-grid")
    if emb.metric == "cosine" and args.grid_as_similarity:
        grid = [1.0 - t for t in grid]
    result = tune(emb, votes, dev_emb, dev_votes, dev_labels, cfg, grid, args.s_max, args.dev_metric)
    if args.out:
        Path(args.out).write_text(json.dumps(result.as_dict(), sort_keys=True) + "\n")
    _emit(radii=list(result.radii), s=result.s, dev_metric=result.dev_metric,
          candidates=len(result.search_trace))


def cmd_smoothness(args, parser):
    emb = _load_emb(args.embeddings, args.metric)
    if (args.r_grid is None) == (args.k_grid is None):
        parser.error("give exactly one of --r-grid and --k-grid")
    spec = (NeighborhoodSpec.radius(parse_float_list(args.r_grid, "r-grid")) if args.r_grid
            else NeighborhoodSpec.knn(parse_int_list(args.k_grid, "k-grid")))
    labels = load_labels(args.labels, emb.n) if args.labels else None
    votes = load_votes(args.votes, emb.n) if args.votes else None
    if labels is None and votes is None:
        parser.error("smoothness needs --labels and/or --votes")
    report = smoothness_report(emb, spec, labels=labels, votes=votes)
    Path(args.out).write_text(report.to_csv())
    _emit(grid_points=len(spec.values))


def _model_spec_from_doc(doc) -> SyntheticModelSpec:
    if "theta" in doc:
        return SyntheticModelSpec(doc.get("theta_y", 0.0), doc["theta"], doc["theta_abstain"])
    return spec_from_targets(doc["accuracies"], doc.get("coverages", 1.0), doc.get("class_balance", 0.5))


DEFAULT_POPULATIONS = {
    "a": {"accuracies": [0.85, 0.75, 0.15, 0.2, 0.6], "coverages": 0.7},
    "b": {"accuracies": [0.15, 0.2, 0.85, 0.75, 0.6], "coverages": 0.7},
}


def _write_bundle(out: Path, emb, labels, votes):
    out.mkdir(parents=True, exist_ok=True)
    store_embeddings(emb, out / "embeddings.lgem")
    store_votes(votes, out / "votes.csv")
    store_labels(labels, out / "labels.csv")


def cmd_synth(args, parser):
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    out = Path(args.out)
    if args.kind == "model":
        spec = _model_spec_from_doc(doc or {"accuracies": [0.8, 0.6, 0.7]})
        sample = sample_dataset(spec, args.n, args.seed)
        xy = np.random.default_rng([args.seed, 1]).random((args.n, 2))
        _write_bundle(out, EmbeddingDataset(xy), sample.labels, sample.votes)
        _emit(n=args.n, m=spec.m, accuracies=sample.accuracies.tolist())
    elif args.kind == "two-population":
        a = _model_spec_from_doc(doc.get("a", DEFAULT_POPULATIONS["a"]))
        b = _model_spec_from_doc(doc.get("b", DEFAULT_POPULATIONS["b"]))
        bundle = two_population_dataset(a, b, args.n, args.seed)
        _write_bundle(out, bundle.embeddings, bundle.labels, bundle.votes)
        lines = ["id,population"] + [f"{i},{int(p)}" for i, p in enumerate(bundle.membership)]
        (out / "membership.csv").write_text("\n".join(lines) + "\n")
        _emit(n=bundle.embeddings.n, m=bundle.votes.m)
    else:
        spec = default_checkerboard(
            accuracy=doc.get("accuracy", 0.89), grid=doc.get("grid", 10), n=args.n, seed=args.seed,
            random_labels=doc.get("random_labels", False),
        )
        sample = checkerboard_task(spec)
        _write_bundle(out, sample.embeddings, sample.labels, sample.votes)
        _emit(n=spec.n, m=len(spec.sources), grid=spec.grid)


def cmd_bench(args, parser):
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.kind == "bias-variance":
        a = _model_spec_from_doc(doc.get("a", DEFAULT_POPULATIONS["a"]))
        b = _model_spec_from_doc(doc.get("b", DEFAULT_POPULATIONS["b"]))
        s_list = parse_int_list(args.s or "1,2,4,8", "s")
        res = bench_bias_variance(a, b, args.n_each, s_list, args.seeds, seed=args.seed)
        Path(args.out).write_text(res.to_csv())
        _emit(rows=len(s_list), best_s=s_list[int(np.argmin(res.mean))])
    else:
        grid = parse_float_list(args.r_grid, "r-grid") if args.r_grid else default_radius_grid()
        variants = {}
        if args.variants in ("accuracy", "all"):
            for acc in (0.89, 0.7, 0.5, 0.3):
                variants[f"acc={acc}"] = default_checkerboard(accuracy=acc, n=args.n, seed=args.seed)
        if args.variants in ("board", "all"):
            variants["board=2x2"] = default_checkerboard(grid=2, n=args.n, seed=args.seed)
            variants["board=10x10"] = default_checkerboard(grid=10, n=args.n, seed=args.seed)
            variants["board=random"] = default_checkerboard(random_labels=True, n=args.n, seed=args.seed)
        res = bench_extension(variants, grid)
        Path(args.out).write_text(res.to_csv())
        for c in res.curves:
            print(f"best_reduction[{c.name}]={c.best_reduction!r}")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liger", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    threads_default = os.environ.get("LIGER_THREADS")

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func, subparser=p)
        p.add_argument("--threads", type=int, default=int(threads_default) if threads_default else None)
        return p

    def emb_flags(p, required=True):
        p.add_argument("--embeddings", required=required)
        p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean",
                       help="metric for CSV embeddings (LGEM files carry their own)")

    def radius_flags(p):
        p.add_argument("--radii")
        p.add_argument("--sim-thresholds")

    p = add("partition", cmd_partition, "k-means partition of the embeddings")
    emb_flags(p)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = add("extend", cmd_extend, "extend source votes to nearby abstained points")
    emb_flags(p)
    p.add_argument("--votes", required=True)
    radius_flags(p)
    p.add_argument("--out", required=True)

    p = add("fit", cmd_fit, "fit the label model")
    emb_flags(p)
    p.add_argument("--votes", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--s", type=int)
    radius_flags(p)
    p.add_argument("--dev-embeddings")
    p.add_argument("--dev-labels")
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "posterior pseudolabels from a fitted model")
    emb_flags(p)
    p.add_argument("--votes", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--test-embeddings")
    p.add_argument("--test-votes")
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "accuracy, F1 and cross-entropy of predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out")

    p = add("tune", cmd_tune, "dev-set search over radii and part count")
    emb_flags(p)
    p.add_argument("--votes", required=True)
    p.add_argument("--dev-embeddings", required=True)
    p.add_argument("--dev-votes", required=True)
    p.add_argument("--dev-labels", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--r-grid", required=True)
    p.add_argument("--grid-as-similarity", action="store_true",
                   help="read --r-grid as cosine similarity thresholds")
    p.add_argument("--s-max", type=int, default=10)
    p.add_argument("--dev-metric", choices=("f1", "accuracy"), default="f1")
    p.add_argument("--out")

    p = add("smoothness", cmd_smoothness, "label / coverage / PL smoothness curves")
    emb_flags(p)
    p.add_argument("--labels")
    p.add_argument("--votes")
    p.add_argument("--r-grid")
    p.add_argument("--k-grid")
    p.add_argument("--out", required=True)

    p = add("synth", cmd_synth, "sample a synthetic bundle")
    p.add_argument("--kind", choices=("model", "two-population", "checkerboard"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=10000, help="points (per population for two-population)")
    p.add_argument("--config", help="JSON generator parameters")
    p.add_argument("--out", required=True, help="output directory")

    p = add("bench", cmd_bench, "synthetic benchmark drivers")
    p.add_argument("--kind", choices=("bias-variance", "extension"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--s", help="comma-separated part counts (bias-variance)")
    p.add_argument("--seeds", type=int, default=10, help="replicates (bias-variance)")
    p.add_argument("--n-each", type=int, default=1000)
    p.add_argument("--n", type=int, default=10000, help="points per checkerboard task")
    p.add_argument("--r-grid")
    p.add_argument("--variants", choices=("accuracy", "board", "all"), default="all")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    kernels.set_threads(args.threads)
    try:
        args.func(args, args.subparser)
    except (LigerError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        if isinstance(exc, FileNotFoundError):
            msg = f"{exc.filename}: no such file"
        print(f"liger {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
