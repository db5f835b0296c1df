"""The ``spiralcluster`` command line.

Subcommands: simulate, preprocess, features, kmeans, mixae
(train/grid/stability), evaluate, pipeline, stability.  Exit codes:
0 ok, 2 contract violation, 3 diverged/collapsed run, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio, harness, latent, metrics, mixae, pipeline, simkit
from .errors import (
    EXIT_CONTRACT,
    EXIT_DIVERGED,
    EXIT_IO,
    EXIT_OK,
    ContractError,
    FileFormatError,
    StageError,
)
from .seeding import derive_seed


def _cmd_simulate(args) -> int:
    doc = json.loads(Path(args.config).read_text())
    sim_cfg, field_cfg, noise_cfg = simkit.events_config_from_dict(doc)
    seed = args.seed if args.seed is not None else sim_cfg.rng_seed
    events = simkit.generate_dataset(sim_cfg, field_cfg, noise_cfg, seed=seed)
    simkit.write_events(args.out, events)
    print(f"wrote {len(events)} events to {args.out}")
    return EXIT_OK


def _cmd_preprocess(args) -> int:
    events = simkit.read_events(args.events)
    config = pipeline.PreprocessConfig(
        resolution=args.resolution,
        bounds=args.bounds,
        apply_nn_filter=args.nn_filter,
        nn_radius=args.nn_radius,
        nn_min_neighbors=args.nn_min_neighbors,
        apply_hough=args.hough,
        hough=pipeline.HoughParams(
            r_min=args.hough_rmin,
            r_max=args.hough_rmax,
            n_radii=args.hough_n_radii,
            center_resolution=args.hough_grid,
            keep_distance=args.hough_keep,
        ),
    )
    images, ids, labels = pipeline.preprocess_dataset(events, config)
    fileio.write_images(args.out, images)
    labels_path = Path(args.out).with_suffix(".labels.csv")
    fileio.write_labels_csv(labels_path, ids, labels)
    print(f"wrote {len(images)} images ({config.resolution}x{config.resolution}) "
          f"to {args.out}; labels sidecar {labels_path}")
    return EXIT_OK


def _cmd_features(args) -> int:
    images = fileio.read_images(args.images)
    feats = latent.standin_features(images, args.dim, args.seed)
    latent.save_latents(args.out, feats)
    print(f"wrote {feats.rows}x{feats.dim} latents to {args.out} "
          f"(zero fraction {feats.zero_fraction:.3f})")
    return EXIT_OK


def _read_label_column(path) -> list[str]:
    _, labels = fileio.read_labels_csv(path)
    return labels


def _cmd_kmeans(args) -> int:
    latents = latent.load_latents(args.latents)
    print(f"loaded {latents.rows}x{latents.dim} latents "
          f"(zero fraction {latents.zero_fraction:.3f})")
    if args.pca:
        latents = latent.pca(latents, args.pca)
    labels = _read_label_column(args.labels)
    if len(labels) != latents.rows:
        raise ContractError(
            f"{len(labels)} labels for {latents.rows} latent rows"
        )
    config = latent.KMeansConfig(
        k=args.k, m_inits=args.m_inits, n_runs=args.n_runs,
        max_iter=args.max_iter, tol=args.tol, rng_seed=args.seed,
    )
    eval_idx = [i for i, lab in enumerate(labels) if lab is not None]
    stats = latent.kmeans_experiment(latents, labels, config, eval_indices=eval_idx)
    fileio.atomic_write_text(
        args.out, json.dumps(stats.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    if args.pred_out:
        best_cfg = latent.KMeansConfig(
            k=args.k, m_inits=args.m_inits, n_runs=1, max_iter=args.max_iter,
            tol=args.tol,
            rng_seed=derive_seed(args.seed, "kmeans.run", stats.top1_index),
        )
        best = latent.kmeans_best_of(latents, best_cfg)
        ids = [str(i) for i in range(latents.rows)]
        fileio.write_labels_csv(args.pred_out, ids, best.assignments.tolist())
    print(f"top-1 ARI {stats.top1.ari:.4f}, mean {stats.ari_mean:.4f} "
          f"+/- {stats.ari_std:.4f} over {config.n_runs} runs -> {args.out}")
    return EXIT_OK


def _load_images_and_labels(args) -> tuple[np.ndarray, list | None]:
    images = fileio.read_images(args.images)
    labels = None
    if args.labels:
        labels = _read_label_column(args.labels)
        if len(labels) != len(images):
            raise ContractError(f"{len(labels)} labels for {len(images)} images")
        if any(lab is None for lab in labels):
            labels = None
    return images, labels


def _mixae_config(args, images) -> mixae.MixaeConfig:
    return mixae.MixaeConfig(
        k=args.k,
        resolution=images.shape[1],
        holdout_fraction=args.holdout,
    )


def _cmd_mixae_train(args) -> int:
    images, labels = _load_images_and_labels(args)
    config = _mixae_config(args, images)
    weights = mixae.MixaeWeights(args.theta, args.alpha, args.gamma)
    result = mixae.train_mixae(
        images, config, weights, args.epochs, args.batch, args.seed, labels=labels
    )
    mixae.save_run_artifacts(args.out, result, config)
    final = result.history[-1] if result.history else {}
    print(f"status {result.status}; epochs {len(result.history)}; "
          f"final total {final.get('total')}; ari {final.get('ari')} -> {args.out}")
    return EXIT_OK if result.status == "ok" else EXIT_DIVERGED


def _cmd_mixae_grid(args) -> int:
    images, labels = _load_images_and_labels(args)
    spec_doc = json.loads(Path(args.spec).read_text())

    def axis(name, default):
        lo, hi, steps = spec_doc.get(name, default)
        return (float(lo), float(hi), int(steps))

    spec = mixae.GridSearchSpec(
        theta_exponents=axis("theta", (-1.0, 5.0, 7)),
        alpha_exponents=axis("alpha", (-5.0, -1.0, 5)),
        gamma_exponents=axis("gamma", (3.0, 5.0, 3)),
    )
    config = _mixae_config(args, images)
    out = mixae.grid_search(
        spec, images, config, args.epochs, args.batch, args.seed,
        runs_per_cell=args.runs_per_cell, labels=labels,
    )
    fileio.atomic_write_text(args.out, json.dumps(out, sort_keys=True, indent=2) + "\n")
    print(f"{len(out['cells'])} cells -> {args.out}; best cell index {out['best_index']}")
    return EXIT_OK


def _cmd_mixae_stability(args) -> int:
    images, labels = _load_images_and_labels(args)
    config = _mixae_config(args, images)
    weights = mixae.MixaeWeights(args.theta, args.alpha, args.gamma)

    def run_fn(run_index: int, seed: int) -> dict:
        result = mixae.train_mixae(
            images, config, weights, args.epochs, args.batch, seed, labels=labels
        )
        final = result.history[-1] if result.history else {}
        out = {"status": result.status, "total": final.get("total")}
        if "ari" in final:
            out["ari"] = final["ari"]
            out["acc"] = final["acc"]
        return out

    report = harness.stability_study(run_fn, args.runs, args.seed, purpose="mixae.stability")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fileio.atomic_write_text(
        out_dir / "stability.json", json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    ari = report.mean.get("ari")
    print(f"{args.runs} runs; mean ARI {ari}; std {report.std.get('ari')}; "
          f"top-1 run {report.top1_index}; failures {report.failures}")
    statuses = {r.get("status") for r in report.rows if "status" in r}
    if statuses and statuses <= {"diverged", "collapsed"}:
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    truth_ids, truth = fileio.read_labels_csv(args.truth)
    pred_ids, pred = fileio.read_labels_csv(args.pred)
    if len(truth) != len(pred):
        raise ContractError(f"{len(truth)} truth rows vs {len(pred)} prediction rows")
    if truth_ids and pred_ids and truth_ids != pred_ids:
        raise ContractError("truth and prediction files disagree on event ids")
    keep = [i for i, lab in enumerate(truth) if lab is not None]
    report = metrics.evaluate([truth[i] for i in keep], [pred[i] for i in keep])
    fileio.atomic_write_text(args.out, report.to_json() + "\n")
    print(f"n {report.table.n}; accuracy {report.accuracy:.4f}; ari {report.ari:.4f} -> {args.out}")
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    if args.seed is not None:
        manifest["seed"] = args.seed
    summary = harness.run_pipeline(manifest, args.out)
    print(json.dumps(summary, sort_keys=True, indent=2))
    for stage in summary["stages"]:
        if stage.get("status") in ("diverged", "collapsed"):
            return EXIT_DIVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spiralcluster",
        description="Simulate, preprocess, cluster, and evaluate spiral-track events.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate labeled synthetic events")
    p.add_argument("--config", required=True, help="JSON simulation config")
    p.add_argument("--out", required=True, help="output events JSONL")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("preprocess", help="events JSONL -> ATC1 image stack")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--bounds", type=float, default=275.0)
    p.add_argument("--nn-filter", action="store_true")
    p.add_argument("--nn-radius", type=float, default=10.0)
    p.add_argument("--nn-min-neighbors", type=int, default=2)
    p.add_argument("--hough", action="store_true")
    p.add_argument("--hough-rmin", type=float, default=20.0)
    p.add_argument("--hough-rmax", type=float, default=200.0)
    p.add_argument("--hough-n-radii", type=int, default=60)
    p.add_argument("--hough-grid", type=float, default=4.0)
    p.add_argument("--hough-keep", type=float, default=5.0)
    p.set_defaults(fn=_cmd_preprocess)

    p = sub.add_parser("features", help="ATC1 images -> stand-in ATL1 latents")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_features)

    p = sub.add_parser("kmeans", help="multi-restart k-means on latents")
    p.add_argument("--latents", required=True)
    p.add_argument("--pca", type=int, default=0, help="project to this many components first")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m-inits", type=int, default=10)
    p.add_argument("--n-runs", type=int, default=100)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pred-out", default=None, help="write top-1 assignments CSV")
    p.set_defaults(fn=_cmd_kmeans)

    pm = sub.add_parser("mixae", help="mixture-of-autoencoders clustering")
    msub = pm.add_subparsers(dest="mixae_command", required=True)

    def add_mixae_common(q):
        q.add_argument("--images", required=True)
        q.add_argument("--labels", default=None)
        q.add_argument("--k", type=int, default=2)
        q.add_argument("--epochs", type=int, default=20)
        q.add_argument("--batch", type=int, default=100)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--holdout", type=float, default=0.25)
        q.add_argument("--out", required=True)

    q = msub.add_parser("train", help="one training run")
    add_mixae_common(q)
    q.add_argument("--theta", type=float, default=0.1)
    q.add_argument("--alpha", type=float, default=0.01)
    q.add_argument("--gamma", type=float, default=1e5)
    q.set_defaults(fn=_cmd_mixae_train)

    q = msub.add_parser("grid", help="loss-weight grid search")
    add_mixae_common(q)
    q.add_argument("--spec", required=True, help="JSON exponent ranges per weight")
    q.add_argument("--runs-per-cell", type=int, default=1)
    q.set_defaults(fn=_cmd_mixae_grid)

    q = msub.add_parser("stability", help="N repeated sub-seeded runs")
    add_mixae_common(q)
    q.add_argument("--theta", type=float, default=0.1)
    q.add_argument("--alpha", type=float, default=0.01)
    q.add_argument("--gamma", type=float, default=1e5)
    q.add_argument("--runs", type=int, default=10)
    q.set_defaults(fn=_cmd_mixae_stability)

    p = sub.add_parser("evaluate", help="score predictions against truth labels")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("pipeline", help="run a manifest end to end")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_pipeline)

    p = sub.add_parser("stability", help="MIXAE stability study (alias of `mixae stability`)")
    add_mixae_common(p)
    p.add_argument("--theta", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=1e5)
    p.add_argument("--runs", type=int, default=10)
    p.set_defaults(fn=_cmd_mixae_stability)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ContractError as err:
        print(f"contract violation: {err}", file=sys.stderr)
        return EXIT_CONTRACT
    except StageError as err:
        if isinstance(err.__cause__, ContractError):
            print(f"contract violation: {err}", file=sys.stderr)
            return EXIT_CONTRACT
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    except (FileFormatError, OSError, json.JSONDecodeError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
