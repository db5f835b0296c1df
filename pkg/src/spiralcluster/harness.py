"""Experiment orchestration: partitions, pipelines, stability studies.

A manifest (one JSON document) names every stage of an end-to-end run:
simulate -> preprocess -> features (or ingested latents) -> cluster ->
evaluate.  The harness executes the stages in order, persists every
intermediate artifact into the output directory, and emits a summary
embedding the manifest hash and all sub-seeds, so a rerun of the same
manifest reproduces every report byte for byte.

Labels never reach a clustering stage; they are only read back in the
evaluation step.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio, latent, metrics, mixae, pipeline, simkit
from .errors import ContractError, StageError
from .seeding import derive_seed

SCHEMA = "spiralcluster-manifest-v1"


@dataclass
class Partition:
    labelled: list[str]
    unlabelled: list[str]
    fraction: float
    seed: int


def partition_dataset(events: list[simkit.EventCloud], fraction: float, seed: int) -> Partition:
    """Seeded stratified labelled/unlabelled split.

    Exactly round(fraction * n) ids become labelled, apportioned across
    classes by largest remainder so per-class shares track the global
    fraction within one sample.  Only events that carry labels are
    eligible for the labelled side.
    """
    if not 0.0 < fraction <= 1.0:
        raise ContractError(f"fraction must be in (0, 1], got {fraction}")
    n = len(events)
    target = int(round(fraction * n))
    if target < 1:
        raise ContractError(f"fraction {fraction} yields zero labelled samples out of {n}")

    by_class: dict[str, list[str]] = {}
    for ev in events:
        if ev.label is not None:
            by_class.setdefault(ev.label, []).append(ev.id)
    eligible = sum(len(v) for v in by_class.values())
    if target > eligible:
        raise ContractError(
            f"need {target} labelled samples but only {eligible} events carry labels"
        )

    # Largest-remainder apportionment of the target across classes.
    quotas = {}
    remainders = []
    assigned = 0
    for name, ids in sorted(by_class.items()):
        exact = target * len(ids) / eligible
        quotas[name] = min(int(exact), len(ids))
        assigned += quotas[name]
        remainders.append((exact - int(exact), name))
    for _, name in sorted(remainders, reverse=True):
        if assigned >= target:
            break
        if quotas[name] < len(by_class[name]):
            quotas[name] += 1
            assigned += 1

    labelled: list[str] = []
    for i, (name, ids) in enumerate(sorted(by_class.items())):
        rng = np.random.default_rng(derive_seed(seed, "harness.partition", i))
        picks = rng.choice(len(ids), size=quotas[name], replace=False)
        labelled.extend(ids[j] for j in sorted(picks))
    labelled_set = set(labelled)
    unlabelled = [ev.id for ev in events if ev.id not in labelled_set]
    return Partition(labelled=labelled, unlabelled=unlabelled, fraction=fraction, seed=seed)


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(
        json.dumps(manifest, sort_keys=True).encode("utf-8")
    ).hexdigest()


def _preflight(manifest: dict) -> None:
    """Fail before any compute if a referenced input file is missing."""
    for key in ("events", "images", "latents"):
        path = manifest.get(key)
        if path is not None and not Path(path).exists():
            raise StageError("preflight", f"manifest references missing file: {path}")
    if "simulate" not in manifest and "events" not in manifest and "images" not in manifest \
            and "latents" not in manifest:
        raise StageError("preflight", "manifest needs one of: simulate, events, images, latents")


def _preprocess_config(doc: dict) -> pipeline.PreprocessConfig:
    hough_doc = doc.get("hough_params", {})
    return pipeline.PreprocessConfig(
        resolution=int(doc.get("resolution", 128)),
        bounds=float(doc.get("bounds", 275.0)),
        apply_nn_filter=bool(doc.get("apply_nn_filter", False)),
        nn_radius=float(doc.get("nn_radius", 10.0)),
        nn_min_neighbors=int(doc.get("nn_min_neighbors", 2)),
        apply_hough=bool(doc.get("apply_hough", False)),
        hough=pipeline.HoughParams(
            r_min=float(hough_doc.get("r_min", 20.0)),
            r_max=float(hough_doc.get("r_max", 200.0)),
            n_radii=int(hough_doc.get("n_radii", 60)),
            center_resolution=float(hough_doc.get("center_resolution", 4.0)),
            keep_distance=float(hough_doc.get("keep_distance", 5.0)),
        ),
    )


def run_pipeline(manifest: dict, out_dir) -> dict:
    """Execute the manifest's stages; returns the summary document.

    Artifacts land in ``out_dir`` (written to ``<out_dir>.partial`` and
    atomically renamed on success; on failure the partial directory is
    retained for inspection).
    """
    _preflight(manifest)
    out_final = Path(out_dir)
    out = out_final.with_name(out_final.name + ".partial")
    out.mkdir(parents=True, exist_ok=True)
    base_seed = int(manifest.get("seed", 0))
    summary: dict = {
        "schema": SCHEMA,
        "manifest_hash": manifest_hash(manifest),
        "seed": base_seed,
        "stages": [],
        "sub_seeds": {},
    }

    events = None
    labels = None
    ids = None
    stage = "simulate"
    try:
        if "simulate" in manifest:
            sim_cfg, field_cfg, noise_cfg = simkit.events_config_from_dict(manifest["simulate"])
            sim_seed = derive_seed(base_seed, "pipeline.simulate")
            summary["sub_seeds"]["simulate"] = sim_seed
            events = simkit.generate_dataset(sim_cfg, field_cfg, noise_cfg, seed=sim_seed)
            simkit.write_events(out / "events.jsonl", events)
            summary["stages"].append({"stage": "simulate", "events": len(events)})
        elif "events" in manifest:
            events = simkit.read_events(manifest["events"])
            summary["stages"].append({"stage": "load_events", "events": len(events)})

        images = None
        stage = "preprocess"
        if "preprocess" in manifest and events is not None:
            cfg = _preprocess_config(manifest["preprocess"])
            images, ids, labels = pipeline.preprocess_dataset(events, cfg)
            fileio.write_images(out / "images.atc1", images)
            fileio.write_labels_csv(out / "images.labels.csv", ids, labels)
            # Stored images are float32; reload so downstream stages see
            # exactly what a consumer of the artifact would.
            images = fileio.read_images(out / "images.atc1")
            summary["stages"].append(
                {"stage": "preprocess", "images": len(images), "resolution": cfg.resolution}
            )
        elif "images" in manifest:
            images = fileio.read_images(manifest["images"])
            labels_path = manifest.get("labels")
            if labels_path:
                ids, labels = fileio.read_labels_csv(labels_path)
            summary["stages"].append({"stage": "load_images", "images": len(images)})

        stage = "features"
        latents = None
        if "latents" in manifest:
            latents = latent.load_latents(manifest["latents"])
            summary["stages"].append(
                {"stage": "load_latents", "rows": latents.rows, "dim": latents.dim,
                 "zero_fraction": latents.zero_fraction}
            )
        elif "features" in manifest:
            if images is None:
                raise ContractError("features stage needs images")
            fdoc = manifest["features"]
            feat_seed = derive_seed(base_seed, "pipeline.features")
            summary["sub_seeds"]["features"] = feat_seed
            latents = latent.standin_features(images, int(fdoc.get("out_dim", 256)), feat_seed)
            latent.save_latents(out / "latents.atl1", latents)
            summary["stages"].append(
                {"stage": "features", "rows": latents.rows, "dim": latents.dim,
                 "zero_fraction": latents.zero_fraction}
            )

        stage = "pca"
        if "pca" in manifest and latents is not None:
            n_comp = int(manifest["pca"].get("n_components", 100))
            latents = latent.pca(latents, n_comp)
            summary["stages"].append({"stage": "pca", "dim": latents.dim})

        stage = "partition"
        partition = None
        if "partition" in manifest and events is not None:
            frac = float(manifest["partition"].get("fraction", 0.15))
            part_seed = derive_seed(base_seed, "pipeline.partition")
            summary["sub_seeds"]["partition"] = part_seed
            partition = partition_dataset(events, frac, part_seed)
            fileio.atomic_write_text(
                out / "partition.json",
                json.dumps(
                    {"labelled": partition.labelled, "fraction": frac, "seed": part_seed},
                    sort_keys=True, indent=2,
                ) + "\n",
            )
            summary["stages"].append(
                {"stage": "partition", "labelled": len(partition.labelled),
                 "unlabelled": len(partition.unlabelled)}
            )

        stage = "kmeans"
        report = None
        if "kmeans" in manifest:
            if latents is None:
                raise ContractError("kmeans stage needs latents")
            kdoc = manifest["kmeans"]
            km_seed = derive_seed(base_seed, "pipeline.kmeans")
            summary["sub_seeds"]["kmeans"] = km_seed
            config = latent.KMeansConfig(
                k=int(kdoc["k"]),
                m_inits=int(kdoc.get("m_inits", 10)),
                n_runs=int(kdoc.get("n_runs", 10)),
                max_iter=int(kdoc.get("max_iter", 300)),
                tol=float(kdoc.get("tol", 1e-6)),
                rng_seed=km_seed,
            )
            eval_idx = _evaluation_indices(labels, ids, partition)
            stats = latent.kmeans_experiment(latents.values, labels, config, eval_indices=eval_idx)
            fileio.atomic_write_text(
                out / "kmeans_stats.json",
                json.dumps(stats.to_dict(), sort_keys=True, indent=2) + "\n",
            )
            report = stats.top1
            summary["stages"].append(
                {"stage": "kmeans", "ari_mean": stats.ari_mean, "ari_std": stats.ari_std,
                 "top1_ari": stats.top1.ari}
            )

        stage = "mixae"
        if "mixae" in manifest:
            if images is None:
                raise ContractError("mixae stage needs images")
            mdoc = manifest["mixae"]
            mx_seed = derive_seed(base_seed, "pipeline.mixae")
            summary["sub_seeds"]["mixae"] = mx_seed
            config = mixae.MixaeConfig(
                k=int(mdoc.get("k", 2)),
                resolution=images.shape[1],
                holdout_fraction=float(mdoc.get("holdout_fraction", 0.25)),
            )
            weights = mixae.MixaeWeights(
                theta=float(mdoc.get("theta", 0.1)),
                alpha=float(mdoc.get("alpha", 0.01)),
                gamma=float(mdoc.get("gamma", 1e5)),
            )
            # History-time labels only when every event is labelled; the
            # final report always restricts to the labelled evaluation rows.
            history_labels = labels if labels is not None and all(
                lab is not None for lab in labels
            ) else None
            result = mixae.train_mixae(
                images, config, weights,
                epochs=int(mdoc.get("epochs", 20)),
                batch_size=int(mdoc.get("batch", 100)),
                seed=mx_seed,
                labels=history_labels,
            )
            mixae.save_run_artifacts(out / "mixae_run", result, config)
            final = result.history[-1] if result.history else {}
            summary["stages"].append(
                {"stage": "mixae", "status": result.status,
                 "final_ari": final.get("ari"), "final_total": final.get("total")}
            )
            if labels is not None:
                eval_idx = _evaluation_indices(labels, ids, partition)
                assignments = mixae.assign_clusters(result.model, images)
                report = metrics.evaluate(
                    [labels[i] for i in eval_idx],
                    [int(assignments[i]) for i in eval_idx],
                )

        stage = "evaluate"
        if report is not None:
            fileio.atomic_write_text(out / "report.json", report.to_json() + "\n")
            summary["stages"].append(
                {"stage": "evaluate", "accuracy": report.accuracy, "ari": report.ari}
            )
    except StageError:
        raise
    except Exception as err:
        raise StageError(stage, str(err)) from err

    fileio.atomic_write_text(
        out / "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n"
    )
    if out_final.exists():
        import shutil

        shutil.rmtree(out_final)
    out.rename(out_final)
    return summary


def _evaluation_indices(labels, ids, partition: Partition | None) -> list[int]:
    """Rows to score: labelled events, intersected with the partition."""
    if labels is None:
        raise ContractError("evaluation needs labels (preprocess sidecar or --labels)")
    rows = [i for i, lab in enumerate(labels) if lab is not None]
    if partition is not None:
        if ids is None:
            raise ContractError("partition-restricted evaluation needs event ids")
        labelled = set(partition.labelled)
        rows = [i for i in rows if ids[i] in labelled]
    if not rows:
        raise ContractError("no labelled rows available for evaluation")
    return rows


@dataclass
class StabilityReport:
    rows: list[dict]            # per run: run, seed, metrics or error
    mean: dict[str, float]
    std: dict[str, float]
    top1_index: int | None
    failures: int

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "mean": self.mean,
            "std": self.std,
            "top1_index": self.top1_index,
            "failures": self.failures,
        }


def stability_study(run_fn, n_runs: int, base_seed: int, purpose: str = "stability") -> StabilityReport:
    """N sub-seeded repetitions of a training op; top-1 plus mean/std.

    ``run_fn(run_index, seed)`` returns a metric dict (must include
    "ari" when available).  Failed runs are recorded and excluded from
    the mean/std with a failure count note.
    """
    if n_runs < 2:
        raise ContractError("stability study needs n_runs >= 2")
    rows: list[dict] = []
    for i in range(n_runs):
        seed = derive_seed(base_seed, purpose, i)
        try:
            outcome = dict(run_fn(i, seed))
            outcome.update({"run": i, "seed": seed})
            rows.append(outcome)
        except Exception as err:  # individual failures recorded, not fatal
            rows.append({"run": i, "seed": seed, "error": str(err)})
    good = [r for r in rows if "error" not in r]
    metric_keys = sorted({k for r in good for k in r if k not in ("run", "seed", "status")}
                         & {"ari", "acc", "accuracy", "total"})
    mean = {k: float(np.mean([r[k] for r in good if k in r])) for k in metric_keys}
    std = {k: float(np.std([r[k] for r in good if k in r])) for k in metric_keys}
    top1 = None
    with_ari = [(r["ari"], r["run"]) for r in good if "ari" in r and r["ari"] is not None]
    if with_ari:
        top1 = max(with_ari)[1]
    return StabilityReport(rows=rows, mean=mean, std=std, top1_index=top1,
                           failures=len(rows) - len(good))
