"""Mixture-of-autoencoders clustering.

K convolutional autoencoders share one architecture; an auxiliary
assignment network maps their concatenated latent codes to a softmax
confidence vector p over the K clusters.  Everything trains end-to-end
against a weighted sum of three terms:

* reconstruction: confidence-weighted per-autoencoder MSE, so a sample
  pulls hardest on the autoencoder it is assigned to;
* sample entropy: mean per-sample entropy of p, pushing confident
  (near one-hot) assignments;
* batch entropy: negative entropy of the batch-mean confidence vector,
  pushing balanced cluster usage.  Note the degenerate second minimum:
  an all-uniform p gives the same balanced column means as a balanced
  one-hot assignment, which is why training can stall there.

Weights (theta, alpha, gamma) multiply the three terms respectively.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .errors import ContractError
from .neuralcore import (
    AdamConfig,
    AdamState,
    LayerSpec,
    Network,
    adam_update,
    build_network,
    output_shape,
    softmax,
    softmax_vjp,
)
from .seeding import rng_for

ENTROPY_EPS = 1e-12
COLLAPSE_SHARE = 0.99      # one cluster holding more than this ...
COLLAPSE_EPOCHS = 5        # ... for this many consecutive epochs => collapsed

# Paper-reported grid-search optima, kept as ready presets.
SIMULATED_OPTIMUM = (1e-1, 1e-2, 1e5)
FILTERED_OPTIMUM = (1e1, 1e-1, 3.162e3)


@dataclass
class MixaeWeights:
    theta: float     # reconstruction
    alpha: float     # sample entropy
    gamma: float     # batch entropy

    def __post_init__(self):
        if self.theta <= 0 or self.alpha <= 0 or self.gamma <= 0:
            raise ContractError("loss weights must be strictly positive")


@dataclass
class LossBreakdown:
    total: float
    reconstruction: float
    sample_entropy: float
    batch_entropy: float


@dataclass
class MixaeConfig:
    k: int
    resolution: int = 128
    latent_dim: int = 20
    filters: tuple[int, ...] | None = None    # None: ladder ending in 8 channels
    assign_hidden: int | None = None          # None: 4 * k
    lrelu_slope: float = 0.01
    adam: AdamConfig = field(default_factory=AdamConfig)
    clip_norm: float = 5.0
    holdout_fraction: float = 0.25

    def __post_init__(self):
        if self.k < 2:
            raise ContractError("k must be >= 2")
        if self.resolution < 8 or self.resolution & (self.resolution - 1):
            raise ContractError("resolution must be a power of two >= 8")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ContractError("holdout_fraction must be in [0, 1)")

    def filter_ladder(self) -> tuple[int, ...]:
        if self.filters is not None:
            return tuple(self.filters)
        n_down = int(np.log2(self.resolution // 8))
        return tuple(8 * 2**i for i in range(n_down - 1, -1, -1))  # e.g. (64,32,16,8)

    def hidden_width(self) -> int:
        return self.assign_hidden if self.assign_hidden is not None else 4 * self.k


def encoder_specs(config: MixaeConfig) -> list[LayerSpec]:
    specs: list[LayerSpec] = []
    for f in config.filter_ladder():
        specs.append(LayerSpec("conv", kernel=3, stride=2, filters=f))
        specs.append(LayerSpec("lrelu", lrelu_slope=config.lrelu_slope))
    specs.append(LayerSpec("flatten"))
    specs.append(LayerSpec("dense", filters=config.latent_dim))  # linear latent head
    return specs


def decoder_specs(config: MixaeConfig) -> list[LayerSpec]:
    ladder = config.filter_ladder()
    grid = 8
    bottleneck = ladder[-1]
    specs = [
        LayerSpec("dense", filters=grid * grid * bottleneck),
        LayerSpec("lrelu", lrelu_slope=config.lrelu_slope),
        LayerSpec("reshape", shape=(grid, grid, bottleneck)),
    ]
    for f in reversed(ladder[:-1]):
        specs.append(LayerSpec("deconv", kernel=3, stride=2, filters=f))
        specs.append(LayerSpec("lrelu", lrelu_slope=config.lrelu_slope))
    specs.append(LayerSpec("deconv", kernel=3, stride=2, filters=1))
    specs.append(LayerSpec("sigmoid"))
    return specs


def assignment_specs(config: MixaeConfig) -> list[LayerSpec]:
    return [
        LayerSpec("dense", filters=config.hidden_width()),
        LayerSpec("lrelu", lrelu_slope=config.lrelu_slope),
        LayerSpec("dense", filters=config.k),
    ]


@dataclass
class MixaeModel:
    config: MixaeConfig
    encoders: list[Network]
    decoders: list[Network]
    assign_net: Network

    @property
    def k(self) -> int:
        return self.config.k

    def parameters(self) -> list[np.ndarray]:
        """All parameters in declaration order: per AE encoder then decoder, then assigner."""
        params: list[np.ndarray] = []
        for enc, dec in zip(self.encoders, self.decoders):
            params.extend(enc.parameters())
            params.extend(dec.parameters())
        params.extend(self.assign_net.parameters())
        return params

    def set_parameters(self, arrays: list[np.ndarray]) -> None:
        offset = 0
        for enc, dec in zip(self.encoders, self.decoders):
            n = len(enc.parameters())
            enc.set_parameters(arrays[offset : offset + n])
            offset += n
            n = len(dec.parameters())
            dec.set_parameters(arrays[offset : offset + n])
            offset += n
        self.assign_net.set_parameters(arrays[offset:])


def build_mixae(config: MixaeConfig, seed: int) -> MixaeModel:
    """K architecture-sharing (but independently initialized) autoencoders."""
    res = config.resolution
    in_shape = (res, res, 1)
    enc = encoder_specs(config)
    dec = decoder_specs(config)
    if output_shape(dec, (config.latent_dim,)) != in_shape:
        raise ContractError("decoder does not invert the encoder's shape chain")
    encoders, decoders = [], []
    for i in range(config.k):
        encoders.append(build_network(enc, in_shape, rng_for(seed, "mixae.encoder", i)))
        decoders.append(build_network(dec, (config.latent_dim,), rng_for(seed, "mixae.decoder", i)))
    assign = build_network(
        assignment_specs(config), (config.k * config.latent_dim,), rng_for(seed, "mixae.assign")
    )
    return MixaeModel(config, encoders, decoders, assign)


@dataclass
class ForwardState:
    reconstructions: np.ndarray   # (K, B, H, W, 1)
    latents: np.ndarray           # (K, B, latent_dim)
    p: np.ndarray                 # (B, K) softmax confidences
    enc_caches: list
    dec_caches: list
    assign_cache: list


def mixae_forward(model: MixaeModel, batch: np.ndarray) -> ForwardState:
    """Encode/decode the batch with every AE and score cluster confidences."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 3:
        batch = batch[..., None]
    if batch.ndim != 4 or len(batch) == 0:
        raise ContractError(f"batch must be non-empty (B,H,W[,1]), got {batch.shape}")
    k = model.k
    latents, recons, enc_caches, dec_caches = [], [], [], []
    for i in range(k):
        z, ec = model.encoders[i].forward(batch)
        xhat, dc = model.decoders[i].forward(z)
        latents.append(z)
        recons.append(xhat)
        enc_caches.append(ec)
        dec_caches.append(dc)
    concat = np.concatenate(latents, axis=1)
    logits, ac = model.assign_net.forward(concat)
    return ForwardState(
        reconstructions=np.stack(recons),
        latents=np.stack(latents),
        p=softmax(logits, axis=1),
        enc_caches=enc_caches,
        dec_caches=dec_caches,
        assign_cache=ac,
    )


def _check_probabilities(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ContractError(f"confidences must be (B, K), got {p.shape}")
    if np.any(p < 0):
        raise ContractError("confidences must be non-negative")
    return p


def sample_entropy(p: np.ndarray) -> float:
    """Mean per-sample entropy of the confidence rows; 0 for one-hot rows."""
    p = _check_probabilities(p)
    return float(-(p * np.log(p + ENTROPY_EPS)).sum(axis=1).mean())


def batch_entropy(p: np.ndarray) -> float:
    """Negative entropy of the batch-mean confidences; -ln K when balanced.

    Balanced one-hot batches and all-uniform batches produce identical
    column means, hence the documented second minimum.
    """
    p = _check_probabilities(p)
    pbar = p.mean(axis=0)
    return float((pbar * np.log(pbar + ENTROPY_EPS)).sum())


def _per_pair_mse(recons: np.ndarray, batch: np.ndarray) -> np.ndarray:
    """(K, B) mean squared reconstruction error per (autoencoder, sample)."""
    diff = recons - batch[None, ...]
    return (diff * diff).reshape(diff.shape[0], diff.shape[1], -1).mean(axis=2)


def mixae_loss(fwd: ForwardState, batch: np.ndarray, weights: MixaeWeights) -> LossBreakdown:
    """Assemble the three weighted terms from a forward pass."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 3:
        batch = batch[..., None]
    per_pair = _per_pair_mse(fwd.reconstructions, batch)     # (K, B)
    recon = float((fwd.p.T * per_pair).sum(axis=0).mean())
    s_ent = sample_entropy(fwd.p)
    b_ent = batch_entropy(fwd.p)
    total = weights.theta * recon + weights.alpha * s_ent + weights.gamma * b_ent
    return LossBreakdown(total, recon, s_ent, b_ent)


def mixae_backward(
    model: MixaeModel, fwd: ForwardState, batch: np.ndarray, weights: MixaeWeights
) -> list[np.ndarray]:
    """Exact gradients of the total loss for every parameter.

    Confidence gradients flow through the assignment network into the
    encoders; reconstruction gradients flow through the decoders into
    the same encoders.  Returns arrays aligned with model.parameters().
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 3:
        batch = batch[..., None]
    k = model.k
    b = len(batch)
    d = batch[0].size
    p = fwd.p
    per_pair = _per_pair_mse(fwd.reconstructions, batch)      # (K, B)

    # d total / d p: reconstruction + sample entropy + batch entropy paths.
    gp = weights.theta * per_pair.T / b
    gp += -(weights.alpha / b) * (np.log(p + ENTROPY_EPS) + p / (p + ENTROPY_EPS))
    pbar = p.mean(axis=0)
    gp += (weights.gamma / b) * (np.log(pbar + ENTROPY_EPS) + pbar / (pbar + ENTROPY_EPS))[None, :]
    glogits = softmax_vjp(p, gp, axis=1)
    gconcat, assign_grads = model.assign_net.backward(fwd.assign_cache, glogits)

    latent_dim = model.config.latent_dim
    enc_grads_all, dec_grads_all = [], []
    for i in range(k):
        grecon = (weights.theta / (b * d)) * (
            2.0 * (fwd.reconstructions[i] - batch) * p[:, i][:, None, None, None]
        )
        gz_dec, dec_grads = model.decoders[i].backward(fwd.dec_caches[i], grecon)
        gz = gz_dec + gconcat[:, i * latent_dim : (i + 1) * latent_dim]
        _, enc_grads = model.encoders[i].backward(fwd.enc_caches[i], gz)
        enc_grads_all.append(enc_grads)
        dec_grads_all.append(dec_grads)

    arrays: list[np.ndarray] = []
    for i in range(k):
        arrays.extend(model.encoders[i].grad_arrays(enc_grads_all[i]))
        arrays.extend(model.decoders[i].grad_arrays(dec_grads_all[i]))
    arrays.extend(model.assign_net.grad_arrays(assign_grads))
    return arrays


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], bool]:
    """Global-norm clipping; returns (grads, whether clipping fired)."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm <= 0 or total <= max_norm:
        return grads, False
    scale = max_norm / total
    return [g * scale for g in grads], True


def assign_clusters(model: MixaeModel, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Argmax confidence per sample; ties break to the lowest index."""
    images = np.asarray(images, dtype=np.float64)
    out = np.empty(len(images), dtype=np.int64)
    for start in range(0, len(images), chunk):
        fwd = mixae_forward(model, images[start : start + chunk])
        out[start : start + chunk] = fwd.p.argmax(axis=1)
    return out


def confidences(model: MixaeModel, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    parts = []
    for start in range(0, len(images), chunk):
        parts.append(mixae_forward(model, images[start : start + chunk]).p)
    return np.concatenate(parts, axis=0)


@dataclass
class TrainResult:
    model: MixaeModel
    history: list[dict]        # per epoch: epoch, r, s, b, total, ari?, acc?
    status: str                # ok | diverged | collapsed
    weights: MixaeWeights
    seed: int
    clip_events: int
    train_indices: np.ndarray
    holdout_indices: np.ndarray


def _eval_epoch(
    model: MixaeModel,
    images: np.ndarray,
    weights: MixaeWeights,
    labels,
    chunk: int = 256,
) -> tuple[dict, np.ndarray]:
    """Loss components and (optionally) clustering metrics on a fixed set."""
    from . import metrics as metrics_mod

    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    n = len(images)
    per_pair_sum = None
    p_parts = []
    for start in range(0, n, chunk):
        batch = images[start : start + chunk]
        fwd = mixae_forward(model, batch)
        pp = _per_pair_mse(fwd.reconstructions, batch)
        weighted = (fwd.p.T * pp).sum(axis=0).sum()
        per_pair_sum = weighted if per_pair_sum is None else per_pair_sum + weighted
        p_parts.append(fwd.p)
    p = np.concatenate(p_parts, axis=0)
    recon = float(per_pair_sum / n)
    s_ent = sample_entropy(p)
    b_ent = batch_entropy(p)
    row = {
        "r": recon,
        "s": s_ent,
        "b": b_ent,
        "total": weights.theta * recon + weights.alpha * s_ent + weights.gamma * b_ent,
    }
    assignments = p.argmax(axis=1)
    if labels is not None:
        report = metrics_mod.evaluate(list(labels), assignments.tolist())
        row["ari"] = report.ari
        row["acc"] = report.accuracy
    return row, assignments


def train_mixae(
    images: np.ndarray,
    config: MixaeConfig,
    weights: MixaeWeights,
    epochs: int,
    batch_size: int,
    seed: int,
    labels=None,
) -> TrainResult:
    """Mini-batch Adam training of all AEs and the assigner jointly.

    The dataset splits into train/holdout by ``config.holdout_fraction``
    (seeded); per-epoch history rows are evaluated on the holdout part
    (on the train part when the fraction is zero).  Non-finite losses
    abort with status "diverged", restoring the last finite epoch's
    parameters.  A cluster hogging more than 99% of assignments for 5
    consecutive epochs marks the run "collapsed" (sticky).
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    if len(images) < 2:
        raise ContractError("dataset must hold at least 2 images")
    if images.shape[1] != config.resolution or images.shape[2] != config.resolution:
        raise ContractError(
            f"images are {images.shape[1]}x{images.shape[2]}, config expects {config.resolution}"
        )
    if labels is not None and len(labels) != len(images):
        raise ContractError("labels must align with images")

    n = len(images)
    perm = rng_for(seed, "mixae.split").permutation(n)
    n_hold = int(round(config.holdout_fraction * n))
    hold_idx = np.sort(perm[:n_hold])
    train_idx = np.sort(perm[n_hold:])
    eval_idx = hold_idx if n_hold else train_idx
    eval_images = images[eval_idx]
    eval_labels = [labels[i] for i in eval_idx] if labels is not None else None

    model = build_mixae(config, seed)
    params = model.parameters()
    state = AdamState.for_params(params)
    step = 0
    clip_events = 0
    status = "ok"
    collapsed_streak = 0
    collapsed_ever = False
    history: list[dict] = []
    last_good = [p.copy() for p in params]

    for epoch in range(epochs):
        order = rng_for(seed, "mixae.shuffle", epoch).permutation(len(train_idx))
        diverged = False
        for start in range(0, len(order), batch_size):
            batch = images[train_idx[order[start : start + batch_size]]]
            fwd = mixae_forward(model, batch)
            loss = mixae_loss(fwd, batch, weights)
            if not np.isfinite(loss.total):
                diverged = True
                break
            grads = mixae_backward(model, fwd, batch, weights)
            grads, clipped = clip_gradients(grads, config.clip_norm)
            clip_events += int(clipped)
            step += 1
            new_params, state = adam_update(model.parameters(), grads, state, step, config.adam)
            model.set_parameters(new_params)
        if diverged or not all(np.all(np.isfinite(p)) for p in model.parameters()):
            status = "diverged"
            model.set_parameters(last_good)
            break
        row, assignments = _eval_epoch(model, eval_images, weights, eval_labels)
        row["epoch"] = epoch
        if not np.isfinite(row["total"]):
            status = "diverged"
            model.set_parameters(last_good)
            break
        history.append(row)
        last_good = [p.copy() for p in model.parameters()]
        share = np.bincount(assignments, minlength=config.k).max() / len(assignments)
        collapsed_streak = collapsed_streak + 1 if share > COLLAPSE_SHARE else 0
        if collapsed_streak >= COLLAPSE_EPOCHS:
            collapsed_ever = True

    if status == "ok" and collapsed_ever:
        status = "collapsed"
    return TrainResult(
        model=model,
        history=history,
        status=status,
        weights=weights,
        seed=seed,
        clip_events=clip_events,
        train_indices=train_idx,
        holdout_indices=hold_idx,
    )


@dataclass
class GridSearchSpec:
    """Log-10 exponent ranges (lo, hi, steps) per loss weight."""

    theta_exponents: tuple[float, float, int] = (-1.0, 5.0, 7)
    alpha_exponents: tuple[float, float, int] = (-5.0, -1.0, 5)
    gamma_exponents: tuple[float, float, int] = (3.0, 5.0, 3)

    def __post_init__(self):
        for lo, hi, steps in (self.theta_exponents, self.alpha_exponents, self.gamma_exponents):
            if lo > hi:
                raise ContractError("exponent range must have lo <= hi")
            if steps < 1:
                raise ContractError("each grid axis needs >= 1 step")

    def axis(self, which: str) -> np.ndarray:
        lo, hi, steps = getattr(self, f"{which}_exponents")
        return np.power(10.0, np.linspace(lo, hi, steps)) if steps > 1 else np.array([10.0**lo])

    def cells(self) -> list[MixaeWeights]:
        return [
            MixaeWeights(t, a, g)
            for t in self.axis("theta")
            for a in self.axis("alpha")
            for g in self.axis("gamma")
        ]


def grid_search(
    spec: GridSearchSpec,
    images: np.ndarray,
    config: MixaeConfig,
    epochs: int,
    batch_size: int,
    seed: int,
    runs_per_cell: int = 1,
    labels=None,
) -> dict:
    """Train per grid cell with fixed sub-seeds and tabulate outcomes.

    The best cell is flagged by top-1 ARI when labels exist, otherwise
    by the lowest mean final total loss among non-diverged runs.
    """
    table = []
    for cell_idx, weights in enumerate(spec.cells()):
        runs = []
        for run_idx in range(runs_per_cell):
            sub_seed = rng_for(seed, "mixae.grid", cell_idx, run_idx).integers(2**63)
            result = train_mixae(
                images, config, weights, epochs, batch_size, int(sub_seed), labels=labels
            )
            final = result.history[-1] if result.history else {}
            runs.append(
                {
                    "seed": int(sub_seed),
                    "status": result.status,
                    "final_total": final.get("total"),
                    "ari": final.get("ari"),
                    "acc": final.get("acc"),
                }
            )
        table.append(
            {
                "theta": weights.theta,
                "alpha": weights.alpha,
                "gamma": weights.gamma,
                "runs": runs,
            }
        )

    best_index = None
    best_key = None
    for i, cell in enumerate(table):
        finished = [r for r in cell["runs"] if r["status"] != "diverged" and r["final_total"] is not None]
        if not finished:
            continue
        if labels is not None:
            key = -max(r["ari"] for r in finished)
        else:
            key = float(np.mean([r["final_total"] for r in finished]))
        if best_key is None or key < best_key:
            best_key = key
            best_index = i
    return {"cells": table, "best_index": best_index}


def save_mixae(path, model: MixaeModel, header_extra: dict | None = None) -> None:
    """Whole-model ATM1 checkpoint (all AEs plus the assignment network)."""
    params = model.parameters()
    cfg = model.config
    header = {
        "k": cfg.k,
        "resolution": cfg.resolution,
        "latent_dim": cfg.latent_dim,
        "filters": list(cfg.filter_ladder()),
        "assign_hidden": cfg.hidden_width(),
        "lrelu_slope": cfg.lrelu_slope,
        "param_shapes": [list(p.shape) for p in params],
    }
    header.update(header_extra or {})
    fileio.write_model_blob(path, header, params)


def load_mixae(path) -> tuple[MixaeModel, dict]:
    header, flat = fileio.read_model_blob(path)
    config = MixaeConfig(
        k=int(header["k"]),
        resolution=int(header["resolution"]),
        latent_dim=int(header["latent_dim"]),
        filters=tuple(header["filters"]),
        assign_hidden=int(header["assign_hidden"]),
        lrelu_slope=float(header["lrelu_slope"]),
    )
    model = build_mixae(config, seed=0)
    arrays = []
    offset = 0
    for shape in header["param_shapes"]:
        size = int(np.prod(shape)) if shape else 1
        arrays.append(flat[offset : offset + size].reshape(shape))
        offset += size
    if offset != flat.size:
        raise ContractError(f"checkpoint payload has {flat.size} values, expected {offset}")
    model.set_parameters(arrays)
    return model, header


def save_run_artifacts(out_dir, result: TrainResult, config: MixaeConfig) -> None:
    """Run directory: checkpoint + history.csv + run.json."""
    import json
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_mixae(out / "model.atm1", result.model, {"seed": result.seed, "status": result.status})

    cols = ["epoch", "r", "s", "b", "total"]
    has_metrics = any("ari" in row for row in result.history)
    if has_metrics:
        cols += ["ari", "acc"]
    lines = [",".join(cols)]
    for row in result.history:
        lines.append(",".join(repr(row[c]) if c in row else "" for c in cols))
    fileio.atomic_write_text(out / "history.csv", "\n".join(lines) + "\n")

    run_doc = {
        "config": {
            "k": config.k,
            "resolution": config.resolution,
            "latent_dim": config.latent_dim,
            "filters": list(config.filter_ladder()),
            "assign_hidden": config.hidden_width(),
            "clip_norm": config.clip_norm,
            "holdout_fraction": config.holdout_fraction,
            "adam": {
                "eta": config.adam.eta,
                "beta1": config.adam.beta1,
                "beta2": config.adam.beta2,
                "epsilon": config.adam.epsilon,
            },
        },
        "weights": {
            "theta": result.weights.theta,
            "alpha": result.weights.alpha,
            "gamma": result.weights.gamma,
        },
        "seed": result.seed,
        "status": result.status,
        "clip_events": result.clip_events,
        "epochs_recorded": len(result.history),
    }
    fileio.atomic_write_text(out / "run.json", json.dumps(run_doc, sort_keys=True, indent=2) + "\n")
