"""Two-phase training, evaluation and ablations over a working directory.

Stage order is enforced: the autoencoder trains first, is frozen, and
only then may the diffusion stage run; the freeze is verified by
checksumming the autoencoder's parameters before and after.  Everything
is seeded through ``stage_seed`` so a full gen-data / train / eval run is
reproducible end to end, and all artifacts (manifests, checkpoints, loss
curves, reports) live under one working directory.
"""

from __future__ import annotations

import dataclasses
import json
import os
import statistics
import zlib

import numpy as np

from . import checkpoint as ckpt
from .classifier import TaskClassifier
from .config import RunConfig, StageParams, apply_overrides
from .corpus import CorpusConfig, Sample, generate_corpus
from .curation import curate_corpus, normalize_splits, split
from .denoiser import ConditionedUNet
from .diffusion import BlockLayout, diffusion_loss, decode_plan, generate_plans, make_schedule
from .manifest import read_manifest, write_manifest
from .metrics import PlanPair, PlanReport, apply_gt_boundary, score_pairs, write_report
from .optim import adamw_step
from .vae import StateAutoencoder, state_vectors


class PrerequisiteError(Exception):
    """A stage was started before the stages it depends on."""


class PipelineError(Exception):
    """Pipeline-level invariant violation (freeze, shape mismatch, ...)."""


STAGES = ("vae", "classifier", "diffusion")


def stage_seed(seed: int, tag: str, index: int = 0) -> int:
    """Stable derived seed for one component of a run."""
    return (seed * 1_000_003 + zlib.crc32(tag.encode("ascii")) + index) % (2**63)


@dataclasses.dataclass(frozen=True)
class LRSchedule:
    """Linear warmup, hold, then stepwise decay inside a final window."""

    peak_lr: float
    steps_per_epoch: int
    total_epochs: int
    warmup_epochs: int
    decay_window_epochs: int
    decay_every: int
    decay_factor: float

    @classmethod
    def from_stage(cls, stage: StageParams) -> "LRSchedule":
        return cls(
            peak_lr=stage.peak_lr,
            steps_per_epoch=stage.steps_per_epoch,
            total_epochs=stage.epochs,
            warmup_epochs=stage.warmup_epochs,
            decay_window_epochs=stage.decay_window_epochs,
            decay_every=stage.decay_every,
            decay_factor=stage.decay_factor,
        )

    def lr_at(self, step: int) -> float:
        if step < 0:
            raise ValueError(f"lr_at: step must be >= 0, got {step}")
        warmup_steps = self.warmup_epochs * self.steps_per_epoch
        if warmup_steps > 0 and step < warmup_steps:
            return self.peak_lr * step / warmup_steps
        epoch = step // self.steps_per_epoch
        decay_start = self.total_epochs - self.decay_window_epochs
        if self.decay_window_epochs > 0 and epoch >= decay_start:
            k = (epoch - decay_start) // self.decay_every + 1
            return self.peak_lr * self.decay_factor**k
        return self.peak_lr


def _layout(config: RunConfig) -> BlockLayout:
    return BlockLayout(
        num_tasks=config.data.num_tasks,
        num_actions=config.data.num_actions,
        obs_dim=config.data.obs_dim,
    )


def _corpus_config(config: RunConfig) -> CorpusConfig:
    return CorpusConfig(
        num_tasks=config.data.num_tasks,
        num_actions=config.data.num_actions,
        obs_dim=config.data.obs_dim,
        text_dim=config.data.text_dim,
        videos_per_task=config.data.videos_per_task,
        noise_sd=config.data.noise_sd,
        branch_prob=config.data.branch_prob,
        seed=stage_seed(config.seed, "corpus"),
    )


def generate_dataset(config: RunConfig, workdir: str) -> dict:
    """Corpus, curation, split and normalization, persisted as manifests."""
    config.validate()
    corpus = generate_corpus(_corpus_config(config))
    samples = curate_corpus(corpus, config.horizon, config.curation)
    train, test = split(samples, config.data.split_ratio, seed=stage_seed(config.seed, "split"))
    train, test, _ = normalize_splits(train, test)
    meta_args = dict(
        obs_dim=config.data.obs_dim,
        text_dim=config.data.text_dim,
        num_tasks=config.data.num_tasks,
        num_actions=config.data.num_actions,
    )
    write_manifest(workdir, "train", train, **meta_args)
    write_manifest(workdir, "test", test, **meta_args)
    info = {
        "fingerprint": config.fingerprint(),
        "videos": len(corpus.videos),
        "train_samples": len(train),
        "test_samples": len(test),
    }
    with open(os.path.join(workdir, "dataset.json"), "w", encoding="utf-8") as fh:
        json.dump(info, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return info


def _load_split(config: RunConfig, workdir: str, name: str) -> list[Sample]:
    path = os.path.join(workdir, f"{name}.json")
    if not os.path.exists(path):
        raise PrerequisiteError(
            f"{name} manifest not found in {workdir!r}; run gen-data first"
        )
    samples, meta = read_manifest(path)
    expected = {
        "obs_dim": config.data.obs_dim,
        "text_dim": config.data.text_dim,
        "num_tasks": config.data.num_tasks,
        "num_actions": config.data.num_actions,
    }
    if meta != expected:
        raise PipelineError(
            f"{name} manifest metadata {meta} does not match config {expected}"
        )
    return samples


def _ckpt_path(workdir: str, stage: str, tag: str = "") -> str:
    suffix = f"_{tag}" if tag else ""
    return os.path.join(workdir, f"{stage}{suffix}.ckpt")


def _write_loss_curve(path: str, header: list[str], rows: list[list[float]]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f"{v:.8g}" for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def train_stage(stage: str, config: RunConfig, workdir: str, tag: str = "") -> dict:
    """Train one stage; writes its checkpoint and loss curve.

    The diffusion stage refuses to run without a vae checkpoint and
    verifies that the frozen autoencoder is bit-identical afterwards.
    """
    if stage not in STAGES:
        raise PipelineError(f"unknown stage {stage!r}, expected one of {STAGES}")
    config.validate()
    train_samples = _load_split(config, workdir, "train")
    params: StageParams = getattr(config, stage)
    schedule = LRSchedule.from_stage(params)
    rng = np.random.default_rng(stage_seed(config.seed, f"train.{stage}"))
    total_steps = params.epochs * params.steps_per_epoch
    rows: list[list[float]] = []

    if stage == "vae":
        model = StateAutoencoder(
            input_dim=config.data.obs_dim + config.data.text_dim,
            seed=stage_seed(config.seed, "init.vae"),
        )
        states = np.stack(
            [vec for s in train_samples for vec in state_vectors(s)]
        )
        for step in range(total_steps):
            idx = rng.integers(0, len(states), params.batch_size)
            lr = schedule.lr_at(step)
            recon, kl = model.train_step(
                states[idx], lr=lr, rng=rng, weight_decay=params.weight_decay
            )
            rows.append([step, lr, recon + kl, recon, kl])
        arrays = model.state_arrays()
        arrays.update(ckpt.pack_meta({"vae.input_dim": model.input_dim}))
        header = ["step", "lr", "loss", "recon_bce", "kl"]

    elif stage == "classifier":
        model = TaskClassifier(
            obs_dim=config.data.obs_dim,
            num_tasks=config.data.num_tasks,
            seed=stage_seed(config.seed, "init.classifier"),
        )
        o_s = np.stack([s.o_s for s in train_samples])
        o_g = np.stack([s.o_g for s in train_samples])
        labels = np.array([s.task for s in train_samples])
        for step in range(total_steps):
            idx = rng.integers(0, len(labels), params.batch_size)
            lr = schedule.lr_at(step)
            loss = model.train_step(
                o_s[idx], o_g[idx], labels[idx], lr=lr, weight_decay=params.weight_decay
            )
            rows.append([step, lr, loss])
        arrays = model.state_arrays()
        arrays.update(
            ckpt.pack_meta(
                {"classifier.obs_dim": model.obs_dim, "classifier.num_tasks": model.num_tasks}
            )
        )
        header = ["step", "lr", "loss"]

    else:  # diffusion
        vae = load_vae(config, workdir)
        vae.freeze()
        frozen_checksum = vae.params.checksum()
        layout = _layout(config)
        noise_schedule = make_schedule(
            config.schedule.steps, config.schedule.beta_start, config.schedule.beta_end
        )
        model = ConditionedUNet(
            feature_dim=layout.feature_dim,
            time_steps=config.schedule.steps,
            seed=stage_seed(config.seed, "init.diffusion"),
        )
        for step in range(total_steps):
            idx = rng.integers(0, len(train_samples), params.batch_size)
            batch = [train_samples[i] for i in idx]
            lr = schedule.lr_at(step)
            loss = diffusion_loss(
                batch,
                noise_schedule,
                model,
                vae,
                layout,
                rng=rng,
                onehot_scale=config.onehot_scale,
                use_eps=config.flags.use_eps,
                inject_constraints=config.flags.inject_constraints,
                fresh_eps=config.flags.fusion_fresh_eps,
                mask_conditions=config.flags.loss_masking,
            )
            model.params.zero_grads()
            loss.backward()
            if not config.flags.inject_constraints:
                # The fusion net is deliberately off the graph in this
                # variant; give it zero grads so the step is well-formed.
                for name in ("denoiser.fuse.w", "denoiser.fuse.b"):
                    tensor = model.params[name]
                    tensor.grad = np.zeros_like(tensor.data)
            adamw_step(model.params, lr=lr, weight_decay=params.weight_decay)
            rows.append([step, lr, loss.item()])
        if vae.params.checksum() != frozen_checksum:
            raise PipelineError("frozen autoencoder changed during diffusion training")
        arrays = model.state_arrays()
        arrays.update(
            ckpt.pack_meta(
                {
                    "denoiser.feature_dim": layout.feature_dim,
                    "denoiser.time_steps": config.schedule.steps,
                    "schedule.steps": config.schedule.steps,
                    "schedule.beta_start": config.schedule.beta_start,
                    "schedule.beta_end": config.schedule.beta_end,
                    "onehot_scale": config.onehot_scale,
                }
            )
        )
        header = ["step", "lr", "loss"]

    path = _ckpt_path(workdir, stage, tag if stage == "diffusion" else "")
    ckpt.save_checkpoint(path, arrays)
    curve_path = path[: -len(".ckpt")] + "_loss.csv"
    _write_loss_curve(curve_path, header, rows)
    return {
        "stage": stage,
        "checkpoint": path,
        "loss_curve": curve_path,
        "steps": total_steps,
        "final_loss": rows[-1][2] if rows else None,
    }


def load_vae(config: RunConfig, workdir: str) -> StateAutoencoder:
    path = _ckpt_path(workdir, "vae")
    if not os.path.exists(path):
        raise PrerequisiteError(
            "diffusion training requires a frozen autoencoder: vae checkpoint "
            f"missing at {path!r} (train the vae stage first)"
        )
    arrays, meta = ckpt.split_meta(ckpt.load_checkpoint(path))
    input_dim = config.data.obs_dim + config.data.text_dim
    if int(meta.get("vae.input_dim", input_dim)) != input_dim:
        raise PipelineError(
            f"vae checkpoint was trained with input dim {meta['vae.input_dim']}, "
            f"config expects {input_dim}"
        )
    model = StateAutoencoder(input_dim=input_dim, seed=0)
    model.load_state(arrays)
    return model


def load_classifier(config: RunConfig, workdir: str) -> TaskClassifier:
    path = _ckpt_path(workdir, "classifier")
    if not os.path.exists(path):
        raise PrerequisiteError(f"classifier checkpoint missing at {path!r}")
    arrays, meta = ckpt.split_meta(ckpt.load_checkpoint(path))
    model = TaskClassifier(
        obs_dim=config.data.obs_dim, num_tasks=config.data.num_tasks, seed=0
    )
    if int(meta.get("classifier.num_tasks", model.num_tasks)) != model.num_tasks:
        raise PipelineError("classifier checkpoint does not match config task count")
    model.load_state(arrays)
    return model


def load_denoiser(config: RunConfig, workdir: str, tag: str = "") -> ConditionedUNet:
    path = _ckpt_path(workdir, "diffusion", tag)
    if not os.path.exists(path):
        raise PrerequisiteError(f"diffusion checkpoint missing at {path!r}")
    arrays, meta = ckpt.split_meta(ckpt.load_checkpoint(path))
    layout = _layout(config)
    if int(meta.get("denoiser.feature_dim", layout.feature_dim)) != layout.feature_dim:
        raise PipelineError(
            f"diffusion checkpoint feature dim {meta['denoiser.feature_dim']} does not "
            f"match config layout {layout.feature_dim}"
        )
    if int(meta.get("schedule.steps", config.schedule.steps)) != config.schedule.steps:
        raise PipelineError("diffusion checkpoint schedule does not match config")
    model = ConditionedUNet(
        feature_dim=layout.feature_dim, time_steps=config.schedule.steps, seed=0
    )
    model.load_state(arrays)
    return model


def classifier_accuracy(model: TaskClassifier, samples: list[Sample]) -> float:
    if not samples:
        raise PipelineError("no samples to score")
    o_s = np.stack([s.o_s for s in samples])
    o_g = np.stack([s.o_g for s in samples])
    predicted = model.predict_batch(o_s, o_g)
    truth = np.array([s.task for s in samples])
    return float((predicted == truth).mean())


def evaluate(config: RunConfig, workdir: str, tag: str = "", report_name: str = "report") -> PlanReport:
    """Plan every test sample end to end and score the plans.

    The task label is always the classifier's prediction; ground-truth
    first/last actions are only substituted when the gt-boundary flag
    asks for the baseline protocol, and that substitution can only raise
    the scores (asserted here on every run).
    """
    config.validate()
    test_samples = _load_split(config, workdir, "test")
    if not test_samples:
        raise PipelineError("test split is empty")
    vae = load_vae(config, workdir)
    vae.freeze()
    clf = load_classifier(config, workdir)
    den = load_denoiser(config, workdir, tag)
    layout = _layout(config)
    noise_schedule = make_schedule(
        config.schedule.steps, config.schedule.beta_start, config.schedule.beta_end
    )

    o_s = np.stack([s.o_s for s in test_samples])
    o_g = np.stack([s.o_g for s in test_samples])
    predicted_tasks = [int(t) for t in clf.predict_batch(o_s, o_g)]
    seeds = [stage_seed(config.seed, "eval", i) for i in range(len(test_samples))]
    states = generate_plans(
        test_samples,
        predicted_tasks,
        noise_schedule,
        den,
        vae,
        layout,
        seeds=seeds,
        onehot_scale=config.onehot_scale,
        use_eps=config.flags.use_eps,
        inject_constraints=config.flags.inject_constraints,
        fresh_eps=config.flags.fusion_fresh_eps,
    )
    pairs = [
        PlanPair(predicted=decode_plan(state), truth=sample.actions)
        for state, sample in zip(states, test_samples)
    ]
    raw = score_pairs(pairs)
    if config.flags.gt_boundary_eval:
        pairs = [apply_gt_boundary(p) for p in pairs]
        scored = score_pairs(pairs)
        if scored["sr"] + 1e-12 < raw["sr"]:
            raise PipelineError("gt-boundary protocol lowered the success rate")
    else:
        scored = raw

    report = PlanReport(
        dataset=config.dataset_name,
        curation=config.curation,
        horizon=config.horizon,
        sr=scored["sr"],
        macc=scored["macc"],
        macc_set=scored["macc_set"],
        msiou=scored["msiou"],
        num_plans=len(pairs),
        fingerprint=config.fingerprint(),
        gt_boundary=config.flags.gt_boundary_eval,
        seed=config.seed,
    )
    suffix = f"_{tag}" if tag else ""
    write_report(os.path.join(workdir, report_name + suffix), report)
    return report


ABLATION_VARIANTS = ("full", "no_eps", "no_injection")


def _variant_config(config: RunConfig, variant: str) -> RunConfig:
    cfg = apply_overrides(config, {})
    if variant == "full":
        cfg.flags.use_eps = True
        cfg.flags.inject_constraints = True
    elif variant == "no_eps":
        cfg.flags.use_eps = False
        cfg.flags.inject_constraints = True
    elif variant == "no_injection":
        cfg.flags.inject_constraints = False
    else:
        raise PipelineError(f"unknown ablation variant {variant!r}")
    return cfg


def ablation_suite(config: RunConfig, workdir: str, seeds: list[int] | None = None) -> dict:
    """Retrain and score {full, no_eps, no_injection} across seeds.

    The autoencoder and classifier are shared per seed; only the
    diffusion stage differs between variants (the no-injection variant
    trains with a zero constraint through the same code path).  Returns
    per-run rows plus per-variant medians, and writes ablation.json/.csv.
    """
    if seeds is None:
        seeds = [config.seed + i for i in range(3)]
    rows: list[dict] = []
    for seed in seeds:
        seed_cfg = apply_overrides(config, {"seed": str(seed)})
        seed_dir = os.path.join(workdir, f"seed{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        generate_dataset(seed_cfg, seed_dir)
        train_stage("vae", seed_cfg, seed_dir)
        train_stage("classifier", seed_cfg, seed_dir)
        for variant in ABLATION_VARIANTS:
            var_cfg = _variant_config(seed_cfg, variant)
            train_stage("diffusion", var_cfg, seed_dir, tag=variant)
            report = evaluate(var_cfg, seed_dir, tag=variant, report_name="report")
            rows.append(
                {
                    "variant": variant,
                    "seed": seed,
                    "sr": report.sr,
                    "macc": report.macc,
                    "macc_set": report.macc_set,
                    "msiou": report.msiou,
                }
            )
    medians = {
        variant: {
            metric: statistics.median(
                row[metric] for row in rows if row["variant"] == variant
            )
            for metric in ("sr", "macc", "macc_set", "msiou")
        }
        for variant in ABLATION_VARIANTS
    }
    table = {"rows": rows, "medians": medians, "seeds": seeds}
    with open(os.path.join(workdir, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(table, fh, sort_keys=True, indent=1)
        fh.write("\n")
    _write_ablation_csv(os.path.join(workdir, "ablation.csv"), rows, medians)
    return table


def _write_ablation_csv(path: str, rows: list[dict], medians: dict) -> None:
    header = ("variant", "seed", "SR", "mAcc", "mSIoU")
    lines = [header]
    for row in rows:
        lines.append(
            (
                row["variant"],
                str(row["seed"]),
                f"{row['sr']:.4f}",
                f"{row['macc']:.4f}",
                f"{row['msiou']:.4f}",
            )
        )
    for variant, med in medians.items():
        lines.append(
            (
                variant,
                "median",
                f"{med['sr']:.4f}",
                f"{med['macc']:.4f}",
                f"{med['msiou']:.4f}",
            )
        )
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    text = "\n".join(
        ",".join(cell.rjust(widths[i]) for i, cell in enumerate(line)) for line in lines
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def run_full_pipeline(config: RunConfig, workdir: str) -> PlanReport:
    """gen-data, three training stages in order, then evaluation."""
    generate_dataset(config, workdir)
    train_stage("vae", config, workdir)
    train_stage("classifier", config, workdir)
    train_stage("diffusion", config, workdir)
    return evaluate(config, workdir)
