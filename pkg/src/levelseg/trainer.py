"""Training loop, evaluation, ablation runner, and prediction.

Determinism contract: every random decision is derived from the run seed
through stateless per-(seed, epoch, sample) generators, so two runs with the
same config produce identical batches, identical weights, and byte-identical
metrics files on one platform; resuming from a saved state continues the
exact same trajectory.
"""

import hashlib
import json
import time
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import data as data_mod
from . import metrics as metrics_mod
from .autoconfig import fingerprint as make_fingerprint
from .autoconfig import Fingerprint, plan as make_plan, poly_lr
from .errors import (ConfigInvalid, DatasetError, FreezeViolation,
                     MissingFile)
from .losses import LossWeights, total_loss
from .metrics import SampleMetric, aggregate, format_mean_std_table
from .model import (FrozenEncoderSpec, build_model, encode_frozen, fuse,
                    load_checkpoint, save_checkpoint)

_BATCH_STREAM = 7001
_SUBSET_STREAM = 7002

_CONFIG_KEYS = {
    "dataset", "train_size", "seed", "loss_weights", "frozen_encoder",
    "embed_channels", "reg_head", "epochs", "image_size", "val_interval",
    "out_dir",
}


@dataclass
class RunConfig:
    dataset: dict
    out_dir: str
    train_size: int = 20
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    frozen_encoder: bool = True
    embed_channels: int = 256
    reg_head: bool = True
    epochs: int = 200
    image_size: int = 256
    val_interval: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigInvalid("epochs must be >= 1")
        if self.train_size < 1:
            raise ConfigInvalid("train_size must be >= 1")
        if self.val_interval < 1:
            raise ConfigInvalid("val_interval must be >= 1")
        if not isinstance(self.dataset, dict) or \
                set(self.dataset) & {"synth", "manifest"} == set():
            raise ConfigInvalid('dataset must contain "synth" or "manifest"')

    def to_dict(self):
        d = asdict(self)
        d["loss_weights"] = asdict(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - _CONFIG_KEYS
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in d or "out_dir" not in d:
            raise ConfigInvalid('config requires "dataset" and "out_dir"')
        d = dict(d)
        lw = d.get("loss_weights", {})
        if isinstance(lw, dict):
            extra = set(lw) - {"lambda1", "lambda2", "lambda3"}
            if extra:
                raise ConfigInvalid(f"unknown loss weight keys: {sorted(extra)}")
            d["loss_weights"] = LossWeights(**lw)
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TrainState:
    epoch: int = 0                 # number of completed epochs
    step: int = 0
    best_val_dice: float = -1.0
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Dataset resolution
# ---------------------------------------------------------------------------

def resolve_dataset(config):
    """Materialize {train, val, test} sample lists from the config."""
    ds = config.dataset
    if "synth" in ds:
        spec = dict(ds["synth"])
        seed = spec.get("seed", config.seed)
        size = spec.get("size", 64)
        difficulty = spec.get("difficulty", "easy")
        splits = {
            "train": data_mod.synth_generate(seed, spec.get("n_train", 20),
                                             size, difficulty, stream=0),
            "val": data_mod.synth_generate(seed, spec.get("n_val", 20),
                                           size, difficulty, stream=1),
            "test": data_mod.synth_generate(seed, spec.get("n_test", 50),
                                            size, difficulty, stream=2),
        }
        return splits, 2
    manifest = data_mod.load_manifest(ds["manifest"])
    splits = {}
    for name in ("train", "val", "test"):
        ids = manifest.splits.get(name, [])
        splits[name] = [data_mod.load_sample(manifest, sid) for sid in ids]
    return splits, manifest.classes


def select_train_subset(train_samples, train_size, seed):
    """First-k of a seed-shuffled order, so subsets nest as k grows."""
    if train_size > len(train_samples):
        raise ConfigInvalid(
            f"train_size {train_size} exceeds available {len(train_samples)}")
    rng = np.random.default_rng([seed, _SUBSET_STREAM])
    perm = rng.permutation(len(train_samples))
    return [train_samples[i] for i in perm[:train_size]]


def _batch_schedule(seed, epoch, ids, batch_size):
    perm = np.random.default_rng([seed, epoch, _BATCH_STREAM]).permutation(len(ids))
    order = [ids[i] for i in perm]
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def batch_sequence_checksum(seed, epochs, ids, batch_size):
    """Digest of the full id sequence the loop will consume; config-determined."""
    h = hashlib.sha256()
    for epoch in range(epochs):
        for batch in _batch_schedule(seed, epoch, ids, batch_size):
            h.update(("|".join(batch) + ";").encode())
    return h.hexdigest()


def _aug_rng(seed, epoch, sample_id):
    return np.random.default_rng([seed, epoch, zlib.crc32(sample_id.encode())])


def _to_tensors(samples, classes, with_levelset):
    imgs = np.stack([s.image for s in samples]).transpose(0, 3, 1, 2)
    labels = np.stack([s.label for s in samples]).astype(np.int64)
    x = torch.from_numpy(imgs)
    y = torch.from_numpy(np.eye(classes, dtype=np.float32)[labels]).permute(0, 3, 1, 2)
    if not with_levelset:
        return x, y, None, None
    phis, weights = [], []
    for s in samples:
        phi, degenerate = data_mod.make_levelset_targets(s.label, classes)
        phis.append(phi.transpose(2, 0, 1))
        weights.append(~degenerate)
    phi_t = torch.from_numpy(np.stack(phis))
    w_t = torch.from_numpy(np.stack(weights).astype(np.float32))
    return x, y, phi_t, w_t


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(config, resume_from=None, stop_after=None):
    """Fingerprint, plan, build, and run the training loop.

    Keeps the checkpoint with the best validation DICE plus a resumable
    last-state checkpoint, and writes a JSON-lines log with the per-epoch
    loss breakdown and validation DICE. ``stop_after`` ends the session
    after that many total epochs while keeping the config's full schedule,
    so a later ``resume_from`` continues the identical trajectory.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits, classes = resolve_dataset(config)
    if not splits["train"]:
        raise DatasetError("train split is empty")
    train_samples = select_train_subset(splits["train"], config.train_size, config.seed)

    size = config.image_size
    resized = [data_mod.resize_sample(s, size, size) for s in train_samples]
    fp = make_fingerprint(resized, classes)
    plan = make_plan(fp, max_epochs=config.epochs)
    train_pp = [data_mod.preprocess(s, fp) for s in train_samples]
    val_pp = [data_mod.preprocess(s, fp) for s in splits["val"]]

    frozen_spec = None
    if config.frozen_encoder:
        frozen_spec = FrozenEncoderSpec(embed_channels=config.embed_channels,
                                        seed=config.seed)
    model = build_model(plan, fp.channels, fp.classes, frozen_spec=frozen_spec,
                        with_reg_head=config.reg_head, seed=config.seed)
    opt = torch.optim.SGD((p for p in model.parameters() if p.requires_grad),
                          lr=plan.learning_rate, momentum=0.99, nesterov=True)
    state = TrainState()
    if resume_from is not None:
        model, opt, state = _restore(resume_from, config, model, opt)

    weights = config.loss_weights
    reg_active = config.reg_head and (weights.lambda2 > 0 or weights.lambda3 > 0)
    frozen_before = model.frozen_checksum()
    aug = plan.augmentation
    ids = [s.sample_id for s in train_pp]
    by_id = {s.sample_id: s for s in train_pp}
    val_cache = _ValCache(model, val_pp)

    last_epoch = config.epochs if stop_after is None else min(stop_after, config.epochs)
    log_path = out_dir / "train_log.jsonl"
    log_fh = open(log_path, "a" if resume_from else "w")
    try:
        for epoch in range(state.epoch, last_epoch):
            t0 = time.time()
            lr = poly_lr(plan, epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            model.train()
            sums = {"total": 0.0, "s": 0.0, "l": 0.0, "c": 0.0}
            step_losses = []
            seen = 0
            for batch_ids in _batch_schedule(config.seed, epoch, ids, plan.batch_size):
                batch = [
                    data_mod.augment(
                        by_id[sid], _aug_rng(config.seed, epoch, sid),
                        rotate_deg=aug["rotate_deg"],
                        scale_range=aug["scale_range"],
                        elastic_alpha=aug["elastic"]["alpha"],
                        elastic_sigma=aug["elastic"]["sigma"])
                    for sid in batch_ids
                ]
                x, y, phi_gt, ch_w = _to_tensors(batch, classes, reg_active)
                out = model(x)
                lb = total_loss(out["seg_probs"], y,
                                out["levelset_pred"] if reg_active else None,
                                phi_gt, weights, ch_w)
                opt.zero_grad(set_to_none=True)
                lb["total"].backward()
                opt.step()
                n = len(batch)
                vals = {key: float(lb[key].detach()) for key in ("s", "l", "c")}
                # log the exact recombination so the breakdown is
                # self-consistent at float64 (the float32 graph total drives
                # the backward pass but rounds differently)
                vals["total"] = (weights.lambda1 * vals["s"]
                                 + weights.lambda2 * vals["l"]
                                 + weights.lambda3 * vals["c"])
                step_losses.append([vals["total"], vals["s"], vals["l"], vals["c"]])
                for key in sums:
                    sums[key] += vals[key] * n
                seen += n
                state.step += 1
            state.epoch = epoch + 1
            row = {
                "epoch": epoch,
                "lr": lr,
                "loss_total": sums["total"] / seen,
                "loss_s": sums["s"] / seen,
                "loss_l": sums["l"] / seen,
                "loss_c": sums["c"] / seen,
                "step_losses": step_losses,
                "seconds": round(time.time() - t0, 3),
            }
            if epoch % config.val_interval == 0 or epoch == config.epochs - 1:
                val_dice = val_cache.mean_foreground_dice()
                row["val_dice"] = val_dice
                if val_dice > state.best_val_dice:
                    state.best_val_dice = val_dice
                    _save(out_dir / "checkpoint_best.pt", model, config, fp, state, opt=None)
            state.history.append(row)
            log_fh.write(json.dumps(row) + "\n")
            log_fh.flush()
    finally:
        log_fh.close()

    if model.frozen_checksum() != frozen_before:
        raise FreezeViolation("frozen encoder parameters changed during training")

    _save(out_dir / "checkpoint_last.pt", model, config, fp, state, opt=opt)
    summary = {
        "config": config.to_dict(),
        "epochs_run": state.epoch,
        "best_val_dice": state.best_val_dice,
        "batch_checksum": batch_sequence_checksum(
            config.seed, config.epochs, ids, plan.batch_size),
        "trainable_params": model.trainable_param_count,
        "frozen_params": model.frozen_param_count,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return {
        "out_dir": str(out_dir),
        "best_checkpoint": str(out_dir / "checkpoint_best.pt"),
        "last_checkpoint": str(out_dir / "checkpoint_last.pt"),
        "state": state,
        "summary": summary,
    }


class _ValCache:
    """Validation forward passes with the frozen embeddings computed once.

    Valid because validation inputs are deterministic (no augmentation) and
    the embedding branch is frozen.
    """

    def __init__(self, model, val_samples):
        self.model = model
        self.samples = val_samples
        self.embeddings = None
        if model.frozen_encoder is not None and val_samples:
            with torch.no_grad():
                xs = torch.from_numpy(
                    np.stack([s.image for s in val_samples]).transpose(0, 3, 1, 2))
                embs = [encode_frozen(model.frozen_encoder, xs[i:i + 4])
                        for i in range(0, len(val_samples), 4)]
                self.embeddings = torch.cat(embs)

    def predictions(self):
        model = self.model
        model.eval()
        preds = []
        with torch.no_grad():
            for i, s in enumerate(self.samples):
                x = torch.from_numpy(s.image.transpose(2, 0, 1))[None]
                emb = None if self.embeddings is None else self.embeddings[i:i + 1]
                out = _forward_with_embedding(model, x, emb)
                preds.append(out["seg_probs"][0].argmax(0).numpy())
        return preds

    def mean_foreground_dice(self):
        vals = []
        for s, pred in zip(self.samples, self.predictions()):
            for c in range(1, self.model.classes):
                vals.append(metrics_mod.dice_coefficient(pred, s.label, c))
        return float(np.mean(vals)) if vals else float("nan")


def _forward_with_embedding(model, x, embedding):
    if embedding is None:
        return model(x)
    skips = []
    h = x
    for stage in model.encoder:
        h = stage(h)
        skips.append(h)
    h = fuse(embedding, skips[-1])
    for i, (up, dec) in enumerate(zip(model.upconvs, model.dec_stages)):
        h = up(h)
        h = dec(torch.cat([h, skips[-2 - i]], dim=1))
    logits = model.seg_head(h)
    return {
        "seg_probs": torch.softmax(logits, dim=1),
        "levelset_pred": model.reg_head(h) if model.reg_head is not None else None,
    }


def _save(path, model, config, fp, state, opt):
    extra = {
        "run_config": config.to_dict(),
        "fingerprint": fp.to_dict(),
        "train_state": asdict(state),
        "optimizer": opt.state_dict() if opt is not None else None,
        "torch_rng": torch.get_rng_state(),
    }
    save_checkpoint(path, model, extra)


def _restore(path, config, model, opt):
    loaded, extra = load_checkpoint(path)
    stored = extra.get("run_config")
    if stored != config.to_dict():
        raise ConfigInvalid("resume config differs from the checkpointed config")
    model.load_state_dict(loaded.state_dict())
    if extra.get("optimizer") is not None:
        opt.load_state_dict(extra["optimizer"])
    st = extra["train_state"]
    state = TrainState(epoch=st["epoch"], step=st["step"],
                       best_val_dice=st["best_val_dice"], history=list(st["history"]))
    return model, opt, state


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(checkpoint_path, split="test", out_dir=None):
    """Per-sample DICE/ASD on a split, aggregated into a mean +/- std report."""
    model, extra = load_checkpoint(checkpoint_path)
    config = RunConfig.from_dict(extra["run_config"])
    fp = Fingerprint.from_dict(extra["fingerprint"])
    splits, classes = resolve_dataset(config)
    samples = splits.get(split)
    if not samples:
        raise DatasetError(f"split {split!r} is empty or unknown")
    rows = []
    model.eval()
    with torch.no_grad():
        for s in samples:
            pp = data_mod.preprocess(s, fp)
            x = torch.from_numpy(pp.image.transpose(2, 0, 1))[None]
            pred = model(x)["seg_probs"][0].argmax(0).numpy()
            pred_mask = metrics_mod.LabelMask(pred, pp.spacing)
            gt_mask = metrics_mod.LabelMask(pp.label, pp.spacing)
            for c in range(1, classes):
                rows.append(SampleMetric(
                    sample_id=s.sample_id,
                    class_id=c,
                    dice_pct=metrics_mod.dice_coefficient(pred_mask, gt_mask, c),
                    asd_mm=metrics_mod.asd(pred_mask, gt_mask, c),
                ))
    report = aggregate(rows)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.to_csv(out_dir / "metrics.csv")
        with open(out_dir / "metrics_table.txt", "w") as fh:
            fh.write(report.format_table(label=split) + "\n")
    return report


# ---------------------------------------------------------------------------
# Ablation and sample-size study
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = ("full", "w/o frozen encoder", "w/o regression head")


def ablate(config):
    """Train and evaluate the three standard variants on identical data.

    Variants share the seed and consume identical batch sequences; the
    regression-head-free variant drops the head and zeroes its loss terms.
    """
    results = {}
    table_rows = []
    for name in ABLATION_VARIANTS:
        sub = RunConfig.from_dict(config.to_dict())
        sub.out_dir = str(Path(config.out_dir) / _slug(name))
        if name == "w/o frozen encoder":
            sub.frozen_encoder = False
        elif name == "w/o regression head":
            sub.reg_head = False
            sub.loss_weights = LossWeights(config.loss_weights.lambda1, 0.0, 0.0)
        res = train(sub)
        report = evaluate(res["best_checkpoint"], "test",
                          out_dir=Path(sub.out_dir) / "report")
        o = report.overall
        results[name] = {"report": report, "train": res}
        table_rows.append((name, o["mean_dice"], o["std_dice"],
                           o["mean_asd"], o["std_asd"]))
    table = format_mean_std_table(table_rows)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation_table.txt", "w") as fh:
        fh.write(table + "\n")
    return {"results": results, "table": table}


def train_size_study(config, sizes):
    """Train per sample size and emit a size-columned mean +/- std table."""
    columns = []
    results = {}
    for k in sizes:
        sub = RunConfig.from_dict(config.to_dict())
        sub.train_size = int(k)
        sub.out_dir = str(Path(config.out_dir) / f"train_size_{k}")
        res = train(sub)
        report = evaluate(res["best_checkpoint"], "test",
                          out_dir=Path(sub.out_dir) / "report")
        o = report.overall
        results[int(k)] = {"report": report, "train": res}
        columns.append((int(k), o))
    header = ["Metric"] + [str(k) for k, _ in columns]
    dice_row = ["DICE (%)"] + [metrics_mod._pm(o["mean_dice"], o["std_dice"])
                               for _, o in columns]
    asd_row = ["ASD (mm)"] + [metrics_mod._pm(o["mean_asd"], o["std_asd"])
                              for _, o in columns]
    widths = [max(len(r[i]) for r in (header, dice_row, asd_row))
              for i in range(len(header))]
    lines = []
    for i, row in enumerate((header, dice_row, asd_row)):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("-" * len(lines[0]))
    table = "\n".join(lines)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_size_table.txt", "w") as fh:
        fh.write(table + "\n")
    return {"results": results, "table": table}


def _slug(name):
    return name.replace("/", "").replace(" ", "_")


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def predict(checkpoint_path, image_paths, out_dir, dump_levelset=False):
    """Write an indexed-PNG mask per input image; errors are per-file.

    Returns (written paths, failures) where failures is a list of
    (path, error message); processing continues past individual failures.
    """
    model, extra = load_checkpoint(checkpoint_path)
    fp = Fingerprint.from_dict(extra["fingerprint"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written, failures = [], []
    model.eval()
    for path in image_paths:
        path = Path(path)
        try:
            img = data_mod._read_gray(path)
            sample = data_mod.Sample(image=img[..., None].astype(np.float32),
                                     label=np.zeros(img.shape, np.uint8),
                                     sample_id=path.stem)
            pp = data_mod.preprocess(sample, fp)
            with torch.no_grad():
                out = model(torch.from_numpy(pp.image.transpose(2, 0, 1))[None])
            pred = out["seg_probs"][0].argmax(0).numpy().astype(np.uint8)
            if pred.shape != img.shape:
                import cv2
                pred = cv2.resize(pred, (img.shape[1], img.shape[0]),
                                  interpolation=cv2.INTER_NEAREST)
            mask_path = out_dir / f"{path.stem}_mask.png"
            Image.fromarray(pred, mode="L").save(mask_path)
            written.append(str(mask_path))
            if dump_levelset and out["levelset_pred"] is not None:
                np.save(out_dir / f"{path.stem}_levelset.npy",
                        out["levelset_pred"][0].numpy())
        except (MissingFile, DatasetError, OSError, ValueError) as e:
            failures.append((str(path), str(e)))
    return written, failures
