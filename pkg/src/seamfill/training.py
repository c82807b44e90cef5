"""Supervised training for the three perception nets.

Every entry point is deterministic under its seed: model init, shuffling
and noise all derive from it, and data loading stays in-process.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import heatmaps, render
from .datagen import DatasetManifest, make_orientation_batch, LabeledSample
from .models import OrientationNet, PositionNet, SegmentationNet, mask_centroids_xy
from .render import CameraModel
from .simcore import Pose

BCE_EPS = heatmaps.BCE_EPS


class EmptyDatasetError(ValueError):
    pass


def bce_heatmap_loss_torch(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Torch mirror of heatmaps.bce_heatmap_loss, summed per sample then meaned."""
    p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)
    per_sample = -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).flatten(1).sum(1)
    return per_sample.mean()


def contrastive_loss_torch(similarities: torch.Tensor, positive_index: int) -> torch.Tensor:
    """Torch mirror of heatmaps.contrastive_loss_mean for one sample."""
    d_pos = similarities[positive_index]
    mask = torch.ones_like(similarities, dtype=torch.bool)
    mask[positive_index] = False
    return torch.clamp(similarities[mask] - d_pos + 1.0, min=0.0).mean()


def _split_indices(count: int, val_fraction: float, rng: np.random.Generator):
    order = rng.permutation(count)
    n_val = max(1, int(round(count * val_fraction)))
    return order[n_val:], order[:n_val]


@dataclass
class SegTrainResult:
    model: SegmentationNet
    mean_iou: float
    per_class_iou: list[float]
    epoch_losses: list[float]
    seconds: float

    def metrics(self) -> dict:
        return {
            "mean_iou": self.mean_iou,
            "per_class_iou": self.per_class_iou,
            "epoch_losses": self.epoch_losses,
        }


def train_segmentation(
    manifest: DatasetManifest,
    epochs: int = 10,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 8,
    val_fraction: float = 0.2,
    base: int = 8,
    log=None,
) -> SegTrainResult:
    """Pixel cross-entropy over the 3 classes; reports held-out MeanIoU."""
    if not manifest.samples:
        raise EmptyDatasetError("segmentation dataset is empty")
    t0 = time.perf_counter()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    rgbs = np.stack([manifest.load_rgb(s) for s in manifest.samples]).astype(np.float32) / 255.0
    masks = np.stack([manifest.load_mask(s) for s in manifest.samples])
    train_idx, val_idx = _split_indices(len(manifest.samples), val_fraction, rng)

    model = SegmentationNet(base=base)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    x_all = torch.from_numpy(rgbs).permute(0, 3, 1, 2)
    y_all = torch.from_numpy(masks).long()

    epoch_losses = []
    for epoch in range(epochs):
        model.train()
        order = rng.permutation(train_idx)
        total, count = 0.0, 0
        for k in range(0, len(order), batch_size):
            idx = order[k : k + batch_size]
            logits = model(x_all[idx])
            loss = F.cross_entropy(logits, y_all[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        epoch_losses.append(total / count)
        if log:
            log(f"seg epoch {epoch + 1}/{epochs}: loss {epoch_losses[-1]:.4f}")

    model.eval()
    confusion = np.zeros((3, 3), dtype=np.int64)
    with torch.no_grad():
        for k in range(0, len(val_idx), batch_size):
            idx = val_idx[k : k + batch_size]
            pred = model.predict_labels(x_all[idx]).numpy()
            gt = masks[idx]
            for c_gt in range(3):
                sel = gt == c_gt
                for c_pr in range(3):
                    confusion[c_gt, c_pr] += np.count_nonzero(pred[sel] == c_pr)
    per_class = heatmaps.iou_from_confusion(confusion)
    miou = float(np.nanmean(per_class))
    return SegTrainResult(model, miou, per_class, epoch_losses, time.perf_counter() - t0)


def _load_pose_dataset(manifest: DatasetManifest):
    masks = np.stack([manifest.load_mask(s) for s in manifest.samples])
    poses = np.array([s.pose for s in manifest.samples], dtype=np.float64)
    return masks, poses


def position_targets_px(poses: np.ndarray, camera: CameraModel, n: int) -> np.ndarray:
    """Grid targets for pose errors: hot cell index pair per sample, clipped."""
    out = np.zeros((len(poses), 2), dtype=np.int64)
    for k, (x, y, _t) in enumerate(poses):
        di, dj = render.world_to_pixel(camera, (x, y))
        out[k] = heatmaps.clip_to_grid(di, dj, n)
    return out


@dataclass
class PosTrainResult:
    model: PositionNet
    cell_exact: float
    within_one: float
    epoch_losses: list[float]
    seconds: float

    def metrics(self) -> dict:
        return {
            "cell_exact": self.cell_exact,
            "within_one_cell": self.within_one,
            "epoch_losses": self.epoch_losses,
        }


def train_position(
    manifest: DatasetManifest,
    epochs: int = 10,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 16,
    val_fraction: float = 0.15,
    base: int = 8,
    camera: CameraModel | None = None,
    log=None,
) -> PosTrainResult:
    """Minimize the summed-BCE heatmap loss; report held-out argmax accuracy."""
    if not manifest.samples:
        raise EmptyDatasetError("position dataset is empty")
    t0 = time.perf_counter()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    camera = camera or CameraModel()
    masks, poses = _load_pose_dataset(manifest)
    model = PositionNet(base=base)
    targets_idx = position_targets_px(poses, camera, model.n)
    train_idx, val_idx = _split_indices(len(masks), val_fraction, rng)

    half = model.n // 2
    x_all = torch.from_numpy(masks)
    hot = torch.zeros((len(masks), model.n, model.n))
    for k, (di, dj) in enumerate(targets_idx):
        hot[k, di + half, dj + half] = 1.0

    opt = torch.optim.Adam(model.parameters(), lr=lr)
    epoch_losses = []
    for epoch in range(epochs):
        model.train()
        order = rng.permutation(train_idx)
        total, count = 0.0, 0
        for k in range(0, len(order), batch_size):
            idx = order[k : k + batch_size]
            pred = model(x_all[idx])
            loss = bce_heatmap_loss_torch(pred, hot[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        epoch_losses.append(total / count)
        if log:
            log(f"pos epoch {epoch + 1}/{epochs}: loss {epoch_losses[-1]:.2f}")

    exact, within = eval_position(model, masks[val_idx], targets_idx[val_idx])
    return PosTrainResult(model, exact, within, epoch_losses, time.perf_counter() - t0)


@torch.no_grad()
def eval_position(model: PositionNet, masks: np.ndarray, targets_idx: np.ndarray, batch_size: int = 32):
    """(cell-exact rate, within-one-cell rate) of the heatmap argmax."""
    model.eval()
    exact = within = 0
    x_all = torch.from_numpy(masks)
    for k in range(0, len(masks), batch_size):
        pred = model(x_all[k : k + batch_size]).numpy()
        for row, hm in enumerate(pred):
            di, dj = heatmaps.heatmap_argmax_displacement(hm)
            ti, tj = targets_idx[k + row]
            err = max(abs(di - ti), abs(dj - tj))
            exact += err == 0
            within += err <= 1
    n = len(masks)
    return exact / n, within / n


@dataclass
class OriTrainResult:
    model: OrientationNet
    top1: float
    epoch_losses: list[float]
    seconds: float

    def metrics(self) -> dict:
        return {"top1": self.top1, "epoch_losses": self.epoch_losses}


def _orientation_polar_pairs(model: OrientationNet, manifest: DatasetManifest):
    """Precompute (peg-polar, seam-polar) pairs and positive bins per sample.

    The polar transform is a fixed frontend, so doing it once per sample
    makes the training epochs nearly free of resampling work.
    """
    pairs, positives = [], []
    principal = torch.tensor([model.principal_xy], dtype=torch.float32)
    with torch.no_grad():
        for ref in manifest.samples:
            mask = manifest.load_mask(ref)
            peg_only, seam_only = render.split_channels(mask)
            pm = torch.from_numpy((peg_only == render.PEG).astype(np.float32)).unsqueeze(0)
            sm = torch.from_numpy((seam_only == render.SEAM).astype(np.float32)).unsqueeze(0)
            peg_polar = model.polar_transform(pm, mask_centroids_xy(pm))[0]
            seam_polar = model.polar_transform(sm, principal)[0]
            pairs.append(torch.stack([peg_polar, seam_polar]))
            positives.append(heatmaps.quantize_orientation(ref.pose[2]))
    return torch.stack(pairs), np.array(positives, dtype=np.int64)


def _bank_similarities_from_pairs(model: OrientationNet, pairs: torch.Tensor) -> torch.Tensor:
    """(B, 11) similarity heatmaps via exact polar shifts of the seam stream."""
    b = pairs.shape[0]
    feats = model.features_from_polar(pairs.flatten(0, 1))
    feats = feats.view(b, 2, *feats.shape[1:])
    u_p = feats[:, 0].flatten(1)
    half = heatmaps.ORIENTATION_BINS // 2
    sims = []
    for k in range(heatmaps.ORIENTATION_BINS):
        u_k = torch.roll(feats[:, 1], shifts=k - half, dims=-1).flatten(1)
        d = (u_k - u_p).norm(dim=1) / np.sqrt(u_p.shape[1])
        sims.append(torch.exp(-d))
    return torch.stack(sims, dim=1)


def train_orientation(
    manifest: DatasetManifest,
    epochs: int = 24,
    seed: int = 0,
    lr: float = 2e-3,
    batch_size: int = 64,
    val_fraction: float = 0.12,
    channels: int = 10,
    camera: CameraModel | None = None,
    log=None,
) -> OriTrainResult:
    """Minimize the pairwise hinge over the rotation bank; report top-1."""
    if not manifest.samples:
        raise EmptyDatasetError("orientation dataset is empty")
    t0 = time.perf_counter()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = OrientationNet(channels=channels)
    pairs, positives = _orientation_polar_pairs(model, manifest)
    train_idx, val_idx = _split_indices(len(positives), val_fraction, rng)

    opt = torch.optim.Adam(model.parameters(), lr=lr)
    epoch_losses = []
    for epoch in range(epochs):
        model.train()
        order = rng.permutation(train_idx)
        total = 0.0
        for k in range(0, len(order), batch_size):
            idx = order[k : k + batch_size]
            sims = _bank_similarities_from_pairs(model, pairs[idx])
            rows = torch.arange(len(idx))
            pos = torch.from_numpy(positives[idx])
            d_pos = sims[rows, pos]
            neg_mask = torch.ones_like(sims, dtype=torch.bool)
            neg_mask[rows, pos] = False
            loss = torch.clamp(sims[neg_mask].view(len(idx), -1) - d_pos.unsqueeze(1) + 1.0, min=0.0).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        epoch_losses.append(total / len(order))
        if log:
            log(f"ori epoch {epoch + 1}/{epochs}: loss {epoch_losses[-1]:.4f}")

    model.eval()
    top1 = eval_orientation_pairs(model, pairs[val_idx], positives[val_idx])
    return OriTrainResult(model, top1, epoch_losses, time.perf_counter() - t0)


@torch.no_grad()
def eval_orientation_pairs(model: OrientationNet, pairs, positives, batch_size: int = 64) -> float:
    """Top-1 accuracy via the polar-shift bank (the policy-time path)."""
    model.eval()
    hits = 0
    for k in range(0, len(positives), batch_size):
        sims = _bank_similarities_from_pairs(model, pairs[k : k + batch_size])
        hits += int((torch.argmax(sims, dim=1).numpy() == positives[k : k + batch_size]).sum())
    return hits / len(positives)


@torch.no_grad()
def orientation_eval_from_manifest(
    model: OrientationNet, manifest: DatasetManifest, camera=None, explicit_bank: bool = False
) -> float:
    """Top-1 over a manifest; `explicit_bank` runs every rotated bank image
    through the net instead of the equivalent polar-shift shortcut."""
    camera = camera or CameraModel()
    if not explicit_bank:
        pairs, positives = _orientation_polar_pairs(model, manifest)
        return eval_orientation_pairs(model, pairs, positives)
    hits = 0
    for ref in manifest.samples:
        mask = manifest.load_mask(ref)
        sample = LabeledSample(
            mask=mask, pose=Pose(*ref.pose), displacement=ref.displacement, shape_id=ref.shape_id
        )
        peg_only, bank, positive = make_orientation_batch(sample, camera)
        sims = model.similarities(
            torch.from_numpy((peg_only == render.PEG).astype(np.float32)),
            torch.from_numpy(np.stack(bank).astype(np.float32)),
        )
        hits += int(torch.argmax(sims).item() == positive)
    return hits / len(manifest.samples)


def position_eval_from_manifest(model: PositionNet, manifest: DatasetManifest, camera=None):
    camera = camera or CameraModel()
    masks, poses = _load_pose_dataset(manifest)
    return eval_position(model, masks, position_targets_px(poses, camera, model.n))
