"""Network architectures and the self-describing checkpoint container.

Three perception nets (segmentation, position heatmap, orientation Siamese)
share a small encoder-decoder family with skip connections. The policy nets
are an actor-critic over flattened heatmaps, optionally behind a recurrent
history encoder, plus a convolutional trunk for the end-to-end baseline.

All nets are sized for CPU training at desk scale: the position and
orientation nets work on a crop centred on the hole (the full error range
stays well inside it), which cuts compute several-fold without touching
the external contracts.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .heatmaps import ORIENTATION_BINS, POSITION_GRID_N

CHECKPOINT_VERSION = 1

IMG_H, IMG_W = 200, 250
CROP = 128  # working window, centred on the camera principal point


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.ReLU(inplace=True),
    )


class EncoderDecoder(nn.Module):
    """Three-level encoder-decoder with skip connections."""

    def __init__(self, in_ch: int, out_ch: int, base: int):
        super().__init__()
        c1, c2, c3 = base, base * 2, base * 4
        self.enc1 = _conv_block(in_ch, c1)
        self.enc2 = _conv_block(c1, c2)
        self.enc3 = _conv_block(c2, c3)
        self.pool = nn.MaxPool2d(2)
        self.dec2 = _conv_block(c3 + c2, c2)
        self.dec1 = _conv_block(c2 + c1, c1)
        self.head = nn.Conv2d(c1, out_ch, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        d2 = self.dec2(torch.cat([F.interpolate(e3, size=e2.shape[-2:], mode="nearest"), e2], 1))
        d1 = self.dec1(torch.cat([F.interpolate(d2, size=e1.shape[-2:], mode="nearest"), e1], 1))
        return self.head(d1)


def one_hot_labels(labels: torch.Tensor, num_classes: int = 3) -> torch.Tensor:
    """(B, H, W) int labels -> (B, C, H, W) float one-hot."""
    return F.one_hot(labels.long(), num_classes).permute(0, 3, 1, 2).float()


def center_crop(x: torch.Tensor, size: int, center_rc: tuple[int, int]) -> torch.Tensor:
    """Crop (B, C, H, W) to (size, size) about a (row, col) centre."""
    r0 = center_rc[0] - size // 2
    c0 = center_rc[1] - size // 2
    return x[..., r0 : r0 + size, c0 : c0 + size]


class SegmentationNet(nn.Module):
    """RGB image -> 3-class label logits at full resolution."""

    def __init__(self, base: int = 8):
        super().__init__()
        self.base = base
        self.net = EncoderDecoder(3, 3, base)

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        # pad to /4-friendly size, crop logits back
        x = F.pad(rgb, (0, -IMG_W % 4, 0, -IMG_H % 4))
        return self.net(x)[..., :IMG_H, :IMG_W]

    def arch(self) -> dict:
        return {"base": self.base}

    @torch.no_grad()
    def predict_labels(self, rgb: torch.Tensor) -> torch.Tensor:
        return self.forward(rgb).argmax(dim=1)


class PositionNet(nn.Module):
    """Segmented image -> (n, n) heatmap of per-cell probabilities.

    The decoder output has two channels per pixel (highlight vs background);
    a softmax across the two gives the probability that the cell is hot.
    The n x n grid is read off the full-resolution map as the window centred
    on the principal point, so cell (i, j) aligns exactly with displacement
    (i - n//2, j - n//2) px.
    """

    def __init__(self, base: int = 8, n: int = POSITION_GRID_N, principal_rc=(IMG_H // 2, IMG_W // 2)):
        super().__init__()
        self.base = base
        self.n = n
        self.principal_rc = tuple(principal_rc)
        self.net = EncoderDecoder(3, 2, base)

    def arch(self) -> dict:
        return {"base": self.base, "n": self.n, "principal_rc": list(self.principal_rc)}

    def forward(self, labels_or_onehot: torch.Tensor) -> torch.Tensor:
        """Returns (B, n, n) probabilities, indexed [i, j] like the targets."""
        x = labels_or_onehot
        if x.dim() == 3:
            x = one_hot_labels(x)
        x = center_crop(x, CROP, self.principal_rc)
        logits = self.net(x)
        prob_hot = torch.softmax(logits, dim=1)[:, 0]
        half = self.n // 2
        ctr = CROP // 2
        window = prob_hot[:, ctr - half : ctr + half + 1, ctr - half : ctr + half + 1]
        # rows index y (j), cols index x (i); heatmaps are indexed [i, j]
        return window.transpose(1, 2)


POLAR_BINS_PHI = 180  # 2 deg per angular bin: bank steps are exact bin shifts
POLAR_BINS_R = 40
POLAR_R_MIN = 3.0  # px
POLAR_R_MAX = 43.0  # px


def polar_grid(
    center_xy: torch.Tensor,
    image_hw: tuple[int, int] = (IMG_H, IMG_W),
    n_phi: int = POLAR_BINS_PHI,
    n_r: int = POLAR_BINS_R,
    r_min: float = POLAR_R_MIN,
    r_max: float = POLAR_R_MAX,
) -> torch.Tensor:
    """grid_sample coordinates for (n_r, n_phi) polar samples per centre.

    center_xy: (B, 2) pixel (col, row) centres. Returns (B, n_r, n_phi, 2)
    in normalized [-1, 1] coordinates.
    """
    h, w = image_hw
    r = torch.linspace(r_min, r_max, n_r).view(1, n_r, 1)
    phi = torch.linspace(0, 2 * math.pi * (n_phi - 1) / n_phi, n_phi).view(1, 1, n_phi)
    gx = center_xy[:, 0].view(-1, 1, 1) + r * torch.cos(phi)
    gy = center_xy[:, 1].view(-1, 1, 1) + r * torch.sin(phi)
    gx = gx / (w - 1) * 2 - 1
    gy = gy / (h - 1) * 2 - 1
    return torch.stack([gx, gy], dim=-1)


def mask_centroids_xy(masks: torch.Tensor) -> torch.Tensor:
    """(B, H, W) masks -> (B, 2) foreground centroids as (col, row) px."""
    b, h, w = masks.shape
    m = masks.float()
    total = m.sum(dim=(1, 2)).clamp(min=1.0)
    cols = torch.arange(w, dtype=torch.float32)
    rows = torch.arange(h, dtype=torch.float32)
    cx = (m.sum(dim=1) * cols).sum(dim=1) / total
    cy = (m.sum(dim=2) * rows).sum(dim=1) / total
    return torch.stack([cx, cy], dim=1)


class OrientationNet(nn.Module):
    """Shared-weight matcher between the peg stream and the rotated seam bank.

    Both streams are resampled on a polar grid (2 deg per angular bin), where
    a rotation of the underlying image is an exact circular shift, then pass
    through a small stack of circularly padded convolutions. The peg stream
    is sampled about its own blob centroid (position canonicalization); seam
    images about the hole centre. Similarities use the RMS-normalized
    Euclidean feature distance, D = exp(-d).
    """

    def __init__(self, channels: int = 10, principal_xy=(IMG_W / 2, IMG_H / 2)):
        super().__init__()
        self.channels = channels
        self.principal_xy = tuple(principal_xy)
        c = channels
        self.c1 = nn.Conv2d(1, c, (5, 5), stride=(2, 1))
        self.c2 = nn.Conv2d(c, 2 * c, (3, 5), stride=(2, 1))
        self.c3 = nn.Conv2d(2 * c, c, (3, 3))

    def arch(self) -> dict:
        return {"channels": self.channels, "principal_xy": list(self.principal_xy)}

    @staticmethod
    def _circular_pad(x: torch.Tensor, pad: int) -> torch.Tensor:
        # wrap along the angular axis, zero-pad along radius
        return F.pad(F.pad(x, (pad, pad, 0, 0), mode="circular"), (0, 0, pad, pad))

    def polar_transform(self, masks: torch.Tensor, centers_xy: torch.Tensor) -> torch.Tensor:
        """(B, H, W) float masks -> (B, n_r, n_phi) polar images."""
        grid = polar_grid(centers_xy, masks.shape[-2:])
        return F.grid_sample(
            masks.float().unsqueeze(1), grid, mode="bilinear", align_corners=True
        ).squeeze(1)

    def features_from_polar(self, polar: torch.Tensor) -> torch.Tensor:
        """(B, n_r, n_phi) polar images -> (B, C, r', n_phi) feature maps."""
        x = polar.unsqueeze(1)
        h = F.relu(self.c1(self._circular_pad(x, 2)))
        h = F.relu(self.c2(self._circular_pad(h, 2)))
        return self.c3(self._circular_pad(h, 1))

    def forward(self, masks: torch.Tensor, recenter: bool = False) -> torch.Tensor:
        """Feature maps for a batch of mask images.

        With `recenter`, each image is sampled about its own content centroid
        (used for the peg stream); otherwise about the hole centre.
        """
        if recenter:
            centers = mask_centroids_xy(masks)
        else:
            centers = torch.tensor(self.principal_xy, dtype=torch.float32).expand(len(masks), 2)
        return self.features_from_polar(self.polar_transform(masks, centers))

    @staticmethod
    def rms_similarities(u_p: torch.Tensor, u_bank: torch.Tensor) -> torch.Tensor:
        """D_k = exp(-||u_p - u_k|| / sqrt(numel)) for a (K, ...) bank."""
        diff = (u_bank - u_p.unsqueeze(0)).flatten(1)
        d = diff.norm(dim=1) / math.sqrt(diff.shape[1])
        return torch.exp(-d)

    def similarities(self, peg_mask: torch.Tensor, bank_masks: torch.Tensor) -> torch.Tensor:
        """(K,) heatmap for one peg image against an explicit rotation bank."""
        u_p = self.forward(peg_mask.unsqueeze(0), recenter=True)[0]
        u_s = self.forward(bank_masks)
        return self.rms_similarities(u_p, u_s)

    def similarities_fast(self, peg_mask: torch.Tensor, seam_mask: torch.Tensor, bins: int = ORIENTATION_BINS) -> torch.Tensor:
        """(bins,) heatmap computed via exact polar shifts of the seam stream.

        Rotating an image by one bank step equals a one-bin circular shift of
        its polar sampling, and the feature stack commutes with that shift,
        so this matches running each ideally rotated bank image through the
        net, at a twelfth of the cost.
        """
        feats = torch.stack(
            [
                self.forward(peg_mask.unsqueeze(0), recenter=True)[0],
                self.forward(seam_mask.unsqueeze(0))[0],
            ]
        )
        u_p, u_seam = feats[0], feats[1]
        bank = torch.stack([torch.roll(u_seam, shifts=k - bins // 2, dims=-1) for k in range(bins)])
        return self.rms_similarities(u_p, bank)


class HistoryEncoder(nn.Module):
    """Recurrent encoder over the last h state vectors (newest last)."""

    def __init__(self, state_dim: int, hidden: int = 128):
        super().__init__()
        self.state_dim = state_dim
        self.hidden = hidden
        self.lstm = nn.LSTM(state_dim, hidden, batch_first=True)

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        """(B, T, state_dim) -> (B, hidden): final hidden state."""
        _, (h_n, _) = self.lstm(window)
        return h_n[-1]


class ActorCritic(nn.Module):
    """Trunk + three categorical action heads + value head.

    Action heads combine a translation-equivariant correlation over the
    heatmap marginals of the current frame (one small 1-D kernel shared
    across cells) with a dense contribution from the trunk, so a policy
    learned at one error cell transfers to every other cell.
    """

    def __init__(
        self,
        n: int = POSITION_GRID_N,
        ori_bins: int = ORIENTATION_BINS,
        hidden: int = 192,
        history: int = 0,
        encoder_hidden: int = 128,
    ):
        super().__init__()
        self.n = n
        self.ori_bins = ori_bins
        self.state_dim = n * n + ori_bins
        self.history = history
        self.encoder = HistoryEncoder(self.state_dim, encoder_hidden) if history > 0 else None
        trunk_in = encoder_hidden if self.encoder is not None else self.state_dim
        self.trunk = nn.Sequential(
            nn.Linear(trunk_in, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, hidden), nn.ReLU(inplace=True)
        )
        self.head_dx = nn.Linear(hidden, n)
        self.head_dy = nn.Linear(hidden, n)
        self.head_dt = nn.Linear(hidden, ori_bins)
        self.value = nn.Linear(hidden, 1)
        self.corr_xy = nn.Conv1d(1, 1, kernel_size=9, padding=4)
        self.corr_t = nn.Conv1d(1, 1, kernel_size=5, padding=2)
        self.corr_gain = nn.Parameter(torch.zeros(3))

    def arch(self) -> dict:
        return {
            "n": self.n,
            "ori_bins": self.ori_bins,
            "hidden": self.head_dx.in_features,
            "history": self.history,
            "encoder_hidden": self.encoder.hidden if self.encoder else 0,
        }

    def _marginal_logits(self, current: torch.Tensor):
        b = current.shape[0]
        hm = current[:, : self.n * self.n].view(b, self.n, self.n)
        ori = current[:, self.n * self.n :]
        mx = hm.sum(dim=2, keepdim=True).transpose(1, 2)  # (B, 1, n)
        my = hm.sum(dim=1, keepdim=True)  # (B, 1, n)
        lx = self.corr_xy(mx).squeeze(1).flip(1)
        ly = self.corr_xy(my).squeeze(1).flip(1)
        lt = self.corr_t(ori.unsqueeze(1)).squeeze(1).flip(1)
        return lx, ly, lt

    def forward(self, state: torch.Tensor):
        """state: (B, state_dim) or, with history, (B, T, state_dim).

        Returns ((logits_dx, logits_dy, logits_dt), value).
        """
        if self.encoder is not None:
            if state.dim() != 3:
                raise ValueError("recurrent policy expects a (B, T, state_dim) window")
            current = state[:, -1]
            h = self.trunk(self.encoder(state))
        else:
            current = state
            h = self.trunk(state)
        lx, ly, lt = self._marginal_logits(current)
        g = torch.exp(self.corr_gain)
        logits = (
            self.head_dx(h) + g[0] * lx,
            self.head_dy(h) + g[1] * ly,
            self.head_dt(h) + g[2] * lt,
        )
        return logits, self.value(h).squeeze(-1)


class E2EPolicyNet(nn.Module):
    """Convolutional actor-critic over the segmented image itself."""

    def __init__(self, n: int = POSITION_GRID_N, ori_bins: int = ORIENTATION_BINS, width: int = 16):
        super().__init__()
        self.n = n
        self.ori_bins = ori_bins
        self.width = width
        w = width
        self.conv = nn.Sequential(
            nn.Conv2d(3, w, 5, stride=2, padding=2), nn.ReLU(inplace=True),
            nn.Conv2d(w, w * 2, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(w * 2, w * 2, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(w * 2, w * 2, 3, stride=2, padding=1), nn.ReLU(inplace=True),
        )
        with torch.no_grad():
            feat = self.conv(torch.zeros(1, 3, IMG_H, IMG_W))
        self.flat_dim = int(np.prod(feat.shape[1:]))
        self.fc = nn.Sequential(nn.Linear(self.flat_dim, 256), nn.ReLU(inplace=True))
        self.head_dx = nn.Linear(256, n)
        self.head_dy = nn.Linear(256, n)
        self.head_dt = nn.Linear(256, ori_bins)
        self.value = nn.Linear(256, 1)

    def arch(self) -> dict:
        return {"n": self.n, "ori_bins": self.ori_bins, "width": self.width}

    def forward(self, labels: torch.Tensor):
        """(B, H, W) label image -> ((logits_dx, logits_dy, logits_dt), value)."""
        x = one_hot_labels(labels)
        h = self.fc(self.conv(x).flatten(1))
        logits = (self.head_dx(h), self.head_dy(h), self.head_dt(h))
        return logits, self.value(h).squeeze(-1)


_MODEL_KINDS = {
    "segmentation": SegmentationNet,
    "position": PositionNet,
    "orientation": OrientationNet,
    "actor_critic": ActorCritic,
    "e2e_policy": E2EPolicyNet,
}


def save_checkpoint(model: nn.Module, kind: str, path: str | Path, meta: dict | None = None) -> None:
    if kind not in _MODEL_KINDS:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "arch": model.arch(),
        "state_dict": model.state_dict(),
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')!r}")
    kind = payload["kind"]
    arch = dict(payload["arch"])
    if "principal_rc" in arch:
        arch["principal_rc"] = tuple(arch["principal_rc"])
    model = _MODEL_KINDS[kind](**arch)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload["meta"] | {"kind": kind}
