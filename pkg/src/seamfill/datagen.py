"""Automatic data collection and labeling.

Randomizing the peg pose relative to the hole yields (image, mask,
displacement) triples with exact labels for free: the mask comes from the
renderer, the aligning displacement is the negated pose error, and a
synthetic flat-color image with domain noise stands in for the camera.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import heatmaps, render
from .render import CameraModel
from .shapes import ShapeSpec
from .simcore import Pose

DATASET_MANIFEST_VERSION = 1

# flat colors per label for the synthetic camera image (RGB)
_LABEL_COLORS = np.array(
    [
        [104, 104, 104],  # background: gray desk
        [70, 120, 200],  # peg: blue
        [24, 24, 24],  # seam: dark gap
    ],
    dtype=np.uint8,
)


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LabeledSample:
    """One labelled observation; `displacement` aligns the peg in one step."""

    mask: np.ndarray
    pose: Pose
    displacement: tuple[float, float, float]
    shape_id: str
    rgb: np.ndarray | None = None


@dataclass
class SampleRef:
    sample_id: str
    shape_id: str
    family: str
    pose: tuple[float, float, float]
    displacement: tuple[float, float, float]
    mask_path: str
    rgb_path: str | None


@dataclass
class DatasetManifest:
    root: Path
    split: str
    seed: int
    families: list[str]
    error_ranges: tuple[float, float]
    samples: list[SampleRef]

    def save(self) -> Path:
        doc = {
            "format_version": DATASET_MANIFEST_VERSION,
            "split": self.split,
            "seed": self.seed,
            "families": self.families,
            "error_ranges": list(self.error_ranges),
            "samples": [
                {
                    "id": s.sample_id,
                    "shape_id": s.shape_id,
                    "family": s.family,
                    "pose": list(s.pose),
                    "displacement": list(s.displacement),
                    "mask": s.mask_path,
                    "rgb": s.rgb_path,
                }
                for s in self.samples
            ],
        }
        path = self.root / "manifest.json"
        path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
        return path

    @staticmethod
    def load(root: str | Path) -> "DatasetManifest":
        root = Path(root)
        doc = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        if doc.get("format_version") != DATASET_MANIFEST_VERSION:
            raise GenerationError(f"unsupported dataset version {doc.get('format_version')!r}")
        samples = [
            SampleRef(
                sample_id=e["id"],
                shape_id=e["shape_id"],
                family=e["family"],
                pose=tuple(e["pose"]),
                displacement=tuple(e["displacement"]),
                mask_path=e["mask"],
                rgb_path=e["rgb"],
            )
            for e in doc["samples"]
        ]
        return DatasetManifest(
            root=root,
            split=doc["split"],
            seed=doc["seed"],
            families=doc["families"],
            error_ranges=tuple(doc["error_ranges"]),
            samples=samples,
        )

    def load_mask(self, ref: SampleRef) -> np.ndarray:
        return render.load_label_image(self.root / ref.mask_path)

    def load_rgb(self, ref: SampleRef) -> np.ndarray:
        if ref.rgb_path is None:
            raise GenerationError(f"sample {ref.sample_id} has no rgb image")
        return np.asarray(Image.open(self.root / ref.rgb_path).convert("RGB"))


def render_flat_rgb(mask: np.ndarray) -> np.ndarray:
    return _LABEL_COLORS[mask]


def add_domain_noise(rgb: np.ndarray, severity: float, rng: np.random.Generator) -> np.ndarray:
    """Brightness jitter + Gaussian noise + small hue shift, rgb only."""
    if not 0.0 <= severity <= 1.0:
        raise ValueError("severity must be in [0, 1]")
    if severity == 0.0:
        return rgb.copy()
    img = rgb.astype(np.float32)
    img *= 1.0 + severity * rng.uniform(-0.25, 0.25)
    img += severity * rng.uniform(-12.0, 12.0, size=3)  # per-channel hue shift
    img += rng.normal(0.0, 14.0 * severity, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def sample_pose(
    rng: np.random.Generator,
    pos_range: float,
    ori_range: float,
    on_grid_theta: bool = False,
) -> Pose:
    x, y = rng.uniform(-pos_range, pos_range, size=2)
    theta = rng.uniform(-ori_range, ori_range)
    if on_grid_theta:
        step = heatmaps.ORIENTATION_STEP_DEG
        theta = step * np.clip(np.rint(theta / step), -ori_range / step, ori_range / step)
    return Pose(x=float(x), y=float(y), theta=float(theta))


def make_sample(
    shape: ShapeSpec,
    pose: Pose,
    camera: CameraModel,
    rng: np.random.Generator | None = None,
    noise: float = 0.0,
    with_rgb: bool = True,
) -> LabeledSample:
    mask = render.render_seg(shape, pose, camera)
    rgb = None
    if with_rgb:
        rgb = render_flat_rgb(mask)
        if noise > 0.0 and rng is not None:
            rgb = add_domain_noise(rgb, noise, rng)
    return LabeledSample(
        mask=mask,
        pose=pose,
        displacement=(-pose.x, -pose.y, -pose.theta),
        shape_id=shape.id,
        rgb=rgb,
    )


def generate_dataset(
    shapes: list[ShapeSpec],
    count: int,
    out_dir: str | Path,
    seed: int = 0,
    error_ranges: tuple[float, float] = (10.0, 10.0),
    noise: float = 0.5,
    split: str = "train",
    camera: CameraModel | None = None,
    with_rgb: bool = True,
    on_grid_theta: bool = False,
) -> DatasetManifest:
    """Write `count` samples per shape plus a manifest; deterministic in seed."""
    if count < 1:
        raise GenerationError("count must be >= 1")
    if not shapes:
        raise GenerationError("need at least one shape")
    camera = camera or CameraModel()
    out = Path(out_dir)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    refs: list[SampleRef] = []
    try:
        for shape in shapes:
            rng = np.random.default_rng([seed, *shape.id.encode()])
            for k in range(count):
                pose = sample_pose(rng, error_ranges[0], error_ranges[1], on_grid_theta)
                sample = make_sample(shape, pose, camera, rng, noise, with_rgb)
                sid = f"{shape.id}_{k:05d}"
                mask_path = f"{sid}_mask.png"
                render.save_label_image(sample.mask, out / mask_path)
                rgb_path = None
                if sample.rgb is not None:
                    rgb_path = f"{sid}_rgb.png"
                    Image.fromarray(sample.rgb).save(out / rgb_path)
                refs.append(
                    SampleRef(
                        sample_id=sid,
                        shape_id=shape.id,
                        family=shape.family,
                        pose=(pose.x, pose.y, pose.theta),
                        displacement=sample.displacement,
                        mask_path=mask_path,
                        rgb_path=rgb_path,
                    )
                )
        manifest = DatasetManifest(
            root=out,
            split=split,
            seed=seed,
            families=sorted({s.family for s in shapes}),
            error_ranges=error_ranges,
            samples=refs,
        )
        manifest.save()
        return manifest
    except OSError as exc:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        else:
            for ref in refs:
                (out / ref.mask_path).unlink(missing_ok=True)
                if ref.rgb_path:
                    (out / ref.rgb_path).unlink(missing_ok=True)
        raise GenerationError(f"dataset generation failed: {exc}") from exc


def make_orientation_batch(
    sample: LabeledSample, camera: CameraModel
) -> tuple[np.ndarray, list[np.ndarray], int]:
    """Peg-only image, the 11-rotation seam bank, and the matching bank index.

    Bank index k holds the seam presence rotated by (k - 5) * 2 degrees about
    the hole centre; index 5 is the unrotated seam. Rotation interpolates
    (values in [0, 1]) because nearest-neighbour resampling aliases the
    sub-pixel contour shifts that separate adjacent 2-degree bins. The
    positive index quantizes the pose's angular error, ties toward zero.
    """
    peg_only, seam_only = render.split_channels(sample.mask)
    seam_f = (seam_only == render.SEAM).astype(np.float64)
    bank = [
        render.rotate_mask_bilinear(seam_f, heatmaps.orientation_bin_angle(k), camera.principal_point)
        for k in range(heatmaps.ORIENTATION_BINS)
    ]
    positive = heatmaps.quantize_orientation(sample.pose.theta)
    return peg_only, bank, positive
