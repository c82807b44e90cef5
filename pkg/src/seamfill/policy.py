"""Closed-loop controllers over the perception heatmaps.

Three policies share one action vocabulary (the heatmap grids):
  - sfss: negate the heatmap argmaxes, one estimate per step, applied
    recursively for multi-step runs;
  - sfms: actor-critic over the current frame's flattened heatmaps;
  - mfms: actor-critic over a recurrent encoding of the last few frames;
  - e2e:  actor-critic directly on the segmented image (baseline).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import heatmaps, render
from .models import ActorCritic, E2EPolicyNet, OrientationNet, PositionNet
from .render import CameraModel
from .simcore import PlanarInsertionEnv, Pose, inject_occlusion

POLICY_KINDS = ("sfss", "sfms", "mfms", "e2e")

EPISODE_LOG_VERSION = 1


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.01
    beta: float = 0.01
    k_max: int = 20

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")


def reward(success: bool, loss_pos: float, loss_ori: float, cfg: RewardConfig) -> float:
    """Dense reward: +1 on success, -1/k_max otherwise, both minus the
    weighted perception losses of the current frame."""
    base = 1.0 if success else -1.0 / cfg.k_max
    return base - cfg.alpha * loss_pos - cfg.beta * loss_ori


def sfss_action(
    pos_heatmap: np.ndarray, ori_heatmap: np.ndarray, camera: CameraModel
) -> tuple[float, float, float]:
    """Negate the argmax of each heatmap: the hot cell is the measured error.

    Ties resolve to the first cell in row-major order of the (i, j) grid.
    """
    di, dj = heatmaps.heatmap_argmax_displacement(pos_heatmap)
    k = int(np.argmax(ori_heatmap))
    dx_mm, dy_mm = render.pixel_to_world(camera, (di, dj))
    return -dx_mm, -dy_mm, -heatmaps.orientation_bin_angle(k)


class PerceptionStack:
    """Frozen position + orientation nets turning observations into heatmaps."""

    def __init__(self, pos_model: PositionNet, ori_model: OrientationNet, camera: CameraModel | None = None):
        self.pos = pos_model.eval()
        self.ori = ori_model.eval()
        self.camera = camera or CameraModel()
        self.n = pos_model.n

    @torch.no_grad()
    def heatmaps(self, observation: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Label image -> (position (n, n), orientation (11,)) heatmaps."""
        obs_t = torch.from_numpy(observation).unsqueeze(0)
        pos_hm = self.pos(obs_t)[0].numpy()
        peg_only, seam_only = render.split_channels(observation)
        sims = self.ori.similarities_fast(
            torch.from_numpy((peg_only == render.PEG).astype(np.float32)),
            torch.from_numpy((seam_only == render.SEAM).astype(np.float32)),
        )
        return pos_hm.astype(np.float64), sims.numpy().astype(np.float64)

    def frame_losses(self, pos_hm: np.ndarray, ori_hm: np.ndarray, pose: Pose) -> tuple[float, float]:
        """Perception losses against simulator ground truth, for the reward.

        The summed heatmap BCE is divided by n^2 so the loss penalty cannot
        drown the +/-1 success signal at the default weights.
        """
        di, dj = render.world_to_pixel(self.camera, (pose.x, pose.y))
        di, dj = heatmaps.clip_to_grid(di, dj, self.n)
        target = heatmaps.make_position_target(di, dj, self.n)
        loss_pos = heatmaps.bce_heatmap_loss(pos_hm, target) / (self.n * self.n)
        loss_ori = heatmaps.contrastive_loss_mean(ori_hm, heatmaps.quantize_orientation(pose.theta))
        return loss_pos, loss_ori


def build_state(pos_hm: np.ndarray, ori_hm: np.ndarray) -> np.ndarray:
    """Flattened [position grid, orientation bins] policy state vector."""
    return np.concatenate([pos_hm.ravel(), ori_hm]).astype(np.float32)


def encode_history(actor: ActorCritic, window: list[np.ndarray]) -> np.ndarray:
    """Recurrent encoding of an ordered window of state vectors."""
    if actor.encoder is None:
        raise ValueError("actor has no history encoder")
    if not window:
        raise ValueError("history window is empty")
    with torch.no_grad():
        seq = torch.from_numpy(np.stack(window)).unsqueeze(0)
        return actor.encoder(seq)[0].numpy()


def pad_window(states: list[np.ndarray], h: int) -> list[np.ndarray]:
    """Last h states, front-padded by repeating the first observation."""
    if not states:
        raise ValueError("no states to window")
    recent = states[-h:]
    return [recent[0]] * (h - len(recent)) + recent


def decode_action_indices(a_dx: int, a_dy: int, a_dt: int, camera: CameraModel) -> tuple[float, float, float]:
    """Map discrete head indices to a (mm, mm, deg) command."""
    n_half = heatmaps.POSITION_GRID_N // 2
    dx_mm, dy_mm = render.pixel_to_world(camera, (a_dx - n_half, a_dy - n_half))
    return dx_mm, dy_mm, heatmaps.orientation_bin_angle(a_dt)


def select_action(
    logits: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    greedy: bool,
    generator: torch.Generator | None = None,
) -> tuple[int, int, int]:
    out = []
    for head in logits:
        probs = torch.softmax(head.squeeze(0), dim=-1)
        if greedy:
            out.append(int(torch.argmax(probs).item()))
        else:
            out.append(int(torch.multinomial(probs, 1, generator=generator).item()))
    return tuple(out)


@dataclass
class StepLog:
    step: int
    pose: tuple[float, float, float]
    action: tuple[float, float, float]
    reward: float
    loss_pos: float
    loss_ori: float
    success: bool
    occluded: bool = False


@dataclass
class EpisodeRecord:
    policy: str
    shape_id: str
    clearance: float
    seed: int | None
    success: bool
    steps: list[StepLog] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def to_jsonl(self) -> str:
        meta = {
            "type": "meta",
            "format_version": EPISODE_LOG_VERSION,
            "policy": self.policy,
            "shape_id": self.shape_id,
            "clearance": self.clearance,
            "seed": self.seed,
            "success": self.success,
            "n_steps": self.n_steps,
        }
        lines = [json.dumps(meta)]
        for s in self.steps:
            lines.append(
                json.dumps(
                    {
                        "type": "step",
                        "step": s.step,
                        "pose": list(s.pose),
                        "action": list(s.action),
                        "reward": s.reward,
                        "loss_pos": s.loss_pos,
                        "loss_ori": s.loss_ori,
                        "success": s.success,
                        "occluded": s.occluded,
                    }
                )
            )
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_jsonl(text: str) -> "EpisodeRecord":
        lines = [json.loads(line) for line in text.strip().splitlines()]
        meta = lines[0]
        if meta.get("type") != "meta" or meta.get("format_version") != EPISODE_LOG_VERSION:
            raise ValueError("not an episode log")
        rec = EpisodeRecord(
            policy=meta["policy"],
            shape_id=meta["shape_id"],
            clearance=meta["clearance"],
            seed=meta["seed"],
            success=meta["success"],
        )
        for e in lines[1:]:
            rec.steps.append(
                StepLog(
                    step=e["step"],
                    pose=tuple(e["pose"]),
                    action=tuple(e["action"]),
                    reward=e["reward"],
                    loss_pos=e["loss_pos"],
                    loss_ori=e["loss_ori"],
                    success=e["success"],
                    occluded=e["occluded"],
                )
            )
        return rec

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "EpisodeRecord":
        return EpisodeRecord.from_jsonl(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class OcclusionSpec:
    """Occluder polygon (pixel coords) applied for the first `steps` frames."""

    polygon_px: np.ndarray
    steps: int = 3


def default_occluder(camera: CameraModel | None = None, steps: int = 3) -> OcclusionSpec:
    """Rectangle blanking most of the seam's left half plus part of the peg."""
    camera = camera or CameraModel()
    cx, cy = camera.principal_point
    poly = np.array(
        [[cx - 38, cy - 38], [cx + 4, cy - 38], [cx + 4, cy + 38], [cx - 38, cy + 38]]
    )
    return OcclusionSpec(polygon_px=poly, steps=steps)


def run_episode(
    env: PlanarInsertionEnv,
    policy: str,
    perception: PerceptionStack | None = None,
    actor: ActorCritic | E2EPolicyNet | None = None,
    seed: int | None = None,
    occlusion: OcclusionSpec | None = None,
    greedy: bool = True,
    generator: torch.Generator | None = None,
) -> EpisodeRecord:
    """Roll one episode: render -> perception -> state -> action -> step."""
    if policy not in POLICY_KINDS:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICY_KINDS}")
    if policy != "e2e" and perception is None:
        raise ValueError(f"policy {policy!r} needs a PerceptionStack")
    if policy in ("sfms", "mfms", "e2e") and actor is None:
        raise ValueError(f"policy {policy!r} needs a trained actor")

    pose, result = env.reset(seed=seed)
    cfg = RewardConfig(k_max=env.config.k_max)
    camera = env.camera
    record = EpisodeRecord(
        policy=policy,
        shape_id=env.config.shape.id,
        clearance=env.config.shape.clearance,
        seed=seed,
        success=False,
    )
    states: list[np.ndarray] = []
    history = actor.history if isinstance(actor, ActorCritic) and actor.history else 0

    while not env.terminated:
        obs = result.observation
        occluded = occlusion is not None and env.step_index < occlusion.steps
        if occluded:
            obs = inject_occlusion(obs, occlusion.polygon_px)

        if policy == "e2e":
            with torch.no_grad():
                logits, _ = actor(torch.from_numpy(obs).unsqueeze(0))
            a_idx = select_action(logits, greedy, generator)
            action = decode_action_indices(*a_idx, camera)
            loss_pos = loss_ori = 0.0
        else:
            pos_hm, ori_hm = perception.heatmaps(obs)
            loss_pos, loss_ori = perception.frame_losses(pos_hm, ori_hm, pose)
            if policy == "sfss":
                action = sfss_action(pos_hm, ori_hm, camera)
            else:
                state = build_state(pos_hm, ori_hm)
                states.append(state)
                if policy == "mfms":
                    window = pad_window(states, history)
                    inp = torch.from_numpy(np.stack(window)).unsqueeze(0)
                else:
                    inp = torch.from_numpy(state).unsqueeze(0)
                with torch.no_grad():
                    logits, _ = actor(inp)
                a_idx = select_action(logits, greedy, generator)
                action = decode_action_indices(*a_idx, camera)

        pose, result = env.step(action)
        r = reward(result.success, loss_pos, loss_ori, cfg)
        record.steps.append(
            StepLog(
                step=result.step_index,
                pose=(pose.x, pose.y, pose.theta),
                action=tuple(float(a) for a in action),
                reward=r,
                loss_pos=loss_pos,
                loss_ori=loss_ori,
                success=result.success,
                occluded=occluded,
            )
        )
    record.success = result.success
    return record
