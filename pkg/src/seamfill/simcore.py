"""Deterministic planar insertion environment.

The peg moves in (x, y, theta) relative to the hole frame; a 1-D spring
contact in z with a PI force loop keeps the peg pressed on the surface.
Success is geometric: the peg cross-section fits inside the hole opening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import geometry, render
from .render import BACKGROUND, CameraModel
from .shapes import ShapeSpec


class ConfigurationError(ValueError):
    pass


class ProtocolError(RuntimeError):
    """An operation was called in a state the episode contract forbids."""


def normalize_angle(theta_deg: float) -> float:
    """Wrap to (-180, 180]."""
    wrapped = math.fmod(theta_deg + 180.0, 360.0)
    if wrapped <= 0:
        wrapped += 360.0
    return wrapped - 180.0


@dataclass(frozen=True)
class Pose:
    """Planar pose of the peg in the hole frame (mm, mm, deg) plus height z."""

    x: float
    y: float
    theta: float
    z: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(self.theta))
        if self.z < 0:
            raise ValueError("z must be >= 0")

    def moved(self, dx: float, dy: float, dtheta: float) -> "Pose":
        return replace(self, x=self.x + dx, y=self.y + dy, theta=self.theta + dtheta)


@dataclass(frozen=True)
class EnvConfig:
    shape: ShapeSpec
    init_pos_range: float = 10.0  # mm, symmetric
    init_ori_range: float = 10.0  # deg, symmetric
    k_max: int = 20
    px_per_mm: float = 2.0
    force_target: float = 5.0  # N
    spring_k: float = 10.0  # N/mm
    seed: int = 0
    action_bound_mm: float = 5.0
    action_bound_deg: float = 5.0
    workspace_mm: float = 35.0  # |x|,|y| clamp keeping the peg in view

    def validate(self) -> None:
        if not (0 < self.init_pos_range <= 10):
            raise ConfigurationError("init_pos_range must be in (0, 10] mm")
        if not (0 < self.init_ori_range <= 10):
            raise ConfigurationError("init_ori_range must be in (0, 10] deg")
        if self.k_max < 1:
            raise ConfigurationError("k_max must be >= 1")
        if self.px_per_mm <= 0 or self.force_target <= 0 or self.spring_k <= 0:
            raise ConfigurationError("px_per_mm, force_target and spring_k must be positive")
        if self.action_bound_mm <= 0 or self.action_bound_deg <= 0:
            raise ConfigurationError("action bounds must be positive")

    def camera(self) -> CameraModel:
        return CameraModel(px_per_mm=self.px_per_mm)


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    success: bool
    terminated: bool
    contact_force: float
    step_index: int


def check_success(shape: ShapeSpec, pose: Pose, samples_per_edge: int = 16) -> bool:
    """True iff the transformed peg cross-section lies inside the hole opening.

    Vertices plus sampled edge points are tested so concave hole contours
    cannot slip between vertex checks.
    """
    peg = geometry.transform_polygon(shape.peg_polygon, pose.x, pose.y, pose.theta)
    boundary = geometry.sample_boundary(peg, samples_per_edge)
    return bool(np.all(geometry.points_in_polygon(boundary, shape.hole_polygon)))


def pi_force_step(
    current_z: float,
    measured_force: float,
    target_force: float,
    gains: tuple[float, float],
    integral_state: float,
) -> tuple[float, float]:
    """One PI iteration of the z force loop.

    Returns (dz, new_integral); dz is added to z, so it is negative while
    the contact force is below target (the peg presses further down).
    """
    kp, ki = gains
    if kp <= 0 or ki <= 0:
        raise ConfigurationError("PI gains must be positive")
    error = target_force - measured_force
    integral = integral_state + error
    dz = -(kp * error + ki * integral)
    return dz, integral


def spring_contact_force(z_command: float, spring_k: float) -> float:
    """Linear spring: force grows with penetration depth (z below surface)."""
    return spring_k * max(0.0, -z_command)


def inject_occlusion(image: np.ndarray, occluder_px: np.ndarray | None) -> np.ndarray:
    """Set pixels under the occluder polygon (pixel coords) to background."""
    if occluder_px is None or len(occluder_px) < 3:
        return image.copy()
    mask = geometry.rasterize_polygon(
        np.asarray(occluder_px, dtype=float), image.shape[0], image.shape[1]
    )
    out = image.copy()
    out[mask] = BACKGROUND
    return out


_PI_GAINS = (0.02, 0.005)  # mm/N
_PI_SETTLE_ITERS = 200


class PlanarInsertionEnv:
    """Single peg-hole episode driver.

    One instance is single-threaded; run independent instances (with
    distinct seeds) for parallel rollouts.
    """

    def __init__(self, config: EnvConfig):
        config.validate()
        self.config = config
        self.camera = config.camera()
        self.pose: Pose | None = None
        self._z_cmd = 1.0  # starts above the surface
        self._force_integral = 0.0
        self._contact_force = 0.0
        self._step_index = 0
        self._terminated = True

    def _settle_force(self, iters: int) -> None:
        for _ in range(iters):
            force = spring_contact_force(self._z_cmd, self.config.spring_k)
            dz, self._force_integral = pi_force_step(
                self._z_cmd, force, self.config.force_target, _PI_GAINS, self._force_integral
            )
            self._z_cmd += dz
        self._contact_force = spring_contact_force(self._z_cmd, self.config.spring_k)

    def reset(self, seed: int | None = None) -> tuple[Pose, StepResult]:
        rng = np.random.default_rng(self.config.seed if seed is None else seed)
        x, y = rng.uniform(-self.config.init_pos_range, self.config.init_pos_range, size=2)
        theta = rng.uniform(-self.config.init_ori_range, self.config.init_ori_range)
        self._z_cmd = 1.0
        self._force_integral = 0.0
        self._settle_force(_PI_SETTLE_ITERS)
        self.pose = Pose(x=x, y=y, theta=theta, z=max(0.0, self._z_cmd))
        self._step_index = 0
        self._terminated = False
        obs = render.render_seg(self.config.shape, self.pose, self.camera)
        result = StepResult(
            observation=obs,
            success=False,
            terminated=False,
            contact_force=self._contact_force,
            step_index=0,
        )
        return self.pose, result

    def step(self, action: tuple[float, float, float]) -> tuple[Pose, StepResult]:
        if self._terminated or self.pose is None:
            raise ProtocolError("step() after episode termination (reset first)")
        bm, bd = self.config.action_bound_mm, self.config.action_bound_deg
        dx = float(np.clip(action[0], -bm, bm))
        dy = float(np.clip(action[1], -bm, bm))
        dth = float(np.clip(action[2], -bd, bd))
        ws = self.config.workspace_mm
        new_x = float(np.clip(self.pose.x + dx, -ws, ws))
        new_y = float(np.clip(self.pose.y + dy, -ws, ws))
        self._settle_force(30)
        self.pose = Pose(
            x=new_x, y=new_y, theta=self.pose.theta + dth, z=max(0.0, self._z_cmd)
        )
        self._step_index += 1
        success = check_success(self.config.shape, self.pose)
        self._terminated = success or self._step_index >= self.config.k_max
        obs = render.render_seg(self.config.shape, self.pose, self.camera)
        result = StepResult(
            observation=obs,
            success=success,
            terminated=self._terminated,
            contact_force=self._contact_force,
            step_index=self._step_index,
        )
        return self.pose, result

    @property
    def terminated(self) -> bool:
        return self._terminated

    @property
    def step_index(self) -> int:
        return self._step_index


_ENV_CONFIG_FLOATS = {
    "init_pos_range",
    "init_ori_range",
    "px_per_mm",
    "force_target",
    "spring_k",
    "action_bound_mm",
    "action_bound_deg",
    "workspace_mm",
}
_ENV_CONFIG_INTS = {"k_max", "seed"}


def load_env_config(path: str | Path, shapes: dict[str, ShapeSpec]) -> EnvConfig:
    """Read a `key = value` config file; `shape` names an id in `shapes`."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "shape":
            if val not in shapes:
                raise ConfigurationError(f"{path}:{lineno}: unknown shape id {val!r}")
            values["shape"] = shapes[val]
        elif key in _ENV_CONFIG_FLOATS:
            values[key] = float(val)
        elif key in _ENV_CONFIG_INTS:
            values[key] = int(val)
        else:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
    if "shape" not in values:
        raise ConfigurationError(f"{path}: missing required key 'shape'")
    cfg = EnvConfig(**values)  # type: ignore[arg-type]
    cfg.validate()
    return cfg
