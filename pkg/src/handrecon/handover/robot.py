"""Robot configuration and straight-line gripper kinematics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ..geometry import RigidTransform
from .grasps import GRIPPER_BOX, MAX_OPENING


def _home_rotation() -> np.ndarray:
    # approach +x (away from the robot), closing axis along world y
    return np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class RobotConfig:
    base: RigidTransform = field(default_factory=RigidTransform.identity)  # base -> world
    home: RigidTransform = field(default_factory=lambda: RigidTransform(_home_rotation(), (0.3, 0.0, 0.45)))
    arm_speed: float = 0.25       # m/s
    gripper_speed: float = 0.1    # m/s, finger closing speed
    delivery_target: tuple[float, float, float] = (0.35, -0.35, 0.0)  # world, on the table
    standoff: float = 0.15
    pose_weight: float = 0.1      # metres per radian
    max_opening: float = MAX_OPENING
    gripper_box: tuple[float, float, float] = GRIPPER_BOX
    spill_tilt_deg: float = 45.0

    def __post_init__(self):
        if self.arm_speed <= 0 or self.gripper_speed <= 0:
            raise ValueError("speeds must be positive")
        if self.standoff < 0:
            raise ValueError("standoff must be non-negative")

    def home_world(self) -> RigidTransform:
        """Home pose (given in the base frame) expressed in the world frame."""
        return self.base @ self.home


def pose_distance(a: RigidTransform, b: RigidTransform, weight: float = 0.1) -> float:
    """Translation distance plus ``weight`` times the relative rotation angle."""
    return float(np.linalg.norm(a.translation - b.translation) + weight * a.rotation_angle_to(b))


def step_toward(current: RigidTransform, target: RigidTransform, max_step: float) -> tuple[RigidTransform, bool]:
    """Move up to ``max_step`` metres along the straight line to ``target``.

    Orientation is interpolated in proportion to the translation covered.
    Returns the new pose and whether the target was reached (then exactly).
    """
    delta = target.translation - current.translation
    dist = float(np.linalg.norm(delta))
    if dist <= max_step:
        return target, True
    f = max_step / dist
    rel = Rotation.from_matrix(current.rotation.T @ target.rotation).as_rotvec()
    rot = current.rotation @ Rotation.from_rotvec(f * rel).as_matrix()
    u, _, vt = np.linalg.svd(rot)
    return RigidTransform(u @ vt, current.translation + f * delta), False
