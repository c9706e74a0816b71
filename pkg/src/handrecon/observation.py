from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BoundingBox2D, CameraModel, Mask, RigidTransform


@dataclass(frozen=True, eq=False)
class ViewObservation:
    """Encoder input for one camera: a background-removed square crop.

    ``camera`` is the crop camera (intrinsics already shifted and scaled to
    the crop), ``wrist_pose`` maps the wrist frame to the world.
    """

    image: np.ndarray  # (3, H, W)
    mask_hand: Mask
    mask_object: Mask
    wrist_pose: RigidTransform
    camera: CameraModel

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float32)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ValueError(f"image must be 3 x H x W, got {img.shape}")
        for m in (self.mask_hand, self.mask_object):
            if m.shape != img.shape[1:]:
                raise ValueError(f"mask shape {m.shape} does not match image {img.shape[1:]}")
        if (self.camera.height, self.camera.width) != img.shape[1:]:
            raise ValueError("camera image size does not match the image")
        object.__setattr__(self, "image", img)


@dataclass(frozen=True, eq=False)
class FramePerception:
    """Everything the perception stack reports for one view of one frame."""

    camera: CameraModel  # full-frame camera
    box_hand: BoundingBox2D | None
    box_object: BoundingBox2D | None
    mask_hand: Mask      # full frame
    mask_object: Mask    # full frame
    wrist_pose: RigidTransform
    centroid_px: np.ndarray | None
    observation: ViewObservation | None

    @property
    def detected(self) -> bool:
        return self.box_hand is not None and self.box_object is not None and self.observation is not None
