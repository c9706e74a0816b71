"""On-disk scene dataset: one directory per seed.

Layout of ``<root>/scenes/<seed>/``::

    manifest.json        seed, category, sizes, grasp type, mass, full specs
    cameras.txt          per camera: name, width, height, 3 K rows, 3 [R|t] rows
    obs_L.ppm obs_R.ppm  crop silhouette images (hand, object, edge as RGB)
    mask_L_hand.pgm ...  full-resolution masks
    tsdf_hand.tsdf tsdf_object.tsdf
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..geometry import CameraModel, Mask, RigidTransform, read_tsdf, write_tsdf
from ..geometry.camera import _unchecked_camera
from ..observation import ViewObservation
from .scene import SceneSample
from .shapes import HandSpec, ObjectSpec

VIEWS = ("L", "R")


class DatasetError(ValueError):
    pass


def write_pnm(path: str | Path, image: np.ndarray) -> None:
    """Binary PGM for (H, W), PPM for (H, W, 3); values in [0, 1] or uint8."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img.astype(np.float64) * 255), 0, 255).astype(np.uint8)
    if not (img.ndim == 2 or (img.ndim == 3 and img.shape[2] == 3)):
        raise ValueError(f"cannot write image of shape {img.shape}")
    Image.fromarray(img).save(path, format="PPM")


def read_pnm(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"{path}: unreadable image ({exc})") from exc


def format_camera(name: str, cam: CameraModel) -> str:
    rows = [f"{name} {cam.width} {cam.height}"]
    rows += [" ".join(repr(float(v)) for v in r) for r in cam.intrinsics]
    m = cam.extrinsic.matrix()[:3]
    rows += [" ".join(repr(float(v)) for v in r) for r in m]
    return "\n".join(rows) + "\n"


def parse_cameras(text: str) -> dict[str, CameraModel]:
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) % 7:
        raise DatasetError("camera file must hold 7 lines per camera")
    cams = {}
    for i in range(0, len(lines), 7):
        name, w, h = lines[i][0], int(lines[i][1]), int(lines[i][2])
        k = np.array(lines[i + 1:i + 4], float)
        rt = np.array(lines[i + 4:i + 7], float)
        ext = RigidTransform(rt[:, :3], rt[:, 3])
        cams[name] = _unchecked_camera(k, ext, (w, h)) if name.startswith("crop") else CameraModel(k, ext, (w, h))
    return cams


def manifest(scene: SceneSample) -> dict:
    return {
        "seed": scene.seed,
        "category": scene.object.category,
        "sizes": dict(scene.object.sizes),
        "grasp_type": scene.hand.grasp_type,
        "mass": scene.object.mass,
        "object": scene.object.to_dict(),
        "hand": scene.hand.to_dict(),
    }


def write_scene(scene: SceneSample, root: str | Path) -> Path:
    out = Path(root) / "scenes" / str(scene.seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest(scene), indent=2, sort_keys=True) + "\n")
    cams = "".join(format_camera(v, c) for v, c in zip(VIEWS, scene.cameras))
    cams += "".join(format_camera(f"crop_{v}", o.camera) for v, o in zip(VIEWS, scene.observations))
    (out / "cameras.txt").write_text(cams)
    for v, obs, (m_h, m_o) in zip(VIEWS, scene.observations, scene.gt_masks):
        write_pnm(out / f"obs_{v}.ppm", np.moveaxis(obs.image, 0, -1))
        write_pnm(out / f"mask_{v}_hand.pgm", m_h.bitmap.astype(np.uint8) * 255)
        write_pnm(out / f"mask_{v}_object.pgm", m_o.bitmap.astype(np.uint8) * 255)
    write_tsdf(scene.gt_tsdf_hand, out / "tsdf_hand.tsdf")
    write_tsdf(scene.gt_tsdf_object, out / "tsdf_object.tsdf")
    return out


def read_scene(path: str | Path) -> SceneSample:
    path = Path(path)
    try:
        meta = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{path}: unreadable manifest ({exc})") from exc
    obj = ObjectSpec.from_dict(meta["object"])
    hand = HandSpec.from_dict(meta["hand"])
    cams = parse_cameras((path / "cameras.txt").read_text())
    observations, masks = [], []
    for v in VIEWS:
        img = np.moveaxis(read_pnm(path / f"obs_{v}.ppm"), -1, 0).astype(np.float32) / 255.0
        observations.append(ViewObservation(img, Mask(img[0] > 0.5, "hand"), Mask(img[1] > 0.5, "object"),
                                            hand.wrist_pose, cams[f"crop_{v}"]))
        masks.append((Mask(read_pnm(path / f"mask_{v}_hand.pgm") > 127, "hand"),
                      Mask(read_pnm(path / f"mask_{v}_object.pgm") > 127, "object")))
    return SceneSample(int(meta["seed"]), obj, hand, (cams["L"], cams["R"]), read_tsdf(path / "tsdf_hand.tsdf"),
                       read_tsdf(path / "tsdf_object.tsdf"), tuple(observations), tuple(masks))


def list_scenes(root: str | Path) -> list[Path]:
    base = Path(root) / "scenes"
    if not base.is_dir():
        raise DatasetError(f"{root}: no scenes/ directory")
    return sorted((p for p in base.iterdir() if (p / "manifest.json").exists()), key=lambda p: int(p.name))
