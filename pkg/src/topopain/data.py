"""Frames, sequences, manifests and geometric face normalization.

Landmarks are stored as ``(x, y)`` pixel coordinates, ``x`` being the column
and ``y`` the row of the image array.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence as Seq

import numpy as np
from PIL import Image
from scipy import ndimage

N_LANDMARKS = 22
PAIN_AUS = (4, 6, 7, 9, 10, 43)

# Eye-centre indices of the bundled synthetic 22-point layout.  Real data sets
# must supply their own (manifest key "eye_indices").
DEFAULT_EYE_INDICES = (6, 9)

CANVAS_SHAPE = (128, 128)
CANVAS_ANCHOR = (64.0, 48.0)
INTER_OCULAR = 50.0


class ManifestError(ValueError):
    """Malformed manifest or referenced file; message names file and record."""


def prkachin_solomon(au: Mapping[int, float]) -> float:
    """Pain score ``AU4 + max(AU6, AU7) + max(AU9, AU10) + AU43``."""
    missing = [k for k in PAIN_AUS if k not in au or au[k] is None]
    if missing:
        raise ValueError(f"missing action units for pain score: {missing}")
    if any(au[k] < 0 for k in PAIN_AUS):
        raise ValueError("action-unit intensities must be non-negative")
    return float(au[4] + max(au[6], au[7]) + max(au[9], au[10]) + au[43])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Landmarks:
    points: np.ndarray
    left_eye: int = DEFAULT_EYE_INDICES[0]
    right_eye: int = DEFAULT_EYE_INDICES[1]

    def __post_init__(self):
        pts = _readonly(self.points)
        if pts.shape != (N_LANDMARKS, 2):
            raise ValueError(f"expected {N_LANDMARKS} (x, y) landmarks, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        if self.left_eye == self.right_eye:
            raise ValueError("eye-centre indices must be distinct")
        for k in (self.left_eye, self.right_eye):
            if not 0 <= k < N_LANDMARKS:
                raise ValueError(f"eye index {k} out of range")
        object.__setattr__(self, "points", pts)

    @property
    def eyes(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points[self.left_eye], self.points[self.right_eye]

    @property
    def inter_ocular(self) -> float:
        l, r = self.eyes
        return float(np.hypot(*(r - l)))

    def with_points(self, points: np.ndarray) -> "Landmarks":
        return replace(self, points=points)


@dataclass(frozen=True)
class Frame:
    image: np.ndarray
    landmarks: Landmarks
    subject_id: str
    sequence_id: str
    frame_index: int
    pain: float | None = None
    au: Mapping[int, float] | None = None
    normalized: bool = False

    def __post_init__(self):
        img = _readonly(self.image)
        if img.ndim != 2 or img.size == 0:
            raise ValueError("frame image must be a non-empty 2-D array")
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        object.__setattr__(self, "image", img)
        if self.au is not None:
            object.__setattr__(self, "au", {int(k): float(v) for k, v in self.au.items()})
            if self.pain is not None and all(k in self.au for k in PAIN_AUS):
                expected = prkachin_solomon(self.au)
                if abs(expected - self.pain) > 1e-9:
                    raise ValueError(
                        f"pain {self.pain} disagrees with action units (expected {expected})")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.subject_id, self.sequence_id, self.frame_index)


@dataclass(frozen=True)
class Sequence:
    frames: tuple[Frame, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("sequence must contain at least one frame")
        s, q = frames[0].subject_id, frames[0].sequence_id
        for a, b in zip(frames, frames[1:]):
            if b.frame_index <= a.frame_index:
                raise ValueError(f"frame indices not strictly increasing in sequence {q!r}")
        if any(f.subject_id != s or f.sequence_id != q for f in frames):
            raise ValueError("all frames of a sequence must share subject and sequence ids")
        object.__setattr__(self, "frames", frames)

    @property
    def subject_id(self) -> str:
        return self.frames[0].subject_id

    @property
    def sequence_id(self) -> str:
        return self.frames[0].sequence_id

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def pain(self) -> np.ndarray:
        """Ground-truth scores, NaN where unannotated."""
        return np.array([np.nan if f.pain is None else f.pain for f in self.frames])


# ---------------------------------------------------------------- manifests

def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=float)


def _read_landmark_text(path: Path) -> np.ndarray:
    rows = [line.split() for line in path.read_text().splitlines() if line.strip()]
    return np.array([[float(v) for v in r] for r in rows])


def load_manifest(path: str | os.PathLike) -> list[Sequence]:
    """Load every sequence listed in a JSON manifest.

    Image and landmark-file paths are resolved relative to the manifest.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot read manifest: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("sequences"), list):
        raise ManifestError(f"{path}: top-level object must hold a 'sequences' list")
    eyes = tuple(doc.get("eye_indices", DEFAULT_EYE_INDICES))
    root = path.parent
    out = []
    for si, rec in enumerate(doc["sequences"]):
        where = f"{path}: sequences[{si}]"
        try:
            subject, seq_id, frames = str(rec["subject"]), str(rec["sequence"]), rec["frames"]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{where}: missing field {exc}") from exc
        parsed = []
        for fi, fr in enumerate(frames):
            fwhere = f"{where}.frames[{fi}]"
            if "image" not in fr or "landmarks" not in fr:
                raise ManifestError(f"{fwhere}: 'image' and 'landmarks' are required")
            img_path = root / fr["image"]
            if not img_path.is_file():
                raise ManifestError(f"{fwhere}: image file not found: {img_path}")
            lm = fr["landmarks"]
            if isinstance(lm, str):
                lm_path = root / lm
                if not lm_path.is_file():
                    raise ManifestError(f"{fwhere}: landmark file not found: {lm_path}")
                try:
                    pts = _read_landmark_text(lm_path)
                except ValueError as exc:
                    raise ManifestError(f"{fwhere}: bad landmark file {lm_path}: {exc}") from exc
            else:
                pts = np.array(lm, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) != N_LANDMARKS:
                raise ManifestError(
                    f"{fwhere}: expected {N_LANDMARKS} landmark points, got {len(pts)}")
            au = fr.get("au")
            if au is not None:
                au = {int(k): float(v) for k, v in au.items()}
            pain = fr.get("pain")
            try:
                parsed.append(Frame(
                    image=_read_image(img_path),
                    landmarks=Landmarks(pts, *eyes),
                    subject_id=subject, sequence_id=seq_id,
                    frame_index=int(fr.get("index", fi)),
                    pain=None if pain is None else float(pain),
                    au=au,
                ))
            except ValueError as exc:
                raise ManifestError(f"{fwhere}: {exc}") from exc
        try:
            out.append(Sequence(tuple(parsed)))
        except ValueError as exc:
            raise ManifestError(f"{where}: {exc}") from exc
    return out


def save_manifest(sequences: Seq[Sequence], path: str | os.PathLike,
                  image_dir: str = "images") -> Path:
    """Write sequences as a manifest plus 8-bit PNG images.

    Images are rounded and clipped to 0..255, so the round trip is exact only
    for integer-valued images.
    """
    path = Path(path)
    img_root = path.parent / image_dir
    img_root.mkdir(parents=True, exist_ok=True)
    eyes = None
    recs = []
    for seq in sequences:
        frames = []
        for f in seq:
            eyes = eyes or (f.landmarks.left_eye, f.landmarks.right_eye)
            name = f"{f.subject_id}_{f.sequence_id}_{f.frame_index:05d}.png"
            pix = np.clip(np.round(f.image), 0, 255).astype(np.uint8)
            Image.fromarray(pix, mode="L").save(img_root / name)
            frames.append({
                "image": f"{image_dir}/{name}",
                "index": f.frame_index,
                "landmarks": f.landmarks.points.tolist(),
                "pain": f.pain,
                "au": None if f.au is None else {str(k): v for k, v in sorted(f.au.items())},
            })
        recs.append({"subject": seq.subject_id, "sequence": seq.sequence_id, "frames": frames})
    doc = {"eye_indices": list(eyes or DEFAULT_EYE_INDICES), "sequences": recs}
    path.write_text(json.dumps(doc, indent=1))
    return path


# ------------------------------------------------------------ normalization

def similarity_to_canvas(landmarks: Landmarks, anchor=CANVAS_ANCHOR,
                         iod: float = INTER_OCULAR) -> tuple[complex, complex]:
    """Return ``(a, t)`` with the map ``p -> a * p + t`` on complex ``x + iy``.

    The map sends the left eye to ``anchor - (iod/2, 0)`` and the right eye to
    ``anchor + (iod/2, 0)``.
    """
    l, r = (complex(*p) for p in landmarks.eyes)
    if abs(r - l) == 0:
        raise ValueError("eye centres coincide; similarity transform undefined")
    c = complex(*anchor)
    src_l, dst_l = l, c - iod / 2
    a = iod / (r - l)
    return a, dst_l - a * src_l


def warp_similarity(image: np.ndarray, a: complex, t: complex,
                    shape: tuple[int, int]) -> np.ndarray:
    """Resample ``image`` under ``p -> a p + t`` into an array of ``shape``.

    Bilinear interpolation; reads outside the source replicate the edge.
    """
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    src = ((cols + 1j * rows) - t) / a
    coords = np.stack([src.imag, src.real])
    return ndimage.map_coordinates(np.asarray(image, float), coords, order=1, mode="nearest")


def normalize_face(frame: Frame, shape: tuple[int, int] = CANVAS_SHAPE,
                   anchor=CANVAS_ANCHOR, iod: float = INTER_OCULAR) -> Frame:
    """Rotate, scale and translate so the eyes lie horizontally ``iod`` apart."""
    if shape[0] <= 0 or shape[1] <= 0:
        raise ValueError(f"degenerate output canvas {shape}")
    a, t = similarity_to_canvas(frame.landmarks, anchor, iod)
    pts = frame.landmarks.points
    z = a * (pts[:, 0] + 1j * pts[:, 1]) + t
    new_pts = np.column_stack([z.real, z.imag])
    return replace(frame, image=warp_similarity(frame.image, a, t, shape),
                   landmarks=frame.landmarks.with_points(new_pts), normalized=True)


# ---------------------------------------------------------------------- ROIs

@dataclass(frozen=True)
class Region:
    """Rectangle centred at an anchor-landmark centroid.

    Offsets and sizes are fractions of the inter-ocular distance; positive
    ``dy`` points down the image.
    """
    name: str
    anchors: tuple[int, ...]
    width: float
    height: float
    dx: float = 0.0
    dy: float = 0.0

    def __post_init__(self):
        if not self.anchors:
            raise ValueError(f"region {self.name!r} needs at least one anchor landmark")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"region {self.name!r} has zero area")


def _default_regions(left_eye=DEFAULT_EYE_INDICES[0], right_eye=DEFAULT_EYE_INDICES[1],
                     mouth=(16, 17, 18, 19, 20)):
    eyes = (left_eye, right_eye)
    return (
        Region("left_eye_brow", (left_eye,), 0.9, 0.7, dy=-0.15),
        Region("right_eye_brow", (right_eye,), 0.9, 0.7, dy=-0.15),
        Region("glabella", eyes, 0.8, 0.5, dy=-0.35),
        Region("nose_nasolabial", eyes, 0.8, 0.6, dy=0.6),
        Region("mouth", tuple(mouth), 1.2, 0.7),
    )


@dataclass(frozen=True)
class RoiSpec:
    regions: tuple[Region, ...] = field(default_factory=_default_regions)

    def __post_init__(self):
        if len(self.regions) != 5:
            raise ValueError(f"exactly 5 regions required, got {len(self.regions)}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RoiSpec":
        return cls(tuple(Region(r["name"], tuple(r["anchors"]), r["width"], r["height"],
                                r.get("dx", 0.0), r.get("dy", 0.0)) for r in d["regions"]))

    def to_dict(self) -> dict:
        return {"regions": [{"name": r.name, "anchors": list(r.anchors), "width": r.width,
                             "height": r.height, "dx": r.dx, "dy": r.dy} for r in self.regions]}


@dataclass(frozen=True)
class RoiPatch:
    name: str
    patch: np.ndarray
    box: tuple[int, int, int, int]   # x0, y0, x1, y1 (half-open)
    clamped: bool

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return ((x0 + x1 - 1) / 2, (y0 + y1 - 1) / 2)


def roi_boxes(landmarks: Landmarks, spec: RoiSpec, shape: tuple[int, int]):
    iod = landmarks.inter_ocular
    h_img, w_img = shape
    out = []
    for reg in spec.regions:
        cx, cy = landmarks.points[list(reg.anchors)].mean(axis=0)
        cx, cy = cx + reg.dx * iod, cy + reg.dy * iod
        w, h = int(round(reg.width * iod)), int(round(reg.height * iod))
        if w <= 0 or h <= 0:
            raise ValueError(f"region {reg.name!r} has zero area after normalization")
        x0, y0 = int(round(cx - (w - 1) / 2)), int(round(cy - (h - 1) / 2))
        x1, y1 = x0 + w, y0 + h
        if x1 <= 0 or y1 <= 0 or x0 >= w_img or y0 >= h_img:
            raise ValueError(f"region {reg.name!r} lies entirely outside the image")
        cx0, cy0, cx1, cy1 = max(x0, 0), max(y0, 0), min(x1, w_img), min(y1, h_img)
        out.append((reg.name, (cx0, cy0, cx1, cy1), (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1)))
    return out


def extract_rois(frame: Frame, spec: RoiSpec | None = None) -> list[RoiPatch]:
    """Cut the five regions of interest out of a normalized frame."""
    if not frame.normalized:
        raise ValueError("extract_rois expects a normalized frame")
    spec = spec or RoiSpec()
    patches = []
    for name, (x0, y0, x1, y1), clamped in roi_boxes(frame.landmarks, spec, frame.image.shape):
        patches.append(RoiPatch(name, frame.image[y0:y1, x0:x1], (x0, y0, x1, y1), clamped))
    return patches
