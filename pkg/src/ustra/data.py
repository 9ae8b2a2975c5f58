"""Video samples, synthetic collision scenarios, and the STRA feature archive.

Archive layout (little-endian), one file per video::

    magic  b"STRA"
    u32    version (1)
    u32    T, N, d_obj, d_frame
    u8     label (1 positive, 0 negative)
    u32    accident frame, 1-based (0xFFFFFFFF for negatives)
    f32    fps
    then per frame: d_frame f32 frame feature,
                    N x (4 f32 box coords + d_obj f32 object feature)

Boxes are stored in normalized frame coordinates; loaded samples get a unit
frame size.
"""
import csv
import math
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, FormatError, ValidationError
from .graph import FrameObservation

MAGIC = b"STRA"
VERSION = 1
NO_ACCIDENT = 0xFFFFFFFF
_HEADER = struct.Struct("<4sIIIIIBIf")
MANIFEST = "manifest.csv"


@dataclass
class VideoSample:
    video_id: str
    boxes: np.ndarray  # (T, N, 4)
    object_features: np.ndarray  # (T, N, d_obj)
    frame_features: np.ndarray  # (T, d_frame)
    positive: bool
    accident_frame: int | None  # 1-based; None for negatives
    fps: float
    frame_size: tuple = field(default=(1.0, 1.0))

    def __post_init__(self):
        self.validate()

    @property
    def T(self):
        return self.boxes.shape[0]

    @property
    def N(self):
        return self.boxes.shape[1]

    @property
    def d_obj(self):
        return self.object_features.shape[2]

    @property
    def d_frame(self):
        return self.frame_features.shape[1]

    def validate(self):
        if self.boxes.ndim != 3 or self.boxes.shape[2] != 4:
            raise ValidationError(f"{self.video_id}: boxes must be (T, N, 4), got {self.boxes.shape}")
        t, n = self.boxes.shape[:2]
        if self.object_features.ndim != 3 or self.object_features.shape[:2] != (t, n):
            raise ValidationError(f"{self.video_id}: object features {self.object_features.shape}")
        if self.frame_features.ndim != 2 or self.frame_features.shape[0] != t:
            raise ValidationError(f"{self.video_id}: frame features {self.frame_features.shape}")
        if self.positive:
            if self.accident_frame is None or not 1 <= self.accident_frame <= t:
                raise ValidationError(
                    f"{self.video_id}: positive video needs 1 <= accident frame <= {t}"
                )
        elif self.accident_frame is not None:
            raise ValidationError(f"{self.video_id}: negative video has an accident frame")
        if not self.fps > 0:
            raise ValidationError(f"{self.video_id}: fps must be positive")

    def frame(self, t):
        """FrameObservation at 0-based index t."""
        return FrameObservation(
            frame_feature=self.frame_features[t],
            boxes=self.boxes[t],
            object_features=self.object_features[t],
            frame_size=self.frame_size,
        )

    def frames(self):
        return [self.frame(t) for t in range(self.T)]

    def equals(self, other):
        return (
            self.video_id == other.video_id
            and self.positive == other.positive
            and self.accident_frame == other.accident_frame
            and self.fps == other.fps
            and np.array_equal(self.boxes, other.boxes)
            and np.array_equal(self.object_features, other.object_features)
            and np.array_equal(self.frame_features, other.frame_features)
        )


# -- archive -------------------------------------------------------------------


def encode_sample(sample):
    y = sample.accident_frame if sample.positive else NO_ACCIDENT
    header = _HEADER.pack(
        MAGIC, VERSION, sample.T, sample.N, sample.d_obj, sample.d_frame,
        1 if sample.positive else 0, y, sample.fps,
    )
    per_obj = np.concatenate([sample.boxes, sample.object_features], axis=2)
    body = np.concatenate(
        [sample.frame_features, per_obj.reshape(sample.T, -1)], axis=1
    ).astype("<f4")
    return header + body.tobytes()


def decode_sample(buf, video_id="video"):
    if len(buf) < _HEADER.size:
        raise CorruptionError("truncated archive header", offset=len(buf))
    magic, version, t, n, d_obj, d_frame, label, y, fps = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported archive version {version}")
    if label not in (0, 1):
        raise CorruptionError(f"label byte {label} is neither 0 nor 1", offset=24)
    row = d_frame + n * (4 + d_obj)
    need = _HEADER.size + 4 * t * row
    if len(buf) < need:
        raise CorruptionError(f"truncated archive: expected {need} bytes", offset=len(buf))
    if len(buf) > need:
        raise CorruptionError(f"{len(buf) - need} trailing bytes", offset=need)
    body = np.frombuffer(buf, dtype="<f4", count=t * row, offset=_HEADER.size)
    body = body.astype(np.float64).reshape(t, row)
    per_obj = body[:, d_frame:].reshape(t, n, 4 + d_obj)
    positive = label == 1
    if positive == (y == NO_ACCIDENT):
        raise CorruptionError("label and accident frame disagree", offset=25)
    return VideoSample(
        video_id=video_id,
        boxes=per_obj[:, :, :4].copy(),
        object_features=per_obj[:, :, 4:].copy(),
        frame_features=body[:, :d_frame].copy(),
        positive=positive,
        accident_frame=int(y) if positive else None,
        fps=float(fps),
    )


def save_archive(sample, path):
    with open(path, "wb") as fh:
        fh.write(encode_sample(sample))


def load_archive(path, video_id=None):
    with open(path, "rb") as fh:
        buf = fh.read()
    if video_id is None:
        video_id = os.path.splitext(os.path.basename(path))[0]
    return decode_sample(buf, video_id)


def write_dataset(root, splits):
    """Write ``{split: [VideoSample]}`` as ``root/<split>/<id>.stra`` + manifest."""
    os.makedirs(root, exist_ok=True)
    rows = []
    for split, samples in splits.items():
        os.makedirs(os.path.join(root, split), exist_ok=True)
        for s in samples:
            save_archive(s, os.path.join(root, split, f"{s.video_id}.stra"))
            rows.append((split, s.video_id, int(s.positive), s.accident_frame or ""))
    with open(os.path.join(root, MANIFEST), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "video_id", "label", "accident_frame"])
        w.writerows(rows)


def read_manifest(root):
    path = os.path.join(root, MANIFEST)
    if not os.path.exists(path):
        raise ValidationError(f"no {MANIFEST} in {root}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_dataset(root, split):
    rows = [r for r in read_manifest(root) if r["split"] == split]
    samples = []
    for r in rows:
        s = load_archive(os.path.join(root, split, f"{r['video_id']}.stra"), r["video_id"])
        if int(r["label"]) != int(s.positive):
            raise ValidationError(f"{r['video_id']}: manifest label disagrees with archive")
        samples.append(s)
    return samples


# -- synthetic scenarios -------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    num_pos: int = 100
    num_neg: int = 200
    T: int = 50
    N: int = 5
    d_obj: int = 32
    d_frame: int = 32
    fps: float = 10.0
    noise: float = 0.05
    seed: int = 0
    margin: float = 0.2
    jitter: float = 0.002

    def validate(self):
        if self.num_pos < 0 or self.num_neg < 0 or self.num_pos + self.num_neg == 0:
            raise ValidationError("need a positive number of videos")
        if self.T < 2 or self.N < 2 or self.d_obj < 1 or self.d_frame < 1:
            raise ValidationError("T and N must be >= 2 and feature dims >= 1")
        if not self.fps > 0 or self.noise < 0 or self.jitter < 0 or self.margin <= 0:
            raise ValidationError("fps and margin must be positive, noise/jitter non-negative")


KINEMATIC_DIM = 5  # cx, cy, vx, vy, min distance to other objects
_MAX_TRIES = 2000
_LO, _HI = 0.05, 0.95


def _first_accident_frame(T):
    # Accident frames fall in the last 40% of the clip.
    return max(1, math.floor(0.6 * T) + 1)


def _in_frame(path):
    return bool(np.all((path >= _LO) & (path <= _HI)))


def _overlap(ca, sa, cb, sb):
    gap = np.abs(ca - cb)
    return np.any((gap[:, 0] < 0.5 * (sa[0] + sb[0])) & (gap[:, 1] < 0.5 * (sa[1] + sb[1])))


def _compatible(path, size, placed, margin):
    for other, osize in placed:
        if np.min(np.linalg.norm(path - other, axis=1)) < margin:
            return False
        if _overlap(path, size, other, osize):
            return False
    return True


def _cruiser(rng, T, vmax):
    start = rng.uniform(0.1, 0.9, size=2)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    speed = rng.uniform(0.0, vmax)
    v = speed * np.array([math.cos(angle), math.sin(angle)])
    return start + np.arange(T)[:, None] * v


def _collider_pair(rng, T, y):
    """Two paths that meet at frame y (1-based) and stay together after."""
    c = rng.uniform(0.3, 0.7, size=2)
    a1 = rng.uniform(0.0, 2.0 * math.pi)
    a2 = a1 + rng.uniform(math.pi / 3.0, 5.0 * math.pi / 3.0)
    steps = np.maximum(y - 1 - np.arange(T), 0)[:, None].astype(float)
    paths = []
    for angle in (a1, a2):
        travel = rng.uniform(0.06, 0.18)
        u = np.array([math.cos(angle), math.sin(angle)])
        paths.append(c - u * travel * steps / max(y - 1, 1))
    return paths


def _sizes(rng):
    return rng.uniform(0.05, 0.1, size=2)


def _simulate(rng, cfg, positive):
    T, N = cfg.T, cfg.N
    vmax = 0.3 / T
    for _ in range(_MAX_TRIES):
        placed = []
        y = None
        if positive:
            y = int(rng.integers(_first_accident_frame(T), T + 1))
            p1, p2 = _collider_pair(rng, T, y)
            if not (_in_frame(p1) and _in_frame(p2)):
                continue
            placed = [(p1, _sizes(rng)), (p2, _sizes(rng))]
        ok = True
        while len(placed) < N:
            for _ in range(_MAX_TRIES):
                path = _cruiser(rng, T, vmax)
                size = _sizes(rng)
                if _in_frame(path) and _compatible(path, size, placed, cfg.margin):
                    placed.append((path, size))
                    break
            else:
                ok = False
                break
        if ok:
            return placed, y
    raise ValidationError("could not place objects; lower N or margin")


def _kinematics(centers, fps_frames):
    """(T, N, 5): position, velocity, min distance, each rescaled to O(1)."""
    T, N, _ = centers.shape
    vel = np.empty_like(centers)
    vel[1:] = centers[1:] - centers[:-1]
    vel[0] = vel[1] if T > 1 else 0.0
    vel *= fps_frames
    diff = centers[:, :, None, :] - centers[:, None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    dist[:, np.arange(N), np.arange(N)] = np.inf
    nearest = dist.min(axis=2)[:, :, None]
    return np.concatenate(
        [(centers - 0.5) * 2.0, vel / 0.3, (nearest - 0.25) / 0.1], axis=2
    )


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def generate_synthetic(cfg, split="train"):
    """Deterministic list of VideoSamples for ``cfg``.

    Objects cruise at constant velocity with per-frame jitter inside a unit
    frame. Negative videos keep every pair of objects at least ``margin``
    apart and never overlapping. Positive videos steer two objects to meet
    exactly at the accident frame; the rest obey the negative-video rules.
    Object features lift kinematics through a fixed random linear map plus
    Gaussian noise; frame features are noisy means of the object features.
    """
    cfg.validate()
    # the lift maps depend on the seed only, so every split of one seed
    # shares them; videos come from a per-split stream
    lift_rng = np.random.default_rng([cfg.seed, 0])
    root = np.random.SeedSequence([cfg.seed, 1, zlib.crc32(split.encode("utf-8"))])
    order_seq, *video_seqs = root.spawn(1 + cfg.num_pos + cfg.num_neg)
    obj_map = lift_rng.standard_normal((KINEMATIC_DIM, cfg.d_obj)) / math.sqrt(KINEMATIC_DIM)
    frame_map = lift_rng.standard_normal((cfg.d_obj, cfg.d_frame)) / math.sqrt(cfg.d_obj)
    labels = np.array([True] * cfg.num_pos + [False] * cfg.num_neg)
    np.random.default_rng(order_seq).shuffle(labels)
    samples = []
    for i, (positive, seq) in enumerate(zip(labels, video_seqs)):
        rng = np.random.default_rng(seq)
        placed, y = _simulate(rng, cfg, bool(positive))
        centers = np.stack([p for p, _ in placed], axis=1)  # (T, N, 2)
        jitter = rng.normal(0.0, cfg.jitter, size=centers.shape)
        if positive:
            jitter[y - 1, :2] = 0.0
        centers = centers + jitter
        perm = rng.permutation(cfg.N)
        centers = centers[:, perm]
        sizes = np.stack([s for _, s in placed])[perm]
        half = 0.5 * sizes[None, :, :]
        boxes = np.concatenate([centers - half, centers + half], axis=2)
        kin = _kinematics(centers, cfg.T)
        obj = kin @ obj_map + rng.normal(0.0, cfg.noise, size=(cfg.T, cfg.N, cfg.d_obj))
        frame = obj.mean(axis=1) @ frame_map + rng.normal(0.0, cfg.noise, size=(cfg.T, cfg.d_frame))
        samples.append(
            VideoSample(
                video_id=f"{split}_{i:05d}",
                boxes=_f32(boxes),
                object_features=_f32(obj),
                frame_features=_f32(frame),
                positive=bool(positive),
                accident_frame=y,
                fps=float(np.float32(cfg.fps)),
            )
        )
    return samples
