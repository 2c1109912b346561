"""RGBT sequence ingestion and a deterministic synthetic generator.

On-disk layout of a sequence directory::

    <seq>/rgb/00000.png ...   three-channel 8-bit PNGs
    <seq>/t/00000.png ...     single-channel 8-bit PNGs
    <seq>/gt.txt              one "x,y,w,h" line per frame (ASCII, LF)
    <seq>/attributes.txt      optional, one attribute tag per line

Frames are paired by sorted filename order; filenames are zero-padded
to five digits. Thermal images are stored single-channel and replicated
to three channels at load so both modalities feed the same backbone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Box


class SequenceFormatError(ValueError):
    """Malformed or inconsistent on-disk sequence."""


@dataclass
class RGBTSequence:
    """Aligned RGB and thermal frames with per-frame ground truth.

    rgb: (T, H, W, 3) uint8; t: (T, H, W, 3) uint8 (channels equal);
    gt: (T, 4) float boxes (x, y, w, h).
    """

    name: str
    rgb: np.ndarray
    t: np.ndarray
    gt: np.ndarray
    attributes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.rgb) != len(self.t) or len(self.rgb) != len(self.gt):
            raise SequenceFormatError(
                f"{self.name}: rgb/t/gt lengths differ "
                f"({len(self.rgb)}/{len(self.t)}/{len(self.gt)})"
            )
        h, w = self.frame_size[1], self.frame_size[0]
        g = np.asarray(self.gt, dtype=np.float64)
        if np.any(g[:, 2] <= 0) or np.any(g[:, 3] <= 0):
            raise SequenceFormatError(f"{self.name}: nonpositive gt box size")
        if np.any(g[:, 0] < 0) or np.any(g[:, 1] < 0) or np.any(g[:, 0] + g[:, 2] > w) or np.any(g[:, 1] + g[:, 3] > h):
            raise SequenceFormatError(f"{self.name}: gt box outside frame bounds")

    def __len__(self) -> int:
        return len(self.rgb)

    @property
    def frame_size(self) -> tuple[int, int]:
        """(width, height) in pixels."""
        return (self.rgb.shape[2], self.rgb.shape[1])

    def gt_box(self, i: int) -> Box:
        x, y, w, h = self.gt[i]
        return Box(float(x), float(y), float(w), float(h))


def _format_number(v: float) -> str:
    f = float(v)
    return str(int(f)) if f.is_integer() else repr(f)


def parse_gt_line(line: str, lineno: int, path) -> np.ndarray:
    parts = line.strip().split(",")
    if len(parts) != 4:
        raise SequenceFormatError(f"{path}:{lineno}: expected 4 comma-separated values, got {line!r}")
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as e:
        raise SequenceFormatError(f"{path}:{lineno}: unparsable gt line {line!r}") from e


def load_gt(seq_dir) -> np.ndarray:
    """Read gt.txt only; (T, 4) array."""
    path = Path(seq_dir) / "gt.txt"
    if not path.exists():
        raise SequenceFormatError(f"missing gt file {path}")
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            if line.strip():
                rows.append(parse_gt_line(line, i + 1, path))
    if not rows:
        raise SequenceFormatError(f"{path}: no ground-truth lines")
    return np.stack(rows)


def load_sequence(seq_dir) -> RGBTSequence:
    """Load a sequence directory; errors name the offending file."""
    seq_dir = Path(seq_dir)
    for sub in ("rgb", "t"):
        if not (seq_dir / sub).is_dir():
            raise SequenceFormatError(f"missing folder {seq_dir / sub}")
    rgb_files = sorted((seq_dir / "rgb").glob("*.png"))
    t_files = sorted((seq_dir / "t").glob("*.png"))
    if len(rgb_files) != len(t_files):
        raise SequenceFormatError(
            f"{seq_dir}: frame counts differ (rgb={len(rgb_files)}, t={len(t_files)})"
        )
    if not rgb_files:
        raise SequenceFormatError(f"{seq_dir}: no frames found")
    gt = load_gt(seq_dir)
    if len(gt) != len(rgb_files):
        raise SequenceFormatError(
            f"{seq_dir}: gt.txt has {len(gt)} lines but {len(rgb_files)} frames"
        )
    rgb = np.stack([np.asarray(Image.open(f).convert("RGB")) for f in rgb_files])
    t_gray = np.stack([np.asarray(Image.open(f).convert("L")) for f in t_files])
    t = np.repeat(t_gray[..., None], 3, axis=3)
    attributes = []
    attr_path = seq_dir / "attributes.txt"
    if attr_path.exists():
        attributes = [ln.strip() for ln in attr_path.read_text().splitlines() if ln.strip()]
    return RGBTSequence(name=seq_dir.name, rgb=rgb, t=t, gt=gt, attributes=attributes)


def write_sequence(seq: RGBTSequence, out_dir) -> None:
    """Emit the exact layout load_sequence reads (lossless round-trip)."""
    out_dir = Path(out_dir)
    try:
        (out_dir / "rgb").mkdir(parents=True, exist_ok=True)
        (out_dir / "t").mkdir(parents=True, exist_ok=True)
        for i in range(len(seq)):
            Image.fromarray(seq.rgb[i]).save(out_dir / "rgb" / f"{i:05d}.png")
            Image.fromarray(seq.t[i, :, :, 0]).save(out_dir / "t" / f"{i:05d}.png")
        with open(out_dir / "gt.txt", "w", newline="\n") as fh:
            for row in seq.gt:
                fh.write(",".join(_format_number(v) for v in row) + "\n")
        if seq.attributes:
            with open(out_dir / "attributes.txt", "w", newline="\n") as fh:
                fh.writelines(a + "\n" for a in seq.attributes)
    except OSError as e:
        raise OSError(f"failed writing sequence to {out_dir}: {e}") from e


def list_sequence_dirs(dataset_dir) -> list[Path]:
    root = Path(dataset_dir)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "gt.txt").exists())
    if not dirs:
        raise SequenceFormatError(f"no sequence directories under {root}")
    return dirs


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Deterministic synthetic RGBT sequence with controllable degradation.

    Intervals are [start, end) frame ranges. Noise sigmas are on the
    [0, 1] intensity scale; the illumination schedule multiplies RGB
    intensities by the given factor inside its interval.
    """

    frames: int = 50
    frame_size: tuple[int, int] = (96, 64)  # (width, height)
    target_size: tuple[int, int] = (16, 16)  # (width, height)
    start_pos: tuple[float, float] | None = None  # center; defaults to upper-left area
    velocity: tuple[float, float] = (1.5, 0.8)  # px/frame
    jitter: float = 0.0
    rgb_noise_sigma: float = 0.0
    t_noise_sigma: float = 0.0
    rgb_illumination: tuple[tuple[int, int, float], ...] = ()
    t_blackout: tuple[tuple[int, int], ...] = ()
    occluders: tuple[tuple[int, int], ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.rgb_noise_sigma < 0 or self.t_noise_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        for start, end, *_ in tuple(self.rgb_illumination) + tuple(self.t_blackout) + tuple(self.occluders):
            if not (0 <= start <= end <= self.frames):
                raise ValueError(f"schedule interval ({start}, {end}) outside [0, {self.frames})")


def _background(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.25 + 0.1 * (xx / max(w - 1, 1)) + 0.08 * np.sin(yy / 6.0)
    rgb = np.stack([base * 0.9, base, base * 1.1], axis=-1)
    t = 0.2 + 0.05 * (yy / max(h - 1, 1))
    # a few static distractor rectangles, dimmer than the target
    for _ in range(3):
        rw, rh = int(rng.integers(6, 14)), int(rng.integers(6, 14))
        rx = int(rng.integers(0, max(w - rw, 1)))
        ry = int(rng.integers(0, max(h - rh, 1)))
        rgb[ry:ry + rh, rx:rx + rw] += rng.uniform(0.05, 0.15)
        t[ry:ry + rh, rx:rx + rw] += rng.uniform(0.05, 0.15)
    return np.clip(rgb, 0, 1), np.clip(t, 0, 1)


def generate_synthetic(cfg: SynthConfig) -> RGBTSequence:
    """Render a moving bright square over a structured background.

    The target is a fixed textured patch in RGB and a uniform hot blob in
    thermal; ground truth follows the square exactly. Degradations are
    modality-local and fully deterministic under the seed.
    """
    rng = np.random.default_rng(cfg.seed)
    w, h = cfg.frame_size
    tw, th = cfg.target_size
    bg_rgb, bg_t = _background(rng, h, w)
    texture = 0.55 + 0.45 * rng.random((th, tw, 3))
    texture[::2, ::2] *= 0.55  # checker-like structure, distinct per seed

    if cfg.start_pos is None:
        cx, cy = tw / 2 + 4.0, th / 2 + 4.0
    else:
        cx, cy = cfg.start_pos
    vx, vy = cfg.velocity

    rgb_frames = np.empty((cfg.frames, h, w, 3), dtype=np.uint8)
    t_frames = np.empty((cfg.frames, h, w, 3), dtype=np.uint8)
    gt = np.empty((cfg.frames, 4), dtype=np.float64)

    for k in range(cfg.frames):
        if cfg.jitter > 0:
            jx, jy = rng.normal(0.0, cfg.jitter, size=2)
        else:
            jx = jy = 0.0
        # clamp the center so the box always stays inside the frame
        ccx = float(np.clip(cx + jx, tw / 2, w - tw / 2))
        ccy = float(np.clip(cy + jy, th / 2, h - th / 2))
        x0 = int(round(ccx - tw / 2))
        y0 = int(round(ccy - th / 2))
        x0 = min(max(x0, 0), w - tw)
        y0 = min(max(y0, 0), h - th)
        gt[k] = (x0, y0, tw, th)

        frame_rgb = bg_rgb.copy()
        frame_t = bg_t.copy()
        frame_rgb[y0:y0 + th, x0:x0 + tw] = texture
        frame_t[y0:y0 + th, x0:x0 + tw] = 0.95

        for (s, e) in cfg.occluders:
            if s <= k < e:
                ow, oh = tw, max(th // 2, 2)
                frame_rgb[y0:y0 + oh, x0:x0 + ow] = 0.1
                frame_t[y0:y0 + oh, x0:x0 + ow] = 0.1

        scale = 1.0
        for (s, e, factor) in cfg.rgb_illumination:
            if s <= k < e:
                scale *= factor
        frame_rgb = frame_rgb * scale
        for (s, e) in cfg.t_blackout:
            if s <= k < e:
                frame_t = np.zeros_like(frame_t)

        if cfg.rgb_noise_sigma > 0:
            frame_rgb = frame_rgb + rng.normal(0.0, cfg.rgb_noise_sigma, frame_rgb.shape)
        if cfg.t_noise_sigma > 0:
            frame_t = frame_t + rng.normal(0.0, cfg.t_noise_sigma, frame_t.shape)

        rgb_frames[k] = (np.clip(frame_rgb, 0, 1) * 255).round().astype(np.uint8)
        t8 = (np.clip(frame_t, 0, 1) * 255).round().astype(np.uint8)
        t_frames[k] = np.repeat(t8[..., None], 3, axis=2)

        cx += vx
        cy += vy
        # bounce off the walls so motion stays in frame
        if not (tw / 2 <= cx <= w - tw / 2):
            vx = -vx
            cx = float(np.clip(cx, tw / 2, w - tw / 2))
        if not (th / 2 <= cy <= h - th / 2):
            vy = -vy
            cy = float(np.clip(cy, th / 2, h - th / 2))

    return RGBTSequence(name=f"synth{cfg.seed}", rgb=rgb_frames, t=t_frames, gt=gt)
