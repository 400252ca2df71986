"""Video-to-event simulation with a per-pixel log-intensity threshold model.

Consecutive grayscale frames are mapped through a lin-log intensity curve;
whenever a pixel's log intensity moves at least one contrast threshold away
from its stored reference, the pixel emits that many ON or OFF events and
the reference advances by the emitted multiple of the threshold.  The
sub-threshold remainder stays in the reference so slow changes are not lost
across frame pairs.  Same-pixel events are spaced evenly over the
inter-frame gap, ending exactly on the new frame's timestamp; events from
different pixels are merged into global timestamp order.

The model is deterministic: no noise, leak, or photoreceptor bandwidth.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np
from PIL import Image

from .events import EventStream

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R BT.601


@dataclass
class SimulatorConfig:
    """Contrast thresholds (log-intensity units) and the lin-log knee."""

    theta_on: float = 0.2
    theta_off: float = 0.2
    linlog_knee: float = 20.0

    def __post_init__(self):
        if self.theta_on <= 0 or self.theta_off <= 0:
            raise ValueError("contrast thresholds must be positive")
        if not 0 <= self.linlog_knee <= 255:
            raise ValueError("linlog_knee must be in [0, 255]")


@dataclass
class TimedFrame:
    """One grayscale frame: microsecond timestamp plus intensities in [0, 255]."""

    t_us: int
    pixels: np.ndarray


@dataclass
class PixelState:
    """Per-pixel reference log intensity carried between frame pairs."""

    l_ref: np.ndarray


def luma(rgb_frame: np.ndarray) -> np.ndarray:
    """BT.601 weighted sum of an (H, W, 3) frame; returns float64, unrounded."""
    rgb = np.asarray(rgb_frame, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) RGB input, got shape {rgb.shape}")
    r, g, b = LUMA_WEIGHTS
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


def log_intensity(intensity, knee: float = 20.0):
    """Lin-log map: ln(I) above the knee, a linear ramp through the origin below.

    The ramp has slope ln(knee)/knee so the two branches meet at the knee;
    L(0) = 0 in all cases.  A knee of 0 degenerates to plain ln(I) with
    L(0) pinned to 0.
    """
    i = np.asarray(intensity, dtype=np.float64)
    if knee <= 0:
        with np.errstate(divide="ignore"):
            out = np.where(i > 0, np.log(np.maximum(i, 1e-300)), 0.0)
        return out
    lin = i * (math.log(knee) / knee)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(i < knee, lin, np.log(np.maximum(i, knee)))
    return out


def _spread_timestamps(counts: np.ndarray, t_prev_us: int, t_next_us: int):
    """Expand per-pixel event counts into (flat pixel index, timestamp) arrays.

    A pixel with n events gets timestamps t_prev + floor(k*dt/n) for
    k = 1..n, clamped to be at least 1 us after t_prev so every timestamp
    lies in (t_prev, t_next].  Pixels expand in raster order.
    """
    flat = counts.ravel()
    active = np.nonzero(flat)[0]
    if active.size == 0:
        return (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint64))
    reps = flat[active]
    pix = np.repeat(active, reps)
    total = int(reps.sum())
    starts = np.concatenate(([0], np.cumsum(reps)[:-1]))
    k = np.arange(1, total + 1, dtype=np.int64) - np.repeat(starts, reps)
    n = np.repeat(reps, reps)
    dt = int(t_next_us) - int(t_prev_us)
    offsets = np.maximum((k * dt) // n, 1)
    t = np.uint64(t_prev_us) + offsets.astype(np.uint64)
    return pix, t


def simulate_pair(
    state: PixelState,
    frame_next: TimedFrame,
    t_prev_us: int,
    config: SimulatorConfig,
) -> tuple[EventStream, PixelState]:
    """Emit events for one frame pair; returns (events, updated state).

    With d = L(frame) - L_ref per pixel: d >= theta_on emits
    floor(d/theta_on) ON events and advances L_ref by that multiple of
    theta_on; d <= -theta_off mirrors for OFF.  Sub-threshold residual is
    retained.  ON events precede OFF events at equal timestamps; the
    combined output is stably sorted by timestamp.
    """
    if frame_next.t_us <= t_prev_us:
        raise ValueError(
            f"frame timestamp {frame_next.t_us} must exceed previous {t_prev_us}"
        )
    pixels = np.asarray(frame_next.pixels, dtype=np.float64)
    if pixels.shape != state.l_ref.shape:
        raise ValueError(f"frame shape {pixels.shape} != state shape {state.l_ref.shape}")

    l_new = log_intensity(pixels, config.linlog_knee)
    d = l_new - state.l_ref
    n_on = np.floor_divide(np.maximum(d, 0.0), config.theta_on).astype(np.int64)
    n_off = np.floor_divide(np.maximum(-d, 0.0), config.theta_off).astype(np.int64)
    new_ref = state.l_ref + n_on * config.theta_on - n_off * config.theta_off

    h, w = pixels.shape
    pix_on, t_on = _spread_timestamps(n_on, t_prev_us, frame_next.t_us)
    pix_off, t_off = _spread_timestamps(n_off, t_prev_us, frame_next.t_us)
    t = np.concatenate([t_on, t_off])
    pix = np.concatenate([pix_on, pix_off])
    p = np.concatenate(
        [np.ones(len(t_on), dtype=np.int8), -np.ones(len(t_off), dtype=np.int8)]
    )
    order = np.argsort(t, kind="stable")
    t, pix, p = t[order], pix[order], p[order]
    x = (pix % w).astype(np.uint16)
    y = (pix // w).astype(np.uint16)
    return EventStream(w, h, t=t, x=x, y=y, p=p), PixelState(new_ref)


def simulate_video(frames: Iterable[TimedFrame], config: Optional[SimulatorConfig] = None) -> EventStream:
    """Fold the pair simulator over a frame sequence; returns a sorted stream.

    The reference log intensity is initialized from the first frame, so a
    single frame (or a constant video) produces no events.
    """
    config = config or SimulatorConfig()
    it = iter(frames)
    try:
        first = next(it)
    except StopIteration:
        raise ValueError("simulate_video needs at least one frame") from None
    pixels = np.asarray(first.pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise ValueError(f"frames must be 2D grayscale, got shape {pixels.shape}")
    h, w = pixels.shape
    state = PixelState(log_intensity(pixels, config.linlog_knee))
    t_prev = int(first.t_us)

    chunks_t, chunks_x, chunks_y, chunks_p = [], [], [], []
    for frame in it:
        if frame.t_us <= t_prev:
            raise ValueError(
                f"frame timestamps must be strictly increasing ({frame.t_us} after {t_prev})"
            )
        emitted, state = simulate_pair(state, frame, t_prev, config)
        if len(emitted):
            chunks_t.append(emitted.t)
            chunks_x.append(emitted.x)
            chunks_y.append(emitted.y)
            chunks_p.append(emitted.p)
        t_prev = int(frame.t_us)

    if not chunks_t:
        return EventStream(w, h)
    return EventStream(
        w,
        h,
        t=np.concatenate(chunks_t),
        x=np.concatenate(chunks_x),
        y=np.concatenate(chunks_y),
        p=np.concatenate(chunks_p),
    )


# ---------------------------------------------------------------------------
# Frame ingestion: image directory + manifest CSV, or raw blob + JSON sidecar.
# ---------------------------------------------------------------------------

def _to_gray(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 3:
        if arr.shape[-1] == 3:
            return luma(arr)
        if arr.shape[-1] == 1:
            return arr[..., 0].astype(np.float64)
        if arr.shape[-1] == 4:
            return luma(arr[..., :3])
        raise ValueError(f"unsupported channel count {arr.shape[-1]}")
    return arr.astype(np.float64)


def load_frames_manifest(
    manifest_csv: str, crop: Optional[tuple[int, int, int, int]] = None
) -> Iterator[TimedFrame]:
    """Yield frames listed in a ``filename,t_us`` manifest CSV.

    Filenames are resolved relative to the manifest's directory.  ``crop``
    is an optional (x, y, w, h) rectangle applied to every frame before it
    is handed to the simulator (the face-crop step).
    """
    base = os.path.dirname(os.path.abspath(manifest_csv))
    with open(manifest_csv, newline="") as f:
        for row in csv.reader(f):
            if not row or not row[0].strip():
                continue
            name, t = row[0].strip(), row[1].strip()
            if not t.lstrip("-").isdigit():
                continue  # header row
            arr = np.asarray(Image.open(os.path.join(base, name)))
            gray = _to_gray(arr)
            if crop is not None:
                cx, cy, cw, ch = crop
                gray = gray[cy : cy + ch, cx : cx + cw]
            yield TimedFrame(int(t), gray)


def load_frames_blob(blob_path: str, sidecar_path: Optional[str] = None) -> Iterator[TimedFrame]:
    """Yield frames from a raw planar grayscale u8 blob plus its JSON sidecar.

    The sidecar (default: blob path + ".json") holds
    {"width", "height", "frame_count", "timestamps_us": [...]}.
    """
    sidecar_path = sidecar_path or blob_path + ".json"
    with open(sidecar_path) as f:
        meta = json.load(f)
    w, h, n = int(meta["width"]), int(meta["height"]), int(meta["frame_count"])
    stamps = meta["timestamps_us"]
    if len(stamps) != n:
        raise ValueError(f"sidecar lists {len(stamps)} timestamps for {n} frames")
    data = np.fromfile(blob_path, dtype=np.uint8)
    if data.size != n * h * w:
        raise ValueError(f"blob has {data.size} bytes, expected {n * h * w}")
    frames = data.reshape(n, h, w)
    for i in range(n):
        yield TimedFrame(int(stamps[i]), frames[i].astype(np.float64))


def save_frames_blob(frames: list[TimedFrame], blob_path: str) -> None:
    """Write frames as a planar u8 blob + JSON sidecar (inverse of load_frames_blob)."""
    if not frames:
        raise ValueError("no frames to save")
    h, w = np.asarray(frames[0].pixels).shape
    stack = np.stack([np.asarray(f.pixels) for f in frames])
    np.clip(np.rint(stack), 0, 255).astype(np.uint8).tofile(blob_path)
    meta = {
        "width": w,
        "height": h,
        "frame_count": len(frames),
        "timestamps_us": [int(f.t_us) for f in frames],
    }
    with open(blob_path + ".json", "w") as f:
        json.dump(meta, f, sort_keys=True)
