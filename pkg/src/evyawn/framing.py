"""Accumulate event streams into 2D frame sequences.

Events are grouped either over fixed-duration windows or by fixed count,
summed per pixel (ON minus OFF) into signed frames, then clipped to a
symmetric range and mapped to uint8.  Zero net polarity maps to mid-gray
128, so empty windows produce valid frames instead of holes.  Normalized
frames are plain uint8 arrays; sequences carry them stacked [n, H, W].

Frame-sequence container on disk: raw little-endian u8 blob (row-major
[count, height, width]) plus a JSON sidecar at ``<blob path>.json`` with
{"count", "height", "width", "dt_us", "t_start_us"}.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidPayloadError, TruncatedError
from .events import EventStream


@dataclass
class SignedFrame:
    """Per-pixel signed polarity sum over one window [t0, t0+dt)."""

    pixels: np.ndarray
    t0_us: int
    dt_us: int


@dataclass
class FrameSequence:
    """Contiguous normalized frames: frame k covers [t_start + k*dt, t_start + (k+1)*dt)."""

    frames: np.ndarray  # uint8, shape [count, height, width]
    t_start_us: int
    dt_us: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be [count, H, W], got shape {self.frames.shape}")

    @property
    def count(self) -> int:
        return self.frames.shape[0]

    @property
    def geometry(self) -> tuple[int, int]:
        return (self.frames.shape[2], self.frames.shape[1])


def accumulate_window(stream: EventStream, t0_us: int, dt_us: int) -> SignedFrame:
    """Signed per-pixel polarity sum of events in [t0, t0+dt); empty pixels are 0."""
    if dt_us <= 0:
        raise ValueError("window duration must be positive")
    h, w = stream.height, stream.width
    i0 = int(np.searchsorted(stream.t, max(int(t0_us), 0), side="left"))
    i1 = int(np.searchsorted(stream.t, max(int(t0_us) + int(dt_us), 0), side="left"))
    pixels = _signed_sum(
        stream.x[i0:i1].astype(np.int64),
        stream.y[i0:i1].astype(np.int64),
        stream.p[i0:i1],
        w,
        h,
    )
    return SignedFrame(pixels, int(t0_us), int(dt_us))


def _signed_sum(x, y, p, w, h) -> np.ndarray:
    flat = y * w + x
    pos = np.bincount(flat[p > 0], minlength=h * w)
    neg = np.bincount(flat[p < 0], minlength=h * w)
    return (pos - neg).reshape(h, w).astype(np.int32)


def normalize(frame: SignedFrame, clip: int = 10) -> np.ndarray:
    """Clip signed values to +/-clip and map affinely to uint8 (0 -> 128).

    v' = floor((min(max(v, -clip), clip) + clip) * 255 / (2*clip) + 0.5),
    i.e. round-half-up: -clip -> 0, 0 -> 128, +clip -> 255.
    """
    if clip <= 0:
        raise ValueError("clip must be positive")
    v = np.clip(frame.pixels, -clip, clip).astype(np.float64)
    scaled = (v + clip) * (255.0 / (2 * clip))
    return np.floor(scaled + 0.5).astype(np.uint8)


def frame_by_duration(
    stream: EventStream,
    t_start_us: int,
    dt_us: int = 100_000,
    n: int = 100,
    clip: int = 10,
) -> FrameSequence:
    """Accumulate n contiguous fixed-duration windows and normalize each.

    Windows beyond the stream's events simply contain no events and come
    out mid-gray; the sequence always has exactly n frames.
    """
    if dt_us <= 0:
        raise ValueError("window duration must be positive")
    if n < 1:
        raise ValueError("need at least one window")
    h, w = stream.height, stream.width
    t_start_us = int(t_start_us)
    t_end = t_start_us + n * int(dt_us)
    i0 = int(np.searchsorted(stream.t, max(t_start_us, 0), side="left"))
    i1 = int(np.searchsorted(stream.t, max(t_end, 0), side="left"))
    t = stream.t[i0:i1].astype(np.int64)
    x = stream.x[i0:i1].astype(np.int64)
    y = stream.y[i0:i1].astype(np.int64)
    p = stream.p[i0:i1]

    k = (t - t_start_us) // int(dt_us)
    flat = k * (h * w) + y * w + x
    pos = np.bincount(flat[p > 0], minlength=n * h * w)
    neg = np.bincount(flat[p < 0], minlength=n * h * w)
    signed = (pos - neg).reshape(n, h, w)

    lo, hi = -int(clip), int(clip)
    v = np.clip(signed, lo, hi).astype(np.float64)
    frames = np.floor((v + clip) * (255.0 / (2 * clip)) + 0.5).astype(np.uint8)
    return FrameSequence(frames, t_start_us, int(dt_us))


def frame_by_count(stream: EventStream, events_per_frame: int) -> list[SignedFrame]:
    """Sum consecutive disjoint groups of exactly events_per_frame events.

    Each frame's t0/dt span the group's first/last timestamps; a trailing
    partial group is dropped.
    """
    if events_per_frame < 1:
        raise ValueError("events_per_frame must be >= 1")
    n_groups = len(stream) // events_per_frame
    out = []
    for g in range(n_groups):
        i0 = g * events_per_frame
        i1 = i0 + events_per_frame
        pixels = _signed_sum(
            stream.x[i0:i1].astype(np.int64),
            stream.y[i0:i1].astype(np.int64),
            stream.p[i0:i1],
            stream.width,
            stream.height,
        )
        t0 = int(stream.t[i0])
        out.append(SignedFrame(pixels, t0, int(stream.t[i1 - 1]) - t0))
    return out


def area_resample(frame: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Box (pixel-area-relation) resample of a 2D frame.

    Each output pixel is the area-weighted mean of the source rectangle it
    covers, so constant frames map to constant frames and integral
    downscales reduce to exact block averaging.  uint8 input is rounded
    half-up back to uint8; float input stays float.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be positive")
    src = np.asarray(frame)
    h, w = src.shape
    wy = _overlap_weights(h, out_h)
    wx = _overlap_weights(w, out_w)
    result = wy @ src.astype(np.float64) @ wx.T
    if np.issubdtype(src.dtype, np.integer):
        return np.floor(result + 0.5).astype(np.uint8)
    return result


def _overlap_weights(n_in: int, n_out: int) -> np.ndarray:
    """Rows: fraction of each source cell covered by each output cell, normalized."""
    edges_out = np.arange(n_out + 1) * (n_in / n_out)
    lo = edges_out[:-1, None]
    hi = edges_out[1:, None]
    src_lo = np.arange(n_in)[None, :]
    src_hi = src_lo + 1.0
    overlap = np.clip(np.minimum(hi, src_hi) - np.maximum(lo, src_lo), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def resample_sequence(frames: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Area-resample a [n, H, W] uint8 stack to [n, out_h, out_w]."""
    frames = np.asarray(frames)
    if frames.shape[1] == out_h and frames.shape[2] == out_w:
        return frames.astype(np.uint8, copy=False)
    wy = _overlap_weights(frames.shape[1], out_h)
    wx = _overlap_weights(frames.shape[2], out_w)
    result = np.einsum("ij,njk,lk->nil", wy, frames.astype(np.float64), wx)
    return np.floor(result + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# Container I/O and PNG rendering
# ---------------------------------------------------------------------------

def save_frame_sequence(seq: FrameSequence, blob_path: str) -> None:
    """Write the u8 blob at blob_path and its JSON sidecar at blob_path + '.json'."""
    seq.frames.tofile(blob_path)
    meta = {
        "count": seq.count,
        "height": seq.frames.shape[1],
        "width": seq.frames.shape[2],
        "dt_us": seq.dt_us,
        "t_start_us": seq.t_start_us,
    }
    with open(blob_path + ".json", "w") as f:
        json.dump(meta, f, sort_keys=True)


def load_frame_sequence(blob_path: str) -> FrameSequence:
    """Read a frame-sequence container written by save_frame_sequence."""
    sidecar = blob_path + ".json"
    try:
        with open(sidecar) as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidPayloadError(f"bad sidecar {sidecar}: {e}") from e
    n, h, w = int(meta["count"]), int(meta["height"]), int(meta["width"])
    data = np.fromfile(blob_path, dtype=np.uint8)
    if data.size < n * h * w:
        raise TruncatedError(f"blob has {data.size} bytes, sidecar declares {n * h * w}")
    if data.size > n * h * w:
        raise InvalidPayloadError(f"blob has {data.size} bytes, sidecar declares {n * h * w}")
    return FrameSequence(data.reshape(n, h, w), int(meta["t_start_us"]), int(meta["dt_us"]))


def render_frames(seq: FrameSequence, out_dir: str, prefix: str = "frame") -> list[str]:
    """Export each frame as an 8-bit grayscale PNG; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i in range(seq.count):
        path = os.path.join(out_dir, f"{prefix}_{i:04d}.png")
        Image.fromarray(seq.frames[i], mode="L").save(path)
        paths.append(path)
    return paths
