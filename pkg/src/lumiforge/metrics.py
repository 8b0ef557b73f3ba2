"""Lighting-fidelity metrics for generated videos.

Embedding-based scores go through the :class:`FrameEmbedder` interface. The
shipped defaults are deterministic proxies (a fixed random projection for
frame similarity and a codec-fitted linear map for text similarity), so
absolute values are only comparable within one set of checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .canvas import CanvasSequence
from .render import FrameSequence

LUMA = np.array([0.2126, 0.7152, 0.0722])
PATCH_GRID = 8


class MetricError(ValueError):
    pass


@dataclass
class FrameEmbedder:
    name: str
    dim: int
    embed: Callable[[np.ndarray], np.ndarray]  # (H, W, 3) -> unit (dim,)

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        return self.embed(frame)


def _area_resize(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h % size or w % size:
        raise MetricError(f"frame {h}x{w} not divisible into {size}x{size} cells")
    return img.reshape(size, h // size, size, w // size, *img.shape[2:]).mean(axis=(1, 3))


def random_projection_embedder(dim: int = 128, thumb: int = 16, seed: int = 1234) -> FrameEmbedder:
    proj = np.random.default_rng(seed).standard_normal((thumb * thumb * 3, dim)) / math.sqrt(thumb * thumb * 3)

    def embed(frame: np.ndarray) -> np.ndarray:
        x = _area_resize(_rgb(frame), thumb).reshape(-1) - 0.5
        v = x @ proj
        n = np.linalg.norm(v)
        return v / n if n > 0 else v

    return FrameEmbedder(f"randproj{dim}", dim, embed)


def _rgb(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return np.repeat(frame[..., None], 3, axis=-1)
    if frame.shape[-1] == 1:
        return np.repeat(frame, 3, axis=-1)
    return frame


def luminance(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame
    if frame.shape[-1] == 1:
        return frame[..., 0]
    return frame @ LUMA


def _frames(video) -> np.ndarray:
    if isinstance(video, FrameSequence):
        return video.frames
    if isinstance(video, CanvasSequence):
        return video.canvases
    return np.asarray(video)


# -- (1) frame-embedding consistency -------------------------------------------

def frame_embedding_consistency(video, embedder: FrameEmbedder | None = None) -> float:
    frames = _frames(video)
    if len(frames) < 2:
        raise MetricError("need at least two frames")
    embedder = embedder or random_projection_embedder()
    e = np.stack([embedder(f) for f in frames])
    return float(np.mean(np.sum(e[:-1] * e[1:], axis=1)))


# -- (2) perceptual consistency --------------------------------------------------

def _gradients(img: np.ndarray) -> np.ndarray:
    gx = np.diff(img, axis=1)[:-1]
    gy = np.diff(img, axis=0)[:, :-1]
    return np.concatenate([gx, gy], axis=-1)


def perceptual_distance(a: np.ndarray, b: np.ndarray, scales: Sequence[int] = (1, 2, 4)) -> float:
    """Multi-scale distance between signed local-gradient maps (RMS per scale, summed)."""
    a, b = _rgb(a), _rgb(b)
    if a.shape != b.shape:
        raise MetricError("frames differ in shape")
    h = a.shape[0]
    total = 0.0
    for s in scales:
        ga, gb = _gradients(_area_resize(a, h // s)), _gradients(_area_resize(b, h // s))
        total += float(np.sqrt(np.mean((ga - gb) ** 2)))
    return total


def perceptual_consistency(video) -> float:
    frames = _frames(video)
    if len(frames) < 2:
        raise MetricError("need at least two frames")
    return float(np.mean([perceptual_distance(frames[i], frames[i + 1]) for i in range(len(frames) - 1)]))


# -- (3) lighting direction --------------------------------------------------------

def bright_centroid(frame: np.ndarray, percentile: float = 90.0) -> np.ndarray | None:
    """Intensity-weighted (x, y) centroid of pixels at or above the luminance percentile."""
    lum = luminance(frame)
    if lum.max() <= 0:
        return None
    wgt = np.where(lum >= np.percentile(lum, percentile), lum, 0.0)
    h, w = lum.shape
    ys, xs = np.mgrid[:h, :w]
    s = wgt.sum()
    return np.array([(wgt * xs).sum() / s, (wgt * ys).sum() / s])


def estimate_direction(frame: np.ndarray, percentile: float = 90.0,
                       frontal_radius: float = 0.01) -> np.ndarray | None:
    """Unit image-plane direction (x right, y down) from centre to the bright region.

    Returns ``None`` for an all-black frame and (0, 0) when the bright-region
    centroid lies within ``frontal_radius`` (fraction of the half-size) of the
    image centre.
    """
    c = bright_centroid(frame, percentile)
    if c is None:
        return None
    h, w = np.shape(frame)[:2]
    off = c - np.array([(w - 1) / 2, (h - 1) / 2])
    n = np.linalg.norm(off)
    if n <= frontal_radius * min(h, w) / 2:
        return np.zeros(2)
    return off / n


def direction_errors(video, reference) -> np.ndarray:
    """Per-frame direction error; NaN where either frame is black."""
    frames, ref = _frames(video), _frames(reference)
    if len(frames) != len(ref):
        raise MetricError(f"length mismatch {len(frames)} vs {len(ref)}")
    out = np.full(len(frames), np.nan)
    for t, (f, r) in enumerate(zip(frames, ref)):
        a, b = estimate_direction(f), estimate_direction(r)
        if a is not None and b is not None:
            out[t] = np.linalg.norm(a - b)
    return out


def direction_rmse(video, reference) -> float:
    e = direction_errors(video, reference)
    ok = ~np.isnan(e)
    if not ok.any():
        return float("nan")
    return float(np.sqrt(np.mean(e[ok] ** 2)))


# -- (4) brightness distribution consistency --------------------------------------

def brightness_distribution(frame: np.ndarray, grid: int = PATCH_GRID) -> np.ndarray:
    p = _area_resize(luminance(frame), grid).reshape(-1)
    s = p.sum()
    return p / s if s > 0 else np.full(p.shape, 1.0 / p.size)


def brightness_consistency(video, reference, grid: int = PATCH_GRID) -> float:
    frames, ref = _frames(video), _frames(reference)
    if len(frames) != len(ref):
        raise MetricError(f"length mismatch {len(frames)} vs {len(ref)}")
    scores = [np.minimum(brightness_distribution(f, grid), brightness_distribution(r, grid)).sum()
              for f, r in zip(frames, ref)]
    return float(np.mean(scores))


# -- (5) text/video similarity -----------------------------------------------------

def text_video_similarity(video, caption: str, image_embed: Callable[[np.ndarray], np.ndarray],
                          text_embed: Callable[[str], np.ndarray]) -> float:
    """Mean cosine between per-frame image embeddings (N, d) and the caption embedding."""
    frames = _frames(video)
    img = np.asarray(image_embed(frames), dtype=np.float64)
    txt = np.asarray(text_embed(caption), dtype=np.float64)
    if img.shape[-1] != txt.shape[-1]:
        raise MetricError(f"embedding dims differ: image {img.shape[-1]} vs text {txt.shape[-1]}")
    img = img / np.maximum(np.linalg.norm(img, axis=1, keepdims=True), 1e-12)
    txt = txt / max(np.linalg.norm(txt), 1e-12)
    return float(np.mean(img @ txt))


# -- report ------------------------------------------------------------------------

@dataclass
class MetricsReport:
    consistency_embed: float
    consistency_perceptual: float
    direction_rmse: float
    brightness_consistency: float
    text_similarity: float | None
    per_frame_detail: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_video(video, reference, caption: str | None = None,
                   image_embed: Callable | None = None, text_embed: Callable | None = None,
                   embedder: FrameEmbedder | None = None,
                   reference_canvases=None) -> MetricsReport:
    """All five metrics.

    ``reference`` drives the brightness comparison; direction uses
    ``reference_canvases`` when given, else ``reference``.
    """
    frames = _frames(video)
    dir_ref = reference_canvases if reference_canvases is not None else reference
    errs = direction_errors(frames, dir_ref)
    ref = _frames(reference)
    detail = []
    for t in range(len(frames)):
        detail.append({
            "frame": t,
            "direction_error": None if np.isnan(errs[t]) else float(errs[t]),
            "brightness_intersection": float(np.minimum(brightness_distribution(frames[t]),
                                                        brightness_distribution(ref[t])).sum()),
        })
    ok = ~np.isnan(errs)
    text_sim = None
    if caption is not None and image_embed is not None and text_embed is not None:
        text_sim = text_video_similarity(frames, caption, image_embed, text_embed)
    return MetricsReport(
        consistency_embed=frame_embedding_consistency(frames, embedder),
        consistency_perceptual=perceptual_consistency(frames),
        direction_rmse=float(np.sqrt(np.mean(errs[ok] ** 2))) if ok.any() else float("nan"),
        brightness_consistency=brightness_consistency(frames, reference),
        text_similarity=text_sim,
        per_frame_detail=detail,
    )


def border_statistics(video, grid: int = PATCH_GRID) -> np.ndarray:
    """Mean RGB of each border patch of the grid, averaged over frames: (n_border, 3)."""
    frames = np.stack([_rgb(f) for f in _frames(video)])
    cells = np.stack([_area_resize(f, grid) for f in frames]).mean(axis=0)
    mask = np.zeros((grid, grid), bool)
    mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
    return cells[mask]


def background_diversity(videos: Sequence) -> float:
    """Total variance of border-patch statistics across videos (e.g. sampling seeds)."""
    if len(videos) < 2:
        raise MetricError("need at least two videos")
    stats = np.stack([border_statistics(v).reshape(-1) for v in videos])
    return float(stats.var(axis=0, ddof=1).sum())
