"""Frame sampling and optical-flow extraction for model input.

The pipeline samples T frames from an occurrence interval, then computes the
flow of every later frame against the first sampled frame, giving a
(T-1, 2, h, w) tensor: channel 0 horizontal, channel 1 vertical displacement
in pixels.  Precomputed flow can bypass estimation entirely.
"""

from __future__ import annotations

from typing import Callable, Protocol

import numpy as np
from scipy import ndimage

from .errors import EstimatorFailure, ShapeMismatch

FlowEstimator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def uniform_sample(interval_length: int, t: int) -> list[int]:
    """Evenly spaced frame indices covering [0, interval_length-1].

    Uses round-half-up of i*(L-1)/(T-1); endpoints are always included and
    indices repeat when the interval is shorter than T.
    """
    if interval_length < 1:
        raise ShapeMismatch(f"interval_length must be >= 1, got {interval_length}")
    if t < 2:
        raise ShapeMismatch(f"t must be >= 2, got {t}")
    if interval_length == 1:
        return [0] * t
    num = interval_length - 1
    den = t - 1
    # round-half-up in exact integer arithmetic: floor(i*num/den + 1/2)
    return [(2 * i * num + den) // (2 * den) for i in range(t)]


def _to_gray(frames: np.ndarray) -> np.ndarray:
    if frames.ndim == 4:  # [T, 3, H, W]
        return frames.mean(axis=1)
    if frames.ndim == 3:  # already grayscale [T, H, W]
        return frames
    raise ShapeMismatch(f"frames must be [T, 3, H, W] or [T, H, W], got {frames.shape}")


def _warp(image: np.ndarray, flow_u: np.ndarray, flow_v: np.ndarray) -> np.ndarray:
    h, w = image.shape
    ys, xs = np.mgrid[0:h, 0:w]
    coords = np.stack([ys + flow_v, xs + flow_u])
    return ndimage.map_coordinates(image, coords, order=1, mode="wrap")


def _horn_schunck_level(i0, i1, u, v, n_iters: int, alpha: float):
    ix = 0.5 * (np.gradient(i0, axis=1) + np.gradient(i1, axis=1))
    iy = 0.5 * (np.gradient(i0, axis=0) + np.gradient(i1, axis=0))
    it = i1 - i0
    kernel = np.array([[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]])
    denom_base = alpha**2 + ix**2 + iy**2
    for _ in range(n_iters):
        u_bar = ndimage.convolve(u, kernel, mode="wrap")
        v_bar = ndimage.convolve(v, kernel, mode="wrap")
        common = (ix * u_bar + iy * v_bar + it) / denom_base
        u = u_bar - ix * common
        v = v_bar - iy * common
    return u, v


def variational_flow(i0: np.ndarray, i1: np.ndarray, levels: int = 3, n_iters: int = 120, alpha: float = 0.5) -> np.ndarray:
    """Coarse-to-fine Horn-Schunck flow from frame i0 to frame i1.

    A reference estimator for smoke tests; real pipelines should feed
    precomputed flow.  Returns (2, h, w): channel 0 horizontal u, channel 1
    vertical v, in pixels.
    """
    if i0.shape != i1.shape or i0.ndim != 2:
        raise ShapeMismatch(f"estimator expects matching 2-d frames, got {i0.shape} vs {i1.shape}")
    pyramid = [(i0.astype(np.float64), i1.astype(np.float64))]
    for _ in range(levels - 1):
        a, b = pyramid[-1]
        if min(a.shape) < 16:
            break
        pyramid.append((ndimage.zoom(a, 0.5, order=1), ndimage.zoom(b, 0.5, order=1)))
    u = np.zeros_like(pyramid[-1][0])
    v = np.zeros_like(pyramid[-1][0])
    for level, (a, b) in enumerate(reversed(pyramid)):
        if level > 0:
            scale_y = a.shape[0] / u.shape[0]
            scale_x = a.shape[1] / u.shape[1]
            u = ndimage.zoom(u, (scale_y, scale_x), order=1) * scale_x
            v = ndimage.zoom(v, (scale_y, scale_x), order=1) * scale_y
        b_warped = _warp(b, u, v)
        du, dv = _horn_schunck_level(a, b_warped, np.zeros_like(u), np.zeros_like(v), n_iters, alpha)
        u, v = u + du, v + dv
    return np.stack([u, v]).astype(np.float32)


def flow_vs_first(frames: np.ndarray, estimator: FlowEstimator = variational_flow) -> np.ndarray:
    """Flow of every frame after the first against the first frame.

    frames: [T, 3, H, W] or [T, H, W] with values in [0, 1].  Output t holds
    the flow frame_0 -> frame_{t+1}, so the result is [T-1, 2, H, W].
    """
    gray = _to_gray(np.asarray(frames, dtype=np.float64))
    t = gray.shape[0]
    if t < 2:
        raise ShapeMismatch(f"need at least 2 frames, got {t}")
    first = gray[0]
    flows = []
    for k in range(1, t):
        try:
            flows.append(estimator(first, gray[k]))
        except Exception as exc:  # noqa: BLE001 - annotate the failing frame
            raise EstimatorFailure(f"flow estimation failed at frame {k}: {exc}") from exc
    return np.stack(flows).astype(np.float32)
