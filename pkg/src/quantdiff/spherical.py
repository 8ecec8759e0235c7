"""Spherical viewpoint augmentation.

A pixel ``(u, v)`` is lifted to a 3D point at a fixed depth, rotated by a
pitch-yaw rotation ``R = Rx(pitch) @ Ry(yaw)`` and projected back through
the same pinhole. Axes follow the pinhole convention: x right, y down,
z forward. Because every pixel shares one depth, the warp depends only on
ray directions and is a homography; the depth value cancels out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BehindCameraError, ConfigError, DatasetError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError("principal point must lie inside the image")

    @classmethod
    def centered(cls, width: int, height: int, fov_deg: float = 60.0) -> "CameraIntrinsics":
        f = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @classmethod
    def load(cls, path: str | Path) -> "CameraIntrinsics":
        try:
            doc = json.loads(Path(path).read_text())
            return cls(float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]),
                       int(doc["width"]), int(doc["height"]))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{exc.lineno}: {exc.msg}") from None
        except KeyError as exc:
            raise DatasetError(f"{path}: missing key {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class WarpSpec:
    d_yaw: float = 0.0  # radians
    d_pitch: float = 0.0  # radians
    d_center: float = 1.0
    fill: float = 0.0

    def __post_init__(self):
        if self.d_center <= 0:
            raise ConfigError(f"d_center must be positive, got {self.d_center}")
        if abs(self.d_yaw) >= np.pi / 2 or abs(self.d_pitch) >= np.pi / 2:
            raise ConfigError("yaw and pitch must stay within (-pi/2, pi/2)")

    @classmethod
    def degrees(cls, yaw: float, pitch: float, d_center: float = 1.0, fill: float = 0.0) -> "WarpSpec":
        return cls(np.radians(yaw), np.radians(pitch), d_center, fill)

    def inverse(self) -> "WarpSpec":
        return WarpSpec(-self.d_yaw, -self.d_pitch, self.d_center, self.fill)


@dataclass(frozen=True)
class SphericalOffset:
    d: float
    theta: float
    phi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d, self.theta, self.phi], dtype=np.float64)

    def __neg__(self) -> "SphericalOffset":
        return SphericalOffset(-self.d, -self.theta, -self.phi)


def unproject(u, v, d, K: CameraIntrinsics):
    """Lift pixel coordinates to the 3D point at depth ``d`` on their ray."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.broadcast_to(np.asarray(d, dtype=np.float64), np.broadcast_shapes(u.shape, v.shape, np.shape(d)))
    return (u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d.copy()


def project(X, Y, Z, K: CameraIntrinsics):
    Z = np.asarray(Z, dtype=np.float64)
    if np.any(Z <= 0):
        raise BehindCameraError("point has non-positive depth")
    return np.asarray(X) * K.fx / Z + K.cx, np.asarray(Y) * K.fy / Z + K.cy


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_matrix(d_pitch: float, d_yaw: float) -> np.ndarray:
    """``Rx(d_pitch) @ Ry(d_yaw)``: yaw is applied first, then pitch."""
    return rot_x(d_pitch) @ rot_y(d_yaw)


def forward_map(u, v, K: CameraIntrinsics, spec: WarpSpec):
    """Destination coordinates of source pixels (the direct, hole-leaving direction)."""
    X, Y, Z = unproject(u, v, spec.d_center, K)
    P = rotation_matrix(spec.d_pitch, spec.d_yaw) @ np.stack([np.ravel(X), np.ravel(Y), np.ravel(Z)])
    valid = P[2] > 0
    up = np.full(P.shape[1], np.nan)
    vp = np.full(P.shape[1], np.nan)
    up[valid], vp[valid] = project(P[0, valid], P[1, valid], P[2, valid], K)
    return up.reshape(np.shape(u)), vp.reshape(np.shape(u))


def source_coordinates(K: CameraIntrinsics, spec: WarpSpec):
    """For every output pixel, the real-valued source pixel it samples from.

    Returns ``(us, vs)`` of shape ``(height, width)``; NaN marks rays that
    end up behind the camera.
    """
    vv, uu = np.mgrid[0 : K.height, 0 : K.width].astype(np.float64)
    X, Y, Z = unproject(uu, vv, spec.d_center, K)
    R = rotation_matrix(spec.d_pitch, spec.d_yaw)
    P = R.T @ np.stack([X.ravel(), Y.ravel(), Z.ravel()])
    us = np.full(P.shape[1], np.nan)
    vs = np.full(P.shape[1], np.nan)
    valid = P[2] > 0
    us[valid], vs[valid] = project(P[0, valid], P[1, valid], P[2, valid], K)
    us, vs = us.reshape(K.height, K.width), vs.reshape(K.height, K.width)
    # snap round-off so the zero rotation samples pixel centers exactly
    for a in (us, vs):
        r = np.round(a)
        near = np.abs(a - r) < 1e-9
        a[near] = r[near]
    return us, vs


def warp_image(img: np.ndarray, K: CameraIntrinsics, spec: WarpSpec, interpolation: str = "bilinear") -> np.ndarray:
    """Render the view after the camera rotation by inverse mapping.

    Output pixels whose source falls outside the frame take ``spec.fill``.
    Integer images are rounded back to their dtype.
    """
    img = np.asarray(img)
    squeeze = img.ndim == 2
    src = img[..., None] if squeeze else img
    if src.shape[:2] != (K.height, K.width):
        raise ConfigError(f"image is {src.shape[1]}x{src.shape[0]} but intrinsics say {K.width}x{K.height}")
    data = src.astype(np.float64)
    us, vs = source_coordinates(K, spec)
    H, W = K.height, K.width
    inside = np.isfinite(us) & (us >= 0) & (us <= W - 1) & (vs >= 0) & (vs <= H - 1)
    u = np.where(inside, us, 0.0)
    v = np.where(inside, vs, 0.0)
    if interpolation == "nearest":
        out = data[np.round(v).astype(int), np.round(u).astype(int)]
    elif interpolation == "bilinear":
        u0 = np.minimum(np.floor(u).astype(int), W - 1)
        v0 = np.minimum(np.floor(v).astype(int), H - 1)
        u1 = np.minimum(u0 + 1, W - 1)
        v1 = np.minimum(v0 + 1, H - 1)
        a = (u - u0)[..., None]
        b = (v - v0)[..., None]
        out = ((1 - a) * (1 - b) * data[v0, u0] + a * (1 - b) * data[v0, u1]
               + (1 - a) * b * data[v1, u0] + a * b * data[v1, u1])
    else:
        raise ConfigError(f"unknown interpolation {interpolation!r}")
    out = np.where(inside[..., None], out, spec.fill)
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        out = np.clip(np.round(out), info.min, info.max).astype(img.dtype)
    return out[..., 0] if squeeze else out


def sample_offset(rng: np.random.Generator, ranges) -> tuple[SphericalOffset, SphericalOffset]:
    """Draw a warped-view offset uniformly per component; the base view gets its negation.

    ``ranges`` is ``((d_min, d_max), (theta_min, theta_max), (phi_min, phi_max))``.
    """
    ranges = np.asarray(ranges, dtype=np.float64)
    if ranges.shape != (3, 2) or np.any(ranges[:, 0] > ranges[:, 1]):
        raise ConfigError(f"offset ranges must be three (min, max) pairs, got {ranges.tolist()}")
    vals = rng.uniform(ranges[:, 0], ranges[:, 1])
    applied = SphericalOffset(*map(float, vals))
    return applied, -applied


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    mse = np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2)
    return float("inf") if mse == 0 else float(10.0 * np.log10(peak**2 / mse))


# ---------------------------------------------------------------------------
# binary PPM (P6) with maxval 255


def _ppm_tokens(buf: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        out.append(buf[start:pos])
    return out, pos


def read_ppm(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    toks, pos = _ppm_tokens(buf, 4, 0)
    if toks[0] != b"P6":
        raise DatasetError(f"{path}: not a binary PPM (magic {toks[0]!r})")
    w, h, maxval = (int(t) for t in toks[1:])
    if maxval != 255:
        raise DatasetError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    n = w * h * 3
    if len(buf) - pos < n:
        raise DatasetError(f"{path}: truncated pixel data")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos).reshape(h, w, 3).copy()


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img).tobytes())
