"""Elastic text deformation via fiducial-point displacement and TPS warping.

A 2(N+1)-point control grid sits on the top and bottom image edges, a
background strip of width W/(4N) is concatenated on the left (displaced
characters may spill past the original boundary), and every fiducial point
moves left by theta = mu - lambda*s where mu ~ U[0, W/(4N)],
lambda = max(W/(8N), mu) and s in 1..6 is the intensity level. Horizontal
mode (ha) keeps y; curved mode (ca) also shifts y by -theta, so |dx| = |dy|
per point and character shapes survive roughly intact. Pixels follow the
moved grid through a thin-plate-spline warp with kernel U(r) = r^2 log r^2,
backward-mapped (the inverse spline is solved by swapping point roles) with
bilinear sampling and replicate borders.

mu is drawn once per fiducial point, which reproduces the unevenly spaced
character look of the target datasets. Everything is deterministic given
(seed, manifest, mode, s, N): per-image generators derive from a sha256 of
the seed and the image's manifest path.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .imgio import read_image, write_pgm

MODES = ("ha", "ca")
INTENSITY_LEVELS = (1, 2, 3, 4, 5, 6)
DEFAULT_GRID_N = 9  # 20 control points


@dataclass
class FiducialSpec:
    """Control grid for one image: points along the top and bottom edges."""

    width: int
    height: int
    n: int
    points: np.ndarray  # (2(N+1), 2) as (x, y); top row first, then bottom
    pad: float          # left background strip width, W/(4N)

    @property
    def count(self):
        return len(self.points)


def make_fiducials(width, height, n):
    if width <= 0 or height <= 0 or n <= 0:
        raise ConfigError(f"fiducial grid needs positive W,H,N; got {width},{height},{n}")
    xs = np.arange(n + 1) * (width / n)
    top = np.stack([xs, np.zeros(n + 1)], axis=1)
    bottom = np.stack([xs, np.full(n + 1, float(height))], axis=1)
    return FiducialSpec(
        width=width, height=height, n=n,
        points=np.concatenate([top, bottom]).astype(np.float64),
        pad=width / (4.0 * n),
    )


def sample_theta(width, n, s, rng):
    """One displacement magnitude: theta = mu - lambda*s <= 0."""
    if s not in INTENSITY_LEVELS:
        raise ConfigError(f"intensity level must be in 1..6, got {s}")
    mu = rng.uniform(0.0, width / (4.0 * n))
    lam = max(width / (8.0 * n), mu)
    return mu - lam * s


def displace(point, theta, mode):
    """Move one fiducial point left (ha) or left-and-up (ca)."""
    if theta > 0:
        raise ContractError(f"theta must be <= 0, got {theta}")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    x, y = float(point[0]), float(point[1])
    if mode == "ha":
        return np.array([x + theta, y])
    return np.array([x + theta, y - theta])


# ---------------------------------------------------------------------------
# thin-plate spline


@dataclass
class TpsParams:
    control: np.ndarray  # (K, 2) source control points
    weights: np.ndarray  # (K, 2) kernel weights per output coordinate
    affine: np.ndarray   # (3, 2) rows: constant, x, y


def _tps_kernel(r2):
    # U(r) = r^2 log r^2 with U(0) = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = r2 * np.log(r2)
    return np.where(r2 > 0, u, 0.0)


def tps_solve(src, dst):
    """Fit the interpolating spline taking src control points onto dst."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ConfigError(f"control point sets disagree: {src.shape} vs {dst.shape}")
    k = src.shape[0]
    if k < 3:
        raise ConfigError(f"TPS needs at least 3 control points, got {k}")
    d2 = ((src[:, None, :] - src[None, :, :]) ** 2).sum(-1)
    system = np.zeros((k + 3, k + 3))
    system[:k, :k] = _tps_kernel(d2)
    system[:k, k] = 1.0
    system[:k, k + 1 :] = src
    system[k, :k] = 1.0
    system[k + 1 :, :k] = src.T
    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericError(
            f"TPS system is singular or near-singular (condition {cond:.3e}); "
            "control points may be collinear or duplicated"
        )
    rhs = np.zeros((k + 3, 2))
    rhs[:k] = dst
    solution = np.linalg.solve(system, rhs)
    return TpsParams(control=src, weights=solution[:k], affine=solution[k:])


def tps_map(params, points):
    """Apply the fitted spline to (M, 2) points."""
    pts = np.asarray(points, dtype=np.float64)
    d2 = ((pts[:, None, :] - params.control[None, :, :]) ** 2).sum(-1)
    out = params.affine[0] + pts @ params.affine[1:]
    return out + _tps_kernel(d2) @ params.weights


def tps_warp(image, params, out_size):
    """Backward-map warp: `params` must take output coords to source coords.

    Bilinear sampling; out-of-bounds reads replicate the border pixel.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    out_h, out_w = out_size
    gy, gx = np.mgrid[0:out_h, 0:out_w]
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)
    src = tps_map(params, grid)
    sx = np.clip(src[:, 0], 0.0, w - 1.0)
    sy = np.clip(src[:, 1], 0.0, h - 1.0)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return (top * (1 - fy) + bot * fy).reshape(out_h, out_w).astype(np.float32)


# ---------------------------------------------------------------------------
# dataset construction


def _image_rng(seed, rel_path):
    digest = hashlib.sha256(f"{seed}:{rel_path}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def warp_image(img, mode, s, n, rng):
    """Pad, displace the grid, and warp one [0,1] grayscale image."""
    h, w = img.shape
    spec = make_fiducials(w, h, n)
    pad_px = max(1, int(round(spec.pad)))
    padded = np.concatenate([np.repeat(img[:, :1], pad_px, axis=1), img], axis=1)
    thetas = np.array([sample_theta(w, n, s, rng) for _ in range(spec.count)])
    src = spec.points + np.array([pad_px, 0.0])
    dst = np.stack([
        displace(p, theta, mode) for p, theta in zip(src, thetas)
    ])
    backward = tps_solve(dst, src)  # swapped roles: output coords -> source coords
    return tps_warp(padded, backward, out_size=padded.shape), thetas


def read_manifest(path):
    """Manifest lines are 'relative/image/path<TAB>label'."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'path<TAB>label'")
        rel, label = line.split("\t", 1)
        if not label:
            raise ConfigError(f"{path}:{lineno}: empty label")
        entries.append((rel, label))
    return entries


def write_manifest(path, entries):
    path = Path(path)
    lines = []
    for rel, label in entries:
        if "\t" in label:
            raise ConfigError(f"label contains a TAB: {label!r}")
        lines.append(f"{rel}\t{label}")
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def build_dataset(manifest_in, out_dir, mode, s, n=DEFAULT_GRID_N, seed=0):
    """Warp every manifest image; labels pass through unchanged.

    Unreadable entries are recorded and skipped, the build continues.
    Returns {"manifest": out_manifest_path, "written": [...], "errors": [...]}.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if s not in INTENSITY_LEVELS:
        raise ConfigError(f"intensity level must be in 1..6, got {s}")
    manifest_in = Path(manifest_in)
    base = manifest_in.parent
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = read_manifest(manifest_in)
    written, errors, out_entries = [], [], []
    for rel, label in entries:
        try:
            img = read_image(base / rel)
            warped, _ = warp_image(img, mode, s, n, _image_rng(seed, rel))
            name = f"{Path(rel).stem}_{mode}{s}.pgm"
            write_pgm(out_dir / name, warped)
            out_entries.append((name, label))
            written.append(name)
        except Exception as exc:  # per-entry failure must not stop the build
            errors.append((rel, str(exc)))
    out_manifest = out_dir / "manifest.txt"
    write_manifest(out_manifest, out_entries)
    return {"manifest": out_manifest, "written": written, "errors": errors}
