"""Synthetic chest-CT phantoms and the threshold-based air segmentation baseline.

Volumes are indexed ``values[x, y, z]``; on disk they are stored x-fastest.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

HU_AIR_THRESHOLD = -400


class VolumeError(ValueError):
    pass


@dataclass(frozen=True)
class VoxelGrid:
    values: np.ndarray  # int16, shape (nx, ny, nz)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise VolumeError("voxel grid must be three-dimensional")
        object.__setattr__(self, "values", v.astype(np.int16, copy=False))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)  # type: ignore[return-value]

    def digest(self) -> str:
        return hashlib.sha256(self.values.tobytes(order="F")).hexdigest()


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]

    def contains(self, x, y, z):
        (cx, cy, cz), (rx, ry, rz) = self.center, self.radii
        return ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 + ((z - cz) / rz) ** 2 <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 48)
    # inclusive voxel extents (x0, x1, y0, y1, z0, z1)
    body: tuple[int, int, int, int, int, int] = (6, 57, 8, 55, 0, 47)
    lungs: tuple[Ellipsoid, Ellipsoid] = (
        Ellipsoid((20.0, 31.5, 28.0), (11.0, 15.0, 15.0)),
        Ellipsoid((43.0, 31.5, 28.0), (11.0, 15.0, 15.0)),
    )
    # vertical cylinder running from z_bottom up through the top face
    trachea_center: tuple[float, float] = (31.5, 31.5)
    trachea_radius: float = 3.5
    trachea_bottom: int = 30
    bowel_center: tuple[float, float, float] = (31.5, 24.0, 6.0)
    bowel_radius: float = 8.0
    hu_background: int = -1000
    hu_body: int = 40
    hu_air: int = -800
    jitter: float = 0.5
    seed: int = 0

    def resolved(self) -> "PhantomSpec":
        """Lung centres shifted by seeded uniform jitter of at most ``jitter`` voxels."""
        if self.jitter <= 0:
            return self
        rng = np.random.default_rng(self.seed)
        lungs = tuple(
            Ellipsoid(tuple(float(c) for c in np.add(l.center, rng.uniform(-self.jitter, self.jitter, 3))),
                      l.radii)
            for l in self.lungs
        )
        return replace(self, lungs=lungs, jitter=0.0)

    @classmethod
    def for_dims(cls, dims: tuple[int, int, int], seed: int = 0) -> "PhantomSpec":
        """Default anatomy rescaled per axis to ``dims``."""
        base = cls()
        sx, sy, sz = (d / b for d, b in zip(dims, base.dims))
        x0, x1, y0, y1, z0, z1 = base.body
        body = (round(x0 * sx), round(x1 * sx), round(y0 * sy), round(y1 * sy),
                round(z0 * sz), round(z1 * sz))
        # keep the top/bottom body extents on the volume faces
        body = body[:4] + (0, dims[2] - 1)
        lungs = tuple(
            Ellipsoid((l.center[0] * sx, l.center[1] * sy, l.center[2] * sz),
                      (l.radii[0] * sx, l.radii[1] * sy, l.radii[2] * sz))
            for l in base.lungs
        )
        radial = min(sx, sy)
        return replace(
            base, dims=tuple(dims), body=body, lungs=lungs,
            trachea_center=(base.trachea_center[0] * sx, base.trachea_center[1] * sy),
            trachea_radius=base.trachea_radius * radial,
            trachea_bottom=round(base.trachea_bottom * sz),
            bowel_center=(base.bowel_center[0] * sx, base.bowel_center[1] * sy, base.bowel_center[2] * sz),
            bowel_radius=base.bowel_radius * min(sx, sy, sz),
            jitter=base.jitter * min(sx, sy, sz),
            seed=seed,
        )

    def validate(self) -> None:
        nx, ny, nz = self.dims
        x0, x1, y0, y1, z0, z1 = self.body
        if min(self.dims) < 1:
            raise VolumeError("dims must be positive")
        if not (1 <= x0 <= x1 <= nx - 2 and 1 <= y0 <= y1 <= ny - 2):
            raise VolumeError("body must not touch the x or y faces of the volume")
        if not 0 <= z0 <= z1 <= nz - 1:
            raise VolumeError("body z extent lies outside the volume")
        for lung in self.lungs:
            (cx, cy, cz), (rx, ry, rz) = lung.center, lung.radii
            if min(rx, ry, rz) <= 0:
                raise VolumeError("lung radii must be positive")
            if not (x0 < cx - rx and cx + rx < x1 and y0 < cy - ry and cy + ry < y1
                    and z0 < cz - rz and cz + rz < z1):
                raise VolumeError(f"lung at {lung.center} touches or leaves the body")


def body_mask(spec: PhantomSpec) -> np.ndarray:
    x, y, z = np.indices(spec.dims)
    x0, x1, y0, y1, z0, z1 = spec.body
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1) & (z >= z0) & (z <= z1)


def region_masks(spec: PhantomSpec) -> dict[str, np.ndarray]:
    """Boolean masks of every anatomical region, each clipped to the body."""
    x, y, z = np.indices(spec.dims).astype(np.float64)
    body = body_mask(spec)
    lungs = np.zeros(spec.dims, dtype=bool)
    for lung in spec.lungs:
        lungs |= lung.contains(x, y, z)
    tx, ty = spec.trachea_center
    trachea = np.zeros(spec.dims, dtype=bool)
    if spec.trachea_radius > 0:
        trachea = ((x - tx) ** 2 + (y - ty) ** 2 <= spec.trachea_radius ** 2) & (z >= spec.trachea_bottom)
    bx, by, bz = spec.bowel_center
    bowel = np.zeros(spec.dims, dtype=bool)
    if spec.bowel_radius > 0:
        bowel = (x - bx) ** 2 + (y - by) ** 2 + (z - bz) ** 2 <= spec.bowel_radius ** 2
    lungs &= body
    return {
        "body": body,
        "lungs": lungs,
        "trachea": trachea & body & ~lungs,
        "bowel": bowel & body & ~lungs,
    }


def make_phantom(spec: PhantomSpec = PhantomSpec()) -> tuple[VoxelGrid, np.ndarray]:
    """Phantom volume and its ground-truth lung mask (trachea and bowel excluded)."""
    spec = spec.resolved()
    spec.validate()
    regions = region_masks(spec)
    values = np.full(spec.dims, spec.hu_background, dtype=np.int16)
    values[regions["body"]] = spec.hu_body
    air = regions["lungs"] | regions["trachea"] | regions["bowel"]
    values[air] = spec.hu_air
    return VoxelGrid(values), regions["lungs"].copy()


def threshold_air(grid: VoxelGrid, hu_threshold: float = HU_AIR_THRESHOLD) -> np.ndarray:
    return grid.values < hu_threshold


_SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


def remove_external_air(mask: np.ndarray) -> np.ndarray:
    """Drop 6-connected components touching an x or y face; z faces do not count."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    labels, _ = ndimage.label(mask, structure=_SIX_CONNECTED)
    faces = np.concatenate([
        labels[0].ravel(), labels[-1].ravel(), labels[:, 0].ravel(), labels[:, -1].ravel(),
    ])
    outside = np.unique(faces[faces > 0])
    return mask & ~np.isin(labels, outside)


def segment_lung_proxy(grid: VoxelGrid) -> np.ndarray:
    return remove_external_air(threshold_air(grid, HU_AIR_THRESHOLD))


# file formats -----------------------------------------------------------------
#
#   volume: b"MLPV1 nx ny nz\n" + int16 little-endian, x-fastest
#   mask:   b"MLPM1 nx ny nz\n" + bits packed little-endian, x-fastest


def _header(magic: str, dims) -> bytes:
    return f"{magic} {dims[0]} {dims[1]} {dims[2]}\n".encode("ascii")


def _read_header(data: bytes, magic: str) -> tuple[tuple[int, int, int], bytes]:
    head, sep, body = data.partition(b"\n")
    parts = head.decode("ascii", errors="replace").split()
    if not sep or len(parts) != 4 or parts[0] != magic:
        raise VolumeError(f"expected a {magic} header")
    try:
        dims = tuple(int(p) for p in parts[1:])
    except ValueError:
        raise VolumeError(f"bad dimensions in {magic} header") from None
    if min(dims) < 1:
        raise VolumeError("dimensions must be positive")
    return dims, body  # type: ignore[return-value]


def encode_volume(grid: VoxelGrid) -> bytes:
    return _header("MLPV1", grid.dims) + grid.values.astype("<i2").tobytes(order="F")


def decode_volume(data: bytes) -> VoxelGrid:
    dims, body = _read_header(data, "MLPV1")
    n = dims[0] * dims[1] * dims[2]
    if len(body) != 2 * n:
        raise VolumeError(f"volume body has {len(body)} bytes, expected {2 * n}")
    return VoxelGrid(np.frombuffer(body, dtype="<i2").reshape(dims, order="F").astype(np.int16))


def encode_mask(mask: np.ndarray) -> bytes:
    mask = np.asarray(mask, dtype=bool)
    return _header("MLPM1", mask.shape) + np.packbits(mask.ravel(order="F"), bitorder="little").tobytes()


def decode_mask(data: bytes) -> np.ndarray:
    dims, body = _read_header(data, "MLPM1")
    n = dims[0] * dims[1] * dims[2]
    if len(body) != (n + 7) // 8:
        raise VolumeError(f"mask body has {len(body)} bytes, expected {(n + 7) // 8}")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=n, bitorder="little")
    return bits.astype(bool).reshape(dims, order="F")


def write_volume(grid: VoxelGrid, path) -> None:
    Path(path).write_bytes(encode_volume(grid))


def read_volume(path) -> VoxelGrid:
    return decode_volume(Path(path).read_bytes())


def write_mask(mask: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_mask(mask))


def read_mask(path) -> np.ndarray:
    return decode_mask(Path(path).read_bytes())
