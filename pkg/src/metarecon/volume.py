"""Voxel grids, coordinate normalization, slice sampling, task construction,
and the MVOL on-disk format.

Grids are stored as C-ordered (nx, ny, nz) float64 arrays; binary masks hold
exactly 0.0/1.0.  Normalized coordinates map index i on an axis of extent n
to 2i/(n-1) - 1, so grid corners land exactly on the corners of [-1, 1]^3.
Axis convention: sagittal = x, coronal = y, axial = z.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, FormatError

AXES = {"sagittal": 0, "coronal": 1, "axial": 2}

_MAGIC = b"MVOL1\x00"
_MAX_VOXELS = 2**31


class VolumeGrid:
    """Axis-aligned voxel grid with physical spacing."""

    def __init__(self, values, spacing_mm=(1.0, 1.0, 1.0)):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3:
            raise DimensionError(f"grid values must be rank 3, got {values.ndim}")
        self.values = values
        self.dims = values.shape
        self.spacing_mm = tuple(float(s) for s in spacing_mm)
        if any(s <= 0 for s in self.spacing_mm):
            raise ContractError(f"spacing must be positive, got {self.spacing_mm}")

    def is_binary(self):
        v = self.values
        return bool(np.all((v == 0.0) | (v == 1.0)))

    def foreground_count(self):
        return int((self.values > 0.5).sum())

    def copy(self):
        return VolumeGrid(self.values.copy(), self.spacing_mm)


def normalize_index(idx, dims):
    """Map a voxel index to normalized coordinates in [-1, 1]^3."""
    out = []
    for i, n in zip(idx, dims):
        if not 0 <= i < n:
            raise ContractError(f"index {tuple(idx)} out of range for dims {tuple(dims)}")
        out.append(2.0 * i / (n - 1) - 1.0 if n > 1 else 0.0)
    return tuple(out)


def _axis_coords(n):
    return 2.0 * np.arange(n) / (n - 1) - 1.0 if n > 1 else np.zeros(n)


def grid_coords(dims) -> np.ndarray:
    """All voxel centers as an (nx*ny*nz, 3) array, C order (z fastest)."""
    ax = [_axis_coords(n) for n in dims]
    mesh = np.meshgrid(*ax, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


@dataclass
class ObservationSet:
    """Sparse labeled points in normalized coordinates."""

    points: np.ndarray  # M x 3 in [-1, 1]^3
    labels: np.ndarray  # M binary values
    provenance: dict

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise DimensionError(f"points must be M x 3, got {self.points.shape}")
        if self.points.shape[0] != self.labels.shape[0]:
            raise DimensionError("points and labels lengths differ")
        if self.points.shape[0] < 1:
            raise ContractError("observation set must be nonempty")

    def __len__(self):
        return self.points.shape[0]


@dataclass
class Task:
    context: ObservationSet
    target: ObservationSet
    shape_id: str


def sample_slices(grid: VolumeGrid, axis, w: int, phase: int) -> ObservationSet:
    """Every voxel (both labels) on slices with index = phase (mod w)."""
    ax = AXES[axis] if isinstance(axis, str) else int(axis)
    extent = grid.dims[ax]
    if w >= extent:
        raise ContractError(f"slice stride w={w} must be below extent {extent}")
    if not 0 <= phase < w:
        raise ContractError(f"phase {phase} outside [0, {w})")
    sel = [np.arange(n) for n in grid.dims]
    sel[ax] = np.arange(phase, extent, w)
    mesh = np.meshgrid(*sel, indexing="ij")
    idx = np.stack([m.reshape(-1) for m in mesh], axis=1)
    coords = np.column_stack(
        [_axis_coords(n)[idx[:, a]] for a, n in enumerate(grid.dims)]
    )
    labels = grid.values[idx[:, 0], idx[:, 1], idx[:, 2]]
    axis_name = axis if isinstance(axis, str) else list(AXES)[ax]
    return ObservationSet(coords, labels, {"axis": axis_name, "w": w, "phase": phase})


def make_task(grid: VolumeGrid, sampler, n_target: int, rng, shape_id="",
              context_cap=None) -> Task:
    """Build a context/target pair from one grid.

    Context: all voxels on the sampled slices (random phase), optionally
    subsampled to ``context_cap`` points to bound the per-step cost of
    stochastic meta-training.  Target: ``n_target`` voxels drawn uniformly
    without replacement from the full grid.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    if n_target < 1:
        raise ContractError("n_target must be >= 1")
    n_vox = int(np.prod(grid.dims))
    if n_target > n_vox:
        raise ContractError(f"n_target {n_target} exceeds voxel count {n_vox}")

    w = int(sampler["w"])
    phase = int(rng.integers(0, w))
    context = sample_slices(grid, sampler["axis"], w, phase)
    if context_cap is not None and len(context) > context_cap:
        keep = rng.choice(len(context), size=int(context_cap), replace=False)
        keep.sort()
        context = ObservationSet(
            context.points[keep], context.labels[keep],
            dict(context.provenance, subset=int(context_cap)),
        )

    flat = rng.choice(n_vox, size=n_target, replace=False)
    tidx = np.stack(np.unravel_index(flat, grid.dims), axis=1)
    tcoords = np.column_stack(
        [_axis_coords(n)[tidx[:, a]] for a, n in enumerate(grid.dims)]
    )
    tlabels = grid.values[tidx[:, 0], tidx[:, 1], tidx[:, 2]]
    target = ObservationSet(tcoords, tlabels, {"kind": "random-subset"})
    return Task(context, target, shape_id)


# ---------------------------------------------------------------------------
# MVOL container: magic, u32 dims, f32 spacing, u8 payload (x fastest)
# ---------------------------------------------------------------------------


def save_volume(path, grid: VolumeGrid):
    if not grid.is_binary():
        raise ContractError("MVOL stores binary masks; grid has non-0/1 values")
    payload = np.asarray(grid.values, dtype=np.uint8).ravel(order="F").tobytes()
    header = _MAGIC + struct.pack(
        "<IIIfff", *grid.dims, *grid.spacing_mm
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_volume(path) -> VolumeGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 6 or blob[:6] != _MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    if len(blob) < 30:
        raise FormatError(f"{path}: truncated header at offset {len(blob)}")
    nx, ny, nz, sx, sy, sz = struct.unpack("<IIIfff", blob[6:30])
    if nx == 0 or ny == 0 or nz == 0 or nx * ny * nz > _MAX_VOXELS:
        raise FormatError(f"{path}: dimension overflow at offset 6 ({nx}x{ny}x{nz})")
    n = nx * ny * nz
    payload = blob[30:]
    if len(payload) < n:
        raise FormatError(f"{path}: truncated payload at offset {30 + len(payload)}")
    if len(payload) > n:
        raise FormatError(f"{path}: trailing bytes at offset {30 + n}")
    raw = np.frombuffer(payload, dtype=np.uint8)
    if raw.max(initial=0) > 1:
        bad = int(np.argmax(raw > 1))
        raise FormatError(f"{path}: non-binary voxel at offset {30 + bad}")
    values = raw.reshape((nx, ny, nz), order="F").astype(np.float64)
    return VolumeGrid(np.ascontiguousarray(values), (sx, sy, sz))
