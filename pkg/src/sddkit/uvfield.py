"""Scalar/vector fields over a fixed-resolution UV grid.

A UvField stores a row-major (H, W, C) grid. Row 0 is the top of the
chart: v runs 0 -> 1 from top to bottom, u runs 0 -> 1 left to right.
Texel (i, j) (column i, row j) is centered at ((i+0.5)/W, (j+0.5)/H).

On disk a field is a raw little-endian float32 file (row-major, top row
first) next to a JSON sidecar with {width, height, channels, kind}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class UvField:
    """Immutable UV-space grid with 1 (tension/displacement) or 3 channels.

    Parameters
    ----------
    width, height : int
        Grid resolution (W columns, H rows).
    channels : int
        1 or 3.
    values : np.ndarray
        Shape (H, W, channels), float64, finite.
    kind : str
        Free-form tag ("displacement", "tension", "albedo", ...) carried
        through serialization.
    """

    width: int
    height: int
    channels: int
    values: np.ndarray = field(repr=False)
    kind: str = "generic"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"bad resolution {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ValidationError(f"channels must be 1 or 3, got {self.channels}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.height, self.width, self.channels):
            raise ValidationError(
                f"grid shape {v.shape} does not match "
                f"(H={self.height}, W={self.width}, C={self.channels})"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, values, kind="generic"):
        """Build a field from an (H, W), (H, W, 1) or (H, W, 3) array."""
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ValidationError(f"expected 2D or 3D array, got shape {v.shape}")
        h, w, c = v.shape
        return cls(width=w, height=h, channels=c, values=v, kind=kind)

    @classmethod
    def constant(cls, width, height, value, channels=1, kind="generic"):
        v = np.full((height, width, channels), float(value))
        return cls(width=width, height=height, channels=channels, values=v, kind=kind)

    def same_resolution(self, other: "UvField") -> bool:
        return self.width == other.width and self.height == other.height

    def grid(self) -> np.ndarray:
        """Read-only (H, W, C) view of the grid."""
        return self.values


def sample_uv(field: UvField, u, v):
    """Bilinear sample at (u, v) with clamp-to-edge addressing.

    u, v must lie in [0, 1]. Exact texel centers return stored values.
    Returns a scalar for 1-channel fields, a length-3 array otherwise.
    Accepts arrays of u/v (same shape) for batch lookup.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u < 0.0) or np.any(u > 1.0) or np.any(v < 0.0) or np.any(v > 1.0):
        raise ValidationError("sample_uv: (u, v) outside [0, 1]")

    out = _bilinear(field.values, u * field.width - 0.5, v * field.height - 0.5)
    if field.channels == 1:
        out = out[..., 0]
    if out.ndim == 0 or (field.channels == 3 and out.ndim == 1):
        return out if out.ndim else float(out)
    return out


def _bilinear(grid, x, y):
    """Bilinear lookup on (H, W, C) at continuous texel coords (x, y).

    (0, 0) is the center of the top-left texel; coordinates are clamped
    to the edge texels.
    """
    h, w = grid.shape[0], grid.shape[1]
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    ix0 = np.clip(x0, 0, w - 1).astype(np.intp)
    ix1 = np.clip(x0 + 1, 0, w - 1).astype(np.intp)
    iy0 = np.clip(y0, 0, h - 1).astype(np.intp)
    iy1 = np.clip(y0 + 1, 0, h - 1).astype(np.intp)
    fx = fx[..., None]
    fy = fy[..., None]
    top = grid[iy0, ix0] * (1.0 - fx) + grid[iy0, ix1] * fx
    bot = grid[iy1, ix0] * (1.0 - fx) + grid[iy1, ix1] * fx
    return top * (1.0 - fy) + bot * fy


def save_field(fld: UvField, path) -> None:
    """Write raw float32 data plus the JSON sidecar.

    `path` names the raw file; the sidecar lands at `path + ".json"`.
    """
    path = Path(path)
    raw = fld.values.astype("<f4").tobytes()
    path.write_bytes(raw)
    sidecar = {
        "width": fld.width,
        "height": fld.height,
        "channels": fld.channels,
        "kind": fld.kind,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1) + "\n")


def load_field(path) -> UvField:
    path = Path(path)
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise ValidationError(f"missing sidecar {sidecar_path}")
    meta = json.loads(sidecar_path.read_text())
    for key in ("width", "height", "channels", "kind"):
        if key not in meta:
            raise ValidationError(f"sidecar {sidecar_path} missing '{key}'")
    w, h, c = int(meta["width"]), int(meta["height"]), int(meta["channels"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != w * h * c:
        raise ValidationError(
            f"{path}: expected {w * h * c} floats, found {raw.size}"
        )
    values = raw.astype(np.float64).reshape(h, w, c)
    return UvField(width=w, height=h, channels=c, values=values, kind=str(meta["kind"]))


def export_png16(fld: UvField, path) -> dict:
    """Export as 16-bit grayscale PNG for inspection.

    Values map linearly from [min, max] to [0, 65535]; the mapping is
    recorded in a sidecar next to the PNG and returned. Multi-channel
    fields export the per-texel channel mean.
    """
    from PIL import Image

    data = fld.values.mean(axis=2) if fld.channels > 1 else fld.values[:, :, 0]
    lo = float(data.min())
    hi = float(data.max())
    span = hi - lo
    if span <= 0.0:
        scaled = np.zeros_like(data)
    else:
        scaled = (data - lo) / span
    img = Image.fromarray(np.round(scaled * 65535.0).astype(np.uint16))
    img.save(str(path))
    mapping = {"min": lo, "max": hi, "kind": fld.kind}
    Path(str(path) + ".json").write_text(json.dumps(mapping, indent=1) + "\n")
    return mapping
