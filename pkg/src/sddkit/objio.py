"""Wavefront OBJ reader/writer for the v/vt/f ASCII subset.

Every face vertex must carry a texture coordinate; faces with more
than three vertices are fan-triangulated. A position used with several
texture coordinates (a UV seam) is duplicated on import so that each
mesh vertex owns exactly one UV. The writer emits 9 significant
digits, which makes save -> load -> save reproduce files byte for byte
after the first cycle.
"""

from __future__ import annotations

import numpy as np

from .errors import ParseError
from .mesh import Mesh, Topology

_IGNORED = {"vn", "vp", "o", "g", "s", "usemtl", "mtllib", "l", "p"}


def _parse_floats(parts, count, line_no, path, record):
    if len(parts) < count:
        raise ParseError(
            f"{record} record needs {count} values, got {len(parts)}",
            line=line_no,
            path=path,
        )
    try:
        return [float(p) for p in parts[:count]]
    except ValueError:
        raise ParseError(f"malformed {record} record", line=line_no, path=path)


def _parse_face_vertex(token, n_positions, n_uvs, line_no, path):
    fields = token.split("/")
    if len(fields) < 2 or fields[1] == "":
        raise ParseError(
            f"face vertex '{token}' has no texture coordinate",
            line=line_no,
            path=path,
        )
    try:
        vi = int(fields[0])
        ti = int(fields[1])
    except ValueError:
        raise ParseError(f"malformed face vertex '{token}'", line=line_no, path=path)
    if vi < 1 or vi > n_positions:
        raise ParseError(
            f"face references vertex {vi} of a {n_positions}-vertex file",
            line=line_no,
            path=path,
        )
    if ti < 1 or ti > n_uvs:
        raise ParseError(
            f"face references texture coordinate {ti} of {n_uvs}",
            line=line_no,
            path=path,
        )
    return vi - 1, ti - 1


def load_obj(path):
    """Read an OBJ file and return a Mesh with per-vertex UVs.

    Mesh vertices are ordered by (position index, uv index), so a
    seam-free file written by save_obj loads back with its original
    vertex order intact.
    """
    path = str(path)
    positions = []
    uvs = []
    key_tris = []  # triangles as (position index, uv index) corner keys

    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                positions.append(_parse_floats(parts[1:], 3, line_no, path, "v"))
            elif tag == "vt":
                uvs.append(_parse_floats(parts[1:], 2, line_no, path, "vt"))
            elif tag == "f":
                tokens = parts[1:]
                if len(tokens) < 3:
                    raise ParseError(
                        f"face needs at least 3 vertices, got {len(tokens)}",
                        line=line_no,
                        path=path,
                    )
                corners = [
                    _parse_face_vertex(
                        token, len(positions), len(uvs), line_no, path
                    )
                    for token in tokens
                ]
                for k in range(1, len(corners) - 1):
                    tri = (corners[0], corners[k], corners[k + 1])
                    if len(set(tri)) != 3:
                        raise ParseError(
                            "face repeats a vertex", line=line_no, path=path
                        )
                    key_tris.append(tri)
            elif tag in _IGNORED:
                continue
            else:
                continue

    if not key_tris:
        raise ParseError("no faces found", path=path)
    keys = sorted({key for tri in key_tris for key in tri})
    index = {key: i for i, key in enumerate(keys)}
    out_pos = [positions[vi] for vi, _ in keys]
    out_uv = [uvs[ti] for _, ti in keys]
    triangles = [[index[a], index[b], index[c]] for a, b, c in key_tris]
    topology = Topology(
        triangles=np.asarray(triangles, dtype=np.int64),
        uv=np.asarray(out_uv, dtype=np.float64),
    )
    return Mesh(topology=topology, positions=np.asarray(out_pos, dtype=np.float64))


def save_obj(mesh, path):
    """Write mesh positions, UVs and triangles as ASCII OBJ."""
    lines = []
    for x, y, z in mesh.positions:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    for u, v in mesh.topology.uv:
        lines.append(f"vt {u:.9g} {v:.9g}")
    for a, b, c in mesh.topology.triangles:
        lines.append(f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}")
    with open(str(path), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
