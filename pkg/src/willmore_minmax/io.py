"""OFF / OBJ mesh files and path directories.

Positions are written with 17 significant digits so a write-then-read cycle
reproduces every double exactly.  A path directory holds ``manifest.json``::

    {"mesh": "reference.off", "frames": ["f000.off", ...], "pinned": true}

where ``mesh`` is the reference sphere (unit-sphere points) and every frame
shares its vertex order and faces.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GeometryError, MeshIOError
from .mesh import Immersion, TriangulatedSphere, build_icosphere, face_normals_and_areas

_FMT = "%.17g"


def _strip(lines):
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def _validated(path, verts: list, faces: list) -> tuple[np.ndarray, np.ndarray]:
    if any(len(v) != 3 for v in verts):
        raise MeshIOError(f"{path}: vertex with fewer than three coordinates")
    x = np.array(verts, float).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(x)):
        raise MeshIOError(f"{path}: face index out of range")
    return x, f


def read_off(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MeshIOError(f"cannot read {path}: {exc}") from exc
    it = _strip(text.splitlines())
    try:
        header = next(it)
        if header.startswith("OFF"):
            rest = header[3:].split()
            counts = rest if rest else next(it).split()
        else:
            raise MeshIOError(f"{path}: missing OFF header")
        nv, nf = int(counts[0]), int(counts[1])
        verts = [[float(t) for t in next(it).split()[:3]] for _ in range(nv)]
        faces = []
        for _ in range(nf):
            tok = next(it).split()
            if int(tok[0]) != 3:
                raise MeshIOError(f"{path}: only triangular faces are supported")
            faces.append([int(t) for t in tok[1:4]])
    except (StopIteration, ValueError, IndexError) as exc:
        raise MeshIOError(f"{path}: malformed OFF file") from exc
    return _validated(path, verts, faces)


def read_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MeshIOError(f"cannot read {path}: {exc}") from exc
    verts, faces = [], []
    try:
        for line in _strip(text.splitlines()):
            tok = line.split()
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                if len(idx) != 3:
                    raise MeshIOError(f"{path}: only triangular faces are supported")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    except (ValueError, IndexError) as exc:
        raise MeshIOError(f"{path}: malformed OBJ file") from exc
    return _validated(path, verts, faces)


def read_mesh(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Positions and faces from an ``.off`` or ``.obj`` file."""
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        return read_off(path)
    if suffix == ".obj":
        return read_obj(path)
    raise MeshIOError(f"{path}: unsupported mesh format {suffix!r} (use .off or .obj)")


def write_mesh(path: str | Path, positions: np.ndarray, faces: np.ndarray) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    x = np.asarray(positions, float)
    lines = []
    if suffix == ".off":
        lines.append("OFF")
        lines.append(f"{len(x)} {len(faces)} 0")
        lines += [" ".join(_FMT % c for c in row) for row in x]
        lines += [f"3 {a} {b} {c}" for a, b, c in faces]
    elif suffix == ".obj":
        lines += ["v " + " ".join(_FMT % c for c in row) for row in x]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    else:
        raise MeshIOError(f"{path}: unsupported mesh format {suffix!r} (use .off or .obj)")
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from exc


def save_immersion(path: str | Path, im: Immersion) -> None:
    write_mesh(path, im.positions, im.mesh.faces)


def _icosphere_match(n_vertices: int, faces: np.ndarray) -> TriangulatedSphere | None:
    for level in range(9):
        if 10 * 4**level + 2 == n_vertices:
            ico = build_icosphere(level)
            if ico.faces.shape == faces.shape and np.array_equal(ico.faces, faces):
                return ico
            return None
    return None


def reference_for(positions: np.ndarray, faces: np.ndarray) -> TriangulatedSphere:
    """Reference sphere for a bare mesh.

    Icosphere combinatorics are recognized directly.  Otherwise the mesh is
    projected radially from its centroid, which must give a positively
    oriented embedding of the sphere.
    """
    ico = _icosphere_match(len(positions), faces)
    if ico is not None:
        return ico
    c = positions - positions.mean(0)
    r = np.linalg.norm(c, axis=1)
    if np.any(r <= 0):
        raise GeometryError("cannot project the mesh radially: a vertex sits at the centroid")
    ref = c / r[:, None]
    nrm, area = face_normals_and_areas(ref, faces)
    centroid = ref[faces].mean(1)
    if np.any(~(area > 0)) or np.any(np.einsum("ij,ij->i", nrm, centroid) <= 0):
        raise GeometryError("mesh is not star-shaped about its centroid; supply a reference sphere mesh")
    return TriangulatedSphere(ref, faces)


def load_immersion(path: str | Path, reference: str | Path | TriangulatedSphere | None = None) -> Immersion:
    x, f = read_mesh(path)
    if reference is None:
        mesh = reference_for(x, f)
    elif isinstance(reference, TriangulatedSphere):
        mesh = reference
    else:
        rx, rf = read_mesh(reference)
        mesh = _icosphere_match(len(rx), rf) or TriangulatedSphere(rx / np.linalg.norm(rx, axis=1)[:, None], rf)
    if mesh.n_vertices != len(x) or not np.array_equal(mesh.faces, f):
        raise GeometryError(f"{path}: vertex count or faces differ from the reference mesh")
    return Immersion(mesh, x)


def read_path_dir(directory: str | Path) -> tuple[TriangulatedSphere, list[Immersion], bool]:
    """Reference mesh, frames and the pinned flag of a path directory."""
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise MeshIOError(f"{d}: unreadable manifest.json") from exc
    try:
        mesh_file, frame_files = manifest["mesh"], manifest["frames"]
    except (KeyError, TypeError) as exc:
        raise MeshIOError(f"{d}: manifest needs 'mesh' and 'frames'") from exc
    rx, rf = read_mesh(d / mesh_file)
    mesh = _icosphere_match(len(rx), rf) or TriangulatedSphere(rx / np.linalg.norm(rx, axis=1)[:, None], rf)
    frames = []
    for k, name in enumerate(frame_files):
        x, f = read_mesh(d / name)
        if len(x) != mesh.n_vertices or not np.array_equal(f, mesh.faces):
            raise GeometryError(f"frame {k} ({name}) does not share the reference mesh", frame=k)
        frames.append(Immersion(mesh, x))
    return mesh, frames, bool(manifest.get("pinned", True))


def write_path_dir(
    directory: str | Path, frames: Sequence[Immersion], pinned: bool = True, fmt: str = "off"
) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    mesh = frames[0].mesh
    write_mesh(d / f"reference.{fmt}", mesh.vertices, mesh.faces)
    names = []
    for k, im in enumerate(frames):
        name = f"frame{k:03d}.{fmt}"
        save_immersion(d / name, im)
        names.append(name)
    manifest = {"mesh": f"reference.{fmt}", "frames": names, "pinned": pinned}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
