"""File formats: PFM depth/disparity, Middlebury .flo flow, LF grid PNGs.

PFM files are written grayscale (``Pf``), scanlines bottom-up, with a
negative scale header marking little-endian data; big-endian files
(positive scale) are byte-swapped on read. Flow files follow the
Middlebury convention: the float32 magic 202021.25, int32 width and
height, then interleaved float32 (dx, dy) rows top-down.

A light field is stored either as a single grid PNG -- tiles row-major,
``u`` ascending top-to-bottom and ``v`` ascending left-to-right -- or as a
directory of ``view_{u:+d}_{v:+d}.png`` files with signed angular offsets.
"""

from __future__ import annotations

import os
import re
import tempfile
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .lightfield import LightField, angular_offsets

_FLO_MAGIC = 202021.25


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pfm(path: str | Path, data: np.ndarray | torch.Tensor) -> None:
    """Write a (H, W) float map as a grayscale little-endian PFM."""
    arr = np.asarray(data.detach().cpu() if isinstance(data, torch.Tensor) else data)
    if arr.ndim != 2:
        raise ValueError(f"expected a (H, W) map, got shape {arr.shape}")
    arr = arr.astype("<f4")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    _atomic_write(Path(path), header + np.flipud(arr).tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a grayscale PFM into a (H, W) float32 array (top-down rows)."""
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind == b"PF":
            raise ValueError(f"{path}: color PFM not supported, expected grayscale 'Pf'")
        if kind != b"Pf":
            raise ValueError(f"{path}: not a PFM file (header {kind!r})")
        dims = f.readline().decode("ascii")
        m = re.match(r"^(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise ValueError(f"{path}: malformed PFM dimensions {dims!r}")
        w, h = int(m.group(1)), int(m.group(2))
        scale = float(f.readline().decode("ascii").strip())
        endian = "<" if scale < 0 else ">"
        data = np.frombuffer(f.read(4 * w * h), dtype=f"{endian}f4")
        if data.size != w * h:
            raise ValueError(f"{path}: truncated PFM payload")
    return np.flipud(data.reshape(h, w)).astype(np.float32)


def write_flo(path: str | Path, flow: np.ndarray | torch.Tensor) -> None:
    """Write a (H, W, 2) flow field in Middlebury .flo format."""
    arr = np.asarray(flow.detach().cpu() if isinstance(flow, torch.Tensor) else flow)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"expected (H, W, 2) flow, got shape {arr.shape}")
    h, w = arr.shape[:2]
    payload = (
        np.float32(_FLO_MAGIC).tobytes()
        + np.int32(w).tobytes()
        + np.int32(h).tobytes()
        + arr.astype("<f4").tobytes()
    )
    _atomic_write(Path(path), payload)


def read_flo(path: str | Path) -> np.ndarray:
    """Read a Middlebury .flo file into a (H, W, 2) float32 array."""
    with open(path, "rb") as f:
        magic = np.frombuffer(f.read(4), dtype="<f4")
        if magic.size != 1 or magic[0] != np.float32(_FLO_MAGIC):
            raise ValueError(f"{path}: bad .flo magic {magic}")
        w, h = np.frombuffer(f.read(8), dtype="<i4")
        data = np.frombuffer(f.read(8 * w * h), dtype="<f4")
        if data.size != 2 * w * h:
            raise ValueError(f"{path}: truncated .flo payload")
    return data.reshape(int(h), int(w), 2).copy()


def _to_uint8(img: torch.Tensor | np.ndarray) -> np.ndarray:
    arr = np.asarray(img.detach().cpu() if isinstance(img, torch.Tensor) else img)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def save_image(path: str | Path, img: torch.Tensor | np.ndarray) -> None:
    """Save an (H, W, 3) float image in [0, 1] as an 8-bit PNG."""
    Image.fromarray(_to_uint8(img)).save(path)


def load_image(path: str | Path) -> torch.Tensor:
    """Load an image file as an (H, W, 3) float tensor in [0, 1]."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr)


def save_lf_grid(lf: LightField, path: str | Path) -> None:
    """Save a light field as one tiled PNG (rows = u, columns = v)."""
    nu, nv, h, w, _ = lf.views.shape
    mosaic = (
        lf.views.permute(0, 2, 1, 3, 4).reshape(nu * h, nv * w, 3)
    )
    save_image(path, mosaic)


def load_lf_grid(path: str | Path, angular: tuple[int, int]) -> LightField:
    """Load a tiled LF PNG written by :func:`save_lf_grid`.

    Raises if the image size is not divisible into the declared ``(U, V)``
    tile grid.
    """
    nu, nv = angular
    img = load_image(path)
    gh, gw = img.shape[0], img.shape[1]
    if gh % nu or gw % nv:
        raise ValueError(
            f"{path}: {gh}x{gw} image does not tile into a {nu}x{nv} grid"
        )
    h, w = gh // nu, gw // nv
    views = img.reshape(nu, h, nv, w, 3).permute(0, 2, 1, 3, 4).contiguous()
    return LightField(views)


def save_lf_views(lf: LightField, directory: str | Path) -> None:
    """Save a light field as a directory of ``view_{u:+d}_{v:+d}.png`` files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for u in lf.offsets_u:
        for v in lf.offsets_v:
            save_image(directory / f"view_{u:+d}_{v:+d}.png", lf.view(int(u), int(v)))


def load_lf_views(directory: str | Path, angular: tuple[int, int]) -> LightField:
    """Load a light field from a ``view_{u:+d}_{v:+d}.png`` directory."""
    directory = Path(directory)
    us = angular_offsets(angular[0])
    vs = angular_offsets(angular[1])
    rows = []
    for u in us:
        row = []
        for v in vs:
            path = directory / f"view_{u:+d}_{v:+d}.png"
            if not path.exists():
                raise FileNotFoundError(f"missing view file {path}")
            row.append(load_image(path))
        rows.append(torch.stack(row))
    return LightField(torch.stack(rows))


def write_manifest(path: str | Path, entries: list[tuple[str, int, int]]) -> None:
    """Write a dataset manifest: one ``lf_path,T,seed`` line per sample."""
    lines = [f"{p},{t},{s}" for p, t, s in entries]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def read_manifest(path: str | Path) -> list[tuple[str, int, int]]:
    """Read a ``lf_path,T,seed`` manifest, resolving paths next to the file."""
    base = Path(path).parent
    entries = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"bad manifest line {line!r}, expected lf_path,T,seed")
        lf_path = Path(parts[0])
        if not lf_path.is_absolute():
            lf_path = base / lf_path
        entries.append((str(lf_path), int(parts[1]), int(parts[2])))
    return entries
