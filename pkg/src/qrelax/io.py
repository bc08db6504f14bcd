"""Plain-text and binary exchange formats.

Every writer produces byte-identical output for identical input: numbers are
printed with ``repr``-exact ``%.17g`` formatting and nothing time-dependent is
ever written into data files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "write_gas_basis",
    "read_gas_basis",
    "write_matrix",
    "read_matrix",
    "write_coverings",
    "read_coverings",
    "write_eigenvalues",
    "read_eigenvalues",
    "write_state",
    "read_state",
    "write_series",
    "read_series",
    "write_map",
    "read_map",
    "write_json",
]

_STATE_MAGIC = b"QRLXSTAT"
_STATE_HEADER = struct.Struct("<8sqd")   # magic, dimension, time


def _g(x) -> str:
    return "%.17g" % x


def write_gas_basis(path, basis) -> Path:
    """Header ``L N dimension`` then one hexadecimal bitmask per line."""
    path = Path(path)
    lines = [f"{basis.L} {basis.N} {basis.dim}"]
    lines += [format(int(s), "x") for s in basis.states]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_gas_basis(path) -> tuple[int, int, np.ndarray]:
    head, *rows = Path(path).read_text().splitlines()
    L, N, dim = (int(x) for x in head.split())
    states = np.array([int(r, 16) for r in rows if r.strip()], dtype=np.uint64)
    if len(states) != dim:
        raise ValueError(f"{path}: header announces {dim} states, found {len(states)}")
    return L, N, states


def write_matrix(path, H) -> Path:
    """Coordinate format, one ``row col value`` triple per line (row-major order)."""
    path = Path(path)
    coo = sp.csr_matrix(H).tocoo()
    order = np.lexsort((coo.col, coo.row))
    with path.open("w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {_g(v)}\n")
    return path


def read_matrix(path, shape=None) -> sp.csr_matrix:
    text = Path(path).read_text()
    data = np.loadtxt(text.splitlines(), ndmin=2) if text.strip() else np.empty((0, 3))
    if data.size == 0:
        if shape is None:
            raise ValueError("empty matrix file needs an explicit shape")
        return sp.csr_matrix(shape)
    r, c = data[:, 0].astype(int), data[:, 1].astype(int)
    if shape is None:
        n = int(max(r.max(), c.max())) + 1
        shape = (n, n)
    return sp.csr_matrix((data[:, 2], (r, c)), shape=shape)


def write_coverings(path, basis) -> Path:
    """Header ``Lx Ly flux_x flux_y dimension``; then one bit string per covering.

    Character ``l`` of a line is the occupation of link ``l``.
    """
    path = Path(path)
    lat = basis.lattice
    lines = [f"{lat.Lx} {lat.Ly} {basis.flux.x} {basis.flux.y} {basis.dim}"]
    for row in basis.modes:
        lines.append("".join("1" if b else "0" for b in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_coverings(path) -> tuple[int, int, tuple[int, int], list[int]]:
    lines = Path(path).read_text().splitlines()
    Lx, Ly, fx, fy, dim = (int(x) for x in lines[0].split())
    configs = [int(line[::-1], 2) for line in lines[1:] if line.strip()]
    if len(configs) != dim:
        raise ValueError(f"{path}: header announces {dim} coverings, found {len(configs)}")
    return Lx, Ly, (fx, fy), configs


def write_eigenvalues(path, eigenvalues) -> Path:
    path = Path(path)
    path.write_text("".join(_g(e) + "\n" for e in np.asarray(eigenvalues)))
    return path


def read_eigenvalues(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=1)


def write_state(path, psi, t: float) -> Path:
    """Binary blob: magic, dimension (int64), time (float64), then re/im pairs."""
    path = Path(path)
    psi = np.ascontiguousarray(psi, dtype=np.complex128)
    with path.open("wb") as fh:
        fh.write(_STATE_HEADER.pack(_STATE_MAGIC, len(psi), float(t)))
        fh.write(psi.view(np.float64).astype("<f8").tobytes())
    return path


def read_state(path) -> tuple[np.ndarray, float]:
    raw = Path(path).read_bytes()
    magic, dim, t = _STATE_HEADER.unpack_from(raw)
    if magic != _STATE_MAGIC:
        raise ValueError(f"{path} is not a state file")
    body = np.frombuffer(raw, dtype="<f8", offset=_STATE_HEADER.size)
    if len(body) != 2 * dim:
        raise ValueError(f"{path}: truncated state ({len(body)} of {2 * dim} numbers)")
    return body.view(np.complex128).copy(), t


def write_series(path, times, values, header: str | None = None) -> Path:
    """Two columns: time, value."""
    path = Path(path)
    out = [] if header is None else [f"# {header}"]
    out += [f"{_g(t)} {_g(v)}" for t, v in zip(times, values)]
    path.write_text("\n".join(out) + "\n")
    return path


def read_series(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, ndmin=2)
    return data[:, 0], data[:, 1]


def write_map(path, values, times) -> Path:
    """Long format ``index value time``; ``values`` has shape ``(n_times, n_cells)``."""
    path = Path(path)
    values = np.atleast_2d(values)
    with path.open("w") as fh:
        for t, row in zip(times, values):
            for i, v in enumerate(row):
                fh.write(f"{i} {_g(v)} {_g(t)}\n")
    return path


def read_map(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_map`: ``(times, values[n_times, n_cells])``."""
    data = np.loadtxt(path, ndmin=2)
    times, inv = np.unique(data[:, 2], return_inverse=True)
    n = int(data[:, 0].max()) + 1
    vals = np.zeros((len(times), n))
    vals[inv, data[:, 0].astype(int)] = data[:, 1]
    return times, vals


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path
