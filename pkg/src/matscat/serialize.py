"""JSON / CSV encodings for complex matrices and result tables.

Complex numbers are ``[re, im]`` pairs and matrices are lists of rows
(row-major).  Floats are written with ``repr`` precision so repeated runs
produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def encode_scalar(z) -> list[float]:
    z = complex(z)
    return [float(z.real), float(z.imag)]


def decode_scalar(v) -> complex:
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ValueError(f"complex scalar must be [re, im], got {v!r}")
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def encode_matrix(m) -> list[list[list[float]]]:
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    return [[encode_scalar(z) for z in row] for row in m]


def decode_matrix(obj, n: int | None = None) -> np.ndarray:
    """Accept a scalar, a list of rows, or a flat row-major list of n^2 pairs."""
    if isinstance(obj, (int, float)) or (isinstance(obj, list) and len(obj) == 2
                                         and all(isinstance(v, (int, float)) for v in obj)):
        return decode_scalar(obj) * np.eye(n or 1, dtype=complex)
    if not isinstance(obj, list) or not obj:
        raise ValueError(f"cannot decode matrix from {obj!r}")
    if isinstance(obj[0], list) and obj[0] and isinstance(obj[0][0], list):
        return np.array([[decode_scalar(z) for z in row] for row in obj], dtype=complex)
    flat = np.array([decode_scalar(z) for z in obj], dtype=complex)
    size = int(round(np.sqrt(flat.size)))
    if size * size != flat.size:
        raise ValueError("flat matrix encoding needs n^2 entries")
    return flat.reshape(size, size)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return encode_scalar(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dump_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_default, allow_nan=True)
    Path(path).write_text(text + "\n")


def matrix_columns(n: int, prefix: str = "S") -> list[str]:
    return [f"{prefix}{l + 1}{s + 1}_{part}" for l in range(n) for s in range(n) for part in ("re", "im")]


def write_matrix_grid(path, ks, mats, prefix: str = "S") -> None:
    """CSV with columns k_re, k_im, then re/im of each matrix entry row-major."""
    ks = np.asarray(ks, dtype=complex)
    mats = np.asarray(mats, dtype=complex)
    n = mats.shape[-1]
    flat = mats.reshape(len(ks), -1)
    cols = [ks.real, ks.imag]
    for j in range(flat.shape[1]):
        cols += [flat[:, j].real, flat[:, j].imag]
    header = ",".join(["k_re", "k_im"] + matrix_columns(n, prefix))
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")


def read_matrix_grid(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ks = data[:, 0] + 1j * data[:, 1]
    vals = data[:, 2::2] + 1j * data[:, 3::2]
    n = int(round(np.sqrt(vals.shape[1])))
    return ks, vals.reshape(len(ks), n, n)


def write_plot_data(path, ks, mats, prefix: str = "S") -> None:
    """Columns k, |M_ls(k)| for external plotting."""
    ks = np.asarray(ks, dtype=complex)
    mats = np.asarray(mats, dtype=complex)
    n = mats.shape[-1]
    k_col = ks.real if np.all(ks.imag == 0) else np.abs(ks)
    cols = [k_col] + [np.abs(mats[:, l, s]) for l in range(n) for s in range(n)]
    header = ",".join(["k"] + [f"abs_{prefix}{l + 1}{s + 1}" for l in range(n) for s in range(n)])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")
