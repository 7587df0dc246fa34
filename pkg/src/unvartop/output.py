"""Delimited history export and per-step field snapshots.

All files are deterministic functions of the run data: text at full double
precision (17 significant digits, UTF-8, LF newlines) so that re-parsing
reproduces every scalar bit-exactly, and binary 8-bit PGM for the topology
image (0 = void/black, 255 = solid/white, one pixel per element, first
pixel row = top of the domain).
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "HISTORY_HEADER",
    "chi_matrix",
    "chi_to_pgm",
    "psi_matrix",
    "read_history",
    "read_matrix",
    "write_history",
    "write_snapshot",
]

HISTORY_HEADER = "step,iter,t_ref,J_norm,vol,lambda,converged"

_G = "%.17g"


def _fmt(x: float) -> str:
    return _G % x


def write_history(history, path) -> str:
    """Write one CSV row per optimization iteration.

    Columns: ``step,iter,t_ref,J_norm,vol,lambda,converged`` with floats at
    17 significant digits and ``converged`` as 0/1.  Returns the path.
    """
    if not history.records:
        raise ValueError("history holds no iterations to write")
    lines = [HISTORY_HEADER]
    for r in history.records:
        lines.append(
            ",".join(
                (
                    str(r.step),
                    str(r.iter_in_step),
                    _fmt(r.t_ref),
                    _fmt(r.j_norm),
                    _fmt(r.vol),
                    _fmt(r.lam),
                    str(int(r.converged)),
                )
            )
        )
    data = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as f:
        f.write(data)
    return os.fspath(path)


def read_history(path) -> list:
    """Parse a history CSV back into one dict per row (bit-exact floats)."""
    with open(path, "rb") as f:
        text = f.read().decode("utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != HISTORY_HEADER:
        raise ValueError(f"{path} is not a history file (bad header)")
    rows = []
    for line in lines[1:]:
        step, it, t_ref, j_norm, vol, lam, conv = line.split(",")
        rows.append(
            {
                "step": int(step),
                "iter": int(it),
                "t_ref": float(t_ref),
                "J_norm": float(j_norm),
                "vol": float(vol),
                "lambda": float(lam),
                "converged": bool(int(conv)),
            }
        )
    return rows


def psi_matrix(psi: np.ndarray, nelx: int, nely: int) -> np.ndarray:
    """Nodal vector -> (nely+1, nelx+1) matrix, first row = top edge."""
    psi = np.asarray(psi)
    if psi.size != (nelx + 1) * (nely + 1):
        raise ValueError(
            f"psi has {psi.size} entries, grid wants {(nelx + 1) * (nely + 1)}"
        )
    return psi.reshape(nelx + 1, nely + 1).T


def chi_matrix(chi: np.ndarray, nelx: int, nely: int) -> np.ndarray:
    """Element vector -> (nely, nelx) matrix, first row = top element row."""
    chi = np.asarray(chi)
    if chi.size != nelx * nely:
        raise ValueError(f"chi has {chi.size} entries, grid wants {nelx * nely}")
    return chi.reshape(nelx, nely).T


def _write_matrix(mat: np.ndarray, path) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    lines = [" ".join(_fmt(v) for v in row) for row in mat]
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("utf-8"))


def chi_to_pgm(chi: np.ndarray, nelx: int, nely: int) -> bytes:
    """Binary (P5) PGM of the topology, one pixel per element."""
    mat = chi_matrix(chi, nelx, nely)
    pix = np.rint(np.clip(mat, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{nelx} {nely}\n255\n".encode("ascii")
    return header + pix.tobytes()


def write_snapshot(psi, chi, u, nelx, nely, step, out_dir) -> dict:
    """Write one step's fields: psi/chi/u text matrices plus a chi PGM.

    Files are named ``step_<i>_psi.txt``, ``step_<i>_chi.txt``,
    ``step_<i>_u.txt`` and ``step_<i>_chi.pgm``.  Returns name -> path.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    paths = {}

    def p(suffix):
        path = os.path.join(os.fspath(out_dir), f"step_{step}_{suffix}")
        paths[suffix] = path
        return path

    _write_matrix(psi_matrix(psi, nelx, nely), p("psi.txt"))
    _write_matrix(chi_matrix(chi, nelx, nely), p("chi.txt"))
    _write_matrix(u, p("u.txt"))
    with open(p("chi.pgm"), "wb") as f:
        f.write(chi_to_pgm(chi, nelx, nely))
    return paths


def read_matrix(path) -> np.ndarray:
    """Load a snapshot text matrix (inverse of the snapshot writers)."""
    with open(path, "rb") as f:
        text = f.read().decode("utf-8")
    return np.array(
        [[float(v) for v in line.split()] for line in text.splitlines()], dtype=float
    )
