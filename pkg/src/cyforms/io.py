"""Binary and text dumps of fields and flows.

CYFF layout (all little-endian): magic ``b"CYFF"``, ``u32`` version, ``u32``
n, ``u32`` degree, ``u32`` size per axis (``2n`` of them), then the point
values as ``complex64`` pairs, component-major, each component in row-major
grid order.
"""
from __future__ import annotations

import struct

import numpy as np

from .exterior_algebra import axis_names, basis
from .moser import flow_dump_bytes
from .torus_calculus import FormField, TorusGrid

MAGIC = b"CYFF"
VERSION = 1


def field_to_bytes(f):
    g = f.grid
    head = MAGIC + struct.pack("<III", VERSION, g.n, f.degree) + struct.pack(f"<{g.m}I", *g.sizes)
    body = np.ascontiguousarray(f.values, dtype="<c8").tobytes()
    return head + body


def field_from_bytes(buf):
    if buf[:4] != MAGIC:
        raise ValueError("not a CYFF file")
    version, n, degree = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported CYFF version {version}")
    m = 2 * n
    sizes = struct.unpack_from(f"<{m}I", buf, 16)
    grid = TorusGrid(n, sizes)
    off = 16 + 4 * m
    ncomp = len(basis(m, degree))
    count = ncomp * grid.npoints
    vals = np.frombuffer(buf, dtype="<c8", count=count, offset=off).astype(complex)
    if len(buf) != off + 8 * count:
        raise ValueError("CYFF payload has the wrong length")
    vals = vals.reshape((ncomp,) + grid.shape)
    real = not np.any(vals.imag)
    return FormField(grid, degree, vals.real if real else vals, real=real)


def write_cyff(path, f):
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(f))


def read_cyff(path):
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())


def export_csv(path, f):
    """One row per grid point: coordinates, then components (``re``/``im`` columns for complex fields)."""
    g = f.grid
    names = axis_names(g.m)
    B = basis(g.m, f.degree)
    labels = [B.label(i).replace(" ", "") or "1" for i in range(len(B))]
    cols = list(names)
    data = [g.points()]
    vals = f.values.reshape(f.ncomp, -1).T
    if f.real:
        cols += labels
        data.append(vals.real)
    else:
        for lab in labels:
            cols += [f"re_{lab}", f"im_{lab}"]
        data.append(np.stack([vals.real, vals.imag], axis=2).reshape(vals.shape[0], -1))
    np.savetxt(path, np.concatenate(data, axis=1), delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def write_flow_dump(path, flow):
    with open(path, "wb") as fh:
        fh.write(flow_dump_bytes(flow))


def read_flow_dump(path, m):
    """``(positions (P, m), jacobians (P, m, m))`` from a raw flow dump."""
    rec = np.fromfile(path, dtype="<f8").reshape(-1, m + m * m)
    return rec[:, :m], rec[:, m:].reshape(-1, m, m)
