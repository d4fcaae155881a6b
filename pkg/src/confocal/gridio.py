"""Serialization of grid state: columnar CSV per node plus a JSON header.

The CSV schema is stable: node multi-index, u-coordinates, then Re/Im columns
for every component of V, Lambda and R.  The JSON header carries the quadric
spec, grid, tolerances, seeds and (for leaves) the transformation provenance.
Floats are written with repr precision so identical runs produce identical
bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import deform as df
from .sjcore import SJSpec


def _fmt(x: float) -> str:
    return repr(float(x))


def quadric_header(q) -> dict:
    return {
        "kind": q.kind,
        "blocks": [{"a": [a.real, a.imag], "p": p} for a, p in q.sj.blocks],
        "n": q.n,
    }


def grid_header(grid: df.GridSpec) -> dict:
    return {"axes": [list(ax) for ax in grid.axes], "base": list(grid.base)}


def save_fieldgrid(path, fg: df.FieldGrid, q, header_extra: dict | None = None):
    """Write <path>.csv and <path>.json for a FieldGrid."""
    path = Path(path)
    n = fg.n
    naxes = fg.grid.n
    cols = [f"i{a}" for a in range(naxes)] + [f"u{a}" for a in range(naxes)]
    for name, comps in (("V", n), ("lam", n)):
        for c in range(comps):
            cols += [f"{name}{c}_re", f"{name}{c}_im"]
    for a in range(n):
        for b in range(n):
            cols += [f"R{a}{b}_re", f"R{a}{b}_im"]
    lines = [",".join(cols)]
    coords = [fg.grid.coords(a) for a in range(naxes)]
    for idx in np.ndindex(*fg.grid.shape):
        row = [str(i) for i in idx]
        row += [_fmt(coords[a][idx[a]]) for a in range(naxes)]
        for c in range(n):
            row += [_fmt(fg.V[idx][c].real), _fmt(fg.V[idx][c].imag)]
        for c in range(n):
            row += [_fmt(fg.lam[idx][c].real), _fmt(fg.lam[idx][c].imag)]
        for a in range(n):
            for b in range(n):
                row += [_fmt(fg.R[idx][a, b].real), _fmt(fg.R[idx][a, b].imag)]
        lines.append(",".join(row))
    path.with_suffix(".csv").write_text("\n".join(lines) + "\n")
    header = {
        "quadric": quadric_header(q),
        "grid": grid_header(fg.grid),
        "kind": fg.kind,
        "meta": {k: v for k, v in fg.meta.items()
                 if isinstance(v, (int, float, str, bool))},
    }
    if header_extra:
        header.update(header_extra)
    path.with_suffix(".json").write_text(json.dumps(header, indent=2,
                                                    sort_keys=True) + "\n")


def load_fieldgrid(path) -> df.FieldGrid:
    """Rebuild a FieldGrid from <path>.csv / <path>.json."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    grid = df.GridSpec(tuple(tuple(ax) for ax in header["grid"]["axes"]),
                       tuple(header["grid"]["base"]))
    text = path.with_suffix(".csv").read_text().strip().split("\n")
    cols = text[0].split(",")
    naxes = grid.n
    ncomp = sum(1 for c in cols if c.startswith("V") and c.endswith("_re"))
    V = np.zeros(grid.shape + (ncomp,), dtype=complex)
    lam = np.zeros(grid.shape + (ncomp,), dtype=complex)
    R = np.zeros(grid.shape + (ncomp, ncomp), dtype=complex)
    for line in text[1:]:
        vals = line.split(",")
        idx = tuple(int(v) for v in vals[:naxes])
        o = 2 * naxes
        for c in range(ncomp):
            V[idx][c] = float(vals[o]) + 1j * float(vals[o + 1])
            o += 2
        for c in range(ncomp):
            lam[idx][c] = float(vals[o]) + 1j * float(vals[o + 1])
            o += 2
        for a in range(ncomp):
            for b in range(ncomp):
                R[idx][a, b] = float(vals[o]) + 1j * float(vals[o + 1])
                o += 2
    return df.FieldGrid(grid, header["kind"], V, lam, R, header.get("meta", {}))


def save_residual_csv(path, names, rows):
    """Small generic residual table: names is the column list, rows a list of
    tuples (written with repr precision)."""
    out = [",".join(names)]
    for row in rows:
        out.append(",".join(_fmt(v) if isinstance(v, float) else str(v)
                            for v in row))
    Path(path).write_text("\n".join(out) + "\n")


def save_lattice(dirpath, lattice, residual_rows=None):
    """Lattice export: an index file mapping multi-index -> field file, one
    CSV per lattice site (R entries only), plus optional residual tables."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    index = {}
    for key, Rf in sorted(lattice.items()):
        name = "site_" + "_".join(str(i) for i in key)
        if Rf is None:
            index[str(key)] = None
            continue
        index[str(key)] = name + ".csv"
        n = Rf.shape[-1]
        cols = []
        for a in range(n):
            for b in range(n):
                cols += [f"R{a}{b}_re", f"R{a}{b}_im"]
        lines = [",".join(["node"] + cols)]
        flat = Rf.reshape(-1, n, n)
        for i, M in enumerate(flat):
            row = [str(i)]
            for a in range(n):
                for b in range(n):
                    row += [_fmt(M[a, b].real), _fmt(M[a, b].imag)]
            lines.append(",".join(row))
        (dirpath / (name + ".csv")).write_text("\n".join(lines) + "\n")
    (dirpath / "index.json").write_text(json.dumps(index, indent=2,
                                                   sort_keys=True) + "\n")
    if residual_rows:
        save_residual_csv(dirpath / "residuals.csv",
                          ["square", "residual"], residual_rows)


def blocks_from_json(blocks) -> SJSpec:
    return SJSpec(tuple((complex(b["a"][0], b["a"][1]), int(b["p"]))
                        for b in blocks))
