"""Domain JSON, grid-function CSV and result serialization."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .geometry import DomainSpec, build_domain, from_mask
from .kernel import GridFunction


def domain_to_dict(domain):
    """JSON-ready description; named kinds round-trip through their spec."""
    d = {"kind": domain.kind, "h": domain.h}
    if domain.kind == "rooms_passages":
        d.update(s=domain.meta["s"], K=domain.meta["K"])
    elif domain.kind not in ("unit_square", "slit_square", "annulus_test"):
        # rows top-first, as drawn
        d["mask"] = ["".join("#" if c else "." for c in row) for row in domain.mask[::-1]]
        d["blocked_edges"] = [list(e) for e in sorted(domain.blocked_edges)]
        d["origin"] = list(domain.origin)
        d["center"] = list(domain.center)
    return d


def domain_from_dict(d, max_cells=None):
    kind = d.get("kind", "custom")
    if "mask" in d:
        rows = d["mask"]
        mask = np.array([[c == "#" for c in row] for row in rows[::-1]], dtype=bool)
        return from_mask(mask, float(d["h"]), tuple(d.get("origin", (0.0, 0.0))),
                         [tuple(e) for e in d.get("blocked_edges", [])],
                         center=tuple(d["center"]) if "center" in d else None, kind=kind)
    spec = DomainSpec(kind, float(d["h"]), d.get("s"), d.get("K"))
    return build_domain(spec) if max_cells is None else build_domain(spec, max_cells=max_cells)


def load_domain(path):
    with open(path) as fh:
        return domain_from_dict(json.load(fh))


def save_domain(domain, path):
    with open(path, "w") as fh:
        json.dump(domain_to_dict(domain), fh, indent=1)


def save_function(u, path, domain_file=""):
    """CSV of ``cell_index,value`` with flat row-major indices."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# domain: {domain_file} h: {u.domain.h!r}\n")
        w = csv.writer(fh)
        w.writerow(["cell_index", "value"])
        for idx, v in zip(u.domain.active_index, u.values):
            w.writerow([int(idx), repr(float(v))])


def load_function(path, domain):
    idx, vals = [], []
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if rows and rows[0] and rows[0][0] == "cell_index":
        rows = rows[1:]
    for r in rows:
        if r:
            idx.append(int(r[0]))
            vals.append(float(r[1]))
    pos = np.searchsorted(domain.active_index, idx)
    if len(set(idx)) != domain.n_active or not np.array_equal(domain.active_index[pos], idx):
        raise ValueError("function file does not cover exactly the active cells")
    values = np.empty(domain.n_active)
    values[pos] = vals
    return GridFunction(domain, values)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return x


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=1, sort_keys=False)


def write_rows(rows, columns, path):
    """CSV with fixed column order; floats written with ``repr`` (round-trip exact)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v
