"""Result tables: fixed column schema, CSV body, JSON sidecar with provenance."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

import mmwpos

SCHEMAS = {
    "bounds": ["config_id", "L_nlos", "los", "map", "bias_known", "peb", "oeb", "beb",
               "vaeb_mean", "identifiable", "n_realizations"],
    "assoc-sweep": ["orientation", "bias_std", "mask", "p_error", "errors", "measurements", "trials"],
    "mc": ["iteration", "rmse_ue", "rmse_bias", "rmse_orientation", "rmse_va_prior", "rmse_va_new",
           "peb_hybrid", "beb_hybrid", "oeb_hybrid", "vaeb_prior_hybrid", "vaeb_new_hybrid", "runs"],
    "localize": ["variable", "est_x", "est_y", "truth_x", "truth_y", "error", "std_x", "std_y"],
}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


@dataclass
class ResultTable:
    kind: str
    rows: List[Dict[str, object]]
    metadata: Dict[str, object] = field(default_factory=dict)
    detail: Optional[object] = None  # per-run records, written as JSON

    @property
    def columns(self) -> List[str]:
        return SCHEMAS[self.kind]

    def __post_init__(self):
        for r in self.rows:
            missing = set(self.columns) - set(r)
            if missing:
                raise ValueError(f"row lacks columns {sorted(missing)}")

    def column(self, name) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.columns])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {"kind": self.kind, "columns": self.columns, "metadata": self.metadata,
                "detail": self.detail}

    def write(self, path) -> List[Path]:
        """Write ``path`` (CSV) and ``path + '.json'`` (provenance, per-run detail)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        meta = path.with_name(path.name + ".json")
        meta.write_text(json.dumps(_jsonable(self.sidecar()), indent=2, sort_keys=True) + "\n")
        return [path, meta]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def provenance(cfg, seed_list: Sequence[int]) -> dict:
    """Everything needed to rerun. The timestamp is only recorded when
    SOURCE_DATE_EPOCH is set, so default output stays byte-reproducible."""
    from mmwpos.harness.config import to_dict

    conf = to_dict(cfg)
    conf.pop("output")  # where results land does not change them
    meta = {
        "config_hash": cfg.hash(),
        "config": conf,
        "seeds": list(seed_list),
        "package_version": mmwpos.__version__,
        "numpy_version": np.__version__,
        "python": platform.python_version(),
    }
    if "SOURCE_DATE_EPOCH" in os.environ:
        meta["timestamp"] = int(os.environ["SOURCE_DATE_EPOCH"])
    return meta
