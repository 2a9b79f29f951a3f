"""JSON and CSV serialisation of analysis results."""

from __future__ import annotations

import csv
import io
import json
import math
from datetime import datetime, timezone

import numpy as np
from scipy import stats

from . import __version__
from .pipeline import Analysis, EstConfig, MIN_DEGREE, WALD_PRESETS

CURVE_COLUMNS = ("x", "f_hat", "se", "pw_lo", "pw_hi", "uni_lo", "uni_hi")


def _clean(obj):
    """Recursively convert numpy scalars/arrays and map non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    """Stable JSON: sorted keys, no NaN."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def coefficient_table(res: Analysis, level: float = 0.95) -> list[dict]:
    """Estimate / SE / t / p-value / CI per coefficient."""
    z = float(stats.norm.ppf(0.5 + level / 2))
    rows = []
    for i, (est, se) in enumerate(zip(res.fit.theta, res.state.coef_se)):
        t = est / se if se > 0 else None
        p = float(2 * stats.norm.sf(abs(t))) if t is not None else None
        rows.append({"name": f"theta_{i}", "estimate": est, "se": se, "t": t, "p_value": p,
                     "ci_low": est - z * se, "ci_high": est + z * se})
    return rows


def tests_block(res: Analysis) -> dict:
    out = {}
    for name in WALD_PRESETS:
        t = res.wald.get(name)
        if t is None:
            out[name] = {"applicable": False,
                         "reason": f"needs degree >= {MIN_DEGREE[name]}"}
        else:
            out[name] = {"applicable": True, **t.as_dict()}
    return out


def curve_block(res: Analysis) -> dict:
    b = res.band
    return {"x": b.grid.points, "f_hat": b.f_hat, "se": b.se,
            "pointwise_halfwidth": b.pointwise_halfwidth,
            "uniform_halfwidth": b.uniform_halfwidth,
            "critical_value": b.critical_value, "M": b.M, "alpha": b.alpha}


def provenance(ds, est: EstConfig, seed: int, timestamp: bool = False) -> dict:
    p = {"dataset_digest": ds.digest(), "seed": seed, "package_version": __version__,
         **est.describe()}
    if timestamp:
        p["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return p


def fit_report(res: Analysis, ds, est: EstConfig, seed: int, timestamp: bool = False) -> dict:
    rep = {"design": res.design.as_dict(),
           "coefficients": coefficient_table(res),
           "tests": tests_block(res),
           "effects": {k: v.as_dict() for k, v in res.effects.items()},
           "mistakes": res.mistakes.as_dict(),
           "provenance": provenance(ds, est, seed, timestamp)}
    if res.band is not None:
        rep["curve"] = curve_block(res)
    if res.sup:
        rep["sup_tests"] = {k: v.as_dict() for k, v in res.sup.items()}
    return rep


def curve_csv_text(res: Analysis) -> str:
    b = res.band
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for x, f, se, pw, uw in zip(b.grid.points, b.f_hat, b.se, b.pointwise_halfwidth,
                                b.uniform_halfwidth):
        w.writerow([repr(float(v)) for v in (x, f, se, f - pw, f + pw, f - uw, f + uw)])
    return buf.getvalue()
