"""Clustered election panels: data model, validation and CSV ingestion.

A panel holds precinct-level rows grouped by contest (the cluster).  The
treatment flag and the contest-level covariates live once per contest; the
outcome, the effect modifier and the precinct covariates live per row.

CSV layout (UTF-8, comma separated, header row)::

    contest_id, precinct_id, y, x, t, w_<name>..., z_<name>...

Two-party files carry ``y_d, y_r, x_d, x_r`` in place of ``y, x``.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import (
    DegenerateTreatment,
    EmptyDataset,
    MissingColumn,
    MissingValue,
    RangeViolation,
    TreatmentInconsistent,
    ZInconsistent,
)

VALIDATION_MODES = ("strict", "synthetic")
PARTIES = ("d", "r")
SMALL_C = 10


@dataclass(frozen=True)
class Contest:
    contest_id: str
    treatment: int
    covariates: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class PrecinctRow:
    contest_id: str
    precinct_id: str
    outcome: float
    modifier: float
    covariates: dict[str, float] = field(default_factory=dict)


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _same_bits(a, b) -> bool:
    if a is None or b is None:
        return a is b
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.dtype != b.dtype:
        return False
    if a.dtype == object:
        return list(a.ravel()) == list(b.ravel())
    return a.tobytes() == b.tobytes()


class PanelDataset:
    """Immutable clustered panel.

    Rows are stored grouped by contest, contests in order of first
    appearance.  ``cluster[i]`` is the contest index of row ``i``.

    Parameters
    ----------
    contest_ids : sequence of str, length C
    treatment : sequence of {0, 1}, length C
    cluster : sequence of int, length N
        Contest index per row; rows are reordered so clusters are contiguous.
    precinct_ids : sequence of str, length N
    y, x : arrays of length N, or None for two-party panels
    w : (N, n_w) array of precinct covariates
    w_names : names of the ``w`` columns (without prefix)
    z : mapping name -> length-C array (float or str) of contest covariates
    parties : optional mapping {"d": (y_d, x_d), "r": (y_r, x_r)}
    validation_mode : "strict" or "synthetic"
    """

    def __init__(self, contest_ids, treatment, cluster, precinct_ids, y=None, x=None,
                 w=None, w_names=(), z=None, parties=None, validation_mode="strict"):
        if validation_mode not in VALIDATION_MODES:
            raise ValueError(f"unknown validation mode {validation_mode!r}")
        contest_ids = tuple(str(c) for c in contest_ids)
        C = len(contest_ids)
        cluster = np.asarray(cluster, dtype=np.intp)
        N = cluster.shape[0]
        if C == 0 or N == 0:
            raise EmptyDataset("dataset has no rows")
        if len(set(contest_ids)) != C:
            raise TreatmentInconsistent("duplicate contest_id in contest table")
        if cluster.min() < 0 or cluster.max() >= C:
            raise MissingValue("row references an unknown contest")
        counts = np.bincount(cluster, minlength=C)
        if np.any(counts == 0):
            empty = contest_ids[int(np.flatnonzero(counts == 0)[0])]
            raise EmptyDataset(f"contest {empty!r} has no precincts")

        treatment = np.asarray(treatment)
        if treatment.shape != (C,) or not np.all(np.isin(treatment, (0, 1))):
            raise TreatmentInconsistent("treatment must be one 0/1 value per contest")

        order = np.argsort(cluster, kind="stable")

        def rows(a, dtype=float):
            a = np.asarray(a, dtype=dtype)
            if a.shape[0] != N:
                raise ValueError("row array length does not match cluster array")
            return _frozen(a[order])

        if (y is None) != (x is None):
            raise MissingColumn("outcome and modifier must be given together")
        if y is None and parties is None:
            raise MissingColumn("need y/x columns or the two-party y_d/y_r/x_d/x_r columns")

        self.contest_ids = contest_ids
        self.treatment = _frozen(treatment, np.int8)
        self.cluster = _frozen(cluster[order])
        self.precinct_ids = tuple(str(precinct_ids[i]) for i in order)
        self.y = None if y is None else rows(y)
        self.x = None if x is None else rows(x)
        self.w_names = tuple(w_names)
        if w is None:
            w = np.empty((N, 0))
        w = np.asarray(w, dtype=float).reshape(N, len(self.w_names))
        self.w = _frozen(w[order])
        self.z = {}
        for name, col in (z or {}).items():
            col = np.asarray(col)
            if col.shape != (C,):
                raise ZInconsistent(f"z_{name} must have one value per contest")
            self.z[name] = _frozen(col, float if col.dtype.kind in "fiub" else object)
        self.parties = None
        if parties is not None:
            self.parties = {p: (rows(parties[p][0]), rows(parties[p][1])) for p in PARTIES}
        self.validation_mode = validation_mode
        self.n_c = _frozen(counts)
        self._check_values()

    # ---- validation -------------------------------------------------
    def _check_values(self):
        arrays = {}
        if self.y is not None:
            arrays.update(y=self.y, x=self.x)
        if self.parties is not None:
            for p, (yp, xp) in self.parties.items():
                arrays[f"y_{p}"] = yp
                arrays[f"x_{p}"] = xp
        for i, name in enumerate(self.w_names):
            arrays[f"w_{name}"] = self.w[:, i]
        for name, col in self.z.items():
            if col.dtype != object:
                arrays[f"z_{name}"] = col
        for name, a in arrays.items():
            if not np.all(np.isfinite(a)):
                raise MissingValue(f"column {name!r} has missing or non-finite values")
        if self.validation_mode == "strict":
            for name in arrays:
                if name[0] in "yx":
                    a = arrays[name]
                    bad = (a < 0) | (a > 1)
                    if np.any(bad):
                        i = int(np.flatnonzero(bad)[0])
                        raise RangeViolation(
                            f"{name}={float(a[i])!r} outside [0, 1] (precinct {self.precinct_ids[i]!r})")

    # ---- derived quantities ----------------------------------------
    @property
    def C(self) -> int:
        return len(self.contest_ids)

    @property
    def N(self) -> int:
        return int(self.cluster.shape[0])

    @property
    def z_names(self):
        return tuple(self.z)

    @property
    def is_two_party(self) -> bool:
        return self.parties is not None

    @property
    def treated_mean(self) -> float:
        return float(np.mean(self.treatment))

    @property
    def row_treatment(self) -> np.ndarray:
        return self.treatment[self.cluster].astype(float)

    @property
    def contests(self) -> list[Contest]:
        return [Contest(cid, int(self.treatment[c]),
                        {k: v[c].item() if hasattr(v[c], "item") else v[c] for k, v in self.z.items()})
                for c, cid in enumerate(self.contest_ids)]

    @property
    def rows(self) -> list[PrecinctRow]:
        if self.y is None:
            raise MissingColumn("two-party panel: split_by_party first")
        return [PrecinctRow(self.contest_ids[self.cluster[i]], self.precinct_ids[i],
                            float(self.y[i]), float(self.x[i]),
                            {n: float(self.w[i, j]) for j, n in enumerate(self.w_names)})
                for i in range(self.N)]

    def cluster_slices(self) -> list[slice]:
        ends = np.cumsum(self.n_c)
        starts = ends - self.n_c
        return [slice(int(s), int(e)) for s, e in zip(starts, ends)]

    def replace(self, **changes) -> PanelDataset:
        kw = dict(contest_ids=self.contest_ids, treatment=self.treatment,
                  cluster=self.cluster, precinct_ids=self.precinct_ids, y=self.y,
                  x=self.x, w=self.w, w_names=self.w_names, z=self.z,
                  parties=self.parties, validation_mode=self.validation_mode)
        kw.update(changes)
        return PanelDataset(**kw)

    def __eq__(self, other):
        if not isinstance(other, PanelDataset):
            return NotImplemented
        if (self.contest_ids, self.precinct_ids, self.w_names, self.z_names,
                self.validation_mode, self.is_two_party) != (
                other.contest_ids, other.precinct_ids, other.w_names, other.z_names,
                other.validation_mode, other.is_two_party):
            return False
        pairs = [(self.treatment, other.treatment), (self.cluster, other.cluster),
                 (self.y, other.y), (self.x, other.x), (self.w, other.w)]
        pairs += [(self.z[k], other.z[k]) for k in self.z]
        if self.parties is not None:
            pairs += [(self.parties[p][i], other.parties[p][i]) for p in PARTIES for i in (0, 1)]
        return all(_same_bits(a, b) for a, b in pairs)

    __hash__ = None

    def __repr__(self):
        kind = "two-party " if self.is_two_party else ""
        return f"<PanelDataset {kind}C={self.C} N={self.N} w={list(self.w_names)} z={list(self.z)}>"

    def digest(self) -> str:
        return hashlib.sha256(to_csv_text(self).encode()).hexdigest()


# ---- design summary -------------------------------------------------------

@dataclass(frozen=True)
class DesignSummary:
    C: int
    N: int
    treated: int
    control: int
    treated_share: float
    small_c_warning: bool

    def as_dict(self):
        return dict(C=self.C, N=self.N, treated=self.treated, control=self.control,
                    treated_share=self.treated_share, small_c_warning=self.small_c_warning)


def validate_design(ds: PanelDataset) -> DesignSummary:
    """Count treated/control contests and reject designs with no contrast."""
    treated = int(ds.treatment.sum())
    control = ds.C - treated
    if treated == 0 or control == 0:
        which = "treated" if control == 0 else "control"
        raise DegenerateTreatment(f"all {ds.C} contests are {which}")
    return DesignSummary(ds.C, ds.N, treated, control, treated / ds.C, ds.C < SMALL_C)


# ---- CSV ------------------------------------------------------------------

def _parse_float(text, column, line):
    if text is None or text.strip() == "":
        raise MissingValue(f"line {line}: empty value in column {column!r}")
    try:
        return float(text)
    except ValueError:
        raise RangeViolation(f"line {line}: column {column!r} value {text!r} is not numeric") from None


def ingest_csv(path, validation_mode: str = "strict") -> PanelDataset:
    """Read a panel CSV.

    Column roles are resolved from the header: ``w_`` prefixes mark
    precinct covariates and ``z_`` prefixes contest covariates.  A contest
    whose rows disagree on ``t`` raises ``TreatmentInconsistent``; one whose
    rows disagree on a ``z_`` column raises ``ZInconsistent``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return _ingest(fh, validation_mode)


def ingest_text(text: str, validation_mode: str = "strict") -> PanelDataset:
    return _ingest(io.StringIO(text), validation_mode)


def _ingest(fh, validation_mode):
    reader = csv.DictReader(fh)
    header = reader.fieldnames
    if not header:
        raise EmptyDataset("no header row")
    header = [h.strip() for h in header]
    reader.fieldnames = header
    cols = set(header)
    missing = [c for c in ("contest_id", "precinct_id", "t") if c not in cols]
    if missing:
        raise MissingColumn(f"required column(s) missing: {missing}")
    party_cols = ("y_d", "y_r", "x_d", "x_r")
    single = "y" in cols and "x" in cols
    two_party = all(c in cols for c in party_cols)
    if not (single or two_party):
        need = [c for c in ("y", "x") if c not in cols]
        need_p = [c for c in party_cols if c not in cols]
        raise MissingColumn(f"outcome columns missing: {need} (or two-party {need_p})")
    w_cols = [h for h in header if h.startswith("w_")]
    z_cols = [h for h in header if h.startswith("z_")]
    value_cols = (["y", "x"] if single else []) + (list(party_cols) if two_party else [])

    contest_index: dict[str, int] = {}
    t_by_contest: list[int] = []
    z_raw: list[dict[str, str]] = []
    cluster, pids = [], []
    values = {c: [] for c in value_cols}
    w_rows = []
    for line, rec in enumerate(reader, start=2):
        cid = (rec.get("contest_id") or "").strip()
        pid = (rec.get("precinct_id") or "").strip()
        if not cid or not pid:
            raise MissingValue(f"line {line}: empty contest_id or precinct_id")
        t = _parse_float(rec.get("t"), "t", line)
        if t not in (0.0, 1.0):
            raise RangeViolation(f"line {line}: t={rec['t']!r} not in {{0, 1}}")
        zrec = {}
        for zc in z_cols:
            v = rec.get(zc)
            if v is None or v.strip() == "":
                raise MissingValue(f"line {line}: empty value in column {zc!r}")
            zrec[zc] = v.strip()
        if cid not in contest_index:
            contest_index[cid] = len(contest_index)
            t_by_contest.append(int(t))
            z_raw.append(zrec)
        c = contest_index[cid]
        if t_by_contest[c] != int(t):
            raise TreatmentInconsistent(f"contest {cid!r} has both t=0 and t=1 rows")
        if z_raw[c] != zrec:
            bad = next(k for k in zrec if zrec[k] != z_raw[c][k])
            raise ZInconsistent(f"contest {cid!r}: {bad} varies within the contest")
        cluster.append(c)
        pids.append(pid)
        for vc in value_cols:
            values[vc].append(_parse_float(rec.get(vc), vc, line))
        w_rows.append([_parse_float(rec.get(wc), wc, line) for wc in w_cols])
    if not cluster:
        raise EmptyDataset("no data rows")

    z = {}
    for zc in z_cols:
        col = [zr[zc] for zr in z_raw]
        try:
            z[zc[2:]] = np.array([float(v) for v in col])
        except ValueError:
            z[zc[2:]] = np.array(col, dtype=object)
    parties = None
    if two_party:
        parties = {p: (values[f"y_{p}"], values[f"x_{p}"]) for p in PARTIES}
    N = len(cluster)
    return PanelDataset(
        contest_ids=list(contest_index), treatment=t_by_contest, cluster=cluster,
        precinct_ids=pids, y=values.get("y"), x=values.get("x"),
        w=np.array(w_rows, dtype=float).reshape(N, len(w_cols)),
        w_names=[c[2:] for c in w_cols], z=z, parties=parties,
        validation_mode=validation_mode)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def to_csv_text(ds: PanelDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["contest_id", "precinct_id"]
    if ds.y is not None:
        header += ["y", "x"]
    if ds.parties is not None:
        header += ["y_d", "y_r", "x_d", "x_r"]
    header += ["t"] + [f"w_{n}" for n in ds.w_names] + [f"z_{n}" for n in ds.z_names]
    writer.writerow(header)
    for i in range(ds.N):
        c = ds.cluster[i]
        row = [ds.contest_ids[c], ds.precinct_ids[i]]
        if ds.y is not None:
            row += [_fmt(ds.y[i]), _fmt(ds.x[i])]
        if ds.parties is not None:
            (yd, xd), (yr, xr) = ds.parties["d"], ds.parties["r"]
            row += [_fmt(yd[i]), _fmt(yr[i]), _fmt(xd[i]), _fmt(xr[i])]
        row.append(str(int(ds.treatment[c])))
        row += [_fmt(v) for v in ds.w[i]]
        row += [_fmt(ds.z[n][c]) for n in ds.z_names]
        writer.writerow(row)
    return buf.getvalue()


def to_csv(ds: PanelDataset, path) -> None:
    Path(path).write_text(to_csv_text(ds), encoding="utf-8")


def split_by_party(ds: PanelDataset) -> tuple[PanelDataset, PanelDataset]:
    """Split a two-party panel into a democratic and a republican panel.

    Each party's outcome is its own judicial vote share and its modifier is
    its own presidential vote share; everything else is shared.
    """
    if ds.parties is None:
        raise MissingColumn("two-party columns y_d, y_r, x_d, x_r are required")
    out = []
    for p in PARTIES:
        yp, xp = ds.parties[p]
        out.append(ds.replace(y=yp, x=xp, parties=None))
    return out[0], out[1]
