"""Panel ingestion and report emission: CSV in, CSV/JSON out.

Panels arrive as rectangular numeric CSV with rows = time periods and
columns = units; an optional first row carries unit names.  All numeric
output is serialized with 12 significant digits, and JSON payloads are
emitted with sorted keys so identical runs produce identical bytes (the
timestamp field is the one sanctioned exception).
"""

import csv
import json
import os
import time

import numpy as np

from .errors import DataError, InvalidParameterError
from .estimators import as_panel, common_component, standardize

__all__ = [
    "ingest_csv",
    "read_matrix_csv",
    "write_matrix_csv",
    "canonical_json",
    "write_json",
    "emit_report",
    "timestamp",
]

_FMT = "%.12g"


# =========================================================================
# ingestion
# =========================================================================

def _parse_rows(path):
    try:
        with open(path, "r", newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise DataError("cannot read %s: %s" % (path, exc))
    if not rows:
        raise DataError("%s is empty" % path)
    width = len(rows[0])
    for k, row in enumerate(rows):
        if len(row) != width:
            raise DataError(
                "line %d of %s has %d fields, expected %d"
                % (k + 1, path, len(row), width)
            )
    return rows


def _is_numeric_row(row):
    for cell in row:
        try:
            float(cell)
        except ValueError:
            return False
    return True


def _to_matrix(rows, path, first_data_line):
    out = np.empty((len(rows), len(rows[0])))
    for a, row in enumerate(rows):
        for b, cell in enumerate(row):
            try:
                out[a, b] = float(cell)
            except ValueError:
                raise DataError(
                    "row %d, column %d of %s: could not parse %r"
                    % (a + first_data_line, b + 1, path, cell)
                )
    return out


def read_matrix_csv(path):
    """Read a numeric CSV, returning (matrix, names or None).

    The first row is treated as a header exactly when at least one of its
    cells is not a number.
    """
    rows = _parse_rows(path)
    names = None
    if not _is_numeric_row(rows[0]):
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise DataError("%s has a header but no data rows" % path)
    return _to_matrix(rows, path, 2 if names else 1), names


def ingest_csv(path, transpose=False, apply_standardization=True):
    """Load a panel from CSV.

    Parameters
    ----------
    path : str
    transpose : bool
        The file has units in rows and periods in columns; flip it after
        parsing.  Header names are dropped in this case since they label
        periods, not units.
    apply_standardization : bool
        Center and scale each unit's series (the default); otherwise the
        panel is taken as-is.

    Returns
    -------
    PanelData

    Raises
    ------
    DataError
        Ragged rows, unparseable cells (both with positions), or a panel
        smaller than 2 x 2.
    """
    X, names = read_matrix_csv(path)
    if transpose:
        X = X.T
        names = None
    if X.shape[0] < 2 or X.shape[1] < 2:
        raise DataError(
            "%s parses to a %d x %d panel; need at least 2 periods "
            "and 2 units" % (path, X.shape[0], X.shape[1])
        )
    try:
        if apply_standardization:
            return standardize(X, names=names)
        return as_panel(X, names=names)
    except InvalidParameterError as exc:
        # constant columns and such are properties of the file contents
        raise DataError("%s: %s" % (path, exc))


# =========================================================================
# delimited output
# =========================================================================

def write_matrix_csv(path, M, names=None):
    """Write a matrix as numeric CSV with 12 significant digits."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if names is not None:
            if len(names) != M.shape[1]:
                raise InvalidParameterError(
                    "%d names for %d columns" % (len(names), M.shape[1])
                )
            w.writerow(names)
        for row in M:
            w.writerow([_FMT % v for v in row])
    return path


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_FMT % v if isinstance(v, float) else v for v in row])
    return path


# =========================================================================
# canonical JSON
# =========================================================================

def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            return repr(v)
        return float(_FMT % v)
    return obj


def canonical_json(obj):
    """Serialize with sorted keys and 12-significant-digit floats."""
    return json.dumps(_canonical(obj), sort_keys=True, allow_nan=False,
                      separators=(", ", ": "), indent=1)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(canonical_json(obj))
        fh.write("\n")
    return path


def timestamp():
    return time.strftime("%Y-%m-%dT%H:%M:%S")


# =========================================================================
# report emission
# =========================================================================

def _decomposition_payload(fd, panel=None):
    out = {
        "flavor": fd.flavor,
        "r": fd.r,
        "eigenvalue_shares": fd.D2,
        "factors": fd.F,
        "loadings": fd.Lambda,
    }
    if fd.gamma is not None:
        out["gamma"] = fd.gamma
    cc = common_component(fd)
    out["common"] = cc
    if panel is not None and panel.standardized:
        out["common_original_units"] = panel.unstandardize(cc)
    return out


def _emit_decomposition(fd, out_dir, fmt, panel):
    payload = _decomposition_payload(fd, panel)
    paths = {}
    if fmt == "csv":
        names = None if panel is None else panel.names
        for key in ("factors", "loadings", "common", "common_original_units"):
            if key in payload:
                M = payload.pop(key)
                paths[key] = write_matrix_csv(
                    os.path.join(out_dir, key.replace("_", "-") + ".csv"),
                    M,
                    names=names if key.startswith("common") else None,
                )
        paths["spectrum"] = _write_table(
            os.path.join(out_dir, "spectrum.csv"),
            ["k", "eigenvalue_share"],
            [(k + 1, float(v)) for k, v in enumerate(payload["eigenvalue_shares"])],
        )
    payload["timestamp"] = timestamp()
    paths["summary"] = write_json(os.path.join(out_dir, "summary.json"), payload)
    return paths


def _emit_ic(res, out_dir, fmt, prefix="rank"):
    payload = {
        "k_grid": res.k_grid,
        "ssr": res.ssr_values,
        "criterion": res.criterion_values,
        "penalty_name": res.penalty_name,
        "penalty_value": res.penalty_value,
        "gamma": res.gamma,
        "selected_r": res.selected_r,
    }
    paths = {}
    if fmt == "csv":
        rows = [
            (int(k), float(s), float(res.penalty_value), float(c),
             int(k == res.selected_r))
            for k, s, c in zip(res.k_grid, res.ssr_values, res.criterion_values)
        ]
        paths["table"] = _write_table(
            os.path.join(out_dir, prefix + "-criterion.csv"),
            ["k", "ssr", "penalty", "criterion", "selected"],
            rows,
        )
    payload["timestamp"] = timestamp()
    paths["summary"] = write_json(os.path.join(out_dir, prefix + ".json"), payload)
    return paths


def _ci_rows(cis):
    rows = []
    for ci in cis:
        kind = ci.target[0]
        center = np.atleast_1d(np.asarray(ci.center, dtype=float))
        lo = np.atleast_1d(np.asarray(ci.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(ci.upper, dtype=float))
        for k in range(center.size):
            if kind == "common":
                index = "%d.%d" % (ci.target[1], ci.target[2])
            else:
                index = "%d.%d" % (ci.target[1], k)
            rows.append((kind, index, float(center[k]), float(lo[k]),
                         float(hi[k]), float(ci.level)))
    return rows


def _emit_cis(cis, out_dir, fmt):
    rows = _ci_rows(cis)
    paths = {}
    if fmt == "csv":
        paths["table"] = _write_table(
            os.path.join(out_dir, "intervals.csv"),
            ["target", "index", "center", "lower", "upper", "level"],
            rows,
        )
    payload = {
        "intervals": [
            {"target": r[0], "index": r[1], "center": r[2], "lower": r[3],
             "upper": r[4], "level": r[5]}
            for r in rows
        ],
        "timestamp": timestamp(),
    }
    paths["summary"] = write_json(os.path.join(out_dir, "intervals.json"), payload)
    return paths


def _emit_mc(rep, out_dir, fmt, prefix="mc"):
    payload = rep.to_dict()
    paths = {}
    if fmt == "csv":
        rows = [
            (n, t, min(n, t), cell["mean"], cell["median"], cell["sd"])
            for (n, t), cell in sorted(rep.per_size_results.items())
        ]
        paths["sizes"] = _write_table(
            os.path.join(out_dir, prefix + "-by-size.csv"),
            ["n_units", "n_periods", "min_side", "mean", "median", "sd"],
            rows,
        )
        if rep.selection is not None:
            sel_rows = []
            for pname in sorted(rep.selection):
                for g in sorted(rep.selection[pname]):
                    for k in sorted(rep.selection[pname][g]):
                        sel_rows.append(
                            (pname, float(g), int(k),
                             float(rep.selection[pname][g][k]))
                        )
            paths["selection"] = _write_table(
                os.path.join(out_dir, prefix + "-frequencies.csv"),
                ["penalty", "gamma", "selected_r", "frequency"],
                sel_rows,
            )
    payload["timestamp"] = timestamp()
    paths["summary"] = write_json(os.path.join(out_dir, prefix + ".json"), payload)
    return paths


def _emit_constrained(fit, out_dir, fmt):
    payload = {
        "gamma": fit.gamma,
        "tau": fit.tau if np.isfinite(fit.tau) else repr(fit.tau),
        "iterations": fit.iterations,
        "objective_trace": list(fit.objective_trace),
        "constraint_violation": fit.constraint_violation,
        "factors": fit.F,
        "loadings": fit.Lambda,
    }
    paths = {}
    if fmt == "csv":
        for key in ("factors", "loadings"):
            M = payload.pop(key)
            paths[key] = write_matrix_csv(
                os.path.join(out_dir, key + ".csv"), M
            )
        paths["trace"] = _write_table(
            os.path.join(out_dir, "objective-trace.csv"),
            ["sweep", "objective"],
            [(k + 1, float(v)) for k, v in enumerate(fit.objective_trace)],
        )
    payload["timestamp"] = timestamp()
    paths["summary"] = write_json(os.path.join(out_dir, "summary.json"), payload)
    return paths


def emit_report(result, out_dir, fmt="csv", panel=None, basename=None):
    """Write a result object to `out_dir`; returns {name: path}.

    ``fmt="csv"`` produces delimited tables plus a JSON summary;
    ``fmt="json"`` embeds everything in the summary alone.  Dispatches on
    the result type: factor decompositions, rank-selection results,
    constrained fits, interval lists, and Monte-Carlo reports.
    ``basename`` prefixes the files of rank-selection and Monte-Carlo
    reports so several can share a directory.
    """
    if fmt not in ("csv", "json"):
        raise InvalidParameterError("format must be 'csv' or 'json'")
    os.makedirs(out_dir, exist_ok=True)
    # local imports keep this module importable without the heavy siblings
    from .constrained import ConstrainedFit
    from .estimators import FactorDecomposition
    from .factor_count import ICResult
    from .simulation import McReport

    if isinstance(result, FactorDecomposition):
        return _emit_decomposition(result, out_dir, fmt, panel)
    if isinstance(result, ICResult):
        return _emit_ic(result, out_dir, fmt, prefix=basename or "rank")
    if isinstance(result, ConstrainedFit):
        return _emit_constrained(result, out_dir, fmt)
    if isinstance(result, McReport):
        return _emit_mc(result, out_dir, fmt, prefix=basename or "mc")
    if isinstance(result, (list, tuple)) and result and all(
        hasattr(ci, "target") for ci in result
    ):
        return _emit_cis(result, out_dir, fmt)
    raise InvalidParameterError(
        "cannot emit a report for %r" % type(result).__name__
    )
