"""JSON and CSV writers with full-precision floats and metadata headers."""

import csv
import io
import json
import math
import platform

import numpy as np

from . import __version__

FLOAT_FORMAT = ".17g"


def _fmt_float(x):
    x = float(x)
    if not math.isfinite(x):
        return "null"
    s = format(x, FLOAT_FORMAT)
    # keep floats recognisable as floats
    if all(c not in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj, indent, level):
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [json.dumps(str(k)) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        return "[" + pad + ("," + pad).join(_encode(v, indent, level + 1) for v in seq) + end + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot encode {type(obj).__name__} as JSON")


def dumps(obj, indent=2):
    """JSON text with every float written to 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def versions():
    import scipy

    return {
        "blowup": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(float(v)) else format(float(v), FLOAT_FORMAT)
    return str(v)


def csv_text(columns, rows, metadata=None):
    """CSV with ``# key: value`` comment lines carrying ``metadata`` first."""
    buf = io.StringIO()
    for k, v in (metadata or {}).items():
        text = v if isinstance(v, str) else dumps(v, indent=0).replace("\n", "")
        buf.write(f"# {k}: {text}\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows, metadata=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(columns, rows, metadata))


def read_csv(path):
    """Return ``(metadata, columns, rows)`` from a file written by :func:`write_csv`."""
    meta, lines = {}, []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\r\n").partition(": ")
                try:
                    meta[k] = json.loads(v)
                except json.JSONDecodeError:
                    meta[k] = v
            else:
                lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader)
    return meta, columns, [row for row in reader]
