"""Writers for CSV tables, key-value records and plain-text PGM images."""

import csv

import numpy as np


def format_value(v):
    if v is None:
        return "n/a"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(format_value(x) for x in np.ravel(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def write_cost_curve(path, cost_curve):
    write_csv(path, ["alpha", "cost"], cost_curve)


def write_record(path, record):
    with open(path, "w") as fh:
        for key, value in record.items():
            fh.write(f"{key} = {format_value(value)}\n")


def read_record(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                out[key.strip()] = value.strip()
    return out


def write_pgm(path, image, vmin=None, vmax=None):
    """Plain (P2) 16-bit greyscale image, linearly mapped from ``[vmin, vmax]``."""
    img = np.asarray(image, dtype=float)
    vmin = float(img.min()) if vmin is None else vmin
    vmax = float(img.max()) if vmax is None else vmax
    scale = 65535.0 / (vmax - vmin) if vmax > vmin else 0.0
    q = np.rint(np.clip((img - vmin) * scale, 0, 65535)).astype(int)
    h, w = q.shape
    with open(path, "w") as fh:
        fh.write(f"P2\n{w} {h}\n65535\n")
        for row in q:
            fh.write(" ".join(map(str, row)) + "\n")


def read_pgm(path):
    with open(path) as fh:
        tokens = [t for line in fh for t in line.split("#")[0].split()]
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array(tokens[4:4 + w * h], dtype=int).reshape(h, w)
    return data, maxval
