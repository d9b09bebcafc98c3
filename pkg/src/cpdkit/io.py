"""
Plain-text file formats.

TSRv1 (dense tensor)::

    TSRv1
    L
    I_1 ... I_L
    one value per line, first index fastest

KRUv1 (Kruskal tensor)::

    KRUv1
    L R
    I_1 ... I_L
    lambda_1 ... lambda_R
    L blocks of I_l * R values, column by column, one per line

MLMv1 (multilinear model) holds a header line "m activation" followed by
one KRUv1 section per output. Values are written with `repr`, the shortest
string that parses back to the same double. Blank lines and lines starting
with '#' are skipped on reading.
"""

import json

import numpy as np

from .core import KruskalTensor

__all__ = ["ParseError", "read_tensor", "write_tensor", "read_kruskal",
           "write_kruskal", "read_model", "write_model", "write_stats",
           "read_csv_dataset", "format_value"]


class ParseError(ValueError):
    pass


def format_value(v):
    return repr(float(v))


class _Lines:
    """Iterator over meaningful lines, remembering their numbers."""

    def __init__(self, text, name):
        self.items = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())
                      if ln.strip() and not ln.strip().startswith("#")]
        self.pos = 0
        self.name = name

    def next(self, what):
        if self.pos >= len(self.items):
            raise ParseError(f"{self.name}: unexpected end of file while reading {what}")
        item = self.items[self.pos]
        self.pos += 1
        return item

    def ints(self, what, count=None):
        no, ln = self.next(what)
        try:
            vals = [int(tok) for tok in ln.split()]
        except ValueError:
            raise ParseError(f"{self.name}: line {no}: expected integers for {what}, "
                             f"got {ln!r}") from None
        if count is not None and len(vals) != count:
            raise ParseError(f"{self.name}: line {no}: expected {count} values for {what}, "
                             f"got {len(vals)}")
        return vals

    def floats_row(self, what, count):
        no, ln = self.next(what)
        try:
            vals = [float(tok) for tok in ln.split()]
        except ValueError:
            raise ParseError(f"{self.name}: line {no}: non-numeric value in {what}") from None
        if len(vals) != count:
            raise ParseError(f"{self.name}: line {no}: expected {count} values for {what}, "
                             f"got {len(vals)}")
        return vals

    def column(self, count, what):
        out = np.empty(count)
        for i in range(count):
            if self.pos >= len(self.items):
                raise ParseError(f"{self.name}: expected {count} values for {what}, "
                                 f"found {i}")
            no, ln = self.next(what)
            try:
                out[i] = float(ln)
            except ValueError:
                raise ParseError(f"{self.name}: line {no}: non-numeric value {ln!r}") from None
        return out

    def magic(self, expected):
        no, ln = self.next("header")
        if ln != expected:
            raise ParseError(f"{self.name}: line {no}: expected magic {expected!r}, got {ln!r}")

    def done(self, expected, what):
        extra = len(self.items) - self.pos
        if extra:
            no, _ = self.items[self.pos]
            raise ParseError(f"{self.name}: line {no}: expected {expected} values for {what}, "
                             f"found {expected + extra}")


def _read_text(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _dims(lines, L):
    dims = lines.ints("dims", L)
    if any(d < 1 for d in dims):
        raise ParseError(f"{lines.name}: dims must be positive, got {dims}")
    return dims


def parse_tensor(text, name="<tensor>"):
    lines = _Lines(text, name)
    lines.magic("TSRv1")
    (L,) = lines.ints("order", 1)
    if L < 1:
        raise ParseError(f"{name}: order must be at least 1")
    dims = _dims(lines, L)
    n = int(np.prod(dims))
    vals = lines.column(n, f"dims {' '.join(map(str, dims))}")
    lines.done(n, f"dims {' '.join(map(str, dims))}")
    return np.reshape(vals, dims, order="F")


def read_tensor(path):
    return parse_tensor(_read_text(path), str(path))


def format_tensor(t):
    t = np.asarray(t, dtype=np.float64)
    out = ["TSRv1", str(t.ndim), " ".join(str(d) for d in t.shape)]
    out += [format_value(v) for v in t.ravel(order="F")]
    return "\n".join(out) + "\n"


def write_tensor(path, t):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_tensor(t))


def _parse_kruskal(lines):
    lines.magic("KRUv1")
    L, R = lines.ints("order and rank", 2)
    if L < 1 or R < 1:
        raise ParseError(f"{lines.name}: order and rank must be positive")
    dims = _dims(lines, L)
    weights = lines.floats_row("weights", R)
    factors = []
    for l, d in enumerate(dims):
        col = lines.column(d * R, f"factor {l + 1}")
        factors.append(np.reshape(col, (d, R), order="F"))
    return KruskalTensor(factors, np.array(weights))


def parse_kruskal(text, name="<factors>"):
    lines = _Lines(text, name)
    k = _parse_kruskal(lines)
    lines.done(0, "trailing content")
    return k


def read_kruskal(path):
    return parse_kruskal(_read_text(path), str(path))


def format_kruskal(k):
    out = ["KRUv1", f"{k.order} {k.rank}", " ".join(str(d) for d in k.dims),
           " ".join(format_value(v) for v in k.weights)]
    for w in k.factors:
        out += [format_value(v) for v in w.ravel(order="F")]
    return "\n".join(out) + "\n"


def write_kruskal(path, k):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_kruskal(k))


def write_model(path, model):
    parts = ["MLMv1", f"{model.outputs} {model.activation.name}"]
    text = "\n".join(parts) + "\n"
    for k in range(model.outputs):
        text += format_kruskal(model.weight_tensor(k))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_model(path):
    from .learning import ACTIVATIONS, MultilinearModel

    lines = _Lines(_read_text(path), str(path))
    lines.magic("MLMv1")
    no, ln = lines.next("model header")
    try:
        m_str, act = ln.split()
        m = int(m_str)
    except ValueError:
        raise ParseError(f"{path}: line {no}: expected 'outputs activation'") from None
    if act not in ACTIVATIONS:
        raise ParseError(f"{path}: line {no}: unknown activation {act!r}")
    blocks = [_parse_kruskal(lines).absorb_weights() for _ in range(m)]
    lines.done(0, "trailing content")
    w = np.stack([np.stack(b.factors) for b in blocks])
    return MultilinearModel(w, ACTIVATIONS[act])


def stats_json(stats, timings=True):
    d = stats.as_dict()
    if not timings:
        d["timings"] = {k: 0.0 for k in d["timings"]}
    return json.dumps(d, indent=2) + "\n"


def write_stats(path, stats, timings=True):
    """StatsFile JSON. timings=False writes zeros so reruns are byte-identical."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(stats_json(stats, timings))


def read_csv_dataset(path, labels=True):
    """
    Samples as rows of a CSV file.

    With labels=True the last column holds integer class labels and
    (X, y) is returned; otherwise the whole table is returned.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for no, ln in enumerate(fh, 1):
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            try:
                rows.append([float(tok) for tok in ln.split(",")])
            except ValueError:
                raise ParseError(f"{path}: line {no}: non-numeric field") from None
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(f"{path}: line {no}: expected {len(rows[0])} fields, "
                                 f"got {len(rows[-1])}")
            if labels and rows[-1][-1] != int(rows[-1][-1]):
                raise ParseError(f"{path}: line {no}: label {rows[-1][-1]!r} is not an integer")
    if not rows:
        raise ParseError(f"{path}: no samples")
    data = np.array(rows)
    if not labels:
        return data
    return data[:, :-1], data[:, -1].astype(int)
