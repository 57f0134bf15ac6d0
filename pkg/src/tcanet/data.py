"""Dataset ingestion, preprocessing and model persistence.

IDX files are parsed with explicit magic/shape/length checks so corrupt
inputs fail with a named byte offset instead of a numpy reshape error.
Model files use a line-oriented text container (header ``TCAM v1 <kind>``)
with hexadecimal float payloads, which round-trips every parameter
bit-for-bit on any platform.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from tcanet.activations import BaseKind, TcaParams

__all__ = [
    "Dataset",
    "IdxError",
    "IdxMagicError",
    "IdxTruncatedError",
    "IdxCountError",
    "ModelVersionError",
    "ModelSchemaError",
    "load_idx",
    "subset",
    "dither",
    "batches",
    "holdout_split",
    "save_model",
    "load_model",
    "write_pgm",
]


class IdxError(OSError):
    """Base class for IDX container problems."""


class IdxMagicError(IdxError):
    """Wrong magic number."""


class IdxTruncatedError(IdxError):
    """File shorter than its header promises."""


class IdxCountError(IdxError):
    """Image and label files disagree on the sample count."""


class ModelVersionError(ValueError):
    """Model file header missing or not a supported version."""


class ModelSchemaError(ValueError):
    """Model file holds a different kind or malformed fields."""


@dataclass
class Dataset:
    """Samples as rows of X with integer labels y."""

    X: np.ndarray
    y: np.ndarray
    classes: list

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"X {self.X.shape} and y {self.y.shape} must agree on sample count"
            )

    def __len__(self):
        return self.X.shape[0]


def _read_exact(f, n, path, what):
    buf = f.read(n)
    if len(buf) != n:
        offset = f.tell() - len(buf)
        raise IdxTruncatedError(
            f"{path}: truncated while reading {what}: wanted {n} bytes at offset {offset}, got {len(buf)}"
        )
    return buf


def _load_idx_file(path, magic_want):
    with open(path, "rb") as f:
        header = _read_exact(f, 4, path, "magic number")
        magic = struct.unpack(">I", header)[0]
        if magic != magic_want:
            raise IdxMagicError(
                f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{magic_want:08x}"
            )
        ndim = magic & 0xFF
        dims = struct.unpack(
            f">{ndim}I", _read_exact(f, 4 * ndim, path, "dimension sizes")
        )
        count = int(np.prod(dims))
        payload = _read_exact(f, count, path, f"{count}-byte payload")
        data = np.frombuffer(payload, dtype=np.uint8)
    return data.reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair; pixels scaled into [0,1]."""
    images = _load_idx_file(images_path, 0x00000803)
    labels = _load_idx_file(labels_path, 0x00000801)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountError(
            f"{images_path} has {images.shape[0]} images but {labels_path} has {labels.shape[0]} labels"
        )
    X = images.reshape(images.shape[0], -1).astype(float) / 255.0
    y = labels.astype(int)
    return Dataset(X, y, sorted(set(y.tolist())))


def subset(ds: Dataset, classes=(3, 8, 9), per_class=500, seed=None) -> Dataset:
    """First per_class samples of each requested class, in file order.

    seed is reserved for optional shuffling and does not affect selection.
    """
    classes = list(classes)
    keep = []
    for c in classes:
        idx = np.flatnonzero(ds.y == c)[:per_class]
        if idx.size < per_class:
            raise ValueError(
                f"class {c} has only {idx.size} samples, need {per_class}"
            )
        keep.append(idx)
    order = np.sort(np.concatenate(keep)) if keep else np.array([], dtype=int)
    return Dataset(ds.X[order], ds.y[order], classes)


def dither(ds: Dataset, rate_mean=0.05, rng: np.random.Generator = None) -> Dataset:
    """Push every pixel off its original value by an exponential amount.

    Pixels above 0.5 move down, the rest move up; results are clamped to
    [0,1].  Gives continuous-valued data a density, which the
    unit-interval visible units need.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    e = rng.exponential(rate_mean, size=ds.X.shape)
    X = np.where(ds.X > 0.5, ds.X - e, ds.X + e)
    return Dataset(np.clip(X, 0.0, 1.0), ds.y.copy(), list(ds.classes))


def batches(n, size, seed):
    """Seeded shuffled index blocks covering range(n); last block may be short.

    n may be an int or anything with len().
    """
    if not isinstance(n, (int, np.integer)):
        n = len(n)
    order = np.random.default_rng(seed).permutation(n)
    for start in range(0, n, size):
        yield order[start : start + size]


def holdout_split(ds: Dataset, n_holdout, seed=0):
    """Split off n_holdout samples (seeded, class-agnostic) for validation."""
    if n_holdout >= len(ds):
        raise ValueError(f"cannot hold out {n_holdout} of {len(ds)} samples")
    order = np.random.default_rng(seed).permutation(len(ds))
    hold, keep = order[:n_holdout], order[n_holdout:]
    return (
        Dataset(ds.X[keep], ds.y[keep], list(ds.classes)),
        Dataset(ds.X[hold], ds.y[hold], list(ds.classes)),
    )


# ---------------------------------------------------------------------------
# persistence


def _fmt_vec(v):
    return " ".join(float(x).hex() for x in np.asarray(v, dtype=float).ravel())


class _Writer:
    def __init__(self):
        self.lines = []

    def token(self, name, value):
        self.lines.append(f"{name} {value}")

    def vec(self, name, v):
        v = np.asarray(v, dtype=float)
        self.lines.append(f"vec {name} {v.size}")
        self.lines.append(_fmt_vec(v))

    def mat(self, name, m):
        m = np.asarray(m, dtype=float)
        self.lines.append(f"mat {name} {m.shape[0]} {m.shape[1]}")
        for row in m:
            self.lines.append(_fmt_vec(row))

    def tca(self, name, p: TcaParams):
        self.token("tca", f"{name} {p.base.value}")
        self.mat("A", p.A)
        self.mat("B", p.B)


class _Reader:
    def __init__(self, lines, path):
        self.lines = lines
        self.pos = 0
        self.path = path

    def next(self):
        if self.pos >= len(self.lines):
            raise ModelSchemaError(f"{self.path}: unexpected end of file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def token(self, name):
        parts = self.next().split(None, 1)
        if len(parts) != 2 or parts[0] != name:
            raise ModelSchemaError(f"{self.path}: expected '{name} ...', got {parts!r}")
        return parts[1]

    def vec(self, name):
        head = self.token("vec").split()
        if head[0] != name:
            raise ModelSchemaError(f"{self.path}: expected vec {name}, got {head[0]}")
        n = int(head[1])
        vals = [float.fromhex(t) for t in self.next().split()]
        if len(vals) != n:
            raise ModelSchemaError(f"{self.path}: vec {name} wants {n} values, got {len(vals)}")
        return np.array(vals)

    def mat(self, name):
        head = self.token("mat").split()
        if head[0] != name:
            raise ModelSchemaError(f"{self.path}: expected mat {name}, got {head[0]}")
        r, c = int(head[1]), int(head[2])
        rows = []
        for _ in range(r):
            vals = [float.fromhex(t) for t in self.next().split()]
            if len(vals) != c:
                raise ModelSchemaError(f"{self.path}: mat {name} row wants {c} values")
            rows.append(vals)
        return np.array(rows).reshape(r, c)

    def tca(self, name):
        head = self.token("tca").split()
        if head[0] != name:
            raise ModelSchemaError(f"{self.path}: expected tca {name}, got {head[0]}")
        base = BaseKind(head[1])
        return TcaParams(base, self.mat("A"), self.mat("B"))


def _kind_of(model):
    if isinstance(model, TcaParams):
        return "tca"
    from tcanet.rbm import RbmModel

    if isinstance(model, RbmModel):
        return "rbm"
    from tcanet.dbn import DbnModel

    if isinstance(model, DbnModel):
        return "dbn"
    from tcanet.autoenc import AeModel

    if isinstance(model, AeModel):
        return "ae"
    raise ModelSchemaError(f"cannot serialize {type(model).__name__}")


def _write_rbm(w: _Writer, m):
    w.token("vis", m.vis.value)
    w.mat("W", m.W)
    w.vec("a", m.a)
    w.vec("b", m.b)
    w.tca("hid", m.hid)


def _read_rbm(r: _Reader):
    from tcanet.rbm import RbmModel

    vis = BaseKind(r.token("vis"))
    W = r.mat("W")
    a = r.vec("a")
    b = r.vec("b")
    hid = r.tca("hid")
    return RbmModel(W=W, a=a, b=b, vis=vis, hid=hid)


def save_model(model, path):
    """Write any supported model to a versioned text file."""
    kind = _kind_of(model)
    w = _Writer()
    if kind == "tca":
        w.tca("params", model)
    elif kind == "rbm":
        _write_rbm(w, model)
    elif kind == "dbn":
        w.token("classes", " ".join(str(c) for c in model.classes))
        w.token("nstack", str(len(model.stack)))
        for layer in model.stack:
            _write_rbm(w, layer)
        _write_rbm(w, model.top)
    elif kind == "ae":
        w.token("base", model.base.value)
        w.token("nenc", str(len(model.enc_w)))
        for W, b, p in zip(model.enc_w, model.enc_b, model.enc_tca):
            w.mat("W", W)
            w.vec("b", b)
            w.tca("act", p)
        w.token("ndec", str(len(model.dec_w)))
        for W, b in zip(model.dec_w, model.dec_b):
            w.mat("W", W)
            w.vec("b", b)
    with open(path, "w") as f:
        f.write(f"TCAM v1 {kind}\n")
        f.write("\n".join(w.lines))
        f.write("\n")


def load_model(path, expect=None):
    """Read a model file; raises ModelVersionError/ModelSchemaError.

    expect, if given, is the kind tag ('tca', 'rbm', 'dbn', 'ae') the
    caller requires; a mismatch is a schema error.
    """
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or not lines[0].startswith("TCAM "):
        raise ModelVersionError(f"{path}: not a TCAM model file")
    head = lines[0].split()
    if len(head) != 3 or head[1] != "v1":
        raise ModelVersionError(f"{path}: unsupported version in header {lines[0]!r}")
    kind = head[2]
    if kind not in ("tca", "rbm", "dbn", "ae"):
        raise ModelSchemaError(f"{path}: unknown model kind {kind!r}")
    if expect is not None and kind != expect:
        raise ModelSchemaError(f"{path}: holds a {kind} model, expected {expect}")
    r = _Reader([ln for ln in lines[1:] if ln], path)
    if kind == "tca":
        return r.tca("params")
    if kind == "rbm":
        return _read_rbm(r)
    if kind == "dbn":
        from tcanet.dbn import DbnModel

        classes = [int(t) for t in r.token("classes").split()]
        nstack = int(r.token("nstack"))
        stack = [_read_rbm(r) for _ in range(nstack)]
        top = _read_rbm(r)
        return DbnModel(stack=stack, top=top, classes=classes)
    from tcanet.autoenc import AeModel

    base = BaseKind(r.token("base"))
    nenc = int(r.token("nenc"))
    enc_w, enc_b, enc_tca = [], [], []
    for _ in range(nenc):
        enc_w.append(r.mat("W"))
        enc_b.append(r.vec("b"))
        enc_tca.append(r.tca("act"))
    ndec = int(r.token("ndec"))
    dec_w, dec_b = [], []
    for _ in range(ndec):
        dec_w.append(r.mat("W"))
        dec_b.append(r.vec("b"))
    return AeModel(
        enc_w=enc_w, enc_b=enc_b, enc_tca=enc_tca, dec_w=dec_w, dec_b=dec_b, base=base
    )


def write_pgm(path, image, side=28):
    """Dump one [0,1] image as binary PGM (P5, maxval 255)."""
    img = np.clip(np.asarray(image, dtype=float).reshape(side, side), 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{side} {side}\n255\n".encode())
        f.write(data.tobytes())
