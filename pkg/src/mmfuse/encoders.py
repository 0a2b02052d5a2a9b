"""Feature encoders for the two modalities.

Tabular metadata is one-hot encoded against a declared schema and pushed
through fully connected blocks; images go through a small convolutional
stack. Both produce per-sample embedding vectors and are differentiable
end to end.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, DimensionError, SchemaError
from .layers import BatchNorm, Conv2d, Linear, prefixed

MISSING = (None, "")


@dataclass(frozen=True)
class Column:
    """One metadata column: categorical with a vocabulary, or numeric with a range.

    ``policy`` controls out-of-vocabulary categorical values: "strict"
    raises, "lenient" maps them to the unknown slot (missing values always
    go to the unknown slot). Numeric values are rescaled to [0,1] and
    clamped; a missing numeric becomes 0.5.
    """

    name: str
    kind: str  # "categorical" | "numeric"
    vocab: tuple = ()
    vmin: float = 0.0
    vmax: float = 1.0
    policy: str = "lenient"

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise ConfigError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.vocab:
                raise ConfigError(f"column {self.name!r}: empty vocabulary")
            if len(set(self.vocab)) != len(self.vocab):
                raise ConfigError(f"column {self.name!r}: duplicate vocabulary entries")
        else:
            if not self.vmax > self.vmin:
                raise ConfigError(f"column {self.name!r}: vmax must exceed vmin")
        if self.policy not in ("strict", "lenient"):
            raise ConfigError(f"column {self.name!r}: unknown policy {self.policy!r}")

    @property
    def width(self):
        return len(self.vocab) + 1 if self.kind == "categorical" else 1


@dataclass(frozen=True)
class MetadataSchema:
    columns: tuple = ()
    classes: tuple = ()

    @property
    def encoded_width(self):
        return sum(c.width for c in self.columns)

    def to_json(self):
        cols = []
        for c in self.columns:
            if c.kind == "categorical":
                cols.append(
                    {
                        "name": c.name,
                        "kind": c.kind,
                        "vocab": list(c.vocab),
                        "policy": c.policy,
                    }
                )
            else:
                cols.append(
                    {"name": c.name, "kind": c.kind, "min": c.vmin, "max": c.vmax}
                )
        return json.dumps({"columns": cols, "classes": list(self.classes)}, indent=2)

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise SchemaError(f"schema is not valid JSON: {e}") from e
        cols = []
        for c in raw.get("columns", []):
            if c.get("kind") == "categorical":
                cols.append(
                    Column(
                        name=c["name"],
                        kind="categorical",
                        vocab=tuple(c["vocab"]),
                        policy=c.get("policy", "lenient"),
                    )
                )
            else:
                cols.append(
                    Column(
                        name=c["name"],
                        kind="numeric",
                        vmin=float(c.get("min", 0.0)),
                        vmax=float(c.get("max", 1.0)),
                    )
                )
        return cls(columns=tuple(cols), classes=tuple(raw.get("classes", ())))


def one_hot_encode(row, schema):
    """Encode one raw record (mapping column name -> value) per the schema."""
    out = np.zeros(schema.encoded_width)
    pos = 0
    for col in schema.columns:
        if col.name not in row:
            raise SchemaError(f"record is missing column {col.name!r}")
        val = row[col.name]
        if col.kind == "categorical":
            if val in MISSING:
                out[pos + len(col.vocab)] = 1.0
            elif val in col.vocab:
                out[pos + col.vocab.index(val)] = 1.0
            elif col.policy == "strict":
                raise DataError(
                    f"column {col.name!r}: value {val!r} not in vocabulary"
                )
            else:
                out[pos + len(col.vocab)] = 1.0
            pos += len(col.vocab) + 1
        else:
            if val in MISSING:
                out[pos] = 0.5
            else:
                x = (float(val) - col.vmin) / (col.vmax - col.vmin)
                out[pos] = min(max(x, 0.0), 1.0)
            pos += 1
    return out


def encode_rows(rows, schema):
    if not rows:
        return np.zeros((0, schema.encoded_width))
    return np.stack([one_hot_encode(r, schema) for r in rows])


class MetadataEncoder:
    """Fully connected blocks (linear -> batch norm -> ReLU) over encoded rows."""

    def __init__(self, in_width, out_dim=64, hidden=(64,), rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        widths = [in_width, *hidden, out_dim]
        self.in_width = in_width
        self.out_dim = out_dim
        self.blocks = []
        for a, b in zip(widths[:-1], widths[1:]):
            # the batch norm that follows makes a linear bias redundant
            self.blocks.append((Linear(a, b, rng, bias=False), BatchNorm(b)))

    def __call__(self, x, mode):
        if x.data.ndim != 2 or x.data.shape[1] != self.in_width:
            raise DimensionError(
                f"metadata batch {x.data.shape} does not match encoder width "
                f"{self.in_width}"
            )
        h = x
        for lin, bn in self.blocks:
            h = ad.relu(bn(lin(h), mode))
        return h

    def params(self):
        out = []
        for i, (lin, bn) in enumerate(self.blocks):
            out += prefixed(f"fc{i}", lin.params())
            out += prefixed(f"bn{i}", bn.params())
        return out

    def buffers(self):
        out = []
        for i, (_, bn) in enumerate(self.blocks):
            out += prefixed(f"bn{i}", bn.buffers())
        return out


class ImageEncoder:
    """Three conv/BN/ReLU/max-pool blocks, global average pool, projection."""

    def __init__(self, in_shape=(3, 32, 32), channels=(8, 16, 32), out_dim=128, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        c, h, w = in_shape
        if len(channels) != 3:
            raise ConfigError(f"image encoder needs 3 channel widths, got {channels}")
        if h % 8 or w % 8:
            raise ConfigError(
                f"image size {h}x{w} must be divisible by 8 (three 2x2 pools)"
            )
        self.in_shape = tuple(in_shape)
        self.out_dim = out_dim
        self.convs = []
        prev = c
        for ch in channels:
            self.convs.append((Conv2d(prev, ch, rng, bias=False), BatchNorm(ch)))
            prev = ch
        self.proj = Linear(prev, out_dim, rng)

    def __call__(self, x, mode):
        if x.data.ndim != 4 or x.data.shape[1:] != self.in_shape:
            raise DimensionError(
                f"image batch {x.data.shape} does not match encoder input "
                f"{self.in_shape}"
            )
        h = x
        for conv, bn in self.convs:
            h = ad.max_pool2(ad.relu(bn(conv(h), mode)))
        return self.proj(ad.global_avg_pool(h))

    def params(self):
        out = []
        for i, (conv, bn) in enumerate(self.convs):
            out += prefixed(f"conv{i}", conv.params())
            out += prefixed(f"bn{i}", bn.params())
        out += prefixed("proj", self.proj.params())
        return out

    def buffers(self):
        out = []
        for i, (_, bn) in enumerate(self.convs):
            out += prefixed(f"bn{i}", bn.buffers())
        return out
