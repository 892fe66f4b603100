"""Dataset loaders and JSON/CSV persistence for networks, templates and reports."""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .network import Conv2D, Dense, Flatten, Network, ReLU
from .relax import Box, Star
from .sharing import Template, TemplateSet

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
TEMPLATE_FORMAT = "certshare-templates/1"


class FormatError(ValueError):
    """Malformed input file or document."""


@dataclass(frozen=True, eq=False)
class LabeledImage:
    pixels: np.ndarray
    shape: tuple
    label: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64).reshape(-1)
        if px.size != int(np.prod(self.shape)):
            raise ValueError(f"{px.size} pixels do not fit shape {self.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("pixels must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))


# ------------------------------------------------------------------ images


def _read_u32(buf: bytes, offset: int, what: str) -> int:
    if len(buf) < offset + 4:
        raise FormatError(f"truncated header at offset {offset}: missing {what}")
    return struct.unpack_from(">I", buf, offset)[0]


def parse_idx_images(buf: bytes) -> np.ndarray:
    magic = _read_u32(buf, 0, "magic number")
    if magic != IDX_IMAGES:
        raise FormatError(f"bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES:08x}")
    n = _read_u32(buf, 4, "image count")
    rows = _read_u32(buf, 8, "row count")
    cols = _read_u32(buf, 12, "column count")
    need = 16 + n * rows * cols
    if len(buf) < need:
        raise FormatError(f"truncated image data at offset {len(buf)}: expected {need} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols)


def parse_idx_labels(buf: bytes) -> np.ndarray:
    magic = _read_u32(buf, 0, "magic number")
    if magic != IDX_LABELS:
        raise FormatError(f"bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_LABELS:08x}")
    n = _read_u32(buf, 4, "label count")
    if len(buf) < 8 + n:
        raise FormatError(f"truncated label data at offset {len(buf)}: expected {8 + n} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=8)


def load_idx(images_path, labels_path) -> list:
    images = parse_idx_images(Path(images_path).read_bytes())
    labels = parse_idx_labels(Path(labels_path).read_bytes())
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    _, h, w = images.shape
    return [LabeledImage(img.reshape(-1) / 255.0, (1, h, w), int(y)) for img, y in zip(images, labels)]


def encode_idx(images: np.ndarray, labels: np.ndarray) -> tuple:
    """IDX bytes for ``uint8`` images ``(n, h, w)`` and labels ``(n,)``."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    img = struct.pack(">IIII", IDX_IMAGES, n, h, w) + images.tobytes()
    lab = struct.pack(">II", IDX_LABELS, labels.shape[0]) + labels.tobytes()
    return img, lab


def load_cifar_binary(path) -> list:
    buf = Path(path).read_bytes()
    if len(buf) % CIFAR_RECORD:
        raise FormatError(f"file length {len(buf)} is not a multiple of {CIFAR_RECORD}")
    recs = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    out = []
    for r in recs:
        # Planes R, G, B -> channels-last.
        px = r[1:].reshape(3, 32, 32).transpose(1, 2, 0).reshape(-1) / 255.0
        out.append(LabeledImage(px, (3, 32, 32), int(r[0])))
    return out


# ----------------------------------------------------------------- network


def network_to_dict(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        if isinstance(layer, Dense):
            layers.append({"type": "dense", "weights": layer.weights.tolist(), "bias": layer.bias.tolist()})
        elif isinstance(layer, ReLU):
            layers.append({"type": "relu"})
        elif isinstance(layer, Flatten):
            layers.append({"type": "flatten"})
        elif isinstance(layer, Conv2D):
            layers.append({"type": "conv2d", "kernel": layer.kernel.tolist(), "bias": layer.bias.tolist(),
                           "stride": layer.stride, "padding": layer.padding})
    return {"input_shape": list(net.input_shape), "num_classes": net.num_classes, "layers": layers}


def _field(doc: dict, key: str, path: str):
    if not isinstance(doc, dict) or key not in doc:
        raise FormatError(f"{path}: missing field {key!r}")
    return doc[key]


def network_from_dict(doc: dict) -> Network:
    shape = _field(doc, "input_shape", "$")
    num_classes = _field(doc, "num_classes", "$")
    raw = _field(doc, "layers", "$")
    if not isinstance(raw, list):
        raise FormatError("$.layers: expected a list")
    layers = []
    for i, spec in enumerate(raw):
        path = f"$.layers[{i}]"
        kind = _field(spec, "type", path)
        try:
            if kind == "dense":
                layers.append(Dense(_field(spec, "weights", path), _field(spec, "bias", path)))
            elif kind == "relu":
                layers.append(ReLU())
            elif kind == "flatten":
                layers.append(Flatten())
            elif kind == "conv2d":
                layers.append(Conv2D(_field(spec, "kernel", path), _field(spec, "bias", path),
                                     int(spec.get("stride", 1)), int(spec.get("padding", 0))))
            else:
                raise FormatError(f"{path}.type: unknown layer type {kind!r}")
        except FormatError:
            raise
        except (ValueError, TypeError) as exc:
            raise FormatError(f"{path}: {exc}") from exc
    try:
        return Network(layers, tuple(shape), int(num_classes))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"$: {exc}") from exc


def load_network(path) -> Network:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    return network_from_dict(doc)


def save_network(net: Network, path) -> None:
    # Python's float repr is the shortest string that round-trips exactly.
    Path(path).write_text(json.dumps(network_to_dict(net)), encoding="utf-8")


# --------------------------------------------------------------- templates


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def template_set_to_dict(ts: TemplateSet, net: Network) -> dict:
    items = []
    for t in ts:
        star = t.shape if isinstance(t.shape, Star) else None
        items.append({
            "layer": t.layer,
            "center": t.box.center.tolist(),
            "width": t.box.width.tolist(),
            "C": star.C.tolist() if star is not None else [],
            "c": star.c.tolist() if star is not None else [],
            "provenance": _plain(t.provenance),
            "backend": t.backend,
        })
    return {"format": TEMPLATE_FORMAT, "fingerprint": net.fingerprint(), "label": ts.label,
            "m": ts.m, "anchor_unverified": ts.anchor_unverified, "templates": items}


def template_set_from_dict(doc: dict, net: Network) -> TemplateSet:
    if doc.get("format") != TEMPLATE_FORMAT:
        raise FormatError(f"$.format: expected {TEMPLATE_FORMAT!r}")
    if doc.get("fingerprint") != net.fingerprint():
        raise FormatError("$.fingerprint: template set was generated for a different network")
    ts = TemplateSet(m=doc.get("m"), label=doc.get("label"),
                     anchor_unverified=bool(doc.get("anchor_unverified", False)))
    for i, item in enumerate(_field(doc, "templates", "$")):
        path = f"$.templates[{i}]"
        box = Box(_field(item, "center", path), _field(item, "width", path))
        C = _field(item, "C", path)
        shape = Star(box, C, _field(item, "c", path)) if len(C) else box
        ts.add(Template(shape, int(_field(item, "layer", path)), item.get("provenance", {}),
                        item.get("backend", "zono")))
    return ts


def save_template_set(ts: TemplateSet, net: Network, path) -> None:
    Path(path).write_text(json.dumps(template_set_to_dict(ts, net), indent=1), encoding="utf-8")


def load_template_set(path, net: Network) -> TemplateSet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    return template_set_from_dict(doc, net)


# ----------------------------------------------------------------- reports

TIMING_FIELDS = ("micros", "timings")
CSV_COLUMNS = ("index", "kind", "matched_layer", "verified", "micros")


@dataclass(eq=False)
class RunRecord:
    config: dict
    seed: int
    outcomes: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": _plain(self.config),
            "seed": self.seed,
            "stats": _plain(self.stats),
            "timings": _plain(self.timings),
            "outcomes": [_plain(o if isinstance(o, dict) else asdict(o)) for o in self.outcomes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunRecord":
        return cls(doc["config"], doc["seed"], doc.get("outcomes", []), doc.get("stats", {}),
                   doc.get("timings", {}))


def strip_timings(doc):
    """Copy of a report document without wall-clock fields."""
    if isinstance(doc, dict):
        return {k: strip_timings(v) for k, v in doc.items() if k not in TIMING_FIELDS}
    if isinstance(doc, list):
        return [strip_timings(v) for v in doc]
    return doc


def report_json(record: RunRecord) -> str:
    return json.dumps(record.to_dict(), indent=1)


def report_csv(record: RunRecord) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for o in record.outcomes:
        row = o if isinstance(o, dict) else asdict(o)
        ml = row.get("matched_layer")
        writer.writerow([row.get("index"), row.get("kind"), "" if ml is None else ml,
                         int(bool(row.get("verified"))), row.get("micros", 0)])
    return buf.getvalue()


def write_report(record: RunRecord, json_path=None, csv_path=None) -> None:
    if json_path is not None:
        Path(json_path).write_text(report_json(record), encoding="utf-8")
    if csv_path is not None:
        Path(csv_path).write_text(report_csv(record), encoding="utf-8")
