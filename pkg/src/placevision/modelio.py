"""Versioned binary serialization for trained classifier models.

One container covers both families: per-class SVM machines (support
vectors, dual coefficients, bias, kernel spec) or a nearest-neighbor
gallery with per-class rejection thresholds.  The file records the
feature configuration id it was trained on; prediction on artifacts
with a different id must be refused by the caller.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .classify import (
    BinarySvm,
    CompositeFeature,
    CompositePart,
    KernelSpec,
    SvmModel,
    ThresholdSet,
)

_MODEL_MAGIC = b"PVMD"
_MODEL_VERSION = 1


@dataclass
class ClassifierModel:
    kind: str  # "svm" | "nn"
    config_id: str
    labels: List[str]
    svm: Optional[SvmModel] = None
    gallery: Optional[List[Tuple[str, CompositeFeature]]] = None
    thresholds: Optional[ThresholdSet] = None

    def __post_init__(self):
        if self.kind == "svm" and self.svm is None:
            raise ValueError("svm model requires the trained machines")
        if self.kind == "nn" and (self.gallery is None or self.thresholds is None):
            raise ValueError("nn model requires a gallery and thresholds")


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _unpack_str(data: bytes, pos: int) -> Tuple[str, int]:
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    return data[pos : pos + n].decode("utf-8"), pos + n


def _pack_f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_model(model: ClassifierModel, path) -> None:
    chunks = [_MODEL_MAGIC, struct.pack("<IB", _MODEL_VERSION, 0 if model.kind == "svm" else 1)]
    chunks.append(_pack_str(model.config_id))
    chunks.append(struct.pack("<I", len(model.labels)))
    chunks.extend(_pack_str(lb) for lb in model.labels)

    if model.kind == "svm":
        svm = model.svm
        chunks.append(_pack_str(svm.kernel_spec.id_string()))
        chunks.append(struct.pack("<d", svm.c))
        for lb in model.labels:
            m = svm.machines[lb]
            n_sv, dim = m.support_vectors.shape
            chunks.append(struct.pack("<IId", n_sv, dim, m.bias))
            chunks.append(_pack_f64(m.support_vectors))
            chunks.append(_pack_f64(m.dual_coef))
    else:
        ref = model.gallery[0][1]
        chunks.append(struct.pack("<I", len(ref.parts)))
        for p in ref.parts:
            chunks.append(_pack_str(p.name))
            chunks.append(_pack_str(p.measure_id))
            chunks.append(struct.pack("<dI", p.weight, len(p.vector)))
        chunks.append(struct.pack("<I", len(model.gallery)))
        label_index = {lb: i for i, lb in enumerate(model.labels)}
        for lb, feat in model.gallery:
            chunks.append(struct.pack("<I", label_index[lb]))
            for p in feat.parts:
                chunks.append(_pack_f64(p.vector))
        chunks.append(_pack_f64(np.array([model.thresholds.by_label[lb] for lb in model.labels])))
    Path(path).write_bytes(b"".join(chunks))


def load_model(path) -> ClassifierModel:
    data = Path(path).read_bytes()
    if data[:4] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    version, kind_code = struct.unpack_from("<IB", data, 4)
    if version != _MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    pos = 9
    config_id, pos = _unpack_str(data, pos)
    (n_labels,) = struct.unpack_from("<I", data, pos)
    pos += 4
    labels = []
    for _ in range(n_labels):
        lb, pos = _unpack_str(data, pos)
        labels.append(lb)

    if kind_code == 0:
        kid, pos = _unpack_str(data, pos)
        (c,) = struct.unpack_from("<d", data, pos)
        pos += 8
        spec = KernelSpec.parse(kid)
        machines: Dict[str, BinarySvm] = {}
        for lb in labels:
            n_sv, dim, bias = struct.unpack_from("<IId", data, pos)
            pos += struct.calcsize("<IId")
            sv = np.frombuffer(data, dtype="<f8", count=n_sv * dim, offset=pos).reshape(n_sv, dim)
            pos += n_sv * dim * 8
            coef = np.frombuffer(data, dtype="<f8", count=n_sv, offset=pos)
            pos += n_sv * 8
            machines[lb] = BinarySvm(sv.copy(), coef.copy(), bias, spec)
        return ClassifierModel("svm", config_id, labels, svm=SvmModel(labels, machines, spec, c))

    (n_parts,) = struct.unpack_from("<I", data, pos)
    pos += 4
    part_meta = []
    for _ in range(n_parts):
        name, pos = _unpack_str(data, pos)
        measure, pos = _unpack_str(data, pos)
        weight, dim = struct.unpack_from("<dI", data, pos)
        pos += struct.calcsize("<dI")
        part_meta.append((name, measure, weight, dim))
    (n_items,) = struct.unpack_from("<I", data, pos)
    pos += 4
    gallery = []
    for _ in range(n_items):
        (li,) = struct.unpack_from("<I", data, pos)
        pos += 4
        parts = []
        for name, measure, weight, dim in part_meta:
            vec = np.frombuffer(data, dtype="<f8", count=dim, offset=pos).copy()
            pos += dim * 8
            parts.append(CompositePart(name, vec, measure, weight))
        gallery.append((labels[li], CompositeFeature(tuple(parts))))
    thr = np.frombuffer(data, dtype="<f8", count=n_labels, offset=pos)
    thresholds = ThresholdSet(dict(zip(labels, thr.tolist())))
    return ClassifierModel("nn", config_id, labels, gallery=gallery, thresholds=thresholds)
