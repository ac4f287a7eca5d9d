"""Portable model container (``.tcm``).

Little-endian layout::

    magic "TCM1" | u32 version | u32 meta_len | meta JSON
    f64[n_trees] tree_weights
    per tree: u32 n_nodes | i32[n] feature | f64[n] threshold
              | i32[n] left | i32[n] right | f64[n * leaf_width] leaf_value
              | f64[n_features] importances
    u32 crc32 of everything above

The JSON header is self-describing (spec, feature table, class codes), so a
file can be inspected without the package. Serialization is deterministic:
equal models produce identical bytes (the training timestamp is deliberately
not stored).
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .trees import (
    Criterion,
    EnsembleKind,
    EnsembleModel,
    EnsembleSpec,
    SplitStrategy,
    Task,
    Tree,
    TreeParams,
)

MAGIC = b"TCM1"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def serialize_model(model: EnsembleModel) -> bytes:
    spec = model.spec
    leaf_width = model.trees[0].leaf_value.shape[1] if model.trees else 1
    meta = {
        "task": spec.task.value,
        "kind": spec.kind.value,
        "n_estimators": spec.n_estimators,
        "seed": spec.seed,
        "base": {
            "max_depth": spec.base.max_depth,
            "min_samples_leaf": spec.base.min_samples_leaf,
            "min_samples_split": spec.base.min_samples_split,
            "split_strategy": spec.base.split_strategy.value,
            "max_features": spec.base.max_features,
            "criterion": spec.base.criterion.value,
        },
        "feature_names": model.feature_names,
        "class_codes": None
        if model.class_codes is None
        else [int(c) for c in model.class_codes],
        "n_trees": len(model.trees),
        "leaf_width": leaf_width,
        "n_features": len(model.feature_names),
        "training_meta": {
            "n_samples": int(model.training_meta.get("n_samples", 0)),
            "seed": int(model.training_meta.get("seed", 0)),
            "model_version": int(model.training_meta.get("model_version", 0)),
        },
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes]
    parts.append(np.asarray(model.tree_weights, dtype="<f8").tobytes())
    for tree in model.trees:
        parts.append(struct.pack("<I", tree.n_nodes))
        parts.append(np.asarray(tree.feature, dtype="<i4").tobytes())
        parts.append(np.asarray(tree.threshold, dtype="<f8").tobytes())
        parts.append(np.asarray(tree.left, dtype="<i4").tobytes())
        parts.append(np.asarray(tree.right, dtype="<i4").tobytes())
        parts.append(np.asarray(tree.leaf_value, dtype="<f8").tobytes())
        parts.append(np.asarray(tree.importances, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("truncated model stream")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).copy()


def deserialize_model(data: bytes) -> EnsembleModel:
    if len(data) < 12:
        raise ModelFormatError("truncated model stream")
    if data[:4] != MAGIC:
        raise ModelFormatError("bad magic: not a .tcm model")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ModelFormatError("checksum mismatch: model bytes corrupted")

    cur = _Cursor(data[:-4])
    cur.take(4)  # magic
    version = cur.u32()
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    meta = json.loads(cur.take(cur.u32()).decode("utf-8"))

    base = meta["base"]
    spec = EnsembleSpec(
        kind=EnsembleKind(meta["kind"]),
        task=Task(meta["task"]),
        n_estimators=int(meta["n_estimators"]),
        base=TreeParams(
            max_depth=int(base["max_depth"]),
            min_samples_leaf=int(base["min_samples_leaf"]),
            min_samples_split=int(base["min_samples_split"]),
            split_strategy=SplitStrategy(base["split_strategy"]),
            max_features=base["max_features"],
            criterion=Criterion(base["criterion"]),
        ),
        seed=int(meta["seed"]),
    )
    n_trees = int(meta["n_trees"])
    leaf_width = int(meta["leaf_width"])
    n_features = int(meta["n_features"])
    task = spec.task

    tree_weights = cur.array("<f8", n_trees)
    trees = []
    for _ in range(n_trees):
        n_nodes = cur.u32()
        feature = cur.array("<i4", n_nodes)
        threshold = cur.array("<f8", n_nodes)
        left = cur.array("<i4", n_nodes)
        right = cur.array("<i4", n_nodes)
        leaf_value = cur.array("<f8", n_nodes * leaf_width).reshape(n_nodes, leaf_width)
        importances = cur.array("<f8", n_features)
        trees.append(
            Tree(
                task=task,
                feature=feature.astype(np.int32),
                threshold=threshold,
                left=left.astype(np.int32),
                right=right.astype(np.int32),
                leaf_value=leaf_value,
                importances=importances,
            )
        )
    if cur.pos != len(cur.data):
        raise ModelFormatError("trailing bytes after model payload")

    codes = meta["class_codes"]
    return EnsembleModel(
        spec=spec,
        trees=trees,
        tree_weights=tree_weights,
        feature_names=list(meta["feature_names"]),
        class_codes=None if codes is None else np.asarray(codes, dtype=np.int64),
        training_meta={**meta["training_meta"], "trained_at": None},
    )


def save_model(model: EnsembleModel, path: str | Path) -> None:
    Path(path).write_bytes(serialize_model(model))


def load_model(path: str | Path) -> EnsembleModel:
    return deserialize_model(Path(path).read_bytes())
