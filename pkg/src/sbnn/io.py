"""Artifact I/O: atomic writes, CSV tables, and training checkpoints.

Checkpoints are zip archives with fixed timestamps holding ``meta.json`` and
one ``.npy`` member per array, so identical runs give identical bytes. They
store the learnable P (never the derived W), batch-norm state, and Adam state.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .graph import ModelGraph, build_model
from .selfbin.adam import AdamState

_EPOCH = (1980, 1, 1, 0, 0, 0)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_value(v) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _npy(arr: np.ndarray) -> bytes:
    b = io.BytesIO()
    np.save(b, np.ascontiguousarray(arr), allow_pickle=False)
    return b.getvalue()


def save_checkpoint(path, model: ModelGraph, epoch: int, adam: dict | None = None, config_text: str = "") -> None:
    arrays = {}
    for layer in model.weighted:
        arrays[f"{layer.name}.P"] = layer.weights.P
    for bn in model.batchnorms:
        for f in ("mu_r", "var_r", "gamma", "beta"):
            arrays[f"{bn.name}.{f}"] = getattr(bn.state, f)
    steps = {}
    for name, st in sorted((adam or {}).items()):
        arrays[f"adam/{name}.m"] = st.m
        arrays[f"adam/{name}.v"] = st.v
        steps[name] = [st.step, st.lr0, st.decay, st.beta1, st.beta2, st.eps]
    meta = {
        "arch": model.arch,
        "input_shape": list(model.input_shape),
        "n_classes": model.n_classes,
        "mode": model.mode.value,
        "input_mode": model.input_mode,
        "input_medians": None if model.input_medians is None else [int(v) for v in model.input_medians],
        "nu_final": model.nu_final,
        "epoch": epoch,
        "dtype": str(model.weighted[0].weights.P.dtype),
        "adam": steps,
        "config": config_text,
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        def put(name, data):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)

        put("meta.json", json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(arrays):
            put(name + ".npy", _npy(arrays[name]))
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> tuple[ModelGraph, dict, dict]:
    """Returns ``(model, adam_states, meta)``."""
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path} is not a checkpoint archive: {exc}") from None
    with zf:
        meta = json.loads(zf.read("meta.json"))
        arrays = {n[: -len(".npy")]: np.load(io.BytesIO(zf.read(n))) for n in zf.namelist() if n.endswith(".npy")}
    model = build_model(
        meta["arch"],
        tuple(meta["input_shape"]),
        meta["n_classes"],
        mode=meta["mode"],
        input_mode=meta["input_mode"],
        input_medians=meta["input_medians"],
        dtype=np.dtype(meta.get("dtype", "float32")),
    )
    model.nu_final = meta["nu_final"]
    try:
        for layer in model.weighted:
            layer.weights.P[...] = arrays[f"{layer.name}.P"]
        for bn in model.batchnorms:
            for f in ("mu_r", "var_r", "gamma", "beta"):
                getattr(bn.state, f)[...] = arrays[f"{bn.name}.{f}"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint does not match its architecture: {exc}") from None
    adam = {}
    for name, (step, lr0, decay, b1, b2, eps) in meta.get("adam", {}).items():
        adam[name] = AdamState(arrays[f"adam/{name}.m"], arrays[f"adam/{name}.v"], step, lr0, decay, b1, b2, eps)
    return model, adam, meta
