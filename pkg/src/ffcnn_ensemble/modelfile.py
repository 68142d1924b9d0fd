"""Binary model container.

Layout (little-endian)::

    b"FFCN" | u32 version | u32 section count | u32 header crc32
    per section: u16 name length, name (utf-8), u8 dtype (0 = f64, 1 = u8),
                 u8 ndim, u64 * ndim shape, u64 payload bytes, u32 payload crc32
    payloads, in section order

The ``__meta__`` section holds UTF-8 JSON (structure, configs, scalars);
every numeric array is stored as float64 so reloads are bit-exact.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .fc_lsr import FCModel, FCStage
from .ffcnn import BaseClassifier, BaseConfig, FeatureViewState
from .numerics import LinearMap, PCABasis
from .saab import CPCABank, ConvModel, SaabLayer
from .svm import BinarySVM, SVMModel, SVMParams
from .ensemble import EnsembleModel

MAGIC = b"FFCN"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("u1")}


class ModelFileError(ValueError):
    """Corrupt, truncated or unsupported model file."""


def write_sections(path, sections: dict[str, np.ndarray]) -> None:
    header = bytearray()
    payloads = []
    for name, arr in sections.items():
        arr = np.asarray(arr)
        code = 1 if arr.dtype == np.uint8 else 0
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        payload = arr.tobytes()
        encoded = name.encode()
        header += struct.pack("<H", len(encoded)) + encoded
        header += struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        header += struct.pack("<QI", len(payload), zlib.crc32(payload))
        payloads.append(payload)
    head = MAGIC + struct.pack("<II", VERSION, len(sections))
    with open(path, "wb") as fh:
        fh.write(head + struct.pack("<I", zlib.crc32(bytes(header))) + bytes(header))
        for p in payloads:
            fh.write(p)


def read_sections(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    if len(raw) < 16:
        raise ModelFileError(f"{path}: truncated header")
    version, count, header_crc = struct.unpack("<III", raw[4:16])
    if version != VERSION:
        raise ModelFileError(f"{path}: unsupported format version {version}")
    pos = 16
    table = []
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", raw, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
            pos += 8 * ndim
            nbytes, crc = struct.unpack_from("<QI", raw, pos)
            pos += 12
            table.append((name, code, shape, nbytes, crc))
    except struct.error as exc:
        raise ModelFileError(f"{path}: truncated section table") from exc
    if zlib.crc32(raw[16:pos]) != header_crc:
        raise ModelFileError(f"{path}: section table checksum mismatch")
    out = {}
    for name, code, shape, nbytes, crc in table:
        payload = raw[pos : pos + nbytes]
        pos += nbytes
        if len(payload) != nbytes or zlib.crc32(payload) != crc:
            raise ModelFileError(f"{path}: section {name!r} is corrupt")
        if code not in _DTYPES:
            raise ModelFileError(f"{path}: section {name!r} has unknown dtype {code}")
        out[name] = np.frombuffer(payload, dtype=_DTYPES[code]).reshape(shape).copy()
    return out


# --- model <-> sections ------------------------------------------------------


class _Writer:
    def __init__(self):
        self.arrays: dict[str, np.ndarray] = {}

    def put(self, name: str, arr) -> str:
        self.arrays[name] = np.asarray(arr, dtype=np.float64)
        return name


def _pca_out(w: _Writer, prefix: str, b: PCABasis) -> dict:
    return {
        "mean": w.put(prefix + "/mean", b.mean),
        "components": w.put(prefix + "/components", b.components),
        "eigenvalues": w.put(prefix + "/eigenvalues", b.eigenvalues),
    }


def _pca_in(a: dict, m: dict) -> PCABasis:
    return PCABasis(a[m["mean"]], a[m["components"]], a[m["eigenvalues"]])


def _ints(arr) -> np.ndarray:
    return np.asarray(arr).astype(np.int64)


def _ensemble_out(w: _Writer, prefix: str, model: EnsembleModel) -> dict:
    convs: dict[int, str] = {}
    conv_meta = []
    bases = []
    for i, base in enumerate(model.bases):
        if id(base.conv) not in convs:
            cp = f"{prefix}/conv{len(conv_meta)}"
            convs[id(base.conv)] = len(conv_meta)
            conv_meta.append({
                "filter_sizes": list(base.conv.arch.filter_sizes),
                "kernel_counts": list(base.conv.arch.kernel_counts),
                "in_channels": base.conv.arch.in_channels,
                "layers": [
                    {
                        "kernels": w.put(f"{cp}/l{l}/kernels", layer.kernels),
                        "bias": w.put(f"{cp}/l{l}/bias", [layer.bias]),
                        "size": layer.size,
                        "in_channels": layer.in_channels,
                    }
                    for l, layer in enumerate(base.conv.layers)
                ],
            })
        bp = f"{prefix}/base{i}"
        vs = base.view_state
        bases.append({
            "config": base.config.to_dict(),
            "conv": convs[id(base.conv)],
            "view": {
                "layer": vs.layer,
                "bank": [_pca_out(w, f"{bp}/bank{k}", b) for k, b in enumerate(vs.bank.bases)],
                "positions": None if vs.bank.positions is None else [
                    w.put(f"{bp}/pos{k}", p) for k, p in enumerate(vs.bank.positions)
                ],
                "columns": None if vs.columns is None else w.put(f"{bp}/columns", vs.columns),
            },
            "fc": [
                {
                    "weights": w.put(f"{bp}/fc{s}/weights", st.map.weights),
                    "bias": w.put(f"{bp}/fc{s}/bias", st.map.bias),
                    "rectified": st.rectified,
                }
                for s, st in enumerate(base.fc.stages)
            ],
        })
    meta = model.meta
    svm = {
        "classes": [int(c) for c in meta.classes],
        "class_count": meta.class_count,
        "pairs": [list(map(int, p)) for p in meta.pairs],
        "gamma": w.put(f"{prefix}/svm/gamma", [meta.gamma]),
        "mean": w.put(f"{prefix}/svm/mean", meta.mean),
        "scale": w.put(f"{prefix}/svm/scale", meta.scale),
        "params": {"C": meta.params.C, "gamma": meta.params.gamma, "tol": meta.params.tol,
                   "max_iter": meta.params.max_iter, "scaling": meta.params.scaling},
        "machines": [
            {
                "support": w.put(f"{prefix}/svm/m{p}/support", m.support),
                "coef": w.put(f"{prefix}/svm/m{p}/coef", m.coef),
                "scalars": w.put(f"{prefix}/svm/m{p}/scalars", [m.intercept, m.kkt_gap, m.n_iter]),
            }
            for p, m in enumerate(meta.machines)
        ],
    }
    return {
        "convs": conv_meta,
        "bases": bases,
        "fusion": _pca_out(w, f"{prefix}/fusion", model.fusion),
        "svm": svm,
        "thresholds": w.put(f"{prefix}/thresholds", [model.t1, model.t2, model.energy]),
        "hard": None if model.hard is None else _ensemble_out(w, prefix + "/hard", model.hard),
    }


def _ensemble_in(a: dict, m: dict) -> EnsembleModel:
    from .saab import ConvArch

    convs = []
    for c in m["convs"]:
        arch = ConvArch(tuple(c["filter_sizes"]), tuple(c["kernel_counts"]), c["in_channels"])
        layers = tuple(
            SaabLayer(a[l["kernels"]], float(a[l["bias"]][0]), l["size"], l["in_channels"]) for l in c["layers"]
        )
        convs.append(ConvModel(arch, layers))
    bases = []
    for b in m["bases"]:
        cfg = BaseConfig.from_dict(b["config"])
        v = b["view"]
        positions = None if v["positions"] is None else tuple(_ints(a[p]) for p in v["positions"])
        bank = CPCABank(tuple(_pca_in(a, pb) for pb in v["bank"]), positions)
        columns = None if v["columns"] is None else _ints(a[v["columns"]])
        state = FeatureViewState(cfg.view, v["layer"], bank, columns)
        fc = FCModel(tuple(FCStage(LinearMap(a[s["weights"]], a[s["bias"]]), s["rectified"]) for s in b["fc"]))
        bases.append(BaseClassifier(cfg, convs[b["conv"]], state, fc))
    s = m["svm"]
    machines = []
    for mm in s["machines"]:
        intercept, gap, n_iter = a[mm["scalars"]]
        machines.append(BinarySVM(a[mm["support"]], a[mm["coef"]], float(intercept), float(gap), int(n_iter)))
    svm = SVMModel(
        classes=np.array(s["classes"], dtype=np.int64),
        class_count=s["class_count"],
        pairs=tuple(tuple(p) for p in s["pairs"]),
        machines=tuple(machines),
        gamma=float(a[s["gamma"]][0]),
        mean=a[s["mean"]],
        scale=a[s["scale"]],
        params=SVMParams(**s["params"]),
    )
    t1, t2, energy = (float(v) for v in a[m["thresholds"]])
    hard = None if m["hard"] is None else _ensemble_in(a, m["hard"])
    return EnsembleModel(tuple(bases), _pca_in(a, m["fusion"]), svm, t1, t2, energy, hard)


def save_model(path, model: EnsembleModel, config: dict | None = None) -> None:
    """Write an ensemble (and optionally the experiment config that produced it)."""
    w = _Writer()
    structure = {"ensemble": _ensemble_out(w, "e", model), "config": config}
    sections = {"__meta__": np.frombuffer(json.dumps(structure).encode(), dtype=np.uint8)}
    sections.update(w.arrays)
    write_sections(path, sections)


def load_model(path) -> tuple[EnsembleModel, dict | None]:
    sections = read_sections(path)
    if "__meta__" not in sections:
        raise ModelFileError(f"{path}: missing metadata section")
    structure = json.loads(sections.pop("__meta__").tobytes().decode())
    try:
        return _ensemble_in(sections, structure["ensemble"]), structure.get("config")
    except KeyError as exc:
        raise ModelFileError(f"{path}: missing section {exc}") from exc
