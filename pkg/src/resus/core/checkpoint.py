"""Versioned binary checkpoints for the shared predictor and meta models.

Layout (little-endian)::

    8 bytes   magic  b"RESUSCK\\0"
    4 bytes   format version (uint32)
    8 bytes   header length (uint64)
    header    UTF-8 JSON: kind, network specs, meta settings, tensor table
    payload   tensors in header order, raw little-endian
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError, SpecMismatchError
from .meta import MetaSettings, ResusModel
from .networks import ModelState, PredictorSpec

MAGIC = b"RESUSCK\x00"
FORMAT_VERSION = 1


def write_checkpoint(path: str | Path, header: dict[str, Any], tensors: dict[str, np.ndarray]) -> None:
    """Write tensors plus a JSON header; identical inputs give identical bytes."""
    table = []
    payload = []
    for name, array in tensors.items():
        array = np.asarray(array)
        little = array.astype(array.dtype.newbyteorder("<"), copy=False)
        table.append({"name": name, "dtype": little.dtype.str, "shape": list(array.shape)})
        payload.append(little.tobytes())
    blob = json.dumps({**header, "tensors": table}, sort_keys=True, separators=(",", ":"))
    data = blob.encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(data)))
        f.write(data)
        for chunk in payload:
            f.write(chunk)


def read_checkpoint(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a checkpoint")
    version, header_len = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(data[start : start + header_len])
    offset = start + header_len
    tensors = {}
    for entry in header.pop("tensors"):
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        array = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        tensors[entry["name"]] = array.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
        offset += count * dtype.itemsize
    return header, tensors


def _state_header(state: ModelState) -> dict[str, Any]:
    return {"spec": state.spec.to_dict(), "role": state.role, "frozen": state.frozen}


def _state_from(entry: dict[str, Any], tensors: dict[str, np.ndarray], prefix: str) -> ModelState:
    spec = PredictorSpec(**{**entry["spec"], "mlp_widths": tuple(entry["spec"]["mlp_widths"])})
    params = {
        name[len(prefix) :]: value
        for name, value in tensors.items()
        if name.startswith(prefix) and name != prefix + "offsets"
    }
    return ModelState(
        spec=spec,
        role=entry["role"],
        params=params,
        offsets=tensors[prefix + "offsets"].astype(np.int64),
        frozen=entry["frozen"],
    )


def _state_tensors(state: ModelState, prefix: str) -> dict[str, np.ndarray]:
    tensors = {prefix + name: value for name, value in sorted(state.params.items())}
    tensors[prefix + "offsets"] = state.offsets.astype(np.int64)
    return tensors


def _check_spec(found: PredictorSpec, expected: PredictorSpec | None, what: str) -> None:
    if expected is not None and found != expected:
        raise SpecMismatchError(
            f"{what} checkpoint was built for {found.to_dict()}, "
            f"config expects {expected.to_dict()}"
        )


def save_predictor(state: ModelState, path: str | Path) -> None:
    write_checkpoint(path, {"kind": "shared", "psi": _state_header(state)}, _state_tensors(state, "psi/"))


def load_predictor(path: str | Path, expected: PredictorSpec | None = None) -> ModelState:
    """Load a shared predictor; ``expected`` must match the stored spec exactly."""
    header, tensors = read_checkpoint(path)
    if "psi" not in header:
        raise SpecMismatchError(f"{path} holds no shared predictor")
    state = _state_from(header["psi"], tensors, "psi/")
    _check_spec(state.spec, expected, "shared predictor")
    return state


def save_model(model: ResusModel, path: str | Path) -> None:
    header: dict[str, Any] = {"kind": "meta", "settings": model.settings.to_dict()}
    tensors: dict[str, np.ndarray] = {}
    if model.psi is not None:
        header["psi"] = _state_header(model.psi)
        tensors.update(_state_tensors(model.psi, "psi/"))
    if model.phi is not None:
        header["phi"] = _state_header(model.phi)
        tensors.update(_state_tensors(model.phi, "phi/"))
    tensors.update({"meta/" + k: v for k, v in sorted(model.meta_params.items())})
    write_checkpoint(path, header, tensors)


def load_model(
    path: str | Path,
    expected_psi: PredictorSpec | None = None,
    expected_phi: PredictorSpec | None = None,
) -> ResusModel:
    """Load a meta model, or wrap a shared-predictor checkpoint as a shared-only model."""
    header, tensors = read_checkpoint(path)
    psi = _state_from(header["psi"], tensors, "psi/") if "psi" in header else None
    if psi is not None:
        _check_spec(psi.spec, expected_psi, "shared predictor")
    if header["kind"] == "shared":
        return ResusModel.shared_only(psi)
    phi = _state_from(header["phi"], tensors, "phi/") if "phi" in header else None
    if phi is not None:
        _check_spec(phi.spec, expected_phi, "encoder")
    meta_params = {k[len("meta/") :]: v for k, v in tensors.items() if k.startswith("meta/")}
    return ResusModel(
        settings=MetaSettings.from_dict(header["settings"]),
        psi=psi,
        phi=phi,
        meta_params=meta_params,
    )
