"""Checkpoint directories.

Layout::

    <dir>/manifest.json   config echo, counters, optimiser hyper-parameters,
                          and one entry per tensor: name, dtype, shape,
                          byte offset and length inside tensors.bin
    <dir>/tensors.bin     raw little-endian tensor payloads, concatenated

Tensor names: ``generator/<param>``, ``critic/<param>``,
``optim_g/<param index>/<slot>``, ``optim_c/<param index>/<slot>``,
``rng/eps``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

FORMAT = "historynet-checkpoint"
VERSION = 1
TENSOR_FILE = "tensors.bin"
MANIFEST_FILE = "manifest.json"


class CheckpointError(ValueError):
    pass


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().contiguous().numpy()


def write_tensors(path: Path, tensors: dict[str, torch.Tensor]) -> list[dict]:
    index, offset = [], 0
    with open(path, "wb") as fh:
        for name, t in tensors.items():
            arr = _to_numpy(t)
            data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            fh.write(data)
            index.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                          "offset": offset, "nbytes": len(data)})
            offset += len(data)
    return index


def read_tensors(path: Path, index: list[dict]) -> dict[str, torch.Tensor]:
    blob = Path(path).read_bytes()
    out = {}
    for e in index:
        dtype = np.dtype(e["dtype"]).newbyteorder("<")
        arr = np.frombuffer(blob, dtype=dtype, count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=e["offset"]).reshape(e["shape"])
        out[e["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    return out


def _optimizer_tensors(prefix: str, opt: torch.optim.Optimizer) -> tuple[dict, dict]:
    sd = opt.state_dict()
    tensors = {}
    for idx, slots in sd["state"].items():
        for slot, value in slots.items():
            tensors[f"{prefix}/{idx}/{slot}"] = torch.as_tensor(value)
    return tensors, {"param_groups": sd["param_groups"]}


def _optimizer_state(prefix: str, tensors: dict, meta: dict) -> dict:
    state: dict[int, dict] = {}
    for name, t in tensors.items():
        if name.startswith(prefix + "/"):
            _, idx, slot = name.split("/")
            state.setdefault(int(idx), {})[slot] = t
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(directory: str | Path, *, generator, critic, opt_g, opt_c, rng: torch.Generator,
                    step: int, epoch: int, batch_in_epoch: int, train_config: dict, model_config: dict,
                    extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {f"generator/{k}": v for k, v in generator.state_dict().items()}
    tensors.update({f"critic/{k}": v for k, v in critic.state_dict().items()})
    g_t, g_meta = _optimizer_tensors("optim_g", opt_g)
    c_t, c_meta = _optimizer_tensors("optim_c", opt_c)
    tensors.update(g_t)
    tensors.update(c_t)
    tensors["rng/eps"] = rng.get_state()
    index = write_tensors(directory / TENSOR_FILE, tensors)
    manifest = {
        "format": FORMAT, "version": VERSION,
        "step": step, "epoch": epoch, "batch_in_epoch": batch_in_epoch,
        "train_config": train_config, "model_config": model_config,
        "optim_g": g_meta, "optim_c": c_meta,
        "extra": extra or {},
        "tensors": index,
    }
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def read_checkpoint(directory: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    directory = Path(directory)
    mpath = directory / MANIFEST_FILE
    if not mpath.exists():
        raise CheckpointError(f"{directory} is not a checkpoint (no {MANIFEST_FILE})")
    meta = json.loads(mpath.read_text())
    if meta.get("format") != FORMAT or meta.get("version") != VERSION:
        raise CheckpointError(f"{directory}: unsupported checkpoint format")
    return meta, read_tensors(directory / TENSOR_FILE, meta["tensors"])


def restore_into(meta: dict, tensors: dict, *, generator, critic, opt_g=None, opt_c=None,
                 rng: torch.Generator | None = None) -> None:
    def sub(prefix):
        n = len(prefix) + 1
        return {k[n:]: v for k, v in tensors.items() if k.startswith(prefix + "/")}

    generator.load_state_dict(sub("generator"))
    critic.load_state_dict(sub("critic"))
    if opt_g is not None:
        opt_g.load_state_dict(_optimizer_state("optim_g", tensors, meta["optim_g"]))
    if opt_c is not None:
        opt_c.load_state_dict(_optimizer_state("optim_c", tensors, meta["optim_c"]))
    if rng is not None:
        rng.set_state(tensors["rng/eps"])
