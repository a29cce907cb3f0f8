"""Checkpoint file format (version 1).

Layout, stable across versions:

* an ASCII header: the magic line ``seriesdiff-ckpt 1``, then ``key=value``
  lines (architecture fields, schedule parameters, training stage, seed,
  optional recorded losses), then one ``tensor=<name>:<dim>x<dim>...`` line
  per parameter in order, then a single blank line;
* the named flat float arrays, concatenated in header order as raw
  little-endian float64 bytes, row-major.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError
from .network import Architecture, ScoreNetwork
from .schedule import NoiseSchedule, make_linear_schedule
from .tensor import ParamSet, Tensor

MAGIC = "seriesdiff-ckpt 1"


def save_checkpoint(
    path,
    net: ScoreNetwork,
    schedule: NoiseSchedule,
    stage: str,
    seed: int,
    extras: dict[str, float | int | str] | None = None,
) -> None:
    arch = net.arch
    lines = [
        MAGIC,
        f"series_len={arch.series_len}",
        f"cond_dim={arch.cond_dim}",
        f"time_dim={arch.time_dim}",
        "hidden=" + ",".join(str(h) for h in arch.hidden),
        f"activation={arch.activation}",
        f"t_steps={schedule.T}",
        f"beta_start={float(schedule.beta[0])!r}",
        f"beta_end={float(schedule.beta[-1])!r}",
        f"stage={stage}",
        f"seed={seed}",
    ]
    for key, value in (extras or {}).items():
        if "=" in key or "\n" in key or "\n" in str(value):
            raise ValueError(f"invalid extra header entry {key!r}")
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    for name, tensor in net.params.items():
        dims = "x".join(str(d) for d in tensor.shape)
        lines.append(f"tensor={name}:{dims}")
    header = "\n".join(lines) + "\n\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for _, tensor in net.params.items():
            fh.write(tensor.data.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ScoreNetwork, NoiseSchedule, dict[str, str]]:
    """Returns the network, its schedule, and the raw header metadata."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise DataError(f"malformed checkpoint (no header terminator): {path}")
    try:
        header_lines = blob[:sep].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise DataError(f"malformed checkpoint header: {path}") from exc
    if not header_lines or header_lines[0] != MAGIC:
        raise DataError(f"not a seriesdiff checkpoint: {path}")

    meta: dict[str, str] = {}
    tensor_decls: list[tuple[str, tuple[int, ...]]] = []
    for line in header_lines[1:]:
        key, _, value = line.partition("=")
        if key == "tensor":
            name, _, dims = value.partition(":")
            tensor_decls.append((name, tuple(int(d) for d in dims.split("x"))))
        else:
            meta[key] = value

    try:
        arch = Architecture(
            series_len=int(meta["series_len"]),
            cond_dim=int(meta["cond_dim"]),
            time_dim=int(meta["time_dim"]),
            hidden=tuple(int(h) for h in meta["hidden"].split(",")),
            activation=meta["activation"],
        )
        schedule = make_linear_schedule(
            int(meta["t_steps"]), float(meta["beta_start"]), float(meta["beta_end"])
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed checkpoint header fields: {path}") from exc

    payload = blob[sep + 2 :]
    items = []
    offset = 0
    for name, shape in tensor_decls:
        count = int(np.prod(shape))
        nbytes = count * 8
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise DataError(f"checkpoint payload truncated at tensor {name!r}: {path}")
        items.append((name, Tensor(shape, np.frombuffer(chunk, dtype="<f8"))))
        offset += nbytes
    if offset != len(payload):
        raise DataError(f"checkpoint payload has trailing bytes: {path}")
    net = ScoreNetwork(arch, ParamSet(items))
    return net, schedule, meta
