"""Binary dump of paths and transports for replay.

Layout: 8 magic bytes, a little-endian u32 header length, a UTF-8 JSON header
(version, model, epsilon, dt, T, seed, counts, array shapes) and then each
array as row-major little-endian float64 in header order.
"""

from __future__ import annotations

import json
import struct
from typing import Optional

import numpy as np

MAGIC = b"PSDUMP\x00\x01"
VERSION = 1


def write_dump(path, arrays: dict, *, model: str, epsilon: Optional[float], dt: float, T: float, seed: int,
               extra: Optional[dict] = None) -> None:
    header = {
        "version": VERSION,
        "model": model,
        "epsilon": epsilon,
        "dt": dt,
        "T": T,
        "seed": int(seed),
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_dump(path) -> tuple[dict, dict]:
    """Return ``(header, arrays)``."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a path dump")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported dump version {header.get('version')}")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated array {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header, arrays


def dump_simulation(path, model, grid, seed: int, path_indices, epsilon: Optional[float] = None) -> None:
    """Simulate and dump increments, states and (for ``epsilon``) the recorded Theta, M, tau."""
    from .sde import integrate_transport, simulate

    hp = simulate(model, grid, seed, path_indices)
    arrays = {"increments": hp.increments, "states": hp.states}
    if epsilon is not None:
        tr = integrate_transport(model, hp, epsilon, record="all")
        arrays.update(theta=tr.theta, m=tr.m, tau=tr.tau)
    write_dump(path, arrays, model=model.name, epsilon=epsilon, dt=grid.dt, T=grid.T, seed=seed,
               extra={"n_paths": hp.n_paths, "n_steps": grid.n_steps})
