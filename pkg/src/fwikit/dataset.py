"""Observed multi-shot data together with the acquisition that produced it.

On disk a dataset is a JSON manifest (``<name>.json``) plus a raw
little-endian float32 payload (``<name>.bin``) laid out emission-major:
``data[e, r, k]`` for emitter ``e``, receiver ``r`` and sample ``k``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ShapeError
from .forward import AbsorberSpec, SimConfig, SourceInjection, stencil_coefficients
from .grid import GridSpec, TimeAxis
from .signals import ShotGather

__all__ = ["ShotDataset", "config_to_dict", "config_from_dict"]

_DTYPE = "f32le"
_ORDER = "emission-major"


def config_to_dict(cfg: SimConfig) -> dict:
    return cfg.to_dict()


def config_from_dict(d: dict) -> SimConfig:
    g, t, a = d["grid"], d["time"], d["absorber"]
    return SimConfig(
        GridSpec(g["nx"], g["ny"], g["h"]),
        TimeAxis(t["dt"], t["n_steps"]),
        stencil_coefficients(d.get("stencil_radius", 4)),
        AbsorberSpec(a["width"], a["exponent"], a["strength"], a["reference_speed"]),
        tuple(d.get("tile", (32, 512))),
    )


@dataclass(eq=False)
class ShotDataset:
    """``N_e x N_r x N_s`` observed traces plus the geometry that recorded them.

    Parameters
    ----------
    data : ndarray, shape (n_emitters, n_receivers, n_steps)
    config : SimConfig
        Grid, time axis, stencil and absorber used for every shot.
    receivers : ndarray, shape (n_receivers, 2)
        ``(i, j)`` receiver cells shared by all shots.
    emitters : ndarray, shape (n_emitters, 2)
        ``(i, j)`` source cell of each shot.
    source_trace : ndarray, shape (n_steps,)
        Injected source time function (already scaled), identical for all shots.
    meta : dict
        Free-form provenance (specimen name, scale, ...).
    """

    data: np.ndarray = field(repr=False)
    config: SimConfig
    receivers: np.ndarray = field(repr=False)
    emitters: np.ndarray = field(repr=False)
    source_trace: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.receivers = np.asarray(self.receivers, dtype=np.int64).reshape(-1, 2)
        self.emitters = np.asarray(self.emitters, dtype=np.int64).reshape(-1, 2)
        self.source_trace = np.asarray(self.source_trace, dtype=np.float64).ravel()
        n_steps = self.config.time.n_steps
        expected = (self.emitters.shape[0], self.receivers.shape[0], n_steps)
        if self.data.shape != expected:
            raise ShapeError(f"data shape {self.data.shape} does not match geometry {expected}")
        if self.source_trace.size != n_steps:
            raise ShapeError(f"source trace has {self.source_trace.size} samples, expected {n_steps}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_emitters(self) -> int:
        return self.data.shape[0]

    def gathers(self) -> list[ShotGather]:
        dt = self.config.time.dt
        return [ShotGather(self.data[e], dt, self.receivers) for e in range(self.n_emitters)]

    def injections(self) -> list[SourceInjection]:
        return [SourceInjection.point(tuple(cell), self.source_trace) for cell in self.emitters]

    def save(self, path) -> tuple[Path, Path]:
        base = Path(os.fspath(path))
        if base.suffix in (".json", ".bin"):
            base = base.with_suffix("")
        base.parent.mkdir(parents=True, exist_ok=True)
        meta_path, bin_path = base.with_suffix(".json"), base.with_suffix(".bin")
        manifest = {
            "shape": list(self.data.shape),
            "dtype": _DTYPE,
            "order": _ORDER,
            "config": config_to_dict(self.config),
            "receivers": self.receivers.tolist(),
            "emitters": self.emitters.tolist(),
            "source_trace": self.source_trace.tolist(),
            "meta": self.meta,
        }
        meta_path.write_text(json.dumps(manifest, indent=1))
        self.data.astype("<f4").tofile(bin_path)
        return meta_path, bin_path

    @classmethod
    def load(cls, path) -> "ShotDataset":
        base = Path(os.fspath(path))
        if base.suffix in (".json", ".bin"):
            base = base.with_suffix("")
        manifest = json.loads(base.with_suffix(".json").read_text())
        if manifest.get("dtype") != _DTYPE or manifest.get("order") != _ORDER:
            raise FormatError(f"unsupported dataset encoding {manifest.get('dtype')}/{manifest.get('order')}")
        shape = tuple(manifest["shape"])
        payload = np.fromfile(base.with_suffix(".bin"), dtype="<f4")
        if payload.size != int(np.prod(shape)):
            raise FormatError(f"payload holds {payload.size} values, manifest expects {int(np.prod(shape))}")
        return cls(
            payload.astype(np.float64).reshape(shape),
            config_from_dict(manifest["config"]),
            manifest["receivers"],
            manifest["emitters"],
            manifest["source_trace"],
            manifest.get("meta", {}),
        )
