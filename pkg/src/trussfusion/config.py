"""Experiment configuration: defaults, YAML I/O and component builders.

One ExperimentConfig describes a complete synthetic run: structural
model, sensor suite, rates, excitation, noise seeds and estimator
settings.  Key names carry units.  Stiffness defaults are the tuned
values of the laboratory structure (datasheet initial guesses times the
identified multipliers); plate and element masses are not published and
are configuration values of this synthetic bench.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import excitation as excitation_mod
from .model import (AXES, StiffnessParams, assemble, build_scale_model,
                    load_model_file)
from .modal import build_state_space, solve_modes
from .sensors import CameraModel, GaugeModel, StrainGaugeSet

CONFIG_SCHEMA = 1

# datasheet initial guesses and identified multipliers for the scale model
INITIAL_GUESS = {"alpha0": 0.05, "alpha1": 0.005, "k_b": 18200.0,
                 "k_ca": 19500.0, "k_cp": 22100.0, "q": 1.0e-7,
                 "r_b": 1.0e-3, "r_c": 1.0e-3, "r_t": 1.0e-2}
TUNED_MULTIPLIERS = {"alpha0": 3.43, "alpha1": 2.99, "k_b": 1.79,
                     "k_ca": 0.70, "k_cp": 1.29, "q": 3.00,
                     "r_b": 3.14, "r_c": 0.26, "r_t": 2.46}

DEFAULT_CAMERA_NODES = (5, 6, 9, 10, 13, 14, 17, 18, 21, 22)
DEFAULT_LDV_CHANNELS = ((11, "x"), (13, "x"), (23, "x"),
                        (11, "y"), (16, "y"), (23, "y"))
DEFAULT_REFERENCE_CHANNELS = ((6, "x"), (13, "x"), (22, "x"),
                              (5, "z"), (14, "z"), (21, "z"))


@dataclass
class ExperimentConfig:
    # structural model (generated tower unless model_file is given)
    model_file: str | None = None
    modules: int = 5
    footprint_m: float = 0.26
    module_height_m: float = 0.40
    plate_mass_kg: tuple | float = (6.5, 6.5, 6.5, 6.5, 4.0)
    active_columns_per_module: tuple = (4, 3, 2, 2, 0)
    active_bracings_per_module: tuple = (8, 6, 4, 2, 0)
    element_mass_kg: float = 0.06
    include_element_mass: bool = True
    # stiffness and damping (tuned laboratory values)
    k_b_n_per_m: float = INITIAL_GUESS["k_b"] * TUNED_MULTIPLIERS["k_b"]
    k_ca_n_per_m: float = INITIAL_GUESS["k_ca"] * TUNED_MULTIPLIERS["k_ca"]
    k_cp_n_per_m: float = INITIAL_GUESS["k_cp"] * TUNED_MULTIPLIERS["k_cp"]
    alpha0_per_s: float = INITIAL_GUESS["alpha0"] * TUNED_MULTIPLIERS["alpha0"]
    alpha1_s: float = 0.01495
    # modal reduction
    n_modes: int = 10
    # rates
    f_sg_hz: float = 200.0
    camera_divisor: int = 2
    camera_lag_ticks: int = 3
    # strain gauges
    gauge_elements: tuple | str = "all"
    r_b_n2: float = 3.6e-3
    r_c_n2: float = 3.6e-3
    truth_r_b_n2: float = 4.0e-3
    truth_r_c_n2: float = 4.0e-3
    # camera
    camera_nodes: tuple = DEFAULT_CAMERA_NODES
    camera_standoff_m: float = 2.0
    fx_px: float = 2400.0
    fy_px: float = 2400.0
    cx_px: float = 968.0
    cy_px: float = 608.0
    distortion: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)  # k1, k2, k3, p1, p2
    r_t_m2: float = 2.5e-9
    truth_r_t_m2: float = 2.5e-9
    camera_through_projection: bool = True
    reference_channels: tuple = ()   # (node, axis) pairs held out of fusion
    # estimator
    q: float = 1.0e-7
    p0_diag: float = 1.0e-4
    highpass_fc_hz: float = 0.1
    oosm_lag_noise_scale: float | None = None  # None -> sqrt(lag)
    # excitation
    excitation: dict = field(default_factory=lambda: {
        "type": "quake", "duration_s": 8.0, "dominant_freq_hz": 4.0,
        "freq_std_hz": 4.0, "pga_m_per_s2": 0.37 * 9.81, "dt_s": 0.001,
        "direction": "x", "seed": 12345, "amplitude_scale": 1.0 / 18.0})
    duration_s: float | None = None
    seed_gauge_noise: int = 1
    seed_camera_noise: int = 2
    # references
    ldv_channels: tuple = DEFAULT_LDV_CHANNELS
    burn_in_s: float = 1.0

    def stiffness_params(self) -> StiffnessParams:
        return StiffnessParams(k_b=self.k_b_n_per_m, k_ca=self.k_ca_n_per_m,
                               k_cp=self.k_cp_n_per_m, alpha0=self.alpha0_per_s,
                               alpha1=self.alpha1_s)

    def dt_tick(self):
        return 1.0 / self.f_sg_hz

    def burn_in_ticks(self):
        return int(round(self.burn_in_s * self.f_sg_hz))

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        doc = {"config_schema": CONFIG_SCHEMA}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            doc[f.name] = v
        return doc

    @staticmethod
    def from_dict(doc: dict):
        doc = dict(doc)
        schema = doc.pop("config_schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ValueError(f"unsupported config_schema {schema!r}")
        names = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")

        def tuplify(v):
            if isinstance(v, list):
                return tuple(tuplify(x) for x in v)
            return v

        kw = {k: tuplify(v) for k, v in doc.items()}
        cfg = ExperimentConfig(**kw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.camera_divisor < 1:
            raise ValueError("camera_divisor must be >= 1")
        if self.camera_lag_ticks < 0:
            raise ValueError("camera_lag_ticks must be >= 0")
        if self.f_sg_hz <= 0:
            raise ValueError("f_sg_hz must be > 0")
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        dt_exc = float(self.excitation.get("dt_s", 0.001))
        per = self.dt_tick() / dt_exc
        if abs(per - round(per)) > 1e-9 or round(per) < 1:
            raise ValueError("gauge period must be an integer multiple of the "
                             "excitation sample step")
        ref = set(map(tuple, self.reference_channels))
        cam = {(n, AXES[a]) for n in self.camera_nodes for a in (0, 2)}
        if not ref.issubset(cam):
            raise ValueError("reference channels must be tracked camera channels")
        return self


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def tuning_config() -> ExperimentConfig:
    """Chirp identification run with held-out reference channels."""
    return ExperimentConfig(
        reference_channels=DEFAULT_REFERENCE_CHANNELS,
        excitation={"type": "chirp", "f0_hz": 0.1, "f1_hz": 6.0,
                    "duration_s": 10.0, "amplitude_m": 2.0e-3, "dt_s": 0.001,
                    "direction": "x", "amplitude_scale": 1.0},
    )


def load_config(path) -> ExperimentConfig:
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"config file {path} did not parse to a mapping")
    return ExperimentConfig.from_dict(doc)


def save_config(cfg: ExperimentConfig, path):
    import yaml

    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# component builders

def build_model(cfg: ExperimentConfig):
    if cfg.model_file:
        geometry, params, element_mass, include = load_model_file(cfg.model_file)
    else:
        geometry = build_scale_model(
            modules=cfg.modules, footprint=cfg.footprint_m,
            module_height=cfg.module_height_m, plate_mass=cfg.plate_mass_kg,
            active_columns_per_module=cfg.active_columns_per_module)
        params = cfg.stiffness_params()
        element_mass, include = cfg.element_mass_kg, cfg.include_element_mass
    return assemble(geometry, params, element_mass=element_mass,
                    include_element_mass=include)


def build_gauges(cfg: ExperimentConfig, model) -> StrainGaugeSet:
    ids = None if cfg.gauge_elements == "all" else tuple(cfg.gauge_elements)
    return StrainGaugeSet.from_model(model, element_ids=ids,
                                     r_b=cfg.r_b_n2, r_c=cfg.r_c_n2)


def build_camera(cfg: ExperimentConfig, model) -> CameraModel:
    return CameraModel.from_model(
        model, cfg.camera_nodes, standoff=cfg.camera_standoff_m,
        fx=cfg.fx_px, fy=cfg.fy_px, cx=cfg.cx_px, cy=cfg.cy_px,
        distortion=np.asarray(cfg.distortion, dtype=float),
        lag=cfg.camera_lag_ticks, rate_divisor=cfg.camera_divisor,
        r_t=cfg.r_t_m2)


def fused_channel_indices(cfg: ExperimentConfig, camera: CameraModel):
    """Camera channel indices used for fusion (references held out)."""
    ref = {(int(n), AXES.index(a)) for n, a in cfg.reference_channels}
    return [i for i, ch in enumerate(camera.channels) if ch not in ref]


def reference_channel_indices(cfg: ExperimentConfig, camera: CameraModel):
    ref = {(int(n), AXES.index(a)) for n, a in cfg.reference_channels}
    return [i for i, ch in enumerate(camera.channels) if ch in ref]


def build_components(cfg: ExperimentConfig):
    """Everything the harness needs: model, basis, state space, sensors."""
    model = build_model(cfg)
    basis = solve_modes(model, cfg.n_modes)
    gauges = build_gauges(cfg, model)
    camera = build_camera(cfg, model)
    ss = build_state_space(basis, model, cfg.dt_tick(), gauges=gauges,
                           camera=camera)
    gauge_model = GaugeModel(gauges, basis)
    return model, basis, ss, gauges, camera, gauge_model


def build_motion(cfg: ExperimentConfig) -> excitation_mod.GroundMotion:
    spec = dict(cfg.excitation)
    kind = spec.pop("type", "quake")
    scale = float(spec.pop("amplitude_scale", 1.0))
    if kind == "quake":
        gm = excitation_mod.kanai_tajimi(
            duration=float(spec.get("duration_s", 8.0)),
            dominant_freq=float(spec.get("dominant_freq_hz", 4.0)),
            freq_std=float(spec.get("freq_std_hz", 4.0)),
            target_pga=float(spec.get("pga_m_per_s2", 0.37 * 9.81)),
            seed=int(spec.get("seed", 0)),
            dt=float(spec.get("dt_s", 0.001)),
            direction=spec.get("direction", "x"))
    elif kind == "chirp":
        gm = excitation_mod.chirp(
            f0=float(spec.get("f0_hz", 0.1)), f1=float(spec.get("f1_hz", 6.0)),
            duration=float(spec.get("duration_s", 10.0)),
            amplitude=float(spec.get("amplitude_m", 2.0e-3)),
            dt=float(spec.get("dt_s", 0.001)),
            direction=spec.get("direction", "x"))
    elif kind == "noise":
        gm = excitation_mod.band_limited_noise(
            fs=float(spec.get("fs_hz", 1000.0)),
            band=tuple(spec.get("band_hz", (0.5, 20.0))),
            rms=float(spec.get("rms_m_per_s2", 1.0)),
            duration=float(spec.get("duration_s", 8.0)),
            seed=int(spec.get("seed", 0)),
            direction=spec.get("direction", "x"))
    else:
        raise ValueError(f"unknown excitation type {kind!r}")
    return gm.scaled(scale) if scale != 1.0 else gm
