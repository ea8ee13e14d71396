"""TOML run configuration.

One file describes both the synthetic scene and the pipeline. Every table is
optional; omitted keys take the documented defaults. Unknown tables or keys
and wrongly typed values raise :class:`ConfigError`. See ``configs/`` for a
commented example.
"""

from __future__ import annotations

import dataclasses
import sys
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import CameraIntrinsics, RigidPose, rotation_from_axis_angle
from .optimize import DescentConfig
from .photometric import PhotometricConfig
from .synth import Background, OracleNoise, SceneObject, SceneSpec
from .uncertainty import LossConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FUSION_METHODS = ("wgm", "wam", "none")
PRESETS = {
    "desk": {"k": 32, "channels": 8},
    "full": {"k": 128, "channels": 64},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CameraSection:
    width: int = 128
    height: int = 64
    fx: float = 128.0
    fy: float = 128.0
    cx: float | None = None
    cy: float | None = None
    translation: tuple[float, float, float] = (1.5, 0.0, 0.0)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class HypothesisSection:
    d_min: float = 1.0
    d_max: float = 80.0
    k: int | None = None


@dataclass(frozen=True)
class FeatureSection:
    channels: int | None = None
    gain: float = 400.0


@dataclass(frozen=True)
class CostVolumeSection:
    smooth_radius: int = 1


@dataclass(frozen=True)
class FusionSection:
    method: str = "wgm"


@dataclass(frozen=True)
class RefineSection:
    steps: int = 0
    step_size: float = 1.0
    fd_step: float = 1e-3
    freeze_cost_volume: bool = True


@dataclass(frozen=True)
class EvaluationSection:
    cap: float = 80.0


@dataclass(frozen=True)
class PipelineConfig:
    scene: SceneSpec
    preset: str = "desk"
    k: int = 32
    channels: int = 8
    feature_gain: float = 400.0
    smooth_radius: int = 1
    fusion: str = "wgm"
    noise: OracleNoise = OracleNoise()
    photometric: PhotometricConfig = PhotometricConfig()
    loss: LossConfig = LossConfig()
    descent: DescentConfig = field(default_factory=lambda: DescentConfig(steps=0))
    cap: float = 80.0

    @property
    def d_min(self) -> float:
        return self.scene.d_min

    @property
    def d_max(self) -> float:
        return self.scene.d_max

    def with_fusion(self, method: str) -> "PipelineConfig":
        if method not in FUSION_METHODS:
            raise ConfigError(f"fusion method must be one of {FUSION_METHODS}")
        return dataclasses.replace(self, fusion=method)

    def as_dict(self) -> dict:
        """Plain, JSON-friendly view of the resolved configuration."""
        s = self.scene
        K = s.intrinsics
        return {
            "preset": self.preset,
            "camera": {
                "width": K.width, "height": K.height, "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
                "motion": s.camera_motion.matrix.tolist(),
            },
            "rng_seed": s.rng_seed,
            "background": dataclasses.asdict(s.background),
            "objects": [dataclasses.asdict(o) for o in s.objects],
            "hypotheses": {"d_min": self.d_min, "d_max": self.d_max, "k": self.k},
            "features": {"channels": self.channels, "gain": self.feature_gain},
            "cost_volume": {"smooth_radius": self.smooth_radius},
            "fusion": {"method": self.fusion},
            "oracle": dataclasses.asdict(self.noise),
            "photometric": dataclasses.asdict(self.photometric),
            "loss": dataclasses.asdict(self.loss),
            "refine": dataclasses.asdict(self.descent),
            "evaluation": {"cap": self.cap},
        }


def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, list) or len(value) != len(args):
            raise ConfigError(f"{where}: expected a list of {len(args)} numbers, got {value!r}")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    raise TypeError(f"unsupported config type {tp}")


def _build(cls, table, where: str, **overrides):
    """Instantiate dataclass ``cls`` from a TOML table, checking keys and types."""
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.name not in overrides}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}") for k, v in table.items()}
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_TABLES = {"preset", "camera", "scene", "background", "objects", "hypotheses", "features", "cost_volume", "fusion",
           "oracle", "photometric", "loss", "refine", "evaluation"}


def parse_config(data: dict, preset: str | None = None) -> PipelineConfig:
    """Build a :class:`PipelineConfig` from an already parsed TOML document.

    ``preset`` (from the command line) overrides the document's ``preset``
    key and also its explicit ``hypotheses.k`` and ``features.channels``.
    """
    unknown = sorted(set(data) - _TABLES)
    if unknown:
        raise ConfigError(f"unknown table(s) {', '.join(unknown)}")
    forced = preset is not None
    preset = preset or data.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}")
    defaults = PRESETS[preset]

    cam = _build(CameraSection, data.get("camera", {}), "camera")
    cx = (cam.width - 1) / 2 if cam.cx is None else cam.cx
    cy = (cam.height - 1) / 2 if cam.cy is None else cam.cy
    try:
        K = CameraIntrinsics(cam.fx, cam.fy, cx, cy, cam.width, cam.height)
        motion = RigidPose(rotation_from_axis_angle(cam.rotation), cam.translation)
    except ValueError as exc:
        raise ConfigError(f"camera: {exc}") from exc

    scene_table = data.get("scene", {})
    if not isinstance(scene_table, dict) or set(scene_table) - {"rng_seed"}:
        raise ConfigError("scene: only rng_seed is allowed")
    rng_seed = _coerce(scene_table.get("rng_seed", 0), int, "scene.rng_seed")

    background = _build(Background, data.get("background", {}), "background")
    objects_table = data.get("objects", [])
    if not isinstance(objects_table, list):
        raise ConfigError("objects: expected an array of tables ([[objects]])")
    objects = tuple(_build(SceneObject, t, f"objects[{i}]") for i, t in enumerate(objects_table))

    hyp = _build(HypothesisSection, data.get("hypotheses", {}), "hypotheses")
    k = defaults["k"] if hyp.k is None or forced else hyp.k
    if not 2 <= k <= 255:
        raise ConfigError("hypotheses.k must lie in [2, 255]")
    if not 0 < hyp.d_min < hyp.d_max:
        raise ConfigError("hypotheses: need 0 < d_min < d_max")
    try:
        scene = SceneSpec(K, background, objects, motion, rng_seed, hyp.d_min, hyp.d_max)
    except ValueError as exc:
        raise ConfigError(f"scene: {exc}") from exc

    feat = _build(FeatureSection, data.get("features", {}), "features")
    channels = defaults["channels"] if feat.channels is None or forced else feat.channels
    if channels < 3:
        raise ConfigError("features.channels must be at least 3")
    if not feat.gain > 0:
        raise ConfigError("features.gain must be positive")
    cvs = _build(CostVolumeSection, data.get("cost_volume", {}), "cost_volume")
    if cvs.smooth_radius < 0:
        raise ConfigError("cost_volume.smooth_radius must be non-negative")
    fusion = _build(FusionSection, data.get("fusion", {}), "fusion").method
    if fusion not in FUSION_METHODS:
        raise ConfigError(f"fusion.method must be one of {FUSION_METHODS}")
    refine = _build(RefineSection, data.get("refine", {}), "refine")
    descent = _build(DescentConfig, dataclasses.asdict(refine), "refine", d_min=hyp.d_min, d_max=hyp.d_max)
    cap = _build(EvaluationSection, data.get("evaluation", {}), "evaluation").cap
    if not cap > 0:
        raise ConfigError("evaluation.cap must be positive")

    return PipelineConfig(
        scene=scene,
        preset=preset,
        k=k,
        channels=channels,
        feature_gain=feat.gain,
        smooth_radius=cvs.smooth_radius,
        fusion=fusion,
        noise=_build(OracleNoise, data.get("oracle", {}), "oracle"),
        photometric=_build(PhotometricConfig, data.get("photometric", {}), "photometric"),
        loss=_build(LossConfig, data.get("loss", {}), "loss"),
        descent=descent,
        cap=cap,
    )


def load_config(path, preset: str | None = None) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, preset)
