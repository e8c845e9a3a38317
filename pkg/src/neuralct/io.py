"""Flat binary arrays with JSON sidecars, and INI experiment configs.

Every array file ``<stem>.bin`` holds little-endian float32 values in C
order; ``<stem>.json`` describes its shape. Three kinds are written:

* ``movie``    : ``{"kind", "n", "T", "dtype", "order", "class_intensity"}``
* ``sdf``      : ``{"kind", "n", "T", "K", "dtype", "order"}``
* ``sinogram`` : ``{"kind", "n_views", "n_det", "rotations", "dtype", "order"}``
"""
import configparser
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .initseg import SdfMovie
from .projector import GantrySchedule, Sinogram
from .scene import GridSpec, IntensityMovie, SceneConfig

DTYPE = "<f4"
SCHEMA_VERSION = 1


def _stem(path):
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".bin", ".json") else path


def _write(path, array, header):
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(array, dtype=DTYPE)
    stem.with_suffix(".bin").write_bytes(data.tobytes())
    header = {**header, "dtype": "float32", "order": "C", "byte_order": "little"}
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return stem


def read_header(path):
    stem = _stem(path)
    try:
        return json.loads(stem.with_suffix(".json").read_text())
    except FileNotFoundError:
        raise ConfigError(f"missing sidecar {stem.with_suffix('.json')}") from None


def _read(path, shape):
    try:
        raw = np.frombuffer(_stem(path).with_suffix(".bin").read_bytes(), dtype=DTYPE)
    except FileNotFoundError:
        raise ConfigError(f"missing data file {_stem(path)}.bin") from None
    if raw.size != int(np.prod(shape)):
        raise ConfigError(f"{_stem(path)}.bin has {raw.size} values, sidecar implies {shape}")
    return raw.reshape(shape).astype(np.float64)


def save_movie(movie, path):
    g = movie.grid
    header = {"kind": "movie", "n": g.n, "T": g.T, "class_intensity": list(movie.class_intensity)}
    return _write(path, movie.frames, header)


def save_sdf_movie(sdf, path):
    header = {"kind": "sdf", "n": sdf.n, "T": sdf.T, "K": sdf.K}
    return _write(path, sdf.values, header)


def save_sinogram(sino, path):
    s = sino.schedule
    header = {"kind": "sinogram", "n_views": s.n_views, "n_det": sino.n_det, "rotations": s.rotations}
    return _write(path, sino.rows, header)


def load(path):
    """Read any array file back into its domain type based on ``kind``."""
    h = read_header(path)
    kind = h.get("kind", "movie")
    if kind == "movie":
        frames = _read(path, (h["T"], h["n"], h["n"]))
        return IntensityMovie(GridSpec(n=h["n"], T=h["T"]), frames, tuple(h.get("class_intensity", (1.0,))))
    if kind == "sdf":
        return SdfMovie(_read(path, (h["T"], h["K"], h["n"], h["n"])))
    if kind == "sinogram":
        rows = _read(path, (h["n_views"], h["n_det"]))
        return Sinogram(rows, GantrySchedule(h["n_views"], h["rotations"]))
    raise ConfigError(f"unknown array kind {kind!r}")


# -- experiment configs -------------------------------------------------------


@dataclass
class ExperimentSpec:
    """Everything one ``nct`` invocation needs.

    Sweep axes are lists; their Cartesian product times ``seeds`` gives the
    jobs. An axis left empty takes the base value.
    """

    scene: SceneConfig = field(default_factory=SceneConfig)
    n: int = 64
    frames: int = 180
    views_per_rotation: int = 180
    rotations: int = 1
    k_samp: int = 2
    optim: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    pipeline: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    sweep: dict = field(default_factory=dict)
    output: str = "out"
    source: str = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        for axis, values in self.sweep.items():
            if not values:
                raise ConfigError(f"sweep axis {axis!r} is empty")
            if axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")


# sweep axis -> (section, key)
SWEEP_AXES = {
    "displacement_deg": ("scene", "displacement_deg"),
    "lambda_eik": ("weights", "lambda_eik"),
    "lambda_tvs": ("weights", "lambda_tvs"),
    "lambda_tvt": ("weights", "lambda_tvt"),
    "f_max": ("model", "f_max"),
}

_SCENE_TYPES = {f.name: f.type for f in fields(SceneConfig)}
_NUMERIC = {"optim", "weights", "model", "pipeline"}


def _number(text):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "false", "no", "off"):
        return lowered in ("true", "yes", "on")
    if lowered in ("none", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _list(text, convert=_number):
    return [convert(v) for v in text.replace(",", " ").split()]


def _scene_value(key, text):
    if key == "glyphs":
        return tuple(_list(text, str))
    if key in ("kind", "glyph_dir"):
        return None if text.strip().lower() == "none" else text.strip()
    value = _number(text)
    if not isinstance(value, (int, float)):
        raise ConfigError(f"scene.{key} must be numeric, got {text!r}")
    return float(value)


def parse_spec(text, source=None):
    """Parse an INI experiment spec (see README for the schema)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (M, K)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    meta = parser["meta"] if parser.has_section("meta") else {}
    version = int(meta.get("schema_version", 0) or 0)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {version} unsupported (expected {SCHEMA_VERSION})")
    known = {"meta", "scene", "acquisition", "optim", "weights", "model", "pipeline", "sweep", "run"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(f"unknown sections {sorted(extra)}")

    scene_kw = {}
    if parser.has_section("scene"):
        for key, text in parser["scene"].items():
            if key not in _SCENE_TYPES:
                raise ConfigError(f"unknown scene key {key!r}")
            scene_kw[key] = _scene_value(key, text)
    kwargs = {"scene": SceneConfig(**scene_kw), "source": source}

    if parser.has_section("acquisition"):
        for key, text in parser["acquisition"].items():
            if key not in ("n", "frames", "views_per_rotation", "rotations", "k_samp"):
                raise ConfigError(f"unknown acquisition key {key!r}")
            kwargs[key] = int(text)
    for section in _NUMERIC:
        if parser.has_section(section):
            kwargs[section] = {k: _number(v) for k, v in parser[section].items()}
    if parser.has_section("sweep"):
        kwargs["sweep"] = {k: _list(v) for k, v in parser["sweep"].items()}
    if parser.has_section("run"):
        run = parser["run"]
        if "seeds" in run:
            kwargs["seeds"] = [int(s) for s in _list(run["seeds"])]
        if "output" in run:
            kwargs["output"] = run["output"].strip()
    return ExperimentSpec(**kwargs)


def load_spec(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    spec = parse_spec(text, source=str(path))
    out = Path(spec.output)
    if not out.is_absolute():
        spec.output = str(path.parent / out)
    return spec
