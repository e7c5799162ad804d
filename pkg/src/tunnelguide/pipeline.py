"""Configuration, coefficient cache and pipeline stages behind the command line.

The pipeline is coefficient-first: the limit problems (cross-section modes,
cap exponents, junction, channel and resonator constants, spin shifts) are
solved once, cached under a content hash, and the cheap asymptotic formulas
are evaluated for any ``eps`` and ``k``.  Direct solves on ``G(eps)`` are an
optional verification stage.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__

MODES = ("coefficients", "asymptotics", "direct", "full", "ladder")


class ConfigError(ValueError):
    """Configuration problems; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class StageError(RuntimeError):
    """A numerical stage failed; carries the stage (module) name."""

    def __init__(self, stage: str, error: Exception):
        self.stage = stage
        self.error = error
        super().__init__(f"{stage}: {type(error).__name__}: {error}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_INT = {"type": "integer", "minimum": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj({
    "geometry": _obj({
        "cross_section": _obj({
            "shape": {"enum": ["disk", "rectangle", "polygon"]},
            "radius": _POS, "a": _POS, "b": _POS,
            "vertices": {"type": "array", "items": _PAIR, "minItems": 3},
        }, ["shape"]),
        "narrows": {"type": "array", "minItems": 2, "maxItems": 2, "items": _obj({
            "tip_x": _NUM,
            "half_angle": _POS,
            "profile": _obj({
                "kind": {"enum": ["hyperboloid", "custom"]},
                "waist": {"type": "number", "minimum": 0},
                "blend": _PAIR,
                "samples": {"type": "array", "items": _PAIR},
            }, ["kind"]),
        }, ["tip_x"])},
        "epsilon": _POS,
        "solenoid": {"oneOf": [{"type": "null"}, _obj({
            "center": _PAIR, "radius": _POS,
            "field_samples": {"type": "array", "items": _NUM, "minItems": 1},
            "gauge_band": _PAIR,
        }, ["center", "radius", "field_samples"])]},
        "channel_length": _POS,
    }, ["cross_section", "narrows", "epsilon"]),
    "spectral": _obj({"h": _POS, "count": {"type": "integer", "minimum": 2}, "cap_steps": _INT}),
    "junction": _obj({"h0": _POS, "growth": _POS, "n_cone": _INT, "r_max_factor": _POS, "cutoff": _PAIR}),
    "channel": _obj({"n_radial": _INT, "length": _POS, "cutoff": _PAIR,
                     "n_evanescent": {"type": ["integer", "null"], "minimum": 0}, "h_min_ratio": _POS,
                     "table_offsets": {"type": "array", "items": _NUM, "minItems": 1}}),
    "resonator": _obj({"n_radial": _INT, "cutoff": _PAIR, "h_min_ratio": _POS, "window": _PAIR,
                       "expansion_offsets": {"type": "array", "items": _NUM, "minItems": 2},
                       "voxel_h": _POS, "voxel_levels": _INT}),
    "asymptotics": _obj({"expansion": {"enum": ["leading", "full"]}, "n_points": _INT, "half_widths": _POS,
                         "regime_threshold": _POS, "delta_small": _POS}),
    "direct": _obj({"n_radial": _INT, "h": _POS, "levels": _INT, "n_points": _INT, "half_widths": _POS,
                    "min_waist_voxels": _POS, "confirm": {"type": "integer", "minimum": 0}}),
    "mode": {"enum": list(MODES)},
    "ladder": {"type": "array", "items": _POS, "minItems": 1},
    "output": {"type": "string"},
    "cache_dir": {"type": "string"},
}, ["geometry"])


@dataclass(frozen=True)
class SpectralSettings:
    """Cross-section grid spacing and mode count; RK4 steps of the cap shooting."""

    h: float = 0.02
    count: int = 4
    cap_steps: int = 4000


@dataclass(frozen=True)
class JunctionSettings:
    h0: float = 0.04
    growth: float = 0.06
    n_cone: int = 24
    r_max_factor: float = 3.0
    cutoff: tuple = (1.15, 1.9)


@dataclass(frozen=True)
class ChannelSettings:
    """Channel grid and the ``k^2 - k0^2`` offsets of the interpolation table."""

    n_radial: int = 16
    length: float = 8.0
    cutoff: tuple = (0.5, 1.0)
    n_evanescent: int | None = 8
    h_min_ratio: float = 0.01
    table_offsets: tuple = (-0.2, -0.1, 0.0, 0.1, 0.2)


@dataclass(frozen=True)
class ResonatorSettings:
    """Meridian resonator grid, eigenvalue window and voxel spacing of the spin shifts."""

    n_radial: int = 16
    cutoff: tuple = (0.5, 1.0)
    h_min_ratio: float = 0.01
    window: tuple = (5.9, 6.4)
    expansion_offsets: tuple = (-0.04, -0.02, 0.02, 0.04)
    voxel_h: float = 0.1
    voxel_levels: int = 2


@dataclass(frozen=True)
class AsymptoticSettings:
    expansion: str = "leading"
    n_points: int = 201
    half_widths: float = 5.0
    regime_threshold: float = 0.05
    delta_small: float = 0.1


@dataclass(frozen=True)
class DirectSettings:
    """Direct-solver grids; ``confirm`` is the number of leading ladder points verified directly."""

    n_radial: int = 16
    h: float = 0.1
    levels: int = 2
    n_points: int = 21
    half_widths: float = 1.0
    min_waist_voxels: float = 3.0
    confirm: int = 2


_SECTIONS = dict(spectral=SpectralSettings, junction=JunctionSettings, channel=ChannelSettings,
                 resonator=ResonatorSettings, asymptotics=AsymptoticSettings, direct=DirectSettings)


def _tuples(value):
    if isinstance(value, list):
        return tuple(_tuples(v) for v in value)
    return value


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved configuration; every tolerance has a documented default."""

    geometry: dict
    spectral: SpectralSettings = SpectralSettings()
    junction: JunctionSettings = JunctionSettings()
    channel: ChannelSettings = ChannelSettings()
    resonator: ResonatorSettings = ResonatorSettings()
    asymptotics: AsymptoticSettings = AsymptoticSettings()
    direct: DirectSettings = DirectSettings()
    mode: str = "asymptotics"
    ladder: tuple = ()
    output: str = "out"
    cache_dir: str = ".tunnelguide-cache"

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))

    def with_mode(self, mode: str | None = None, output: str | None = None) -> "PipelineConfig":
        from dataclasses import replace
        kw = {}
        if mode is not None:
            if mode not in MODES:
                raise ConfigError([f"mode: {mode!r} is not one of {list(MODES)}"])
            kw["mode"] = mode
        if output is not None:
            kw["output"] = output
        return replace(self, **kw)

    def spec(self, epsilon: float | None = None, spin: str = "plus"):
        """The :class:`~tunnelguide.geometry.WaveguideSpec` of this configuration."""
        return build_spec(self.geometry, epsilon, spin)


def validate_config(raw: dict) -> list:
    """All schema and semantic violations of a raw configuration (empty when valid)."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        where = "/".join(map(str, err.absolute_path)) or "<root>"
        errors.append(f"{where}: {err.message}")
    schema_ok = not errors
    ladder = raw.get("ladder", []) if isinstance(raw, dict) else []
    if isinstance(ladder, list) and all(isinstance(e, (int, float)) for e in ladder) \
            and any(b >= a for a, b in zip(ladder, ladder[1:])):
        errors.append("ladder: epsilon list must be strictly decreasing")
    if schema_ok and raw.get("mode") == "ladder" and len(ladder) < 2:
        errors.append("ladder: ladder mode needs at least two epsilon values")
    if not schema_ok:
        return errors
    try:
        build_spec(raw["geometry"])
    except ValueError as exc:
        errors.append(f"geometry: {exc}")
    return errors


def load_config(source) -> PipelineConfig:
    """Validate and resolve a configuration from a path, JSON text or dict.

    Raises
    ------
    ConfigError
        Listing every violation.
    """
    if isinstance(source, dict):
        raw = source
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError([f"config: cannot read {source}: {exc}"]) from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config: invalid JSON: {exc}"]) from exc
    errors = validate_config(raw)
    if errors:
        raise ConfigError(errors)
    kw = {}
    for name, cls in _SECTIONS.items():
        section = raw.get(name, {})
        kw[name] = cls(**{k: _tuples(v) for k, v in section.items()})
    for name in ("mode", "output", "cache_dir"):
        if name in raw:
            kw[name] = raw[name]
    kw["ladder"] = tuple(raw.get("ladder", ()))
    return PipelineConfig(geometry=raw["geometry"], **kw)


def build_spec(geometry: dict, epsilon: float | None = None, spin: str = "plus"):
    """WaveguideSpec from the ``geometry`` section."""
    from .geometry import CrossSectionSpec, NarrowSpec, NeckProfile, SolenoidSpec, WaveguideSpec
    cs = CrossSectionSpec(**{k: _tuples(v) for k, v in geometry["cross_section"].items()})
    narrows = []
    for n in geometry["narrows"]:
        prof = NeckProfile(**{k: _tuples(v) for k, v in n.get("profile", {"kind": "hyperboloid"}).items()})
        narrows.append(NarrowSpec(n["tip_x"], n.get("half_angle", np.pi / 3), prof))
    sol = geometry.get("solenoid")
    if sol is not None:
        sol = SolenoidSpec(**{k: _tuples(v) for k, v in sol.items()}, spin=spin)
    eps = geometry["epsilon"] if epsilon is None else epsilon
    kw = {} if "channel_length" not in geometry else dict(channel_length=geometry["channel_length"])
    return WaveguideSpec(cs, tuple(narrows), eps, sol, **kw)


def reference_config(**overrides) -> dict:
    """Raw configuration of the reference geometry (unit disk, cone angle pi/3, d = 7)."""
    raw = {
        "geometry": {
            "cross_section": {"shape": "disk", "radius": 1.0},
            "narrows": [{"tip_x": 0.0, "half_angle": float(np.pi / 3), "profile": {"kind": "hyperboloid"}},
                        {"tip_x": 7.0, "half_angle": float(np.pi / 3), "profile": {"kind": "hyperboloid"}}],
            "epsilon": 0.2,
            "solenoid": None,
            "channel_length": 8.0,
        },
        "mode": "asymptotics",
    }
    raw.update(overrides)
    return raw


# ---------------------------------------------------------------------------
# coefficient cache
# ---------------------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def coefficient_inputs(config: PipelineConfig) -> dict:
    """Everything the limit problems depend on.

    ``epsilon`` is excluded: the limit problems do not depend on it, so an
    ``eps`` sweep reuses one set of coefficients.
    """
    geom = {k: v for k, v in config.geometry.items() if k != "epsilon"}
    return dict(version=__version__, geometry=geom,
                **{name: asdict(getattr(config, name)) for name in ("spectral", "junction", "channel", "resonator")})


def stage_key(config: PipelineConfig, stage: str) -> str:
    """Content hash of a coefficient stage (tool version, geometry and all coefficient tolerances)."""
    payload = _canonical(dict(stage=stage, **coefficient_inputs(config)))
    return hashlib.sha256(payload.encode()).hexdigest()


class CoefficientCache:
    """Directory of immutable JSON records keyed by content hash."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def has(self, key: str) -> bool:
        return self.path(key).exists()

    def get(self, key: str):
        p = self.path(key)
        if not p.exists():
            return None
        return json.loads(p.read_text())["payload"]

    def put(self, key: str, stage: str, payload: dict, inputs: dict) -> None:
        """Write a record once; existing records are never modified."""
        p = self.path(key)
        if p.exists():
            return
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps(dict(key=key, stage=stage, version=__version__, inputs=inputs, payload=payload),
                                  sort_keys=True, indent=1))
        os.replace(tmp, p)

    def entries(self) -> list:
        out = []
        if not self.root.exists():
            return out
        for p in sorted(self.root.glob("*.json")):
            rec = json.loads(p.read_text())
            out.append(dict(key=rec["key"], stage=rec["stage"], version=rec["version"], bytes=p.stat().st_size))
        return out

    def remove(self, key: str | None = None) -> int:
        """Remove one record (key or unique key prefix) or all records (``key=None``)."""
        targets = sorted(self.root.glob("*.json")) if self.root.exists() else []
        if key is not None:
            targets = [p for p in targets if p.stem.startswith(key)]
            if len(targets) > 1:
                raise KeyError(f"key prefix {key!r} is ambiguous")
            if not targets:
                raise KeyError(f"no cache record {key!r}")
        for p in targets:
            p.unlink()
        return len(targets)


# ---------------------------------------------------------------------------
# coefficient stages
# ---------------------------------------------------------------------------

def _c(z) -> list:
    z = complex(z)
    return [z.real, z.imag]


def _z(pair) -> complex:
    return complex(pair[0], pair[1])


class Coefficients:
    """Lazily computed, cached limit-problem coefficients of one configuration."""

    STAGES = ("modes", "cap", "junction", "resonator", "channel", "expansion", "spin")

    def __init__(self, config: PipelineConfig, cache: CoefficientCache | None = None, threads: int = 1):
        self.config = config
        self.cache = cache
        self.threads = max(1, int(threads))
        self.records = {}
        self.hits = {}
        self._objects = {}

    # --- objects needed by several stages (not cached: cheap) ---
    def _cap(self):
        if "cap" not in self._objects:
            from .spectral import cap_spectrum
            self._objects["cap"] = cap_spectrum(self.config.spec().half_angle, steps=self.config.spectral.cap_steps)
        return self._objects["cap"]

    def _modes(self):
        if "modes" not in self._objects:
            from .spectral import cross_section_modes
            s = self.config.spectral
            self._objects["modes"] = cross_section_modes(self.config.spec().cross_section, s.h, s.count)
        return self._objects["modes"]

    def _spectrum(self):
        if "spectrum" not in self._objects:
            from .resonator import ResonatorGrid, axisymmetric_eigenpair
            r = self.config.resonator
            grid = ResonatorGrid(r.n_radial, r.cutoff, r.h_min_ratio)
            self._objects["spectrum"] = axisymmetric_eigenpair(self._cap(), self.config.spec().d, r.window, grid)
        return self._objects["spectrum"]

    # --- stage computations (JSON payloads) ---
    def _compute(self, stage: str) -> dict:
        cfg = self.config
        if stage == "modes":
            m = self._modes()
            fine = np.asarray(m.raw["h/2"])
            err = np.abs(np.asarray(m.thresholds) - fine[: len(m.thresholds)])
            return dict(thresholds=list(map(float, m.thresholds)), errors=list(map(float, err)))
        if stage == "cap":
            from .spectral import cap_spectrum
            c = self._cap()
            c2 = cap_spectrum(c.theta, steps=2 * cfg.spectral.cap_steps)
            return dict(theta=c.theta, mu1=c.mu1, mu2=c.mu2, mu1_error=abs(c.mu1 - c2.mu1),
                        mu2_error=abs(c.mu2 - c2.mu2))
        if stage == "junction":
            from .junction import JunctionGrid, junction_coefficients
            j = cfg.junction
            spec = cfg.spec()
            jc = junction_coefficients(spec.profile, self._cap(), JunctionGrid(j.h0, j.growth, j.n_cone,
                                                                                  j.r_max_factor, j.cutoff))
            return dict(alpha=jc.alpha, beta=jc.beta, alpha_error=jc.alpha_error, beta_error=jc.beta_error)
        if stage == "resonator":
            s = self._spectrum()
            return dict(k0_sq=s.k0_sq, b1=_c(s.b1), b2=_c(s.b2), gap=s.gap, residual=s.residual,
                        k0_sq_error=float(s.diagnostics.get("k0_sq_error", np.nan)),
                        b_error=float(s.diagnostics.get("b_error", np.nan)),
                        b_probe=[_c(b) for b in s.b_probe])
        if stage == "channel":
            from .channel import ChannelGrid, channel_constants
            ch = cfg.channel
            k0_sq = self.get("resonator")["k0_sq"]
            grid = ChannelGrid(ch.n_radial, ch.length, ch.cutoff, ch.n_evanescent, ch.h_min_ratio)
            rows = []
            for off in ch.table_offsets:
                cc = channel_constants(self._cap(), self._modes(), float(np.sqrt(k0_sq + off)), grid)
                rows.append(dict(k2=k0_sq + off, a=_c(cc.a), A=_c(cc.A), identity_residual=cc.identity_residual,
                                 a_error=float(cc.diagnostics.get("a_error", np.nan)),
                                 A_error=float(cc.diagnostics.get("A_error", np.nan))))
            return dict(rows=rows)
        if stage == "expansion":
            from .resonator import expansion_table
            t = expansion_table(self._spectrum(), cfg.resonator.expansion_offsets)
            return dict(k0_sq=t.k0_sq, k2=list(map(float, t.k2)), values=[[_c(v) for v in row] for row in t.values])
        if stage == "spin":
            from .geometry import voxelize
            from .resonator import spin_levels
            spec = cfg.spec()
            if spec.solenoid is None:
                return dict(levels=[], shift_plus=0.0, shift_minus=0.0, oracle=0.0, error=0.0)
            levels = []
            h = cfg.resonator.voxel_h
            for _ in range(cfg.resonator.voxel_levels):
                levels.append(spin_levels(voxelize(spec, h, "G2"), spec.solenoid).as_dict())
                h /= 2.0
            last = levels[-1]
            err = 0.0
            if len(levels) > 1:
                prev = levels[-2]
                err = abs(last["splitting"] - prev["splitting"])
            return dict(levels=levels, shift_plus=last["k0_sq_plus"] - last["k0_sq_free"],
                        shift_minus=last["k0_sq_minus"] - last["k0_sq_free"], oracle=last["oracle"],
                        splitting=last["splitting"], error=err)
        raise KeyError(stage)

    def key(self, stage: str) -> str:
        return stage_key(self.config, stage)

    def get(self, stage: str) -> dict:
        """Payload of a stage from memory, the cache, or a fresh computation."""
        if stage in self.records:
            return self.records[stage]
        key = self.key(stage)
        rec = self.cache.get(key) if self.cache is not None else None
        self.hits[stage] = rec is not None
        if rec is None:
            try:
                rec = self._compute(stage)
            except Exception as exc:  # noqa: BLE001 - re-raised with the module name
                raise StageError(_MODULE_OF[stage], exc) from exc
            rec = json.loads(json.dumps(rec))
            if self.cache is not None:
                self.cache.put(key, stage, rec, coefficient_inputs(self.config))
        self.records[stage] = rec
        return rec

    def prefetch(self, stages) -> None:
        """Compute the requested stages, independent ones concurrently when ``threads > 1``."""
        stages = list(stages)
        first = [s for s in stages if s in ("modes", "cap")]
        for s in first:
            self.get(s)
        if "resonator" in stages or "channel" in stages or "expansion" in stages:
            self.get("resonator")
        rest = [s for s in stages if s not in first and s != "resonator"]
        if self.threads > 1 and len(rest) > 1:
            self._cap(), self._modes()
            with ThreadPoolExecutor(self.threads) as pool:
                list(pool.map(self.get, rest))
        else:
            for s in rest:
                self.get(s)

    def summary(self) -> dict:
        """Coefficient values with error bars."""
        out = {}
        if "modes" in self.records:
            m = self.records["modes"]
            out["lam1_sq"] = dict(value=m["thresholds"][0], error=m["errors"][0])
            out["lam2_sq"] = dict(value=m["thresholds"][1], error=m["errors"][1])
        if "cap" in self.records:
            c = self.records["cap"]
            out["mu1"] = dict(value=c["mu1"], error=c["mu1_error"])
            out["mu2"] = dict(value=c["mu2"], error=c["mu2_error"])
        if "junction" in self.records:
            j = self.records["junction"]
            out["alpha"] = dict(value=j["alpha"], error=j["alpha_error"])
            out["beta"] = dict(value=j["beta"], error=j["beta_error"])
        if "resonator" in self.records:
            r = self.records["resonator"]
            out["k0_sq"] = dict(value=r["k0_sq"], error=r["k0_sq_error"])
            out["b1"] = dict(value=r["b1"], error=r["b_error"])
            out["b2"] = dict(value=r["b2"], error=r["b_error"])
        if "channel" in self.records:
            row = min(self.records["channel"]["rows"], key=lambda r: abs(r["k2"] - self.records["resonator"]["k0_sq"]))
            out["a_k0"] = dict(value=row["a"], error=row["a_error"], k2=row["k2"])
            out["A_k0"] = dict(value=row["A"], error=row["A_error"], k2=row["k2"])
            out["identity_residual_k0"] = row["identity_residual"]
        if "spin" in self.records and self.records["spin"]["levels"]:
            s = self.records["spin"]
            out["spin_splitting"] = dict(value=s["splitting"], error=s["error"], oracle=s["oracle"])
        return out

    # --- models ---
    def model(self, spin: str = "plus", expansion: str | None = None):
        from .asymptotics import AsymptoticModel
        from .channel import ChannelTable
        from .resonator import ExpansionTable
        cfg = self.config
        expansion = expansion or cfg.asymptotics.expansion
        m, c, j, r = (self.get(s) for s in ("modes", "cap", "junction", "resonator"))
        rows = self.get("channel")["rows"]
        table = ChannelTable(np.array([x["k2"] for x in rows]), np.array([_z(x["a"]) for x in rows]),
                             np.array([_z(x["A"]) for x in rows]))
        shift = 0.0
        spec = cfg.spec()
        if spec.solenoid is not None:
            s = self.get("spin")
            shift = s["shift_plus"] if spin == "plus" else s["shift_minus"]
        exp_table = None
        if expansion == "full":
            e = self.get("expansion")
            vals = np.array([[_z(v) for v in row] for row in e["values"]])
            # the expansion is a property of the field-free resonator; it follows the shifted eigenvalue
            exp_table = ExpansionTable(np.array(e["k2"]) + shift, vals, e["k0_sq"] + shift)
        return AsymptoticModel(r["k0_sq"] + shift, _z(r["b1"]), _z(r["b2"]), c["mu1"], c["mu2"], j["alpha"],
                               j["beta"], spec.d, m["thresholds"][0], table, exp_table, spin,
                               cfg.asymptotics.delta_small, cfg.asymptotics.regime_threshold)

    def channels(self) -> list:
        """Spin channels to evaluate: both with a solenoid present, otherwise one field-free channel."""
        return ["plus", "minus"] if self.config.spec().solenoid is not None else ["free"]


_MODULE_OF = dict(modes="spectral", cap="spectral", junction="junction", resonator="resonator", channel="channel",
                  expansion="resonator", spin="resonator")


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: Path, rows: list) -> None:
    """RFC-4180 CSV with a header from the first row and round-trip float formatting."""
    if not rows:
        path.write_text("")
        return
    cols = list(rows[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in cols])
    path.write_text(buf.getvalue(), newline="")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


# ---------------------------------------------------------------------------
# stages on top of the coefficients
# ---------------------------------------------------------------------------

FORMULAS = {
    "spectral": "cross-section thresholds lambda_n^2 (Shortley-Weller, Richardson); cap exponents mu1 < mu2 "
                "from mu(mu+1) = Laplace-Beltrami eigenvalue (Legendre shooting)",
    "junction": "alpha, beta: far-field amplitudes of the harmonic model solutions "
                "w ~ r^mu1 Phi1 + alpha r^(-1-mu1) Phi1 (same side), beta r^(-1-mu1) Phi1 (other side)",
    "resonator": "k0^2 and tip coefficients b_j: v0 ~ b_j r_j^mu1 Phi1 at the tips; spin shifts "
                 "k0,+-^2 - k0^2 ~ +-int H |v0|^2 dV",
    "channel": "a(k), A(k) of the outgoing special solution; |A|^2 = Im a",
    "asymptotics": "k_r^2 = k0^2 - alpha (|b1|^2 + |b2|^2) eps^(2mu1+1); "
                   "width = (q + 1/q) eps^(4mu1+2) / P with P = 1 / (2 |b1||b2| beta^2 |A|^2); "
                   "T = 1 / ((q + 1/q)^2/4 + P^2 (k^2 - k_r^2)^2 / eps^(8mu1+4)), q = |b1|/|b2|, "
                   "T_max = 4 / (q + 1/q)^2",
    "direct": "full-waveguide Helmholtz/Pauli solve with mode-space radiation closures; Lorentzian fit of T(k)",
}


def _regime_lines(config: PipelineConfig, mu1: float | None) -> list:
    lines = []
    eps_list = sorted(set([config.geometry["epsilon"], *config.ladder]), reverse=True)
    thr = config.asymptotics.regime_threshold
    for eps in eps_list:
        if mu1 is None:
            bound = eps ** 3
            if bound > thr:
                lines.append(f"WARNING regime: eps = {eps}: eps^(2mu1+1) may exceed {thr} "
                             f"(bound eps^3 = {bound:.3g}; exponent not computed yet)")
        else:
            E = eps ** (2 * mu1 + 1)
            if E > thr:
                lines.append(f"WARNING regime: eps = {eps}: eps^(2mu1+1) = {E:.3g} exceeds {thr}")
    return lines


def _stages_for(config: PipelineConfig) -> list:
    base = ["modes", "cap"]
    if config.mode == "direct":
        return base + ["junction", "resonator", "channel"] + (["spin"] if config.spec().solenoid is not None else [])
    coeff = base + ["junction", "resonator", "channel"]
    if config.asymptotics.expansion == "full" or config.mode == "ladder":
        coeff.append("expansion")
    if config.spec().solenoid is not None:
        coeff.append("spin")
    return coeff


def explain(config: PipelineConfig) -> str:
    """Resolved parameters, stage plan with formulas, regime warnings and cache plan (no solves)."""
    cache = CoefficientCache(config.cache_dir)
    out = ["resolved configuration:", json.dumps(config.to_dict(), indent=2, sort_keys=True), "", "plan:"]
    stages = _stages_for(config)
    mu1 = None
    key = stage_key(config, "cap")
    if cache.has(key):
        mu1 = cache.get(key)["mu1"]
    for s in stages:
        k = stage_key(config, s)
        state = "hit" if cache.has(k) else "miss"
        out.append(f"  {s:10s} cache {state} {k[:12]}  [{_MODULE_OF[s]}] {FORMULAS[_MODULE_OF[s]]}")
    if config.mode in ("asymptotics", "full", "ladder"):
        out.append(f"  asymptotics ({config.asymptotics.expansion})  {FORMULAS['asymptotics']}")
    if config.mode in ("direct", "full") or (config.mode == "ladder" and config.direct.confirm > 0):
        out.append(f"  direct      {FORMULAS['direct']}")
    out.append("")
    out.extend(_regime_lines(config, mu1) or ["regime: all eps inside the asymptotic regime"])
    return "\n".join(out) + "\n"


def _asymptotic_stage(coef: Coefficients, eps: float, out: Path, summary: dict, warn: list):
    from .asymptotics import spin_characteristics, transmission_profile
    cfg = coef.config
    a = cfg.asymptotics
    rows = []
    per = {}
    models = {}
    for ch in coef.channels():
        model = coef.model("plus" if ch == "free" else ch)
        models[ch] = model
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            prof = transmission_profile(model, eps, mode=a.expansion, n=a.n_points, half_widths=a.half_widths)
        warn.extend(str(w.message) for w in caught)
        for r in prof.as_rows():
            rows.append(dict(channel=ch, **r))
        pk = prof.peak
        per[ch] = dict(k_r_sq=pk.k_r_sq, shift=pk.shift, width=pk.width, T_max=pk.T_max, q=pk.q, P=pk.P,
                       k0_sq=model.k0_sq, pole_residual=prof.pole.residual)
    write_csv(out / "transmission.csv", rows)
    summary["asymptotics"] = dict(eps=eps, scale=eps ** (2 * models[coef.channels()[0]].mu1 + 1),
                                  mode=a.expansion, channels=per)
    if len(models) == 2:
        from .asymptotics import peak_characteristics
        pp = peak_characteristics(models["plus"], eps, a.expansion)
        pm = peak_characteristics(models["minus"], eps, a.expansion)
        grid = np.unique(np.concatenate([pk.k_r_sq + pk.width * np.linspace(-a.half_widths, a.half_widths, a.n_points)
                                         for pk in (pp, pm)]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sc = spin_characteristics(models["plus"], models["minus"], eps, grid, a.expansion)
        write_csv(out / "polarization.csv", sc.as_rows())
        summary["asymptotics"]["spin"] = dict(separation=sc.separation, resolvable=sc.resolvable,
                                              max_polarization=float(np.max(np.abs(sc.polarization))),
                                              oracle_splitting=coef.get("spin")["oracle"])
    return models


def _ladder_stage(coef: Coefficients, out: Path, summary: dict, warn: list):
    from .asymptotics import full_vs_leading, loglog_slope, peak_characteristics
    cfg = coef.config
    eps_list = list(cfg.ladder)
    rows = []
    reg = {}
    for ch in coef.channels():
        model = coef.model("plus" if ch == "free" else ch, expansion="full")
        shifts, widths, fvl = [], [], []
        for eps in eps_list:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                pk = peak_characteristics(model, eps, cfg.asymptotics.expansion)
                f = full_vs_leading(model, eps)
            warn.extend(str(w.message) for w in caught)
            shifts.append(model.k0_sq - pk.k_r_sq)
            widths.append(pk.width)
            fvl.append(f)
            rows.append(dict(channel=ch, eps=eps, scale=model.scale(eps), k_r_sq=pk.k_r_sq, shift=shifts[-1],
                             width=pk.width, T_max=pk.T_max, full_vs_leading=f))
        p = 2 * model.mu1 + 1
        reg[ch] = dict(shift_slope=loglog_slope(eps_list, shifts), width_slope=loglog_slope(eps_list, widths),
                       full_vs_leading_slope=loglog_slope(eps_list, fvl), expected_shift=p, expected_width=2 * p)
    write_csv(out / "ladder.csv", rows)
    summary["ladder"] = dict(eps=eps_list, regression=reg)
    n_conf = min(cfg.direct.confirm, len(eps_list))
    if n_conf:
        summary["ladder"]["direct"] = _direct_confirm(coef, eps_list[:n_conf], out)


def _direct_grid(cfg: PipelineConfig):
    from .direct import DirectGrid
    d = cfg.direct
    return DirectGrid(n_radial=d.n_radial, h=d.h, min_waist_voxels=d.min_waist_voxels)


def _direct_confirm(coef: Coefficients, eps_list, out: Path) -> dict:
    from .asymptotics import loglog_slope, peak_characteristics
    from .direct import direct_pole
    cfg = coef.config
    model = coef.model("plus", expansion="leading")
    rows = []
    for eps in eps_list:
        spec = cfg.spec(eps)
        if spec.field_on:
            raise ValueError("direct ladder confirmation uses the field-free meridian solver")
        dp = direct_pole(spec, _direct_grid(cfg), model.k0_sq, levels=max(2, cfg.direct.levels))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pk = peak_characteristics(model, eps)
        rows.append(dict(eps=eps, k_r_sq=dp.k_r_sq, k_r_sq_error=dp.k_r_sq_error, width=dp.width,
                         width_error=dp.width_error, shift=model.k0_sq - dp.k_r_sq,
                         asymptotic_shift=model.k0_sq - pk.k_r_sq, asymptotic_width=pk.width,
                         shift_ratio=(model.k0_sq - dp.k_r_sq) / (model.k0_sq - pk.k_r_sq),
                         width_ratio=dp.width / pk.width))
    write_csv(out / "direct_ladder.csv", rows)
    res = dict(rows=rows)
    if len(rows) >= 2:
        e = [r["eps"] for r in rows]
        res["shift_slope"] = loglog_slope(e, [r["shift"] for r in rows])
        res["width_slope"] = loglog_slope(e, [r["width"] for r in rows])
    return res


def _direct_stage(coef: Coefficients, eps: float, out: Path, summary: dict):
    from .asymptotics import peak_characteristics
    from .direct import DirectGrid, direct_pole, make_system, resonance_scan
    cfg = coef.config
    d = cfg.direct
    rows = []
    per = {}
    for ch in coef.channels():
        spin = None if ch == "free" else ch
        model = coef.model("plus" if ch == "free" else ch, expansion="leading")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pk = peak_characteristics(model, eps)
        spec = cfg.spec(eps, spin or "plus")
        grid = _direct_grid(cfg)
        if spec.field_on:
            # voxel solves: the staircase shifts the level, so the pole is searched from the
            # voxel resonator level of this grid
            from .geometry import voxelize
            from .resonator import spin_levels
            guess = spin_levels(voxelize(spec, d.h, "G2"), spec.solenoid)
            k2g = guess.k0_sq_plus if ch == "plus" else guess.k0_sq_minus
            system = make_system(spec, grid, spin, "voxel")
            pole = system.pole(complex(k2g))
            window = (pole.real - 1e-6, pole.real + 1e-6)
            info = dict(solver="voxel", h=d.h)
        else:
            dp = direct_pole(spec, grid, model.k0_sq, levels=d.levels)
            finest = grid
            for _ in range(d.levels - 1):
                finest = finest.refined()
            system = make_system(spec, finest, spin, "meridian")
            pole = dp.levels[-1]
            window = (pole.real - 1e-6, pole.real + 1e-6)
            info = dict(solver="meridian", n_radial=finest.n_radial, pole_extrapolated=dict(
                k_r_sq=dp.k_r_sq, width=dp.width, k_r_sq_error=dp.k_r_sq_error, width_error=dp.width_error))
        scan = resonance_scan(spec, grid, window, d.n_points, d.half_widths, asymptotic=pk, system=system)
        for r in scan.as_rows():
            rows.append(dict(channel=ch, **r))
        per[ch] = dict(pole=[scan.pole.real, scan.pole.imag], center=scan.fit.center, width=scan.fit.width,
                       height=scan.fit.height, residual=scan.fit.residual, deltas=scan.deltas,
                       max_defect=float(np.max(scan.defects)), **info)
    write_csv(out / "direct_scan.csv", rows)
    summary["direct"] = dict(eps=eps, channels=per)
    if len(per) == 2:
        summary["direct"]["separation"] = per["plus"]["center"] - per["minus"]["center"]


def _report(summary: dict) -> str:
    lines = [f"tunnelguide {summary['version']}  mode={summary['mode']}  status={summary['status']}"]
    if summary.get("error"):
        lines.append(f"ERROR {summary['error']}")
    for name, v in summary.get("coefficients", {}).items():
        if isinstance(v, dict):
            lines.append(f"  {name:18s} {v.get('value')}  +- {v.get('error')}")
        else:
            lines.append(f"  {name:18s} {v}")
    a = summary.get("asymptotics")
    if a:
        lines.append(f"asymptotics at eps = {a['eps']} (eps^(2mu1+1) = {a['scale']:.4g}, mode {a['mode']})")
        for ch, v in a["channels"].items():
            lines.append(f"  {ch:6s} k_r^2 = {v['k_r_sq']!r}  width = {v['width']:.6g}  T_max = {v['T_max']:.6g}")
        if "spin" in a:
            lines.append(f"  peak separation = {a['spin']['separation']:.6g} "
                         f"(first-order oracle {a['spin']['oracle_splitting']:.6g})")
    lad = summary.get("ladder")
    if lad:
        for ch, r in lad["regression"].items():
            lines.append(f"ladder {ch}: shift slope {r['shift_slope']:.4f} (expected {r['expected_shift']:.4f}), "
                         f"width slope {r['width_slope']:.4f} (expected {r['expected_width']:.4f})")
        if "direct" in lad:
            for r in lad["direct"]["rows"]:
                lines.append(f"  direct eps={r['eps']}: shift {r['shift']:.6g} vs {r['asymptotic_shift']:.6g}, "
                             f"width {r['width']:.6g} vs {r['asymptotic_width']:.6g}")
    d = summary.get("direct")
    if d:
        for ch, v in d["channels"].items():
            lines.append(f"direct {ch}: center {v['center']!r} width {v['width']:.6g} height {v['height']:.6f} "
                         f"fit residual {v['residual']:.3g}")
    for w in summary.get("warnings", []):
        lines.append(f"WARNING {w}")
    return "\n".join(lines) + "\n"


def run(config: PipelineConfig, threads: int = 1) -> dict:
    """Execute the configured mode and write the artifacts into ``config.output``.

    Returns the summary.  On a numerical failure the summary (status
    ``"partial"``, the failing module and completed results) is still written
    before the :class:`StageError` propagates.
    """
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    cache = CoefficientCache(config.cache_dir)
    coef = Coefficients(config, cache, threads)
    summary = dict(version=__version__, mode=config.mode, status="ok", warnings=[])
    eps = float(config.geometry["epsilon"])
    try:
        coef.prefetch(_stages_for(config))
        summary["coefficients"] = coef.summary()
        # cache provenance lives in its own file so summary.json is identical on reruns
        (out / "cache.json").write_text(json.dumps(
            {s: dict(status="hit" if h else "miss", key=coef.key(s)) for s, h in sorted(coef.hits.items())},
            indent=2, sort_keys=True) + "\n")
        if config.mode in ("asymptotics", "full"):
            _guard("asymptotics", _asymptotic_stage, coef, eps, out, summary, summary["warnings"])
        if config.mode == "ladder":
            _guard("asymptotics", _ladder_stage, coef, out, summary, summary["warnings"])
        if config.mode in ("direct", "full"):
            _guard("direct", _direct_stage, coef, eps, out, summary)
    except StageError as exc:
        summary["status"] = "partial"
        summary["failed_module"] = exc.stage
        summary["error"] = str(exc)
        summary.setdefault("coefficients", coef.summary())
        _emit(out, summary)
        raise
    _emit(out, summary)
    return summary


def _guard(stage, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the module name
        raise StageError(stage, exc) from exc


def _emit(out: Path, summary: dict) -> None:
    summary = _jsonable(summary)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(_report(summary))
