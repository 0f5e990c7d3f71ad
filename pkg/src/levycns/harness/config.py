"""Experiment configuration: YAML loading, schema validation and object builders."""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from levycns.dynamics import PotentialField, potential_preset, taylor_green
from levycns.integrator import Drivers, StepScheme
from levycns.noise import JumpDriverConfig, RadiusLaw, WienerDriverConfig
from levycns.spectral import TorusGrid, _inv, forward_transform

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key (dotted)."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def load_schema(name: str) -> dict:
    return json.loads(resources.files("levycns.schemas").joinpath(name).read_text())


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _read_yaml(path: Path, seen: tuple = ()) -> dict:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"circular 'extends' chain through {path}", "extends")
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level of the config must be a mapping")
    if "extends" in raw:
        parent = _read_yaml((path.parent / raw["extends"]), seen + (path,))
        raw = _deep_merge(parent, {k: v for k, v in raw.items() if k != "extends"})
    return raw


def _error_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required" and isinstance(err.instance, dict):
        missing = [r for r in err.validator_value if r not in err.instance]
        if missing:
            parts.append(missing[0])
    return ".".join(parts) or "<root>"


def validate(raw: dict) -> None:
    """Raise ConfigError naming the first offending key (deepest path first)."""
    validator = jsonschema.Draft202012Validator(load_schema("config.schema.json"))
    errors = sorted(validator.iter_errors(raw), key=lambda e: (-len(e.absolute_path), _error_path(e)))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _error_path(err))


def parse_length(value) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    m = re.fullmatch(r"([0-9.]*)\s*\*?\s*pi", value.strip())
    factor = float(m.group(1)) if m and m.group(1) else 1.0
    return factor * math.pi


def auto_N(m: int, rule: float | None = 2.0 / 3.0) -> int:
    """Smallest power-of-two grid whose dealiasing cutoff admits m."""
    N = 4
    while True:
        try:
            TorusGrid(N=N, m=m, dealias_rule=rule)
            return N
        except ValueError:
            N *= 2


@dataclass
class ExperimentConfig:
    raw: dict
    source: Path | None = None

    @classmethod
    def from_dict(cls, raw: dict, source: Path | None = None) -> "ExperimentConfig":
        validate(raw)
        cfg = cls(raw, source)
        cfg._check_semantics()
        return cfg

    # -- sections ------------------------------------------------------------
    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def kind(self) -> str:
        return self.raw["kind"]

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def experiment(self) -> dict:
        return self.raw.get("experiment", {})

    @property
    def tolerances(self) -> dict:
        return self.raw.get("tolerances", {})

    @property
    def calibration(self) -> dict:
        return self.raw.get("calibration", {})

    @property
    def output(self) -> dict:
        return self.raw.get("output", {})

    @property
    def gates(self) -> list[str] | None:
        return self.raw.get("gates")

    @property
    def noise_enabled(self) -> bool:
        return bool(self.raw.get("noise", {}).get("enabled", True)) and bool(self.raw.get("noise"))

    def tol(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))

    def _check_semantics(self):
        exp = self.experiment
        ml = exp.get("m_list")
        if ml is not None and any(b <= a for a, b in zip(ml[:-1], ml[1:])):
            raise ConfigError("m_list must be strictly increasing", "experiment.m_list")
        dl = exp.get("D_list")
        if dl is not None and any(b <= a for a, b in zip(dl[:-1], dl[1:])):
            raise ConfigError("D_list must be strictly increasing", "experiment.D_list")
        if self.kind == "uniqueness" and "delta" not in exp:
            raise ConfigError("uniqueness runs need a positive delta", "experiment.delta")
        if self.kind == "escape" and "D_list" not in exp:
            raise ConfigError("escape runs need D_list", "experiment.D_list")
        if self.kind == "convergence" and "m_list" not in exp:
            raise ConfigError("convergence runs need m_list", "experiment.m_list")
        if self.kind == "exact" and "problem" not in exp:
            raise ConfigError("exact runs need a problem name", "experiment.problem")
        if "m" not in self.raw["grid"] and not ml:
            raise ConfigError("'m' is a required property", "grid.m")
        try:
            if "m" in self.raw["grid"]:
                self.grid()
        except ValueError as exc:
            raise ConfigError(str(exc), "grid") from exc
        for key in ("n", "c"):
            spec = self.raw.get("initial", {}).get(key)
            if spec is not None and spec["preset"] == "file" and "path" not in spec:
                raise ConfigError("file preset needs a path", f"initial.{key}.path")

    # -- builders ------------------------------------------------------------
    def grid(self, m: int | None = None) -> TorusGrid:
        """Configured grid, or for an explicit cutoff ``m`` the smallest admissible power-of-two grid."""
        g = self.raw["grid"]
        rule = g.get("dealias_rule", 2.0 / 3.0)
        L = parse_length(g.get("L", "2pi"))
        if m is None:
            return TorusGrid(L=L, N=int(g["N"]), m=int(g["m"]), dealias_rule=rule)
        return TorusGrid(L=L, N=auto_N(int(m), rule), m=int(m), dealias_rule=rule)

    def scheme(self, **override) -> StepScheme:
        s = dict(self.raw["scheme"])
        s.update(override)
        D = s.get("D", "inf")
        return StepScheme(
            dt=float(s["dt"]),
            T=float(s["T"]),
            D=math.inf if D == "inf" else float(D),
            diffusion_mode=s.get("diffusion_mode", "integrating-factor"),
            diffusion=bool(s.get("diffusion", True)),
        )

    def resolve_path(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.source is not None:
            path = self.source.parent / path
        return path

    def initial_fields(self, grid: TorusGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        init = self.raw.get("initial", {})
        n = scalar_preset(grid, init.get("n", {"preset": "zero"}), self.resolve_path)
        c = scalar_preset(grid, init.get("c", {"preset": "zero"}), self.resolve_path)
        u = velocity_preset(grid, init.get("u", {"preset": "zero"}), self.resolve_path)
        return n, c, u

    @property
    def enforce_positivity(self) -> bool:
        return bool(self.raw.get("initial", {}).get("enforce_positivity", True))

    def potential(self, grid: TorusGrid) -> PotentialField:
        spec = self.raw.get("phi", {"preset": "sin-y"})
        name = spec.get("preset", "sin-y")
        if name == "file":
            vals = load_array(self.resolve_path(spec["path"]), (grid.N, grid.N))
            return PotentialField(forward_transform(vals, grid))
        return potential_preset(grid, name, float(spec.get("amplitude", 1.0)))

    def wiener(self, grid: TorusGrid) -> WienerDriverConfig | None:
        spec = self.raw.get("noise", {}).get("wiener")
        if not self.noise_enabled or spec is None:
            return None
        return WienerDriverConfig.parametric(
            grid,
            int(spec["modes"]),
            float(spec["amplitude"]),
            b_scale=float(spec.get("b_scale", 0.0)),
            c_scale=float(spec.get("c_scale", 1.0)),
        )

    def jump(self) -> JumpDriverConfig | None:
        spec = self.raw.get("noise", {}).get("jump")
        if not self.noise_enabled or spec is None:
            return None
        law = spec.get("radius_law", {})
        return JumpDriverConfig(float(spec["rate"]), RadiusLaw(float(law.get("a", 2.0)), float(law.get("b", 2.0))))

    def drivers(self, grid: TorusGrid) -> Drivers:
        return Drivers(self.potential(grid), self.wiener(grid), self.jump())


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    raw = _read_yaml(path)
    return ExperimentConfig.from_dict(raw, path.resolve())


def load_array(path: Path, shape: tuple) -> np.ndarray:
    try:
        arr = np.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot load field file {path}: {exc}") from exc
    if arr.shape != shape:
        raise ConfigError(f"field file {path} has shape {arr.shape}, expected {shape}")
    return np.asarray(arr, dtype=float)


# -- field presets ------------------------------------------------------------------


def _spectral_table(kmax: int, seed: int, decay: float, components: int = 1) -> np.ndarray:
    """Hermitian random coefficients a(k) (1 + |k|^2)^(-decay/2) for |k|_inf <= kmax, k != 0.

    Indexed [comp, kx + kmax, ky + kmax]; independent of any grid.
    """
    rng = np.random.default_rng(seed)
    size = 2 * kmax + 1
    T = rng.standard_normal((components, size, size)) + 1j * rng.standard_normal((components, size, size))
    T = 0.5 * (T + np.conj(T[:, ::-1, ::-1]))
    k = np.arange(-kmax, kmax + 1)
    w = (1.0 + k[:, None] ** 2 + k[None, :] ** 2) ** (-decay / 2.0)
    T = T * w
    T[:, kmax, kmax] = 0.0
    return T


def _table_to_grid(grid: TorusGrid, table: np.ndarray) -> np.ndarray:
    kmax = (table.shape[-1] - 1) // 2
    K = min(kmax, grid.m)
    out = np.zeros(table.shape[:-2] + (grid.N, grid.N), dtype=complex)
    idx = np.r_[np.arange(0, K + 1), np.arange(grid.N - K, grid.N)]
    ks = np.r_[np.arange(0, K + 1), np.arange(-K, 0)]
    out[..., idx[:, None], idx[None, :]] = table[..., (ks + kmax)[:, None], (ks + kmax)[None, :]]
    return out


def scalar_preset(grid: TorusGrid, spec: dict, resolve=Path, shift: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Evaluate a named scalar preset on the grid, optionally at translated points x - shift."""
    x, y = grid.coords
    if shift != (0.0, 0.0):
        if spec["preset"] in ("power-law", "file"):
            raise ConfigError(f"preset {spec['preset']!r} cannot be evaluated at shifted points")
        x, y = x - shift[0], y - shift[1]
    k = grid.kappa
    name = spec["preset"]
    base = float(spec.get("base", 0.0))
    A = float(spec.get("amplitude", 0.0))
    mode = spec.get("mode", 1)
    px, py = (mode, mode) if isinstance(mode, int) else mode
    if name == "zero":
        return np.zeros_like(x)
    if name == "constant":
        return np.full_like(x, float(spec.get("value", base)))
    if name == "cosine":
        return base + A * np.cos(k * (px * x + py * y))
    if name == "cosine-product":
        return base + A * np.cos(k * px * x) * np.cos(k * py * y)
    if name == "sine-product":
        return base + A * np.sin(k * px * x) * np.sin(k * py * y)
    if name == "gaussian-bump":
        cx, cy = spec.get("center", [grid.L / 2, grid.L / 2])
        w = float(spec.get("width", 0.5))
        return base + A * np.exp(-(2.0 - np.cos(k * (x - cx)) - np.cos(k * (y - cy))) / (k * w) ** 2)
    if name == "power-law":
        table = _spectral_table(int(spec.get("kmax", 64)), int(spec.get("seed", 0)), float(spec.get("decay", 3.0)))
        table = table / np.abs(table).sum()  # sup of the perturbation <= 1
        return base + A * _inv(_table_to_grid(grid, table)[0], grid.N)
    if name == "file":
        return load_array(resolve(spec["path"]), (grid.N, grid.N))
    raise ConfigError(f"unknown scalar preset {name!r}")


def velocity_preset(grid: TorusGrid, spec: dict, resolve=Path) -> np.ndarray:
    x, y = grid.coords
    name = spec["preset"]
    A = float(spec.get("amplitude", 1.0))
    if name == "zero":
        return np.zeros((2,) + x.shape)
    if name == "constant":
        U, V = spec.get("value", [0.0, 0.0])
        return np.stack([np.full_like(x, U), np.full_like(x, V)])
    if name == "taylor-green":
        return taylor_green(grid, A, int(spec.get("mode", 1)))
    if name == "shear":
        return np.stack([A * np.sin(grid.kappa * int(spec.get("mode", 1)) * y), np.zeros_like(x)])
    if name == "power-law":
        kmax = int(spec.get("kmax", 64))
        table = _spectral_table(kmax, int(spec.get("seed", 0)), float(spec.get("decay", 3.0)), components=2)
        kk = np.arange(-kmax, kmax + 1).astype(float)
        kx, ky = np.meshgrid(kk, kk, indexing="ij")
        k2 = kx**2 + ky**2
        k2[kmax, kmax] = 1.0
        w = (kx * table[0] + ky * table[1]) / k2
        table = np.stack([table[0] - kx * w, table[1] - ky * w])
        rms = math.sqrt(float(np.sum(np.abs(table) ** 2)))
        coeffs = _table_to_grid(grid, table / rms)
        return A * _inv(coeffs, grid.N)
    if name == "file":
        return load_array(resolve(spec["path"]), (2, grid.N, grid.N))
    raise ConfigError(f"unknown velocity preset {name!r}")
