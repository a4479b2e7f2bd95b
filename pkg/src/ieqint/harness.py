"""Batch experiment harness: flat key = value configs, CSV emission, and the
run / reference / converge / bench / scan experiment drivers used by the CLI.

CSV numbers are written with full round-trip precision (%.17g), so identical
configurations produce byte-identical files; timing columns in bench output
are the one deliberate exception.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, NonCommensurateSteps
from .hamiltonian import HamiltonianSystem
from .models import fpu, plate, string
from .schemes import GENERIC_SCHEMES, SchemeConfig, simulate, sv_init_kicked

MODEL_SCHEMES = {
    "fpu": set(GENERIC_SCHEMES),
    "string": set(GENERIC_SCHEMES) | {"string_implicit"},
    "plate": set(GENERIC_SCHEMES) | {"plate_linimp"},
}


def _fmt(x):
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_FLOAT_KEYS = {
    "dt", "duration", "alpha", "eps", "divergence_threshold", "newton_tol",
    "fine_dt", "dt_min", "dt_max",
    "fpu_omega",
    "string_rho", "string_area", "string_length", "string_young", "string_tension",
    "plate_rho", "plate_thickness", "plate_young", "plate_poisson", "plate_side",
}
_INT_KEYS = {
    "steps", "quad_nodes", "probe", "seed", "newton_max_iter", "repetitions",
    "dt_count", "fpu_half_count", "string_segments", "plate_grid_m",
}
_BOOL_KEYS = {"allow_unstable"}
_LIST_KEYS = {"dt_list", "dt_sequence"}
_STR_KEYS = {"model", "scheme", "output", "reference", "schemes", "scan_spacing"}

_ALL_KEYS = _FLOAT_KEYS | _INT_KEYS | _BOOL_KEYS | _LIST_KEYS | _STR_KEYS


@dataclass
class ExperimentConfig:
    model: Optional[str] = None
    scheme: Optional[str] = None
    dt: Optional[float] = None
    dt_sequence: Optional[tuple] = None
    duration: Optional[float] = None
    steps: Optional[int] = None
    alpha: float = 0.0
    eps: Optional[float] = None
    quad_nodes: int = 4
    probe: Optional[int] = None
    seed: int = 0
    divergence_threshold: float = 10.0
    allow_unstable: bool = False
    newton_tol: float = 1e-13
    newton_max_iter: int = 20
    output: Optional[str] = None
    fine_dt: Optional[float] = None
    dt_list: Optional[tuple] = None
    reference: Optional[str] = None
    schemes: Optional[str] = None
    repetitions: int = 3
    dt_min: Optional[float] = None
    dt_max: Optional[float] = None
    dt_count: int = 11
    scan_spacing: str = "linear"
    fpu_half_count: int = 3
    fpu_omega: float = 50.0
    string_rho: float = 7850.0
    string_area: float = 8.87e-7
    string_length: float = 1.259
    string_young: float = 2.02e11
    string_tension: float = 759.0
    string_segments: Optional[int] = None
    plate_rho: float = 7850.0
    plate_thickness: float = 2e-3
    plate_young: float = 2e11
    plate_poisson: float = 0.3
    plate_side: float = 0.5
    plate_grid_m: Optional[int] = None

    @classmethod
    def from_mapping(cls, raw):
        cfg = cls()
        for key, value in raw.items():
            if key not in _ALL_KEYS:
                raise ConfigError(f"unknown configuration key {key!r}")
            setattr(cfg, key, _coerce(key, value))
        return cfg

    def effective_eps(self):
        if self.eps is not None:
            return self.eps
        return string.DEFAULT_SHIFT if self.model == "string" else 0.0

    def scheme_config(self, scheme=None):
        return SchemeConfig(
            scheme=scheme or self.scheme,
            dt=self.dt if self.dt is not None else 0.0,
            dt_sequence=self.dt_sequence,
            eps=self.effective_eps(),
            quad_nodes=self.quad_nodes,
            divergence_threshold=self.divergence_threshold,
            allow_unstable=self.allow_unstable,
            newton_tol=self.newton_tol,
            newton_max_iter=self.newton_max_iter,
        )


def _coerce(key, value):
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if key in _FLOAT_KEYS:
            return float(text)
        if key in _INT_KEYS:
            return int(text)
        if key in _BOOL_KEYS:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if key in _LIST_KEYS:
            return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc
    return text


def parse_config_file(path):
    """Flat key = value text, one pair per line, '#' starts a comment."""
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = body.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def load_config(path=None, overrides=()):
    raw = parse_config_file(path) if path else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    return ExperimentConfig.from_mapping(raw)


# ---------------------------------------------------------------------------
# experiment assembly
# ---------------------------------------------------------------------------


def build_system(cfg) -> tuple[HamiltonianSystem, np.ndarray, np.ndarray]:
    """Model system plus initial state for one experiment configuration."""
    if cfg.model is None:
        raise ConfigError("model is required (fpu, string, plate)")
    if cfg.model == "fpu":
        params = fpu.FpuParams(half_count=cfg.fpu_half_count, omega=cfg.fpu_omega)
        system = fpu.build(params)
        q0, p0 = fpu.initial(params, cfg.alpha)
    elif cfg.model == "string":
        segments = cfg.string_segments
        if segments is None:
            if cfg.dt is None:
                raise ConfigError("string grid needs string_segments or dt")
            probe_params = string.StringParams(
                rho=cfg.string_rho, area=cfg.string_area, length=cfg.string_length,
                young=cfg.string_young, tension=cfg.string_tension, segments=2,
            )
            segments = string.segments_from_dt(probe_params, cfg.dt)
        params = string.StringParams(
            rho=cfg.string_rho, area=cfg.string_area, length=cfg.string_length,
            young=cfg.string_young, tension=cfg.string_tension, segments=segments,
        )
        system = string.build(params)
        q0, p0 = string.initial(params, cfg.alpha)
    elif cfg.model == "plate":
        grid_m = cfg.plate_grid_m
        if grid_m is None:
            if cfg.dt is None:
                raise ConfigError("plate grid needs plate_grid_m or dt")
            probe_params = plate.PlateParams(
                rho=cfg.plate_rho, thickness=cfg.plate_thickness, young=cfg.plate_young,
                poisson=cfg.plate_poisson, side=cfg.plate_side, grid_m=3,
            )
            grid_m = plate.grid_from_dt(probe_params, cfg.dt)
        params = plate.PlateParams(
            rho=cfg.plate_rho, thickness=cfg.plate_thickness, young=cfg.plate_young,
            poisson=cfg.plate_poisson, side=cfg.plate_side, grid_m=grid_m,
        )
        system = plate.build(params)
        q0, p0 = plate.initial(params, cfg.alpha)
    else:
        raise ConfigError(f"unknown model {cfg.model!r}")
    return system, q0, p0


def _check_scheme(cfg, scheme=None):
    scheme = scheme or cfg.scheme
    if scheme is None:
        raise ConfigError("scheme is required")
    allowed = MODEL_SCHEMES.get(cfg.model, set(GENERIC_SCHEMES))
    if scheme not in allowed:
        raise ConfigError(f"scheme {scheme!r} is not valid for model {cfg.model!r}")
    return scheme


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


@dataclass
class RunSummary:
    steps: int
    rows: int
    max_h_rel: float
    wall_time: float
    grad_evals_per_step: float
    diverged: bool
    diverged_step: Optional[int]

    def lines(self):
        yield f"steps = {self.steps}"
        yield f"rows = {self.rows}"
        yield f"max_abs_h_rel = {self.max_h_rel:.6e}"
        yield f"wall_time_s = {self.wall_time:.6f}"
        yield f"grad_evals_per_step = {self.grad_evals_per_step:g}"
        yield f"diverged = {str(self.diverged).lower()}"
        if self.diverged_step is not None:
            yield f"diverged_step = {self.diverged_step}"


def run_experiment(cfg, store_states=False):
    """Step the configured scheme and return (record, summary)."""
    _check_scheme(cfg)
    if cfg.steps is None and cfg.duration is None:
        raise ConfigError("either steps or duration is required")
    system, q0, p0 = build_system(cfg)
    record = simulate(
        system,
        cfg.scheme_config(),
        q0,
        p0,
        probe=cfg.probe,
        steps=cfg.steps,
        duration=cfg.duration,
        store_states=store_states,
    )
    summary = RunSummary(
        steps=record.rows - 1,
        rows=record.rows,
        max_h_rel=record.max_h_rel(),
        wall_time=record.wall_time,
        grad_evals_per_step=record.grad_evals_per_step(),
        diverged=record.diverged,
        diverged_step=record.diverged_step,
    )
    return record, summary


RUN_HEADER = "step,t,probe_q,probe_p,H,H_rel"


def run_csv_lines(record):
    yield RUN_HEADER
    for i in range(record.rows):
        yield ",".join(
            [
                str(i),
                _fmt(record.t[i]),
                _fmt(record.probe_q[i]),
                _fmt(record.probe_p[i]),
                _fmt(record.energy[i]),
                _fmt(record.energy_rel[i]),
            ]
        )


# ---------------------------------------------------------------------------
# reference
# ---------------------------------------------------------------------------


@dataclass
class ReferenceResult:
    sample_dt: float
    fine_dt: float
    samples: np.ndarray  # (rows, n), sampled every sample_dt starting at t = 0


def _pow2_stride(coarse, fine):
    ratio = coarse / fine
    m = round(math.log2(ratio))
    if m < 0 or not math.isclose(ratio, 2.0**m, rel_tol=1e-9):
        raise NonCommensurateSteps(
            f"fine_dt must equal dt / 2^m; got dt = {coarse}, fine_dt = {fine}"
        )
    return 2**m


def reference_experiment(cfg):
    """Explicit two-step run at fine_dt, sampled at every multiple of dt."""
    if cfg.dt is None or cfg.dt <= 0.0:
        raise ConfigError("reference needs a positive dt (the sampling interval)")
    fine = cfg.fine_dt if cfg.fine_dt is not None else cfg.dt
    if fine <= 0.0:
        raise ConfigError("fine_dt must be positive")
    stride = _pow2_stride(cfg.dt, fine)
    if cfg.duration is None and cfg.steps is None:
        raise ConfigError("either steps or duration is required")
    n_coarse = cfg.steps if cfg.steps is not None else int(round(cfg.duration / cfg.dt))
    system, q0, p0 = build_system(cfg)

    if n_coarse < 1:
        raise ConfigError("reference needs at least one sampling interval")
    samples = np.empty((n_coarse + 1, system.n))
    samples[0] = q0
    mass_solve = system.mass.solve
    grad = system.gradient
    k = fine
    k2 = k * k
    q_prev, q_cur = sv_init_kicked(system, q0, p0, k)
    total = stride * n_coarse
    idx = 1
    if stride == 1:  # fine step 1 is already the first sample
        samples[1] = q_cur
        idx = 2
    for j in range(2, total + 1):
        q_new = 2.0 * q_cur - q_prev - k2 * mass_solve(grad(q_cur))
        q_prev, q_cur = q_cur, q_new
        if j % stride == 0:
            samples[idx] = q_cur
            idx += 1
    return ReferenceResult(sample_dt=cfg.dt, fine_dt=fine, samples=samples)


def reference_csv_lines(result):
    n = result.samples.shape[1]
    yield f"# sample_dt = {_fmt(result.sample_dt)}"
    yield f"# fine_dt = {_fmt(result.fine_dt)}"
    yield "step,t," + ",".join(f"q_{i}" for i in range(n))
    for i, row in enumerate(result.samples):
        yield ",".join([str(i), _fmt(i * result.sample_dt)] + [_fmt(x) for x in row])


def load_reference(path):
    sample_dt = fine_dt = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                key = key.strip()
                if key == "sample_dt":
                    sample_dt = float(value)
                elif key == "fine_dt":
                    fine_dt = float(value)
                continue
            if line.startswith("step,"):
                continue
            parts = line.split(",")
            rows.append([float(x) for x in parts[2:]])
    if sample_dt is None:
        raise ConfigError(f"{path} is not a reference file (missing sample_dt)")
    return ReferenceResult(
        sample_dt=sample_dt, fine_dt=fine_dt if fine_dt else sample_dt,
        samples=np.asarray(rows),
    )


# ---------------------------------------------------------------------------
# converge
# ---------------------------------------------------------------------------


@dataclass
class ConvergeResult:
    scheme: str
    dts: tuple
    errors: tuple
    slope: float


def trajectory_error(traj, reference, dt):
    """L2-in-time error sqrt(sum_n dt ||q_n - q_ref(n dt)||^2)."""
    stride = dt / reference.sample_dt
    stride_i = round(stride)
    if stride_i < 1 or not math.isclose(stride, stride_i, rel_tol=1e-9):
        raise NonCommensurateSteps(
            f"dt = {dt} is not a multiple of the reference sampling {reference.sample_dt}"
        )
    usable = (reference.samples.shape[0] - 1) // stride_i + 1
    rows = min(len(traj), usable)
    err2 = 0.0
    for i in range(rows):
        diff = traj[i] - reference.samples[i * stride_i]
        err2 += dt * float(diff @ diff)
    return math.sqrt(err2)


def converge_experiment(cfg, reference=None):
    """Error against the reference for each dt in dt_list, plus the fitted
    log-log slope."""
    scheme = _check_scheme(cfg)
    if not cfg.dt_list:
        raise ConfigError("converge needs dt_list")
    if reference is None:
        if not cfg.reference:
            raise ConfigError("converge needs a reference file")
        reference = load_reference(cfg.reference)
    if cfg.duration is None:
        raise ConfigError("converge needs duration")
    system, q0, p0 = build_system(cfg)
    errors = []
    for dt in cfg.dt_list:
        steps = int(round(cfg.duration / dt))
        scfg = cfg.scheme_config()
        scfg.dt = dt
        record = simulate(system, scfg, q0, p0, probe=cfg.probe, steps=steps, store_states=True)
        traj = [q0] + [state[0] for state in record.states]
        errors.append(trajectory_error(traj, reference, dt))
    if len(errors) >= 2 and all(err > 0.0 for err in errors):
        slope = float(np.polyfit(np.log(cfg.dt_list), np.log(errors), 1)[0])
    else:
        slope = math.nan
    return ConvergeResult(scheme=scheme, dts=tuple(cfg.dt_list), errors=tuple(errors), slope=slope)


def converge_csv_lines(result):
    yield "dt,error"
    for dt, err in zip(result.dts, result.errors):
        yield f"{_fmt(dt)},{_fmt(err)}"
    yield f"# slope = {_fmt(result.slope)}"


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


@dataclass
class BenchRow:
    scheme: str
    dt: float
    median_seconds: float
    grad_evals_per_step: float
    linear_solves: int


def bench_experiment(cfg):
    """Median-of-repetitions wall time per scheme and dt (warm-up discarded)."""
    schemes = [s.strip() for s in (cfg.schemes or cfg.scheme or "").split(",") if s.strip()]
    if not schemes:
        raise ConfigError("bench needs schemes (comma separated) or scheme")
    dts = cfg.dt_list if cfg.dt_list else ((cfg.dt,) if cfg.dt else None)
    if not dts:
        raise ConfigError("bench needs dt or dt_list")
    if cfg.steps is None and cfg.duration is None:
        raise ConfigError("bench needs steps or duration")
    system, q0, p0 = build_system(cfg)
    rows = []
    for scheme in schemes:
        _check_scheme(cfg, scheme)
        for dt in dts:
            scfg = cfg.scheme_config(scheme)
            scfg.dt = dt
            steps = cfg.steps if cfg.steps is not None else int(round(cfg.duration / dt))
            times = []
            record = None
            for rep in range(cfg.repetitions + 1):
                t0 = time.perf_counter()
                record = simulate(system, scfg, q0, p0, probe=cfg.probe, steps=steps)
                elapsed = time.perf_counter() - t0
                if rep > 0:  # first repetition is warm-up
                    times.append(elapsed)
            rows.append(
                BenchRow(
                    scheme=scheme,
                    dt=dt,
                    median_seconds=statistics.median(times),
                    grad_evals_per_step=record.grad_evals_per_step(),
                    linear_solves=record.linear_solves,
                )
            )
    return rows


def bench_csv_lines(rows):
    yield "scheme,dt,median_seconds,grad_evals_per_step,linear_solves"
    for row in rows:
        yield ",".join(
            [
                row.scheme,
                _fmt(row.dt),
                _fmt(row.median_seconds),
                _fmt(row.grad_evals_per_step),
                str(row.linear_solves),
            ]
        )


# ---------------------------------------------------------------------------
# scan
# ---------------------------------------------------------------------------


@dataclass
class ScanRow:
    dt: float
    stable: bool
    diverged_step: Optional[int]


def scan_experiment(cfg):
    """Run the scheme across a dt grid and record divergence as data."""
    _check_scheme(cfg)
    if cfg.dt_min is None or cfg.dt_max is None:
        raise ConfigError("scan needs dt_min and dt_max")
    if cfg.duration is None:
        raise ConfigError("scan needs duration")
    if cfg.scan_spacing == "linear":
        dts = np.linspace(cfg.dt_min, cfg.dt_max, cfg.dt_count)
    elif cfg.scan_spacing == "log":
        dts = np.geomspace(cfg.dt_min, cfg.dt_max, cfg.dt_count)
    else:
        raise ConfigError(f"unknown scan_spacing {cfg.scan_spacing!r}")
    system, q0, p0 = build_system(cfg)
    rows = []
    for dt in dts:
        scfg = cfg.scheme_config()
        scfg.dt = float(dt)
        scfg.allow_unstable = True  # divergence is data here
        steps = max(1, int(round(cfg.duration / dt)))
        record = simulate(system, scfg, q0, p0, probe=cfg.probe, steps=steps)
        rows.append(ScanRow(dt=float(dt), stable=not record.diverged,
                            diverged_step=record.diverged_step))
    return rows


def scan_csv_lines(rows):
    yield "dt,stable,diverged_step"
    for row in rows:
        yield ",".join(
            [_fmt(row.dt), "1" if row.stable else "0",
             "" if row.diverged_step is None else str(row.diverged_step)]
        )


def write_lines(lines, path=None, stream=None):
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    elif stream is not None:
        stream.write(text)
    return text
