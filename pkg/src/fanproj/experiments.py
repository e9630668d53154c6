"""Config-driven experiment runs, exponent fits and plot-data files."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import lattice
from .projections import angle_grid, exceptional_parameters, sumset_entropy
from .sets import (
    Scale,
    covering_number,
    gen_ap_set,
    gen_cantor_set,
    gen_figure3_set,
    gen_random_ds_set,
    nonconcentration,
    product_set,
)
from .solymosi import S_MAX, _jsonable, sum_product_pipeline
from .tubes import FanParams, NoFan, find_fan, gen_planted_fan, prune_family, riesz_sum, tube_family

log = logging.getLogger(__name__)

KINDS = ("riesz", "fan", "pipeline", "discrete_st", "examples", "sweep")
GENERATORS = ("ap", "cantor", "random", "figure3", "planted", "grid", "parallel")
CONSTANTS = tuple(
    f.name for f in fields(FanParams) if f.name not in ("s", "sigma", "tau")
)


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    scales: Tuple[int, ...]
    s: float = 0.5
    sigma: float = 0.5
    generator: str = "ap"
    seed: int = 0
    E: str = "grid"
    constants: Tuple[Tuple[str, float], ...] = ()
    out: str = "reports"

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(m) for m in self.scales))
        object.__setattr__(self, "constants", tuple(sorted((str(k), float(v)) for k, v in dict(self.constants).items())))
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError("kind", f"unknown kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if not self.scales:
            raise ConfigError("scales", "at least one scale is required")
        if any(m < 1 or m > 20 for m in self.scales):
            raise ConfigError("scales", "each m must lie in 1..20")
        if list(self.scales) != sorted(set(self.scales)):
            raise ConfigError("scales", "m values must be strictly ascending")
        if self.generator not in GENERATORS:
            raise ConfigError("generator", f"unknown generator {self.generator!r}")
        if self.kind in ("pipeline", "fan"):
            if not 0.5 <= self.s < S_MAX:
                raise ConfigError("s", f"s = {self.s} outside [1/2, 2 - sqrt(2)) = [0.5, {S_MAX:.6f})")
            if not 0 < self.sigma < self.s:
                raise ConfigError("sigma", f"sigma = {self.sigma} must lie in (0, s)")
        elif self.kind == "discrete_st":
            if not 0.5 < self.s < 1:
                raise ConfigError("s", f"s = {self.s} outside (1/2, 1)")
        elif not 0 < self.s <= 1:
            raise ConfigError("s", f"s = {self.s} outside (0, 1]")
        for k, _ in self.constants:
            if k not in CONSTANTS:
                raise ConfigError(f"const.{k}", "unknown constant")

    def params(self) -> FanParams:
        return FanParams(s=self.s, sigma=self.sigma, **dict(self.constants))

    def dumps(self) -> str:
        lines = [
            f"kind = {self.kind}",
            "scales = " + ",".join(str(m) for m in self.scales),
            f"s = {self.s!r}",
            f"sigma = {self.sigma!r}",
            f"generator = {self.generator}",
            f"seed = {self.seed}",
            f"E = {self.E}",
            f"out = {self.out}",
        ]
        lines += [f"const.{k} = {v!r}" for k, v in self.constants]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        raw: Dict[str, str] = {}
        consts: Dict[str, float] = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}", f"expected key = value, got {line!r}")
            k, v = (x.strip() for x in line.split("=", 1))
            if k.startswith("const."):
                try:
                    consts[k[6:]] = float(v)
                except ValueError:
                    raise ConfigError(k, f"not a number: {v!r}") from None
            else:
                raw[k] = v
        known = {"kind", "scales", "s", "sigma", "generator", "seed", "E", "out"}
        for k in raw:
            if k not in known:
                raise ConfigError(k, "unknown field")
        if "kind" not in raw:
            raise ConfigError("kind", "missing")
        if "scales" not in raw:
            raise ConfigError("scales", "missing")
        kw = {"kind": raw["kind"], "constants": tuple(consts.items())}
        try:
            kw["scales"] = tuple(int(x) for x in raw["scales"].split(",") if x.strip())
        except ValueError:
            raise ConfigError("scales", f"not a list of integers: {raw['scales']!r}") from None
        for k, conv in (("s", float), ("sigma", float), ("seed", int)):
            if k in raw:
                try:
                    kw[k] = conv(raw[k])
                except ValueError:
                    raise ConfigError(k, f"cannot parse {raw[k]!r}") from None
        for k in ("generator", "E", "out"):
            if k in raw:
                kw[k] = raw[k]
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentFit:
    pairs: tuple  # (delta, value)
    slope: float
    intercept: float
    residual_max: float

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "slope": self.slope,
            "intercept": self.intercept,
            "residual_max": self.residual_max,
        }


def fit_exponent(series: Sequence[Tuple[float, float]]) -> ExponentFit:
    """Least squares of ``log2(value)`` against ``log2(1/delta)``."""
    pairs = tuple((float(d), float(v)) for d, v in series)
    if len(pairs) < 3:
        raise ValueError(f"need at least 3 points, got {len(pairs)}")
    if any(v <= 0 for _, v in pairs):
        raise ValueError("values must be positive")
    if any(d <= 0 for d, _ in pairs):
        raise ValueError("delta values must be positive")
    x = np.array([-math.log2(d) for d, _ in pairs])
    y = np.array([math.log2(v) for _, v in pairs])
    slope, intercept = np.polyfit(x, y, 1)
    res = np.abs(y - (slope * x + intercept))
    return ExponentFit(pairs, float(slope), float(intercept), float(res.max()))


# ---------------------------------------------------------------------------
# per-scale work
# ---------------------------------------------------------------------------


def _one_dim_set(cfg: ExperimentConfig, scale: Scale, s: float):
    g = cfg.generator
    if g == "ap":
        return gen_ap_set(scale, s)
    if g == "cantor":
        return gen_cantor_set(scale, s)
    if g == "random":
        return gen_random_ds_set(scale, s, cfg.seed)
    raise ConfigError("generator", f"{g!r} does not produce a subset of [0,1] for kind {cfg.kind}")


def _parameters(cfg: ExperimentConfig, scale: Scale) -> List[float]:
    spec = cfg.E.strip()
    if spec == "grid":
        return sorted({float(t) for t in np.tan(angle_grid(scale, cfg.s).angles)})
    if spec == "sqrtdelta":
        return [0.0, math.sqrt(scale.delta), 1.0]
    try:
        return [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("E", f"expected grid, sqrtdelta or a comma list, got {spec!r}") from None


def _riesz(cfg, scale, workers):
    A = _one_dim_set(cfg, scale, cfg.s)
    B = product_set(A, A)
    value = riesz_sum(B, workers=workers)
    unit = scale.power(-2) * scale.m
    flags = [] if value <= 64 * unit else [f"riesz: sum {value:.6g} above 64 delta^-2 log(1/delta)"]
    return {"points": len(B.points), "value": value, "normalised": value / unit}, flags


def _sweep(cfg, scale, workers):
    A = _one_dim_set(cfg, scale, cfg.s)
    ts = _parameters(cfg, scale)
    res = exceptional_parameters(A, scale, cfg.s, dict(cfg.constants).get("C_E", 4.0), T=ts, workers=workers)
    value = sumset_entropy(A, 1.0, scale)
    return {
        "A_size": len(A.points),
        "value": value,
        "parameters": len(ts),
        "exceptional": res.exceptional,
        "csv": res.to_csv(),
    }, []


def _examples(cfg, scale, workers):
    if cfg.generator == "figure3":
        X = gen_figure3_set(scale)
        dim = 1.0
    else:
        X = _one_dim_set(cfg, scale, cfg.s)
        dim = cfg.s
    rep = nonconcentration(X, scale, dim)
    value = covering_number(X)
    flags = [] if rep.constant <= 8 else [f"examples: nonconcentration constant {rep.constant:.4g} above 8"]
    return {"points": len(X.points), "value": value, "constant": rep.constant}, flags


def _fan(cfg, scale, workers):
    params = cfg.params()
    if cfg.generator == "figure3":
        B = gen_figure3_set(scale)
        E = angle_grid(scale, cfg.s)
        planted = None
    else:
        n_tubes = math.ceil(scale.power(-0.5))
        per = math.ceil(scale.power(-0.35))
        pf = gen_planted_fan(scale, n_tubes, per, seed=cfg.seed)
        B, E, planted = pf.points, pf.directions, pf
    budget = params.tube_budget(scale)
    fams = [prune_family(tube_family(B, e, scale, params.s, budget), params, scale).family for e in E]
    fan = find_fan(B, fams, params, scale)
    out = {"points": len(B.points), "tau": params.tau, "threshold": params.fan_threshold(scale)}
    if isinstance(fan, NoFan):
        out.update(found=False, value=fan.best_mass, apex=fan.best_apex)
    else:
        out.update(found=True, value=fan.mass, apex=fan.apex, tubes=len(fan.tubes))
    flags = []
    if planted is not None:
        out["planted_mass"] = planted.planted_mass
        out["apex_recovered"] = bool(out["apex"] == planted.apex)
        if not out["apex_recovered"]:
            flags.append(f"fan: apex {out['apex']} differs from planted apex {planted.apex}")
    return out, flags


def _pipeline(cfg, scale, workers):
    A = _one_dim_set(cfg, scale, 0.5)
    rep = sum_product_pipeline(A, _parameters(cfg, scale), scale, cfg.s, cfg.sigma, cfg.params(), workers=workers)
    flags = [f"{r.name}: {r.message or r.status}" for r in rep.flags]
    d = rep.to_dict()
    d["value"] = rep.bounds.get("measured_sumset", rep.witness.entropy if rep.witness else 0)
    return d, flags


def _discrete(cfg, scale, workers):
    n = 1 << scale.m
    if cfg.generator == "parallel":
        ex = lattice.gen_parallel_lines_example(n, cfg.s)
    elif cfg.generator == "grid":
        ex = lattice.gen_grid_example(n, cfg.s)
    else:
        raise ConfigError("generator", "discrete_st needs generator grid or parallel")
    res = lattice.rich_line_search(ex.P, ex.G, cfg.s)
    # incidences between the points and every line carrying a G-pair
    lines = set()
    for v in ex.slopes:
        lines.update(ln for ln, c in lattice.line_table(ex.P, v).items() if c >= 2)
    inc = lattice.st_incidences(sorted(lines), ex.P, workers=workers)
    out = {
        "n": n,
        "pairs": ex.n_pairs,
        "slopes": ex.n_slopes,
        "value": res.count,
        "line": [res.line.A, res.line.B, res.line.C],
        "mode": res.mode,
        "incidences": inc.incidences,
        "lines": inc.n_lines,
        "st_ratio": inc.ratio,
        "trace": res.trace,
    }
    flags = [f"rich_line_search: {f}" for f in res.flags]
    if inc.ratio > 4:
        flags.append(f"st_incidences: ratio {inc.ratio:.4g} above 4")
    return out, flags


RUNNERS = {
    "riesz": _riesz,
    "sweep": _sweep,
    "examples": _examples,
    "fan": _fan,
    "pipeline": _pipeline,
    "discrete_st": _discrete,
}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def render_report(title: str, machine: dict, human: str, stamp: Optional[str] = None) -> str:
    stamp = stamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    body = json.dumps(_jsonable(machine), indent=2, sort_keys=True)
    return f"# {title} generated {stamp}\n[machine]\n{body}\n[human]\n{human.rstrip()}\n"


def machine_section(text: str) -> dict:
    """Parse the machine section of a report file."""
    start = text.index("[machine]\n") + len("[machine]\n")
    end = text.index("\n[human]")
    return json.loads(text[start:end])


def strip_timestamp(text: str) -> str:
    return "\n".join(ln for ln in text.splitlines() if not ln.startswith("# ")) + "\n"


def _panels(kind: str, per: List[dict]) -> dict:
    if kind == "fan":
        return {"fan_mass_tau": [[d["tau"], d["value"]] for d in per]}
    if kind == "discrete_st":
        return {"st_ratio": [[d["n"], d["st_ratio"]] for d in per]}
    return {}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    per_scale: List[dict]
    summary: dict
    flags: List[str]
    paths: List[Path] = field(default_factory=list)


def run_experiment(config: ExperimentConfig, out_dir=None, workers=None, write: bool = True) -> ExperimentResult:
    config.validate()
    runner = RUNNERS[config.kind]
    per, flags = [], []
    for m in config.scales:
        scale = Scale(m)
        data, fl = runner(config, scale, workers)
        data = {"kind": config.kind, "m": m, "delta": scale.delta, **data, "flags": fl}
        for f in fl:
            log.warning("m=%d %s", m, f)
        per.append(data)
        flags.extend(f"m={m} {f}" for f in fl)
    series = [(d["delta"], d["value"]) for d in per]
    fit = None
    if len(series) >= 3 and all(v > 0 for _, v in series):
        fit = fit_exponent(series).to_dict()
    summary = {
        "kind": config.kind,
        "config": config.dumps(),
        "scales": list(config.scales),
        "series": [[d["m"], d["value"]] for d in per],
        "fit": fit,
        "panels": _panels(config.kind, per),
        "flags": flags,
    }
    paths: List[Path] = []
    if write:
        out = Path(out_dir or config.out)
        out.mkdir(parents=True, exist_ok=True)
        for d in per:
            human = f"{config.kind} at m={d['m']}: value={d['value']}\n" + "".join(f"flag: {f}\n" for f in d["flags"])
            machine = {k: v for k, v in d.items() if k != "csv"}
            p = out / f"report_m{d['m']:02d}.txt"
            p.write_text(render_report(f"{config.kind} report m={d['m']}", machine, human))
            paths.append(p)
            if "csv" in d:
                c = out / f"sweep_m{d['m']:02d}.csv"
                c.write_text(d["csv"])
                paths.append(c)
        human = [f"{config.kind} over m = {', '.join(map(str, config.scales))}"]
        if fit:
            human.append(f"fitted slope {fit['slope']:.4f} vs log2(1/delta), max residual {fit['residual_max']:.3g}")
        human += [f"flag: {f}" for f in flags]
        p = out / "summary.txt"
        p.write_text(render_report(f"{config.kind} summary", summary, "\n".join(human)))
        paths.append(p)
    return ExperimentResult(config, per, summary, flags, paths)


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------

STATUS_CODES = {"pass": 0, "flag": 1, "error": 2, "skipped": 3}


def _write_columns(path: Path, header: str, rows) -> Path:
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for a, b in rows:
            fh.write(f"{a} {b}\n")
    return path


def emit_plot_data(report, out_dir) -> List[Path]:
    """Two-column text files for external plotting, one per panel."""
    if isinstance(report, (str, Path)):
        report = machine_section(Path(report).read_text())
    if hasattr(report, "to_dict"):
        report = report.to_dict()
    report = report or {}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "stages" in report:
        rows = [(r["name"], STATUS_CODES[r["status"]]) for r in report["stages"]]
        return [_write_columns(out / "pipeline_stages.dat", "stage status(0=pass,1=flag,2=error,3=skipped)", rows)]
    kind = report.get("kind", "empty")
    series = report.get("series", [])
    paths = [_write_columns(out / f"{kind}_scaling.dat", "m value", series)]
    headers = {"fan_mass_tau": "tau fan_mass", "st_ratio": "n st_ratio"}
    for name, rows in sorted(report.get("panels", {}).items()):
        paths.append(_write_columns(out / f"{name}.dat", headers.get(name, "x y"), rows))
    return paths
