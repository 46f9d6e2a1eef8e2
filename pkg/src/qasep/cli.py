"""Command-line front end: verify, simulate, transition, figures.

A run is described by one JSON config.  Every leaf of the config can be
overridden on the command line with a flag of the same dotted name, e.g.
``--simulate.samples 200`` or ``--verify.checks '["symmetrization"]'``.
Outputs are named ``<command>-<hash>...`` where the hash is taken over the
resolved config minus the output directory, and every payload embeds that
config.  Wall times and timestamps go to a separate ``.meta.json`` file so
payloads are reproducible byte for byte.

Exit codes: 0 when every record passes, 1 when any fails, 2 for a bad config.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import contour, ctmc, duality, lattice, qspecial
from .errors import ConfigInvalid, QasepError

COMMANDS = ("verify", "simulate", "transition", "figures")
MAX_QUERY_N = 3

VERIFY_CHECKS = ("qhahn_orthogonality", "qtm_orthogonality", "qhahn_qtm_limit",
                 "generator_duality", "duality_orthogonality", "symmetrization",
                 "lumpability", "dhat_duality", "reflection")

# The figure captions give "dynamic parameter 1.1" without saying how it maps
# onto (q, rho).  The presets keep rho = 0 and store the raw caption value.
FIGURE_PRESETS = [
    {"name": "dynamic_q0.9", "kind": "dynamic", "q": 0.9, "rho": 0.0, "dynamic_parameter": 1.1},
    {"name": "dynamic_q1.1", "kind": "dynamic", "q": 1.1, "rho": 0.0, "dynamic_parameter": 1.1},
    {"name": "asep_q0.9", "kind": "asep", "q": 0.9, "rho": 0.0, "dynamic_parameter": None},
]
PRESET_READING = ("asymmetry -> q; caption 'dynamic parameter' stored as dynamic_parameter, "
                  "start rho = 0 unless overridden")

DEFAULT_CONFIG = {
    "command": "verify",
    "output": {"dir": "qasep-out"},
    "contour": {"radius": None, "nodes": 64, "max_doublings": 3,
                "rel_tol": 1e-10, "abs_tol": 1e-14, "precision_tol": 1e-8},
    "verify": {
        "checks": list(VERIFY_CHECKS),
        "qhahn_points": [
            {"N": 5, "alpha": 0.3, "beta": 0.4, "q": 0.7},
            {"N": 4, "alpha": 0.5, "beta": 2.0, "q": 1.3},
            {"N": 5, "alpha": 0.2, "beta": 0.6, "q": 0.5},
        ],
        "qtm_points": [
            {"N": 5, "p": 0.8, "q": 1.3},
            {"N": 3, "p": 2.0, "q": 0.8},
        ],
        "limit_point": {"N": 4, "p": 0.8, "q": 1.3, "alpha": 1e8},
        "duality_sweep": [
            {"q": 1.3, "rho": 0.0, "v": -0.5, "window": [0, 1]},
            {"q": 1.7, "rho": 0.6, "v": -0.3, "window": [-1, 1]},
            {"q": 2.2, "rho": -1.1, "v": -1.4, "window": [-1, 1]},
            {"q": 1.15, "rho": 1.5, "v": -0.8, "window": [0, 2]},
            {"q": 2.8, "rho": -0.4, "v": -0.2, "window": [-2, 0]},
        ],
        "orthogonality_points": [
            {"q": 1.4, "rho": 0.7, "v": -0.3, "window": [0, 2]},
            {"q": 1.4, "rho": 0.7, "v": -0.3, "window": [-2, 0]},
        ],
        "symmetrization": {"max_N": 4, "points": 20, "alpha": 0.8, "seed": 0},
        "lumpability": [
            {"window": [0, 3], "N": 2, "q": 1.5},
            {"window": [0, 4], "N": 3, "q": 0.7},
        ],
        "dhat": [
            {"window": [0, 4], "N": 2, "q": 2.0, "t": 0.5},
            {"window": [0, 5], "N": 3, "q": 1.5, "t": 0.3},
        ],
        "reflection": [{"q": 1.3, "rho": 0.4, "window": [-2, 1]}],
        "tolerances": {"qhahn_orthogonality": 1e-10, "qtm_orthogonality": 1e-10,
                       "qhahn_qtm_limit": 1e-6, "generator_duality": 1e-10,
                       "duality_orthogonality": 1e-10, "symmetrization": 1e-9,
                       "lumpability": 1e-12, "dhat_duality": 1e-8, "reflection": 1e-12},
    },
    "simulate": {
        "presets": copy.deepcopy(FIGURE_PRESETS),
        "times": [100.0],
        "site": 0,
        "samples": 500,
        "base_seed": 0,
        "bin_width": 2.0,
        "half_width": None,
        "workers": 1,
        "max_boundary_touches": 0,
    },
    "transition": {
        "oracle_window": [0, 19],
        "tolerance": 1e-6,
        "queries": [
            {"mode": "joint_pmf", "fixed": [9], "thresholds": [], "y": [9], "t": 0.4, "q": 2.0},
            {"mode": "joint_pmf", "fixed": [11], "thresholds": [], "y": [9], "t": 0.4, "q": 0.5},
            {"mode": "leftmost", "fixed": [8], "thresholds": [], "y": [9], "t": 0.5, "q": 1.5},
            {"mode": "mixed_twprop", "fixed": [], "thresholds": [8], "y": [9], "t": 0.3, "q": 2.0},
            {"mode": "joint_pmf", "fixed": [10, 9], "thresholds": [], "y": [9, 11], "t": 0.4, "q": 2.0},
            {"mode": "joint_pmf", "fixed": [8, 12], "thresholds": [], "y": [9, 11], "t": 0.5, "q": 0.5},
            {"mode": "leftmost", "fixed": [7], "thresholds": [], "y": [8, 10], "t": 0.5, "q": 2.0},
            {"mode": "mixed_twprop", "fixed": [9], "thresholds": [8], "y": [8, 10], "t": 0.4, "q": 2.0},
            {"mode": "mixed_twprop", "fixed": [], "thresholds": [10, 8], "y": [8, 10], "t": 0.4, "q": 2.0},
        ],
        "blockdual": [
            {"window": [-3, 10], "c": [1, 2], "M": [3, 2], "q": 2.0, "t": 0.3},
            {"window": [-4, 6], "c": [1], "M": [2], "q": 2.0, "t": 0.3},
        ],
    },
}


def default_config(command: str = "verify") -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    cfg["command"] = command
    if command == "figures":
        cfg["simulate"]["times"] = [1000.0]
        cfg["simulate"]["samples"] = 5000
    return cfg


# ---------------------------------------------------------------------------
# config handling

def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check_schema(value, template, path: str):
    """Raise ConfigInvalid unless ``value`` has the shape of ``template``."""
    if isinstance(template, dict):
        if not isinstance(value, dict):
            raise ConfigInvalid(f"{path or 'config'} must be an object")
        for k, v in value.items():
            if k not in template:
                raise ConfigInvalid(f"unknown config key {path + '.' + k if path else k}")
            _check_schema(v, template[k], f"{path}.{k}" if path else k)
    elif isinstance(template, list):
        if not isinstance(value, list):
            raise ConfigInvalid(f"{path} must be a list")
    elif _is_number(template):
        if not _is_number(value):
            raise ConfigInvalid(f"{path} must be a number")
    elif isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigInvalid(f"{path} must be a string")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, pairs: list[tuple[str, str]]) -> dict:
    """Set dotted keys, e.g. ('simulate.samples', '200'); values are parsed as JSON."""
    out = copy.deepcopy(cfg)
    for key, raw in pairs:
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigInvalid(f"unknown config key {key}")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigInvalid(f"unknown config key {key}")
        node[parts[-1]] = _parse_value(raw)
    return out


@dataclass
class ExperimentConfig:
    """Resolved configuration of one command."""

    data: dict

    @classmethod
    def from_dict(cls, d: dict, command: str | None = None) -> "ExperimentConfig":
        command = command or d.get("command", "verify")
        if command not in COMMANDS:
            raise ConfigInvalid(f"unknown command {command!r}")
        base = default_config(command)
        _check_schema(d, base, "")
        merged = _merge(base, d)
        merged["command"] = command
        cfg = cls(merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str, command: str | None = None) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d, command)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=1)

    @property
    def command(self) -> str:
        return self.data["command"]

    def experiment(self) -> dict:
        """The config without the output location, as embedded in payloads."""
        return {k: v for k, v in self.data.items() if k != "output"}

    def digest(self) -> str:
        canon = json.dumps(self.experiment(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def contour_spec(self) -> contour.ContourSpec:
        c = self.data["contour"]
        return contour.ContourSpec(c["radius"], int(c["nodes"]), int(c["max_doublings"]),
                                   float(c["rel_tol"]), float(c["abs_tol"]),
                                   float(c["precision_tol"]))

    def validate(self):
        """Guards that can be checked without running anything."""
        d = self.data
        c = d["contour"]
        if c["radius"] is not None and not (_is_number(c["radius"]) and 0 < c["radius"] < 1):
            raise ConfigInvalid("contour.radius must be null or in (0, 1)")
        if int(c["nodes"]) < 4 or int(c["max_doublings"]) < 1:
            raise ConfigInvalid("contour.nodes >= 4 and contour.max_doublings >= 1 required")
        v = d["verify"]
        for name in v["checks"]:
            if name not in VERIFY_CHECKS:
                raise ConfigInvalid(f"unknown verify check {name!r}")
        for pt in v["duality_sweep"] + v["orthogonality_points"] + v["reflection"]:
            w = pt.get("window")
            if not (isinstance(w, list) and len(w) == 2) or w[1] < w[0]:
                raise ConfigInvalid(f"bad window {w!r}")
            if w[1] - w[0] + 1 > duality.MAX_DUALITY_SITES:
                raise ConfigInvalid(f"window {w} exceeds {duality.MAX_DUALITY_SITES} sites")
        s = d["simulate"]
        if int(s["samples"]) < 1:
            raise ConfigInvalid("simulate.samples must be >= 1")
        if any(not _is_number(t) or t < 0 for t in s["times"]):
            raise ConfigInvalid("simulate.times must be nonnegative numbers")
        names = [p.get("name") for p in s["presets"]]
        if len(set(names)) != len(names) or any(not isinstance(n, str) for n in names):
            raise ConfigInvalid("presets need distinct string names")
        for p in s["presets"]:
            if p.get("kind", "dynamic") not in ("dynamic", "asep"):
                raise ConfigInvalid(f"preset {p['name']}: kind must be dynamic or asep")
            if not _is_number(p.get("q")) or p["q"] <= 0:
                raise ConfigInvalid(f"preset {p['name']}: q must be positive")
        tr = d["transition"]
        w = tr["oracle_window"]
        if not (isinstance(w, list) and len(w) == 2 and w[0] <= w[1]):
            raise ConfigInvalid("transition.oracle_window must be [a, b]")
        for qd in tr["queries"]:
            if not isinstance(qd, dict) or "y" not in qd:
                raise ConfigInvalid(f"malformed query {qd!r}")
            if len(qd["y"]) > MAX_QUERY_N:
                raise ConfigInvalid(f"queries are limited to N <= {MAX_QUERY_N}")
        for bd in tr["blockdual"]:
            if len(bd.get("c", [])) > 2:
                raise ConfigInvalid("blockdual entries are limited to n <= 2")


# ---------------------------------------------------------------------------
# result records

@dataclass
class ResultRecord:
    """One checked metric; passed iff value <= tolerance."""

    command: str
    metric: str
    value: float
    tolerance: float
    passed: bool
    wall_time: float = 0.0
    details: dict = field(default_factory=dict)
    error: str | None = None

    @classmethod
    def check(cls, command, metric, value, tolerance, wall_time=0.0, details=None):
        value = float(value)
        ok = bool(math.isfinite(value) and value <= tolerance)
        return cls(command, metric, value, float(tolerance), ok, wall_time, dict(details or {}))

    @classmethod
    def failure(cls, command, metric, tolerance, exc: Exception, wall_time=0.0, details=None):
        return cls(command, metric, math.inf, float(tolerance), False, wall_time,
                   dict(details or {}), f"{type(exc).__name__}: {exc}")

    def payload(self) -> dict:
        """Everything except wall time, for reproducible reports."""
        return {"command": self.command, "metric": self.metric,
                "value": self.value if math.isfinite(self.value) else "inf",
                "tolerance": self.tolerance, "passed": self.passed,
                "details": self.details, "error": self.error}


def _timed(command, metric, tol, fn, details=None):
    t0 = time.perf_counter()
    try:
        val = fn()
    except QasepError as exc:
        return ResultRecord.failure(command, metric, tol, exc, time.perf_counter() - t0, details)
    return ResultRecord.check(command, metric, val, tol, time.perf_counter() - t0, details)


# ---------------------------------------------------------------------------
# verify

def _dparams(pt) -> duality.DualityParams:
    model = lattice.ModelParams(float(pt["q"]), float(pt["rho"]), tuple(pt["window"]))
    return duality.DualityParams(model, float(pt["v"]))


def _symmetrization_max(N: int, points: int, alpha: float, rng) -> float:
    worst, done = 0.0, 0
    while done < points:
        xi = rng.uniform(0.1, 0.7, N) * np.exp(1j * rng.uniform(0.0, 2 * math.pi, N))
        try:
            worst = max(worst, contour.symmetrization_residual(xi, alpha, 1.0 - alpha))
        except ZeroDivisionError:
            continue
        done += 1
    return worst


def run_checks(cfg: ExperimentConfig) -> list[ResultRecord]:
    v = cfg.data["verify"]
    tol = v["tolerances"]
    cmd = "verify"
    out = []
    for name in v["checks"]:
        if name == "qhahn_orthogonality":
            for i, pt in enumerate(v["qhahn_points"]):
                out.append(_timed(cmd, f"{name}[{i}]", tol[name],
                                  lambda pt=pt: qspecial.orthogonality_residual("qhahn", **pt), pt))
        elif name == "qtm_orthogonality":
            for i, pt in enumerate(v["qtm_points"]):
                out.append(_timed(cmd, f"{name}[{i}]", tol[name],
                                  lambda pt=pt: qspecial.orthogonality_residual("qtm_krawtchouk", **pt),
                                  pt))
        elif name == "qhahn_qtm_limit":
            pt = v["limit_point"]
            out.append(_timed(cmd, name, tol[name], lambda: qspecial.qhahn_to_qtm_limit_error(
                int(pt["N"]), float(pt["p"]), float(pt["q"]), float(pt["alpha"])), pt))
        elif name == "generator_duality":
            for i, pt in enumerate(v["duality_sweep"]):
                for which in ("qhahn", "qtm"):
                    out.append(_timed(cmd, f"{name}_{which}[{i}]", tol[name],
                                      lambda pt=pt, w=which: duality.generator_duality_residual(
                                          _dparams(pt), w).residual, pt))
        elif name == "duality_orthogonality":
            for i, pt in enumerate(v["orthogonality_points"]):
                out.append(_timed(cmd, f"{name}[{i}]", tol[name],
                                  lambda pt=pt: duality.orthogonality_residual_dual(
                                      _dparams(pt)).residual, pt))
        elif name == "symmetrization":
            s = v["symmetrization"]
            rng = np.random.default_rng(int(s["seed"]))
            for N in range(1, int(s["max_N"]) + 1):
                out.append(_timed(cmd, f"{name}[N={N}]", tol[name],
                                  lambda N=N: _symmetrization_max(N, int(s["points"]),
                                                                  float(s["alpha"]), rng),
                                  {"N": N, **s}))
        elif name == "lumpability":
            for i, pt in enumerate(v["lumpability"]):
                for sign in ("+", "-"):
                    out.append(_timed(cmd, f"{name}{sign}[{i}]", tol[name],
                                      lambda pt=pt, sg=sign: lattice.lumping_residual(
                                          tuple(pt["window"]), int(pt["N"]), float(pt["q"]), sg),
                                      pt))
        elif name == "dhat_duality":
            for i, pt in enumerate(v["dhat"]):
                out.append(_timed(cmd, f"{name}[{i}]", tol[name],
                                  lambda pt=pt: duality.dhat_duality_residual(
                                      tuple(pt["window"]), int(pt["N"]), float(pt["q"]),
                                      float(pt["t"])), pt))
        elif name == "reflection":
            for i, pt in enumerate(v["reflection"]):
                out.append(_timed(cmd, f"{name}[{i}]", tol[name],
                                  lambda pt=pt: lattice.reflect_generator_residual(
                                      lattice.ModelParams(float(pt["q"]), float(pt["rho"]),
                                                          tuple(pt["window"]))), pt))
    return out


def cmd_verify(cfg: ExperimentConfig) -> list[ResultRecord]:
    return run_checks(cfg)


# ---------------------------------------------------------------------------
# transition

def cmd_transition(cfg: ExperimentConfig) -> list[ResultRecord]:
    tr = cfg.data["transition"]
    spec = cfg.contour_spec()
    window = tuple(tr["oracle_window"])
    tol = float(tr["tolerance"])
    out = []
    for i, qd in enumerate(tr["queries"]):
        t0 = time.perf_counter()
        try:
            qry = contour.ParticleQuery.from_dict(qd)
            qry.validate()
            if qry.mode == "leftmost":
                val = contour.leftmost_particle_pmf(qry.fixed[0], qry.y, qry.t, qry.q, spec)
            else:
                val = contour.twprop_probability(qry, spec)
            ref = contour.oracle_probability(qry, window)
        except (QasepError, KeyError, TypeError, ValueError) as exc:
            out.append(ResultRecord.failure("transition", f"{qd.get('mode', '?')}[{i}]", tol, exc,
                                            time.perf_counter() - t0, {"query": qd}))
            continue
        out.append(ResultRecord.check("transition", f"{qry.mode}[{i}]", abs(val - ref), tol,
                                      time.perf_counter() - t0,
                                      {"query": qd, "contour": val, "oracle": ref}))
    for i, bd in enumerate(tr["blockdual"]):
        t0 = time.perf_counter()
        try:
            lhs, rhs, gap = contour.blockdual_crosscheck(tuple(bd["window"]), bd["c"], bd["M"],
                                                         float(bd["q"]), float(bd["t"]), spec)
        except (QasepError, KeyError) as exc:
            out.append(ResultRecord.failure("transition", f"blockdual[{i}]", tol, exc,
                                            time.perf_counter() - t0, bd))
            continue
        out.append(ResultRecord.check("transition", f"blockdual[{i}]", gap, tol,
                                      time.perf_counter() - t0, {**bd, "lhs": lhs, "rhs": rhs}))
    return out


# ---------------------------------------------------------------------------
# simulate / figures

def _model_of(preset: dict) -> ctmc.HeightModel:
    return ctmc.HeightModel(float(preset["q"]), float(preset.get("rho", 0.0)),
                            preset.get("kind", "dynamic"))


def _time_tag(t: float) -> str:
    return f"{t:g}".replace(".", "p")


def cmd_simulate(cfg: ExperimentConfig, outdir: Path | None = None):
    """Run every (preset, time) ensemble.

    Returns (records, files) where files maps file name -> text.  Each
    ensemble gives a per-sample CSV, a histogram CSV and a JSON summary.
    """
    s = cfg.data["simulate"]
    cmd = cfg.command
    digest = cfg.digest()
    header = "# config=" + json.dumps(cfg.experiment(), sort_keys=True, separators=(",", ":")) + "\n"
    records, files = [], {}
    for preset in s["presets"]:
        for t in s["times"]:
            t0 = time.perf_counter()
            metric = f"boundary_touches[{preset['name']},t={t:g}]"
            try:
                stats = ctmc.ensemble_height_stats(
                    _model_of(preset), float(t), int(s["site"]), int(s["samples"]),
                    int(s["base_seed"]), float(s["bin_width"]), s["half_width"],
                    int(s["workers"]))
            except QasepError as exc:
                records.append(ResultRecord.failure(cmd, metric, s["max_boundary_touches"], exc,
                                                    time.perf_counter() - t0, {"preset": preset}))
                continue
            stem = f"{cmd}-{digest}-{preset['name']}-t{_time_tag(float(t))}"
            summary = stats.summary()
            summary["preset"] = preset
            summary["preset_reading"] = PRESET_READING
            summary["config"] = cfg.experiment()
            files[stem + "-samples.csv"] = header + stats.to_csv()
            files[stem + "-hist.csv"] = header + stats.histogram_csv()
            files[stem + "-summary.json"] = json.dumps(summary, sort_keys=True, indent=1)
            touches = stats.metadata["boundary_touches"]
            records.append(ResultRecord.check(
                cmd, metric, touches,
                s["max_boundary_touches"], time.perf_counter() - t0,
                {"mean": stats.mean, "var": stats.variance, "samples": stats.sample_count}))
    return records, files


# ---------------------------------------------------------------------------
# driver

def write_outputs(cfg: ExperimentConfig, records: list[ResultRecord], files: dict,
                  outdir: Path) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.command}-{cfg.digest()}"
    for name, text in files.items():
        (outdir / name).write_text(text)
    report = {"config": cfg.experiment(), "config_hash": cfg.digest(),
              "passed": all(r.passed for r in records),
              "records": [r.payload() for r in records], "files": sorted(files)}
    path = outdir / f"{stem}.json"
    path.write_text(json.dumps(report, sort_keys=True, indent=1))
    meta = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "wall_times": {r.metric: r.wall_time for r in records}}
    (outdir / f"{stem}.meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return path


def run(cfg: ExperimentConfig, outdir: Path | None = None):
    """Dispatch on cfg.command; returns (records, files)."""
    if cfg.command == "verify":
        return cmd_verify(cfg), {}
    if cfg.command == "transition":
        return cmd_transition(cfg), {}
    return cmd_simulate(cfg, outdir)


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    pairs, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigInvalid(f"unexpected argument {tok!r}")
        if "=" in tok:
            k, v = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigInvalid(f"flag {tok} needs a value")
            k, v = tok[2:], extra[i + 1]
            i += 2
        pairs.append((k, v))
    return pairs


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qasep", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--print-config", action="store_true",
                    help="print the resolved config and exit")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    try:
        raw = {}
        if args.config:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigInvalid(f"cannot read config: {exc}") from exc
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigInvalid("config must be a JSON object")
        merged = _merge(default_config(args.command), raw)
        merged["command"] = args.command
        merged = apply_overrides(merged, _split_overrides(extra))
        if args.out:
            merged["output"]["dir"] = args.out
        cfg = ExperimentConfig.from_dict(merged, args.command)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        print(cfg.to_json())
        return 0
    outdir = Path(cfg.data["output"]["dir"])
    records, files = run(cfg, outdir)
    path = write_outputs(cfg, records, files, outdir)
    for r in records:
        status = "PASS" if r.passed else "FAIL"
        shown = "inf" if not math.isfinite(r.value) else f"{r.value:.3g}"
        extra_msg = f"  {r.error}" if r.error else ""
        print(f"{status} {r.metric}: {shown} (tol {r.tolerance:g}){extra_msg}")
    print(f"report: {path}")
    return 0 if all(r.passed for r in records) else 1


if __name__ == "__main__":
    sys.exit(main())
