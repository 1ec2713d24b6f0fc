"""Experiment runner.

Usage::

    mkvlan SUBCOMMAND --config run.ini [--out DIR] [--seed U64] [--threads K] [--format csv|json|both]

Configs are INI files with the sections ``[run] [model] [theta] [sim]
[perturbation] [experiment]`` or the same structure as JSON. Exit status is
0 on success, 1 on configuration or validation failure and 2 when a
simulation or optimisation produced non-finite numbers. Failed runs leave no
partial outputs behind.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy import stats

from . import __version__
from .errors import (ConfigError, DomainError, MkvError, ModelStructureError, NonFiniteContrastError,
                     PropagationError, UnsupportedModelError)
from .inference import EstimateOptions, estimate, fisher_exact, fisher_quadrature, rate_study
from .lan import LanReport, lan_harness
from .model import MODEL_REGISTRY, MeanFieldOU, ThetaPair, build_model, validate_model
from .simulate import SimConfig, simulate_particles, simulate_with_tangents

SUBCOMMANDS = ("simulate", "lan-check", "fisher", "estimate", "rates", "validate-model")
FORMATS = ("csv", "json", "both")
HIST_BINS = 30

# ---------------------------------------------------------------------------
# configuration schema


def _int(v):
    if isinstance(v, bool):
        raise ValueError("boolean is not an integer")
    if isinstance(v, float) and not v.is_integer():
        raise ValueError(f"{v!r} is not an integer")
    return int(v)


def _float(v):
    if isinstance(v, bool):
        raise ValueError("boolean is not a number")
    return float(v)


def _str(v):
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.strip().lower() in ("true", "yes", "1", "false", "no", "0"):
        return v.strip().lower() in ("true", "yes", "1")
    raise ValueError(f"expected a boolean, got {v!r}")


def _split(v):
    if isinstance(v, str):
        return [p.strip() for p in v.split(",") if p.strip()]
    return list(v)


def _pair(v):
    parts = _split(v)
    if len(parts) != 2:
        raise ValueError(f"expected 'lo, hi', got {v!r}")
    return (float(parts[0]), float(parts[1]))


def _intlist(v):
    return tuple(_int(p) if not isinstance(p, str) else int(p) for p in _split(v))


def _intmap(v):
    if isinstance(v, dict):
        return {int(k): _int(x) for k, x in v.items()}
    out = {}
    for item in _split(v):
        key, _, val = item.partition(":")
        out[int(key)] = int(val)
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple) and len(v) == 2 and all(isinstance(x, float) for x in v):
        return f"{v[0]!r}, {v[1]!r}"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, dict):
        return ", ".join(f"{k}:{x}" for k, x in v.items())
    return str(v)


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, dict):
        return {str(k): x for k, x in v.items()}
    return v


# (parser, default); a default of ``...`` marks a required key
SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "run": {
        "subcommand": (_str, "simulate"),
        "seed": (_int, ...),
        "out": (_str, "out"),
        "format": (_str, "both"),
    },
    "theta": {
        "theta1": (_float, 1.0),
        "theta2": (_float, 1.0),
        "box1": (_pair, (-10.0, 10.0)),
        "box2": (_pair, (1e-3, 10.0)),
    },
    "sim": {
        "n_particles": (_int, 500),
        "n_steps": (_int, 50),
        "horizon": (_float, 1.0),
        "substeps": (_int, 8),
        "scheme": (_str, "euler"),
        "law_cloud_factor": (_int, 0),
    },
    "perturbation": {
        "u": (_float, 1.0),
        "v": (_float, 1.0),
    },
    "experiment": {
        "replications": (_int, 100),
        "branch": (_str, "exact"),
        "quadrature_order": (_int, 5),
        "clt_inner": (_int, 0),
        "ns": (_intlist, (250, 1000, 4000)),
        "n_of_n": (_intmap, {250: 25, 1000: 100, 4000: 400}),
        "reps": (_int, 200),
        "probes": (_int, 100),
        "init_theta1": (_float, math.nan),
        "init_theta2": (_float, math.nan),
        "with_tangents": (_bool, False),
    },
}
SECTIONS = ("run", "model", "theta", "sim", "perturbation", "experiment")


def _model_fields(model_id: str) -> dict[str, type]:
    cls = MODEL_REGISTRY[model_id]
    return {f.name: f.type for f in dataclasses.fields(cls)}


@dataclasses.dataclass
class ExperimentConfig:
    """Validated experiment configuration: one typed dict per section."""

    sections: dict[str, dict[str, Any]]

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.sections[section]

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return _canonical(self.to_dict()) == _canonical(other.to_dict())

    @property
    def seed(self) -> int:
        return self.sections["run"]["seed"]

    @property
    def subcommand(self) -> str:
        return self.sections["run"]["subcommand"]

    # -- construction ----------------------------------------------------

    @classmethod
    def from_mapping(cls, raw: dict[str, dict[str, Any]]) -> "ExperimentConfig":
        for sec in raw:
            if sec not in SECTIONS:
                raise ConfigError(sec, "unknown section")
        out: dict[str, dict[str, Any]] = {}
        for sec, keys in SCHEMA.items():
            given = dict(raw.get(sec, {}))
            vals = {}
            for key, (parse, default) in keys.items():
                if key in given:
                    try:
                        vals[key] = parse(given.pop(key))
                    except (TypeError, ValueError) as exc:
                        raise ConfigError(f"{sec}.{key}", str(exc)) from None
                elif default is ...:
                    raise ConfigError(f"{sec}.{key}", "required key is missing")
                else:
                    vals[key] = default
            if given:
                raise ConfigError(f"{sec}.{sorted(given)[0]}", "unknown key")
            out[sec] = vals
        out["model"] = cls._parse_model(dict(raw.get("model", {})))
        cfg = cls(out)
        cfg._check()
        return cfg

    @staticmethod
    def _parse_model(given: dict[str, Any]) -> dict[str, Any]:
        model_id = given.pop("id", "mean_field_ou")
        if not isinstance(model_id, str) or model_id not in MODEL_REGISTRY:
            raise ConfigError("model.id", f"unknown model id {model_id!r}; known: {sorted(MODEL_REGISTRY)}")
        fields = _model_fields(model_id)
        vals: dict[str, Any] = {"id": model_id}
        for key, raw in given.items():
            if key not in fields:
                raise ConfigError(f"model.{key}", f"unknown hyperparameter for {model_id}")
            try:
                vals[key] = _int(raw) if key == "dimension" else _float(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"model.{key}", str(exc)) from None
        return vals

    def _check(self):
        run = self.sections["run"]
        if run["subcommand"] not in SUBCOMMANDS:
            raise ConfigError("run.subcommand", f"must be one of {SUBCOMMANDS}")
        if run["format"] not in FORMATS:
            raise ConfigError("run.format", f"must be one of {FORMATS}")
        if not 0 <= run["seed"] < 2**64:
            raise ConfigError("run.seed", "must be an unsigned 64-bit integer")
        exp = self.sections["experiment"]
        if exp["branch"] not in ("exact", "expansion", "both"):
            raise ConfigError("experiment.branch", "must be exact, expansion or both")
        missing = [n for n in exp["ns"] if n not in exp["n_of_n"]]
        if missing:
            raise ConfigError("experiment.n_of_n", f"no step count for N={missing[0]}")
        try:
            self.model()
        except (DomainError, TypeError) as exc:
            raise ConfigError("model", str(exc)) from None
        try:
            self.theta()
        except DomainError as exc:
            raise ConfigError("theta", str(exc)) from None
        try:
            self.sim_config()
        except DomainError as exc:
            raise ConfigError("sim", str(exc)) from None

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("<file>", f"unreadable INI: {exc}") from None
        return cls.from_mapping({s: dict(parser[s]) for s in parser.sections()})

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"unreadable JSON: {exc}") from None
        if not isinstance(raw, dict) or not all(isinstance(v, dict) for v in raw.values()):
            raise ConfigError("<file>", "top level must map section names to tables")
        return cls.from_mapping(raw)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {p}: {exc.strerror}") from None
        if p.suffix.lower() == ".json" or text.lstrip().startswith("{"):
            return cls.from_json(text)
        return cls.from_ini(text)

    # -- serialisation ---------------------------------------------------

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {s: {k: _jsonable(v) for k, v in self.sections[s].items()} for s in SECTIONS}

    def to_json(self) -> str:
        return json.dumps(_canonical(self.to_dict()), indent=2, sort_keys=True)

    def to_ini(self) -> str:
        lines = []
        for s in SECTIONS:
            lines.append(f"[{s}]")
            for k, v in self.sections[s].items():
                lines.append(f"{k} = {_fmt(v)}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    # -- domain objects --------------------------------------------------

    def model(self):
        params = {k: v for k, v in self.sections["model"].items() if k != "id"}
        return build_model(self.sections["model"]["id"], **params)

    def theta(self) -> ThetaPair:
        t = self.sections["theta"]
        return ThetaPair(t["theta1"], t["theta2"], t["box1"], t["box2"])

    def init_theta(self) -> ThetaPair:
        e = self.sections["experiment"]
        base = self.theta()
        t1 = base.theta1 if math.isnan(e["init_theta1"]) else e["init_theta1"]
        t2 = base.theta2 if math.isnan(e["init_theta2"]) else e["init_theta2"]
        return base.replace(t1, t2)

    def sim_config(self, seed: int | None = None) -> SimConfig:
        s = self.sections["sim"]
        return SimConfig(s["n_particles"], s["n_steps"], s["horizon"], self.model(), self.theta(),
                         seed=self.seed if seed is None else seed, substeps=s["substeps"],
                         scheme=s["scheme"], law_cloud_factor=s["law_cloud_factor"])


def _canonical(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return "nan"
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# outputs


class OutputSet:
    """Tracks every file a run writes so a failure can remove them all."""

    def __init__(self, root: Path, fmt: str):
        self.root = root
        self.fmt = fmt
        self.files: dict[str, str] = {}

    def prepare(self):
        probe = self.root / ".write-probe"
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError("run.out", f"output directory not writable: {exc.strerror}") from None

    def _write(self, name: str, data: bytes):
        path = self.root / name
        if path.resolve().parent != self.root.resolve():
            raise ConfigError("run.out", f"refusing to write outside the output directory: {name}")
        self.files[name] = hashlib.sha256(data).hexdigest()
        path.write_bytes(data)

    def csv(self, name: str, text: str):
        if self.fmt in ("csv", "both"):
            self._write(name, text.encode())

    def json(self, name: str, obj_or_text):
        if self.fmt in ("json", "both"):
            text = obj_or_text if isinstance(obj_or_text, str) else json.dumps(
                _json_safe(obj_or_text), indent=2, sort_keys=True)
            self._write(name, text.encode())

    def binary(self, name: str, data: bytes):
        self._write(name, data)

    def cleanup(self):
        for name in list(self.files) + ["provenance.json"]:
            try:
                (self.root / name).unlink()
            except OSError:
                pass
        self.files.clear()


def _json_safe(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _json_safe(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _csv_rows(header: list[str], rows) -> str:
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return v

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([cell(v) for v in row] for row in rows)
    return buf.getvalue()


def histogram_table(z, mean: float, var: float, bins: int = HIST_BINS) -> list[tuple[float, int, float]]:
    """``(bin_center, count, target_density)`` rows over ``[min z, max z]``.

    The target column is the ``N(mean, var)`` probability of each bin divided
    by the bin width and renormalised to the window, so that
    ``sum(target_density * width) == 1``. A degenerate sample (all values
    equal) gives a single bin with unit target mass.
    """
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return []
    lo, hi = float(z.min()), float(z.max())
    if hi == lo:
        return [(lo, int(z.size), 1.0)]
    counts, edges = np.histogram(z, bins=bins, range=(lo, hi))
    width = edges[1] - edges[0]
    if var > 0:
        cdf = stats.norm.cdf(edges, loc=mean, scale=math.sqrt(var))
        mass = np.diff(cdf)
        total = cdf[-1] - cdf[0]
        dens = mass / (total * width) if total > 0 else np.full(bins, 1.0 / (hi - lo))
    else:
        dens = np.full(bins, 1.0 / (hi - lo))
    centers = 0.5 * (edges[:-1] + edges[1:])
    return [(float(c), int(n), float(d)) for c, n, d in zip(centers, counts, dens)]


def qq_pairs(z, mean: float, var: float) -> list[tuple[float, float]]:
    """Theoretical versus sample quantiles at plotting positions ``(i - 1/2) / n``."""
    z = np.sort(np.asarray(z, dtype=float))
    if z.size == 0:
        return []
    p = (np.arange(1, z.size + 1) - 0.5) / z.size
    theo = stats.norm.ppf(p, loc=mean, scale=math.sqrt(var)) if var > 0 else np.full(z.size, mean)
    return [(float(a), float(b)) for a, b in zip(theo, z)]


def emit_plot_data(report: LanReport, out: OutputSet):
    """Histogram and QQ tables of the replicated log-likelihood ratios; no rendering."""
    s2 = report.sigma2_target
    hist = histogram_table(report.z_values, -0.5 * s2, s2)
    out.csv("z_histogram.csv", _csv_rows(["bin_center", "count", "target_density"], hist))
    out.csv("z_qq.csv", _csv_rows(["theoretical", "sample"], qq_pairs(report.z_values, -0.5 * s2, s2)))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(cfg: ExperimentConfig, out: OutputSet, threads: int) -> dict:
    sim = cfg.sim_config()
    if cfg["experiment"]["with_tangents"]:
        grid, tan = simulate_with_tangents(sim)
        rows = []
        times = grid.times
        for i in range(grid.n_particles):
            for k in range(grid.n_steps + 1):
                rows.append([i, k, float(times[k]), *map(float, tan.d_theta1[i, k]), *map(float, tan.d_theta2[i, k])])
        d = grid.dimension
        out.csv("tangents.csv", _csv_rows(["particle", "k", "t"] + [f"d1_{r + 1}" for r in range(d)]
                                          + [f"d2_{r + 1}" for r in range(d)], rows))
    else:
        grid = simulate_particles(sim)
    out.csv("trajectories.csv", grid.to_csv())
    out.binary("trajectories.bin", grid.to_bytes())
    summary = {"provenance": grid.provenance, "mean_final": grid.states[:, -1].mean(axis=0).tolist(),
               "var_final": grid.states[:, -1].var(axis=0).tolist()}
    out.json("summary.json", summary)
    return {"warnings": grid.provenance.get("warnings", [])}


def _cmd_lan(cfg: ExperimentConfig, out: OutputSet, threads: int) -> dict:
    e, p = cfg["experiment"], cfg["perturbation"]
    report = lan_harness(cfg.sim_config(), (p["u"], p["v"]), e["replications"], cfg.seed, branch=e["branch"],
                         threads=threads, quadrature_order=e["quadrature_order"], clt_inner=e["clt_inner"])
    out.json("lan_report.json", report.to_json())
    out.csv("lan_replications.csv", report.to_csv())
    emit_plot_data(report, out)
    if report.clt is not None:
        c = report.clt
        rows = [[name, float(v), float(s), float(t)] for name, v, s, t in
                zip(("drift_mean", "drift_variance", "drift_fourth", "diff_mean", "diff_variance",
                     "diff_fourth", "cross_covariance"), c.values, c.se, c.targets)]
        out.csv("clt_sums.csv", _csv_rows(["condition", "estimate", "se", "target"], rows))
    ks_stat, ks_p = report.ks
    return {"mean": report.mean, "var": report.var, "ks_pvalue": ks_p}


def _cmd_fisher(cfg: ExperimentConfig, out: OutputSet, threads: int) -> dict:
    sim = cfg.sim_config()
    model, theta = sim.model, sim.theta
    if sim.scheme == "euler":
        grid, tan = simulate_with_tangents(sim)
    else:
        grid, tan = simulate_particles(sim), None
    info = fisher_quadrature(grid, tan, model, theta)
    result = {"quadrature": info.to_dict()}
    rows = [["quadrature", info.sigma_b, info.se_b, info.sigma_a, info.se_a]]
    if isinstance(model, MeanFieldOU):
        ex = fisher_exact(model, theta, sim.horizon)
        result["exact"] = ex.to_dict()
        rows.append(["exact", ex.sigma_b, 0.0, ex.sigma_a, 0.0])
    out.json("fisher.json", result)
    out.csv("fisher.csv", _csv_rows(["method", "sigma_b", "se_b", "sigma_a", "se_a"], rows))
    return {"sigma_b": info.sigma_b, "sigma_a": info.sigma_a}


def _cmd_estimate(cfg: ExperimentConfig, out: OutputSet, threads: int) -> dict:
    sim = cfg.sim_config()
    grid = simulate_particles(sim)
    fisher = fisher_exact(sim.model, sim.theta, sim.horizon) if isinstance(sim.model, MeanFieldOU) else None
    res = estimate(grid, sim.model, cfg.init_theta(), EstimateOptions(fisher=fisher))
    out.json("estimate.json", {"truth": [sim.theta.theta1, sim.theta.theta2], **res.to_dict()})
    rows = []
    for name, true, est in (("theta1", sim.theta.theta1, res.theta_hat.theta1),
                            ("theta2", sim.theta.theta2, res.theta_hat.theta2)):
        lo, hi = res.ci[name] if res.ci else (math.nan, math.nan)
        rows.append([name, true, est, lo, hi])
    out.csv("estimate.csv", _csv_rows(["parameter", "truth", "estimate", "ci_low", "ci_high"], rows))
    return {"converged": res.converged}


def _cmd_rates(cfg: ExperimentConfig, out: OutputSet, threads: int) -> dict:
    e, s = cfg["experiment"], cfg["sim"]
    report = rate_study(cfg.model(), cfg.theta(), e["ns"], e["n_of_n"], e["reps"], cfg.seed,
                        horizon=s["horizon"], substeps=s["substeps"], scheme=s["scheme"], threads=threads)
    out.json("rates.json", report.to_json())
    out.csv("rates.csv", report.to_csv())
    return {"slope_theta1": report.slope_theta1 if len(report.rows) > 1 else None}


def _cmd_validate(cfg: ExperimentConfig, out: OutputSet, threads: int) -> dict:
    rep = validate_model(cfg.model(), cfg.theta(), cfg["experiment"]["probes"], cfg.seed)
    out.json("validation.json", rep.to_dict())
    rows = [[c.name, str(c.passed).lower(), str(c.required).lower(), float(c.worst),
             "" if c.bound is None else float(c.bound), c.note] for c in rep.checks]
    out.csv("validation.csv", _csv_rows(["check", "passed", "required", "worst", "bound", "note"], rows))
    if not rep.passed:
        failed = [c.name for c in rep.checks if c.required and not c.passed]
        raise _ValidationFailed(f"model assumptions violated: {', '.join(failed)}")
    return {"passed": True}


class _ValidationFailed(MkvError):
    pass


COMMANDS = {
    "simulate": _cmd_simulate,
    "lan-check": _cmd_lan,
    "fisher": _cmd_fisher,
    "estimate": _cmd_estimate,
    "rates": _cmd_rates,
    "validate-model": _cmd_validate,
}


def resolve_threads(flag: int | None) -> int:
    if flag is None:
        env = os.environ.get("MKV_LAN_THREADS")
        if env:
            try:
                flag = int(env)
            except ValueError:
                raise ConfigError("MKV_LAN_THREADS", f"not an integer: {env!r}") from None
        else:
            flag = os.cpu_count() or 1
    if flag < 1:
        raise ConfigError("threads", "must be >= 1")
    return flag


def run(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None, threads: int | None = None,
        fmt: str | None = None, log=print) -> int:
    """Execute ``cfg`` and write its outputs; returns the process exit status."""
    out = OutputSet(Path(out_dir if out_dir is not None else cfg["run"]["out"]), fmt or cfg["run"]["format"])
    try:
        n_threads = resolve_threads(threads)
        out.prepare()
        started = time.time()
        summary = COMMANDS[cfg.subcommand](cfg, out, n_threads)
        finished = time.time()
        prov = {
            "artifact_version": __version__,
            "subcommand": cfg.subcommand,
            "config": cfg.to_dict(),
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "threads": n_threads,
            "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
            "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(finished)),
            "numpy": np.__version__,
            "python": sys.version.split()[0],
            "outputs": dict(sorted(out.files.items())),
            "summary": summary,
        }
        (out.root / "provenance.json").write_text(json.dumps(_json_safe(prov), indent=2, sort_keys=True))
        log(f"{cfg.subcommand}: wrote {len(out.files)} files to {out.root}")
        return 0
    except (PropagationError, NonFiniteContrastError, FloatingPointError) as exc:
        out.cleanup()
        log(f"error: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DomainError, UnsupportedModelError, ModelStructureError, _ValidationFailed) as exc:
        out.cleanup()
        log(f"error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        out.cleanup()
        raise


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mkvlan", description="McKean-Vlasov simulation and LAN lab")
    ap.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS,
                    help="what to run; defaults to [run] subcommand in the config")
    ap.add_argument("--config", required=True, help="INI or JSON experiment file")
    ap.add_argument("--out", help="output directory (overrides [run] out)")
    ap.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    ap.add_argument("--threads", type=int, help="worker threads (default: $MKV_LAN_THREADS or all cores)")
    ap.add_argument("--format", choices=FORMATS, help="which report formats to write")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        raw = cfg.to_dict()
        if args.subcommand:
            raw["run"]["subcommand"] = args.subcommand
        if args.seed is not None:
            raw["run"]["seed"] = args.seed
        cfg = ExperimentConfig.from_mapping(raw)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return run(cfg, args.out, args.threads, args.format)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
