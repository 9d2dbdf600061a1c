"""Dataset simulation, CSV/JSON ingest and emission, run configuration and manifests."""
from __future__ import annotations

import functools
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import physical as phys
from .assessment import AssessmentReport, assess
from .gaussian import GaussianSSMSpec, gibbs_fit_gaussian
from .nongaussian import NonGaussianSSMSpec, fit_bnlr_two_zone, fit_nongaussian
from .statespace import EPS, MODEL_KINDS, MeasurementSeries, ModelSetup, PosteriorSamples, PriorSpec
from .stochastics import distance_matrix, exp_corr, make_rng, run_chains

__all__ = [
    "ConfigError",
    "SIM_DEFAULTS",
    "EDDY_COORDS",
    "simulate_dataset",
    "read_series",
    "write_series",
    "write_samples",
    "read_samples",
    "write_report",
    "plot_data",
    "RunConfig",
    "fit_from_config",
    "run",
    "sha256_file",
]

OUTPUT_ENV = "EXPOSURE_SSM_OUT"


class ConfigError(ValueError):
    """Validation failure tied to one configuration field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ---------------------------------------------------------------------------
# simulation

SIM_DEFAULTS = {
    "one-zone": {"G": 351.5, "Q": 13.8, "K_L": 0.1},
    "two-zone": {"G": 351.5, "Q": 13.8, "K_L": 0.1, "beta": 5.0},
    "eddy": {"G": 351.5, "D_T": 1.0},
}

# five fixed locations (m) within about 2 m of a source in the corner of the
# room, so every location sees the plume within the first minute
EDDY_COORDS = np.array([[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [1.5, 1.5], [1.0, 1.0]])

_NOISE_DEFAULTS = {
    "one-zone": {"sigma": 0.1},
    "two-zone": {"Sigma_nu": 0.1},
    "eddy": {"sigma2": 1.0, "phi": 1.0, "nugget": 0.1},
}


def simulate_dataset(
    kind: str,
    params: dict | None = None,
    noise: dict | None = None,
    grid=None,
    rng: np.random.Generator | None = None,
    coords=None,
    c0=None,
) -> MeasurementSeries:
    """Exact-solution truth plus Gaussian measurement noise.

    One-zone: e ~ N(0, sigma^2), sigma = 0.1.  Two-zone: e ~ N(0, Sigma_nu),
    Sigma_nu = 0.1 I (a scalar means that times I).  Eddy: e_t(s) = nu_t(s) +
    eta with nu_t ~ N(0, sigma2 R(phi)) and eta ~ N(0, nugget).

    With ``noise["scale"] == "natural"`` (default) measurements are Y = C + e,
    and any time row holding a non-positive value is redrawn, i.e. the noise
    is truncated to keep measurements positive.  With ``"log"`` they are
    Y = max(C, EPS) exp(e).  With all noise set to zero the measurements equal
    the truth.

    Default grids are t = 0..99 (one- and two-zone, C(0) = 1 and (0, 0.5))
    and t = 1..100 for eddy at five locations.
    """
    if kind not in SIM_DEFAULTS:
        raise ValueError(f"cannot simulate model kind {kind!r}")
    rng = make_rng(0) if rng is None else rng
    theta = dict(SIM_DEFAULTS[kind])
    theta.update(params or {})
    nz = dict(_NOISE_DEFAULTS[kind])
    nz.update(noise or {})
    scale = nz.pop("scale", "natural")
    if scale not in ("natural", "log"):
        raise ValueError(f"noise scale must be 'natural' or 'log', got {scale!r}")
    if grid is None:
        grid = np.arange(1.0, 101.0) if kind == "eddy" else np.arange(0.0, 100.0)
    t = np.asarray(grid, dtype=float)
    if t.size < 2:
        raise ValueError("grid needs at least two timepoints")
    setup = ModelSetup(kind)
    p = setup.physical_params(theta)
    if kind == "one-zone":
        truth = phys.exact_one_zone(p, 1.0 if c0 is None else c0, t)[:, None]
        sigma = float(nz["sigma"])
        if sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        L = np.array([[sigma]])
        nugget = 0.0
        coords = None
    elif kind == "two-zone":
        truth = phys.exact_two_zone(p, np.array([0.0, 0.5]) if c0 is None else c0, t)
        S = np.asarray(nz["Sigma_nu"], dtype=float)
        S = S * np.eye(2) if S.ndim == 0 else S
        if S.shape != (2, 2) or np.any(np.linalg.eigvalsh(S) < 0):
            raise ValueError("Sigma_nu must be a positive semi-definite 2x2 matrix")
        L = _psd_factor(S)
        nugget = 0.0
        coords = None
    else:
        coords = EDDY_COORDS if coords is None else np.asarray(coords, dtype=float)
        truth = np.stack([phys.exact_eddy(p, s, t) for s in coords], axis=1)
        s2, phi, nugget = float(nz["sigma2"]), float(nz["phi"]), float(nz["nugget"])
        if s2 < 0 or nugget < 0 or not phi > 0:
            raise ValueError("eddy noise needs sigma2 >= 0, nugget >= 0 and phi > 0")
        L = _psd_factor(s2 * exp_corr(phi, distance_matrix(coords)))
    m = truth.shape[1]

    def draw(rows):
        e = rng.standard_normal((rows, m)) @ L.T
        if nugget > 0:
            e += math.sqrt(nugget) * rng.standard_normal((rows, m))
        return e

    if not np.any(L) and nugget == 0:
        values = truth.copy()
    elif scale == "log":
        values = np.maximum(truth, EPS) * np.exp(draw(t.size))
    else:
        values = truth + draw(t.size)
        bad = np.flatnonzero(np.any(values <= 0, axis=1))
        for _ in range(10_000):
            if bad.size == 0:
                break
            values[bad] = truth[bad] + draw(bad.size)
            bad = bad[np.any(values[bad] <= 0, axis=1)]
        else:
            raise ValueError("noise too large to produce positive measurements")
    return MeasurementSeries(kind, t, values, coords=coords, truth=truth)


def _psd_factor(S):
    w, U = np.linalg.eigh(S)
    return U * np.sqrt(np.clip(w, 0.0, None))


# ---------------------------------------------------------------------------
# series CSV


def _fmt(x: float) -> str:
    return repr(float(x))


def write_series(series: MeasurementSeries, path) -> None:
    """Write ``series`` in the per-kind CSV schema (full float precision)."""
    path = Path(path)
    lines = []
    has_truth = series.truth is not None
    if series.kind == "eddy":
        lines.append("time,x,y,value" + (",truth" if has_truth else ""))
        for i, t in enumerate(series.times):
            for j, (x, y) in enumerate(series.coords):
                row = [t, x, y, series.values[i, j]] + ([series.truth[i, j]] if has_truth else [])
                lines.append(",".join(_fmt(v) for v in row))
    elif series.kind == "two-zone":
        lines.append("time,near,far" + (",truth_near,truth_far" if has_truth else ""))
        for i, t in enumerate(series.times):
            row = [t, *series.values[i]] + (list(series.truth[i]) if has_truth else [])
            lines.append(",".join(_fmt(v) for v in row))
    else:
        lines.append("time,value" + (",truth" if has_truth else ""))
        for i, t in enumerate(series.times):
            row = [t, series.values[i, 0]] + ([series.truth[i, 0]] if has_truth else [])
            lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _infer_kind(columns) -> str:
    cols = set(columns)
    if {"near", "far"} <= cols:
        return "two-zone"
    if {"x", "y", "value"} <= cols:
        return "eddy"
    if "value" in cols:
        return "one-zone"
    raise ConfigError("data", f"unrecognised CSV header {list(columns)}")


def read_series(path, kind: str | None = None) -> MeasurementSeries:
    """Read a measurement CSV; ``kind`` defaults to the one implied by the header."""
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ConfigError("data", f"cannot parse {path}: {exc}") from exc
    header_kind = _infer_kind(df.columns)
    kind = header_kind if kind is None else kind
    if kind == "random-walk":
        kind = header_kind
    if kind != header_kind:
        raise ConfigError("data", f"{path} has a {header_kind} header, expected {kind}")
    if df.isna().any().any():
        raise ConfigError("data", f"{path} has missing values")
    try:
        if kind == "eddy":
            times = np.unique(df["time"].to_numpy(float))
            loc_keys = list(dict.fromkeys(zip(df["x"], df["y"])))
            coords = np.array(loc_keys, dtype=float)
            if len(df) != times.size * len(loc_keys):
                raise ConfigError("data", "eddy CSV needs one row per (time, location)")
            pos = {k: j for j, k in enumerate(loc_keys)}
            tpos = {t: i for i, t in enumerate(times)}
            values = np.full((times.size, len(loc_keys)), np.nan)
            truth = np.full_like(values, np.nan) if "truth" in df else None
            for row in df.itertuples(index=False):
                i, j = tpos[row.time], pos[(row.x, row.y)]
                values[i, j] = row.value
                if truth is not None:
                    truth[i, j] = row.truth
            if np.isnan(values).any():
                raise ConfigError("data", "eddy CSV has duplicate (time, location) rows")
            return MeasurementSeries("eddy", times, values, coords=coords, truth=truth)
        if kind == "two-zone":
            truth = df[["truth_near", "truth_far"]].to_numpy(float) if "truth_near" in df else None
            return MeasurementSeries("two-zone", df["time"].to_numpy(float), df[["near", "far"]].to_numpy(float), truth=truth)
        truth = df["truth"].to_numpy(float) if "truth" in df else None
        return MeasurementSeries(kind, df["time"].to_numpy(float), df["value"].to_numpy(float), truth=truth)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("data", str(exc)) from exc


# ---------------------------------------------------------------------------
# posterior samples CSV (+ metadata sidecar)


def _element_names(name: str, shape: tuple) -> list:
    if not shape:
        return [name]
    idx = np.indices(shape).reshape(len(shape), -1).T
    if name == "state" or name == "mean":
        if shape[1] == 1:
            return [f"{name}[{i}]" for i, _ in idx]
    return [f"{name}[{','.join(str(v) for v in ix)}]" for ix in idx]


def write_samples(samples: PosteriorSamples, path) -> None:
    """Long CSV ``chain,iteration,name,value`` plus ``<path>.meta.json``."""
    path = Path(path)
    blocks = []
    for name, arr in samples.draws.items():
        c, k = arr.shape[:2]
        shape = arr.shape[2:]
        names = _element_names(name, shape)
        flat = arr.reshape(c, k, -1)
        chain = np.repeat(np.arange(c), k * len(names))
        it = np.tile(np.repeat(np.arange(k), len(names)), c)
        nm = np.tile(np.asarray(names, dtype=object), c * k)
        blocks.append(pd.DataFrame({"chain": chain, "iteration": it, "name": nm, "value": flat.ravel()}))
    df = pd.concat(blocks, ignore_index=True)
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    meta = {
        "engine": samples.engine,
        "kind": samples.kind,
        "times": samples.times.tolist(),
        "theta_names": list(samples.theta_names),
        "shapes": {k: list(v.shape[2:]) for k, v in samples.draws.items()},
        "acceptance": samples.acceptance,
        "coords": None if samples.coords is None else np.asarray(samples.coords).tolist(),
        "options": samples.options,
        "extras": {k: np.asarray(v).tolist() for k, v in samples.extras.items()},
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_samples(path) -> PosteriorSamples:
    """Inverse of :func:`write_samples`."""
    path = Path(path)
    meta_path = Path(str(path) + ".meta.json")
    if not meta_path.exists():
        raise ConfigError("fit", f"missing sample metadata {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns) != ["chain", "iteration", "name", "value"]:
        raise ConfigError("fit", f"{path} is not a posterior-sample CSV")
    n_chains = int(df["chain"].max()) + 1
    n_draws = int(df["iteration"].max()) + 1
    draws = {}
    for name, shape in meta["shapes"].items():
        names = _element_names(name, tuple(shape))
        sub = df[df["name"].isin(names)]
        if len(sub) != n_chains * n_draws * len(names):
            raise ConfigError("fit", f"incomplete draws for {name}")
        order = {nm: j for j, nm in enumerate(names)}
        col = sub["name"].map(order).to_numpy()
        arr = np.empty((n_chains, n_draws, len(names)))
        arr[sub["chain"].to_numpy(), sub["iteration"].to_numpy(), col] = sub["value"].to_numpy()
        draws[name] = arr.reshape(n_chains, n_draws, *shape)
    return PosteriorSamples(
        engine=meta["engine"],
        kind=meta["kind"],
        times=np.asarray(meta["times"], dtype=float),
        theta_names=tuple(meta["theta_names"]),
        draws=draws,
        acceptance=meta["acceptance"],
        coords=None if meta["coords"] is None else np.asarray(meta["coords"], dtype=float),
        options=meta["options"],
        extras={k: np.asarray(v) for k, v in meta["extras"].items()},
    )


# ---------------------------------------------------------------------------
# reports and plot data


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_json(report: AssessmentReport) -> str:
    return json.dumps(_json_safe(report.to_dict()), indent=2, sort_keys=True) + "\n"


def report_csv(report: AssessmentReport) -> str:
    """Flattened ``key,value`` rendering of the report."""
    rows = ["key,value"]

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k in sorted(obj):
                walk(f"{prefix}.{k}" if prefix else k, obj[k])
        else:
            rows.append(f"{prefix},{'' if obj is None else obj}")

    walk("", _json_safe(report.to_dict()))
    return "\n".join(rows) + "\n"


def write_report(report: AssessmentReport, path, fmt: str = "json") -> None:
    text = report_json(report) if fmt == "json" else report_csv(report)
    Path(path).write_text(text, encoding="utf-8")


def _moving_average(x: np.ndarray, window: int = 5) -> np.ndarray:
    # centred average with the window shrunk at the ends
    n = x.shape[0]
    half = window // 2
    out = np.empty_like(x)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        out[i] = x[lo:hi].mean(axis=0)
    return out


def plot_data(samples: PosteriorSamples, data: MeasurementSeries) -> pd.DataFrame:
    """Observed values, posterior-mean states with 95% bands and a smoothed curve."""
    X = samples.flat(samples.trajectory_key())
    mean = X.mean(axis=0)
    lo, hi = np.quantile(X, [0.025, 0.975], axis=0)
    smooth = _moving_average(mean)
    n, p = mean.shape
    labels = {"two-zone": ["near", "far"]}.get(data.kind, [str(j) for j in range(p)])
    rows = {
        "time": np.repeat(data.times, p),
        "component": np.tile(labels, n),
        "observed": data.values.ravel(),
        "posterior_mean": mean.ravel(),
        "q025": lo.ravel(),
        "q975": hi.ravel(),
        "smoothed": smooth.ravel(),
    }
    if data.truth is not None:
        rows["truth"] = data.truth.ravel()
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Everything needed to reproduce a fit.  Serialised verbatim into the manifest."""

    model: str = "one-zone"
    ssm: str = "nongaussian"
    family: str = "lognormal"
    spatial: str = "exponential"
    provenance: str = "simulation"
    bounds: dict = field(default_factory=dict)
    delta_t: float | None = None
    kl_sign: str = "decay"
    V: float = 3.8
    V_N: float = math.pi * 1e-3
    V_F: float = 3.8
    iters: int = 20000
    burnin: int = 5000
    thin: int = 10
    chains: int = 1
    seed: int = 0
    threads: int = 1
    state_sampler: str = "conditional"
    data: str | None = None
    out: str | None = None
    format: str = "json"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "RunConfig":
        if self.model not in MODEL_KINDS:
            raise ConfigError("model", f"must be one of {MODEL_KINDS}")
        if self.ssm not in ("gaussian", "nongaussian", "bnlr"):
            raise ConfigError("ssm", "must be gaussian, nongaussian or bnlr")
        if self.ssm == "bnlr" and self.model != "two-zone":
            raise ConfigError("ssm", "bnlr is defined for the two-zone model only")
        if self.family not in ("lognormal", "gamma"):
            raise ConfigError("family", "must be lognormal or gamma")
        if self.family == "gamma" and self.model == "two-zone" and self.ssm == "nongaussian":
            raise ConfigError("family", "the two-zone model uses the log-normal transition")
        if self.spatial not in ("exponential", "unstructured", "none"):
            raise ConfigError("spatial", "must be exponential, unstructured or none")
        if self.provenance not in ("simulation", "chamber"):
            raise ConfigError("provenance", "must be simulation or chamber")
        if self.kl_sign not in ("decay", "literal"):
            raise ConfigError("kl_sign", "must be decay or literal")
        for name, b in self.bounds.items():
            if len(b) != 2 or not float(b[0]) < float(b[1]):
                raise ConfigError(f"bounds.{name}", f"lower bound must be below upper bound, got {b}")
        for name in ("V", "V_N", "V_F"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "volume must be positive")
        if self.model == "two-zone" and not self.V_N < self.V_F:
            raise ConfigError("V_N", "near-field volume must be smaller than the far field")
        if self.delta_t is not None and not self.delta_t > 0:
            raise ConfigError("delta_t", "must be positive")
        if self.iters < 1:
            raise ConfigError("iters", "must be positive")
        if not 0 <= self.burnin < self.iters:
            raise ConfigError("burnin", "must satisfy 0 <= burnin < iters")
        if self.thin < 1:
            raise ConfigError("thin", "must be >= 1")
        if self.chains < 1:
            raise ConfigError("chains", "must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        if self.state_sampler not in ("conditional", "ffbs"):
            raise ConfigError("state_sampler", "must be conditional or ffbs")
        if self.format not in ("json", "csv"):
            raise ConfigError("format", "must be json or csv")
        return self

    def priors(self) -> PriorSpec:
        kind = "two-zone" if self.ssm == "bnlr" else self.model
        base = PriorSpec.defaults(kind, self.provenance)
        bounds = dict(base.bounds)
        bounds.update({k: tuple(float(x) for x in v) for k, v in self.bounds.items()})
        try:
            return PriorSpec(bounds=bounds)
        except ValueError as exc:
            raise ConfigError("bounds", str(exc)) from exc

    def setup(self) -> ModelSetup:
        dt = self.delta_t if self.delta_t is not None else phys.DEFAULT_DELTA_T.get(self.model, 1.0)
        return ModelSetup(self.model, phys.Discretization(dt, self.kl_sign), self.V, self.V_N, self.V_F)


def _fit_one(config: RunConfig, data: MeasurementSeries, rng) -> PosteriorSamples:
    priors = config.priors()
    if config.ssm == "bnlr":
        return fit_bnlr_two_zone(data, priors, config.iters, config.burnin, config.thin, rng, config.setup())
    if config.ssm == "gaussian":
        spec = GaussianSSMSpec(config.setup(), priors, state_sampler=config.state_sampler)
        return gibbs_fit_gaussian(spec, data, config.iters, config.burnin, config.thin, rng)
    spec = NonGaussianSSMSpec(config.setup(), priors, family=config.family, spatial=config.spatial)
    return fit_nongaussian(spec, data, config.iters, config.burnin, config.thin, rng)


def fit_from_config(config: RunConfig, data: MeasurementSeries) -> PosteriorSamples:
    """Run ``config.chains`` chains (concurrently up to ``config.threads``) and stack them."""
    config.validate()
    fn = functools.partial(_fit_one, config, data)
    chains = run_chains(fn, config.seed, config.chains, config.threads)
    return PosteriorSamples.stack_chains(chains)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def output_dir(out: str | None) -> Path:
    return Path(out or os.environ.get(OUTPUT_ENV) or ".")


def run(config: RunConfig) -> dict:
    """Fit, assess and write every artifact; returns the manifest."""
    config.validate()
    if config.data is None:
        raise ConfigError("data", "an input CSV is required")
    data = read_series(config.data, None if config.ssm != "bnlr" else "two-zone")
    if data.kind != config.model and config.model != "random-walk":
        raise ConfigError("model", f"data are {data.kind}, config says {config.model}")
    samples = fit_from_config(config, data)
    report = assess(samples, data, rng=make_rng(config.seed, 10_000))
    out = output_dir(config.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "samples": out / "samples.csv",
        "report": out / f"report.{config.format}",
        "plot": out / "plot.csv",
    }
    write_samples(samples, paths["samples"])
    write_report(report, paths["report"], config.format)
    plot_data(samples, data).to_csv(paths["plot"], index=False, float_format="%.17g", lineterminator="\n")
    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "seed": config.seed,
        "inputs": {"data": sha256_file(config.data)},
        "outputs": {k: sha256_file(v) for k, v in paths.items()},
    }
    manifest["outputs"]["samples_meta"] = sha256_file(str(paths["samples"]) + ".meta.json")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
