"""Experiment harness: parameter sweeps over channel draws, CSV output, figure data.

An experiment is described by a JSON-compatible dictionary (see
``ExperimentSpec``) whose powers are in dBm and gains in dB. For every sweep
point and channel draw the harness synthesises the channels, forms the
estimates and error models, runs each selected algorithm, verifies the
result by Monte Carlo and writes one CSV row.

Seed scheme
-----------
All streams derive from ``SeedSequence`` entropy lists rooted at the master
seed ``s``:

* scenario (user drop and fading) of draw ``d``: ``[s, d]``, shared by all
  sweep points so a sweep moves along one set of channels;
* estimation noise: ``[s, d, i, 0]`` for sweep index ``i``;
* algorithm ``a`` (position in the algorithm list): ``[s, d, i, 1, a]``;
* verification of algorithm ``a``: ``[s, d, i, 2, a]``.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import single_user as su
from .channels import PropagationParams, ScenarioGeometry, synthesize_scenario
from .cssca import CsscaConfig, two_stage_cssca
from .estimation import (ErrorModel, build_training_pattern, channel_statistics, error_covariance,
                         lmmse_estimate, ls_estimate, nmse)
from .multiuser import InfeasibleSINR, non_robust_baseline, progressive_thresholding_mu
from .outage import OutageSpec, mc_outage
from .units import db2lin, dbm2watt, watt2dbm

CSV_COLUMNS = ("sweep_value", "draw", "algorithm", "power_dbm", "outage", "outage_stderr",
               "iterations", "wall_time", "status", "verdict")
SWEEP_VARIABLES = ("p_u", "eta", "epsilon", "N", "K", "omega")
SINGLE_USER_ALGORITHMS = ("wsmax", "wsmax_coarse", "exhaustive", "bcd", "mvr", "mpv", "msp",
                          "progressive", "no_irs", "fixed_omega")
MULTIUSER_ALGORITHMS = ("cssca", "progressive_mu", "non_robust")
VERIFY_MARGIN = 0.005

DEFAULT_SPEC = {
    "name": "experiment",
    "scenario": {
        "geometry": {"M": 4, "N": 16, "K": 1},
        "propagation": {"sigma2_dbm": -80.0, "C0_db": -30.0, "D0": 1.0,
                        "alpha_Au": 3.6, "alpha_AI": 2.2, "alpha_Iu": 2.2,
                        "beta_Au_db": None, "beta_AI_db": 3.0, "beta_Iu_db": None},
    },
    "estimation": {"kind": "dft", "Q": 1, "N_r": None, "p_u_dbm": 6.0, "eps2_dbm": -80.0,
                   "csi_mode": "posterior"},
    "outage": {"eta_db": 5.0, "epsilon": 0.1},
    "algorithms": ["wsmax"],
    "config": {"wsmax": {}, "cssca": {}, "progressive": {"delta_eta_db": 0.01}},
    "sweep": {"variable": "p_u", "values": [6.0]},
    "n_draws": 10,
    "seed": 0,
    "n_verify": 20000,
    "save_bundles": False,
    "full": {},
}

# overrides applied on top of a spec when run at full scale
FULL_SCALE = {
    "scenario": {"geometry": {"N": 40}},
    "config": {"wsmax": {"omega_step": 1.0}, "cssca": {"L": 100000, "n_verify": 100000}},
    "n_draws": 100,
    "n_verify": 100000,
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _db_or_zero(x_db):
    """Linear value of a dB quantity; ``None`` stands for a linear zero."""
    return 0.0 if x_db is None else float(db2lin(x_db))


@dataclass(frozen=True)
class ExperimentSpec:
    """Resolved experiment description (the dict form keeps dB / dBm units).

    ``data`` holds the full dictionary; the properties below expose the
    linear-unit objects the algorithms use.
    """

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_SPEC))

    def __post_init__(self):
        d = _merge(DEFAULT_SPEC, self.data)
        object.__setattr__(self, "data", d)
        sweep = d["sweep"]
        if sweep["variable"] not in SWEEP_VARIABLES:
            raise ValueError(f"sweep variable must be one of {SWEEP_VARIABLES}")
        if len(sweep["values"]) == 0:
            raise ValueError("sweep grid must be nonempty")
        if int(d["n_draws"]) < 1:
            raise ValueError("n_draws must be at least 1")
        if d["estimation"]["csi_mode"] not in ("posterior", "ls"):
            raise ValueError("csi_mode must be 'posterior' or 'ls'")
        known = set(SINGLE_USER_ALGORITHMS) | set(MULTIUSER_ALGORITHMS)
        unknown = [a for a in d["algorithms"] if a not in known]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}; choose from {sorted(known)}")
        if "fixed_omega" in d["algorithms"] and sweep["variable"] != "omega":
            raise ValueError("fixed_omega needs an omega sweep")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(copy.deepcopy(d))

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def at_scale(self, scale: str) -> "ExperimentSpec":
        if scale == "desk":
            return self
        if scale != "full":
            raise ValueError("scale must be 'desk' or 'full'")
        return ExperimentSpec(_merge(_merge(self.data, FULL_SCALE), self.data.get("full", {})))

    def with_seed(self, seed) -> "ExperimentSpec":
        return ExperimentSpec(_merge(self.data, {"seed": int(seed)}))

    @property
    def sweep_values(self) -> list:
        return list(self.data["sweep"]["values"])

    @property
    def sweep_variable(self) -> str:
        return self.data["sweep"]["variable"]

    # -- resolved (linear) objects for one sweep point ----------------------

    def point(self, value) -> dict:
        """Dictionary of the spec with the sweep variable set to ``value``."""
        var = self.sweep_variable
        target = {"p_u": ("estimation", "p_u_dbm"), "eta": ("outage", "eta_db"),
                  "epsilon": ("outage", "epsilon"), "N": ("scenario", "geometry", "N"),
                  "K": ("scenario", "geometry", "K"), "omega": ("omega",)}[var]
        d = self.to_dict()
        node = d
        for key in target[:-1]:
            node = node[key]
        node[target[-1]] = int(value) if var in ("N", "K") else float(value)
        return d


def geometry_of(d: dict) -> ScenarioGeometry:
    return ScenarioGeometry.from_dict(d["scenario"]["geometry"])


def propagation_of(d: dict) -> PropagationParams:
    p = dict(d["scenario"]["propagation"])
    out = {"sigma2": float(dbm2watt(p.pop("sigma2_dbm")))}
    out["C0"] = float(db2lin(p.pop("C0_db")))
    for name in ("beta_Au", "beta_AI", "beta_Iu"):
        out[name] = _db_or_zero(p.pop(f"{name}_db", None)) if f"{name}_db" in p else float(p.pop(name, 0.0))
    out.update({k: float(v) for k, v in p.items()})
    return PropagationParams(**out)


def outage_spec_of(d: dict) -> OutageSpec:
    sigma2 = float(dbm2watt(d["scenario"]["propagation"]["sigma2_dbm"]))
    return OutageSpec(eta=float(db2lin(d["outage"]["eta_db"])), epsilon=float(d["outage"]["epsilon"]),
                      sigma2=sigma2)


def error_model_of(d: dict) -> tuple:
    est = d["estimation"]
    N = int(d["scenario"]["geometry"]["N"])
    N_r = N + 1 if est.get("N_r") is None else int(est["N_r"])
    pattern = build_training_pattern(N, N_r, Q=est["Q"], kind=est["kind"])
    em = error_covariance(pattern, float(dbm2watt(est["p_u_dbm"])), float(dbm2watt(est["eps2_dbm"])))
    return pattern, em


def wsmax_config_of(d: dict, coarse: bool = False) -> su.WSMaxConfig:
    cfg = dict(d["config"].get("wsmax", {}))
    cfg.setdefault("Q", int(d["estimation"]["Q"]))
    if coarse:
        cfg["omega_step"] = 5.0
    return su.WSMaxConfig(**cfg)


def cssca_config_of(d: dict) -> CsscaConfig:
    cfg = dict(d["config"].get("cssca", {}))
    cfg.setdefault("Q", int(d["estimation"]["Q"]))
    return CsscaConfig(**cfg)


def _seed(*keys) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(k) for k in keys])


# ----------------------------------------------------------------------------
# one instance
# ----------------------------------------------------------------------------

@dataclass
class Instance:
    """Design inputs of one (sweep point, draw): estimates, error models and targets."""

    H_bar: np.ndarray              # (K, N+1, M)
    error_models: list
    specs: list
    point: dict
    H_true: np.ndarray | None = None


def build_instance(d: dict, master: int, draw: int, sweep_idx: int) -> Instance:
    geo, prop = geometry_of(d), propagation_of(d)
    channels = synthesize_scenario(geo, prop, _seed(master, draw))
    pattern, em = error_model_of(d)
    if d["estimation"]["csi_mode"] == "ls":
        est = ls_estimate(channels, pattern, em.p_u, em.eps2,
                          np.random.default_rng(_seed(master, draw, sweep_idx, 0)))
        H_bar = np.array(est.H_bar)
    else:
        # the synthesised channel plays the estimate; true channels are H_bar - dH
        H_bar = np.array(channels.H_tilde)
    spec = outage_spec_of(d)
    K = H_bar.shape[0]
    return Instance(H_bar=H_bar, error_models=[em] * K, specs=[spec] * K, point=d,
                    H_true=np.array(channels.H_tilde))


@dataclass
class AlgorithmOutput:
    v: np.ndarray
    W: np.ndarray
    power: float
    iterations: int = 0
    flagged: bool = False
    trace: list = field(default_factory=list)


def _su_output(sol: su.SingleUserSolution, iterations: int = 0) -> AlgorithmOutput:
    return AlgorithmOutput(v=sol.v, W=np.atleast_2d(sol.w), power=sol.p,
                           iterations=iterations or len(sol.trace), trace=sol.trace)


def run_algorithm(name: str, inst: Instance, rng_seed) -> AlgorithmOutput:
    """Run one algorithm on an instance."""
    d = inst.point
    K = inst.H_bar.shape[0]
    if name in SINGLE_USER_ALGORITHMS:
        if K != 1:
            raise ValueError(f"{name} is a single-user algorithm (K = {K})")
        H, em, spec = inst.H_bar[0], inst.error_models[0], inst.specs[0]
        cfg = wsmax_config_of(d, coarse=name == "wsmax_coarse")
        if name in ("wsmax", "wsmax_coarse"):
            return _su_output(su.wsmax(H, em, spec, cfg))
        if name == "exhaustive":
            return _su_output(su.exhaustive_search(H, em, spec, cfg), iterations=(2 ** cfg.Q) ** em.N)
        if name == "bcd":
            return _su_output(su.bcd_baseline(H, em, spec, cfg))
        if name == "progressive":
            delta = float(d["config"].get("progressive", {}).get("delta_eta_db", 0.01))
            return _su_output(su.progressive_thresholding_su(H, em, spec, delta, cfg))
        if name == "no_irs":
            return _su_output(su.no_irs_solution(H, em, spec, cfg))
        if name == "fixed_omega":
            res = su.pdd_weighted_sum(H, em, float(d["omega"]), cfg, cfg.initial_v(em.N))
            return _su_output(su.baseline_solution(res.v, H, em, spec, cfg),
                              iterations=res.outer_iterations)
        design = {"mvr": su.mvr_maximize, "mpv": su.mpv_solve, "msp": su.msp_solve}[name]
        return _su_output(su.baseline_solution(design(H, em, cfg), H, em, spec, cfg))
    if name == "cssca":
        res = two_stage_cssca(inst.H_bar, inst.error_models, inst.specs, cssca_config_of(d),
                              rng=np.random.default_rng(rng_seed))
        return AlgorithmOutput(v=res.v, W=res.W, power=res.power, iterations=res.iterations,
                               flagged=res.flagged, trace=res.trace)
    if name == "non_robust":
        res = non_robust_baseline(inst.H_bar, inst.specs)
        return AlgorithmOutput(v=res.v, W=res.W, power=res.power, iterations=res.iterations)
    if name == "progressive_mu":
        delta = float(d["config"].get("progressive", {}).get("delta_eta_db", 0.01))
        res = progressive_thresholding_mu(inst.H_bar, inst.error_models, inst.specs, delta,
                                          Q=int(d["estimation"]["Q"]),
                                          rng=np.random.default_rng(rng_seed))
        return AlgorithmOutput(v=res.v, W=res.W, power=res.power, iterations=res.iterations,
                               flagged=res.flagged)
    raise ValueError(f"unknown algorithm {name!r}")


# ----------------------------------------------------------------------------
# verification and bundles
# ----------------------------------------------------------------------------

@dataclass
class Verdict:
    passed: bool
    outage: np.ndarray
    stderr: np.ndarray
    threshold: np.ndarray


def verify_design(W, v, H_bar, error_models, specs, n_samples: int, rng) -> Verdict:
    """Independent Monte-Carlo check: PASS iff every outage <= eps + 3 stderr + 0.005."""
    mc = mc_outage(W, v, H_bar, error_models, specs, n_samples, rng)
    eps = np.array([s.epsilon for s in specs])
    thr = eps + 3.0 * mc.stderr + VERIFY_MARGIN
    return Verdict(passed=bool(np.all(mc.outage <= thr)), outage=mc.outage, stderr=mc.stderr,
                   threshold=thr)


def save_bundle(path, out: AlgorithmOutput, inst: Instance, meta: dict) -> None:
    np.savez(path, v=out.v, W=out.W, H_bar=inst.H_bar,
             sampling_matrices=np.array([em.sampling_matrix for em in inst.error_models]),
             V_bar=np.array([em.V_bar for em in inst.error_models]),
             p_u=np.array([em.p_u for em in inst.error_models]),
             eps2=np.array([em.eps2 for em in inst.error_models]),
             eta=np.array([s.eta for s in inst.specs]),
             epsilon=np.array([s.epsilon for s in inst.specs]),
             sigma2=np.array([s.sigma2 for s in inst.specs]),
             power=out.power, meta=json.dumps(meta))


def load_bundle(path) -> dict:
    with np.load(path) as z:
        b = {k: z[k] for k in z.files}
    b["meta"] = json.loads(str(b["meta"]))
    b["error_models"] = [ErrorModel(V_bar=Vb, p_u=float(pu), eps2=float(e2), sampling_matrix=T)
                         for Vb, pu, e2, T in zip(b["V_bar"], b["p_u"], b["eps2"], b["sampling_matrices"])]
    b["specs"] = [OutageSpec(eta=float(a), epsilon=float(e), sigma2=float(s))
                  for a, e, s in zip(b["eta"], b["epsilon"], b["sigma2"])]
    return b


def verify_solution(bundle, seed=None, n_samples: int = 100_000) -> Verdict:
    """Verdict for a saved solution bundle (path or ``load_bundle`` dict).

    With ``seed=None`` the verification seed recorded in the bundle is used.
    """
    b = load_bundle(bundle) if not isinstance(bundle, dict) else bundle
    if seed is None:
        seed = b["meta"].get("verify_seed")
    rng = np.random.default_rng(_seed(*seed) if isinstance(seed, list) else seed)
    return verify_design(b["W"], b["v"], b["H_bar"], b["error_models"], b["specs"], n_samples, rng)


# ----------------------------------------------------------------------------
# running a whole experiment
# ----------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _run_cell(args):
    """All algorithms for one (sweep index, draw); returns rows and traces."""
    spec_dict, sweep_idx, draw, bundle_dir, timing = args
    spec = ExperimentSpec(spec_dict)
    master = int(spec.data["seed"])
    value = spec.sweep_values[sweep_idx]
    d = spec.point(value)
    inst = build_instance(d, master, draw, sweep_idx)
    n_verify = int(d["n_verify"])
    rows, traces = [], []
    for a, name in enumerate(d["algorithms"]):
        row = {"sweep_value": value, "draw": draw, "algorithm": name, "power_dbm": None,
               "outage": None, "outage_stderr": None, "iterations": None, "wall_time": None,
               "status": "ok", "verdict": ""}
        t0 = time.perf_counter()
        try:
            out = run_algorithm(name, inst, _seed(master, draw, sweep_idx, 1, a))
        except (InfeasibleSINR, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            row["status"] = f"failed: {type(exc).__name__}"
            rows.append(row)
            continue
        elapsed = time.perf_counter() - t0
        verify_seed = [master, draw, sweep_idx, 2, a]
        ver = verify_design(out.W, out.v, inst.H_bar, inst.error_models, inst.specs, n_verify,
                            np.random.default_rng(_seed(*verify_seed)))
        worst = int(np.argmax(ver.outage - ver.threshold))
        row.update(power_dbm=float(watt2dbm(out.power)), outage=float(ver.outage[worst]),
                   outage_stderr=float(ver.stderr[worst]), iterations=int(out.iterations),
                   wall_time=elapsed if timing else None,
                   status="flagged" if out.flagged else "ok",
                   verdict="PASS" if ver.passed else "FAIL")
        rows.append(row)
        for rec in out.trace if name == "cssca" else []:
            traces.append({"sweep_value": value, "draw": draw, **rec})
        if bundle_dir is not None:
            meta = {"algorithm": name, "sweep_value": value, "draw": draw,
                    "verify_seed": verify_seed, "spec_name": d["name"]}
            save_bundle(Path(bundle_dir) / f"s{sweep_idx:02d}_d{draw:03d}_{name}.npz", out, inst, meta)
    return sweep_idx, draw, rows, traces


def rows_to_csv(rows, columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


@dataclass
class ExperimentResult:
    rows: list
    traces: list
    spec: ExperimentSpec
    csv_path: Path | None = None


def run_experiment(spec: ExperimentSpec | dict, out_dir=None, threads: int = 1,
                   timing: bool = False) -> ExperimentResult:
    """Run every (sweep point, draw) cell and write ``results.csv`` plus ``spec.json``.

    Cells may run in a process pool; rows are sorted by (sweep index, draw,
    algorithm position) so the CSV does not depend on completion order.
    """
    spec = spec if isinstance(spec, ExperimentSpec) else ExperimentSpec(spec)
    out = None if out_dir is None else Path(out_dir)
    bundle_dir = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if spec.data["save_bundles"]:
            bundle_dir = out / "bundles"
            bundle_dir.mkdir(exist_ok=True)
    tasks = [(spec.to_dict(), i, dr, None if bundle_dir is None else str(bundle_dir), timing)
             for i in range(len(spec.sweep_values)) for dr in range(int(spec.data["n_draws"]))]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1]))
    rows = [row for r in results for row in r[2]]
    traces = [tr for r in results for tr in r[3]]
    res = ExperimentResult(rows=rows, traces=traces, spec=spec)
    if out is not None:
        res.csv_path = out / "results.csv"
        res.csv_path.write_text(rows_to_csv(rows))
        if traces:
            cols = ("sweep_value", "draw", "stage", "t", "power", "max_f", "max_violation", "branch")
            (out / "trace.csv").write_text(rows_to_csv(traces, cols))
        meta = {"spec": spec.to_dict(), "version": __version__, "columns": list(CSV_COLUMNS),
                "seed_scheme": {"scenario": "[seed, draw]", "estimation": "[seed, draw, sweep_idx, 0]",
                                "algorithm": "[seed, draw, sweep_idx, 1, algo_idx]",
                                "verification": "[seed, draw, sweep_idx, 2, algo_idx]"},
                "verify_rule": f"outage <= epsilon + 3 stderr + {VERIFY_MARGIN}"}
        (out / "spec.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return res


# ----------------------------------------------------------------------------
# figures
# ----------------------------------------------------------------------------

SU_ALGORITHMS = ["wsmax", "exhaustive", "bcd", "mvr", "mpv", "msp", "progressive", "no_irs"]
SU_DESK = ["wsmax", "bcd", "mvr", "mpv", "msp", "progressive", "no_irs"]
MU_BASE = {"scenario": {"geometry": {"M": 6, "N": 16}},
           "estimation": {"p_u_dbm": 18.0}, "outage": {"eta_db": 5.0},
           "algorithms": ["cssca", "progressive_mu", "non_robust"]}


def _figure_specs() -> dict:
    return {
        "fig5": {"name": "fig5", "scenario": {"geometry": {"N": 10}}, "outage": {"eta_db": 15.0},
                 "algorithms": SU_ALGORITHMS, "sweep": {"variable": "p_u", "values": [-4.0, 2.0, 6.0, 10.0]},
                 "full": {"scenario": {"geometry": {"N": 10}},
                          "sweep": {"values": [-10.0, -4.0, 2.0, 6.0, 10.0, 16.0]}}},
        "fig6": {"name": "fig6", "outage": {"eta_db": 15.0}, "algorithms": ["fixed_omega"],
                 "sweep": {"variable": "omega", "values": [float(w) for w in range(-40, 11, 5)]},
                 "full": {"sweep": {"values": [float(w) for w in range(-40, 11)]}}},
        "fig7": {"name": "fig7", "outage": {"eta_db": 15.0}, "algorithms": SU_DESK,
                 "sweep": {"variable": "p_u", "values": [2.0, 6.0, 10.0]},
                 "full": {"algorithms": SU_DESK, "sweep": {"values": [-10.0, -4.0, 2.0, 6.0, 10.0, 16.0]}}},
        "fig8": {"name": "fig8", "outage": {"eta_db": 15.0}, "algorithms": SU_DESK,
                 "sweep": {"variable": "eta", "values": [5.0, 10.0, 15.0]},
                 "full": {"sweep": {"values": [0.0, 5.0, 10.0, 15.0, 20.0]}}},
        "fig9": {"name": "fig9", "outage": {"eta_db": 15.0}, "algorithms": SU_DESK,
                 "sweep": {"variable": "epsilon", "values": [0.05, 0.1, 0.2]},
                 "full": {"sweep": {"values": [0.01, 0.05, 0.1, 0.2, 0.3]}}},
        "fig10": _merge(MU_BASE, {"name": "fig10", "scenario": {"geometry": {"K": 4}}, "algorithms": ["cssca"],
                                  "sweep": {"variable": "K", "values": [4]}, "n_draws": 3,
                                  "full": {"n_draws": 10}}),
        "fig11": _merge(MU_BASE, {"name": "fig11", "sweep": {"variable": "K", "values": [2, 4]},
                                  "full": {"sweep": {"values": [2, 4, 6, 8]}}}),
    }


FIGURES = ("fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "fig11", "region3", "region4", "nmse3")


def figure_spec(name: str, scale: str = "desk", seed: int = 0) -> ExperimentSpec:
    specs = _figure_specs()
    if name not in specs:
        raise ValueError(f"{name!r} is not a sweep figure; sweep figures: {sorted(specs)}")
    return ExperimentSpec(specs[name]).with_seed(seed).at_scale(scale)


def region_cloud(name: str, seed: int = 0, scale: str = "desk") -> list:
    """MSP-variance region points: ``region3`` (continuous phases, N=2) or ``region4`` (Q=1, N=12)."""
    if name == "region3":
        d = ExperimentSpec({"scenario": {"geometry": {"N": 2}},
                            "estimation": {"Q": None, "N_r": 4}}).data
        grid, Q = (64 if scale == "desk" else 256), None
    else:
        d = ExperimentSpec({"scenario": {"geometry": {"N": 12}}, "estimation": {"Q": 1, "N_r": 13}}).data
        grid, Q = None, 1
    inst = build_instance(d, seed, 0, 0)
    cloud = su.sweep_msp_variance_region(inst.H_bar[0], inst.error_models[0], inst.specs[0], Q=Q,
                                         grid=grid or 64)
    best = cloud.best
    return [{"index": i, "s1": float(a), "s2": float(b), "power_dbm": float(watt2dbm(p)),
             "best": int(i == best)} for i, (a, b, p) in enumerate(zip(cloud.s1, cloud.s2, cloud.p))]


def nmse_curve(seed: int = 0, scale: str = "desk", p_u_dbm=(-10.0, -4.0, 2.0, 6.0, 10.0)) -> list:
    """Average NMSE of the LS and LMMSE estimators versus the training power."""
    n_stats, n_draws = (2000, 200) if scale == "desk" else (10000, 1000)
    d = ExperimentSpec({"scenario": {"geometry": {"N": 8}}}).data
    geo, prop = geometry_of(d), propagation_of(d)
    samples = np.array([synthesize_scenario(geo, prop, _seed(seed, 1, i)).H_tilde for i in range(n_stats)])
    mean, cov = channel_statistics(samples)
    rows = []
    for i, pu_dbm in enumerate(p_u_dbm):
        d_i = _merge(d, {"estimation": {"p_u_dbm": float(pu_dbm)}})
        pattern, em = error_model_of(d_i)
        ls_err, lm_err = [], []
        est_ls, est_lm, truths = [], [], []
        for dr in range(n_draws):
            ch = synthesize_scenario(geo, prop, _seed(seed, 2, dr))
            rng = _seed(seed, 3, i, dr)
            est_ls.append(ls_estimate(ch, pattern, em.p_u, em.eps2, np.random.default_rng(rng)).H_bar)
            est_lm.append(lmmse_estimate(ch, pattern, em.p_u, em.eps2, mean, cov,
                                         np.random.default_rng(rng)).H_bar)
            truths.append(ch.H_tilde)
            ls_err.append(nmse(est_ls[-1], truths[-1]))
            lm_err.append(nmse(est_lm[-1], truths[-1]))
        rows.append({"p_u_dbm": float(pu_dbm), "nmse_ls_db": float(10 * np.log10(np.mean(ls_err))),
                     "nmse_lmmse_db": float(10 * np.log10(np.mean(lm_err)))})
    return rows


def reproduce_figure(name: str, out_dir=None, scale: str = "desk", seed: int = 0, threads: int = 1,
                     timing: bool = False) -> dict:
    """Emit the data series of a figure; returns ``{"rows": ..., "paths": [...]}``."""
    if name not in FIGURES:
        raise ValueError(f"unknown figure {name!r}; supported: {', '.join(FIGURES)}")
    out = None if out_dir is None else Path(out_dir)
    if name in ("region3", "region4", "nmse3"):
        rows = region_cloud(name, seed, scale) if name != "nmse3" else nmse_curve(seed, scale)
        paths = []
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"{name}.csv"
            path.write_text(rows_to_csv(rows, tuple(rows[0])))
            paths.append(path)
        return {"rows": rows, "paths": paths}
    spec = figure_spec(name, scale, seed)
    res = run_experiment(spec, out, threads=threads, timing=timing)
    rows = list(res.rows)
    if name == "fig6":
        # reference rows: WSMax at the fine and the coarse omega grid
        ref = ExperimentSpec(_merge(spec.to_dict(), {"algorithms": ["wsmax", "wsmax_coarse"],
                                                     "sweep": {"variable": "p_u",
                                                               "values": [spec.data["estimation"]["p_u_dbm"]]}}))
        extra = run_experiment(ref, None if out is None else out / "wsmax_reference", threads=threads,
                               timing=timing)
        rows += extra.rows
    paths = [] if out is None else sorted(out.rglob("*.csv"))
    return {"rows": rows, "paths": paths, "traces": res.traces}
