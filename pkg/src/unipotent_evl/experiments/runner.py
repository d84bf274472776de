"""Execute an :class:`ExperimentConfig`: sample, measure, compare with the
oracle and write JSONL observations, CSV summaries, a JSON manifest and
SVG plots.

Numerical outputs depend only on the config: sample ``i`` always uses
stream ``i`` of the run seed, whatever the number of workers.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import logging
import math
import platform
import time
from pathlib import Path

import numpy as np

from .. import __version__
from ..extremes import evl_statistic, loglaw_track
from ..lattice import EnumerationCapError, enumerate_points, ball_region, enumeration_cap, NormPair
from ..oracle import (
    bootstrap_slope,
    cone_threshold,
    eta_X,
    fkm_rescaled_radius,
    kappa,
    psi0_curve,
    psi_N_oracle,
    tail_report,
)
from ..parallel import pmap
from ..sampling import (
    RngStream,
    sample,
    with_push,
    zeta,
)
from ..sections import BoxWindow, InnerBall, first_hit, joint_count_event
from .config import ExperimentConfig
from .stats import EmpiricalDist, compare

log = logging.getLogger(__name__)

OBS_FILE = "observations.jsonl"
SUMMARY_FILE = "summary.csv"
MANIFEST_FILE = "manifest.json"


# -- workers (module level so they pickle) ---------------------------------------


def _guard(fn, *args):
    """Run one observation; cap violations are recorded, not raised."""
    try:
        return fn(*args)
    except EnumerationCapError as exc:
        return {"error": "cap", "detail": str(exc)}


def _diag_obs(spec, radius, norms, cap, seed, i):
    with enumeration_cap(cap):
        x = sample(spec, RngStream(seed, i))
        ps = enumerate_points(x, ball_region(x.dims.n, radius, NormPair(norms.outer, norms.inner)),
                              primitive_only=True)
    N = len(ps)
    return {"i": i, "count": N, "pairs": N * (N - 2) if N >= 2 else 0}


def _hits_obs(spec, W, Ls, norms, doublings, cap, seed, i):
    rows = []
    with enumeration_cap(cap):
        x = sample(spec, RngStream(seed, i))
        for L in Ls:
            s0 = 0.25 * L ** (x.dims.n / x.dims.k)
            rec = first_hit(x, W, L, norms, s_start=s0, budget=s0 * 2.0**doublings)
            row = {"i": i, "L": L, "censored": rec is None}
            if rec is not None:
                row["statistic"] = rec.snorm * L ** (-x.dims.n / x.dims.k)
                row["hit"] = rec.to_json()
            rows.append(row)
    return rows


def _joint_obs(spec, W, Ls, A_list, counts, cap, seed, i):
    with enumeration_cap(cap):
        x = sample(spec, RngStream(seed, i))
        return [{"i": i, "L": L, "event": joint_count_event(x, A_list, counts, W, L)} for L in Ls]


def _evl_obs(spec, Ts, norms, cap, seed, i):
    with enumeration_cap(cap):
        x = sample(spec, RngStream(seed, i))
        out = []
        for T in Ts:
            ob = evl_statistic(x, T, norms)
            out.append({"i": i, **ob.to_json()})
        return out


def _loglaw_obs(spec, Ts, norms, cap, seed, i):
    with enumeration_cap(cap):
        x = sample(spec, RngStream(seed, i))
        return {"i": i, "T": list(Ts), "ratio": loglaw_track(x, Ts, norms)}


def _fkm_obs(spec, k, m, aspect, R_max, cap, seed, i):
    with enumeration_cap(cap):
        x = sample(spec, RngStream(seed, i))
        th = cone_threshold(x, k, m, aspect, R_max, R_start=min(0.5, R_max))
    return {"i": i, "threshold": th if math.isfinite(th) else None}


# -- helpers ---------------------------------------------------------------------------


def _flatten(rows):
    out = []
    for r in rows:
        if isinstance(r, list):
            out.extend(r)
        else:
            out.append(r)
    return out


def _write_jsonl(path: Path, rows) -> None:
    with path.open("w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True, allow_nan=False) + "\n")


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_value(r.get(k)) for k in keys})


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v)
    return "" if v is None else v


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "unipotent_evl": __version__}


def _quantile_grid(values: np.ndarray, points: int = 399) -> np.ndarray:
    q = np.linspace(0.0025, 0.9975, points)
    g = np.unique(np.quantile(values, q))
    return g


def _plot_ecdf(path: Path, emp: EmpiricalDist, x: np.ndarray, F: np.ndarray, title: str, xlabel: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "unipotent-evl"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.step(emp.values, np.arange(1, len(emp.values) + 1) / emp.N, where="post", label="empirical")
    ax.plot(x, F, label="oracle")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("CDF")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _plot_loglog(path: Path, x, y, title: str, xlabel: str, ylabel: str, logx: bool = True) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "unipotent-evl"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, y, "o-")
    if logx:
        ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# -- kinds -------------------------------------------------------------------------------


def _run_diag(cfg: ExperimentConfig, out: Path, threads: int):
    radius = float(cfg.params.get("radius", 1.0))
    rogers = bool(cfg.params.get("rogers", cfg.dims.n >= 3))
    base = cfg.sampler_spec()
    pushes = cfg.params.get("push_times")
    specs = [(None, base)] if not pushes else [(float(t), with_push(base, t)) for t in pushes]
    from ..lattice import unit_ball_volume

    vol = unit_ball_volume(cfg.dims.n, cfg.norms.outer) * radius ** cfg.dims.n
    ref1 = vol / zeta(cfg.dims.n)
    obs, summary = [], []
    for t, spec in specs:
        rows = pmap(functools.partial(_guard, _diag_obs, spec, radius, cfg.norms, cfg.cap, cfg.seed),
                    range(cfg.Nsamples), threads)
        good = [r for r in rows if "error" not in r]
        for r in rows:
            r["push_time"] = t
        obs.extend(rows)
        N = len(good)
        stats = [("siegel", np.array([r["count"] for r in good], float), ref1)]
        if rogers:
            stats.append(("rogers", np.array([r["pairs"] for r in good], float), ref1**2))
        for name, v, ref in stats:
            est = float(v.mean()) if N else math.nan
            se = float(v.std(ddof=1) / math.sqrt(N)) if N > 1 else math.nan
            summary.append({"statistic": name, "push_time": t, "radius": radius, "estimate": est,
                            "stderr": se, "reference": ref, "z": (est - ref) / se if se else math.nan,
                            "N": N, "cap_errors": len(rows) - N})
    return obs, summary, {}


def _oracle_curve_F(cfg: ExperimentConfig, W, X: np.ndarray, threads: int):
    spec = cfg.oracle_spec()
    N = int(cfg.oracle.get("Nsamples", max(cfg.Nsamples, 1000)))
    with enumeration_cap(cfg.cap):
        curve = psi0_curve(X, W, cfg.dims, cfg.norms, spec, N, threads=threads)
    return curve


def _run_hits(cfg: ExperimentConfig, out: Path, threads: int):
    W = cfg.window_obj()
    Ls = [float(L) for L in cfg.grids["L"]]
    rows = pmap(functools.partial(_guard, _hits_obs, cfg.sampler_spec(), W, Ls, cfg.norms,
                                  cfg.budget_doublings, cfg.cap, cfg.seed), range(cfg.Nsamples), threads)
    obs = _flatten(rows)
    stats = {L: [o.get("statistic") for o in obs if o.get("L") == L and "error" not in o] for L in Ls}
    emps = {L: EmpiricalDist.from_observations(v) for L, v in stats.items()}
    allv = np.concatenate([e.values for e in emps.values() if len(e.values)] or [np.array([1.0])])
    X = np.asarray(cfg.grids.get("X") or _quantile_grid(allv[allv > 0] if np.any(allv > 0) else allv + 1))
    X = np.sort(X[X > 0])
    curve = _oracle_curve_F(cfg, W, X, threads)
    F = 1.0 - curve.values(X)
    se = curve.stderrs(X)
    summary = []
    for L in Ls:
        emp = emps[L]
        row = {"L": L, "N": emp.N, "censored": emp.censored}
        try:
            row.update(compare(emp, np.column_stack([X, F, se]), oracle_N=curve.N))
        except ValueError as exc:
            row["error"] = str(exc)
        summary.append(row)
        if len(emp.values):
            _plot_ecdf(out / f"hits_L{L:g}.svg", emp, X, F, f"first hit, L={L:g}", "L^{-n/k}|xi_1|")
    return obs, summary, {"oracle_N": curve.N}


def _run_joint(cfg: ExperimentConfig, out: Path, threads: int):
    W = cfg.window_obj()
    Ls = [float(L) for L in cfg.grids["L"]]
    radii = cfg.params.get("A", [1.0])
    counts = cfg.params.get("counts", [0] * len(radii))
    A_list = [InnerBall(float(r), cfg.norms.inner) for r in radii]
    rows = pmap(functools.partial(_guard, _joint_obs, cfg.sampler_spec(), W, Ls, A_list, counts, cfg.cap,
                                  cfg.seed), range(cfg.Nsamples), threads)
    obs = _flatten(rows)
    N_or = int(cfg.oracle.get("Nsamples", max(cfg.Nsamples, 1000)))
    with enumeration_cap(cfg.cap):
        orc = psi_N_oracle(A_list, counts, W, cfg.dims, cfg.norms, cfg.oracle_spec(), N_or, threads=threads)
    summary = []
    for L in Ls:
        ev = [o["event"] for o in obs if o.get("L") == L and "event" in o]
        N = len(ev)
        p = sum(ev) / N
        se = math.sqrt(p * (1 - p) / N)
        tot = math.sqrt(se**2 + orc.stderr**2)
        summary.append({"L": L, "N": N, "frequency": p, "stderr": se, "oracle": orc.value,
                        "oracle_stderr": orc.stderr, "z": (p - orc.value) / tot if tot else 0.0})
    return obs, summary, {}


def _run_impact(cfg: ExperimentConfig, out: Path, threads: int):
    W = cfg.window_obj()
    Ls = [float(L) for L in cfg.grids["L"]]
    Xs = [float(X) for X in cfg.grids["X"]]
    sub = cfg.params.get("Bsub")
    if sub is None:
        lo, hi = W.bbox()
        hi = hi.copy()
        hi[-1] = hi[-1] / 2
        Bsub = BoxWindow(cfg.dims, tuple(lo), tuple(hi))
    else:
        Bsub = BoxWindow(cfg.dims, tuple(sub["lo"]), tuple(sub["hi"]))
    rows = pmap(functools.partial(_guard, _hits_obs, cfg.sampler_spec(), W, Ls, cfg.norms,
                                  cfg.budget_doublings, cfg.cap, cfg.seed), range(cfg.Nsamples), threads)
    obs = _flatten(rows)
    summary = []
    for L in Ls:
        sel = [o for o in obs if o.get("L") == L and "error" not in o]
        cens = sum(o["censored"] for o in sel)
        for X in Xs:
            ev = [(not o["censored"]) and o["statistic"] > X and bool(Bsub.contains(o["hit"]["w"])[0])
                  for o in sel]
            N = len(sel)
            p = sum(ev) / N
            summary.append({"L": L, "X": X, "N": N, "censored": cens, "frequency": p,
                            "stderr": math.sqrt(p * (1 - p) / N)})
    return obs, summary, {"Bsub": Bsub.to_dict()}


def _run_evl(cfg: ExperimentConfig, out: Path, threads: int):
    Ts = [float(T) for T in cfg.grids["T"]]
    rows = pmap(functools.partial(_guard, _evl_obs, cfg.sampler_spec(), Ts, cfg.norms, cfg.cap, cfg.seed),
                range(cfg.Nsamples), threads)
    obs = _flatten(rows)
    emps = {T: EmpiricalDist.from_observations([o.get("rescaled") for o in obs if o.get("T") == T])
            for T in Ts}
    allv = np.concatenate([e.values for e in emps.values()])
    Y = np.sort(np.asarray(cfg.grids.get("Y") or _quantile_grid(allv)))
    X = eta_X(Y, cfg.dims)
    from ..sections import ProjectedBallWindow

    W = ProjectedBallWindow(cfg.dims, cfg.norms.outer)
    curve = _oracle_curve_F(cfg, W, X, threads)
    F = curve.values(X)  # P(rescaled <= Y) = Psi_0(B_{exp(-(n/k) Y)})
    se = curve.stderrs(X)
    summary = []
    for T in Ts:
        emp = emps[T]
        row = {"T": T, "N": emp.N}
        try:
            row.update(compare(emp, np.column_stack([Y, F, se]), oracle_N=curve.N))
        except ValueError as exc:
            row["error"] = str(exc)
        summary.append(row)
        if len(emp.values):
            _plot_ecdf(out / f"evl_T{T:g}.svg", emp, Y, F, f"M_T - (k/n) log T, T={T:g}", "Y")
    return obs, summary, {"oracle_N": curve.N}


def _run_oracle(cfg: ExperimentConfig, out: Path, threads: int):
    W = cfg.window_obj()
    X = np.sort(np.asarray(cfg.grids["X"], dtype=float))
    spec = cfg.sampler_spec()
    with enumeration_cap(cfg.cap):
        curve = psi0_curve(X, W, cfg.dims, cfg.norms, spec, cfg.Nsamples, threads=threads)
    kap = kappa(cfg.dims, cfg.norms)
    obs = [{"i": i, "xi": (float(v) if math.isfinite(v) else None)} for i, v in enumerate(curve.xi)]
    p = curve.values(X)
    se = curve.stderrs(X)
    summary = [{"X": float(x), "psi0": float(a), "stderr": float(b), "one_minus_psi0": float(1 - a),
                "kappa_Xk": kap * x**cfg.dims.k} for x, a, b in zip(X, p, se)]
    return obs, summary, {"kappa": kap}


def _run_tails(cfg: ExperimentConfig, out: Path, threads: int):
    with enumeration_cap(cfg.cap):
        rep = tail_report(cfg.dims, cfg.norms, cfg.grids.get("X", [0.05]), cfg.grids.get("Y", []),
                          cfg.sampler_spec(), cfg.Nsamples, threads=threads,
                          large_X_grid=cfg.params.get("large_X"))
    (out / "tail_report.json").write_text(json.dumps(rep, indent=1, sort_keys=True))
    summary = [{"table": "small_X", **r} for r in rep["small_X"]]
    summary += [{"table": "eta_tail", **r} for r in rep["eta_tail"]]
    summary += [{"table": "large_X", **r} for r in rep.get("large_X", [])]
    rows = rep.get("large_X", [])
    if rows:
        _plot_loglog(out / "lower_tail.svg", [r["X"] for r in rows], [max(r["psi0"], 1e-300) for r in rows],
                     "Psi_0(B_X)", "X", "Psi_0")
    return [], summary, {"eta_slope": rep["eta_slope"], "large_X_slope": rep.get("large_X_slope"),
                         "kappa": rep["kappa"]}


def _run_fkm(cfg: ExperimentConfig, out: Path, threads: int):
    k, m = cfg.dims.k, cfg.dims.m
    Rs = np.sort(np.asarray(cfg.grids["R"], dtype=float))
    aspect = float(cfg.params.get("aspect", 1.0))
    spec = cfg.sampler_spec()
    rows = pmap(functools.partial(_guard, _fkm_obs, spec, k, m, aspect, float(Rs[-1]), cfg.cap, cfg.seed),
                range(cfg.Nsamples), threads)
    good = [r for r in rows if "error" not in r]
    th = np.array([math.inf if r["threshold"] is None else r["threshold"] for r in good])
    N = len(th)
    summary = []
    for R in Rs:
        p = float(np.mean(th > R))
        summary.append({"R": float(R), "F": p, "stderr": math.sqrt(p * (1 - p) / N), "N": N})
    extra = {}
    if len(Rs) > 1 and all(r["F"] > 0 for r in summary):
        s, lo, hi = bootstrap_slope(th, Rs, np.log(Rs), seed=cfg.seed)
        extra["slope"] = {"slope": s, "ci": [lo, hi], "expected": -cfg.dims.n * (cfg.dims.n - 1) / k}
        _plot_loglog(out / "fkm.svg", Rs, [r["F"] for r in summary], "F_{k,m}(R)", "R", "F")
    resc = cfg.params.get("rescale")
    if resc:
        R, S = float(resc["R"]), float(resc["S"])
        Rp = fkm_rescaled_radius(R, S, k, m)
        th2 = pmap(functools.partial(_guard, _fkm_obs, spec, k, m, S / R, R, cfg.cap, cfg.seed + 7919),
                   range(cfg.Nsamples), threads)
        v2 = np.array([math.inf if r.get("threshold") is None else r["threshold"] for r in th2 if "error" not in r])
        th3 = pmap(functools.partial(_guard, _fkm_obs, spec, k, m, 1.0, Rp, cfg.cap, cfg.seed + 104729),
                   range(cfg.Nsamples), threads)
        v3 = np.array([math.inf if r.get("threshold") is None else r["threshold"] for r in th3 if "error" not in r])
        p2, p3 = float(np.mean(v2 > R)), float(np.mean(v3 > Rp))
        se = math.sqrt(p2 * (1 - p2) / len(v2) + p3 * (1 - p3) / len(v3))
        extra["rescale"] = {"R": R, "S": S, "R_prime": Rp, "avoid_RS": p2, "F_R_prime": p3,
                            "z": (p2 - p3) / se if se else 0.0}
    return good, summary, extra


def _run_loglaw(cfg: ExperimentConfig, out: Path, threads: int):
    Ts = [float(T) for T in cfg.grids["T"]]
    rows = pmap(functools.partial(_guard, _loglaw_obs, cfg.sampler_spec(), Ts, cfg.norms, cfg.cap, cfg.seed),
                range(cfg.Nsamples), threads)
    good = [r for r in rows if "error" not in r]
    R = np.array([r["ratio"] for r in good])
    target = cfg.dims.k / cfg.dims.n
    summary = [{"T": T, "median_ratio": float(np.median(R[:, j])), "target": target, "N": len(good)}
               for j, T in enumerate(Ts)]
    return good, summary, {}


_KINDS = {
    "diag": _run_diag,
    "hits": _run_hits,
    "joint-counts": _run_joint,
    "impact": _run_impact,
    "evl": _run_evl,
    "oracle": _run_oracle,
    "tails": _run_tails,
    "fkm": _run_fkm,
    "loglaw": _run_loglaw,
}


def run(cfg: ExperimentConfig, out: str | Path | None = None, threads: int | None = None) -> Path:
    """Run ``cfg`` and write its result files; returns the output directory."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = cfg.threads if threads is None else threads
    t0 = time.perf_counter()
    log.info("running %s experiment (n=%d, k=%d) into %s", cfg.kind, cfg.dims.n, cfg.dims.k, out)
    obs, summary, extra = _KINDS[cfg.kind](cfg, out, threads)
    _write_jsonl(out / OBS_FILE, obs)
    _write_csv(out / SUMMARY_FILE, summary)
    (out / "extra.json").write_text(json.dumps(extra, sort_keys=True, indent=1))
    cfg.save(out / "config.yaml")
    errors = sum(1 for o in obs if isinstance(o, dict) and "error" in o)
    manifest = {
        "config": cfg.to_dict(),
        "versions": _versions(),
        "seeds": {"run": cfg.seed, "oracle": cfg.oracle_spec().seed},
        "threads": threads,
        "wall_time_s": time.perf_counter() - t0,
        "observations": len(obs),
        "cap_errors": errors,
        "hashes": {f: _sha256(out / f) for f in (OBS_FILE, SUMMARY_FILE, "extra.json")},
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    log.info("done in %.1fs", manifest["wall_time_s"])
    return out


def run_manifest(path: str | Path, out: str | Path | None = None, threads: int | None = None) -> Path:
    """Re-run the experiment recorded in a manifest."""
    data = json.loads(Path(path).read_text())
    cfg = ExperimentConfig.from_dict(data["config"])
    return run(cfg, out, threads)
