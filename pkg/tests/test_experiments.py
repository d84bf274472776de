from __future__ import annotations

import json
import math

import numpy as np
import pytest

from unipotent_evl.experiments.cli import main
from unipotent_evl.experiments.config import ConfigError, ExperimentConfig
from unipotent_evl.experiments.report import render_markdown
from unipotent_evl.experiments.runner import run, run_manifest
from unipotent_evl.experiments.stats import (
    EmpiricalDist,
    InsufficientDataError,
    compare,
    dkw_epsilon,
    ks_allowance,
)
from unipotent_evl.lattice import NormPair, SplitDims

D2 = SplitDims(2, 1, 0)
D3 = SplitDims(3, 1, 1)


def small_cfg(kind="hits", **kw):
    base = dict(kind=kind, dims=D2, sampler={"kind": "ac-gaussian"}, grids={"L": [4.0, 16.0]},
                Nsamples=40, seed=3, oracle={"Nsamples": 200})
    base.update(kw)
    return ExperimentConfig(**base)


# -- config ---------------------------------------------------------------------


def test_config_roundtrip():
    cfg = small_cfg(norms=NormPair("sup", "euclidean"), params={"A": [0.5, 1.0]}, threads=2)
    again = ExperimentConfig.loads(cfg.dump())
    assert again.to_dict() == cfg.to_dict()
    assert again.dump() == cfg.dump()


def test_config_file_roundtrip(tmp_path):
    cfg = small_cfg("evl", dims=D3, sampler={"kind": "haar-mixing-push", "push_time": 4.0},
                    grids={"T": [10.0, 100.0]})
    p = tmp_path / "c.yaml"
    cfg.save(p)
    assert ExperimentConfig.load(p).to_dict() == cfg.to_dict()
    assert ExperimentConfig.load(p).sampler_spec().effective_push_time == 4.0


@pytest.mark.parametrize("text", [
    "kind: nope\ndims: {n: 2, k: 1, m: 0}\n",
    "kind: hits\ndims: {n: 2, k: 1, m: 0}\ngrids: {L: [0.5]}\n",
    "kind: hits\ndims: {n: 2, k: 1, m: 0}\n",
    "kind: evl\ndims: {n: 2, k: 1, m: 0}\ngrids: {T: [0.5]}\n",
    "kind: diag\ndims: {n: 3, k: 1, m: 0}\n",
    "kind: diag\ndims: {n: 2, k: 1, m: 0}\nbogus: 1\n",
    "kind: diag\ndims: {n: 2, k: 1, m: 0}\nsampler: {kind: magic}\n",
    "kind: diag\ndims: {n: 7, k: 1, m: 5}\n",
    "kind: diag\ndims: {n: 2, k: 1, m: 0}\ngrids: {Q: [1]}\n",
    "kind: diag\ndims: {n: 2, k: 1, m: 0}\nNsamples: 0\n",
    "- a list\n",
])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.loads(text)


def test_oracle_spec_defaults():
    assert small_cfg().oracle_spec().kind == "haar-exact-n2"
    assert small_cfg().oracle_spec().seed == 4
    assert small_cfg("evl", dims=D3, grids={"T": [10.0]}).oracle_spec().kind == "haar-mixing-push"


# -- statistics -------------------------------------------------------------------


def test_dkw_values():
    assert dkw_epsilon(1000) == pytest.approx(math.sqrt(math.log(40) / 2000))
    assert ks_allowance(1000, None) == pytest.approx(dkw_epsilon(1000))
    assert ks_allowance(1000, 1000) == pytest.approx(math.sqrt(2) * dkw_epsilon(1000))


def test_ecdf_and_censoring():
    e = EmpiricalDist.from_observations([0.5, None, 1.5, math.inf, 1.0])
    assert e.N == 5 and e.censored == 2 and e.censoring_rate == 0.4
    assert list(e.ecdf([0.0, 1.0, 10.0])) == [0.0, 0.4, 0.6]
    with pytest.raises(ValueError):
        EmpiricalDist(np.array([1.0, np.inf]))


def test_compare_dkw_coverage():
    rng = np.random.default_rng(1)
    x = np.linspace(0, 1, 201)
    curve = np.column_stack([x, x, np.zeros_like(x)])
    passes = sum(compare(EmpiricalDist(rng.uniform(size=500)), curve)["dkw_pass"] for _ in range(100))
    assert passes >= 95


def test_compare_degenerate_oracle():
    rng = np.random.default_rng(2)
    v = rng.uniform(size=300)
    x = np.linspace(0.01, 1, 50)
    res = compare(EmpiricalDist(v), np.column_stack([x, np.ones_like(x), np.zeros_like(x)]))
    assert res["KS"] == pytest.approx(1 - EmpiricalDist(v).ecdf(x).min())
    assert not res["dkw_pass"]


def test_compare_insufficient():
    with pytest.raises(InsufficientDataError):
        compare(EmpiricalDist(np.arange(10.0)), [[0, 0, 0]])
    with pytest.raises(ValueError):
        compare(EmpiricalDist(np.arange(200.0)), [[0, 0]])


# -- runner -----------------------------------------------------------------------


def _hashes(d):
    return json.loads((d / "manifest.json").read_text())["hashes"]


def test_runner_files_and_determinism(tmp_path):
    cfg = small_cfg()
    a = run(cfg, tmp_path / "a")
    b = run(cfg, tmp_path / "b")
    for f in ("observations.jsonl", "summary.csv", "extra.json", "config.yaml", "manifest.json"):
        assert (a / f).exists()
    assert _hashes(a) == _hashes(b)
    man = json.loads((a / "manifest.json").read_text())
    assert man["seeds"] == {"run": 3, "oracle": 4}
    assert (a / "hits_L4.svg").read_bytes() == (b / "hits_L4.svg").read_bytes()
    c = run_manifest(a / "manifest.json", tmp_path / "c")
    assert _hashes(c) == _hashes(a)


def test_runner_threads_equivalence(tmp_path):
    cfg = small_cfg("evl", grids={"T": [10.0, 50.0]}, sampler={"kind": "haar-exact-n2"},
                    Nsamples=120, oracle={"Nsamples": 300})
    a = run(cfg, tmp_path / "a", threads=1)
    b = run(cfg, tmp_path / "b", threads=2)
    assert _hashes(a) == _hashes(b)


@pytest.mark.parametrize("kind,extra", [
    ("diag", dict(dims=D3, sampler={"kind": "haar-mixing-push"}, grids={}, params={"radius": 0.8})),
    ("joint-counts", dict(params={"A": [0.5, 1.0], "counts": [0, 1]})),
    ("impact", dict(grids={"L": [4.0], "X": [0.1, 1.0]})),
    ("oracle", dict(sampler={"kind": "haar-exact-n2"}, grids={"X": [0.1, 1.0]})),
    ("tails", dict(sampler={"kind": "haar-exact-n2"}, grids={"X": [0.1], "Y": [0.5, 1.0]},
                   params={"large_X": [1.0, 2.0]})),
    ("fkm", dict(dims=D3, sampler={"kind": "haar-mixing-push"}, grids={"R": [1.0, 2.0]},
                 params={"rescale": {"R": 2.0, "S": 1.0}})),
    ("loglaw", dict(grids={"T": [10.0, 100.0]})),
])
def test_runner_kinds(tmp_path, kind, extra):
    out = run(small_cfg(kind, **extra), tmp_path / kind)
    lines = (out / "summary.csv").read_text().splitlines()
    assert len(lines) >= 2
    assert "| " in render_markdown([out])


# -- CLI ----------------------------------------------------------------------------


def test_cli_sample(capsys):
    assert main(["sample", "--n", "3", "--N", "3", "--seed", "5"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert len(rows) == 3
    for r in rows:
        assert abs(np.linalg.det(np.array(r["basis"])) - 1) < 1e-9


@pytest.mark.parametrize("argv", [
    ["diag", "--n", "2", "--N", "100"],
    ["hits", "--n", "2", "--N", "30"],
    ["evl", "--n", "2", "--N", "30"],
    ["oracle", "--n", "2", "--N", "100"],
    ["tails", "--n", "2", "--N", "100"],
    ["fkm", "--n", "3", "--k", "1", "--N", "30"],
])
def test_cli_subcommands(tmp_path, argv):
    out = tmp_path / argv[0]
    assert main(argv + ["--out", str(out), "--seed", "1"]) == 0
    assert (out / "manifest.json").exists()
    assert main(["report", str(out), "--out", str(tmp_path / "rep"), "--format", "html"]) == 0
    assert (tmp_path / "rep").exists()


def test_cli_config_and_errors(tmp_path, capsys):
    cfg = small_cfg("oracle", sampler={"kind": "haar-exact-n2"}, grids={"X": [0.5]}, Nsamples=50)
    p = tmp_path / "c.yaml"
    cfg.save(p)
    assert main(["oracle", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert main(["evl", "--config", str(p)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("kind: hits\ndims: {n: 2, k: 1, m: 0}\n")
    assert main(["hits", "--config", str(bad)]) == 2
    assert "error" in capsys.readouterr().err
