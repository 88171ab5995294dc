"""Acceptance suite.

Each test checks one acceptance criterion and records a single
``criterion N: PASS|FAIL`` line. The lines are printed as the tests run and
repeated in the pytest terminal summary (see ``conftest.py``).

Run just this module with ``pytest tests/test_acceptance.py`` or
``python tests/test_acceptance.py``. The full pipeline run (criteria 1, 2, 7
and 8 share it) takes roughly 15 to 25 minutes on one CPU core.
"""

import dataclasses
import json
import math
import sys
import time

import numpy as np
import pytest

from opforge.campaign import (
    LhsDesign, derive_seed, filter_non_melting, load_dataset, lhs_sample, run_campaign,
)
from opforge.cli import main
from opforge.engine import fft
from opforge.heat_source import ProcessParams, ScanPath, line_source, point_source
from opforge.models import load_model
from opforge.sensitivity import (
    INTERACTION_LIMIT, interaction_check, rom_sobol, saltelli_sample, sobol_indices,
)
from opforge.thermal import GridSpec, MaterialProps, run_simulation
from opforge.training import monotonicity_violation, predict_series, relative_l2

from oracles import adaptive_simpson, direct_dft, gaussian_point, ishigami, ishigami_indices
from test_engine import PRIMITIVES, assert_grad, away_from_zero
from test_models import SMALL, _flat_grad_check

RESULTS = {}
KINDS = ("dnn", "fno", "deeponet")


def verdict(number, checks, detail=""):
    """Record and print one line for a criterion, then fail if any check failed."""
    failed = [name for name, ok in checks.items() if not ok]
    status = "FAIL" if failed else "PASS"
    line = f"criterion {number}: {status}"
    if failed:
        line += f" [failed: {', '.join(failed)}]"
    if detail:
        line += f" {detail}"
    RESULTS[number] = line
    print(line)
    assert not failed, line


# -- shared pipeline run ---------------------------------------------------------------

@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """500-sample campaign plus all three ROMs, produced through the CLI."""
    out = tmp_path_factory.mktemp("pipeline")
    (out / "campaign.yaml").write_text("n_samples: 500\nseed: 0\n")
    timings = {}
    start = time.perf_counter()
    assert main(["generate", "--config", str(out / "campaign.yaml"), "--out", str(out)]) == 0
    timings["generate"] = time.perf_counter() - start
    ds_path = str(out / "dataset.jsonl")
    for kind in KINDS:
        t = time.perf_counter()
        assert main(["train", "--dataset", ds_path, "--model-kind", kind, "--seed", "0",
                     "--out", str(out)]) == 0
        timings[kind] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - start
    models = {k: load_model(out / f"{k}_scalar.model.json") for k in KINDS}
    reports = {k: json.loads((out / f"{k}_scalar.report.json").read_text()) for k in KINDS}
    return {"dataset": load_dataset(ds_path), "models": models, "reports": reports,
            "timings": timings}


# -- 1: pipeline parity ----------------------------------------------------------------

def test_criterion_1_pipeline_parity(pipeline):
    ds, reports = pipeline["dataset"], pipeline["reports"]
    r2 = {(k, q): reports[k]["qois"][q]["r2"] for k in KINDS for q in ("v_bead", "t_mp")}
    rmse = {(k, q): reports[k]["qois"][q]["rmse"] for k in KINDS for q in ("v_bead", "t_mp")}
    beats = {k: any(rmse[(k, q)] <= rmse[("dnn", q)] for q in ("v_bead", "t_mp"))
             for k in ("fno", "deeponet")}
    sizes = tuple(len(ds.split[p]) for p in ("train", "val", "test"))
    n = len(ds) + ds.removed
    want_sizes = (math.floor(0.8 * len(ds)), math.floor(0.1 * len(ds)))
    checks = {
        "500 samples": n == 500,
        "split 80/10/10": sizes[:2] == want_sizes and sum(sizes) == len(ds),
        "R2 >= 0.99": min(r2.values()) >= 0.99,
        "FNO RMSE <= DNN on a QoI": beats["fno"],
        "DeepONet RMSE <= DNN on a QoI": beats["deeponet"],
        "runtime <= 30 min": pipeline["timings"]["total"] <= 1800,
    }
    detail = (f"(removed {ds.removed}, split {sizes}, min R2 {min(r2.values()):.4f}, "
              + ", ".join(f"{k}/{q} RMSE {v:.4g}" for (k, q), v in rmse.items())
              + f", {pipeline['timings']['total']:.0f} s)")
    verdict(1, checks, detail)


# -- 2: series case --------------------------------------------------------------------

def test_criterion_2_series(pipeline):
    ds = pipeline["dataset"]
    x = ds.inputs("test")
    truth = ds.series_targets("test")
    checks, parts = {}, []
    for kind in ("fno", "deeponet"):
        model = pipeline["models"][kind]
        cfg = model.config
        if kind == "fno":
            checks["FNO has 50 modes"] = cfg.modes == 50
        else:
            checks["DeepONet 3x130"] = (cfg.branch_widths[:-1] == [130] * 3
                                        and cfg.trunk_widths[:-1] == [130] * 3)
        pred = predict_series(model, x)
        checks[f"{kind} 200 steps"] = pred.shape[1] == 200
        for q, name in enumerate(("v_bead", "t_mp")):
            med = float(np.median(relative_l2(pred[..., q], truth[..., q])))
            checks[f"{kind} {name} median rel L2 <= 5%"] = med <= 0.05
            parts.append(f"{kind}/{name} median {100 * med:.2f}%")
        v = pred[..., 0]
        worst = float(np.max(monotonicity_violation(v) / np.abs(v[:, -1])))
        checks[f"{kind} monotone within 1%"] = worst <= 0.01
        parts.append(f"{kind} worst drop {100 * worst:.2f}% of final")
    verdict(2, checks, "(" + ", ".join(parts) + ")")


# -- 3: numerical substrate ------------------------------------------------------------

def test_criterion_3_numerical_substrate():
    rng = np.random.default_rng(3)
    checks = {}
    bad = []
    for name, (fn, shapes) in sorted(PRIMITIVES.items()):
        try:
            assert_grad(fn, *[away_from_zero(s) for s in shapes])
        except AssertionError:
            bad.append(name)
    checks["primitive gradients"] = not bad
    x = rng.random((3, 5))
    model_errs = {
        "dnn": _flat_grad_check("dnn", SMALL["dnn"], x),
        "deeponet": _flat_grad_check("deeponet", SMALL["deeponet"], x,
                                     times=np.array([0.25, 0.5, 1.0])),
        "fno": _flat_grad_check("fno", SMALL["fno"], x[:2], n_steps=12),
    }
    checks["model gradients"] = max(model_errs.values()) <= 1e-4
    fft_err, parseval_err = 0.0, 0.0
    for n in (16, 32, 64, 128, 256):
        z = rng.normal(size=n) + 1j * rng.normal(size=n)
        want = direct_dft(z)
        got = fft(z)
        fft_err = max(fft_err, np.max(np.abs(got - want)) / np.max(np.abs(want)))
        energy = np.sum(np.abs(z) ** 2)
        parseval_err = max(parseval_err, abs(energy - np.sum(np.abs(got) ** 2) / n) / energy)
    checks["FFT vs DFT <= 1e-10"] = fft_err <= 1e-10
    checks["Parseval <= 1e-10"] = parseval_err <= 1e-10
    verdict(3, checks, f"(model grad err {max(model_errs.values()):.1e}, FFT {fft_err:.1e}, "
                       f"Parseval {parseval_err:.1e}, bad primitives {bad})")


# -- 4: heat source --------------------------------------------------------------------

def test_criterion_4_heat_source():
    origin = (0.0, 1.0, 0.0)
    pp = ProcessParams(320.0, 0.015, 0.3, 0.35, 1.4)
    path = ScanPath.along_y(pp.v, origin)
    pts = np.array([[0.0, 1.0, 0.0], [0.1, 1.12, -0.05], [0.3, 0.9, -0.1],
                    [0.0, 1.075, -0.025]])
    t0 = 8.0
    limit = np.max(np.abs(line_source(pts, t0, 1e-6, pp, path) - point_source(pts, t0, pp, path))
                   / point_source(pts, t0, pp, path))
    lin = 0.0
    base = pp.as_dict()
    for name in ("P", "eta", "alpha"):
        double = ProcessParams(**dict(base, **{name: 2 * base[name]}))
        for fn in (lambda p: line_source(pts, 2.0, 30.0, p, path),
                   lambda p: point_source(pts, 2.0, p, path)):
            a, b = fn(pp), fn(double)
            lin = max(lin, np.max(np.abs(b - 2 * a) / np.abs(2 * a)))
    quad = 0.0
    for travel in (0.1, 0.5, 1.0, 2.0):
        dt = travel * pp.r / pp.v
        for x in pts:
            ref = adaptive_simpson(
                lambda t: gaussian_point(x, t, pp.P, pp.v, pp.r, pp.eta, pp.alpha, origin),
                5.0, 5.0 + dt, tol=1e-12) / dt
            quad = max(quad, abs(line_source(x, 5.0, dt, pp, path) - ref) / abs(ref))
    eps = np.finfo(float).eps
    checks = {
        "line -> point within 1e-6": limit <= 1e-6,
        "linear in P, eta, alpha": lin <= 4 * eps,
        "quadrature vs Simpson <= 1e-8": quad <= 1e-8,
    }
    verdict(4, checks, f"(limit {limit:.1e}, linearity {lin:.1e}, quadrature {quad:.1e})")


# -- 5: simulator invariants -----------------------------------------------------------

def test_criterion_5_simulator_invariants():
    mat = MaterialProps()
    small = GridSpec(nx=16, nz=6, dx=0.1, dz=0.08, scan_length=1.0, n_output_steps=5)
    rec, diag = run_simulation(ProcessParams.nominal(), grid=small, diagnostics=True,
                               record_history=True, source=lambda pts, *_: np.zeros(pts.shape[:-1]))
    equilibrium = (np.all(rec.t_mp == mat.T_ambient) and np.all(rec.v_bead == 0.0)
                   and all(np.all(f == mat.T_ambient) for f in diag.history))

    records = run_campaign(lhs_sample(LhsDesign(100, seed=derive_seed(5, "acceptance"))))
    monotone = sum(bool(np.all(np.diff(r.v_bead) >= 0)) for r in records)
    kept, _ = filter_non_melting(records)

    _, diag = run_simulation(ProcessParams.nominal(), diagnostics=True)
    balance = np.cumsum(diag.injected - diag.convective_loss - diag.substrate_loss)
    energy = float(np.max(np.abs(balance - diag.stored)) / np.sum(diag.injected))

    designs = lhs_sample(LhsDesign(4, seed=9))
    one = run_campaign(designs, worker_count=1)
    two = run_campaign(designs, worker_count=2)
    same = all(a.v_bead.tobytes() == b.v_bead.tobytes() and a.t_mp.tobytes() == b.t_mp.tobytes()
               for a, b in zip(one, two))
    checks = {
        "zero-source equilibrium exact": bool(equilibrium),
        "v_bead monotone on 100 runs": monotone == 100,
        "energy balance <= 1e-8": energy <= 1e-8,
        "worker count invariant": same,
    }
    verdict(5, checks, f"({monotone}/100 monotone, {len(kept)} melted, energy {energy:.1e})")


# -- 6: Sobol correctness --------------------------------------------------------------

def test_criterion_6_sobol_correctness():
    box = [(-math.pi, math.pi)] * 3
    t = time.perf_counter()
    res = sobol_indices(ishigami, saltelli_sample(box, 16384, seed=0))
    elapsed = time.perf_counter() - t
    s1, _ = ishigami_indices()
    ish = float(np.max(np.abs(res.s1[0] - s1)))
    unit = [(0.0, 1.0)] * 3
    add = sobol_indices(lambda x: np.sin(2 * x[:, 0]) + x[:, 1] ** 2 + np.exp(x[:, 2]),
                        saltelli_sample(unit, 8192, seed=2))
    dummy = sobol_indices(lambda x: 3 * x[:, 0] + x[:, 1] ** 3, saltelli_sample(unit, 4096, seed=3))
    total = float(add.s1[0].sum())
    checks = {
        "Ishigami S1 within 0.05": ish <= 0.05,
        "Ishigami under 1 min": elapsed <= 60,
        "additive sum S1 in [0.98, 1.02]": 0.98 <= total <= 1.02,
        "dummy S1 <= 0.02": abs(dummy.s1[0, 2]) <= 0.02,
    }
    verdict(6, checks, f"(Ishigami max err {ish:.3f} in {elapsed:.1f} s, additive sum {total:.4f}, "
                       f"dummy S1 {dummy.s1[0, 2]:.4f})")


# -- 7: Sobol on the trained ROMs ------------------------------------------------------

def test_criterion_7_rom_sobol(pipeline):
    results = {k: rom_sobol(pipeline["models"][k], n_base=1024, seed=0) for k in KINDS}
    checks, parts = {}, []
    for kind, res in results.items():
        checks[f"{kind} ST >= S1 - 0.02"] = bool(np.all(res.st >= res.s1 - 0.02))
        sums = interaction_check(res).total_sum
        checks[f"{kind} sum ST <= {INTERACTION_LIMIT}"] = max(sums.values()) <= INTERACTION_LIMIT
        parts.append(f"{kind} sum ST " + "/".join(f"{v:.3f}" for v in sums.values()))
    for qoi in ("v_bead", "t_mp"):
        tops = {k: res.top_input(qoi) for k, res in results.items()}
        checks[f"top input agrees for {qoi}"] = len(set(tops.values())) == 1
        parts.append(f"top {qoi} " + "/".join(tops.values()))
    verdict(7, checks, "(" + ", ".join(parts) + ")")


# -- 8: FNO resolution change ----------------------------------------------------------

def test_criterion_8_fno_resolution(pipeline):
    fno = pipeline["models"]["fno"]
    x = pipeline["dataset"].inputs("test")
    coarse = predict_series(fno, x)
    fine = predict_series(dataclasses.replace(fno, n_steps=2 * fno.n_steps), x)[:, 1::2]
    errs = np.stack([relative_l2(fine[..., q], coarse[..., q]) for q in range(2)], axis=1)
    share = float(np.mean(np.all(errs <= 0.05, axis=1)))
    verdict(8, {"90% within 5%": share >= 0.9},
            f"({100 * share:.0f}% of test samples, median errors "
            f"{100 * np.median(errs[:, 0]):.2f}% / {100 * np.median(errs[:, 1]):.2f}%)")


# -- 9: reproducibility ----------------------------------------------------------------

def _all_commands(root, out):
    ds = str(root / "data" / "dataset.jsonl")
    out = str(out)
    runs = [
        ["generate", "--config", str(root / "campaign.yaml"), "--out", out],
        ["train", "--dataset", ds, "--model-kind", "dnn", "--epochs", "5", "--out", out],
        ["train", "--dataset", ds, "--model-kind", "fno", "--target", "series",
         "--config", str(root / "fno.yaml"), "--out", out],
        ["train", "--dataset", ds, "--model-kind", "deeponet",
         "--config", str(root / "don.yaml"), "--out", out],
        ["evaluate", "--dataset", ds, "--model", f"{out}/dnn_scalar.model.json", "--out", out],
        ["evaluate", "--dataset", ds, "--model", f"{out}/fno_series.model.json",
         "--target", "series", "--split", "val", "--out", out],
        ["hypersearch", "--dataset", ds, "--model-kind", "dnn", "--groups", "4,5",
         "--epochs", "3", "--out", out],
        ["sensitivity", "--model", f"{out}/fno_series.model.json", "--n-base", "64",
         "--out", out],
    ]
    return [main(argv) for argv in runs]


def test_criterion_9_reproducibility(tmp_path):
    (tmp_path / "campaign.yaml").write_text(
        "n_samples: 14\nseed: 5\nnx: 48\nnz: 8\nn_output_steps: 16\n")
    (tmp_path / "fno.yaml").write_text(
        "modes: 4\nwidth: 4\nn_layers: 1\ngrid_len: 16\nproj_hidden: 4\nepochs: 3\n")
    (tmp_path / "don.yaml").write_text(
        "branch_widths: [8, 8]\ntrunk_widths: [8, 8]\nlatent_dim: 8\nepochs: 3\n")
    assert main(["generate", "--config", str(tmp_path / "campaign.yaml"),
                 "--out", str(tmp_path / "data")]) == 0
    codes = _all_commands(tmp_path, tmp_path / "a") + _all_commands(tmp_path, tmp_path / "b")
    a = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "manifest.json")
    b = sorted(p.name for p in (tmp_path / "b").iterdir() if p.name != "manifest.json")
    differ = [n for n in a if n in b
              and (tmp_path / "a" / n).read_bytes() != (tmp_path / "b" / n).read_bytes()]
    checks = {
        "all commands succeed": all(c == 0 for c in codes),
        "same artifact set": a == b,
        "byte-identical artifacts": not differ,
    }
    verdict(9, checks, f"({len(a)} artifacts compared, differing: {differ})")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
