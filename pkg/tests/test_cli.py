import csv
import json

import numpy as np
import pytest

from durr import policy as P
from durr import restorer as R
from durr.cli import main as M
from durr.cli.checkpoint import checkpoint_load, checkpoint_save
from durr.cli.evaluate import (StopRule, UnknownPolicyError, eval_durr, eval_peak_psnr, evaluate,
                               export_trajectory)
from durr.degradation import degrade, metric_psnr, metric_ssim, read_pgm, synthetic_corpus, write_pgm
from durr.tensorcore import NonFiniteError


@pytest.fixture(scope="module")
def corpus():
    return synthetic_corpus(3, 24, 0)


@pytest.fixture()
def zero_restorer():
    p = R.build_restoration_unit(R.RestorerArch(0.25), 0)
    p["head.weight"].data[...] = 0
    p["head.bias"].data[...] = 0
    return p


@pytest.fixture()
def restorer():
    return R.build_restoration_unit(R.RestorerArch(0.25), 0)


# ---------------------------------------------------------------- stop-rule parsing

def test_stop_rule_parse():
    assert StopRule.parse("fixed:12") == StopRule("fixed", 12)
    assert StopRule.parse(" oracle ").label == "oracle"
    for bad in ("fixed", "fixed:x", "greedy", "fixed:-1"):
        with pytest.raises(UnknownPolicyError):
            StopRule.parse(bad)


# ---------------------------------------------------------------- evaluation harness

def test_fixed_zero_equals_degraded_metrics(corpus, restorer):
    rep = eval_durr(corpus, restorer, "fixed:0", [25], seed=4)
    row = rep.row(25.0, "fixed:0")
    noisy = [degrade(c, "gaussian", 25, seed=M_seed(4, 0, i)) for i, c in enumerate(corpus)]
    assert row.psnr == pytest.approx(np.mean([metric_psnr(n, c) for n, c in zip(noisy, corpus)]), abs=1e-12)
    assert row.ssim == pytest.approx(np.mean([metric_ssim(n, c) for n, c in zip(noisy, corpus)]), abs=1e-12)
    assert row.stop == 0 and row.count == 3


def M_seed(seed, li, i):
    from durr.cli.evaluate import _image_seed

    return _image_seed(seed, li, i)


def test_oracle_dominates_every_rule(corpus, restorer):
    specs = ["oracle", "decorr", "fixed:0", "fixed:2", "fixed:5"]
    rep = evaluate(corpus, restorer, specs, [15, 35], max_steps=6, seed=1)
    for lv in (15.0, 35.0):
        best = rep.row(lv, "oracle").psnr
        assert all(rep.row(lv, s).psnr <= best + 1e-12 for s in specs)
        assert {r.count for r in rep.rows} == {3}


def test_zero_residual_peak_is_input(corpus, zero_restorer):
    rep = eval_peak_psnr(corpus, zero_restorer, [15, 45], max_steps=4, seed=2)
    for li, lv in enumerate((15.0, 45.0)):
        noisy = [degrade(c, "gaussian", lv, seed=M_seed(2, li, i)) for i, c in enumerate(corpus)]
        assert rep.row(lv, "oracle").psnr == pytest.approx(np.mean([metric_psnr(n, c) for n, c in
                                                                    zip(noisy, corpus)]), abs=1e-12)
        assert rep.row(lv, "oracle").stop == 0


def test_eval_errors(corpus, restorer):
    with pytest.raises(ValueError):
        evaluate([], restorer, ["oracle"], [25])
    with pytest.raises(UnknownPolicyError):
        evaluate(corpus, restorer, ["bogus"], [25])
    with pytest.raises(ValueError):
        evaluate(corpus, restorer, ["dqn"], [25])


def test_dqn_rule_uses_policy(corpus, restorer):
    pol = P.build_policy_unit(P.PolicyArch(0.25), 0)
    for k, t in pol.items():
        t.data[...] = 0
    pol["fc.bias"].data[...] = -1
    rep = evaluate(corpus, restorer, ["dqn", "fixed:0"], [25], max_steps=5, policy=pol)
    assert rep.row(25.0, "dqn").psnr == rep.row(25.0, "fixed:0").psnr
    pol["fc.bias"].data[...] = 1
    rep = evaluate(corpus, restorer, ["dqn", "fixed:5"], [25], max_steps=5, policy=pol)
    assert rep.row(25.0, "dqn").stop == 5
    assert rep.row(25.0, "dqn").psnr == rep.row(25.0, "fixed:5").psnr


def test_jpeg_levels(corpus, restorer):
    rep = evaluate(corpus, restorer, ["fixed:0"], [20], kind="jpeg")
    assert rep.row(20.0, "fixed:0").psnr == pytest.approx(
        np.mean([metric_psnr(degrade(c, "jpeg", 20), c) for c in corpus]))


def test_detail_reproduces_summary(corpus, restorer, tmp_path):
    rep = evaluate(corpus, restorer, ["oracle", "decorr", "fixed:3"], [25, 35], max_steps=5, seed=3)
    path = tmp_path / "detail.csv"
    path.write_text(rep.detail_text())
    rows = list(csv.DictReader(path.open()))
    for r in rep.rows:
        mine = [d for d in rows if float(d["level"]) == r.level and d["policy"] == r.policy]
        assert len(mine) == r.count
        assert np.mean([float(d["psnr"]) for d in mine]) == pytest.approx(r.psnr, abs=1e-9)
        assert np.mean([float(d["ssim"]) for d in mine]) == pytest.approx(r.ssim, abs=1e-9)
        assert np.mean([int(d["stop"]) for d in mine]) == pytest.approx(r.stop, abs=1e-9)


def test_summary_csv_format(corpus, restorer):
    text = evaluate(corpus, restorer, ["fixed:1"], [25]).csv_text()
    head, row = text.splitlines()
    assert head == "level,policy,mean_psnr,mean_ssim,mean_stop,count"
    fields = row.split(",")
    assert fields[0] == "25" and fields[1] == "fixed:1" and fields[5] == "3"
    assert len(fields[2].replace(".", "")) <= 6


# ---------------------------------------------------------------- trajectory export

def test_export_zero_steps(tmp_path, restorer, corpus):
    export_trajectory(corpus[0], restorer, 0, tmp_path / "t.csv", tmp_path / "img")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines == ["step", "0"]
    assert sorted(p.name for p in (tmp_path / "img").iterdir()) == ["step_000.pgm"]


def test_export_zero_residual_constant_psnr(tmp_path, zero_restorer, corpus):
    clean = corpus[1]
    noisy = degrade(clean, "gaussian", 30, seed=0)
    pol = P.build_policy_unit(P.PolicyArch(0.25), 0)
    export_trajectory(noisy, zero_restorer, 4, tmp_path / "t.csv", tmp_path / "img", clean, pol)
    rows = list(csv.DictReader((tmp_path / "t.csv").open()))
    assert list(rows[0]) == ["step", "psnr", "ssim", "q_continue"]
    assert len(rows) == 5 and len({r["psnr"] for r in rows}) == 1
    assert len(list((tmp_path / "img").iterdir())) == 5
    np.testing.assert_allclose(read_pgm(tmp_path / "img" / "step_004.pgm"), np.round(noisy * 255) / 255)


def test_export_unwritable_path(restorer, corpus, tmp_path):
    with pytest.raises(OSError):
        export_trajectory(corpus[0], restorer, 1, tmp_path / "missing" / "t.csv")


# ---------------------------------------------------------------- command line

def run(argv, capsys=None):
    code = M.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


def test_cli_end_to_end(tmp_path, capsys):
    data = tmp_path / "data"
    assert run(["gen-corpus", "--out", data, "--count", 4, "--size", 24], capsys)[0] == 0
    assert len(list(data.iterdir())) == 4
    img = sorted(data.iterdir())[0]

    noisy = tmp_path / "noisy.pgm"
    assert run(["degrade", "--input", img, "--out", noisy, "--sigma", 25, "--seed", 1], capsys)[0] == 0
    assert read_pgm(noisy).shape == (24, 24)
    blocky = tmp_path / "blocky.pgm"
    assert run(["degrade", "--input", img, "--out", blocky, "--task", "deblock", "--qf", 20], capsys)[0] == 0

    rck, log = tmp_path / "r.ckpt", tmp_path / "r.csv"
    common = ["--corpus", data, "--val-corpus", data, "--batch", 2, "--patch", 16, "--eval-every", 2,
              "--val-patches", 2]
    code, _ = run(["train-restorer", "--schedule", "15:1,35:2", "--iterations", 2, "--out", rck, "--log", log]
                  + common, capsys)
    assert code == 0 and checkpoint_load(rck).unit == "restorer"
    assert log.read_text().startswith("iteration,lr,train_loss,val_psnr_15,val_psnr_35\n")

    nck = tmp_path / "n.ckpt"
    assert run(["train-restorer", "--naive", 2, "--sigma", 25, 35, "--iterations", 1, "--out", nck] + common,
               capsys)[0] == 0
    assert checkpoint_load(nck).meta["schedule"]["kind"] == "naive"

    pck, plog = tmp_path / "p.ckpt", tmp_path / "p.csv"
    code, _ = run(["train-policy", "--restorer", rck, "--sigma", 25, "--updates", 4, "--warmup", 32,
                   "--max-steps", 3, "--out", pck, "--log", plog, "--policy-width-scale", 0.25] + common, capsys)
    assert code == 0 and checkpoint_load(pck).unit == "policy"

    out = tmp_path / "out.pgm"
    for pol in (["--policy", "dqn", "--policy-ckpt", pck], ["--policy", "fixed:2"], ["--policy", "decorr"],
                ["--policy", "oracle"]):
        code, cap = run(["restore", "--restorer", rck, "--input", noisy, "--out", out, "--clean", img] + pol,
                        capsys)
        assert code == 0 and "stopped at step" in cap.out
        assert read_pgm(out).shape == (24, 24)

    summary, detail = tmp_path / "eval.csv", tmp_path / "detail.csv"
    code, _ = run(["eval", "--restorer", rck, "--policy-ckpt", pck, "--policies", "dqn,oracle,fixed:2",
                   "--corpus", data, "--sigma", 15, 25, "--max-steps", 4, "--out", summary, "--detail", detail],
                  capsys)
    assert code == 0
    assert len(summary.read_text().splitlines()) == 1 + 2 * 3
    assert len(detail.read_text().splitlines()) == 1 + 2 * 3 * 4

    code, _ = run(["trajectory", "--restorer", rck, "--clean", img, "--sigma", 45, "--steps", 3,
                   "--out-csv", tmp_path / "t.csv", "--out-dir", tmp_path / "frames", "--policy-ckpt", pck], capsys)
    assert code == 0
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "step,psnr,ssim,q_continue"
    assert len(list((tmp_path / "frames").iterdir())) == 4

    code, cap = run(["inspect-ckpt", pck], capsys)
    info = json.loads(cap.out)
    assert code == 0 and info["unit"] == "policy" and info["optimizer"]["method"] == "rmsprop"


def test_cli_eval_is_deterministic(tmp_path, capsys):
    p = R.build_restoration_unit(R.RestorerArch(0.25), 0)
    ck = tmp_path / "r.ckpt"
    checkpoint_save(p, None, {}, ck)
    args = ["eval", "--restorer", ck, "--policies", "oracle,decorr", "--synthetic", 3, "--image-size", 24,
            "--sigma", 25, "--max-steps", 3, "--seed", 9]
    a = run(args + ["--out", tmp_path / "a.csv"], capsys)[0]
    b = run(args + ["--out", tmp_path / "b.csv"], capsys)[0]
    assert a == b == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_exit_codes(tmp_path, capsys, monkeypatch):
    img = tmp_path / "a.pgm"
    write_pgm(img, np.full((16, 16), 0.5))
    assert run(["no-such-command"], capsys)[0] == M.EXIT_USAGE
    assert run(["train-restorer", "--out", tmp_path / "x.ckpt"], capsys)[0] == M.EXIT_USAGE
    assert run(["degrade", "--input", img, "--out", tmp_path / "b.pgm", "--qf", 20], capsys)[0] == M.EXIT_USAGE

    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage!garbage!")
    assert run(["inspect-ckpt", bad], capsys)[0] == M.EXIT_DATA
    assert run(["inspect-ckpt", tmp_path / "missing.ckpt"], capsys)[0] == M.EXIT_DATA
    assert run(["degrade", "--input", tmp_path / "missing.pgm", "--out", img, "--sigma", 5], capsys)[0] == M.EXIT_DATA

    p = R.build_restoration_unit(R.RestorerArch(0.25), 0)
    ck = tmp_path / "r.ckpt"
    checkpoint_save(p, None, {}, ck)
    assert run(["restore", "--restorer", ck, "--input", img, "--out", tmp_path / "o.pgm", "--policy", "magic"],
               capsys)[0] == M.EXIT_USAGE
    assert run(["eval", "--restorer", ck, "--policy-ckpt", ck, "--policies", "dqn", "--sigma", 25], capsys)[0] \
        == M.EXIT_DATA

    def boom(*a, **k):
        raise NonFiniteError("TD loss at update 3")

    monkeypatch.setattr(M, "train_policy_dqn", boom)
    assert run(["train-policy", "--restorer", ck, "--sigma", 25, "--out", tmp_path / "p.ckpt"], capsys)[0] \
        == M.EXIT_NUMERIC
