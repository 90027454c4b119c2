import json
import math
import subprocess
import sys

import numpy as np
import pytest

import oracles
from srkit.cli import main
from srkit.loss import LossWeights, total_loss
from srkit.tensorfile import read_tensor, write_tensor


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def report(capsys, *argv):
    code, out, err = run(capsys, *argv, "--stdout")
    assert code == 0, err
    return json.loads(out)


@pytest.fixture
def images(tmp_path):
    r = np.random.default_rng(0)
    a = r.random((24, 24, 3))
    b = np.clip(a + 0.05 * r.standard_normal(a.shape), 0, 1)
    write_tensor(tmp_path / "a.srtn", a)
    write_tensor(tmp_path / "b.srtn", b)
    return tmp_path, a, b


# normalize ---------------------------------------------------------------


def test_normalize_fixed_tiff(tmp_path, capsys):
    import tifffile

    raw = np.array([[0, 1500, 3000, 4000]], dtype=np.uint16)
    tifffile.imwrite(tmp_path / "in.tif", raw)
    code, _, _ = run(capsys, "normalize", "--mode", "fixed", "--min", 0, "--max", 3000,
                     tmp_path / "in.tif", tmp_path / "out.srtn")
    assert code == 0
    out = read_tensor(tmp_path / "out.srtn")
    np.testing.assert_allclose(out[0, :, 0], [0, 0.5, 1, 1], atol=1e-12)
    side = json.loads((tmp_path / "out.srtn.json").read_text())
    assert side["parameters"]["min_val"] == 0 and side["parameters"]["max_val"] == 3000


def test_normalize_constant_warns(tmp_path, capsys):
    write_tensor(tmp_path / "c.srtn", np.full((5, 5, 1), 9.0))
    doc = report(capsys, "normalize", "--mode", "percentile", "--plow", 2, "--phigh", 98,
                 tmp_path / "c.srtn", tmp_path / "o.srtn")
    assert np.all(read_tensor(tmp_path / "o.srtn") == 0)
    assert any("degenerate" in w for w in doc["warnings"])
    assert doc["parameters"]["p_low"] == 2 and doc["parameters"]["percentile_method"] == "linear"


def test_normalize_missing_file(tmp_path, capsys):
    code, out, err = run(capsys, "normalize", tmp_path / "nope.tif", tmp_path / "o.srtn")
    assert code == 2 and "nope.tif" in err and out == ""
    assert list(tmp_path.iterdir()) == []


def test_normalize_malformed(tmp_path, capsys):
    (tmp_path / "bad.srtn").write_bytes(b"SRTX....")
    assert run(capsys, "normalize", tmp_path / "bad.srtn", tmp_path / "o.srtn")[0] == 2


# metrics -----------------------------------------------------------------


def test_metrics_identical(images, capsys):
    d, _, _ = images
    doc = report(capsys, "metrics", "--ref", d / "a.srtn", "--test", d / "a.srtn",
                 "--metrics", "psnr,ssim,sam,de2000")
    item = doc["results"]["items"][0]
    assert item["psnr"] == "inf" and item["ssim"] == 1.0 and item["sam"] == 0.0 and item["de2000"] == 0.0
    assert doc["parameters"]["ssim"]["window_size"] == 11


def test_metrics_values_and_order(images, capsys):
    d, a, b = images
    doc = report(capsys, "metrics", "--ref", d / "a.srtn", d / "b.srtn", "--test", d / "b.srtn", d / "b.srtn",
                 "--metrics", "psnr", "--jobs", 2)
    items = doc["results"]["items"]
    assert [i["ref"] for i in items] == [str(d / "a.srtn"), str(d / "b.srtn")]
    assert items[0]["psnr"] == pytest.approx(oracles.psnr(a, b, 1.0), abs=1e-9)
    assert items[1]["psnr"] == "inf"


def test_metrics_usage_errors(images, capsys):
    d, _, _ = images
    code, _, err = run(capsys, "metrics", "--ref", d / "a.srtn", "--test", d / "a.srtn", "--metrics", "psnr,bogus")
    assert code == 4 and "bogus" in err
    code, _, err = run(capsys, "metrics", "--metrics", "dists")
    assert code == 4 and "--features-a" in err
    code, _, err = run(capsys, "metrics", "--test", d / "a.srtn", "--metrics", "psnr")
    assert code == 4
    assert run(capsys, "metrics", "--bogus-flag")[0] == 4


def test_metrics_shape_mismatch(images, capsys):
    d, a, _ = images
    write_tensor(d / "small.srtn", a[:12])
    code, out, err = run(capsys, "metrics", "--ref", d / "a.srtn", "--test", d / "small.srtn", "--metrics", "psnr")
    assert code == 3 and out == "" and "shape" in err


def test_metrics_fid_same_file(tmp_path, capsys):
    write_tensor(tmp_path / "f.srtn", np.random.default_rng(1).standard_normal((40, 6)))
    doc = report(capsys, "metrics", "--metrics", "fid", "--features-a", tmp_path / "f.srtn",
                 "--features-b", tmp_path / "f.srtn")
    assert abs(doc["results"]["set"]["fid"]) <= 1e-8


def test_metrics_feature_stacks(tmp_path, capsys):
    r = np.random.default_rng(2)
    for side in "ab":
        (tmp_path / side).mkdir()
        for i, shape in enumerate([(4, 4, 3), (2, 2, 5)]):
            write_tensor(tmp_path / side / f"layer_{i}.srtn", r.standard_normal(shape))
    doc = report(capsys, "metrics", "--metrics", "dists,lpips", "--features-a", tmp_path / "a",
                 "--features-b", tmp_path / "b")
    assert doc["results"]["set"]["dists"] > 0 and doc["results"]["set"]["lpips"] > 0
    assert doc["parameters"]["dists"]["alpha"] == [0.25, 0.25]


def test_metrics_calibration(tmp_path, capsys):
    y = np.linspace(-1, 1, 11)
    write_tensor(tmp_path / "y.srtn", y)
    write_tensor(tmp_path / "mu.srtn", y)
    write_tensor(tmp_path / "s.srtn", np.ones(11))
    write_tensor(tmp_path / "q.srtn", np.full((11, 3), np.inf))
    doc = report(capsys, "metrics", "--metrics", "nll,ece", "--y", tmp_path / "y.srtn", "--mu", tmp_path / "mu.srtn",
                 "--sigma", tmp_path / "s.srtn", "--quantiles", tmp_path / "q.srtn", "--levels", "0.25,0.5,0.75")
    assert doc["results"]["set"]["nll"] == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)
    assert doc["results"]["set"]["ece"] == pytest.approx(0.5, abs=1e-12)


def test_metrics_qnr_and_niqe(tmp_path, capsys):
    r = np.random.default_rng(3)
    write_tensor(tmp_path / "f.srtn", r.random((64, 64, 3)))
    write_tensor(tmp_path / "o.srtn", r.random((64, 64, 3)))
    write_tensor(tmp_path / "p.srtn", r.random((64, 64, 1)))
    code, _, _ = run(capsys, "niqe-fit", tmp_path / "o.srtn", tmp_path / "f.srtn", "-o", tmp_path / "m.srtn",
                     "--patch-size", 16, "--sharpness", 0)
    assert code == 0
    doc = report(capsys, "metrics", "--metrics", "qnr,niqe", "--test", tmp_path / "f.srtn", "--ref", tmp_path / "o.srtn",
                 "--pan", tmp_path / "p.srtn", "--niqe-model", tmp_path / "m.srtn")
    item = doc["results"]["items"][0]
    assert 0 <= item["qnr"]["qnr"] <= 1 and item["niqe"] >= 0


# loss --------------------------------------------------------------------


def test_loss_identical(images, capsys):
    d, _, _ = images
    res = report(capsys, "loss", "--pred", d / "a.srtn", "--target", d / "a.srtn")["results"]
    assert res["base"] == res["fft"] == res["color"] == res["total"] == 0.0


def test_loss_zero_lambdas(images, capsys):
    d, _, _ = images
    res = report(capsys, "loss", "--pred", d / "b.srtn", "--target", d / "a.srtn",
                 "--lambda-fft", 0, "--lambda-color", 0, "--lambda-lpips", 0)["results"]
    assert res["total"] == res["base"]


def test_loss_grad_out_fd_consistent(tmp_path, capsys):
    r = np.random.default_rng(4)
    p, t = r.uniform(0.05, 0.95, (8, 8, 3)), r.uniform(0.05, 0.95, (8, 8, 3))
    write_tensor(tmp_path / "p.srtn", p)
    write_tensor(tmp_path / "t.srtn", t)
    doc = report(capsys, "loss", "--pred", tmp_path / "p.srtn", "--target", tmp_path / "t.srtn",
                 "--grad-out", tmp_path / "g.srtn", "--omega", "inv-sigma-sq", "--gamma", 2)
    g = read_tensor(tmp_path / "g.srtn")
    w = LossWeights(gamma=2.0, omega_mode="inv-sigma-sq")
    num = oracles.central_diff(lambda x: total_loss(x, t, t, 0.5, w).total, p.copy())
    assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-4
    assert doc["parameters"]["omega_mode"] == "inv-sigma-sq" and doc["parameters"]["gamma"] == 2.0


def test_loss_shape_mismatch(images, capsys):
    d, a, _ = images
    write_tensor(d / "s.srtn", a[:8])
    assert run(capsys, "loss", "--pred", d / "s.srtn", "--target", d / "a.srtn")[0] == 3


# uncertainty / gate / harness -------------------------------------------


def test_uncertainty_identical(images, capsys):
    d, _, _ = images
    doc = report(capsys, "uncertainty", d / "a.srtn", d / "a.srtn", "--kappa", 0.01)
    assert doc["results"]["u"] == 0.0 and doc["parameters"]["mode"] == "fixed-kappa"


def test_uncertainty_tau_mode(images, capsys):
    d, _, _ = images
    doc = report(capsys, "uncertainty", d / "a.srtn", d / "b.srtn")
    # tau from a single image is that image's own mean variance
    assert 0 < doc["results"]["u"] < 1
    assert doc["parameters"]["mode"] == "percentile-tau"


def test_uncertainty_too_few(images, capsys):
    d, _, _ = images
    assert run(capsys, "uncertainty", d / "a.srtn")[0] == 3


def test_gate(capsys):
    doc = report(capsys, "gate", "--block", "b:0,0,4", "--u", 1, "--t-norm", "0,1")
    assert doc["results"]["alpha"]["b"][0] == pytest.approx(1 / (1 + math.exp(-4)))
    assert run(capsys, "gate", "--block", "b:1,2", "--u", 0.5)[0] == 4
    assert run(capsys, "gate", "--u", 0.5)[0] == 4
    assert run(capsys, "gate", "--block", "b:1,2,3", "--u", 2)[0] == 3


def test_schedule(capsys):
    assert report(capsys, "schedule", "--steps", 4)["results"]["sigmas"] == [0.25, 0.5, 0.75, 1.0]


def test_harness_zero_dropout_and_determinism(tmp_path, capsys):
    doc = report(capsys, "harness", "--seed", 42, "--size", 64, "--t", 8, "--dropout", 0.0)
    assert doc["records"][0]["u"] == 0.0
    assert run(capsys, "harness", "--seed", 42, "--size", 32, "--report", tmp_path / "r1.json")[0] == 0
    assert run(capsys, "harness", "--seed", 42, "--size", 32, "--report", tmp_path / "r2.json")[0] == 0
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_harness_config_file(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"seed": 3, "size": 32, "p_do": 0.3, "t_mc": 3}))
    doc = report(capsys, "harness", "--config", tmp_path / "cfg.json", "--dropout", 0.0)
    assert doc["config"]["seed"] == 3 and doc["config"]["p_do"] == 0.0
    (tmp_path / "bad.json").write_text("{")
    assert run(capsys, "harness", "--config", tmp_path / "bad.json")[0] == 3
    assert run(capsys, "harness", "--config", tmp_path / "none.json")[0] == 2


def test_console_script_stdout_is_only_report(images):
    d, _, _ = images
    proc = subprocess.run([sys.executable, "-m", "srkit", "metrics", "--ref", str(d / "a.srtn"), "--test",
                           str(d / "b.srtn"), "--metrics", "sam", "--stdout"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "metrics"
    proc = subprocess.run([sys.executable, "-m", "srkit", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 4 and proc.stdout == ""
