import json

import numpy as np
import pytest

from nlunmix.cli import main
from nlunmix.extraction import mean_sam
from nlunmix.mixing import library_endmembers, make_rng, sample_abundance_uniform
from nlunmix.scene_io import (
    GroundTruth,
    SceneImage,
    load_endmembers,
    read_pgm,
    read_rows,
    save_endmembers,
    save_ground_truth,
    save_image,
)

SMALL = "n_pixels = 60\nbands = 150\n"


def _config(tmp_path, text=SMALL, name="c.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, cmd, text=SMALL, seed=1, out="out", extra=()):
    out_dir = tmp_path / out
    code = main([cmd, "--config", _config(tmp_path, text), "--seed", str(seed), "--out", str(out_dir), *extra])
    return code, out_dir


def test_generate_outputs(tmp_path, capsys):
    code, out = run(tmp_path, "generate")
    assert code == 0
    assert {p.name for p in out.iterdir()} == {"scene.hdr", "scene.raw", "truth.csv", "endmembers.csv", "config.txt"}
    assert "seed = 1" in capsys.readouterr().out
    header, rows = read_rows(out / "truth.csv")
    assert header == ["pixel_index", "label", "eta_d", "alpha_1", "alpha_2", "alpha_3"]
    assert len(rows) == 60
    assert load_endmembers(out / "endmembers.csv").shape == (50, 3)


def test_generate_n_zero_is_usage_error(tmp_path):
    code, _ = run(tmp_path, "generate", text="n_pixels = 0\n")
    assert code == 1


@pytest.mark.parametrize("argv", [["bogus"], ["detect", "--threads", "0", "--seed", "1"], ["detect"],
                                  ["detect", "--seed", "-3"], ["detect", "--seed", "1", "--preset", "x"]])
def test_usage_errors(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "o")] if argv != ["bogus"] else argv) == 1


def test_missing_files_exit_2(tmp_path):
    assert main(["detect", "--config", str(tmp_path / "none.txt"), "--seed", "1"]) == 2
    code, _ = run(tmp_path, "detect", text=SMALL + f"endmembers = {tmp_path / 'missing.csv'}\n")
    assert code == 2


def test_numerical_failure_exit_3(tmp_path):
    # 40 pixels cannot survive the aggressive removal: early stop
    text = "n_pixels = 40\nbands = 150\nr_f = 1\nextract_pfa = 0.9\n"
    code, _ = run(tmp_path, "extract", text=text)
    assert code == 3


def test_detect_outputs_and_linear_scene(tmp_path):
    text = "n_pixels = 400\nbands = 150\nproportions = lmm:1\nnoise_variance = 0\n"
    code, out = run(tmp_path, "detect", text=text)
    assert code == 0
    header, rows = read_rows(out / "detection.csv")
    assert header == ["pixel_index", "T", "label"]
    flagged = sum(r[2] == "nonlinear" for r in rows)
    assert flagged / len(rows) <= 0.02
    w, h, payload = read_pgm(out / "detection.pgm")
    assert w * h == 400 and set(payload.tolist()) <= {0, 255}
    cal = json.loads((out / "calibration.json").read_text())
    assert {"alpha", "beta", "tau", "pfa"} <= set(cal)


def test_detect_on_loaded_image(tmp_path):
    M = library_endmembers(3, 80)
    A = sample_abundance_uniform(3, make_rng(0, 1), 36)
    X = A @ M.T + 0.03 * make_rng(0, 2).standard_normal((36, 80))
    save_image(SceneImage(X, width=6, height=6), tmp_path / "img.hdr")
    save_endmembers(M, tmp_path / "m.csv")
    text = f"image = {tmp_path / 'img.hdr'}\nendmembers = {tmp_path / 'm.csv'}\n"
    code, out = run(tmp_path, "detect", text=text)
    assert code == 0
    assert read_pgm(out / "detection.pgm")[:2] == (6, 6)


def test_roc_outputs(tmp_path):
    code, out = run(tmp_path, "roc", text=SMALL + "eta_sweep = 0.3,0.8\n")
    assert code == 0
    summary = json.loads((out / "roc_summary.json").read_text())
    assert set(summary) == {"eta=0.3", "eta=0.8"}
    header, rows = read_rows(out / "roc_eta0.3.csv")
    assert header == ["threshold", "PFA", "PD"]
    pf = np.array([float(r[1]) for r in rows])
    pd = np.array([float(r[2]) for r in rows])
    assert np.all(np.diff(pf) >= 0) and np.all(np.diff(pd) >= 0)
    assert pf[0] == pd[0] == 0 and pf[-1] == pd[-1] == 1


def test_extract_vca_on_pure_pixel_image(tmp_path):
    M = library_endmembers(3, 80)
    A = sample_abundance_uniform(3, make_rng(0, 1), 200)
    A[:3] = np.eye(3)
    save_image(SceneImage(A @ M.T), tmp_path / "img.hdr")
    save_endmembers(M, tmp_path / "m.csv")
    text = f"image = {tmp_path / 'img.hdr'}\nendmembers = {tmp_path / 'm.csv'}\nextractor = vca\n"
    code, out = run(tmp_path, "extract", text=text)
    assert code == 0
    # the image is stored as float32
    assert mean_sam(load_endmembers(out / "endmembers_hat.csv"), M) <= 1e-6


def test_extract_mves_trace_monotone(tmp_path):
    code, out = run(tmp_path, "extract", text=SMALL + "extractor = mves\nproportions = lmm:1\n")
    assert code == 0
    header, rows = read_rows(out / "trace.csv")
    vols = np.array([float(r[1]) for r in rows])
    assert header == ["sweep", "volume"] and np.all(np.diff(vols) <= 1e-12 * vols[0])


def test_extract_iterative_trace(tmp_path):
    code, out = run(tmp_path, "extract", text="n_pixels = 200\nbands = 150\n")
    assert code == 0
    header, rows = read_rows(out / "trace.csv")
    assert header == ["iteration", "surviving_pixels", "discarded", "tau_r", "sam_to_reference"]
    assert int(rows[0][1]) == 200
    summary = json.loads((out / "extract_summary.json").read_text())
    assert {"mean_sam", "vca_mean_sam", "tau"} <= set(summary)


def test_pipeline_outputs(tmp_path):
    code, out = run(tmp_path, "pipeline", text="n_pixels = 300\nbands = 150\n")
    assert code == 0
    header, rows = read_rows(out / "abundances.csv")
    assert header == ["pixel_index", "alpha_1", "alpha_2", "alpha_3", "label"]
    for r in rows:
        if r[-1] == "nonlinear":
            assert r[1] == "nan"
        else:
            assert abs(sum(float(v) for v in r[1:4]) - 1) <= 1e-9
    m = json.loads((out / "metrics.json").read_text())
    assert m["counts"]["linear"] + m["counts"]["nonlinear"] == 300
    assert m["rmse_full_reconstruction"] <= min(m["rmse_full_reconstruction_fcls"],
                                                m["rmse_full_reconstruction_gp"]) + 1e-4
    # linear branch on truly linear pixels behaves like FCLS-everywhere on them
    assert m["rmse_linear_subset"] <= 1.1 * m["rmse_lmm_fcls_everywhere"]


def test_same_seed_same_bytes(tmp_path):
    for cmd in ("generate", "detect"):
        _, a = run(tmp_path, cmd, out=f"{cmd}_a")
        _, b = run(tmp_path, cmd, out=f"{cmd}_b")
        for f in a.iterdir():
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name
