"""Command plumbing: exit codes, outputs, error messages, idempotence."""

import numpy as np
import pytest

from c2cpred.cli import main
from c2cpred.cloudio import read_csv, read_ply, write_ply, PointCloud
from c2cpred.ensemble import RfConfig, save_model, train_rf
from c2cpred.features import FEATURE_NAMES

SMALL_SCENE = """\
[scene]
seed = 3

[error]
sigma0_mm = 0.5
height_coeff = 5
density_coeff = 400

[mls]
fraction = 0.6

[plane floor]
origin = 0 0 0
u = 5 0 0
v = 0 5 0
density = 260

[plane wall]
origin = 0 0 0
u = 5 0 0
v = 0 0 2
density = 220

[box crate]
center = 2 3 0.4
size = 0.8 0.8 0.8
density = 260

[cylinder tank]
center = 4 4
height = 1.5
radius = 0.25
density = 200
"""

FAST_FEAT = ["--k-min", "8", "--k-max", "24", "--cell-size", "0.5", "--threads", "2"]
FAST_MODEL = ["--n-estimators", "12", "--num-boost-round", "40", "--threads", "2"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synth+features+label run shared by the command tests."""
    root = tmp_path_factory.mktemp("cliws")
    scene = root / "scene.cfg"
    scene.write_text(SMALL_SCENE)
    assert main(["synth", "--scene", str(scene), "--out-ref", str(root / "ref.ply"),
                 "--out-mls", str(root / "mls.ply")]) == 0
    assert main(["features", str(root / "mls.ply"), "-o", str(root / "features.csv"),
                 *FAST_FEAT]) == 0
    assert main(["label", str(root / "mls.ply"), str(root / "ref.ply"),
                 "-o", str(root / "labels.csv")]) == 0
    return root


def test_synth_outputs_readable(workspace):
    ref = read_ply(workspace / "ref.ply")
    mls = read_ply(workspace / "mls.ply")
    assert len(ref) > 2000 and len(mls) > 1000
    assert "true_error_mm" in mls.scalars


def test_synth_requires_outputs(tmp_path):
    assert main(["synth"]) == 1


def test_synth_dump_scene(tmp_path):
    out = tmp_path / "scene.cfg"
    assert main(["synth", "--dump-scene", str(out)]) == 0
    assert "[plane floor]" in out.read_text()


def test_synth_bad_scene_key_exit_code(tmp_path, capsys):
    scene = tmp_path / "bad.cfg"
    scene.write_text("[plane p]\norigin = 0 0 0\nu = 1 0 0\nv = 0 1 0\n"
                     "density = 10\nbogus = 1\n")
    code = main(["synth", "--scene", str(scene), "--out-ref", str(tmp_path / "r.ply"),
                 "--out-mls", str(tmp_path / "m.ply")])
    assert code == 1
    assert "bogus" in capsys.readouterr().err
    assert not (tmp_path / "r.ply").exists()


def test_features_csv_shape(workspace):
    headers, data = read_csv(workspace / "features.csv")
    assert headers == ["idx", *FEATURE_NAMES]
    assert len(headers) == 28
    optn = data[:, headers.index("OptN")]
    assert optn.max() <= 24 and optn.min() >= 8


def test_features_cloud_too_small(tmp_path, capsys):
    cloud = PointCloud(np.random.default_rng(0).random((10, 3)))
    write_ply(cloud, tmp_path / "tiny.ply")
    code = main(["features", str(tmp_path / "tiny.ply"),
                 "-o", str(tmp_path / "f.csv"), "--k-max", "30"])
    assert code == 1
    assert "31" in capsys.readouterr().err
    assert not (tmp_path / "f.csv").exists()


def test_label_identical_clouds(workspace, tmp_path):
    out = tmp_path / "self.csv"
    assert main(["label", str(workspace / "ref.ply"), str(workspace / "ref.ply"),
                 "-o", str(out)]) == 0
    _, data = read_csv(out)
    assert (data[:, 1] == 0).all() and (data[:, 2] == 1).all()


def test_label_tiny_threshold_drops_everything(workspace, tmp_path, capsys):
    out = tmp_path / "strict.csv"
    assert main(["label", str(workspace / "mls.ply"), str(workspace / "ref.ply"),
                 "-o", str(out), "--threshold-mm", "0.001"]) == 0
    err = capsys.readouterr().err
    assert "dropped" in err
    _, data = read_csv(out)
    assert data[:, 2].sum() < 0.05 * len(data)


def test_label_missing_reference(workspace, tmp_path, capsys):
    code = main(["label", str(workspace / "mls.ply"), str(tmp_path / "nope.ply"),
                 "-o", str(tmp_path / "l.csv")])
    assert code == 1
    assert "not found" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained_models(workspace):
    rf = workspace / "rf.json"
    gbdt = workspace / "gbdt.json"
    assert main(["train", str(workspace / "features.csv"), str(workspace / "labels.csv"),
                 "-o", str(rf), "--model", "rf", *FAST_MODEL, "--seed", "5"]) == 0
    assert main(["train", str(workspace / "features.csv"), str(workspace / "labels.csv"),
                 "-o", str(gbdt), "--model", "gbdt", "--cloud", str(workspace / "mls.ply"),
                 *FAST_MODEL, "--seed", "5"]) == 0
    return rf, gbdt


def test_train_row_mismatch(workspace, tmp_path, capsys):
    lines = (workspace / "labels.csv").read_text().splitlines()
    (tmp_path / "short.csv").write_text("\n".join(lines[:-5]) + "\n")
    code = main(["train", str(workspace / "features.csv"), str(tmp_path / "short.csv"),
                 "-o", str(tmp_path / "m.json"), "--model", "rf"])
    assert code == 1
    assert "mismatch" in capsys.readouterr().err


def test_train_gbdt_without_cloud_notes_row_split(workspace, tmp_path, capsys):
    out = tmp_path / "g.json"
    assert main(["train", str(workspace / "features.csv"), str(workspace / "labels.csv"),
                 "-o", str(out), "--model", "gbdt", *FAST_MODEL]) == 0
    assert "row split" in capsys.readouterr().err


def test_predict_writes_scalars(workspace, trained_models, tmp_path):
    rf, _ = trained_models
    out = tmp_path / "pred.ply"
    assert main(["predict", str(rf), str(workspace / "features.csv"),
                 str(workspace / "mls.ply"), "-o", str(out)]) == 0
    cloud = read_ply(out)
    assert "pred_c2c_mm" in cloud.scalars
    assert "abs_err_mm" not in cloud.scalars

    out2 = tmp_path / "pred2.ply"
    assert main(["predict", str(rf), str(workspace / "features.csv"),
                 str(workspace / "mls.ply"), "-o", str(out2),
                 "--labels", str(workspace / "labels.csv")]) == 0
    cloud2 = read_ply(out2)
    assert {"pred_c2c_mm", "abs_err_mm", "residual_mm"} <= set(cloud2.scalars)
    np.testing.assert_allclose(
        cloud2.scalars["abs_err_mm"], np.abs(cloud2.scalars["residual_mm"]))


def test_predict_column_mismatch_names_column(workspace, tmp_path, capsys):
    model = train_rf(np.random.default_rng(1).random((50, 3)),
                     np.random.default_rng(2).random(50),
                     RfConfig(n_estimators=2, seed=1),
                     columns=("alpha", "beta", "gamma"))
    path = tmp_path / "alien.json"
    save_model(model, path)
    code = main(["predict", str(path), str(workspace / "features.csv"),
                 str(workspace / "mls.ply"), "-o", str(tmp_path / "p.ply")])
    assert code == 1
    assert "3" in capsys.readouterr().err
    assert not (tmp_path / "p.ply").exists()


def test_evaluate_report_files(workspace, tmp_path, capsys):
    prefix = tmp_path / "reports" / "eval"
    code = main(["evaluate", str(workspace / "mls.ply"), str(workspace / "features.csv"),
                 str(workspace / "labels.csv"), "-o", str(prefix),
                 "--grid-size", "1.2", "--importance-repeats", "1", *FAST_MODEL])
    assert code == 0
    out = capsys.readouterr().out
    assert "RMSE (mm)" in out and "P@10 mm" in out and "Runtime / fold" in out
    assert (tmp_path / "reports" / "eval.csv").exists()
    assert (tmp_path / "reports" / "eval.txt").exists()
    assert (tmp_path / "reports" / "eval_metrics.png").exists()
    assert (tmp_path / "reports" / "eval_p_at.png").exists()
    assert (tmp_path / "reports" / "eval_importance_rf.csv").exists()
    assert (tmp_path / "reports" / "eval_importance_gbdt.png").exists()
    lines = (tmp_path / "reports" / "eval.csv").read_text().splitlines()
    assert lines[0].startswith("model,fold,n,rmse_mm")
    assert sum(1 for l in lines if l.startswith("rf,")) == 7  # 5 folds + mean + ci95


def test_evaluate_fold_and_model_flags(workspace, tmp_path):
    prefix = tmp_path / "eval3"
    code = main(["evaluate", str(workspace / "mls.ply"), str(workspace / "features.csv"),
                 str(workspace / "labels.csv"), "-o", str(prefix),
                 "--folds", "3", "--grid-size", "1.2", "--models", "rf",
                 "--no-figures", *FAST_MODEL])
    assert code == 0
    lines = (tmp_path / "eval3.csv").read_text().splitlines()
    assert sum(1 for l in lines if l.startswith("rf,")) == 5  # 3 folds + 2 aggregates
    assert not any(l.startswith("gbdt,") for l in lines)
    assert not (tmp_path / "eval3_metrics.png").exists()


def test_evaluate_unknown_model_flag(workspace, tmp_path, capsys):
    code = main(["evaluate", str(workspace / "mls.ply"), str(workspace / "features.csv"),
                 str(workspace / "labels.csv"), "-o", str(tmp_path / "x"),
                 "--models", "svm"])
    assert code == 1
    assert "svm" in capsys.readouterr().err


def test_importance_command(workspace, trained_models, tmp_path):
    rf, _ = trained_models
    out = tmp_path / "imp.csv"
    assert main(["importance", str(rf), str(workspace / "features.csv"),
                 str(workspace / "labels.csv"), "-o", str(out),
                 "--repeats", "2", "--seed", "3"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "feature,fold,delta_rmse_mm"
    assert len(lines) == 1 + len(FEATURE_NAMES)
    assert out.with_suffix(".png").exists()


def test_config_file_defaults_and_flag_override(workspace, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[features]\nk_max = 16\n")
    out1 = tmp_path / "f16.csv"
    assert main(["features", str(workspace / "mls.ply"), "-o", str(out1),
                 "--config", str(cfg), "--k-min", "8", "--threads", "2"]) == 0
    headers, data = read_csv(out1)
    assert data[:, headers.index("OptN")].max() <= 16
    out2 = tmp_path / "f12.csv"
    assert main(["features", str(workspace / "mls.ply"), "-o", str(out2),
                 "--config", str(cfg), "--k-min", "8", "--k-max", "12",
                 "--threads", "2"]) == 0
    headers, data = read_csv(out2)
    assert data[:, headers.index("OptN")].max() <= 12  # flag beat the file


def test_command_idempotence(workspace, tmp_path):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    for out in (out1, out2):
        assert main(["features", str(workspace / "mls.ply"), "-o", str(out), *FAST_FEAT]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_pipeline_rejects_half_specified_clouds(workspace, tmp_path, capsys):
    code = main(["pipeline", "-o", str(tmp_path / "p"),
                 "--mls", str(workspace / "mls.ply")])
    assert code == 1
    assert "--reference" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
