"""End-to-end command-line tests.

Everything runs in-process through main(argv) for speed; one subprocess
smoke test at the end proves the module entry point works unmodified.
"""

import csv
import json
import os
import subprocess
import sys

import pytest

from diffcast.cli import main
from diffcast.diffusion import linear_schedule
from diffcast.pipeline import load_dataset

TINY = [
    "--set", "model.prediction_steps=6",
    "--set", "model.diffusion_steps=3",
    "--set", "model.hidden_size=8",
    "--set", "model.encoder_layers=1",
    "--set", "model.residual_channels=4",
    "--set", "model.residual_blocks=2",
    "--set", "model.embedding_dim=8",
    "--set", "model.embedding_max_index=10",
    "--set", "model.lags=1",
    "--set", "train.max_epochs=2",
    "--set", "train.batch_size=4",
    "--set", "train.batches_per_epoch=2",
    "--set", "train.val_noise_repeats=4",
]

pytestmark = pytest.mark.filterwarnings("ignore::diffcast.errors.ConfigurationWarning")


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Dataset plus a trained tiny checkpoint shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "series.csv")
    assert main(["make-data", "--kind", "var1", "--length", "60", "--seed", "1",
                 "--out", data]) == 0
    out = str(root / "run")
    assert main(["train", "--data", data, "--output", out, *TINY]) == 0
    return {"data": data, "out": out, "ckpt": os.path.join(out, "checkpoint.bin")}


# -- version and argument surface ---------------------------------------------------


def test_version_prints_three_format_lines(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("diffcast ")
    assert lines[1].startswith("checkpoint format ")
    assert lines[2].startswith("csv schema ")


def test_unknown_set_key_exits_2(tmp_path, capsys):
    code = main(["train", "--data", "x.csv", "--output", str(tmp_path / "o"),
                 "--set", "model.bogus=1"])
    assert code == 2
    assert capsys.readouterr().err.startswith("CONFIG_ERROR:")


# -- make-data ------------------------------------------------------------------


def test_make_data_deterministic(tmp_path):
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert main(["make-data", "--kind", "ar1", "--length", "50", "--seed", "4",
                 "--out", a]) == 0
    assert main(["make-data", "--kind", "ar1", "--length", "50", "--seed", "4",
                 "--out", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()
    ds = load_dataset(a, "csv_wide", None)
    assert ds.num_steps == 50


# -- train ----------------------------------------------------------------------


def test_train_missing_dataset_exits_2_without_artifacts(tmp_path, capsys):
    out = tmp_path / "never"
    code = main(["train", "--data", str(tmp_path / "nope.csv"),
                 "--output", str(out), *TINY])
    assert code == 2
    assert capsys.readouterr().err.startswith("CONFIG_ERROR:")
    assert not out.exists()


def test_train_writes_checkpoint_and_log(workspace):
    log = read_rows(os.path.join(workspace["out"], "training_log.csv"))
    assert log[0] == ["epoch", "train_loss", "val_loss", "best"]
    assert log[1][0] == "0" and log[1][1] == ""  # epoch 0 has no train pass
    bests = [float(r[3]) for r in log[1:]]
    assert all(b2 <= b1 for b1, b2 in zip(bests, bests[1:]))
    assert os.path.getsize(workspace["ckpt"]) > 0


def test_train_byte_reproducible(tmp_path, workspace):
    out = str(tmp_path / "again")
    assert main(["train", "--data", workspace["data"], "--output", out, *TINY]) == 0
    for name in ("checkpoint.bin", "training_log.csv"):
        fresh = open(os.path.join(out, name), "rb").read()
        first = open(os.path.join(workspace["out"], name), "rb").read()
        assert fresh == first, name


# -- forecast -------------------------------------------------------------------


def test_forecast_artifacts(tmp_path, workspace):
    out = str(tmp_path / "fc")
    assert main(["forecast", "--data", workspace["data"], "--checkpoint", workspace["ckpt"],
                 "--output", out, "--samples", "5", "--seed", "3",
                 "--set", "forecast.quantile_levels=0.75,0.25"]) == 0

    samples = read_rows(os.path.join(out, "forecast_samples.csv"))
    assert samples[0] == ["window", "trajectory", "t", "entity", "value"]
    assert len(samples) == 1 + 5 * 6 * 2
    assert {r[1] for r in samples[1:]} == {"0", "1", "2", "3", "4"}

    quant = read_rows(os.path.join(out, "forecast_quantiles.csv"))
    assert quant[0] == ["window", "t", "entity", "level", "value"]
    levels = [r[3] for r in quant[1:]]
    assert set(levels) == {"0.25", "0.75"}  # sorted, as configured
    assert levels[:2] == ["0.25", "0.75"]

    plot = json.load(open(os.path.join(out, "plot_data.json")))
    assert plot["levels"] == [0.25, 0.75]
    assert set(plot["median"]) == {"s0", "s1"}
    assert len(plot["timestamps"]) == 6


def test_forecast_median_matches_quantile_csv(tmp_path, workspace):
    out = str(tmp_path / "fc")
    assert main(["forecast", "--data", workspace["data"], "--checkpoint", workspace["ckpt"],
                 "--output", out, "--samples", "7", "--seed", "5"]) == 0
    quant = read_rows(os.path.join(out, "forecast_quantiles.csv"))
    medians = [float(r[4]) for r in quant[1:] if r[3] == "0.5" and r[2] == "s0"]
    plot = json.load(open(os.path.join(out, "plot_data.json")))
    assert medians == plot["median"]["s0"]


def test_forecast_entity_mismatch_exits_3(tmp_path, workspace, capsys):
    other = str(tmp_path / "one.csv")
    assert main(["make-data", "--kind", "ar1", "--length", "60", "--seed", "1",
                 "--out", other]) == 0
    code = main(["forecast", "--data", other, "--checkpoint", workspace["ckpt"],
                 "--output", str(tmp_path / "fc")])
    assert code == 3
    assert capsys.readouterr().err.startswith("DATA_ERROR:")


def test_forecast_env_override(tmp_path, workspace, monkeypatch):
    monkeypatch.setenv("DIFFCAST_FORECAST__NUM_SAMPLES", "3")
    out = str(tmp_path / "fc")
    assert main(["forecast", "--data", workspace["data"], "--checkpoint", workspace["ckpt"],
                 "--output", out, "--seed", "3"]) == 0
    samples = read_rows(os.path.join(out, "forecast_samples.csv"))
    assert {r[1] for r in samples[1:]} == {"0", "1", "2"}


# -- evaluate -------------------------------------------------------------------


def _write_perfect_forecast(path, ds, window, horizon, num_samples=4):
    truth = ds.values[window : window + horizon]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "trajectory", "t", "entity", "value"])
        for s in range(num_samples):
            for t in range(horizon):
                for j, entity in enumerate(ds.entity_ids):
                    w.writerow([window, s, t, entity, repr(float(truth[t, j]))])


def test_evaluate_perfect_forecast_scores_zero(tmp_path, workspace):
    ds = load_dataset(workspace["data"], "csv_wide", None)
    fc = str(tmp_path / "perfect.csv")
    _write_perfect_forecast(fc, ds, window=ds.num_steps - 6, horizon=6)
    out = str(tmp_path / "ev")
    assert main(["evaluate", "--data", workspace["data"], "--samples-csv", fc,
                 "--output", out]) == 0
    report = json.load(open(os.path.join(out, "metrics.json")))
    assert set(report) == {"crps_sum", "crps_per_entity", "S", "windows"}
    assert report["crps_sum"] == 0.0
    assert report["S"] == 4 and report["windows"] == 1
    per_entity = read_rows(os.path.join(out, "crps_per_entity.csv"))
    assert per_entity[0] == ["entity", "crps"]
    assert [r[0] for r in per_entity[1:]] == ["s0", "s1"]


def test_evaluate_window_out_of_range_exits_3(tmp_path, workspace, capsys):
    ds = load_dataset(workspace["data"], "csv_wide", None)
    fc = str(tmp_path / "far.csv")
    _write_perfect_forecast(fc, ds, window=0, horizon=6)
    rows = read_rows(fc)
    for r in rows[1:]:
        r[0] = str(ds.num_steps - 2)  # spills past the end of the series
    with open(fc, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    code = main(["evaluate", "--data", workspace["data"], "--samples-csv", fc,
                 "--output", str(tmp_path / "ev")])
    assert code == 3
    err = capsys.readouterr().err
    assert err.startswith("DATA_ERROR:")
    assert str(ds.num_steps) in err  # names the two lengths in conflict


def test_evaluate_bad_header_exits_3(tmp_path, workspace, capsys):
    fc = str(tmp_path / "bad.csv")
    with open(fc, "w") as fh:
        fh.write("window,sample,t,entity,value\n0,0,0,s0,1.0\n")
    code = main(["evaluate", "--data", workspace["data"], "--samples-csv", fc,
                 "--output", str(tmp_path / "ev")])
    assert code == 3
    assert capsys.readouterr().err.startswith("DATA_ERROR:")


def test_evaluate_missing_cells_exit_3(tmp_path, workspace, capsys):
    ds = load_dataset(workspace["data"], "csv_wide", None)
    fc = str(tmp_path / "sparse.csv")
    _write_perfect_forecast(fc, ds, window=ds.num_steps - 6, horizon=6)
    rows = read_rows(fc)
    with open(fc, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows[:-1])  # drop one cell
    code = main(["evaluate", "--data", workspace["data"], "--samples-csv", fc,
                 "--output", str(tmp_path / "ev")])
    assert code == 3
    assert capsys.readouterr().err.startswith("DATA_ERROR:")


# -- ablate-n -------------------------------------------------------------------


def test_ablation_rows_echo_requested_order(tmp_path, workspace, capsys):
    out = str(tmp_path / "ab")
    assert main(["ablate-n", "--data", workspace["data"], "--output", out,
                 "--steps", "3,2", "--repeats", "2", *TINY]) == 0
    rows = read_rows(os.path.join(out, "ablation.csv"))
    assert rows[0] == ["N", "crps_sum", "stderr"]
    assert [r[0] for r in rows[1:]] == ["3", "2"]
    for r in rows[1:]:
        assert float(r[1]) >= 0.0 and float(r[2]) >= 0.0
    echoed = capsys.readouterr().out.strip().splitlines()
    assert [line.split(",")[0] for line in echoed] == ["3", "2"]


def test_ablation_parallel_matches_sequential(tmp_path, workspace):
    seq, par = str(tmp_path / "s"), str(tmp_path / "p")
    args = ["ablate-n", "--data", workspace["data"], "--steps", "2,3",
            "--repeats", "2", *TINY]
    assert main([*args, "--output", seq]) == 0
    assert main([*args, "--output", par, "--parallel"]) == 0
    a = open(os.path.join(seq, "ablation.csv"), "rb").read()
    b = open(os.path.join(par, "ablation.csv"), "rb").read()
    assert a == b


# -- schedule -------------------------------------------------------------------


def test_schedule_echoes_table(capsys):
    assert main(["schedule", "--steps", "4"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "n,beta,alpha_bar,tilde_beta"
    assert len(lines) == 5
    sched = linear_schedule(4, 1e-4, 0.1)
    for line, (n, beta, abar, tbeta) in zip(lines[1:], sched.rows()):
        cells = line.split(",")
        assert int(cells[0]) == n
        assert float(cells[1]) == beta
        assert float(cells[2]) == abar
        assert float(cells[3]) == tbeta
    assert float(lines[1].split(",")[3]) == 0.0  # first reverse step is exact


def test_schedule_invalid_bounds_exit_2(capsys):
    assert main(["schedule", "--steps", "4", "--beta-end", "1.5"]) == 2
    assert capsys.readouterr().err.startswith("CONFIG_ERROR:")


# -- module entry point -----------------------------------------------------------


def test_python_dash_m_invocation():
    proc = subprocess.run(
        [sys.executable, "-m", "diffcast", "schedule", "--steps", "3"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "n,beta,alpha_bar,tilde_beta"
