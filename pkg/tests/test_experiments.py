import json
import math
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

from consequential.cli import main
from consequential.data import make_replay_fixture, FixtureConfig, write_dataset
from consequential.env import REPLAY_ORIGINAL, ReplayEnv, rollout
from consequential.experiments import (
    ConfigError,
    ExperimentConfig,
    OptimalSettings,
    ReplaySettings,
    TrainSettings,
    default_config,
    load_config,
    parse_lambda_list,
    run_replay_train,
    run_synth_compare,
    run_synth_optimal,
    run_synth_train,
)
from consequential.report import read_table, write_report

SCHEMAS = {
    "synth_optimal": {
        "cost_vs_lambda": "lambda,inv_lambda,reps,cost_mean,cost_sem,true_cost_mean,true_cost_sem",
        "utility_vs_time": "lambda,inv_lambda,t,reps,utility_mean,utility_sem",
        "misinfo_by_group": "lambda,inv_lambda,group,reps,eta_mean,eta_sem,eta_true_mean,eta_true_sem",
        "sampler_diagnostics": "lambda,ess,raw_draws,resampled_cost_mean,resampled_cost_sem",
        "per_repetition": "lambda,rep,cost,true_cost,eta_viral,eta_nonviral,ess",
    },
    "replay_train": {
        "replay_cost_utility": "lambda,inv_lambda,submissions,utility_mean,utility_sem,cost_mean,cost_sem,kl_mean,kl_sem,cost_reduction",
        "kl_vs_utility": "lambda,kl_mean,kl_sem,utility_mean,utility_sem",
    },
}

SMALL_TRAIN = TrainSettings(iterations=15, batch_size=10, repetitions=1)


def small(mode, lambdas, **kw):
    kw.setdefault("repetitions", 4)
    kw.setdefault("optimal", OptimalSettings(samples=40, kappa=10))
    kw.setdefault("eval_rollouts", 30)
    if mode != "replay_train":
        kw.setdefault("train", SMALL_TRAIN)
    return default_config(mode, lambdas, **kw)


def csv_header(path):
    return next(line for line in path.read_text().splitlines() if not line.startswith("#"))


def test_config_invariants():
    with pytest.raises(ConfigError):
        ExperimentConfig("synth_optimal", ())
    with pytest.raises(ConfigError):
        ExperimentConfig("synth_optimal", (1.0,), repetitions=0)
    with pytest.raises(ConfigError):
        ExperimentConfig("synth_optimal", (1.0, 0.0))
    with pytest.raises(ConfigError):
        ExperimentConfig("synth_optimal", (1.0, -2.0))
    with pytest.raises(ConfigError):
        ExperimentConfig("interactive", (1.0,))
    with pytest.raises(ConfigError):
        ExperimentConfig("synth_optimal", (1.0,), cost="nope")
    assert ExperimentConfig("synth_train", (0.0, math.inf)).lambdas == (0.0, math.inf)


def test_parse_lambda_list():
    assert parse_lambda_list("inf, 2,0.5") == (math.inf, 2.0, 0.5)
    with pytest.raises(ValueError):
        parse_lambda_list("1,abc")


def test_load_config(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[experiment]\nmode = synth_optimal\ninv_lambda = 0, 0.5, 2\nrepetitions = 7\n"
                    "[synthetic]\nT = 12\nexposure_form = literal\n[optimal]\nsamples = 50\n")
    cfg = load_config(path, seed=9)
    assert cfg.lambdas == (math.inf, 2.0, 0.5)
    assert (cfg.repetitions, cfg.seed, cfg.synthetic.T, cfg.synthetic.exposure_form) == (7, 9, 12, "literal")
    assert cfg.optimal.samples == 50
    for body, match in [
        ("[experiment]\nmode = synth_optimal\nbogus = 1\n", "unknown key"),
        ("[experiment]\nmode = synth_optimal\n[extra]\n", "unknown config sections"),
        ("[experiment]\nlambda = 1\n", "mode is required"),
        ("[experiment]\nmode = synth_optimal\nlambda = 1\ninv_lambda = 1\n", "either"),
        ("[experiment]\nmode = synth_optimal\n[synthetic]\nn = ten\n", "synthetic"),
        ("[experiment]\nmode = synth_optimal\n[synthetic]\nn = 2\n", "synthetic"),
        ("[experiment]\nmode = synth_optimal\nrepetitions = 0\n", "repetitions"),
    ]:
        path.write_text(body)
        with pytest.raises(ConfigError, match=match):
            load_config(path)


def test_shipped_configs_parse():
    from pathlib import Path

    for path in sorted((Path(__file__).parents[1] / "configs").glob("*.ini")):
        load_config(path)


def test_baseline_only_grid_matches_original():
    report = run_synth_optimal(small("synth_optimal", (math.inf, 1e12)))
    rows = report.tables["cost_vs_lambda"].rows
    assert rows[0][3:] == rows[1][3:]
    u = report.per_rep["utility"]
    np.testing.assert_array_equal(u[:, 0], u[:, 1])
    diag = report.tables["sampler_diagnostics"].rows
    assert diag[0][1] == pytest.approx(40) and diag[0][2] == 50


def test_every_mean_has_sem_and_count():
    report = run_synth_optimal(small("synth_optimal", (math.inf, 1.0)))
    for name, table in report.tables.items():
        means = [c for c in table.columns if c.endswith("_mean")]
        for c in means:
            assert c[: -len("_mean")] + "_sem" in table.columns, (name, c)
        if means and name != "sampler_diagnostics":
            assert "reps" in table.columns, name
    # raw draws stand in for the count in the sampler table
    assert "raw_draws" in report.tables["sampler_diagnostics"].columns


def test_report_schema_and_determinism(tmp_path):
    cfg = small("synth_optimal", (math.inf, 2.0, 0.5))
    a, b = tmp_path / "a", tmp_path / "b"
    write_report(run_synth_optimal(cfg), a)
    write_report(run_synth_optimal(cfg), b)
    for name, header in SCHEMAS["synth_optimal"].items():
        assert csv_header(a / f"{name}.csv") == header
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    text = (a / "cost_vs_lambda.csv").read_text()
    assert text.startswith("# mode: synth_optimal\n# config_sha256: ")
    assert "# seed: 0\n# version: " in text


def test_single_lambda_report(tmp_path):
    write_report(run_synth_optimal(small("synth_optimal", (1.0,))), tmp_path)
    table = read_table(tmp_path / "cost_vs_lambda.csv")
    assert len(table.rows) == 1
    for svg in tmp_path.glob("*.svg"):
        root = ET.parse(svg).getroot()
        assert root.tag.endswith("svg")


def test_provenance_changes_with_config():
    a = small("synth_optimal", (1.0,))
    assert a.digest() == small("synth_optimal", (1.0,), out="elsewhere").digest()
    assert a.digest() != small("synth_optimal", (1.0,), seed=1).digest()


def test_synth_train_report(tmp_path):
    cfg = small("synth_train", (math.inf, 1.0, 0.0))
    report = run_synth_train(cfg)
    table = report.tables["cost_vs_lambda"]
    assert table.columns[-2:] == ("kl_mean", "kl_sem")
    kl = table.column("kl_mean")
    assert kl[0] == 0.0
    assert set(report.params) == {"lambda_01_rep_00", "lambda_02_rep_00"}
    write_report(report, tmp_path, figures=False)
    assert (tmp_path / "params" / "lambda_01_rep_00.json").exists()
    assert csv_header(tmp_path / "traces" / "lambda_02_rep_00.csv") == "iter,mean_S,mean_cost,mean_logratio,grad_norm"


def test_synth_compare_report():
    cfg = small("synth_compare", (math.inf, 1e9, 2.0, 0.5))
    report = run_synth_compare(cfg)
    table = report.tables["compare_cost"]
    gap, gap_sem = table.column("cost_gap"), table.column("cost_gap_sem")
    assert abs(gap[1]) < 3 * gap_sem[1]
    dpe = table.column("draws_per_ess_mean")
    assert np.all(np.diff(dpe) >= -1e-9)


def _fixture_config(**kw):
    return small("replay_train", (math.inf, 0.0, 1.0),
                 replay=ReplaySettings(fixture_submissions=30, eval_samples=4),
                 train=replace(TrainSettings(iterations=5, batch_size=20, param_scale=(1.25e-4, 1, 1), repetitions=1)), **kw)


def test_replay_report():
    report = run_replay_train(_fixture_config())
    table = report.tables["replay_cost_utility"]
    assert ",".join(table.columns) == SCHEMAS["replay_train"]["replay_cost_utility"]
    base = table.where(**{"lambda": math.inf}).rows[0]
    assert base[7] == 0.0 and base[9] == 0.0
    kl = report.tables["kl_vs_utility"]
    assert ",".join(kl.columns) == SCHEMAS["replay_train"]["kl_vs_utility"]
    assert len(kl.rows) == 3


def test_replay_adds_original_model_row():
    report = run_replay_train(replace(_fixture_config(), lambdas=(0.0,)))
    assert report.tables["replay_cost_utility"].column("lambda").tolist() == [math.inf, 0.0]


def test_replay_empty_split():
    with pytest.raises(ConfigError, match="empty split"):
        run_replay_train(replace(_fixture_config(), replay=ReplaySettings(fixture_submissions=1)))
    with pytest.raises(ConfigError):
        run_replay_train(replace(_fixture_config(), replay=ReplaySettings()))


def test_replay_large_lambda_matches_original():
    # lambda -> inf: the evaluation KL vanishes and utility matches the original model
    cfg = replace(_fixture_config(), lambdas=(math.inf, 1e9))
    table = run_replay_train(cfg).tables["replay_cost_utility"]
    u, u_sem = table.column("utility_mean"), table.column("utility_sem")
    assert abs(table.column("kl_mean")[1]) < 1e-3
    assert abs(u[1] - u[0]) < 3 * u_sem[0]


# -- command line ----------------------------------------------------------


def test_cli_synth_optimal(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nmode = synth_optimal\n[optimal]\nsamples = 20\nkappa = 5\n")
    out = tmp_path / "out"
    code = main(["synth-optimal", "--config", str(cfg), "--lambda", "inf,1", "--reps", "2", "--seed", "3", "--out", str(out)])
    assert code == 0
    assert "# seed: 3" in (out / "cost_vs_lambda.csv").read_text()
    assert len(read_table(out / "cost_vs_lambda.csv").rows) == 2


def test_cli_config_errors(tmp_path):
    assert main(["synth-optimal", "--lambda", "1,zero", "--out", str(tmp_path)]) == 2
    assert main(["synth-optimal", "--lambda", "0", "--out", str(tmp_path)]) == 2
    assert main(["synth-optimal", "--config", str(tmp_path / "missing.ini")]) == 2
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nmode = synth_train\n")
    assert main(["synth-optimal", "--config", str(cfg)]) == 2
    assert main(["replay-train", "--out", str(tmp_path)]) == 2


def test_cli_numerical_failure(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nmode = synth_train\neval_rollouts = 5\n"
                   "[train]\niterations = 3\nbatch_size = 4\nlearning_rate = 1e308\nrepetitions = 1\n")
    with np.errstate(over="ignore", invalid="ignore"):
        assert main(["synth-train", "--config", str(cfg), "--lambda", "0", "--out", str(tmp_path / "o")]) == 4


def test_cli_replay_with_dataset(tmp_path):
    data = tmp_path / "ds.jsonl"
    write_dataset(data, make_replay_fixture(FixtureConfig(submissions=12), 1))
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nmode = replay_train\n[train]\niterations = 2\nbatch_size = 10\n[replay]\neval_samples = 2\n")
    out = tmp_path / "out"
    assert main(["replay-train", "--config", str(cfg), "--dataset", str(data), "--lambda", "0,5", "--out", str(out), "--no-figures"]) == 0
    assert len(read_table(out / "kl_vs_utility.csv").rows) == 3


def test_cli_score_and_validate(tmp_path):
    fc = tmp_path / "fc.csv"
    fc.write_text("url,domain,label\nhttp://breitbart.com/a,,false\n")
    cm = tmp_path / "cm.csv"
    cm.write_text("id,t_offset_sec,polarity,mood,domains,submission\n"
                  "a,0,-0.4,imperative,breitbart.com,s1\nb,10,0.2,indicative,,s1\nc,0,0.1,indicative,,s2\n")
    out = tmp_path / "ds.jsonl"
    assert main(["score-comments", "--fact-checks", str(fc), "--comments", str(cm), "--out", str(out)]) == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["id"] for r in records] == ["s1", "s2"]
    assert records[0]["comments"][0] == {"id": "a", "t_offset_sec": 0.0, "phi": 0.4, "gamma": 1.0}
    assert main(["validate-data", str(out)]) == 0

    traj = rollout(REPLAY_ORIGINAL, ReplayEnv(make_replay_fixture(FixtureConfig(submissions=1), 0).submissions[0]), None, 0)
    tpath = tmp_path / "traj.jsonl"
    bad = traj.to_record()
    bad["steps"][2]["ranking"] = [1] * len(bad["steps"][2]["ranking"])
    tpath.write_text(json.dumps(traj.to_record()) + "\n" + json.dumps(bad) + "\n{oops\n")
    assert main(["validate-data", str(tpath)]) == 3


def test_cli_data_errors(tmp_path):
    assert main(["validate-data", str(tmp_path / "missing.jsonl")]) == 3
    cm = tmp_path / "cm.csv"
    cm.write_text("id,t_offset_sec,polarity,mood,domains\na,0,-3,imperative,\n")
    fc = tmp_path / "fc.csv"
    fc.write_text("url,domain,label\n")
    assert main(["score-comments", "--fact-checks", str(fc), "--comments", str(cm), "--out", str(tmp_path / "o.jsonl")]) == 3
