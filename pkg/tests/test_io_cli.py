"""CSV ingestion, configuration, serialization, manifests, and the CLI."""

import csv
import json

import numpy as np
import pytest

from crcsieve.cli import main
from crcsieve.dataio import (
    Dataset,
    RunConfig,
    build_manifest,
    fit_result_from_dict,
    fit_result_to_dict,
    load_csv,
    load_fit_result,
    save_fit_result,
    synthetic_regional_dataset,
    write_csv,
    write_manifest,
    write_synthetic_regional_csv,
)
from crcsieve.design import build_design
from crcsieve.errors import (
    DataError,
    EmptyInputError,
    ParseError,
    SchemaError,
    ShapeError,
)
from crcsieve.estimator import profile_fit


# ---------------------------------------------------------------------------
# load_csv


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_csv_happy_path(tmp_path):
    p = _write(
        tmp_path / "d.csv",
        "y,x1,x2,z1,junk\n1.0,2.0,3.0,4.0,hello\n5,6,7,8,world\n",
    )
    ds = load_csv(p, "y", ["x1", "x2"], ["z1"])
    assert isinstance(ds, Dataset)
    assert ds.n == 2
    assert ds.y_name == "y" and ds.x_names == ["x1", "x2"] and ds.z_names == ["z1"]
    assert np.array_equal(ds.y, [1.0, 5.0])
    assert np.array_equal(ds.x, [[2.0, 3.0], [6.0, 7.0]])
    assert np.array_equal(ds.z, [[4.0], [8.0]])
    # the junk column is never touched, so its non-numeric cells are fine


def test_load_csv_single_name_strings(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x\n1,2\n3,4\n")
    ds = load_csv(p, "y", "x")
    assert ds.x.shape == (2, 1) and ds.z is None and ds.z_names == []


def test_load_csv_header_only_file(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x,z\n")
    with pytest.raises(EmptyInputError):
        load_csv(p, "y", ["x"])


def test_load_csv_empty_file(tmp_path):
    p = _write(tmp_path / "d.csv", "")
    with pytest.raises(EmptyInputError):
        load_csv(p, "y", ["x"])


def test_load_csv_missing_column_named_in_error(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x1\n1,2\n")
    with pytest.raises(SchemaError, match="z1"):
        load_csv(p, "y", ["x1"], ["z1"])


def test_load_csv_parse_error_carries_row_and_column(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x\n1,2\n3,oops\n")
    with pytest.raises(ParseError, match=r"row 3.*'x'.*oops"):
        load_csv(p, "y", ["x"])


def test_load_csv_missing_cell_rejected_with_row(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x\n1,2\n3,\n5,6\n")
    with pytest.raises(DataError, match=r"\[3\]"):
        load_csv(p, "y", ["x"])


def test_load_csv_short_row_rejected(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x\n1,2\n3\n")
    with pytest.raises(DataError, match=r"\[3\]"):
        load_csv(p, "y", ["x"])


def test_load_csv_non_finite_rejected(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x\n1,2\nnan,4\n")
    with pytest.raises(DataError, match=r"\[3\]"):
        load_csv(p, "y", ["x"])


def test_load_csv_duplicate_selection(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x\n1,2\n")
    with pytest.raises(SchemaError):
        load_csv(p, "y", ["x", "x"])


def test_load_csv_skips_blank_lines(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x\n1,2\n\n3,4\n")
    ds = load_csv(p, "y", ["x"])
    assert ds.n == 2


# ---------------------------------------------------------------------------
# RunConfig


def test_runconfig_defaults_valid():
    cfg = RunConfig()
    assert cfg.k is None and cfg.level == 0.95 and cfg.weights == "rademacher"


@pytest.mark.parametrize(
    "bad",
    [
        {"level": 0.0},
        {"level": 1.0},
        {"ginv_tol": 0.0},
        {"ginv_tol": -1e-9},
        {"weights": "gaussian"},
        {"grid_points": 1},
        {"k": 0},
        {"k_grid": []},
        {"k_grid": [2, 0]},
    ],
)
def test_runconfig_rejects_bad_values(bad):
    with pytest.raises(ShapeError):
        RunConfig(**bad)


def test_runconfig_from_file_and_merge(tmp_path):
    p = _write(tmp_path / "cfg.json", '{"k": 4, "seed": 11, "level": 0.9}')
    cfg = RunConfig.from_file(p)
    assert cfg.k == 4 and cfg.seed == 11 and cfg.level == 0.9
    merged = cfg.merged(seed=3, k=None)  # None values never override
    assert merged.seed == 3 and merged.k == 4


def test_runconfig_from_file_unknown_key(tmp_path):
    p = _write(tmp_path / "cfg.json", '{"krid": 4}')
    with pytest.raises(SchemaError, match="krid"):
        RunConfig.from_file(p)


def test_runconfig_from_file_bad_json(tmp_path):
    p = _write(tmp_path / "cfg.json", "{not json")
    with pytest.raises(ParseError):
        RunConfig.from_file(p)


def test_runconfig_from_file_non_object(tmp_path):
    p = _write(tmp_path / "cfg.json", "[1, 2]")
    with pytest.raises(SchemaError):
        RunConfig.from_file(p)


# ---------------------------------------------------------------------------
# fit-result serialization round trip


def _small_fit(seed=0, n=120, k=3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, n)
    y = 0.5 + x * (1.0 + 0.5 * x) + 0.1 * rng.standard_normal(n)
    design = build_design(y, x, k=k)
    return design, profile_fit(design)


def test_fit_result_round_trip_is_bit_identical(tmp_path):
    _, fit = _small_fit()
    path = tmp_path / "fit.json"
    save_fit_result(fit, str(path))
    back = load_fit_result(str(path))
    # exact equality, not approximate: repr-encoded floats reload bitwise
    assert np.array_equal(back.delta_hat, fit.delta_hat)
    assert np.array_equal(back.pi_hat, fit.pi_hat)
    assert np.array_equal(back.se_delta, fit.se_delta)
    assert np.array_equal(back.vcov_delta, fit.vcov_delta)
    assert np.array_equal(back.residuals, fit.residuals)
    assert back.k == fit.k and back.labels == fit.labels
    assert back.n_obs == fit.n_obs and back.rank_s == fit.rank_s


def test_fit_result_dict_handles_missing_vcov():
    _, fit = _small_fit()
    d = fit_result_to_dict(fit)
    d["vcov_delta"] = None
    d["se_delta"] = None
    back = fit_result_from_dict(d)
    assert back.vcov_delta is None and back.se_delta is None


# ---------------------------------------------------------------------------
# manifest


def test_manifest_is_deterministic_and_timestamp_free(tmp_path):
    data = _write(tmp_path / "d.csv", "y,x\n1,2\n3,4\n")
    kw = dict(command="fit", config={"k": 2, "seed": 1}, seed=1, data_path=data)
    m1, m2 = build_manifest(**kw), build_manifest(**kw)
    assert m1 == m2
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    write_manifest(m1, str(p1))
    write_manifest(m2, str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    flat = json.dumps(m1).lower()
    assert "timestamp" not in flat and "date" not in flat
    assert m1["versions"]["numpy"] == np.__version__
    assert len(m1["data_sha256"]) == 64 and len(m1["config_sha256"]) == 64


def test_manifest_hash_tracks_config_and_data(tmp_path):
    d1 = _write(tmp_path / "a.csv", "y,x\n1,2\n")
    d2 = _write(tmp_path / "b.csv", "y,x\n1,3\n")
    base = build_manifest(command="fit", config={"k": 2}, seed=0, data_path=d1)
    other_cfg = build_manifest(command="fit", config={"k": 3}, seed=0, data_path=d1)
    other_data = build_manifest(command="fit", config={"k": 2}, seed=0, data_path=d2)
    assert base["config_sha256"] != other_cfg["config_sha256"]
    assert base["data_sha256"] != other_data["data_sha256"]


# ---------------------------------------------------------------------------
# synthetic dataset


def test_synthetic_regional_dataset_shape_and_ranges():
    header, table = synthetic_regional_dataset(n=600, seed=1)
    assert header == ["outcome_change", "exposure_index", "region_1", "region_2"]
    assert table.shape == (600, 4)
    y, x, r1, r2 = table.T
    assert y.min() >= -0.30 and y.max() <= 0.76
    assert abs(y.mean() - 0.02) < 0.02 and abs(y.std() - 0.12) < 0.05
    assert x.min() >= 0.0 and x.max() <= 1.13
    assert set(np.unique(r1)) <= {0.0, 1.0} and set(np.unique(r2)) <= {0.0, 1.0}
    assert np.all(r1 + r2 <= 1.0)  # indicators of disjoint groups
    _, again = synthetic_regional_dataset(n=600, seed=1)
    assert np.array_equal(table, again)
    _, other = synthetic_regional_dataset(n=600, seed=2)
    assert not np.array_equal(table, other)


def test_synthetic_regional_csv_loads_and_fits(tmp_path):
    path = tmp_path / "regional.csv"
    write_synthetic_regional_csv(str(path), n=300, seed=5)
    ds = load_csv(
        str(path), "outcome_change", ["exposure_index"], ["region_1", "region_2"]
    )
    assert ds.n == 300 and ds.z.shape == (300, 2)
    design = build_design(ds.y, ds.x, z_matrix=ds.z, k=2, z_labels=ds.z_names)
    fit = profile_fit(design)
    assert fit.labels[-2:] == ["region_1", "region_2"]
    assert np.all(np.isfinite(fit.delta_hat))


def test_synthetic_regional_dataset_rejects_tiny_n():
    with pytest.raises(ShapeError):
        synthetic_regional_dataset(n=5)


# ---------------------------------------------------------------------------
# CLI


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "regional.csv"
    write_synthetic_regional_csv(str(path), n=200, seed=7)
    return str(path)


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_cli_fit_writes_expected_artifacts(data_csv, tmp_path, capsys):
    out = tmp_path / "out"
    rc = main([
        "fit", "--data", data_csv, "--y", "outcome_change",
        "--x", "exposure_index", "--z", "region_1", "region_2",
        "--k-grid", "1", "2", "--cv-folds", "4", "--seed", "1",
        "--out", str(out),
    ])
    assert rc == 0
    for name in ("coefficients.csv", "b1_grid.csv", "fit.json",
                 "manifest.json", "estimates.png", "cv.png"):
        assert (out / name).exists(), name
    rows = _read_rows(out / "coefficients.csv")
    assert rows[0] == ["term", "estimate", "se", "k"]
    terms = [r[0] for r in rows[1:]]
    assert terms[:2] == ["const", "x1"] and "region_1" in terms
    ks = {r[3] for r in rows[1:]}
    assert len(ks) == 1  # one chosen size for the whole fit
    grid = _read_rows(out / "b1_grid.csv")
    assert grid[0] == ["xi", "b_hat"]
    assert len(grid) == 1 + 101
    stdout = capsys.readouterr().out
    assert "selected basis size" in stdout
    assert "pi_hat norm" in stdout
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "fit"
    assert "cv_scores" in manifest["diagnostics"]


def test_cli_fit_rerun_is_byte_identical(data_csv, tmp_path):
    args = [
        "fit", "--data", data_csv, "--y", "outcome_change",
        "--x", "exposure_index", "--k", "2", "--seed", "3",
    ]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    for name in ("coefficients.csv", "b1_grid.csv", "fit.json",
                 "manifest.json", "estimates.png"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_cli_fit_round_trip_restores_estimates(data_csv, tmp_path):
    out = tmp_path / "out"
    assert main([
        "fit", "--data", data_csv, "--y", "outcome_change",
        "--x", "exposure_index", "--k", "2", "--out", str(out), "--no-plots",
    ]) == 0
    ds = load_csv(data_csv, "outcome_change", ["exposure_index"])
    fit = profile_fit(build_design(ds.y, ds.x, k=2))
    back = load_fit_result(str(out / "fit.json"))
    assert np.array_equal(back.delta_hat, fit.delta_hat)
    assert np.array_equal(back.pi_hat, fit.pi_hat)


def test_cli_no_plots_skips_figures(data_csv, tmp_path):
    out = tmp_path / "out"
    assert main([
        "fit", "--data", data_csv, "--y", "outcome_change",
        "--x", "exposure_index", "--k", "2", "--out", str(out), "--no-plots",
    ]) == 0
    assert not list(out.glob("*.png"))
    assert (out / "coefficients.csv").exists()


def test_cli_fit_reports_near_zero_pi_for_linear_data(tmp_path, capsys):
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, 150)
    y = 1.0 + 2.0 * x  # no slope heterogeneity, no noise
    path = tmp_path / "lin.csv"
    write_csv(str(path), ["y", "x"], np.column_stack([y, x]).tolist())
    out = tmp_path / "out"
    assert main([
        "fit", "--data", str(path), "--y", "y", "--x", "x",
        "--k", "3", "--out", str(out), "--no-plots",
    ]) == 0
    stdout = capsys.readouterr().out
    assert "no detectable slope heterogeneity" in stdout
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["diagnostics"]["pi_hat_norm"] < 1e-8


def test_cli_bands_grid_orders_bounds(data_csv, tmp_path):
    out = tmp_path / "out"
    rc = main([
        "bands", "--data", data_csv, "--y", "outcome_change",
        "--x", "exposure_index", "--k", "2", "--B", "200",
        "--level", "0.95", "--weights", "rademacher", "--seed", "4",
        "--out", str(out), "--no-plots",
    ])
    assert rc == 0
    rows = _read_rows(out / "b1_grid.csv")
    assert rows[0] == ["xi", "b_hat", "lower", "upper"]
    vals = np.array([[float(c) for c in r] for r in rows[1:]])
    assert np.all(vals[:, 2] <= vals[:, 1]) and np.all(vals[:, 1] <= vals[:, 3])
    assert np.all(vals[:, 2] < vals[:, 3])
    xi = vals[:, 0]
    assert np.all(np.diff(xi) > 0)


def test_cli_bands_mammen_weights_run(data_csv, tmp_path):
    out = tmp_path / "out"
    rc = main([
        "bands", "--data", data_csv, "--y", "outcome_change",
        "--x", "exposure_index", "--k", "1", "--B", "60",
        "--weights", "mammen", "--out", str(out), "--no-plots",
    ])
    assert rc == 0
    rows = _read_rows(out / "b1_grid.csv")
    assert rows[0][-2:] == ["lower", "upper"]


def test_cli_cv_writes_score_table(data_csv, tmp_path, capsys):
    out = tmp_path / "out"
    rc = main([
        "cv", "--data", data_csv, "--y", "outcome_change",
        "--x", "exposure_index", "--k-grid", "1", "2", "3",
        "--cv-folds", "4", "--out", str(out), "--no-plots",
    ])
    assert rc == 0
    rows = _read_rows(out / "cv.csv")
    assert rows[0] == ["k", "score", "failed"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert all(float(r[1]) > 0 for r in rows[1:])
    assert all(r[2] == "" for r in rows[1:])
    assert "<- selected" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["diagnostics"]["chosen_k"] in (1, 2, 3)


def test_cli_cv_records_failed_candidates(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 60)
    y = x + 0.1 * rng.standard_normal(60)
    path = tmp_path / "tiny.csv"
    write_csv(str(path), ["y", "x"], np.column_stack([y, x]).tolist())
    out = tmp_path / "out"
    rc = main([
        "cv", "--data", str(path), "--y", "y", "--x", "x",
        "--k-grid", "2", "50", "--cv-folds", "5", "--out", str(out),
        "--no-plots",
    ])
    assert rc == 0
    rows = _read_rows(out / "cv.csv")
    by_k = {r[0]: r for r in rows[1:]}
    assert by_k["50"][1] == "" and "ShapeError" in by_k["50"][2]


def test_cli_simulate_summary_has_mase_column(tmp_path, capsys):
    out = tmp_path / "out"
    rc = main([
        "simulate", "--design", "d1_uni", "--n", "120", "--reps", "6",
        "--seed", "2", "--k", "2", "--out", str(out), "--no-plots",
    ])
    assert rc == 0
    rows = _read_rows(out / "summary.csv")
    assert rows[0] == ["estimator", "parameter", "truth", "bias", "se",
                       "rmse", "mase"]
    mase_rows = [r for r in rows[1:] if r[6] != ""]
    assert len(mase_rows) == 1 and float(mase_rows[0][6]) > 0
    assert mase_rows[0][1] == "b1"
    est_rows = [r for r in rows[1:] if r[6] == ""]
    assert {r[0] for r in est_rows} == {"snp", "ols"}
    k_rows = _read_rows(out / "k_choice.csv")
    assert k_rows[0] == ["k", "count"]
    assert sum(int(r[1]) for r in k_rows[1:]) == 6
    stud = _read_rows(out / "studentized.csv")
    assert len(stud) == 1 + 6
    stdout = capsys.readouterr().out
    assert "mase" in stdout and "d1_uni" in stdout
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["diagnostics"]["dropped_replications"] == 0


def test_cli_simulate_rerun_is_byte_identical(tmp_path):
    args = [
        "simulate", "--design", "d1_uni", "--n", "100", "--reps", "5",
        "--seed", "9", "--k", "2", "--no-plots",
    ]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2), "--jobs", "2"]) == 0
    for name in ("summary.csv", "k_choice.csv", "studentized.csv",
                 "manifest.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_cli_error_line_contract(tmp_path, capsys):
    rc = main(["fit", "--data", str(tmp_path / "nope.csv"),
               "--y", "y", "--x", "x"])
    assert rc == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: FileNotFoundError:")
    assert "\n" not in err


def test_cli_error_line_for_bad_schema(data_csv, capsys):
    rc = main(["fit", "--data", data_csv, "--y", "outcome_change",
               "--x", "nope"])
    assert rc == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: SchemaError:") and "nope" in err


def test_cli_error_line_when_all_cv_candidates_fail(tmp_path, capsys):
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 60)
    path = tmp_path / "tiny.csv"
    write_csv(str(path), ["y", "x"], np.column_stack([x, x]).tolist())
    rc = main([
        "fit", "--data", str(path), "--y", "y", "--x", "x",
        "--k-grid", "50", "--cv-folds", "5", "--out", str(tmp_path / "out"),
    ])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error: SelectionError:")


def test_cli_config_file_sets_k_and_cli_overrides(data_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"k": 2, "seed": 5}', encoding="utf-8")
    out1 = tmp_path / "a"
    assert main([
        "fit", "--data", data_csv, "--y", "outcome_change",
        "--x", "exposure_index", "--config", str(cfg),
        "--out", str(out1), "--no-plots",
    ]) == 0
    rows = _read_rows(out1 / "coefficients.csv")
    assert {r[3] for r in rows[1:]} == {"2"}
    out2 = tmp_path / "b"
    assert main([
        "fit", "--data", data_csv, "--y", "outcome_change",
        "--x", "exposure_index", "--config", str(cfg), "--k", "3",
        "--out", str(out2), "--no-plots",
    ]) == 0
    rows = _read_rows(out2 / "coefficients.csv")
    assert {r[3] for r in rows[1:]} == {"3"}


def test_cli_config_file_unknown_key_is_an_error_line(data_csv, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"bandwidth": 0.1}', encoding="utf-8")
    rc = main([
        "fit", "--data", data_csv, "--y", "outcome_change",
        "--x", "exposure_index", "--config", str(cfg),
    ])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error: SchemaError:")
