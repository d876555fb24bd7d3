import json

import numpy as np
import pytest

from relaybf.bench import (
    ResultTable,
    ExperimentSpec,
    load_preset,
    load_spec,
    preset_names,
    resolve_spec,
    run_experiment,
    table_to_csv,
    trial_seed,
    write_outputs,
)


def small_spec(**kw):
    base = dict(
        name="t",
        methods=["perfect_optimal", "nonrobust", "robust_optimal", "simplified_robust"],
        relay_power_db=[20.0],
        rho=[0.0, 0.3],
        n_trials=2,
    )
    base.update(kw)
    return ExperimentSpec(**base)


class TestSpec:
    @pytest.mark.parametrize(
        "kw",
        [
            {"kind": "bogus"},
            {"methods": ["dinkelbach"]},
            {"methods": []},
            {"methods": ["nonrobust", "nonrobust"]},
            {"n_trials": 0},
            {"rho": [1.0]},
            {"n_t": [0]},
            {"relay_antennas": [[]]},
            {"relay_power_db": []},
            {"delta2": 0.0},
        ],
    )
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            small_spec(**kw)

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown spec keys"):
            ExperimentSpec.from_dict({"name": "x", "methods": ["nonrobust"], "colour": 1})

    def test_round_trip(self):
        spec = small_spec()
        assert ExperimentSpec.from_dict(spec.to_dict()) == spec

    def test_single_layout_is_wrapped(self):
        spec = small_spec(relay_antennas=[3, 3])
        assert spec.relay_antennas == [[3, 3]]

    def test_points_are_cartesian(self):
        spec = small_spec(n_t=[1, 2], relay_power_db=[0, 10, 20])
        assert len(spec.points()) == 2 * 3 * 2

    def test_trial_seed_independent_of_other_settings(self):
        assert trial_seed(0, 3) == trial_seed(0, 3)
        assert trial_seed(0, 3) != trial_seed(0, 4)
        assert trial_seed(0, 3) != trial_seed(1, 3)


class TestLoading:
    def test_presets(self):
        names = preset_names()
        assert {"fig3", "fig4", "fig5", "fig6", "fig7", "fig8"} <= set(names)
        for n in names:
            assert load_preset(n).name == n

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            resolve_spec("no-such-preset")

    def test_toml_and_json(self, tmp_path):
        toml = tmp_path / "a.toml"
        toml.write_text('name = "a"\nmethods = ["nonrobust"]\nrho = [0.1]\nrelay_antennas = [[1, 2]]\n')
        js = tmp_path / "a.json"
        js.write_text(json.dumps({"name": "a", "methods": ["nonrobust"], "rho": [0.1], "relay_antennas": [[1, 2]]}))
        assert load_spec(toml) == load_spec(js)
        assert resolve_spec(str(toml)).relay_antennas == [[1, 2]]

    def test_bad_suffix(self, tmp_path):
        p = tmp_path / "a.yaml"
        p.write_text("name: a")
        with pytest.raises(ValueError):
            load_spec(p)


class TestRun:
    def test_snr_table(self, tmp_path):
        table = run_experiment(small_spec())
        assert table.columns == ["relay_power_db", "rho", "method", "mean_snr_db", "std_db", "n_ok"]
        assert len(table.rows) == 2 * 4
        vals = {(r[1], r[2]): r[3] for r in table.rows}
        assert vals[(0.0, "robust_optimal")] == pytest.approx(vals[(0.0, "perfect_optimal")], abs=1e-6)
        assert vals[(0.3, "robust_optimal")] >= vals[(0.3, "nonrobust")]
        csv_path, meta_path = write_outputs(table, tmp_path / "out", "t")
        meta = json.loads(open(meta_path).read())
        assert meta["seed"] == 0 and meta["solver"]["failures"] == 0
        assert open(csv_path).read() == table_to_csv(table)

    def test_deterministic(self):
        spec = small_spec(n_trials=1, rho=[0.3])
        assert table_to_csv(run_experiment(spec)) == table_to_csv(run_experiment(spec))

    def test_threads_give_identical_output(self):
        spec = small_spec(methods=["nonrobust", "simplified_robust"], n_trials=3, rho=[0.3])
        assert table_to_csv(run_experiment(spec)) == table_to_csv(run_experiment(spec, threads=2))

    def test_varying_sweep_columns_appear(self):
        spec = small_spec(methods=["nonrobust"], n_t=[1, 2], relay_antennas=[[1, 1], [2, 2]], rho=[0.3], n_trials=1)
        table = run_experiment(spec)
        assert table.columns[:2] == ["n_t", "relay_antennas"]
        assert {r[1] for r in table.rows} == {"1-1", "2-2"}

    def test_iteration_kind(self):
        spec = ExperimentSpec(
            name="it", kind="iterations", methods=["dinkelbach", "bisection"], relay_power_db=[20.0], n_trials=2
        )
        table = run_experiment(spec)
        assert table.columns[-4:] == ["method", "mean_iterations", "std_iterations", "n_ok"]
        assert all(r[-1] == 2 for r in table.rows)

    def test_convergence_kind(self):
        spec = ExperimentSpec(
            name="cv", kind="convergence", methods=["pa"], relay_power_db=[20.0], n_trials=1, track_iterations=5
        )
        table = run_experiment(spec)
        assert len(table.rows) == 6
        for r in table.rows:
            assert r[-3] <= 1e-12 and r[-2] >= -1e-12

    def test_empty_table_has_header(self):
        table = ResultTable(["a", "b"], [], {})
        assert table_to_csv(table) == "a,b\n"

    def test_progress_callback(self):
        seen = []
        run_experiment(small_spec(methods=["nonrobust"], n_trials=2, rho=[0.3]), progress=lambda d, n: seen.append((d, n)))
        assert seen[-1] == (2, 2)
