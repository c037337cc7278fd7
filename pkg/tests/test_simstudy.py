"""Simulation-study harness: grid validation, error summaries, study driver.

Driver tests run deliberately tiny cells (D <= 4, V <= 6) with shrunk fit
budgets so the whole module stays in the seconds range while still covering
the dual-arm zgap layout, failure recording, worker determinism, and draw
persistence.
"""

import dataclasses
import json

import numpy as np
import pandas as pd
import pytest

from plvm.exceptions import ConfigError, DomainError
from plvm.inference import PosteriorSamples
from plvm.simstudy import (
    SUMMARY_COLUMNS,
    CellResult,
    ExperimentGrid,
    _cell_rng,
    default_desk_grid,
    grid_from_dict,
    rmse_sqrt_medians,
    run_study,
    sd_along_first_topic,
    summary_frame,
)

TINY_FIT = {"cavi_max_iters": 80, "cavi_restarts": 1, "vb_draws": 60, "boot_cavi_iters": 40}


class TestExperimentGrid:
    def test_collects_every_problem_in_one_error(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentGrid(model="lda", d_list=(), k=0, methods=("gibbs", "hmc"), seeds=0)
        msg = str(exc.value)
        for fragment in ("d_list", "k must be", "hmc applies to unigram only", "seeds"):
            assert fragment in msg

    def test_p0_rules_per_model(self):
        with pytest.raises(ConfigError, match="zgap cells need p0 > 0"):
            ExperimentGrid(model="zgap", p0_list=(0.0,))
        with pytest.raises(ConfigError, match="p0 must be 0"):
            ExperimentGrid(model="lda", p0_list=(0.1,))
        ExperimentGrid(model="zgap", p0_list=(0.2,))  # valid

    def test_unigram_method_rules(self):
        with pytest.raises(ConfigError, match="no collapsed sampler"):
            ExperimentGrid(model="unigram", methods=("gibbs",))
        ExperimentGrid(model="unigram", methods=("hmc", "vb"))

    def test_cells_cross_product_order(self):
        grid = ExperimentGrid(model="lda", d_list=(2, 3), v_list=(4,), n_list=(10, 20))
        assert grid.cells() == [(2, 4, 10, 0.0), (2, 4, 20, 0.0), (3, 4, 10, 0.0), (3, 4, 20, 0.0)]

    def test_default_desk_grid(self):
        uni = default_desk_grid("unigram")
        assert uni.methods == ("hmc", "vb")
        z = default_desk_grid("zgap")
        assert z.p0_list == (0.2,)
        assert default_desk_grid("lda").methods == ("gibbs", "vb")


class TestGridFromDict:
    def test_unknown_keys_and_missing_model_reported_together(self):
        with pytest.raises(ConfigError) as exc:
            grid_from_dict({"frobnicate": 1, "d_list": [3]})
        assert "frobnicate" in str(exc.value)
        assert "needs a model" in str(exc.value)

    def test_non_dict_rejected(self):
        with pytest.raises(ConfigError):
            grid_from_dict(["lda"])

    def test_round_trip_through_json(self):
        grid = ExperimentGrid(model="lda", d_list=(3,), v_list=(4,), n_list=(20,), seeds=1)
        raw = json.loads(json.dumps(dataclasses.asdict(grid)))
        assert grid_from_dict(raw) == grid


class TestCellResult:
    def base_kwargs(self):
        return dict(model="lda", method="vb", d=1, v=1, n=1, p0=0.0, seed=0,
                    labels={"beta": ("f0",)}, runtime_s=0.1)

    def test_rejects_negative_and_nonfinite_summaries(self):
        with pytest.raises(DomainError):
            CellResult(rmse={"beta": np.array([-0.1])}, sd={"beta": np.array([0.1])}, **self.base_kwargs())
        with pytest.raises(DomainError):
            CellResult(rmse={"beta": np.array([0.1])}, sd={"beta": np.array([np.nan])}, **self.base_kwargs())


class TestErrorSummaries:
    def test_rmse_sqrt_medians_hand_case(self):
        draws = np.array([[[0.0, 1.0]], [[1.0, 4.0]], [[4.0, 9.0]]])
        np.testing.assert_allclose(rmse_sqrt_medians(np.array([[1.0, 4.0]]), draws), [0.0])
        # medians sqrt [1, 2] vs truth sqrt [0, 1]: errors [1, 1]
        np.testing.assert_allclose(rmse_sqrt_medians(np.array([[0.0, 1.0]]), draws), [1.0])

    def test_rmse_shape_validation(self):
        with pytest.raises(DomainError):
            rmse_sqrt_medians(np.ones((2, 2)), np.ones((4, 2)))
        with pytest.raises(DomainError):
            rmse_sqrt_medians(np.ones((2, 2)), np.ones((4, 3, 2)))

    def test_sd_along_first_topic(self):
        draws = np.stack([np.full((2, 2), v) for v in (1.0, 4.0, 9.0)])
        want = np.sqrt(draws[:, :, 0]).std(axis=0, ddof=1)
        np.testing.assert_allclose(sd_along_first_topic(draws), want)
        np.testing.assert_allclose(want, [1.0, 1.0])
        with pytest.raises(DomainError):
            sd_along_first_topic(draws[:1])
        with pytest.raises(DomainError):
            sd_along_first_topic(draws[:, :, 0])


class TestCellRng:
    def test_same_key_same_stream(self):
        a = _cell_rng(7, "lda", 4, 6, 40, 0.0, 1).uniform(size=5)
        b = _cell_rng(7, "lda", 4, 6, 40, 0.0, 1).uniform(size=5)
        np.testing.assert_array_equal(a, b)

    def test_any_key_part_changes_stream(self):
        base = _cell_rng(7, "lda", 4, 6, 40, 0.0, 1).uniform(size=5)
        for variant in [(8, "lda", 4, 6, 40, 0.0, 1), (7, "gap", 4, 6, 40, 0.0, 1),
                        (7, "lda", 4, 6, 40, 0.0, 2)]:
            assert not np.array_equal(base, _cell_rng(variant[0], *variant[1:]).uniform(size=5))


def lda_grid(**over):
    kwargs = dict(model="lda", d_list=(4,), v_list=(6,), n_list=(40,), k=2,
                  seeds=2, methods=("vb", "bootstrap"), bootstrap_b=4,
                  base_seed=7, fit=TINY_FIT)
    kwargs.update(over)
    return ExperimentGrid(**kwargs)


class TestRunStudy:
    def test_summary_schema_and_row_counts(self, tmp_path):
        grid = lda_grid()
        out = run_study(grid, out_dir=tmp_path / "study")
        assert list(out.summary.columns) == list(SUMMARY_COLUMNS)
        assert not out.failures
        # 2 seeds x 2 methods, each contributing V beta rows + D theta rows
        assert len(out.summary) == 2 * 2 * (6 + 4)
        assert set(out.summary["param"]) == {"beta", "theta"}
        assert (out.summary["rmse"] >= 0).all()
        assert np.isfinite(out.summary["rmse"]).all()
        pd.testing.assert_frame_equal(out.summary, summary_frame(out.results))
        for name in ("summary.csv", "failures.csv", "grid.json"):
            assert (tmp_path / "study" / name).exists()
        with open(tmp_path / "study" / "grid.json", encoding="utf-8") as fh:
            assert grid_from_dict(json.load(fh)) == grid

    def test_worker_count_does_not_change_results(self, tmp_path):
        # runtime_s is wall clock; everything else must match bit for bit
        s1 = run_study(lda_grid(), out_dir=tmp_path / "a", workers=1)
        s2 = run_study(lda_grid(), out_dir=tmp_path / "b", workers=3)
        pd.testing.assert_frame_equal(
            s1.summary.drop(columns=["runtime_s"]), s2.summary.drop(columns=["runtime_s"])
        )

    def test_zgap_runs_both_arms(self, tmp_path):
        grid = ExperimentGrid(model="zgap", d_list=(4,), v_list=(5,), n_list=(60,),
                              k=2, seeds=1, methods=("vb",), p0_list=(0.3,),
                              base_seed=3, fit=TINY_FIT)
        out = run_study(grid, out_dir=tmp_path / "z", persist_draws=True)
        assert set(out.summary["model"]) == {"gap", "zgap"}
        assert (out.summary["p0"] == 0.3).all()
        draw_files = sorted(p.name for p in (tmp_path / "z" / "draws").iterdir())
        assert any(name.startswith("gap_vb") for name in draw_files)
        assert any(name.startswith("zgap_vb") for name in draw_files)
        loaded = PosteriorSamples.load(tmp_path / "z" / "draws" / draw_files[0])
        assert "beta" in loaded.params

    def test_unsupported_method_recorded_not_raised(self, tmp_path):
        grid = ExperimentGrid(model="unigram", d_list=(3,), v_list=(4,), n_list=(30,),
                              seeds=1, methods=("bootstrap",))
        out = run_study(grid, out_dir=tmp_path / "f")
        assert not out.results
        assert len(out.failures) == 1
        assert out.failures[0].method == "bootstrap"
        assert out.failures[0].reason.startswith("ConfigError")
        table = pd.read_csv(tmp_path / "f" / "failures.csv")
        assert len(table) == 1
        assert len(out.summary) == 0
        assert list(out.summary.columns) == list(SUMMARY_COLUMNS)

    def test_unigram_hmc_cell(self):
        grid = ExperimentGrid(model="unigram", d_list=(3,), v_list=(4,), n_list=(50,),
                              seeds=1, methods=("hmc",), base_seed=11,
                              fit={"hmc_warmup": 60, "hmc_draws": 60, "hmc_chains": 2})
        out = run_study(grid)
        assert len(out.results) == 1
        r = out.results[0]
        assert set(r.rmse) == {"mu"}
        assert r.rmse["mu"].shape == (4,)
        assert (out.summary["param"] == "mu").all()
        assert len(out.summary) == 4
