"""Representativeness tables and tidy plot-data exports.

The ordering pitfall pinned here: display transforms are applied to each
posterior draw BEFORE quantiles are taken. The g transform centers by the
draw's own mean log probability, so transform-then-quantile and
quantile-then-transform genuinely differ; a test constructs such a case.
"""

import numpy as np
import pandas as pd
import pytest

from plvm.corpus import Taxonomy
from plvm.exceptions import BoundsError, ConfigError, DomainError
from plvm.inference import PosteriorSamples
from plvm.numeric import Rng, g_transform, softmax
from plvm.ppc import PpcReport
from plvm.report import (
    QUANTILE_COLS,
    _centered_log,
    export_plot_data,
    family_representativeness,
    representativeness_scores,
    representativeness_table,
    topic_representativeness,
)


class TestRepresentativenessScores:
    def test_hand_computed(self):
        beta = np.array([[0.5, 0.1], [0.2, 0.6]])
        scores = representativeness_scores(beta)
        np.testing.assert_allclose(scores, [[0.5 - 0.1, 0.1 - 0.5], [0.2 - 0.6, 0.6 - 0.2]])

    def test_row_sum_identity(self):
        rng = Rng(0)
        beta = rng.dirichlet_matrix(np.full(30, 0.5), 4).T
        scores = representativeness_scores(beta)
        want = (2 - 4) * beta.sum(axis=1)
        np.testing.assert_allclose(scores.sum(axis=1), want, atol=1e-12)

    def test_validation(self):
        with pytest.raises(DomainError):
            representativeness_scores(np.array([0.1, 0.2]))
        with pytest.raises(DomainError):
            representativeness_scores(np.array([[-0.1, 0.2]]))


class TestRepresentativenessTable:
    def test_ranks_and_tie_breaking(self):
        # f1 and f2 tie on topic 1; the smaller feature id must rank first
        beta = np.array([[0.5, 0.0], [0.2, 0.3], [0.2, 0.3]])
        table = representativeness_table(beta, ["f0", "f1", "f2"])
        topic1 = table[table["topic"] == 1]
        assert list(topic1["feature"]) == ["f0", "f1", "f2"]
        assert list(topic1["rank"]) == [1, 2, 3]
        topic2 = table[table["topic"] == 2]
        assert list(topic2["feature"]) == ["f1", "f2", "f0"]

    def test_default_ids_and_length_check(self):
        table = representativeness_table(np.array([[0.4], [0.6]]))
        assert list(table["feature"]) == ["f0001", "f0000"]
        with pytest.raises(DomainError):
            representativeness_table(np.array([[0.4], [0.6]]), ["only_one"])


class TestTopicRepresentativeness:
    def test_top_m_slice_one_based(self):
        beta = np.array([[0.5, 0.1], [0.3, 0.2], [0.2, 0.7]])
        out = topic_representativeness(beta, k=2, top_m=2, feature_ids=["a", "b", "c"])
        assert list(out["feature"]) == ["c", "b"]
        assert list(out["rank"]) == [1, 2]
        assert (out["topic"] == 2).all()

    def test_bounds(self):
        beta = np.array([[0.5, 0.1], [0.5, 0.9]])
        with pytest.raises(BoundsError):
            topic_representativeness(beta, k=3, top_m=1)
        with pytest.raises(BoundsError):
            topic_representativeness(beta, k=1, top_m=5)


class TestFamilyRepresentativeness:
    def test_group_means_and_sizes(self):
        beta = np.array([[0.6, 0.2], [0.1, 0.5], [0.3, 0.3]])
        scores = representativeness_scores(beta)
        tax = Taxonomy(family=("A", "", "A"), phylo_index=np.array([0, 1, 2]))
        out = family_representativeness(beta, tax)
        a_topic1 = out[(out["family"] == "A") & (out["topic"] == 1)].iloc[0]
        np.testing.assert_allclose(a_topic1["mean_score"], (scores[0, 0] + scores[2, 0]) / 2)
        assert a_topic1["family_size"] == 2
        unk = out[out["family"] == "unknown"]
        assert len(unk) == 2  # one row per topic
        np.testing.assert_allclose(
            unk[unk["topic"] == 2]["mean_score"].iloc[0], scores[1, 1]
        )

    def test_validation(self):
        beta = np.array([[0.6, 0.2], [0.4, 0.8]])
        with pytest.raises(DomainError):
            family_representativeness(beta, None)
        with pytest.raises(DomainError):
            family_representativeness(beta, Taxonomy(family=("A",), phylo_index=np.array([0])))


def theta_store(draws):
    return PosteriorSamples({"theta": np.asarray(draws, dtype=float)[None]}, {"model": "lda"})


class TestThetaBoxes:
    def test_schema_and_raw_scale_quantiles(self, tmp_path):
        rng = Rng(1)
        draws = rng.dirichlet_matrix(np.full(3, 1.0), 40 * 2).reshape(40, 2, 3)
        table = export_plot_data(
            "theta_boxes", tmp_path / "t.csv", samples=theta_store(draws),
            sample_ids=["s0", "s1"], times=[0.5, 1.5],
        )
        assert list(table.columns) == ["sample_id", "time", "topic", *QUANTILE_COLS]
        assert len(table) == 6
        row = table[(table["sample_id"] == "s1") & (table["topic"] == 3)].iloc[0]
        np.testing.assert_allclose(row["q50"], np.quantile(draws[:, 1, 2], 0.5, method="linear"))
        assert row["time"] == 1.5
        back = pd.read_csv(tmp_path / "t.csv")
        assert len(back) == 6

    def test_times_optional_and_length_checks(self, tmp_path):
        draws = np.full((5, 2, 2), 0.5)
        table = export_plot_data("theta_boxes", tmp_path / "t.csv", samples=theta_store(draws), sample_ids=["a", "b"])
        assert (table["time"] == "").all()
        with pytest.raises(DomainError):
            export_plot_data("theta_boxes", tmp_path / "t.csv", samples=theta_store(draws), sample_ids=["a"])


class TestBetaIntervals:
    def test_transform_applied_before_quantiles(self, tmp_path):
        # three features, one topic; the g transform centers each draw by its
        # own mean log, so the median draw differs across features and
        # quantile-then-transform gives a different answer
        draws = np.array(
            [
                [[0.7], [0.2], [0.1]],
                [[0.3], [0.4], [0.3]],
                [[0.5], [0.1], [0.4]],
            ]
        )
        samples = PosteriorSamples({"beta": draws[None]}, {"model": "lda"})
        table = export_plot_data("beta_intervals", tmp_path / "b.csv", samples=samples, feature_ids=["x", "y", "z"])
        per_draw = np.stack([g_transform(draws[i, :, 0]) for i in range(3)])
        want_q50 = np.quantile(per_draw, 0.5, axis=0, method="linear")
        np.testing.assert_allclose(table["q50"].to_numpy(), want_q50)
        wrong_order = g_transform(np.quantile(draws[:, :, 0], 0.5, axis=0, method="linear"))
        assert not np.allclose(want_q50, wrong_order)

    def test_schema(self, tmp_path):
        rng = Rng(2)
        draws = np.stack([rng.dirichlet_matrix(np.full(4, 1.0), 2).T for _ in range(20)])
        samples = PosteriorSamples({"beta": draws[None]}, {"model": "lda"})
        table = export_plot_data("beta_intervals", tmp_path / "b.csv", samples=samples, feature_ids=list("wxyz"))
        assert list(table.columns) == ["feature", "topic", *QUANTILE_COLS]
        assert len(table) == 8
        assert (table["q025"] <= table["q50"]).all()
        assert (table["q50"] <= table["q975"]).all()


class TestMuIntervals:
    def test_centering_matches_g_of_softmax(self):
        rng = Rng(3)
        mu = rng.normal(0.0, 1.0, size=(6, 4))
        np.testing.assert_allclose(_centered_log(mu), g_transform(softmax(mu)), atol=1e-12)

    def test_schema_and_values(self, tmp_path):
        rng = Rng(4)
        draws = rng.normal(0.0, 1.0, size=(30, 2, 3))
        samples = PosteriorSamples({"mu": draws[None]}, {"model": "unigram"})
        table = export_plot_data(
            "mu_intervals", tmp_path / "m.csv", samples=samples,
            feature_ids=["a", "b", "c"], times=[0.0, 1.0],
        )
        assert list(table.columns) == ["time", "feature", *QUANTILE_COLS]
        centered = draws - draws.mean(axis=-1, keepdims=True)
        row = table[(table["time"] == 1.0) & (table["feature"] == "b")].iloc[0]
        np.testing.assert_allclose(row["q25"], np.quantile(centered[:, 1, 1], 0.25, method="linear"))

    def test_validation(self, tmp_path):
        draws = np.zeros((5, 2, 3))
        samples = PosteriorSamples({"mu": draws[None]}, {"model": "unigram"})
        with pytest.raises(DomainError):
            export_plot_data("mu_intervals", tmp_path / "m.csv", samples=samples, feature_ids=["a", "b", "c"], times=None)
        with pytest.raises(DomainError):
            export_plot_data("mu_intervals", tmp_path / "m.csv", samples=samples, feature_ids=["a"], times=[0.0, 1.0])


class TestPpcOverlay:
    def make_report(self):
        return PpcReport("mean", np.array([1.0, 2.0]), np.array([[1.5, 2.5]]), features=("a", "b"))

    def test_no_jitter_passthrough(self, tmp_path):
        table = export_plot_data("ppc_overlay", tmp_path / "o.csv", report=self.make_report())
        assert (table["jittered"] == False).all()  # noqa: E712
        np.testing.assert_allclose(
            table[table["kind"] == "observed"]["value"].to_numpy(), [1.0, 2.0]
        )

    def test_jitter_bounded_flagged_deterministic(self, tmp_path):
        base = self.make_report().to_frame()["value"].to_numpy()
        t1 = export_plot_data("ppc_overlay", tmp_path / "o.csv", report=self.make_report(), jitter_rng=Rng(9))
        t2 = export_plot_data("ppc_overlay", tmp_path / "o2.csv", report=self.make_report(), jitter_rng=Rng(9))
        shift = t1["value"].to_numpy() - base
        assert np.all(shift >= 0.0) and np.all(shift < 0.2)
        assert shift.max() > 0.0
        assert (t1["jittered"] == True).all()  # noqa: E712
        np.testing.assert_array_equal(t1["value"].to_numpy(), t2["value"].to_numpy())


class TestRepresentativenessExport:
    def test_top_m_filters_every_topic(self, tmp_path):
        rng = Rng(5)
        beta = rng.dirichlet_matrix(np.full(6, 1.0), 2).T
        table = export_plot_data("representativeness", tmp_path / "r.csv", beta=beta, top_m=2)
        assert len(table) == 4
        assert table["rank"].max() == 2
        with pytest.raises(BoundsError):
            export_plot_data("representativeness", tmp_path / "r.csv", beta=beta, top_m=99)

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ConfigError):
            export_plot_data("pie_chart", tmp_path / "p.csv", beta=np.ones((2, 2)))
