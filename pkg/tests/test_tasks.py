"""Task streams (synthetic and CSV) and CIL/TIL evaluation."""

import numpy as np
import pytest

from pdcl.nncore import MlpSpec, init_params, param_count
from pdcl.tasks import (
    CsvParseError,
    DifficultyProfile,
    StreamConfigError,
    evaluate,
    make_split_stream,
    make_synthetic_stream,
)


def small_stream(seed=0, n_tasks=2, sep=5.0, noise=0.5, layout="random", flip=0.0):
    profile = DifficultyProfile.uniform(n_tasks, sep, 100, noise)
    return make_synthetic_stream(
        n_tasks, profile, input_dim=4, classes_per_task=2, seed=seed,
        label_flip_fraction=flip, layout=layout,
    )


class TestSyntheticStream:
    def test_disjoint_label_ranges(self):
        stream = small_stream()
        assert stream.tasks[0].classes == (0, 1)
        assert stream.tasks[1].classes == (2, 3)

    def test_deterministic_per_seed(self):
        a, b = small_stream(seed=3), small_stream(seed=3)
        for ta, tb in zip(a.tasks, b.tasks):
            np.testing.assert_array_equal(ta.train.x, tb.train.x)
            np.testing.assert_array_equal(ta.train.y, tb.train.y)

    def test_seeds_produce_different_streams(self):
        a, b = small_stream(seed=3), small_stream(seed=4)
        assert not np.array_equal(a.tasks[0].train.x, b.tasks[0].train.x)

    def test_split_is_80_20(self):
        stream = small_stream()
        task = stream.tasks[0]
        assert len(task.train) == 80
        assert len(task.test) == 20

    def test_ids_unique_across_stream(self):
        stream = small_stream(n_tasks=3)
        all_ids = np.concatenate(
            [np.concatenate([t.train.ids, t.test.ids]) for t in stream.tasks]
        )
        assert len(np.unique(all_ids)) == len(all_ids)

    def test_class_means_at_requested_separation(self):
        stream = small_stream(sep=8.0, noise=0.01, seed=1)
        for task in stream.tasks:
            mus = [task.train.x[task.train.y == c].mean(axis=0) for c in task.classes]
            assert np.linalg.norm(mus[0] - mus[1]) == pytest.approx(8.0, rel=0.05)

    def test_linear_probe_separates_well_separated_task(self):
        # separation = 10 * noise must be nearly linearly separable
        stream = small_stream(sep=10.0, noise=1.0, seed=2)
        task = stream.tasks[0]
        ones = np.ones((len(task.train), 1))
        design = np.hstack([task.train.x, ones])
        target = np.where(task.train.y == task.classes[1], 1.0, -1.0)
        w, *_ = np.linalg.lstsq(design, target, rcond=None)
        test_design = np.hstack([task.test.x, np.ones((len(task.test), 1))])
        pred = np.where(test_design @ w > 0, task.classes[1], task.classes[0])
        assert np.mean(pred == task.test.y) >= 0.99

    def test_orthogonal_layout_uses_one_axis_per_class(self):
        stream = small_stream(layout="orthogonal", noise=0.01, sep=6.0)
        for task in stream.tasks:
            for j, c in enumerate(task.classes):
                mu = np.abs(task.train.x[task.train.y == c].mean(axis=0))
                assert np.argmax(mu) == c
                assert mu[c] == pytest.approx(6.0 / np.sqrt(2.0), rel=0.05)

    def test_orthogonal_layout_needs_enough_dimensions(self):
        profile = DifficultyProfile.uniform(3, 4.0, 100, 0.5)
        with pytest.raises(StreamConfigError):
            make_synthetic_stream(3, profile, input_dim=4, classes_per_task=2,
                                  seed=0, layout="orthogonal")

    def test_unknown_layout_rejected(self):
        profile = DifficultyProfile.uniform(1, 4.0, 100, 0.5)
        with pytest.raises(StreamConfigError):
            make_synthetic_stream(1, profile, 4, 2, seed=0, layout="spiral")

    def test_label_flips_recorded_and_within_task(self):
        stream = small_stream(flip=0.1, seed=5)
        for task in stream.tasks:
            assert len(task.flipped_ids) == round(0.1 * len(task.train))
            assert set(task.flipped_ids) <= set(int(i) for i in task.train.ids)
            assert set(np.unique(task.train.y)) <= set(task.classes)

    def test_profile_validation(self):
        with pytest.raises(StreamConfigError):
            DifficultyProfile.uniform(2, -1.0, 100)
        with pytest.raises(StreamConfigError):
            DifficultyProfile.uniform(2, 1.0, 5)

    def test_profile_length_must_match_task_count(self):
        profile = DifficultyProfile.uniform(2, 4.0, 100)
        with pytest.raises(StreamConfigError):
            make_synthetic_stream(3, profile, 4, 2, seed=0)


class TestSplitStream:
    @staticmethod
    def write_csv(path, labels, dim=3, per_class=30, seed=0):
        rng = np.random.default_rng(seed)
        with open(path, "w", encoding="utf-8") as fh:
            for lbl in labels:
                for _ in range(per_class):
                    feats = rng.normal(size=dim)
                    fh.write(f"{lbl}," + ",".join(f"{v:.6f}" for v in feats) + "\n")

    def test_tasks_follow_ascending_label_order(self, tmp_path):
        path = tmp_path / "data.csv"
        self.write_csv(path, [3, 1, 0, 2])
        stream = make_split_stream(path, n_tasks=2, classes_per_task=2, seed=0)
        assert stream.tasks[0].classes == (0, 1)
        assert stream.tasks[1].classes == (2, 3)

    def test_per_class_cap_subsamples(self, tmp_path):
        path = tmp_path / "data.csv"
        self.write_csv(path, [0, 1], per_class=50)
        stream = make_split_stream(path, 1, 2, per_class_cap=10, seed=0)
        train = stream.tasks[0].train
        for c in (0, 1):
            assert np.sum(train.y == c) == 10

    def test_cap_subsets_differ_across_seeds(self, tmp_path):
        path = tmp_path / "data.csv"
        self.write_csv(path, [0, 1], per_class=50)
        a = make_split_stream(path, 1, 2, per_class_cap=10, seed=0)
        b = make_split_stream(path, 1, 2, per_class_cap=10, seed=1)
        assert set(a.tasks[0].train.ids) != set(b.tasks[0].train.ids)

    def test_infinite_cap_keeps_all_training_rows(self, tmp_path):
        path = tmp_path / "data.csv"
        self.write_csv(path, [0, 1], per_class=30)
        stream = make_split_stream(path, 1, 2, seed=0)
        assert len(stream.tasks[0].train) + len(stream.tasks[0].test) == 60

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("0,1.0,2.0\n1,oops,2.0\n", encoding="utf-8")
        with pytest.raises(CsvParseError, match="bad.csv:2"):
            make_split_stream(path, 1, 2, seed=0)

    def test_insufficient_classes_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        self.write_csv(path, [0, 1])
        with pytest.raises(StreamConfigError):
            make_split_stream(path, 2, 2, seed=0)


class TestEvaluate:
    def test_til_accuracy_at_least_cil(self):
        stream = small_stream(n_tasks=3, sep=2.0, noise=1.5, seed=6)
        spec = MlpSpec((4, 8, 6), seed=6)
        theta = init_params(spec)
        cil = evaluate(spec, theta, stream, 3, "CIL")
        til = evaluate(spec, theta, stream, 3, "TIL")
        assert np.all(til >= cil)

    def test_zero_params_til_predicts_lowest_class(self):
        stream = small_stream(seed=7)
        spec = MlpSpec((4, 4))
        theta = np.zeros(param_count(spec))
        til = evaluate(spec, theta, stream, 2, "TIL")
        for t, task in enumerate(stream.tasks):
            freq_low = np.mean(task.test.y == task.classes[0])
            assert til[t] == pytest.approx(freq_low)

    def test_single_task_stream_cil_equals_til(self):
        stream = small_stream(n_tasks=1)
        spec = MlpSpec((4, 5, 2), seed=0)
        theta = init_params(spec)
        np.testing.assert_array_equal(
            evaluate(spec, theta, stream, 1, "CIL"), evaluate(spec, theta, stream, 1, "TIL")
        )

    def test_invalid_mode_and_range_rejected(self):
        stream = small_stream()
        spec = MlpSpec((4, 5, 4), seed=0)
        theta = init_params(spec)
        with pytest.raises(ValueError):
            evaluate(spec, theta, stream, 2, "til")
        with pytest.raises(ValueError):
            evaluate(spec, theta, stream, 3, "TIL")
