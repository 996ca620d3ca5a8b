import numpy as np
import pytest

from fantf.data import (Normalizer, SeriesDataset, SplitSpec, WindowSpec, fit_apply_normalizer, load_csv,
                        make_windows, split, synthesize, window_count)
from fantf.errors import ContractError, DataError, ParseError


def series(t, n=2):
    return SeriesDataset(np.arange(t * n, dtype=float).reshape(t, n), [f"c{i}" for i in range(n)])


class TestLoadCsv:
    def test_hand_parse(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("a,b\n1,2\n3,4")
        ds = load_csv(path)
        assert ds.values.tolist() == [[1.0, 2.0], [3.0, 4.0]]
        assert ds.variate_names == ["a", "b"]

    def test_header_only(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("a,b\n")
        with pytest.raises(DataError):
            load_csv(path)

    def test_bad_cell_reports_line(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\n1,2\n1,x\n")
        with pytest.raises(ParseError, match="line 3") as info:
            load_csv(path)
        assert info.value.line == 3

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("a,b\n1,2\n3\n")
        with pytest.raises(ParseError, match="line 3"):
            load_csv(path)

    def test_timestamp_column_dropped(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("date,x\n2020-01-01,1.5\n2020-01-02,2.5\n")
        ds = load_csv(path, timestamp_col="date")
        assert ds.values.tolist() == [[1.5], [2.5]] and ds.timestamps == ["2020-01-01", "2020-01-02"]

    def test_non_finite_rows_rejected_and_counted(self, tmp_path):
        path = tmp_path / "n.csv"
        path.write_text("a\n1\nnan\n3\n")
        ds = load_csv(path)
        assert ds.values.ravel().tolist() == [1.0, 3.0] and ds.rejected_rows == 1

    def test_no_header(self, tmp_path):
        path = tmp_path / "nh.csv"
        path.write_text("1,2\n3,4\n")
        assert load_csv(path, has_header=False).length == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "absent.csv")


class TestNormalizer:
    def test_constant_variate(self):
        ds = SeriesDataset(np.c_[np.full(5, 3.0), np.arange(5.0)], ["a", "b"])
        _, out = fit_apply_normalizer(ds, ds)
        assert np.all(out.values[:, 0] == 0)

    def test_round_trip(self):
        x = np.random.default_rng(0).normal(size=(50, 3)) * 10 + 4
        norm = Normalizer.fit(x)
        np.testing.assert_allclose(norm.inverse(norm.transform(x)), x, atol=1e-12, rtol=0)

    def test_train_statistics(self):
        x = np.random.default_rng(1).normal(size=(100, 2)) * 3 - 1
        ds = SeriesDataset(x, ["a", "b"])
        train, _, _ = split(ds, SplitSpec())
        _, out = fit_apply_normalizer(train, train)
        np.testing.assert_allclose(out.values.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.values.std(axis=0), 1.0, atol=1e-9)


class TestWindows:
    def test_count(self):
        assert len(make_windows(series(10), WindowSpec(4, 2, 1))) == 5 == window_count(10, WindowSpec(4, 2))

    def test_exact_fit(self):
        assert len(make_windows(series(6), WindowSpec(4, 2))) == 1

    def test_alignment(self):
        ds = series(10)
        w = make_windows(ds, WindowSpec(4, 2, 3))
        assert np.array_equal(w.inputs[0], ds.values[0:4])
        assert np.array_equal(w.targets[1], ds.values[7:9])
        assert w.offsets.tolist() == [0, 3]

    def test_too_short(self):
        with pytest.raises(ContractError):
            make_windows(series(5), WindowSpec(4, 2))

    def test_step_labels_follow_windows(self):
        ds = synthesize("anomaly_spikes", {"length": 400}, seed=1)
        w = make_windows(ds, WindowSpec(16))
        assert np.array_equal(w.labels[5], ds.labels[5:21])

    def test_window_labels_need_matching_grid(self):
        ds = synthesize("two_class", {"n_windows": 10, "window_len": 8}, seed=0)
        assert make_windows(ds, WindowSpec(8, 0, 8)).labels.tolist() == ds.labels.tolist()
        with pytest.raises(ContractError):
            make_windows(ds, WindowSpec(8, 0, 4))


class TestSplit:
    def test_floor_rule(self):
        parts = split(series(100), SplitSpec(0.7, 0.1, 0.2))
        assert [p.length for p in parts] == [70, 10, 20]

    def test_concatenation_is_original(self):
        ds = series(37)
        parts = split(ds, SplitSpec(0.6, 0.2, 0.2))
        assert np.array_equal(np.concatenate([p.values for p in parts]), ds.values)

    def test_empty_part_rejected(self):
        with pytest.raises(ContractError):
            split(series(100), SplitSpec(1.0, 0.0, 0.0))

    def test_bad_fractions(self):
        with pytest.raises(ContractError):
            SplitSpec(0.5, 0.5, 0.5)

    def test_window_labelled_split_in_blocks(self):
        ds = synthesize("two_class", {"n_windows": 20, "window_len": 8}, seed=0)
        train, val, test = split(ds, SplitSpec(0.7, 0.1, 0.2))
        assert (train.length, val.length, test.length) == (112, 16, 32)
        assert len(train.labels) == 14 and len(test.labels) == 4


class TestSynthesize:
    def test_noiseless_sine_is_periodic(self):
        ds = synthesize("sine_mix", {"length": 200, "periods": (16.0, 8.0), "noise": 0.0}, seed=3)
        np.testing.assert_allclose(ds.values[:-16], ds.values[16:], atol=1e-9)

    def test_rate_zero_has_no_anomalies(self):
        ds = synthesize("anomaly_spikes", {"length": 300, "rate": 0.0}, seed=4)
        assert ds.labels.sum() == 0

    def test_spike_rate_even_across_splits(self):
        ds = synthesize("anomaly_spikes", {"length": 6000, "rate": 0.02}, seed=5)
        assert ds.labels.mean() == pytest.approx(0.02, abs=1e-3)
        for part in split(ds, SplitSpec(0.5, 0.25, 0.25)):
            assert part.labels.mean() == pytest.approx(0.02, abs=0.004)

    def test_spike_peak_amplitude(self):
        params = {"length": 2000, "rate": 0.02, "spike_amplitude": 5.0}
        base = synthesize("anomaly_spikes", {**params, "rate": 0.0}, seed=6).values
        spiked = synthesize("anomaly_spikes", params, seed=6)
        bump = (spiked.values - base).max(axis=0)
        np.testing.assert_allclose(bump, 5.0 * base.std(axis=0), rtol=1e-12)

    @pytest.mark.parametrize("kind", ["sine_mix", "trend_season", "anomaly_spikes", "two_class"])
    def test_same_seed_same_data(self, kind):
        a, b = synthesize(kind, seed=7), synthesize(kind, seed=7)
        assert np.array_equal(a.values, b.values)
        assert (a.labels is None) == (b.labels is None)
        if a.labels is not None:
            assert np.array_equal(a.labels, b.labels)

    def test_two_class_balanced(self):
        ds = synthesize("two_class", {"n_windows": 50}, seed=8)
        assert ds.label_kind == "window" and abs(int(ds.labels.sum()) - 25) <= 1

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            synthesize("random_walk")

    def test_rate_out_of_range(self):
        with pytest.raises(ContractError):
            synthesize("anomaly_spikes", {"rate": 0.5})
