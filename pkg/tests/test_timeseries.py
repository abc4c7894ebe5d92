import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from periodprior.timeseries import (TimeSeries, TimeSeriesError, detrend_mean, from_arrays,
                                    load_timeseries, save_timeseries)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def write(path, text):
    path.write_text(text)
    return path


class TestLoad:
    def test_rows_sorted_by_time(self, tmp_path):
        f = write(tmp_path / "d.csv", "time,value\n2,20\n1,10\n3,30\n")
        s = load_timeseries(f)
        np.testing.assert_array_equal(s.times, [1, 2, 3])
        np.testing.assert_array_equal(s.values, [10, 20, 30])
        assert s.sigmas is None

    def test_nan_row_dropped_and_counted(self, tmp_path):
        rows = [f"{i},{i * 0.5}" for i in range(10)]
        rows[4] = "4,nan"
        f = write(tmp_path / "d.csv", "time,value\n" + "\n".join(rows) + "\n")
        s = load_timeseries(f)
        assert s.M == 9
        assert s.n_dropped == 1
        assert 4.0 not in s.times

    def test_column_map_and_whitespace(self, tmp_path):
        f = write(tmp_path / "rv.txt", "# comment\nbjd rv e_rv\n10.5 3.0 1.5\n11.5 -2.0 2.0\n")
        s = load_timeseries(f, {"time": "bjd", "value": "rv", "sigma": "e_rv"})
        np.testing.assert_array_equal(s.sigmas, [1.5, 2.0])
        assert s.name == "rv"

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_timeseries(tmp_path / "nope.csv")

    def test_unmapped_column(self, tmp_path):
        f = write(tmp_path / "d.csv", "t,v\n1,2\n2,3\n")
        with pytest.raises(TimeSeriesError, match="'time'"):
            load_timeseries(f)

    def test_too_few_rows(self, tmp_path):
        f = write(tmp_path / "d.csv", "time,value\n1,2\n2,nan\n")
        with pytest.raises(TimeSeriesError, match="fewer than 2"):
            load_timeseries(f)

    def test_duplicate_timestamp(self, tmp_path):
        f = write(tmp_path / "d.csv", "time,value\n1,2\n1,3\n2,4\n")
        with pytest.raises(TimeSeriesError, match="duplicate"):
            load_timeseries(f)

    def test_nonpositive_sigma_row_dropped(self, tmp_path):
        f = write(tmp_path / "d.csv", "time,value,sigma\n1,2,1\n2,3,0\n3,4,1\n")
        s = load_timeseries(f, {"sigma": "sigma"})
        assert s.M == 2 and s.n_dropped == 1


class TestInvariants:
    def test_rejects_unsorted(self):
        with pytest.raises(TimeSeriesError):
            TimeSeries(np.array([2.0, 1.0]), np.array([0.0, 0.0]))

    def test_rejects_bad_sigma(self):
        with pytest.raises(TimeSeriesError):
            TimeSeries(np.array([1.0, 2.0]), np.zeros(2), np.array([1.0, -1.0]))

    def test_arrays_read_only(self):
        s = from_arrays([1, 2], [3, 4])
        with pytest.raises(ValueError):
            s.values[0] = 1.0


class TestRoundTrip:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(finite, finite, st.floats(1e-6, 1e3)), min_size=2, max_size=30,
                    unique_by=lambda r: r[0]))
    def test_load_export_load_bit_identical(self, tmp_path_factory, rows):
        d = tmp_path_factory.mktemp("rt")
        t, v, s = (np.array(c) for c in zip(*rows))
        cmap = {"sigma": "sigma"}
        a = from_arrays(t, v, s)
        save_timeseries(a, d / "a.csv", cmap)
        b = load_timeseries(d / "a.csv", cmap)
        save_timeseries(b, d / "b.csv", cmap)
        c = load_timeseries(d / "b.csv", cmap)
        for x, y in ((a, b), (b, c)):
            assert x.times.tobytes() == y.times.tobytes()
            assert x.values.tobytes() == y.values.tobytes()
            assert x.sigmas.tobytes() == y.sigmas.tobytes()
        assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()


class TestDetrend:
    def test_simple(self):
        s = detrend_mean(from_arrays([0, 1, 2], [1, 2, 3]))
        np.testing.assert_allclose(s.values, [-1, 0, 1], atol=1e-15)
        assert s.mean_removed == 2.0

    def test_two_point(self):
        s = detrend_mean(from_arrays([0, 1], [9.26, 9.20]))
        np.testing.assert_allclose(s.values, [0.03, -0.03], atol=1e-12)
        assert s.mean_removed == pytest.approx(9.23, abs=1e-12)

    def test_zero_mean_unchanged(self):
        a = from_arrays([0, 1, 2], [-1.0, 0.0, 1.0])
        b = detrend_mean(a)
        assert b.values.tobytes() == a.values.tobytes()

    def test_times_and_sigmas_untouched(self):
        a = from_arrays([0, 1, 5], [4.0, 5.0, 9.0], [0.1, 0.2, 0.3])
        b = detrend_mean(a)
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.sigmas, b.sigmas)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(finite, min_size=2, max_size=40))
    def test_idempotent_and_centred(self, vals):
        s = from_arrays(np.arange(len(vals), dtype=float), vals)
        once = detrend_mean(s)
        twice = detrend_mean(once)
        assert once.values.tobytes() == twice.values.tobytes()
        scale = max(1.0, float(np.max(np.abs(vals))))
        assert abs(np.mean(once.values)) <= 1e-12 * scale
