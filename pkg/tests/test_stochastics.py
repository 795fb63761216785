import numpy as np
import pytest
from scipy import stats

from multifbsde.errors import ParameterDomainError
from multifbsde.stochastics import (RngStream, brownian_rows, derive_seed,
                                    sample_brownian_batch, standard_normal_matrix)


class TestSampleBrownianBatch:
    def test_rejects_nonpositive_step(self):
        with pytest.raises(ParameterDomainError):
            sample_brownian_batch(7, 2, 3, 1, 0.0)
        with pytest.raises(ParameterDomainError):
            sample_brownian_batch(7, 2, 3, 1, -1.0)

    def test_rejects_zero_counts(self):
        for m, n, k in ((0, 3, 1), (2, 0, 1), (2, 3, 0)):
            with pytest.raises(ParameterDomainError):
                sample_brownian_batch(7, m, n, k, 0.1)

    def test_deterministic(self):
        a = sample_brownian_batch(42, 8, 5, 3, 0.1)
        b = sample_brownian_batch(42, 8, 5, 3, 0.1)
        assert np.array_equal(a.increments, b.increments)

    def test_seed_changes_values(self):
        a = sample_brownian_batch(1, 8, 5, 3, 0.1)
        b = sample_brownian_batch(2, 8, 5, 3, 0.1)
        assert not np.array_equal(a.increments, b.increments)

    def test_variance_matches_step(self):
        # chi-square-style 4-sigma band around h = 0.25 for 2^16 draws
        b = sample_brownian_batch(1, 2**16, 1, 1, 0.25)
        assert 0.245 <= b.increments.var() <= 0.255

    def test_entries_do_not_depend_on_batch_size(self):
        small = sample_brownian_batch(5, 4, 6, 2, 0.2)
        large = sample_brownian_batch(5, 64, 6, 2, 0.2)
        assert np.array_equal(small.increments, large.increments[:4])

    def test_row_range_matches_full_tensor(self):
        full = sample_brownian_batch(9, 50, 4, 3, 0.5)
        rows = brownian_rows(9, 17, 29, 4, 3, 0.5)
        assert np.array_equal(rows, full.increments[17:29])

    def test_slice_samples_is_view(self):
        b = sample_brownian_batch(3, 16, 2, 2, 0.1)
        s = b.slice_samples(4, 8)
        assert s.m == 4
        assert np.shares_memory(s.increments, b.increments)


class TestStandardNormalMatrix:
    def test_deterministic(self):
        assert np.array_equal(standard_normal_matrix(3, 1, 2),
                              standard_normal_matrix(3, 1, 2))

    def test_mean_within_four_sigma(self):
        z = standard_normal_matrix(3, 2**16, 1)
        assert -0.016 <= z.mean() <= 0.016

    def test_variance_within_band(self):
        z = standard_normal_matrix(3, 2**16, 1)
        assert 0.978 <= z.var() <= 1.022

    def test_rejects_zero_counts(self):
        with pytest.raises(ParameterDomainError):
            standard_normal_matrix(3, 0, 2)
        with pytest.raises(ParameterDomainError):
            standard_normal_matrix(3, 2, 0)

    def test_normality_kolmogorov_smirnov(self):
        # 0.1%-level critical value for n = 2^14 one-sample KS
        n = 2**14
        draws = standard_normal_matrix(123, n, 1).ravel()
        stat = stats.kstest(draws, "norm").statistic
        critical = np.sqrt(-np.log(0.0005) / 2.0) / np.sqrt(n)
        assert stat < critical

    def test_distinct_purpose_streams(self):
        # same seed, different consumers -> different sequences
        z = standard_normal_matrix(11, 4, 1).ravel()
        w = sample_brownian_batch(11, 4, 1, 1, 1.0).increments.ravel()
        assert not np.allclose(z, w)


class TestRngStream:
    def test_counter_addressing(self):
        s = RngStream(7, stream_id=2)
        first = s.normals(5)
        rewound = RngStream(7, stream_id=2)
        assert np.array_equal(first, rewound.normals(5))
        assert s.counter == 5

    def test_resume_mid_stream(self):
        s = RngStream(7)
        a = s.normals(10)
        resumed = RngStream(7, counter=4)
        assert np.array_equal(a[4:], resumed.normals(6))

    def test_streams_differ(self):
        a = RngStream(7, stream_id=0).normals(64)
        b = RngStream(7, stream_id=1).normals(64)
        assert not np.allclose(a, b)
        # and are decorrelated
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.2

    def test_uniforms_in_open_interval(self):
        u = RngStream(0).uniforms(2**12)
        assert u.min() > 0.0 and u.max() < 1.0


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(5, 1) == derive_seed(5, 1)
    assert derive_seed(5, 1) != derive_seed(5, 2)
    assert derive_seed(5, 1) != derive_seed(6, 1)
