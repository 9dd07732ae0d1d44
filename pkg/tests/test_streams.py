import numpy as np

from cusum_oal import streams


class TestStreams:
    def test_open_unit_interval(self):
        u = streams.uniforms(0, np.arange(50), 0, 2000)
        assert u.min() > 0.0 and u.max() < 1.0

    def test_blocks_are_consistent(self):
        # steps 1..300 drawn in one call equal the same steps drawn in pieces
        whole = streams.uniforms(5, [3, 9], 0, 300)
        parts = np.concatenate([streams.uniforms(5, [3, 9], s, 100) for s in (0, 100, 200)], axis=1)
        np.testing.assert_array_equal(whole, parts)

    def test_rep_stream_independent_of_batch(self):
        alone = streams.uniforms(5, [7], 0, 64)
        batch = streams.uniforms(5, np.arange(20), 0, 64)
        np.testing.assert_array_equal(alone[0], batch[7])

    def test_no_draw_reuse(self):
        # collision audit on the raw 64-bit words of many short streams
        w = streams.words(123, np.arange(400), 0, 250).ravel()
        assert np.unique(w).size == w.size

    def test_seeds_differ(self):
        a = streams.words(1, np.arange(100), 0, 100).ravel()
        b = streams.words(2, np.arange(100), 0, 100).ravel()
        assert np.intersect1d(a, b).size == 0

    def test_roughly_uniform(self):
        u = streams.uniforms(77, np.arange(10), 0, 10_000).ravel()
        counts, _ = np.histogram(u, bins=10, range=(0, 1))
        chi2 = ((counts - u.size / 10) ** 2 / (u.size / 10)).sum()
        assert chi2 < 27.9  # 99.9% point of chi-square with 9 dof
