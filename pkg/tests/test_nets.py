import numpy as np
import pytest

from lldd import autodiff as ad
from lldd import nets
from conftest import check_grad


def _count_oracle(layers):
    # independent shape arithmetic: weights o*c*k*k plus o biases per conv
    return sum(o * c * k * k + o for c, o, k in layers)


class TestBuild:
    def test_srcnn_shape_contract(self):
        spec = nets.srcnn_lite()
        ps = nets.build(spec, seed=7)
        x = ad.constant(np.zeros((1, 1, 32, 32), dtype=np.float32))
        assert nets.forward(spec, ps, x).value.shape == (1, 1, 32, 32)

    def test_same_seed_identical_checksums(self):
        spec = nets.redcnn_lite()
        assert nets.build(spec, 123).checksum() == nets.build(spec, 123).checksum()
        assert nets.build(spec, 123).checksum() != nets.build(spec, 124).checksum()

    def test_param_count_srcnn_fixture(self):
        # srcnn_lite(16, 8), kernels 9-1-5:
        oracle = _count_oracle([(1, 16, 9), (16, 8, 1), (8, 1, 5)])
        assert oracle == 1649
        assert nets.param_count(nets.srcnn_lite()) == 1649

    def test_param_count_oracle_all_archs(self):
        assert nets.param_count(nets.redcnn_lite(width=12, depth=3)) == \
            _count_oracle([(1, 12, 5), (12, 12, 5), (12, 12, 5),
                           (12, 12, 5), (12, 12, 5), (12, 1, 5)])
        assert nets.param_count(nets.edsr_lite(width=16, blocks=2)) == \
            _count_oracle([(1, 16, 3)] + [(16, 16, 3)] * 4 + [(16, 1, 3)])

    def test_unknown_arch(self):
        with pytest.raises(ValueError, match="unknown arch"):
            nets.NetworkSpec("vgg")

    def test_he_init_statistics(self):
        ps = nets.build(nets.srcnn_lite(), seed=0, dtype=np.float64)
        w = ps.node("extract.w").value
        assert abs(w.std() * np.sqrt(81 / 2.0) - 1.0) < 0.15
        assert np.all(ps.node("extract.b").value == 0.0)


class TestForward:
    def test_zero_weight_srcnn_outputs_zero(self, rng):
        spec = nets.srcnn_lite()
        ps = nets.build(spec, 0)
        for _, p in ps.params:
            p.value[...] = 0.0
        x = ad.constant(rng.random((2, 1, 16, 16)).astype(np.float32))
        assert np.all(nets.forward(spec, ps, x).value == 0.0)

    def test_zero_weight_edsr_is_passthrough(self, rng):
        spec = nets.edsr_lite()
        ps = nets.build(spec, 0)
        for _, p in ps.params:
            p.value[...] = 0.0
        x = ad.constant(rng.random((1, 1, 12, 12)).astype(np.float32))
        assert np.array_equal(nets.forward(spec, ps, x).value, x.value)

    def test_edsr_zero_residual_branches(self, rng):
        # zeroed residual branches reduce edsr to head -> tail + skip
        spec = nets.edsr_lite(width=4, blocks=2)
        ps = nets.build(spec, 3, dtype=np.float64)
        for name, p in ps.params:
            if name.startswith("block"):
                p.value[...] = 0.0
        x = ad.constant(rng.random((1, 1, 10, 10)))
        got = nets.forward(spec, ps, x).value
        head = ad.conv2d(x, ps.node("head.w"), ps.node("head.b"), padding=1)
        want = ad.add(ad.conv2d(head, ps.node("tail.w"), ps.node("tail.b"),
                                padding=1), x).value
        assert np.array_equal(got, want)

    @pytest.mark.parametrize("make", [nets.srcnn_lite, nets.redcnn_lite,
                                      nets.edsr_lite])
    def test_shape_preserving_odd_sizes(self, make, rng):
        spec = make()
        ps = nets.build(spec, 5)
        x = ad.constant(rng.random((1, 1, 31, 33)).astype(np.float32))
        assert nets.forward(spec, ps, x).value.shape == (1, 1, 31, 33)

    def test_forward_deterministic(self, rng):
        spec = nets.redcnn_lite()
        ps = nets.build(spec, 11)
        x = ad.constant(rng.random((1, 1, 20, 20)).astype(np.float32))
        a = nets.forward(spec, ps, x).value
        b = nets.forward(spec, ps, x).value
        assert np.array_equal(a, b)

    def test_input_too_small(self):
        spec = nets.srcnn_lite()
        ps = nets.build(spec, 0)
        with pytest.raises(ad.ShapeError, match="spatial"):
            nets.forward(spec, ps, ad.constant(np.zeros((1, 1, 8, 8),
                                                        dtype=np.float32)))

    @pytest.mark.parametrize("make,size", [
        (lambda: nets.srcnn_lite(channels=(4, 3)), 12),
        (lambda: nets.redcnn_lite(width=3), 8),
        (lambda: nets.edsr_lite(width=3, blocks=1), 8),
    ])
    def test_forward_gradients_match_finite_differences(self, make, size, rng):
        spec = make()
        ps = nets.build(spec, 2, dtype=np.float64)
        x = ad.constant(rng.random((1, 1, size, size)))
        probe = ad.constant(rng.standard_normal((1, 1, size, size)))

        def f():
            return ad.dot(nets.forward(spec, ps, x), probe)

        check_grad(f, ps.nodes(), tol=1e-5)
