"""Gated-sum fusion of multi-scale coefficients and the output projection."""

import numpy as np
import pytest

from haarmixer.aggregation import (
    AggregationParams,
    combine,
    gate_value,
    init_agg_params,
    upsample_repeat,
)
from haarmixer.autodiff import (
    Tape,
    Tensor,
    backward,
    finite_difference_gradient,
    mul_elementwise,
    sum_all,
)
from haarmixer.errors import ShapeError
from haarmixer.wavelet import (
    MultiScaleDecomposition,
    init_scale_params,
    multiscale_decompose,
)

from util import assert_grad_close


def _random_decomposition(t, d, levels, rng):
    details = [Tensor(rng.standard_normal((t // 2 ** (l + 1), d)))
               for l in range(levels)]
    approx = Tensor(rng.standard_normal((t // 2 ** levels, d)))
    return MultiScaleDecomposition(details=details, final_approx=approx,
                                   original_length=t)


class TestUpsampleRepeat:
    def test_factor_one_is_identity(self):
        x = Tensor(np.arange(6.0).reshape(3, 2))
        assert upsample_repeat(x, 1) is x

    def test_repeats_rows_consecutively(self):
        out = upsample_repeat(Tensor([[1.0, 2.0], [3.0, 4.0]]), 2)
        np.testing.assert_allclose(out.data, [[1, 2], [1, 2], [3, 4], [3, 4]])

    def test_bad_factor_rejected(self):
        with pytest.raises(ValueError):
            upsample_repeat(Tensor(np.zeros((2, 2))), 0)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_sums_over_copies(self, seed):
        """Each source row's gradient is the sum over its repeated copies."""
        rng = np.random.default_rng(seed)
        w = Tensor(rng.standard_normal((8, 3)))

        def build(t):
            return sum_all(mul_elementwise(upsample_repeat(t, 4), w))

        x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        with Tape():
            loss = build(x)
        backward(loss)
        numeric = finite_difference_gradient(build, x)
        assert_grad_close(x.grad, numeric.data)


class TestInit:
    def test_uniform_gates(self):
        p = init_agg_params(8, 4, np.random.default_rng(0))
        np.testing.assert_allclose(p.scale_gates.data, np.full(5, 0.2))

    def test_zero_bias(self):
        p = init_agg_params(8, 2, np.random.default_rng(0))
        np.testing.assert_allclose(p.b_out.data, np.zeros(8))

    def test_projection_variance_near_one_over_d(self):
        d = 512
        p = init_agg_params(d, 3, np.random.default_rng(123))
        var = p.w_out.data.var()
        assert abs(var - 1.0 / d) <= 0.2 / d


class TestCombine:
    def test_zero_gates_broadcast_bias(self):
        rng = np.random.default_rng(1)
        dec = _random_decomposition(8, 4, 2, rng)
        p = AggregationParams(
            scale_gates=Tensor(np.zeros(3)),
            w_out=Tensor(np.eye(4)),
            b_out=Tensor(np.array([1.0, 2.0, 3.0, 4.0])),
        )
        out = combine(dec, p)
        np.testing.assert_allclose(out.data, np.tile([1, 2, 3, 4], (8, 1)))

    def test_single_gate_selects_detail(self):
        """L=1, gates [1, 0], identity projection: output is the upsampled detail."""
        rng = np.random.default_rng(2)
        dec = _random_decomposition(8, 4, 1, rng)
        p = AggregationParams(
            scale_gates=Tensor(np.array([1.0, 0.0])),
            w_out=Tensor(np.eye(4)),
            b_out=Tensor(np.zeros(4)),
        )
        out = combine(dec, p)
        np.testing.assert_allclose(out.data, np.repeat(dec.details[0].data, 2, axis=0))

    def test_matches_three_loop_oracle(self):
        """Naive loops over (position, scale, feature) reproduce combine exactly."""
        rng = np.random.default_rng(3)
        t, d, levels = 16, 3, 2
        dec = _random_decomposition(t, d, levels, rng)
        p = init_agg_params(d, levels, rng)
        p.scale_gates.data = rng.standard_normal(levels + 1)
        out = combine(dec, p).data

        expected = np.zeros((t, d))
        for pos in range(t):
            fused = np.zeros(d)
            for l in range(levels):
                fused += p.scale_gates.data[l] * dec.details[l].data[pos // 2 ** (l + 1)]
            fused += p.scale_gates.data[levels] * dec.final_approx.data[pos // 2 ** levels]
            for j in range(d):
                expected[pos, j] = fused @ p.w_out.data[:, j] + p.b_out.data[j]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_output_row_count(self):
        rng = np.random.default_rng(4)
        for t, levels in ((8, 1), (8, 3), (64, 4)):
            dec = _random_decomposition(t, levels=levels, d=4, rng=rng)
            out = combine(dec, init_agg_params(4, levels, rng))
            assert out.data.shape == (t, 4)

    def test_linear_in_coefficients(self):
        """Superposition over the decomposition for fixed parameters."""
        rng = np.random.default_rng(5)
        t, d, levels = 8, 3, 2
        p = init_agg_params(d, levels, rng)
        dec1 = _random_decomposition(t, d, levels, rng)
        dec2 = _random_decomposition(t, d, levels, rng)
        summed = MultiScaleDecomposition(
            details=[Tensor(a.data + b.data)
                     for a, b in zip(dec1.details, dec2.details)],
            final_approx=Tensor(dec1.final_approx.data + dec2.final_approx.data),
            original_length=t,
        )
        lhs = combine(summed, p).data + p.b_out.data     # bias enters once per term
        rhs = combine(dec1, p).data + combine(dec2, p).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_gate_count_mismatch_rejected(self):
        rng = np.random.default_rng(6)
        dec = _random_decomposition(8, 4, 2, rng)
        with pytest.raises(ShapeError, match="gates"):
            combine(dec, init_agg_params(4, 3, rng))

    def test_inconsistent_rows_rejected(self):
        rng = np.random.default_rng(7)
        dec = _random_decomposition(8, 4, 2, rng)
        dec.details[0] = Tensor(np.zeros((3, 4)))
        with pytest.raises(ShapeError, match="inconsistent"):
            combine(dec, init_agg_params(4, 2, rng))

    @pytest.mark.parametrize("seed", range(20))
    def test_end_to_end_gradient_matches_fd(self, seed):
        """combine(multiscale_decompose(x)) gradient vs the oracle, input and params."""
        rng = np.random.default_rng(seed)
        t, d, levels = 8, 3, 2
        scales = [init_scale_params(d, l, 0.1, rng) for l in range(levels)]
        agg = init_agg_params(d, levels, rng)
        probe = Tensor(rng.standard_normal((t, d)))

        def build(t_in):
            dec = multiscale_decompose(t_in, scales)
            return sum_all(mul_elementwise(combine(dec, agg), probe))

        x = Tensor(rng.standard_normal((t, d)), requires_grad=True)
        with Tape():
            loss = build(x)
        backward(loss)
        numeric = finite_difference_gradient(build, x)
        assert_grad_close(x.grad, numeric.data)

        x_fixed = Tensor(x.data)
        for vec in (agg.scale_gates, agg.w_out, agg.b_out):
            vec.grad = None

        def params_loss():
            dec = multiscale_decompose(x_fixed, scales)
            return sum_all(mul_elementwise(combine(dec, agg), probe))

        with Tape():
            loss = params_loss()
        backward(loss)
        for name in ("scale_gates", "w_out", "b_out"):
            vec = getattr(agg, name)

            def probe_fn(v, _name=name):
                saved = getattr(agg, _name)
                setattr(agg, _name, v)
                try:
                    return params_loss()
                finally:
                    setattr(agg, _name, saved)

            numeric = finite_difference_gradient(probe_fn, vec)
            assert_grad_close(vec.grad, numeric.data)


class TestGateValue:
    def test_picks_entry(self):
        gates = Tensor(np.array([0.1, 0.2, 0.3]))
        assert gate_value(gates, 1).item() == 0.2

    def test_out_of_range_rejected(self):
        with pytest.raises(IndexError):
            gate_value(Tensor(np.array([0.1])), 3)
