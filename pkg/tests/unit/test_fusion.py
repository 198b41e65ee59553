"""
Tests for the selective scan kernel, the gated Mamba block and the
cross-modal Mamba stack.
"""

import numpy as np
import pytest

from core.config import ModelConfig
from core.errors import ContractError
from core.fusion import (
    CmmBlock,
    CmmStack,
    MambaBlock,
    SsmParams,
    causal_depthwise_conv,
    cifr_forward,
    cmm_block,
    mamba_block,
    scan_kernel,
    scan_reference,
    scan_states,
    selective_scan,
    state_bound,
)
from core.numcore import Tensor, backward, new_tape, ops
from core.numcore.nn import masked_mean, parameter

pytestmark = pytest.mark.unit


def _scan_args(rng, batch=2, steps=16, channels=3, state=4, scale=1.0):
    return dict(
        x=rng.normal(size=(batch, steps, channels)) * scale,
        delta=rng.uniform(0.01, 1.0, size=(batch, steps, channels)),
        a=-rng.uniform(0.1, 2.0, size=(channels, state)),
        b=rng.normal(size=(batch, steps, state)),
        c=rng.normal(size=(batch, steps, state)),
        d=rng.normal(size=channels),
    )


def _loop_oracle(x, delta, a, b, c, d):
    batch, steps, channels = x.shape
    y = np.zeros_like(x)
    for n in range(batch):
        h = np.zeros(a.shape)
        for t in range(steps):
            h = np.exp(delta[n, t][:, None] * a) * h + (delta[n, t][:, None] * b[n, t][None, :]) * x[n, t][:, None]
            y[n, t] = h @ c[n, t] + d * x[n, t]
    return y


# =============================================================================
# Selective scan
# =============================================================================

class TestSelectiveScan:

    @pytest.mark.parametrize("steps", [1, 2, 16, 64])
    def test_kernel_matches_loop_oracle(self, f64, rng, steps):
        args = _scan_args(rng, steps=steps)
        y = scan_kernel(*(Tensor(v) for v in args.values())).data
        np.testing.assert_allclose(y, _loop_oracle(**args), atol=1e-10)

    @pytest.mark.parametrize("steps", [1, 2, 16])
    def test_reference_matches_kernel(self, f64, rng, steps):
        args = _scan_args(rng, steps=steps)
        tensors = [Tensor(v) for v in args.values()]
        np.testing.assert_allclose(scan_reference(*tensors).data, scan_kernel(*tensors).data, atol=1e-10)

    def test_kernel_gradients_match_reference(self, f64, rng):
        args = _scan_args(rng, steps=5)
        readout = rng.normal(size=(2, 5, 3))
        grads = []
        for fn in (scan_kernel, scan_reference):
            new_tape()
            params = [parameter(v.copy()) for v in args.values()]
            backward(ops.sum(fn(*params) * readout))
            grads.append([p.grad for p in params])
        for kernel_grad, reference_grad in zip(*grads):
            np.testing.assert_allclose(kernel_grad, reference_grad, atol=1e-10)

    def test_zero_step_is_skip_only(self, f64, rng):
        args = _scan_args(rng)
        args["delta"] = np.zeros_like(args["delta"])
        y = scan_kernel(*(Tensor(v) for v in args.values())).data
        np.testing.assert_array_equal(y, args["d"] * args["x"])

    def test_single_step_by_hand(self, f64, rng):
        args = _scan_args(rng, batch=1, steps=1, channels=2, state=3)
        x, delta, b, c, d = args["x"][0, 0], args["delta"][0, 0], args["b"][0, 0], args["c"][0, 0], args["d"]
        expected = np.array([c @ (delta[i] * b * x[i]) + d[i] * x[i] for i in range(2)])
        y = scan_kernel(*(Tensor(v) for v in args.values())).data
        np.testing.assert_allclose(y[0, 0], expected, atol=1e-12)

    def test_causal_under_prefix_perturbation(self, f64, rng):
        params = SsmParams(4, 3, 1, rng)
        x = rng.normal(size=(1, 10, 4))
        changed = x.copy()
        changed[0, 6] += 5.0
        a = selective_scan(Tensor(x), params).data
        b = selective_scan(Tensor(changed), params).data
        np.testing.assert_allclose(a[0, :6], b[0, :6], atol=1e-12)
        assert not np.allclose(a[0, 6], b[0, 6])

    def test_states_stay_within_geometric_bound(self, f64):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            args = _scan_args(rng, steps=32)
            args["x"] = rng.uniform(-10.0, 10.0, size=args["x"].shape)
            states, _ = scan_states(args["x"], args["delta"], args["a"], args["b"])
            assert np.abs(states).max() <= state_bound(args["x"], args["delta"], args["a"], args["b"]) + 1e-9

    def test_bound_needs_negative_state_matrix(self, rng):
        args = _scan_args(rng)
        with pytest.raises(ContractError):
            state_bound(args["x"], args["delta"], np.abs(args["a"]), args["b"])

    def test_shape_contract(self, f64, rng):
        args = _scan_args(rng)
        args["c"] = args["c"][:, :, :2]
        with pytest.raises(ContractError, match="C"):
            scan_kernel(*(Tensor(v) for v in args.values()))

    def test_parameters_are_well_formed(self, f64, rng):
        params = SsmParams(6, 4, 2, rng)
        assert np.all(params.a.data < 0)
        inputs = params.discretization_inputs(Tensor(rng.normal(size=(2, 5, 6))))
        assert np.all(inputs.delta.data > 0)
        assert inputs.b.shape == inputs.c.shape == (2, 5, 4)

    def test_unbatched_input_keeps_shape(self, f64, rng):
        params = SsmParams(4, 3, 1, rng)
        x = rng.normal(size=(7, 4))
        y = selective_scan(Tensor(x), params)
        assert y.shape == (7, 4)
        np.testing.assert_allclose(y.data, selective_scan(Tensor(x[None]), params).data[0], atol=1e-12)


# =============================================================================
# Mamba block
# =============================================================================

class TestMambaBlock:

    def test_depthwise_conv_oracle(self, f64, rng):
        x = rng.normal(size=(1, 6, 2))
        weight = rng.normal(size=(2, 3))
        bias = rng.normal(size=2)
        out = causal_depthwise_conv(Tensor(x), Tensor(weight), Tensor(bias)).data
        padded = np.concatenate([np.zeros((2, 2)), x[0]], axis=0)
        for t in range(6):
            expected = (padded[t:t + 3].T * weight).sum(axis=1) + bias
            np.testing.assert_allclose(out[0, t], expected, atol=1e-12)

    def test_zero_gate_leaves_only_output_bias(self, f64, tiny_model, rng):
        block = MambaBlock(tiny_model, rng)
        block.out_proj.bias.data[...] = rng.normal(size=tiny_model.d_model)
        primary = Tensor(rng.normal(size=(2, 5, tiny_model.d_model)))
        out = block(primary, Tensor(np.zeros(primary.shape))).data
        np.testing.assert_array_equal(out, np.broadcast_to(block.out_proj.bias.data, out.shape))

    def test_self_gate_matches_single_input_block(self, f64, tiny_model, rng):
        block = MambaBlock(tiny_model, rng)
        primary = Tensor(rng.normal(size=(2, 5, tiny_model.d_model)))
        np.testing.assert_allclose(
            block(primary, primary).data, block.forward_fused_projection(primary).data, atol=1e-12
        )
        np.testing.assert_allclose(block(primary).data, block(primary, primary).data, atol=0)
        np.testing.assert_array_equal(mamba_block(primary, block).data, block(primary).data)

    def test_causal(self, f64, tiny_model, rng):
        block = MambaBlock(tiny_model, rng)
        x = rng.normal(size=(1, 8, tiny_model.d_model))
        changed = x.copy()
        changed[0, 5] += 1.0
        a, b = block(Tensor(x)).data, block(Tensor(changed)).data
        np.testing.assert_allclose(a[0, :5], b[0, :5], atol=1e-12)

    def test_shape_mismatch(self, f64, tiny_model, rng):
        block = MambaBlock(tiny_model, rng)
        with pytest.raises(ContractError):
            block(Tensor(np.ones((1, 4, tiny_model.d_model))), Tensor(np.ones((1, 3, tiny_model.d_model))))


# =============================================================================
# Cross-modal Mamba
# =============================================================================

def _zero_fus(stack: CmmStack) -> None:
    for block in stack.blocks:
        block.query_fus.zero_()
        block.text_fus.zero_()


class TestCmm:

    def test_zero_fus_is_identity(self, f64, tiny_model, rng):
        block = CmmBlock(tiny_model, rng)
        block.query_fus.zero_()
        block.text_fus.zero_()
        z = Tensor(rng.normal(size=(2, 3, tiny_model.d_model)))
        t = Tensor(rng.normal(size=(2, 5, tiny_model.d_model)))
        z2, t2 = cmm_block(z, t, block)
        np.testing.assert_array_equal(z2.data, z.data)
        np.testing.assert_array_equal(t2.data, t.data)

    def test_identity_stack_pools_normalized_inputs(self, f64, tiny_model, rng):
        stack = CmmStack(tiny_model, seed=4)
        _zero_fus(stack)
        z = Tensor(rng.normal(size=(2, 3, tiny_model.d_model)))
        t = Tensor(rng.normal(size=(2, 5, tiny_model.d_model)))
        mask = np.array([[True] * 5, [True, True, False, False, False]])
        fused = cifr_forward(z, t, stack, mask)
        zn, tn = ops.layer_norm(z, eps=tiny_model.ln_eps), ops.layer_norm(t, eps=tiny_model.ln_eps)
        expected = np.concatenate([zn.data.mean(axis=1), masked_mean(tn, mask).data], axis=-1)
        np.testing.assert_allclose(fused.x_f.data, expected, atol=1e-12)

    def test_equal_length_identity_pooling_is_elementwise(self, f64, tiny_model, rng):
        config = tiny_model.model_copy(update={"partner_pooling": "identity"})
        block = CmmBlock(config, rng)
        z = Tensor(rng.normal(size=(2, 4, config.d_model)))
        t = Tensor(rng.normal(size=(2, 4, config.d_model)))
        z2, t2 = block(z, t)
        direct_z = block.query_fus(block.query_mamba(z, z * t)) + z
        direct_t = block.text_fus(block.text_mamba(t, t * z)) + t
        np.testing.assert_allclose(z2.data, direct_z.data, atol=1e-12)
        np.testing.assert_allclose(t2.data, direct_t.data, atol=1e-12)

    def test_identity_pooling_needs_equal_lengths(self, f64, tiny_model, rng):
        block = CmmBlock(tiny_model.model_copy(update={"partner_pooling": "identity"}), rng)
        with pytest.raises(ContractError, match="equal stream lengths"):
            block(Tensor(rng.normal(size=(1, 3, 8))), Tensor(rng.normal(size=(1, 5, 8))))

    def test_feature_shapes(self, f64, rng):
        config = ModelConfig(num_queries=32, max_question_len=24, d_model=32)
        stack = CmmStack(config, seed=0)
        fused = stack(Tensor(rng.normal(size=(1, 32, 32))), Tensor(rng.normal(size=(1, 24, 32))))
        assert fused.x_f.shape == (1, 64)
        assert fused.memory.shape == (1, 56, 32)
        assert fused.memory_mask.shape == (1, 56)

    def test_pad_content_does_not_reach_pooled_feature(self, f64, tiny_model, rng):
        stack = CmmStack(tiny_model, seed=2)
        z = Tensor(rng.normal(size=(1, 3, tiny_model.d_model)))
        t = rng.normal(size=(1, 5, tiny_model.d_model))
        changed = t.copy()
        changed[0, 3:] = rng.normal(size=(2, tiny_model.d_model))
        mask = np.array([[True, True, True, False, False]])
        a = stack(z, Tensor(t), mask)
        b = stack(z, Tensor(changed), mask)
        np.testing.assert_allclose(a.x_f.data, b.x_f.data, atol=1e-12)
        np.testing.assert_array_equal(a.memory_mask, [[True] * 6 + [False, False]])

    def test_stream_shape_contract(self, f64, tiny_model, rng):
        block = CmmBlock(tiny_model, rng)
        with pytest.raises(ContractError):
            block(Tensor(rng.normal(size=(1, 3, 8))), Tensor(rng.normal(size=(2, 3, 8))))

    def test_block_count_follows_config(self, tiny_model):
        assert len(CmmStack(tiny_model, seed=0).blocks) == tiny_model.cmm_blocks
        assert len(CmmStack(tiny_model, seed=0, num_blocks=0).blocks) == 0

    def test_stack_matches_numpy_oracle(self, f64, tiny_model, rng):
        stack = CmmStack(tiny_model, seed=5)
        z = rng.normal(size=(2, 3, tiny_model.d_model))
        t = rng.normal(size=(2, 5, tiny_model.d_model))
        mask = np.array([[True] * 5, [True, True, True, False, False]])
        fused = cifr_forward(Tensor(z), Tensor(t), stack, mask)

        z, t = _np_layer_norm(z, stack.query_norm), _np_layer_norm(t, stack.text_norm)
        for block in stack.blocks:
            text_summary = _np_masked_mean(t, mask)[:, None, :]
            query_summary = z.mean(axis=1, keepdims=True)
            z, t = (
                _np_linear(_np_mamba(z, z * text_summary, block.query_mamba), block.query_fus) + z,
                _np_linear(_np_mamba(t, t * query_summary, block.text_mamba), block.text_fus) + t,
            )

        np.testing.assert_allclose(fused.query_tokens.data, z, atol=1e-10)
        np.testing.assert_allclose(fused.text_tokens.data, t, atol=1e-10)
        np.testing.assert_allclose(fused.x_f.data, np.concatenate([z.mean(axis=1), _np_masked_mean(t, mask)], -1),
                                   atol=1e-10)
        np.testing.assert_allclose(fused.memory.data, np.concatenate([z, t], axis=1), atol=1e-10)


def _np_linear(x, layer):
    out = x @ layer.weight.data
    return out if layer.bias is None else out + layer.bias.data


def _np_layer_norm(x, norm):
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    return centered / np.sqrt(var + norm.eps) * norm.gain.data + norm.bias.data


def _np_masked_mean(x, mask):
    return (x * mask[:, :, None]).sum(axis=1) / mask.sum(axis=1, keepdims=True)


def _np_silu(x):
    return x / (1.0 + np.exp(-x))


def _np_mamba(primary, gate_source, block):
    d_inner, width = block.conv_weight.shape
    weight = block.in_proj.weight.data
    x, gate = primary @ weight[:, :d_inner], gate_source @ weight[:, d_inner:]

    steps = x.shape[1]
    padded = np.concatenate([np.zeros((x.shape[0], width - 1, d_inner)), x], axis=1)
    conv = np.zeros_like(x)
    for step in range(steps):
        for k in range(width):
            conv[:, step] += block.conv_weight.data[:, k] * padded[:, step + k]
    x = _np_silu(conv + block.conv_bias.data)

    ssm = block.ssm
    r, n = ssm.dt_rank, ssm.d_state
    projected = x @ ssm.x_proj.weight.data
    dt = _np_linear(projected[..., :r], ssm.dt_proj)
    delta = np.log1p(np.exp(dt))
    y = _loop_oracle(x, delta, -np.exp(ssm.a_log.data), projected[..., r:r + n], projected[..., r + n:],
                     ssm.d_skip.data)
    return _np_linear(y * _np_silu(gate), block.out_proj)
