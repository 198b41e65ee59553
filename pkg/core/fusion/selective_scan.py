# ============================================================================
# core/fusion/selective_scan.py - Selective State-Space Scan
# ============================================================================

"""
Input-dependent diagonal state-space recurrence with zero-order-hold
discretization:

    A_bar_t = exp(delta_t * A)
    B_bar_t = delta_t * B_t
    h_t     = A_bar_t * h_{t-1} + B_bar_t * x_t        (h_{-1} = 0)
    y_t     = <C_t, h_t> + D * x_t

`scan_kernel` runs the recurrence as one tape node with a hand-written
backward pass (the sequential loop would otherwise put T*5 nodes on the
tape). `scan_reference` is the plain loop built from tape primitives and
is kept for cross-checking the kernel.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.errors import ContractError
from core.numcore import Tensor, ops, record
from core.numcore.nn import Linear, Module, parameter

logger = logging.getLogger(__name__)


@dataclass
class ScanInputs:
    """Per-step discretization inputs produced from the token stream"""

    delta: Tensor  # (B, T, D), positive
    b: Tensor      # (B, T, N)
    c: Tensor      # (B, T, N)


def _check_shapes(x: Tensor, delta: Tensor, a: Tensor, b: Tensor, c: Tensor, d: Tensor) -> None:
    if x.ndim != 3:
        raise ContractError(f"scan input must be (B, T, D), got {x.shape}")
    batch, steps, channels = x.shape
    state = a.shape[-1]
    expected = {
        "delta": (delta.shape, (batch, steps, channels)),
        "A": (a.shape, (channels, state)),
        "B": (b.shape, (batch, steps, state)),
        "C": (c.shape, (batch, steps, state)),
        "D": (d.shape, (channels,)),
    }
    for name, (got, want) in expected.items():
        if tuple(got) != want:
            raise ContractError(f"scan parameter {name} has shape {tuple(got)}, expected {want}")


def scan_states(x: np.ndarray, delta: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Hidden states h (B, T, D, N) and the decay factors A_bar that produced them"""
    batch, steps, channels = x.shape
    decay = np.exp(delta[..., None] * a)                       # (B, T, D, N)
    drive = delta[..., None] * b[:, :, None, :] * x[..., None]  # (B, T, D, N)
    states = np.empty_like(decay)
    h = np.zeros((batch, channels, a.shape[-1]), dtype=x.dtype)
    for t in range(steps):
        h = decay[:, t] * h + drive[:, t]
        states[:, t] = h
    return states, decay


def scan_kernel(x: Tensor, delta: Tensor, a: Tensor, b: Tensor, c: Tensor, d: Tensor) -> Tensor:
    """
    x: (B, T, D) inputs; delta: (B, T, D) step sizes; a: (D, N) state matrix
    (diagonal per channel); b, c: (B, T, N); d: (D,) skip. Returns y (B, T, D).
    """
    _check_shapes(x, delta, a, b, c, d)
    xd, dd, ad, bd, cd, skip = x.data, delta.data, a.data, b.data, c.data, d.data
    states, decay = scan_states(xd, dd, ad, bd)
    y = np.einsum("btdn,btn->btd", states, cd) + skip * xd

    def grad_fn(gy):
        steps = xd.shape[1]
        # gradient w.r.t. each h_t, accumulated backwards through the recurrence
        g_states = np.empty_like(states)
        carry = np.zeros_like(states[:, 0])
        for t in range(steps - 1, -1, -1):
            carry = gy[:, t, :, None] * cd[:, t, None, :] + carry
            g_states[:, t] = carry
            carry = carry * decay[:, t]
        previous = np.concatenate([np.zeros_like(states[:, :1]), states[:, :-1]], axis=1)
        g_decay = g_states * previous * decay  # d/d(delta*A) of exp(delta*A)

        gx = gy * skip + np.einsum("btdn,btd,btn->btd", g_states, dd, bd)
        g_delta = np.einsum("btdn,dn->btd", g_decay, ad) + np.einsum("btdn,btn,btd->btd", g_states, bd, xd)
        ga = np.einsum("btdn,btd->dn", g_decay, dd)
        gb = np.einsum("btdn,btd,btd->btn", g_states, dd, xd)
        gc = np.einsum("btd,btdn->btn", gy, states)
        gd = np.einsum("btd,btd->d", gy, xd)
        return gx, g_delta, ga, gb, gc, gd

    return record(y, (x, delta, a, b, c, d), grad_fn, "selective_scan")


def scan_reference(x: Tensor, delta: Tensor, a: Tensor, b: Tensor, c: Tensor, d: Tensor) -> Tensor:
    """Step-by-step recurrence from tape primitives; same result as scan_kernel"""
    _check_shapes(x, delta, a, b, c, d)
    batch, steps, channels = x.shape
    h = Tensor(np.zeros((batch, channels, a.shape[-1]), dtype=x.dtype))
    outputs = []
    for t in range(steps):
        delta_t = ops.reshape(delta[:, t], (batch, channels, 1))
        x_t = ops.reshape(x[:, t], (batch, channels, 1))
        b_t = ops.reshape(b[:, t], (batch, 1, -1))
        c_t = ops.reshape(c[:, t], (batch, 1, -1))
        h = ops.exp(delta_t * a) * h + delta_t * b_t * x_t
        outputs.append(ops.reshape(ops.sum(h * c_t, axis=-1) + x[:, t] * d, (batch, 1, channels)))
    return ops.concat(outputs, axis=1)


def state_bound(x: np.ndarray, delta: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """
    Upper bound on max |h_t| for a strictly negative A: a geometric series
    with ratio max(A_bar) < 1 over the largest input drive.
    """
    if np.any(a >= 0):
        raise ContractError("state bound needs a strictly negative state matrix")
    ratio = float(np.exp(delta[..., None] * a).max())
    drive = float(np.abs(delta[..., None] * b[:, :, None, :] * x[..., None]).max())
    return drive / (1.0 - ratio)


class SsmParams(Module):
    """
    Learned parts of the selective SSM: A = -exp(a_log), the D skip, and the
    projections that produce delta, B and C from the input stream.
    """

    def __init__(self, d_inner: int, d_state: int, dt_rank: int, rng: np.random.Generator,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        self.d_inner = d_inner
        self.d_state = d_state
        self.dt_rank = dt_rank
        self.a_log = parameter(np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))))
        self.d_skip = parameter(np.ones(d_inner))
        self.x_proj = Linear(d_inner, dt_rank + 2 * d_state, rng, bias=False)
        self.dt_proj = Linear(dt_rank, d_inner, rng)
        self.dt_proj.weight.data[...] = rng.uniform(-1.0, 1.0, size=(dt_rank, d_inner)) * dt_rank ** -0.5
        # bias = softplus^-1(dt) with dt log-uniform in [dt_min, dt_max]
        dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d_inner))
        self.dt_proj.bias.data[...] = dt + np.log(-np.expm1(-dt))

    @property
    def a(self) -> Tensor:
        return -ops.exp(self.a_log)

    def discretization_inputs(self, x: Tensor) -> ScanInputs:
        projected = self.x_proj(x)
        r, n = self.dt_rank, self.d_state
        delta = ops.softplus(self.dt_proj(projected[..., :r]))
        return ScanInputs(delta=delta, b=projected[..., r:r + n], c=projected[..., r + n:])


def selective_scan(x: Tensor, params: SsmParams) -> Tensor:
    """x: (B, T, d_inner) or (T, d_inner) -> y of the same shape"""
    unbatched = x.ndim == 2
    if unbatched:
        x = ops.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[-1] != params.d_inner:
        raise ContractError(f"selective scan expects (B, T, {params.d_inner}), got {x.shape}")
    inputs = params.discretization_inputs(x)
    y = scan_kernel(x, inputs.delta, params.a, inputs.b, inputs.c, params.d_skip)
    return ops.reshape(y, y.shape[1:]) if unbatched else y
