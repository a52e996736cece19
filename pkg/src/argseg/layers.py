"""Sequence-labeling building blocks with explicit forward/backward passes.

Five layer types: LSTM cell, bidirectional LSTM, additive self-attention,
scaled dot-product multi-head self-attention, and a time-distributed dense
softmax head.  Each layer owns its :class:`~argseg.numeric.Parameter` objects,
returns an activation cache from ``forward`` and accumulates parameter
gradients in ``backward``.  Caches are owned by the caller, so one layer can
be checked or trained without any global tape.

Shape convention: batches are (B, T, F) with a (B, T) validity mask; padded
positions hold zero vectors, produce zero outputs and receive zero gradient.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ContractViolation, DimensionError
from .numeric import BatchTensor, Parameter, glorot_uniform, softmax_rows

NEG_INF = -1e9  # additive mask applied to logits of padded keys

GATES = ("i", "f", "c", "o")


class Layer:
    """Minimal layer protocol shared by everything in this module."""

    name: str

    def params(self) -> list[Parameter]:
        raise NotImplementedError

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def forward(self, x: BatchTensor):
        raise NotImplementedError

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


class LstmCell:
    """One LSTM direction: gates i, f, o and candidate c (tanh).

    Parameters per gate g: input matrix W_g (input_dim, hidden), recurrent
    matrix U_g (hidden, hidden) and bias b_g (hidden,).  The forget-gate bias
    starts at 1.0 so memory is initially carried.
    """

    def __init__(self, input_dim: int, hidden: int, rng, name: str = "lstm"):
        self.name = name
        self.input_dim = input_dim
        self.hidden = hidden
        self.w = {g: Parameter(f"{name}.W_{g}", glorot_uniform(rng, input_dim, hidden)) for g in GATES}
        self.u = {g: Parameter(f"{name}.U_{g}", glorot_uniform(rng, hidden, hidden)) for g in GATES}
        self.b = {g: Parameter(f"{name}.b_{g}", np.zeros(hidden)) for g in GATES}
        self.b["f"].value[:] = 1.0

    def params(self) -> list[Parameter]:
        return [self.w[g] for g in GATES] + [self.u[g] for g in GATES] + [self.b[g] for g in GATES]

    # concatenated views, gate order i|f|c|o
    def w_cat(self) -> np.ndarray:
        return np.concatenate([self.w[g].value for g in GATES], axis=1)

    def u_cat(self) -> np.ndarray:
        return np.concatenate([self.u[g].value for g in GATES], axis=1)

    def b_cat(self) -> np.ndarray:
        return np.concatenate([self.b[g].value for g in GATES])

    def add_cat_grads(self, dw_cat, du_cat, db_cat):
        h = self.hidden
        for k, g in enumerate(GATES):
            self.w[g].grad += dw_cat[:, k * h : (k + 1) * h]
            self.u[g].grad += du_cat[:, k * h : (k + 1) * h]
            self.b[g].grad += db_cat[k * h : (k + 1) * h]


def lstm_cell_step(cell: LstmCell, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    """Single step: returns (h_t, c_t) for 1-D or (B, *) inputs.

    i = sigmoid(x W_i + h U_i + b_i), f and o likewise, g = tanh(x W_c + h U_c + b_c);
    c_t = f*c_prev + i*g; h_t = o*tanh(c_t).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    single = x_t.ndim == 1
    if single:
        x_t, h_prev, c_prev = x_t[None, :], h_prev[None, :], c_prev[None, :]
    if x_t.shape[1] != cell.input_dim or h_prev.shape[1] != cell.hidden:
        raise DimensionError(
            f"{cell.name}: got input {x_t.shape}, state {h_prev.shape}, "
            f"expected dims ({cell.input_dim}, {cell.hidden})"
        )
    hdim = cell.hidden
    a = x_t @ cell.w_cat() + h_prev @ cell.u_cat() + cell.b_cat()
    i = expit(a[:, :hdim])
    f = expit(a[:, hdim : 2 * hdim])
    g = np.tanh(a[:, 2 * hdim : 3 * hdim])
    o = expit(a[:, 3 * hdim :])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    if single:
        return h_t[0], c_t[0]
    return h_t, c_t


def _run_direction(cell: LstmCell, values: np.ndarray, mask: np.ndarray, reverse: bool):
    """Unrolled pass of one direction over (B, T, F) with mask gating.

    At padded steps the state is carried through unchanged and the emitted
    output is zero, so trailing padding neither perturbs valid states nor
    leaks into downstream layers.  The reverse direction runs on the flipped
    sequence, which makes it start right after any trailing padding.
    """
    if reverse:
        values = values[:, ::-1]
        mask = mask[:, ::-1]
    bsz, tlen, _ = values.shape
    hdim = cell.hidden
    w_cat, u_cat, b_cat = cell.w_cat(), cell.u_cat(), cell.b_cat()

    gates_x = values.reshape(bsz * tlen, -1) @ w_cat
    gates_x = gates_x.reshape(bsz, tlen, 4 * hdim) + b_cat

    fmask = mask.astype(np.float64)[:, :, None]
    h = np.zeros((bsz, hdim))
    c = np.zeros((bsz, hdim))
    h_prev = np.empty((bsz, tlen, hdim))
    c_prev = np.empty((bsz, tlen, hdim))
    acts = np.empty((bsz, tlen, 4 * hdim))  # i | f | g | o activations
    tanh_c = np.empty((bsz, tlen, hdim))
    out = np.zeros((bsz, tlen, hdim))

    for t in range(tlen):
        m = fmask[:, t]
        h_prev[:, t] = h
        c_prev[:, t] = c
        a = gates_x[:, t] + h @ u_cat
        i = expit(a[:, :hdim])
        f = expit(a[:, hdim : 2 * hdim])
        g = np.tanh(a[:, 2 * hdim : 3 * hdim])
        o = expit(a[:, 3 * hdim :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        acts[:, t, :hdim] = i
        acts[:, t, hdim : 2 * hdim] = f
        acts[:, t, 2 * hdim : 3 * hdim] = g
        acts[:, t, 3 * hdim :] = o
        tanh_c[:, t] = tc
        out[:, t] = m * h_new
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c

    cache = (values, fmask, h_prev, c_prev, acts, tanh_c, reverse)
    return (out[:, ::-1] if reverse else out), cache


def _direction_backward(cell: LstmCell, cache, grad_out: np.ndarray) -> np.ndarray:
    values, fmask, h_prev, c_prev, acts, tanh_c, reverse = cache
    if reverse:
        grad_out = grad_out[:, ::-1]
    bsz, tlen, _ = values.shape
    hdim = cell.hidden
    w_cat, u_cat = cell.w_cat(), cell.u_cat()
    u_cat_t = u_cat.T

    d_gates = np.empty((bsz, tlen, 4 * hdim))
    dh_carry = np.zeros((bsz, hdim))
    dc_carry = np.zeros((bsz, hdim))

    for t in range(tlen - 1, -1, -1):
        m = fmask[:, t]
        i = acts[:, t, :hdim]
        f = acts[:, t, hdim : 2 * hdim]
        g = acts[:, t, 2 * hdim : 3 * hdim]
        o = acts[:, t, 3 * hdim :]
        tc = tanh_c[:, t]

        g_hnew = m * (grad_out[:, t] + dh_carry)
        g_cnew = m * dc_carry + g_hnew * o * (1.0 - tc * tc)

        d_o = g_hnew * tc
        d_i = g_cnew * g
        d_g = g_cnew * i
        d_f = g_cnew * c_prev[:, t]

        da = d_gates[:, t]
        da[:, :hdim] = d_i * i * (1.0 - i)
        da[:, hdim : 2 * hdim] = d_f * f * (1.0 - f)
        da[:, 2 * hdim : 3 * hdim] = d_g * (1.0 - g * g)
        da[:, 3 * hdim :] = d_o * o * (1.0 - o)

        dh_carry = (1.0 - m) * dh_carry + da @ u_cat_t
        dc_carry = g_cnew * f + (1.0 - m) * dc_carry

    flat_x = values.reshape(bsz * tlen, -1)
    flat_h = h_prev.reshape(bsz * tlen, hdim)
    flat_da = d_gates.reshape(bsz * tlen, 4 * hdim)
    cell.add_cat_grads(flat_x.T @ flat_da, flat_h.T @ flat_da, flat_da.sum(axis=0))

    dx = (flat_da @ w_cat.T).reshape(bsz, tlen, -1)
    return dx[:, ::-1] if reverse else dx


class BiLstm(Layer):
    """Two LSTM directions over the same sequence, outputs concatenated.

    Output features = 2*hidden; position t holds [forward state at t,
    backward state at t].
    """

    def __init__(self, input_dim: int, hidden: int, rng, name: str = "bilstm"):
        self.name = name
        self.input_dim = input_dim
        self.hidden = hidden
        self.fwd = LstmCell(input_dim, hidden, rng, f"{name}.fwd")
        self.bwd = LstmCell(input_dim, hidden, rng, f"{name}.bwd")

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def params(self) -> list[Parameter]:
        return self.fwd.params() + self.bwd.params()

    def forward(self, x: BatchTensor):
        if x.features != self.input_dim:
            raise DimensionError(
                f"{self.name}: input has {x.features} features, expected {self.input_dim}"
            )
        out_f, cache_f = _run_direction(self.fwd, x.values, x.mask, reverse=False)
        out_b, cache_b = _run_direction(self.bwd, x.values, x.mask, reverse=True)
        return x.with_values(np.concatenate([out_f, out_b], axis=2)), (cache_f, cache_b)

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        cache_f, cache_b = cache
        h = self.hidden
        dx = _direction_backward(self.fwd, cache_f, grad_out[:, :, :h])
        dx += _direction_backward(self.bwd, cache_b, grad_out[:, :, h:])
        return dx


def bilstm_forward(fwd: LstmCell, bwd: LstmCell, seq: BatchTensor) -> BatchTensor:
    """Functional form: run two prebuilt cells over ``seq`` and concatenate."""
    out_f, _ = _run_direction(fwd, seq.values, seq.mask, reverse=False)
    out_b, _ = _run_direction(bwd, seq.values, seq.mask, reverse=True)
    return seq.with_values(np.concatenate([out_f, out_b], axis=2))


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


def _require_valid_rows(mask: np.ndarray, name: str):
    if (~mask.any(axis=1)).any():
        raise ContractViolation(
            f"{name}: every sequence in the batch needs at least one valid position"
        )


class AdditiveSelfAttention(Layer):
    """Self-attention with a small feed-forward scorer over position pairs.

    score(t, s) = v_a^T tanh(x_t W_t + x_s W_x + b_h) + b_v, softmax over the
    valid positions s, output_t = sum_s alpha(t, s) x_s.  Shape-preserving.
    """

    # pairwise tanh activations are O(T^2 * attn_dim); recomputed in chunks
    # during backward instead of cached, to bound memory
    CHUNK_ELEMENTS = 4_000_000

    def __init__(self, dim: int, rng, attn_dim: int = 32, name: str = "attn"):
        if attn_dim < 1:
            raise ConfigurationError(f"{name}: attention width must be >= 1")
        self.name = name
        self.dim = dim
        self.attn_dim = attn_dim
        self.w_query = Parameter(f"{name}.W_t", glorot_uniform(rng, dim, attn_dim))
        self.w_key = Parameter(f"{name}.W_x", glorot_uniform(rng, dim, attn_dim))
        self.b_hidden = Parameter(f"{name}.b_h", np.zeros(attn_dim))
        self.v_score = Parameter(f"{name}.v_a", glorot_uniform(rng, attn_dim, 1))
        self.b_score = Parameter(f"{name}.b_v", np.zeros(1))

    def params(self) -> list[Parameter]:
        return [self.w_query, self.w_key, self.b_hidden, self.v_score, self.b_score]

    def _chunk(self, bsz: int, tlen: int) -> int:
        per_row = max(1, bsz * tlen * self.attn_dim)
        return max(1, self.CHUNK_ELEMENTS // per_row)

    def forward(self, x: BatchTensor):
        if x.features != self.dim:
            raise DimensionError(
                f"{self.name}: input has {x.features} features, expected {self.dim}"
            )
        _require_valid_rows(x.mask, self.name)
        vals = x.values
        bsz, tlen, _ = vals.shape
        q = vals @ self.w_query.value  # (B, T, A)
        k = vals @ self.w_key.value
        v_flat = self.v_score.value[:, 0]
        bias = self.b_hidden.value

        scores = np.empty((bsz, tlen, tlen))
        step = self._chunk(bsz, tlen)
        for t0 in range(0, tlen, step):
            t1 = min(tlen, t0 + step)
            u = np.tanh(q[:, t0:t1, None, :] + k[:, None, :, :] + bias)
            scores[:, t0:t1] = u @ v_flat
        scores += self.b_score.value[0]
        scores = scores + NEG_INF * (~x.mask[:, None, :])

        alpha = softmax_rows(scores)
        alpha *= x.mask[:, None, :]  # padded keys get exactly zero weight
        alpha *= x.mask[:, :, None]  # padded queries emit nothing
        out = alpha @ vals
        cache = (vals, x.mask, q, k, alpha)
        return x.with_values(out), cache

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        vals, mask, q, k, alpha = cache
        bsz, tlen, _ = vals.shape
        grad_out = grad_out * mask[:, :, None]

        d_alpha = grad_out @ vals.transpose(0, 2, 1)
        dx = alpha.transpose(0, 2, 1) @ grad_out

        row_dot = (alpha * d_alpha).sum(axis=2, keepdims=True)
        d_scores = alpha * (d_alpha - row_dot)

        self.b_score.grad[0] += d_scores.sum()
        v_flat = self.v_score.value[:, 0]
        bias = self.b_hidden.value
        dq = np.zeros_like(q)
        dk = np.zeros_like(k)
        dv = np.zeros(self.attn_dim)
        db_hidden = np.zeros(self.attn_dim)
        step = self._chunk(bsz, tlen)
        for t0 in range(0, tlen, step):
            t1 = min(tlen, t0 + step)
            u = np.tanh(q[:, t0:t1, None, :] + k[:, None, :, :] + bias)
            ds = d_scores[:, t0:t1]
            dv += np.einsum("bts,btsj->j", ds, u)
            du = ds[:, :, :, None] * v_flat * (1.0 - u * u)
            dq[:, t0:t1] += du.sum(axis=2)
            dk += du.sum(axis=1)
            db_hidden += du.sum(axis=(0, 1, 2))
        self.v_score.grad[:, 0] += dv
        self.b_hidden.grad += db_hidden

        flat = vals.reshape(bsz * tlen, -1)
        self.w_query.grad += flat.T @ dq.reshape(bsz * tlen, -1)
        self.w_key.grad += flat.T @ dk.reshape(bsz * tlen, -1)
        dx += dq @ self.w_query.value.T
        dx += dk @ self.w_key.value.T
        return dx


class MultiHeadSelfAttention(Layer):
    """Scaled dot-product attention over h subspaces of the feature dim.

    Q, K, V are full (d, d) projections split into h slices of width d/h;
    per head softmax(Q K^T / sqrt(d_k) + mask) V; concatenated heads go
    through an output projection W_o.  No biases anywhere.
    """

    def __init__(self, dim: int, heads: int, rng, name: str = "mha"):
        if heads < 1 or dim % heads != 0:
            raise ConfigurationError(
                f"{name}: {heads} heads do not divide feature dim {dim} "
                f"(divisors: {[k for k in range(1, min(dim, 16) + 1) if dim % k == 0]})"
            )
        self.name = name
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.w_q = Parameter(f"{name}.W_q", glorot_uniform(rng, dim, dim))
        self.w_k = Parameter(f"{name}.W_k", glorot_uniform(rng, dim, dim))
        self.w_v = Parameter(f"{name}.W_v", glorot_uniform(rng, dim, dim))
        self.w_o = Parameter(f"{name}.W_o", glorot_uniform(rng, dim, dim))

    def params(self) -> list[Parameter]:
        return [self.w_q, self.w_k, self.w_v, self.w_o]

    def _split(self, m: np.ndarray) -> np.ndarray:
        b, t, _ = m.shape
        return m.reshape(b, t, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, m: np.ndarray) -> np.ndarray:
        b, h, t, d = m.shape
        return m.transpose(0, 2, 1, 3).reshape(b, t, h * d)

    def forward(self, x: BatchTensor):
        if x.features != self.dim:
            raise DimensionError(
                f"{self.name}: input has {x.features} features, expected {self.dim}"
            )
        _require_valid_rows(x.mask, self.name)
        vals = x.values
        q = self._split(vals @ self.w_q.value)  # (B, H, T, dk)
        k = self._split(vals @ self.w_k.value)
        v = self._split(vals @ self.w_v.value)

        scale = 1.0 / np.sqrt(self.head_dim)
        logits = (q @ k.transpose(0, 1, 3, 2)) * scale
        logits = logits + NEG_INF * (~x.mask[:, None, None, :])
        alpha = softmax_rows(logits)
        alpha *= x.mask[:, None, None, :]
        alpha *= x.mask[:, None, :, None]

        ctx = self._merge(alpha @ v)  # (B, T, D)
        out = (ctx @ self.w_o.value) * x.mask[:, :, None]
        cache = (vals, x.mask, q, k, v, alpha, ctx)
        return x.with_values(out), cache

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        vals, mask, q, k, v, alpha, ctx = cache
        bsz, tlen, _ = vals.shape
        grad_out = grad_out * mask[:, :, None]

        flat_ctx = ctx.reshape(bsz * tlen, -1)
        flat_go = grad_out.reshape(bsz * tlen, -1)
        self.w_o.grad += flat_ctx.T @ flat_go
        d_ctx = self._split((grad_out @ self.w_o.value.T))

        d_alpha = d_ctx @ v.transpose(0, 1, 3, 2)
        dv = alpha.transpose(0, 1, 3, 2) @ d_ctx

        row_dot = (alpha * d_alpha).sum(axis=3, keepdims=True)
        d_logits = alpha * (d_alpha - row_dot)

        scale = 1.0 / np.sqrt(self.head_dim)
        dq = (d_logits @ k) * scale
        dk = (d_logits.transpose(0, 1, 3, 2) @ q) * scale

        dq_m = self._merge(dq).reshape(bsz * tlen, -1)
        dk_m = self._merge(dk).reshape(bsz * tlen, -1)
        dv_m = self._merge(dv).reshape(bsz * tlen, -1)
        flat_x = vals.reshape(bsz * tlen, -1)
        self.w_q.grad += flat_x.T @ dq_m
        self.w_k.grad += flat_x.T @ dk_m
        self.w_v.grad += flat_x.T @ dv_m

        dx = dq_m @ self.w_q.value.T
        dx += dk_m @ self.w_k.value.T
        dx += dv_m @ self.w_v.value.T
        return dx.reshape(bsz, tlen, -1)


def choose_heads(dim: int, cap: int = 6) -> int:
    """Largest head count <= cap that divides the feature dimension exactly."""
    if dim < 1 or cap < 1:
        raise ConfigurationError(f"need dim >= 1 and cap >= 1, got {dim}, {cap}")
    for h in range(min(cap, dim), 0, -1):
        if dim % h == 0:
            return h
    return 1


# ---------------------------------------------------------------------------
# Dense heads
# ---------------------------------------------------------------------------


class TimeDistributedLinear(Layer):
    """Per-position affine map; padded positions stay zero."""

    def __init__(self, input_dim: int, output_dim: int, rng, name: str = "linear"):
        self.name = name
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.w = Parameter(f"{name}.W", glorot_uniform(rng, input_dim, output_dim))
        self.b = Parameter(f"{name}.b", np.zeros(output_dim))

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def forward(self, x: BatchTensor):
        if x.features != self.input_dim:
            raise DimensionError(
                f"{self.name}: input has {x.features} features, expected {self.input_dim}"
            )
        out = (x.values @ self.w.value + self.b.value) * x.float_mask()
        return x.with_values(out), (x.values, x.mask)

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        vals, mask = cache
        grad_out = grad_out * mask[:, :, None]
        bsz, tlen, _ = vals.shape
        flat_x = vals.reshape(bsz * tlen, -1)
        flat_g = grad_out.reshape(bsz * tlen, -1)
        self.w.grad += flat_x.T @ flat_g
        self.b.grad += flat_g.sum(axis=0)
        return grad_out @ self.w.value.T


class DenseSoftmax(Layer):
    """Time-distributed 3-way classifier head over {B, I, O}.

    Valid tokens get softmax(x W + b); padded tokens emit the uniform
    distribution and are excluded from loss and metrics by the mask.
    """

    N_CLASSES = 3

    def __init__(self, input_dim: int, rng, name: str = "head"):
        self.name = name
        self.input_dim = input_dim
        self.w = Parameter(f"{name}.W", glorot_uniform(rng, input_dim, self.N_CLASSES))
        self.b = Parameter(f"{name}.b", np.zeros(self.N_CLASSES))

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def forward(self, x: BatchTensor):
        if x.features != self.input_dim:
            raise DimensionError(
                f"{self.name}: input has {x.features} features, expected {self.input_dim}"
            )
        logits = x.values @ self.w.value + self.b.value
        probs = softmax_rows(logits)
        probs[~x.mask] = 1.0 / self.N_CLASSES
        return x.with_values(probs), (x.values, probs, x.mask)

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        vals, probs, mask = cache
        grad_out = grad_out * mask[:, :, None]
        row_dot = (probs * grad_out).sum(axis=2, keepdims=True)
        d_logits = (probs * (grad_out - row_dot)) * mask[:, :, None]
        bsz, tlen, _ = vals.shape
        flat_x = vals.reshape(bsz * tlen, -1)
        flat_g = d_logits.reshape(bsz * tlen, -1)
        self.w.grad += flat_x.T @ flat_g
        self.b.grad += flat_g.sum(axis=0)
        return d_logits @ self.w.value.T


def additive_self_attention(layer: AdditiveSelfAttention, seq: BatchTensor) -> BatchTensor:
    out, _ = layer.forward(seq)
    return out


def multi_head_self_attention(layer: MultiHeadSelfAttention, seq: BatchTensor) -> BatchTensor:
    out, _ = layer.forward(seq)
    return out


def dense_softmax(layer: DenseSoftmax, seq: BatchTensor) -> BatchTensor:
    out, _ = layer.forward(seq)
    return out
