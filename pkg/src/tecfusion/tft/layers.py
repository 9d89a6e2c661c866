"""Building blocks of the Temporal Fusion Transformer.

Each block declares its parameters in a :class:`ParamRegistry` at construction
time and is applied to a :class:`ParameterSet` at call time, so the same
structure can be evaluated with any set of weights (training, finite-difference
checks, checkpoints).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import InvalidArgumentError, InvalidMaskError, ShapeError


@dataclass(frozen=True)
class ParamSpec:
    shape: Tuple[int, ...]
    init: str  # "uniform", "zeros" or "ones"
    fan_in: int = 1


class ParamRegistry:
    def __init__(self):
        self.specs: "OrderedDict[str, ParamSpec]" = OrderedDict()

    def add(self, name: str, shape, init: str = "uniform", fan_in: Optional[int] = None) -> str:
        if name in self.specs:
            raise InvalidArgumentError(f"parameter {name!r} declared twice")
        self.specs[name] = ParamSpec(tuple(int(s) for s in shape), init, int(fan_in or 1))
        return name

    def count(self) -> int:
        return int(sum(np.prod(s.shape) for s in self.specs.values()))

    def initialize(self, seed: int, dtype=np.float64) -> "ParameterSet":
        """Uniform in +-1/sqrt(fan_in) for weights and LSTM tensors; ones/zeros for norms."""
        rng = np.random.default_rng(seed)
        params = ParameterSet()
        for name, spec in self.specs.items():
            if spec.init == "uniform":
                bound = 1.0 / math.sqrt(spec.fan_in)
                value = rng.uniform(-bound, bound, size=spec.shape)
            elif spec.init == "zeros":
                value = np.zeros(spec.shape)
            elif spec.init == "ones":
                value = np.ones(spec.shape)
            else:
                raise InvalidArgumentError(f"unknown init {spec.init!r}")
            params[name] = Tensor(value.astype(dtype), requires_grad=True, name=name)
        return params


class ParameterSet(OrderedDict):
    """Named learnable tensors."""

    def count(self) -> int:
        return int(sum(t.value.size for t in self.values()))

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.value for name, t in self.items()}

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def copy(self, dtype=None) -> "ParameterSet":
        out = ParameterSet()
        for name, t in self.items():
            value = t.value.astype(dtype or t.value.dtype, copy=True)
            out[name] = Tensor(value, requires_grad=True, name=name)
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], dtype=None) -> "ParameterSet":
        out = cls()
        for name, value in arrays.items():
            value = np.array(value, dtype=dtype or np.asarray(value).dtype)
            out[name] = Tensor(value, requires_grad=True, name=name)
        return out

    @property
    def dtype(self):
        return next(iter(self.values())).value.dtype


@dataclass
class Context:
    """Per-forward settings shared by all blocks."""

    train: bool = False
    rng: Optional[np.random.Generator] = None
    dropout_rate: float = 0.0

    def dropout(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.dropout_rate, self.rng, self.train)


class Linear:
    """``x @ W + b``; with ``stacked=V`` holds V independent maps applied along a leading axis."""

    def __init__(self, reg: ParamRegistry, name: str, n_in: int, n_out: int, bias: bool = True,
                 stacked: Optional[int] = None):
        lead = () if stacked is None else (stacked,)
        self.n_in, self.n_out = n_in, n_out
        self.w = reg.add(f"{name}.weight", lead + (n_in, n_out), fan_in=n_in)
        self.b = reg.add(f"{name}.bias", lead + ((1, n_out) if stacked else (n_out,)), fan_in=n_in) if bias else None

    def __call__(self, p: ParameterSet, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"linear {self.w}: expected width {self.n_in}, got shape {x.shape}")
        y = ad.matmul(x, p[self.w])
        return y + p[self.b] if self.b is not None else y


class GatedLinearUnit:
    """``sigmoid(x W_g + b_g) * (x W_v + b_v)`` computed with one fused projection."""

    def __init__(self, reg, name, n_in, n_out, stacked=None):
        self.n_out = n_out
        self.proj = Linear(reg, name, n_in, 2 * n_out, stacked=stacked)

    def __call__(self, p, x):
        z = self.proj(p, x)
        n = self.n_out
        return ad.sigmoid(z[..., :n]) * z[..., n:]


class LayerNorm:
    def __init__(self, reg, name, width, stacked=None):
        shape = (width,) if stacked is None else (stacked, 1, width)
        self.scale = reg.add(f"{name}.scale", shape, init="ones")
        self.shift = reg.add(f"{name}.shift", shape, init="zeros")

    def __call__(self, p, x):
        return ad.layer_norm(x, p[self.scale], p[self.shift])


class GateAddNorm:
    """``LayerNorm(residual + GLU(dropout(x)))``."""

    def __init__(self, reg, name, n_in, n_out, stacked=None, use_dropout=True):
        self.glu = GatedLinearUnit(reg, f"{name}.glu", n_in, n_out, stacked)
        self.norm = LayerNorm(reg, f"{name}.norm", n_out, stacked)
        self.use_dropout = use_dropout

    def __call__(self, p, x, residual, ctx: Context):
        if self.use_dropout:
            x = ctx.dropout(x)
        return self.norm(p, residual + self.glu(p, x))


class GatedResidualNetwork:
    """``LayerNorm(skip(a) + GLU(W1 ELU(W2 a + W3 c)))`` with dropout before the gate."""

    def __init__(self, reg, name, n_in, n_hidden, n_out, n_context=None, stacked=None):
        self.n_in, self.n_context = n_in, n_context
        self.skip = Linear(reg, f"{name}.skip", n_in, n_out, stacked=stacked) if n_in != n_out else None
        self.fc_in = Linear(reg, f"{name}.fc_in", n_in, n_hidden, stacked=stacked)
        self.fc_context = (
            Linear(reg, f"{name}.fc_context", n_context, n_hidden, bias=False, stacked=stacked)
            if n_context
            else None
        )
        self.fc_hidden = Linear(reg, f"{name}.fc_hidden", n_hidden, n_hidden, stacked=stacked)
        self.gate = GateAddNorm(reg, f"{name}.gate", n_hidden, n_out, stacked)

    def __call__(self, p, x: Tensor, ctx: Context, context: Optional[Tensor] = None) -> Tensor:
        skip = self.skip(p, x) if self.skip is not None else x
        h = self.fc_in(p, x)
        if context is not None:
            if self.fc_context is None:
                raise ShapeError(f"GRN {self.fc_in.w} was built without a context input")
            if context.shape[-1] != self.n_context:
                raise ShapeError(
                    f"GRN context width mismatch: expected {self.n_context}, got shape {context.shape}"
                )
            h = h + self.fc_context(p, context)
        h = self.fc_hidden(p, ad.elu(h))
        return self.gate(p, h, skip, ctx)


class ContinuousEmbedding:
    """Per-variable linear map of a scalar input to the hidden width: ``x_v * W_v + b_v``."""

    def __init__(self, reg, name, n_vars, hidden):
        self.n_vars = n_vars
        self.w = reg.add(f"{name}.weight", (n_vars, hidden), fan_in=1)
        self.b = reg.add(f"{name}.bias", (n_vars, hidden), fan_in=1)

    def __call__(self, p, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_vars:
            raise ShapeError(f"embedding {self.w}: expected {self.n_vars} variables, got shape {x.shape}")
        return ad.reshape(x, x.shape + (1,)) * p[self.w] + p[self.b]


class VariableSelectionNetwork:
    """Softmax weights over V embedded variables and their weighted, GRN-processed sum."""

    def __init__(self, reg, name, n_vars, hidden, n_context=None):
        if n_vars < 1:
            raise InvalidArgumentError("variable selection needs at least one variable")
        self.n_vars, self.hidden = n_vars, hidden
        self.flat = GatedResidualNetwork(reg, f"{name}.flat", n_vars * hidden, hidden, n_vars, n_context)
        self.per_var = GatedResidualNetwork(reg, f"{name}.var", hidden, hidden, hidden, stacked=n_vars)

    def __call__(self, p, emb: Tensor, ctx: Context, context: Optional[Tensor] = None):
        lead = emb.shape[:-2]
        V, h = self.n_vars, self.hidden
        if emb.shape[-2:] != (V, h):
            raise ShapeError(f"variable selection expected [..., {V}, {h}], got {emb.shape}")
        flat = ad.reshape(emb, lead + (V * h,))
        weights = ad.softmax(self.flat(p, flat, ctx, context), axis=-1)
        n = int(np.prod(lead)) if lead else 1
        per_var = ad.transpose(ad.reshape(emb, (n, V, h)), (1, 0, 2))  # [V, N, h]
        processed = ad.transpose(self.per_var(p, per_var, ctx), (1, 0, 2))  # [N, V, h]
        processed = ad.reshape(processed, lead + (V, h))
        combined = ad.sum_(ad.reshape(weights, lead + (V, 1)) * processed, axis=-2)
        return combined, weights


class LSTMStack:
    """Stacked LSTM with gate order (input, forget, cell, output)."""

    def __init__(self, reg, name, n_in, hidden, layers):
        self.hidden, self.layers = hidden, layers
        self.w_in, self.w_rec, self.bias = [], [], []
        for layer in range(layers):
            width = n_in if layer == 0 else hidden
            self.w_in.append(reg.add(f"{name}.l{layer}.w_in", (width, 4 * hidden), fan_in=hidden))
            self.w_rec.append(reg.add(f"{name}.l{layer}.w_rec", (hidden, 4 * hidden), fan_in=hidden))
            self.bias.append(reg.add(f"{name}.l{layer}.bias", (4 * hidden,), fan_in=hidden))

    def __call__(self, p, x: Tensor, states):
        """Run over ``x`` [B, T, n_in] from ``states`` (list of (h, c) per layer).

        Returns the top-layer outputs [B, T, hidden] and the final states.
        """
        hd = self.hidden
        final = []
        seq = x
        for layer in range(self.layers):
            h, c = states[layer]
            projected = ad.matmul(seq, p[self.w_in[layer]]) + p[self.bias[layer]]
            w_rec = p[self.w_rec[layer]]
            outputs = []
            for t in range(seq.shape[1]):
                gates = projected[:, t] + ad.matmul(h, w_rec)
                act = ad.sigmoid(gates)
                i, f, o = act[:, :hd], act[:, hd : 2 * hd], act[:, 3 * hd :]
                g = ad.tanh(gates[:, 2 * hd : 3 * hd])
                c = f * c + i * g
                h = o * ad.tanh(c)
                outputs.append(h)
            final.append((h, c))
            seq = ad.stack(outputs, axis=1)
        return seq, final


class InterpretableMultiHeadAttention:
    """Per-head query/key projections with one value projection shared by all heads.

    Head outputs ``A_h V`` are averaged before the output projection, so the
    averaged attention matrix is directly interpretable.
    """

    def __init__(self, reg, name, hidden, heads):
        self.heads = heads
        self.d = hidden // heads
        self.q = Linear(reg, f"{name}.query", hidden, heads * self.d)
        self.k = Linear(reg, f"{name}.key", hidden, heads * self.d)
        self.v = Linear(reg, f"{name}.value", hidden, self.d)
        self.out = Linear(reg, f"{name}.out", self.d, hidden)

    def __call__(self, p, queries: Tensor, keys: Tensor, mask: np.ndarray):
        """``mask`` [Hq, Tk] is True where attention is forbidden."""
        B, Hq, _ = queries.shape
        Tk = keys.shape[1]
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (Hq, Tk):
            raise ShapeError(f"attention mask shape {mask.shape} does not match ({Hq}, {Tk})")
        if np.any(mask.all(axis=-1)):
            raise InvalidMaskError("a query row has every key masked")
        nh, d = self.heads, self.d
        q = ad.transpose(ad.reshape(self.q(p, queries), (B, Hq, nh, d)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(self.k(p, keys), (B, Tk, nh, d)), (0, 2, 3, 1))
        v = self.v(p, keys)  # [B, Tk, d]
        scores = ad.matmul(q, k) * (1.0 / math.sqrt(d))  # [B, nh, Hq, Tk]
        weights = ad.softmax(ad.masked_fill(scores, mask, -np.inf), axis=-1)
        per_head = ad.matmul(weights, ad.reshape(v, (B, 1, Tk, d)))  # [B, nh, Hq, d]
        attended = self.out(p, ad.mean(per_head, axis=1))
        return attended, weights


def causal_decoder_mask(encoder_steps: int, decoder_steps: int) -> np.ndarray:
    """Decoder position j may see all encoder steps and decoder steps up to j."""
    total = encoder_steps + decoder_steps
    key = np.arange(total)[None, :]
    query = encoder_steps + np.arange(decoder_steps)[:, None]
    return key > query
