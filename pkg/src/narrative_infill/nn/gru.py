"""GRU cell and (bi)directional sequence runners.

Gate convention::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .tensor import ShapeError, Tensor, concat, getitem, linear, sigmoid, stack, tanh


@dataclass
class GruCellParams:
    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    u_z: Tensor
    u_r: Tensor
    u_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    def __post_init__(self):
        hidden, inp = self.w_z.shape
        for name in ("w_z", "w_r", "w_h"):
            if getattr(self, name).shape != (hidden, inp):
                raise ShapeError(f"GRU {name}: expected {(hidden, inp)}, got {getattr(self, name).shape}")
        for name in ("u_z", "u_r", "u_h"):
            if getattr(self, name).shape != (hidden, hidden):
                raise ShapeError(f"GRU {name}: expected {(hidden, hidden)}, got {getattr(self, name).shape}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (hidden,):
                raise ShapeError(f"GRU {name}: expected {(hidden,)}, got {getattr(self, name).shape}")

    @property
    def hidden_size(self) -> int:
        return self.w_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_z.shape[1]

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
             scale: float = 0.08, dtype=np.float64) -> "GruCellParams":
        """Uniform(-scale, scale) weights and zero biases."""
        def w(shape):
            return Tensor(rng.uniform(-scale, scale, size=shape).astype(dtype), requires_grad=True)

        def b():
            return Tensor(np.zeros(hidden_size, dtype=dtype), requires_grad=True)

        return cls(
            w_z=w((hidden_size, input_size)),
            w_r=w((hidden_size, input_size)),
            w_h=w((hidden_size, input_size)),
            u_z=w((hidden_size, hidden_size)),
            u_r=w((hidden_size, hidden_size)),
            u_h=w((hidden_size, hidden_size)),
            b_z=b(), b_r=b(), b_h=b(),
        )


def project_inputs(x: Tensor, p: GruCellParams) -> tuple[Tensor, Tensor, Tensor]:
    """Input-side gate pre-activations ``W x + b``; valid for any leading shape."""
    if x.shape[-1] != p.input_size:
        raise ShapeError(f"gru: input size {x.shape[-1]} != {p.input_size}")
    return linear(x, p.w_z, p.b_z), linear(x, p.w_r, p.b_r), linear(x, p.w_h, p.b_h)


def gru_step(xz: Tensor, xr: Tensor, xh: Tensor, h: Tensor, p: GruCellParams) -> Tensor:
    z = sigmoid(xz + linear(h, p.u_z))
    r = sigmoid(xr + linear(h, p.u_r))
    cand = tanh(xh + linear(r * h, p.u_h))
    return h + z * (cand - h)


def gru_cell(x: Tensor, h: Tensor, p: GruCellParams) -> Tensor:
    if h.shape[-1] != p.hidden_size:
        raise ShapeError(f"gru_cell: hidden size {h.shape[-1]} != {p.hidden_size}")
    xz, xr, xh = project_inputs(x, p)
    return gru_step(xz, xr, xh, h, p)


def gru_sequence(seq: Tensor, p: GruCellParams, mask: np.ndarray | None = None,
                 reverse: bool = False, h0: Tensor | None = None) -> Tensor:
    """Run a GRU over axis 1 of ``seq`` (batch, time, in) -> (batch, time, hidden).

    ``mask`` (batch, time) of 0/1 freezes the state at padded positions, so a
    reverse pass over right-padded rows starts from zero at each row's last
    real step.
    """
    batch, steps = seq.shape[0], seq.shape[1]
    xz, xr, xh = project_inputs(seq, p)
    h = h0 if h0 is not None else Tensor(np.zeros((batch, p.hidden_size), dtype=seq.dtype))
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    outputs: list[Tensor | None] = [None] * steps
    for t in order:
        h_new = gru_step(xz[:, t], xr[:, t], xh[:, t], h, p)
        if mask is not None and not mask[:, t].all():
            m = Tensor(mask[:, t, None].astype(seq.dtype))
            h_new = h + m * (h_new - h)
        h = h_new
        outputs[t] = h
    return stack(outputs, axis=1)


def bigru(seq: Tensor, fwd: GruCellParams, bwd: GruCellParams,
          mask: np.ndarray | None = None) -> Tensor:
    """Bidirectional GRU; accepts (n, X) or (batch, n, X).

    Output at step k is ``concat(forward_k, backward_k)``.
    """
    if seq.ndim == 2:
        out = bigru(getitem(seq, (None,)), fwd, bwd, None if mask is None else mask[None])
        return getitem(out, 0)
    if seq.shape[1] < 1:
        raise ShapeError("bigru: empty sequence")
    f = gru_sequence(seq, fwd, mask)
    b = gru_sequence(seq, bwd, mask, reverse=True)
    return concat([f, b], axis=-1)

