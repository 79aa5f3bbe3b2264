"""Finite-difference checks for every differentiable op and the full model loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .corpus import Narrative, Step, build_vocabulary, encode_narrative
from .model import EMPTY_PLAN, MaskPlan, ModelConfig, decode_step_teacher_forced, init_params, narrative_loss
from .nn import tensor as T
from .nn.gradcheck import gradient_check
from .nn.gru import GruCellParams

POLY_TOL = 1e-8
SMOOTH_TOL = 1e-4
EPS = 1e-5


@dataclass
class CheckRow:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _away_from_zero(rng, shape, positive: bool = False) -> np.ndarray:
    # |values| in [0.5, 1.5]: tiny entries make tiny gradients, whose relative
    # error is dominated by finite-difference rounding noise
    mag = rng.uniform(0.5, 1.5, size=shape)
    return mag if positive else rng.choice([-1.0, 1.0], size=shape) * mag


def _leaf(rng, *shape, positive=False) -> T.Tensor:
    return T.Tensor(_away_from_zero(rng, shape, positive), requires_grad=True)


def _weighted(out: T.Tensor, rng, positive: bool = False) -> Callable[[T.Tensor], T.Tensor]:
    # fixed random weights keep every output coordinate in play
    w = T.Tensor(_away_from_zero(rng, out.shape, positive))
    return lambda o: T.sum(T.mul(o, w))


def _op_case(rng, name: str, make_inputs, op, tol: float, positive: bool = False) -> CheckRow:
    inputs = make_inputs()
    reduce = _weighted(op(*inputs), rng, positive)
    return CheckRow(name, gradient_check(lambda: reduce(op(*inputs)), inputs, EPS), tol)


def _toy_model(rng):
    texts = ["heat the oil .", "add the onions and stir", "serve hot"]
    narrative = Narrative("toy", "recipes", tuple(Step.from_text(t, rng.normal(size=6)) for t in texts))
    vocab = build_vocabulary([narrative])
    config = ModelConfig(d_img=6, encoder_hidden=3, decoder_hidden=4, embed_dim=3,
                         vocab_size=len(vocab), dtype="float64", init_scale=1.0, dropout=0.0,
                         seed=int(rng.integers(1 << 31)))
    params = init_params(config)
    # unit-scale weights: near-zero gradients would be dominated by rounding noise
    for t in params.tensors():
        t.data += rng.normal(scale=0.3, size=t.shape)
    return encode_narrative(narrative, vocab, max_steps=5, max_words=6), params


def run_gradcheck_suite(seed: int = 0) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    rows: list[CheckRow] = []
    # all-positive instances for the polynomial ops: gradients that are sums
    # of products cannot cancel to near zero, so the 1e-8 bound is not noise-limited
    def pos(*shape):
        return _leaf(rng, *shape, positive=True)

    poly = [
        ("add", lambda: [pos(3, 4), pos(4)], T.add),
        ("sub", lambda: [pos(3, 4), pos(3, 1)], T.sub),
        ("mul", lambda: [pos(3, 4), pos(3, 4)], T.mul),
        ("matmul", lambda: [pos(3, 4), pos(4, 2)], T.matmul),
        ("matmul_vec", lambda: [pos(4), pos(4, 3)], T.matmul),
        ("linear", lambda: [pos(2, 3, 4), pos(5, 4), pos(5)], T.linear),
        ("transpose", lambda: [pos(3, 4)], T.transpose),
        ("concat", lambda: [pos(2, 3), pos(2, 2)], lambda a, b: T.concat([a, b], axis=1)),
        ("stack", lambda: [pos(2, 3), pos(2, 3)], lambda a, b: T.stack([a, b], axis=1)),
        ("getitem", lambda: [pos(4, 3)], lambda a: T.getitem(a, (np.array([0, 2, 2]), slice(None)))),
        ("reshape", lambda: [pos(4, 3)], lambda a: T.reshape(a, (2, 6))),
        ("sum", lambda: [pos(4, 3)], lambda a: T.sum(a, axis=0)),
        ("mean", lambda: [pos(4, 3)], T.mean),
        ("embedding_lookup", lambda: [pos(5, 3)],
         lambda w: T.embedding_lookup(w, np.array([[1, 4], [1, 0]]))),
        ("dropout_train", lambda: [pos(4, 5)],
         lambda x: T.dropout(x, 0.2, np.random.default_rng(7), training=True)),
    ]
    smooth = [
        ("sigmoid", lambda: [_leaf(rng, 3, 4)], T.sigmoid),
        ("tanh", lambda: [_leaf(rng, 3, 4)], T.tanh),
        ("exp", lambda: [_leaf(rng, 3, 4)], T.exp),
        ("log", lambda: [_leaf(rng, 3, 4, positive=True)], T.log),
        ("softmax", lambda: [_leaf(rng, 3, 5)], T.softmax),
        ("log_softmax", lambda: [_leaf(rng, 3, 5)], T.log_softmax),
    ]
    for name, make, op in poly:
        rows.append(_op_case(rng, name, make, op, POLY_TOL, positive=True))
    for name, make, op in smooth:
        rows.append(_op_case(rng, name, make, op, SMOOTH_TOL))

    logits = _leaf(rng, 4, 6)
    targets = np.array([1, 0, 5, 2])
    rows.append(CheckRow("cross_entropy",
                         gradient_check(lambda: T.cross_entropy(logits, targets, ignore_id=0), [logits], EPS),
                         SMOOTH_TOL))

    cell = GruCellParams.init(3, 4, rng, scale=1.0)
    x, h = _leaf(rng, 3), _leaf(rng, 4)
    cell_inputs = [x, h, *cell.named().values()]
    reduce = _weighted(nn.gru_cell(x, h, cell), rng)
    rows.append(CheckRow("gru_cell", gradient_check(lambda: reduce(nn.gru_cell(x, h, cell)), cell_inputs, EPS),
                         SMOOTH_TOL))

    out_w = _leaf(rng, 5, 4)
    ce_targets = np.array([3])
    rows.append(CheckRow(
        "gru_cell+cross_entropy",
        gradient_check(lambda: T.cross_entropy(T.linear(T.reshape(nn.gru_cell(x, h, cell), (1, 4)), out_w),
                                               ce_targets, ignore_id=None),
                       [*cell_inputs, out_w], EPS),
        SMOOTH_TOL))

    fwd, bwd = GruCellParams.init(3, 2, rng, scale=1.0), GruCellParams.init(3, 2, rng, scale=1.0)
    seq = _leaf(rng, 4, 3)
    reduce = _weighted(nn.bigru(seq, fwd, bwd), rng)
    rows.append(CheckRow("bigru", gradient_check(
        lambda: reduce(nn.bigru(seq, fwd, bwd)),
        [seq, *fwd.named().values(), *bwd.named().values()], EPS), SMOOTH_TOL))

    encoded, params = _toy_model(rng)
    g_k = _leaf(rng, 6)
    row = encoded.token_ids[1]
    reduce = _weighted(decode_step_teacher_forced(g_k, row, params), rng)
    rows.append(CheckRow("decoder_teacher_forced", gradient_check(
        lambda: reduce(decode_step_teacher_forced(g_k, row, params)),
        [g_k, *params.tensors()], EPS), SMOOTH_TOL))

    rows.append(CheckRow("loss_xe", gradient_check(
        lambda: narrative_loss(encoded, EMPTY_PLAN, params), params.tensors(), EPS), SMOOTH_TOL))
    rows.append(CheckRow("loss_v_infill", gradient_check(
        lambda: narrative_loss(encoded, MaskPlan.of(1), params), params.tensors(), EPS), SMOOTH_TOL))
    return rows
