"""XE / V-Infill / V-InfillR sequence model over narratives.

Per-step image features are projected (affine + tanh) to local features,
optionally zeroed at sampled infill indices, passed through a bidirectional
GRU to obtain narrative-context global features, and each step's text is
decoded by a GRU whose initial state is ``tanh(affine(global_k))``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import BOS, PAD, EncodedNarrative
from .nn import checkpoint as ckpt
from .nn.gru import GruCellParams, bigru, gru_step, project_inputs
from .nn.optim import OptimizerState, adam_step, clip_gradients
from .nn.tensor import (
    ShapeError,
    Tensor,
    backward,
    cross_entropy,
    dropout,
    embedding_lookup,
    getitem,
    linear,
    no_grad,
    reshape,
    stack,
    tanh,
)

log = logging.getLogger(__name__)

VARIANTS = ("XE", "V-Infill", "V-InfillR")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"loss became {value} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    d_img: int = 2048
    encoder_hidden: int = 256
    decoder_hidden: int = 512
    embed_dim: int = 512
    vocab_size: int = 0
    max_steps: int = 5
    max_words: int = 20
    dropout: float = 0.2
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 10.0
    beam: int = 3
    variant: str = "XE"
    infill_max: int = 2
    epochs: int = 10
    batch_size: int = 1
    seed: int = 0
    dtype: str = "float32"
    init_scale: float = 0.08
    vocab_min_freq: int = 1
    vocab_max_size: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("d_img", "encoder_hidden", "decoder_hidden", "embed_dim", "max_steps",
                     "max_words", "beam", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.vocab_size < 0 or self.epochs < 0:
            raise ValueError("vocab_size and epochs must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.infill_max > 2:
            warnings.warn("masking more than 2 steps per narrative is known to hurt quality",
                          stacklevel=3)

    @property
    def global_dim(self) -> int:
        return 2 * self.encoder_hidden

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {json.dumps(value) if isinstance(value, str) else value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kind = types[key]
            try:
                if kind == "int":
                    values[key] = int(value)
                elif kind == "float":
                    values[key] = float(value)
                else:
                    values[key] = value.strip("\"'")
            except ValueError:
                raise ValueError(f"config line {lineno}: bad value for {key}: {value!r}") from None
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# masking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskPlan:
    masked_indices: frozenset[int] = frozenset()
    epoch_mask_count: int = 0

    def __post_init__(self):
        if len(self.masked_indices) != self.epoch_mask_count:
            raise ValueError("mask plan size does not match its count")

    @classmethod
    def of(cls, *indices: int) -> "MaskPlan":
        return cls(frozenset(indices), len(set(indices)))


EMPTY_PLAN = MaskPlan()


def apply_mask(features: np.ndarray, plan: MaskPlan) -> np.ndarray:
    """Copy of ``features`` with the planned rows set to exactly zero."""
    n = features.shape[0]
    bad = [i for i in plan.masked_indices if not 0 <= i < n]
    if bad:
        raise IndexError(f"mask indices {sorted(bad)} out of range for {n} steps")
    out = features.copy()
    if plan.masked_indices:
        out[sorted(plan.masked_indices)] = 0.0
    return out


def mask_count_for_epoch(epoch: int, total_epochs: int, variant: str, infill_max: int = 2) -> int:
    """How many steps to mask per narrative in ``epoch``.

    V-InfillR masks none in the first quarter of training, one in the second
    quarter and ``infill_max`` (2) for the remaining half.
    """
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if variant == "XE":
        return 0
    if variant == "V-Infill":
        return 1
    if variant == "V-InfillR":
        if epoch < total_epochs // 4:
            return 0
        if epoch < total_epochs // 2:
            return min(1, infill_max)
        return infill_max
    raise ValueError(f"unknown variant {variant!r}")


def sample_mask_indices(n_steps: int, count: int, rng: np.random.Generator) -> MaskPlan:
    if count > n_steps:
        raise ValueError(f"cannot mask {count} of {n_steps} steps")
    if count <= 0:
        return EMPTY_PLAN
    picked = rng.choice(n_steps, size=count, replace=False)
    return MaskPlan(frozenset(int(i) for i in picked), count)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass
class ModelParams:
    proj_w: Tensor
    proj_b: Tensor
    enc_fwd: GruCellParams
    enc_bwd: GruCellParams
    init_w: Tensor
    init_b: Tensor
    embedding: Tensor
    dec: GruCellParams
    out_w: Tensor
    out_b: Tensor

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, GruCellParams):
                out.update({f"{f.name}.{k}": v for k, v in value.named().items()})
            else:
                out[f.name] = value
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named().items()}

    @classmethod
    def from_numpy(cls, arrays: dict[str, np.ndarray], dtype=np.float64) -> "ModelParams":
        def t(name):
            if name not in arrays:
                raise KeyError(f"checkpoint lacks parameter {name!r}")
            return Tensor(np.array(arrays[name], dtype=dtype), requires_grad=True, name=name)

        def cell(prefix):
            return GruCellParams(**{f.name: t(f"{prefix}.{f.name}") for f in fields(GruCellParams)})

        return cls(
            proj_w=t("proj_w"), proj_b=t("proj_b"),
            enc_fwd=cell("enc_fwd"), enc_bwd=cell("enc_bwd"),
            init_w=t("init_w"), init_b=t("init_b"),
            embedding=t("embedding"), dec=cell("dec"),
            out_w=t("out_w"), out_b=t("out_b"),
        )

    def load_numpy(self, arrays: dict[str, np.ndarray]) -> None:
        for name, tensor in self.named().items():
            tensor.data[...] = arrays[name]


def init_params(config: ModelConfig, rng: np.random.Generator | None = None) -> ModelParams:
    """Uniform(-s, s) weights with ``s = config.init_scale``; zero biases."""
    if config.vocab_size <= 0:
        raise ValueError("config.vocab_size must be set before initialising parameters")
    rng = rng if rng is not None else _streams(config.seed)["init"]
    dt, s = config.np_dtype, config.init_scale

    def w(*shape):
        return Tensor(rng.uniform(-s, s, size=shape).astype(dt), requires_grad=True)

    def b(n):
        return Tensor(np.zeros(n, dtype=dt), requires_grad=True)

    he, hd, e, v = config.encoder_hidden, config.decoder_hidden, config.embed_dim, config.vocab_size
    params = ModelParams(
        proj_w=w(he, config.d_img), proj_b=b(he),
        enc_fwd=GruCellParams.init(he, he, rng, s, dt),
        enc_bwd=GruCellParams.init(he, he, rng, s, dt),
        init_w=w(hd, 2 * he), init_b=b(hd),
        embedding=w(v, e),
        dec=GruCellParams.init(e, hd, rng, s, dt),
        out_w=w(v, hd), out_b=b(v),
    )
    for name, tensor in params.named().items():
        tensor.name = name
    return params


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "shuffle", "mask", "dropout")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

@dataclass
class NarrativeEncoding:
    locals: Tensor   # (..., n, encoder_hidden)
    globals: Tensor  # (..., n, 2 * encoder_hidden)


def _encode(features: np.ndarray, step_mask: np.ndarray | None, params: ModelParams,
            p_drop: float, training: bool, rng) -> NarrativeEncoding:
    feats = Tensor(features.astype(params.proj_w.dtype, copy=False))
    if feats.shape[-1] != params.proj_w.shape[1]:
        raise ShapeError(f"features have dimension {feats.shape[-1]}, model expects {params.proj_w.shape[1]}")
    local = tanh(linear(feats, params.proj_w, params.proj_b))
    local = dropout(local, p_drop, rng, training)
    return NarrativeEncoding(local, bigru(local, params.enc_fwd, params.enc_bwd, step_mask))


def encode_narrative_context(features: np.ndarray, params: ModelParams, *, training: bool = False,
                             p_drop: float = 0.0, rng: np.random.Generator | None = None) -> NarrativeEncoding:
    """Local and global features for one (already masked) ``n x d_img`` matrix."""
    if features.ndim != 2 or features.shape[0] < 1:
        raise ShapeError(f"expected an n x d_img feature matrix, got {features.shape}")
    return _encode(features, None, params, p_drop, training, rng)


def decoder_init(g: Tensor, params: ModelParams) -> Tensor:
    return tanh(linear(g, params.init_w, params.init_b))


def _decode_logits(g_rows: Tensor, inputs: np.ndarray, params: ModelParams) -> Tensor:
    """Teacher-forced logits (rows, T, V) given inputs (rows, T) of token ids."""
    h = decoder_init(g_rows, params)
    emb = embedding_lookup(params.embedding, inputs)
    xz, xr, xh = project_inputs(emb, params.dec)
    hs = []
    for t in range(inputs.shape[1]):
        h = gru_step(xz[:, t], xr[:, t], xh[:, t], h, params.dec)
        hs.append(h)
    return linear(stack(hs, axis=1), params.out_w, params.out_b)


def decoder_step(h: Tensor, tokens: np.ndarray, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Advance the decoder one token for each row; returns (new state, logits)."""
    emb = embedding_lookup(params.embedding, np.asarray(tokens))
    xz, xr, xh = project_inputs(emb, params.dec)
    h = gru_step(xz, xr, xh, h, params.dec)
    return h, linear(h, params.out_w, params.out_b)


def decode_step_teacher_forced(g_k: Tensor, target_ids, params: ModelParams) -> Tensor:
    """Logits (L, V): row ``t`` predicts ``target_ids[t + 1]`` from the prefix."""
    ids = np.asarray(target_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 2 or ids[0] != BOS:
        raise ValueError("target row must start with BOS and hold at least one more token")
    g = getitem(g_k, (None,)) if g_k.ndim == 1 else g_k
    logits = _decode_logits(g, ids[None, :-1], params)
    return getitem(logits, 0)


@dataclass
class BatchForward:
    loss: Tensor
    n_tokens: int
    logits: Tensor
    targets: np.ndarray


def batch_forward(batch: Sequence[EncodedNarrative], plans: Sequence[MaskPlan], params: ModelParams,
                  *, p_drop: float = 0.0, training: bool = False,
                  rng: np.random.Generator | None = None) -> BatchForward:
    """Token-mean cross entropy over every step of every narrative in ``batch``.

    Masked steps keep their text in the loss (masked span prediction); only
    their features are zeroed before encoding.
    """
    if len(batch) != len(plans):
        raise ValueError("one mask plan per narrative is required")
    n_max = max(e.n_steps for e in batch)
    d = batch[0].feature_matrix.shape[1]
    feats = np.zeros((len(batch), n_max, d), dtype=params.proj_w.dtype)
    step_mask = np.zeros((len(batch), n_max), dtype=bool)
    for i, (enc, plan) in enumerate(zip(batch, plans)):
        feats[i, :enc.n_steps] = apply_mask(enc.feature_matrix, plan)
        step_mask[i, :enc.n_steps] = True
    encoding = _encode(feats, None if step_mask.all() else step_mask, params, p_drop, training, rng)

    b_idx, k_idx = np.nonzero(step_mask)
    g_rows = getitem(encoding.globals, (b_idx, k_idx))
    rows = [enc.token_ids[k] for enc, k in ((batch[b], k) for b, k in zip(b_idx, k_idx))]
    lengths = np.array([enc.step_lengths[k] for enc, k in ((batch[b], k) for b, k in zip(b_idx, k_idx))])
    width = int(lengths.max()) + 2
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    for r, row in enumerate(rows):
        ids[r, :min(width, row.size)] = row[:width]
    logits = _decode_logits(g_rows, ids[:, :-1], params)
    targets = ids[:, 1:].reshape(-1)
    flat = reshape(logits, (-1, logits.shape[-1]))
    loss = cross_entropy(flat, targets, ignore_id=PAD)
    return BatchForward(loss, int((targets != PAD).sum()), flat, targets)


def narrative_loss(encoded: EncodedNarrative, plan: MaskPlan, params: ModelParams, *,
                   p_drop: float = 0.0, training: bool = False,
                   rng: np.random.Generator | None = None) -> Tensor:
    return batch_forward([encoded], [plan], params, p_drop=p_drop, training=training, rng=rng).loss


def teacher_forced_accuracy(data: Sequence[EncodedNarrative], params: ModelParams,
                            batch_size: int = 32) -> float:
    correct = total = 0
    with no_grad():
        for start in range(0, len(data), batch_size):
            chunk = data[start:start + batch_size]
            fw = batch_forward(chunk, [EMPTY_PLAN] * len(chunk), params)
            keep = fw.targets != PAD
            pred = fw.logits.data.argmax(axis=-1)
            correct += int((pred[keep] == fw.targets[keep]).sum())
            total += int(keep.sum())
    return correct / total


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    state: OptimizerState
    log: list[dict]
    best_epoch: int | None
    best_params: dict[str, np.ndarray]
    best_state: OptimizerState | None = None
    checkpoint_path: Path | None = None
    extra: dict = field(default_factory=dict)


def _copy_state(state: OptimizerState) -> OptimizerState:
    return OptimizerState(m=[a.copy() for a in state.m], v=[a.copy() for a in state.v], t=state.t,
                          lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps)


def evaluate_loss(data: Sequence[EncodedNarrative], params: ModelParams, batch_size: int = 32) -> float:
    """Token-weighted loss with no masking and no dropout."""
    total = 0.0
    count = 0
    with no_grad():
        for start in range(0, len(data), batch_size):
            chunk = data[start:start + batch_size]
            fw = batch_forward(chunk, [EMPTY_PLAN] * len(chunk), params)
            total += fw.loss.item() * fw.n_tokens
            count += fw.n_tokens
    return total / count


def train(train_set: Sequence[EncodedNarrative], config: ModelConfig,
          val_set: Sequence[EncodedNarrative] = (), *,
          out_dir: str | Path | None = None,
          schedule: Callable[[int], int] | None = None,
          params: ModelParams | None = None) -> TrainResult:
    """Train with Adam, global-norm clipping and the variant's mask schedule.

    ``schedule`` overrides the per-epoch mask count (used to run an infill
    variant with empty plans). The checkpoint with the lowest validation loss
    (or the final one when there is no validation data) is written to
    ``out_dir/model.nick`` together with ``train_log.jsonl``.
    """
    if not train_set:
        raise ValueError("training split is empty")
    streams = _streams(config.seed)
    if params is None:
        params = init_params(config, streams["init"])
    tensors = params.tensors()
    state = OptimizerState.for_params(tensors, lr=config.lr, beta1=config.beta1,
                                      beta2=config.beta2, eps=config.eps)
    header = {"log_header": True, "variant": config.variant, "val_mask": "none",
              "seed": config.seed, "epochs": config.epochs}
    records: list[dict] = []
    best_val = math.inf
    best_epoch: int | None = None
    best_params = params.numpy()
    best_state = _copy_state(state)

    for epoch in range(config.epochs):
        count = schedule(epoch) if schedule is not None else mask_count_for_epoch(
            epoch, config.epochs, config.variant, config.infill_max)
        order = streams["shuffle"].permutation(len(train_set))
        total, n_tok = 0.0, 0
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            plans = [sample_mask_indices(e.n_steps, min(count, e.n_steps), streams["mask"]) for e in batch]
            for t in tensors:
                t.grad = None
            fw = batch_forward(batch, plans, params, p_drop=config.dropout, training=True,
                               rng=streams["dropout"])
            value = fw.loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, step, value)
            grads = backward(fw.loss, wrt=tensors)
            grads, _ = clip_gradients(grads, config.clip)
            adam_step(tensors, grads, state)
            total += value * fw.n_tokens
            n_tok += fw.n_tokens
        train_loss = total / n_tok
        val_loss = evaluate_loss(val_set, params) if val_set else None
        records.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "mask_count": count})
        log.info("epoch %d train %.4f val %s mask %d", epoch, train_loss,
                 "-" if val_loss is None else f"{val_loss:.4f}", count)
        score = val_loss if val_loss is not None else -epoch
        if score < best_val or val_loss is None:
            best_val = score
            best_epoch = epoch
            best_params = params.numpy()
            best_state = _copy_state(state)

    result = TrainResult(params, state, records, best_epoch, best_params, best_state)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint_path = out / "model.nick"
        ckpt.save_checkpoint(result.checkpoint_path, best_params, best_state)
        with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header) + "\n")
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    return result


def load_params(path: str | Path, dtype=np.float32) -> tuple[ModelParams, OptimizerState | None]:
    arrays, state = ckpt.load_checkpoint(path)
    return ModelParams.from_numpy(arrays, dtype=dtype), state
