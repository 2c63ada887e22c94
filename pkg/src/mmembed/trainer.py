"""Mini-batch SGD with gradient clipping, early stopping, checkpoints.

Determinism contract: every random decision flows from the config seed
through named substreams (init, shuffling, one stream per sentence), so a
single-threaded run is bitwise reproducible and an N-threaded run is
reproducible for that same N (workers own contiguous slices of each batch
and their tapes are reduced in slice order).
"""

import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError
from .model import (DEFAULT_DIM_EMBED, DEFAULT_DIM_STATE, DEFAULT_NEGATIVES,
                    GradTape, ModelParams, NegativeSampler, canonical_variant,
                    sentence_forward, visual_weight_rows)

log = logging.getLogger(__name__)

# substream tags under the config seed
_INIT, _SHUFFLE, _TRAIN, _VAL = 1, 2, 3, 4

CHECKPOINT_MAGIC = b"MMEBCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    variant: str = "a"
    dim_embed: int = DEFAULT_DIM_EMBED
    dim_state: int = DEFAULT_DIM_STATE
    negatives: int = DEFAULT_NEGATIVES
    lr: float = 1.0
    batch_size: int = 256
    clip_norm: float = 10.0
    max_epochs: int = 5
    lam: float = 1.0
    seed: int = 0
    val_fraction: float = 0.05
    val_size: int | None = None     # absolute override; 0 disables validation
    eval_interval: int = 100
    patience: int = 3
    threads: int = 1

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        positive = {
            "dim_embed": self.dim_embed, "dim_state": self.dim_state,
            "negatives": self.negatives, "lr": self.lr,
            "batch_size": self.batch_size, "clip_norm": self.clip_norm,
            "max_epochs": self.max_epochs, "eval_interval": self.eval_interval,
            "patience": self.patience, "threads": self.threads,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.val_size is not None and self.val_size < 0:
            raise ConfigError(f"val_size must be >= 0, got {self.val_size}")


def _sentence_rng(seed, tag, *key):
    return np.random.default_rng(np.random.SeedSequence([seed, tag, *key]))


def _glorot(rng, shape):
    s = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-s, s, size=shape)


def init_params(config, vocab, feature_dim=0, rng=None):
    """Fresh parameters: gate biases at 1.0, other biases zero, weights
    uniform in +-sqrt(6 / (fan_in + fan_out)).  Deterministic per seed."""
    rng = rng or _sentence_rng(config.seed, _INIT)
    variant = config.variant
    V, d_e, d_h = len(vocab), config.dim_embed, config.dim_state
    vrows = visual_weight_rows(variant, d_e, d_h)
    if vrows and feature_dim <= 0:
        raise ConfigError(f"variant {variant!r} needs a positive feature dimension")

    kwargs = {
        "U_w": _glorot(rng, (V, d_e)),
        "W_r": _glorot(rng, (d_h, d_e + d_h)),
        "W_u": _glorot(rng, (d_h, d_e + d_h)),
        "W_c": _glorot(rng, (d_h, d_e + d_h)),
        "b_r": np.ones(d_h),
        "b_u": np.ones(d_h),
        "b_c": np.zeros(d_h),
        "W_d": _glorot(rng, (d_e, d_h)),
        "b_M": np.zeros(V),
    }
    if vrows:
        kwargs["W_I"] = _glorot(rng, (vrows, feature_dim))
        kwargs["b_I"] = np.zeros(vrows)
    if variant not in ("text", "a"):
        kwargs["U_M"] = _glorot(rng, (V, d_e))
    return ModelParams(
        variant=variant, vocab_size=V, dim_embed=d_e, dim_state=d_h,
        feature_dim=feature_dim if vrows else 0, **kwargs)


def sgd_step(params, tape, n_sentences, config):
    """Average the summed gradients, clip by global L2 norm, descend.

    Returns the pre-clip gradient norm.  Raises NumericError on non-finite
    gradients instead of corrupting the parameters.
    """
    inv = 1.0 / n_sentences
    sq = 0.0
    for name, buf in tape.items():
        s = float(np.dot(buf.reshape(-1), buf.reshape(-1)))
        if not np.isfinite(s):
            raise NumericError(f"non-finite gradient in {name}")
        sq += s
    gnorm = np.sqrt(sq) * inv
    scale = config.lr * inv
    if gnorm > config.clip_norm:
        scale *= config.clip_norm / gnorm
    for name, buf in tape.items():
        arr = getattr(params, name)
        if arr.shape != buf.shape:
            raise ShapeError(f"gradient shape {buf.shape} != parameter shape {arr.shape}")
        arr -= scale * buf
    return float(gnorm)


@dataclass
class EvalPoint:
    step: int
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    params: ModelParams          # best-validation checkpoint (final if no validation)
    final_params: ModelParams
    eval_points: list
    step_losses: list            # per-step mean sentence loss
    best_val: float
    best_step: int
    steps: int
    skipped_sentences: int

    def log_csv(self):
        buf = io.StringIO()
        buf.write("step,epoch,train_loss,val_loss\n")
        for p in self.eval_points:
            buf.write(f"{p.step},{p.epoch},{p.train_loss:.6f},{p.val_loss:.6f}\n")
        return buf.getvalue()


def _encode_corpus(records, vocab):
    dataset, skipped = [], 0
    for image_id, tokens in records:
        seq = vocab.encode(tokens)
        if seq.shape[0] <= 2:
            skipped += 1
            continue
        dataset.append((image_id, seq))
    return dataset, skipped


def _batch_losses(params, batch, features, sampler, config, tape, pool, worker_tapes):
    """Sum per-sentence gradients for one batch; returns per-sentence losses.

    ``batch`` holds (dataset_index, image_id, seq, epoch) tuples.  With a
    thread pool, contiguous slices go to per-worker tapes which are then
    reduced in slice order, keeping the result reproducible for a fixed
    thread count.
    """

    def run_slice(items, slice_tape):
        losses = []
        for ds_index, image_id, seq, epoch in items:
            feature = features[image_id] if params.variant != "text" else None
            rng = _sentence_rng(config.seed, _TRAIN, epoch, ds_index)
            res = sentence_forward(
                params, seq, feature, config.lam, rng, sampler,
                config.negatives, slice_tape)
            losses.append(res.total)
        return losses

    if pool is None:
        return run_slice(batch, tape)

    n = len(worker_tapes)
    bounds = np.linspace(0, len(batch), n + 1).astype(int)
    slices = [batch[bounds[i]:bounds[i + 1]] for i in range(n)]
    for wt in worker_tapes:
        wt.zero()
    futures = [pool.submit(run_slice, s, wt) for s, wt in zip(slices, worker_tapes)]
    losses = []
    for fut, wt in zip(futures, worker_tapes):
        losses.extend(fut.result())
        tape.add_(wt)
    return losses


def validation_loss(params, val_set, features, sampler, config):
    """Mean loss over the held-out sentences with frozen negative draws."""
    total, n = 0.0, 0
    for ds_index, image_id, seq, _ in val_set:
        feature = features[image_id] if params.variant != "text" else None
        rng = _sentence_rng(config.seed, _VAL, ds_index)
        res = sentence_forward(
            params, seq, feature, config.lam, rng, sampler, config.negatives, tape=None)
        if res is not None:
            total += res.total
            n += 1
    return total / max(n, 1)


def train(records, features, vocab, config):
    """Train a model over prepared (image_id, tokens) records.

    Validation sentences come deterministically from the corpus tail; the
    best-validation parameters are returned.  Stops early after
    ``config.patience`` consecutive evaluations without improvement.
    """
    dataset, skipped = _encode_corpus(records, vocab)
    if not dataset:
        raise DataError("no trainable sentences in corpus")
    if config.variant != "text":
        if features is None:
            raise DataError(f"variant {config.variant!r} requires visual features")
        for image_id, _ in dataset:
            if image_id not in features:
                raise DataError(f"no visual feature for image {image_id!r}")
        feature_dim = features.dim
    else:
        feature_dim = 0

    n_val = config.val_size if config.val_size is not None else \
        min(int(len(dataset) * config.val_fraction), 10000)
    n_val = min(n_val, max(len(dataset) - 1, 0))
    train_set = [(i, img, seq, 0) for i, (img, seq) in enumerate(dataset[:len(dataset) - n_val])]
    val_set = [(i, img, seq, 0) for i, (img, seq)
               in enumerate(dataset[len(dataset) - n_val:], start=len(dataset) - n_val)]
    if not train_set:
        raise DataError("validation split leaves no training sentences")

    params = init_params(config, vocab, feature_dim)
    sampler = NegativeSampler(vocab)
    tape = GradTape(params)
    pool = worker_tapes = None
    if config.threads > 1:
        pool = ThreadPoolExecutor(max_workers=config.threads)
        worker_tapes = [GradTape(params) for _ in range(config.threads)]

    eval_points = []
    step_losses = []
    best_val, best_step, best_params = np.inf, 0, params.copy()
    bad_evals = 0
    step = 0
    stop = False
    window = []

    def evaluate(epoch):
        nonlocal best_val, best_step, best_params, bad_evals, stop
        vloss = validation_loss(params, val_set, features, sampler, config)
        tloss = float(np.mean(window)) if window else np.nan
        window.clear()
        eval_points.append(EvalPoint(step=step, epoch=epoch, train_loss=tloss, val_loss=vloss))
        log.info("step %d epoch %d train %.4f val %.4f", step, epoch, tloss, vloss)
        if vloss < best_val:
            best_val, best_step, best_params = vloss, step, params.copy()
            bad_evals = 0
        else:
            bad_evals += 1
            if bad_evals >= config.patience:
                stop = True

    try:
        if n_val:
            evaluate(epoch=0)
        for epoch in range(config.max_epochs):
            order = _sentence_rng(config.seed, _SHUFFLE, epoch).permutation(len(train_set))
            for lo in range(0, len(order), config.batch_size):
                chosen = order[lo:lo + config.batch_size]
                batch = [train_set[i][:3] + (epoch,) for i in chosen]
                tape.zero()
                losses = _batch_losses(
                    params, batch, features, sampler, config, tape, pool, worker_tapes)
                sgd_step(params, tape, len(batch), config)
                step += 1
                mean_loss = float(np.mean(losses))
                step_losses.append(mean_loss)
                window.append(mean_loss)
                if n_val and step % config.eval_interval == 0:
                    evaluate(epoch)
                    if stop:
                        break
            if stop:
                break
        if n_val and (not eval_points or eval_points[-1].step != step):
            evaluate(epoch=config.max_epochs - 1)
    finally:
        if pool is not None:
            pool.shutdown()

    if not n_val:
        best_params, best_val, best_step = params.copy(), np.nan, step
    return TrainResult(
        params=best_params, final_params=params, eval_points=eval_points,
        step_losses=step_losses, best_val=best_val, best_step=best_step,
        steps=step, skipped_sentences=skipped)


def save_checkpoint(path, params, config, vocab_sha256, step=0, val_loss=None):
    """Versioned binary checkpoint: JSON header plus raw little-endian
    float64 tensors in header order.  Byte-identical for identical inputs."""
    header = {
        "version": CHECKPOINT_VERSION,
        "variant": params.variant,
        "vocab_size": params.vocab_size,
        "dim_embed": params.dim_embed,
        "dim_state": params.dim_state,
        "feature_dim": params.feature_dim,
        "vocab_sha256": vocab_sha256,
        "step": step,
        "val_loss": None if val_loss is None or not np.isfinite(val_loss) else float(val_loss),
        "config": None if config is None else asdict(config),
        "params": [{"name": n, "shape": list(a.shape)} for n, a in params.param_items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        f.write(np.uint32(len(blob)).tobytes())
        f.write(blob)
        for _, arr in params.param_items():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back; returns (params, header dict)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        version = int(np.frombuffer(f.read(4), dtype=np.uint32)[0])
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        hlen = int(np.frombuffer(f.read(4), dtype=np.uint32)[0])
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            n_bytes = int(np.prod(shape)) * 8
            raw = f.read(n_bytes)
            if len(raw) != n_bytes:
                raise DataError(f"{path} truncated while reading {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    params = ModelParams(
        variant=header["variant"], vocab_size=header["vocab_size"],
        dim_embed=header["dim_embed"], dim_state=header["dim_state"],
        feature_dim=header["feature_dim"], **arrays)
    return params, header


def config_from_header(header):
    if not header.get("config"):
        return None
    return TrainConfig(**header["config"])


def vocab_checksum(vocab):
    return vocab.sha256()


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def clone_config(config, **overrides):
    return replace(config, **overrides)
