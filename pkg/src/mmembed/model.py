"""GRU language models over image-described sentences, in five variants.

* ``text``       -- zero initial state, softmax matrix shared with the
                    embedding table.
* ``a``          -- initial state from the projected image feature, shared
                    softmax/embedding table.
* ``a_noshare``  -- like ``a`` but with an independent softmax matrix.
* ``b``          -- zero initial state; an auxiliary loss pulls the final
                    GRU state toward the projected image feature.
* ``c``          -- zero initial state; an auxiliary loss pulls each content
                    word embedding toward the projected image feature.

Logits for word w against a decoded vector d are ``U[w] . d + b_M[w]``
where U is the embedding table itself in shared variants: writing a row
through either the embedding or the softmax view is observable through
both, which is what lets image gradients reach the embeddings.

The per-sentence forward/backward is the training hot path; its recurrence
and candidate scoring run on :mod:`mmembed.backends`.
"""

from dataclasses import dataclass

import numpy as np

from . import backends
from .compute import sigmoid
from .errors import ConfigError, DataError, ShapeError
from .textpipe import BOS_ID, EOS_ID, UNK_ID

VARIANTS = ("text", "a", "a_noshare", "b", "c")
SHARED_VARIANTS = ("text", "a")

DEFAULT_DIM_EMBED = 128
DEFAULT_DIM_STATE = 512
DEFAULT_NEGATIVES = 1024

NORM_EPS = 1e-8


def canonical_variant(name):
    v = name.strip().lower().replace("-", "_")
    if v not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return v


def visual_weight_rows(variant, dim_embed, dim_state):
    """Output dimension of the image projection: state-sized for a/a_noshare/b,
    embedding-sized for c, absent for text."""
    if variant in ("a", "a_noshare", "b"):
        return dim_state
    if variant == "c":
        return dim_embed
    return 0


@dataclass
class ModelParams:
    """All trainable tensors of one model instance."""

    variant: str
    vocab_size: int
    dim_embed: int
    dim_state: int
    feature_dim: int
    U_w: np.ndarray
    W_r: np.ndarray
    W_u: np.ndarray
    W_c: np.ndarray
    b_r: np.ndarray
    b_u: np.ndarray
    b_c: np.ndarray
    W_d: np.ndarray
    b_M: np.ndarray
    W_I: np.ndarray | None = None
    b_I: np.ndarray | None = None
    U_M: np.ndarray | None = None

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        V, d_e, d_h = self.vocab_size, self.dim_embed, self.dim_state
        expected = {
            "U_w": (V, d_e),
            "W_r": (d_h, d_e + d_h), "W_u": (d_h, d_e + d_h), "W_c": (d_h, d_e + d_h),
            "b_r": (d_h,), "b_u": (d_h,), "b_c": (d_h,),
            "W_d": (d_e, d_h), "b_M": (V,),
        }
        vrows = visual_weight_rows(self.variant, d_e, d_h)
        if vrows:
            expected["W_I"] = (vrows, self.feature_dim)
            expected["b_I"] = (vrows,)
        if not self.shared:
            expected["U_M"] = (V, d_e)
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr is None or arr.shape != shape:
                got = None if arr is None else arr.shape
                raise ShapeError(f"{name} has shape {got}, expected {shape}")

    @property
    def shared(self):
        return self.variant in SHARED_VARIANTS

    @property
    def softmax_weights(self):
        """The matrix whose rows score words: U_w itself in shared variants."""
        return self.U_w if self.shared else self.U_M

    @property
    def softmax_param_name(self):
        return "U_w" if self.shared else "U_M"

    @property
    def uses_visual_init(self):
        return self.variant in ("a", "a_noshare")

    def param_items(self):
        names = ["U_w", "W_r", "W_u", "W_c", "b_r", "b_u", "b_c", "W_d", "b_M"]
        if self.W_I is not None:
            names += ["W_I", "b_I"]
        if not self.shared:
            names += ["U_M"]
        return [(n, getattr(self, n)) for n in names]

    def copy(self):
        kwargs = {n: a.copy() for n, a in self.param_items()}
        return ModelParams(
            variant=self.variant, vocab_size=self.vocab_size,
            dim_embed=self.dim_embed, dim_state=self.dim_state,
            feature_dim=self.feature_dim, **kwargs,
        )


class GradTape:
    """Per-parameter gradient buffers, shaped exactly like the parameters."""

    def __init__(self, params):
        self.buffers = {name: np.zeros_like(arr) for name, arr in params.param_items()}

    def zero(self):
        for buf in self.buffers.values():
            buf.fill(0.0)

    def __getitem__(self, name):
        return self.buffers[name]

    def __setitem__(self, name, value):
        if name not in self.buffers:
            raise KeyError(name)
        if value is not self.buffers[name]:
            self.buffers[name][...] = value

    def items(self):
        return self.buffers.items()

    def add_(self, other):
        for name, buf in self.buffers.items():
            buf += other.buffers[name]


class NegativeSampler:
    """Log-frequency proposal over the vocabulary for sampled softmax.

    Sampling weight is ln(1 + count); boundary and unknown tokens are never
    drawn as negatives, but the end token keeps positive proposal mass (its
    count is the number of sentences) since it occurs as a target.
    """

    def __init__(self, vocab):
        V = len(vocab)
        weights = np.zeros(V)
        n_res = vocab.n_reserved
        weights[n_res:] = np.log1p(vocab.counts[n_res:])
        weights[EOS_ID] = np.log1p(vocab.counts[EOS_ID])
        total = weights.sum()
        if total <= 0.0:
            raise ConfigError("vocabulary has no sampleable words")
        self.q = weights / total
        # ineligible entries keep log_q = 0; they are never legal candidates
        self.log_q = np.where(self.q > 0.0, np.log(np.maximum(self.q, 1e-300)), 0.0)
        self.first_word = n_res
        self.n_eligible = V - n_res
        self._eligible_log_w = np.log(np.maximum(weights[n_res:], 1e-300))

    def sample(self, count, exclude, rng):
        """Draw ``count`` distinct negative word ids from q, never ``exclude``."""
        return self.sample_batch(np.asarray([exclude], dtype=np.int64), count, rng)[0]

    def sample_batch(self, targets, count, rng):
        """One row of ``count`` distinct negatives per target, target excluded.

        Weighted sampling without replacement via Gumbel perturbation: the
        top-``count`` keys of log-weight + Gumbel noise are exactly a
        sequential sample from q.
        """
        targets = np.asarray(targets, dtype=np.int64)
        P = targets.shape[0]
        if count < 1 or count > self.n_eligible - 1:
            raise ConfigError(
                f"cannot draw {count} distinct negatives from {self.n_eligible} "
                f"eligible words (one may be excluded as the target)"
            )
        keys = self._eligible_log_w + rng.gumbel(size=(P, self.n_eligible))
        rel = targets - self.first_word
        in_range = rel >= 0
        keys[np.flatnonzero(in_range), rel[in_range]] = -np.inf
        top = np.argpartition(keys, -count, axis=1)[:, -count:]
        return (top + self.first_word).astype(np.int64)


@dataclass
class SampledSoftmaxGrads:
    candidates: np.ndarray   # (k+1,) word ids, target first
    d_decoded: np.ndarray    # gradient w.r.t. the decoded vector
    d_rows: np.ndarray       # (k+1, d_e) gradient w.r.t. the candidate softmax rows
    d_bias: np.ndarray       # (k+1,) gradient w.r.t. the candidate biases


def sampled_softmax_loss(softmax_W, b_M, d, target, negatives, q):
    """Cross-entropy of ``target`` against the sampled candidate set.

    Candidates are the target plus the given negatives; each logit gets the
    proposal correction ``-ln q(w)``.  Returns (loss, sparse gradients).
    This is the reference single-position route; the batched backend kernel
    must agree with it and is tested against it.
    """
    negatives = np.asarray(negatives, dtype=np.int64)
    cand = np.concatenate(([target], negatives))
    if len(np.unique(cand)) != cand.shape[0]:
        raise ConfigError("candidate set contains duplicates")
    qc = np.asarray(q, dtype=np.float64)[cand]
    if np.any(qc <= 0.0):
        raise ConfigError("every candidate needs positive sampling probability")
    rows = softmax_W[cand]
    logits = rows @ d + b_M[cand] - np.log(qc)
    m = logits.max()
    ex = np.exp(logits - m)
    Z = ex.sum()
    loss = float(np.log(Z) + m - logits[0])
    g = ex / Z
    g[0] -= 1.0
    return loss, SampledSoftmaxGrads(
        candidates=cand,
        d_decoded=rows.T @ g,
        d_rows=np.outer(g, d),
        d_bias=g,
    )


def sampled_losses_only(softmax_W, b_M, log_q, D, targets, negatives):
    """Vectorized per-position losses, no gradients (validation path)."""
    cand = np.concatenate((targets[:, None], negatives), axis=1)
    rows = softmax_W[cand]
    logits = np.einsum("pkd,pd->pk", rows, D) + b_M[cand] - log_q[cand]
    m = logits.max(axis=1)
    return np.log(np.exp(logits - m[:, None]).sum(axis=1)) + m - logits[:, 0]


@dataclass
class StepTrace:
    """Caches from one GRU step, retained for the backward pass."""

    h: np.ndarray
    r: np.ndarray
    u: np.ndarray
    c: np.ndarray


def gru_step(params, e_t, h_prev):
    """Single GRU update; the sequence kernels must match this exactly."""
    if e_t.shape != (params.dim_embed,) or h_prev.shape != (params.dim_state,):
        raise ShapeError(
            f"gru_step got e_t{e_t.shape}, h_prev{h_prev.shape}; expected "
            f"({params.dim_embed},), ({params.dim_state},)"
        )
    z = np.concatenate((e_t, h_prev))
    r = sigmoid(params.W_r @ z + params.b_r)
    u = sigmoid(params.W_u @ z + params.b_u)
    zc = np.concatenate((e_t, r * h_prev))
    c = np.tanh(params.W_c @ zc + params.b_c)
    h = u * h_prev + (1.0 - u) * c
    return h, StepTrace(h=h, r=r, u=u, c=c)


def visual_project(params, feature):
    """ReLU(W_I f + b_I) plus its pre-activation (needed for backward)."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (params.feature_dim,):
        raise ShapeError(
            f"feature has shape {feature.shape}, model expects ({params.feature_dim},)")
    pre = params.W_I @ feature + params.b_I
    return np.maximum(pre, 0.0), pre


def visual_init(params, feature):
    """Initial GRU state: projected image feature for a/a_noshare, zero
    otherwise (the b and c variants route the image through their auxiliary
    losses instead)."""
    if params.uses_visual_init:
        if feature is None:
            raise DataError("variant %r needs a visual feature" % params.variant)
        return visual_project(params, feature)[0]
    return np.zeros(params.dim_state)


@dataclass
class SentenceResult:
    total: float
    base: float
    aux: float
    n_scored: int


def sentence_forward(params, seq, feature=None, lam=1.0, rng=None, sampler=None,
                     n_negatives=DEFAULT_NEGATIVES, tape=None):
    """Loss (and, with a tape, gradients) for one encoded sentence.

    ``seq`` is a BOS...EOS id sequence; inputs are seq[:-1] and targets
    seq[1:].  Positions whose target is the unknown token are not scored;
    the base loss is the mean sampled-softmax loss over scored positions.
    Variants b and c add ``lam`` times their auxiliary distance terms.

    Returns a :class:`SentenceResult`, or None for an empty sentence
    (nothing between BOS and EOS).  With ``tape`` given, gradients for all
    touched parameters are accumulated into it; in shared variants the
    embedding and softmax contributions land in the single shared buffer.
    """
    if sampler is None or rng is None:
        raise ConfigError("sentence_forward needs a sampler and an rng")
    if (feature is not None) != (params.variant != "text"):
        raise DataError(
            f"variant {params.variant!r} {'requires' if params.variant != 'text' else 'does not take'} "
            f"a visual feature")
    seq = np.asarray(seq, dtype=np.int64)
    if seq.shape[0] <= 2:
        return None

    inputs = seq[:-1]
    targets = seq[1:]
    T = inputs.shape[0]
    d_e, d_h = params.dim_embed, params.dim_state

    E = params.U_w[inputs]
    h0 = visual_init(params, feature) if params.uses_visual_init else np.zeros(d_h)
    H, R, U, C = backends.gru_forward(
        params.W_r, params.W_u, params.W_c, params.b_r, params.b_u, params.b_c, E, h0)

    scored = np.flatnonzero(targets != UNK_ID)
    P = scored.shape[0]
    negs = sampler.sample_batch(targets[scored], n_negatives, rng)
    D = H[scored] @ params.W_d.T

    aux = 0.0
    if tape is None:
        losses = sampled_losses_only(
            params.softmax_weights, params.b_M, sampler.log_q, D, targets[scored], negs)
        base = float(losses.mean())
        if params.variant == "b":
            v, _ = visual_project(params, feature)
            aux = float(np.linalg.norm(H[-1] - v))
        elif params.variant == "c":
            v, _ = visual_project(params, feature)
            content = np.flatnonzero(~np.isin(inputs, (BOS_ID, EOS_ID, UNK_ID)))
            if content.shape[0] > 0:
                aux = float(np.linalg.norm(E[content] - v, axis=1).mean())
        return SentenceResult(total=base + lam * aux, base=base, aux=aux, n_scored=P)

    dD = np.empty_like(D)
    loss_sum = backends.sampled_softmax_batch(
        params.softmax_weights, params.b_M, sampler.log_q, D, targets[scored],
        negs, 1.0 / P, dD, tape[params.softmax_param_name], tape["b_M"])
    base = loss_sum / P

    tape["W_d"] += dD.T @ H[scored]
    dH = np.zeros((T, d_h))
    dH[scored] = dD @ params.W_d

    dE_extra = None
    d_visual = None
    if params.variant == "b":
        v, pre = visual_project(params, feature)
        diff = H[-1] - v
        norm = np.linalg.norm(diff)
        aux = float(norm)
        unit = diff / max(norm, NORM_EPS)
        dH[-1] += lam * unit
        d_visual = (-lam * unit, pre)
    elif params.variant == "c":
        v, pre = visual_project(params, feature)
        content = np.flatnonzero(~np.isin(inputs, (BOS_ID, EOS_ID, UNK_ID)))
        if content.shape[0] > 0:
            diffs = E[content] - v
            norms = np.linalg.norm(diffs, axis=1)
            aux = float(norms.mean())
            units = diffs / np.maximum(norms, NORM_EPS)[:, None]
            w = lam / content.shape[0]
            dE_extra = (content, w * units)
            d_visual = (-w * units.sum(axis=0), pre)

    dE = np.empty_like(E)
    dh0 = np.empty(d_h)
    backends.gru_backward(
        params.W_r, params.W_u, params.W_c, E, h0, H, R, U, C, dH,
        tape["W_r"], tape["W_u"], tape["W_c"], tape["b_r"], tape["b_u"], tape["b_c"],
        dE, dh0)

    if dE_extra is not None:
        content, rows = dE_extra
        dE[content] += rows
    np.add.at(tape["U_w"], inputs, dE)

    if params.uses_visual_init:
        _, pre = visual_project(params, feature)
        da = dh0 * (pre > 0.0)
        tape["W_I"] += np.outer(da, feature)
        tape["b_I"] += da
    if d_visual is not None:
        dv, pre = d_visual
        da = dv * (pre > 0.0)
        tape["W_I"] += np.outer(da, feature)
        tape["b_I"] += da

    return SentenceResult(total=base + lam * aux, base=base, aux=aux, n_scored=P)


def export_embeddings(path, params, vocab):
    """Write the embedding table as text: header ``V d_e``, then one line
    per word in id order with 6-significant-digit coordinates."""
    if len(vocab) != params.vocab_size:
        raise DataError(
            f"vocabulary size {len(vocab)} != model vocabulary {params.vocab_size}")
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{params.vocab_size} {params.dim_embed}\n")
        for word, row in zip(vocab.words, params.U_w):
            f.write(word + " " + " ".join(format(x, ".6g") for x in row) + "\n")


def load_embeddings(path):
    """Read the text embedding format back: (words, (V, d_e) matrix)."""
    from .errors import ParseError

    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ParseError(path, 1, "expected header `V d_e`")
        try:
            V, d_e = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError(path, 1, "expected integer header `V d_e`") from None
        words, rows = [], []
        for lineno, line in enumerate(f, 2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != d_e + 1:
                raise ParseError(path, lineno, f"expected a word and {d_e} values")
            words.append(parts[0])
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise ParseError(path, lineno, "bad float value") from None
    if len(words) != V:
        raise ParseError(path, 1, f"header promises {V} rows, found {len(words)}")
    return words, np.asarray(rows, dtype=np.float64)
