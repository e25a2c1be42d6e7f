"""Weight-sharing hyper-networks and the training/evaluation loops.

The choice-block topology: a strided stem convolution, B choice blocks
(each holding independent weights for all six candidate operations, with
stride-2 channel-doubling reduction convolutions ahead of the blocks at
the two reduction positions), adaptive average pooling to 1x1, and a
two-layer dense tail whose first pre-activation output is the embedding.
A genome selects one or two ops per block; chosen op outputs are summed
elementwise, so a block choosing {conv, identity} acts as a residual
branch.  Ops outside the genome never enter the graph and receive no
gradient.

The TDNN topology: five frame-level layers, each holding one weight set
per candidate context window, then statistics pooling and two dense
layers; the genome picks one window per layer.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from evonas import tensor as T
from evonas.checkpoint import load_checkpoint, save_checkpoint
from evonas.errors import ConfigError, ContractError
from evonas.optim import Adam, LinearDecay
from evonas.searchspace import Genome, Mode, OpKind, SearchSpace, splice_offsets
from evonas.tensor import Tensor, no_grad
from evonas.verifier import (
    EmbeddingBatch,
    ScoreParams,
    compute_eer,
    ge2e_style_loss,
    score_trials,
    softmax_xent_loss,
)

log = logging.getLogger(__name__)

CONV_KERNEL = {OpKind.CONV1X1: 1, OpKind.CONV3X3: 3, OpKind.CONV5X5: 5,
               OpKind.CONV7X7: 7}


@dataclass(frozen=True)
class HyperNetConfig:
    mode: Mode = Mode.AUTO_VECTOR
    filters: int = 32
    blocks: int = 24
    embedding_dim: int = 512
    reduction_positions: tuple = None
    path_dropout: float = 0.1
    n_train_speakers: int = 8
    feature_dim: int = 40
    feature_frames: int = 300
    stem_stride: int = 2
    tdnn_hidden: tuple = (512, 512, 512, 512, 1500)
    tdnn_layers: int = 5
    window_choices: tuple = (0, 1, 2, 3)

    def __post_init__(self):
        if self.filters < 1:
            raise ConfigError(f"filters must be >= 1, got {self.filters}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if not 0.0 <= self.path_dropout < 1.0:
            raise ConfigError(
                f"path_dropout must be in [0, 1), got {self.path_dropout}")
        if self.reduction_positions is None:
            object.__setattr__(self, "reduction_positions",
                               (self.blocks // 3, 2 * self.blocks // 3))
        bad = [p for p in self.reduction_positions if not 0 <= p < self.blocks]
        if bad:
            raise ConfigError(f"reduction positions {bad} outside [0, {self.blocks})")

    def search_space(self):
        if self.mode is Mode.AUTO_VECTOR:
            return SearchSpace(mode=Mode.AUTO_VECTOR, n_blocks=self.blocks)
        return SearchSpace(mode=Mode.TDNN_XVECTOR, n_layers=self.tdnn_layers,
                           window_choices=self.window_choices)


def _kaiming(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class _ParamStore:
    """Named parameter dictionary shared by both topologies."""

    def __init__(self):
        self.params = {}

    def add_conv(self, rng, name, c_in, c_out, k):
        w = _kaiming(rng, (c_out, c_in, k, k), c_in * k * k)
        self.params[f"{name}.weight"] = Tensor(w, requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(c_out), requires_grad=True)

    def add_dense(self, rng, name, d_in, d_out):
        w = _kaiming(rng, (d_out, d_in), d_in)
        self.params[f"{name}.weight"] = Tensor(w, requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(d_out), requires_grad=True)

    def conv(self, name, x, stride=1):
        w = self.params[f"{name}.weight"]
        return T.conv2d(x, w, self.params[f"{name}.bias"], stride,
                        w.shape[2] // 2)

    def dense(self, name, x):
        return T.dense(x, self.params[f"{name}.weight"],
                       self.params[f"{name}.bias"])

    def named_parameters(self):
        return dict(self.params)

    def parameter_count(self):
        return sum(p.size for p in self.params.values())


def _drop_mask(rng, p):
    """Independent drop decisions for a 2-op block, redrawn if both drop."""
    while True:
        d0 = rng.random() < p
        d1 = rng.random() < p
        if not (d0 and d1):
            return d0, d1


class HyperNet(_ParamStore):
    """Choice-block hyper-network holding weights for every candidate op."""

    def __init__(self, config, seed=0):
        if config.mode is not Mode.AUTO_VECTOR:
            raise ConfigError("HyperNet is the choice-block topology; "
                              "use TdnnHyperNet for TDNN mode")
        super().__init__()
        self.config = config
        self.space = config.search_space()
        rng = np.random.default_rng(seed)
        c = config.filters
        self.add_conv(rng, "stem", 1, c, 3)
        self.block_channels = []
        for i in range(config.blocks):
            if i in config.reduction_positions:
                self.add_conv(rng, f"block{i}.reduce", c, 2 * c, 3)
                c *= 2
            self.block_channels.append(c)
            for op, k in CONV_KERNEL.items():
                self.add_conv(rng, f"block{i}.{op.value}", c, c, k)
        self.final_channels = c
        self.add_dense(rng, "tail.dense1", c, config.embedding_dim)
        self.add_dense(rng, "tail.dense2", config.embedding_dim,
                       config.embedding_dim)
        self.add_dense(rng, "head", config.embedding_dim,
                       config.n_train_speakers)

    def _check_genome(self, genome):
        violations = self.space.validate(genome)
        if violations:
            raise ContractError(
                "genome does not fit this hyper-network: " + "; ".join(violations))

    def _apply_op(self, prefix, op, x):
        if op is OpKind.IDENTITY:
            return x
        if op is OpKind.MAX_POOL:
            return T.max_pool2d(x, 3, 1, 1)
        return self.conv(f"{prefix}.{op.value}", x)

    def embed(self, x, genome, drop_rng=None):
        """Embeddings [N, E] for features [N, 40, 300] along genome's path.

        drop_rng enables path dropout: each op of a 2-op block drops with
        probability config.path_dropout (never both; survivors rescale by
        1/(1-p)).  Single-op blocks are never dropped.
        """
        self._check_genome(genome)
        if isinstance(x, np.ndarray):
            x = Tensor(x)
        n = x.shape[0]
        x = T.reshape(x, (n, 1) + x.shape[1:])
        x = T.relu(self.conv("stem", x, stride=self.config.stem_stride))
        p = self.config.path_dropout
        for i, gene in enumerate(genome.blocks):
            if i in self.config.reduction_positions:
                x = T.relu(self.conv(f"block{i}.reduce", x, stride=2))
            ops = gene.canonical_ops()
            if len(ops) == 2 and drop_rng is not None and p > 0.0:
                drops = _drop_mask(drop_rng, p)
                outs = [self._apply_op(f"block{i}", op, x) * (1.0 / (1.0 - p))
                        for op, dropped in zip(ops, drops) if not dropped]
            else:
                outs = [self._apply_op(f"block{i}", op, x) for op in ops]
            total = outs[0]
            for extra in outs[1:]:
                total = total + extra
            x = T.relu(total)
        pooled = T.adaptive_avg_pool2d(x, 1, 1)
        pooled = T.reshape(pooled, (n, self.final_channels))
        return self.dense("tail.dense1", pooled)

    def logits(self, embedding):
        """Softmax-head logits from an embedding (training path only)."""
        h = self.dense("tail.dense2", T.relu(embedding))
        return self.dense("head", T.relu(h))

    def parameter_count_for(self, genome):
        """Parameters a standalone network for ``genome`` would carry."""
        self._check_genome(genome)
        used = self._names_for(genome)
        return sum(self.params[n].size for n in used)

    def _names_for(self, genome):
        names = ["stem.weight", "stem.bias", "tail.dense1.weight",
                 "tail.dense1.bias", "tail.dense2.weight", "tail.dense2.bias",
                 "head.weight", "head.bias"]
        for i, gene in enumerate(genome.blocks):
            if i in self.config.reduction_positions:
                names += [f"block{i}.reduce.weight", f"block{i}.reduce.bias"]
            for op in gene.canonical_ops():
                if op in CONV_KERNEL:
                    names += [f"block{i}.{op.value}.weight",
                              f"block{i}.{op.value}.bias"]
        return names


class SubNet(_ParamStore):
    """A standalone network carrying only one genome's operations."""

    def __init__(self, config, genome, named_arrays):
        super().__init__()
        self.config = config
        self.genome = genome
        self.final_channels = None
        for name, arr in named_arrays.items():
            self.params[name] = Tensor(np.array(arr), requires_grad=True)
        c = config.filters
        for i in range(config.blocks):
            if i in config.reduction_positions:
                c *= 2
        self.final_channels = c

    def embed(self, x, genome=None, drop_rng=None):
        if genome is not None and genome != self.genome:
            raise ContractError("SubNet was extracted for a different genome")
        if isinstance(x, np.ndarray):
            x = Tensor(x)
        n = x.shape[0]
        x = T.reshape(x, (n, 1) + x.shape[1:])
        x = T.relu(self.conv("stem", x, stride=self.config.stem_stride))
        for i, gene in enumerate(self.genome.blocks):
            if i in self.config.reduction_positions:
                x = T.relu(self.conv(f"block{i}.reduce", x, stride=2))
            outs = []
            for op in gene.canonical_ops():
                if op is OpKind.IDENTITY:
                    outs.append(x)
                elif op is OpKind.MAX_POOL:
                    outs.append(T.max_pool2d(x, 3, 1, 1))
                else:
                    outs.append(self.conv(f"block{i}.{op.value}", x))
            total = outs[0]
            for extra in outs[1:]:
                total = total + extra
            x = T.relu(total)
        pooled = T.adaptive_avg_pool2d(x, 1, 1)
        pooled = T.reshape(pooled, (n, self.final_channels))
        return self.dense("tail.dense1", pooled)

    def logits(self, embedding):
        h = self.dense("tail.dense2", T.relu(embedding))
        return self.dense("head", T.relu(h))


def extract_subnet(hypernet, genome):
    """Copy the genome's slice of the hyper-network into a SubNet.

    The SubNet's forward pass applies the same ops in the same order with
    the same kernels, so its outputs match forward-through-the-hypernet
    bit for bit.
    """
    hypernet._check_genome(genome)
    names = hypernet._names_for(genome)
    arrays = {n: hypernet.params[n].data for n in names}
    return SubNet(hypernet.config, genome, arrays)


class TdnnHyperNet(_ParamStore):
    """TDNN hyper-network with one weight set per context-window choice."""

    def __init__(self, config, seed=0):
        if config.mode is not Mode.TDNN_XVECTOR:
            raise ConfigError("TdnnHyperNet requires TDNN mode")
        super().__init__()
        self.config = config
        self.space = config.search_space()
        if len(config.tdnn_hidden) != config.tdnn_layers:
            raise ConfigError("tdnn_hidden must list one width per layer")
        rng = np.random.default_rng(seed)
        d_in = config.feature_dim
        for layer, d_out in enumerate(config.tdnn_hidden):
            for w in config.window_choices:
                taps = len(splice_offsets(w))
                self.add_dense(rng, f"layer{layer}.w{w}", d_in * taps, d_out)
            d_in = d_out
        self.add_dense(rng, "tail.dense1", 2 * d_in, config.embedding_dim)
        self.add_dense(rng, "tail.dense2", config.embedding_dim,
                       config.embedding_dim)
        self.add_dense(rng, "head", config.embedding_dim,
                       config.n_train_speakers)

    def _check_genome(self, genome):
        violations = self.space.validate(genome)
        if violations:
            raise ContractError(
                "genome does not fit this hyper-network: " + "; ".join(violations))

    def splice_plan(self, genome):
        """The frame offsets each layer splices under this genome."""
        self._check_genome(genome)
        return tuple(splice_offsets(w) for w in genome.windows)

    def _layer(self, name, x, window):
        n, d, t = x.shape
        taps = splice_offsets(window)
        time = np.arange(t)
        spliced = [T.take_last(x, np.clip(time + tap, 0, t - 1))
                   for tap in taps]
        xs = spliced[0] if len(spliced) == 1 else T.concat(spliced, axis=1)
        flat = T.reshape(T.transpose(xs, (1, 0, 2)), (d * len(taps), n * t))
        w = self.params[f"{name}.weight"]
        b = self.params[f"{name}.bias"]
        out = T.matmul(w, flat) + T.reshape(b, (b.shape[0], 1))
        return T.transpose(T.reshape(out, (w.shape[0], n, t)), (1, 0, 2))

    def embed(self, x, genome, drop_rng=None):
        """Embeddings [N, E] for features [N, 40, T]; no path dropout
        applies here because every layer picks exactly one window."""
        self._check_genome(genome)
        if isinstance(x, np.ndarray):
            x = Tensor(x)
        for layer, window in enumerate(genome.windows):
            x = T.relu(self._layer(f"layer{layer}.w{window}", x, window))
        pooled = T.stats_pool(x)
        return self.dense("tail.dense1", pooled)

    def logits(self, embedding):
        h = self.dense("tail.dense2", T.relu(embedding))
        return self.dense("head", T.relu(h))


def build(config, seed=0):
    """Construct the hyper-network for ``config`` with seeded init."""
    if config.mode is Mode.AUTO_VECTOR:
        net = HyperNet(config, seed=seed)
    else:
        net = TdnnHyperNet(config, seed=seed)
    log.info("built %s with %d parameters", type(net).__name__,
             net.parameter_count())
    return net


def save_model(path, model):
    save_checkpoint(path, {n: p.data for n, p in model.params.items()})


def load_weights(path, model):
    arrays = load_checkpoint(path)
    missing = set(model.params) - set(arrays)
    extra = set(arrays) - set(model.params)
    if missing or extra:
        raise ContractError(
            f"checkpoint mismatch: missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]}")
    for name, arr in arrays.items():
        if model.params[name].data.shape != arr.shape:
            raise ContractError(
                f"checkpoint shape mismatch for {name}: "
                f"{arr.shape} vs {model.params[name].data.shape}")
        model.params[name].data = arr.copy()
    return model


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    end_step: int = 0


def _batch_plan(corpus, batch_speakers, utts_per_speaker):
    by_speaker = corpus.by_speaker("train")
    speakers = sorted(by_speaker)
    if len(speakers) < batch_speakers:
        raise ConfigError(
            f"need at least {batch_speakers} train speakers, got {len(speakers)}")
    starved = [s for s in speakers if len(by_speaker[s]) < utts_per_speaker]
    if starved:
        raise ConfigError(
            f"speakers {starved[:3]} have fewer than {utts_per_speaker} "
            "train utterances")
    return speakers, by_speaker


def train_model(model, corpus, *, loss_mode, steps, rng, schedule,
                genome=None, path_dropout=False, batch_speakers=8,
                utts_per_speaker=5, start_step=0, optimizer=None,
                score_params=None):
    """Mini-batch training shared by hyper-network training and retraining.

    Each step assembles batch_speakers x utts_per_speaker utterances from
    the train split.  With genome=None (hyper-network training) a fresh
    genome is sampled uniformly per step, so only that path receives
    gradients.  loss_mode is "softmax" or "ge2e"; the schedule supplies
    the learning rate per global step (start_step offsets resumed runs).
    """
    if loss_mode not in ("softmax", "ge2e"):
        raise ConfigError(f"unknown loss mode {loss_mode!r}")
    speakers, by_speaker = _batch_plan(corpus, batch_speakers, utts_per_speaker)
    speaker_index = {s: i for i, s in enumerate(sorted(corpus.train_speakers()))}
    if loss_mode == "softmax":
        head_size = model.params["head.weight"].shape[0]
        if head_size < len(speaker_index):
            raise ConfigError(
                f"softmax head has {head_size} outputs for "
                f"{len(speaker_index)} train speakers")
    if score_params is None:
        score_params = ScoreParams()
    params = list(model.params.values())
    if optimizer is None:
        optimizer = Adam(params + score_params.parameters(), lr=schedule.base)

    sample_genome = genome is None
    result = TrainResult()
    for local_step in range(steps):
        global_step = start_step + local_step
        optimizer.lr = schedule.rate(global_step)
        g = model.space.uniform_sample(rng) if sample_genome else genome
        chosen = rng.choice(len(speakers), size=batch_speakers, replace=False)
        feats, labels = [], []
        for si in chosen:
            utts = by_speaker[speakers[si]]
            pick = rng.choice(len(utts), size=utts_per_speaker, replace=False)
            for ui in pick:
                feats.append(utts[ui].features)
                labels.append(speaker_index[speakers[si]])
        x = np.stack(feats)
        drop_rng = rng if path_dropout else None
        emb = model.embed(x, g, drop_rng=drop_rng)
        if loss_mode == "softmax":
            loss = softmax_xent_loss(model.logits(emb), np.asarray(labels))
        else:
            e3 = T.reshape(emb, (batch_speakers, utts_per_speaker,
                                 emb.shape[1]))
            loss = ge2e_style_loss(EmbeddingBatch(e3), score_params)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        score_params.clamp()
        result.losses.append(loss.item())
    result.end_step = start_step + steps
    return result


def embed_utterances(model, corpus, utt_ids, genome=None, batch_size=64):
    """Dict of utterance id -> embedding vector, computed without a graph."""
    out = {}
    with no_grad():
        for lo in range(0, len(utt_ids), batch_size):
            chunk = utt_ids[lo:lo + batch_size]
            x = np.stack([corpus.utterance(u).features for u in chunk])
            emb = model.embed(x, genome) if genome is not None else model.embed(x)
            for u, vec in zip(chunk, emb.data):
                out[u] = vec
    return out


def evaluate_candidate(hypernet, genome, corpus, trials, score_params=None,
                       batch_size=64):
    """EER of a candidate with weights inherited from the hyper-network.

    Path dropout is off and no graph is recorded, so repeated calls with
    the same inputs give identical results.
    """
    from evonas.corpus import trial_utterance_ids

    if score_params is None:
        score_params = ScoreParams()
    ids = trial_utterance_ids(trials)
    embeddings = embed_utterances(hypernet, corpus, ids, genome=genome,
                                  batch_size=batch_size)
    return compute_eer(score_trials(embeddings, trials, score_params))
