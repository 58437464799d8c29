"""Split training between one active party and its passive parties.

Each round every passive party uploads a representation message; the active
party optionally masks some of them out (party-wise dropout), runs its head,
updates its own networks, and answers every unmasked upload with exactly one
gradient message of the same shape. Passive parties see nothing but their own
features and those gradient messages.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import dimip as dm
from . import nn
from .data import Batch, VerticalDataset, batches
from .defenses import DefenseConfig, apply_defense
from .errors import ConfigError, InputError, ProtocolError
from .rng import stream

ACTIVE = 1
PROTECTED = 2
MAX_MULTI_HEAD_PARTIES = 4
REP_ACTIVATIONS = {
    "relu": (nn.RELU,),
    "linear": (),
    "layernorm": (nn.LAYERNORM,),
    "layernorm_relu": (nn.LAYERNORM, nn.RELU),
}

UpdateRule = Callable[[nn.Network, nn.GradientSet, float], nn.Network]


@dataclass(frozen=True)
class RepMessage:
    party: int
    round: int
    rows: int
    payload: np.ndarray


@dataclass(frozen=True)
class GradMessage:
    party: int
    round: int
    rows: int
    payload: np.ndarray


@dataclass(frozen=True)
class TraceEvent:
    kind: str            # "rep" or "grad"
    party: int
    round: int
    shape: tuple[int, ...]
    digest: str


def _digest(a: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(a).tobytes()).hexdigest()[:16]


class Channel:
    """In-process link that validates and (optionally) records messages."""

    def __init__(self, record: bool = False):
        self.record = record
        self.events: list[TraceEvent] = []

    def _log(self, kind: str, msg) -> None:
        if self.record:
            self.events.append(TraceEvent(kind, msg.party, msg.round, msg.payload.shape, _digest(msg.payload)))

    def upload(self, msg: RepMessage) -> RepMessage:
        if msg.payload.ndim != 2 or msg.payload.shape[0] != msg.rows:
            raise ProtocolError(f"representation has shape {msg.payload.shape}, announced {msg.rows} rows",
                                msg.party, msg.round)
        self._log("rep", msg)
        return msg

    def dispatch(self, msg: GradMessage, answering: RepMessage) -> GradMessage:
        if msg.party != answering.party or msg.round != answering.round:
            raise ProtocolError("gradient routed to the wrong party or round", msg.party, msg.round)
        if msg.payload.shape != answering.payload.shape:
            raise ProtocolError(
                f"gradient shape {msg.payload.shape} != representation shape {answering.payload.shape}",
                msg.party, msg.round)
        self._log("grad", msg)
        return msg


def sgd_update(net: nn.Network, grads: nn.GradientSet, lr: float) -> nn.Network:
    return nn.sgd_step(net, grads, lr)


class PassiveParty:
    """Feature holder: owns its extractor and its local update rule, nothing else."""

    def __init__(self, pid: int, extractor: nn.Network, lr: float, update: UpdateRule = sgd_update):
        if pid == ACTIVE:
            raise InputError("party 1 is the active party")
        self.pid = pid
        self.extractor = extractor
        self.lr = lr
        self.update = update
        self._pending: dict[int, nn.ActivationTrace] = {}

    def represent(self, x: np.ndarray, round_: int) -> RepMessage:
        trace = nn.forward(self.extractor, x)
        self._pending = {round_: trace}
        return RepMessage(self.pid, round_, x.shape[0], trace.output)

    def infer(self, x: np.ndarray) -> np.ndarray:
        return nn.predict(self.extractor, x)

    def receive(self, msg: GradMessage) -> None:
        trace = self._pending.pop(msg.round, None)
        if trace is None:
            raise ProtocolError("gradient for a round with no outstanding representation", self.pid, msg.round)
        if msg.payload.shape != trace.output.shape:
            raise ProtocolError("gradient shape does not match representation", self.pid, msg.round)
        grads = nn.backward(self.extractor, trace, msg.payload)
        self.extractor = self.update(self.extractor, grads, self.lr)


@dataclass
class ActiveParty:
    extractor: nn.Network
    head: nn.Network
    lr: float
    n_classes: int
    label_pool: np.ndarray
    extra_heads: dict[int, nn.Network] | None = None
    pid: int = ACTIVE


@dataclass
class RoundRecord:
    round: int
    mask: tuple[int, ...]
    L_C: float
    L_A: float | None = None
    L_R: float | None = None
    vclub_s: float | None = None

    def row(self) -> list[str]:
        def f(v):
            return "" if v is None else format(v, ".10g")
        return [str(self.round), "".join(map(str, self.mask)), f(self.L_C), f(self.L_A), f(self.L_R), f(self.vclub_s)]


TRACE_COLUMNS = ["round", "mask", "L_C", "L_A", "L_R", "vclub_s"]


@dataclass
class FederationConfig:
    extractor_hidden: int = 32
    rep_dim: int = 16
    rep_activation: str = "relu"
    head_hidden: int = 64
    lr: float = 0.01
    dropout_p: tuple[float, ...] = ()
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    dimip_lambda: float = 0.0
    aux_hidden: int = 64
    aux_lr: float | None = None
    aux_steps: int = 1
    use_lr_term: bool = True
    multi_head: bool = False


class Federation:
    """All state of one training run: parties, masks, defenses, RNG streams."""

    def __init__(self, active: ActiveParty, passive: Sequence[PassiveParty], *,
                 dropout_p: Sequence[float] = (), defense: DefenseConfig | None = None,
                 dimip: dm.DimipState | None = None, seed: int = 0, record: bool = False):
        self.active = active
        self.passive = list(passive)
        ids = [p.pid for p in self.passive]
        if ids != list(range(2, len(ids) + 2)):
            raise InputError(f"passive party ids must be 2..K in order, got {ids}")
        p = tuple(float(v) for v in dropout_p) or (0.0,) * len(self.passive)
        if len(p) != len(self.passive):
            raise ConfigError(f"dropout_p needs {len(self.passive)} entries, got {len(p)}")
        if any(not 0.0 <= v < 1.0 for v in p):
            raise ConfigError("dropout probabilities must lie in [0, 1)")
        self.dropout_p = p
        self.defense = defense or DefenseConfig()
        self.dimip = dimip
        if dimip is not None and len(self.passive) != 1:
            raise ConfigError("the MI defense is defined for exactly two parties")
        if dimip is not None and self.defense.perturbs_gradients:
            raise ConfigError("only one defense may be active per federation")
        self.seed = seed
        self.mask_rng = stream(seed, "mask")
        self.defense_rng = stream(seed, "defense")
        self.channel = Channel(record)
        self.round = 0
        self.log: list[RoundRecord] = []

    @property
    def n_parties(self) -> int:
        return 1 + len(self.passive)

    def party(self, pid: int) -> PassiveParty:
        return self.passive[pid - 2]

    def rep_dims(self) -> list[int]:
        return [self.active.extractor.out_dim] + [p.extractor.out_dim for p in self.passive]

    def parameters(self) -> dict[str, nn.Network]:
        out = {"extractor_1": self.active.extractor, "head": self.active.head}
        for p in self.passive:
            out[f"extractor_{p.pid}"] = p.extractor
        return out


def mask_bits(absent: Iterable[int]) -> int:
    """Bitmask with bit ``k - 2`` set for every absent passive party ``k``."""
    m = 0
    for k in absent:
        if k == ACTIVE:
            raise InputError("the active party cannot be absent")
        m |= 1 << (k - 2)
    return m


def build_federation(ds: VerticalDataset, cfg: FederationConfig, seed: int = 0, *,
                     record: bool = False, updates: dict[int, UpdateRule] | None = None) -> Federation:
    """Initialize every network from named streams of ``seed``."""
    final = REP_ACTIVATIONS.get(cfg.rep_activation)
    if final is None:
        raise ConfigError(f"rep_activation must be one of {sorted(REP_ACTIVATIONS)}, got {cfg.rep_activation!r}")
    extractors = [
        nn.mlp([d, cfg.extractor_hidden, cfg.rep_dim], stream(seed, "init", "extractor", k), final=final)
        for k, d in enumerate(ds.dims, start=1)
    ]
    head_in = cfg.rep_dim * ds.n_parties
    head_layers = nn.mlp_layers([head_in, cfg.head_hidden, ds.n_classes])
    head = nn.init_network(head_layers, stream(seed, "init", "head"))
    active = ActiveParty(extractors[0], head, cfg.lr, ds.n_classes, ds.labels[ds.train_idx].copy())
    updates = updates or {}
    passive = [PassiveParty(k, extractors[k - 1], cfg.lr, updates.get(k, sgd_update))
               for k in range(2, ds.n_parties + 1)]
    dimip = None
    if cfg.defense.kind == "dimip":
        aux = nn.init_network(dm.aux_layers(cfg.rep_dim, ds.n_classes, cfg.aux_hidden),
                              stream(seed, "init", "aux"))
        dimip = dm.DimipState(aux, cfg.dimip_lambda, stream(seed, "dimip-shuffle"),
                              cfg.lr if cfg.aux_lr is None else cfg.aux_lr, cfg.aux_steps, cfg.use_lr_term)
    fed = Federation(active, passive, dropout_p=cfg.dropout_p or (), defense=cfg.defense,
                     dimip=dimip, seed=seed, record=record)
    if cfg.multi_head:
        enable_multi_head(fed)
    return fed


def enable_multi_head(fed: Federation) -> None:
    """Add one head per non-empty set of absent passive parties."""
    if fed.n_parties > MAX_MULTI_HEAD_PARTIES:
        raise ConfigError(f"multi-head training needs K <= {MAX_MULTI_HEAD_PARTIES}, got {fed.n_parties}")
    layers = fed.active.head.layers
    fed.active.extra_heads = {
        m: nn.init_network(layers, stream(fed.seed, "init", "head", m))
        for m in range(1, 2 ** len(fed.passive))
    }


def sample_mask(dropout_p: Sequence[float], rng: np.random.Generator) -> tuple[int, ...]:
    """Independent Bernoulli draw per passive party; always consumes K-1 uniforms."""
    u = rng.random(len(dropout_p))
    return tuple(int(x < p) for x, p in zip(u, dropout_p))


def _zero_absent(blocks: list[np.ndarray], absent_bits: int) -> np.ndarray:
    out = list(blocks)
    for i in range(1, len(out)):
        if absent_bits >> (i - 1) & 1:
            out[i] = np.zeros_like(out[i])
    return np.hstack(out)


def train_round(fed: Federation, batch: Batch) -> Federation:
    """One synchronous training iteration; mutates and returns ``fed``."""
    act = fed.active
    r = fed.round
    y = batch.labels
    t1 = nn.forward(act.extractor, batch.parties[0])

    uploads = []
    for party in fed.passive:
        msg = fed.channel.upload(party.represent(batch.parties[party.pid - 1], r))
        if msg.payload.shape[1] != party.extractor.out_dim or msg.rows != len(y):
            raise ProtocolError("representation does not match the announced layout", party.pid, r)
        uploads.append(msg)

    mask = sample_mask(fed.dropout_p, fed.mask_rng)
    blocks = [t1.output] + [m.payload for m in uploads]
    absent_bits = sum(z << i for i, z in enumerate(mask))
    x_head = _zero_absent(blocks, absent_bits)

    record = RoundRecord(r, mask, 0.0)
    dimip = fed.dimip
    h2_live = dimip is not None and not mask[0]
    if h2_live:
        h2 = uploads[0].payload
        la = None
        for _ in range(dimip.aux_steps):
            step_la = dm.fit_aux_step(dimip, h2, y)
            la = step_la if la is None else la
        record.L_A = la

    ht = nn.forward(act.head, x_head)
    loss, g = nn.cross_entropy_logits(ht.output, y)
    record.L_C = loss
    hg = nn.backward(act.head, ht, g)
    cuts = np.cumsum([b.shape[1] for b in blocks])[:-1]
    rep_grads = np.split(hg.input_grad, cuts, axis=1)
    eg = nn.backward(act.extractor, t1, rep_grads[0])
    act.head = nn.sgd_step(act.head, hg, act.lr)
    act.extractor = nn.sgd_step(act.extractor, eg, act.lr)

    if act.extra_heads:
        for m, head in act.extra_heads.items():
            xt = _zero_absent(blocks, m)
            tr = nn.forward(head, xt)
            _, gm = nn.cross_entropy_logits(tr.output, y)
            act.extra_heads[m] = nn.sgd_step(head, nn.backward(head, tr, gm), act.lr)

    for i, (party, up) in enumerate(zip(fed.passive, uploads)):
        if mask[i]:
            continue
        out = rep_grads[i + 1]
        if h2_live and party.pid == PROTECTED:
            shuffled = dm.sample_shuffled(act.label_pool, len(y), dimip.rng)
            g_mi, la_post, lr_val, est = dm.representation_gradient(dimip, up.payload, y, shuffled)
            record.L_R, record.vclub_s = lr_val, est
            if record.L_A is None:
                record.L_A = la_post
            if dimip.lam:
                out = (1.0 - dimip.lam) * out + dimip.lam * g_mi
        elif fed.defense.perturbs_gradients:
            out = apply_defense(out, fed.defense, fed.defense_rng)
        msg = fed.channel.dispatch(GradMessage(party.pid, r, up.rows, out), up)
        party.receive(msg)

    fed.log.append(record)
    fed.round += 1
    return fed


def dimip_round(fed: Federation, batch: Batch) -> Federation:
    """Training round with the MI defense; identical entry point to :func:`train_round`."""
    if fed.dimip is None:
        raise ConfigError("federation was built without the MI defense")
    return train_round(fed, batch)


def fit(fed: Federation, ds: VerticalDataset, epochs: int, batch_size: int = 32,
        seed: int | None = None, on_epoch: Callable[[Federation, int], None] | None = None) -> Federation:
    seed = fed.seed if seed is None else seed
    for epoch in range(epochs):
        for batch in batches(ds, "train", batch_size, seed, epoch):
            train_round(fed, batch)
        if on_epoch is not None:
            on_epoch(fed, epoch)
    return fed


def train_multi_head(fed: Federation, ds: VerticalDataset, epochs: int, batch_size: int = 32) -> Federation:
    if fed.active.extra_heads is None:
        enable_multi_head(fed)
    return fit(fed, ds, epochs, batch_size)


def predict(fed: Federation, party_features: Sequence[np.ndarray], present: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and logits with absent parties' blocks set to zero."""
    present = set(present)
    if ACTIVE not in present:
        raise InputError("the active party must be present")
    blocks = [nn.predict(fed.active.extractor, party_features[0])]
    for p in fed.passive:
        blocks.append(p.infer(party_features[p.pid - 1]))
    absent = mask_bits(k for k in range(2, fed.n_parties + 1) if k not in present)
    head = fed.active.head
    if absent and fed.active.extra_heads:
        head = fed.active.extra_heads[absent]
    logits = nn.predict(head, _zero_absent(blocks, absent))
    return logits.argmax(axis=1), logits


def evaluate(fed: Federation, ds: VerticalDataset, split: str = "test",
             present: Iterable[int] | None = None) -> float:
    idx = ds.split(split)
    if present is None:
        present = range(1, fed.n_parties + 1)
    feats, y = ds.rows(idx)
    pred, _ = predict(fed, feats, present)
    return float((pred == y).mean())


# --------------------------------------------------------------------------
# persistence


def write_trace(fed: Federation, path) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(TRACE_COLUMNS) + "\n")
        for rec in fed.log:
            fh.write("\t".join(rec.row()) + "\n")


def save_federation(fed: Federation, directory) -> None:
    """Per-network checkpoint files plus a JSON manifest."""
    os.makedirs(directory, exist_ok=True)
    nets = fed.parameters()
    if fed.active.extra_heads:
        for m, h in fed.active.extra_heads.items():
            nets[f"head_absent_{m}"] = h
    if fed.dimip is not None:
        nets["aux"] = fed.dimip.aux
    for name, net in nets.items():
        nn.save(net, os.path.join(directory, f"{name}.net"))
    manifest = {
        "format": 1,
        "parties": list(range(1, fed.n_parties + 1)),
        "rep_dims": fed.rep_dims(),
        "input_dims": [fed.active.extractor.in_dim] + [p.extractor.in_dim for p in fed.passive],
        "dropout_p": list(fed.dropout_p),
        "head_layout": "concat of representation blocks in ascending party id",
        "head": [s.to_text() for s in fed.active.head.layers],
        "round": fed.round,
        "networks": sorted(f"{n}.net" for n in nets),
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
