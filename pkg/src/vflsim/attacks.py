"""Model-completion attacks run by the passive party on its own extractor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import VerticalDataset
from .errors import ConfigError, StateError
from .rng import stream

HEADS = ("mlp", "mlp_sim")


@dataclass(frozen=True)
class AttackConfig:
    """One completion attack.

    ``labeled_budget`` is a sample count, ``"all"`` for the whole train split,
    or a float in (0, 1) meaning that fraction of the dataset size.
    """

    kind: str = "pmc"
    head: str = "mlp"
    labeled_budget: int | float | str = 40
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 32
    hidden: int = 64
    amc_boost: float = 1.0
    amc_adaptive: bool = True

    def __post_init__(self):
        if self.kind not in ("pmc", "amc"):
            raise ConfigError(f"attack kind must be 'pmc' or 'amc', got {self.kind!r}")
        if self.head not in HEADS:
            raise ConfigError(f"attack head must be one of {HEADS}, got {self.head!r}")
        if self.amc_boost <= 0:
            raise ConfigError("amc_boost must be positive")

    def budget(self, ds: VerticalDataset) -> int:
        b = self.labeled_budget
        n_train = len(ds.train_idx)
        if b == "all":
            return n_train
        if isinstance(b, float) and 0 < b < 1:
            b = int(round(b * ds.n_samples))
        if not isinstance(b, (int, np.integer)) or isinstance(b, bool) or b < 1:
            raise ConfigError(f"labeled_budget must be a positive int, a fraction, or 'all'; got {b!r}")
        if b > n_train:
            raise ConfigError(f"labeled_budget {b} exceeds train split size {n_train}")
        return int(b)

    def label(self) -> str:
        extra = f",boost={self.amc_boost:g}" if self.kind == "amc" else ""
        return f"{self.kind}[{self.head},budget={self.labeled_budget}{extra}]"


@dataclass
class AttackResult:
    accuracy: float
    trace: list[float] = field(default_factory=list)
    head: nn.Network | None = None
    budget: int = 0


def attack_head_layers(kind: str, rep_dim: int, n_classes: int, hidden: int = 64) -> list[nn.LayerSpec]:
    """``mlp_sim`` is a single dense layer; ``mlp`` has three."""
    if kind == "mlp_sim":
        return nn.mlp_layers([rep_dim, n_classes])
    if kind == "mlp":
        return nn.mlp_layers([rep_dim, hidden, hidden, n_classes])
    raise ConfigError(f"unknown attack head {kind!r}")


def balanced_subset(labels: np.ndarray, pool: np.ndarray, budget: int, n_classes: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Pick ``budget`` indices from ``pool`` spreading evenly over classes."""
    if budget < n_classes:
        raise ConfigError(f"labeled_budget {budget} < number of classes {n_classes}; cannot balance")
    if budget >= len(pool):
        return np.sort(pool)
    by_class = [rng.permutation(pool[labels[pool] == c]) for c in range(n_classes)]
    take = [0] * n_classes
    remaining = budget
    while remaining:
        progressed = False
        for c in range(n_classes):
            if remaining and take[c] < len(by_class[c]):
                take[c] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            break
    return np.sort(np.concatenate([by_class[c][:take[c]] for c in range(n_classes)]))


def train_head(feats: np.ndarray, labels: np.ndarray, head: nn.Network, epochs: int, lr: float,
               batch_size: int, rng: np.random.Generator,
               eval_feats: np.ndarray | None = None, eval_labels: np.ndarray | None = None
               ) -> tuple[nn.Network, list[float]]:
    trace = []
    n = len(labels)
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            sel = order[s:s + batch_size]
            t = nn.forward(head, feats[sel])
            _, g = nn.cross_entropy_logits(t.output, labels[sel])
            head = nn.sgd_step(head, nn.backward(head, t, g), lr)
        if eval_feats is not None:
            trace.append(float((nn.predict(head, eval_feats).argmax(1) == eval_labels).mean()))
    return head, trace


def pmc(extractor: nn.Network, ds: VerticalDataset, cfg: AttackConfig, seed: int = 0,
        party: int = 2, trace: bool = False) -> AttackResult:
    """Fit a fresh head on top of a frozen stolen extractor.

    The extractor is never modified; a byte comparison before and after
    guards that.
    """
    before = extractor.flat().tobytes()
    rng = stream(seed, "attack", cfg.kind, cfg.head)
    budget = cfg.budget(ds)
    idx = balanced_subset(ds.labels, ds.train_idx, budget, ds.n_classes, rng)
    x = ds.party_features[party - 1]
    feats = nn.predict(extractor, x[idx])
    test_feats = nn.predict(extractor, x[ds.test_idx])
    test_y = ds.labels[ds.test_idx]
    head = nn.init_network(attack_head_layers(cfg.head, extractor.out_dim, ds.n_classes, cfg.hidden), rng)
    head, tr = train_head(feats, ds.labels[idx], head, cfg.epochs, cfg.lr, cfg.batch_size, rng,
                          test_feats if trace else None, test_y if trace else None)
    if extractor.flat().tobytes() != before:
        raise StateError("extractor changed during a completion attack")
    acc = float((nn.predict(head, test_feats).argmax(1) == test_y).mean())
    return AttackResult(acc, tr, head, budget)


class BoostedAdaptiveUpdate:
    """Malicious local optimizer for active model completion.

    With ``adaptive`` the step for each parameter is its gradient divided by a
    running RMS of that parameter's gradients (bias-corrected), times
    ``lr * boost``: small received gradients become full-size steps, so the
    extractor moves faster than its honest peers and the head leans on it.
    Without ``adaptive`` this is SGD at ``lr * boost``.
    """

    def __init__(self, boost: float = 1.0, adaptive: bool = True, beta: float = 0.99, eps: float = 1e-8):
        self.boost = boost
        self.adaptive = adaptive
        self.beta = beta
        self.eps = eps
        self._sq: list[tuple[np.ndarray, np.ndarray]] | None = None
        self._t = 0

    def __call__(self, net: nn.Network, grads: nn.GradientSet, lr: float) -> nn.Network:
        if not self.adaptive:
            return nn.sgd_step(net, grads, lr * self.boost)
        if self._sq is None:
            self._sq = [(np.zeros_like(w), np.zeros_like(b)) for w, b in net.params]
        self._t += 1
        corr = 1.0 - self.beta ** self._t
        new, sq = [], []
        for (w, b), (gw, gb), (vw, vb) in zip(net.params, grads.params, self._sq):
            vw = self.beta * vw + (1 - self.beta) * gw * gw
            vb = self.beta * vb + (1 - self.beta) * gb * gb
            step = lr * self.boost
            new.append((w - step * gw / (np.sqrt(vw / corr) + self.eps),
                        b - step * gb / (np.sqrt(vb / corr) + self.eps)))
            sq.append((vw, vb))
        self._sq = sq
        return nn.Network(net.layers, new)


def amc_update(cfg: AttackConfig) -> BoostedAdaptiveUpdate:
    """Update rule to install on the attacking passive party before training."""
    if cfg.kind != "amc":
        raise ConfigError("amc_update needs an amc attack config")
    return BoostedAdaptiveUpdate(cfg.amc_boost, cfg.amc_adaptive)


def amc(extractor: nn.Network, ds: VerticalDataset, cfg: AttackConfig, seed: int = 0,
        party: int = 2) -> AttackResult:
    """Completion step of the active attack.

    The training-time half is :func:`amc_update`, installed on the passive
    party when the federation is built; this runs the completion on the
    resulting extractor.
    """
    return pmc(extractor, ds, cfg, seed, party)
