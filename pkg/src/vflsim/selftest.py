"""Fast built-in checks: exact gradients, estimator identities, protocol flow.

Used by ``vflsim selftest``; each check returns a :class:`Check` instead of
raising so every failure is reported in one pass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import dimip as dm
from . import engine, nn
from .data import SyntheticSpec, generate_synthetic, batches
from .defenses import DefenseConfig
from .rng import stream

FD_TOL = 1e-4
FD_EPS = 1e-5


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _ce_loss(x, y):
    def loss_fn(net):
        t = nn.forward(net, x)
        loss, g = nn.cross_entropy_logits(t.output, y)
        return loss, nn.backward(net, t, g)
    return loss_fn


def _sq_loss(x, target):
    def loss_fn(net):
        t = nn.forward(net, x)
        diff = t.output - target
        return 0.5 * float((diff ** 2).sum()), nn.backward(net, t, diff)
    return loss_fn


def gradient_compositions(seed: int) -> list[tuple[str, nn.Network, object]]:
    """Every layer kind under the losses it is used with, at a random point."""
    rng = stream(seed, "selftest", "fd")
    x = rng.standard_normal((6, 5))
    y = rng.integers(0, 4, size=6)
    target = rng.random((6, 4))
    cases = [
        ("dense+ce", nn.mlp([5, 4], rng), _ce_loss(x, y)),
        ("dense-relu-dense+ce", nn.mlp([5, 7, 4], rng), _ce_loss(x, y)),
        ("deep-relu+ce", nn.mlp([5, 6, 6, 4], rng), _ce_loss(x, y)),
        ("dense-layernorm-dense+ce", nn.init_network(
            [nn.LayerSpec(nn.DENSE, 5, 6), nn.LayerSpec(nn.LAYERNORM), nn.LayerSpec(nn.DENSE, 6, 4)], rng),
         _ce_loss(x, y)),
        ("dense-relu+squared", nn.mlp([5, 4], rng, final=nn.RELU), _sq_loss(x, target)),
        ("dense-softmax+squared", nn.mlp([5, 4], rng, final=nn.SOFTMAX), _sq_loss(x, target)),
    ]
    # Zero biases put relu inputs exactly on the kink (a row whose previous
    # relu layer is all zero); jitter every parameter so the point is generic.
    return [(name, net.with_flat(net.flat() + 0.1 * rng.standard_normal(net.n_params())), fn)
            for name, net, fn in cases]


def check_gradients(seeds: range = range(20)) -> Check:
    worst, where = 0.0, ""
    for seed in seeds:
        for name, net, loss_fn in gradient_compositions(seed):
            err = nn.finite_diff_check(net, loss_fn, FD_EPS)
            if err > worst:
                worst, where = err, f"{name}@seed{seed}"
        err = _boundary_fd(seed)
        if err > worst:
            worst, where = err, f"mi-boundary@seed{seed}"
    return Check("finite_difference", worst < FD_TOL,
                 f"max_rel_err={worst:.3g} worst_case={where or 'none'} seeds={len(seeds)}")


def _boundary_fd(seed: int) -> float:
    """Defended outgoing gradient vs central differences of its scalar objective."""
    rng = stream(seed, "selftest", "boundary")
    b, d, c = 5, 4, 3
    head = nn.mlp([2 * d, 6, c], rng)
    aux = nn.init_network(dm.aux_layers(d, c, hidden=5), rng)
    h1, h2 = rng.standard_normal((b, d)), rng.standard_normal((b, d))
    y, ys = rng.integers(0, c, size=b), rng.integers(0, c, size=b)
    lam = float(rng.uniform(0.1, 0.9))
    t = nn.forward(head, np.hstack([h1, h2]))
    _, g = nn.cross_entropy_logits(t.output, y)
    g_lc = nn.backward(head, t, g).input_grad[:, d:]
    state = dm.DimipState(aux, lam, rng)
    g_mi = dm.representation_gradient(state, h2, y, ys)[0]
    analytic = (1 - lam) * g_lc + lam * g_mi
    return nn.input_finite_diff(
        lambda h: dm.boundary_objective(head, h1, aux, h, y, ys, lam), h2, analytic, FD_EPS)


def expected_vclub_s_bruteforce(log_probs: np.ndarray, labels: np.ndarray) -> float:
    """Average of the sampled estimate over every assignment of negatives.

    Each row's negative is drawn uniformly from the ``n`` pool labels, so
    there are ``n ** n`` equally likely assignments; all are enumerated.
    """
    n = len(labels)
    rows = np.arange(n)
    pos = log_probs[rows, labels].mean()
    # neg[i, j] = log q(label_j | H_i)
    neg = log_probs[:, labels]
    head = min(n, 2)
    tail = n - head
    tail_idx = np.stack(np.unravel_index(np.arange(n ** tail), (n,) * tail), axis=1) if tail else np.zeros((1, 0), int)
    tail_vals = neg[np.arange(head, n)[None, :], tail_idx].sum(axis=1) if tail else np.zeros(1)
    total = 0.0
    for prefix in itertools.product(range(n), repeat=head):
        pre = sum(neg[i, j] for i, j in enumerate(prefix))
        total += float(np.sum(pos - (pre + tail_vals) / n))
    return total / n ** n


def check_vclub_identities() -> Check:
    rng = stream(0, "selftest", "vclub")
    n, c = 8, 4
    lp = nn.log_softmax(rng.standard_normal((n, c)))
    y = rng.integers(0, c, size=n)
    same = dm.vclub_s(lp, y, y)
    uniform = dm.vclub_s(np.full((n, c), -np.log(c)), y, rng.integers(0, c, size=n))
    brute = expected_vclub_s_bruteforce(lp, y)
    full = dm.vclub_full(lp, y)
    ok = same == 0.0 and abs(uniform) < 1e-15 and abs(brute - full) < 1e-12
    return Check("vclub_identities", ok,
                 f"identical_shuffle={same:.3g} uniform={uniform:.3g} unbiased_diff={abs(brute - full):.3g}")


def _traced_rounds(dimip_on: bool, dropout: tuple[float, ...], dims=(4, 3), rounds: int = 6):
    spec = SyntheticSpec(n=120, n_classes=3, dims=dims, informativeness=(1.0,) * len(dims),
                         class_separation=2.0, coarse_parties=(), confound=0.0, seed=3)
    ds = generate_synthetic(spec)
    cfg = engine.FederationConfig(extractor_hidden=5, rep_dim=3, head_hidden=6, dropout_p=dropout,
                                  defense=DefenseConfig(kind="dimip" if dimip_on else "none"),
                                  dimip_lambda=0.5, aux_hidden=4)
    fed = engine.build_federation(ds, cfg, seed=1, record=True)
    for i, batch in enumerate(batches(ds, "train", 16, 1, 0)):
        if i == rounds:
            break
        engine.train_round(fed, batch)
    return fed


def conservation_violations(fed: engine.Federation) -> list[str]:
    """Protocol problems in a recorded federation (empty list means clean)."""
    problems = []
    reps = [e for e in fed.channel.events if e.kind == "rep"]
    grads = [e for e in fed.channel.events if e.kind == "grad"]
    for rec in fed.log:
        for k, masked in enumerate(rec.mask, start=2):
            up = [e for e in reps if e.round == rec.round and e.party == k]
            back = [e for e in grads if e.round == rec.round and e.party == k]
            if len(up) != 1:
                problems.append(f"round {rec.round} party {k}: {len(up)} uploads")
            if masked and back:
                problems.append(f"round {rec.round} party {k}: masked party received a gradient")
            if not masked and (len(back) != 1 or (up and back[0].shape != up[0].shape)):
                problems.append(f"round {rec.round} party {k}: {len(back)} answers")
    return problems


def check_protocol() -> Check:
    fed = _traced_rounds(False, (0.3, 0.3), dims=(4, 3, 2))
    problems = conservation_violations(fed)
    on, off = _traced_rounds(True, ()), _traced_rounds(False, ())
    a, b = on.channel.events, off.channel.events
    same_layout = [(e.kind, e.party, e.round, e.shape) for e in a] == [(e.kind, e.party, e.round, e.shape) for e in b]
    reps_equal = [e.digest for e in a if e.kind == "rep"][:1] == [e.digest for e in b if e.kind == "rep"][:1]
    if not same_layout:
        problems.append("defended and undefended traces differ in layout")
    if not reps_equal:
        problems.append("first representation differs between defended and undefended runs")
    n_masked = sum(sum(r.mask) for r in fed.log)
    return Check("protocol_conservation", not problems,
                 f"rounds={len(fed.log)} masked_uploads={n_masked} problems={len(problems)}"
                 + (f" first={problems[0]!r}" if problems else ""))


def run_all() -> list[Check]:
    return [check_gradients(), check_vclub_identities(), check_protocol()]
