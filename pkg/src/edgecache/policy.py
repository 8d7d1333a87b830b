"""Learnable caching policy: features, softmax scorer, REINFORCE, inner adaptation.

The policy scores the C eviction slots plus the no-op with a small two-layer
tanh network over per-slot recency/frequency features.  Gradients are plain
REINFORCE with discounted return-to-go; steps where the environment forces the
no-op (hits) contribute reward but no log-probability term.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .cachesim import EMPTY, RewardWeights, TaskEnv


_SLOT_FEATS = 3   # occupied flag, recency, frequency
_REQ_FEATS = 2    # requested content's frequency and recency


@dataclass(frozen=True)
class Layout:
    """Shapes of the slot scorer.

    The same two-layer tanh scorer is applied to every slot's features
    (concatenated with the request features) to produce that slot's logit;
    a small linear head over the request features produces the no-op logit.
    Weight sharing across slots keeps the policy permutation-equivariant and
    the parameter count independent of the cache size.
    """

    in_dim: int    # full feature vector length, 3C + 2
    hidden: int
    out_dim: int   # C + 1 actions

    @property
    def capacity(self) -> int:
        return self.out_dim - 1

    @property
    def size(self) -> int:
        h = self.hidden
        scorer = (_SLOT_FEATS + _REQ_FEATS) * h + h + h + 1
        noop = _REQ_FEATS + 1
        return scorer + noop

    def __post_init__(self):
        if self.in_dim != 3 * self.capacity + 2:
            raise ValueError("in_dim must equal 3 * capacity + 2")


@dataclass
class ParamVector:
    """Flat float64 parameters with a fixed layout."""

    layout: Layout
    data: np.ndarray

    def __post_init__(self):
        if len(self.data) != self.layout.size:
            raise ValueError("data length does not match layout")

    def views(self):
        h = self.layout.hidden
        f = _SLOT_FEATS + _REQ_FEATS
        i = 0
        W1 = self.data[i:i + f * h].reshape(f, h)
        i += f * h
        b1 = self.data[i:i + h]
        i += h
        w2 = self.data[i:i + h]
        i += h
        b2 = self.data[i:i + 1]
        i += 1
        wn = self.data[i:i + _REQ_FEATS]
        i += _REQ_FEATS
        bn = self.data[i:i + 1]
        return W1, b1, w2, b2, wn, bn

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.data.copy())


def init_params(layout: Layout, rng, scale: float = 0.05) -> ParamVector:
    data = rng.uniform(-scale, scale, size=layout.size)
    return ParamVector(layout, data)


def zeros_like(theta: ParamVector) -> ParamVector:
    return ParamVector(theta.layout, np.zeros_like(theta.data))


@dataclass(frozen=True)
class RLConfig:
    gamma: float = 0.99
    K: int = 2
    H: int = 100
    inner_lr: float = 2e-4
    M: int = 3
    meta_lr: float = 1e-3

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if min(self.K, self.H, self.M) < 1:
            raise ValueError("K, H, M must be at least 1")
        if self.inner_lr < 0 or self.meta_lr < 0:
            raise ValueError("learning rates must be non-negative")


@dataclass
class Trajectory:
    features: np.ndarray  # (T, dim); zero rows on forced steps
    actions: np.ndarray   # (T,), 1-based
    rewards: np.ndarray   # (T,)
    forced: np.ndarray    # (T,) bool, True where the no-op was forced by a hit

    def __len__(self) -> int:
        return len(self.actions)


def feature_dim(capacity: int) -> int:
    return 3 * capacity + 2


def featurize(state, stats, requested: int, now: int) -> np.ndarray:
    """Per-slot (occupied, recency, frequency) triples plus the requested
    content's frequency and recency, all normalized into [0, 1].

    Never-seen contents get zero recency and zero frequency.
    """
    slots = state.slots if hasattr(state, "slots") else np.asarray(state)
    C = len(slots)
    window = stats.window
    log_den = np.log1p(window)
    x = np.zeros(3 * C + 2)

    occ = slots != EMPTY
    if occ.any():
        ids = slots[occ]
        last = stats.last_access[ids]
        rec = (now - last) * (1.0 / window)
        np.minimum(rec, 1.0, out=rec)
        rec[last < 0] = 0.0
        freq = np.log1p(stats.counts[ids]) * (1.0 / log_den)
        np.minimum(freq, 1.0, out=freq)
        base = np.nonzero(occ)[0] * 3
        x[base] = 1.0
        x[base + 1] = rec
        x[base + 2] = freq
    last_r = stats.last_access[requested]
    if last_r >= 0:
        x[3 * C] = min(1.0, np.log1p(stats.counts[requested]) / log_den)
        x[3 * C + 1] = min(1.0, (now - last_r) / window)
    return x


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    P = np.exp(z)
    P /= P.sum(axis=-1, keepdims=True)
    return P


def _forward(theta: ParamVector, X: np.ndarray):
    """Batched forward pass; returns (slot inputs, hidden, probabilities)."""
    W1, b1, w2, b2, wn, bn = theta.views()
    C = theta.layout.capacity
    T = X.shape[0]
    S = X[:, :3 * C].reshape(T, C, _SLOT_FEATS)
    req = X[:, 3 * C:]
    inp = np.concatenate([S, np.broadcast_to(req[:, None, :], (T, C, _REQ_FEATS))], axis=2)
    Hid = np.tanh(inp @ W1 + b1)
    logits = np.empty((T, C + 1))
    logits[:, :C] = Hid @ w2 + b2
    logits[:, C] = req @ wn + bn
    return inp, Hid, _softmax(logits)


def _action_probs(theta: ParamVector, x: np.ndarray, C: int) -> np.ndarray:
    """Single-sample forward pass without batch bookkeeping (hot rollout path)."""
    W1, b1, w2, b2, wn, bn = theta.views()
    inp = np.empty((C, _SLOT_FEATS + _REQ_FEATS))
    inp[:, :_SLOT_FEATS] = x[:3 * C].reshape(C, _SLOT_FEATS)
    inp[:, _SLOT_FEATS:] = x[3 * C:]
    hid = np.tanh(inp @ W1 + b1)
    logits = np.empty(C + 1)
    logits[:C] = hid @ w2 + b2[0]
    logits[C] = x[3 * C:] @ wn + bn[0]
    logits -= logits.max()
    p = np.exp(logits)
    p /= p.sum()
    return p


def action_distribution(theta: ParamVector, x: np.ndarray) -> np.ndarray:
    """Softmax policy over the C+1 actions for one feature vector."""
    if not np.all(np.isfinite(theta.data)):
        raise ValueError("non-finite policy parameters")
    _, _, P = _forward(theta, x[None, :])
    return P[0]


def sample_trajectories(env: TaskEnv, theta: ParamVector, K: int, H: int, rng) -> list:
    """Roll K on-policy trajectories of up to H steps each on a task."""
    C = env.capacity
    dim = feature_dim(C)
    w = env.weights
    out = []
    for _ in range(K):
        slots, member, stats, pos = env.reset(rng, H)
        feats = np.zeros((H, dim))
        acts = np.zeros(H, dtype=np.int64)
        rews = np.zeros(H)
        forced = np.zeros(H, dtype=bool)
        t = 0
        T = len(env)
        state = _SlotsView(slots)
        while t < H and pos < T:
            c = int(env.contents[pos])
            now = int(env.timestamps[pos])
            if c in member:
                rews[t] = w.alpha
                acts[t] = C + 1
                forced[t] = True
            elif any(c in nb for nb in env.neighbors):
                rews[t] = w.beta
                acts[t] = C + 1
                forced[t] = True
            else:
                x = featurize(state, stats, c, now)
                p = _action_probs(theta, x, C)
                a = int(np.searchsorted(np.cumsum(p), rng.random(), side="right")) + 1
                if a > C + 1:  # guard against cumsum rounding at the top end
                    a = C + 1
                feats[t] = x
                acts[t] = a
                if a <= C:
                    old = slots[a - 1]
                    if old != EMPTY:
                        member.discard(int(old))
                    slots[a - 1] = c
                    member.add(c)
            stats.record(c, now)
            pos += 1
            t += 1
        if t == 0:
            raise ValueError("task exhausted before any transition")
        out.append(Trajectory(feats[:t], acts[:t], rews[:t], forced[:t]))
    return out


class _SlotsView:
    __slots__ = ("slots",)

    def __init__(self, slots):
        self.slots = slots


def trajectory_loss(tau: Trajectory) -> float:
    """Negated cumulative reward of one trajectory."""
    return -float(tau.rewards.sum())


def batch_loss(trajs) -> float:
    return float(np.mean([trajectory_loss(t) for t in trajs]))


def returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    G = np.zeros_like(rewards, dtype=np.float64)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        G[t] = acc
    return G


def surrogate_loss(theta: ParamVector, trajs, gamma: float) -> float:
    """Frozen-data REINFORCE surrogate: -(1/K) sum_t log pi(a_t|x_t) * G_t."""
    total = 0.0
    for tau in trajs:
        mask = ~tau.forced
        if not mask.any():
            continue
        G = returns_to_go(tau.rewards, gamma)[mask]
        X = tau.features[mask]
        A = tau.actions[mask] - 1
        _, _, P = _forward(theta, X)
        logp = np.log(P[np.arange(len(A)), A])
        total -= float(logp @ G)
    return total / len(trajs)


def policy_gradient(theta: ParamVector, trajs, gamma: float,
                    center: bool = False) -> ParamVector:
    """Gradient of the REINFORCE surrogate loss (descent increases return).

    Forced no-op steps contribute returns but no log-probability term.  With
    ``center`` the batch-mean return is subtracted before weighting the score
    function; the raw-return estimator is the contract, centering is the
    (unbiased) variance reduction the training loops use.
    """
    W1, b1, w2, b2, wn, bn = theta.views()
    mu, sd = 0.0, 1.0
    if center:
        allG = np.concatenate([returns_to_go(t.rewards, gamma)[~t.forced]
                               for t in trajs]) if trajs else np.empty(0)
        if len(allG):
            mu = float(allG.mean())
    C = theta.layout.capacity
    gW1 = np.zeros_like(W1)
    gb1 = np.zeros_like(b1)
    gw2 = np.zeros_like(w2)
    gb2 = 0.0
    gwn = np.zeros_like(wn)
    gbn = 0.0
    for tau in trajs:
        mask = ~tau.forced
        if not mask.any():
            continue
        G = (returns_to_go(tau.rewards, gamma)[mask] - mu) / sd
        X = tau.features[mask]
        A = tau.actions[mask] - 1
        inp, Hid, P = _forward(theta, X)
        # ascent direction on sum_t log pi(a_t|x_t) * G_t
        dlog = -P * G[:, None]
        dlog[np.arange(len(A)), A] += G
        dslot = dlog[:, :C]
        dnoop = dlog[:, C]
        gw2 += np.einsum("tch,tc->h", Hid, dslot)
        gb2 += dslot.sum()
        gwn += X[:, 3 * C:].T @ dnoop
        gbn += dnoop.sum()
        dpre = (dslot[:, :, None] * w2) * (1.0 - Hid * Hid)
        gW1 += np.einsum("tcf,tch->fh", inp, dpre)
        gb1 += dpre.sum(axis=(0, 1))
    K = len(trajs)
    flat = np.concatenate([gW1.ravel(), gb1, gw2, [gb2], gwn, [gbn]]) / K
    return ParamVector(theta.layout, -flat)


def inner_adapt(phi: ParamVector, env: TaskEnv, cfg: RLConfig, rng) -> ParamVector:
    """M descent steps from phi, resampling trajectories under each iterate."""
    theta = phi.copy()
    for _ in range(cfg.M):
        trajs = sample_trajectories(env, theta, cfg.K, cfg.H, rng)
        g = policy_gradient(theta, trajs, cfg.gamma, center=True)
        theta.data -= cfg.inner_lr * g.data
    return theta


_MAGIC = b"ECPV"


def save_params(theta: ParamVector, path) -> None:
    """Checkpoint format: magic, uint32 dim count, uint32 dims, float64 data (LE)."""
    L = theta.layout
    dims = (L.in_dim, L.hidden, L.out_dim)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(theta.data.astype("<f8").tobytes())


def load_params(path) -> ParamVector:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    (ndims,) = struct.unpack_from("<I", blob, 4)
    dims = struct.unpack_from(f"<{ndims}I", blob, 8)
    if ndims != 3:
        raise ValueError(f"{path}: expected 3 layout dims, got {ndims}")
    layout = Layout(*dims)
    data = np.frombuffer(blob, dtype="<f8", offset=8 + 4 * ndims).copy()
    return ParamVector(layout, data)
