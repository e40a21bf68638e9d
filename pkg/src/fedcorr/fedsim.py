"""Deterministic FedAvg simulator with pluggable per-layer compression.

All randomness flows from one ``numpy`` generator seeded by ``FedConfig.seed``
and is drawn in a fixed order: validation split, partition, parameter
initialisation, then per round and per client (in client order) the mini-batch
permutation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from fedcorr.adaptive import make_controller
from fedcorr.errors import InvalidInput
from fedcorr.ingest import LabeledDataset
from fedcorr.ledger import CommDelta, CommLedger
from fedcorr.metrics import CorrelationReading, measure_corr_pca_detail
from fedcorr.updates import reshape_to_matrix

log = logging.getLogger(__name__)

SCHEMES = ("none", "svdfed", "adasvdfed", "pcafed", "predictive")


@dataclass
class FedConfig:
    K: int = 20
    tau: int = 4
    gamma: float = 0.1
    T: int = 50
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    partition: str = "iid"
    labels_per_client: int | None = None
    scheme: str = "none"
    scheme_config: dict = field(default_factory=dict)
    val_fraction: float = 0.2
    target_accuracy: float | None = None

    def __post_init__(self):
        if self.K < 1 or self.tau < 1 or self.T < 0:
            raise InvalidInput("K and tau must be positive and T non-negative")
        if self.gamma < 0:
            raise InvalidInput("gamma must be non-negative")
        if self.partition not in ("iid", "label_limited", "replicated"):
            raise InvalidInput(f"unknown partition {self.partition!r}")
        if self.partition == "label_limited" and not self.labels_per_client:
            raise InvalidInput("label_limited partition needs labels_per_client")
        if self.scheme not in SCHEMES:
            raise InvalidInput(f"unknown scheme {self.scheme!r}")


@dataclass
class RoundRecord:
    round: int
    train_loss: float
    val_accuracy: float | None
    readings: list
    states: dict
    comm: dict
    distortion: list
    info: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "round": self.round,
            "train_loss": self.train_loss,
            "val_accuracy": self.val_accuracy,
            "readings": self.readings,
            "states": self.states,
            "comm": self.comm,
            "distortion": self.distortion,
        }


@dataclass
class ExperimentResult:
    records: list
    ledger: CommLedger
    initial_loss: float
    params: np.ndarray
    d: int

    def rounds_to_target(self, target: float | None) -> int | None:
        if target is None:
            return None
        for rec in self.records:
            if rec.val_accuracy is not None and rec.val_accuracy >= target:
                return rec.round
        return None

    def summary(self, scheme: str, target: float | None) -> dict:
        """Totals up to the round the target was first reached (whole run if never)."""
        hit = self.rounds_to_target(target)
        upto = hit if hit is not None else None
        return {
            "scheme": scheme,
            "rounds_to_target": hit,
            "uplink": self.ledger.uplink(upto),
            "downlink": self.ledger.downlink(upto),
            "total": self.ledger.total(upto),
        }


# -- data --------------------------------------------------------------------


def partition(ds: LabeledDataset, K: int, kind: str = "iid", labels_per_client=None, rng=None):
    """Split ``ds`` into ``K`` client shards (lists of row indices).

    ``iid`` deals a random permutation into near-equal parts. ``label_limited``
    gives client ``k`` the labels ``perm[(k*L + j) % C]`` for ``j < L`` and
    divides every label's samples evenly among the clients that own it.
    ``replicated`` hands every client the full dataset.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n = len(ds)
    if kind == "replicated":
        return [np.arange(n) for _ in range(K)]
    if n < K:
        raise InvalidInput(f"{n} samples cannot feed {K} clients")
    if kind == "iid":
        return [np.sort(p) for p in np.array_split(rng.permutation(n), K)]
    if kind != "label_limited":
        raise InvalidInput(f"unknown partition {kind!r}")
    keys = ds.partition_keys
    classes = np.unique(keys)
    C, L = classes.size, labels_per_client
    if L is None or L < 1 or L > C:
        raise InvalidInput(f"labels per client {L} must lie in [1, {C}]")
    order = classes[rng.permutation(C)]
    owners = {c: [] for c in classes.tolist()}
    for k in range(K):
        for j in range(L):
            owners[order[(k * L + j) % C].item()].append(k)
    shards = [[] for _ in range(K)]
    for c, who in owners.items():
        members = rng.permutation(np.flatnonzero(keys == c))
        if not who:
            continue
        for k, part in zip(who, np.array_split(members, len(who))):
            shards[k].extend(part.tolist())
    if any(not s for s in shards):
        raise InvalidInput("partition left a client without samples")
    return [np.sort(np.asarray(s, dtype=np.int64)) for s in shards]


def train_val_split(ds: LabeledDataset, val_fraction: float, rng):
    if val_fraction <= 0:
        return ds, None
    perm = rng.permutation(len(ds))
    n_val = int(round(val_fraction * len(ds)))
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


# -- optimisation ------------------------------------------------------------


def local_update(x, shard: LabeledDataset, model, cfg: FedConfig, rng) -> np.ndarray:
    """Run ``tau`` mini-batch SGD steps from ``x`` and return the parameter delta.

    The batch size is ``len(shard) // tau``, with heavy-ball momentum (buffer
    reset every round) and L2 weight decay added to the gradient. Shards
    smaller than ``tau`` use single-sample batches that wrap around.
    """
    n = len(shard)
    if n == 0:
        raise InvalidInput("empty shard")
    batch = max(1, n // cfg.tau)
    x_local = np.array(x, dtype=np.float64)
    velocity = np.zeros_like(x_local)
    perm = rng.permutation(n) if cfg.tau > 1 else np.arange(n)
    for i in range(cfg.tau):
        idx = perm[np.arange(i * batch, (i + 1) * batch) % n]
        _, grad = model.loss_grad(x_local, shard.features[idx], shard.labels[idx])
        if cfg.weight_decay:
            grad = grad + cfg.weight_decay * x_local
        velocity = cfg.momentum * velocity + grad
        x_local = x_local - cfg.gamma * velocity
    return x_local - x


def aggregate(ghats, weights, x) -> np.ndarray:
    """``x + sum_k w_k ghat_k``, summed in client order."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(ghats) != weights.size or abs(weights.sum() - 1.0) > 1e-12:
        raise InvalidInput("need one weight per client, summing to 1")
    out = np.array(x, dtype=np.float64)
    for w, g in zip(weights, ghats):
        out = out + w * np.asarray(g)
    return out


def mse(ghat, g) -> float:
    diff = np.asarray(ghat) - np.asarray(g)
    return float(diff @ diff / diff.size)


# -- driver ------------------------------------------------------------------


def _prepare(cfg: FedConfig, model, dataset: LabeledDataset, val: LabeledDataset | None):
    rng = np.random.default_rng(cfg.seed)
    if val is None:
        train, val = train_val_split(dataset, cfg.val_fraction, rng)
    else:
        train = dataset
    shards_idx = partition(train, cfg.K, cfg.partition, cfg.labels_per_client, rng)
    shards = [train.subset(i) for i in shards_idx]
    sizes = np.array([len(s) for s in shards], dtype=np.float64)
    weights = sizes / sizes.sum()
    x = model.init_params(rng)
    return rng, train, val, shards, weights, x


def _global_loss(model, x, shards, weights) -> float:
    return float(sum(w * model.loss(x, s.features, s.labels) for w, s in zip(weights, shards)))


def run_experiment(cfg: FedConfig, model, dataset: LabeledDataset, val: LabeledDataset | None = None):
    """Simulate ``cfg.T`` FedAvg rounds.

    Compression is applied independently to every layer flagged ``compress``;
    other layers travel raw. Returns an :class:`ExperimentResult`.
    """
    rng, train, val, shards, weights, x = _prepare(cfg, model, dataset, val)
    K = cfg.K
    controllers = {
        layer.name: make_controller(cfg.scheme, K, layer.size, cfg.scheme_config, layer.spec)
        for layer in model.layers
        if layer.compress
    }
    ledger = CommLedger()
    records = []
    initial_loss = _global_loss(model, x, shards, weights)
    for t in range(1, cfg.T + 1):
        raw = [local_update(x, s, model, cfg, rng) for s in shards]
        ghats = [np.empty(model.d) for _ in range(K)]
        delta = CommDelta.empty(K)
        delta.downlink_broadcast = model.d
        states, readings, info = {}, [], {}
        for layer in model.layers:
            sl = slice(layer.start, layer.stop)
            if layer.name not in controllers:
                for k in range(K):
                    ghats[k][sl] = raw[k][sl]
                delta += CommDelta(uplink=[layer.size] * K)
                continue
            out = controllers[layer.name].round([g[sl] for g in raw], t)
            for k in range(K):
                ghats[k][sl] = out.ghats[k]
            delta += out.delta
            states[layer.name] = out.tags
            readings += [dict(r.__dict__, layer=layer.name) for r in out.readings]
            info[layer.name] = dict(out.info, uplink=list(out.delta.uplink))
        ledger.record(t, delta)
        distortion = [mse(gh, g) for gh, g in zip(ghats, raw)]
        x = aggregate(ghats, weights, x)
        acc = model.accuracy(x, val.features, val.labels) if val is not None else None
        records.append(
            RoundRecord(
                round=t,
                train_loss=_global_loss(model, x, shards, weights),
                val_accuracy=acc,
                readings=readings,
                states=states,
                comm=delta.as_dict(),
                distortion=distortion,
                info=info,
            )
        )
        log.debug("round %d loss %.6g acc %s", t, records[-1].train_loss, acc)
    return ExperimentResult(records, ledger, initial_loss, x, model.d)


def probe_correlations(
    cfg: FedConfig,
    model,
    dataset: LabeledDataset,
    beta: float = 0.2,
    h: int = 5,
    strict_paper: bool = False,
    val: LabeledDataset | None = None,
):
    """Train without compression and measure correlation every round.

    Per round and per compressed layer:

    * spatial: PCA energy ratio of the K client updates;
    * temporal: ratio of each client's last ``h`` updates (current included),
      averaged over clients; first reported at round ``h``;
    * structural: ratio of each client's update slices, averaged over clients.

    Layers are combined with weights proportional to their parameter count.
    Returns a list of :class:`CorrelationReading`, ordered by round then kind.
    """
    rng, train, val, shards, weights, x = _prepare(cfg, model, dataset, val)
    layers = [lay for lay in model.layers if lay.compress]
    total = sum(lay.size for lay in layers)
    windows = [[] for _ in range(cfg.K)]
    out = []
    for t in range(1, cfg.T + 1):
        raw = [local_update(x, s, model, cfg, rng) for s in shards]
        for k in range(cfg.K):
            windows[k] = [raw[k], *windows[k]][:h]
        acc = {kind: _Fold() for kind in ("structural", "temporal", "spatial")}
        for lay in layers:
            share = lay.size / total
            sl = slice(lay.start, lay.stop)
            if cfg.K >= 2:
                acc["spatial"].add(lay.size, share, [measure_corr_pca_detail([g[sl] for g in raw], beta, strict_paper)])
            else:
                acc["spatial"].ok = False
            if len(windows[0]) >= h and h >= 2:
                acc["temporal"].add(
                    lay.size,
                    share,
                    [measure_corr_pca_detail([g[sl] for g in w], beta, strict_paper) for w in windows],
                )
            else:
                acc["temporal"].ok = False
            if lay.spec.n >= 2:
                acc["structural"].add(
                    lay.size,
                    share,
                    [
                        measure_corr_pca_detail(reshape_to_matrix(g[sl], lay.spec).g_mat.T, beta, strict_paper)
                        for g in raw
                    ],
                )
            else:
                acc["structural"].ok = False
        for kind in ("structural", "temporal", "spatial"):
            f = acc[kind]
            if f.ok:
                out.append(CorrelationReading(t, kind, min(1.0, f.value), f.r, f.count))
        x = aggregate(raw, weights, x)
    return out


class _Fold:
    """Size-weighted average over layers; rank and count come from the largest layer."""

    def __init__(self):
        self.value = 0.0
        self.r = 0
        self.count = 0
        self.size = -1
        self.ok = True

    def add(self, size, share, details):
        self.value += share * float(np.mean([d[0] for d in details]))
        if size > self.size:
            self.size, self.r, self.count = size, details[0][1], details[0][2]
