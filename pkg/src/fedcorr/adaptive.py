"""Adaptive compression state machines for one parameter block (layer).

* :class:`AdaSVDFed` switches between a server-learned spatial subspace and
  per-client linear predictive coding, deciding every ``T_u`` rounds.
* :class:`PcaFed` keeps a state per client and picks among four PCA
  basis-sharing layouts from spatial, temporal and structural measurements.
* :class:`SvdFed` and :class:`PredictiveCoding` are the non-adaptive
  references, and :class:`NoCompression` is plain FedAvg.

Every controller exposes ``round(raw_updates, t)`` returning a
:class:`RoundOutcome`. Rounds are 1-based; round ``t`` is an UPDATE round
exactly when ``t % T_u == 1``.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from fedcorr.compressors import (
    PredictorMemory,
    pca_compress,
    pca_decompress,
    predictive_encode,
    predictor_roundtrip,
    subspace_project,
    subspace_reconstruct,
)
from fedcorr.errors import InsufficientSamples, InvalidInput, ProtocolViolation, ShapeMismatch
from fedcorr.ledger import CommDelta
from fedcorr.metrics import (
    CorrelationReading,
    TruncatedSvd,
    measure_corr_pca_detail,
    measure_corr_svd,
    narrow_pca,
    narrow_svd,
    passes,
)
from fedcorr.numerics import ceil_fraction
from fedcorr.updates import (
    ReshapeSpec,
    flat_spec,
    flatten_from_matrix,
    matrix_from_columns,
    reshape_to_matrix,
)

log = logging.getLogger(__name__)

UPDATE = "UPDATE"
SPATIAL = "SPATIAL"
PRED = "PRED"
PCA = "PCA"
LOCAL_PCA = "LocalPCA"
RAW = "RAW"

PER_SLICE_PER_CLIENT = "per-slice-per-client"
PER_SLICE_SHARED = "per-slice-shared"
PER_CLIENT_SHARED = "per-client-shared"
FULLY_SHARED = "fully-shared"
SHARING_CASES = (PER_SLICE_PER_CLIENT, PER_SLICE_SHARED, PER_CLIENT_SHARED, FULLY_SHARED)


def is_update_round(t: int, period: int) -> bool:
    return t % period == 1 % period


@dataclass
class AdaConfig:
    T_u: int = 3
    alpha: float = 0.8
    beta: float = 0.2
    h: int = 5
    residual_fraction: float = 0.05

    def __post_init__(self):
        _check_common(self.T_u, self.alpha, self.beta, self.h)
        if not 0.0 < self.residual_fraction <= 1.0:
            raise InvalidInput("residual_fraction must lie in (0, 1]")


@dataclass
class PcaFedConfig:
    T_u: int = 3
    alpha: float = 0.8
    beta: float = 0.2
    h: int = 5
    strict_paper_pca: bool = False

    def __post_init__(self):
        _check_common(self.T_u, self.alpha, self.beta, self.h)


def _check_common(T_u, alpha, beta, h):
    if T_u < 2:
        raise InvalidInput("T_u must be at least 2")
    if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
        raise InvalidInput("alpha and beta must lie in [0, 1]")
    if h < 1:
        raise InvalidInput("h must be at least 1")


@dataclass
class RoundOutcome:
    """What one controller produced for one round.

    ``tags`` holds one state tag per client; ``info`` carries scheme-specific
    trace fields (ranks, sharing case, ...).
    """

    ghats: list
    delta: CommDelta
    tags: list
    readings: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


def _stack(raw_updates) -> np.ndarray:
    vecs = [np.asarray(g, dtype=np.float64) for g in raw_updates]
    if not vecs:
        raise InvalidInput("need at least one client")
    d = vecs[0].shape
    if len(d) != 1 or any(v.shape != d for v in vecs):
        raise ShapeMismatch("client updates must be 1-D vectors of equal length")
    return np.stack(vecs, axis=1)


def _raw_delta(K: int, d: int) -> CommDelta:
    return CommDelta(uplink=[d] * K)


class NoCompression:
    name = "none"

    def round(self, raw_updates, t: int) -> RoundOutcome:
        G = _stack(raw_updates)
        K = G.shape[1]
        return RoundOutcome(
            ghats=[G[:, k].copy() for k in range(K)],
            delta=_raw_delta(K, G.shape[0]),
            tags=[RAW] * K,
        )


# -- AdaSVDFed ---------------------------------------------------------------


@dataclass
class AdaState:
    tag: str = UPDATE
    basis: TruncatedSvd | None = None

    def __post_init__(self):
        if self.tag not in (UPDATE, SPATIAL, PRED):
            raise InvalidInput(f"unknown AdaSVDFed state {self.tag!r}")
        if (self.tag == SPATIAL) != (self.basis is not None):
            raise InvalidInput("a basis is present exactly in the SPATIAL state")


def new_memories(K: int, d: int, h: int):
    """(client, server) memory pair per client, all zero."""
    return [(PredictorMemory(d, h), PredictorMemory(d, h)) for _ in range(K)]


def ada_round(state: AdaState, memories, raw_updates, cfg: AdaConfig, t: int):
    """Run one AdaSVDFed round.

    Parameters
    ----------
    state : AdaState
        State carried over from the previous round.
    memories : list of (PredictorMemory, PredictorMemory)
        Client-side and server-side predictor memory per client; updated in
        place.
    raw_updates : list of (d,) arrays
    cfg : AdaConfig
    t : int
        1-based round index.

    Returns
    -------
    new_state : AdaState
        State to carry into round ``t + 1``.
    outcome : RoundOutcome
    """
    G = _stack(raw_updates)
    d, K = G.shape
    if len(memories) != K:
        raise ShapeMismatch(f"{len(memories)} memory pairs for {K} clients")
    if is_update_round(t, cfg.T_u):
        state = AdaState(UPDATE)
    ghats = []
    readings = []
    info = {}

    if state.tag == UPDATE:
        delta = _raw_delta(K, d)
        ratio = measure_corr_svd(G, cfg.beta)
        r_used = ceil_fraction(cfg.beta, min(d, K))
        readings.append(CorrelationReading(t, "spatial", min(ratio, 1.0), r_used, K))
        if passes(ratio, cfg.alpha):
            basis = narrow_svd(G, cfg.alpha)
            delta.downlink_basis = d * basis.r
            new_state = AdaState(SPATIAL, basis)
            info["r"] = basis.r
        else:
            for k, (mem_c, mem_s) in enumerate(memories):
                mem_c.shift_in(G[:, k])
                mem_s.shift_in(G[:, k])
            new_state = AdaState(PRED)
        info["next"] = new_state.tag
        ghats = [G[:, k].copy() for k in range(K)]
        return new_state, RoundOutcome(ghats, delta, [UPDATE] * K, readings, info)

    if state.tag == SPATIAL:
        u_r = state.basis.u_r
        if u_r.shape[0] != d:
            raise ShapeMismatch(f"basis rows {u_r.shape[0]} != update length {d}")
        delta = CommDelta(uplink=[u_r.shape[1]] * K)
        for k in range(K):
            coeffs = subspace_project(G[:, k], u_r)
            ghats.append(subspace_reconstruct(coeffs, u_r))
        info["r"] = u_r.shape[1]
        return state, RoundOutcome(ghats, delta, [SPATIAL] * K, readings, info)

    delta = CommDelta.empty(K)
    for k, (mem_c, mem_s) in enumerate(memories):
        coeffs, residual = predictive_encode(mem_c, G[:, k], cfg.residual_fraction)
        delta.uplink[k] = coeffs.size + residual.k
        delta.index_overhead += residual.k
        ghat_client = predictor_roundtrip(mem_c, coeffs, residual)
        ghat_server = predictor_roundtrip(mem_s, coeffs, residual)
        if not np.array_equal(ghat_client, ghat_server):
            raise ProtocolViolation(f"client {k}: predictor memories diverged")
        mem_c.shift_in(ghat_client)
        mem_s.shift_in(ghat_server)
        ghats.append(ghat_server)
    return state, RoundOutcome(ghats, delta, [PRED] * K, readings, info)


class AdaSVDFed:
    name = "adasvdfed"

    def __init__(self, K: int, d: int, cfg: AdaConfig):
        self.cfg = cfg
        self.state = AdaState(UPDATE)
        self.memories = new_memories(K, d, cfg.h)

    def round(self, raw_updates, t: int) -> RoundOutcome:
        self.state, outcome = ada_round(self.state, self.memories, raw_updates, self.cfg, t)
        return outcome


class SvdFed:
    """Periodic-refresh SVDFed: raw on UPDATE rounds, fixed subspace otherwise."""

    name = "svdfed"

    def __init__(self, K: int, d: int, cfg: AdaConfig):
        self.cfg = cfg
        self.basis: TruncatedSvd | None = None

    def round(self, raw_updates, t: int) -> RoundOutcome:
        G = _stack(raw_updates)
        d, K = G.shape
        if is_update_round(t, self.cfg.T_u) or self.basis is None:
            self.basis = narrow_svd(G, self.cfg.alpha)
            delta = _raw_delta(K, d)
            delta.downlink_basis = d * self.basis.r
            return RoundOutcome(
                [G[:, k].copy() for k in range(K)], delta, [UPDATE] * K, info={"r": self.basis.r}
            )
        u_r = self.basis.u_r
        ghats = [subspace_reconstruct(subspace_project(G[:, k], u_r), u_r) for k in range(K)]
        return RoundOutcome(ghats, CommDelta(uplink=[u_r.shape[1]] * K), [SPATIAL] * K)


class PredictiveCoding:
    """Predictive coding every round, starting from empty memories."""

    name = "predictive"

    def __init__(self, K: int, d: int, cfg: AdaConfig):
        self.cfg = cfg
        self.memories = new_memories(K, d, cfg.h)

    def round(self, raw_updates, t: int) -> RoundOutcome:
        # t = 0 is never an UPDATE round for T_u >= 2, so the PRED branch runs
        _, outcome = ada_round(AdaState(PRED), self.memories, raw_updates, self.cfg, 0)
        return outcome


# -- PCAFed ------------------------------------------------------------------


@dataclass
class PcaFedClientState:
    tag: str = UPDATE
    per_slice_bases: list | None = None
    sharing_case: str | None = None

    def __post_init__(self):
        if self.tag not in (UPDATE, PCA, LOCAL_PCA):
            raise InvalidInput(f"unknown PCAFed state {self.tag!r}")
        if self.sharing_case is not None and self.sharing_case not in SHARING_CASES:
            raise InvalidInput(f"unknown sharing case {self.sharing_case!r}")


@dataclass
class StateSelection:
    """Result of the PCAFed state-selection flowchart for all clients."""

    states: list
    readings: list
    downlink_basis: int = 0
    downlink_per_client: list = field(default_factory=list)
    spatial: bool | None = None


def _slices(g, spec: ReshapeSpec) -> np.ndarray:
    """Slices of one update as rows of an (n, m) array."""
    return reshape_to_matrix(g, spec).g_mat.T


def _test(samples, cfg: PcaFedConfig, kind: str, t: int, readings: list) -> bool:
    """Threshold test; fewer than two samples counts as 'no correlation'."""
    if len(samples) < 2:
        return False
    ratio, r, count = measure_corr_pca_detail(
        np.asarray(samples), cfg.beta, strict_paper=cfg.strict_paper_pca
    )
    readings.append(CorrelationReading(t, kind, min(ratio, 1.0), r, count))
    return passes(ratio, cfg.alpha)


def pcafed_update_states(history, spec: ReshapeSpec, cfg: PcaFedConfig, t: int = 0) -> StateSelection:
    """Choose each client's next state from the server-side history.

    Parameters
    ----------
    history : list over clients of lists of (d,) arrays, newest first
        ``history[k][0]`` is client ``k``'s update of the current round; the
        window holds at most ``cfg.h`` entries.
    spec : ReshapeSpec
        Slicing of one update into an ``m x n`` matrix.
    """
    K = len(history)
    hist = [list(h)[: cfg.h] for h in history]
    slices = [[_slices(g, spec) for g in h] for h in hist]
    readings: list = []
    states = [PcaFedClientState(LOCAL_PCA) for _ in range(K)]
    sel = StateSelection(states=states, readings=readings, downlink_per_client=[0] * K)

    current = [h[0] for h in hist]
    sel.spatial = _test(current, cfg, "spatial", t, readings)

    if sel.spatial:
        pooled = [g for h in hist for g in h]
        if not _test(pooled, cfg, "temporal", t, readings):
            return sel
        all_slices = np.concatenate([s for per_client in slices for s in per_client])
        if _test(all_slices, cfg, "structural", t, readings):
            basis = narrow_pca(all_slices, cfg.alpha)
            bases = [basis] * spec.n
            sel.downlink_basis = basis.element_count
            case = FULLY_SHARED
        else:
            bases = [
                narrow_pca([s[i] for per_client in slices for s in per_client], cfg.alpha)
                for i in range(spec.n)
            ]
            sel.downlink_basis = sum(b.element_count for b in bases)
            case = PER_SLICE_SHARED
        for k in range(K):
            states[k] = PcaFedClientState(PCA, list(bases), case)
        return sel

    for k in range(K):
        if not _test(hist[k], cfg, "temporal", t, readings):
            continue
        own = np.concatenate(slices[k])
        if _test(own, cfg, "structural", t, readings):
            basis = narrow_pca(own, cfg.alpha)
            bases = [basis] * spec.n
            sel.downlink_per_client[k] = basis.element_count
            case = PER_CLIENT_SHARED
        else:
            bases = [narrow_pca([s[i] for s in slices[k]], cfg.alpha) for i in range(spec.n)]
            sel.downlink_per_client[k] = sum(b.element_count for b in bases)
            case = PER_SLICE_PER_CLIENT
        states[k] = PcaFedClientState(PCA, bases, case)
    return sel


def _pca_encode_decode(g, bases, spec: ReshapeSpec):
    gm = reshape_to_matrix(g, spec)
    cols = np.empty_like(gm.g_mat)
    coeff_count = 0
    for i, basis in enumerate(bases):
        coeffs = pca_compress(gm.g_mat[:, i], basis)
        coeff_count += coeffs.size
        cols[:, i] = pca_decompress(coeffs, basis)
    return flatten_from_matrix(matrix_from_columns(cols, gm)), coeff_count


def local_pca_round(g, spec: ReshapeSpec, cfg: PcaFedConfig):
    """One LocalPCA step for one client.

    Returns ``(ghat, uplink_elements, basis_or_None, reading_or_None)``.
    When the structural test fails the raw update is sent.
    """
    g = np.asarray(g, dtype=np.float64)
    gm = reshape_to_matrix(g, spec)
    slices = gm.g_mat.T
    try:
        ratio, r, count = measure_corr_pca_detail(slices, cfg.beta, strict_paper=cfg.strict_paper_pca)
    except InsufficientSamples:
        return g.copy(), g.size, None, None
    reading = (min(ratio, 1.0), r, count)
    if not passes(ratio, cfg.alpha):
        return g.copy(), g.size, None, reading
    basis = narrow_pca(slices, cfg.alpha)
    ghat, coeff_count = _pca_encode_decode(g, [basis] * spec.n, spec)
    # basis Q_r (m*r) and mean (m) travel with the coefficients
    return ghat, basis.element_count + coeff_count, basis, reading


def pcafed_round(states, raw_updates, spec: ReshapeSpec, cfg: PcaFedConfig, t: int, history=None):
    """One PCAFed round.

    Parameters
    ----------
    states : list of PcaFedClientState
        Current per-client states (the bases live inside them).
    history : list of deques, optional
        Server-side window of past reconstructions per client, newest first.
        It is extended with this round's reconstructions in place.

    Returns
    -------
    new_states : list of PcaFedClientState
    outcome : RoundOutcome
    """
    G = _stack(raw_updates)
    d, K = G.shape
    if len(states) != K:
        raise ShapeMismatch(f"{len(states)} states for {K} clients")
    if history is None:
        history = [deque(maxlen=cfg.h) for _ in range(K)]
    if is_update_round(t, cfg.T_u):
        states = [PcaFedClientState(UPDATE) for _ in range(K)]

    if all(s.tag == UPDATE for s in states):
        for k in range(K):
            history[k].appendleft(G[:, k].copy())
        sel = pcafed_update_states([list(h) for h in history], spec, cfg, t)
        delta = _raw_delta(K, d)
        delta.downlink_basis = sel.downlink_basis
        delta.downlink_per_client = list(sel.downlink_per_client)
        info = {
            "next": [s.tag for s in sel.states],
            "sharing_case": [s.sharing_case for s in sel.states],
            "r": [[b.r for b in s.per_slice_bases] if s.per_slice_bases else None for s in sel.states],
        }
        ghats = [G[:, k].copy() for k in range(K)]
        return sel.states, RoundOutcome(ghats, delta, [UPDATE] * K, sel.readings, info)

    delta = CommDelta.empty(K)
    ghats = []
    tags = []
    readings = []
    ranks = []
    for k, st in enumerate(states):
        g = G[:, k]
        if st.tag == PCA:
            if not st.per_slice_bases or len(st.per_slice_bases) != spec.n:
                raise ProtocolViolation(f"client {k} is in PCA state without a basis per slice")
            ghat, delta.uplink[k] = _pca_encode_decode(g, st.per_slice_bases, spec)
            tags.append(PCA)
            ranks.append([b.r for b in st.per_slice_bases])
        elif st.tag == LOCAL_PCA:
            ghat, delta.uplink[k], basis, reading = local_pca_round(g, spec, cfg)
            if reading is not None:
                readings.append(CorrelationReading(t, "structural", *reading))
            tags.append(LOCAL_PCA if basis is not None else RAW)
            ranks.append(basis.r if basis is not None else None)
        else:
            raise ProtocolViolation(f"client {k} is in {st.tag} outside an update round")
        ghats.append(ghat)
        history[k].appendleft(ghat.copy())
    info = {"r": ranks, "sharing_case": [s.sharing_case for s in states]}
    return states, RoundOutcome(ghats, delta, tags, readings, info)


class PcaFed:
    name = "pcafed"

    def __init__(self, K: int, spec: ReshapeSpec, cfg: PcaFedConfig):
        self.cfg = cfg
        self.spec = spec
        self.states = [PcaFedClientState(UPDATE) for _ in range(K)]
        self.history = [deque(maxlen=cfg.h) for _ in range(K)]

    def round(self, raw_updates, t: int) -> RoundOutcome:
        self.states, outcome = pcafed_round(
            self.states, raw_updates, self.spec, self.cfg, t, self.history
        )
        return outcome


def make_controller(scheme: str, K: int, d: int, sub: dict, spec: ReshapeSpec | None = None):
    """Build the per-layer controller named by ``scheme``."""
    if scheme == "none":
        return NoCompression()
    if scheme in ("adasvdfed", "svdfed", "predictive"):
        cfg = AdaConfig(**{k: v for k, v in sub.items() if k in AdaConfig.__dataclass_fields__})
        cls = {"adasvdfed": AdaSVDFed, "svdfed": SvdFed, "predictive": PredictiveCoding}[scheme]
        return cls(K, d, cfg)
    if scheme == "pcafed":
        cfg = PcaFedConfig(**{k: v for k, v in sub.items() if k in PcaFedConfig.__dataclass_fields__})
        return PcaFed(K, spec if spec is not None else flat_spec(d), cfg)
    raise InvalidInput(f"unknown scheme {scheme!r}")


__all__ = [
    "AdaConfig",
    "AdaSVDFed",
    "AdaState",
    "PcaFed",
    "PcaFedClientState",
    "PcaFedConfig",
    "ada_round",
    "pcafed_round",
    "pcafed_update_states",
]
