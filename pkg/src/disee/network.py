"""Single-event networks: storage, file I/O, relabeling and link-prediction splits.

A single-event network is bipartite and directed.  *Targets* are cited
papers and *sources* are citing papers; a paper that plays both roles is
stored twice.  Every (target, source) dyad carries at most one event and the
event happens at the source's publication time.

Times are kept in user units (e.g. fractional years) with the origin shifted
so that the earliest publication sits at 0.  ``origin`` remembers the shift.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree

from .errors import (
    CausalityViolation,
    DuplicateEvent,
    InsufficientRemovableEdges,
    NetworkError,
    NotEnoughNegatives,
    ParseError,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SingleEventNetwork",
    "SplitResult",
    "DyadPool",
    "load_network",
    "save_network",
    "relabel_by_time",
    "train_test_split",
    "sample_negatives",
    "save_split",
    "load_split",
]


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SingleEventNetwork:
    """Immutable bipartite single-event network.

    Events are stored as parallel arrays ``event_targets``, ``event_sources``
    and ``event_times`` indexing into the target and source node lists.
    The constructor validates every invariant except the time ordering of
    targets; use :func:`relabel_by_time` to obtain that (all loaders do).
    """

    target_ids: tuple
    target_times: np.ndarray
    source_ids: tuple
    source_times: np.ndarray
    event_targets: np.ndarray
    event_sources: np.ndarray
    event_times: np.ndarray
    horizon: float
    origin: float = 0.0
    _dyads: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "target_ids", tuple(str(x) for x in self.target_ids))
        set_(self, "source_ids", tuple(str(x) for x in self.source_ids))
        set_(self, "target_times", _frozen(self.target_times, np.float64))
        set_(self, "source_times", _frozen(self.source_times, np.float64))
        set_(self, "event_targets", _frozen(self.event_targets, np.int64))
        set_(self, "event_sources", _frozen(self.event_sources, np.int64))
        set_(self, "event_times", _frozen(self.event_times, np.float64))
        set_(self, "horizon", float(self.horizon))
        set_(self, "origin", float(self.origin))
        self._validate()
        set_(self, "_dyads", frozenset(zip(self.event_targets.tolist(), self.event_sources.tolist())))

    def _validate(self):
        nt, ns = len(self.target_ids), len(self.source_ids)
        if self.target_times.shape != (nt,) or self.source_times.shape != (ns,):
            raise NetworkError("node id and time arrays differ in length")
        m = len(self.event_targets)
        if self.event_sources.shape != (m,) or self.event_times.shape != (m,):
            raise NetworkError("event arrays differ in length")
        if len(set(self.target_ids)) != nt or len(set(self.source_ids)) != ns:
            raise NetworkError("node ids must be unique within a role")
        T = self.horizon
        for name, arr in (("target", self.target_times), ("source", self.source_times),
                          ("event", self.event_times)):
            if not np.all(np.isfinite(arr)):
                raise NetworkError(f"non-finite {name} time")
            if arr.size and (arr.min() < 0 or arr.max() > T):
                raise NetworkError(f"{name} time outside [0, {T}]")
        if m == 0:
            return
        if self.event_targets.min() < 0 or self.event_targets.max() >= nt:
            raise NetworkError("event target index out of range")
        if self.event_sources.min() < 0 or self.event_sources.max() >= ns:
            raise NetworkError("event source index out of range")
        key = self.event_targets * ns + self.event_sources
        uniq, counts = np.unique(key, return_counts=True)
        if np.any(counts > 1):
            k = uniq[counts > 1][0]
            raise DuplicateEvent(
                f"duplicate event for dyad ({self.target_ids[k // ns]}, {self.source_ids[k % ns]})")
        early = self.event_times < self.target_times[self.event_targets]
        if np.any(early):
            e = int(np.flatnonzero(early)[0])
            raise CausalityViolation(
                f"event at {self.event_times[e]} precedes publication of target "
                f"{self.target_ids[self.event_targets[e]]} at {self.target_times[self.event_targets[e]]}")
        mismatch = self.event_times != self.source_times[self.event_sources]
        if np.any(mismatch):
            e = int(np.flatnonzero(mismatch)[0])
            raise CausalityViolation(
                f"event time {self.event_times[e]} differs from publication time of source "
                f"{self.source_ids[self.event_sources[e]]}")

    @property
    def n_targets(self):
        return len(self.target_ids)

    @property
    def n_sources(self):
        return len(self.source_ids)

    @property
    def n_events(self):
        return len(self.event_targets)

    @property
    def is_time_ordered(self):
        return bool(np.all(np.diff(self.target_times) >= 0))

    @property
    def elapsed(self):
        """Citation age of every event, ``t_event - t_target``."""
        return self.event_times - self.target_times[self.event_targets]

    def in_degree(self):
        return np.bincount(self.event_targets, minlength=self.n_targets)

    def out_degree(self):
        return np.bincount(self.event_sources, minlength=self.n_sources)

    def has_event(self, i, j):
        return (int(i), int(j)) in self._dyads

    def admissible(self, i, j):
        """Whether dyad(s) belong to the modelled universe.

        A dyad is modelled when the source appears strictly after the
        target, or when it carries an event (a citation at the target's
        publication instant).
        """
        i = np.asarray(i)
        j = np.asarray(j)
        ok = self.source_times[j] > self.target_times[i]
        if np.all(ok):
            return ok
        ev = np.array([(a, b) in self._dyads for a, b in zip(i.ravel().tolist(), j.ravel().tolist())])
        return ok | ev.reshape(ok.shape)

    def subnetwork(self, keep):
        """Same nodes and horizon, only the events selected by ``keep``."""
        keep = np.asarray(keep)
        return SingleEventNetwork(
            self.target_ids, self.target_times, self.source_ids, self.source_times,
            self.event_targets[keep], self.event_sources[keep], self.event_times[keep],
            horizon=self.horizon, origin=self.origin)

    def __eq__(self, other):
        if not isinstance(other, SingleEventNetwork):
            return NotImplemented
        return (self.target_ids == other.target_ids and self.source_ids == other.source_ids
                and self.horizon == other.horizon and self.origin == other.origin
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in (
                    "target_times", "source_times", "event_targets", "event_sources", "event_times")))

    __hash__ = None

    def __repr__(self):
        return (f"SingleEventNetwork(targets={self.n_targets}, sources={self.n_sources}, "
                f"events={self.n_events}, horizon={self.horizon:g})")

    @classmethod
    def from_records(cls, events, target_times=None, source_times=None, horizon=None):
        """Build a validated, time-ordered network from ``(source, target, time)`` rows.

        ``target_times``/``source_times`` map node ids to publication times.
        Missing target times default to the earliest incoming event; missing
        source times to the source's event time.  Times are shifted so the
        earliest publication is 0.
        """
        target_times = dict(target_times or {})
        source_times = dict(source_times or {})
        t_index, s_index = {}, {}
        for tid in target_times:
            t_index.setdefault(tid, len(t_index))
        for sid in source_times:
            s_index.setdefault(sid, len(s_index))
        first_in = {}
        ev_t, ev_s, ev_time = [], [], []
        for src, tgt, t in events:
            src, tgt, t = str(src), str(tgt), float(t)
            ev_t.append(t_index.setdefault(tgt, len(t_index)))
            ev_s.append(s_index.setdefault(src, len(s_index)))
            ev_time.append(t)
            first_in[tgt] = min(first_in.get(tgt, t), t)
            known = source_times.get(src)
            if known is None:
                source_times[src] = t
            elif known != t:
                raise CausalityViolation(
                    f"source {src} has event time {t} but publication time {known}")
        tids = sorted(t_index, key=t_index.get)
        sids = sorted(s_index, key=s_index.get)
        tt = np.array([target_times.get(x, first_in.get(x, np.nan)) for x in tids], dtype=float)
        st = np.array([source_times[x] for x in sids], dtype=float)
        et = np.array(ev_time, dtype=float)
        allt = np.concatenate([tt, st, et])
        if allt.size == 0:
            raise NetworkError("network has no nodes")
        if not np.all(np.isfinite(allt)):
            raise NetworkError("non-finite publication time")
        shift = allt.min()
        tt, st, et = tt - shift, st - shift, et - shift
        if horizon is None:
            T = float(allt.max() - shift)
        else:
            T = float(horizon) - shift
        net = cls(tids, tt, sids, st, ev_t, ev_s, et, horizon=T, origin=shift)
        return relabel_by_time(net)


def relabel_by_time(network, return_permutation=False):
    """Reorder targets by publication time (stable) and sort events canonically.

    The returned permutation lists old target indices in their new order.
    Idempotent.
    """
    perm = np.argsort(network.target_times, kind="stable")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    et = inv[network.event_targets]
    es = network.event_sources
    order = np.lexsort((es, et))
    out = SingleEventNetwork(
        [network.target_ids[k] for k in perm], network.target_times[perm],
        network.source_ids, network.source_times,
        et[order], es[order], network.event_times[order],
        horizon=network.horizon, origin=network.origin)
    if return_permutation:
        return out, perm
    return out


def _rows(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if line.lstrip().startswith("#"):
                yield lineno, None, line.lstrip()[1:].strip()
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            yield lineno, [p.strip() for p in parts], None


def _meta(comment, meta):
    key, sep, value = comment.partition(":")
    if sep and key.strip() in ("horizon", "origin"):
        try:
            meta[key.strip()] = float(value)
        except ValueError:
            pass


def load_network(path, nodes_path=None, horizon=None):
    """Read an edge list (``source_id<TAB>target_id<TAB>time``) and optional node file.

    The node file has rows ``node_id<TAB>pub_time<TAB>role`` with role
    ``target`` or ``source``.  ``# horizon: T`` and ``# origin: x`` comment
    headers written by :func:`save_network` are honoured; an explicit
    ``horizon`` argument (user time units) overrides them.
    """
    meta = {}
    events = []
    for lineno, parts, comment in _rows(path):
        if parts is None:
            _meta(comment, meta)
            continue
        if len(parts) != 3:
            raise ParseError(f"expected 3 columns, got {len(parts)}", line=lineno)
        try:
            t = float(parts[2])
        except ValueError:
            raise ParseError(f"bad time {parts[2]!r}", line=lineno) from None
        if not np.isfinite(t):
            raise ParseError(f"non-finite time {parts[2]!r}", line=lineno)
        events.append((parts[0], parts[1], t))

    target_times, source_times = {}, {}
    if nodes_path is not None:
        for lineno, parts, comment in _rows(nodes_path):
            if parts is None:
                _meta(comment, meta)
                continue
            if len(parts) != 3 or parts[2] not in ("target", "source"):
                raise ParseError("expected node_id, pub_time, role in {target, source}", line=lineno)
            try:
                t = float(parts[1])
            except ValueError:
                raise ParseError(f"bad time {parts[1]!r}", line=lineno) from None
            (target_times if parts[2] == "target" else source_times)[parts[0]] = t

    origin = meta.get("origin", 0.0)
    if horizon is not None:
        horizon = float(horizon) - origin
    elif "horizon" in meta:
        horizon = meta["horizon"]
    net = SingleEventNetwork.from_records(events, target_times, source_times, horizon=horizon)
    if origin:
        net = SingleEventNetwork(
            net.target_ids, net.target_times, net.source_ids, net.source_times,
            net.event_targets, net.event_sources, net.event_times,
            horizon=net.horizon, origin=net.origin + origin)
    return net


def save_network(network, path, nodes_path=None):
    """Write the edge list (and node file) so that :func:`load_network` round-trips exactly."""
    header = f"# horizon: {network.horizon!r}\n# origin: {network.origin!r}\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header)
        fh.write("# source_id\ttarget_id\ttime\n")
        for i, j, t in zip(network.event_targets.tolist(), network.event_sources.tolist(),
                           network.event_times.tolist()):
            fh.write(f"{network.source_ids[j]}\t{network.target_ids[i]}\t{t!r}\n")
    if nodes_path is not None:
        with open(nodes_path, "w", encoding="utf-8") as fh:
            fh.write(header)
            fh.write("# node_id\tpub_time\trole\n")
            for nid, t in zip(network.target_ids, network.target_times.tolist()):
                fh.write(f"{nid}\t{t!r}\ttarget\n")
            for nid, t in zip(network.source_ids, network.source_times.tolist()):
                fh.write(f"{nid}\t{t!r}\tsource\n")


class DyadPool:
    """Admissible non-link dyads of a network, grouped by target.

    For target ``i`` the population is every source published strictly after
    ``t_i`` minus event dyads and the ``exclude`` dyads.  Members are
    addressed by a per-target rank in ``[0, sizes[i])`` so that uniform
    sampling never materialises the full dyad matrix.
    """

    def __init__(self, network, exclude=None):
        nt, ns = network.n_targets, network.n_sources
        self.n_targets, self.n_sources = nt, ns
        self._order = np.argsort(network.source_times, kind="stable")
        rank = np.empty(ns, dtype=np.int64)
        rank[self._order] = np.arange(ns)
        sorted_times = network.source_times[self._order]
        self._start = np.searchsorted(sorted_times, network.target_times, side="right").astype(np.int64)

        ti = [network.event_targets]
        sj = [network.event_sources]
        if exclude is not None and len(exclude):
            exclude = np.asarray(exclude, dtype=np.int64).reshape(-1, 2)
            ti.append(exclude[:, 0])
            sj.append(exclude[:, 1])
        ti = np.concatenate(ti)
        pos = rank[np.concatenate(sj)]
        inside = pos >= self._start[ti]
        key = np.unique(ti[inside] * ns + pos[inside])
        fi, fp = key // ns, key % ns
        nforb = np.bincount(fi, minlength=nt)
        self._ptr = np.concatenate([[0], np.cumsum(nforb)])
        within = np.arange(len(key)) - self._ptr[fi]
        # rank r maps to offset r + #{forbidden offsets f_k : f_k - k <= r}
        self._gap_key = fi * (ns + 1) + (fp - self._start[fi] - within)
        self.sizes = (ns - self._start) - nforb

    @property
    def total(self):
        return int(self.sizes.sum())

    def locate(self, targets, ranks):
        """Source indices of the dyads at per-target ``ranks``."""
        targets = np.asarray(targets, dtype=np.int64)
        ranks = np.asarray(ranks, dtype=np.int64)
        probe = targets * (self.n_sources + 1) + ranks
        skipped = np.searchsorted(self._gap_key, probe, side="right") - self._ptr[targets]
        return self._order[self._start[targets] + ranks + skipped]

    def members(self, i):
        return self.locate(np.full(self.sizes[i], i), np.arange(self.sizes[i]))

    def sample(self, counts, rng):
        """Draw ``counts[i]`` distinct dyads for each target ``i``.

        Returns ``(targets, sources)``; targets are non-decreasing.
        """
        counts = np.minimum(np.asarray(counts, dtype=np.int64), self.sizes)
        ranks = np.empty(int(counts.sum()), dtype=np.int64)
        pos = 0
        for i in np.flatnonzero(counts):
            n, N = counts[i], self.sizes[i]
            ranks[pos:pos + n] = np.arange(N) if n == N else rng.choice(N, size=n, replace=False)
            pos += n
        targets = np.repeat(np.arange(self.n_targets), counts)
        return targets, self.locate(targets, ranks)

    def sample_uniform(self, count, rng):
        """Draw ``count`` distinct dyads uniformly from the whole pool."""
        total = self.total
        if count > total:
            raise NotEnoughNegatives(f"requested {count} negatives, only {total} admissible non-links")
        flat = np.sort(rng.choice(total, size=count, replace=False))
        bounds = np.cumsum(self.sizes)
        targets = np.searchsorted(bounds, flat, side="right")
        ranks = flat - (bounds[targets] - self.sizes[targets])
        return targets, self.locate(targets, ranks)


def sample_negatives(network, count, exclude=None, seed=0):
    """Uniform sample of ``count`` admissible non-link dyads, as an ``(count, 2)`` array."""
    pool = DyadPool(network, exclude=exclude)
    ti, sj = pool.sample_uniform(int(count), np.random.default_rng(seed))
    return np.column_stack([ti, sj]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class SplitResult:
    train_network: SingleEventNetwork
    test_positives: np.ndarray  # (k, 2) target, source
    test_positive_times: np.ndarray
    test_negatives: np.ndarray  # (k, 2)
    seed: int
    fraction: float

    @property
    def held_out(self):
        """All test dyads; kept out of training likelihood terms."""
        return np.concatenate([self.test_positives, self.test_negatives]).astype(np.int64)

    def dyads_and_labels(self):
        dyads = self.held_out
        labels = np.r_[np.ones(len(self.test_positives)), np.zeros(len(self.test_negatives))]
        return dyads, labels


def _undirected_components(network, event_mask=None):
    nt = network.n_targets
    n = nt + network.n_sources
    ti, sj = network.event_targets, network.event_sources
    if event_mask is not None:
        ti, sj = ti[event_mask], sj[event_mask]
    g = coo_matrix((np.ones(len(ti)), (ti, nt + sj)), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    active = np.zeros(n, dtype=bool)
    active[ti] = True
    active[nt + sj] = True
    return len(np.unique(labels[active])) if active.any() else 0


def train_test_split(network, fraction=0.2, seed=0):
    """Hold out ``fraction`` of the events without disconnecting the residual network.

    A random spanning forest of the undirected projection is protected; the
    test positives are drawn uniformly from the remaining edges.  An equal
    number of admissible non-links are drawn as test negatives.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    m = network.n_events
    k = int(np.floor(fraction * m + 0.5))
    rng = np.random.default_rng(seed)
    nt = network.n_targets
    n = nt + network.n_sources
    ti, sj = network.event_targets, network.event_sources
    weights = rng.uniform(1.0, 2.0, size=m)
    g = coo_matrix((weights, (ti, nt + sj)), shape=(n, n)).tocsr()
    forest = minimum_spanning_tree(g).tocoo()
    a = np.minimum(forest.row, forest.col).astype(np.int64)
    b = np.maximum(forest.row, forest.col).astype(np.int64)
    in_forest = np.isin(ti * n + (nt + sj), a * n + b)
    removable = np.flatnonzero(~in_forest)
    if len(removable) < k:
        raise InsufficientRemovableEdges(
            f"need {k} removable edges, only {len(removable)} are outside the spanning forest")
    pos = np.sort(rng.choice(removable, size=k, replace=False))
    keep = np.ones(m, dtype=bool)
    keep[pos] = False
    positives = np.column_stack([ti[pos], sj[pos]]).astype(np.int64)
    negatives = sample_negatives(network, k, seed=int(rng.integers(2**63 - 1)))
    return SplitResult(network.subnetwork(keep), positives, network.event_times[pos].copy(),
                       negatives, int(seed), float(fraction))


def save_split(split, path):
    """Write the split manifest as JSON (dyads as node-id pairs)."""
    net = split.train_network
    doc = {
        "seed": split.seed,
        "fraction": split.fraction,
        "positives": [[net.target_ids[i], net.source_ids[j], t] for (i, j), t in
                      zip(split.test_positives.tolist(), split.test_positive_times.tolist())],
        "negatives": [[net.target_ids[i], net.source_ids[j]] for i, j in split.test_negatives.tolist()],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_split(path, network):
    """Rebuild a :class:`SplitResult` from a manifest and the full network."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    t_index = {x: k for k, x in enumerate(network.target_ids)}
    s_index = {x: k for k, x in enumerate(network.source_ids)}
    try:
        pos = np.array([[t_index[a], s_index[b]] for a, b, _ in doc["positives"]], dtype=np.int64).reshape(-1, 2)
        neg = np.array([[t_index[a], s_index[b]] for a, b in doc["negatives"]], dtype=np.int64).reshape(-1, 2)
    except KeyError as exc:
        raise NetworkError(f"split manifest references unknown node {exc}") from None
    key = network.event_targets * network.n_sources + network.event_sources
    drop = np.isin(key, pos[:, 0] * network.n_sources + pos[:, 1])
    if drop.sum() != len(pos):
        raise NetworkError("split positives are not all events of the network")
    times = network.source_times[pos[:, 1]].copy()
    return SplitResult(network.subnetwork(~drop), pos, times, neg, int(doc["seed"]), float(doc["fraction"]))
