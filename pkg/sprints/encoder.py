"""
Batch-level drivers for the representations.

Each encoder owns a StateStore and turns a batch of events into updated
endpoint states under the snapshot rule: states are read from a snapshot
taken at batch start, every endpoint update reads that snapshot, and the
results are committed once the batch is done.

    - DgsEncoder: dgs, dgs_sum, dgs_v, dgs_s (forward mode) and dgs_bp (reverse mode)
    - GsEncoder: Graph-Sprints static update, no learning
    - RawEncoder: no node state, the standardized edge features themselves
"""
import numpy as np
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional
from sprints import dgs
from sprints.gs import bucketize, delta_embedding, gs_update, raw_features
from sprints.store import StateStore, RtrlJacobians
from utils.errors import ConfigError

@dataclass
class BatchForward:
    inputs: Optional[np.ndarray]
    embedding: object
    s_src_prev: np.ndarray
    s_dst_prev: np.ndarray
    s_src: np.ndarray
    s_dst: np.ndarray

def interleave(a, b):
    # event-major order: src then dst of every event
    return np.stack([a, b], axis=1).reshape(2 * a.shape[0], *a.shape[1:])

class Encoder(ABC):
    store = None
    learns = False

    @property
    @abstractmethod
    def state_size(self):
        pass

    def reset(self):
        if self.store is not None:
            self.store.reset()

    def snapshot(self, nodes):
        return self.store.snapshot_batch(nodes)

    @abstractmethod
    def forward(self, batch, snap):
        pass

    def propagate(self, batch, snap, fwd, g_src=None):
        # states only, no gradients
        self.store.commit_batch(interleave(batch.src, batch.dst),
                                interleave(batch.timestamp, batch.timestamp),
                                interleave(fwd.s_src, fwd.s_dst))
        return None

    def prior_grads(self, snap, nodes, g):
        return None

    def step(self, grads, batch_size):
        pass

    def count(self):
        return 0

class DgsEncoder(Encoder):
    def __init__(self, params, stats, node_count, frozen=False, precision=64,
                 threads=1, chunk_size=32):
        self.params = params
        self.stats = stats
        self.threads = max(int(threads), 1)
        self.chunk_size = max(int(chunk_size), 1)

        # truncated backprop keeps no Jacobian tables
        self.learns = not frozen
        frozen = frozen or params.variant == 'dgs_bp'
        self.store = StateStore(node_count, params.state_size, params.rows_per_segment,
                                params.feature_dim, frozen=frozen, precision=precision)

    @property
    def state_size(self):
        return self.params.state_size

    def count(self):
        return self.params.count()

    def embed(self, features):
        if self.params.w is None:
            return None, delta_embedding(features, self.stats.bucket_edges)

        x = self.stats.standardize(features)
        return x, dgs.embed(self.params, x)

    def forward(self, batch, snap):
        x, e = self.embed(batch.features)
        s_src_prev, s_dst_prev = snap.state(batch.src), snap.state(batch.dst)

        s_src = dgs.state_update(self.params, s_src_prev, s_dst_prev, e)
        s_dst = dgs.state_update(self.params, s_dst_prev, s_src_prev, e)
        return BatchForward(x, e, s_src_prev, s_dst_prev, s_src, s_dst)

    def _chunk(self, batch, snap, fwd, g_src, lo, hi):
        part = slice(lo, hi)
        e = dgs.SegmentedEmbedding(
            fwd.embedding.values[part],
            None if fwd.embedding.seg_probs is None else fwd.embedding.seg_probs[part],
            None if fwd.embedding.logits is None else fwd.embedding.logits[part])
        x = None if fwd.inputs is None else fwd.inputs[part]

        own_src = (fwd.s_src_prev[part], snap.jacobian(batch.src[part]))
        own_dst = (fwd.s_dst_prev[part], snap.jacobian(batch.dst[part]))
        jac_src = dgs.rtrl_propagate(self.params, own_src, own_dst, e, x)
        jac_dst = dgs.rtrl_propagate(self.params, own_dst, own_src, e, x)

        grads = None
        if g_src is not None:
            grads = dgs.accumulate_param_grads(g_src[part], jac_src, self.params)

        jac = RtrlJacobians(interleave(jac_src.j_alpha, jac_dst.j_alpha),
                            interleave(jac_src.j_beta, jac_dst.j_beta),
                            interleave(jac_src.j_w, jac_dst.j_w))
        return grads, jac

    def propagate(self, batch, snap, fwd, g_src=None):
        nodes = interleave(batch.src, batch.dst)
        times = interleave(batch.timestamp, batch.timestamp)
        states = interleave(fwd.s_src, fwd.s_dst)

        if self.store.frozen:
            self.store.commit_batch(nodes, times, states)
            if g_src is not None and self.params.variant == 'dgs_bp':
                return dgs.bp_forward_backward(self.params, fwd.s_src_prev, fwd.s_dst_prev,
                                               fwd.inputs, g_src)
            return None

        # resolve duplicate nodes over the whole batch before chunking
        winner = np.zeros(len(nodes), dtype=bool)
        winner[StateStore.winners(nodes, times)] = True

        bounds = [(lo, min(lo + self.chunk_size, len(batch)))
                  for lo in range(0, len(batch), self.chunk_size)]
        run = lambda b: self._chunk(batch, snap, fwd, g_src, *b)

        total = None
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            for wave in range(0, len(bounds), self.threads):
                results = list(pool.map(run, bounds[wave:wave + self.threads]))

                # commits and gradient sums stay on this thread
                for (lo, hi), (grads, jac) in zip(bounds[wave:wave + self.threads], results):
                    keep = np.flatnonzero(winner[2 * lo:2 * hi])
                    self.store.commit_batch(nodes[2 * lo:2 * hi][keep], times[2 * lo:2 * hi][keep],
                                            states[2 * lo:2 * hi][keep], jac.take(keep))
                    if grads is not None:
                        total = grads if total is None else total + grads

        return total

    def prior_grads(self, snap, nodes, g):
        '''
        Gradients for losses read off snapshot states (link prediction)
            - nodes: (k,) ids, g: (k, s) dL/dS of their snapshot states
        '''
        if self.store.frozen:
            raise ConfigError('%s cannot learn from pre-update states' % self.params.variant)

        total = dgs.DgsGrads.zeros(self.params)
        for lo in range(0, len(nodes), self.chunk_size):
            part = slice(lo, lo + self.chunk_size)
            total = total + dgs.accumulate_param_grads(g[part], snap.jacobian(nodes[part]),
                                                       self.params)
        return total

    def step(self, grads, batch_size):
        if grads is not None:
            self.params = dgs.sgd_step(self.params, grads, batch_size)

class GsEncoder(Encoder):
    def __init__(self, params, stats, node_count, precision=64):
        self.params = params
        self.stats = stats
        self.store = StateStore(node_count, params.state_size, frozen=True,
                                precision=precision)

    @property
    def state_size(self):
        return self.params.state_size

    def forward(self, batch, snap):
        delta = bucketize(batch.features, self.params.bucket_edges)
        s_src_prev, s_dst_prev = snap.state(batch.src), snap.state(batch.dst)

        s_src = gs_update(self.params, s_src_prev, s_dst_prev, delta)
        s_dst = gs_update(self.params, s_dst_prev, s_src_prev, delta)
        return BatchForward(None, delta, s_src_prev, s_dst_prev, s_src, s_dst)

class RawEncoder(Encoder):
    def __init__(self, stats):
        self.stats = stats

    @property
    def state_size(self):
        return len(self.stats.mean)

    def snapshot(self, nodes):
        return None

    def forward(self, batch, snap):
        x = raw_features(batch.features, self.stats)
        return BatchForward(x, None, None, None, x, x)

    def propagate(self, batch, snap, fwd, g_src=None):
        return None
