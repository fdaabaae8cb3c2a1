import numpy as np
from dataclasses import dataclass
from typing import Tuple
from utils.dataset import EventStream
from utils.errors import StreamError

# Synthetic edge-event streams

@dataclass
class SynthConfig:
    n_src: int = 200
    n_dst: int = 100
    n_events: int = 20000
    feature_dim: int = 4
    decays: Tuple[float, ...] = (0.9,)
    positive_rate: float = 0.5
    noise: float = 0.1
    event_rate: float = 1.0

    def validate(self):
        if self.n_events < 1:
            raise StreamError('synthetic stream needs at least one event')
        if self.n_src < 1 or self.n_dst < 1:
            raise StreamError('synthetic stream needs source and destination nodes')
        if len(self.decays) < 1 or self.feature_dim < len(self.decays):
            raise StreamError('one feature column is needed per planted decay')
        if any(d < 0 or d >= 1 for d in self.decays):
            raise StreamError('decays must lie in [0, 1)')
        if not 0 < self.positive_rate < 1:
            raise StreamError('positive_rate must lie in (0, 1)')
        if self.noise < 0 or self.event_rate <= 0:
            raise StreamError('noise must be >= 0 and event_rate > 0')

'''
Planted-signal stream.

Every destination carries hidden attributes (one per decay), visible only
through the features of the edges that touch it. A source's label at an
event is a threshold on the sum of exponentially discounted averages of
the attributes of its past neighbors (the current edge is excluded), so
the current edge features alone hold no information about the label.
'''
def synth_stream(synth, seed):
    synth.validate()
    rng = np.random.default_rng(seed)

    n, k = synth.n_events, len(synth.decays)
    decays = np.array(synth.decays)
    attributes = rng.normal(size=(synth.n_dst, k))

    src = rng.integers(0, synth.n_src, size=n)
    dst = rng.integers(0, synth.n_dst, size=n)

    gaps = rng.exponential(1.0 / synth.event_rate, size=n)
    timestamp = np.cumsum(gaps) - gaps[0]

    features = rng.normal(scale=synth.noise, size=(n, synth.feature_dim))
    features[:, :k] += attributes[dst]

    # discounted memory per source, read before the current edge
    memory = np.zeros((synth.n_src, k))
    score = np.zeros(n)
    for idx in range(n):
        u = src[idx]
        score[idx] = memory[u].sum()
        memory[u] = decays * memory[u] + (1 - decays) * attributes[dst[idx]]

    # rank labelling, ties (e.g. empty memories) broken at random
    order = np.lexsort((rng.random(n), score))
    label = np.zeros(n, dtype=np.int64)
    label[order[n - int(round(n * synth.positive_rate)):]] = 1

    # generator self-check
    if abs(label.mean() - synth.positive_rate) > 0.02:
        raise StreamError('planted label rate %.3f misses the target %.3f' %
                          (label.mean(), synth.positive_rate))

    return EventStream(src, dst + synth.n_src, timestamp, label, features,
                       synth.n_src + synth.n_dst, synth.n_src)

'''
Structure-free stream with uniform endpoints and Gaussian features,
used for timing experiments on graphs of different sizes
'''
def random_stream(n_events, n_src, n_dst, feature_dim, seed=0):
    if n_events < 1 or n_src < 1 or n_dst < 1 or feature_dim < 1:
        raise StreamError('random stream needs positive sizes')

    rng = np.random.default_rng(seed)
    src = rng.integers(0, n_src, size=n_events)
    dst = rng.integers(0, n_dst, size=n_events) + n_src
    timestamp = np.sort(rng.uniform(0, n_events, size=n_events))
    label = rng.integers(0, 2, size=n_events)
    features = rng.normal(size=(n_events, feature_dim))

    return EventStream(src, dst, timestamp, label, features, n_src + n_dst, n_src)
