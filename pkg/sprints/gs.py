import numpy as np
from dataclasses import dataclass
from sprints.dgs import convex_update, SegmentedEmbedding
from utils.errors import ConfigError, NumericError

# Graph-Sprints baseline: static bucket embedding and scalar forgetting factors

# tuner range for the scalar coefficients
GS_RANGE = (0.1, 1.0)

@dataclass
class GsParams:
    alpha: float
    beta: float
    bucket_edges: list

    def __post_init__(self):
        for name in ('alpha', 'beta'):
            value = getattr(self, name)
            if not GS_RANGE[0] <= value <= GS_RANGE[1]:
                raise ConfigError('GS %s=%.3f outside [%.1f, %.1f]' % (name, value, *GS_RANGE))

    @property
    def state_size(self):
        return int(sum(len(edges) + 1 for edges in self.bucket_edges))

    def count(self):
        # alpha and beta are fixed by the tuner, nothing is learned
        return 0

def bucketize(features, bucket_edges):
    '''
    One-hot bucket index per feature, concatenated over features.
    Buckets are left-closed: a value equal to an edge falls in the bucket
    above it, values outside the edges clip to the extreme buckets.
        - features: (..., f)
    returns (..., sum of bucket counts) with exactly f ones
    '''
    features = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise NumericError('non-finite feature value')
    if features.shape[-1] != len(bucket_edges):
        raise ConfigError('expected %d features, got %d' % (len(bucket_edges), features.shape[-1]))

    blocks = []
    for idx, edges in enumerate(bucket_edges):
        index = np.searchsorted(edges, features[..., idx], side='right')
        blocks.append(np.eye(len(edges) + 1)[index])

    return np.concatenate(blocks, axis=-1)

# E of the static variants (dgs_v, dgs_s): the bucket one-hots
def delta_embedding(features, bucket_edges):
    return SegmentedEmbedding(bucketize(features, bucket_edges))

def gs_update(params, s_prev, s_star_prev, delta_f):
    if np.shape(s_prev) != np.shape(delta_f) or np.shape(s_star_prev) != np.shape(delta_f):
        raise ConfigError('state and bucket vector lengths differ')
    return convex_update(params.alpha, params.beta, s_prev, s_star_prev, delta_f)

def raw_features(features, stats):
    # raw edge features, z-scored with the train statistics
    return stats.standardize(features)
