import numpy as np, pytest
from utils.dataset import EventStream, FeatureStats

def make_stream(src, dst, features, label=None, timestamp=None, source_count=None,
                node_count=None):
    '''
    EventStream from raw columns, ids already in the shared id space
    '''
    src, dst = np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)
    features = np.asarray(features, dtype=np.float64)
    n = len(src)
    if timestamp is None:
        timestamp = np.arange(n, dtype=np.float64)
    if label is None:
        label = np.zeros(n, dtype=np.int64)
    source_count = source_count or int(src.max()) + 1
    node_count = node_count or int(dst.max()) + 1

    return EventStream(src, dst, np.asarray(timestamp, dtype=np.float64),
                       np.asarray(label, dtype=np.int64), features, node_count, source_count)

def identity_stats(feature_dim, edges=None):
    # standardize() leaves features untouched
    if edges is None:
        edges = [np.array([-0.5, 0.0, 0.5])] * feature_dim
    return FeatureStats(np.zeros(feature_dim), np.ones(feature_dim), edges)

@pytest.fixture
def rng():
    return np.random.default_rng(0)
