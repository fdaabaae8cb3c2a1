import os, math, json, numpy as np, pandas as pd
from dataclasses import dataclass, field, replace
from typing import Optional, List
from utils.errors import StreamError

# feature dimension and (train, val, test) fractions of the public datasets
DATASET_PARA = {'wikipedia' : (172, (0.70, 0.15, 0.15)),
                'reddit' : (172, (0.70, 0.15, 0.15)),
                'mooc' : (4, (0.60, 0.20, 0.20))}

# label value used for events without a label
NO_LABEL = -1

@dataclass
class EdgeEvent:
    src: int
    dst: int
    timestamp: float
    features: np.ndarray
    label: Optional[int] = None

@dataclass
class FeatureStats:
    mean: np.ndarray
    stddev: np.ndarray
    bucket_edges: List[np.ndarray]

    @property
    def bucket_counts(self):
        return np.array([len(edges) + 1 for edges in self.bucket_edges])

    def standardize(self, x):
        # constant features map to zero
        scale = np.where(self.stddev > 0, self.stddev, 1.0)
        return np.where(self.stddev > 0, (x - self.mean) / scale, 0.0)

    def records(self):
        return [{'feature': idx, 'mean': float(self.mean[idx]),
                 'stddev': float(self.stddev[idx]),
                 'edges': [float(e) for e in self.bucket_edges[idx]]}
                for idx in range(len(self.mean))]

@dataclass
class EventStream:
    """
    Time-ordered edge events stored column-wise

        - src, dst: (N,) node ids, destinations already offset by source_count
        - timestamp: (N,) seconds since stream origin
        - label: (N,) 0/1, NO_LABEL when missing
        - features: (N, f)
    """
    src: np.ndarray
    dst: np.ndarray
    timestamp: np.ndarray
    label: np.ndarray
    features: np.ndarray
    node_count: int
    source_count: int
    destination_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.destination_ids is None:
            self.destination_ids = np.arange(self.source_count, self.node_count)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def __len__(self):
        return self.src.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return self.event(int(idx))

        return replace(self, src=self.src[idx], dst=self.dst[idx],
                       timestamp=self.timestamp[idx], label=self.label[idx],
                       features=self.features[idx])

    def event(self, idx):
        label = int(self.label[idx])
        return EdgeEvent(int(self.src[idx]), int(self.dst[idx]),
                         float(self.timestamp[idx]), self.features[idx].copy(),
                         None if label == NO_LABEL else label)

    def subset(self, mask):
        return self[np.asarray(mask)]

    def batches(self, batch_size):
        for start in range(0, len(self), batch_size):
            yield self[start:start + batch_size]

# parse one csv row: src, dst, timestamp, label, features...
def parse_event_csv(line, feature_dim, line_no=1):
    fields = line.strip().split(',')
    if len(fields) != 4 + feature_dim:
        raise StreamError('line %d: expected %d fields, got %d' %
                          (line_no, 4 + feature_dim, len(fields)))

    try:
        src = _node_id(fields[0])
        dst = _node_id(fields[1])
        timestamp = float(fields[2])
        label = None if fields[3].strip() == '' else float(fields[3])
        features = np.array([float(v) for v in fields[4:]], dtype=np.float64)
    except ValueError as err:
        raise StreamError('line %d: malformed number (%s)' % (line_no, err)) from None

    if not math.isfinite(timestamp) or timestamp < 0:
        raise StreamError('line %d: timestamp must be finite and >= 0' % line_no)
    if label is not None:
        if label not in (0.0, 1.0):
            raise StreamError('line %d: label must be 0 or 1' % line_no)
        label = int(label)
    if not np.all(np.isfinite(features)):
        raise StreamError('line %d: non-finite feature value' % line_no)

    return EdgeEvent(src, dst, timestamp, features, label)

def _node_id(text):
    value = float(text)
    if value < 0 or value != int(value):
        raise ValueError('invalid node id %r' % text)
    return int(value)

def format_event_csv(event):
    label = '' if event.label is None else str(event.label)
    values = [str(event.src), str(event.dst), repr(float(event.timestamp)), label]
    values += [repr(float(v)) for v in event.features]
    return ','.join(values)

# find a dataset file, falling back to $DGS_DATA_DIR
def resolve_path(path):
    if os.path.exists(path) or os.path.isabs(path):
        return path

    data_dir = os.environ.get('DGS_DATA_DIR')
    if data_dir is not None:
        candidate = os.path.join(data_dir, path)
        if os.path.exists(candidate):
            return candidate

        # presets may be named without the extension
        if os.path.exists(candidate + '.csv'):
            return candidate + '.csv'

    return path

def load_dataset(path, feature_dim):
    '''
    Read an edge-event csv into a time-sorted EventStream.
    Destination ids are offset by the number of source nodes
    so that both sides of the bipartite graph share one id space.
    '''
    if feature_dim < 1:
        raise StreamError('feature_dim must be >= 1')

    path = resolve_path(path)
    try:
        with open(path, 'r') as fl:
            lines = fl.readlines()
    except OSError as err:
        raise StreamError('cannot read %s: %s' % (path, err)) from None

    events = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue

        # skip a one-line header
        if line_no == 1 and not _is_number(line.split(',')[0]):
            continue

        events.append(parse_event_csv(line, feature_dim, line_no))

    if len(events) == 0:
        raise StreamError('empty stream')

    return from_events(events)

def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True

def from_events(events):
    src = np.array([e.src for e in events], dtype=np.int64)
    dst = np.array([e.dst for e in events], dtype=np.int64)
    timestamp = np.array([e.timestamp for e in events], dtype=np.float64)
    label = np.array([NO_LABEL if e.label is None else e.label for e in events],
                     dtype=np.int64)
    features = np.stack([e.features for e in events]).astype(np.float64)

    # stable sort keeps file order for equal timestamps
    order = np.argsort(timestamp, kind='stable')
    source_count = int(src.max()) + 1
    node_count = source_count + int(dst.max()) + 1

    return EventStream(src[order], dst[order] + source_count, timestamp[order],
                       label[order], features[order], node_count, source_count)

def write_stream_csv(stream, path):
    # destinations are written back in their own id space
    columns = {'src': stream.src, 'dst': stream.dst - stream.source_count,
               'timestamp': stream.timestamp,
               'label': pd.array(np.where(stream.label == NO_LABEL, None, stream.label),
                                 dtype='Int64')}
    for idx in range(stream.feature_dim):
        columns['f%d' % idx] = stream.features[:, idx]

    pd.DataFrame(columns).to_csv(path, index=False, float_format='%.17g')

def write_stats(stats, path):
    with open(path, 'w') as fl:
        for record in stats.records():
            fl.write(json.dumps(record) + '\n')

def temporal_split(stream, fractions):
    fractions = tuple(float(v) for v in fractions)
    if len(fractions) != 3 or any(v <= 0 or v >= 1 for v in fractions):
        raise StreamError('split fractions must each lie in (0, 1)')
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise StreamError('split fractions must sum to 1')

    n = len(stream)
    if n < 3:
        raise StreamError('stream too short to split (%d events)' % n)

    # floor for train and val, remainder to test
    n_train = int(math.floor(fractions[0] * n + 1e-9))
    n_val = int(math.floor(fractions[1] * n + 1e-9))

    return (stream[:n_train], stream[n_train:n_train + n_val],
            stream[n_train + n_val:])

def feature_stats(train, buckets_per_feature=10):
    if len(train) == 0:
        raise StreamError('feature statistics need a non-empty train split')
    if buckets_per_feature < 2:
        raise StreamError('buckets_per_feature must be >= 2')

    values = train.features
    levels = np.arange(1, buckets_per_feature) / buckets_per_feature

    # duplicated quantiles collapse into fewer buckets
    edges = [np.unique(np.quantile(values[:, idx], levels))
             for idx in range(values.shape[1])]

    return FeatureStats(values.mean(axis=0), values.std(axis=0), edges)

def append_delta_t(stream):
    '''
    Append log(1 + seconds since the source node's previous event)
    as an extra feature column (0 for a node's first event)
    '''
    order = np.argsort(stream.src, kind='stable')
    times = stream.timestamp[order]
    same = stream.src[order][1:] == stream.src[order][:-1]

    delta = np.zeros(len(stream))
    delta[order[1:]] = np.where(same, np.diff(times), 0.0)

    features = np.hstack([stream.features, np.log1p(delta)[:, None]])
    return replace(stream, features=features)

def load_preset(name, data_path=None, delta_t=False):
    '''
    Load one of the public datasets by name, returning
    the stream together with its split fractions
    '''
    if name not in DATASET_PARA:
        raise StreamError('unknown dataset %s' % name)

    feature_dim, fractions = DATASET_PARA[name]
    stream = load_dataset(data_path or name + '.csv', feature_dim)
    if delta_t:
        stream = append_delta_t(stream)

    return stream, fractions
