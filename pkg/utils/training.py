import time, datetime, json, logging, os, h5py, numpy as np
from dataclasses import dataclass, field, asdict, replace
from typing import Optional
from scipy.special import expit
from tqdm import tqdm
from models.head import MlpParams, init_head, bce_loss, adam_step
from models.head import forward as head_forward, backward as head_backward
from sprints.dgs import DgsParams, VARIANTS, STATIC_VARIANTS, DEFAULT_STATE_SIZE
from sprints.dgs import init_params, validate_config
from sprints.encoder import DgsEncoder, GsEncoder, RawEncoder
from sprints.gs import GsParams
from sprints.store import StateStore
from utils.dataset import FeatureStats, NO_LABEL, DATASET_PARA
from utils.dataset import load_dataset, load_preset, append_delta_t, temporal_split, feature_stats
from utils.errors import ConfigError, StreamError, CheckpointError, MetricError, NumericError
from utils.helper import emit_record, plain
from utils.metrics import roc_auc, rank_from_scores, mrr, recall_at_k, summarize
from utils.synthetic import SynthConfig, synth_stream

TASKS = ('node_class', 'link_pred')
MODELS = VARIANTS + ('gs', 'raw')
PROTOCOLS = ('transductive', 'inductive')
CHECKPOINT_VERSION = 1

# head evaluations per chunk when ranking against every destination
RANK_CHUNK = 1 << 16

@dataclass
class TrainConfig:
    task: str = 'node_class'
    variant: str = 'dgs'
    batch_size: int = 200
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0

    # embedding recurrent component, state_size None takes the task default
    state_size: Optional[int] = None
    segments: int = 10
    temperature: float = 1.0
    lr_er: float = 0.1
    buckets: int = 10
    gs_alpha: float = 0.5
    gs_beta: float = 0.5

    # decision head, n_dense counts the output layer
    lr: float = 1e-3
    dropout: float = 0.1
    weight_decay: float = 0.0
    n_dense: int = 2
    dense_size: int = 64
    pos_weight: object = 1.0

    # link prediction
    neg_per_pos: int = 1
    inductive_mask_fraction: float = 0.1

    # compute
    threads: int = 1
    precision: int = 64
    chunk_size: int = 32

    # data
    dataset: Optional[str] = None
    data_path: Optional[str] = None
    feature_dim: Optional[int] = None
    fractions: Optional[tuple] = None
    delta_t: bool = False
    synthetic: bool = False
    synth_events: int = 20000
    synth_decays: tuple = (0.9,)
    synth_sources: int = 200
    synth_noise: float = 0.1
    synth_seed: int = 0

    @property
    def resolved_state_size(self):
        if self.state_size is None:
            return DEFAULT_STATE_SIZE[self.task]
        return int(self.state_size)

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError('unknown task %s' % self.task)
        if self.variant not in MODELS:
            raise ConfigError('unknown variant %s' % self.variant)
        if self.task == 'link_pred' and self.variant in ('raw', 'dgs_bp'):
            raise ConfigError('%s is only supported for node classification' % self.variant)

        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError('batch_size, max_epochs and patience must be positive')
        if self.n_dense < 1 or self.dense_size < 1:
            raise ConfigError('the head needs at least one layer of positive size')
        if not 0 <= self.dropout < 1:
            raise ConfigError('dropout must lie in [0, 1)')
        if self.lr <= 0 or self.lr_er <= 0 or self.weight_decay < 0:
            raise ConfigError('learning rates must be positive, weight decay non-negative')
        if self.neg_per_pos < 1:
            raise ConfigError('neg_per_pos must be >= 1')
        if not 0 <= self.inductive_mask_fraction < 1:
            raise ConfigError('inductive_mask_fraction must lie in [0, 1)')
        if self.precision not in (32, 64):
            raise ConfigError('precision must be 32 or 64')
        if self.threads < 1 or self.chunk_size < 1:
            raise ConfigError('threads and chunk_size must be positive')

        if self.variant in VARIANTS and self.variant not in STATIC_VARIANTS:
            validate_config(self.resolved_state_size, self.segments, task=self.task)
            if self.temperature < 1:
                raise ConfigError('softmax temperature must be >= 1')

        self.positive_weight(None)
        return self

    def positive_weight(self, train):
        '''
        float pos_weight, or "ratio" for negatives per positive in the train labels
        '''
        if isinstance(self.pos_weight, str) and self.pos_weight != 'ratio':
            try:
                return self._check_weight(float(self.pos_weight))
            except ValueError:
                raise ConfigError('pos_weight must be a number or "ratio"') from None
        if self.pos_weight != 'ratio':
            return self._check_weight(float(self.pos_weight))

        if train is None:
            return None
        if self.task == 'link_pred':
            return float(self.neg_per_pos)
        n_pos = int((train.label == 1).sum())
        n_neg = int((train.label == 0).sum())
        return n_neg / n_pos if n_pos > 0 else 1.0

    @staticmethod
    def _check_weight(value):
        if not value > 0:
            raise ConfigError('pos_weight must be positive')
        return value

@dataclass
class Splits:
    train: object
    val: object
    test: object
    stats: FeatureStats
    # nodes hidden from training for the inductive protocol
    masked: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def node_count(self):
        return self.train.node_count

    @property
    def destination_ids(self):
        return self.train.destination_ids

    @property
    def feature_dim(self):
        return self.train.feature_dim

    def split(self, name):
        if name not in ('train', 'val', 'test'):
            raise ConfigError('unknown split %s' % name)
        return getattr(self, name)

def load_stream(config):
    '''
    The full event stream of a run and its split fractions
    '''
    fractions = config.fractions
    if config.synthetic:
        synth = SynthConfig(n_events=config.synth_events, decays=tuple(config.synth_decays),
                            n_src=config.synth_sources, noise=config.synth_noise,
                            feature_dim=max(4, len(config.synth_decays)))
        stream = synth_stream(synth, seed=config.synth_seed)
        if config.delta_t:
            stream = append_delta_t(stream)
        default = (0.70, 0.15, 0.15)

    elif config.dataset is not None:
        stream, default = load_preset(config.dataset, config.data_path, config.delta_t)

    elif config.data_path is not None:
        if config.feature_dim is None:
            raise ConfigError('feature_dim is required with a plain data path')
        stream = load_dataset(config.data_path, config.feature_dim)
        if config.delta_t:
            stream = append_delta_t(stream)
        default = DATASET_PARA['wikipedia'][1]

    else:
        raise ConfigError('no data: set data_path, dataset or synthetic')

    return stream, tuple(fractions or default)

def mask_nodes(config, train, val, test):
    '''
    Hide a fraction of the nodes seen after training: their training
    events are dropped so the inductive protocol can score them unseen
    '''
    if config.task != 'link_pred' or config.inductive_mask_fraction == 0:
        return train, np.zeros(0, dtype=np.int64)

    later = np.unique(np.concatenate([val.src, val.dst, test.src, test.dst]))
    n_mask = int(round(config.inductive_mask_fraction * len(later)))
    rng = np.random.default_rng(config.seed)
    masked = np.sort(rng.choice(later, size=n_mask, replace=False))

    touched = np.isin(train.src, masked) | np.isin(train.dst, masked)
    return train.subset(~touched), masked

def load_splits(config):
    stream, fractions = load_stream(config)
    train, val, test = temporal_split(stream, fractions)
    train, masked = mask_nodes(config, train, val, test)

    if len(train) == 0:
        raise StreamError('no training events left after masking')

    stats = feature_stats(train, config.buckets)
    logging.info('Loaded %d events: train %d, val %d, test %d, %d nodes masked' %
                 (len(stream), len(train), len(val), len(test), len(masked)))
    return Splits(train, val, test, stats, masked)

# encoder construction
def init_encoder_params(config, stats, feature_dim):
    if config.variant == 'raw':
        return None
    if config.variant == 'gs':
        return GsParams(config.gs_alpha, config.gs_beta, stats.bucket_edges)

    state_size = config.resolved_state_size
    if config.variant in STATIC_VARIANTS:
        # the state is the concatenated bucket one-hots
        state_size = int(stats.bucket_counts.sum())

    return init_params(config.variant, state_size, config.segments, feature_dim,
                       config.temperature, config.lr_er, config.seed)

def build_encoder(config, params, stats, node_count, frozen=False):
    if config.variant == 'raw':
        return RawEncoder(stats)
    if config.variant == 'gs':
        return GsEncoder(params, stats, node_count, config.precision)

    return DgsEncoder(params, stats, node_count, frozen=frozen, precision=config.precision,
                      threads=config.threads, chunk_size=config.chunk_size)

def head_input_dim(config, params, feature_dim):
    state_size = feature_dim if params is None else params.state_size
    if config.task == 'link_pred':
        return 2 * state_size
    return state_size

@dataclass
class BatchResult:
    loss: float = 0.0
    n_terms: int = 0
    scores: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

def _averaged(grads, n_terms):
    return [(dw / n_terms, db / n_terms) for dw, db in grads]

def process_batch_node_class(encoder, head, batch, rng=None, pos_weight=1.0, learn=True):
    '''
    Update both endpoints of every event, classify the updated source state.
    Unlabeled events still update the states but carry no loss.
    returns the new head and the batch result
    '''
    snap = encoder.snapshot(np.concatenate([batch.src, batch.dst]))
    fwd = encoder.forward(batch, snap)

    labeled = batch.label != NO_LABEL
    logit, tape = head_forward(fwd.s_src, head, mode='train' if learn else 'eval', rng=rng)
    result = BatchResult(scores=logit[labeled], labels=batch.label[labeled])

    n_terms = int(labeled.sum())
    if not learn or n_terms == 0:
        encoder.propagate(batch, snap, fwd)
        return head, result

    loss, dlogit = bce_loss(logit, np.where(labeled, batch.label, 0), pos_weight)
    dlogit = np.where(labeled, dlogit, 0.0)
    result.loss, result.n_terms = float(loss[labeled].sum()), n_terms

    head_grads, g_src = head_backward(tape, dlogit, head)
    er_grads = encoder.propagate(batch, snap, fwd, g_src if encoder.learns else None)

    # one step per batch, averaged over the loss terms
    head = adam_step(head, _averaged(head_grads, n_terms))
    encoder.step(er_grads, n_terms)
    return head, result

def sample_negatives(dst, destination_ids, count, rng):
    '''
    count uniform destinations per event, never the true destination
    '''
    pool = np.asarray(destination_ids)
    if pool.size < 2:
        raise StreamError('destination pool empty')

    true_idx = np.searchsorted(pool, dst)
    draw = rng.integers(0, pool.size - 1, size=(len(dst), count))

    # skip over the true destination's slot
    draw = draw + (draw >= true_idx[:, None])
    return pool[draw]

def process_batch_link_pred(encoder, head, batch, destination_ids, rng, neg_per_pos=1,
                            pos_weight=1.0):
    '''
    Score (u, v) and (u, negative) from the snapshot states, then update
    the true endpoints. Gradients of the scores reach the ER parameters
    through the Jacobians held at snapshot time.
    '''
    size, k = len(batch), neg_per_pos
    neg = sample_negatives(batch.dst, destination_ids, k, rng)

    snap = encoder.snapshot(np.concatenate([batch.src, batch.dst, neg.ravel()]))
    s_u, s_v = snap.state(batch.src), snap.state(batch.dst)
    s_n = snap.state(neg.ravel())
    s = s_u.shape[1]

    pairs = np.concatenate([np.hstack([s_u, s_v]),
                            np.hstack([np.repeat(s_u, k, axis=0), s_n])])
    labels = np.concatenate([np.ones(size), np.zeros(size * k)])

    logit, tape = head_forward(pairs, head, mode='train', rng=rng)
    loss, dlogit = bce_loss(logit, labels, pos_weight)
    head_grads, d_pairs = head_backward(tape, dlogit, head)

    er_grads = None
    if encoder.learns:
        g_u = d_pairs[:size, :s] + d_pairs[size:, :s].reshape(size, k, s).sum(axis=1)
        g_nodes = np.concatenate([g_u, d_pairs[:size, s:], d_pairs[size:, s:]])
        nodes = np.concatenate([batch.src, batch.dst, neg.ravel()])
        er_grads = encoder.prior_grads(snap, nodes, g_nodes)

    # states move only after the classification decision
    fwd = encoder.forward(batch, snap)
    encoder.propagate(batch, snap, fwd)

    n_terms = labels.size
    head = adam_step(head, _averaged(head_grads, n_terms))
    encoder.step(er_grads, n_terms)
    return head, BatchResult(float(loss.sum()), n_terms, logit, labels)

def rank_link_batch(encoder, head, batch, destination_ids, score_mask=None):
    '''
    Ranks of the true destinations against every destination, from the
    snapshot states; the states are updated afterwards
    '''
    pool = np.asarray(destination_ids)
    snap = encoder.snapshot(np.concatenate([batch.src, batch.dst, pool]))
    s_pool = snap.state(pool)

    rows = np.arange(len(batch)) if score_mask is None else np.flatnonzero(score_mask)
    ranks = np.zeros(len(rows), dtype=np.int64)
    step = max(1, RANK_CHUNK // pool.size)
    for lo in range(0, len(rows), step):
        part = rows[lo:lo + step]
        s_u = snap.state(batch.src[part])
        pairs = np.concatenate([np.repeat(s_u[:, None, :], pool.size, axis=1),
                                np.broadcast_to(s_pool, (len(part), *s_pool.shape))], axis=-1)
        scores, _ = head_forward(pairs, head)
        ranks[lo:lo + step] = rank_from_scores(scores, np.searchsorted(pool, batch.dst[part]))

    encoder.propagate(batch, snap, encoder.forward(batch, snap))
    return ranks

def warm_up(encoder, stream, batch_size):
    # frozen replay, states only
    for batch in stream.batches(batch_size):
        snap = encoder.snapshot(np.concatenate([batch.src, batch.dst]))
        encoder.propagate(batch, snap, encoder.forward(batch, snap))

class InferenceEngine:
    """
    Frozen model: states are updated without Jacobians and
    parameters never change. infer_batch takes an EventStream slice.
    """
    frozen = True

    def __init__(self, model, warm=False):
        self.model = model
        self.warm = warm
        self.encoder = model.encoder(warm=warm)

    def reset(self):
        if self.warm:
            self.encoder = self.model.encoder(warm=True)
        else:
            self.encoder.reset()

    def infer_batch(self, batch):
        encoder, head = self.encoder, self.model.head
        snap = encoder.snapshot(np.concatenate([batch.src, batch.dst]))

        if self.model.config.task == 'link_pred':
            pairs = np.hstack([snap.state(batch.src), snap.state(batch.dst)])
            logit, _ = head_forward(pairs, head)
            encoder.propagate(batch, snap, encoder.forward(batch, snap))
        else:
            fwd = encoder.forward(batch, snap)
            logit, _ = head_forward(fwd.s_src, head)
            encoder.propagate(batch, snap, fwd)

        return expit(logit)

@dataclass
class TrainedModel:
    config: TrainConfig
    params: object
    head: MlpParams
    stats: FeatureStats
    node_count: int
    destination_ids: np.ndarray
    masked: np.ndarray
    history: list = field(default_factory=list)
    # live node states at the end of the best epoch
    store_blob: Optional[bytes] = None

    def encoder(self, warm=False):
        encoder = build_encoder(self.config, self.params, self.stats, self.node_count, frozen=True)
        if warm and self.store_blob is not None and encoder.store is not None:
            encoder.store = StateStore.from_bytes(self.store_blob,
                                                  state_size=encoder.state_size)
        return encoder

    # warm: continue the stream from the states training ended with
    def engine(self, warm=False):
        return InferenceEngine(self, warm)

    def count_parameters(self):
        return count_parameters(self)

    def best_metric(self):
        if not self.history:
            return None
        return max(row['val_metric'] for row in self.history)

    def save(self, path):
        er, head_count, total = self.count_parameters()
        with h5py.File(path, 'w') as fl:
            fl.attrs['version'] = CHECKPOINT_VERSION
            fl.attrs['config'] = json.dumps(plain(asdict(self.config)))
            fl.attrs['history'] = json.dumps(plain(self.history))
            fl.attrs['node_count'] = self.node_count
            fl.attrs['er_count'] = er
            fl.attrs['head_count'] = head_count
            fl.attrs['total_count'] = total

            fl.create_dataset('destination_ids', data=self.destination_ids)
            fl.create_dataset('masked', data=self.masked)

            stats = fl.create_group('stats')
            stats.create_dataset('mean', data=self.stats.mean)
            stats.create_dataset('stddev', data=self.stats.stddev)
            for idx, edges in enumerate(self.stats.bucket_edges):
                stats.create_dataset('edges_%d' % idx, data=edges)

            enc = fl.create_group('encoder')
            if isinstance(self.params, DgsParams):
                enc.attrs['kind'] = 'dgs'
                enc.attrs['temperature'] = self.params.temperature
                enc.attrs['segments'] = self.params.segments
                enc.attrs['learning_rate_er'] = self.params.learning_rate_er
                enc.attrs['variant'] = self.params.variant
                enc.create_dataset('alpha', data=self.params.alpha)
                enc.create_dataset('beta', data=self.params.beta)
                if self.params.w is not None:
                    enc.create_dataset('w', data=self.params.w)
            elif isinstance(self.params, GsParams):
                enc.attrs['kind'] = 'gs'
                enc.attrs['alpha'] = self.params.alpha
                enc.attrs['beta'] = self.params.beta
            else:
                enc.attrs['kind'] = 'raw'

            head = fl.create_group('head')
            head.attrs['dropout_p'] = self.head.dropout_p
            head.attrs['weight_decay'] = self.head.weight_decay
            head.attrs['learning_rate'] = self.head.learning_rate
            head.attrs['step'] = self.head.step
            head.attrs['n_layer'] = len(self.head.layers)
            for idx, ((w, b), ((mw, vw), (mb, vb))) in enumerate(zip(self.head.layers,
                                                                     self.head.moments)):
                layer = head.create_group('layer_%d' % idx)
                for name, arr in (('w', w), ('b', b), ('mw', mw), ('vw', vw),
                                  ('mb', mb), ('vb', vb)):
                    layer.create_dataset(name, data=arr)

            if self.store_blob is not None:
                fl.create_dataset('store', data=np.frombuffer(self.store_blob, dtype=np.uint8))

        return path

def load_model(path):
    if not os.path.exists(path):
        raise CheckpointError('checkpoint not found: %s' % path)

    try:
        fl = h5py.File(path, 'r')
    except OSError:
        raise CheckpointError('bad checkpoint header: %s' % path) from None

    with fl:
        try:
            version = int(fl.attrs['version'])
            if version != CHECKPOINT_VERSION:
                raise CheckpointError('checkpoint version %d, expected %d' %
                                      (version, CHECKPOINT_VERSION))

            config = TrainConfig(**json.loads(fl.attrs['config']))
            history = json.loads(fl.attrs['history'])

            stats = fl['stats']
            n_edges = len([key for key in stats.keys() if key.startswith('edges_')])
            stats = FeatureStats(stats['mean'][()], stats['stddev'][()],
                                 [stats['edges_%d' % idx][()] for idx in range(n_edges)])

            enc = fl['encoder']
            kind = enc.attrs['kind']
            if kind == 'dgs':
                params = DgsParams(enc['alpha'][()], enc['beta'][()],
                                   enc['w'][()] if 'w' in enc else None,
                                   float(enc.attrs['temperature']), int(enc.attrs['segments']),
                                   float(enc.attrs['learning_rate_er']), str(enc.attrs['variant']))
            elif kind == 'gs':
                params = GsParams(float(enc.attrs['alpha']), float(enc.attrs['beta']),
                                  stats.bucket_edges)
            else:
                params = None

            group = fl['head']
            layers, moments = [], []
            for idx in range(int(group.attrs['n_layer'])):
                layer = group['layer_%d' % idx]
                layers.append((layer['w'][()], layer['b'][()]))
                moments.append(((layer['mw'][()], layer['vw'][()]),
                                (layer['mb'][()], layer['vb'][()])))
            head = MlpParams(layers, float(group.attrs['dropout_p']),
                             float(group.attrs['weight_decay']),
                             float(group.attrs['learning_rate']), moments,
                             int(group.attrs['step']))

            blob = fl['store'][()].tobytes() if 'store' in fl else None
            return TrainedModel(config, params, head, stats, int(fl.attrs['node_count']),
                                fl['destination_ids'][()], fl['masked'][()], history, blob)

        except KeyError as err:
            raise CheckpointError('truncated checkpoint, missing %s' % err) from None

def count_parameters(model):
    '''
    (ER count, head count, total) of a trained model
    '''
    er_count = 0 if model.params is None else model.params.count()
    head_count = model.head.count()
    return er_count, head_count, er_count + head_count

def evaluate(model, splits, split='test', protocol='transductive', show_bar=False):
    '''
    Replay the splits before the target with a frozen encoder, then score it.
    Node classification reports AUC, link prediction MRR and Recall@10.
    '''
    config = model.config
    if protocol not in PROTOCOLS:
        raise ConfigError('unknown protocol %s' % protocol)
    if protocol == 'inductive' and config.task != 'link_pred':
        raise ConfigError('protocol mismatch: inductive evaluation needs link prediction')

    order = ['train', 'val', 'test']
    target = splits.split(split)
    encoder = model.encoder()
    for name in order[:order.index(split)]:
        warm_up(encoder, splits.split(name), config.batch_size)

    batches = tqdm(target.batches(config.batch_size), disable=not show_bar,
                   total=-(-len(target) // config.batch_size), leave=False)

    if config.task == 'node_class':
        scores, labels = [], []
        head = model.head
        for batch in batches:
            _, result = process_batch_node_class(encoder, head, batch, learn=False)
            scores.append(result.scores)
            labels.append(result.labels)

        scores, labels = np.concatenate(scores), np.concatenate(labels)
        return {'auc': roc_auc(scores, labels), 'n_scored': int(labels.size)}

    masked = np.asarray(model.masked)
    if protocol == 'inductive':
        touches = np.isin(target.src, masked) | np.isin(target.dst, masked)
        if masked.size == 0 or not touches.any():
            raise MetricError('empty inductive set')

    ranks = []
    for batch in batches:
        score_mask = None
        if protocol == 'inductive':
            score_mask = np.isin(batch.src, masked) | np.isin(batch.dst, masked)
        ranks.append(rank_link_batch(encoder, model.head, batch, model.destination_ids,
                                     score_mask))

    ranks = np.concatenate(ranks)
    return {'mrr': mrr(ranks), 'recall_at_10': recall_at_k(ranks, 10),
            'n_scored': int(ranks.size)}

def validation_key(config):
    return 'auc' if config.task == 'node_class' else 'mrr'

# frozen replay of the train split, None when a single class makes AUC undefined
def _train_metric(model, splits, key):
    try:
        return evaluate(model, splits, 'train')[key]
    except MetricError:
        return None

def _params_copy(encoder):
    params = getattr(encoder, 'params', None)
    if isinstance(params, DgsParams):
        return params.copy()
    return params

def frozen_states(encoder):
    if encoder.store is None:
        return None
    store = StateStore(encoder.store.node_count, encoder.store.state_size, frozen=True,
                       precision=encoder.store.precision)
    store.states[:] = encoder.store.states
    store.initialized[:] = encoder.store.initialized
    return store.to_bytes()

def init_model(config, splits):
    # untrained parameters, also used to benchmark without a checkpoint
    params = init_encoder_params(config, splits.stats, splits.feature_dim)
    head = init_head(head_input_dim(config, params, splits.feature_dim),
                     [config.dense_size] * (config.n_dense - 1), config.dropout,
                     config.weight_decay, config.lr, seed=config.seed + 1)

    return TrainedModel(config, params, head, splits.stats, splits.node_count,
                        splits.destination_ids, splits.masked)

def train(config, splits, show_bar=False, record_path=None):
    '''
    Epochs over the train split with per-epoch state reset, frozen validation
    after every epoch, early stopping on the validation metric
    '''
    config.validate()
    rng = np.random.default_rng(config.seed)

    model = init_model(config, splits)
    encoder = build_encoder(config, model.params, splits.stats, splits.node_count)
    head = model.head
    pos_weight = config.positive_weight(splits.train)

    n_batch = -(-len(splits.train) // config.batch_size)
    key = validation_key(config)
    best, best_metric, wait, history = None, -np.inf, 0, []

    for epoch in range(config.max_epochs):
        logging.info('Epoch %d/%d' % (epoch + 1, config.max_epochs))
        start_time = time.time()
        encoder.reset()

        total_loss, n_terms = 0.0, 0
        pbar = tqdm(total=n_batch, disable=(not show_bar), leave=False)
        for batch in splits.train.batches(config.batch_size):
            if config.task == 'node_class':
                head, result = process_batch_node_class(encoder, head, batch, rng, pos_weight)
            else:
                head, result = process_batch_link_pred(encoder, head, batch,
                                                       splits.destination_ids, rng,
                                                       config.neg_per_pos, pos_weight)

            if not np.isfinite(result.loss):
                raise NumericError('NaN loss at epoch %d (lr_er %.3g, lr %.3g)' %
                                   (epoch + 1, config.lr_er, config.lr))
            total_loss += result.loss
            n_terms += result.n_terms
            pbar.update(1)
        pbar.close()

        loss = total_loss / max(n_terms, 1)
        current = TrainedModel(config, _params_copy(encoder), head.copy(),
                               splits.stats, splits.node_count,
                               splits.destination_ids, splits.masked,
                               store_blob=frozen_states(encoder))
        metric = evaluate(current, splits, 'val')[key]
        train_metric = _train_metric(current, splits, key)

        logging.info('Training loss value %.4f' % loss)
        logging.info('Validation %s %.4f' % (key, metric))
        logging.info('Time elapsed: %s' %
                     str(datetime.timedelta(seconds=time.time() - start_time))[:-4])

        row = {'epoch': epoch + 1, 'loss': loss, 'train_metric': train_metric,
               'val_metric': metric, 'metric': key}
        history.append(row)
        emit_record('history', row, record_path)

        # early stopping
        if metric > best_metric:
            best, best_metric, wait = current, metric, 0
        else:
            wait += 1
            if wait >= config.patience:
                logging.info('Early stopping after %d epochs' % (epoch + 1))
                break

    best.history = history
    return best

def score_test_split(model, splits):
    if model.config.task == 'node_class':
        return {'auc': evaluate(model, splits, 'test')['auc']}

    metrics = {}
    protocols = PROTOCOLS if np.asarray(model.masked).size else PROTOCOLS[:1]
    for protocol in protocols:
        result = evaluate(model, splits, 'test', protocol)
        metrics['%s_mrr' % protocol] = result['mrr']
        metrics['%s_recall_at_10' % protocol] = result['recall_at_10']
    return metrics

def retrain_seeds(config, splits, seeds, show_bar=False, record_path=None):
    '''
    Retrain one config per seed, returning per-seed test metrics
    and their mean and std
    '''
    rows = []
    for seed in seeds:
        logging.info('Retraining with seed %d' % seed)
        model = train(replace(config, seed=int(seed)), splits, show_bar, record_path)
        rows.append({'seed': int(seed), **score_test_split(model, splits)})

    keys = [key for key in rows[0] if key != 'seed']
    summary = {key: summarize([row[key] for row in rows]) for key in keys}
    return rows, summary
