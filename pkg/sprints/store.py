import numpy as np
from dataclasses import dataclass
from typing import Optional
from utils.errors import ConfigError, CheckpointError, NumericError

# checkpoint header, see docs/checkpoint.md
MAGIC = b'DGS1'
HEADER_INTS = 6

@dataclass
class RtrlJacobians:
    """
    Sensitivities of node states to the global parameters,
    with any number of leading (node / event) axes

        - j_alpha: (..., s) dS_i / d alpha_i
        - j_beta: (..., s) dS_i / d beta_i
        - j_w: (..., s, h, f) dS_i / dW[row r of i's segment, c]
    """
    j_alpha: np.ndarray
    j_beta: np.ndarray
    j_w: np.ndarray

    @staticmethod
    def zeros(state_size, rows, feature_dim, lead=(), dtype=np.float64):
        return RtrlJacobians(np.zeros((*lead, state_size), dtype=dtype),
                             np.zeros((*lead, state_size), dtype=dtype),
                             np.zeros((*lead, state_size, rows, feature_dim), dtype=dtype))

    def take(self, idx):
        return RtrlJacobians(self.j_alpha[idx], self.j_beta[idx], self.j_w[idx])

    def copy(self):
        return RtrlJacobians(self.j_alpha.copy(), self.j_beta.copy(), self.j_w.copy())

    def is_finite(self):
        return bool(np.all(np.isfinite(self.j_alpha)) and np.all(np.isfinite(self.j_beta))
                    and np.all(np.isfinite(self.j_w)))

@dataclass
class BatchSnapshot:
    """
    Frozen copies of the states (and Jacobians) of the nodes touched by one batch.
    Every occurrence of a node inside the batch reads the same entry.
    """
    nodes: np.ndarray
    states: np.ndarray
    jacobians: Optional[RtrlJacobians]

    def __len__(self):
        return self.nodes.shape[0]

    def __contains__(self, node):
        pos = np.searchsorted(self.nodes, node)
        return pos < len(self.nodes) and self.nodes[pos] == node

    def positions(self, node_ids):
        return np.searchsorted(self.nodes, node_ids)

    def state(self, node_ids):
        return self.states[self.positions(node_ids)]

    def jacobian(self, node_ids):
        return self.jacobians.take(self.positions(node_ids))

class StateStore:
    """
    Per-node states and RTRL Jacobian tables.

    Arrays are allocated densely for all nodes; entries of unseen nodes stay
    zero which is also their initial value. A frozen store keeps states only.
    """
    def __init__(self, node_count, state_size, rows=0, feature_dim=0,
                 frozen=False, precision=64):
        if precision not in (32, 64):
            raise ConfigError('precision must be 32 or 64')

        self.node_count = int(node_count)
        self.state_size = int(state_size)
        self.rows = int(rows)
        self.feature_dim = int(feature_dim)
        self.precision = precision
        self.dtype = np.float64 if precision == 64 else np.float32

        self.states = np.zeros((self.node_count, self.state_size), dtype=self.dtype)
        self.initialized = np.zeros(self.node_count, dtype=bool)
        self.jacobians = None
        if not frozen:
            self.jacobians = RtrlJacobians.zeros(self.state_size, self.rows, self.feature_dim,
                                                 lead=(self.node_count,), dtype=self.dtype)

    @property
    def frozen(self):
        return self.jacobians is None

    def freeze(self):
        # inference-only deployments need no Jacobians
        self.jacobians = None
        return self

    def reset(self):
        self.states[:] = 0.0
        self.initialized[:] = False
        if self.jacobians is not None:
            self.jacobians.j_alpha[:] = 0.0
            self.jacobians.j_beta[:] = 0.0
            self.jacobians.j_w[:] = 0.0

    def _check_ids(self, nodes):
        nodes = np.asarray(nodes, dtype=np.int64)
        if nodes.size and (nodes.min() < 0 or nodes.max() >= self.node_count):
            raise ConfigError('node id out of range [0, %d)' % self.node_count)
        return nodes

    def get_or_init(self, node):
        node = int(self._check_ids([node])[0])
        self.initialized[node] = True

        jac = None if self.frozen else self.jacobians.take(node).copy()
        return self.states[node].copy(), jac

    def snapshot_batch(self, nodes):
        nodes = np.unique(self._check_ids(nodes))
        self.initialized[nodes] = True

        # fancy indexing copies, later commits leave the snapshot untouched
        jac = None if self.frozen else self.jacobians.take(nodes)
        return BatchSnapshot(nodes, self.states[nodes], jac)

    @staticmethod
    def winners(nodes, timestamps):
        '''
        Index of the occurrence that persists for every node:
        the latest timestamp wins, ties go to the last in batch order
        '''
        order = np.arange(len(nodes))
        idx = np.lexsort((order, timestamps, nodes))
        last = np.ones(len(idx), dtype=bool)
        last[:-1] = nodes[idx][1:] != nodes[idx][:-1]
        return idx[last]

    def commit_batch(self, nodes, timestamps, states, jacobians=None):
        nodes = self._check_ids(nodes)
        if nodes.size == 0:
            return

        states = np.asarray(states)
        if states.shape != (nodes.shape[0], self.state_size):
            raise ConfigError('state shape %s does not match (%d, %d)' %
                              (states.shape, nodes.shape[0], self.state_size))
        if not self.frozen:
            if jacobians is None:
                raise ConfigError('a learning store needs Jacobians on commit')
            if jacobians.j_w.shape[1:] != (self.state_size, self.rows, self.feature_dim) \
                    or jacobians.j_alpha.shape != states.shape \
                    or jacobians.j_beta.shape != states.shape:
                raise ConfigError('Jacobian shapes do not match the store')
            if not np.all(np.isfinite(states)) or not jacobians.is_finite():
                raise NumericError('non-finite state or Jacobian on commit')

        keep = self.winners(nodes, np.asarray(timestamps))
        target = nodes[keep]
        self.states[target] = states[keep]
        self.initialized[target] = True

        if not self.frozen:
            self.jacobians.j_alpha[target] = jacobians.j_alpha[keep]
            self.jacobians.j_beta[target] = jacobians.j_beta[keep]
            self.jacobians.j_w[target] = jacobians.j_w[keep]

    def diagnostics(self):
        s, h, f = self.state_size, self.rows, self.feature_dim
        numbers = s if self.frozen else s + 2 * s + s * h * f
        itemsize = np.dtype(self.dtype).itemsize

        return {'numbers_per_node': numbers,
                'bytes_per_node': numbers * itemsize,
                'nodes_initialized': int(self.initialized.sum()),
                'bytes_initialized': int(self.initialized.sum()) * numbers * itemsize,
                'bytes_allocated': self.node_count * numbers * itemsize}

    # binary checkpoint
    def to_bytes(self):
        dtype = np.dtype(self.dtype).newbyteorder('<')
        header = np.array([self.state_size, self.rows, self.feature_dim, self.node_count,
                           self.precision, int(not self.frozen)], dtype='<i8')

        chunks = [MAGIC, header.tobytes(), self.initialized.astype(np.uint8).tobytes(),
                  self.states.astype(dtype).tobytes()]
        if not self.frozen:
            chunks += [self.jacobians.j_alpha.astype(dtype).tobytes(),
                       self.jacobians.j_beta.astype(dtype).tobytes(),
                       self.jacobians.j_w.astype(dtype).tobytes()]

        return b''.join(chunks)

    def checkpoint(self, path):
        with open(path, 'wb') as fl:
            fl.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob, state_size=None, rows=None, feature_dim=None):
        if len(blob) < len(MAGIC) + 8 * HEADER_INTS or blob[:len(MAGIC)] != MAGIC:
            raise CheckpointError('bad checkpoint header')

        offset = len(MAGIC)
        s, h, f, n, precision, has_jac = np.frombuffer(blob, dtype='<i8',
                                            count=HEADER_INTS, offset=offset)
        offset += 8 * HEADER_INTS

        if precision not in (32, 64):
            raise CheckpointError('unsupported checkpoint precision %d' % precision)
        for name, want, got in (('state size', state_size, s), ('rows', rows, h),
                                ('feature dim', feature_dim, f)):
            if want is not None and want != got:
                raise CheckpointError('checkpoint %s %d does not match %d' % (name, got, want))

        store = cls(n, s, h, f, frozen=not has_jac, precision=int(precision))
        dtype = np.dtype(store.dtype).newbyteorder('<')

        sizes = [n, n * s]
        if has_jac:
            sizes += [n * s, n * s, n * s * h * f]
        needed = offset + n + dtype.itemsize * sum(sizes[1:])
        if len(blob) != needed:
            raise CheckpointError('truncated checkpoint (%d of %d bytes)' % (len(blob), needed))

        store.initialized[:] = np.frombuffer(blob, dtype=np.uint8, count=n, offset=offset) > 0
        offset += n

        def read(count, shape):
            nonlocal offset
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
            offset += count * dtype.itemsize
            return arr.reshape(shape).astype(store.dtype)

        store.states[:] = read(n * s, (n, s))
        if has_jac:
            store.jacobians.j_alpha[:] = read(n * s, (n, s))
            store.jacobians.j_beta[:] = read(n * s, (n, s))
            store.jacobians.j_w[:] = read(n * s * h * f, (n, s, h, f))

        return store

    @classmethod
    def restore(cls, path, state_size=None, rows=None, feature_dim=None):
        try:
            with open(path, 'rb') as fl:
                blob = fl.read()
        except OSError as err:
            raise CheckpointError('cannot read %s: %s' % (path, err)) from None

        return cls.from_bytes(blob, state_size, rows, feature_dim)
