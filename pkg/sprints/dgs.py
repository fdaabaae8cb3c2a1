"""
Embedding recurrent component

    S_t = beta * S_{t-1} + (1 - beta) * ((1 - alpha) * E + alpha * S*_{t-1})

with E the concatenation of m softmaxes over segments of W F_t (h = s / m rows each).
Parameters alpha, beta and W are learned online in forward mode: every node carries
the Jacobians of its state w.r.t. the parameters, which are propagated per event and
contracted with dL/dS to produce parameter gradients. The dgs_bp variant instead runs
reverse mode (torch) through the current batch only.
"""
import warnings, numpy as np, torch
from dataclasses import dataclass, replace
from typing import Optional
from scipy.special import softmax
from sprints.store import RtrlJacobians
from utils.errors import ConfigError, NumericError

VARIANTS = ('dgs', 'dgs_v', 'dgs_s', 'dgs_sum', 'dgs_bp')
# variants that replace W by the static bucket embedding
STATIC_VARIANTS = ('dgs_v', 'dgs_s')
SUM_EPSILON = 1e-8

# default state size per task
DEFAULT_STATE_SIZE = {'node_class': 100, 'link_pred': 250}

@dataclass
class DgsParams:
    alpha: np.ndarray
    beta: np.ndarray
    w: Optional[np.ndarray]
    temperature: float = 1.0
    segments: int = 1
    learning_rate_er: float = 0.1
    variant: str = 'dgs'

    @property
    def state_size(self):
        return self.alpha.shape[0]

    @property
    def rows_per_segment(self):
        if self.w is None:
            return 0
        return self.state_size // self.segments

    @property
    def feature_dim(self):
        return 0 if self.w is None else self.w.shape[1]

    @property
    def tied(self):
        return self.variant == 'dgs_s'

    def copy(self):
        return replace(self, alpha=self.alpha.copy(), beta=self.beta.copy(),
                       w=None if self.w is None else self.w.copy())

    def count(self):
        if self.tied:
            return 2
        return 2 * self.state_size + (0 if self.w is None else self.w.size)

@dataclass
class SegmentedEmbedding:
    values: np.ndarray
    seg_probs: Optional[np.ndarray] = None
    # W F before normalization, kept for the divide-by-sum Jacobian
    logits: Optional[np.ndarray] = None

@dataclass
class DgsGrads:
    alpha: np.ndarray
    beta: np.ndarray
    w: Optional[np.ndarray]

    @staticmethod
    def zeros(params):
        w = None if params.w is None else np.zeros_like(params.w)
        return DgsGrads(np.zeros_like(params.alpha), np.zeros_like(params.beta), w)

    def __add__(self, other):
        w = None if self.w is None else self.w + other.w
        return DgsGrads(self.alpha + other.alpha, self.beta + other.beta, w)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.beta))
                    and (self.w is None or np.all(np.isfinite(self.w))))

def validate_config(state_size, segments, rows=None, task=None):
    if segments < 1 or state_size % segments != 0:
        raise ConfigError('state size %d is not divisible into %d segments' %
                          (state_size, segments))
    if rows is not None and rows * segments != state_size:
        raise ConfigError('segments x rows (%d x %d) must equal the state size %d' %
                          (segments, rows, state_size))

    default = DEFAULT_STATE_SIZE.get(task)
    if default is not None and state_size != default:
        warnings.warn('state size %d differs from the %s default %d' %
                      (state_size, task, default), RuntimeWarning)

    return state_size // segments

def init_params(variant, state_size, segments, feature_dim, temperature=1.0,
                learning_rate_er=0.1, seed=0):
    if variant not in VARIANTS:
        raise ConfigError('unknown variant %s' % variant)

    w = None
    if variant not in STATIC_VARIANTS:
        validate_config(state_size, segments)
        rng = np.random.default_rng(seed)
        w = rng.normal(scale=1.0 / np.sqrt(feature_dim), size=(state_size, feature_dim))

    return DgsParams(np.full(state_size, 0.5), np.full(state_size, 0.5), w,
                     float(temperature), int(segments), float(learning_rate_er), variant)

def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericError('non-finite embedding input')

def embed_features(w, features, temperature, segments):
    if temperature < 1:
        raise ConfigError('softmax temperature must be >= 1')
    _check_finite(w, features)

    # z: (..., m, h)
    z = features @ w.T
    z = z.reshape(*z.shape[:-1], segments, -1)

    # scipy's softmax subtracts the segment max before exponentiation
    probs = softmax(z / temperature, axis=-1)
    return SegmentedEmbedding(probs.reshape(*probs.shape[:-2], -1), probs, z)

def embed_features_sum(w, features, segments, epsilon=SUM_EPSILON):
    _check_finite(w, features)

    z = features @ w.T
    z = z.reshape(*z.shape[:-1], segments, -1)
    e = z / (z.sum(axis=-1, keepdims=True) + epsilon)
    return SegmentedEmbedding(e.reshape(*e.shape[:-2], -1), e, z)

def embed_jacobian(probs, features, temperature):
    '''
    dE_i / dW[j, c] = (delta_ij p_i - p_i p_j) F_c / T within one segment
        - probs: (..., h)
        - features: (..., f), leading axes broadcast against probs
    returns (..., h, h, f)
    '''
    core = probs[..., :, None] * np.eye(probs.shape[-1]) - probs[..., :, None] * probs[..., None, :]
    return core[..., None] * np.expand_dims(features, (-2, -3)) / temperature

def embed_sum_jacobian(logits, features, epsilon=SUM_EPSILON):
    '''
    Jacobian of E = z / (sum z + eps) with z = W_k F, same layout as embed_jacobian
    '''
    denom = logits.sum(axis=-1)[..., None, None] + epsilon
    core = np.eye(logits.shape[-1]) / denom - logits[..., :, None] / denom ** 2
    return core[..., None] * np.expand_dims(features, (-2, -3))

def segment_jacobian(params, e, features):
    # (..., s, h, f): state element i against the rows of its own segment
    feats = np.expand_dims(features, -2)
    if params.variant == 'dgs_sum':
        jac = embed_sum_jacobian(e.logits, feats)
    else:
        jac = embed_jacobian(e.seg_probs, feats, params.temperature)

    return jac.reshape(*jac.shape[:-4], params.state_size, *jac.shape[-2:])

def embed(params, features):
    if params.variant == 'dgs_sum':
        return embed_features_sum(params.w, features, params.segments)
    return embed_features(params.w, features, params.temperature, params.segments)

def convex_update(alpha, beta, s_prev, s_star_prev, e):
    return beta * s_prev + (1 - beta) * ((1 - alpha) * e + alpha * s_star_prev)

def state_update(params, s_prev, s_star_prev, e):
    values = e.values if isinstance(e, SegmentedEmbedding) else e
    return convex_update(params.alpha, params.beta, s_prev, s_star_prev, values)

def rtrl_propagate(params, snap_self, snap_neighbor, e, features=None):
    '''
    Propagate the Jacobians of one endpoint through an update,
    reading its own and its neighbor's frozen (state, Jacobians)
    '''
    s_prev, jac = snap_self
    s_star, jac_star = snap_neighbor
    values = e.values if isinstance(e, SegmentedEmbedding) else e

    s = params.state_size
    if jac.j_alpha.shape[-1] != s or jac_star.j_alpha.shape[-1] != s \
            or jac.j_w.shape != jac_star.j_w.shape:
        raise ConfigError('Jacobian shapes do not match the parameters')

    a, b = params.alpha, params.beta
    u = (1 - a) * values + a * s_star

    j_alpha = b * jac.j_alpha + (1 - b) * (s_star - values + a * jac_star.j_alpha)
    j_beta = s_prev - u + b * jac.j_beta + (1 - b) * a * jac_star.j_beta

    if params.w is None:
        return RtrlJacobians(j_alpha, j_beta, jac.j_w)

    d_embed = segment_jacobian(params, e, features)
    if d_embed.shape[-3:] != jac.j_w.shape[-3:]:
        raise ConfigError('Jacobian shapes do not match the parameters')

    a3, b3 = a[:, None, None], b[:, None, None]
    j_w = b3 * jac.j_w + (1 - b3) * ((1 - a3) * d_embed + a3 * jac_star.j_w)
    return RtrlJacobians(j_alpha, j_beta, j_w)

def accumulate_param_grads(g, jac, params):
    '''
    Contract dL/dS (..., s) with the Jacobians, summing over leading axes
    '''
    s = params.state_size
    g2 = g.reshape(-1, s)

    grad_alpha = (g2 * jac.j_alpha.reshape(-1, s)).sum(axis=0)
    grad_beta = (g2 * jac.j_beta.reshape(-1, s)).sum(axis=0)

    # alpha and beta of dgs_s are one scalar each
    if params.tied:
        grad_alpha = np.full(s, grad_alpha.sum())
        grad_beta = np.full(s, grad_beta.sum())

    grad_w = None
    if params.w is not None:
        m, h = params.segments, params.rows_per_segment
        j_w = jac.j_w.reshape(-1, m, h, h, params.feature_dim)
        grad_w = np.einsum('nki,nkirc->krc', g2.reshape(-1, m, h), j_w)
        grad_w = grad_w.reshape(s, params.feature_dim)

    return DgsGrads(grad_alpha, grad_beta, grad_w)

def sgd_step(params, grads, batch_size):
    if params.learning_rate_er <= 0:
        raise ConfigError('the ER learning rate must be positive')
    if not grads.is_finite():
        raise NumericError('non-finite ER gradients')

    lr = params.learning_rate_er / batch_size
    alpha = np.clip(params.alpha - lr * grads.alpha, 0.0, 1.0)
    beta = np.clip(params.beta - lr * grads.beta, 0.0, 1.0)
    w = None if params.w is None else params.w - lr * grads.w

    return replace(params, alpha=alpha, beta=beta, w=w)

def bp_forward_backward(params, s_self, s_neighbor, features, g):
    '''
    Truncated backprop: reverse mode through this batch's updates only,
    with the snapshot states treated as constants
        - s_self, s_neighbor: (B, s) snapshot states
        - features: (B, f) standardized features
        - g: (B, s) dL/dS_t of the updated states
    '''
    if params.variant != 'dgs_bp':
        raise ConfigError('bp_forward_backward is only used by dgs_bp')

    to_torch = lambda arr: torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float64))
    alpha = to_torch(params.alpha).requires_grad_(True)
    beta = to_torch(params.beta).requires_grad_(True)
    w = to_torch(params.w).requires_grad_(True)

    z = to_torch(features) @ w.t()
    z = z.reshape(z.shape[0], params.segments, -1)
    e = torch.softmax(z / params.temperature, dim=-1).reshape(z.shape[0], -1)

    s_new = beta * to_torch(s_self) + (1 - beta) * \
            ((1 - alpha) * e + alpha * to_torch(s_neighbor))

    # surrogate whose gradient is g^T dS/dtheta
    surrogate = (to_torch(g) * s_new).sum()
    grad_alpha, grad_beta, grad_w = torch.autograd.grad(surrogate, [alpha, beta, w])

    return DgsGrads(grad_alpha.numpy(), grad_beta.numpy(), grad_w.numpy())
