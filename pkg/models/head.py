import numpy as np
from dataclasses import dataclass, field
from typing import List, Optional
from scipy.special import expit
from utils.errors import ConfigError, NumericError

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

@dataclass
class MlpParams:
    """
    Feedforward decision head with a single output logit.

    layers are (weight (out, in), bias (out,)) pairs, ReLU and dropout
    between them; moments hold the Adam (m, v) pair of every tensor.
    """
    layers: List[tuple]
    dropout_p: float = 0.1
    weight_decay: float = 0.0
    learning_rate: float = 1e-3
    moments: Optional[list] = None
    step: int = 0

    def __post_init__(self):
        if self.moments is None:
            self.moments = [tuple((np.zeros_like(t), np.zeros_like(t)) for t in layer)
                            for layer in self.layers]

    @property
    def in_dim(self):
        return self.layers[0][0].shape[1]

    def count(self):
        return int(sum(w.size + b.size for w, b in self.layers))

    def copy(self):
        layers = [(w.copy(), b.copy()) for w, b in self.layers]
        moments = [tuple((m.copy(), v.copy()) for m, v in layer) for layer in self.moments]
        return MlpParams(layers, self.dropout_p, self.weight_decay,
                         self.learning_rate, moments, self.step)

@dataclass
class Tape:
    inputs: list = field(default_factory=list)
    pre_acts: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    consumed: bool = False

def init_head(in_dim, hidden_sizes=(), dropout_p=0.1, weight_decay=0.0,
              learning_rate=1e-3, seed=0):
    rng = np.random.default_rng(seed)
    sizes = [in_dim, *hidden_sizes, 1]

    # kaiming normal weights, zero bias
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal(scale=np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        layers.append((w, np.zeros(fan_out)))

    return MlpParams(layers, dropout_p, weight_decay, learning_rate)

def forward(x, params, mode='eval', rng=None):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ConfigError('head expects %d inputs, got %d' % (params.in_dim, x.shape[-1]))

    tape = Tape()
    a = x
    n_layer = len(params.layers)
    for idx, (w, b) in enumerate(params.layers):
        tape.inputs.append(a)
        z = a @ w.T + b
        if idx == n_layer - 1:
            return z[..., 0], tape

        tape.pre_acts.append(z)
        a = np.maximum(z, 0.0)

        # inverted dropout, train mode only
        mask = None
        if mode == 'train' and params.dropout_p > 0:
            keep = rng.random(a.shape) >= params.dropout_p
            mask = keep / (1.0 - params.dropout_p)
            a = a * mask
        tape.masks.append(mask)

def bce_loss(logit, label, pos_weight=1.0):
    '''
    Sigmoid cross-entropy, positives weighted by pos_weight
    returns per-sample (loss, dL/dlogit)
    '''
    logit = np.asarray(logit, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    weight = np.where(label == 1, pos_weight, 1.0)

    # log(1 + exp(-x)) and log(1 + exp(x)) without overflow
    loss = np.where(label == 1, np.logaddexp(0.0, -logit), np.logaddexp(0.0, logit))
    return weight * loss, weight * (expit(logit) - label)

def backward(tape, dlogit, params):
    if tape.consumed:
        raise ConfigError('tape already consumed by a backward pass')
    tape.consumed = True

    delta = np.asarray(dlogit, dtype=np.float64)[..., None]
    grads = [None] * len(params.layers)
    for idx in reversed(range(len(params.layers))):
        w, _ = params.layers[idx]
        a_in = tape.inputs[idx]

        # batch axes flattened
        flat_delta = delta.reshape(-1, delta.shape[-1])
        grads[idx] = (flat_delta.T @ a_in.reshape(-1, a_in.shape[-1]), flat_delta.sum(axis=0))
        delta = delta @ w

        # through the dropout and ReLU of the previous layer
        if idx > 0:
            mask = tape.masks[idx - 1]
            if mask is not None:
                delta = delta * mask
            delta = delta * (tape.pre_acts[idx - 1] > 0)

    return grads, delta

def adam_step(params, grads):
    for layer in grads:
        for g in layer:
            if not np.all(np.isfinite(g)):
                raise NumericError('non-finite head gradients')

    new = params.copy()
    new.step += 1
    lr, (b1, b2) = params.learning_rate, ADAM_BETAS
    correct1 = 1 - b1 ** new.step
    correct2 = 1 - b2 ** new.step

    layers, moments = [], []
    for tensors, tensor_grads, tensor_moments in zip(new.layers, grads, new.moments):
        out_t, out_m = [], []
        for theta, g, (m, v) in zip(tensors, tensor_grads, tensor_moments):
            # decoupled weight decay
            theta = theta * (1 - lr * params.weight_decay)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g ** 2
            theta = theta - lr * (m / correct1) / (np.sqrt(v / correct2) + ADAM_EPS)
            out_t.append(theta)
            out_m.append((m, v))
        layers.append(tuple(out_t))
        moments.append(tuple(out_m))

    new.layers, new.moments = layers, moments
    return new
