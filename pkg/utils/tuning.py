import logging, numpy as np
from dataclasses import replace
from utils.errors import ConfigError, NumericError
from utils.helper import emit_record

# search ranges: ('log', lo, hi) log-uniform, ('uniform', lo, hi), ('int', lo, hi) inclusive
SEARCH_SPACE = {'lr_er' : ('log', 1e-4, 1e3),
                'lr' : ('log', 1e-4, 1e-2),
                'weight_decay' : ('log', 1e-9, 1e-3),
                'segments' : ('int', 10, 50),
                'temperature' : ('uniform', 1.0, 10.0),
                'gs_alpha' : ('uniform', 0.1, 1.0),
                'gs_beta' : ('uniform', 0.1, 1.0),
                'dropout' : ('uniform', 0.1, 0.3),
                'n_dense' : ('int', 1, 3),
                'dense_size' : ('int', 32, 256)}

# keys each model family never reads
INERT_KEYS = {'dgs' : ('gs_alpha', 'gs_beta'),
              'dgs_bp' : ('gs_alpha', 'gs_beta'),
              'dgs_sum' : ('gs_alpha', 'gs_beta', 'temperature'),
              'dgs_v' : ('gs_alpha', 'gs_beta', 'segments', 'temperature'),
              'dgs_s' : ('gs_alpha', 'gs_beta', 'segments', 'temperature'),
              'gs' : ('lr_er', 'segments', 'temperature'),
              'raw' : ('lr_er', 'segments', 'temperature', 'gs_alpha', 'gs_beta')}

def variant_space(space, variant):
    if variant not in INERT_KEYS:
        raise ConfigError('unknown variant %s' % variant)
    return {name: bounds for name, bounds in space.items() if name not in INERT_KEYS[variant]}

def _draw(kind, lo, hi, rng):
    if kind == 'log':
        return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    if kind == 'uniform':
        return float(rng.uniform(lo, hi))
    if kind == 'int':
        return int(rng.integers(lo, hi + 1))
    raise ConfigError('unknown range kind %s' % kind)

def sample_config(base, space, rng):
    '''
    One random configuration around base; the number of
    segments is redrawn until it divides the state size
    '''
    values = {}
    for name, (kind, lo, hi) in space.items():
        values[name] = _draw(kind, lo, hi, rng)

        if name == 'segments':
            state_size = base.resolved_state_size
            if not any(state_size % m == 0 for m in range(int(lo), int(hi) + 1)):
                raise ConfigError('no segment count in [%d, %d] divides the state size %d' %
                                  (lo, hi, state_size))
            while state_size % values[name] != 0:
                values[name] = _draw(kind, lo, hi, rng)

    return replace(base, **values), values

def random_search(base, budget, seed, objective, space=SEARCH_SPACE, record_path=None):
    '''
    Random search over space, maximizing objective(config)
    returns the best config and the trial log
    '''
    if budget < 1:
        raise ConfigError('search budget must be >= 1')

    space = variant_space(space, base.variant)
    rng = np.random.default_rng(seed)
    best, best_metric, trials = None, -np.inf, []
    for trial in range(budget):
        config, values = sample_config(base, space, rng)
        row = {'trial': trial, 'sampler': 'random', 'params': values}

        # a diverged trial is logged and skipped
        try:
            metric = float(objective(config))
            row.update(metric=metric, status='ok')
            logging.info('Trial %d/%d metric %.4f' % (trial + 1, budget, metric))
        except NumericError as err:
            metric = -np.inf
            row.update(metric=None, status='diverged', message=str(err))
            logging.info('Trial %d/%d diverged: %s' % (trial + 1, budget, err))

        trials.append(row)
        emit_record('trial', row, record_path)

        if metric > best_metric:
            best, best_metric = config, metric

    if best is None:
        raise NumericError('every trial diverged')
    return best, trials
