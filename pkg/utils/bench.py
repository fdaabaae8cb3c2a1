import time, numpy as np, pandas as pd
from dataclasses import dataclass
from utils.errors import ConfigError, StreamError

@dataclass
class LatencyReport:
    """
    Wall-clock timing of a frozen model over a fixed batch schedule

        - batch_times: (iterations, batches) seconds per batch,
          the warm-up iterations already excluded
    """
    dataset: str
    model: str
    batches: int
    batch_size: int
    iterations: int
    batch_times: np.ndarray

    @property
    def iteration_times(self):
        return self.batch_times.sum(axis=1)

    @property
    def mean(self):
        return float(self.iteration_times.mean())

    @property
    def std(self):
        return float(self.iteration_times.std())

    @property
    def batch_mean(self):
        return float(self.batch_times.mean())

    @property
    def events_per_sec(self):
        return self.batches * self.batch_size / self.mean

    def record(self):
        return {'dataset': self.dataset, 'model': self.model,
                'batches': self.batches, 'batch_size': self.batch_size,
                'iterations': self.iterations,
                'mean_seconds': self.mean, 'std_seconds': self.std,
                'batch_mean_seconds': self.batch_mean,
                'events_per_sec': self.events_per_sec}

    def write_csv(self, path):
        iteration, batch = np.indices(self.batch_times.shape)
        pd.DataFrame({'iteration': iteration.ravel(), 'batch': batch.ravel(),
                      'seconds': self.batch_times.ravel()}).to_csv(path, index=False)

def latency_bench(model, stream, batches=200, batch_size=200, iterations=10,
                  warmup=1, dataset='', name=''):
    '''
    Time model.infer_batch over the first batches x batch_size events.
    The model must be frozen and expose reset() and infer_batch(batch);
    states are reset before every iteration, outside the timed region.
    '''
    if not getattr(model, 'frozen', False):
        raise ConfigError('latency bench needs a frozen model')
    if batches < 1 or batch_size < 1 or iterations < 1 or warmup < 0:
        raise ConfigError('batches, batch size and iterations must be positive')

    need = batches * batch_size
    if len(stream) < need:
        raise StreamError('stream has %d events, the bench needs %d' % (len(stream), need))

    # slicing stays outside the timer
    parts = [stream[idx * batch_size:(idx + 1) * batch_size] for idx in range(batches)]

    times = np.zeros((iterations, batches))
    for it in range(warmup + iterations):
        model.reset()
        for idx, part in enumerate(parts):
            start = time.perf_counter()
            model.infer_batch(part)
            elapsed = time.perf_counter() - start

            if it >= warmup:
                times[it - warmup, idx] = elapsed

    return LatencyReport(dataset, name, batches, batch_size, iterations, times)
