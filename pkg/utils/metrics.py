import numpy as np
from dataclasses import dataclass
from scipy.stats import rankdata
from utils.errors import MetricError

@dataclass
class RankResult:
    rank: int
    candidate_count: int

    def __post_init__(self):
        if not 1 <= self.rank <= self.candidate_count:
            raise MetricError('rank %d outside [1, %d]' % (self.rank, self.candidate_count))

def roc_auc(scores, labels):
    '''
    Area under the ROC curve as the Mann-Whitney statistic,
    tied scores count one half
    '''
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError('AUC undefined for single-class input')

    # average ranks give ties half credit
    ranks = rankdata(scores)
    u_stat = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))

def rank_from_scores(scores, true_idx, ties='pessimistic'):
    '''
    Rank of the true candidate in every row of a score matrix
        - scores: (B, n) candidate scores
        - true_idx: (B,) column of the true destination
    '''
    scores = np.atleast_2d(scores)
    true_idx = np.atleast_1d(true_idx)
    positive = scores[np.arange(scores.shape[0]), true_idx][:, None]

    higher = (scores > positive).sum(axis=1)
    if ties == 'optimistic':
        return 1 + higher

    # the true candidate ties with itself
    return higher + (scores == positive).sum(axis=1)

def rank_against_negatives(score_fn, positive, candidates, ties='pessimistic'):
    candidates = np.asarray(candidates)
    if candidates.size == 0:
        raise MetricError('empty candidate set')

    where = np.flatnonzero(candidates == positive.dst)
    if where.size == 0:
        raise MetricError('true destination %d missing from the candidates' % positive.dst)

    scores = np.asarray(score_fn(positive.src, candidates), dtype=np.float64)
    rank = int(rank_from_scores(scores[None, :], where[:1], ties)[0])
    return RankResult(rank, candidates.size)

def mrr(ranks):
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise MetricError('no ranks to average')
    return float(np.mean(1.0 / ranks))

def recall_at_k(ranks, k=10):
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise MetricError('no ranks to average')
    return float(np.mean(ranks <= k))

def summarize(values):
    values = np.asarray(values, dtype=np.float64)
    return {'mean': float(values.mean()), 'std': float(values.std()), 'n': int(values.size)}
