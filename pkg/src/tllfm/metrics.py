import numpy as np
from scipy.stats import rankdata


def auroc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    P(score of a positive > score of a negative) + 1/2 P(tie), from the
    rank sum of the positives with ties given average ranks.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0/1")
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUROC needs at least one positive and one negative label")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))
