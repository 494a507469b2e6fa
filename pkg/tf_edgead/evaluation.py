"""
Anomaly detection quality of trained strategies.
"""
import logging
import os

import numpy as np
from scipy.stats import rankdata

from .errors import EdgeADError
from .model import ScoreSeries, score_dataset
from .strategies import theoretical_cost
from .utils import atomic_write_text, format_float

logger = logging.getLogger(__name__)

POINTWISE = "pointwise"
POINT_ADJUST = "point_adjust"
F1_MODES = (POINTWISE, POINT_ADJUST)


class SingleClass(EdgeADError, ValueError):
    pass


def _align(scores, labels):
    if isinstance(scores, ScoreSeries):
        if len(labels) != len(scores):
            labels = scores.aligned_labels(labels)
        scores = scores.scores
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(
            "scores {} and labels {} are not aligned".format(
                scores.shape, labels.shape
            )
        )
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise SingleClass("labels need both normal and anomalous points")
    return scores, labels


def roc_auc(scores, labels):
    """
    Area under the ROC curve as the Mann-Whitney statistic, ties counted
    half.

    :param scores: array or :class:`~tf_edgead.model.ScoreSeries`
    :param labels: 0/1 array aligned with the scores, or the full label
        vector of the split when ``scores`` is a ScoreSeries
    """
    scores, labels = _align(scores, labels)
    ranks = rankdata(scores)
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def anomaly_segments(labels):
    """``[(start, end)]`` of the contiguous runs of positive labels."""
    labels = np.asarray(labels).astype(np.int8)
    diff = np.diff(np.concatenate([[0], labels, [0]]))
    starts = np.nonzero(diff == 1)[0]
    ends = np.nonzero(diff == -1)[0]
    return list(zip(starts, ends))


def _count_at_least(values, thresholds):
    values = np.sort(values)
    return values.size - np.searchsorted(values, thresholds, side="left")


class F1Result:
    def __init__(self, f1, precision, recall, threshold):
        self.f1 = float(f1)
        self.precision = float(precision)
        self.recall = float(recall)
        self.threshold = float(threshold)

    def to_dict(self):
        return {
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "threshold": self.threshold,
        }

    def __repr__(self):
        return "F1Result({})".format(self.to_dict())


def best_f1(scores, labels, mode=POINTWISE):
    """
    Best F1 over the thresholds at every distinct score, predicting
    ``score >= threshold`` anomalous.

    With ``point_adjust`` a labeled segment counts as fully detected once
    any of its points is predicted. Equal F1 values keep the highest
    threshold.
    """
    if mode not in F1_MODES:
        raise ValueError("mode must be one of {}".format(F1_MODES))
    scores, labels = _align(scores, labels)
    thresholds = np.unique(scores)[::-1]
    fp = _count_at_least(scores[~labels], thresholds)
    if mode == POINTWISE:
        tp = _count_at_least(scores[labels], thresholds)
    else:
        seg = anomaly_segments(labels)
        seg_max = np.array([scores[a:b].max() for a, b in seg])
        seg_len = np.array([b - a for a, b in seg])
        order = np.argsort(seg_max)
        seg_max, seg_len = seg_max[order], seg_len[order]
        tail = np.concatenate([np.cumsum(seg_len[::-1])[::-1], [0]])
        tp = tail[np.searchsorted(seg_max, thresholds, side="left")]
    n_pos = labels.sum()
    f1 = 2 * tp / (tp + fp + n_pos)
    best = int(np.argmax(f1))
    predicted = tp[best] + fp[best]
    precision = tp[best] / predicted if predicted > 0 else 0.0
    return F1Result(f1[best], precision, tp[best] / n_pos, thresholds[best])


class DeviceResult:
    def __init__(self, strategy, device, auc, f1):
        self.strategy = strategy
        self.device = device
        self.auc = float(auc)
        self.f1 = f1

    def to_line(self):
        return ",".join(
            [self.strategy, self.device]
            + [
                format_float(i)
                for i in [
                    self.auc,
                    self.f1.f1,
                    self.f1.precision,
                    self.f1.recall,
                    self.f1.threshold,
                ]
            ]
        )


ROW_HEADER = "strategy,device,auc,f1,precision,recall,threshold"
FOOTER_HEADER = "strategy,mean_auc,mean_f1,models,epochs,wall_ms"


class EvaluationReport:
    """
    Per device AUC and best F1 of every strategy with the training cost.

    :param rows: list of :class:`DeviceResult`
    :param costs: dictionary ``strategy -> {models, epochs, wall_ms}``
    :param theoretical: optional ``strategy -> (models, epochs)``
    """

    def __init__(self, rows, costs, theoretical=None, order=None):
        self.rows = list(rows)
        self.costs = dict(costs)
        self.theoretical = dict(theoretical or {})
        self.order = list(order or self.costs)

    def strategy_rows(self, strategy):
        return [r for r in self.rows if r.strategy == strategy]

    def mean_auc(self, strategy):
        return float(np.mean([r.auc for r in self.strategy_rows(strategy)]))

    def mean_f1(self, strategy):
        return float(np.mean([r.f1.f1 for r in self.strategy_rows(strategy)]))

    def to_text(self):
        lines = [ROW_HEADER] + [r.to_line() for r in self.rows]
        lines.append(FOOTER_HEADER)
        for s in self.order:
            c = self.costs[s]
            lines.append(
                "{},{},{},{},{},{}".format(
                    s,
                    format_float(self.mean_auc(s)),
                    format_float(self.mean_f1(s)),
                    c["models"],
                    c["epochs"],
                    c["wall_ms"],
                )
            )
        return "\n".join(lines) + "\n"

    def save(self, path):
        atomic_write_text(path, self.to_text())

    @staticmethod
    def from_text(text):
        rows, costs, order = [], {}, []
        section = None
        for line in text.splitlines():
            if line in (ROW_HEADER, FOOTER_HEADER):
                section = line
                continue
            if not line.strip():
                continue
            parts = line.split(",")
            if section == ROW_HEADER:
                auc, f1, p, r, t = [float(i) for i in parts[2:]]
                f1_result = F1Result(f1, p, r, t)
                rows.append(DeviceResult(parts[0], parts[1], auc, f1_result))
            elif section == FOOTER_HEADER:
                order.append(parts[0])
                costs[parts[0]] = {
                    "models": int(parts[3]),
                    "epochs": int(parts[4]),
                    "wall_ms": int(parts[5]),
                }
            else:
                raise ValueError("unexpected line {!r}".format(line))
        return EvaluationReport(rows, costs, order=order)

    @staticmethod
    def load(path):
        with open(path) as f:
            return EvaluationReport.from_text(f.read())

    def to_table(self):
        """Human readable summary, one line per strategy."""
        head = "{:<8} {:>8} {:>8} {:>7} {:>7} {:>9} {:>11}".format(
            "strategy",
            "AUC",
            "F1",
            "models",
            "epochs",
            "epochs*",
            "time",
        )
        lines = [head, "-" * len(head)]
        for s in self.order:
            c = self.costs[s]
            theory = self.theoretical.get(s)
            lines.append(
                "{:<8} {:>8.4f} {:>8.4f} {:>7} {:>7} {:>9} {:>10.2f}s".format(
                    s,
                    self.mean_auc(s),
                    self.mean_f1(s),
                    c["models"],
                    c["epochs"],
                    "-" if theory is None else theory[1],
                    c["wall_ms"] / 1000,
                )
            )
        lines.append("")
        lines.append("epochs*: budget without early stopping")
        return "\n".join(lines) + "\n"


def evaluate_run(run, datasets, mode=POINTWISE, scores_dir=None):
    """:class:`DeviceResult` of every device of ``run``."""
    ret = []
    for d in sorted(datasets, key=lambda d: d.device_id):
        if d.test_labels is None:
            raise SingleClass(
                "{} has no labeled test split".format(d.device_id)
            )
        series = score_dataset(run.model_for(d.device_id), d, "test")
        if scores_dir is not None:
            series.save(
                os.path.join(scores_dir, run.strategy, d.device_id + ".csv")
            )
        labels = series.aligned_labels(d.test_labels)
        ret.append(
            DeviceResult(
                run.strategy,
                d.device_id,
                roc_auc(series.scores, labels),
                best_f1(series.scores, labels, mode),
            )
        )
    return ret


def compare_strategies(
    runs, datasets, mode=POINTWISE, n_clusters=None, scores_dir=None
):
    """
    Score each device with the model it is routed to and gather AUC, best
    F1 and training cost per strategy.

    :param n_clusters: number of clusters, adds the theoretical epochs
    """
    rows, costs, theoretical = [], {}, {}
    for run in runs:
        rows += evaluate_run(run, datasets, mode, scores_dir)
        costs[run.strategy] = {
            "models": run.models_trained,
            "epochs": run.total_epochs,
            "wall_ms": int(round(run.total_wall_time * 1000)),
        }
        if n_clusters is not None and run.models:
            config = next(iter(run.models.values())).config
            theoretical[run.strategy] = theoretical_cost(
                run.strategy,
                len(datasets),
                n_clusters,
                config.max_epochs,
                config.transfer_max_epochs,
            )
        logger.info("evaluated %s", run.strategy)
    return EvaluationReport(
        rows, costs, theoretical, order=[r.strategy for r in runs]
    )


def loss_curves_text(runs):
    """``strategy,model,epoch,train_loss,val_loss`` for every model."""
    lines = ["strategy,model,epoch,train_loss,val_loss"]
    for run in runs:
        for key, m in sorted(run.models.items()):
            train = m.provenance.get("train_loss_history", [])
            val = m.provenance.get("val_loss_history", [])
            for epoch, t in enumerate(train):
                v = val[epoch] if epoch < len(val) else None
                lines.append(
                    "{},{},{},{},{}".format(
                        run.strategy,
                        key,
                        epoch,
                        format_float(t),
                        "" if v is None else format_float(v),
                    )
                )
    return "\n".join(lines) + "\n"
