"""Sparse logistic regression with a polarity-balanced minibatch sampler.

Both native scorers (relation detector and resolution pair scorer) are
linear in their parameters once their feature maps are spelled out, so
they share this trainer. Targets are soft probabilities in [0, 1];
hard labels are the special case {0.0, 1.0}.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FeatureVector = dict[int, float]


def sigmoid(z: float) -> float:
    # guard against overflow in exp for large |z|
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.5
    lr_decay: float = 0.05        # lr_t = lr / (1 + decay * epoch)
    l2: float = 1e-6
    seed: int = 7
    dev_fraction: float = 0.1
    patience: int = 3             # early-stopping evals without improvement
    balanced: bool = True         # sample minibatches 50/50 by polarity
    early_metric: str = "f1"      # "f1" stops on separation, "loss" on
                                  # calibration (dev cross-entropy)

    def __post_init__(self):
        if self.early_metric not in ("f1", "loss"):
            raise ValueError(f"unknown early_metric {self.early_metric!r}")


@dataclass
class SparseLogistic:
    """w . x + b through a sigmoid, with sparse feature vectors."""

    dim: int
    w: np.ndarray = None
    b: float = 0.0

    def __post_init__(self):
        if self.w is None:
            self.w = np.zeros(self.dim, dtype=np.float64)

    def margin(self, x: FeatureVector) -> float:
        w = self.w
        return self.b + sum(w[i] * v for i, v in x.items())

    def prob(self, x: FeatureVector) -> float:
        return sigmoid(self.margin(x))

    def loss_and_grad(self, xs, targets):
        """Mean soft cross-entropy and its gradient over a batch.

        Returns (loss, grad_w sparse dict, grad_b). The L2 penalty is
        applied by the update step, not folded in here, so the gradient
        check can probe the bare data term.
        """
        n = len(xs)
        gw: FeatureVector = {}
        gb = 0.0
        loss = 0.0
        for x, q in zip(xs, targets):
            p = self.prob(x)
            eps = 1e-12
            loss -= q * math.log(max(p, eps)) + (1 - q) * math.log(max(1 - p, eps))
            err = (p - q) / n
            gb += err
            for i, v in x.items():
                gw[i] = gw.get(i, 0.0) + err * v
        return loss / n, gw, gb

    def copy(self) -> "SparseLogistic":
        return SparseLogistic(dim=self.dim, w=self.w.copy(), b=self.b)

    def params_to_dict(self) -> dict:
        nz = np.nonzero(self.w)[0]
        return {"dim": self.dim, "bias": self.b,
                "indices": nz.tolist(),
                "values": self.w[nz].tolist()}

    @classmethod
    def params_from_dict(cls, d: dict) -> "SparseLogistic":
        m = cls(dim=d["dim"], b=d["bias"])
        if d["indices"]:
            m.w[np.asarray(d["indices"], dtype=np.int64)] = d["values"]
        return m


def balanced_index_stream(polarities, batch_size, seed):
    """Yield index batches with an expected 50/50 polarity mix.

    Each slot flips a fair coin for the polarity pool and then draws
    uniformly (with replacement) from that pool. Deterministic for a
    fixed seed; errors if either pool is empty.
    """
    pos = [i for i, p in enumerate(polarities) if p]
    neg = [i for i, p in enumerate(polarities) if not p]
    if not pos or not neg:
        raise ValueError(
            f"balanced sampling needs both polarities "
            f"(positives={len(pos)}, negatives={len(neg)})")
    rng = random.Random(seed)
    while True:
        batch = []
        for _ in range(batch_size):
            pool = pos if rng.random() < 0.5 else neg
            batch.append(pool[rng.randrange(len(pool))])
        yield batch


def uniform_index_stream(n, batch_size, seed):
    rng = random.Random(seed)
    order = list(range(n))
    while True:
        rng.shuffle(order)
        for i in range(0, n, batch_size):
            yield order[i:i + batch_size]


def f1_against(model, xs, targets, threshold=0.5):
    tp = fp = fn = 0
    for x, q in zip(xs, targets):
        pred = model.prob(x) >= threshold
        gold = q >= 0.5
        if pred and gold:
            tp += 1
        elif pred and not gold:
            fp += 1
        elif gold:
            fn += 1
    if tp == 0:
        return 0.0
    prec = tp / (tp + fp)
    rec = tp / (tp + fn)
    return 2 * prec * rec / (prec + rec)


def mean_loss(model, xs, targets):
    loss, _, _ = model.loss_and_grad(xs, targets)
    return loss


def train_logistic(xs: list[FeatureVector], targets: list[float],
                   cfg: TrainConfig, dim: int):
    """Train by minibatch SGD with early stopping on a held-out split.

    Returns (model, history); history has one record per epoch with the
    full-split training loss and the dev F1 used for early stopping.
    If every feature vector is identical the data carries no signal, so
    a majority-probability model is returned with a warning.
    """
    if not xs:
        raise ValueError("no training examples")
    distinct = {tuple(sorted(x.items())) for x in xs}
    if len(distinct) == 1:
        mean_q = min(max(sum(targets) / len(targets), 1e-6), 1 - 1e-6)
        log.warning("degenerate features: all %d examples share one feature "
                    "vector; falling back to majority probability %.4f",
                    len(xs), mean_q)
        model = SparseLogistic(dim=dim, b=math.log(mean_q / (1 - mean_q)))
        return model, [{"epoch": 0, "train_loss": mean_loss(model, xs, targets),
                        "dev_f1": None, "degenerate": True}]

    rng = random.Random(cfg.seed)
    order = list(range(len(xs)))
    rng.shuffle(order)
    n_dev = int(len(xs) * cfg.dev_fraction)
    dev_idx, train_idx = order[:n_dev], order[n_dev:]
    if not train_idx:
        train_idx, dev_idx = order, []
    tr_xs = [xs[i] for i in train_idx]
    tr_qs = [targets[i] for i in train_idx]
    dv_xs = [xs[i] for i in dev_idx]
    dv_qs = [targets[i] for i in dev_idx]

    polarities = [q >= 0.5 for q in tr_qs]
    use_balanced = cfg.balanced and any(polarities) and not all(polarities)
    if cfg.balanced and not use_balanced:
        log.warning("single-polarity training set; using uniform batches")

    model = SparseLogistic(dim=dim)
    best = model.copy()
    best_score = -math.inf
    has_checkpoint = False
    bad_evals = 0
    batches_per_epoch = max(1, math.ceil(len(tr_xs) / cfg.batch_size))
    history = []
    for epoch in range(cfg.epochs):
        if use_balanced:
            stream = balanced_index_stream(polarities, cfg.batch_size,
                                           seed=cfg.seed * 7919 + epoch)
        else:
            stream = uniform_index_stream(len(tr_xs), cfg.batch_size,
                                          seed=cfg.seed * 7919 + epoch)
        lr = cfg.lr / (1.0 + cfg.lr_decay * epoch)
        for _, batch in zip(range(batches_per_epoch), stream):
            bxs = [tr_xs[i] for i in batch]
            bqs = [tr_qs[i] for i in batch]
            _, gw, gb = model.loss_and_grad(bxs, bqs)
            if cfg.l2:
                model.w *= (1.0 - lr * cfg.l2)
            for i, g in gw.items():
                model.w[i] -= lr * g
            model.b -= lr * gb
        rec = {"epoch": epoch, "train_loss": mean_loss(model, tr_xs, tr_qs)}
        if dv_xs:
            if cfg.early_metric == "loss":
                dev_loss = mean_loss(model, dv_xs, dv_qs)
                rec["dev_loss"] = dev_loss
                score = -dev_loss
            else:
                score = f1_against(model, dv_xs, dv_qs)
                rec["dev_f1"] = score
            if score >= best_score:
                if score > best_score + 1e-12:
                    bad_evals = 0
                else:
                    bad_evals += 1
                if cfg.early_metric == "f1" or score > best_score:
                    # F1 ties keep the later, more confident checkpoint;
                    # loss ties are genuine stalls and keep the old one
                    best_score = score
                    best = model.copy()
                    has_checkpoint = True
            else:
                bad_evals += 1
            history.append(rec)
            if bad_evals > cfg.patience:
                break
        else:
            rec["dev_f1"] = None
            history.append(rec)
    if dv_xs and has_checkpoint:
        model = best
    return model, history
