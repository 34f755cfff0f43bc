"""Discrepancy-aware multi-teacher knowledge distillation.

The softened teacher/student KL is split into two parts per sample:

* non-target loss: KL between the teacher and student softmax vectors
  renormalized over every class except the sample's label,
* target loss: KL between the binary (label vs rest) probabilities taken
  from the full temperature softmax.

Each teacher gets two scalar weights from the class-distribution distance
d_k between its client and the student client: g_k = d_k / sum_j d_j for
the non-target part (farther teachers know more missing classes) and
h_k proportional to 1 / (d_k + epsilon) for the target part (closer
teachers predict the label better). Both loss terms are scaled by tau**2
so the trade-off coefficients stay comparable across temperatures.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import ClassDistribution
from .model import (ModelParams, backprop, cross_entropy_grad,
                    forward, forward_cached)

METRICS = ("L1", "L2", "KL", "JS")

# additive smoothing applied before KL/JS so exact zeros stay finite
SMOOTH_EPS = 1e-6


@dataclass
class KDConfig:
    """Distillation knobs; gamma weights the non-target term, beta the target term."""

    tau: float = 4.0
    gamma: float = 1.0
    beta: float = 3.0
    metric: str = "KL"
    epsilon: float = 1e-4
    tau_sq: bool = True        # scale both KD losses by tau**2
    uniform_g: bool = False    # ablation: replace g with uniform weights
    uniform_h: bool = False    # ablation: replace h with uniform weights

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("gamma and beta must be non-negative")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")


@dataclass
class TeacherEnsemble:
    """Frozen teacher snapshots, their client class distributions, and weights.

    g/h stay None until the ensemble is specialized for one student client;
    they depend on the student's class distribution.
    """

    teachers: list[ModelParams]
    dists: list[ClassDistribution]
    client_ids: list[int]
    g: np.ndarray | None = None
    h: np.ndarray | None = None

    def __post_init__(self):
        if len(self.teachers) != len(self.dists) or len(self.teachers) != len(self.client_ids):
            raise ValueError("teachers, dists, and client_ids must align")
        for w, name in ((self.g, "g"), (self.h, "h")):
            if w is None:
                continue
            w = np.asarray(w, dtype=np.float64)
            if len(w) != len(self.teachers):
                raise ValueError(f"{name} must have one weight per teacher")
            if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must be non-negative and sum to 1")

    @property
    def k(self) -> int:
        return len(self.teachers)

    @classmethod
    def empty(cls) -> "TeacherEnsemble":
        return cls([], [], [])

    def with_weights(self, student_dist: ClassDistribution, cfg: KDConfig) -> "TeacherEnsemble":
        """Ensemble specialized for one student client: g/h filled in."""
        if self.k == 0:
            return self
        g, h = teacher_weights(self.dists, student_dist, cfg.metric, cfg.epsilon)
        if cfg.uniform_g:
            g = np.full(self.k, 1.0 / self.k)
        if cfg.uniform_h:
            h = np.full(self.k, 1.0 / self.k)
        return replace(self, g=g, h=h)


def _smoothed(p: np.ndarray) -> np.ndarray:
    q = p + SMOOTH_EPS
    return q / q.sum()


def discrepancy(a: ClassDistribution, b: ClassDistribution, metric: str) -> float:
    """Distance between two class distributions (L1, L2, KL, or JS).

    KL and JS operate on smoothed, renormalized copies so zero entries
    stay finite; KL(a||b) keeps the given argument order.
    """
    if a.empty or b.empty:
        raise ValueError("discrepancy of an empty distribution is undefined")
    if len(a) != len(b):
        raise ValueError("distributions must have equal length")
    pa, pb = a.proportions, b.proportions
    if metric == "L1":
        return float(np.abs(pa - pb).sum())
    if metric == "L2":
        return float(np.sqrt(((pa - pb) ** 2).sum()))
    if metric == "KL":
        sa, sb = _smoothed(pa), _smoothed(pb)
        return float((sa * np.log(sa / sb)).sum())
    if metric == "JS":
        sa, sb = _smoothed(pa), _smoothed(pb)
        m = 0.5 * (sa + sb)
        return float(0.5 * (sa * np.log(sa / m)).sum() + 0.5 * (sb * np.log(sb / m)).sum())
    raise ValueError(f"unknown metric {metric!r}")


def teacher_weights(teacher_dists: list[ClassDistribution], student_dist: ClassDistribution,
                    metric: str, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-teacher (g, h) weight vectors from the distances to the student.

    g_k = d_k / sum_j d_j (uniform when every distance is zero);
    h_k = (1/(d_k + epsilon)) / sum_j (1/(d_j + epsilon)).
    """
    if not teacher_dists:
        raise ValueError("need at least one teacher")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    d = np.array([discrepancy(t, student_dist, metric) for t in teacher_dists])
    total = d.sum()
    g = np.full(len(d), 1.0 / len(d)) if total == 0 else d / total
    inv = 1.0 / (d + epsilon)
    return g, inv / inv.sum()


def _check_kd_args(student_logits, teacher_logits, targets, weights, tau):
    if tau <= 0:
        raise ValueError("tau must be positive")
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    t = np.asarray(targets, dtype=np.int64)
    if len(t) == 0:
        raise ValueError("batch must be non-empty")
    if len(t) != len(s):
        raise ValueError("targets must match the batch size")
    if t.min() < 0 or t.max() >= s.shape[1]:
        raise ValueError("target out of range")
    teachers = [np.atleast_2d(np.asarray(tl, dtype=np.float64)) for tl in teacher_logits]
    for tl in teachers:
        if tl.shape != s.shape:
            raise ValueError("teacher logits must match student logits shape")
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(teachers):
        raise ValueError("need one weight per teacher")
    return s, teachers, t, w


def _masked_log_softmax(logits: np.ndarray, targets: np.ndarray, tau: float) -> np.ndarray:
    """Log softmax over the non-target classes; -inf at each row's target."""
    z = logits / tau  # fresh array; safe to mutate
    z[np.arange(len(targets)), targets] = -np.inf
    zmax = z.max(axis=1, keepdims=True)
    return z - zmax - np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))


def _nckd_terms(student_logits, teacher_logits, targets, g, tau):
    """Per-sample non-target KD loss and its gradient w.r.t. the student
    logits, both without the tau**2 factor or batch reduction."""
    rows = np.arange(len(targets))
    mask = np.ones_like(student_logits, dtype=bool)
    mask[rows, targets] = False
    ls_s = _masked_log_softmax(student_logits, targets, tau)
    p_s = np.exp(ls_s)  # zero at targets
    ls_s = np.where(mask, ls_s, 0.0)  # drop the -inf target entries
    per_sample = np.zeros(len(targets))
    dlogits = np.zeros_like(student_logits)
    for q_weight, t_logits in zip(g, teacher_logits):
        ls_t = _masked_log_softmax(t_logits, targets, tau)
        q = np.exp(ls_t)  # zero at targets, so those terms vanish
        ls_t = np.where(mask, ls_t, 0.0)
        per_sample += q_weight * (q * (ls_t - ls_s)).sum(axis=1)
        dlogits += q_weight * (p_s - q)
    return per_sample, dlogits / tau


def _binary_log_probs(logits: np.ndarray, targets: np.ndarray, tau: float):
    """Stable (log p_target, log p_rest) from the full temperature softmax."""
    z = logits / tau
    zmax = z.max(axis=1, keepdims=True)
    lse_all = (zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)))[:, 0]
    zm = z.copy()
    rows = np.arange(len(targets))
    zm[rows, targets] = -np.inf
    zmmax = zm.max(axis=1, keepdims=True)
    lse_rest = (zmmax + np.log(np.exp(zm - zmmax).sum(axis=1, keepdims=True)))[:, 0]
    return z[rows, targets] - lse_all, lse_rest - lse_all


def _tckd_terms(student_logits, teacher_logits, targets, h, tau):
    """Per-sample target KD loss and its student-logit gradient, unscaled.

    The gradient is assembled from probability products only (never the
    ratio p_t / p_rest), so it stays bounded even when the student is
    saturated: for j != t it is q_t * p_j - q_rest * p_t * r_j with r the
    non-target renormalized softmax, and at j = t it is
    q_rest * p_t - q_t * p_rest.
    """
    rows = np.arange(len(targets))
    z = student_logits / tau
    zmax = z.max(axis=1, keepdims=True)
    p_full = np.exp(z - zmax)
    p_full /= p_full.sum(axis=1, keepdims=True)
    lp_t, lp_nt = _binary_log_probs(student_logits, targets, tau)
    p_t, p_nt = np.exp(lp_t), np.exp(lp_nt)
    r = np.exp(_masked_log_softmax(student_logits, targets, tau))  # zero at t
    per_sample = np.zeros(len(targets))
    dlogits = np.zeros_like(student_logits)
    for q_weight, t_logits in zip(h, teacher_logits):
        lq_t, lq_nt = _binary_log_probs(t_logits, targets, tau)
        q_t, q_nt = np.exp(lq_t), np.exp(lq_nt)
        per_sample += q_weight * (q_t * (lq_t - lp_t) + q_nt * (lq_nt - lp_nt))
        dz = q_t[:, None] * p_full - (q_nt * p_t)[:, None] * r
        dz[rows, targets] = q_nt * p_t - q_t * p_nt
        dlogits += q_weight * dz
    return per_sample, dlogits / tau


def nckd_loss(student_logits, teacher_logits, targets, g, tau: float) -> float:
    """Weighted non-target-class KD loss, batch-mean, scaled by tau**2.

    With two classes the single non-target probability is 1 for teacher
    and student alike, so the loss is identically zero.
    """
    s, teachers, t, w = _check_kd_args(student_logits, teacher_logits, targets, g, tau)
    if not teachers:
        return 0.0
    per_sample, _ = _nckd_terms(s, teachers, t, w, tau)
    return float(tau * tau * per_sample.mean())


def tckd_loss(student_logits, teacher_logits, targets, h, tau: float) -> float:
    """Weighted target-class (binary) KD loss, batch-mean, scaled by tau**2."""
    s, teachers, t, w = _check_kd_args(student_logits, teacher_logits, targets, h, tau)
    if not teachers:
        return 0.0
    per_sample, _ = _tckd_terms(s, teachers, t, w, tau)
    return float(tau * tau * per_sample.mean())


def total_loss(params: ModelParams, features: np.ndarray, labels: np.ndarray,
               ensemble: TeacherEnsemble | None, cfg: KDConfig) -> tuple[float, ModelParams]:
    """Cross-entropy plus gamma * non-target KD plus beta * target KD.

    Returns the scalar loss and analytic gradients for every parameter.
    Teacher forward passes run on frozen snapshots and contribute no
    parameter gradients of their own. With no teachers, or gamma and beta
    both zero, the result is exactly the cross-entropy path.
    """
    logits, cache = forward_cached(params, features)
    loss, dlogits = cross_entropy_grad(logits, labels)
    use_kd = ensemble is not None and ensemble.k > 0 and (cfg.gamma > 0 or cfg.beta > 0)
    if use_kd:
        if ensemble.g is None or ensemble.h is None:
            raise ValueError("ensemble weights not set; call with_weights() first")
        targets = np.asarray(labels, dtype=np.int64)
        t_logits = [forward(t, features) for t in ensemble.teachers]
        batch = len(targets)
        factor = cfg.tau * cfg.tau if cfg.tau_sq else 1.0
        if cfg.gamma > 0:
            per_sample, dz = _nckd_terms(logits, t_logits, targets, ensemble.g, cfg.tau)
            loss += cfg.gamma * factor * float(per_sample.mean())
            dlogits = dlogits + cfg.gamma * factor * dz / batch
        if cfg.beta > 0:
            per_sample, dz = _tckd_terms(logits, t_logits, targets, ensemble.h, cfg.tau)
            loss += cfg.beta * factor * float(per_sample.mean())
            dlogits = dlogits + cfg.beta * factor * dz / batch
    return loss, backprop(params, cache, dlogits)
