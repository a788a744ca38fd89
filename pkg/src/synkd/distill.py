"""Distillation and auxiliary losses, teacher ensembling, annealing schedule.

Covers output distillation against an annealed teacher/gold mixture, feature
regression (mode A), the masked-word semantic loss, structure injection
(mode B: arc/label cross-entropy plus a CYK structured hinge), and L2
regularization over the student parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .structures import BinTree, SpanScores, cyk_augmented, cyk_max, hamming, score_tree
from .tensor import Tensor


class DistillError(ValueError):
    pass


@dataclass
class DistillConfig:
    eta: float = 0.5
    lam1: float = 0.6
    lam2: float = 0.2
    zeta: float = 0.2
    total_iters: int = 10_000
    mode: str = "B"              # syntax injection: A = features, B = structures
    teacher_mode: str = "hard"   # arc/label/span targets: soft heads or parse one-hots
    mask_ratio: float = 0.15
    temperature: float = 1.0
    alpha_fixed: float | None = None  # overrides the linear schedule when set

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise DistillError(f"eta must be in [0, 1], got {self.eta}")
        if self.lam1 < 0 or self.lam2 < 0 or self.zeta < 0:
            raise DistillError("lam1, lam2 and zeta must be non-negative")
        if self.mode not in ("A", "B"):
            raise DistillError(f"injection mode must be A or B, got {self.mode!r}")
        if self.teacher_mode not in ("soft", "hard"):
            raise DistillError(f"teacher mode must be soft or hard, got {self.teacher_mode!r}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise DistillError(f"mask ratio must be in (0, 1), got {self.mask_ratio}")
        if self.temperature <= 0:
            raise DistillError(f"temperature must be positive, got {self.temperature}")
        if self.total_iters < 1:
            raise DistillError("total_iters must be >= 1")
        if self.alpha_fixed is not None and not 0.0 <= self.alpha_fixed <= 1.0:
            raise DistillError(f"alpha_fixed must be in [0, 1], got {self.alpha_fixed}")

    def alpha(self, t: int) -> float:
        if self.alpha_fixed is not None:
            return self.alpha_fixed
        return anneal_alpha(t, self.total_iters)


@dataclass
class TeacherSet:
    """Frozen, pre-trained teachers grouped by structure type."""
    dep: list = field(default_factory=list)
    con: list = field(default_factory=list)
    frozen: bool = True

    def __post_init__(self):
        for m in self.dep:
            if m.structure != "dep":
                raise DistillError(f"{m.kind} is not a dependency teacher")
        for m in self.con:
            if m.structure != "con":
                raise DistillError(f"{m.kind} is not a constituency teacher")

    @property
    def all(self):
        return list(self.dep) + list(self.con)

    def __len__(self):
        return len(self.dep) + len(self.con)


def anneal_alpha(t: int, total: int) -> float:
    """Linear teacher annealing: gold weight grows 0 -> 1 over training."""
    if total == 0:
        raise DistillError("annealing needs total iterations > 0")
    if not 0 <= t <= total:
        raise DistillError(f"iteration {t} outside [0, {total}]")
    return t / total


def apply_temperature(dist: np.ndarray, temperature: float) -> np.ndarray:
    """Sharpen/flatten a distribution as softmax(log p / temperature)."""
    if temperature == 1.0:
        return dist
    p = np.power(np.maximum(dist, 1e-12), 1.0 / temperature)
    return p / p.sum(axis=-1, keepdims=True)


def _check_normalized(name, arr):
    s = np.asarray(arr).sum(axis=-1)
    if np.abs(s - 1.0).max() > 1e-4:
        raise DistillError(f"{name} rows must sum to 1 (max deviation {np.abs(s - 1).max():.2e})")


def output_distill_loss(y, teacher_dists, student_logits: Tensor, alpha: float) -> Tensor:
    """Cross-entropy against the annealed mixture alpha*Y + (1-alpha)*mean(P_t).

    y and each teacher distribution are (B, C) arrays; student_logits is the
    (B, C) logit tensor. With no teachers the target is the gold one-hot.
    Returns the batch mean.
    """
    y = np.asarray(y, dtype=np.float64)
    _check_normalized("gold one-hot", y)
    if teacher_dists:
        for d in teacher_dists:
            if np.asarray(d).shape != y.shape:
                raise DistillError(
                    f"teacher distribution shape {np.asarray(d).shape} != {y.shape}")
            _check_normalized("teacher distribution", d)
        mix = np.mean([np.asarray(d, dtype=np.float64) for d in teacher_dists], axis=0)
        target = alpha * y + (1.0 - alpha) * mix
    else:
        target = y
    log_p = T.log(T.softmax(student_logits, axis=-1))
    target_t = Tensor(target.astype(log_p.dtype))
    return T.scale(T.mean(T.sum_(T.mul(target_t, log_p), axis=1)), -1.0)


def feat_distill(teacher_mat: Tensor, student_mat: Tensor, f_t, f_s) -> Tensor:
    """0.5 * sum_j ||f_t(r_j^tree) - f_s(r_j^s)||^2 over aligned token rows."""
    if teacher_mat.shape[0] != student_mat.shape[0]:
        raise DistillError(
            f"row mismatch: teacher {teacher_mat.shape[0]} vs student {student_mat.shape[0]}")
    diff = T.sub(f_t(teacher_mat), f_s(student_mat))
    return T.scale(T.sum_(T.mul(diff, diff)), 0.5)


def combine_syn(l_dep, l_con, eta: float):
    """eta * L_dep + (1 - eta) * L_con; endpoints pass one side through exactly."""
    if not 0.0 <= eta <= 1.0:
        raise DistillError(f"eta must be in [0, 1], got {eta}")
    if eta == 0.0:
        return l_con
    if eta == 1.0:
        return l_dep
    if isinstance(l_dep, Tensor) or isinstance(l_con, Tensor):
        return T.add(T.scale(l_dep, eta), T.scale(l_con, 1.0 - eta))
    return eta * l_dep + (1.0 - eta) * l_con


def ce_sum(logits: Tensor, targets) -> Tensor:
    """Sum of -log softmax(logits)[k, target_k] over rows."""
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if targets.shape != (n,):
        raise DistillError(f"target shape {targets.shape} != ({n},)")
    log_p = T.log(T.softmax(logits, axis=-1))
    picked = T.take(log_p, np.arange(n) * c + targets)
    return T.scale(T.sum_(picked), -1.0)


def sample_mask_positions(n: int, ratio: float, rng: np.random.Generator):
    """Each position masked independently at `ratio`; at least one forced."""
    if n < 1:
        raise DistillError("empty sentence")
    pos = [j for j in range(n) if rng.random() < ratio]
    if not pos:
        pos = [int(rng.integers(n))]
    return pos


def semantic_lm_loss(student, l1f: Tensor, batch: int, targets) -> Tensor:
    """Masked-word prediction from the prior-word forward state.

    l1f: (T*B, h) step-major layer-1 forward states computed over the MASKED
    input ids. targets: iterable of (b, j, token_id) for masked positions;
    position 0 is predicted from the learned begin state. Returns the sum of
    cross-entropies (not the mean), one term per masked position.
    """
    targets = list(targets)
    if not targets:
        return Tensor(np.array(0.0, dtype=l1f.dtype))
    loss = None
    prior = [(b, j, tok) for b, j, tok in targets if j > 0]
    begin = [(b, j, tok) for b, j, tok in targets if j == 0]
    if prior:
        rows = np.array([(j - 1) * batch + b for b, j, _ in prior], dtype=np.int64)
        logits = T.add(T.matmul(T.embedding(l1f, rows), student.lm_W), student.lm_b)
        loss = ce_sum(logits, [tok for _, _, tok in prior])
    if begin:
        k = len(begin)
        tile = Tensor(np.ones((k, 1), dtype=l1f.dtype))
        logits = T.add(T.matmul(T.matmul(tile, student.lm_begin), student.lm_W),
                       student.lm_b)
        b_loss = ce_sum(logits, [tok for _, _, tok in begin])
        loss = b_loss if loss is None else T.add(loss, b_loss)
    return loss


def mask_ids(ids: np.ndarray, positions, mask_id: int) -> np.ndarray:
    out = np.array(ids, dtype=np.int64, copy=True)
    for b, j, _ in positions:
        out[b, j] = mask_id
    return out


def hard_arc_targets(heads, dep_label_ids, n_labels):
    """One-hot arc/label targets straight from the parse."""
    n = len(heads)
    arc = np.zeros((n, n + 1), dtype=np.float64)
    lab = np.zeros((n, n_labels), dtype=np.float64)
    for i, h in enumerate(heads):
        arc[i, h] = 1.0
        lab[i, dep_label_ids[i]] = 1.0
    return arc, lab, np.asarray(heads, dtype=np.int64)


def soft_arc_targets(teacher, side):
    """Teacher head's predicted arc distribution and its argmax-arc labels."""
    scores = teacher.struct_head(teacher.reps(side).mat)
    arc = T.softmax(scores.arc_logits, axis=1).data.astype(np.float64)
    best = arc.argmax(axis=1)
    n = side.n
    lab_all = T.softmax(scores.label_logits, axis=-1).data.astype(np.float64)
    lab = lab_all[np.arange(n), best, :]
    return arc, lab, best


def soft_con_target(teacher, side) -> BinTree:
    """The teacher span scorer's CYK argmax tree, used as T* in soft mode."""
    scored = teacher.struct_head(teacher.reps(side).mat)
    tree, _ = cyk_max(SpanScores(scored.n, scored.to_table()))
    return tree


def dep_inject_loss(student_scores, teacher_arc, teacher_label, teacher_best) -> Tensor:
    """Arc cross-entropy over every dependent plus label cross-entropy at the
    teacher's best arc per dependent."""
    arc_logits = student_scores.arc_logits
    n, cols = arc_logits.shape
    teacher_arc = np.asarray(teacher_arc, dtype=np.float64)
    teacher_label = np.asarray(teacher_label, dtype=np.float64)
    teacher_best = np.asarray(teacher_best, dtype=np.int64)
    if teacher_arc.shape != (n, cols):
        raise DistillError(f"arc target shape {teacher_arc.shape} != {(n, cols)}")
    n_labels = student_scores.label_logits.shape[2]
    if teacher_label.shape != (n, n_labels):
        raise DistillError(f"label target shape {teacher_label.shape} != {(n, n_labels)}")
    _check_normalized("arc target", teacher_arc)
    _check_normalized("label target", teacher_label)

    log_arc = T.log(T.softmax(arc_logits, axis=1))
    arc_term = T.scale(T.sum_(T.mul(Tensor(teacher_arc.astype(log_arc.dtype)), log_arc)), -1.0)

    log_lab = T.log(T.softmax(student_scores.label_logits, axis=-1))
    flat = (np.arange(n) * cols + teacher_best)[:, None] * n_labels + np.arange(n_labels)
    picked = T.take(log_lab, flat.reshape(-1))
    lab_term = T.scale(T.sum_(T.mul(Tensor(teacher_label.reshape(-1).astype(log_lab.dtype)),
                                    picked)), -1.0)
    return T.add(arc_term, lab_term)


def con_inject_loss(scored, t_star: BinTree) -> Tensor:
    """Structured hinge max(0, max_t [Scr(t) + hamming(t, T*)] - Scr(T*)).

    The max runs through the hamming-augmented CYK chart; gradients flow into
    the scores of the offending tree's spans (+) and the reference spans (-).
    """
    if t_star.n != scored.n:
        raise DistillError(f"reference length {t_star.n} != scored length {scored.n}")
    table = scored.to_table()
    s = SpanScores(scored.n, table)
    t_hat, aug_score = cyk_augmented(s, t_star)
    margin = aug_score - score_tree(s, t_star)
    if margin <= 0:
        return Tensor(np.array(0.0, dtype=scored.tensor.dtype))

    n_labels = scored.n_labels

    def gather_sum(tree):
        flat = np.array([scored.index[(i, j)] * n_labels + l
                         for (i, j), l in tree.spans.items()], dtype=np.int64)
        return T.sum_(T.take(scored.tensor, flat))

    delta = Tensor(np.array(float(hamming(t_hat, t_star)), dtype=scored.tensor.dtype))
    return T.add(T.sub(gather_sum(t_hat), gather_sum(t_star)), delta)


def reg_loss(params, zeta: float) -> Tensor:
    """(zeta / 2) * ||Theta||^2 over the given parameter tensors."""
    total = None
    for p in params:
        sq = T.sum_(T.mul(p, p))
        total = sq if total is None else T.add(total, sq)
    if total is None:
        return Tensor(np.array(0.0))
    return T.scale(total, zeta / 2.0)


def total_loss(output: Tensor, syn=None, sem=None, reg=None,
               lam1: float = 0.6, lam2: float = 0.2) -> Tensor:
    """L_all = L_output + lam1 * L_syn + lam2 * L_sem (+ L_reg)."""
    for name, part in (("output", output), ("syn", syn), ("sem", sem), ("reg", reg)):
        if part is not None and not np.isfinite(np.asarray(part.data)).all():
            raise FloatingPointError(f"non-finite {name} loss component")
    loss = output
    if syn is not None:
        loss = T.add(loss, T.scale(syn, lam1))
    if sem is not None:
        loss = T.add(loss, T.scale(sem, lam2))
    if reg is not None:
        loss = T.add(loss, reg)
    return loss


def one_hot(labels, n_classes) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out
