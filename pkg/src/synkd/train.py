"""Training orchestration: teacher pre-training, the turn-taking distillation
schedule, evaluation, checkpoints and run logs.

Teachers are trained first and frozen; their class distributions, feature
matrices and structure targets are precomputed once per training set, so the
distillation loop itself never runs a teacher forward pass. All stochasticity
(batch draws, mask sampling, dropout) flows from the single run generator,
which makes saved runs resume bitwise-identically.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .distill import (
    DistillConfig,
    DistillError,
    TeacherSet,
    anneal_alpha,
    combine_syn,
    con_inject_loss,
    dep_inject_loss,
    feat_distill,
    hard_arc_targets,
    mask_ids,
    one_hot,
    output_distill_loss,
    reg_loss,
    sample_mask_positions,
    semantic_lm_loss,
    soft_arc_targets,
    soft_con_target,
    total_loss,
)
from .encoders import StudentModel
from .syntax_data import MASK, DataError
from .tensor import Adam, Tensor


# ---------------------------------------------------------------------------
# schedule

@dataclass
class Schedule:
    """Turn-taking control: early phase up to g1 with the syntax flag flipping
    every g2 iterations, then the joint phase to `total`."""
    total: int = 10_000
    g1: int = 300
    g2: int = 128
    dep_first: bool = True

    def __post_init__(self):
        if not 0 < self.g2 <= self.g1 <= self.total:
            raise ValueError(
                f"need 0 < G2 <= G1 <= T, got T={self.total} G1={self.g1} G2={self.g2}")

    def dep_turn(self, t: int) -> bool:
        """Flag used at iteration t; it toggles after every iteration where
        t mod g2 == 0, so each value is held for g2 consecutive iterations."""
        if t < 1:
            raise ValueError(f"iterations start at 1, got {t}")
        return self.dep_first ^ ((((t - 1) // self.g2) % 2) == 1)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"SYD1"
VERSION = 1


def save_checkpoint(path, state: dict):
    """Binary named-array store: magic, version byte, then per array the
    name length, UTF-8 name, rank, dims and a little-endian f32 payload."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        for name, arr in state.items():
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise ValueError(f"parameter name too long: {name[:40]}...")
            a = np.asarray(arr)
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(bytes([a.ndim]))
            for d in a.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a SYD1 checkpoint")
    if blob[4] != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob[4]}")
    pos, out = 5, {}

    def need(k):
        if pos + k > len(blob):
            raise ValueError(f"{path}: truncated checkpoint")

    while pos < len(blob):
        need(2)
        (ln,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        need(ln + 1)
        name = blob[pos:pos + ln].decode("utf-8")
        pos += ln
        rank = blob[pos]
        pos += 1
        need(4 * rank)
        dims = struct.unpack_from(f"<{rank}I", blob, pos) if rank else ()
        pos += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        need(4 * count)
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
        out[name] = arr.reshape(dims).copy()
        pos += 4 * count
    return out


def params_fingerprint(p) -> str:
    """SHA-256 over names and raw parameter bytes, for bitwise comparisons."""
    h = hashlib.sha256()
    for name in p.names():
        h.update(name.encode("utf-8"))
        h.update(p[name].data.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# run logs

class RunLog:
    """Append-only JSONL metric log: {iteration, split, metric, value}."""

    def __init__(self, path, flush_every=200):
        self.path = path
        self.fh = open(path, "a", encoding="utf-8")
        self.flush_every = flush_every
        self._pending = 0

    def log(self, iteration, split, metric, value):
        row = {"iteration": int(iteration), "split": split,
               "metric": metric, "value": float(value)}
        self.fh.write(json.dumps(row) + "\n")
        self._pending += 1
        if self._pending >= self.flush_every:
            self.fh.flush()
            self._pending = 0

    def close(self):
        self.fh.flush()
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _emit(log, iteration, split, metric, value):
    if log is not None:
        log.log(iteration, split, metric, value)


# ---------------------------------------------------------------------------
# batching

def _length_key(enc):
    return (enc.main.n, enc.partner.n if enc.partner is not None else -1)


class BatchSampler:
    """Length-bucketed batch draws.

    Batches are sampled per iteration (bucket chosen proportionally to size,
    members without replacement) instead of by epoch shuffling, so the sampler
    itself is stateless and resuming only needs the run generator.
    """

    def __init__(self, data):
        if not data:
            raise ValueError("empty training set")
        buckets = {}
        for i, enc in enumerate(data):
            buckets.setdefault(_length_key(enc), []).append(i)
        self.buckets = [np.array(v, dtype=np.int64)
                        for _, v in sorted(buckets.items())]
        sizes = np.array([len(b) for b in self.buckets], dtype=np.float64)
        self.probs = sizes / sizes.sum()

    def draw(self, rng, batch_size):
        k = int(rng.choice(len(self.buckets), p=self.probs))
        bucket = self.buckets[k]
        take = min(batch_size, len(bucket))
        picks = rng.choice(len(bucket), size=take, replace=False)
        return [int(bucket[i]) for i in picks]


# ---------------------------------------------------------------------------
# batched student forward

def _stack_ids(encs, side="main"):
    return np.stack([np.asarray(getattr(e, side).token_ids) for e in encs])


def _pooled(out):
    steps, bsz = out["steps"], out["batch"]
    width = out["top"].shape[1]
    cube = T.reshape(out["top"], (steps, bsz, width))
    return T.mean(cube, axis=0)  # (B, width)


def _tag_logits(head, out, encs):
    steps, bsz = out["steps"], out["batch"]
    flags = np.zeros(steps * bsz, dtype=np.int64)
    for b, enc in enumerate(encs):
        flags[enc.predicate * bsz + b] = 1
    feat = T.concat([out["top"], T.embedding(head.ind, flags)], axis=1)
    return T.add(T.matmul(feat, head.W), head.b)


def student_forward(student, encs, train=False, rng=None):
    """Task logits for one same-length group; also returns the main-side
    encoder output so callers can reuse the representations."""
    if student.task == "pair":
        out_a = student.encoder.encode_batch(_stack_ids(encs), train, rng)
        out_b = student.encoder.encode_batch(_stack_ids(encs, "partner"), train, rng)
        return student.head(_pooled(out_a), _pooled(out_b)), out_a
    out = student.encoder.encode_batch(_stack_ids(encs), train, rng)
    if student.task == "tag":
        return _tag_logits(student.head, out, encs), out
    return student.head(_pooled(out)), out


def example_rows(out, b) -> Tensor:
    """Token representations of batch member b from the step-major output."""
    idx = np.arange(out["steps"]) * out["batch"] + b
    return T.embedding(out["top"], idx)


def gold_rows(student, encs) -> np.ndarray:
    """One-hot targets aligned with the batched logits (step-major for tags)."""
    n_classes = student.codec.n_classes
    if student.task == "tag":
        bsz, steps = len(encs), encs[0].main.n
        ids = np.zeros(steps * bsz, dtype=np.int64)
        for b, enc in enumerate(encs):
            for j, tag in enumerate(enc.tag_ids):
                ids[j * bsz + b] = tag
        return one_hot(ids, n_classes)
    return one_hot([enc.label for enc in encs], n_classes)


# ---------------------------------------------------------------------------
# frozen-teacher signals

class TeacherSignals:
    """Everything the distillation loop needs from the frozen teachers,
    computed once per dataset and indexed by example position."""

    def __init__(self, teachers: TeacherSet, data, cfg: DistillConfig, n_dep_labels):
        self.task_dists = {m.kind: [m.class_distribution(enc) for enc in data]
                           for m in teachers.all}
        self.feats = None
        self.arc_shared = None
        self.arc_by_teacher = None
        self.tstar_shared = None
        self.tstar_by_teacher = None
        if cfg.mode == "A":
            self.feats = {m.kind: [m.reps(enc.main).mat.data.copy() for enc in data]
                          for m in teachers.all}
            return
        if cfg.teacher_mode == "hard":
            if teachers.dep:
                self.arc_shared = [
                    hard_arc_targets(enc.main.heads, enc.main.dep_label_ids,
                                     n_dep_labels)
                    for enc in data]
            if teachers.con:
                self.tstar_shared = [enc.main.bintree for enc in data]
        else:
            self.arc_by_teacher = {
                m.kind: [soft_arc_targets(m, enc.main) for enc in data]
                for m in teachers.dep}
            self.tstar_by_teacher = {
                m.kind: [soft_con_target(m, enc.main) for enc in data]
                for m in teachers.con}

    def dist_rows(self, kind, idxs, task):
        """Teacher distribution rows aligned with the batched student logits."""
        per_ex = [self.task_dists[kind][i] for i in idxs]
        if task != "tag":
            return np.stack([np.asarray(d).reshape(-1) for d in per_ex])
        bsz, steps = len(idxs), per_ex[0].shape[0]
        rows = np.zeros((steps * bsz, per_ex[0].shape[1]))
        for b, d in enumerate(per_ex):
            for j in range(steps):
                rows[j * bsz + b] = d[j]
        return rows

    def arc_targets(self, kind, i):
        if self.arc_shared is not None:
            return self.arc_shared[i]
        return self.arc_by_teacher[kind][i]

    def con_target(self, kind, i):
        if self.tstar_shared is not None:
            return self.tstar_shared[i]
        return self.tstar_by_teacher[kind][i]


# ---------------------------------------------------------------------------
# loss assembly over a batch

def _mean_terms(terms):
    total = terms[0]
    for t_ in terms[1:]:
        total = T.add(total, t_)
    return T.scale(total, 1.0 / len(terms))


def output_loss_batch(student, encs, idxs, signals, kinds, alpha,
                      train=True, rng=None):
    logits, out = student_forward(student, encs, train=train, rng=rng)
    gold = gold_rows(student, encs)
    teacher_rows = [signals.dist_rows(k, idxs, student.task) for k in kinds] \
        if signals is not None else []
    return output_distill_loss(gold, teacher_rows, logits, alpha), out


def syn_loss_batch(student, out, encs, idxs, signals, cfg, models):
    """Mode-A feature regression or mode-B structure injection for one batch,
    averaged over the given teachers (all share one structure type)."""
    structure = models[0].structure
    kinds = [m.kind for m in models]
    per_teacher = {k: [] for k in kinds}
    for b, (enc, i) in enumerate(zip(encs, idxs)):
        rows = example_rows(out, b)
        if cfg.mode == "A":
            for k in kinds:
                t_mat = Tensor(signals.feats[k][i])
                per_teacher[k].append(feat_distill(
                    t_mat, rows,
                    lambda m, k=k: student.project(f"f_t/{k}", m),
                    lambda m: student.project("f_s", m)))
        elif structure == "dep":
            scores = student.arc_scorer(rows)
            for k in kinds:
                arc, lab, best = signals.arc_targets(k, i)
                per_teacher[k].append(dep_inject_loss(scores, arc, lab, best))
        else:
            scored = student.span_scorer(rows)
            for k in kinds:
                per_teacher[k].append(con_inject_loss(scored, signals.con_target(k, i)))
    return _mean_terms([_mean_terms(per_teacher[k]) for k in kinds])


def sem_loss_batch(student, encs, cfg, rng, train=True):
    """Masked-word loss over a batch (per-example sums, averaged over the
    batch); masking and the extra forward run on the main side."""
    ids = _stack_ids(encs)
    targets = []
    for b, enc in enumerate(encs):
        for j in sample_mask_positions(enc.main.n, cfg.mask_ratio, rng):
            targets.append((b, j, int(ids[b, j])))
    masked = mask_ids(ids, targets, MASK)
    out = student.encoder.encode_batch(masked, train=train, rng=rng)
    loss = semantic_lm_loss(student, out["l1f"], len(encs), targets)
    return T.scale(loss, 1.0 / len(encs))


# ---------------------------------------------------------------------------
# prediction and metrics

def _argmax_rows(logits_data):
    return logits_data.argmax(axis=-1)


def predict(model, data):
    """Task predictions; class ids for cls/pair, tag-id arrays for tag.

    The student path consumes token ids (plus the task's predicate input)
    only — no tree annotation is touched.
    """
    if not data:
        raise ValueError("empty evaluation set")
    preds = [None] * len(data)
    if isinstance(model, StudentModel):
        groups = {}
        for i, enc in enumerate(data):
            groups.setdefault(_length_key(enc), []).append(i)
        for key in sorted(groups):
            idxs = groups[key]
            for lo in range(0, len(idxs), 128):
                chunk = idxs[lo:lo + 128]
                encs = [data[i] for i in chunk]
                logits, out = student_forward(model, encs)
                if model.task == "tag":
                    steps, bsz = out["steps"], out["batch"]
                    lab = _argmax_rows(logits.data).reshape(steps, bsz)
                    for b, i in enumerate(chunk):
                        preds[i] = lab[:, b].copy()
                else:
                    lab = _argmax_rows(logits.data)
                    for b, i in enumerate(chunk):
                        preds[i] = int(lab[b])
        return preds
    for i, enc in enumerate(data):
        logits = model.logits(enc)
        if model.task == "tag":
            preds[i] = _argmax_rows(logits.data)
        else:
            preds[i] = int(_argmax_rows(logits.data.reshape(-1)[None, :])[0])
    return preds


def classification_metrics(golds, preds) -> dict:
    golds = np.asarray(golds)
    preds = np.asarray(preds)
    acc = 100.0 * float((golds == preds).mean())
    f1s = []
    for c in sorted(set(golds.tolist()) | set(preds.tolist())):
        tp = int(((preds == c) & (golds == c)).sum())
        fp = int(((preds == c) & (golds != c)).sum())
        fn = int(((preds != c) & (golds == c)).sum())
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
    return {"accuracy": acc, "macro_f1": 100.0 * float(np.mean(f1s))}


def tagging_metrics(gold_seqs, pred_seqs, o_id) -> dict:
    correct = total = tp = fp = fn = 0
    for gold, pred in zip(gold_seqs, pred_seqs):
        for g, p in zip(gold, pred):
            total += 1
            correct += int(g == p)
            if p == g and g != o_id:
                tp += 1
            else:
                if p != o_id:
                    fp += 1
                if g != o_id:
                    fn += 1
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return {"accuracy": 100.0 * correct / total, "token_f1": 100.0 * f1}


def evaluate(model, data) -> dict:
    """Deterministic dev/test metrics; accuracy+macro-F1 for classification,
    span-agnostic token F1 for tagging."""
    preds = predict(model, data)
    if model.task == "tag":
        o_id = model.codec.tags.stoi.get("O", -1)
        return tagging_metrics([enc.tag_ids for enc in data], preds, o_id)
    return classification_metrics([enc.label for enc in data], preds)


def dev_metric_key(task):
    return "token_f1" if task == "tag" else "accuracy"


# ---------------------------------------------------------------------------
# run state

@dataclass
class RunState:
    seed: int
    t: int = 0
    rng: np.random.Generator = None
    adam: Adam = None
    history: list = field(default_factory=list)
    best_metric: float = -math.inf
    best_iter: int = -1
    best_params: dict | None = None
    bad_evals: int = 0
    trace: list = field(default_factory=list)
    stopped: bool = False

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)


def save_run_state(run_dir, model, state: RunState):
    os.makedirs(run_dir, exist_ok=True)
    save_checkpoint(os.path.join(run_dir, "params.syd1"), model.p.state_dict())
    if state.best_params is not None:
        save_checkpoint(os.path.join(run_dir, "best.syd1"), state.best_params)
    adam_state = state.adam.state if state.adam is not None else {}
    if adam_state:
        names = model.p.names()
        moments = {}
        for name, m, v in zip(names, adam_state["m"], adam_state["v"]):
            moments[f"m/{name}"] = m
            moments[f"v/{name}"] = v
        save_checkpoint(os.path.join(run_dir, "adam.syd1"), moments)
    meta = {
        "seed": state.seed,
        "t": state.t,
        "rng_state": state.rng.bit_generator.state,
        "history": state.history,
        "best_metric": state.best_metric,
        "best_iter": state.best_iter,
        "bad_evals": state.bad_evals,
        "trace": state.trace,
        "stopped": state.stopped,
        "adam_t": adam_state.get("t", 0),
        "adam_skipped": adam_state.get("skipped", 0),
        "lr": state.adam.lr if state.adam is not None else None,
    }
    with open(os.path.join(run_dir, "state.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh)


def load_run_state(run_dir, model, lr=None) -> RunState:
    """Restore parameters, optimizer moments and the generator; the model must
    already have the same parameter set (including projections) registered."""
    with open(os.path.join(run_dir, "state.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    model.p.load_state_dict(load_checkpoint(os.path.join(run_dir, "params.syd1")))
    adam = Adam(model.parameters(), lr=lr if lr is not None else meta["lr"])
    adam_path = os.path.join(run_dir, "adam.syd1")
    if os.path.exists(adam_path) and meta["adam_t"] > 0:
        moments = load_checkpoint(adam_path)
        names = model.p.names()
        adam.state = {
            "m": [moments[f"m/{n}"].astype(p.data.dtype)
                  for n, p in zip(names, model.parameters())],
            "v": [moments[f"v/{n}"].astype(p.data.dtype)
                  for n, p in zip(names, model.parameters())],
            "t": meta["adam_t"],
            "skipped": meta["adam_skipped"],
        }
    rng = np.random.default_rng(meta["seed"])
    rng.bit_generator.state = meta["rng_state"]
    best_path = os.path.join(run_dir, "best.syd1")
    best = load_checkpoint(best_path) if os.path.exists(best_path) else None
    return RunState(
        seed=meta["seed"], t=meta["t"], rng=rng, adam=adam,
        history=meta["history"], best_metric=meta["best_metric"],
        best_iter=meta["best_iter"], best_params=best,
        bad_evals=meta["bad_evals"],
        trace=[tuple(x) for x in meta["trace"]], stopped=meta["stopped"])


# ---------------------------------------------------------------------------
# optimization helpers

def _optimize(state: RunState, build_loss, what):
    """One update: forward, finiteness check, backward, Adam step, trace."""
    state.adam.zero_grad()
    with T.Tape() as tape:
        loss = build_loss()
        val = float(loss.data)
        if not np.isfinite(val):
            raise FloatingPointError(
                f"iteration {state.t + 1}: non-finite {what} loss ({val})")
        # a loss that degenerated to a constant (e.g. every hinge in the
        # batch at zero) has no gradient; the step is a no-op
        if tape.contains(loss):
            tape.backward(loss)
            state.adam.step()
    state.trace.append((state.t + 1, what))
    return val


def _eval_and_stop(model, state, dev_data, eval_every, patience, log) -> bool:
    """Early-stopping bookkeeping; returns True when patience is exhausted."""
    if dev_data is None or state.t % eval_every != 0:
        return False
    metrics = evaluate(model, dev_data)
    key = dev_metric_key(model.task)
    for name, value in metrics.items():
        _emit(log, state.t, "dev", name, value)
    state.history.append({"iteration": state.t, "metric": key,
                          "value": metrics[key]})
    if metrics[key] > state.best_metric:
        state.best_metric = metrics[key]
        state.best_iter = state.t
        state.best_params = model.p.state_dict()
        state.bad_evals = 0
    else:
        state.bad_evals += 1
    return state.bad_evals >= patience


# ---------------------------------------------------------------------------
# teacher pre-training

def train_teacher(model, train_data, dev_data, *, iters=2000, batch_size=32,
                  lr=1e-3, eval_every=200, patience=10, seed=0, log=None,
                  co_train_struct=False) -> RunState:
    """Supervised pre-training of one tree teacher with early stopping.

    With co_train_struct the teacher's arc/label (dep) or span (con) head is
    fitted to the input parses alongside the task loss, enabling soft
    structure targets during distillation.
    """
    for enc in list(train_data) + list(dev_data or []):
        if model.structure == "dep" and enc.main.heads is None:
            raise DataError("teacher needs dependency annotation")
        if model.structure == "con" and enc.main.bintree is None:
            raise DataError("teacher needs constituency annotation")
    if co_train_struct and not hasattr(model, "struct_head"):
        model.add_structure_head()
    state = RunState(seed=seed, adam=Adam(model.parameters(), lr=lr))
    _emit(log, 0, "train", "n_params", model.p.n_scalars())
    sampler = BatchSampler(train_data)
    n_dep = len(model.codec.dep_labels)
    while state.t < iters:
        idxs = sampler.draw(state.rng, batch_size)
        encs = [train_data[i] for i in idxs]

        def build_loss():
            terms = []
            for enc in encs:
                logits = model.logits(enc, train=True, rng=state.rng)
                gold = gold_rows(model, [enc]) if model.task != "tag" else \
                    one_hot(enc.tag_ids, model.codec.n_classes)
                terms.append(output_distill_loss(gold, [], logits, alpha=1.0))
                if co_train_struct:
                    reps = model.reps(enc.main, train=True, rng=state.rng).mat
                    if model.structure == "dep":
                        arc, lab, best = hard_arc_targets(
                            enc.main.heads, enc.main.dep_label_ids, n_dep)
                        terms.append(dep_inject_loss(
                            model.struct_head(reps), arc, lab, best))
                    else:
                        terms.append(con_inject_loss(
                            model.struct_head(reps), enc.main.bintree))
            return _mean_terms(terms)

        val = _optimize(state, build_loss, f"teacher/{model.kind}")
        state.t += 1
        _emit(log, state.t, "train", "loss", val)
        if _eval_and_stop(model, state, dev_data, eval_every, patience, log):
            state.stopped = True
            break
    if state.best_params is not None:
        model.p.load_state_dict(state.best_params)
    return state


# ---------------------------------------------------------------------------
# distillation

def prepare_student(student, teachers, cfg, proj_dim=None):
    """Register mode-A projection parameters (idempotent); must run before the
    optimizer or any checkpoint of the student is created."""
    if teachers is not None and cfg.mode == "A" and cfg.lam1 > 0:
        for m in teachers.all:
            student.add_projection(m.kind, m.rep_dim,
                                   proj_dim or student.rep_dim)


def distill_student(student, teachers, train_data, dev_data,
                    cfg: DistillConfig = None, sched: Schedule = None, *,
                    batch_size=32, lr=1e-5, eval_every=200, patience=10,
                    seed=0, log=None, state=None, signals=None,
                    proj_dim=None, stop_after=None) -> RunState:
    """Algorithm-1 turn-taking distillation (teachers=None trains the plain
    supervised student with the same plumbing).

    Early phase (t <= G1): per batch optimize L_sem, then per teacher in the
    fixed visiting order optimize L_output and, per the G2 flag, that
    teacher's dependency or constituency syntax loss (plus L_reg). Late
    phase: one L_all step per batch. `stop_after` suspends mid-run without
    restoring the best checkpoint, for save/resume.
    """
    cfg = cfg or DistillConfig()
    sched = sched or Schedule()
    if teachers is not None:
        student_vocab = student.codec.vocab.itos
        for m in teachers.all:
            if m.codec.vocab.itos != student_vocab:
                raise DistillError(f"teacher/student vocab mismatch ({m.kind})")
        prepare_student(student, teachers, cfg, proj_dim)
        if signals is None:
            signals = TeacherSignals(teachers, train_data, cfg,
                                     len(student.codec.dep_labels))
    if state is None:
        state = RunState(seed=seed, adam=Adam(student.parameters(), lr=lr))
    sampler = BatchSampler(train_data)
    reg_params = student.parameters()

    while state.t < sched.total:
        if stop_after is not None and state.t >= stop_after:
            return state
        idxs = sampler.draw(state.rng, batch_size)
        encs = [train_data[i] for i in idxs]
        t_now = state.t + 1
        alpha = cfg.alpha_fixed if cfg.alpha_fixed is not None \
            else anneal_alpha(t_now, sched.total)
        rng = state.rng
        parts = {"loss_output": 0.0, "loss_syn": 0.0, "loss_sem": 0.0}

        if teachers is None:
            parts["loss_output"] = _optimize(state, lambda: output_loss_batch(
                student, encs, idxs, None, [], 1.0, rng=rng)[0], "supervised")
        elif t_now <= sched.g1:
            if cfg.lam2 > 0:
                parts["loss_sem"] = _optimize(
                    state, lambda: sem_loss_batch(student, encs, cfg, rng), "sem")
            dep_turn = sched.dep_turn(t_now)
            out_vals, syn_vals = [], []
            for m in teachers.all:
                out_vals.append(_optimize(state, lambda m=m: output_loss_batch(
                    student, encs, idxs, signals, [m.kind], alpha, rng=rng)[0],
                    f"output/{m.kind}"))
                takes_turn = (m.structure == "dep") == dep_turn
                if cfg.lam1 > 0 and takes_turn:
                    def syn_plus_reg(m=m):
                        _, out = student_forward(student, encs, train=True, rng=rng)
                        syn = syn_loss_batch(student, out, encs, idxs,
                                             signals, cfg, [m])
                        if cfg.zeta > 0:
                            return T.add(syn, reg_loss(reg_params, cfg.zeta))
                        return syn
                    syn_vals.append(_optimize(state, syn_plus_reg,
                                              f"{m.structure}/{m.kind}"))
            parts["loss_output"] = float(np.mean(out_vals))
            if syn_vals:
                parts["loss_syn"] = float(np.mean(syn_vals))
        else:
            def all_loss():
                kinds = [m.kind for m in teachers.all]
                out_loss, out = output_loss_batch(
                    student, encs, idxs, signals, kinds, alpha, rng=rng)
                parts["loss_output"] = float(out_loss.data)
                syn = sem = reg = None
                if cfg.lam1 > 0:
                    # a structure type with no teachers (or zero weight under
                    # eta) drops out; a lone group keeps full weight
                    dep_t = teachers.dep if cfg.eta > 0.0 else []
                    con_t = teachers.con if cfg.eta < 1.0 else []
                    if dep_t and con_t:
                        syn = combine_syn(
                            syn_loss_batch(student, out, encs, idxs,
                                           signals, cfg, dep_t),
                            syn_loss_batch(student, out, encs, idxs,
                                           signals, cfg, con_t),
                            cfg.eta)
                    elif dep_t or con_t:
                        syn = syn_loss_batch(student, out, encs, idxs,
                                             signals, cfg, dep_t or con_t)
                if syn is not None:
                    parts["loss_syn"] = float(syn.data)
                    if cfg.zeta > 0:
                        reg = reg_loss(reg_params, cfg.zeta)
                if cfg.lam2 > 0:
                    sem = sem_loss_batch(student, encs, cfg, rng)
                    parts["loss_sem"] = float(sem.data)
                return total_loss(out_loss, syn=syn, sem=sem, reg=reg,
                                  lam1=cfg.lam1, lam2=cfg.lam2)

            _optimize(state, all_loss, "all")

        state.t += 1
        for name, value in parts.items():
            _emit(log, state.t, "train", name, value)
        if _eval_and_stop(student, state, dev_data, eval_every, patience, log):
            state.stopped = True
            break

    if state.best_params is not None:
        student.p.load_state_dict(state.best_params)
    return state
