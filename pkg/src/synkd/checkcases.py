"""Registered gradient-check instances: one suite per encoder and per loss.

Every make_case builds a small random float64 instance (hidden sizes <= 6,
sentences <= 5 tokens) and returns (f, params) for the finite-difference
harness in gradcheck. Token ids and targets are constants; everything with
real-valued data is checked.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .distill import (
    combine_syn,
    con_inject_loss,
    dep_inject_loss,
    feat_distill,
    one_hot,
    output_distill_loss,
    reg_loss,
    semantic_lm_loss,
    total_loss,
)
from .encoders import (
    ArcScores,
    ChildSumCell,
    NaryCell,
    Params,
    ScoredSpans,
    StudentEncoder,
    adjacency,
    con_enc_graph,
    dep_edges,
    dep_enc_graph,
    gcn_layer,
    span_order,
    tree_encode,
)
from .gradcheck import rand_param
from .structures import BinTree, score_tree, SpanScores
from .tensor import Tensor

F64 = np.float64


def random_heads(rng, n):
    """Random rooted dependency tree: each node attaches to an earlier node
    of a random permutation, which rules out cycles."""
    perm = list(rng.permutation(n))
    heads = [0] * n
    for k, v in enumerate(perm[1:], start=1):
        heads[v] = perm[int(rng.integers(k))] + 1
    return heads


def random_binary_spans(rng, i, j, n_labels, out):
    out[(i, j)] = int(rng.integers(n_labels))
    if j - i > 1:
        k = int(rng.integers(i + 1, j))
        random_binary_spans(rng, i, k, n_labels, out)
        random_binary_spans(rng, k, j, n_labels, out)


def random_bintree(rng, n, n_labels):
    spans = {}
    random_binary_spans(rng, 0, n, n_labels, spans)
    return BinTree(n, spans)


def weighted_sum(rows, rng):
    """Scalarize a list of (1, d) rows with a fixed random functional."""
    mat = T.concat(rows, axis=0)
    w = Tensor(rng.standard_normal(mat.shape).astype(F64))
    return T.sum_(T.mul(mat, w))


# ----------------------------------------------------------------- encoders

def case_childsum(rng):
    n = int(rng.integers(2, 6))
    in_dim, hid = 3, 2
    p = Params()
    up = ChildSumCell(p, "up", in_dim, hid, rng, dtype=F64)
    down = ChildSumCell(p, "down", in_dim, hid, rng, dtype=F64)
    graph = dep_enc_graph(random_heads(rng, n))
    x = [rand_param(rng, (1, in_dim)) for _ in range(n)]

    def f():
        rows = tree_encode(graph, x, up, down_cell=down, direction="both")
        return weighted_sum(rows, np.random.default_rng(0))

    return f, p.all() + x


def case_nary(rng):
    n = int(rng.integers(2, 6))
    in_dim, hid = 3, 2
    p = Params()
    up = NaryCell(p, "up", in_dim, hid, rng, n_ary=2, dtype=F64)
    bt = random_bintree(rng, n, 2)
    graph, _spans = con_enc_graph(bt)
    x = [rand_param(rng, (1, in_dim)) for _ in range(len(graph.children))]

    def f():
        rows = tree_encode(graph, x, up, direction="bottom-up")
        return weighted_sum(rows, np.random.default_rng(0))

    return f, p.all() + x


def case_gcn(rng):
    n = int(rng.integers(2, 6))
    d = 3
    heads = random_heads(rng, n)
    adj = Tensor(adjacency(n, dep_edges(heads), dtype=F64).data)
    x = rand_param(rng, (n, d))
    ws = [rand_param(rng, (d, d)) for _ in range(2)]
    bs = [rand_param(rng, (d,)) for _ in range(2)]

    def f():
        h = x
        for w, b in zip(ws, bs):
            h = gcn_layer(adj, h, w, b)
        return T.sum_(T.mul(h, Tensor(np.full((n, d), 0.7, dtype=F64))))

    return f, [x] + ws + bs


def case_student_bilstm(rng):
    vocab, emb, hid, layers = 6, 3, 2, 2
    bsz, steps = 2, 3
    p = Params()
    enc = StudentEncoder(p, "s", vocab, emb, hid, n_layers=layers,
                         emb_dropout=0.0, rng=rng, dtype=F64)
    ids = rng.integers(0, vocab, size=(bsz, steps))
    w_top = Tensor(rng.standard_normal((steps * bsz, 2 * hid)).astype(F64))
    w_l1 = Tensor(rng.standard_normal((steps * bsz, hid)).astype(F64))

    def f():
        out = enc.encode_batch(ids)
        return T.add(T.sum_(T.mul(out["top"], w_top)),
                     T.sum_(T.mul(out["l1f"], w_l1)))

    return f, p.all()


# ------------------------------------------------------------------- losses

def case_output_distill(rng):
    b, c = int(rng.integers(1, 4)), int(rng.integers(2, 5))
    y = one_hot(rng.integers(0, c, size=b), c)
    teachers = [rng.dirichlet(np.ones(c), size=b) for _ in range(2)]
    logits = rand_param(rng, (b, c), scale=1.0)
    alpha = float(rng.random())
    return (lambda: output_distill_loss(y, teachers, logits, alpha)), [logits]


def case_feat_distill(rng):
    n = int(rng.integers(1, 6))
    dt, ds, common = 4, 3, 3
    t_mat = Tensor(rng.standard_normal((n, dt)).astype(F64))
    s_mat = rand_param(rng, (n, ds))
    wt = rand_param(rng, (dt, common))
    ws = rand_param(rng, (ds, common))
    f = lambda: feat_distill(t_mat, s_mat,
                             lambda m: T.matmul(m, wt),
                             lambda m: T.matmul(m, ws))
    return f, [s_mat, wt, ws]


def case_syn_combine(rng):
    n, d = int(rng.integers(1, 5)), 3
    a_t = Tensor(rng.standard_normal((n, d)).astype(F64))
    b_t = Tensor(rng.standard_normal((n, d)).astype(F64))
    s = rand_param(rng, (n, d))
    eta = float(rng.random())
    ident = lambda m: m
    f = lambda: combine_syn(feat_distill(a_t, s, ident, ident),
                            feat_distill(b_t, s, ident, ident), eta)
    return f, [s]


def case_semantic_lm(rng):
    h, vocab = 3, 6
    bsz, steps = 2, 3
    student = type("LM", (), {})()
    student.lm_W = rand_param(rng, (h, vocab))
    student.lm_b = rand_param(rng, (vocab,))
    student.lm_begin = rand_param(rng, (1, h))
    l1f = rand_param(rng, (steps * bsz, h))
    targets = [(0, 0, int(rng.integers(vocab))),
               (1, int(rng.integers(1, steps)), int(rng.integers(vocab)))]
    f = lambda: semantic_lm_loss(student, l1f, bsz, targets)
    return f, [l1f, student.lm_W, student.lm_b, student.lm_begin]


def case_dep_inject(rng):
    n, n_labels = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    heads = random_heads(rng, n)
    arc = np.zeros((n, n + 1))
    lab = rng.dirichlet(np.ones(n_labels), size=n)
    for i, h in enumerate(heads):
        arc[i, h] = 1.0
    best = arc.argmax(axis=1)
    scores = ArcScores(rand_param(rng, (n, n + 1), scale=1.0),
                       rand_param(rng, (n, n + 1, n_labels), scale=1.0))
    f = lambda: dep_inject_loss(scores, arc, lab, best)
    return f, [scores.arc_logits, scores.label_logits]


def case_con_inject(rng):
    # redraw until the hinge is active with a safe margin so the finite
    # differences never cross the kink at zero
    for _ in range(100):
        n, n_labels = int(rng.integers(2, 6)), int(rng.integers(1, 3))
        ref = random_bintree(rng, n, n_labels)
        order = span_order(n)
        scored = ScoredSpans(
            n, rand_param(rng, (len(order), n_labels), scale=2.0),
            {span: r for r, span in enumerate(order)})
        val = con_inject_loss(scored, ref)
        if val.item() > 0.05:
            return (lambda: con_inject_loss(scored, ref)), [scored.tensor]
    raise RuntimeError("no active-hinge instance found")


def case_reg(rng):
    ps = [rand_param(rng, (2, 3)), rand_param(rng, (4,))]
    zeta = float(rng.random()) + 0.1
    return (lambda: reg_loss(ps, zeta)), ps


def case_total(rng):
    b, c = 2, 3
    y = one_hot(rng.integers(0, c, size=b), c)
    teachers = [rng.dirichlet(np.ones(c), size=b)]
    logits = rand_param(rng, (b, c), scale=1.0)

    n, d = 3, 3
    t_dep = Tensor(rng.standard_normal((n, d)).astype(F64))
    t_con = Tensor(rng.standard_normal((n, d)).astype(F64))
    s_mat = rand_param(rng, (n, d))

    h, vocab = 3, 5
    student = type("LM", (), {})()
    student.lm_W = rand_param(rng, (h, vocab))
    student.lm_b = rand_param(rng, (vocab,))
    student.lm_begin = rand_param(rng, (1, h))
    l1f = rand_param(rng, (n, h))
    masked = [(0, 0, 1), (0, 2, 3)]

    params = [logits, s_mat, l1f, student.lm_W, student.lm_b, student.lm_begin]
    ident = lambda m: m

    def f():
        out = output_distill_loss(y, teachers, logits, alpha=0.5)
        syn = combine_syn(feat_distill(t_dep, s_mat, ident, ident),
                          feat_distill(t_con, s_mat, ident, ident), 0.5)
        sem = semantic_lm_loss(student, l1f, 1, masked)
        reg = reg_loss(params, 0.2)
        return total_loss(out, syn=syn, sem=sem, reg=reg, lam1=0.6, lam2=0.2)

    return f, params


SUITES = {
    "childsum_treelstm": case_childsum,
    "nary_treelstm": case_nary,
    "gcn": case_gcn,
    "student_bilstm": case_student_bilstm,
    "output_distill": case_output_distill,
    "feat_distill": case_feat_distill,
    "syn_combine": case_syn_combine,
    "semantic_lm": case_semantic_lm,
    "dep_inject": case_dep_inject,
    "con_inject": case_con_inject,
    "reg": case_reg,
    "total": case_total,
}
