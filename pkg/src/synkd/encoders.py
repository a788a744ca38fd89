"""Neural encoders and heads.

Tree teachers (Child-Sum TreeLSTM over dependency trees, N-ary TreeLSTM over
binarized constituency trees, gated GCNs over either graph), the 3-layer
BiLSTM student, task heads, and the two structure-scoring heads (biaffine
arc/label scorer, span scorer). All parameters live in per-model Params
registries so the full parameter vector is enumerable for regularization
and checkpointing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .structures import BinTree, binarize
from .syntax_data import DataError, Example, LabelVocab, Vocab
from .tensor import Tensor


class Params:
    """Ordered name -> Tensor registry; insertion order fixes checkpoint order."""

    def __init__(self):
        self.tensors = {}

    def add(self, name, shape, rng=None, init="xavier", dtype=np.float32):
        if name in self.tensors:
            raise ValueError(f"duplicate parameter {name!r}")
        if init == "xavier":
            t = T.xavier(shape, rng, dtype=dtype)
        elif init == "zeros":
            t = T.zeros(shape, dtype=dtype, requires_grad=True)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.tensors[name] = t
        return t

    def __getitem__(self, name):
        return self.tensors[name]

    def all(self):
        return list(self.tensors.values())

    def names(self):
        return list(self.tensors.keys())

    def n_scalars(self):
        return sum(t.size for t in self.tensors.values())

    def state_dict(self):
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_state_dict(self, state):
        missing = set(self.tensors) - set(state)
        extra = set(state) - set(self.tensors)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for k, t in self.tensors.items():
            arr = np.asarray(state[k])
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {k!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.astype(t.data.dtype)


@dataclass
class CellState:
    h: Tensor  # (1, hidden)
    c: Tensor  # (1, hidden)


@dataclass
class NodeReps:
    mat: Tensor  # (n, d)
    source: str  # dep-tree | con-tree | student

    @property
    def n(self):
        return self.mat.shape[0]

    @property
    def dim(self):
        return self.mat.shape[1]


def _zero_state(hid, dtype):
    z = Tensor(np.zeros((1, hid), dtype=dtype))
    return CellState(z, z)


# ---------------------------------------------------------------------------
# tree cells

class ChildSumCell:
    """Child-Sum TreeLSTM cell: gates from the summed child state, one forget
    gate per child computed from that child's own hidden state.

    Children are folded in a canonical byte order, so the output is bitwise
    invariant under sibling permutations despite float addition being
    non-associative.
    """

    GATES = ("i", "f", "o", "u")

    def __init__(self, p: Params, prefix, in_dim, hid, rng, dtype=np.float32):
        self.hid = hid
        self.dtype = dtype
        self.W, self.U, self.b = {}, {}, {}
        for g in self.GATES:
            self.W[g] = p.add(f"{prefix}/W{g}", (in_dim, hid), rng, dtype=dtype)
            self.U[g] = p.add(f"{prefix}/U{g}", (hid, hid), rng, dtype=dtype)
            self.b[g] = p.add(f"{prefix}/b{g}", (hid,), init="zeros", dtype=dtype)

    def step(self, x: Tensor, children) -> CellState:
        if x.shape[1] != self.W["i"].shape[0]:
            raise ValueError(f"input dim {x.shape[1]} != cell in_dim "
                             f"{self.W['i'].shape[0]}")
        children = sorted(children,
                          key=lambda s: (s.h.data.tobytes(), s.c.data.tobytes()))
        if children:
            hbar = children[0].h
            for ch in children[1:]:
                hbar = T.add(hbar, ch.h)
        else:
            hbar = Tensor(np.zeros((1, self.hid), dtype=self.dtype))

        def gate(g, h):
            return T.add(T.add(T.matmul(x, self.W[g]), T.matmul(h, self.U[g])), self.b[g])

        i = T.sigmoid(gate("i", hbar))
        o = T.sigmoid(gate("o", hbar))
        u = T.tanh(gate("u", hbar))
        c = T.mul(i, u)
        for ch in children:
            f = T.sigmoid(gate("f", ch.h))
            c = T.add(c, T.mul(f, ch.c))
        return CellState(T.mul(o, T.tanh(c)), c)


class NaryCell:
    """N-ary TreeLSTM cell with per-branch U matrices and per-(child, branch)
    forget matrices; absent children contribute zero state."""

    def __init__(self, p: Params, prefix, in_dim, hid, rng, n_ary=2, dtype=np.float32):
        self.hid = hid
        self.n_ary = n_ary
        self.dtype = dtype
        self.W, self.b, self.U = {}, {}, {}
        for g in ("i", "o", "u", "f"):
            self.W[g] = p.add(f"{prefix}/W{g}", (in_dim, hid), rng, dtype=dtype)
            self.b[g] = p.add(f"{prefix}/b{g}", (hid,), init="zeros", dtype=dtype)
        for g in ("i", "o", "u"):
            self.U[g] = [p.add(f"{prefix}/U{g}{q}", (hid, hid), rng, dtype=dtype)
                         for q in range(n_ary)]
        self.Uf = [[p.add(f"{prefix}/Uf{k}{q}", (hid, hid), rng, dtype=dtype)
                    for q in range(n_ary)] for k in range(n_ary)]

    def step(self, x: Tensor, children) -> CellState:
        if len(children) > self.n_ary:
            raise ValueError(
                f"{len(children)} children exceed N={self.n_ary}; binarize first")
        kids = list(children) + [_zero_state(self.hid, self.dtype)
                                 for _ in range(self.n_ary - len(children))]

        def branch_sum(g):
            acc = T.matmul(kids[0].h, self.U[g][0])
            for q in range(1, self.n_ary):
                acc = T.add(acc, T.matmul(kids[q].h, self.U[g][q]))
            return acc

        def gate(pre):
            return T.add(T.add(T.matmul(x, self.W[pre]), branch_sum(pre)), self.b[pre])

        i = T.sigmoid(gate("i"))
        o = T.sigmoid(gate("o"))
        u = T.tanh(gate("u"))
        c = T.mul(i, u)
        for k in range(self.n_ary):
            acc = T.matmul(kids[0].h, self.Uf[k][0])
            for q in range(1, self.n_ary):
                acc = T.add(acc, T.matmul(kids[q].h, self.Uf[k][q]))
            f = T.sigmoid(T.add(T.add(T.matmul(x, self.W["f"]), acc), self.b["f"]))
            c = T.add(c, T.mul(f, kids[k].c))
        return CellState(T.mul(o, T.tanh(c)), c)


# ---------------------------------------------------------------------------
# generic rooted-tree encoding

@dataclass
class EncGraph:
    """Rooted tree over encoder nodes plus the token -> node row map."""
    children: list     # per node: ordered child node indices
    parent: list       # per node: parent index, -1 at the root
    token_rows: list   # token position -> node index
    order: list        # topological order, children before parents


def dep_enc_graph(heads) -> EncGraph:
    n = len(heads)
    children = [[] for _ in range(n)]
    parent = [-1] * n
    for i, h in enumerate(heads):
        if h != 0:
            children[h - 1].append(i)
            parent[i] = h - 1
    root = heads.index(0)
    order = _topo_order(children, root, n)
    return EncGraph(children, parent, list(range(n)), order)


def con_enc_graph(bt: BinTree):
    """Nodes are the binarized tree's spans; returns the graph plus each
    node's span so callers can pick word vs label inputs."""
    spans = []

    def build(i, j):
        if j - i == 1:
            spans.append((i, j))
            return len(spans) - 1
        k = bt.split_of(i, j)
        left = build(i, k)
        right = build(k, j)
        spans.append((i, j))
        me = len(spans) - 1
        kids[me] = [left, right]
        return me

    kids = {}
    build(0, bt.n)
    m = len(spans)
    children = [kids.get(v, []) for v in range(m)]
    parent = [-1] * m
    for v, cs in enumerate(children):
        for c in cs:
            parent[c] = v
    token_rows = [None] * bt.n
    for v, (i, j) in enumerate(spans):
        if j - i == 1:
            token_rows[i] = v
    order = _topo_order(children, m - 1, m)
    return EncGraph(children, parent, token_rows, order), spans


def _topo_order(children, root, n):
    order, stack, seen = [], [(root, False)], set()
    while stack:
        v, expanded = stack.pop()
        if expanded:
            order.append(v)
            continue
        if v in seen:
            raise DataError(f"cycle reached node {v}")
        seen.add(v)
        stack.append((v, True))
        for c in reversed(children[v]):
            stack.append((c, False))
    if len(order) != n:
        raise DataError("tree does not reach all nodes")
    return order


def tree_encode(graph: EncGraph, inputs, up_cell, down_cell=None, direction="both"):
    """Per-node representations by recursive cell application.

    bottom-up: children feed parents; top-down: the parent state is the
    single child input of each node (root gets zero state); both: concat.
    Returns one (1, width) tensor per node.
    """
    if direction not in ("bottom-up", "top-down", "both"):
        raise ValueError(f"unknown direction {direction!r}")
    rows_up = rows_down = None
    if direction in ("bottom-up", "both"):
        states = {}
        for v in graph.order:
            states[v] = up_cell.step(inputs[v], [states[c] for c in graph.children[v]])
        rows_up = {v: s.h for v, s in states.items()}
    if direction in ("top-down", "both"):
        cell = down_cell if down_cell is not None else up_cell
        states = {}
        for v in reversed(graph.order):
            p = graph.parent[v]
            states[v] = cell.step(inputs[v], [] if p < 0 else [states[p]])
        rows_down = {v: s.h for v, s in states.items()}
    m = len(graph.children)
    if direction == "bottom-up":
        return [rows_up[v] for v in range(m)]
    if direction == "top-down":
        return [rows_down[v] for v in range(m)]
    return [T.concat([rows_up[v], rows_down[v]], axis=1) for v in range(m)]


def token_matrix(rows, token_rows) -> Tensor:
    return T.concat([rows[v] for v in token_rows], axis=0)


# ---------------------------------------------------------------------------
# GCN

def gcn_layer(adj: Tensor, h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Gated propagation: each node's features are gated by its own sigmoid
    gate, then summed over in-neighbors and rectified."""
    gate = T.sigmoid(T.add(T.matmul(h, w), b))
    return T.relu(T.matmul(adj, T.mul(h, gate)))


def adjacency(n_nodes, edges, dtype=np.float32) -> Tensor:
    """Symmetric 0/1 adjacency with self-loops from an (a, b) edge list."""
    a = np.eye(n_nodes, dtype=dtype)
    for i, j in edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    if n_nodes == 0 or (a.sum(axis=1) < 1).any():
        raise DataError("isolated node in encoder graph")
    return Tensor(a)


def dep_edges(heads):
    return [(i, h - 1) for i, h in enumerate(heads) if h != 0]


# ---------------------------------------------------------------------------
# BiLSTM student

class StudentEncoder:
    """Stacked BiLSTM over a same-length batch, step-major layout.

    All (T, B) step tensors are flattened to row index t*B + b so each time
    step is a contiguous (B, d) row block.
    """

    def __init__(self, p: Params, prefix, vocab_size, emb_dim, hid,
                 n_layers=3, emb_dropout=0.4, rng=None, dtype=np.float32):
        self.hid = hid
        self.n_layers = n_layers
        self.emb_dropout = emb_dropout
        self.dtype = dtype
        self.emb = p.add(f"{prefix}/emb", (vocab_size, emb_dim), rng, dtype=dtype)
        self.layers = []
        for l in range(n_layers):
            in_dim = emb_dim if l == 0 else 2 * hid
            layer = {}
            for d in ("f", "b"):
                layer[d] = {
                    "W": p.add(f"{prefix}/l{l}{d}/W", (in_dim, 4 * hid), rng, dtype=dtype),
                    "U": p.add(f"{prefix}/l{l}{d}/U", (hid, 4 * hid), rng, dtype=dtype),
                    "b": p.add(f"{prefix}/l{l}{d}/b", (4 * hid,), init="zeros", dtype=dtype),
                }
            self.layers.append(layer)

    def _direction(self, x_steps, ps, reverse):
        bsz = x_steps[0].shape[0]
        h = Tensor(np.zeros((bsz, self.hid), dtype=self.dtype))
        c = Tensor(np.zeros((bsz, self.hid), dtype=self.dtype))
        order = range(len(x_steps) - 1, -1, -1) if reverse else range(len(x_steps))
        outs = [None] * len(x_steps)
        for t in order:
            gates = T.add(T.add(T.matmul(x_steps[t], ps["W"]),
                                T.matmul(h, ps["U"])), ps["b"])
            i = T.sigmoid(T.slice_cols(gates, 0, self.hid))
            f = T.sigmoid(T.slice_cols(gates, self.hid, 2 * self.hid))
            o = T.sigmoid(T.slice_cols(gates, 2 * self.hid, 3 * self.hid))
            u = T.tanh(T.slice_cols(gates, 3 * self.hid, 4 * self.hid))
            c = T.add(T.mul(f, c), T.mul(i, u))
            h = T.mul(o, T.tanh(c))
            outs[t] = h
        return outs

    def encode_batch(self, ids, train=False, rng=None):
        """ids: (B, T) int array -> {"top": (T*B, 2h), "l1f": (T*B, h)}."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.size == 0:
            raise ValueError(f"ids must be a non-empty (B, T) array, got {ids.shape}")
        bsz, steps = ids.shape
        flat = ids.T.reshape(-1)  # step-major: row t*B + b
        x = T.embedding(self.emb, flat)
        if train and self.emb_dropout > 0:
            x = T.dropout(x, self.emb_dropout, rng)
        x_steps = [T.slice_rows(x, t * bsz, (t + 1) * bsz) for t in range(steps)]
        l1f = None
        for l, layer in enumerate(self.layers):
            fwd = self._direction(x_steps, layer["f"], reverse=False)
            bwd = self._direction(x_steps, layer["b"], reverse=True)
            if l == 0:
                l1f = T.concat(fwd, axis=0)
            x_steps = [T.concat([fwd[t], bwd[t]], axis=1) for t in range(steps)]
        top = T.concat(x_steps, axis=0)
        return {"top": top, "l1f": l1f, "batch": bsz, "steps": steps}

    def encode(self, token_ids, train=False, rng=None):
        out = self.encode_batch(np.asarray(token_ids)[None, :], train=train, rng=rng)
        return NodeReps(out["top"], "student"), out["l1f"]


# ---------------------------------------------------------------------------
# task heads

def mean_pool(mat: Tensor) -> Tensor:
    return T.mean(mat, axis=0, keepdims=True)


class ClassifyHead:
    def __init__(self, p: Params, prefix, in_dim, n_classes, rng, dtype=np.float32):
        self.n_classes = n_classes
        self.W = p.add(f"{prefix}/W", (in_dim, n_classes), rng, dtype=dtype)
        self.b = p.add(f"{prefix}/b", (n_classes,), init="zeros", dtype=dtype)

    def __call__(self, pooled: Tensor) -> Tensor:
        return T.add(T.matmul(pooled, self.W), self.b)


class PairHead:
    """Feedforward over [u; v; u*v; u-v; u+v]."""

    def __init__(self, p: Params, prefix, in_dim, n_classes, rng, dtype=np.float32):
        self.n_classes = n_classes
        self.W = p.add(f"{prefix}/W", (5 * in_dim, n_classes), rng, dtype=dtype)
        self.b = p.add(f"{prefix}/b", (n_classes,), init="zeros", dtype=dtype)

    def __call__(self, u: Tensor, v: Tensor) -> Tensor:
        feat = T.concat([u, v, T.mul(u, v), T.sub(u, v), T.add(u, v)], axis=1)
        return T.add(T.matmul(feat, self.W), self.b)


class TagHead:
    """Per-token logits with a predicate-indicator embedding appended."""

    def __init__(self, p: Params, prefix, in_dim, n_tags, rng,
                 ind_dim=16, dtype=np.float32):
        self.n_tags = n_tags
        self.ind = p.add(f"{prefix}/ind", (2, ind_dim), rng, dtype=dtype)
        self.W = p.add(f"{prefix}/W", (in_dim + ind_dim, n_tags), rng, dtype=dtype)
        self.b = p.add(f"{prefix}/b", (n_tags,), init="zeros", dtype=dtype)

    def __call__(self, mat: Tensor, predicate: int) -> Tensor:
        n = mat.shape[0]
        flags = np.zeros(n, dtype=np.int64)
        flags[predicate] = 1
        feat = T.concat([mat, T.embedding(self.ind, flags)], axis=1)
        return T.add(T.matmul(feat, self.W), self.b)


# ---------------------------------------------------------------------------
# structure-scoring heads

@dataclass
class ArcScores:
    arc_logits: Tensor    # (n, n+1); column 0 is the virtual root
    label_logits: Tensor  # (n, n+1, n_labels)


class ArcLabelScorer:
    """Bilinear-plus-linear head/dependent scorer with a learned root column."""

    def __init__(self, p: Params, prefix, in_dim, n_labels, arc_dim, rng,
                 dtype=np.float32):
        self.n_labels = n_labels
        self.arc_dim = arc_dim
        a = arc_dim
        self.Wd = p.add(f"{prefix}/Wd", (in_dim, a), rng, dtype=dtype)
        self.bd = p.add(f"{prefix}/bd", (a,), init="zeros", dtype=dtype)
        self.Wh = p.add(f"{prefix}/Wh", (in_dim, a), rng, dtype=dtype)
        self.bh = p.add(f"{prefix}/bh", (a,), init="zeros", dtype=dtype)
        self.root = p.add(f"{prefix}/root", (1, a), init="zeros", dtype=dtype)
        self.A = p.add(f"{prefix}/A", (a, a), rng, dtype=dtype)
        self.wd = p.add(f"{prefix}/wd", (a, 1), rng, dtype=dtype)
        self.wh = p.add(f"{prefix}/wh", (a, 1), rng, dtype=dtype)
        self.Wl = p.add(f"{prefix}/Wl", (2 * a, n_labels), rng, dtype=dtype)
        self.bl = p.add(f"{prefix}/bl", (n_labels,), init="zeros", dtype=dtype)
        self.dtype = dtype

    def __call__(self, reps: Tensor) -> ArcScores:
        n = reps.shape[0]
        hd = T.tanh(T.add(T.matmul(reps, self.Wd), self.bd))
        hh = T.tanh(T.add(T.matmul(reps, self.Wh), self.bh))
        cand = T.concat([self.root, hh], axis=0)  # (n+1, a)
        bilinear = T.matmul(T.matmul(hd, self.A), T.transpose(cand))
        ones_row = Tensor(np.ones((1, n + 1), dtype=self.dtype))
        ones_col = Tensor(np.ones((n, 1), dtype=self.dtype))
        lin_d = T.matmul(T.matmul(hd, self.wd), ones_row)
        lin_h = T.matmul(ones_col, T.transpose(T.matmul(cand, self.wh)))
        arc = T.add(T.add(bilinear, lin_d), lin_h)
        dep_idx = np.repeat(np.arange(n), n + 1)
        head_idx = np.tile(np.arange(n + 1), n)
        pair = T.concat([T.embedding(hd, dep_idx), T.embedding(cand, head_idx)], axis=1)
        labels = T.add(T.matmul(pair, self.Wl), self.bl)
        return ArcScores(arc, T.reshape(labels, (n, n + 1, self.n_labels)))


def span_order(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n + 1)]


@dataclass
class ScoredSpans:
    """Differentiable span scores plus the dense table for the chart."""
    n: int
    tensor: Tensor  # (n_spans, n_labels) in span_order
    index: dict     # (i, j) -> row

    @property
    def n_labels(self):
        return self.tensor.shape[1]

    def to_table(self) -> np.ndarray:
        table = np.zeros((self.n, self.n + 1, self.n_labels), dtype=np.float64)
        for (i, j), r in self.index.items():
            table[i, j] = self.tensor.data[r]
        return table


class SpanScorer:
    """Feedforward scorer over fencepost endpoint features [b_j - b_i; b_i; b_j]."""

    def __init__(self, p: Params, prefix, in_dim, n_labels, rng, dtype=np.float32):
        self.n_labels = n_labels
        self.in_dim = in_dim
        self.W = p.add(f"{prefix}/W", (3 * in_dim, n_labels), rng, dtype=dtype)
        self.b = p.add(f"{prefix}/b", (n_labels,), init="zeros", dtype=dtype)
        self.dtype = dtype

    def __call__(self, reps: Tensor) -> ScoredSpans:
        n = reps.shape[0]
        zero = Tensor(np.zeros((1, reps.shape[1]), dtype=self.dtype))
        bounds = T.concat([zero, reps], axis=0)  # b_k = rep of token k-1, b_0 = 0
        spans = span_order(n)
        i_idx = np.array([i for i, _ in spans], dtype=np.int64)
        j_idx = np.array([j for _, j in spans], dtype=np.int64)
        bi = T.embedding(bounds, i_idx)
        bj = T.embedding(bounds, j_idx)
        feat = T.concat([T.sub(bj, bi), bi, bj], axis=1)
        scores = T.add(T.matmul(feat, self.W), self.b)
        return ScoredSpans(n, scores, {s: r for r, s in enumerate(spans)})


# ---------------------------------------------------------------------------
# vocabulary bundle and encoded examples

class Codec:
    """Vocabularies shared by every model in one run, built from training data."""

    def __init__(self, examples, task):
        self.task = task
        token_lists = []
        dep_labels, con_labels, tags, classes = set(), set(), set(), set()
        for ex in examples:
            for e in self._sides(ex):
                token_lists.append(e.sent.tokens)
                dep_labels.update(e.dep.labels)
                con_labels.update(l for _, _, l in e.con.spans())
                con_labels.update(binarize(e.con).spans.values())
            if task == "tag":
                tags.update(ex.tags)
            else:
                classes.add(ex.label)
        self.vocab = Vocab.build(token_lists)
        self.dep_labels = LabelVocab.build(sorted(dep_labels))
        self.con_labels = LabelVocab.build(sorted(con_labels), reserve_null=True)
        self.tags = LabelVocab.build(sorted(tags)) if task == "tag" else None
        if task == "tag":
            self.n_classes = len(self.tags)
        else:
            self.n_classes = max(classes) + 1 if classes else 2

    @staticmethod
    def _sides(ex):
        yield ex
        if ex.partner is not None:
            yield ex.partner

    def encode(self, ex: Example):
        enc = EncodedExample(self, ex)
        return enc

    def to_json(self):
        return {
            "task": self.task,
            "vocab": self.vocab.to_list(),
            "dep_labels": self.dep_labels.to_list(),
            "con_labels": self.con_labels.to_list(),
            "tags": self.tags.to_list() if self.tags else None,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_json(cls, d):
        obj = cls.__new__(cls)
        obj.task = d["task"]
        obj.vocab = Vocab(d["vocab"])
        obj.dep_labels = LabelVocab(d["dep_labels"])
        obj.con_labels = LabelVocab(d["con_labels"])
        obj.tags = LabelVocab(d["tags"]) if d.get("tags") else None
        obj.n_classes = d["n_classes"]
        return obj


class EncodedSide:
    def __init__(self, codec: Codec, ex: Example):
        self.n = len(ex.sent)
        self.token_ids = codec.vocab.encode(ex.sent.tokens)
        if ex.dep is not None:
            self.heads = list(ex.dep.heads)
            self.dep_label_ids = codec.dep_labels.encode(ex.dep.labels)
            self.dep_graph = dep_enc_graph(self.heads)
        else:
            self.heads = self.dep_label_ids = self.dep_graph = None
        if ex.con is not None:
            bt = binarize(ex.con)
            self.bintree = bt.map_labels(lambda l: int(codec.con_labels.stoi[l]))
            self.con_graph, con_spans = con_enc_graph(self.bintree)
            # per con node: ("word", token id) for leaves, ("label", label id) inside
            self.con_inputs = []
            for (i, j) in con_spans:
                if j - i == 1:
                    self.con_inputs.append(("word", int(self.token_ids[i])))
                else:
                    self.con_inputs.append(("label", self.bintree.spans[(i, j)]))
            # GCN over the original constituency tree: tokens + every tree node
            self.con_gcn = _con_gcn_graph(codec, ex, self.token_ids)
        else:
            self.bintree = self.con_graph = self.con_inputs = self.con_gcn = None


def _con_gcn_graph(codec, ex, token_ids):
    """Node inputs and edges for the constituency GCN: token nodes 0..n-1,
    then one node per original tree node (preterminals included)."""
    n = len(ex.sent)
    inputs = [("word", int(token_ids[i])) for i in range(n)]
    edges = []

    def visit(node, start, parent_id):
        nid = len(inputs)
        inputs.append(("label", int(codec.con_labels.stoi[node.label])))
        if parent_id is not None:
            edges.append((parent_id, nid))
        if node.is_leaf:
            edges.append((nid, start))
            return start + 1
        pos = start
        for c in node.children:
            pos = visit(c, pos, nid)
        return pos

    visit(ex.con.root, 0, None)
    return inputs, edges, n


class EncodedExample:
    def __init__(self, codec: Codec, ex: Example):
        self.raw = ex
        self.main = EncodedSide(codec, ex)
        self.partner = EncodedSide(codec, ex.partner) if ex.partner is not None else None
        if codec.task == "tag":
            self.tag_ids = codec.tags.encode(ex.tags)
            self.predicate = ex.predicate
            self.label = None
        else:
            self.label = ex.label
            self.tag_ids = None
            self.predicate = None


# ---------------------------------------------------------------------------
# assembled models

class BaseModel:
    """Common plumbing: params registry, task head dispatch, distributions."""

    def __init__(self, codec: Codec, rng, dtype=np.float32, emb_dropout=0.4):
        self.codec = codec
        self.task = codec.task
        self.dtype = dtype
        self.emb_dropout = emb_dropout
        self.p = Params()
        self.rng = rng

    def _make_head(self, rep_dim):
        if self.task == "pair":
            self.head = PairHead(self.p, "head", rep_dim, self.codec.n_classes,
                                 self.rng, dtype=self.dtype)
        elif self.task == "tag":
            self.head = TagHead(self.p, "head", rep_dim, self.codec.n_classes,
                                self.rng, dtype=self.dtype)
        else:
            self.head = ClassifyHead(self.p, "head", rep_dim, self.codec.n_classes,
                                     self.rng, dtype=self.dtype)

    def _dropout(self, x, train, rng):
        if train and self.emb_dropout > 0:
            return T.dropout(x, self.emb_dropout, rng)
        return x

    def logits(self, enc: EncodedExample, train=False, rng=None) -> Tensor:
        if self.task == "pair":
            u = mean_pool(self.reps(enc.main, train, rng).mat)
            v = mean_pool(self.reps(enc.partner, train, rng).mat)
            return self.head(u, v)
        reps = self.reps(enc.main, train, rng)
        if self.task == "tag":
            return self.head(reps.mat, enc.predicate)
        return self.head(mean_pool(reps.mat))

    def class_distribution(self, enc: EncodedExample) -> np.ndarray:
        out = T.softmax(self.logits(enc), axis=-1)
        return out.data.copy()

    def add_structure_head(self, arc_dim=64):
        """Arc/label scorer for dependency models, span scorer for constituency
        models; used when soft teacher structure targets are enabled."""
        if self.structure == "dep":
            self.struct_head = ArcLabelScorer(self.p, "arc", self.rep_dim,
                                              len(self.codec.dep_labels), arc_dim,
                                              self.rng, self.dtype)
        elif self.structure == "con":
            self.struct_head = SpanScorer(self.p, "span", self.rep_dim,
                                          len(self.codec.con_labels), self.rng,
                                          self.dtype)
        else:
            raise ValueError(f"no structure head for {self.structure!r}")

    def parameters(self):
        return self.p.all()


class DepTreeLstmModel(BaseModel):
    """Bidirectional Child-Sum TreeLSTM over the dependency tree."""

    kind = "tlstm-dep"
    structure = "dep"

    def __init__(self, codec, emb_dim=300, hidden=300, n_layers=2, rng=None,
                 dtype=np.float32, emb_dropout=0.4):
        super().__init__(codec, rng, dtype, emb_dropout)
        self.hidden = hidden
        self.emb = self.p.add("emb", (len(codec.vocab), emb_dim), rng, dtype=dtype)
        self.cells = []
        for l in range(n_layers):
            in_dim = emb_dim if l == 0 else 2 * hidden
            self.cells.append((
                ChildSumCell(self.p, f"l{l}/up", in_dim, hidden, rng, dtype=dtype),
                ChildSumCell(self.p, f"l{l}/down", in_dim, hidden, rng, dtype=dtype),
            ))
        self._make_head(2 * hidden)
        self.rep_dim = 2 * hidden

    def reps(self, side: EncodedSide, train=False, rng=None) -> NodeReps:
        x = self._dropout(T.embedding(self.emb, side.token_ids), train, rng)
        rows = [T.slice_rows(x, i, i + 1) for i in range(side.n)]
        for up, down in self.cells:
            rows = tree_encode(side.dep_graph, rows, up, down, "both")
        return NodeReps(token_matrix(rows, side.dep_graph.token_rows), "dep-tree")


class ConTreeLstmModel(BaseModel):
    """Bidirectional binary N-ary TreeLSTM over the binarized constituency tree."""

    kind = "tlstm-con"
    structure = "con"

    def __init__(self, codec, emb_dim=300, hidden=300, n_layers=2, rng=None,
                 dtype=np.float32, emb_dropout=0.4):
        super().__init__(codec, rng, dtype, emb_dropout)
        self.hidden = hidden
        self.emb = self.p.add("emb", (len(codec.vocab), emb_dim), rng, dtype=dtype)
        self.label_emb = self.p.add("label_emb", (len(codec.con_labels), emb_dim),
                                    rng, dtype=dtype)
        self.cells = []
        for l in range(n_layers):
            in_dim = emb_dim if l == 0 else 2 * hidden
            self.cells.append((
                NaryCell(self.p, f"l{l}/up", in_dim, hidden, rng, dtype=dtype),
                NaryCell(self.p, f"l{l}/down", in_dim, hidden, rng, dtype=dtype),
            ))
        self._make_head(2 * hidden)
        self.rep_dim = 2 * hidden

    def reps(self, side: EncodedSide, train=False, rng=None) -> NodeReps:
        word_ids = np.array([i for kind, i in side.con_inputs if kind == "word"])
        label_ids = np.array([i for kind, i in side.con_inputs if kind == "label"])
        words = self._dropout(T.embedding(self.emb, word_ids), train, rng)
        labels = (self._dropout(T.embedding(self.label_emb, label_ids), train, rng)
                  if label_ids.size else None)
        rows, wi, li = [], 0, 0
        for kind, _ in side.con_inputs:
            if kind == "word":
                rows.append(T.slice_rows(words, wi, wi + 1))
                wi += 1
            else:
                rows.append(T.slice_rows(labels, li, li + 1))
                li += 1
        for up, down in self.cells:
            rows = tree_encode(side.con_graph, rows, up, down, "both")
        return NodeReps(token_matrix(rows, side.con_graph.token_rows), "con-tree")


class GcnModel(BaseModel):
    """Gated GCN over either syntactic graph; output width equals emb width."""

    def __init__(self, codec, structure, emb_dim=300, n_layers=2, rng=None,
                 dtype=np.float32, emb_dropout=0.4):
        super().__init__(codec, rng, dtype, emb_dropout)
        self.structure = structure
        self.kind = f"gcn-{structure}"
        self.emb = self.p.add("emb", (len(codec.vocab), emb_dim), rng, dtype=dtype)
        if structure == "con":
            self.label_emb = self.p.add("label_emb", (len(codec.con_labels), emb_dim),
                                        rng, dtype=dtype)
        self.layers = [
            (self.p.add(f"l{l}/W", (emb_dim, emb_dim), rng, dtype=dtype),
             self.p.add(f"l{l}/b", (emb_dim,), init="zeros", dtype=dtype))
            for l in range(n_layers)
        ]
        self._make_head(emb_dim)
        self.rep_dim = emb_dim

    def reps(self, side: EncodedSide, train=False, rng=None) -> NodeReps:
        if self.structure == "dep":
            h = self._dropout(T.embedding(self.emb, side.token_ids), train, rng)
            adj = adjacency(side.n, dep_edges(side.heads), dtype=self.dtype)
            n_tokens = side.n
        else:
            inputs, edges, n_tokens = side.con_gcn
            word_ids = np.array([i for k, i in inputs if k == "word"])
            label_ids = np.array([i for k, i in inputs if k == "label"])
            words = self._dropout(T.embedding(self.emb, word_ids), train, rng)
            labels = self._dropout(T.embedding(self.label_emb, label_ids), train, rng)
            rows, wi, li = [], 0, 0
            for k, _ in inputs:
                if k == "word":
                    rows.append(T.slice_rows(words, wi, wi + 1))
                    wi += 1
                else:
                    rows.append(T.slice_rows(labels, li, li + 1))
                    li += 1
            h = T.concat(rows, axis=0)
            adj = adjacency(len(inputs), edges, dtype=self.dtype)
        for w, b in self.layers:
            h = gcn_layer(adj, h, w, b)
        mat = h if self.structure == "dep" else T.slice_rows(h, 0, n_tokens)
        return NodeReps(mat, f"{self.structure}-tree")


class StudentModel(BaseModel):
    """3-layer BiLSTM student with task, language-model and structure heads."""

    kind = "student"
    structure = "seq"

    def __init__(self, codec, emb_dim=300, hidden=350, n_layers=3, arc_dim=None,
                 rng=None, dtype=np.float32, emb_dropout=0.4):
        super().__init__(codec, rng, dtype, emb_dropout)
        self.hidden = hidden
        self.encoder = StudentEncoder(self.p, "enc", len(codec.vocab), emb_dim,
                                      hidden, n_layers, emb_dropout, rng, dtype)
        self.rep_dim = 2 * hidden
        self._make_head(self.rep_dim)
        arc_dim = arc_dim or hidden
        self.arc_scorer = ArcLabelScorer(self.p, "arc", self.rep_dim,
                                         len(codec.dep_labels), arc_dim, rng, dtype)
        self.span_scorer = SpanScorer(self.p, "span", self.rep_dim,
                                      len(codec.con_labels), rng, dtype)
        self.lm_W = self.p.add("lm/W", (hidden, len(codec.vocab)), rng, dtype=dtype)
        self.lm_b = self.p.add("lm/b", (len(codec.vocab),), init="zeros", dtype=dtype)
        self.lm_begin = self.p.add("lm/begin", (1, hidden), init="zeros", dtype=dtype)
        self.projections = {}

    def add_projection(self, name, teacher_dim, common_dim):
        """f_t for one teacher plus (once) the student-side f_s."""
        if "f_s" not in self.projections:
            self.projections["f_s"] = (
                self.p.add("proj/f_s/W", (self.rep_dim, common_dim), self.rng,
                           dtype=self.dtype),
                self.p.add("proj/f_s/b", (common_dim,), init="zeros", dtype=self.dtype),
            )
        key = f"f_t/{name}"
        if key not in self.projections:
            self.projections[key] = (
                self.p.add(f"proj/{key}/W", (teacher_dim, common_dim), self.rng,
                           dtype=self.dtype),
                self.p.add(f"proj/{key}/b", (common_dim,), init="zeros", dtype=self.dtype),
            )

    def project(self, which, mat: Tensor) -> Tensor:
        w, b = self.projections[which]
        return T.add(T.matmul(mat, w), b)

    def reps(self, side: EncodedSide, train=False, rng=None) -> NodeReps:
        reps, _ = self.encoder.encode(side.token_ids, train=train, rng=rng)
        return reps

    def lm_logits_from_states(self, fwd_states: Tensor, positions) -> Tensor:
        """Logits for predicting tokens at `positions` from the forward state of
        the previous position; position 0 uses the learned begin state."""
        rows = []
        for j in positions:
            if j == 0:
                rows.append(self.lm_begin)
            else:
                rows.append(T.slice_rows(fwd_states, j - 1, j))
        states = T.concat(rows, axis=0) if rows else None
        if states is None:
            raise ValueError("no positions to predict")
        return T.add(T.matmul(states, self.lm_W), self.lm_b)


def make_teacher(kind, codec, emb_dim=300, hidden=300, n_layers=2, rng=None,
                 dtype=np.float32, emb_dropout=0.4):
    if kind == "tlstm-dep":
        return DepTreeLstmModel(codec, emb_dim, hidden, n_layers, rng, dtype, emb_dropout)
    if kind == "tlstm-con":
        return ConTreeLstmModel(codec, emb_dim, hidden, n_layers, rng, dtype, emb_dropout)
    if kind == "gcn-dep":
        return GcnModel(codec, "dep", emb_dim, n_layers, rng, dtype, emb_dropout)
    if kind == "gcn-con":
        return GcnModel(codec, "con", emb_dim, n_layers, rng, dtype, emb_dropout)
    raise ValueError(f"unknown teacher kind {kind!r}")


TEACHER_KINDS = ("tlstm-dep", "gcn-dep", "tlstm-con", "gcn-con")
