"""Tree-annotated dataset model, file ingestion, and a synthetic corpus.

Sentences carry two parallel syntactic annotations: a dependency tree
(heads + relation labels) and a constituency tree. The synthetic generator
produces an agreement-classification corpus from a small PCFG where the
class label is a deterministic function of the gold tree, so structure-aware
models have measurable headroom over surface heuristics.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, MASK = 0, 1, 2
RESERVED = ["<pad>", "<unk>", "<mask>"]

NULL_LABEL = "<null>"  # label of nodes introduced by binarization


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# vocabularies

class Vocab:
    """Token -> id map with reserved <pad>/<unk>/<mask> at 0/1/2."""

    def __init__(self, itos):
        if list(itos[:3]) != RESERVED:
            raise DataError(f"vocab must start with reserved tokens {RESERVED}")
        self.itos = list(itos)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate token in vocab")

    @classmethod
    def build(cls, token_lists):
        """Frequency-sorted vocab, ties broken lexicographically."""
        counts = {}
        for toks in token_lists:
            for t in toks:
                counts[t] = counts.get(t, 0) + 1
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(RESERVED + ordered)

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.stoi.get(t, UNK) for t in tokens], dtype=np.int64)

    def to_list(self):
        return list(self.itos)


class LabelVocab:
    """Closed label set -> id map, lexicographically ordered for determinism."""

    def __init__(self, itos):
        self.itos = list(itos)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate label in label vocab")

    @classmethod
    def build(cls, labels, reserve_null: bool = False):
        uniq = sorted(set(labels) - {NULL_LABEL})
        head = [NULL_LABEL] if reserve_null else []
        return cls(head + uniq)

    def __len__(self):
        return len(self.itos)

    def encode(self, labels) -> np.ndarray:
        try:
            return np.array([self.stoi[l] for l in labels], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"unknown label {e.args[0]!r}") from None

    def to_list(self):
        return list(self.itos)


# ---------------------------------------------------------------------------
# domain types

@dataclass
class Sentence:
    tokens: list
    ids: np.ndarray | None = None

    def __len__(self):
        return len(self.tokens)


@dataclass
class DepTree:
    """heads[i] in [0..n], 1-based head position, 0 = virtual root."""
    heads: list
    labels: list

    def __post_init__(self):
        if len(self.heads) != len(self.labels):
            raise DataError(
                f"dep labels length {len(self.labels)} != heads length {len(self.heads)}")
        validate_heads(self.heads)

    def __len__(self):
        return len(self.heads)


def validate_heads(heads):
    n = len(heads)
    if n < 1:
        raise DataError("empty dependency tree")
    for i, h in enumerate(heads):
        if not 0 <= h <= n:
            raise DataError(f"head out of range at token {i + 1}")
    for i in range(1, n + 1):
        cur, steps = i, 0
        while cur != 0:
            cur = heads[cur - 1]
            steps += 1
            if steps > n:
                raise DataError(f"cycle at token {i}")
    roots = [i + 1 for i, h in enumerate(heads) if h == 0]
    if len(roots) > 1:
        raise DataError(f"multiple roots (tokens {', '.join(map(str, roots))})")


class ConstNode:
    """Constituency node: preterminal (word set) or internal (children set)."""

    __slots__ = ("label", "children", "word")

    def __init__(self, label, children=None, word=None):
        self.label = label
        self.children = children or []
        self.word = word
        if (self.word is None) == (not self.children):
            raise DataError(f"node {label!r} must have children or a word")

    @property
    def is_leaf(self):
        return self.word is not None

    def __eq__(self, other):
        return (isinstance(other, ConstNode) and self.label == other.label
                and self.word == other.word and self.children == other.children)

    def __repr__(self):
        return render_bracketed(self)


@dataclass
class ConstTree:
    root: ConstNode
    n: int = field(init=False)

    def __post_init__(self):
        self.n = len(self.leaves())

    def leaves(self):
        out = []
        _collect_leaves(self.root, out)
        return out

    def spans(self):
        """(i, j, label) for every node, 0-based half-open, preterminals included."""
        out = []
        _collect_spans(self.root, 0, out)
        return out

    def __eq__(self, other):
        return isinstance(other, ConstTree) and self.root == other.root


def _collect_leaves(node, out):
    if node.is_leaf:
        out.append(node.word)
    else:
        for c in node.children:
            _collect_leaves(c, out)


def _collect_spans(node, start, out):
    if node.is_leaf:
        out.append((start, start + 1, node.label))
        return start + 1
    end = start
    for c in node.children:
        end = _collect_spans(c, end, out)
    out.append((start, end, node.label))
    return end


def check_laminar(spans, n):
    """Raise unless spans are pairwise nested-or-disjoint and cover (0, n)."""
    ivs = sorted({(i, j) for i, j, _ in spans})
    if (0, n) not in ivs:
        raise DataError(f"span set does not cover (0, {n})")
    for a, (i1, j1) in enumerate(ivs):
        for i2, j2 in ivs[a + 1:]:
            if i2 >= j1:
                break
            if i1 < i2 < j1 < j2:
                raise DataError(f"crossing spans ({i1},{j1}) and ({i2},{j2})")


@dataclass
class Example:
    """One annotated sentence plus exactly one task payload.

    Payload variants: class label alone; partner sentence + class label;
    per-token tags + predicate index.
    """
    sent: Sentence
    dep: DepTree
    con: ConstTree
    label: int | None = None
    partner: "Example | None" = None
    tags: list | None = None
    predicate: int | None = None

    def payload_kind(self):
        if self.partner is not None:
            if self.label is None or self.tags is not None:
                raise DataError("pair payload requires a label and no tags")
            return "pair"
        if self.tags is not None:
            if self.predicate is None or self.label is not None:
                raise DataError("tag payload requires a predicate and no label")
            return "tag"
        if self.label is not None:
            return "cls"
        raise DataError("example has no payload")

    def validate(self):
        n = len(self.sent)
        if n < 1:
            raise DataError("empty sentence")
        if len(self.dep) != n:
            raise DataError(f"dep tree length {len(self.dep)} != sentence length {n}")
        if self.con.leaves() != self.sent.tokens:
            raise DataError("constituency leaves do not match tokens")
        check_laminar(self.con.spans(), n)
        kind = self.payload_kind()
        if kind == "tag":
            if len(self.tags) != n:
                raise DataError(f"tag sequence length {len(self.tags)} != {n}")
            if not 0 <= self.predicate < n:
                raise DataError(f"predicate index {self.predicate} out of range")
        if kind == "pair":
            if len(self.partner.dep) != len(self.partner.sent):
                raise DataError("partner dep tree length mismatch")
            if self.partner.con.leaves() != self.partner.sent.tokens:
                raise DataError("partner constituency leaves do not match tokens")


# ---------------------------------------------------------------------------
# CoNLL-style dependency text: ID FORM HEAD DEPREL, blank-line separated

def parse_conll_dep(text):
    out = []
    block, start_ln = [], None
    for ln, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            if block:
                out.append(_parse_dep_block(block, start_ln))
                block, start_ln = [], None
            continue
        if start_ln is None:
            start_ln = ln
        block.append((ln, line))
    if block:
        out.append(_parse_dep_block(block, start_ln))
    return out


def _parse_dep_block(block, start_ln):
    tokens, heads, labels = [], [], []
    for ln, line in block:
        cols = line.split()
        if len(cols) != 4:
            raise DataError(f"line {ln}: expected 4 columns, got {len(cols)}")
        idx, form, head, deprel = cols
        try:
            idx, head = int(idx), int(head)
        except ValueError:
            raise DataError(f"line {ln}: non-integer ID or HEAD") from None
        if idx != len(tokens) + 1:
            raise DataError(f"line {ln}: token IDs must count 1..n, got {idx}")
        tokens.append(form)
        heads.append(head)
        labels.append(deprel)
    try:
        tree = DepTree(heads, labels)
    except DataError as e:
        raise DataError(f"line {start_ln}: {e}") from None
    return Sentence(tokens), tree


# ---------------------------------------------------------------------------
# PTB-style bracketed constituency text

def parse_bracketed(text):
    trees, pos = [], 0
    while True:
        pos = _skip_ws(text, pos)
        if pos >= len(text):
            return trees
        node, pos = _parse_node(text, pos)
        trees.append(ConstTree(node))


def _skip_ws(text, pos):
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


def _read_atom(text, pos):
    start = pos
    while pos < len(text) and not text[pos].isspace() and text[pos] not in "()":
        pos += 1
    if pos == start:
        raise DataError(f"expected a symbol at offset {start}")
    return text[start:pos], pos


def _parse_node(text, pos):
    if text[pos] != "(":
        raise DataError(f"expected '(' at offset {pos}")
    pos = _skip_ws(text, pos + 1)
    if pos >= len(text):
        raise DataError(f"unexpected end of input at offset {len(text)}")
    if text[pos] == ")":
        raise DataError(f"empty node at offset {pos}")
    if text[pos] == "(":
        label = None  # PTB-style unlabeled wrapper, e.g. "( (S ...) )"
    else:
        label, pos = _read_atom(text, pos)
    children, words = [], []
    while True:
        pos = _skip_ws(text, pos)
        if pos >= len(text):
            raise DataError(f"unexpected end of input at offset {len(text)}")
        ch = text[pos]
        if ch == ")":
            pos += 1
            break
        if ch == "(":
            node, pos = _parse_node(text, pos)
            children.append(node)
        else:
            word, pos = _read_atom(text, pos)
            words.append(word)
    if words and children:
        raise DataError(f"node {label!r} mixes words and subtrees at offset {pos}")
    if len(words) > 1:
        raise DataError(f"node {label!r} has multiple words at offset {pos}")
    if not words and not children:
        raise DataError(f"empty node {label!r} at offset {pos}")
    if label is None:
        if len(children) != 1:
            raise DataError(f"unlabeled node must wrap one subtree at offset {pos}")
        return children[0], pos
    if words:
        return ConstNode(label, word=words[0]), pos
    return ConstNode(label, children=children), pos


def render_bracketed(node) -> str:
    if isinstance(node, ConstTree):
        node = node.root
    if node.is_leaf:
        return f"({node.label} {node.word})"
    inner = " ".join(render_bracketed(c) for c in node.children)
    return f"({node.label} {inner})"


# ---------------------------------------------------------------------------
# head percolation: constituency -> dependency

HEAD_CHILD = {"S": "VP", "NP": "N", "PP": "P", "RC": "VPE", "VP": "V", "VPE": "VN"}

ARC_LABEL = {
    ("S", "NP"): "nsubj",
    ("S", "PP"): "prep",
    ("NP", "Det"): "det",
    ("NP", "PP"): "prep",
    ("NP", "RC"): "relcl",
    ("PP", "NP"): "pobj",
    ("RC", "RP"): "mark",
    ("VP", "NP"): "dobj",
    ("VP", "Adv"): "advmod",
    ("VPE", "NP"): "dobj",
}


def percolate_deps(tree: ConstTree) -> DepTree:
    """Dependency tree from head-child rules over the synthetic grammar."""
    n = tree.n
    heads = [None] * n
    labels = [None] * n

    def head_of(node, start):
        # returns (head token index 0-based, end position)
        if node.is_leaf:
            return start, start + 1
        rule = HEAD_CHILD.get(node.label)
        if rule is None:
            raise DataError(f"no head rule for constituent {node.label!r}")
        spans = []
        pos = start
        for c in node.children:
            h, pos = head_of(c, pos)
            spans.append((c, h))
        head_idx = next((h for c, h in spans if c.label == rule), None)
        if head_idx is None:
            raise DataError(f"head child {rule!r} missing under {node.label!r}")
        for c, h in spans:
            if h == head_idx:
                continue
            lab = ARC_LABEL.get((node.label, c.label))
            if lab is None:
                raise DataError(f"no arc label for {node.label!r} -> {c.label!r}")
            heads[h] = head_idx + 1
            labels[h] = lab
        return head_idx, pos

    root_head, _ = head_of(tree.root, 0)
    heads[root_head] = 0
    labels[root_head] = "root"
    return DepTree(heads, labels)


# ---------------------------------------------------------------------------
# synthetic agreement corpus

SG, PL = 0, 1
NOUNS = [("cat", "cats"), ("dog", "dogs"), ("bird", "birds"), ("horse", "horses"),
         ("fox", "foxes"), ("cow", "cows"), ("pig", "pigs"), ("owl", "owls")]
VERBS = [("runs", "run"), ("jumps", "jump"), ("barks", "bark"), ("sings", "sing"),
         ("sleeps", "sleep"), ("sees", "see"), ("chases", "chase"), ("waits", "wait")]
EMB_VERBS = ["chased", "saw", "liked", "followed"]
PREPS = ["near", "behind", "above", "beside"]
ADVS = ["quickly", "often", "happily", "quietly"]
DET = "the"
RELPRON = "that"

SHAPES = ["simple", "pp", "rc", "fronted"]
SHAPE_WEIGHTS = [0.15, 0.30, 0.25, 0.30]


def _pre(pos, word):
    return ConstNode(pos, word=word)


class _Grammar:
    def __init__(self, size):
        if size < 1:
            raise DataError("degenerate grammar: no terminals")
        self.nouns = NOUNS[:max(2, min(size, len(NOUNS)))]
        self.verbs = VERBS[:max(2, min(size, len(VERBS)))]
        self.emb_verbs = EMB_VERBS[:max(1, min(size, len(EMB_VERBS)))]
        self.preps = PREPS[:max(1, min(size, len(PREPS)))]
        self.advs = ADVS[:max(1, min(size, len(ADVS)))]

    def simple_np(self, rng, num):
        noun = self.nouns[rng.integers(len(self.nouns))][num]
        return ConstNode("NP", [_pre("Det", DET), _pre("N", noun)])

    def sentence(self, rng, agree, max_len):
        """One parsed sentence whose main verb agrees with its subject iff `agree`."""
        while True:
            shape = rng.choice(len(SHAPES), p=SHAPE_WEIGHTS)
            subj_num = int(rng.integers(2))
            verb_num = subj_num if agree else 1 - subj_num
            verb = self.verbs[rng.integers(len(self.verbs))][verb_num]
            subj_noun = self.nouns[rng.integers(len(self.nouns))][subj_num]

            if rng.random() < 0.5:
                vp = ConstNode("VP", [_pre("V", verb),
                                      self.simple_np(rng, int(rng.integers(2)))])
            else:
                vp = ConstNode("VP", [_pre("V", verb),
                                      _pre("Adv", self.advs[rng.integers(len(self.advs))])])

            subj_core = [_pre("Det", DET), _pre("N", subj_noun)]
            name = SHAPES[shape]
            if name == "simple":
                subj = ConstNode("NP", subj_core)
                root = ConstNode("S", [subj, vp])
            elif name == "pp":
                pp = ConstNode("PP", [_pre("P", self.preps[rng.integers(len(self.preps))]),
                                      self.simple_np(rng, int(rng.integers(2)))])
                subj = ConstNode("NP", subj_core + [pp])
                root = ConstNode("S", [subj, vp])
            elif name == "rc":
                vpe = ConstNode("VPE", [_pre("VN", self.emb_verbs[rng.integers(len(self.emb_verbs))]),
                                        self.simple_np(rng, int(rng.integers(2)))])
                rc = ConstNode("RC", [_pre("RP", RELPRON), vpe])
                subj = ConstNode("NP", subj_core + [rc])
                root = ConstNode("S", [subj, vp])
            else:  # fronted PP, then a simple subject
                pp = ConstNode("PP", [_pre("P", self.preps[rng.integers(len(self.preps))]),
                                      self.simple_np(rng, int(rng.integers(2)))])
                subj = ConstNode("NP", subj_core)
                root = ConstNode("S", [pp, subj, vp])

            con = ConstTree(root)
            if con.n <= max_len:
                return con, subj, vp


def _subtree_span(tree: ConstTree, target: ConstNode):
    for_all = []
    _collect_spans_with_nodes(tree.root, 0, for_all)
    for i, j, node in for_all:
        if node is target:
            return i, j
    raise DataError("target node not in tree")


def _collect_spans_with_nodes(node, start, out):
    if node.is_leaf:
        out.append((start, start + 1, node))
        return start + 1
    end = start
    for c in node.children:
        end = _collect_spans_with_nodes(c, end, out)
    out.append((start, end, node))
    return end


def _make_example(grammar, rng, task, label, max_len):
    con, subj, vp = grammar.sentence(rng, bool(label) if task != "pair" else True, max_len)
    tokens = con.leaves()
    ex = Example(Sentence(tokens), percolate_deps(con), con)
    if task == "cls":
        ex.label = label
    elif task == "tag":
        i, j = _subtree_span(con, subj)
        tags = ["O"] * len(tokens)
        tags[i] = "B-SUBJ"
        for k in range(i + 1, j):
            tags[k] = "I-SUBJ"
        vi, _ = _subtree_span(con, vp.children[0])
        ex.tags = tags
        ex.predicate = vi
    elif task == "pair":
        # label = whether the two subjects share grammatical number
        num1 = _subject_number(con, subj)
        while True:
            con2, subj2, _ = grammar.sentence(rng, True, max_len)
            if (_subject_number(con2, subj2) == num1) == bool(label):
                break
        ex.label = label
        ex.partner = Example(Sentence(con2.leaves()), percolate_deps(con2), con2)
    else:
        raise DataError(f"unknown task {task!r}")
    return ex


def _subject_number(con, subj):
    noun = subj.children[1].word
    return SG if any(noun == sg for sg, _ in NOUNS) else PL


def gen_synthetic(n_examples, max_len=12, seed=0, task="cls", grammar_size=5):
    """Deterministic synthetic corpus; class balance kept within [0.4, 0.6]."""
    if max_len > 20:
        raise DataError("max_len must be <= 20")
    if max_len < 4:
        raise DataError("max_len too small for any sentence shape")
    grammar = _Grammar(grammar_size)
    achievable = [k for k in range(n_examples + 1)
                  if 0.4 * n_examples <= k <= 0.6 * n_examples]
    attempt = 0
    while True:
        rng = np.random.default_rng([seed, attempt])
        if task == "tag":
            labels = [1] * n_examples  # tags carry the supervision; label unused
        else:
            labels = [int(rng.integers(2)) for _ in range(n_examples)]
        examples = [_make_example(grammar, rng, task, lab, max_len) for lab in labels]
        if task == "tag" or not achievable or sum(labels) in achievable:
            for ex in examples:
                ex.validate()
            return examples
        attempt += 1


# ---------------------------------------------------------------------------
# JSONL persistence

def example_to_dict(ex: Example) -> dict:
    d = {
        "tokens": ex.sent.tokens,
        "dep_heads": list(ex.dep.heads),
        "dep_labels": list(ex.dep.labels),
        "con_tree": render_bracketed(ex.con),
    }
    kind = ex.payload_kind()
    if kind == "cls":
        d["label"] = ex.label
    elif kind == "pair":
        d["label"] = ex.label
        p = ex.partner
        d["pair_tokens"] = p.sent.tokens
        d["pair_dep_heads"] = list(p.dep.heads)
        d["pair_dep_labels"] = list(p.dep.labels)
        d["pair_con_tree"] = render_bracketed(p.con)
    else:
        d["tags"] = list(ex.tags)
        d["predicate"] = ex.predicate
    return d


def _sentence_from_fields(d, prefix, where):
    for f in ("tokens", "dep_heads", "dep_labels", "con_tree"):
        if prefix + f not in d:
            raise DataError(f"{where}: missing field {prefix + f!r}")
    tokens = d[prefix + "tokens"]
    heads = d[prefix + "dep_heads"]
    labels = d[prefix + "dep_labels"]
    if len(heads) != len(tokens):
        raise DataError(f"{where}: len(dep_heads) != len(tokens)")
    if len(labels) != len(tokens):
        raise DataError(f"{where}: len(dep_labels) != len(tokens)")
    try:
        dep = DepTree(list(heads), list(labels))
        trees = parse_bracketed(d[prefix + "con_tree"])
    except DataError as e:
        raise DataError(f"{where}: {e}") from None
    if len(trees) != 1:
        raise DataError(f"{where}: con_tree must hold exactly one tree")
    con = trees[0]
    if con.leaves() != list(tokens):
        raise DataError(f"{where}: constituency leaves do not match tokens")
    return Sentence(list(tokens)), dep, con


def example_from_dict(d: dict, where: str = "record") -> Example:
    sent, dep, con = _sentence_from_fields(d, "", where)
    ex = Example(sent, dep, con)
    if "tags" in d:
        if "predicate" not in d:
            raise DataError(f"{where}: tag payload missing 'predicate'")
        if len(d["tags"]) != len(sent):
            raise DataError(f"{where}: len(tags) != len(tokens)")
        ex.tags = list(d["tags"])
        ex.predicate = int(d["predicate"])
    elif "pair_tokens" in d:
        if "label" not in d:
            raise DataError(f"{where}: pair payload missing 'label'")
        ps, pd_, pc = _sentence_from_fields(d, "pair_", where)
        ex.partner = Example(ps, pd_, pc)
        ex.label = int(d["label"])
    elif "label" in d:
        ex.label = int(d["label"])
    else:
        raise DataError(f"{where}: no task payload field")
    ex.validate()
    return ex


def save_jsonl(examples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_dict(ex), ensure_ascii=False) + "\n")


def load_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {ln}: invalid JSON ({e.msg})") from None
            out.append(example_from_dict(d, where=f"line {ln}"))
    return out
