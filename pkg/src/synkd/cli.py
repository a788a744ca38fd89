"""Command-line surface: data generation, teacher pre-training, distillation,
evaluation, probing, structure induction and gradient checks.

Configuration comes from an optional JSON file (--config) merged with flag
overrides; ablation matrices are scripted by varying the JSON. Every command
writes a ``config.resolved.json`` with the effective values into its output
directory, and every failure produces a single machine-parseable JSON line on
stderr plus a nonzero exit code.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .distill import DistillConfig, DistillError, TeacherSet
from .encoders import Codec, StudentModel, TEACHER_KINDS, make_teacher
from .gradcheck import run_all
from .probe import (
    PROBE_KINDS,
    constituent_instances,
    dependency_instances,
    majority_accuracy,
    probe_train_eval,
    syntax_distribution,
    write_distribution,
)
from .structures import SpanScores, cyk_max, unbinarize
from .syntax_data import DataError, gen_synthetic, load_jsonl, render_bracketed, save_jsonl
from .train import (
    RunLog,
    Schedule,
    distill_student,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_teacher,
)


class CliError(Exception):
    """User-facing configuration or input problem; printed as one JSON line."""


# ---------------------------------------------------------------------------
# configuration

TASK_ALIASES = {"classify": "cls", "pair": "pair", "tag": "tag"}

DEFAULTS = {
    # run identity
    "task": "classify",
    "seed": 0,
    "out": None,
    # data paths / file layout
    "train": None,
    "dev": None,
    "data": None,
    "teachers": None,
    "model": None,
    "dep_only": None,
    "con_only": None,
    # distillation scalars
    "mode": "B",
    "teacher_mode": "hard",
    "eta": 0.5,
    "lambda1": 0.6,
    "lambda2": 0.2,
    "zeta": 0.2,
    "alpha_fixed": None,
    "mask_ratio": 0.15,
    "temperature": 1.0,
    # schedule / optimization
    "iters": 10_000,
    "g1": 300,
    "g2": 128,
    "batch": 32,
    "lr": None,
    "eval_every": 200,
    "patience": 10,
    # model sizes
    "emb_dim": 300,
    "hidden": 350,
    "layers": 3,
    "teacher_emb": 300,
    "teacher_hidden": 300,
    "teacher_layers": 2,
    # ablations
    "no_sem": False,
    "no_syn": False,
    "no_reg": False,
    "no_anneal": False,
    # teacher pre-training
    "kind": None,
    "co_train_struct": False,
    # synthetic data generation
    "n": 1000,
    "n_dev": 200,
    "n_test": 200,
    "max_len": 12,
    "grammar_size": 5,
    # probing
    "probe_task": None,
    "probe_iters": 400,
    # gradient checks
    "cases": 25,
    "suites": None,
}

COMMAND_DEFAULTS = {
    "train-teacher": {"iters": 2000, "lr": 1e-3},
    "distill": {"lr": 1e-5},
}


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return _is_int(v) or isinstance(v, float)


def _opt(pred):
    return lambda v: v is None or pred(v)


def _path(v):
    return v is None or isinstance(v, str)


def _boolean(v):
    return isinstance(v, bool)


RULES = {
    "task": (lambda v: v in TASK_ALIASES, "one of classify|pair|tag"),
    "seed": (lambda v: _is_int(v) and v >= 0, "integer >= 0"),
    "out": (_path, "path string"),
    "train": (_path, "path string"),
    "dev": (_path, "path string"),
    "data": (_path, "path string"),
    "teachers": (lambda v: v is None or isinstance(v, (str, list)),
                 "comma-separated dirs or list"),
    "model": (_path, "path string"),
    "dep_only": (_path, "path string"),
    "con_only": (_path, "path string"),
    "mode": (lambda v: v in ("A", "B"), "A or B"),
    "teacher_mode": (lambda v: v in ("soft", "hard"), "soft or hard"),
    "eta": (lambda v: _is_num(v) and 0.0 <= v <= 1.0, "in [0, 1]"),
    "lambda1": (lambda v: _is_num(v) and v >= 0.0, ">= 0"),
    "lambda2": (lambda v: _is_num(v) and v >= 0.0, ">= 0"),
    "zeta": (lambda v: _is_num(v) and v >= 0.0, ">= 0"),
    "alpha_fixed": (_opt(lambda v: _is_num(v) and 0.0 <= v <= 1.0), "in [0, 1]"),
    "mask_ratio": (lambda v: _is_num(v) and 0.0 < v < 1.0, "in (0, 1)"),
    "temperature": (lambda v: _is_num(v) and v > 0.0, "> 0"),
    "iters": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "g1": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "g2": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "batch": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "lr": (_opt(lambda v: _is_num(v) and v > 0.0), "> 0"),
    "eval_every": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "patience": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "emb_dim": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "hidden": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "layers": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "teacher_emb": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "teacher_hidden": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "teacher_layers": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "no_sem": (_boolean, "boolean"),
    "no_syn": (_boolean, "boolean"),
    "no_reg": (_boolean, "boolean"),
    "no_anneal": (_boolean, "boolean"),
    "kind": (_opt(lambda v: v in TEACHER_KINDS), f"one of {'|'.join(TEACHER_KINDS)}"),
    "co_train_struct": (_boolean, "boolean"),
    "n": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "n_dev": (lambda v: _is_int(v) and v >= 0, "integer >= 0"),
    "n_test": (lambda v: _is_int(v) and v >= 0, "integer >= 0"),
    "max_len": (lambda v: _is_int(v) and 4 <= v <= 20, "integer in [4, 20]"),
    "grammar_size": (lambda v: _is_int(v) and v >= 2, "integer >= 2"),
    "probe_task": (_opt(lambda v: v in PROBE_KINDS), f"one of {'|'.join(PROBE_KINDS)}"),
    "probe_iters": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "cases": (lambda v: _is_int(v) and v >= 1, "integer >= 1"),
    "suites": (lambda v: v is None or isinstance(v, (str, list)),
               "comma-separated names or list"),
}


def resolve(args, command):
    """Defaults < per-command defaults < JSON config < explicit flags.

    Returns the effective config plus the set of keys the user set
    explicitly (anything else may be adapted, e.g. schedule defaults for
    short runs).
    """
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS.get(command, {}))
    explicit = set()
    config_path = getattr(args, "config", None)
    if config_path:
        if not os.path.exists(config_path):
            raise CliError(f"config file not found: {config_path}")
        try:
            with open(config_path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as e:
            raise CliError(f"config {config_path}: invalid JSON ({e.msg})") from None
        if not isinstance(loaded, dict):
            raise CliError(f"config {config_path}: top level must be an object")
        if "command" in loaded and isinstance(loaded.get("config"), dict):
            loaded = loaded["config"]  # a config.resolved.json round-trips
        for key in loaded:
            if key not in cfg:
                raise CliError(f"config {config_path}: unknown key {key!r}")
        cfg.update(loaded)
        explicit.update(loaded)
    for key, val in vars(args).items():
        if key in cfg and val is not None:
            cfg[key] = val
            explicit.add(key)
    for key, val in cfg.items():
        pred, req = RULES[key]
        if not pred(val):
            raise CliError(f"config key {key!r}={val!r} invalid: expected {req}")
    return cfg, explicit


def need(cfg, key, flag=None):
    if cfg.get(key) is None:
        raise CliError(f"missing required option {flag or '--' + key.replace('_', '-')}")
    return cfg[key]


def write_resolved(out_dir, command, cfg, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    payload = {"command": command, "config": dict(cfg)}
    if extra:
        payload["artifacts"] = extra
    path = os.path.join(out_dir, "config.resolved.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _say(payload):
    print(json.dumps(payload))


# ---------------------------------------------------------------------------
# model directories

def save_model_dir(out_dir, model):
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "model.syd1"), model.p.state_dict())
    with open(os.path.join(out_dir, "codec.json"), "w", encoding="utf-8") as fh:
        json.dump(model.codec.to_json(), fh)


def _read_json(path, what):
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_model_dir(path):
    """Rebuild a saved model (teacher or student) from its run directory."""
    meta = _read_json(os.path.join(path, "config.resolved.json"), "run config")
    codec = Codec.from_json(_read_json(os.path.join(path, "codec.json"), "codec"))
    mcfg = meta.get("config", {})
    art = meta.get("artifacts", {})
    kind = art.get("model_kind")
    rng = np.random.default_rng(0)
    if kind == "student":
        model = StudentModel(codec, emb_dim=mcfg["emb_dim"], hidden=mcfg["hidden"],
                             n_layers=mcfg["layers"], rng=rng)
        for key, (t_dim, c_dim) in sorted(art.get("projections", {}).items()):
            if key.startswith("f_t/"):
                model.add_projection(key[len("f_t/"):], t_dim, c_dim)
    elif kind in TEACHER_KINDS:
        model = make_teacher(kind, codec, emb_dim=mcfg["teacher_emb"],
                             hidden=mcfg["teacher_hidden"],
                             n_layers=mcfg["teacher_layers"], rng=rng)
        if mcfg.get("co_train_struct"):
            model.add_structure_head()
    else:
        raise CliError(f"{path}: unrecognized model_kind {kind!r}")
    model.p.load_state_dict(load_checkpoint(os.path.join(path, "model.syd1")))
    return model, meta


def _load_examples(cfg, key):
    path = need(cfg, key)
    if not os.path.exists(path):
        raise CliError(f"data file not found: {path}")
    return load_jsonl(path)


def _encode_all(codec, examples):
    return [codec.encode(ex) for ex in examples]


def _check_task(codec, cfg):
    want = TASK_ALIASES[cfg["task"]]
    if codec.task != want:
        raise CliError(f"model was built for task {codec.task!r}, "
                       f"requested {want!r}; pass a matching --task")


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args):
    cfg, _ = resolve(args, "gen-data")
    out = need(cfg, "out")
    task = TASK_ALIASES[cfg["task"]]
    os.makedirs(out, exist_ok=True)
    report = {"command": "gen-data", "out": out}
    for split, count, bump in (("train", cfg["n"], 0), ("dev", cfg["n_dev"], 1),
                               ("test", cfg["n_test"], 2)):
        if count < 1:
            continue
        examples = gen_synthetic(count, max_len=cfg["max_len"],
                                 seed=cfg["seed"] + bump, task=task,
                                 grammar_size=cfg["grammar_size"])
        path = os.path.join(out, f"{split}.jsonl")
        save_jsonl(examples, path)
        report[split] = path
        report[f"n_{split}"] = count
    write_resolved(out, "gen-data", cfg)
    _say(report)
    return 0


def cmd_train_teacher(args):
    cfg, _ = resolve(args, "train-teacher")
    if cfg["lr"] is None:
        cfg["lr"] = COMMAND_DEFAULTS["train-teacher"]["lr"]
    kind = need(cfg, "kind")
    out = need(cfg, "out")
    examples = _load_examples(cfg, "train")
    codec = Codec(examples, TASK_ALIASES[cfg["task"]])
    train_encs = _encode_all(codec, examples)
    dev_encs = _encode_all(codec, load_jsonl(cfg["dev"])) if cfg["dev"] else None
    model = make_teacher(kind, codec, emb_dim=cfg["teacher_emb"],
                         hidden=cfg["teacher_hidden"],
                         n_layers=cfg["teacher_layers"],
                         rng=np.random.default_rng(cfg["seed"]))
    os.makedirs(out, exist_ok=True)
    with RunLog(os.path.join(out, "log.jsonl")) as log:
        state = train_teacher(model, train_encs, dev_encs, iters=cfg["iters"],
                              batch_size=cfg["batch"], lr=cfg["lr"],
                              eval_every=cfg["eval_every"],
                              patience=cfg["patience"], seed=cfg["seed"],
                              log=log, co_train_struct=cfg["co_train_struct"])
    save_model_dir(out, model)
    write_resolved(out, "train-teacher", cfg, extra={"model_kind": kind})
    _say({"command": "train-teacher", "kind": kind, "iters_run": state.t,
          "best_dev": state.best_metric if dev_encs else None, "out": out})
    return 0


def _load_teachers(cfg, codec):
    spec = cfg["teachers"]
    if spec is None:
        return None
    dirs = spec.split(",") if isinstance(spec, str) else list(spec)
    dep, con = [], []
    for d in dirs:
        model, meta = load_model_dir(d.strip())
        if model.kind not in TEACHER_KINDS:
            raise CliError(f"{d}: not a teacher checkpoint ({model.kind!r})")
        if model.codec.to_json() != codec.to_json():
            raise CliError(f"{d}: teacher codec differs from the first teacher's")
        if cfg["teacher_mode"] == "soft" and not hasattr(model, "struct_head"):
            raise CliError(f"{d}: teacher lacks a structure head; retrain with "
                           "co_train_struct for teacher_mode=soft")
        (dep if model.structure == "dep" else con).append(model)
    return TeacherSet(dep=dep, con=con)


def _teacher_codec(cfg):
    spec = cfg["teachers"]
    dirs = spec.split(",") if isinstance(spec, str) else list(spec)
    first = dirs[0].strip()
    return Codec.from_json(_read_json(os.path.join(first, "codec.json"), "codec"))


def cmd_distill(args):
    cfg, explicit = resolve(args, "distill")
    if cfg["lr"] is None:
        cfg["lr"] = COMMAND_DEFAULTS["distill"]["lr"]
    out = need(cfg, "out")
    examples = _load_examples(cfg, "train")
    if cfg["teachers"]:
        codec = _teacher_codec(cfg)
        _check_task(codec, cfg)
    else:
        codec = Codec(examples, TASK_ALIASES[cfg["task"]])
    teachers = _load_teachers(cfg, codec)
    train_encs = _encode_all(codec, examples)
    dev_encs = _encode_all(codec, load_jsonl(cfg["dev"])) if cfg["dev"] else None
    dcfg = DistillConfig(
        eta=cfg["eta"],
        lam1=0.0 if cfg["no_syn"] else cfg["lambda1"],
        lam2=0.0 if cfg["no_sem"] else cfg["lambda2"],
        zeta=0.0 if cfg["no_reg"] else cfg["zeta"],
        total_iters=cfg["iters"],
        mode=cfg["mode"],
        teacher_mode=cfg["teacher_mode"],
        mask_ratio=cfg["mask_ratio"],
        temperature=cfg["temperature"],
        alpha_fixed=1.0 if cfg["no_anneal"] else cfg["alpha_fixed"],
    )
    # default phase lengths shrink to fit short runs; explicit values are
    # taken literally and validated by the schedule itself
    if "g1" not in explicit:
        cfg["g1"] = min(cfg["g1"], cfg["iters"])
    if "g2" not in explicit:
        cfg["g2"] = min(cfg["g2"], cfg["g1"])
    sched = Schedule(total=cfg["iters"], g1=cfg["g1"], g2=cfg["g2"])
    student = StudentModel(codec, emb_dim=cfg["emb_dim"], hidden=cfg["hidden"],
                           n_layers=cfg["layers"],
                           rng=np.random.default_rng(cfg["seed"]))
    os.makedirs(out, exist_ok=True)
    with RunLog(os.path.join(out, "log.jsonl")) as log:
        state = distill_student(student, teachers, train_encs, dev_encs,
                                dcfg, sched, batch_size=cfg["batch"],
                                lr=cfg["lr"], eval_every=cfg["eval_every"],
                                patience=cfg["patience"], seed=cfg["seed"],
                                log=log)
    save_model_dir(out, student)
    projections = {key: list(pair[0].shape)
                   for key, pair in student.projections.items()}
    write_resolved(out, "distill", cfg,
                   extra={"model_kind": "student", "projections": projections})
    _say({"command": "distill", "iters_run": state.t,
          "best_dev": state.best_metric if dev_encs else None, "out": out})
    return 0


def cmd_eval(args):
    cfg, _ = resolve(args, "eval")
    out = need(cfg, "out")
    model, _ = load_model_dir(need(cfg, "model"))
    encs = _encode_all(model.codec, _load_examples(cfg, "data"))
    metrics = evaluate(model, encs)
    report = {"command": "eval", "data": cfg["data"], "n": len(encs), **metrics}
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    write_resolved(out, "eval", cfg)
    _say(report)
    return 0


def cmd_probe(args):
    cfg, _ = resolve(args, "probe")
    out = need(cfg, "out")
    kind = need(cfg, "probe_task")
    model, _ = load_model_dir(need(cfg, "model"))
    train_encs = _encode_all(model.codec, _load_examples(cfg, "train"))
    eval_encs = _encode_all(model.codec, _load_examples(cfg, "data"))
    acc = probe_train_eval(model, kind, train_encs, eval_encs,
                           iters=cfg["probe_iters"], seed=cfg["seed"])
    build = (constituent_instances if kind == "constituent-labeling"
             else dependency_instances)
    _, y_eval = build(model, eval_encs)
    report = {"command": "probe", "probe_task": kind, "accuracy": acc,
              "majority_baseline": majority_accuracy(y_eval),
              "n_eval_instances": int(len(y_eval))}
    if cfg["dep_only"] or cfg["con_only"]:
        dep_model, _ = load_model_dir(need(cfg, "dep_only"))
        con_model, _ = load_model_dir(need(cfg, "con_only"))
        scores, summary = syntax_distribution(model, dep_model, con_model, eval_encs)
        write_distribution(out, scores, summary)
        report["dominance"] = summary
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "probe.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    write_resolved(out, "probe", cfg)
    _say(report)
    return 0


def cmd_induce(args):
    cfg, _ = resolve(args, "induce")
    out = need(cfg, "out")
    model, meta = load_model_dir(need(cfg, "model"))
    if meta.get("artifacts", {}).get("model_kind") != "student":
        raise CliError("induce needs a student checkpoint with structure heads")
    encs = _encode_all(model.codec, _load_examples(cfg, "data"))
    con_itos = model.codec.con_labels.itos
    tree_lines, head_lines = [], []
    for enc in encs:
        rows = model.reps(enc.main).mat
        heads = model.arc_scorer(rows).arc_logits.data.argmax(axis=1)
        head_lines.append(" ".join(str(int(h)) for h in heads))
        scored = model.span_scorer(rows)
        bt, _ = cyk_max(SpanScores(scored.n, scored.to_table()))
        named = bt.map_labels(lambda l: con_itos[l])
        named.tokens = list(enc.raw.sent.tokens)
        tree_lines.append(render_bracketed(unbinarize(named)))
    os.makedirs(out, exist_ok=True)
    trees_path = os.path.join(out, "induced_trees.txt")
    heads_path = os.path.join(out, "induced_heads.txt")
    with open(trees_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(tree_lines) + "\n")
    with open(heads_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(head_lines) + "\n")
    write_resolved(out, "induce", cfg)
    _say({"command": "induce", "n": len(encs), "trees": trees_path,
          "heads": heads_path})
    return 0


def cmd_gradcheck(args):
    cfg, _ = resolve(args, "gradcheck")
    suites = cfg["suites"]
    names = (suites.split(",") if isinstance(suites, str) else suites) or None
    try:
        results = run_all(n_cases=cfg["cases"], seed=cfg["seed"], names=names)
    except KeyError as e:
        raise CliError(str(e.args[0])) from None
    for row in results:
        _say(row)
    if cfg["out"]:
        os.makedirs(cfg["out"], exist_ok=True)
        with open(os.path.join(cfg["out"], "gradcheck.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
        write_resolved(cfg["out"], "gradcheck", cfg)
    return 0 if all(r["ok"] for r in results) else 1


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": message}), file=sys.stderr)
        raise SystemExit(2)


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--task", choices=sorted(TASK_ALIASES))
    p.add_argument("--out")


def _add_distill_scalars(p):
    p.add_argument("--mode", choices=["A", "B"])
    p.add_argument("--eta", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--alpha-fixed", type=float)
    p.add_argument("--g1", type=int)
    p.add_argument("--g2", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--patience", type=int)
    for flag in ("--no-sem", "--no-syn", "--no-reg", "--no-anneal"):
        p.add_argument(flag, action="store_true", default=None)


def build_parser():
    parser = _Parser(prog="synkd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic train/dev/test JSONL")
    _add_common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--n-dev", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--grammar-size", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="supervised tree-teacher pre-training")
    _add_common(p)
    p.add_argument("--kind", choices=list(TEACHER_KINDS))
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--teacher-emb", type=int)
    p.add_argument("--teacher-hidden", type=int)
    p.add_argument("--teacher-layers", type=int)
    p.add_argument("--co-train-struct", action="store_true", default=None)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="distill frozen teachers into the student")
    _add_common(p)
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--teachers", help="comma-separated teacher run dirs")
    p.add_argument("--teacher-mode", choices=["soft", "hard"])
    p.add_argument("--emb-dim", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    _add_distill_scalars(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="metrics of a saved model on a dataset")
    _add_common(p)
    p.add_argument("--model", help="run dir holding the checkpoint")
    p.add_argument("--data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="linear probes and dominance analysis")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--train")
    p.add_argument("--data", help="held-out probe evaluation set")
    p.add_argument("--probe-task", choices=list(PROBE_KINDS))
    p.add_argument("--probe-iters", type=int)
    p.add_argument("--dep-only", help="run dir of the eta=1 student")
    p.add_argument("--con-only", help="run dir of the eta=0 student")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("induce", help="emit induced trees and head lists")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--data")
    p.set_defaults(func=cmd_induce)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    _add_common(p)
    p.add_argument("--cases", type=int)
    p.add_argument("--suites", help="comma-separated suite names")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except CliError as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 1
    except (DataError, DistillError, FloatingPointError, ValueError, OSError) as e:
        print(json.dumps({"error": f"{type(e).__name__}: {e}"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
