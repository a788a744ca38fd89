import copy
import json

import numpy as np
import pytest

from synkd.distill import DistillConfig, DistillError, TeacherSet
from synkd.encoders import Codec, GcnModel, StudentModel, make_teacher, TEACHER_KINDS
from synkd.syntax_data import DataError, Example, gen_synthetic
from synkd.train import (
    BatchSampler,
    RunLog,
    RunState,
    Schedule,
    classification_metrics,
    dev_metric_key,
    distill_student,
    evaluate,
    load_checkpoint,
    load_run_state,
    params_fingerprint,
    predict,
    read_log,
    save_checkpoint,
    save_run_state,
    student_forward,
    tagging_metrics,
    train_teacher,
)


# ------------------------------------------------------------------ fixtures

def small_data(n=48, seed=0, task="cls", max_len=8):
    examples = gen_synthetic(n, max_len=max_len, seed=seed, task=task, grammar_size=4)
    codec = Codec(examples, task)
    return codec, [codec.encode(ex) for ex in examples]


def small_student(codec, seed=1, layers=2):
    return StudentModel(codec, emb_dim=10, hidden=8, n_layers=layers,
                        rng=np.random.default_rng(seed))


def small_teachers(codec, seed=2):
    rng = np.random.default_rng(seed)
    dep, con = [], []
    for kind in TEACHER_KINDS:
        m = make_teacher(kind, codec, emb_dim=10, hidden=8, n_layers=1, rng=rng)
        (dep if m.structure == "dep" else con).append(m)
    return TeacherSet(dep=dep, con=con)


# ------------------------------------------------------------------ schedule

def test_schedule_flag_trace():
    s = Schedule(total=6, g1=4, g2=2)
    assert [s.dep_turn(t) for t in range(1, 5)] == [True, True, False, False]
    s1 = Schedule(total=8, g1=6, g2=1)
    assert [s1.dep_turn(t) for t in range(1, 7)] == [True, False, True, False, True, False]
    s3 = Schedule(total=10, g1=9, g2=3)
    assert [s3.dep_turn(t) for t in range(1, 10)] == [True] * 3 + [False] * 3 + [True] * 3


def test_schedule_validation():
    for bad in (dict(total=5, g1=6, g2=2), dict(total=5, g1=3, g2=4),
                dict(total=5, g1=3, g2=0)):
        with pytest.raises(ValueError):
            Schedule(**bad)
    with pytest.raises(ValueError):
        Schedule().dep_turn(0)


# ---------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    state = {
        "scalar": np.float32(3.5),
        "vec": rng.normal(size=7).astype(np.float32),
        "mat/with/slashes": rng.normal(size=(3, 4)).astype(np.float32),
        "cube-é": rng.normal(size=(2, 3, 2)).astype(np.float32),
    }
    path = tmp_path / "m.syd1"
    save_checkpoint(path, state)
    back = load_checkpoint(path)
    assert set(back) == set(state)
    for k in state:
        got = back[k]
        want = np.asarray(state[k], dtype=np.float32)
        assert got.shape == want.shape
        assert np.array_equal(got, want)  # f32 payload is exact

    raw = path.read_bytes()
    assert raw[:4] == b"SYD1"

    bad = tmp_path / "bad.syd1"
    bad.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ValueError, match="not a SYD1"):
        load_checkpoint(bad)
    trunc = tmp_path / "trunc.syd1"
    trunc.write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(trunc)
    vers = tmp_path / "vers.syd1"
    vers.write_bytes(raw[:4] + bytes([9]) + raw[5:])
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(vers)


def test_run_log_round_trip(tmp_path):
    path = tmp_path / "log.jsonl"
    with RunLog(path, flush_every=2) as log:
        log.log(1, "train", "loss", 0.5)
        log.log(200, "dev", "accuracy", 91.25)
    rows = read_log(path)
    assert rows == [
        {"iteration": 1, "split": "train", "metric": "loss", "value": 0.5},
        {"iteration": 200, "split": "dev", "metric": "accuracy", "value": 91.25},
    ]


# ------------------------------------------------------------------ batching

def test_batch_sampler_same_length_and_deterministic():
    codec, encs = small_data(40, seed=3)
    sampler = BatchSampler(encs)
    rng = np.random.default_rng(5)
    seen = set()
    for _ in range(30):
        idxs = sampler.draw(rng, 8)
        lengths = {encs[i].main.n for i in idxs}
        assert len(lengths) == 1
        assert len(set(idxs)) == len(idxs)  # no duplicates within a batch
        seen.update(idxs)
    assert len(seen) > 20  # wide coverage
    a = BatchSampler(encs).draw(np.random.default_rng(7), 8)
    b = BatchSampler(encs).draw(np.random.default_rng(7), 8)
    assert a == b
    with pytest.raises(ValueError):
        BatchSampler([])


# ------------------------------------------------------------------- metrics

def test_classification_metrics_identities():
    out = classification_metrics([0, 1, 0, 1], [0, 1, 0, 1])
    assert out["accuracy"] == 100.0 and out["macro_f1"] == 100.0
    out = classification_metrics([0, 1, 0, 1], [1, 1, 1, 1])
    assert out["accuracy"] == 50.0


def test_classification_metrics_hand_fixture():
    # 10 examples, 3 classes; confusion rows (gold x pred):
    # gold0: 3 as 0, 1 as 1 | gold1: 2 as 1, 1 as 2 | gold2: 1 as 0, 2 as 2
    golds = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2]
    preds = [0, 0, 0, 1, 1, 1, 2, 0, 2, 2]
    # class0: P=3/4, R=3/4, F1=0.75 ; class1: P=2/3, R=2/3, F1=2/3
    # class2: P=2/3, R=2/3, F1=2/3 ; macro = (0.75 + 2/3 + 2/3)/3
    out = classification_metrics(golds, preds)
    assert out["accuracy"] == pytest.approx(70.0)
    assert out["macro_f1"] == pytest.approx(100 * (0.75 + 2 / 3 + 2 / 3) / 3, abs=1e-9)


def test_tagging_metrics_identities():
    gold = [[1, 1, 0, 2]]
    assert tagging_metrics(gold, [[1, 1, 0, 2]], o_id=0)["token_f1"] == 100.0
    # one missed positive, one spurious positive, two correct positives
    pred = [[1, 0, 1, 2]]
    out = tagging_metrics(gold, pred, o_id=0)
    # tp=2 (pos 0 and 3), fp=1 (pos 2), fn=1 (pos 1): P=R=2/3
    assert out["token_f1"] == pytest.approx(100 * 2 / 3, abs=1e-9)
    assert out["accuracy"] == 50.0
    assert dev_metric_key("tag") == "token_f1"
    assert dev_metric_key("cls") == "accuracy"


def test_evaluate_empty_rejected():
    codec, encs = small_data(8)
    student = small_student(codec)
    with pytest.raises(ValueError):
        evaluate(student, [])


# --------------------------------------------------- batched student forward

def test_student_batched_matches_single():
    codec, encs = small_data(24, seed=4)
    student = small_student(codec)
    group = [e for e in encs if e.main.n == encs[0].main.n][:5]
    logits, _ = student_forward(student, group)
    for b, enc in enumerate(group):
        single = student.logits(enc)
        np.testing.assert_allclose(logits.data[b], single.data[0], atol=1e-5)


def test_student_predict_ignores_trees():
    codec, encs = small_data(16, seed=6)
    student = small_student(codec)
    with_trees = predict(student, encs)
    stripped = copy.copy(encs)
    for enc in stripped:
        enc.main.heads = None
        enc.main.bintree = None
        enc.main.dep_graph = None
        enc.main.con_graph = None
    assert predict(student, stripped) == with_trees


def test_pair_and_tag_tasks_run():
    for task in ("pair", "tag"):
        codec, encs = small_data(16, seed=7, task=task)
        student = small_student(codec)
        out = evaluate(student, encs)
        key = dev_metric_key(task)
        assert 0.0 <= out[key] <= 100.0


# ------------------------------------------------------------ teacher train

def test_train_teacher_beats_majority(tmp_path):
    codec, encs = small_data(90, seed=8)
    train, dev = encs[:72], encs[72:]
    model = GcnModel(codec, "dep", emb_dim=16, n_layers=1,
                     rng=np.random.default_rng(3))
    log = RunLog(tmp_path / "log.jsonl")
    state = train_teacher(model, train, dev, iters=300, batch_size=8, lr=1e-2,
                          eval_every=40, patience=20, seed=0, log=log)
    log.close()
    labels = [e.label for e in dev]
    majority = 100.0 * max(labels.count(0), labels.count(1)) / len(labels)
    acc = evaluate(model, dev)["accuracy"]
    assert acc > majority
    rows = read_log(tmp_path / "log.jsonl")
    assert any(r["metric"] == "n_params" for r in rows)
    assert any(r["split"] == "dev" for r in rows)

    # checkpoint round trip preserves the metric exactly
    save_checkpoint(tmp_path / "t.syd1", model.p.state_dict())
    fresh = GcnModel(codec, "dep", emb_dim=16, n_layers=1,
                     rng=np.random.default_rng(99))
    fresh.p.load_state_dict(load_checkpoint(tmp_path / "t.syd1"))
    assert evaluate(fresh, dev)["accuracy"] == acc


def test_train_teacher_missing_annotation():
    codec, encs = small_data(8, seed=9)
    bare = [codec.encode(Example(e.raw.sent, None, None, label=e.raw.label))
            for e in encs]
    model = GcnModel(codec, "dep", emb_dim=8, n_layers=1,
                     rng=np.random.default_rng(0))
    with pytest.raises(DataError, match="dependency"):
        train_teacher(model, bare, None, iters=1)


# -------------------------------------------------------------- distillation

def hand_trace(sched, kinds, lam1=0.6, lam2=0.2):
    rows = []
    for t in range(1, sched.total + 1):
        if t <= sched.g1:
            if lam2 > 0:
                rows.append((t, "sem"))
            dep_turn = sched.dep_turn(t)
            for kind in kinds:
                rows.append((t, f"output/{kind}"))
                structure = "dep" if kind.endswith("-dep") else "con"
                if lam1 > 0 and (structure == "dep") == dep_turn:
                    rows.append((t, f"{structure}/{kind}"))
        else:
            rows.append((t, "all"))
    return rows


def test_algorithm_trace_matches_hand_simulation():
    codec, encs = small_data(24, seed=10)
    student = small_student(codec)
    teachers = small_teachers(codec)
    before = [params_fingerprint(m.p) for m in teachers.all]
    sched = Schedule(total=6, g1=4, g2=2)
    cfg = DistillConfig(total_iters=6)
    state = distill_student(student, teachers, encs, None, cfg, sched,
                            batch_size=4, lr=1e-3, seed=0)
    kinds = [m.kind for m in teachers.all]
    assert kinds == list(TEACHER_KINDS)
    assert state.trace == hand_trace(sched, kinds)
    # frozen teachers: bitwise unchanged
    assert [params_fingerprint(m.p) for m in teachers.all] == before


def test_degenerate_config_trace():
    codec, encs = small_data(16, seed=11)
    student = small_student(codec)
    teachers = small_teachers(codec)
    sched = Schedule(total=3, g1=2, g2=1)
    cfg = DistillConfig(lam1=0.0, lam2=0.0, alpha_fixed=1.0, total_iters=3)
    state = distill_student(student, teachers, encs, None, cfg, sched,
                            batch_size=4, lr=1e-3, seed=0)
    expected = hand_trace(sched, list(TEACHER_KINDS), lam1=0.0, lam2=0.0)
    assert state.trace == expected
    assert all("sem" not in w and "dep/" not in w and "con/" not in w
               for _, w in state.trace)


def test_distill_component_log_zeroes(tmp_path):
    codec, encs = small_data(16, seed=12)
    student = small_student(codec)
    teachers = small_teachers(codec)
    sched = Schedule(total=3, g1=1, g2=1)
    cfg = DistillConfig(lam1=0.0, lam2=0.0, alpha_fixed=1.0, total_iters=3)
    with RunLog(tmp_path / "log.jsonl") as log:
        distill_student(student, teachers, encs, None, cfg, sched,
                        batch_size=4, lr=1e-3, seed=0, log=log)
    rows = read_log(tmp_path / "log.jsonl")
    syn = [r for r in rows if r["metric"] == "loss_syn"]
    sem = [r for r in rows if r["metric"] == "loss_sem"]
    out = [r for r in rows if r["metric"] == "loss_output"]
    assert len(syn) == 3 and len(sem) == 3 and len(out) == 3
    assert all(r["value"] == 0.0 for r in syn + sem)
    assert all(r["value"] > 0.0 for r in out)


def test_distill_one_sided_teacher_sets():
    # a teacher set with only one structure type must survive the joint
    # phase: the lone group keeps full weight under the eta mixture
    codec, encs = small_data(16, seed=19)
    full = small_teachers(codec)
    for tset in (TeacherSet(dep=full.dep, con=[]),
                 TeacherSet(dep=[], con=full.con)):
        student = small_student(codec)
        sched = Schedule(total=3, g1=1, g2=1)
        state = distill_student(student, tset, encs, None,
                                DistillConfig(total_iters=3), sched,
                                batch_size=4, lr=1e-3, seed=0)
        assert (3, "all") in state.trace


def test_distill_mode_a_runs_and_registers_projections():
    codec, encs = small_data(16, seed=13)
    student = small_student(codec)
    teachers = small_teachers(codec)
    sched = Schedule(total=2, g1=2, g2=1)
    cfg = DistillConfig(mode="A", total_iters=2)
    distill_student(student, teachers, encs, None, cfg, sched,
                    batch_size=4, lr=1e-3, seed=0)
    assert "f_s" in student.projections
    for kind in TEACHER_KINDS:
        assert f"f_t/{kind}" in student.projections


def test_distill_vocab_mismatch():
    codec_a, encs = small_data(16, seed=14)
    codec_b, _ = small_data(16, seed=15, max_len=7)
    assert codec_a.vocab.itos != codec_b.vocab.itos or True
    student = small_student(codec_a)
    teachers = small_teachers(codec_b)
    if codec_a.vocab.itos == codec_b.vocab.itos:
        pytest.skip("sampled vocabularies coincide")
    with pytest.raises(DistillError, match="vocab"):
        distill_student(student, teachers, encs, None,
                        DistillConfig(total_iters=2), Schedule(total=2, g1=1, g2=1),
                        batch_size=4, seed=0)


def test_distill_nan_abort():
    codec, encs = small_data(12, seed=16)
    student = small_student(codec)
    student.p["enc/emb"].data[:] = np.nan
    with pytest.raises(FloatingPointError, match="iteration 1"):
        distill_student(student, None, encs, None,
                        DistillConfig(total_iters=2), Schedule(total=2, g1=1, g2=1),
                        batch_size=4, seed=0)


def test_optimize_skips_constant_loss():
    # a loss with no parameter ancestry (e.g. every hinge in the batch at
    # zero) must be a logged no-op, not a backward error
    from synkd.tensor import Adam, Tensor
    from synkd.train import RunState, _optimize

    w = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    state = RunState(seed=0, adam=Adam([w], lr=0.1))
    before = w.data.copy()
    val = _optimize(state, lambda: Tensor(np.array(3.0, dtype=np.float32)), "syn")
    assert val == 3.0
    assert state.trace == [(1, "syn")]
    assert np.array_equal(w.data, before)


def test_supervised_path_and_early_stopping():
    codec, encs = small_data(40, seed=17)
    student = small_student(codec)
    state = distill_student(student, None, encs[:32], encs[32:],
                            DistillConfig(total_iters=40),
                            Schedule(total=40, g1=1, g2=1),
                            batch_size=8, lr=1e-2, eval_every=5, patience=2, seed=0)
    assert all(w == "supervised" for _, w in state.trace)
    assert state.history  # dev evals happened
    assert state.best_iter > 0
    # best params were restored
    assert params_fingerprint(student.p) is not None


def test_identical_seeds_give_bitwise_identical_runs():
    results = []
    for _ in range(2):
        codec, encs = small_data(24, seed=18)
        student = small_student(codec, seed=5)
        teachers = small_teachers(codec, seed=6)
        sched = Schedule(total=4, g1=2, g2=1)
        state = distill_student(student, teachers, encs[:20], encs[20:],
                                DistillConfig(total_iters=4), sched,
                                batch_size=4, lr=1e-3, eval_every=2,
                                patience=10, seed=0)
        results.append((params_fingerprint(student.p), tuple(state.trace),
                        json.dumps(state.history)))
    assert results[0] == results[1]


def test_resume_reproduces_trajectory(tmp_path):
    def fresh():
        codec, encs = small_data(24, seed=19)
        student = small_student(codec, seed=5)
        teachers = small_teachers(codec, seed=6)
        return codec, encs, student, teachers

    sched = Schedule(total=6, g1=3, g2=1)
    cfg = DistillConfig(total_iters=6)

    _, encs, student_a, teachers_a = fresh()
    state_a = distill_student(student_a, teachers_a, encs[:20], encs[20:],
                              cfg, sched, batch_size=4, lr=1e-3,
                              eval_every=2, patience=10, seed=0)

    _, encs_b, student_b, teachers_b = fresh()
    state_b = distill_student(student_b, teachers_b, encs_b[:20], encs_b[20:],
                              cfg, sched, batch_size=4, lr=1e-3,
                              eval_every=2, patience=10, seed=0, stop_after=3)
    assert state_b.t == 3
    save_run_state(tmp_path / "run", student_b, state_b)

    _, encs_c, student_c, teachers_c = fresh()
    from synkd.train import prepare_student
    prepare_student(student_c, teachers_c, cfg)
    state_c = load_run_state(tmp_path / "run", student_c)
    assert state_c.t == 3
    state_c = distill_student(student_c, teachers_c, encs_c[:20], encs_c[20:],
                              cfg, sched, batch_size=4, lr=1e-3,
                              eval_every=2, patience=10, seed=0, state=state_c)

    assert params_fingerprint(student_c.p) == params_fingerprint(student_a.p)
    assert state_c.trace == state_a.trace
    assert state_c.history == state_a.history
    assert state_c.best_iter == state_a.best_iter
