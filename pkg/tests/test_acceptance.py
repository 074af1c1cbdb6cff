"""Acceptance gate: one test per numbered release criterion.

Each test prints a single pass line on success; a failure's assert
message explains what was violated.  Criteria 10 and 11 need a real
converted dataset and skip unless AFFECTBENCH_DATA_DIR points at one.
The container-converter package ships its own suite (criterion 12).
"""

import os
import time

import numpy as np
import pytest

from affectbench import kernels
from affectbench.autodiff import Tensor, conv1d
from affectbench.cli import SEED_ENV_VAR, main
from affectbench.datapipe import (
    AffectClass,
    WINDOW_LEN,
    WINDOW_STRIDE,
    load_subject,
    make_windows,
    normalize,
    scan_windows,
    split_personalized,
    split_subject_exclusive,
    split_subject_inclusive,
    synth_generate,
    write_subject,
)
from affectbench.errors import (
    BadMagicError,
    ConfigMismatchError,
    FormatError,
    ModalityTableError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from affectbench.gradcheck import TOLERANCE, run_gradient_checks
from affectbench.model import (
    CheckpointMeta,
    ModelConfig,
    build_model,
    read_checkpoint,
    save_checkpoint,
)
from affectbench.protocols import (
    PROTOCOL_EXCLUSIVE,
    PROTOCOL_PERSONALIZED,
    ConfusionMatrix,
    accuracy,
    macro_f1,
    run_experiment,
)
from affectbench.rng import Rng
from affectbench.training import AdamWState, TrainConfig, adamw_step

from helpers import (
    accuracy_brute,
    adam_scalar_trajectory,
    centroid_accuracy,
    confusion_brute,
    conv1d_naive,
    macro_f1_brute,
)

DATASET_ENV = "AFFECTBENCH_DATA_DIR"

# Shared separable synthetic cohort: 3 subjects, 2 s per condition.
_COHORT_SEED = 42
_TRAIN_SEED = 7
_MAX_EPOCHS = 50


@pytest.fixture(scope="module")
def cohort():
    return synth_generate(3, 2.0, seed=_COHORT_SEED)


@pytest.fixture(scope="module")
def full_experiment(cohort):
    """All three protocols at full config; shared by criteria 6 and 7."""
    cfg = TrainConfig(max_epochs=_MAX_EPOCHS, seed=_TRAIN_SEED)
    started = time.perf_counter()
    summary = run_experiment(cohort, cfg, ModelConfig(), jobs=1)
    elapsed = time.perf_counter() - started
    return summary, elapsed


def test_criterion_01_gradient_checks():
    started = time.perf_counter()
    results = run_gradient_checks(seed=0)
    elapsed = time.perf_counter() - started
    worst = max(results.values())
    for name, err in results.items():
        assert err <= TOLERANCE, (
            f"gradient check {name} error {err:.3e} exceeds {TOLERANCE:.0e}")
    assert elapsed <= 60.0, f"gradient checks took {elapsed:.1f} s (> 60 s)"
    print(f"criterion 1 PASS: {len(results)} gradient checks, worst "
          f"{worst:.2e} <= {TOLERANCE:.0e}, {elapsed:.2f} s")


def test_criterion_02_conv_bitwise_exactness():
    rng = Rng(1000)
    for i in range(200):
        b = 1 + rng.below(3)
        cin = 1 + rng.below(4)
        cout = 1 + rng.below(4)
        k = 1 + rng.below(5)
        pad = rng.below(3)
        length = max(1, k - 2 * pad) + rng.below(10)
        x = rng.normals(b * cin * length).reshape(b, cin, length)
        w = rng.normals(cout * cin * k).reshape(cout, cin, k)
        bias = rng.normals(cout)
        x_pad = np.zeros((b, cin, length + 2 * pad))
        x_pad[:, :, pad:pad + length] = x
        got = conv1d(Tensor(x), Tensor(w), Tensor(bias), pad=pad).data
        want = conv1d_naive(x_pad, w, bias)
        assert np.array_equal(got, want), (
            f"instance {i}: conv1d deviates from the naive triple loop")
    print(f"criterion 2 PASS: 200 random conv instances bit-identical to "
          f"the naive reference ({kernels.active_backend()} backend)")


def test_criterion_03_adamw_against_scalar_adam():
    rng = Rng(1001)
    worst = 0.0
    for _ in range(100):
        theta0 = float(rng.normals(1)[0])
        grads = [float(g) for g in rng.normals(10)]
        want = adam_scalar_trajectory(theta0, grads)
        params = {"w": np.array([theta0])}
        state = AdamWState.init(params, weight_decay=0.0)
        for step, g in enumerate(grads):
            adamw_step(state, params, {"w": np.array([g])})
            err = abs(float(params["w"][0]) - want[step])
            worst = max(worst, err)
            assert err <= 1e-12, (
                f"AdamW(decay=0) drifts {err:.2e} from scalar Adam at "
                f"step {step + 1}")

    params = {"w": np.array([1.0])}
    adamw_step(AdamWState.init(params), params, {"w": np.array([0.5])})
    first = float(params["w"][0])
    assert abs(first - 0.99899000002) <= 1e-9, (
        f"first-step worked example gave {first!r}")
    print(f"criterion 3 PASS: 100x10-step trajectories within 1e-12 "
          f"(worst {worst:.2e}); first step {first:.11f}")


def brute_window_scan(labels):
    """Independent rescan of kept/discarded windows from raw labels."""
    kept = []
    discarded = 0
    for start in range(0, len(labels) - WINDOW_LEN + 1, WINDOW_STRIDE):
        chunk = labels[start:start + WINDOW_LEN]
        if chunk[0] in (1, 2, 3) and all(c == chunk[0] for c in chunk):
            kept.append(start)
        else:
            discarded += 1
    return kept, discarded


def test_criterion_04_split_invariants():
    recordings = synth_generate(5, 1.5, seed=11)
    prepared = {}
    for rec in recordings:
        kept, discarded = scan_windows(normalize(rec))
        want_starts, want_discarded = brute_window_scan(
            [int(c) for c in rec.labels])
        assert [w.start_index for w in kept] == want_starts, (
            f"subject {rec.subject_id}: window starts disagree with "
            "the brute rescan")
        assert discarded == want_discarded, (
            f"subject {rec.subject_id}: discarded count {discarded} != "
            f"{want_discarded}")
        prepared[rec.subject_id] = kept

    pool = [w for ws in prepared.values() for w in ws]
    for sid, ws in prepared.items():
        per = split_personalized(ws)
        by_class = {c: [w for w in ws if w.label == c] for c in AffectClass}
        for cls, cws in by_class.items():
            n = len(cws)
            a, b = (70 * n) // 100, (85 * n) // 100
            got = (sum(1 for w in per.train if w.label == cls),
                   sum(1 for w in per.val if w.label == cls),
                   sum(1 for w in per.test if w.label == cls))
            assert got == (a, b - a, n - b), (
                f"subject {sid} class {cls.name}: segment sizes {got} != "
                f"({a}, {b - a}, {n - b})")

        exc = split_subject_exclusive(pool, sid)
        inc = split_subject_inclusive(pool, sid)
        assert all(w.subject_id != sid for w in exc.train + exc.val), (
            f"subject {sid} leaked into exclusive train/val")
        test_ids = {w.identity() for w in per.test}
        assert {w.identity() for w in exc.test} == test_ids
        assert {w.identity() for w in inc.test} == test_ids
    print("criterion 4 PASS: window counts, 70/15/15 boundaries, "
          "exclusion, and shared test sets hold for 5 subjects")


def test_criterion_05_cmd_run_byte_determinism(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    data = tmp_path / "data"
    assert main(["synth", "--subjects", "3", "--seconds", "1.0",
                 "--seed", "42", "--out", str(data)]) == 0
    overrides = ["model.depth=1", "model.base_channels=4",
                 "model.fc_hidden=8", "model.dropout_rate=0.0",
                 "train.max_epochs=2", "train.batch_size=32"]
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = main(["run", "--protocol", "all", "--data", str(data),
                     "--out", str(out), "--seed", "9", "--jobs", "1"]
                    + overrides)
        assert code == 0
        outs.append(out)
    first_files = sorted(p.name for p in outs[0].iterdir())
    second_files = sorted(p.name for p in outs[1].iterdir())
    assert first_files == second_files
    assert any(n.endswith(".ckpt") for n in first_files)
    for name in first_files:
        a = (outs[0] / name).read_bytes()
        b = (outs[1] / name).read_bytes()
        assert a == b, f"{name} differs between identical runs"
    print(f"criterion 5 PASS: two --protocol all runs produced "
          f"{len(first_files)} byte-identical artifacts")


def test_criterion_06_personalized_learning_sanity(cohort, full_experiment):
    # Verify the data is separable by a model-free oracle first.
    for rec in cohort:
        ws = make_windows(normalize(rec))
        split = split_personalized(ws)
        oracle = centroid_accuracy(split.train, split.test)
        assert oracle >= 0.95, (
            f"subject {rec.subject_id}: centroid oracle only {oracle:.2f}; "
            "the synthetic set is not separable enough to test learning")

    summary, elapsed = full_experiment
    agg = summary.aggregates[PROTOCOL_PERSONALIZED]
    assert agg.accuracy_mean_pct >= 95.0, (
        f"personalized mean accuracy {agg.accuracy_mean_pct:.2f}% < 95% "
        f"within {_MAX_EPOCHS} epochs")
    assert elapsed <= 300.0, (
        f"experiment took {elapsed:.0f} s; the learning-sanity budget "
        "is 300 s")
    print(f"criterion 6 PASS: centroid oracle >= 95% per subject; "
          f"personalized mean {agg.accuracy_mean_pct:.2f}% in "
          f"{_MAX_EPOCHS} epochs ({elapsed:.0f} s)")


def test_criterion_07_personalized_beats_exclusive(full_experiment):
    summary, _ = full_experiment
    personalized = summary.aggregates[PROTOCOL_PERSONALIZED].accuracy_mean_pct
    exclusive = summary.aggregates[PROTOCOL_EXCLUSIVE].accuracy_mean_pct
    gap = personalized - exclusive
    assert gap >= 10.0, (
        f"personalized {personalized:.2f}% vs subject-exclusive "
        f"{exclusive:.2f}%: gap {gap:.2f} < 10 points")
    print(f"criterion 7 PASS: personalized {personalized:.2f}% vs "
          f"subject-exclusive {exclusive:.2f}% (gap {gap:.2f} points)")


def test_criterion_08_metric_oracles():
    rng = Rng(1002)
    for i in range(1000):
        n = 1 + rng.below(60)
        y_true = rng.below_many(3, n)
        y_pred = rng.below_many(3, n)
        cm = ConfusionMatrix.from_pairs(y_true, y_pred)
        assert cm.to_lists() == confusion_brute(y_true, y_pred), (
            f"instance {i}: confusion counts differ")
        assert accuracy(cm) == accuracy_brute(y_true, y_pred), (
            f"instance {i}: accuracy differs")
        assert macro_f1(cm) == pytest.approx(
            macro_f1_brute(y_true, y_pred), abs=1e-12), (
            f"instance {i}: macro F1 differs")
    worked = macro_f1(ConfusionMatrix.from_pairs(
        [0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0]))
    want = (0.5 + 0.8 + 2.0 / 3.0) / 3.0
    assert abs(worked - want) <= 1e-9, (
        f"worked macro-F1 example gave {worked!r}, wanted {want!r}")
    print(f"criterion 8 PASS: 1000 random metric instances exact; worked "
          f"example {worked:.6f}")


def test_criterion_09_format_roundtrips(tmp_path):
    # Container: write -> load -> write must reproduce identical bytes.
    rec = synth_generate(1, 1.0, seed=13)[0]
    p1 = tmp_path / "a.afb"
    p2 = tmp_path / "b.afb"
    write_subject(rec, p1)
    back = load_subject(p1)
    assert back.equals(rec)
    write_subject(back, p2)
    assert p1.read_bytes() == p2.read_bytes()

    blob = bytearray(p1.read_bytes())
    cases = []
    bad = tmp_path / "bad_magic.afb"
    bad.write_bytes(b"ZZZZ" + bytes(blob[4:]))
    cases.append((bad, BadMagicError))
    vers = tmp_path / "bad_version.afb"
    vers.write_bytes(bytes(blob[:4]) + (9).to_bytes(2, "little")
                     + bytes(blob[6:]))
    cases.append((vers, UnsupportedVersionError))
    mods = tmp_path / "bad_modalities.afb"
    mods.write_bytes(bytes(blob[:8]) + (3).to_bytes(2, "little")
                     + bytes(blob[10:]))
    cases.append((mods, ModalityTableError))
    cut = tmp_path / "truncated.afb"
    cut.write_bytes(bytes(blob[:len(blob) // 2]))
    cases.append((cut, TruncatedFileError))
    extra = tmp_path / "trailing.afb"
    extra.write_bytes(bytes(blob) + b"\x00")
    cases.append((extra, FormatError))
    container_errors = []
    for path, err_cls in cases:
        with pytest.raises(err_cls):
            load_subject(path)
        container_errors.append(err_cls.__name__)

    # Checkpoint: save -> read -> serialize must reproduce identical bytes.
    model = build_model(ModelConfig(), Rng(14))
    c1 = tmp_path / "a.ckpt"
    saved = save_checkpoint(
        model, CheckpointMeta(ModelConfig(), seed=3, epoch=2, val_loss=0.5),
        c1)
    again = read_checkpoint(c1)
    assert again.to_bytes() == saved.to_bytes() == c1.read_bytes()

    cblob = bytearray(c1.read_bytes())
    ckpt_cases = []
    cm = tmp_path / "ck_magic.ckpt"
    cm.write_bytes(b"ZZZZ" + bytes(cblob[4:]))
    ckpt_cases.append((cm, BadMagicError, None))
    cv = tmp_path / "ck_version.ckpt"
    cv.write_bytes(bytes(cblob[:4]) + (7).to_bytes(2, "little")
                   + bytes(cblob[6:]))
    ckpt_cases.append((cv, UnsupportedVersionError, None))
    ct = tmp_path / "ck_cut.ckpt"
    ct.write_bytes(bytes(cblob[:33]))
    ckpt_cases.append((ct, TruncatedFileError, None))
    ckpt_errors = []
    for path, err_cls, _ in ckpt_cases:
        with pytest.raises(err_cls):
            read_checkpoint(path)
        ckpt_errors.append(err_cls.__name__)
    from affectbench.model import load_checkpoint
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(c1, expected_cfg=ModelConfig(depth=2, window_len=64))
    ckpt_errors.append(ConfigMismatchError.__name__)

    distinct = set(container_errors) | set(ckpt_errors)
    assert len(distinct) >= 5, "corruption modes collapsed into one class"
    print(f"criterion 9 PASS: container and checkpoint round trips "
          f"bitwise; distinct errors {sorted(distinct)}")


needs_dataset = pytest.mark.skipif(
    not os.environ.get(DATASET_ENV),
    reason=f"set {DATASET_ENV} to a directory of converted containers",
)


@pytest.fixture(scope="module")
def real_dataset_summary():
    data_dir = os.environ[DATASET_ENV]
    paths = sorted(
        os.path.join(data_dir, n)
        for n in os.listdir(data_dir) if n.endswith(".afb")
    )
    recordings = [load_subject(p) for p in paths]
    cfg = TrainConfig(max_epochs=_MAX_EPOCHS, seed=_TRAIN_SEED)
    jobs = int(os.environ.get("AFFECTBENCH_JOBS", os.cpu_count() or 1))
    return run_experiment(recordings, cfg, ModelConfig(), jobs=jobs)


@needs_dataset
def test_criterion_10_real_dataset_ordering(real_dataset_summary):
    summary = real_dataset_summary
    per = summary.aggregates[PROTOCOL_PERSONALIZED].accuracy_mean_pct
    others = [agg.accuracy_mean_pct
              for name, agg in summary.aggregates.items()
              if name != PROTOCOL_PERSONALIZED]
    assert per >= 85.0
    for mean in others:
        assert per - mean >= 15.0
        assert 55.0 <= mean <= 80.0
    print(f"criterion 10 PASS: personalized {per:.2f}% vs generalized "
          f"{[f'{m:.2f}' for m in others]}")


@needs_dataset
def test_criterion_11_per_subject_ordering(real_dataset_summary):
    summary = real_dataset_summary
    per = {r.subject_id: r.accuracy
           for r in summary.by_type(PROTOCOL_PERSONALIZED)}
    exc = {r.subject_id: r.accuracy
           for r in summary.by_type(PROTOCOL_EXCLUSIVE)}
    losses = [sid for sid in sorted(per)
              if sid in exc and per[sid] <= exc[sid]]
    # Reported, not hard-failed: list any subject where the personalized
    # model did not come out ahead.
    if losses:
        print(f"criterion 11 NOTE: personalized did not beat "
              f"subject-exclusive for subjects {losses}")
    else:
        print("criterion 11 PASS: personalized beats subject-exclusive "
              "for every subject")
