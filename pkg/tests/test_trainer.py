"""Training loop tests: determinism, equivalences, early stopping, reporting."""

import importlib

import numpy as np
import pytest

from sofactor.cg import IndefiniteOperatorError
from sofactor.data import split, synth_lowrank
from sofactor.model import Hyperparams, init_factors, rmse

train_mod = importlib.import_module("sofactor.train")
from sofactor.train import (
    EpochRecord,
    OptimizerKind,
    TrainReport,
    _sgdm_epoch,
    _sgdm_epoch_py,
    train,
)


def make_split(seed=0, nu=25, ns=30, rank=2, noise=0.02):
    t, _ = synth_lowrank(nu, ns, rank=rank, density=0.4, noise_sigma=noise,
                         seed=seed, init_lo=0.2, init_hi=1.0)
    return split(t, 0.6, 0.2, seed=seed)


def so_params(**kw):
    base = dict(f=2, lambda_r1=0.01, lambda_r2=1e-4, gamma=1.0, tau=1e-6,
                cg_max_iters=30, max_epochs=25, patience=5,
                init_lo=0.2, init_hi=1.0, seed=1)
    base.update(kw)
    return Hyperparams(**base)


def traces(report):
    return [(r.epoch, r.train_rmse, r.val_rmse, r.inner_iters) for r in report.epochs]


# ------------------------------------------------------------ optimizer kind

def test_optimizer_kind_validation():
    with pytest.raises(ValueError, match="unknown optimizer"):
        OptimizerKind(name="ADAM")
    with pytest.raises(ValueError):
        OptimizerKind.sgdm(learning_rate=0.0)
    with pytest.raises(ValueError):
        OptimizerKind.sgdm(momentum=1.0)
    assert OptimizerKind.drslf().name == "DRSLF"
    assert OptimizerKind.slf().name == "SLF"


# --------------------------------------------------------------- determinism

@pytest.mark.parametrize("kind", [OptimizerKind.drslf(),
                                  OptimizerKind.sgdm(0.05, 0.5)])
def test_training_is_deterministic(kind):
    sp = make_split()
    h = so_params()
    x1, r1 = train(sp, h, kind)
    x2, r2 = train(sp, h, kind)
    assert traces(r1) == traces(r2)
    assert r1.final_test_rmse == r2.final_test_rmse
    np.testing.assert_array_equal(x1.user_factors, x2.user_factors)
    np.testing.assert_array_equal(x1.service_factors, x2.service_factors)


def test_seed_changes_trajectory():
    sp = make_split()
    _, r1 = train(sp, so_params(seed=1))
    _, r2 = train(sp, so_params(seed=2))
    assert traces(r1) != traces(r2)


# -------------------------------------------------------------- equivalences

def test_slf_equals_drslf_without_l1():
    sp = make_split()
    h = so_params(lambda_r1=0.0)
    x_a, r_a = train(sp, h, OptimizerKind.drslf())
    x_b, r_b = train(sp, so_params(lambda_r1=0.37), OptimizerKind.slf())
    # SLF drops the smooth L1 term no matter what lambda_r1 says
    assert traces(r_a) == traces(r_b)
    np.testing.assert_array_equal(x_a.user_factors, x_b.user_factors)
    np.testing.assert_array_equal(x_a.service_factors, x_b.service_factors)


def plain_sgd_reference(sp, h, lr, epochs):
    """Momentum-free SGD written as a scalar loop, mirroring the kernel's
    arithmetic order exactly."""
    t = sp.train.base
    x = init_factors(t.num_users, t.num_services, h)
    xu, xs = x.user_factors, x.service_factors
    for epoch in range(1, epochs + 1):
        order = np.random.default_rng((h.seed, epoch)).permutation(len(t))
        for k in order:
            u, s = t.users[k], t.services[k]
            err = t.values[k]
            for d in range(h.f):
                err -= xu[u, d] * xs[s, d]
            for d in range(h.f):
                gu = -err * xs[s, d] + h.lambda_r2 * xu[u, d]
                gs = -err * xu[u, d] + h.lambda_r2 * xs[s, d]
                xu[u, d] += -lr * gu
                xs[s, d] += -lr * gs
    return x


def test_sgdm_momentum_zero_is_plain_sgd():
    sp = make_split()
    h = so_params(max_epochs=3, patience=3, lambda_r2=1e-3)
    got, _ = train(sp, h, OptimizerKind.sgdm(learning_rate=0.05, momentum=0.0))
    # train() returns the best-validation snapshot; rerun to the last epoch
    # is unnecessary because 3 epochs of fitting keep improving here
    want = plain_sgd_reference(sp, h, lr=0.05, epochs=3)
    np.testing.assert_array_equal(got.user_factors, want.user_factors)
    np.testing.assert_array_equal(got.service_factors, want.service_factors)


def test_sgdm_kernel_fallback_matches_jit():
    rng = np.random.default_rng(71)
    t, _ = synth_lowrank(8, 9, 2, 0.5, 0.05, seed=3, init_lo=0.2, init_hi=1.0)
    order = rng.permutation(len(t)).astype(np.int64)
    xu_a = rng.uniform(0.2, 1.0, (8, 3))
    xs_a = rng.uniform(0.2, 1.0, (9, 3))
    vu_a, vs_a = np.zeros_like(xu_a), np.zeros_like(xs_a)
    xu_b, xs_b, vu_b, vs_b = xu_a.copy(), xs_a.copy(), vu_a.copy(), vs_a.copy()
    args = (t.users, t.services, t.values, order)
    _sgdm_epoch(*args, xu_a, xs_a, vu_a, vs_a, 0.03, 0.6, 1e-4)
    _sgdm_epoch_py(*args, xu_b, xs_b, vu_b, vs_b, 0.03, 0.6, 1e-4)
    np.testing.assert_allclose(xu_a, xu_b, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(xs_a, xs_b, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(vu_a, vu_b, rtol=1e-12, atol=1e-15)


# ------------------------------------------------------------- early stopping

def test_patience_stop_semantics():
    sp = make_split()
    h = so_params(max_epochs=200, patience=4, tau=1e-9)
    _, report = train(sp, h)
    assert report.stop_reason == "patience"
    vals = [r.val_rmse for r in report.epochs]
    # best epoch is the first minimum
    assert report.best_epoch == int(np.argmin(vals)) + 1
    # exactly patience non-improving epochs after the best one
    assert len(report.epochs) == report.best_epoch + 4
    best = min(vals)
    assert all(v >= best for v in vals[report.best_epoch:])


def test_max_epochs_stop():
    sp = make_split()
    _, report = train(sp, so_params(max_epochs=3, patience=50))
    assert report.stop_reason == "max_epochs"
    assert [r.epoch for r in report.epochs] == [1, 2, 3]


def test_zero_epochs_returns_init():
    sp = make_split()
    h = so_params(max_epochs=0)
    x, report = train(sp, h)
    assert report.epochs == [] and report.stop_reason == "max_epochs"
    assert report.best_epoch == 0
    t = sp.train.base
    np.testing.assert_array_equal(
        x.user_factors, init_factors(t.num_users, t.num_services, h).user_factors)
    assert report.final_test_rmse == rmse(x, sp.test)


def test_returned_state_is_best_validation_snapshot():
    sp = make_split()
    x, report = train(sp, so_params(max_epochs=40, patience=3))
    vals = [r.val_rmse for r in report.epochs]
    assert rmse(x, sp.validation) == min(vals)
    assert report.final_test_rmse == rmse(x, sp.test)


def test_best_snapshot_keeps_strict_improvements_only():
    a = init_factors(4, 5, so_params(seed=1))
    b = init_factors(4, 5, so_params(seed=7))
    snap = train_mod.BestSnapshot()
    assert snap.consider(1, 0.5, a)
    assert not snap.consider(2, 0.5, b)  # tie keeps the earlier epoch
    assert not snap.consider(3, 0.7, b)
    assert (snap.epoch, snap.val_rmse) == (1, 0.5)
    assert snap.state is not a  # stored copy, immune to in-place updates
    np.testing.assert_array_equal(snap.state.user_factors, a.user_factors)


def test_restore_best_tracks_hand_fed_sequences():
    states = {e: init_factors(4, 5, so_params(seed=e)) for e in (1, 2, 3)}

    def run(vals):
        snap = train_mod.BestSnapshot()
        report = TrainReport()
        for epoch, val in enumerate(vals, 1):
            report.epochs.append(EpochRecord(epoch, val, val, 1, 0.0))
            snap.consider(epoch, val, states[epoch])
        report.best_epoch = snap.epoch
        return train_mod.restore_best(report, snap)

    # single epoch: that epoch is the best by definition
    out = run([0.9])
    np.testing.assert_array_equal(out.user_factors, states[1].user_factors)
    # strictly improving validation: the last epoch wins
    out = run([0.9, 0.5, 0.3])
    np.testing.assert_array_equal(out.user_factors, states[3].user_factors)
    # degrades after epoch 2: stays pinned at the minimum
    out = run([0.9, 0.5, 0.8])
    np.testing.assert_array_equal(out.user_factors, states[2].user_factors)


def test_restore_best_validates_inputs():
    with pytest.raises(ValueError, match="no epochs"):
        train_mod.restore_best(TrainReport(), train_mod.BestSnapshot())
    report = TrainReport(epochs=[EpochRecord(1, 1.0, 0.5, 1, 0.0)], best_epoch=2)
    snap = train_mod.BestSnapshot()
    snap.consider(1, 0.5, init_factors(3, 3, so_params()))
    with pytest.raises(ValueError, match="snapshot holds epoch 1"):
        train_mod.restore_best(report, snap)


def test_restored_state_revalidates_to_reported_minimum():
    # recompute the validation RMSE of the returned parameters from
    # scratch; it must equal the best epoch's logged value even though
    # training continued past it and degraded
    sp = make_split()
    x, report = train(sp, so_params(max_epochs=40, patience=4))
    vals = [r.val_rmse for r in report.epochs]
    k = report.best_epoch
    assert vals[k - 1] == min(vals)
    assert any(v > vals[k - 1] for v in vals[k:])  # it did degrade after k
    assert rmse(x, sp.validation) == vals[k - 1]


def test_inner_iteration_counts():
    sp = make_split()
    _, r_so = train(sp, so_params(cg_max_iters=7, max_epochs=4, patience=50))
    assert all(1 <= r.inner_iters <= 7 for r in r_so.epochs)
    _, r_sgd = train(sp, so_params(max_epochs=2, patience=50),
                     OptimizerKind.sgdm(0.05, 0.5))
    assert all(r.inner_iters == len(sp.train) for r in r_sgd.epochs)


# ------------------------------------------------------------------ failures

def test_sgdm_divergence_reports_epoch():
    sp = make_split()
    with pytest.raises(RuntimeError, match="epoch 1"):
        train(sp, so_params(max_epochs=5), OptimizerKind.sgdm(learning_rate=1e6))


def test_cg_failure_carries_epoch_index(monkeypatch):
    def boom(*a, **kw):
        raise IndefiniteOperatorError("<p, A p> = -1.0 at iteration 1")

    monkeypatch.setattr(train_mod, "cg_solve", boom)
    sp = make_split()
    with pytest.raises(IndefiniteOperatorError, match=r"epoch 1: <p, A p>"):
        train(sp, so_params())


# ----------------------------------------------------------------- recovery

def test_second_order_fits_noiseless_lowrank():
    # noiseless rank-2 completion in the small-init regime: observed
    # values equal the generating factors' inner products exactly, so
    # held-out RMSE measures recovery of the ground truth directly
    t, truth = synth_lowrank(50, 80, rank=2, density=0.3, noise_sigma=0.0, seed=13)
    sp = split(t, 0.7, 0.15, seed=13)
    h = Hyperparams(f=2, lambda_r1=1e-9, lambda_r2=1e-11, gamma=1e-3, tau=1e-13,
                    cg_max_iters=100, max_epochs=100, patience=100, seed=2)
    x, report = train(sp, h)
    assert min(r.train_rmse for r in report.epochs) <= 1e-3
    tt = sp.test.base
    truth_pred = (truth.user_factors[tt.users] * truth.service_factors[tt.services]).sum(axis=1)
    np.testing.assert_array_equal(tt.values, truth_pred)
    assert report.final_test_rmse <= 1e-3
    # genuinely better than predicting all zeros (about 9.6e-4 here)
    zero_rmse = float(np.sqrt((tt.values ** 2).mean()))
    assert report.final_test_rmse < 0.5 * zero_rmse


# ----------------------------------------------------------------- reporting

def test_csv_shape_and_determinism():
    sp = make_split()
    h = so_params(max_epochs=6, patience=50)
    _, r1 = train(sp, h)
    _, r2 = train(sp, h)
    text = r1.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "epoch,train_rmse,val_rmse,inner_iters,wall_ms"
    assert len(lines) == 1 + 6 + 1  # header, epochs, summary
    assert lines[-1].startswith("# final_test_rmse=")
    # wall time is zeroed for reproducible bytes unless asked for
    assert all(line.endswith(",0") for line in lines[1:-1])
    assert text == r2.to_csv()
    timed = r1.to_csv(include_timing=True)
    assert timed != text or all(r.wall_ms < 0.5 for r in r1.epochs)


def test_csv_summary_reflects_report():
    rep = TrainReport(epochs=[EpochRecord(1, 0.5, 0.6, 3, 12.0)],
                      final_test_rmse=0.55, best_epoch=1, stop_reason="max_epochs")
    s = rep.summary()
    assert "final_test_rmse=0.55" in s
    assert "best_epoch=1" in s and "stop_reason=max_epochs" in s
