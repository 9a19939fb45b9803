"""Adam, ParamStore, finite differences, and checkpoint round-trips."""

import numpy as np
import pytest

from pulseid import tensor as T
from pulseid.checkpoint import join_groups, load_tensors, save_tensors, split_groups
from pulseid.errors import ContractError, FormatError
from pulseid.optim import AdamState, ParamStore, adam_step, finite_diff


def test_zero_grads_leave_params_unchanged():
    ps = ParamStore(0)
    ps.create("w", (3,))
    before = ps["w"].data.copy()
    adam_step(ps, {"w": T.Tensor(np.zeros(3))}, lr=0.1)
    assert np.array_equal(ps["w"].data, before)


def test_first_step_moves_by_about_lr_against_gradient():
    for g in (0.3, -2.0):
        ps = ParamStore(0)
        ps.create("w", (1,), init="zeros")
        adam_step(ps, {"w": T.Tensor(np.array([g]))}, lr=1e-3)
        step = ps["w"].data[0]
        assert np.sign(step) == -np.sign(g)
        assert abs(step) == pytest.approx(1e-3, rel=1e-4)


def test_adam_converges_on_quadratic_bowl():
    ps = ParamStore(0)
    ps.create("w", (1,), init="zeros")
    ps["w"] = T.Tensor(np.array([0.5]))
    state = AdamState()
    for _ in range(200):
        g = 2.0 * ps["w"].data
        _, state = adam_step(ps, {"w": T.Tensor(g)}, lr=1e-2, state=state)
    assert abs(ps["w"].data[0]) < 1e-2


def test_adam_key_mismatch_rejected():
    ps = ParamStore(0)
    ps.create("w", (1,))
    with pytest.raises(ContractError):
        adam_step(ps, {"other": T.Tensor(np.zeros(1))}, lr=1e-3)


def test_finite_diff_basics():
    ps = ParamStore(0)
    ps.create("x", (1,), init="zeros")
    ps["x"] = T.Tensor(np.array([3.0]))
    g = finite_diff(lambda p: float(p["x"].data[0] ** 2), ps)
    assert g["x"].data[0] == pytest.approx(6.0, abs=1e-6)
    g0 = finite_diff(lambda p: 1.25, ps)
    assert g0["x"].data[0] == pytest.approx(0.0, abs=1e-12)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    named = {
        "pulse/conv.k": T.Tensor(rng.normal(size=(2, 3, 3, 3))),
        "pulse/conv.b": T.Tensor(np.zeros(2)),
        "morph/fc.w": T.Tensor(rng.normal(size=(4, 5))),
    }
    path = tmp_path / "model.pidc"
    save_tensors(path, named)
    loaded = load_tensors(path)
    assert set(loaded) == set(named)
    for k in named:
        assert np.array_equal(loaded[k].data, named[k].data)
    groups = split_groups(loaded)
    assert set(groups) == {"pulse", "morph"}
    assert set(join_groups(groups)) == set(named)


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.pidc"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        load_tensors(path)
    good = tmp_path / "good.pidc"
    save_tensors(good, {"w": T.Tensor(np.ones(4))})
    blob = good.read_bytes()
    (tmp_path / "cut.pidc").write_bytes(blob[:-5])
    with pytest.raises(FormatError):
        load_tensors(tmp_path / "cut.pidc")


def test_param_store_deterministic_iteration():
    a, b = ParamStore(5), ParamStore(5)
    for s in (a, b):
        s.create("one", (2, 2))
        s.create("two", (3,))
    assert a.names() == b.names()
    assert a.digest() == b.digest()
