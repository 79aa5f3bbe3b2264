import numpy as np
import pytest

from narrative_infill.nn.checkpoint import CheckpointError, dumps, load_checkpoint, loads, save_checkpoint
from narrative_infill.nn.optim import OptimizerState


def _params(seed=0):
    rng = np.random.default_rng(seed)
    return {"a.w": rng.normal(size=(3, 4)).astype(np.float32), "b": rng.normal(size=5).astype(np.float32)}


def test_round_trip_is_bitwise(tmp_path):
    params = _params()
    state = OptimizerState(m=[np.ones((3, 4), np.float32), np.zeros(5, np.float32)],
                           v=[np.full((3, 4), 0.25, np.float32), np.ones(5, np.float32)],
                           t=7, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8)
    path = tmp_path / "m.nick"
    save_checkpoint(path, params, state)
    arrays, st2 = load_checkpoint(path)
    assert list(arrays) == list(params)
    for k in params:
        assert arrays[k].tobytes() == params[k].tobytes()
        assert arrays[k].shape == params[k].shape
    assert (st2.t, st2.lr, st2.beta1, st2.beta2, st2.eps) == (7, 3e-3, 0.9, 0.999, 1e-8)
    for a, b in zip(st2.m + st2.v, state.m + state.v):
        np.testing.assert_array_equal(a, b)
    # re-serialising the loaded content reproduces the file
    assert dumps(arrays, st2) == path.read_bytes()


def test_header_layout():
    raw = dumps(_params())
    assert raw[:4] == b"NICK"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 2


def test_without_optimizer_state():
    arrays, state = loads(dumps(_params()))
    assert state is None and set(arrays) == {"a.w", "b"}


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + (9).to_bytes(4, "little") + b[8:],
    lambda b: b[:-3],
])
def test_corrupt_files_are_rejected(mutate):
    with pytest.raises(CheckpointError):
        loads(mutate(dumps(_params())))
