import os
import subprocess
import sys

import numpy as np
import pytest

from glmdesk import _backend
from glmdesk.model import Model, ModelConfig


def test_use_backend_restores_previous():
    before = _backend.active_backend()
    with _backend.use_backend("numpy"):
        assert _backend.active_backend() == "numpy"
        assert not _backend.use_numba()
    assert _backend.active_backend() == before


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        _backend.set_backend("cuda")


@pytest.mark.parametrize("value,expected", [("numpy", "numpy"), ("NUMBA", "numba")])
def test_environment_selects_backend(value, expected):
    env = dict(os.environ, GLMDESK_BACKEND=value)
    out = subprocess.run([sys.executable, "-c", "from glmdesk import _backend; print(_backend.active_backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected


def test_model_forward_bitwise_across_backends():
    cfg = ModelConfig(n_layers=2, hidden=32, n_heads=4, n_kv_groups=2, vocab_size=50)
    model = Model.init(cfg, 0)
    ids = np.arange(20) % 46
    outs = {}
    for name in _backend.BACKENDS:
        with _backend.use_backend(name):
            outs[name] = (model.forward(ids).tobytes(), model.forward(ids, attention="tiled", tile_size=7).tobytes())
    assert outs["numba"] == outs["numpy"]


@pytest.mark.slow
def test_pipeline_outputs_identical_across_backends(tmp_path, monkeypatch):
    from pipeline import run_pipeline

    compiled = run_pipeline(tmp_path / "numba")
    monkeypatch.setenv("GLMDESK_BACKEND", "numpy")
    assert run_pipeline(tmp_path / "numpy") == compiled
