import os
import subprocess
import sys

import numpy as np
import pytest

from groupweights import _kernels
from groupweights.inference import identity_design_stats, update_task_naive
from groupweights.model import GroupFamily, TaskData

BACKENDS = ["numpy", "loop"] + (["numba"] if _kernels.numba_enabled() else [])


def _instance(seed, K=40):
    rng = np.random.default_rng(seed)
    P = 7
    fam = GroupFamily([[i] for i in range(P)] + [[0, 1], [1, 2, 3], [0, 1, 2, 3, 4, 5, 6]], P,
                      np.r_[rng.uniform(0.1, 5, 9), np.inf])
    zeta = rng.uniform(0.2, 3, (K, fam.n_groups))
    Y = rng.standard_normal((K, P)) * 2
    return Y, fam, zeta


@pytest.mark.parametrize("backend", BACKENDS)
def test_identity_backends_agree(backend):
    Y, fam, zeta = _instance(0)
    ref = identity_design_stats(Y, fam, zeta, 0.7, backend="numpy")
    got = identity_design_stats(Y, fam, zeta, 0.7, backend=backend)
    for name in ("sq_norm", "trace", "logdet", "xtx_trace", "resid", "w"):
        np.testing.assert_allclose(getattr(got, name), getattr(ref, name), rtol=1e-12, atol=1e-14)


def test_identity_matches_dense_solve():
    Y, fam, zeta = _instance(1, K=5)
    stats = identity_design_stats(Y, fam, zeta, 0.7)
    for k in range(5):
        one = update_task_naive(TaskData(Y[k], np.eye(7)), fam, zeta[k], 0.7)
        np.testing.assert_allclose(stats.w[k], one.w, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(stats.trace[k], one.trace, rtol=1e-10, atol=1e-12)
        assert stats.logdet[k] == pytest.approx(one.logdet, rel=1e-10)


@pytest.mark.parametrize("backend", BACKENDS)
def test_gsm_backends_agree(backend):
    rng = np.random.default_rng(2)
    y = rng.standard_normal(300) * 3
    t = np.linspace(-4, 12, 801)
    log_var = np.logaddexp(0.0, t)
    log_wt = -1.5 * t - np.exp(-t)
    ref = _kernels.gsm_loglik(y, log_var, log_wt, backend="numpy")
    got = _kernels.gsm_loglik(y, log_var, log_wt, backend=backend)
    np.testing.assert_allclose(got[0], ref[0], rtol=1e-12)
    np.testing.assert_allclose(got[1], ref[1], rtol=1e-9, atol=1e-12)


def test_unknown_numba_request():
    if _kernels.numba_enabled():
        pytest.skip("numba is available")
    with pytest.raises(RuntimeError):
        _kernels.gsm_loglik(np.zeros(1), np.zeros(2), np.zeros(2), backend="numba")


def test_env_flag_disables_numba():
    env = dict(os.environ, GROUPWEIGHTS_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c",
                          "from groupweights import _kernels; print(_kernels.numba_enabled())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
