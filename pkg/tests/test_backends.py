import json
import os
import subprocess
import sys

import numpy as np
import pytest

from elsroc import _accel, _kernels

PROBE = r"""
import json, sys
import numpy as np
sys.path.insert(0, "tests")
from conftest import random_dataset
from elsroc import _accel
from elsroc.criteria import el_solve, select
from elsroc.model_fit import ModelSpec, fit
from elsroc.simulation import run_replication
from elsroc.transforms import TransformPair, t_alpha_inv

ds = random_dataset(np.random.default_rng(11), 10)
f = fit(ds, ModelSpec(2, TransformPair(0.6, 1.4)))
u = np.random.default_rng(2).normal(size=(8, 2))
rep = run_replication("ND", 5, 0, 3, criteria=("aic", "caic-gk", "el-blup"))
print(json.dumps({
    "backend": _accel.BACKEND,
    "theta": [f.theta.mu_p, f.theta.mu_q, f.theta.sigma2_p, f.theta.sigma2_q, f.theta.sigma],
    "R": el_solve(u).R,
    "inv": t_alpha_inv(0.6, np.linspace(-30, 30, 61)).tolist(),
    "ranked": [str(s.spec) for s in select(ds, kind="el-blup")[:10]],
    "iae": rep.curve_error.tolist(),
    "selected": rep.selected,
}))
"""


def probe(disable):
    env = dict(os.environ)
    env.pop("ELSROC_DISABLE_NUMBA", None)
    if disable:
        env["ELSROC_DISABLE_NUMBA"] = "1"
    r = subprocess.run([sys.executable, "-c", PROBE], capture_output=True, text=True, env=env, check=True,
                       cwd=os.path.dirname(os.path.dirname(__file__)))
    return json.loads(r.stdout)


@pytest.fixture(scope="module")
def both():
    return probe(False), probe(True)


def test_backend_flag(both):
    fast, slow = both
    assert slow["backend"] == "numpy"
    assert fast["backend"] == ("numba" if _accel.HAVE_NUMBA else "numpy")


def test_backends_agree(both):
    fast, slow = both
    np.testing.assert_allclose(fast["theta"], slow["theta"], rtol=1e-7, atol=1e-9)
    assert fast["R"] == pytest.approx(slow["R"], abs=1e-10)
    np.testing.assert_allclose(fast["inv"], slow["inv"], atol=1e-15)
    assert fast["ranked"] == slow["ranked"]
    np.testing.assert_allclose(fast["iae"], slow["iae"], atol=1e-7)
    assert fast["selected"] == slow["selected"]


def test_objective_kernels_agree():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(7, 2))
    D = rng.uniform(0.01, 0.5, size=(7, 2))
    for x in ([0.1, -0.3, 0.4], [-14.0, 2.0, -11.0], [3.0, 3.0, 0.0]):
        for reml in (True, False):
            a = _kernels.objective_loop(np.array(x), z, D, reml)
            b = _kernels.objective_vec(np.array(x), z, D, reml)
            assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_inverse_kernels_agree():
    z = np.linspace(-50, 50, 1001)
    for a in (0.01, 0.6, 1.4, 1.99):
        np.testing.assert_allclose(_kernels._t_inv_loop(a, z), _kernels._t_inv_vec(a, z), atol=1e-15)
