"""Shared numeric oracles for gradient and convolution checks."""

import numpy as np
import pytest


def numeric_gradient(fn, arrays, index, step=1e-5):
    """Central-difference gradient of ``fn(arrays)`` wrt ``arrays[index]``.

    ``fn`` must treat its argument list as values (it is re-called with
    perturbed copies), returning a python float.
    """
    work = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    target = work[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        ij = it.multi_index
        orig = target[ij]
        target[ij] = orig + step
        hi = fn(work)
        target[ij] = orig - step
        lo = fn(work)
        target[ij] = orig
        grad[ij] = (hi - lo) / (2.0 * step)
    return grad


def max_rel_error(analytic, numeric):
    """Max abs difference scaled by the numeric gradient's magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(numeric))), 1e-10)
    return float(np.max(np.abs(analytic - numeric))) / scale


def conv2d_reference(x, w, b=None, stride=1, pad=0):
    """Seven-loop scalar cross-correlation, the conv oracle."""
    n, ci, h, width = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (width + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for ni in range(n):
        for oc in range(co):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(ci):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += xp[ni, ic, oy * stride + ky, ox * stride + kx] \
                                    * w[oc, ic, ky, kx]
                    out[ni, oc, oy, ox] = acc + (b[oc] if b is not None else 0.0)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Flush acceptance report lines past the capture machinery."""
    yield
    if call.when != "call":
        return
    lines = getattr(getattr(item, "module", None), "_ACCEPTANCE_LINES", None)
    if not lines:
        return
    capman = item.config.pluginmanager.getplugin("capturemanager")
    if capman is not None and hasattr(capman, "global_and_fixture_disabled"):
        with capman.global_and_fixture_disabled():
            for line in lines:
                print("\n" + line, end="", flush=True)
    else:
        for line in lines:
            print(line, flush=True)
    lines.clear()
