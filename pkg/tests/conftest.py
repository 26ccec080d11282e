import numpy as np
import pytest

from dwformer import autodiff as ad


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    flat = arr.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(arr.shape)


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, floor).

    The floor keeps analytically-zero gradients from dividing finite
    difference noise (~1e-11) by ~0.
    """
    a, b = np.asarray(a), np.asarray(b)
    return float((np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)).max())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def check_grad():
    def run(build, *arrays, tol=1e-6):
        tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
        grads = build(*tensors).backward()
        for t in tensors:
            def f():
                with ad.no_grad():
                    return build(*[ad.Tensor(x.data) for x in tensors]).item()
            num = numeric_grad(f, t.data)
            assert rel_error(grads[t], num) < tol
    return run


# ---------------------------------------------------------------- acceptance report

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id): acceptance criterion implemented by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        cid = marker.args[0]
        status = "PASS" if rep.outcome == "passed" else "FAIL"
        prev = _CRITERIA.get(cid)
        if prev is not None:
            status = "FAIL" if "FAIL" in (prev[0], status) else "PASS"
            detail = "; ".join(d for d in (prev[1], detail) if d)
        _CRITERIA[cid] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA):
        status, detail = _CRITERIA[cid]
        terminalreporter.write_line(f"{cid}: {status}  {detail}")
