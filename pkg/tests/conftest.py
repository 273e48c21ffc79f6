import numpy as np

from isomesh.geometry import LocalRegion
from isomesh.localfit import LocalFit
from isomesh.nn import Mlp


def identity_mlp() -> Mlp:
    """Exact identity through one ReLU layer: x = relu(x) - relu(-x)."""
    eye = np.eye(3)
    return Mlp([np.hstack([eye, -eye]), np.vstack([eye, -eye])], [np.zeros(6), np.zeros(3)])


def constant_mlp(value) -> Mlp:
    return Mlp([np.zeros((3, 4)), np.zeros((4, 3))], [np.zeros(4), np.asarray(value, dtype=np.float64)])


def make_fit(vertex_indices, weights, network, point_indices=(), samples=None, center=(0, 0, 0), scale=1.0):
    reg = LocalRegion(np.asarray(vertex_indices), np.array([], dtype=np.int64), np.asarray(weights, float))
    pidx = np.asarray(point_indices, dtype=np.int64)
    fit = LocalFit(reg, np.asarray(center, float), scale, pidx, network=network)
    if samples is not None:
        fit.samples = np.asarray(samples, float)
        fit.corr = np.arange(len(pidx))
        fit.inv_corr = np.arange(len(pidx))
    return fit


# acceptance criteria report one line each at the end of the run
ACCEPTANCE: dict = {}


def record(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, passed, detail)
    print(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {n}. {title}: {detail}")
