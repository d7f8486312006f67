"""Shared fixtures and independent reference implementations for the tests."""

import numpy as np
import pytest

from structsparse import Dictionary, GroupStructure


def random_partition(p, n_groups, rng):
    """Random partition of ``range(p)`` into ``n_groups`` nonempty, shuffled groups."""
    perm = rng.permutation(p)
    cuts = np.sort(rng.choice(np.arange(1, p), size=n_groups - 1, replace=False))
    return [np.sort(g) for g in np.split(perm, cuts)]


def random_structure(p, n_groups, rng, lam_max=0.3, mu_max=0.3):
    groups = random_partition(p, n_groups, rng)
    return GroupStructure(groups, rng.uniform(0, lam_max, p), rng.uniform(0, mu_max, n_groups))


def random_instance(rng, m=None, p=None, n_groups=None, lam_max=0.3, mu_max=0.3):
    """Normalized dictionary, structure and a signal with a sparse component plus noise."""
    m = m or int(rng.integers(5, 31))
    p = p or int(rng.integers(4, 61))
    n_groups = n_groups or int(rng.integers(1, min(6, p) + 1))
    D = Dictionary.normalize(rng.standard_normal((m, p)))
    gs = random_structure(p, n_groups, rng, lam_max, mu_max)
    z = np.zeros(p)
    on = rng.choice(p, size=max(1, p // 6), replace=False)
    z[on] = rng.standard_normal(on.size)
    x = D.atoms @ z + 0.1 * rng.standard_normal(m)
    return x, D, gs


def reference_cod(x, A, lam, n_iter):
    """Plain coordinate descent for the Lasso with unit step (one coordinate per step).

    Returns the iterate after every update plus the final ``h(B)`` output.
    """
    p = A.shape[1]
    B = A.T @ x
    S = np.eye(p) - A.T @ A
    z = np.zeros(p)
    iterates = []
    for _ in range(n_iter):
        zbar = np.sign(B) * np.maximum(np.abs(B) - lam, 0.0)
        k = int(np.argmax(np.abs(zbar - z)))
        if abs(zbar[k] - z[k]) == 0.0:
            break
        B = B + S[:, k] * (zbar[k] - z[k])
        z = z.copy()
        z[k] = zbar[k]
        iterates.append(z)
    out = np.sign(B) * np.maximum(np.abs(B) - lam, 0.0)
    return np.array(iterates), out


def prox_subgradient_residual(u, v, gs, t, s):
    """Distance of zero from the subdifferential of the prox objective at ``u``.

    Objective: ``1/2||u - v||^2 + sum t_j |u_j| + sum s_r ||u_r||``.
    """
    total = 0.0
    for r, G in enumerate(gs.groups):
        ur, vr, tr = u[G], v[G], t[G]
        grad = ur - vr
        nu = np.linalg.norm(ur)
        if nu > 0:
            act = ur != 0
            res_act = grad[act] + tr[act] * np.sign(ur[act]) + s[r] * ur[act] / nu
            # inactive coordinates of a live group: |grad_j| <= t_j
            res_in = np.maximum(np.abs(grad[~act]) - tr[~act], 0.0)
            total += res_act @ res_act + res_in @ res_in
        else:
            # -grad must lie in box(t) + ball(s)
            w = np.sign(-grad) * np.maximum(np.abs(grad) - tr, 0.0)
            total += max(0.0, np.linalg.norm(w) - s[r]) ** 2
    return float(np.sqrt(total))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    """Keep one pass/fail line per acceptance criterion for the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
