"""Closed-form and brute-force references used by the acceptance suite.

These recompute known quantities on machinery independent of the main code
paths: a dense LP instead of the network flow solver, and the eigenfunction
series of the half-Laplacian Dirichlet semigroup instead of particles.
"""

import numpy as np
from scipy.optimize import linprog


def lp_transport_cost(domain, mu_atoms, nu_atoms, truncated=True,
                      convention="closure"):
    """Dense reference LP for the boundary-reservoir transport problem.

    mu_atoms / nu_atoms: lists of (location, weight); only interior atoms
    should be passed. Solves over all (n+1) x (m+1) routes with dual simplex.
    """
    def _stack(atoms):
        if not atoms:
            return np.zeros((0, domain.dim))
        return np.array([np.atleast_1d(p) for p, _ in atoms], dtype=float)

    X = _stack(mu_atoms)
    Y = _stack(nu_atoms)
    a = np.array([w for _, w in mu_atoms], dtype=float)
    b = np.array([w for _, w in nu_atoms], dtype=float)
    n, m = len(a), len(b)
    if n and m:
        C = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)
    else:
        C = np.zeros((n, m))
    rho_a = np.maximum(domain.signed_distance(X), 0.0) if n else np.zeros(0)
    rho_b = np.maximum(domain.signed_distance(Y), 0.0) if m else np.zeros(0)
    if truncated:
        C = np.minimum(C, 1.0)
        rho_a = np.minimum(rho_a, 1.0)
        rho_b = np.minimum(rho_b, 1.0)
    if convention == "closure":
        ca, cb = rho_a, rho_b
        res_supply, res_demand = b.sum(), a.sum()
    else:
        ca = np.zeros(n)
        cb = np.zeros(m)
        res_supply, res_demand = 1.0 - a.sum(), 1.0 - b.sum()
    n1, m1 = n + 1, m + 1
    cost = np.zeros((n1, m1))
    cost[:n, :m] = C
    cost[:n, m] = ca
    cost[n, :m] = cb
    A_eq = []
    b_eq = []
    for i in range(n1):
        row = np.zeros(n1 * m1)
        row[i * m1:(i + 1) * m1] = 1.0
        A_eq.append(row)
        b_eq.append(a[i] if i < n else res_supply)
    for j in range(m1):
        row = np.zeros(n1 * m1)
        row[j::m1] = 1.0
        A_eq.append(row)
        b_eq.append(b[j] if j < m else res_demand)
    res = linprog(cost.ravel(), A_eq=np.array(A_eq), b_eq=np.array(b_eq),
                  bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise RuntimeError("reference LP failed: %s" % (res.message,))
    return float(res.fun)


# ---- Brownian motion killed at 0 and 1, generator (1/2) d^2/dx^2 ----------


def absorbed_density(t, x0, y, kmax=50):
    """Transition density of Brownian motion absorbed at 0 and 1."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    for k in range(1, kmax + 1):
        out += np.exp(-k * k * np.pi * np.pi * t / 2.0) * \
            np.sin(k * np.pi * x0) * np.sin(k * np.pi * y)
    return 2.0 * out


def survival_mass(t, x0, kmax=50):
    """P(no exit by t) started at x0: integral of the density over (0,1)."""
    total = 0.0
    for k in range(1, kmax + 1):
        ck = (1.0 - np.cos(k * np.pi)) / (k * np.pi)
        total += 2.0 * np.exp(-k * k * np.pi * np.pi * t / 2.0) * \
            np.sin(k * np.pi * x0) * ck
    return total


def oracle_cloud(t, x0, n_bins=4000, kmax=50):
    """Midpoint atom cloud of the absorbed density, for distance checks."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    w = absorbed_density(t, x0, mid, kmax=kmax) * (edges[1] - edges[0])
    return mid, w
