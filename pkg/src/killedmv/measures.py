"""Sub-probability measures as weighted atom clouds, flows on a time grid,
Lyapunov weights, and the localized space-time norm diagnostic.

Atoms sitting on the boundary (or outside the open set) are retained with a
dead flag: they carry zero mass under every O-functional but keep their frozen
location, which the coupling diagnostics need.
"""

import numpy as np

from .errors import EvaluationError, InvalidArgumentError, ResolutionError

MASS_TOL = 1e-12


class SubProbMeasure:
    """Weighted atom cloud whose interior mass is at most 1.

    alive marks atoms strictly inside O; dead atoms are recorded but weightless
    for integration, moments, and transport.
    """

    def __init__(self, domain, locations, weights, alive=None, mass_tol=MASS_TOL):
        self.domain = domain
        # always copy: snapshots are taken of buffers that keep mutating
        locations = np.array(locations, dtype=float)
        if locations.ndim == 1:
            locations = locations.reshape(-1, 1)
        if locations.ndim != 2 or locations.shape[1] != domain.dim:
            raise InvalidArgumentError("atom locations must be (n, %d)" % domain.dim)
        weights = np.array(weights, dtype=float).reshape(-1)
        if weights.shape[0] != locations.shape[0]:
            raise InvalidArgumentError("one weight per atom required")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InvalidArgumentError("weights must be finite and nonnegative")
        if alive is None:
            sd = domain.signed_distance(locations) if locations.shape[0] else np.zeros(0)
            alive = sd > domain.boundary_tol
        else:
            alive = np.array(alive, dtype=bool).reshape(-1)
            if alive.shape[0] != locations.shape[0]:
                raise InvalidArgumentError("one alive flag per atom required")
        self.locations = locations
        self.weights = weights
        self.alive = alive
        self._kernel_cache = {}
        m = self.mass()
        if m > 1.0 + mass_tol:
            raise InvalidArgumentError("interior mass %.12g exceeds 1" % m)

    @classmethod
    def zero(cls, domain):
        return cls(domain, np.zeros((0, domain.dim)), np.zeros(0), np.zeros(0, dtype=bool))

    @classmethod
    def from_points(cls, domain, points, weights=None, alive=None, mass_tol=MASS_TOL):
        """Empirical measure: weight 1/N per point unless weights are given."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        n = points.shape[0]
        if weights is None:
            if n == 0:
                raise InvalidArgumentError("empty ensemble has no empirical measure")
            weights = np.full(n, 1.0 / n)
        return cls(domain, points, weights, alive, mass_tol=mass_tol)

    def mass(self):
        """mu(O): total weight of interior atoms."""
        return float(self.weights[self.alive].sum()) if self.weights.size else 0.0

    def dead_mass(self):
        return float(self.weights[~self.alive].sum()) if self.weights.size else 0.0

    def interior(self):
        """(locations, weights) of interior atoms only."""
        return self.locations[self.alive], self.weights[self.alive]

    # ---- fast mean-field kernels (1-dimensional domains) ----------------

    def _sorted_prefix(self):
        cache = self._kernel_cache.get("prefix")
        if cache is None:
            if self.domain.dim != 1:
                raise InvalidArgumentError("prefix kernels are one-dimensional only")
            locs, w = self.interior()
            y = locs[:, 0]
            order = np.argsort(y, kind="stable")
            y = y[order]
            w = w[order]
            cumw = np.concatenate([[0.0], np.cumsum(w)])
            cumwy = np.concatenate([[0.0], np.cumsum(w * y)])
            cache = (y, cumw, cumwy)
            self._kernel_cache["prefix"] = cache
        return cache

    def kernel_abs(self, x, cap=None):
        """sum_j w_j * min(|x - y_j|, cap) over interior atoms, vectorized in x.

        cap=None means no truncation. Cost O(len(x) log n) after a one-time sort.
        """
        y, cumw, cumwy = self._sorted_prefix()
        x = np.asarray(x, dtype=float).reshape(-1)
        if y.size == 0:
            return np.zeros(x.shape)
        if cap is None:
            lo = np.zeros(x.shape, dtype=int)
            hi = np.full(x.shape, y.size, dtype=int)
        else:
            lo = np.searchsorted(y, x - cap, side="left")
            hi = np.searchsorted(y, x + cap, side="right")
        mid = np.searchsorted(y, x, side="left")
        left = x * (cumw[mid] - cumw[lo]) - (cumwy[mid] - cumwy[lo])
        right = (cumwy[hi] - cumwy[mid]) - x * (cumw[hi] - cumw[mid])
        out = left + right
        if cap is not None:
            outside = cumw[-1] - (cumw[hi] - cumw[lo])
            out = out + cap * outside
        return out


class MeasureFlow:
    """One snapshot per node of a uniform grid on [0, T]."""

    def __init__(self, times, snapshots):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.shape[0] < 1:
            raise InvalidArgumentError("flow needs at least one grid node")
        if times[0] != 0.0:
            raise InvalidArgumentError("grid must start at t = 0")
        if times.shape[0] > 1:
            steps = np.diff(times)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise InvalidArgumentError("grid must be uniform")
        if len(snapshots) != times.shape[0]:
            raise InvalidArgumentError("one snapshot per grid node required")
        self.times = times
        self.snapshots = list(snapshots)

    @classmethod
    def constant(cls, gamma, times):
        return cls(times, [gamma] * len(np.asarray(times)))

    @property
    def grid_step(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, k):
        return self.snapshots[k]

    def masses(self):
        return np.array([s.mass() for s in self.snapshots])

    def check_mass_monotone(self, tol=1e-12):
        """Killing only removes mass; reweighted realizations get statistical slack."""
        m = self.masses()
        return bool(np.all(np.diff(m) <= tol))

    def same_grid(self, other):
        return len(self.times) == len(other.times) and np.allclose(
            self.times, other.times, rtol=1e-12, atol=1e-15)


class LyapunovV:
    """C^2 weight V >= 1 with gradient/Hessian controlled on eps-balls by K*V."""

    def __init__(self, value_fn, gradient_fn, hessian_fn, K, eps, cap=None):
        self.value_fn = value_fn
        self.gradient_fn = gradient_fn
        self.hessian_fn = hessian_fn
        self.K = float(K)
        self.eps = float(eps)
        self.cap = cap

    def __call__(self, pts):
        return np.asarray(self.value_fn(pts), dtype=float)

    def validate(self, pts, directions=8, slack=1e-9):
        """Spot-check V >= 1 and sup over the eps-ball of |grad V| + ||hess V|| <= K V.

        Returns (ok, worst_margin); worst_margin > 0 means a violation was found.
        """
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        v = self(pts)
        worst = float(np.max(1.0 - v)) if v.size else 0.0
        d = pts.shape[1]
        rng = np.random.Generator(np.random.Philox(key=np.uint64(7)))
        for _ in range(directions):
            u = rng.standard_normal(d)
            u *= self.eps * rng.random() / max(np.linalg.norm(u), 1e-300)
            y = pts + u
            g = np.linalg.norm(np.asarray(self.gradient_fn(y), dtype=float).reshape(len(y), d),
                               axis=1)
            h = np.asarray(self.hessian_fn(y), dtype=float).reshape(len(y), d, d)
            hn = np.linalg.norm(h, ord=2, axis=(1, 2))
            worst = max(worst, float(np.max(g + hn - self.K * v)))
        return worst <= slack, worst


def quadratic_lyapunov(cap=None):
    """V(x) = 1 + |x|^2, the workhorse weight; K chosen to satisfy the ball bound."""
    def value(p):
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            p = p.reshape(-1, 1)
        return 1.0 + np.sum(p * p, axis=1)

    def grad(p):
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            p = p.reshape(-1, 1)
        return 2.0 * p

    def hess(p):
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            p = p.reshape(-1, 1)
        n, d = p.shape
        return np.broadcast_to(2.0 * np.eye(d), (n, d, d)).copy()

    # |grad V(y)| + |hess V(y)| = 2|y| + 2 <= 2(1+eps) + 2|x|... <= K (1+|x|^2) with K = 4+2*eps
    return LyapunovV(value, grad, hess, K=6.0, eps=1.0, cap=cap)


# ---- module-level operations ------------------------------------------


def restrict_to_O(domain, points, alive=None):
    """Empirical O-distribution of an ensemble state: weight 1/N per point,
    interior points alive, everything else recorded dead."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    if points.shape[0] == 0:
        raise InvalidArgumentError("empty ensemble has no O-distribution")
    if alive is not None:
        # a frozen-at-exit ensemble may pass its own flags; interior test still applies
        sd = domain.signed_distance(points)
        alive = np.asarray(alive, dtype=bool) & (sd > domain.boundary_tol)
    return SubProbMeasure.from_points(domain, points, alive=alive)


def integrate(mu, f):
    """mu(f) = sum of w * f(x) over interior atoms; raises naming any atom where
    f is non-finite. For one-dimensional domains f receives a flat array."""
    locs, w = mu.interior()
    if locs.shape[0] == 0:
        return 0.0
    arg = locs[:, 0] if mu.domain.dim == 1 else locs
    vals = np.asarray(f(arg), dtype=float).reshape(-1)
    if vals.shape[0] != locs.shape[0]:
        raise EvaluationError("integrand returned %d values for %d atoms"
                              % (vals.shape[0], locs.shape[0]))
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise EvaluationError("integrand non-finite at atom %d, location %s" % (i, locs[i]))
    return float(np.dot(w, vals))


def first_moment(mu):
    """mu(|.|) over interior atoms."""
    locs, w = mu.interior()
    if locs.shape[0] == 0:
        return 0.0
    return float(np.dot(w, np.linalg.norm(locs, axis=1)))


def lpq_norm(values, t_grid, x_grids, p, q):
    """Localized space-time norm of a gridded function.

    values has shape (nt, n1, ..., nd) on the uniform grids t_grid, x_grids.
    Computes sup over grid-aligned centers z of
        ( integral_0^T ( integral_{|x-z|<=1} |f|^p dx )^(q/p) dt )^(1/q)
    with rectangle quadrature in space and trapezoid in time. The sup is over
    grid points only, hence a lower bound of the true norm.
    """
    if not (p > 1 and q > 1 and np.isfinite(p) and np.isfinite(q)):
        raise InvalidArgumentError("p and q must be finite and > 1")
    values = np.asarray(values, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    x_grids = [np.asarray(g, dtype=float) for g in x_grids]
    d = len(x_grids)
    if values.shape != (t_grid.shape[0],) + tuple(g.shape[0] for g in x_grids):
        raise InvalidArgumentError("values shape does not match the declared grids")
    dxs = []
    for g in x_grids:
        if g.shape[0] < 2:
            raise ResolutionError("spatial grid needs at least two points")
        dx = float(g[1] - g[0])
        if dx > 1.0:
            raise ResolutionError("spatial grid step %.3g exceeds the unit ball radius" % dx)
        dxs.append(dx)
    fp = np.abs(values) ** p
    if d == 1:
        g = x_grids[0]
        dx = dxs[0]
        pref = np.concatenate([np.zeros((fp.shape[0], 1)), np.cumsum(fp, axis=1)], axis=1)
        lo = np.searchsorted(g, g - 1.0, side="left")
        hi = np.searchsorted(g, g + 1.0, side="right")
        ball = (pref[:, hi] - pref[:, lo]) * dx  # (nt, centers)
    else:
        axes = np.meshgrid(*x_grids, indexing="ij")
        pts = np.stack([a.ravel() for a in axes], axis=1)
        vol = float(np.prod(dxs))
        flat = fp.reshape(fp.shape[0], -1)
        cols = []
        for z in pts:
            mask = np.linalg.norm(pts - z, axis=1) <= 1.0
            cols.append(flat[:, mask].sum(axis=1) * vol)
        ball = np.stack(cols, axis=1)
    inner = ball ** (q / p)
    if t_grid.shape[0] == 1:
        raise ResolutionError("time grid needs at least two points")
    time_int = np.trapezoid(inner, t_grid, axis=0)
    return float(np.max(time_int) ** (1.0 / q))


def kato_class_ok(p, q, d):
    """Membership test for the singular-drift integrability class."""
    return p > 2 and q > 2 and d / p + 2.0 / q < 1.0
