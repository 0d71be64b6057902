"""Open domain O with boundary distance, closest-point projection, and band tests.

Built-in kinds (interval, ball, half_space) have closed-form distance and
projection so no projection error enters downstream estimates. A generic kind
accepts user callables plus a user-asserted band width. The signed distance is
positive inside O, zero on the boundary, negative outside.
"""

import numpy as np

from .errors import AmbiguousProjectionError, DomainViolationError, InvalidArgumentError

BOUNDARY_TOL = 1e-9  # membership tolerance for "on the boundary" / "inside the closure"


def _as_points(x, dim):
    """Normalize scalar / (d,) / (n,) / (n,d) input to an (n,d) float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise InvalidArgumentError("scalar point given for a %d-dimensional domain" % dim)
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if dim == 1:
            return arr.reshape(-1, 1), False
        if arr.shape[0] != dim:
            raise InvalidArgumentError("point has dimension %d, domain has %d" % (arr.shape[0], dim))
        return arr.reshape(1, dim), True
    if arr.ndim == 2:
        if arr.shape[1] != dim:
            raise InvalidArgumentError("points have dimension %d, domain has %d" % (arr.shape[1], dim))
        return arr, False
    raise InvalidArgumentError("points must be at most 2-dimensional arrays")


class Domain:
    """Open set O with band width r0 and an anchor point on the boundary.

    The anchor is the projection target for points deeper than r0 from the
    boundary; any boundary point is admissible and the choice only affects
    diagnostic couplings, never distances.
    """

    def __init__(self, kind, params, r0, anchor, dim):
        if not 0 < r0 <= 1:
            raise InvalidArgumentError("r0 must lie in (0, 1]")
        self.kind = kind
        self.params = params
        self.r0 = float(r0)
        self.dim = int(dim)
        self.boundary_tol = BOUNDARY_TOL
        anchor = np.asarray(anchor, dtype=float).reshape(self.dim)
        if abs(float(self.signed_distance(anchor.reshape(1, -1))[0])) > BOUNDARY_TOL:
            raise InvalidArgumentError("anchor point is not on the boundary")
        self.anchor = anchor

    # ---- constructors -------------------------------------------------

    @classmethod
    def interval(cls, a, b, r0=0.25, anchor=None):
        a, b = float(a), float(b)
        if not a < b:
            raise InvalidArgumentError("interval needs a < b")
        if not (np.isfinite(a) or np.isfinite(b)):
            raise InvalidArgumentError("interval needs at least one finite endpoint")
        if anchor is None:
            anchor = [a if np.isfinite(a) else b]
        return cls("interval", {"a": a, "b": b}, r0, anchor, dim=1)

    @classmethod
    def ball(cls, center, radius, r0=0.25, anchor=None):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        radius = float(radius)
        if radius <= 0:
            raise InvalidArgumentError("ball needs radius > 0")
        if anchor is None:
            anchor = center.copy()
            anchor[0] += radius
        return cls("ball", {"center": center, "radius": radius}, r0, anchor, dim=center.shape[0])

    @classmethod
    def half_space(cls, normal, offset, r0=0.25, anchor=None):
        """O = {x : <normal, x> > offset}; the normal points into O."""
        normal = np.atleast_1d(np.asarray(normal, dtype=float))
        norm = np.linalg.norm(normal)
        if norm == 0:
            raise InvalidArgumentError("half_space needs a nonzero normal")
        normal = normal / norm
        offset = float(offset) / norm
        if anchor is None:
            anchor = offset * normal
        return cls("half_space", {"normal": normal, "offset": offset}, r0, anchor,
                   dim=normal.shape[0])

    @classmethod
    def generic(cls, signed_distance_fn, projection_fn=None, dim=1, r0=0.25, anchor=None):
        """signed_distance_fn maps (n,d) arrays to (n,); projection_fn is optional
        and must raise AmbiguousProjectionError when the nearest point is not unique."""
        if anchor is None:
            raise InvalidArgumentError("generic domains must supply an anchor boundary point")
        return cls("generic", {"sdf": signed_distance_fn, "proj": projection_fn},
                   r0, anchor, dim=dim)

    def same_as(self, other):
        """Structural equality: same kind, dimension, and parameters."""
        if self is other:
            return True
        if self.kind != other.kind or self.dim != other.dim:
            return False
        for k, v in self.params.items():
            w = other.params.get(k)
            if isinstance(v, np.ndarray):
                if not np.array_equal(v, w):
                    return False
            elif v != w and not (callable(v) and v is w):
                return False
        return True

    # ---- core geometry -------------------------------------------------

    def signed_distance(self, pts):
        """(n,d) -> (n,); positive inside O."""
        if self.kind == "interval":
            x = pts[:, 0]
            return np.minimum(x - self.params["a"], self.params["b"] - x)
        if self.kind == "ball":
            return self.params["radius"] - np.linalg.norm(pts - self.params["center"], axis=1)
        if self.kind == "half_space":
            return pts @ self.params["normal"] - self.params["offset"]
        return np.asarray(self.params["sdf"](pts), dtype=float).reshape(pts.shape[0])

    def _check_in_closure(self, pts):
        sd = self.signed_distance(pts)
        bad = sd < -self.boundary_tol
        if np.any(bad):
            i = int(np.argmax(bad))
            raise DomainViolationError(
                "point %s lies outside the closed domain (signed distance %.3g)"
                % (pts[i], sd[i]))
        return sd

    def _nearest_boundary_point(self, pts):
        """Closed-form nearest boundary point for every row; caller restricts to the band."""
        if self.kind == "interval":
            x = pts[:, 0]
            a, b = self.params["a"], self.params["b"]
            return np.where((x - a) <= (b - x), a, b).reshape(-1, 1)
        if self.kind == "ball":
            c, r = self.params["center"], self.params["radius"]
            rel = pts - c
            norms = np.linalg.norm(rel, axis=1)
            if np.any(norms < 1e-15):
                raise AmbiguousProjectionError("ball center has no unique nearest boundary point")
            return c + r * rel / norms[:, None]
        if self.kind == "half_space":
            n, o = self.params["normal"], self.params["offset"]
            return pts - np.outer(pts @ n - o, n)
        proj = self.params["proj"]
        if proj is None:
            raise AmbiguousProjectionError(
                "generic domain has no projection_fn; in-band projection unavailable")
        out = np.asarray(proj(pts), dtype=float).reshape(pts.shape)
        return out

    def grad_boundary_distance(self, pts):
        """(n,d) -> (n,d) gradient of the boundary distance (unit inward-normal field)."""
        if self.kind == "interval":
            x = pts[:, 0]
            a, b = self.params["a"], self.params["b"]
            return np.where((x - a) <= (b - x), 1.0, -1.0).reshape(-1, 1)
        if self.kind == "ball":
            rel = pts - self.params["center"]
            norms = np.maximum(np.linalg.norm(rel, axis=1), 1e-300)
            return -rel / norms[:, None]
        if self.kind == "half_space":
            return np.broadcast_to(self.params["normal"], pts.shape).copy()
        # central finite difference for generic domains
        h = 1e-6
        out = np.empty_like(pts)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            out[:, k] = (self.signed_distance(pts + e) - self.signed_distance(pts - e)) / (2 * h)
        return out

    def chord_exit(self, start, end):
        """First boundary crossing along the segments start -> end.

        Both arrays are (n,d); rows must start inside the closure. Rows with
        sd(end) > 0 are reported as non-exiting. Returns (exited, theta, point)
        where theta in (0,1] is the crossing fraction and point lies on the
        boundary exactly (snapped for built-in kinds).
        """
        sd_end = self.signed_distance(end)
        exited = sd_end <= 0.0
        n = start.shape[0]
        theta = np.ones(n)
        point = end.copy()
        if not np.any(exited):
            return exited, theta, point
        s, e = start[exited], end[exited]
        if self.kind == "half_space":
            sd_s = self.signed_distance(s)
            th = sd_s / np.maximum(sd_s - sd_end[exited], 1e-300)
        elif self.kind == "interval":
            a, b = self.params["a"], self.params["b"]
            x0, x1 = s[:, 0], e[:, 0]
            dx = x1 - x0
            th_a = np.where(x1 <= a, (a - x0) / np.where(dx != 0, dx, 1.0), np.inf)
            th_b = np.where(x1 >= b, (b - x0) / np.where(dx != 0, dx, 1.0), np.inf)
            th = np.minimum(th_a, th_b)
            th = np.where(np.isfinite(th), th, 1.0)  # end exactly on boundary
        elif self.kind == "ball":
            c, r = self.params["center"], self.params["radius"]
            u = e - s
            rel = s - c
            aa = np.sum(u * u, axis=1)
            bb = 2 * np.sum(rel * u, axis=1)
            cc = np.sum(rel * rel, axis=1) - r * r
            disc = np.maximum(bb * bb - 4 * aa * cc, 0.0)
            th = (-bb + np.sqrt(disc)) / np.maximum(2 * aa, 1e-300)
        else:
            th = np.empty(s.shape[0])
            for i in range(s.shape[0]):
                th[i] = self._bisect_chord(s[i], e[i])
        th = np.clip(th, 0.0, 1.0)
        cross = s + th[:, None] * (e - s)
        cross = self._snap_to_boundary(cross)
        theta[exited] = th
        point[exited] = cross
        return exited, theta, point

    def _bisect_chord(self, s, e):
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.signed_distance((s + mid * (e - s)).reshape(1, -1))[0] > 0:
                lo = mid
            else:
                hi = mid
        return hi

    def _snap_to_boundary(self, pts):
        """Remove the last floating-point residue off the boundary (built-ins only)."""
        if self.kind == "interval":
            a, b = self.params["a"], self.params["b"]
            x = pts[:, 0]
            if not np.isfinite(a):
                return np.full((x.shape[0], 1), b)
            if not np.isfinite(b):
                return np.full((x.shape[0], 1), a)
            return np.where(np.abs(x - a) <= np.abs(b - x), a, b).reshape(-1, 1)
        if self.kind == "ball":
            c, r = self.params["center"], self.params["radius"]
            rel = pts - c
            norms = np.maximum(np.linalg.norm(rel, axis=1), 1e-300)
            return c + r * rel / norms[:, None]
        if self.kind == "half_space":
            n, o = self.params["normal"], self.params["offset"]
            return pts - np.outer(pts @ n - o, n)
        return pts

    def boundary_samples(self, k, seed=0):
        """k points on the boundary, for validation sweeps; None for generic kinds."""
        if self.kind == "interval":
            a, b = self.params["a"], self.params["b"]
            ends = [p for p in (a, b) if np.isfinite(p)]
            return np.array([[ends[i % len(ends)]] for i in range(k)])
        if self.kind == "ball":
            g = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
            u = g.standard_normal((k, self.dim))
            u /= np.linalg.norm(u, axis=1)[:, None]
            return self.params["center"] + self.params["radius"] * u
        if self.kind == "half_space":
            g = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
            pts = self.params["offset"] * np.broadcast_to(self.params["normal"],
                                                          (k, self.dim)).copy()
            if self.dim > 1:
                tang = g.standard_normal((k, self.dim))
                n = self.params["normal"]
                tang -= np.outer(tang @ n, n)
                pts = pts + tang
            return pts
        return None

    def interior_box(self):
        """A finite axis-aligned box inside the closure, used by sampling validators."""
        if self.kind == "interval":
            a, b = self.params["a"], self.params["b"]
            lo = a if np.isfinite(a) else b - 10.0
            hi = b if np.isfinite(b) else a + 10.0
            return np.array([lo]), np.array([hi])
        if self.kind == "ball":
            c, r = self.params["center"], self.params["radius"]
            h = r / np.sqrt(self.dim)
            return c - h, c + h
        if self.kind == "half_space":
            n, o = self.params["normal"], self.params["offset"]
            base = o * n
            lo = np.minimum(base, base + 10.0 * n) - (1.0 - np.abs(n))
            hi = np.maximum(base, base + 10.0 * n) + (1.0 - np.abs(n))
            return lo, hi
        raise InvalidArgumentError("generic domains carry no sampling box")


# ---- module-level operations ------------------------------------------


def boundary_distance(domain, x):
    """Distance to the boundary; zero on it, error beyond the closure tolerance."""
    pts, single = _as_points(x, domain.dim)
    sd = domain._check_in_closure(pts)
    rho = np.maximum(sd, 0.0)
    return float(rho[0]) if single else rho


def project_to_boundary(domain, x):
    """Nearest boundary point inside the band, the anchor outside it."""
    pts, single = _as_points(x, domain.dim)
    sd = domain._check_in_closure(pts)
    rho = np.maximum(sd, 0.0)
    out = np.broadcast_to(domain.anchor, pts.shape).copy()
    band = rho <= domain.r0
    if np.any(band):
        out[band] = domain._nearest_boundary_point(pts[band])
    return out[0] if single else out


def in_band(domain, x):
    """True where the boundary distance is at most r0."""
    pts, single = _as_points(x, domain.dim)
    sd = domain._check_in_closure(pts)
    res = np.maximum(sd, 0.0) <= domain.r0
    return bool(res[0]) if single else res
