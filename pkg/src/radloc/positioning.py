"""Second-stage positioning from per-anchor LoS channel parameters.

The state estimate minimizes a weighted nonlinear least-squares cost over
the selected UE state components. Angles in residuals are compared on the
circle. A brute-force likelihood scan over a state grid is provided as a
direct-positioning reference.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .bounds import IDENTIFIABILITY_THRESHOLD, Scene, _equilibrated_inverse, state_fim
from .channel import GridConfig, path_response
from .estimation import DetectedPath
from .geometry import (LOS_STATE_NAMES, PARAM_NAMES, SPEED_OF_LIGHT, AnchorState, GeoParams,
                       UEState, direction_vector, los_params, state_jacobian, wrap_angle)
from .signal import Observation, TxRxConfig, combine

AZIMUTHS = ("aoa_az", "aod_az")


class NotIdentifiableError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Measurement:
    """Estimated LoS parameters of one anchor and their covariance.

    ``domains`` names the measured components (a subset of the geometric
    parameter names) in the order used by ``covariance``.
    """

    anchor: AnchorState
    eta_hat: GeoParams
    covariance: np.ndarray
    domains: tuple[str, ...]

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (len(self.domains), len(self.domains)):
            raise ValueError("covariance does not match the measured domains")
        if any(d not in PARAM_NAMES for d in self.domains):
            raise ValueError(f"unknown domain in {self.domains}")
        if not np.allclose(cov, cov.T, rtol=1e-9, atol=0.0):
            raise ValueError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(cov), initial=0.0) < -1e-12 * max(np.abs(cov).max(), 1e-300):
            raise ValueError("covariance must be positive semidefinite")
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "domains", tuple(self.domains))

    @property
    def anchor_id(self) -> int:
        return self.anchor.id

    @classmethod
    def from_detection(cls, anchor: AnchorState, path: DetectedPath) -> "Measurement":
        return cls(anchor, path.eta_hat, path.covariance, path.domains)


@dataclass(frozen=True, eq=False)
class StateEstimate:
    s_hat: UEState
    covariance: np.ndarray
    labels: tuple[str, ...]
    cost: float
    iterations: int
    converged: bool = True
    singular: bool = False
    boundary: bool = False

    def std(self, name: str) -> float:
        i = self.labels.index(name)
        return float(np.sqrt(self.covariance[i, i]))


def los_measurement(anchor: AnchorState, paths: Sequence[DetectedPath]) -> Measurement | None:
    """Gate the LoS path as the detection with the smallest delay."""
    if not paths:
        return None
    first = min(paths, key=lambda p: p.eta_hat.delay)
    return Measurement.from_detection(anchor, first)


# --------------------------------------------------------------------------
# cost


def _residual(m: Measurement, ue: UEState, link: str, carrier: float) -> np.ndarray:
    pred = los_params(m.anchor, ue, link, carrier)
    r = np.array([m.eta_hat.get(d) - pred.get(d) for d in m.domains])
    for i, d in enumerate(m.domains):
        if d in AZIMUTHS:
            r[i] = wrap_angle(r[i])
    return r


def _weight(m: Measurement) -> tuple[np.ndarray, bool]:
    inv, _ = _equilibrated_inverse(m.covariance, IDENTIFIABILITY_THRESHOLD)
    if inv is not None:
        return inv, False
    return np.linalg.pinv(m.covariance), True


def _weights(measurements):
    out, singular = [], False
    for m in measurements:
        w, s = _weight(m)
        out.append(w)
        singular |= s
    if singular:
        warnings.warn("singular measurement covariance: using the pseudo-inverse",
                      RuntimeWarning, stacklevel=3)
    return out, singular


def wnls_cost(state: UEState, measurements: Sequence[Measurement], link: str = "downlink",
              carrier: float = 28e9) -> float:
    """Sum of Mahalanobis-weighted squared residuals, angles wrapped."""
    if not measurements:
        raise ValueError("at least one measurement is required")
    weights, _ = _weights(measurements)
    return _cost(state, measurements, weights, link, carrier)


def _cost(state, measurements, weights, link, carrier) -> float:
    total = 0.0
    for m, w in zip(measurements, weights):
        r = _residual(m, state, link, carrier)
        total += float(r @ w @ r)
    return total


# --------------------------------------------------------------------------
# state parametrization


def _apply(ue: UEState, names: Sequence[str], delta: np.ndarray) -> UEState:
    """Add an increment; ``B`` is in seconds, orientation a local rotation vector."""
    pos = ue.position.copy()
    vel = ue.velocity.copy()
    rot = np.zeros(3)
    bias = ue.clock_bias
    for name, d in zip(names, delta):
        if name in ("x", "y", "z"):
            pos["xyz".index(name)] += d
        elif name == "B":
            bias += d
        elif name in ("o1", "o2", "o3"):
            rot[int(name[1]) - 1] = d
        else:
            vel["xyz".index(name[1])] += d
    orient = ue.orientation.perturbed(rot) if np.any(rot) else ue.orientation
    return UEState(pos, bias, orient, vel)


def _check_names(estimate: Sequence[str]) -> tuple[str, ...]:
    estimate = tuple(estimate)
    bad = [n for n in estimate if n not in LOS_STATE_NAMES]
    if bad or not estimate:
        raise ValueError(f"invalid state components {bad or estimate}")
    return estimate


def _stacked(state, measurements, weights, estimate, link, carrier):
    """Whitened-free pieces: list of (J_i, W_i, r_i)."""
    out = []
    for m, w in zip(measurements, weights):
        jac = state_jacobian("los", state, carrier, anchor=m.anchor, link=link)
        J = jac.select(rows=list(m.domains), cols=list(estimate))
        out.append((J, w, _residual(m, state, link, carrier)))
    return out


def information(state: UEState, measurements: Sequence[Measurement],
                estimate: Sequence[str] = ("x", "y", "z", "B"), link: str = "downlink",
                carrier: float = 28e9) -> np.ndarray:
    """sum_i J_i^T Sigma_i^-1 J_i at ``state``."""
    estimate = _check_names(estimate)
    weights, _ = _weights(measurements)
    F = np.zeros((len(estimate), len(estimate)))
    for J, w, _ in _stacked(state, measurements, weights, estimate, link, carrier):
        F += J.T @ w @ J
    return 0.5 * (F + F.T)


# --------------------------------------------------------------------------
# initialization


def _count_constraints(measurements, estimate) -> dict[str, int]:
    counts = {d: 0 for d in PARAM_NAMES}
    for m in measurements:
        for d in m.domains:
            counts[d] += 1
    return counts


def _require_identifiable(measurements, estimate, link):
    counts = _count_constraints(measurements, estimate)
    n_delay = counts["delay"]
    # angles measured in the anchor frame give bearings from a known point
    anchor_side = ("aod_az", "aod_el") if link == "downlink" else ("aoa_az", "aoa_el")
    n_bearing = sum(counts[d] for d in anchor_side)
    n_other = sum(counts.values()) - n_delay - n_bearing
    needed = len(estimate)
    have = n_delay + n_bearing + n_other
    missing = []
    if "B" in estimate and n_delay == 0:
        missing.append("delay (clock bias needs at least one delay)")
    if have < needed:
        missing.append(f"{needed - have} more scalar measurement(s) of delay or "
                       f"{'/'.join(anchor_side)}")
    if "B" in estimate and n_bearing == 0 and n_delay < needed:
        missing.append(f"{needed - n_delay} more delay(s) from distinct anchors, "
                       f"or {'/'.join(anchor_side)}")
    if missing:
        have_txt = ", ".join(f"{d} x{c}" for d, c in counts.items() if c) or "nothing"
        raise NotIdentifiableError(
            f"state {estimate} not identifiable from {have_txt}; missing: "
            + "; ".join(missing))


def bancroft(anchors: np.ndarray, pseudoranges: np.ndarray) -> list[tuple[np.ndarray, float]]:
    """Closed-form solutions of ``rho_i = |x - a_i| + b`` (b in meters).

    Returns up to two candidates ``(x, b)``; with more than four anchors the
    Lorentz-form equations are solved in the least-squares sense.
    """
    A = np.asarray(anchors, dtype=float)
    rho = np.asarray(pseudoranges, dtype=float)
    B = np.column_stack([A, rho])
    eta = np.diag([1.0, 1.0, 1.0, -1.0])

    def lorentz(u, v):
        return u @ eta @ v

    alpha = 0.5 * np.array([lorentz(b, b) for b in B])
    Bp = np.linalg.pinv(B)
    u = Bp @ np.ones(len(rho))
    v = Bp @ alpha
    a2, a1, a0 = lorentz(u, u), 2 * (lorentz(u, v) - 1), lorentz(v, v)
    roots = np.roots([a2, a1, a0]) if abs(a2) > 1e-300 else np.array([-a0 / a1])
    out = []
    for lam in roots:
        if abs(np.imag(lam)) > 1e-9 * max(1.0, abs(lam)):
            continue
        y = np.real(lam) * u + v
        # y = (x, -b) in this formulation
        out.append((y[:3], -y[3]))
    return out


def _bearing(m: Measurement, link: str) -> np.ndarray | None:
    """Global unit vector from the anchor toward the UE, if measured."""
    if link == "downlink":
        az, el = "aod_az", "aod_el"
    else:
        az, el = "aoa_az", "aoa_el"
    if az not in m.domains:
        return None
    e = m.eta_hat.get(el) if el in m.domains else 0.0
    return m.anchor.orientation.matrix @ direction_vector(m.eta_hat.get(az), e)


def _fixed_mask(estimate):
    return np.array([c not in estimate for c in "xyz"])


def coarse_init(measurements: Sequence[Measurement], bounds: tuple | None = None,
                estimate: Sequence[str] = ("x", "y", "z", "B"),
                reference: UEState | None = None, link: str = "downlink",
                carrier: float = 28e9, grid_points: int = 41) -> UEState:
    """Closed-form or linearized starting point for refinement.

    ``reference`` supplies the components that are not estimated (and the
    starting value of orientation/velocity). ``bounds`` is a pair of
    3-vectors (lower, upper) used by the grid-search fallback.
    """
    estimate = _check_names(estimate)
    if not measurements:
        raise NotIdentifiableError("no measurements")
    _require_identifiable(measurements, estimate, link)
    ref = reference or UEState(np.zeros(3))
    fixed = _fixed_mask(estimate)
    pos_names = [c for c in "xyz" if c in estimate]
    delays = [(m.anchor.position, m.eta_hat.delay) for m in measurements if "delay" in m.domains]
    bearings = [(m, _bearing(m, link)) for m in measurements]
    bearings = [(m, u) for m, u in bearings if u is not None]

    candidate = None
    closed_bias = False
    if "B" in estimate and not fixed.any() and len(delays) >= 4:
        A = np.array([a for a, _ in delays])
        rho = SPEED_OF_LIGHT * np.array([t for _, t in delays])
        sols = bancroft(A, rho)
        best = None
        for x, b in sols:
            resid = rho - np.linalg.norm(A - x, axis=1) - b
            score = float(resid @ resid)
            if bounds is not None and not _inside(x, bounds):
                score += 1e30
            if best is None or score < best[0]:
                best = (score, x, b)
        if best is not None and np.all(np.isfinite(best[1])):
            candidate = ref.replace(position=best[1], clock_bias=best[2] / SPEED_OF_LIGHT)
            closed_bias = True
    elif "B" not in estimate and pos_names:
        if bearings and any("delay" in m.domains for m, _ in bearings):
            pts = [m.anchor.position + SPEED_OF_LIGHT * (m.eta_hat.delay - ref.clock_bias) * u
                   for m, u in bearings if "delay" in m.domains]
            candidate = ref.replace(position=_merge_fixed(np.mean(pts, axis=0), ref, fixed))
        elif len(bearings) >= 2:
            x = _bearing_intersection(bearings, ref.position, fixed)
            if x is not None:
                candidate = ref.replace(position=x)
        if candidate is None and len(delays) >= len(pos_names) + 1:
            x = _linearized_ranges(delays, ref, fixed)
            if x is not None:
                candidate = ref.replace(position=x)
    if candidate is None and "B" in estimate and pos_names and len(bearings) >= 2:
        # bearings fix the position without the bias, which then follows from the delays
        x = _bearing_intersection(bearings, ref.position, fixed)
        if x is not None:
            candidate = ref.replace(position=x)

    if candidate is None or not np.all(np.isfinite(candidate.position)):
        if bounds is None:
            raise NotIdentifiableError(
                "no closed-form initialization for this measurement set and no scene bounds "
                "for the grid-search fallback")
        candidate = _grid_search(measurements, bounds, estimate, ref, link, carrier, grid_points)
        closed_bias = False
    if "B" in estimate and not closed_bias:
        candidate = candidate.replace(clock_bias=_bias_given_position(candidate, delays))
    return candidate


def _inside(x, bounds) -> bool:
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    return bool(np.all(x >= lo - 1e-9) and np.all(x <= hi + 1e-9))


def _merge_fixed(x, ref, fixed):
    x = np.array(x, dtype=float)
    x[fixed] = ref.position[fixed]
    return x


def _bearing_intersection(bearings, ref_pos, fixed):
    """Least-squares point closest to all bearing lines, fixed coords held."""
    M = np.zeros((3, 3))
    rhs = np.zeros(3)
    for m, u in bearings:
        P = np.eye(3) - np.outer(u, u)
        M += P
        rhs += P @ m.anchor.position
    free = ~fixed
    rhs_f = rhs[free] - M[np.ix_(free, fixed)] @ ref_pos[fixed]
    Mf = M[np.ix_(free, free)]
    if np.linalg.cond(Mf) > 1e12:
        return None
    x = ref_pos.copy()
    x[free] = np.linalg.solve(Mf, rhs_f)
    return x


def _linearized_ranges(delays, ref, fixed):
    """Difference-of-squares linearization with known clock bias."""
    A = np.array([a for a, _ in delays])
    rho = SPEED_OF_LIGHT * (np.array([t for _, t in delays]) - ref.clock_bias)
    G = -2.0 * (A[1:] - A[0])
    y = rho[1:] ** 2 - rho[0] ** 2 - np.sum(A[1:] ** 2, axis=1) + np.sum(A[0] ** 2)
    free = ~fixed
    y = y - G[:, fixed] @ ref.position[fixed]
    Gf = G[:, free]
    if Gf.shape[0] < Gf.shape[1] or np.linalg.matrix_rank(Gf) < Gf.shape[1]:
        return None
    x = ref.position.copy()
    x[free] = np.linalg.lstsq(Gf, y, rcond=None)[0]
    return x


def _bias_given_position(ue, delays) -> float:
    if not delays:
        return ue.clock_bias
    return float(np.mean([t - np.linalg.norm(a - ue.position) / SPEED_OF_LIGHT
                          for a, t in delays]))


def _grid_search(measurements, bounds, estimate, ref, link, carrier, n):
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    fixed = _fixed_mask(estimate)
    axes = [np.linspace(lo[i], hi[i], n) if not fixed[i] else [ref.position[i]]
            for i in range(3)]
    weights, _ = _weights(measurements)
    delays = [(m.anchor.position, m.eta_hat.delay) for m in measurements if "delay" in m.domains]
    best = None
    for p in itertools.product(*axes):
        cand = ref.replace(position=np.array(p))
        if "B" in estimate:
            cand = cand.replace(clock_bias=_bias_given_position(cand, delays))
        try:
            c = _cost(cand, measurements, weights, link, carrier)
        except ValueError:
            continue
        if best is None or c < best[0]:
            best = (c, cand)
    if best is None:
        raise NotIdentifiableError("grid search found no valid candidate")
    return best[1]


# --------------------------------------------------------------------------
# refinement


def gauss_newton_refine(init: UEState, measurements: Sequence[Measurement],
                        estimate: Sequence[str] = ("x", "y", "z", "B"),
                        link: str = "downlink", carrier: float = 28e9, max_iter: int = 50,
                        tol: float = 1e-12, damping: float = 1e-3) -> StateEstimate:
    """Levenberg-damped Gauss-Newton on :func:`wnls_cost`.

    Damping is added to the diagonally equilibrated normal matrix, starts at
    ``damping`` and is divided by 10 after an accepted step and multiplied
    by 10 after a rejected one. Steps never increase the cost. The reported
    covariance is the inverse of ``sum_i J_i^T Sigma_i^-1 J_i`` at the
    final iterate.
    """
    estimate = _check_names(estimate)
    if not measurements:
        raise ValueError("at least one measurement is required")
    weights, singular = _weights(measurements)
    state = init
    cost = _cost(state, measurements, weights, link, carrier)
    lam = damping
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        F = np.zeros((len(estimate), len(estimate)))
        g = np.zeros(len(estimate))
        for J, w, r in _stacked(state, measurements, weights, estimate, link, carrier):
            F += J.T @ w @ J
            g += J.T @ w @ r
        d = np.sqrt(np.maximum(np.diag(F), 1e-300))
        Fs = F / np.outer(d, d)
        gs = g / d
        if cost == 0.0 or np.linalg.norm(gs) <= tol * max(np.sqrt(cost), 1e-300):
            converged = True
            break
        accepted = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(Fs + lam * np.eye(len(d)), gs) / d
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = _apply(state, estimate, step)
            try:
                c_new = _cost(cand, measurements, weights, link, carrier)
            except ValueError:
                c_new = np.inf
            if c_new <= cost:
                accepted = True
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if not accepted:
            converged = True  # no decrease possible at working precision
            break
        drop = cost - c_new
        state, cost = cand, c_new
        if drop <= tol * max(cost, 1e-300) or np.max(np.abs(step * d)) <= tol:
            converged = True
            break
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # already reported above
        F = information(state, measurements, estimate, link, carrier)
    cov, cov_singular = _covariance(F)
    return StateEstimate(state, cov, estimate, cost, it, converged, singular or cov_singular)


def _covariance(F: np.ndarray) -> tuple[np.ndarray, bool]:
    inv, _ = _equilibrated_inverse(F, IDENTIFIABILITY_THRESHOLD)
    if inv is None:
        return np.linalg.pinv(F), True
    return 0.5 * (inv + inv.T), False


def estimate_state(measurements: Sequence[Measurement],
                   estimate: Sequence[str] = ("x", "y", "z", "B"),
                   reference: UEState | None = None, bounds: tuple | None = None,
                   link: str = "downlink", carrier: float = 28e9) -> StateEstimate:
    """coarse_init followed by gauss_newton_refine."""
    init = coarse_init(measurements, bounds, estimate, reference, link, carrier)
    return gauss_newton_refine(init, measurements, estimate, link, carrier)


# --------------------------------------------------------------------------
# direct positioning


def direct_position_grid(observations: Mapping[int, Observation], scene: Scene,
                         grid: GridConfig, txrx: TxRxConfig,
                         axes: Mapping[str, Sequence[float]]) -> StateEstimate:
    """Exhaustive likelihood maximization over a rectangular state grid.

    ``axes`` maps state components (``x``, ``y``, ``z``, ``B``) to sample
    values; the rest come from ``scene.ue``. Gains are profiled out per
    anchor by least squares, so the log-likelihood up to a constant is
    ``sum_i |mu_i^H y_i|^2 / (N0 |mu_i|^2)``. Ties go to the first grid
    point in C order. This is a costly reference, not a production path.
    """
    names = tuple(axes)
    bad = [n for n in names if n not in ("x", "y", "z", "B")]
    if bad:
        raise ValueError(f"grid axes must be position or clock bias, got {bad}")
    values = [np.asarray(axes[n], dtype=float) for n in names]
    rx, tx = scene.arrays()
    ys = {a.id: observations[a.id].y.reshape(-1) for a in scene.anchors}
    shape = tuple(len(v) for v in values)
    loglik = np.full(shape, -np.inf)
    for idx in itertools.product(*(range(s) for s in shape)):
        delta = np.array([values[k][i] for k, i in enumerate(idx)])
        ue = _set(scene.ue, names, delta)
        total = 0.0
        for a in scene.anchors:
            try:
                geo = los_params(a, ue, scene.link, grid.carrier)
            except ValueError:
                total = -np.inf
                break
            mu = combine(path_response(geo, grid, rx, tx), txrx).reshape(-1)
            total += abs(np.vdot(mu, ys[a.id])) ** 2 / float(np.vdot(mu, mu).real)
        loglik[idx] = total / txrx.noise_psd
    best = np.unravel_index(int(np.argmax(loglik)), shape)
    boundary = any(len(v) > 1 and i in (0, len(v) - 1) for v, i in zip(values, best))
    ue = _set(scene.ue, names, np.array([values[k][i] for k, i in enumerate(best)]))

    gains = {}
    for a in scene.anchors:
        geo = los_params(a, ue, scene.link, grid.carrier)
        mu = combine(path_response(geo, grid, rx, tx), txrx).reshape(-1)
        gains[a.id] = complex(np.vdot(mu, ys[a.id]) / np.vdot(mu, mu))
    at_best = Scene(scene.anchors, ue, scene.link, scene.anchor_array, scene.ue_array,
                    names, gains)
    fim = state_fim(at_best, grid, txrx)
    cov, singular = _covariance(fim.matrix[:fim.n_interest, :fim.n_interest]
                                if fim.n_interest == len(fim.labels) else _schur(fim))
    cost = float(np.max(loglik[np.isfinite(loglik)]) if np.isfinite(loglik).any() else np.nan)
    return StateEstimate(ue, cov, names, -cost, int(np.prod(shape)), True, singular, boundary)


def _schur(fim) -> np.ndarray:
    d = fim.n_interest
    J = fim.matrix
    return J[:d, :d] - J[:d, d:] @ np.linalg.pinv(J[d:, d:]) @ J[d:, :d]


def _set(ue: UEState, names, values) -> UEState:
    pos = ue.position.copy()
    bias = ue.clock_bias
    for n, v in zip(names, values):
        if n == "B":
            bias = float(v)
        else:
            pos["xyz".index(n)] = v
    return ue.replace(position=pos, clock_bias=bias)
