"""Channel-parameter estimation: LS channel estimate, sparse recovery on a
Kronecker dictionary, periodograms and local maximum-likelihood refinement.

Vectorization follows ``a_d(tau) (x) a_D(nu) (x) a_rx(aoa) (x) a_tx(aod)``:
a channel tensor of shape (N, K, N_rx, N_tx) is flattened in C order, so
flat index ``((n*K + k)*N_rx + r)*N_tx + t`` holds ``H[n, k][r, t]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize

from .bounds import _equilibrated_inverse
from .channel import (ArrayGeometry, GridConfig, delay_response, doppler_response,
                      path_response, path_response_derivatives, steering_vector)
from .geometry import SPEED_OF_LIGHT, GeoParams, direction_vector, wrap_angle
from .signal import Observation, TxRxConfig

GEO_NAMES = ("delay", "doppler", "aoa_az", "aoa_el", "aod_az", "aod_el")


class EstimationError(ValueError):
    pass


class UnsupportedStructureError(EstimationError):
    pass


@dataclass(frozen=True, eq=False)
class ChannelEstimate:
    """Unstructured channel estimate, shape (N, K, N_rx, N_tx).

    ``noise_var`` is the per-entry noise variance of ``h``. In static mode
    (channel assumed constant over symbols) ``grid.n_symbols`` is 1.
    """

    h: np.ndarray
    noise_var: float
    grid: GridConfig
    rx_array: ArrayGeometry
    tx_array: ArrayGeometry

    @property
    def domains(self) -> tuple[str, ...]:
        return active_domains(self.grid, self.rx_array, self.tx_array)


def active_domains(grid: GridConfig, rx_array: ArrayGeometry,
                   tx_array: ArrayGeometry) -> tuple[str, ...]:
    """Geometric parameters that the sampled channel actually depends on."""
    out = []
    if grid.n_subcarriers > 1:
        out.append("delay")
    if grid.n_symbols > 1:
        out.append("doppler")
    if rx_array.n_elements > 1:
        az, el = rx_array.senses()
        out += ["aoa_az"] * az + ["aoa_el"] * el
    if tx_array.n_elements > 1:
        az, el = tx_array.senses()
        out += ["aod_az"] * az + ["aod_el"] * el
    return tuple(out)


def ls_channel_estimate(obs: Observation, txrx: TxRxConfig, grid: GridConfig,
                        rx_array: ArrayGeometry | None = None,
                        tx_array: ArrayGeometry | None = None) -> ChannelEstimate:
    """Least-squares inversion of the known pilots and combiners.

    With one Tx antenna and a full-rank combiner each (n, k) is inverted on
    its own, which keeps the Doppler domain. Otherwise the channel is taken
    as constant over the K symbols and each subcarrier is solved from the
    stacked symbols (AoD observable, Doppler not).
    """
    rx_array = rx_array or ArrayGeometry.single()
    tx_array = tx_array or ArrayGeometry.single()
    y = obs.y
    N, K, M = y.shape
    n_rx, n_tx = txrx.n_rx, txrx.n_tx
    f, W = txrx.precoders, txrx.combiners
    N0 = txrx.noise_psd

    if n_tx == 1 and M == n_rx:
        H = np.empty((N, K, n_rx, 1), dtype=complex)
        var = np.empty((N, K))
        for k in range(K):
            for n in range(N):
                if abs(f[n, k, 0]) < 1e-300:
                    raise EstimationError(f"rank-deficient pilot at (n, k) = ({n}, {k})")
                # W_k is unitary here, so (W_k^H)^-1 = W_k
                H[n, k, :, 0] = W[k] @ y[n, k] / f[n, k, 0]
                var[n, k] = N0 / abs(f[n, k, 0]) ** 2
        return ChannelEstimate(H, float(np.mean(var)), grid, rx_array, tx_array)

    static_grid = replace(grid, n_symbols=1)
    H = np.empty((N, 1, n_rx, n_tx), dtype=complex)
    var = np.empty(N)
    for n in range(N):
        A = np.concatenate([np.kron(W[k].conj().T, f[n, k][None, :]) for k in range(K)])
        if np.linalg.matrix_rank(A) < n_rx * n_tx:
            raise EstimationError(f"rank-deficient pilot pattern at subcarrier n = {n} "
                                  f"(symbols 0..{K - 1})")
        sol, *_ = np.linalg.lstsq(A, y[n].reshape(-1), rcond=None)
        H[n, 0] = sol.reshape(n_rx, n_tx)
        var[n] = N0 * np.mean(np.real(np.diag(np.linalg.inv(A.conj().T @ A))))
    return ChannelEstimate(H, float(np.mean(var)), static_grid, rx_array, tx_array)


def vectorize(est: ChannelEstimate | np.ndarray) -> np.ndarray:
    h = est.h if isinstance(est, ChannelEstimate) else np.asarray(est)
    return h.reshape(-1)


def devectorize(h: np.ndarray, shape) -> np.ndarray:
    return np.asarray(h).reshape(shape)


# --------------------------------------------------------------------------
# dictionary


def _angle_grid(array: ArrayGeometry, oversampling: int) -> np.ndarray:
    """(G, 2) grid of (az, el); only sensed axes are sampled."""
    if array.n_elements == 1:
        return np.zeros((1, 2))
    senses_az, senses_el = array.senses()
    span = np.ptp(array.element_positions, axis=0)

    def axis_grid(extent):
        n_equiv = max(int(round(extent / 0.5)) + 1, 2)
        step = (2.0 / n_equiv) / oversampling
        count = int(np.ceil(np.pi / step)) + 1
        return np.linspace(-np.pi / 2, np.pi / 2, count)

    az = axis_grid(max(span[1], span[0])) if senses_az else np.zeros(1)
    el = axis_grid(span[2]) if senses_el else np.zeros(1)
    A, E = np.meshgrid(az, el, indexing="ij")
    return np.column_stack([A.ravel(), E.ravel()])


@dataclass(eq=False)
class Dictionary:
    """Oversampled grid dictionary with Kronecker-structured atoms."""

    grid: GridConfig
    rx_array: ArrayGeometry
    tx_array: ArrayGeometry
    delays: np.ndarray
    dopplers: np.ndarray
    aoa_grid: np.ndarray
    aod_grid: np.ndarray
    factors: list = field(init=False, repr=False)

    def __post_init__(self):
        self.factors = [
            np.stack([delay_response(self.grid, t) for t in self.delays], axis=1),
            np.stack([doppler_response(self.grid, v) for v in self.dopplers], axis=1),
            np.stack([steering_vector(self.rx_array, a) for a in self.aoa_grid], axis=1),
            np.stack([steering_vector(self.tx_array, a) for a in self.aod_grid], axis=1),
        ]

    @classmethod
    def build(cls, grid: GridConfig, rx_array: ArrayGeometry | None = None,
              tx_array: ArrayGeometry | None = None, oversampling: int = 4,
              delay_range: tuple[float, float] | None = None,
              doppler_range: tuple[float, float] | None = None) -> "Dictionary":
        """Grid steps are 1/oversampling of the resolution in each domain.

        Delays default to the unambiguous range [0, 1/df), Dopplers to
        [-1/(2Ts), 1/(2Ts)).
        """
        rx_array = rx_array or ArrayGeometry.single()
        tx_array = tx_array or ArrayGeometry.single()
        if grid.n_subcarriers > 1:
            step = 1.0 / (oversampling * grid.bandwidth)
            lo, hi = delay_range or (0.0, 1.0 / grid.subcarrier_spacing)
            delays = np.arange(lo, hi - 1e-9 * step, step)
        else:
            delays = np.zeros(1)
        if grid.n_symbols > 1:
            step = 1.0 / (oversampling * grid.integration_time)
            lo, hi = doppler_range or (-0.5 / grid.symbol_duration, 0.5 / grid.symbol_duration)
            dopplers = np.arange(lo, hi - 1e-9 * step, step)
        else:
            dopplers = np.zeros(1)
        return cls(grid, rx_array, tx_array, delays, dopplers,
                   _angle_grid(rx_array, oversampling), _angle_grid(tx_array, oversampling))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(f.shape[1] for f in self.factors)

    @property
    def atom_norm(self) -> float:
        return float(np.sqrt(np.prod([f.shape[0] for f in self.factors])))

    def atom(self, index) -> np.ndarray:
        i, j, a, b = index
        F = self.factors
        return np.einsum("n,k,r,t->nkrt", F[0][:, i], F[1][:, j], F[2][:, a], F[3][:, b])

    def params(self, index) -> GeoParams:
        i, j, a, b = index
        return GeoParams(aoa=tuple(self.aoa_grid[a]), aod=tuple(self.aod_grid[b]),
                         delay=float(self.delays[i]), doppler=float(self.dopplers[j]))

    def resolution_cells(self) -> tuple[float, float, float, float]:
        """Per-domain resolution used for atom exclusion (inf = domain inactive)."""
        g = self.grid
        d = 1.0 / g.bandwidth if self.delays.size > 1 else np.inf
        v = 1.0 / g.integration_time if self.dopplers.size > 1 else np.inf

        def ang(array):
            if array.n_elements == 1:
                return np.inf
            span = np.ptp(array.element_positions, axis=0)
            return 2.0 / (int(round(max(span) / 0.5)) + 1)

        return d, v, ang(self.rx_array), ang(self.tx_array)

    def neighbourhood(self, index, cells: float = 1.0) -> np.ndarray:
        """Boolean mask of atoms within ``cells`` resolution cells of
        ``index`` in every domain, i.e. not resolvable from it."""
        return self.exclusion_mask(self.params(index), cells)

    def exclusion_mask(self, geo: GeoParams, cells: float = 1.0) -> np.ndarray:
        """Like :meth:`neighbourhood` but centred on arbitrary parameters."""
        res = self.resolution_cells()
        period = 1.0 / self.grid.subcarrier_spacing
        dd = np.mod(self.delays - geo.delay, period)
        dd = np.minimum(dd, period - dd)
        masks = [
            dd < cells * res[0] if np.isfinite(res[0]) else np.ones(self.delays.size, bool),
            np.abs(self.dopplers - geo.doppler) < cells * res[1]
            if np.isfinite(res[1]) else np.ones(self.dopplers.size, bool),
        ]
        for grid_, centre, r in ((self.aoa_grid, geo.aoa, res[2]),
                                 (self.aod_grid, geo.aod, res[3])):
            if np.isfinite(r):
                diff = np.abs(grid_ - np.asarray(centre))
                diff[:, 0] = np.abs(wrap_angle(grid_[:, 0] - centre[0]))
                masks.append(np.all(diff < cells * r, axis=1))
            else:
                masks.append(np.ones(len(grid_), bool))
        return np.einsum("i,j,a,b->ijab", *masks).astype(bool)

    def correlate(self, h: np.ndarray) -> np.ndarray:
        """Inner products of every atom with a tensor (N, K, N_rx, N_tx)."""
        out = np.asarray(h).reshape([f.shape[0] for f in self.factors])
        for f in self.factors:
            # contract the leading axis; the new grid axis goes last
            out = np.tensordot(out, f.conj(), axes=([0], [0]))
        return out


# --------------------------------------------------------------------------
# detections


@dataclass(frozen=True, eq=False)
class DetectedPath:
    eta_hat: GeoParams
    alpha_hat: complex
    covariance: np.ndarray
    domains: tuple[str, ...]
    identifiable: bool = True

    def std(self, name: str) -> float:
        return float(np.sqrt(self.covariance[self.domains.index(name),
                                             self.domains.index(name)]))


def _model_and_jacobian(paths_geo: Sequence[GeoParams], alphas, est: ChannelEstimate,
                        domains: Sequence[str]):
    grid, rx, tx = est.grid, est.rx_array, est.tx_array
    mu = np.zeros(est.h.size, dtype=complex)
    cols = []
    for geo, alpha in zip(paths_geo, alphas):
        atom = path_response(geo, grid, rx, tx).reshape(-1)
        mu += alpha * atom
        if domains is None:
            continue
        d = path_response_derivatives(geo, grid, rx, tx)
        cols += [alpha * d[name].reshape(-1) for name in domains]
        cols += [atom, 1j * atom]
    return mu, np.stack(cols, axis=1) if cols else np.zeros((est.h.size, 0))


def path_covariances(est: ChannelEstimate, paths_geo: Sequence[GeoParams], alphas,
                     domains: Sequence[str]):
    """Per-path inverse-FIM blocks over ``domains``; flags singular cases."""
    _, D = _model_and_jacobian(paths_geo, alphas, est, domains)
    J = 2.0 / est.noise_var * np.real(D.conj().T @ D)
    inv, _ = _equilibrated_inverse(J, 1e12)
    ok = inv is not None
    if not ok:
        inv = np.linalg.pinv(J)
    per = len(domains) + 2
    out = []
    for l in range(len(paths_geo)):
        block = inv[l * per:l * per + len(domains), l * per:l * per + len(domains)]
        out.append(0.5 * (block + block.T))
    return out, ok


def omp_trace(h: np.ndarray, dictionary: Dictionary, noise_var: float,
              gamma: float | None = None,
              max_paths: int = 10, p_fa: float = 1e-2, min_separation: float | None = 1.0):
    """OMP with LS re-projection; returns (indices, gains, residual energies).

    Atoms closer than ``min_separation`` resolution cells to an already
    selected atom in every active domain are excluded, since such paths are
    not separable and would only fit model mismatch of a merged cluster.

    An atom is accepted only if the energy it would capture from the
    residual, ``|<a, r>|^2 / ||a||^2``, exceeds ``noise_var * ln(G / p_fa)``
    with G the number of atoms (a per-scan false-alarm level of about
    ``p_fa``). Pursuit also stops after ``max_paths`` atoms and, if
    ``gamma`` is given, once the residual energy is below ``(1 + gamma)``
    times the expected noise energy. The energy rule alone cannot detect a
    path whose energy is small next to the total noise energy over many
    bins, hence it is optional. Ties in the correlation scan go to the
    lowest flat grid index.
    """
    h = np.asarray(h).reshape(-1)
    shape = dictionary.shape
    floor = (1.0 + gamma) * noise_var * h.size if gamma is not None else 0.0
    detect = noise_var * np.log(np.prod(shape) / p_fa)
    norm2 = dictionary.atom_norm ** 2
    residual = h.copy()
    energies = [float(np.vdot(residual, residual).real)]
    indices: list[tuple[int, ...]] = []
    atoms = []
    gains = np.zeros(0, dtype=complex)
    blocked = np.zeros(shape, dtype=bool)
    while energies[-1] > floor and len(indices) < max_paths:
        corr = np.abs(dictionary.correlate(residual))
        corr[blocked] = 0.0
        flat = int(np.argmax(corr))
        if corr.flat[flat] ** 2 / norm2 < detect:
            break
        idx = tuple(int(i) for i in np.unravel_index(flat, shape))
        if idx in indices:
            break
        indices.append(idx)
        if min_separation:
            blocked |= dictionary.neighbourhood(idx, min_separation)
        atoms.append(dictionary.atom(idx).reshape(-1))
        A = np.stack(atoms, axis=1)
        gains, *_ = np.linalg.lstsq(A, h, rcond=None)
        residual = h - A @ gains
        energies.append(float(np.vdot(residual, residual).real))
    return indices, gains, energies


def omp(est: ChannelEstimate, dictionary: Dictionary, gamma: float | None = None,
        max_paths: int = 10, p_fa: float = 1e-2, min_separation: float | None = 1.0,
        refine_rounds: int = 0) -> list[DetectedPath]:
    """Detect paths by orthogonal matching pursuit on the grid dictionary.

    With ``refine_rounds > 0`` every newly selected atom is moved off the
    grid before the next scan: each path in turn is refined alone against
    the residual plus its own contribution, gains are re-projected jointly,
    and this is repeated ``refine_rounds`` times. Without it, grid mismatch
    of strong paths leaves structured residual energy that the next scans
    pick up as spurious paths. Exclusion zones then follow the refined
    positions.
    """
    if refine_rounds <= 0:
        indices, gains, _ = omp_trace(est.h, dictionary, est.noise_var, gamma, max_paths,
                                      p_fa, min_separation)
        geos = [dictionary.params(i) for i in indices]
    else:
        geos, gains = _refined_pursuit(est, dictionary, gamma, max_paths, p_fa,
                                       min_separation, refine_rounds)
    if not geos:
        return []
    domains = est.domains
    covs, ok = path_covariances(est, geos, gains, domains)
    return [DetectedPath(g, complex(a), c, domains, ok) for g, a, c in zip(geos, gains, covs)]


def _refined_pursuit(est, dictionary, gamma, max_paths, p_fa, min_separation, rounds):
    h = est.h.reshape(-1)
    floor = (1.0 + gamma) * est.noise_var * h.size if gamma is not None else 0.0
    detect = est.noise_var * np.log(np.prod(dictionary.shape) / p_fa)
    norm2 = dictionary.atom_norm ** 2
    geos: list[GeoParams] = []
    gains = np.zeros(0, dtype=complex)
    residual = h.copy()
    while float(np.vdot(residual, residual).real) > floor and len(geos) < max_paths:
        corr = np.abs(dictionary.correlate(residual))
        if min_separation:
            for g in geos:
                corr[dictionary.exclusion_mask(g, min_separation)] = 0.0
        flat = int(np.argmax(corr))
        if corr.flat[flat] ** 2 / norm2 < detect:
            break
        geos.append(dictionary.params(np.unravel_index(flat, dictionary.shape)))
        gains, residual = _projected(h, _atoms(geos, est))
        for _ in range(rounds):
            for l in range(len(geos)):
                own = gains[l] * _atoms([geos[l]], est)[:, 0]
                single = replace(est, h=(residual + own).reshape(est.h.shape))
                start = DetectedPath(geos[l], complex(gains[l]), np.zeros((0, 0)), est.domains)
                geos[l] = ml_refine(single, [start], max_iter=20).paths[0].eta_hat
                gains, residual = _projected(h, _atoms(geos, est))
    return geos, gains


# --------------------------------------------------------------------------
# maximum-likelihood refinement


@dataclass(frozen=True, eq=False)
class Refinement:
    paths: list[DetectedPath]
    converged: bool
    iterations: int
    log_likelihood_init: float
    log_likelihood: float


def _atoms(geos: Sequence[GeoParams], est: ChannelEstimate) -> np.ndarray:
    if not geos:
        return np.zeros((est.h.size, 0), dtype=complex)
    return np.stack([path_response(g, est.grid, est.rx_array, est.tx_array).reshape(-1)
                     for g in geos], axis=1)


def _projected(h: np.ndarray, A: np.ndarray):
    """LS gains and residual of ``h`` against the columns of ``A``."""
    if A.shape[1] == 0:
        return np.zeros(0, dtype=complex), h.copy()
    gains, *_ = np.linalg.lstsq(A, h, rcond=None)
    return gains, h - A @ gains


def _residual_energy(h, geos, alphas, est) -> float:
    r = h - _atoms(geos, est) @ np.asarray(alphas, dtype=complex)
    return float(np.vdot(r, r).real)


def ml_refine(est: ChannelEstimate, initial: Sequence[DetectedPath], max_iter: int = 50,
              tol: float = 1e-9) -> Refinement:
    """Local maximization of the Gaussian log-likelihood over all paths.

    Gains enter linearly and are profiled out by least squares (variable
    projection), leaving the residual energy as a function of the active
    geometric parameters only. That function is minimized by BFGS with its
    exact gradient, in coordinates scaled by the atom-derivative norms. A
    merged cluster fitted by fewer atoms is a large-residual problem where
    plain Gauss-Newton converges only linearly, which is why a quasi-Newton
    update is used. The result is accepted only if its likelihood is at
    least that of the initialization; otherwise, or if the iteration budget
    runs out, the initialization is returned with ``converged=False``.
    """
    domains = est.domains
    h = est.h.reshape(-1)
    sigma2 = est.noise_var
    geos0 = [p.eta_hat for p in initial]
    c0 = _residual_energy(h, geos0, [p.alpha_hat for p in initial], est)
    if not initial or not domains:
        A = _atoms(geos0, est)
        gains, r = _projected(h, A)
        c = float(np.vdot(r, r).real)
        paths = [replace(p, alpha_hat=complex(a)) for p, a in zip(initial, gains)]
        return Refinement(paths, True, 0, -c0 / sigma2, -c / sigma2)

    theta0 = np.array([[g.get(n) for n in domains] for g in geos0])
    scale = np.ones_like(theta0)
    for l, geo in enumerate(geos0):
        d = path_response_derivatives(geo, est.grid, est.rx_array, est.tx_array)
        for j, name in enumerate(domains):
            s = np.linalg.norm(d[name])
            scale[l, j] = 1.0 / s if s > 0 else 1.0

    def unpack(u):
        theta = u.reshape(theta0.shape) * scale
        return [g.replace(**dict(zip(domains, t))) for g, t in zip(geos0, theta)]

    def fun(u):
        geos = unpack(u)
        gains, r = _projected(h, _atoms(geos, est))
        grad = np.empty(theta0.shape)
        for l, geo in enumerate(geos):
            d = path_response_derivatives(geo, est.grid, est.rx_array, est.tx_array)
            for j, name in enumerate(domains):
                grad[l, j] = -2.0 * np.real(np.conj(gains[l]) * np.vdot(d[name].reshape(-1), r))
        return float(np.vdot(r, r).real), (grad * scale).ravel()

    res = minimize(fun, (theta0 / scale).ravel(), jac=True, method="BFGS",
                   options={"maxiter": max_iter, "gtol": tol * max(np.sqrt(c0), 1.0)})
    # status 2: the line search cannot improve further at working precision
    converged = bool(res.success or res.status == 2)
    geos = unpack(res.x)
    gains, r = _projected(h, _atoms(geos, est))
    c = float(np.vdot(r, r).real)
    if not converged or not np.isfinite(c) or c > c0:
        converged = False
        geos, gains, c = geos0, [p.alpha_hat for p in initial], c0
    covs, ok = path_covariances(est, geos, gains, domains)
    paths = [DetectedPath(g, complex(a), cv, domains, ok) for g, a, cv in zip(geos, gains, covs)]
    return Refinement(paths, converged, int(res.nit), -c0 / sigma2, -c / sigma2)


# --------------------------------------------------------------------------
# harmonic-retrieval view


def spatial_frequencies(geo: GeoParams, grid: GridConfig, rx_array: ArrayGeometry | None = None,
                        tx_array: ArrayGeometry | None = None) -> dict[str, float]:
    """Per-dimension spatial frequencies of a path.

    ``subcarrier``: -2 pi df tau; ``symbol``: 2 pi Ts nu; ``rx_<axis>`` /
    ``tx_<axis>``: 2 pi d k_axis for every axis along which the array is a
    uniform grid with spacing d (wavelengths).
    """
    out = {
        "subcarrier": -2 * np.pi * grid.subcarrier_spacing * geo.delay,
        "symbol": 2 * np.pi * grid.symbol_duration * geo.doppler,
    }
    for prefix, array, angle in (("rx", rx_array, geo.aoa), ("tx", tx_array, geo.aod)):
        if array is None or array.n_elements == 1:
            continue
        try:
            axes = array.uniform_axes()
        except ValueError as exc:
            raise UnsupportedStructureError(str(exc)) from exc
        k = direction_vector(*angle)
        for axis, (_, d) in axes.items():
            out[f"{prefix}_{axis}"] = 2 * np.pi * d * k["xyz".index(axis)]
    return out


def physical_from_spatial(omegas: dict[str, float], grid: GridConfig,
                          rx_array: ArrayGeometry | None = None,
                          tx_array: ArrayGeometry | None = None) -> GeoParams:
    """Invert :func:`spatial_frequencies` within the unambiguous ranges.

    Delays map to [0, 1/df), Dopplers to [-1/(2Ts), 1/(2Ts)), angles to the
    front half-space (k_x >= 0). Elevation is taken as zero when no array
    axis observes it.
    """
    w = -np.mod(-omegas.get("subcarrier", 0.0), 2 * np.pi)  # (-2pi, 0]
    delay = -w / (2 * np.pi * grid.subcarrier_spacing)
    wd = np.mod(omegas.get("symbol", 0.0) + np.pi, 2 * np.pi) - np.pi
    doppler = wd / (2 * np.pi * grid.symbol_duration)

    def angle(prefix, array):
        if array is None or array.n_elements == 1:
            return (0.0, 0.0)
        axes = array.uniform_axes()
        k = {a: omegas[f"{prefix}_{a}"] / (2 * np.pi * d) for a, (_, d) in axes.items()
             if f"{prefix}_{a}" in omegas}
        el = float(np.arcsin(np.clip(k["z"], -1, 1))) if "z" in k else 0.0
        ce = np.cos(el)
        if "x" in k and "y" in k:
            az = float(np.arctan2(k["y"], k["x"]))
        elif "y" in k:
            az = float(np.arcsin(np.clip(k["y"] / ce, -1, 1)))
        elif "x" in k:
            az = float(np.arccos(np.clip(k["x"] / ce, -1, 1)))
        else:
            az = 0.0
        return (az, el)

    return GeoParams(aoa=angle("rx", rx_array), aod=angle("tx", tx_array),
                     delay=float(delay), doppler=float(doppler))


@dataclass(frozen=True, eq=False)
class Periodogram:
    spectrum: np.ndarray
    omegas: tuple[np.ndarray, ...]
    peaks: list[tuple[tuple[int, ...], tuple[float, ...], float]]

    def peak_delays(self, grid: GridConfig, axis_pos: int = 0) -> list[float]:
        """Delays of the peaks along the subcarrier axis."""
        out = []
        for _, om, _ in self.peaks:
            w = -np.mod(-om[axis_pos], 2 * np.pi)
            out.append(-w / (2 * np.pi * grid.subcarrier_spacing))
        return out


def periodogram(h: np.ndarray, dims: Sequence[int] = (0,), pad: int = 4,
                rel_threshold: float = 0.1) -> Periodogram:
    """Zero-padded |DFT|^2 of ``h`` over ``dims`` (other axes summed
    non-coherently), on the spatial-frequency grid omega_m = 2 pi m / M.

    Peaks are local maxima (circular neighbourhood) not lower than
    ``rel_threshold`` times the global maximum.
    """
    h = np.asarray(h)
    dims = tuple(dims)
    sizes = [pad * h.shape[d] for d in dims]
    spec = np.fft.fftn(h, s=sizes, axes=dims)
    power = np.abs(spec) ** 2
    others = tuple(i for i in range(h.ndim) if i not in dims)
    if others:
        power = power.sum(axis=others)
    omegas = tuple(2 * np.pi * np.arange(m) / m for m in sizes)
    local_max = ndimage.maximum_filter(power, size=3, mode="wrap") == power
    strong = power >= rel_threshold * power.max() if power.max() > 0 else np.zeros_like(local_max)
    peaks = []
    for idx in zip(*np.nonzero(local_max & strong)):
        idx = tuple(int(i) for i in idx)
        peaks.append((idx, tuple(omegas[d][i] for d, i in enumerate(idx)), float(power[idx])))
    peaks.sort(key=lambda p: -p[2])
    return Periodogram(power, omegas, peaks)


# --------------------------------------------------------------------------
# association


@dataclass(frozen=True)
class Association:
    pairs: list[tuple[int, int]]
    missed: list[int]
    false_alarms: list[int]


def match_detections(truth: Sequence[GeoParams], detected: Sequence[GeoParams],
                     gates: dict[str, float]) -> Association:
    """Greedy nearest-neighbour association in gate-normalized distance.

    A pair is admissible only if every gated parameter differs by at most its
    gate; admissible pairs are taken in order of increasing distance.
    """
    if any(g <= 0 for g in gates.values()):
        raise EstimationError("gates must be positive")
    cands = []
    for i, t in enumerate(truth):
        for j, d in enumerate(detected):
            diffs = []
            for name, gate in gates.items():
                delta = t.get(name) - d.get(name)
                if name.endswith("_az"):
                    delta = wrap_angle(delta)
                diffs.append(abs(delta) / gate)
            if max(diffs, default=0.0) <= 1.0:
                cands.append((float(np.sqrt(np.sum(np.square(diffs)))), i, j))
    cands.sort()
    used_t, used_d, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_t or j in used_d:
            continue
        pairs.append((i, j))
        used_t.add(i)
        used_d.add(j)
    missed = [i for i in range(len(truth)) if i not in used_t]
    false = [j for j in range(len(detected)) if j not in used_d]
    return Association(sorted(pairs), missed, false)


def delay_to_range(delay: float) -> float:
    return SPEED_OF_LIGHT * delay
