"""Fisher information and Cramer-Rao bounds.

Channel-level information comes from the Slepian-Bangs form for circular
Gaussian noise, ``J = 2/N0 * sum Re{(dmu/dk)^H dmu/dk}``, and is mapped to
state space through the geometric Jacobian by the chain rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .channel import ArrayGeometry, GridConfig, los_gain, path_response, \
    path_response_derivatives
from .geometry import PARAM_NAMES, AnchorState, UEState, los_params, state_jacobian
from .signal import TxRxConfig, combine

#: Scaled condition number above which a FIM is treated as singular.
IDENTIFIABILITY_THRESHOLD = 1e12


class BoundsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FisherInfo:
    """Square FIM with labels; the first ``n_interest`` labels are of interest."""

    matrix: np.ndarray
    labels: tuple[str, ...]
    n_interest: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] != len(self.labels):
            raise BoundsError("matrix must be square and match the labels")
        if len(set(self.labels)) != len(self.labels):
            raise BoundsError("duplicate labels")
        if not 0 <= self.n_interest <= len(self.labels):
            raise BoundsError("n_interest out of range")
        # symmetry is checked after equilibration so mixed units don't matter
        d = np.sqrt(np.abs(np.diag(m)))
        d[d == 0] = 1.0
        mn = m / np.outer(d, d)
        if np.max(np.abs(mn - mn.T), initial=0.0) > 1e-8:
            raise BoundsError("FIM is not symmetric")
        m = 0.5 * (m + m.T)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def interest(self) -> tuple[str, ...]:
        return self.labels[: self.n_interest]

    @property
    def nuisance(self) -> tuple[str, ...]:
        return self.labels[self.n_interest:]

    def is_psd(self) -> bool:
        eig = np.linalg.eigvalsh(self.matrix)
        return bool(eig.min() >= -1e-8 * max(np.trace(self.matrix), 0.0))

    def reorder(self, interest: Sequence[str]) -> "FisherInfo":
        """Same information with ``interest`` moved to the front."""
        interest = list(interest)
        rest = [l for l in self.labels if l not in interest]
        order = [self.labels.index(l) for l in interest + rest]
        return FisherInfo(self.matrix[np.ix_(order, order)], tuple(interest + rest),
                          len(interest))

    def __add__(self, other: "FisherInfo") -> "FisherInfo":
        labels = list(self.labels) + [l for l in other.labels if l not in self.labels]
        out = np.zeros((len(labels), len(labels)))
        for fim in (self, other):
            idx = [labels.index(l) for l in fim.labels]
            out[np.ix_(idx, idx)] += fim.matrix
        return FisherInfo(out, tuple(labels), self.n_interest)

    def scaled(self, factor: float) -> "FisherInfo":
        return FisherInfo(self.matrix * factor, self.labels, self.n_interest)


@dataclass(frozen=True, eq=False)
class BoundReport:
    covariance: np.ndarray
    bound: float
    identifiable: bool
    condition_number: float
    labels: tuple[str, ...] = field(default=())

    def variance(self, label: str) -> float:
        i = self.labels.index(label)
        return float(self.covariance[i, i])


def slepian_bangs(derivatives: np.ndarray, noise_psd: float) -> np.ndarray:
    """FIM from stacked mean derivatives of shape (..., P)."""
    D = np.asarray(derivatives).reshape(-1, np.shape(derivatives)[-1])
    return 2.0 / noise_psd * np.real(D.conj().T @ D)


def fim_slepian_bangs(model: Callable[[np.ndarray], np.ndarray], kappa, noise_psd: float,
                      labels: Sequence[str] | None = None, n_interest: int | None = None,
                      jacobian: Callable[[np.ndarray], np.ndarray] | None = None,
                      rel_step: float = 1e-6, abs_step: float = 1e-9) -> FisherInfo:
    """FIM of the noiseless mean ``model(kappa)`` under CN(0, N0 I) noise.

    ``jacobian(kappa)`` may return analytic derivatives with the parameter
    index last; otherwise central differences with step
    ``max(rel_step * |kappa_i|, abs_step)`` are used.
    """
    kappa = np.asarray(kappa, dtype=float)
    if jacobian is not None:
        D = np.asarray(jacobian(kappa))
    else:
        mu0 = np.asarray(model(kappa))
        D = np.zeros(mu0.shape + (kappa.size,), dtype=complex)
        for i in range(kappa.size):
            h = max(rel_step * abs(kappa[i]), abs_step)
            e = np.zeros_like(kappa)
            e[i] = h
            D[..., i] = (np.asarray(model(kappa + e)) - np.asarray(model(kappa - e))) / (2 * h)
    if not np.all(np.isfinite(D)):
        raise BoundsError("non-finite model derivatives")
    labels = tuple(labels) if labels is not None else tuple(f"k{i}" for i in range(kappa.size))
    n_interest = len(labels) if n_interest is None else n_interest
    return FisherInfo(slepian_bangs(D, noise_psd), labels, n_interest)


def _equilibrated_inverse(J: np.ndarray, threshold: float):
    d = np.sqrt(np.diag(J))
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        return None, np.inf
    Jn = J / np.outer(d, d)
    cond = float(np.linalg.cond(Jn))
    if not np.isfinite(cond) or cond > threshold:
        return None, cond
    inv = np.linalg.inv(Jn) / np.outer(d, d)
    return 0.5 * (inv + inv.T), cond


def crb(fim: FisherInfo, threshold: float = IDENTIFIABILITY_THRESHOLD) -> BoundReport:
    """Interest block of the inverse FIM and its root trace.

    The condition number is that of the diagonally equilibrated FIM, so it
    does not depend on parameter units. Above ``threshold`` the problem is
    reported as non-identifiable and the bound is infinite.
    """
    inv, cond = _equilibrated_inverse(fim.matrix, threshold)
    d = fim.n_interest
    if inv is None:
        return BoundReport(np.full((d, d), np.nan), float("inf"), False, cond, fim.interest)
    cov = inv[:d, :d]
    return BoundReport(cov, float(np.sqrt(np.trace(cov))), True, cond, fim.interest)


def marginalize(fim: FisherInfo) -> FisherInfo:
    """Equivalent FIM of the interest block (Schur complement of nuisances)."""
    d = fim.n_interest
    J = fim.matrix
    A, B, C = J[:d, :d], J[:d, d:], J[d:, d:]
    if C.size == 0:
        return FisherInfo(A, fim.interest, d)
    return FisherInfo(A - B @ np.linalg.pinv(C) @ B.T, fim.interest, d)


def transform_fim(channel_fim: FisherInfo, jacobian: np.ndarray,
                  state_labels: Sequence[str]) -> FisherInfo:
    """Chain rule J_s = T^T J T with T = blockdiag(d eta / d s, I).

    Rows of ``jacobian`` follow ``channel_fim.interest``; nuisance entries
    pass through unchanged.
    """
    jac = np.atleast_2d(np.asarray(jacobian, dtype=float))
    d = channel_fim.n_interest
    if jac.shape != (d, len(state_labels)):
        raise BoundsError(f"jacobian shape {jac.shape} does not match "
                          f"({d}, {len(state_labels)})")
    nn = len(channel_fim.labels) - d
    T = np.zeros((d + nn, len(state_labels) + nn))
    T[:d, : len(state_labels)] = jac
    T[d:, len(state_labels):] = np.eye(nn)
    J = T.T @ channel_fim.matrix @ T
    J = 0.5 * (J + J.T)  # symmetric by construction; drop rounding asymmetry
    return FisherInfo(J, tuple(state_labels) + channel_fim.nuisance, len(state_labels))


# --------------------------------------------------------------------------
# end-to-end localization bounds


@dataclass(frozen=True, eq=False)
class Scene:
    """Downlink/uplink localization scenario with one LoS path per anchor."""

    anchors: Sequence[AnchorState]
    ue: UEState
    link: str = "downlink"
    anchor_array: ArrayGeometry = field(default_factory=ArrayGeometry.single)
    ue_array: ArrayGeometry = field(default_factory=ArrayGeometry.single)
    estimate: tuple[str, ...] = ("x", "y", "z", "B")
    gains: dict | None = None

    def arrays(self):
        """(rx_array, tx_array) for the link direction."""
        if self.link == "downlink":
            return self.ue_array, self.anchor_array
        return self.anchor_array, self.ue_array

    def gain(self, anchor: AnchorState, carrier: float) -> complex:
        if self.gains is not None and anchor.id in self.gains:
            return complex(self.gains[anchor.id])
        dist = float(np.linalg.norm(anchor.position - self.ue.position))
        return complex(np.sqrt(los_gain(dist, carrier)))


def anchor_channel_fim(scene: Scene, anchor: AnchorState, grid: GridConfig,
                       txrx: TxRxConfig) -> FisherInfo:
    """FIM over [geometric params, Re alpha, Im alpha] of one anchor's LoS path."""
    rx, tx = scene.arrays()
    geo = los_params(anchor, scene.ue, scene.link, grid.carrier)
    alpha = scene.gain(anchor, grid.carrier)
    derivs = path_response_derivatives(geo, grid, rx, tx)
    atom = path_response(geo, grid, rx, tx)
    cols = [combine(alpha * derivs[name], txrx) for name in PARAM_NAMES]
    base = combine(atom, txrx)
    cols += [base, 1j * base]
    D = np.stack(cols, axis=-1)
    labels = tuple(PARAM_NAMES) + (f"re_alpha[{anchor.id}]", f"im_alpha[{anchor.id}]")
    labels = tuple(f"{l}[{anchor.id}]" if i < len(PARAM_NAMES) else l
                   for i, l in enumerate(labels))
    return FisherInfo(slepian_bangs(D, txrx.noise_psd), labels, len(PARAM_NAMES))


def state_fim(scene: Scene, grid: GridConfig, txrx: TxRxConfig) -> FisherInfo:
    """State-space FIM summed over anchors; interest = ``scene.estimate``."""
    total = None
    for anchor in scene.anchors:
        cfim = anchor_channel_fim(scene, anchor, grid, txrx)
        jac = state_jacobian("los", scene.ue, grid.carrier, anchor=anchor, link=scene.link)
        T = jac.select(cols=list(scene.estimate))
        sfim = transform_fim(cfim, T, scene.estimate)
        total = sfim if total is None else total + sfim
    if total is None:
        raise BoundsError("scene has no anchors")
    return total


@dataclass(frozen=True, eq=False)
class StateBounds:
    peb: float
    oeb: float | None
    veb: float | None
    identifiable: bool
    condition_number: float
    covariance: np.ndarray
    labels: tuple[str, ...]
    clock_bias_bound: float | None = None


def _block_bound(cov, labels, names):
    idx = [labels.index(n) for n in names if n in labels]
    if not idx:
        return None
    return float(np.sqrt(np.trace(cov[np.ix_(idx, idx)])))


def peb_oeb_veb(scene: Scene, grid: GridConfig, txrx: TxRxConfig,
                threshold: float = IDENTIFIABILITY_THRESHOLD) -> StateBounds:
    """Position, orientation and velocity error bounds of ``scene``.

    Components not listed in ``scene.estimate`` are treated as known; the
    OEB and VEB are ``None`` when orientation or velocity are not estimated.
    """
    fim = state_fim(scene, grid, txrx)
    inv, cond = _equilibrated_inverse(fim.matrix, threshold)
    d = fim.n_interest
    labels = fim.interest
    if inv is None:
        nan = np.full((d, d), np.nan)
        inf = float("inf")
        has = lambda names: inf if any(n in labels for n in names) else None  # noqa: E731
        return StateBounds(inf, has(("o1", "o2", "o3")), has(("vx", "vy", "vz")), False,
                           cond, nan, labels, has(("B",)))
    cov = inv[:d, :d]
    return StateBounds(
        peb=_block_bound(cov, labels, ("x", "y", "z")),
        oeb=_block_bound(cov, labels, ("o1", "o2", "o3")),
        veb=_block_bound(cov, labels, ("vx", "vy", "vz")),
        identifiable=True,
        condition_number=cond,
        covariance=cov,
        labels=labels,
        clock_bias_bound=_block_bound(cov, labels, ("B",)),
    )
