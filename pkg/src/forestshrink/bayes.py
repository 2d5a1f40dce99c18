"""Bayesian global Cox model with an M-spline baseline and a regularized
horseshoe prior on the treatment-by-subgroup interactions.

All parameters live on an unconstrained scale.  Scales enter through their
logarithms, the spline weights through a softmax, and every change of
variables contributes its log-Jacobian to the target.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import helmert
from scipy.special import expit, softmax

from . import kernels
from .data import TrialDataset
from .splines import MsplineBasis, build_mspline_basis


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters.  Normal priors are given by their standard deviations."""

    main_sd: float = 5.0
    treatment_sd: float = 5.0
    intercept_sd: float = 5.0
    local_df: float = 1.0
    global_df: float = 1.0
    global_scale: float = 1.0
    slab_df: float = 4.0
    slab_scale: float = 2.0
    dirichlet_concentration: float = 1.0

    @property
    def slab_shape(self) -> float:
        return self.slab_df / 2.0

    @property
    def slab_rate(self) -> float:
        return self.slab_df * self.slab_scale**2 / 2.0


@dataclass(frozen=True)
class Layout:
    """Positions of each parameter block inside the flat vector."""

    K: int
    M: int
    horseshoe: bool = True

    def _sizes(self):
        h = self.K if self.horseshoe else 0
        one = 1 if self.horseshoe else 0
        return [("beta0", 1), ("alpha", self.K), ("z", h), ("log_lambda", h), ("log_tau", one),
                ("log_c2", one), ("eta0", 1), ("nu", self.M)]

    @property
    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, size in self._sizes():
            out[name] = slice(start, start + size)
            start += size
        return out

    @property
    def dim(self) -> int:
        return sum(size for _, size in self._sizes())

    def names(self, labels=None) -> tuple[str, ...]:
        labels = labels or [str(k) for k in range(self.K)]
        out = []
        for name, size in self._sizes():
            if size == 1:
                out.append(name)
            elif name == "nu":
                out.extend(f"nu[{m}]" for m in range(size))
            else:
                out.extend(f"{name}[{lab}]" for lab in labels[:size])
        return tuple(out)


@dataclass(eq=False)
class HorseshoeCoxModel:
    """Log posterior of the spline-baseline Cox model.

    ``sub_idx`` holds each subject's global subgroup index per variable; the
    basis matrices are evaluated at each subject's observed time.
    """

    sub_idx: np.ndarray
    z: np.ndarray
    event: np.ndarray
    m_basis: np.ndarray
    i_basis: np.ndarray
    K: int
    basis: MsplineBasis | None = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    horseshoe: bool = True
    labels: tuple[str, ...] = ()
    n_levels: tuple[int, ...] = ()

    @classmethod
    def from_dataset(cls, dataset: TrialDataset, basis: MsplineBasis | None = None,
                     prior: PriorConfig | None = None, horseshoe: bool = True,
                     degree: int = 3) -> "HorseshoeCoxModel":
        basis = basis or build_mspline_basis(dataset, degree)
        return cls(
            np.ascontiguousarray(dataset.subgroup_index(), dtype=np.int64),
            dataset.treatment.astype(np.float64),
            dataset.event.astype(np.float64),
            np.ascontiguousarray(basis.mspline(dataset.time)),
            np.ascontiguousarray(basis.ispline(dataset.time)),
            dataset.schema.K,
            basis,
            prior or PriorConfig(),
            horseshoe,
            dataset.schema.labels,
            dataset.schema.n_levels,
        )

    @property
    def layout(self) -> Layout:
        return Layout(self.K, self.m_basis.shape[1], self.horseshoe)

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def names(self) -> tuple[str, ...]:
        return self.layout.names(list(self.labels) or None)

    def interaction_coefficients(self, theta) -> np.ndarray:
        """Reconstructed interaction coefficients; works row-wise on a draw matrix."""
        theta = np.asarray(theta, dtype=np.float64)
        if not self.horseshoe:
            return np.zeros(theta.shape[:-1] + (self.K,))
        sl = self.layout.slices
        zz = theta[..., sl["z"]]
        log_q = 2.0 * (theta[..., sl["log_tau"]] + theta[..., sl["log_lambda"]])
        log_c2 = theta[..., sl["log_c2"]]
        v = np.exp(log_c2) * expit(log_q - log_c2)
        return zz * np.sqrt(v)

    def unpack(self, theta) -> dict:
        theta = np.asarray(theta, dtype=np.float64)
        sl = self.layout.slices
        out = {name: theta[..., s] for name, s in sl.items()}
        out["beta0"] = theta[..., sl["beta0"]][..., 0]
        out["eta0"] = theta[..., sl["eta0"]][..., 0]
        out["beta"] = self.interaction_coefficients(theta)
        out["weights"] = softmax(theta[..., sl["nu"]], axis=-1)
        return out

    def initial_point(self, rng: np.random.Generator, spread: float = 0.5) -> np.ndarray:
        """Random start near the origin with the baseline scale set from Nelson-Aalen."""
        theta = rng.uniform(-spread, spread, size=self.dim)
        sl = self.layout.slices
        n_ev = self.event.sum()
        if self.event.size and n_ev > 0:
            # cumulative hazard at the last event is roughly events / mean risk-set size
            theta[sl["eta0"]] += np.log(n_ev / max(self.event.size, 1) * 2.0)
        if self.horseshoe:
            theta[sl["log_tau"]] += np.log(0.1)
        return theta

    @property
    def reparameterization(self) -> np.ndarray:
        """Linear map ``A`` from sampler coordinates ``phi`` to ``theta = A @ phi``.

        Main effects of each variable are expressed in an orthonormal basis
        whose first vector is the constant direction, and the ``eta0`` slot of
        ``phi`` holds the identified intercept ``eta0 + sum_j mean_j(alpha)``.
        Shifting all levels of a variable is unidentified by the likelihood,
        so in the original coordinates those directions form long ridges; here
        they become separate coordinates a diagonal mass matrix can scale.
        The map preserves volume (``|det A| = 1``) and leaves the normal
        main-effect prior unchanged.
        """
        cached = getattr(self, "_A", None)
        if cached is not None:
            return cached
        A = np.eye(self.dim)
        if self.n_levels:
            sl = self.layout.slices
            start = sl["alpha"].start
            e = sl["eta0"].start
            for lv in self.n_levels:
                Q = helmert(lv, full=True).T
                A[start:start + lv, start:start + lv] = Q
                A[e, start] = -1.0 / np.sqrt(lv)
                start += lv
        self._A = A
        return A

    def to_model(self, phi) -> np.ndarray:
        return np.asarray(phi) @ self.reparameterization.T

    def to_sampler(self, theta) -> np.ndarray:
        return np.linalg.solve(self.reparameterization, np.asarray(theta, dtype=np.float64))

    def sampler_log_posterior(self, phi) -> tuple[float, np.ndarray]:
        A = self.reparameterization
        val, grad = self.log_posterior(A @ phi)
        if not np.isfinite(val):
            return val, np.zeros_like(grad)
        return val, A.T @ grad

    @property
    def prior_vector(self) -> np.ndarray:
        pr = self.prior
        return np.array([pr.treatment_sd, pr.main_sd, pr.intercept_sd, pr.local_df, pr.global_df,
                         pr.global_scale, pr.slab_shape, pr.slab_rate, pr.dirichlet_concentration])

    def log_posterior(self, theta) -> tuple[float, np.ndarray]:
        """Log posterior (up to a constant) and its gradient.

        Terms: the full spline-baseline likelihood; normal priors on
        ``beta0``, ``alpha`` and ``eta0``; unit normals on the raw horseshoe
        coefficients; half-t densities of the local and global scales and an
        inverse-gamma slab variance, each with its log-Jacobian; a Dirichlet
        density of the spline weights plus the softmax Jacobian, and a unit
        normal on the redundant logit direction.  A non-finite value is
        returned as ``-inf`` (with a zero gradient) so a sampler can reject
        the proposal.
        """
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if getattr(self, "_prior_vec", None) is None:
            self._prior_vec = self.prior_vector
        return kernels.hs_log_posterior(
            theta, self.sub_idx, self.z, self.event, self.m_basis, self.i_basis, self.K,
            self.horseshoe, self._prior_vec,
        )

    def __call__(self, theta):
        return self.log_posterior(theta)

    def linear_predictor(self, theta, treatment) -> np.ndarray:
        """(n,) linear predictor without ``eta0`` with treatment forced to ``treatment``."""
        p = self.unpack(theta)
        z = np.broadcast_to(np.asarray(treatment, dtype=np.float64), (self.sub_idx.shape[0],))
        return p["beta0"] * z + p["alpha"][self.sub_idx].sum(axis=1) + z * p["beta"][self.sub_idx].sum(axis=1)


def log_posterior(theta, dataset: TrialDataset, basis: MsplineBasis | None = None,
                  prior: PriorConfig | None = None):
    """Convenience wrapper returning ``(value, gradient)``."""
    return HorseshoeCoxModel.from_dataset(dataset, basis, prior).log_posterior(theta)
