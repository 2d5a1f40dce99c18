"""Data-generating process of the simulation study and the true-AHR oracle.

Ten latent correlated normals are cut into categorical subgrouping
variables; event times follow a Weibull accelerated failure time model;
follow-up is cut by uniform recruitment, exponential dropout and
administrative censoring at a target event count.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import SubgroupSchema, TrialDataset, Variable
from .errors import ConfigError, DataError, DegenerateSubgroupError
from .marginal import ahr_step
from .survival import kaplan_meier

MASTER_SEED = 20240321
ALPHA0 = 2.0
SIGMA = 0.85
N_SUBJECTS = 1000
N_EVENTS = 247
RECRUITMENT_YEARS = 3.0
DROPOUT_RATE = -np.log(0.98)
LEVEL_NAMES = "abcd"

PROPORTIONS = (
    (0.5, 0.5),
    (0.4, 0.6),
    (0.2, 0.8),
    (0.3, 0.3, 0.4),
    (0.15, 0.15, 0.3, 0.4),
    (0.4, 0.6),
    (0.4, 0.6),
    (0.2, 0.3, 0.5),
    (0.2, 0.8),
    (0.2, 0.3, 0.5),
)

SCENARIO_NAMES = {
    1: "positive (homogeneous)",
    2: "positive (except 1 subgroup)",
    3: "negative (except 1 subgroup)",
    4: "mild heterogeneity",
    5: "strong heterogeneity",
    6: "misspecified",
}


def simulation_schema(n_variables: int = 10) -> SubgroupSchema:
    return SubgroupSchema(tuple(
        Variable(f"x{j + 1}", tuple(LEVEL_NAMES[: len(PROPORTIONS[j])])) for j in range(n_variables)
    ))


def latent_correlation() -> np.ndarray:
    corr = np.eye(10)
    for a, b in ((5, 6), (5, 7), (6, 7)):
        corr[a, b] = corr[b, a] = 0.25
    corr[8, 9] = corr[9, 8] = 0.5
    return corr


def _k(schema: SubgroupSchema, var: int, level: str) -> int:
    return schema.labels.index(f"x{var}={level}")


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """Coefficients of the log event-time model for one scenario.

    ``prognostic`` and ``interactions`` are indexed by subgroup; ``triple`` is
    indexed by the level of x1 and x2 and multiplies treatment.
    """

    id: int
    beta0: float
    prognostic: np.ndarray
    interactions: np.ndarray
    triple: np.ndarray
    alpha0: float = ALPHA0
    sigma: float = SIGMA
    latent_corr: np.ndarray = field(default_factory=latent_correlation)
    proportions: tuple = PROPORTIONS
    heterogeneity_sd: float | None = None
    master_seed: int = MASTER_SEED
    schema: SubgroupSchema = field(default_factory=simulation_schema)

    @property
    def name(self) -> str:
        return SCENARIO_NAMES[self.id]

    def conditional_log_hr(self) -> np.ndarray:
        """Treatment log hazard ratio implied by each interaction coefficient alone."""
        return -(self.beta0 + self.interactions) / self.sigma

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "alpha0": self.alpha0,
            "sigma": self.sigma,
            "beta0": self.beta0,
            "prognostic": self.prognostic.tolist(),
            "interactions": self.interactions.tolist(),
            "triple": self.triple.tolist(),
            "heterogeneity_sd": self.heterogeneity_sd,
            "master_seed": self.master_seed,
        }


def scenario_coeffs(id: int, master_seed: int = MASTER_SEED,
                    literal_scenario45_formula: bool = False) -> ScenarioSpec:
    """Scenario parameters.

    Scenarios 4 and 5 draw one standard-normal vector from ``master_seed`` and
    scale it by 0.15 and 0.3 respectively; the draws are frozen across runs.
    Interactions are ``-sigma * gamma`` (``gamma`` a conditional log hazard
    ratio) unless ``literal_scenario45_formula`` selects ``-log(sigma) * gamma``.
    """
    if id not in SCENARIO_NAMES:
        raise ConfigError(f"unknown scenario {id}")
    schema = simulation_schema()
    K = schema.K
    s = SIGMA
    prognostic = np.zeros(K)
    prognostic[_k(schema, 4, "c")] = -np.log(0.7) * s
    prognostic[_k(schema, 6, "b")] = -np.log(1.5) * s
    inter = np.zeros(K)
    triple = np.zeros((2, 2))
    sd = None
    if id == 1:
        beta0 = -np.log(0.66) * s
    elif id == 2:
        beta0 = -np.log(0.66) * s
        inter[_k(schema, 4, "a")] = np.log(0.66) * s
        inter[_k(schema, 4, "b")] = -np.log(0.8) * s
        inter[_k(schema, 4, "c")] = -np.log(0.8) * s
    elif id == 3:
        beta0 = 0.0
        inter[_k(schema, 4, "a")] = -np.log(0.5) * s
        inter[_k(schema, 4, "b")] = -np.log(1.25) * s
        inter[_k(schema, 4, "c")] = -np.log(1.25) * s
    elif id in (4, 5):
        beta0 = 0.0
        sd = 0.15 if id == 4 else 0.3
        gamma = sd * np.random.default_rng(np.random.SeedSequence([master_seed, 45])).standard_normal(K)
        scale = -np.log(s) if literal_scenario45_formula else -s
        inter = scale * gamma
    else:
        beta0 = -np.log(0.66) * s
        triple[0, 0] = -np.log(1.5) * s
        triple[0, 1] = -np.log(0.92) * s
        triple[1, 0] = -np.log(0.5) * s
        triple[1, 1] = -np.log(1.07) * s
    return ScenarioSpec(id, float(beta0), prognostic, inter, triple, heterogeneity_sd=sd,
                        master_seed=master_seed, schema=schema)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gen_covariates(n: int, seed, corr=None, proportions=PROPORTIONS, return_latent: bool = False):
    """Categorize latent correlated normals into level indices (n, 10)."""
    if n < 1:
        raise ConfigError("n must be positive")
    rng = _rng(seed)
    corr = latent_correlation() if corr is None else corr
    chol = np.linalg.cholesky(corr)
    latent = rng.standard_normal((n, corr.shape[0])) @ chol.T
    cov = np.empty(latent.shape, dtype=np.int64)
    for j, props in enumerate(proportions):
        cuts = norm.ppf(np.cumsum(props)[:-1])
        cov[:, j] = np.searchsorted(cuts, latent[:, j])
    if return_latent:
        return cov, latent
    return cov


def alternating_treatment(n: int) -> np.ndarray:
    return (np.arange(n) % 2).astype(np.int8)


def gen_outcomes(covariates, spec: ScenarioSpec, treatment, seed) -> np.ndarray:
    """Uncensored Weibull AFT event times."""
    rng = _rng(seed)
    covariates = np.asarray(covariates)
    z = np.asarray(treatment, dtype=np.float64)
    idx = covariates + spec.schema.offsets[None, :]
    log_t = (
        spec.alpha0
        + spec.beta0 * z
        + spec.prognostic[idx].sum(axis=1)
        + z * spec.interactions[idx].sum(axis=1)
        + z * spec.triple[covariates[:, 0], covariates[:, 1]]
    )
    w = rng.exponential(1.0, size=z.size)
    return np.exp(log_t + spec.sigma * np.log(w))


@dataclass(frozen=True, eq=False)
class CensoredOutcome:
    time: np.ndarray
    event: np.ndarray
    included: np.ndarray
    cutoff: float
    recruitment: np.ndarray
    dropout: np.ndarray


def apply_censoring(event_times, n_target_events: int, seed, recruitment_years: float = RECRUITMENT_YEARS,
                    dropout_rate: float = DROPOUT_RATE) -> CensoredOutcome:
    """Uniform recruitment, exponential dropout, cutoff at the target event count.

    The calendar cutoff is the time of the ``n_target_events``-th observed event.
    Subjects recruited after the cutoff are excluded; the rest are followed
    until event, dropout or cutoff.
    """
    T = np.asarray(event_times, dtype=np.float64)
    n = T.size
    if n_target_events > n:
        raise ConfigError("target event count exceeds number of subjects")
    rng = _rng(seed)
    recruit = rng.uniform(0.0, recruitment_years, size=n)
    if dropout_rate > 0:
        dropout = rng.exponential(1.0 / dropout_rate, size=n)
    else:
        dropout = np.full(n, np.inf)
    observable = T <= dropout
    calendar = recruit + np.minimum(T, dropout)
    event_calendar = np.sort(calendar[observable])
    if event_calendar.size < n_target_events:
        raise DataError(
            f"only {event_calendar.size} events ever occur; {n_target_events} targeted"
        )
    cutoff = event_calendar[n_target_events - 1] if n_target_events > 0 else 0.0
    included = recruit <= cutoff
    event = observable & (calendar <= cutoff)
    time = np.where(event, T, np.minimum(dropout, cutoff - recruit))
    return CensoredOutcome(time, event.astype(np.int8), included, float(cutoff), recruit, dropout)


def simulate_trial(spec: ScenarioSpec, seed, n: int = N_SUBJECTS, n_events: int = N_EVENTS) -> TrialDataset:
    """One simulated trial restricted to its analysis set."""
    rng = _rng(seed)
    cov = gen_covariates(n, rng, spec.latent_corr, spec.proportions)
    z = alternating_treatment(n)
    T = gen_outcomes(cov, spec, z, rng)
    c = apply_censoring(T, n_events, rng)
    keep = c.included & (c.time > 0)
    return TrialDataset(c.time[keep], c.event[keep], z[keep], cov[keep], spec.schema)


def run_seed(master_seed: int, run_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(run_index)])


@dataclass(frozen=True, eq=False)
class TrueAhrTable:
    scenario: int
    labels: tuple[str, ...]
    log_ahr: np.ndarray
    overall_log_ahr: float
    n_large: int
    repetitions: int
    quantile: float
    seed: int

    @property
    def ahr(self) -> np.ndarray:
        return np.exp(self.log_ahr)

    @property
    def overall_ahr(self) -> float:
        return float(np.exp(self.overall_log_ahr))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "overall": {"ahr": self.overall_ahr, "log_ahr": self.overall_log_ahr},
            "subgroups": [
                {"subgroup": lab, "ahr": float(np.exp(v)), "log_ahr": float(v)}
                for lab, v in zip(self.labels, self.log_ahr)
            ],
            "oracle": {
                "n_large": self.n_large,
                "repetitions": self.repetitions,
                "integration_quantile": self.quantile,
                "seed": self.seed,
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrueAhrTable":
        subs = obj["subgroups"]
        o = obj["oracle"]
        return cls(
            int(obj["scenario"]), tuple(s["subgroup"] for s in subs),
            np.array([s["log_ahr"] for s in subs]), float(obj["overall"]["log_ahr"]),
            int(o["n_large"]), int(o["repetitions"]), float(o["integration_quantile"]), int(o["seed"]),
        )


def _km_ahr(time, event, arm, L) -> float:
    s_c = kaplan_meier(time[arm == 0], event[arm == 0])
    s_i = kaplan_meier(time[arm == 1], event[arm == 1])
    return float(np.log(ahr_step(s_c, s_i, L)))


def true_ahr_oracle(spec: ScenarioSpec, n_large: int = 200_000, repetitions: int = 3,
                    seed: int = MASTER_SEED, quantile: float = 0.95) -> TrueAhrTable:
    """Brute-force true AHRs from large simulated trials and Kaplan-Meier curves.

    The target event count scales with ``n_large`` in the ratio 247/1000 and the
    integration limit is the ``quantile`` of observed event times.  Log AHRs are
    averaged over repetitions.
    """
    if n_large < 10_000:
        raise ConfigError("n_large must be at least 10^4")
    n_target = int(round(n_large * N_EVENTS / N_SUBJECTS))
    K = spec.schema.K
    logs = np.empty((repetitions, K))
    overall = np.empty(repetitions)
    for r in range(repetitions):
        ds = simulate_trial(spec, np.random.SeedSequence([seed, spec.id, r]), n_large, n_target)
        L = float(np.quantile(ds.time[ds.event == 1], quantile))
        member = ds.membership()
        overall[r] = _km_ahr(ds.time, ds.event, ds.treatment, L)
        for k in range(K):
            m = member[:, k]
            if not (np.any(ds.event[m & (ds.treatment == 0)]) and np.any(ds.event[m & (ds.treatment == 1)])):
                raise DegenerateSubgroupError(f"subgroup {spec.schema.labels[k]} has an arm without events")
            logs[r, k] = _km_ahr(ds.time[m], ds.event[m], ds.treatment[m], L)
    return TrueAhrTable(
        spec.id, spec.schema.labels, logs.mean(axis=0), float(overall.mean()), n_large, repetitions,
        quantile, int(seed),
    )
