"""Compare the numba and pure-numpy kernel backends on simulation-sized inputs.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Each kernel is
called once to trigger compilation, then timed; outputs of the two backends
are checked against each other before timing (penalized fits through their
linear predictors).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from forestshrink.bayes import HorseshoeCoxModel
from forestshrink.cox import RiskSets
from forestshrink.data import build_design
from forestshrink.kernels import FROZEN, LASSO, UNPENALIZED, _numba, _numpy
from forestshrink.simulation import run_seed, scenario_coeffs, simulate_trial


def _inputs():
    ds = simulate_trial(scenario_coeffs(1), run_seed(20240321, 0)).canonical()
    design = build_design(ds)
    rs = RiskSets.build(ds.time, ds.event)
    Xs = np.ascontiguousarray(design.matrix[rs.order])
    q = Xs.shape[1]
    codes = np.full(q, UNPENALIZED, dtype=np.int64)
    codes[design.interaction_mask] = LASSO
    codes[design.reference_mask] = FROZEN
    frozen = codes.copy()
    frozen[design.interaction_mask] = FROZEN
    lambdas = np.geomspace(20.0, 0.02, 100)
    groups = design.null_groups
    model = HorseshoeCoxModel.from_dataset(ds)
    theta = model.initial_point(np.random.default_rng(0))
    n = ds.n
    member = np.zeros((model.K, n))
    member[model.sub_idx.T, np.arange(n)[None, :]] = 1.0
    grid = np.linspace(0, float(ds.time.max()), 1000)
    rng = np.random.default_rng(1)
    u = np.exp(0.3 * rng.standard_normal((2, n)))
    H0 = model.basis.ispline(grid) @ np.full(model.basis.M, 1.0 / model.basis.M)
    h0 = model.basis.mspline(grid) @ np.full(model.basis.M, 1.0 / model.basis.M)
    prior = model.prior_vector
    eta = Xs @ (0.05 * rng.standard_normal(q))
    return {
        "cox_derivatives": lambda m: m.cox_derivatives(Xs, eta, rs.event, rs.risk_start, rs.d, rs.n_le, True),
        # coefficients are compared through their linear predictors: along the
        # treatment/interaction null directions only a 1e-8 ridge pins them down
        "cd_path (100 lambdas)": lambda m: m.cd_path(Xs, rs.event, rs.risk_start, rs.d, rs.n_le, codes, lambdas,
                                                      np.zeros(q), 1e-8, 1e-7, 100_000, 1e-2, 1, groups)[0] @ Xs.T,
        "cd_path (frozen fit)": lambda m: m.cd_path(Xs, rs.event, rs.risk_start, rs.d, rs.n_le, frozen,
                                                     lambdas[:1], np.zeros(q), 1e-8, 1e-7, 100_000, 1e-2, 1,
                                                     groups)[0] @ Xs.T,
        "hs_log_posterior": lambda m: m.hs_log_posterior(theta, model.sub_idx, model.z, model.event, model.m_basis,
                                                          model.i_basis, model.K, True, prior),
        "standardize_grid": lambda m: m.standardize_grid(u, member, H0, h0),
    }


def _flatten(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=np.float64)) for o in out if o is not None])
    return np.ravel(np.asarray(out, dtype=np.float64))


def _time(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    cases = _inputs()
    print(f"{'kernel':<24}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max |diff|':>13}")
    for name, call in cases.items():
        a, b = _flatten(call(_numpy)), _flatten(call(_numba))
        diff = float(np.max(np.abs(a - b)))
        t_np = _time(lambda: call(_numpy), args.repeat)
        t_nb = _time(lambda: call(_numba), args.repeat)
        print(f"{name:<24}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}{diff:>13.2e}")


if __name__ == "__main__":
    main()
