"""The numbered experiments: convergence, stability, weak residual, bridge, adjoint.

Each experiment consumes a resolved configuration dictionary, runs at desk
scale, and returns a report carrying result tables, chart specs, named checks,
and the derived constants that went into its bounds.  The CLI persists those;
tests assert the checks directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import reference
from .adjoint import (
    AdjointProblem,
    FlowRecorder,
    duality_check,
    grad_fk,
    gradient_bound_cert,
    solve_fk,
)
from .config import build_fpe_config, build_fpe_grid, build_initial, build_integrator, build_model
from .errors import ConfigError
from .fpe import DensityField, default_grid, fpe_run, gaussian_density
from .measures import (
    EmpiricalMeasure,
    LyapunovObserver,
    ObservableObserver,
    check_observable_equicontinuity,
    equicontinuity_constant,
    w1_marginal_1d,
    w1_sliced,
)
from .models import generator_apply_batch, validate_assumptions
from .noise import NoiseDriver, child_seed, stream
from .particles import (
    Ensemble,
    IntegratorConfig,
    couple,
    init_ensemble,
    mean_field_force,
    run,
    run_pair,
)
from .testfunctions import BumpFunction, default_family

Array = np.ndarray


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Report:
    """Common result container: tables for CSV, charts for SVG, named checks."""

    name: str
    tables: dict = field(default_factory=dict)  # filename -> (header, rows)
    charts: dict = field(default_factory=dict)  # filename -> chart kwargs
    checks: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, passed: bool, detail: str = ""):
        self.checks.append(Check(name, bool(passed), detail))


def _constants_dict(assumptions) -> dict:
    return {
        "l_sigma": assumptions.l_sigma,
        "l_kernel": assumptions.l_kernel,
        "l_psi": assumptions.l_psi,
        "theta": assumptions.theta,
        "alpha": assumptions.alpha,
        "alpha_tilde": assumptions.alpha_tilde,
        "varpi": assumptions.varpi,
        "lambda1": assumptions.lambda1,
        "lambda2": assumptions.lambda2,
        "moment_cap": assumptions.moment_cap,
    }


def _init_mean_std(cfg: dict, m: int):
    ex = cfg["experiment"]
    mean = np.array([ex["init_mean_u"]] * m + [ex["init_mean_v"]] * m)
    std = np.array([ex["init_std_u"]] * m + [ex["init_std_v"]] * m)
    return mean, std


def _dividing_cadence(n_steps: int, target_count: int) -> int:
    """The divisor of n_steps whose snapshot count is closest to the target,
    so the final step always lands on a snapshot."""
    best, best_gap = n_steps, float("inf")
    for snap in range(1, n_steps + 1):
        if n_steps % snap:
            continue
        gap = abs(n_steps / snap - target_count)
        if gap < best_gap:
            best, best_gap = snap, gap
    return best


# ---------------------------------------------------------------------------
# mean-field convergence sweep
# ---------------------------------------------------------------------------


def exp_meanfield_convergence(cfg: dict) -> Report:
    """E[W1(empirical, reference law)] over an N sweep at a fixed time.

    The reference is the analytic Gaussian law for the linear model (default)
    or an oversized independent particle run; its own sampling error is
    estimated by a split-half comparison and reported alongside.  A single W1
    method is used for every row of the table.
    """
    ex = cfg["experiment"]
    model = build_model(cfg)
    icfg = build_integrator(cfg)
    assumptions = validate_assumptions(
        model, seed=cfg["seed"], moment_cap=cfg["model"]["moment_cap"]
    )
    m = model.m
    t = ex["t_final"]
    sweep = sorted(ex["n_sweep"])
    reps = ex["repetitions"]
    n_proj = ex["n_projections"]
    n_ref = ex["n_reference"]
    seed = cfg["seed"]
    mean0, std0 = _init_mean_std(cfg, m)
    dist = build_initial(cfg, m)

    if ex["reference"] == "analytic":
        ref_sample = reference.sample_law(
            model, mean0, std0**2, t, n_ref, child_seed(seed, "reference")
        )
    elif ex["reference"] == "large-n":
        if n_ref < 4 * sweep[-1]:
            raise ConfigError("large-n reference needs n_reference >= 4x the largest N")
        ens = init_ensemble(dist, n_ref, m, child_seed(seed, "reference"))
        ens, _ = run(ens, model, icfg, t, snapshot_every=0)
        ref_sample = ens.points
    else:
        raise ConfigError(f"unknown reference '{ex['reference']}'")
    ref = EmpiricalMeasure(ref_sample)

    half = n_ref // 2
    ref_err = w1_sliced(
        EmpiricalMeasure(ref_sample[:half]),
        EmpiricalMeasure(ref_sample[half:]),
        n_projections=n_proj,
        seed=child_seed(seed, "reference-split"),
        n_bootstrap=0,
    ).value

    report = Report("convergence", constants=_constants_dict(assumptions))
    rows = []
    means = []
    flags = 0
    for n in sweep:
        vals = []
        for rep in range(reps):
            cseed = child_seed(seed, "cell", n, rep)
            ens = init_ensemble(dist, n, m, cseed)
            lyap = LyapunovObserver(assumptions)
            ens, _ = run(ens, model, icfg, t, snapshot_every=0, observers=(lyap,))
            flags += len(lyap.flags)
            rep_w1 = w1_sliced(
                EmpiricalMeasure(ens.points),
                ref,
                n_projections=n_proj,
                seed=child_seed(seed, "w1", n, rep),
                n_bootstrap=0,
            )
            vals.append(rep_w1.value)
        vals = np.asarray(vals)
        stderr = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
        rows.append([n, reps, float(vals.mean()), stderr, "sliced"])
        means.append(float(vals.mean()))

    report.tables["convergence.csv"] = (
        ["N", "repetitions", "mean_w1", "stderr", "method"],
        rows,
    )
    report.charts["convergence.svg"] = {
        "series": {"mean W1": (sweep, means), "reference split-half": (sweep, [ref_err] * len(sweep))},
        "xlabel": "N",
        "ylabel": "W1 (sliced lower bound)",
        "title": "mean-field convergence",
        "logx": True,
        "logy": True,
    }
    report.values["means"] = means
    report.values["ref_split_half"] = ref_err
    decreasing = all(means[i + 1] < means[i] for i in range(len(means) - 1))
    report.check(
        "w1-strictly-decreasing",
        decreasing,
        " > ".join(f"{v:.5f}" for v in means),
    )
    report.check(
        "largest-n-within-2x-reference-error",
        means[-1] <= 2.0 * ref_err,
        f"W1({sweep[-1]}) = {means[-1]:.5f} vs 2x split-half {2 * ref_err:.5f}",
    )
    report.check("lyapunov-flags", flags == 0, f"{flags} flagged steps")
    return report


# ---------------------------------------------------------------------------
# stability under synchronous coupling
# ---------------------------------------------------------------------------


def exp_stability(cfg: dict) -> Report:
    """W1 contraction ratio of coupled ensembles against the Gronwall bound."""
    ex = cfg["experiment"]
    model = build_model(cfg)
    icfg = build_integrator(cfg)
    assumptions = validate_assumptions(
        model, seed=cfg["seed"], moment_cap=cfg["model"]["moment_cap"]
    )
    m = model.m
    n = ex["n_particles"]
    t_final = ex["t_final"]
    seed = cfg["seed"]
    shift = ex["init_shift"]
    if shift == 0.0:
        raise ConfigError("stability needs a nonzero initial offset (init_shift)")
    rate = assumptions.stability_rate()

    dist = build_initial(cfg, m)
    ens_a = init_ensemble(dist, n, m, child_seed(seed, "stability-a"))
    shift_vec = np.zeros(2 * m)
    shift_vec[0] = shift
    ens_b = replace(ens_a, points=ens_a.points + shift_vec)
    pair = couple(ens_a, ens_b)
    delta0 = w1_sliced(
        EmpiricalMeasure(pair.a.points),
        EmpiricalMeasure(pair.b.points),
        n_projections=ex["n_projections"],
        seed=child_seed(seed, "stability-w1", 0),
        n_bootstrap=0,
    ).value
    snap = _dividing_cadence(round(t_final / icfg.dt), 20)
    pair, ta, tb = run_pair(pair, model, icfg, t_final, snapshot_every=snap)

    rows = []
    ratios, bounds = [], []
    worst_margin = -np.inf
    for i, (t_s, pa, pb) in enumerate(zip(ta.times, ta.snapshots, tb.snapshots)):
        w1 = w1_sliced(
            EmpiricalMeasure(pa),
            EmpiricalMeasure(pb),
            n_projections=ex["n_projections"],
            seed=child_seed(seed, "stability-w1", i),
            n_bootstrap=0,
        ).value
        r = w1 / delta0
        bound = math.exp(rate * t_s)
        rows.append([t_s, w1, r, bound])
        ratios.append(r)
        bounds.append(bound)
        worst_margin = max(worst_margin, r - 1.1 * bound)

    report = Report("stability", constants=_constants_dict(assumptions))
    report.constants["stability_rate"] = rate
    report.tables["stability.csv"] = (["t", "w1", "ratio", "exp_bound"], rows)
    report.charts["stability.svg"] = {
        "series": {"ratio": (ta.times, ratios), "1.1 exp(Ct)": (ta.times, [1.1 * b for b in bounds])},
        "xlabel": "t",
        "ylabel": "W1 ratio",
        "title": "coupled stability",
        "logy": True,
    }
    report.values["ratios"] = ratios
    report.values["delta0"] = delta0
    report.check(
        "ratio-within-gronwall-bound",
        worst_margin <= 0.0,
        f"max(r - 1.1 e^(Ct)) = {worst_margin:.3e}, C = {rate:.3f}",
    )
    from .measures import lyapunov_track

    for label, traj in (("a", ta), ("b", tb)):
        mon = lyapunov_track(traj.times, traj.snapshots, assumptions)
        report.check(
            f"lyapunov-flags-{label}", mon.ok, f"{len(mon.flags)} flagged snapshots"
        )

    # identical initial data under coupling stay bitwise equal
    ens_c = init_ensemble(dist, min(n, 256), m, child_seed(seed, "stability-c"))
    pair_id = couple(ens_c, replace(ens_c, points=ens_c.points.copy()))
    steps_id = min(50, round(t_final / icfg.dt))
    pair_id, _, _ = run_pair(pair_id, model, icfg, steps_id * icfg.dt, snapshot_every=0)
    identical = bool(np.array_equal(pair_id.a.points, pair_id.b.points))
    report.check("identical-coupling-bitwise-zero", identical)
    return report


# ---------------------------------------------------------------------------
# weak-form residual
# ---------------------------------------------------------------------------


class _ResidualObserver:
    """Per-step <phi> and <L phi> for a family of test functions."""

    def __init__(self, family, model, icfg):
        self.family = family
        self.model = model
        self.icfg = icfg
        self.times = []
        self.phi_means = [[] for _ in family]
        self.gen_means = [[] for _ in family]

    def __call__(self, ens):
        self.times.append(ens.time)
        forces = mean_field_force(
            ens.u_view(), self.model, tile=self.icfg.force_tile, workers=self.icfg.workers
        )
        for j, phi in enumerate(self.family):
            self.phi_means[j].append(float(phi.value(ens.points).mean()))
            self.gen_means[j].append(
                float(generator_apply_batch(phi, ens.points, self.model, forces).mean())
            )

    def max_residual(self, j: int) -> float:
        times = np.asarray(self.times)
        phim = np.asarray(self.phi_means[j])
        genm = np.asarray(self.gen_means[j])
        # cumulative trapezoid of the generator term
        steps = np.diff(times)
        integ = np.concatenate([[0.0], np.cumsum(0.5 * (genm[1:] + genm[:-1]) * steps)])
        resid = phim - phim[0] - integ
        return float(np.max(np.abs(resid)))


def exp_weak_residual(cfg: dict) -> Report:
    """max_t |R(phi, t)| under joint (N x4, dt x1/2) refinement.

    Both residual components halve per level (martingale ~ N^{-1/2}, weak
    error ~ dt), so the level-l residual should track maxR_0 / 2^l; the check
    allows a factor 1.5.
    """
    ex = cfg["experiment"]
    model = build_model(cfg)
    seed = cfg["seed"]
    t_final = ex["t_final"]
    base_n = ex["n_particles"]
    base_dt = cfg["integrator"]["dt"]
    n_levels = 3
    reps = min(ex["repetitions"], 4)
    m = model.m
    dist = build_initial(cfg, m)
    family = default_family(m, m_active=1, scale=2.0)

    maxr = np.zeros((n_levels, len(family)))
    for lv in range(n_levels):
        n = base_n * 4**lv
        dt = base_dt / 2**lv
        icfg = IntegratorConfig(
            dt=dt,
            scheme=cfg["integrator"]["scheme"],
            force_tile=cfg["integrator"]["force_tile"],
            workers=ex["workers"],
        )
        acc = np.zeros(len(family))
        for rep in range(reps):
            ens = init_ensemble(dist, n, m, child_seed(seed, "residual", lv, rep))
            obs = _ResidualObserver(family, model, icfg)
            run(ens, model, icfg, t_final, snapshot_every=0, observers=(obs,))
            acc += np.array([obs.max_residual(j) for j in range(len(family))])
        maxr[lv] = acc / reps

    report = Report("weak-residual")
    rows = []
    for lv in range(n_levels):
        for j in range(len(family)):
            rows.append(
                [lv, base_n * 4**lv, base_dt / 2**lv, j, maxr[lv, j], maxr[0, j] / 2**lv]
            )
    report.tables["weak_residual.csv"] = (
        ["level", "N", "dt", "phi", "max_residual", "budget_scale"],
        rows,
    )
    report.charts["weak_residual.svg"] = {
        "series": {
            f"phi{j}": (list(range(n_levels)), list(maxr[:, j])) for j in range(len(family))
        },
        "xlabel": "refinement level",
        "ylabel": "max |R|",
        "title": "weak-form residual refinement",
        "logy": True,
    }
    report.values["max_residuals"] = maxr.tolist()
    for j in range(len(family)):
        decreasing = maxr[1, j] < maxr[0, j] and maxr[2, j] < maxr[1, j]
        report.check(
            f"residual-decreasing-phi{j}",
            decreasing,
            " > ".join(f"{maxr[lv, j]:.3e}" for lv in range(n_levels)),
        )
        within = all(
            maxr[lv, j] <= 1.5 * maxr[0, j] / 2**lv for lv in range(1, n_levels)
        )
        report.check(
            f"residual-budget-phi{j}",
            within,
            f"levels {', '.join(f'{maxr[lv, j]:.3e}' for lv in range(n_levels))} "
            f"vs 1.5x halving from {maxr[0, j]:.3e}",
        )
    return report


# ---------------------------------------------------------------------------
# Galerkin bridge: grid solver vs particles
# ---------------------------------------------------------------------------


def _sample_from_density(rho: DensityField, grid, n: int, seed: int) -> Array:
    """Sample phase points from the cell masses with in-cell uniform jitter."""
    g = stream(seed, "density-sample", n)
    flat = rho.values.ravel()
    idx = g.choice(flat.size, size=n, p=flat / flat.sum())
    iu, iv = np.unravel_index(idx, rho.values.shape)
    u = grid.centers_u()[iu] + (g.random(n) - 0.5) * grid.h_u
    v = grid.centers_v()[iv] + (g.random(n) - 0.5) * grid.h_v
    return np.stack([u, v], axis=1)


def _marginal_fluctuation(
    marg_vals: Array, marg_w: Array, n: int, seed: int, n_boot: int = 8
) -> float:
    """Bootstrap sampling-fluctuation scale: expected 1-d W1 between an
    n-sample of the histogram and the histogram itself."""
    g = stream(seed, "marginal-bootstrap", n)
    acc = 0.0
    for _ in range(n_boot):
        draw = g.choice(marg_vals.size, size=n, p=marg_w / marg_w.sum())
        xs = marg_vals[draw]
        acc += w1_marginal_1d((xs, np.full(n, 1.0 / n)), (marg_vals, marg_w))
    return acc / n_boot


def exp_galerkin_bridge(cfg: dict) -> Report:
    """Single-mode grid solution vs an 8192-particle run from matched data."""
    ex = cfg["experiment"]
    model = build_model(cfg)
    if model.m != 1:
        raise ConfigError("the bridge experiment needs modes = 1")
    icfg = build_integrator(cfg)
    fcfg = build_fpe_config(cfg)
    seed = cfg["seed"]
    t_final = ex["t_final"]
    n = ex["n_particles"]
    assumptions = validate_assumptions(
        model, seed=seed, moment_cap=cfg["model"]["moment_cap"]
    )

    grid = build_fpe_grid(cfg, model)
    mean0 = (ex["init_mean_u"], ex["init_mean_v"])
    var0 = (ex["init_std_u"] ** 2, ex["init_std_v"] ** 2)
    rho0 = gaussian_density(grid, mean0, var0)

    # matched initial data: particles drawn from the grid density itself
    pts0 = _sample_from_density(rho0, grid, n, child_seed(seed, "bridge-init"))
    h_scale = grid.h_u

    report = Report("bridge", constants=_constants_dict(assumptions))
    d0u = w1_marginal_1d(
        (pts0[:, 0], np.full(n, 1.0 / n)), rho0.marginal_u(grid)
    )
    fluct0 = _marginal_fluctuation(
        grid.centers_u(), rho0.values.sum(axis=1), n, child_seed(seed, "bridge-f0")
    )
    report.check(
        "t0-marginal-at-sampling-level",
        d0u <= 3.0 * fluct0 + h_scale,
        f"{d0u:.5f} vs 3x{fluct0:.5f} + h {h_scale:.5f}",
    )

    fres = fpe_run(rho0, model, grid, fcfg, t_final, snapshot_every=0)
    rho_t = fres.final
    mass_err = max(abs(m_ - 1.0) for m_ in fres.diagnostics.mass)
    report.check("fpe-mass-conserved", mass_err <= 1e-12, f"max |mass - 1| = {mass_err:.2e}")

    ens = Ensemble(
        points=pts0,
        time=0.0,
        step_index=0,
        noise=NoiseDriver(child_seed(seed, "bridge-run"), n, 1),
    )
    lyap = LyapunovObserver(assumptions)
    ens, _ = run(ens, model, icfg, t_final, snapshot_every=0, observers=(lyap,))
    report.check("lyapunov-flags", len(lyap.flags) == 0, f"{len(lyap.flags)} flagged steps")

    rows = []
    for label, col, marg in (
        ("u", 0, rho_t.marginal_u(grid)),
        ("v", 1, rho_t.marginal_v(grid)),
    ):
        dist = w1_marginal_1d((ens.points[:, col], np.full(n, 1.0 / n)), marg)
        fluct = _marginal_fluctuation(
            marg[0], marg[1], n, child_seed(seed, "bridge-fluct", col)
        )
        h = grid.h_u if label == "u" else grid.h_v
        budget = 3.0 * fluct + h
        rows.append([t_final, label, dist, fluct, h, budget])
        report.check(
            f"{label}-marginal-within-budget",
            dist <= budget,
            f"{dist:.5f} vs {budget:.5f}",
        )
    report.tables["bridge.csv"] = (
        ["t", "marginal", "w1", "sampling_fluctuation", "h", "budget"],
        rows,
    )

    # stationary self-consistency of the grid solver
    pu, pv = reference.stationary_moments(model)
    grid_s = default_grid(model, mean=(0.0, 0.0), std=(math.sqrt(pu[0]), math.sqrt(pv[0])),
                          n_u=grid.n_u, n_v=grid.n_v)
    rho_s0 = gaussian_density(grid_s, (0.0, 0.0), (float(pu[0]), float(pv[0])))
    fres_s = fpe_run(rho_s0, model, grid_s, fcfg, 1.0, snapshot_every=0)
    drift_l1 = float(np.abs(fres_s.final.values - rho_s0.values).sum())
    report.check(
        "fpe-stationary-self-consistency",
        drift_l1 <= 0.02,
        f"L1 drift over T=1: {drift_l1:.5f}",
    )
    mass_err_s = max(abs(m_ - 1.0) for m_ in fres_s.diagnostics.mass)
    report.check(
        "fpe-stationary-mass-conserved", mass_err_s <= 1e-12, f"{mass_err_s:.2e}"
    )
    report.values["marginal_rows"] = rows
    report.values["stationary_l1"] = drift_l1
    return report


# ---------------------------------------------------------------------------
# adjoint suite
# ---------------------------------------------------------------------------


def exp_adjoint(cfg: dict) -> Report:
    """Feynman-Kac probes, gradient-bound certificate, and the duality trace."""
    ex = cfg["experiment"]
    model = build_model(cfg)
    icfg = build_integrator(cfg)
    seed = cfg["seed"]
    m = model.m
    n = ex["n_particles"]
    t_adj = ex["adjoint_t"]
    n_samples = ex["n_samples"]
    assumptions = validate_assumptions(
        model, seed=seed, moment_cap=cfg["model"]["moment_cap"]
    )

    dist = build_initial(cfg, m)
    ens = init_ensemble(dist, n, m, child_seed(seed, "adjoint-forward"))
    recorder = FlowRecorder(model, icfg.dt, seed=child_seed(seed, "adjoint-flow"))
    snap = _dividing_cadence(round(t_adj / icfg.dt), 6)
    ens, traj = run(ens, model, icfg, t_adj, snapshot_every=snap, observers=(recorder,))
    flow = recorder.flow()

    mean0, std0 = _init_mean_std(cfg, m)
    radius = float(4.0 * np.max(std0) + np.max(np.abs(mean0)) + 1.0)
    center = np.zeros(2)
    center[0] = mean0[0]
    psi = BumpFunction(
        m, 1, center, radius=radius, coord_factor=0
    ).normalized_to_unit_gradient()
    prob = AdjointProblem(terminal_time=t_adj, psi=psi, flow=flow)

    cert = gradient_bound_cert(assumptions, psi)
    sup_psi = psi.sup_abs_value()

    g = stream(seed, "adjoint-probes", ex["n_probes"])
    probes = mean0 + std0 * g.standard_normal((ex["n_probes"], 2 * m))
    s_grid = [traj.times[i] for i in range(0, len(traj.times), max(1, len(traj.times) // 4))]

    report = Report("adjoint", constants=_constants_dict(assumptions))
    report.constants.update(
        {"kappa": cert.kappa, "c_tilde": cert.c_tilde, "sup_psi": sup_psi}
    )

    rows = []
    max_principle_ok = True
    grad_ok = True
    for i, z in enumerate(probes):
        s = s_grid[i % len(s_grid)]
        est = solve_fk(prob, s, z, n_samples, child_seed(seed, "fk", i), model)
        okp = abs(est.mean) <= sup_psi + 3.0 * est.stderr + 1e-12
        gvec, gse = grad_fk(prob, s, z, n_samples, child_seed(seed, "fk-grad", i), model)
        gnorm = float(np.linalg.norm(gvec))
        gerr = float(np.linalg.norm(gse))
        okg = gnorm <= cert.c_tilde + 3.0 * gerr + 1e-12
        max_principle_ok &= okp
        grad_ok &= okg
        rows.append([i, s, est.mean, est.stderr, gnorm, gerr, int(okp), int(okg)])
    report.tables["adjoint_probes.csv"] = (
        ["probe", "s", "f_mean", "f_stderr", "grad_norm", "grad_stderr", "max_principle", "grad_bound"],
        rows,
    )
    report.check("maximum-principle", max_principle_ok, f"sup|psi| = {sup_psi:.4f}")
    report.check("gradient-bound", grad_ok, f"C_tilde = {cert.c_tilde:.4f}")

    dual = duality_check(
        prob, traj, n_samples, child_seed(seed, "duality"), model, c_tilde=cert.c_tilde
    )
    report.tables["duality.csv"] = (
        ["s", "I_s", "stderr", "deviation", "budget"],
        [
            [s, i_s, se, dv, bd]
            for s, i_s, se, dv, bd in zip(
                dual.s_values, dual.trace, dual.stderr, dual.deviations, dual.budget
            )
        ],
    )
    report.charts["duality.svg"] = {
        "series": {
            "deviation": (list(dual.s_values), list(dual.deviations)),
            "budget": (list(dual.s_values), list(dual.budget)),
        },
        "xlabel": "s",
        "ylabel": "|I(s) - I(t)|",
        "title": "duality trace",
    }
    report.check(
        "duality-within-budget",
        dual.ok,
        f"max dev {dual.max_deviation:.4e} vs budget {dual.max_budget:.4e}",
    )
    report.values["duality_max_deviation"] = dual.max_deviation
    return report


# ---------------------------------------------------------------------------
# plain runs and validation
# ---------------------------------------------------------------------------


def run_particles_experiment(cfg: dict) -> tuple[Report, object]:
    """A plain particle run with monitors; returns the report and trajectory."""
    ex = cfg["experiment"]
    model = build_model(cfg)
    icfg = build_integrator(cfg)
    assumptions = validate_assumptions(
        model, seed=cfg["seed"], moment_cap=cfg["model"]["moment_cap"]
    )
    m = model.m
    dist = build_initial(cfg, m)
    ens = init_ensemble(dist, ex["n_particles"], m, cfg["seed"])
    lyap = LyapunovObserver(assumptions)
    family = default_family(m, m_active=1, scale=2.0)
    obs = [ObservableObserver(phi, every=max(1, ex["snapshot_every"])) for phi in family]
    ens, traj = run(
        ens,
        model,
        icfg,
        ex["t_final"],
        snapshot_every=ex["snapshot_every"],
        observers=(lyap, *obs),
    )
    report = Report("particles", constants=_constants_dict(assumptions))
    report.check("lyapunov-flags", len(lyap.flags) == 0, f"{len(lyap.flags)} flagged steps")
    v_max = float(np.max(lyap.v_mean))
    equi_ok = True
    worst = -np.inf
    for phi, ob in zip(family, obs):
        c_phi = equicontinuity_constant(assumptions, model, phi, v_max)
        margin, ok = check_observable_equicontinuity(ob.times, ob.means, ob.stderrs, c_phi)
        equi_ok &= ok
        worst = max(worst, margin)
    report.check("observable-equicontinuity", equi_ok, f"worst margin {worst:.3e}")
    report.tables["lyapunov.csv"] = (
        ["t", "v_mean", "v_stderr"],
        [[t, vm, se] for t, vm, se in zip(lyap.times, lyap.v_mean, lyap.v_stderr)],
    )
    return report, traj


def run_fpe_experiment(cfg: dict):
    """A plain grid-solver run; returns (report, result)."""
    ex = cfg["experiment"]
    model = build_model(cfg)
    fcfg = build_fpe_config(cfg)
    grid = build_fpe_grid(cfg, model)
    rho0 = gaussian_density(
        grid,
        (ex["init_mean_u"], ex["init_mean_v"]),
        (ex["init_std_u"] ** 2, ex["init_std_v"] ** 2),
    )
    result = fpe_run(rho0, model, grid, fcfg, ex["t_final"], snapshot_every=ex["snapshot_every"])
    report = Report("fpe")
    diag = result.diagnostics
    mass_err = max(abs(m_ - 1.0) for m_ in diag.mass)
    report.check("mass-conserved", mass_err <= 1e-12, f"max |mass - 1| = {mass_err:.2e}")
    boundary = max(diag.boundary_mass)
    report.check("boundary-mass-small", boundary < 1e-6, f"max boundary mass {boundary:.2e}")
    report.tables["fpe_diagnostics.csv"] = (
        ["t", "mass", "boundary_mass", "v_moment", "picard_iters"],
        [
            [t, ms, bm, vm, pi]
            for t, ms, bm, vm, pi in zip(
                diag.times, diag.mass, diag.boundary_mass, diag.v_moment, diag.picard_iters
            )
        ],
    )
    return report, result


def run_validation(cfg: dict) -> Report:
    model = build_model(cfg)
    assumptions = validate_assumptions(
        model, seed=cfg["seed"], moment_cap=cfg["model"]["moment_cap"]
    )
    report = Report("validate", constants=_constants_dict(assumptions))
    report.constants["stability_rate"] = assumptions.stability_rate()
    report.check("hypotheses-hold", True, "H1/H2/H3 probes within declared constants")
    return report
