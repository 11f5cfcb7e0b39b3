//! Named Monte Carlo experiments over environment replicas, the
//! deterministic identity suite, the distributional stationarity suite,
//! estimators, and power-law fits. Every replica is keyed off
//! (seed, replica index), so reports are reproducible bit for bit.

use crate::env::{mix_seed, BoundarySpec, EnvironmentSpec};
use crate::lattice::{LatticePoint, Rect, E1, E2};
use crate::polymer::{
    self, diagonal_log_partition_from_chain, exit_decomposition, exit_decomposition_from_chain,
    exit_window_profiles, forward_table, forward_table_from_chain, logsumexp, midpoint_crossing_profile,
    nested_boundary, quenched_exit_prob, restricted_log_partition, BoundaryChain,
};
use crate::semi::{
    backward_measure_check, busemann_field, coalescence_point, coalescence_point_lazy,
    count_dual_crossings, dual_separates, dual_tree, forward_tree, hitting_distribution, ne_env,
    transitions, tv_distance, BusemannMode,
};
use crate::special::{characteristic_endpoint, polygamma, ModelParams};
use crate::stats::{self, Estimate};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_N: u64 = 2000;
pub const DEFAULT_ENV_REPLICAS: usize = 1000;
pub const DEFAULT_THETA_REPLICAS: usize = 100;

/// Least-squares power-law fit y ~ C x^slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fit y = C x^slope by least squares on (log x, log y).
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::domain(format!(
            "power-law fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    for &(x, y) in points {
        if x <= 0.0 || y <= 0.0 {
            return Err(Error::domain(format!("power-law fit needs positive points, got ({x}, {y})")));
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    if xs.iter().all(|&x| x == xs[0]) {
        return Err(Error::domain("power-law fit needs a nondegenerate x range"));
    }
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = stats::fit_power_law(&xs, &ys);
    Ok(ScalingFit {
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub mu: f64,
    pub rho: f64,
    pub n: u64,
    pub env_replicas: usize,
    pub theta_replicas: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEstimate {
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEstimate {
    pub label: String,
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub label: String,
    pub slope: f64,
    pub stderr: f64,
    pub r2: f64,
    pub intercept: f64,
}

/// A named scalar check with its acceptance verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub params: ReportParams,
    pub grid: Vec<f64>,
    pub estimates: Vec<GridEstimate>,
    pub aux_estimates: Vec<LabeledEstimate>,
    pub fits: Vec<FitSummary>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    pub seed: u64,
    /// Always serialized as 0; wall-clock timing goes to standard error so
    /// that identical (params, seed) runs emit byte-identical reports.
    pub elapsed_s: f64,
}

impl ExperimentReport {
    fn new(name: &str, params: ReportParams, seed: u64) -> Self {
        ExperimentReport {
            name: name.to_string(),
            params,
            grid: Vec::new(),
            estimates: Vec::new(),
            aux_estimates: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
            notes: Vec::new(),
            seed,
            elapsed_s: 0.0,
        }
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per grid point (main estimates, then labeled auxiliaries).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,mean,stderr,n\n");
        for e in &self.estimates {
            out.push_str(&format!("{},{},{},{}\n", e.x, e.mean, e.stderr, e.n));
        }
        for e in &self.aux_estimates {
            out.push_str(&format!("{},{},{},{}\n", e.x, e.mean, e.stderr, e.n));
        }
        out
    }
}

fn grid_estimate(x: f64, values: &[f64]) -> GridEstimate {
    let e: Estimate = stats::estimate(values);
    GridEstimate { x, mean: e.mean, stderr: e.stderr, n: e.n }
}

fn mesoscale(n: u64) -> f64 {
    (n as f64).powf(2.0 / 3.0)
}

fn fit_summary(label: &str, points: &[(f64, f64)]) -> Result<FitSummary> {
    let f = fit_power_law(points)?;
    Ok(FitSummary {
        label: label.to_string(),
        slope: f.slope,
        stderr: f.slope_stderr,
        r2: f.r_squared,
        intercept: f.intercept,
    })
}

/// Nondecreasing within 2 joint standard errors across the grid.
fn monotone_nondecreasing(est: &[GridEstimate]) -> bool {
    est.windows(2).all(|w| {
        let joint = (w[0].stderr * w[0].stderr + w[1].stderr * w[1].stderr).sqrt();
        w[1].mean + 2.0 * joint >= w[0].mean
    })
}

/// Per-environment no-meet fractions for pair starts k·e1 / k·e2 on the
/// characteristic box, over theta replicas; one field per environment,
/// shared across all separations.
fn pair_no_meet_fractions(
    mu: f64,
    rho: f64,
    n: u64,
    seps: &[i64],
    env_replicas: usize,
    theta_replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let params = ModelParams::new(mu, rho)?;
    let (vx, vy) = characteristic_endpoint(params, n)?;
    let corner = LatticePoint::new(vx, vy);
    let rect = Rect::new(LatticePoint::ORIGIN, corner).unwrap();
    (0..env_replicas as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let env_seed = mix_seed(seed, i);
            let env = ne_env(mu, rho, env_seed, corner)?;
            let field = busemann_field(&env, rho, rect, BusemannMode::NeStationary)?;
            let trans = transitions(&field)?;
            let mut per_sep = Vec::with_capacity(seps.len());
            for &k in seps {
                if k == 0 {
                    per_sep.push(0.0);
                    continue;
                }
                let a = LatticePoint::new(k, 0);
                let b = LatticePoint::new(0, k);
                let mut misses = 0usize;
                for j in 0..theta_replicas as u64 {
                    let ts = mix_seed(env_seed, 1 + j);
                    if coalescence_point_lazy(&trans, ts, a, b)?.is_none() {
                        misses += 1;
                    }
                }
                per_sep.push(misses as f64 / theta_replicas as f64);
            }
            Ok(per_sep)
        })
        .collect()
}

/// Mean quenched probability of no coalescence inside the characteristic
/// box, for starts delta·N^{2/3} apart, with a power-law fit in delta.
pub fn run_coalescence_slow(
    mu: f64,
    rho: f64,
    n: u64,
    delta_grid: &[f64],
    env_replicas: usize,
    theta_replicas: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let params = ReportParams { mu, rho, n, env_replicas, theta_replicas };
    let mut report = ExperimentReport::new("coalescence_slow", params, seed);
    report.grid = delta_grid.to_vec();
    let scale = mesoscale(n);
    for &d in delta_grid {
        if d < 1.0 / scale || d > 0.5 {
            report.warnings.push(format!("delta {d} outside the validity range [{:.5}, 0.5]", 1.0 / scale));
        }
    }
    let seps: Vec<i64> = delta_grid.iter().map(|&d| (d * scale).floor() as i64).collect();
    let rows = pair_no_meet_fractions(mu, rho, n, &seps, env_replicas, theta_replicas, seed)?;
    for (gi, &d) in delta_grid.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r[gi]).collect();
        report.estimates.push(grid_estimate(d, &vals));
    }
    let pts: Vec<(f64, f64)> =
        report.estimates.iter().filter(|e| e.mean > 0.0).map(|e| (e.x, e.mean)).collect();
    if pts.len() >= 3 {
        report.fits.push(fit_summary("no_meet_vs_delta", &pts)?);
    } else {
        report.warnings.push("too few positive estimates for a power-law fit".to_string());
    }
    let mono = monotone_nondecreasing(&report.estimates);
    report.checks.push(Check {
        name: "monotone_nondecreasing_in_delta".to_string(),
        value: mono as u8 as f64,
        pass: mono,
    });
    report.notes.push("coupling: shared site uniforms (independent until meeting)".to_string());
    Ok(report)
}

/// Mean quenched probability of coalescence inside the characteristic box,
/// for starts r·N^{2/3} apart, with the cubic-exponent diagnostic fit and
/// quenched tail fractions.
pub fn run_coalescence_fast(
    mu: f64,
    rho: f64,
    n: u64,
    r_grid: &[f64],
    env_replicas: usize,
    theta_replicas: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let params = ReportParams { mu, rho, n, env_replicas, theta_replicas };
    let mut report = ExperimentReport::new("coalescence_fast", params, seed);
    report.grid = r_grid.to_vec();
    let scale = mesoscale(n);
    let cap = (n as f64).powf(1.0 / 3.0);
    for &r in r_grid {
        if r > cap {
            report.warnings.push(format!("r {r} beyond the box scale cap {cap:.2}"));
        }
    }
    let seps: Vec<i64> = r_grid.iter().map(|&r| (r * scale).floor() as i64).collect();
    let rows = pair_no_meet_fractions(mu, rho, n, &seps, env_replicas, theta_replicas, seed)?;
    let mut diag_pts = Vec::new();
    for (gi, &r) in r_grid.iter().enumerate() {
        let meets: Vec<f64> = rows.iter().map(|row| 1.0 - row[gi]).collect();
        let est = grid_estimate(r, &meets);
        if est.mean > 0.0 && est.mean < 1.0 && r > 0.0 {
            diag_pts.push((r, -est.mean.ln()));
        } else {
            report
                .warnings
                .push(format!("estimate {} at r {r} excluded from the diagnostic fit", est.mean));
        }
        report.estimates.push(est);
        for threshold in [0.5, 0.9] {
            let frac = meets.iter().filter(|&&m| m >= threshold).count() as f64 / meets.len() as f64;
            report.aux_estimates.push(LabeledEstimate {
                label: format!("meet_prob_at_least_{threshold}"),
                x: r,
                mean: frac,
                stderr: (frac * (1.0 - frac) / meets.len() as f64).sqrt(),
                n: meets.len(),
            });
        }
    }
    if diag_pts.len() >= 3 {
        report.fits.push(fit_summary("neg_log_meet_vs_r", &diag_pts)?);
    } else {
        report.warnings.push("too few interior estimates for the cubic diagnostic".to_string());
    }
    let decreasing = report.estimates.windows(2).all(|w| {
        let joint = (w[0].stderr * w[0].stderr + w[1].stderr * w[1].stderr).sqrt();
        w[1].mean <= w[0].mean + 2.0 * joint
    });
    report.checks.push(Check {
        name: "meet_prob_decreasing_in_r".to_string(),
        value: decreasing as u8 as f64,
        pass: decreasing,
    });
    report.notes.push("coupling: shared site uniforms (independent until meeting)".to_string());
    Ok(report)
}

/// Exit-time tails of the stationary polymer to the characteristic endpoint:
/// the r-branch is E[Q{|tau| > r N^{2/3}}] to v_N + (1,1); the delta-branch
/// is E[max over the northeast boundary of Q{|tau| <= delta N^{2/3}}].
pub fn run_exit_tail(
    mu: f64,
    rho: f64,
    n: u64,
    r_grid: &[f64],
    delta_grid: &[f64],
    env_replicas: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let params = ReportParams { mu, rho, n, env_replicas, theta_replicas: 0 };
    let mut report = ExperimentReport::new("exit_tail", params, seed);
    report.grid = r_grid.to_vec();
    let scale = mesoscale(n);
    let mp = ModelParams::new(mu, rho)?;
    let (vx, vy) = characteristic_endpoint(mp, n)?;
    let v = LatticePoint::new(vx, vy);
    let v1 = v + E1 + E2;
    let r_ms: Vec<i64> = r_grid.iter().map(|&r| (r * scale).floor() as i64).collect();
    let d_ms: Vec<i64> = delta_grid.iter().map(|&d| (d * scale).floor() as i64).collect();

    let per_env = |i: u64| -> Result<(Vec<f64>, Vec<f64>)> {
        let env_seed = mix_seed(seed, i);
        let env = EnvironmentSpec::new(
            mu,
            env_seed,
            BoundarySpec::Southwest { rho, anchor: LatticePoint::ORIGIN },
        )?;
        // r-branch: one decomposition, reused for every window
        let terms = exit_decomposition(&env, LatticePoint::ORIGIN, v1)?;
        let all: Vec<f64> = terms.iter().map(|t| t.1).collect();
        let full = logsumexp(&all);
        let mut r_vals = Vec::with_capacity(r_ms.len());
        for &m in &r_ms {
            let tail: Vec<f64> =
                terms.iter().filter(|&&(k, _)| k.abs() > m).map(|&(_, lz)| lz).collect();
            r_vals.push(if tail.is_empty() {
                0.0
            } else {
                (logsumexp(&tail) - full).exp().clamp(0.0, 1.0)
            });
        }
        // delta-branch: shared weight pass across windows
        let profiles = exit_window_profiles(&env, LatticePoint::ORIGIN, v, &d_ms)?;
        let d_vals: Vec<f64> = profiles
            .iter()
            .map(|p| p.iter().map(|&(_, q)| q).fold(0.0, f64::max))
            .collect();
        Ok((r_vals, d_vals))
    };

    let rows: Vec<(Vec<f64>, Vec<f64>)> =
        (0..env_replicas as u64).into_par_iter().map(per_env).collect::<Result<_>>()?;
    let mut diag_pts = Vec::new();
    for (gi, &r) in r_grid.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|row| row.0[gi]).collect();
        let est = grid_estimate(r, &vals);
        if est.mean > 0.0 && est.mean < 1.0 && r > 0.0 {
            diag_pts.push((r, -est.mean.ln()));
        } else {
            report
                .warnings
                .push(format!("estimate {} at r {r} excluded from the diagnostic fit", est.mean));
        }
        report.estimates.push(est);
    }
    for (gi, &d) in delta_grid.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|row| row.1[gi]).collect();
        let e = grid_estimate(d, &vals);
        report.aux_estimates.push(LabeledEstimate {
            label: "max_window_prob".to_string(),
            x: d,
            mean: e.mean,
            stderr: e.stderr,
            n: e.n,
        });
    }
    if diag_pts.len() >= 3 {
        report.fits.push(fit_summary("neg_log_tail_vs_r", &diag_pts)?);
    }
    let d_pts: Vec<(f64, f64)> = report
        .aux_estimates
        .iter()
        .filter(|e| e.mean > 0.0)
        .map(|e| (e.x, e.mean))
        .collect();
    if d_pts.len() >= 3 {
        report.fits.push(fit_summary("max_window_vs_delta", &d_pts)?);
    }
    // recompute one environment to assert the quenched layer carries no
    // sampling noise
    let again = per_env(0)?;
    let deterministic = again == per_env(0)?;
    report.checks.push(Check {
        name: "recompute_deterministic".to_string(),
        value: deterministic as u8 as f64,
        pass: deterministic,
    });
    Ok(report)
}

/// Mean total-variation distance between the exact boundary hitting laws of
/// two starts delta (or r) N^{2/3} apart, with the per-environment coupling
/// inequality audited against theta-replicated non-coalescence.
pub fn run_tv(
    mu: f64,
    rho: f64,
    n: u64,
    delta_grid: &[f64],
    r_grid: &[f64],
    env_replicas: usize,
    theta_replicas: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let params = ReportParams { mu, rho, n, env_replicas, theta_replicas };
    let mut report = ExperimentReport::new("tv", params, seed);
    let grid: Vec<f64> = delta_grid.iter().chain(r_grid.iter()).copied().collect();
    report.grid = grid.clone();
    let scale = mesoscale(n);
    let mp = ModelParams::new(mu, rho)?;
    let (vx, vy) = characteristic_endpoint(mp, n)?;
    let corner = LatticePoint::new(vx, vy);
    let rect = Rect::new(LatticePoint::ORIGIN, corner).unwrap();
    let seps: Vec<i64> = grid.iter().map(|&x| (x * scale).floor() as i64).collect();

    // per env: (tv per grid point, no-meet fraction per grid point,
    //           coupling violations per grid point)
    let rows: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..env_replicas as u64)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>, usize)> {
            let env_seed = mix_seed(seed, i);
            let env = ne_env(mu, rho, env_seed, corner)?;
            let field = busemann_field(&env, rho, rect, BusemannMode::NeStationary)?;
            let trans = transitions(&field)?;
            let mut tvs = Vec::with_capacity(seps.len());
            let mut fracs = Vec::with_capacity(seps.len());
            let mut violations = 0usize;
            for &k in &seps {
                if k == 0 {
                    tvs.push(0.0);
                    fracs.push(0.0);
                    continue;
                }
                let a = LatticePoint::new(k, 0);
                let b = LatticePoint::new(0, k);
                let h1 = hitting_distribution(&trans, a)?;
                let h2 = hitting_distribution(&trans, b)?;
                let tv = tv_distance(&h1, &h2)?;
                let mut misses = 0usize;
                for j in 0..theta_replicas as u64 {
                    let ts = mix_seed(env_seed, 1 + j);
                    if coalescence_point_lazy(&trans, ts, a, b)?.is_none() {
                        misses += 1;
                    }
                }
                let frac = misses as f64 / theta_replicas as f64;
                // the inequality tv <= P(no meet) is exact; the indicator
                // average estimates P, so audit it one-sided with a 5-sigma
                // binomial margin
                let se = (frac * (1.0 - frac) / theta_replicas as f64)
                    .sqrt()
                    .max(1.0 / theta_replicas as f64);
                if tv > frac + 5.0 * se {
                    violations += 1;
                }
                tvs.push(tv);
                fracs.push(frac);
            }
            Ok((tvs, fracs, violations))
        })
        .collect::<Result<_>>()?;

    for (gi, &x) in grid.iter().enumerate() {
        let tvs: Vec<f64> = rows.iter().map(|r| r.0[gi]).collect();
        report.estimates.push(grid_estimate(x, &tvs));
        let fr: Vec<f64> = rows.iter().map(|r| r.1[gi]).collect();
        let e = stats::estimate(&fr);
        report.aux_estimates.push(LabeledEstimate {
            label: "no_meet_fraction".to_string(),
            x,
            mean: e.mean,
            stderr: e.stderr,
            n: e.n,
        });
    }
    let d_pts: Vec<(f64, f64)> = delta_grid
        .iter()
        .enumerate()
        .filter(|&(gi, _)| report.estimates[gi].mean > 0.0)
        .map(|(gi, &d)| (d, report.estimates[gi].mean))
        .collect();
    if d_pts.len() >= 3 {
        report.fits.push(fit_summary("tv_vs_delta", &d_pts)?);
    }
    let total_violations: usize = rows.iter().map(|r| r.2).sum();
    report.checks.push(Check {
        name: "coupling_inequality_violations".to_string(),
        value: total_violations as f64,
        pass: total_violations == 0,
    });
    report
        .notes
        .push("coupling: shared site uniforms; inequality audited with 5-sigma binomial margin".to_string());
    Ok(report)
}

/// Mean quenched probability that the path between opposite characteristic
/// corners enters the central l-infinity ball of radius delta N^{2/3}.
pub fn run_transversal(
    mu: f64,
    rho: f64,
    n: u64,
    delta_grid: &[f64],
    env_replicas: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let params = ReportParams { mu, rho, n, env_replicas, theta_replicas: 0 };
    let mut report = ExperimentReport::new("transversal", params, seed);
    report.grid = delta_grid.to_vec();
    let scale = mesoscale(n);
    let ks: Vec<i64> = delta_grid.iter().map(|&d| (d * scale).floor() as i64).collect();
    let rows: Vec<Vec<f64>> = (0..env_replicas as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let env = EnvironmentSpec::bulk(mu, mix_seed(seed, i))?;
            midpoint_crossing_profile(&env, &ks, n)
        })
        .collect::<Result<_>>()?;
    for (gi, &d) in delta_grid.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r[gi]).collect();
        report.estimates.push(grid_estimate(d, &vals));
    }
    let pts: Vec<(f64, f64)> =
        report.estimates.iter().filter(|e| e.mean > 0.0).map(|e| (e.x, e.mean)).collect();
    if pts.len() >= 3 {
        report.fits.push(fit_summary("crossing_vs_delta", &pts)?);
    }
    let mono = monotone_nondecreasing(&report.estimates);
    report.checks.push(Check {
        name: "monotone_nondecreasing_in_delta".to_string(),
        value: mono as u8 as f64,
        pass: mono,
    });
    // note: rho is used only to aim the box at the characteristic corner
    let _ = rho;
    Ok(report)
}

/// Distributional suite for the boundary-augmented model: nearest-neighbor
/// ratio marginals, reconstructed interior weight, independence along a
/// down-right staircase, translation invariance, and the explicit mean of
/// log Z at (40, 60).
pub fn stationarity_suite(
    mu: f64,
    rho: f64,
    corner: LatticePoint,
    env_replicas: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    if corner.x < 20 || corner.y < 20 {
        return Err(Error::domain(format!("box must be at least 20x20, got corner {corner}")));
    }
    let params = ReportParams { mu, rho, n: 0, env_replicas, theta_replicas: 0 };
    let mut report = ExperimentReport::new("stationarity", params, seed);

    // a fixed down-right staircase in the middle of the box; each edge
    // crossing yields one log-ratio sample per replica
    let mut stair = Vec::new();
    let mut p = LatticePoint::new(5, corner.y - 5);
    stair.push(p);
    while p.x + 1 <= corner.x - 5 && p.y - 1 >= 5 {
        p = p + E1;
        stair.push(p);
        p = p - E2;
        stair.push(p);
    }

    struct Row {
        u_deep: f64,
        v_deep: f64,
        x_deep: f64,
        u_5: f64,
        u_15: f64,
        stair_h: Vec<f64>, // log horizontal ratios along the staircase
        stair_v: Vec<f64>, // log vertical ratios
        logz_4060: f64,
    }

    let stair_ref = &stair;
    let rows: Vec<Row> = (0..env_replicas as u64)
        .into_par_iter()
        .map(|i| -> Result<Row> {
            let env_seed = mix_seed(seed, i);
            let env = EnvironmentSpec::new(
                mu,
                env_seed,
                BoundarySpec::Southwest { rho, anchor: LatticePoint::ORIGIN },
            )?;
            let t = forward_table(&env, LatticePoint::ORIGIN, corner)?;
            let lz = |p: LatticePoint| t.expect_value(p);
            let ratio_h = |p: LatticePoint| -> Result<f64> { Ok(lz(p)? - lz(p - E1)?) };
            let ratio_v = |p: LatticePoint| -> Result<f64> { Ok(lz(p)? - lz(p - E2)?) };
            let deep = LatticePoint::new(15, 15);
            let lu = ratio_h(deep)?;
            let lv = ratio_v(deep)?;
            let x_deep = 1.0 / ((-lu).exp() + (-lv).exp());
            let mut stair_h = Vec::new();
            let mut stair_v = Vec::new();
            for w in stair_ref.windows(2) {
                if w[1] - w[0] == E1 {
                    stair_h.push(ratio_h(w[1])?);
                } else {
                    stair_v.push(ratio_v(w[0])?);
                }
            }
            let t2 = forward_table(&env, LatticePoint::ORIGIN, LatticePoint::new(40, 60))?;
            Ok(Row {
                u_deep: lu.exp(),
                v_deep: lv.exp(),
                x_deep,
                u_5: (lz(LatticePoint::new(5, 5))? - lz(LatticePoint::new(4, 5))?).exp(),
                u_15: lu.exp(),
                stair_h,
                stair_v,
                logz_4060: t2.expect_value(LatticePoint::new(40, 60))?,
            })
        })
        .collect::<Result<_>>()?;

    let mut check = |name: &str, value: f64, pass: bool| {
        report.checks.push(Check { name: name.to_string(), value, pass });
    };

    let us: Vec<f64> = rows.iter().map(|r| r.u_deep).collect();
    let vs: Vec<f64> = rows.iter().map(|r| r.v_deep).collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.x_deep).collect();
    let p_u = stats::ks_pvalue(&us, |x| stats::inverse_gamma_cdf(mu - rho, x));
    let p_v = stats::ks_pvalue(&vs, |x| stats::inverse_gamma_cdf(rho, x));
    let p_x = stats::ks_pvalue(&xs, |x| stats::inverse_gamma_cdf(mu, x));
    check("ks_horizontal_ratio", p_u, p_u > 0.01);
    check("ks_vertical_ratio", p_v, p_v > 0.01);
    check("ks_reconstructed_weight", p_x, p_x > 0.01);

    // independence along the staircase: pooled lag-1 (h,v) and lag-2 (h,h),
    // (v,v) correlations of the log-ratios
    let pooled = |pairs: &mut dyn Iterator<Item = (f64, f64)>| -> f64 {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (x, y) in pairs {
            a.push(x);
            b.push(y);
        }
        stats::pearson(&a, &b)
    };
    let nh = rows[0].stair_h.len();
    let nv = rows[0].stair_v.len();
    let c_hv = pooled(
        &mut rows
            .iter()
            .flat_map(|r| (0..nh.min(nv)).map(move |j| (r.stair_h[j], r.stair_v[j]))),
    );
    let c_hh = pooled(
        &mut rows.iter().flat_map(|r| (1..nh).map(move |j| (r.stair_h[j - 1], r.stair_h[j]))),
    );
    let c_vv = pooled(
        &mut rows.iter().flat_map(|r| (1..nv).map(move |j| (r.stair_v[j - 1], r.stair_v[j]))),
    );
    check("corr_staircase_hv", c_hv, c_hv.abs() < 0.02);
    check("corr_staircase_hh", c_hh, c_hh.abs() < 0.02);
    check("corr_staircase_vv", c_vv, c_vv.abs() < 0.02);

    // translation invariance: the same ratio at depths (5,5) and (15,15),
    // compared across disjoint replica halves
    let half = rows.len() / 2;
    let a: Vec<f64> = rows[..half].iter().map(|r| r.u_5).collect();
    let b: Vec<f64> = rows[half..].iter().map(|r| r.u_15).collect();
    let p_t = stats::ks_two_sample_pvalue(&a, &b);
    check("ks_translation_invariance", p_t, p_t > 0.01);

    // explicit stationary mean of log Z at (40, 60)
    let logzs: Vec<f64> = rows.iter().map(|r| r.logz_4060).collect();
    let e = stats::estimate(&logzs);
    let target = -40.0 * polygamma(0, mu - rho)? - 60.0 * polygamma(0, rho)?;
    let dev = (e.mean - target) / e.stderr;
    check("logz_mean_4060_sigma", dev, dev.abs() < 3.0);
    report.aux_estimates.push(LabeledEstimate {
        label: "logz_4060".to_string(),
        x: 0.0,
        mean: e.mean,
        stderr: e.stderr,
        n: e.n,
    });
    Ok(report)
}

/// One seed's worth of exact identity checks on small boxes; returns the
/// names of the identities that failed.
fn identity_failures(seed: u64, mu: f64, rho: f64) -> Result<Vec<String>> {
    let tol = 1e-9;
    let mut failures = Vec::new();
    let mut fail = |name: &str| failures.push(name.to_string());
    let o = LatticePoint::ORIGIN;
    let v = LatticePoint::new(5, 5);
    let plain = EnvironmentSpec::bulk(mu, seed)?;
    let sw = EnvironmentSpec::new(mu, seed, BoundarySpec::Southwest { rho, anchor: o })?;

    // recursion: log Z(w) = log Y_w + LSE(log Z(w-e1), log Z(w-e2))
    for env in [&plain, &sw] {
        let t = forward_table(env, o, v)?;
        let mut ok = true;
        for p in Rect::new(LatticePoint::new(1, 1), v).unwrap().points() {
            let lhs = t.expect_value(p)?;
            let rhs = env.bulk_weight(p)?.ln()
                + polymer::logsumexp2(t.expect_value(p - E1)?, t.expect_value(p - E2)?);
            if (lhs - rhs).abs() > tol {
                ok = false;
            }
        }
        if !ok {
            fail("recursion");
        }
    }

    // first-turn decomposition sums back to the full partition function
    for env in [&plain, &sw] {
        let full = polymer::log_partition(env, o, v)?;
        let w = restricted_log_partition(env, o, v, -(v.y), v.x)?.unwrap();
        if (full - w).abs() > tol {
            fail("restricted_telescoping");
        }
    }

    // ratio monotonicity in the base point
    {
        let z = LatticePoint::new(4, 4);
        let mut ok = true;
        for x in Rect::new(o, LatticePoint::new(2, 2)).unwrap().points() {
            for y in Rect::new(o, LatticePoint::new(2, 2)).unwrap().points() {
                if !(x.x <= y.x && x.y >= y.y) {
                    continue;
                }
                let r1x = polymer::log_partition(&plain, x, z)?
                    - polymer::log_partition(&plain, x, z - E1)?;
                let r1y = polymer::log_partition(&plain, y, z)?
                    - polymer::log_partition(&plain, y, z - E1)?;
                let r2x = polymer::log_partition(&plain, x, z)?
                    - polymer::log_partition(&plain, x, z - E2)?;
                let r2y = polymer::log_partition(&plain, y, z)?
                    - polymer::log_partition(&plain, y, z - E2)?;
                if r1x > r1y + tol || r2x < r2y - tol {
                    ok = false;
                }
            }
        }
        if !ok {
            fail("ratio_monotone_in_base");
        }
    }

    // restricted-ratio monotonicity in the first-turn threshold
    {
        let z = LatticePoint::new(4, 4);
        let mut ok = true;
        for l in 0..=2i64 {
            for k in l..=3i64 {
                let num_l = restricted_log_partition(&plain, o, z, l, z.x)?.unwrap();
                let den_l = restricted_log_partition(&plain, o, z - E1, l, z.x - 1)?.unwrap();
                let num_k = restricted_log_partition(&plain, o, z, k, z.x)?.unwrap();
                let den_k = restricted_log_partition(&plain, o, z - E1, k, z.x - 1)?.unwrap();
                if num_l - den_l > num_k - den_k + tol {
                    ok = false;
                }
                let num_l2 = restricted_log_partition(&plain, o, z, l, z.x)?.unwrap();
                let den_l2 = restricted_log_partition(&plain, o, z - E2, l, z.x)?.unwrap();
                let num_k2 = restricted_log_partition(&plain, o, z, k, z.x)?.unwrap();
                let den_k2 = restricted_log_partition(&plain, o, z - E2, k, z.x)?.unwrap();
                if num_l2 - den_l2 < num_k2 - den_k2 - tol {
                    ok = false;
                }
            }
        }
        if !ok {
            fail("restricted_ratio_monotone");
        }
    }

    // shifting the endpoint right (down) raises (lowers) the chance of a
    // long initial horizontal run
    {
        let mut ok = true;
        for k in 1..=3i64 {
            for x in Rect::new(LatticePoint::new(3, 1), LatticePoint::new(4, 3)).unwrap().points()
            {
                let q = quenched_exit_prob(&plain, o, x, k, x.x)?;
                let q1 = quenched_exit_prob(&plain, o, x + E1, k, x.x + 1)?;
                let q2 = quenched_exit_prob(&plain, o, x + E2, k, x.x)?;
                if q > q1 + tol || q < q2 - tol {
                    ok = false;
                }
            }
        }
        if !ok {
            fail("exit_prob_endpoint_shift");
        }
    }

    // a chain carved out of an outer table reproduces the outer ratios
    {
        let outer = forward_table(&plain, o, LatticePoint::new(6, 6))?;
        let root = LatticePoint::new(1, 1);
        // the chain must span the whole outer box so that every path to the
        // comparison region crosses it
        let mut inner = Vec::new();
        for y in (1..=6).rev() {
            inner.push(LatticePoint::new(1, y));
        }
        for x in 2..=6 {
            inner.push(LatticePoint::new(x, 1));
        }
        let chain = nested_boundary(&outer, root, &inner)?;
        let t = forward_table_from_chain(&plain, &chain, root, LatticePoint::new(6, 6))?;
        let mut ok = true;
        for p in Rect::new(LatticePoint::new(2, 2), LatticePoint::new(6, 6)).unwrap().points() {
            let lhs = t.expect_value(p)?;
            let rhs = outer.expect_value(p)? - outer.expect_value(root)?;
            if (lhs - rhs).abs() > tol {
                ok = false;
            }
        }
        if !ok {
            fail("nested_chain_ratio");
        }
    }

    // exit-time relations between nested models carved from one outer
    // antidiagonal polymer
    {
        let anchor = LatticePoint::new(-1, -1);
        let denv = EnvironmentSpec::new(mu, seed, BoundarySpec::Antidiagonal { rho, anchor })?;
        let vv = LatticePoint::new(4, 3);
        let outer = forward_table(&denv, anchor, vv)?;

        // straight-run translation: Q_{0,v}{tau <= m} computed from the
        // 0-rooted corner chain equals Q_{(m,-n),v}{tau < -n} from the
        // (m,-n)-rooted corner chain
        let (m, nn) = (2i64, 1i64);
        let corner_chain = |root: LatticePoint| -> Result<BoundaryChain> {
            let mut verts = Vec::new();
            for y in (root.y..=vv.y).rev() {
                verts.push(LatticePoint::new(root.x, y));
            }
            for x in root.x + 1..=vv.x {
                verts.push(LatticePoint::new(x, root.y));
            }
            nested_boundary(&outer, root, &verts)
        };
        let c0 = corner_chain(o)?;
        let terms0 = exit_decomposition_from_chain(&denv, &c0, o, vv)?;
        let all0: Vec<f64> = terms0.iter().map(|t| t.1).collect();
        let sel0: Vec<f64> =
            terms0.iter().filter(|&&(k, _)| k <= m).map(|&(_, lz)| lz).collect();
        let q_left = (logsumexp(&sel0) - logsumexp(&all0)).exp();
        let root2 = LatticePoint::new(m, -nn);
        let c2 = corner_chain(root2)?;
        let terms2 = exit_decomposition_from_chain(&denv, &c2, root2, vv)?;
        let all2: Vec<f64> = terms2.iter().map(|t| t.1).collect();
        let sel2: Vec<f64> =
            terms2.iter().filter(|&&(k, _)| k < -nn).map(|&(_, lz)| lz).collect();
        let q_right = (logsumexp(&sel2) - logsumexp(&all2)).exp();
        if (q_left - q_right).abs() > tol {
            fail("exit_time_translation");
        }

        // corner chain vs staircase chain: {tau >= 2r} from the corner
        // matches {tau_dia >= r} from the staircase through (r, r)
        let r = 1i64;
        let sel_ge: Vec<f64> =
            terms0.iter().filter(|&&(k, _)| k >= 2 * r).map(|&(_, lz)| lz).collect();
        let q_corner = (logsumexp(&sel_ge) - logsumexp(&all0)).exp();
        let danchor = LatticePoint::new(r, r);
        let (k_lo, k_hi) = polymer::diagonal_span(danchor, vv);
        let mut verts = Vec::new();
        let mut w = danchor + LatticePoint::new(k_lo, -k_lo);
        verts.push(w);
        for _ in k_lo..k_hi {
            w = w - E2;
            verts.push(w);
            w = w + E1;
            verts.push(w);
        }
        let dchain = nested_boundary(&outer, danchor, &verts)?;
        let full_dia =
            diagonal_log_partition_from_chain(&denv, danchor, &dchain, vv, k_lo, k_hi)?;
        let tail_dia = diagonal_log_partition_from_chain(&denv, danchor, &dchain, vv, r, k_hi)?;
        let q_dia = (tail_dia - full_dia).exp();
        if (q_corner - q_dia).abs() > tol {
            fail("diagonal_vs_corner_exit");
        }
    }

    // the RWRE path law equals the quenched path measure, by enumeration
    {
        let c2 = LatticePoint::new(2, 2);
        let c3 = LatticePoint::new(3, 3);
        let e2 = ne_env(mu, rho, seed, c2)?;
        let e3 = ne_env(mu, rho, seed, c3)?;
        if backward_measure_check(&e2, rho, o, c2)? > tol
            || backward_measure_check(&e3, rho, o, c3)? > tol
        {
            fail("path_measure_markov");
        }
    }

    // increment-field invariants, dual geometry, and the coalescence/dual
    // equivalence on a 6x6 box
    {
        let corner = LatticePoint::new(6, 6);
        let env = ne_env(mu, rho, seed, corner)?;
        let rect = Rect::new(o, corner).unwrap();
        let field = busemann_field(&env, rho, rect, BusemannMode::NeStationary)?;
        let mut ok = true;
        for z in Rect::new(o, corner - E1 - E2).unwrap().points() {
            let w = env.bulk_weight(z)?;
            if ((field.recovered_weight(z)? - w) / w).abs() > tol {
                ok = false;
            }
        }
        if !ok {
            fail("busemann_recovery");
        }
        let (x, y, z) = (o, LatticePoint::new(3, 2), LatticePoint::new(5, 6));
        if (field.b(x, y)? + field.b(y, z)? - field.b(x, z)?).abs() > tol {
            fail("busemann_cocycle");
        }
        let trans = transitions(&field)?;
        let tree = forward_tree(&trans, mix_seed(seed, 77));
        let dual = dual_tree(&tree);
        if count_dual_crossings(&tree, &dual)? != 0 {
            fail("dual_no_crossing");
        }
        let (a, b) = (LatticePoint::new(2, 0), LatticePoint::new(0, 2));
        let not_met = coalescence_point(&tree, a, b)?.is_none();
        if not_met != dual_separates(&tree, a, b)? {
            fail("coalescence_dual_equivalence");
        }
    }

    Ok(failures)
}

/// Exact identity suite over `seed_count` seeds on boxes up to 6x6, at the
/// standard parameters and at a heavy-tailed stress point.
pub fn identity_suite(seed_count: u64) -> Result<ExperimentReport> {
    let params =
        ReportParams { mu: 2.0, rho: 1.0, n: 0, env_replicas: seed_count as usize, theta_replicas: 0 };
    let mut report = ExperimentReport::new("identity_suite", params, 0);
    let results: Vec<(u64, Vec<String>)> = (0..seed_count)
        .into_par_iter()
        .map(|s| -> Result<(u64, Vec<String>)> {
            let mut f = identity_failures(mix_seed(1, s), 2.0, 1.0)?;
            let stress = identity_failures(mix_seed(2, s), 0.3, 0.1)?;
            f.extend(stress.into_iter().map(|n| format!("{n}@mu0.3")));
            Ok((s, f))
        })
        .collect::<Result<_>>()?;
    let mut total = 0usize;
    for (s, fails) in &results {
        for f in fails {
            report.warnings.push(format!("seed {s}: {f}"));
            total += 1;
        }
    }
    report.checks.push(Check {
        name: "identity_failures".to_string(),
        value: total as f64,
        pass: total == 0,
    });
    report.notes.push(format!("{} seeds, boxes up to 6x6, tolerance 1e-9", seed_count));
    Ok(report)
}
