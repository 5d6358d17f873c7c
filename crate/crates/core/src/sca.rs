//! Successive convex approximation for the per-group QoS problem and the coupled
//! MMF problem over BDZF effective channels.
//!
//! Each SNR constraint `|ḡ^H c|² ≥ η` is nonconvex. Around a point `z` it is
//! replaced by the half-space `2 Re(a^H c) ≥ b` with `a = ḡ(ḡ^H z)` and
//! `b = η + |ḡ^H z|²`, which follows from `(c − z)^H ḡḡ^H (c − z) ≥ 0`. The half-space
//! is inside the true feasible set and touches it at `z`, so every iterate stays
//! feasible and the objective is monotone.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sqr, scale, CMatrix, CVector};
use crate::model::{ChannelSet, Precoder, Targets};
use crate::nullspace::{compose, compute_outer_layer, flop_estimate_bdzf, OuterLayer};
use crate::qp::{max_min_ball, min_norm_warm, BallConstraint, HalfSpaceSet};
use crate::rng::{substream, trial_seed, Purpose};

/// Flops charged per `n³` for one convex subproblem solve. The kernel has no
/// fixed operation count, so this is a bookkeeping constant.
pub const SOLVER_FLOPS_PER_DIM3: u64 = 8;

/// Re-draws allowed when an initial point is orthogonal to some effective channel.
const INIT_RETRIES: usize = 10;

/// Relative change below which a non-improving step counts as convergence.
const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitPolicy {
    /// `z_j ∝ Σ_k ḡ_jk / ‖ḡ_jk‖`.
    GroupChannelSum,
    Random(u64),
    /// Inner vectors to start from, one per group.
    WarmStart(Vec<CVector>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaOptions {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub init_policy: InitPolicy,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-3,
            max_iters: 100,
            init_policy: InitPolicy::GroupChannelSum,
        }
    }
}

impl ScaOptions {
    pub fn warm(inner: Vec<CVector>) -> Self {
        Self {
            init_policy: InitPolicy::WarmStart(inner),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    pub iterations: usize,
    /// Objective after every accepted iteration.
    pub objective_trace: Vec<f64>,
    /// Largest relative shortfall `max(η − |ḡ^H c|², 0) / η` at the returned point.
    pub max_constraint_violation: f64,
    pub flops_estimate: u64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct ScaQos {
    pub precoder: Precoder,
    pub groups: Vec<SolveReport>,
    /// Totals over groups; the trace carries each group's last value forward.
    pub summary: SolveReport,
}

#[derive(Clone, Debug)]
pub struct ScaMmf {
    pub precoder: Precoder,
    pub t: f64,
    pub report: SolveReport,
}

/// Half-space `(a, b)` with `2 Re(a^H c) ≥ b` implying `|ḡ^H c|² ≥ η`.
pub fn linearize(z: &[Complex64], g: &[Complex64], eta: f64) -> (CVector, f64) {
    let gz = dot(g, z);
    (g.iter().map(|x| x * gz).collect(), eta + gz.norm_sqr())
}

fn snrs(eff: &CMatrix, c: &[Complex64]) -> Vec<f64> {
    eff.columns().map(|g| dot(g, c).norm_sqr()).collect()
}

fn relative_violation(eff: &CMatrix, eta: &[f64], c: &[Complex64]) -> f64 {
    snrs(eff, c)
        .iter()
        .zip(eta)
        .map(|(s, e)| ((e - s) / e).max(0.0))
        .fold(0.0, f64::max)
}

fn is_degenerate(eff: &CMatrix, z: &[Complex64]) -> bool {
    let nz = norm(z);
    eff.columns()
        .any(|g| !(dot(g, z).norm() > 1e-12 * norm(g) * nz))
}

/// Scale factor that makes `min_k |ḡ_k^H z|² / η_k` equal to one.
fn tight_scale(eff: &CMatrix, eta: &[f64], z: &[Complex64]) -> f64 {
    snrs(eff, z)
        .iter()
        .zip(eta)
        .map(|(s, e)| e / s)
        .fold(0.0, f64::max)
        .sqrt()
}

fn gaussian_vector<R: Rng>(rng: &mut R, n: usize) -> CVector {
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im)
        })
        .collect()
}

/// Starting direction for group `j`, re-drawn at random while it is orthogonal to
/// one of the group's channels.
fn initial_direction(eff: &CMatrix, j: usize, policy: &InitPolicy) -> Result<CVector> {
    let n = eff.rows();
    let (first, seed) = match policy {
        InitPolicy::GroupChannelSum => {
            let mut z = vec![Complex64::new(0.0, 0.0); n];
            for g in eff.columns() {
                let s = 1.0 / norm(g);
                for (zi, gi) in z.iter_mut().zip(g) {
                    *zi += gi * s;
                }
            }
            (Some(z), 0)
        }
        InitPolicy::Random(seed) => (None, *seed),
        InitPolicy::WarmStart(inner) => {
            let z = inner.get(j).cloned().ok_or(Error::DimensionMismatch {
                expected: j + 1,
                found: inner.len(),
            })?;
            if z.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: z.len(),
                });
            }
            (Some(z), 0)
        }
    };
    if let Some(z) = first {
        if !is_degenerate(eff, &z) {
            return Ok(z);
        }
    }
    let mut rng = substream(trial_seed(seed, j as u64), Purpose::SolverInit);
    for _ in 0..INIT_RETRIES {
        let z = gaussian_vector(&mut rng, n);
        if !is_degenerate(eff, &z) {
            return Ok(z);
        }
    }
    Err(Error::Degenerate(format!(
        "group {j}: no initial point with nonzero gain on every UE after {INIT_RETRIES} draws"
    )))
}

fn check_targets(outer: &OuterLayer, eta: &Targets) -> Result<()> {
    if eta.len() != outer.n_groups() {
        return Err(Error::DimensionMismatch {
            expected: outer.n_groups(),
            found: eta.len(),
        });
    }
    for (eff, e) in outer.effective.iter().zip(eta) {
        if e.len() != eff.cols() {
            return Err(Error::DimensionMismatch {
                expected: eff.cols(),
                found: e.len(),
            });
        }
        if e.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("SINR targets must be positive and finite".into()));
        }
    }
    Ok(())
}

fn qos_group(eff: &CMatrix, eta: &[f64], j: usize, options: &ScaOptions) -> Result<(CVector, SolveReport)> {
    let z0 = initial_direction(eff, j, &options.init_policy)?;
    let mut z = scale(tight_scale(eff, eta, &z0), &z0);
    let mut prev = norm_sqr(&z);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut warm: Option<Vec<f64>> = None;

    for _ in 0..options.max_iters {
        let (normals, offsets): (Vec<CVector>, Vec<f64>) = eff
            .columns()
            .zip(eta)
            .map(|(g, &e)| linearize(&z, g, e))
            .unzip();
        let set = HalfSpaceSet::new(normals, offsets)?;
        let sol = min_norm_warm(&set, warm.as_deref())?;
        let mut c = sol.point;
        let violation = relative_violation(eff, eta, &c);
        if violation > 1e-6 {
            return Err(Error::InfeasibleSubproblem { violation });
        }
        // remove roundoff-level shortfall so the iterate is feasible exactly
        let s = tight_scale(eff, eta, &c);
        if s > 1.0 {
            c = scale(s, &c);
        }
        let objective = norm_sqr(&c);
        if objective > prev {
            // a rise within the slack is solver noise at the fixed point; anything
            // larger is a stall. Either way the previous iterate is the best one.
            converged = objective <= prev * (1.0 + MONOTONE_SLACK);
            break;
        }
        trace.push(objective);
        let change = (prev - objective).abs() / prev;
        z = c;
        prev = objective;
        warm = Some(sol.multipliers);
        if change < options.rel_tol {
            converged = true;
            break;
        }
    }
    let n = eff.rows() as u64;
    let report = SolveReport {
        objective: norm_sqr(&z),
        iterations: trace.len(),
        max_constraint_violation: relative_violation(eff, eta, &z),
        flops_estimate: trace.len() as u64 * SOLVER_FLOPS_PER_DIM3 * n.pow(3),
        objective_trace: trace,
        converged,
    };
    Ok((z, report))
}

fn full_dims(outer: &OuterLayer) -> (usize, Vec<usize>) {
    let n = outer.bases.first().map_or(0, |f| f.rows());
    (n, outer.effective.iter().map(|e| e.cols()).collect())
}

/// QoS power minimisation for every group over a precomputed outer layer.
pub fn qos_sca_inner(outer: &OuterLayer, eta: &Targets, options: &ScaOptions) -> Result<ScaQos> {
    options.validate()?;
    check_targets(outer, eta)?;
    let per_group: Vec<(CVector, SolveReport)> = (0..outer.n_groups())
        .into_par_iter()
        .map(|j| qos_group(&outer.effective[j], &eta[j], j, options))
        .collect::<Result<_>>()?;
    let (inner, groups): (Vec<CVector>, Vec<SolveReport>) = per_group.into_iter().unzip();

    let iterations = groups.iter().map(|r| r.iterations).max().unwrap_or(0);
    let objective_trace = (0..iterations)
        .map(|i| {
            groups
                .iter()
                .map(|r| {
                    r.objective_trace
                        .get(i)
                        .or(r.objective_trace.last())
                        .copied()
                        .unwrap_or(r.objective)
                })
                .sum()
        })
        .collect();
    let (n, sizes) = full_dims(outer);
    let summary = SolveReport {
        objective: groups.iter().map(|r| r.objective).sum(),
        iterations,
        objective_trace,
        max_constraint_violation: groups
            .iter()
            .map(|r| r.max_constraint_violation)
            .fold(0.0, f64::max),
        flops_estimate: flop_estimate_sca(n, &sizes, iterations),
        converged: groups.iter().all(|r| r.converged),
    };
    Ok(ScaQos {
        precoder: compose(outer, inner)?,
        groups,
        summary,
    })
}

/// QoS power minimisation: BDZF outer layer, then per-group SCA.
pub fn qos_bdzf_sca(channels: &ChannelSet, eta: &Targets, options: &ScaOptions) -> Result<ScaQos> {
    qos_sca_inner(&compute_outer_layer(channels)?, eta, options)
}

fn min_weighted_snr(outer: &OuterLayer, eta: &Targets, inner: &[CVector]) -> f64 {
    outer
        .effective
        .iter()
        .zip(eta)
        .zip(inner)
        .flat_map(|((eff, e), c)| {
            snrs(eff, c)
                .into_iter()
                .zip(e.iter())
                .map(|(s, w)| s / w)
                .collect::<Vec<_>>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn normalise_power(inner: &mut [CVector], budget: f64) {
    let total: f64 = inner.iter().map(|c| norm_sqr(c)).sum();
    let s = (budget / total).sqrt();
    for c in inner.iter_mut() {
        *c = scale(s, c);
    }
}

/// Max-min fairness over a precomputed outer layer.
pub fn mmf_sca_inner(
    outer: &OuterLayer,
    eta: &Targets,
    budget: f64,
    options: &ScaOptions,
) -> Result<ScaMmf> {
    options.validate()?;
    check_targets(outer, eta)?;
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::Domain(format!(
            "power budget must be positive, got {budget}"
        )));
    }
    let mut z: Vec<CVector> = (0..outer.n_groups())
        .map(|j| {
            let eff = &outer.effective[j];
            let z0 = initial_direction(eff, j, &options.init_policy)?;
            Ok(scale(tight_scale(eff, &eta[j], &z0), &z0))
        })
        .collect::<Result<_>>()?;
    normalise_power(&mut z, budget);

    let mut prev = min_weighted_snr(outer, eta, &z);
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..options.max_iters {
        let mut constraints = Vec::new();
        for (j, (eff, e)) in outer.effective.iter().zip(eta).enumerate() {
            for (g, &w) in eff.columns().zip(e) {
                let gz = dot(g, &z[j]);
                constraints.push(BallConstraint {
                    group: j,
                    normal: g.iter().map(|x| x * gz).collect(),
                    offset: gz.norm_sqr(),
                    weight: w,
                });
            }
        }
        let ball = max_min_ball(&constraints, budget, Some(prev))?;
        let mut c = ball.inner;
        if ball.power > budget {
            normalise_power(&mut c, budget);
        }
        let objective = min_weighted_snr(outer, eta, &c);
        if objective < prev {
            converged = objective >= prev * (1.0 - MONOTONE_SLACK);
            break;
        }
        trace.push(objective);
        let change = (objective - prev).abs() / prev;
        z = c;
        prev = objective;
        if change < options.rel_tol {
            converged = true;
            break;
        }
    }
    let t = min_weighted_snr(outer, eta, &z);
    let (n, sizes) = full_dims(outer);
    let report = SolveReport {
        objective: t,
        iterations: trace.len(),
        flops_estimate: flop_estimate_sca(n, &sizes, trace.len()),
        objective_trace: trace,
        max_constraint_violation: (norm_total(&z) - budget).max(0.0) / budget,
        converged,
    };
    Ok(ScaMmf {
        precoder: compose(outer, z)?,
        t,
        report,
    })
}

fn norm_total(inner: &[CVector]) -> f64 {
    inner.iter().map(|c| norm_sqr(c)).sum()
}

/// Max-min fairness: BDZF outer layer, then SCA over the coupled groups.
pub fn mmf_bdzf_sca(
    channels: &ChannelSet,
    eta: &Targets,
    budget: f64,
    options: &ScaOptions,
) -> Result<ScaMmf> {
    mmf_sca_inner(&compute_outer_layer(channels)?, eta, budget, options)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaFlops {
    pub bdzf: u64,
    pub inner: u64,
    pub composition: u64,
    pub total: u64,
}

/// BDZF flops, `iterations · 8 · Σ_j (N − τ_j)³` for the subproblems, and
/// `8GN² − 8(G−1)KN` to form the composite vectors.
pub fn flop_breakdown_sca(n_antennas: usize, group_sizes: &[usize], iterations: usize) -> ScaFlops {
    let k: usize = group_sizes.iter().sum();
    let g = group_sizes.len() as i128;
    let n = n_antennas as i128;
    let inner_cubes: u64 = group_sizes
        .iter()
        .map(|&kj| (n_antennas + kj).saturating_sub(k) as u64)
        .map(|d| d.pow(3))
        .sum();
    let composition = (8 * g * n * n - 8 * (g - 1).max(0) * k as i128 * n).max(0) as u64;
    let bdzf = flop_estimate_bdzf(n_antennas, group_sizes);
    let inner = iterations as u64 * SOLVER_FLOPS_PER_DIM3 * inner_cubes;
    ScaFlops {
        bdzf,
        inner,
        composition,
        total: bdzf + inner + composition,
    }
}

pub fn flop_estimate_sca(n_antennas: usize, group_sizes: &[usize], iterations: usize) -> u64 {
    flop_breakdown_sca(n_antennas, group_sizes, iterations).total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_channels, uniform_targets, SystemConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single_group_outer(eff: CMatrix) -> OuterLayer {
        OuterLayer {
            bases: vec![CMatrix::identity(eff.rows())],
            effective: vec![eff],
        }
    }

    fn random_eff(rng: &mut ChaCha8Rng, n: usize, k: usize) -> CMatrix {
        let cols: Vec<CVector> = (0..k).map(|_| gaussian_vector(rng, n)).collect();
        CMatrix::from_columns(n, &cols).unwrap()
    }

    #[test]
    fn linearization_is_a_lower_bound_and_tight_at_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let g = gaussian_vector(&mut rng, 5);
            let z = gaussian_vector(&mut rng, 5);
            let x = gaussian_vector(&mut rng, 5);
            let (a, b) = linearize(&z, &g, 1.0);
            // 2Re(z^H X c) − z^H X z ≤ c^H X c
            let lhs = 2.0 * dot(&a, &x).re - (b - 1.0);
            let rhs = dot(&g, &x).norm_sqr();
            assert!(lhs <= rhs + 1e-12 * rhs.max(1.0));
            let at_z = 2.0 * dot(&a, &z).re - (b - 1.0);
            assert!((at_z - dot(&g, &z).norm_sqr()).abs() < 1e-10 * at_z.abs().max(1.0));
        }
        let (a, b) = linearize(&[c(1.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)], 2.0);
        assert_eq!(norm_sqr(&a), 0.0);
        assert_eq!(b, 2.0);
    }

    #[test]
    fn single_ue_is_the_matched_filter() {
        let g = vec![c(1.0, 2.0), c(-0.5, 0.3), c(0.0, 1.0)];
        let outer = single_group_outer(CMatrix::from_columns(3, &[g.clone()]).unwrap());
        let res = qos_sca_inner(&outer, &vec![vec![7.0]], &ScaOptions::default()).unwrap();
        assert!(res.groups[0].iterations <= 2);
        let expected = 7.0 / norm_sqr(&g);
        assert!((res.summary.objective / expected - 1.0).abs() < 1e-9);

        let mmf = mmf_sca_inner(&outer, &vec![vec![7.0]], 3.0, &ScaOptions::default()).unwrap();
        assert!((mmf.t / (3.0 * norm_sqr(&g) / 7.0) - 1.0).abs() < 1e-9);
        let doubled = mmf_sca_inner(&outer, &vec![vec![7.0]], 6.0, &ScaOptions::default()).unwrap();
        assert!((doubled.t / mmf.t - 2.0).abs() < 1e-9);
    }

    #[test]
    fn qos_traces_are_monotone_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let eff = random_eff(&mut rng, 8, 5);
            let outer = single_group_outer(eff.clone());
            let eta = vec![vec![2.0, 1.0, 3.0, 0.5, 1.5]];
            let res = qos_sca_inner(&outer, &eta, &ScaOptions::default()).unwrap();
            let r = &res.groups[0];
            assert_eq!(r.objective_trace.len(), r.iterations);
            for w in r.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9));
            }
            assert!(r.max_constraint_violation <= 1e-6);
            assert!(r.converged);
            assert!(relative_violation(&eff, &eta[0], &res.precoder.inner[0]) <= 1e-6);
        }
    }

    #[test]
    fn warm_start_never_gets_worse() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let eff = random_eff(&mut rng, 6, 4);
        let eta = vec![vec![1.0; 4]];
        let p = gaussian_vector(&mut rng, 6);
        let p = scale(tight_scale(&eff, &eta[0], &p) * 1.3, &p);
        let outer = single_group_outer(eff);
        let res = qos_sca_inner(&outer, &eta, &ScaOptions::warm(vec![p.clone()])).unwrap();
        assert!(res.summary.objective <= norm_sqr(&p) + 1e-9);
    }

    #[test]
    fn random_init_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let outer = single_group_outer(random_eff(&mut rng, 6, 3));
        let eta = vec![vec![1.0; 3]];
        let opts = ScaOptions {
            init_policy: InitPolicy::Random(5),
            ..ScaOptions::default()
        };
        let a = qos_sca_inner(&outer, &eta, &opts).unwrap();
        let b = qos_sca_inner(&outer, &eta, &opts).unwrap();
        assert_eq!(a.precoder, b.precoder);
    }

    #[test]
    fn degenerate_warm_start_is_redrawn() {
        let eff = CMatrix::from_columns(2, &[vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]]).unwrap();
        let outer = single_group_outer(eff);
        let opts = ScaOptions::warm(vec![vec![c(1.0, 0.0), c(0.0, 0.0)]]);
        let res = qos_sca_inner(&outer, &vec![vec![1.0, 1.0]], &opts).unwrap();
        assert!((res.summary.objective - 2.0).abs() < 1e-6);
    }

    #[test]
    fn mmf_trace_non_decreasing_and_within_budget() {
        let cfg = SystemConfig {
            n_antennas: 24,
            group_sizes: vec![3, 3, 3],
            ..SystemConfig::default()
        };
        let ch = generate_channels(&cfg, 4).unwrap();
        let eta = uniform_targets(&cfg.group_sizes, 1.0);
        let res = mmf_bdzf_sca(&ch, &eta, 10.0, &ScaOptions::default()).unwrap();
        for w in res.report.objective_trace.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-9));
        }
        let power = crate::model::total_power(&res.precoder);
        assert!(power <= 10.0 + 1e-8);
        let sinr = crate::model::sinr(&ch, &res.precoder).unwrap();
        let t = crate::model::min_weighted(&sinr, &eta);
        assert!((t / res.t - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_options() {
        let outer = single_group_outer(CMatrix::from_columns(1, &[vec![c(1.0, 0.0)]]).unwrap());
        let bad = ScaOptions {
            rel_tol: 0.0,
            ..ScaOptions::default()
        };
        assert!(qos_sca_inner(&outer, &vec![vec![1.0]], &bad).is_err());
        assert!(qos_sca_inner(&outer, &vec![vec![-1.0]], &ScaOptions::default()).is_err());
        assert!(mmf_sca_inner(&outer, &vec![vec![1.0]], 0.0, &ScaOptions::default()).is_err());
    }

    #[test]
    fn flop_examples() {
        assert_eq!(flop_estimate_sca(50, &[4], 0), 8 * 50 * 50);
        let f = flop_breakdown_sca(100, &[10, 10, 10], 0);
        assert_eq!(f.composition, 192_000);
        assert_eq!(f.total, f.bdzf + 192_000);
        let mut last = 0;
        for it in 0..5 {
            let v = flop_estimate_sca(100, &[10, 10, 10], it);
            assert!(v > last || it == 0);
            last = v;
        }
    }
}
