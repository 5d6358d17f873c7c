//! Convex kernels for the successive convex approximation steps.
//!
//! [`min_norm`] finds the minimum-norm complex vector in an intersection of real
//! half-spaces `2 Re(a_k^H c) ≥ b_k`. It works on the dual
//!
//! ```text
//!     maximize  Σ λ_k b_k / 2 − ½ ‖Σ λ_k a_k‖²   subject to λ ≥ 0,   c = Σ λ_k a_k
//! ```
//!
//! with Hildreth's coordinate ascent to locate the support, followed by an exact
//! Lawson–Hanson style active-set pass on the Gram matrix `M_kl = Re(a_k^H a_l)`.
//! Large instances skip the exact pass and rely on the sweeps alone.
//!
//! [`max_min_ball`] maximises the worst weighted linear margin under a total
//! power budget by bisecting on the margin level, each probe being a set of
//! per-group [`min_norm`] solves sharing one Gram matrix.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{axpy, cholesky_solve, norm_sqr, real_dot, CVector};

/// Sweep cap for the coordinate-ascent fallback.
pub const MAX_SWEEPS: usize = 10_000;
/// Sweeps spent locating the support before the exact pass.
pub const WARM_SWEEPS: usize = 25;
/// Instances with `dim · constraints` above this skip the exact active-set pass.
pub const EXACT_THRESHOLD: usize = 20_000;
/// Bisection step cap in [`max_min_ball`].
pub const MAX_BISECTIONS: usize = 60;

const PIVOT_TOL: f64 = 1e-12;

/// Real half-spaces `2 Re(a_k^H c) ≥ b_k` over complex vectors `c`.
#[derive(Clone, Debug)]
pub struct HalfSpaceSet {
    normals: Vec<CVector>,
    offsets: Vec<f64>,
}

impl HalfSpaceSet {
    pub fn new(normals: Vec<CVector>, offsets: Vec<f64>) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(Error::DimensionMismatch {
                expected: normals.len(),
                found: offsets.len(),
            });
        }
        if let Some(first) = normals.first() {
            let n = first.len();
            if let Some(bad) = normals.iter().find(|a| a.len() != n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: bad.len(),
                });
            }
        }
        if normals.iter().any(|a| !(norm_sqr(a) > 0.0)) {
            return Err(Error::Degenerate("half-space normal has zero norm".into()));
        }
        if offsets.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("half-space offsets must be finite".into()));
        }
        Ok(Self { normals, offsets })
    }

    /// The empty intersection; its minimum-norm point is the (empty) origin.
    pub fn empty() -> Self {
        Self {
            normals: Vec::new(),
            offsets: Vec::new(),
        }
    }

    pub fn normals(&self) -> &[CVector] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.normals.first().map_or(0, Vec::len)
    }

    /// `max_k (b_k − 2 Re(a_k^H c))⁺`.
    pub fn max_violation(&self, c: &[Complex64]) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| (b - 2.0 * real_dot(a, c)).max(0.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct MinNormSolution {
    pub point: CVector,
    /// Dual multipliers; `point = Σ λ_k a_k`.
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub sweeps: usize,
    pub exact: bool,
}

impl MinNormSolution {
    pub fn objective(&self) -> f64 {
        norm_sqr(&self.point)
    }
}

/// Dual of a minimum-norm problem with fixed normals; offsets vary per solve.
#[derive(Clone, Debug)]
pub(crate) struct DualQp<'a> {
    normals: &'a [CVector],
    /// Row-major `m × m` Gram matrix `Re(a_k^H a_l)`.
    gram: Vec<f64>,
}

struct DualSolution {
    lambda: Vec<f64>,
    sweeps: usize,
    exact: bool,
}

impl<'a> DualQp<'a> {
    pub(crate) fn new(normals: &'a [CVector]) -> Self {
        let m = normals.len();
        let mut gram = vec![0.0; m * m];
        for k in 0..m {
            for l in k..m {
                let v = real_dot(&normals[k], &normals[l]);
                gram[k * m + l] = v;
                gram[l * m + k] = v;
            }
        }
        Self { normals, gram }
    }

    fn m(&self) -> usize {
        self.normals.len()
    }

    fn gram_times(&self, lambda: &[f64]) -> Vec<f64> {
        let m = self.m();
        (0..m)
            .map(|k| (0..m).map(|l| self.gram[k * m + l] * lambda[l]).sum())
            .collect()
    }

    fn primal(&self, lambda: &[f64]) -> CVector {
        let n = self.normals.first().map_or(0, Vec::len);
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        for (a, &l) in self.normals.iter().zip(lambda) {
            if l != 0.0 {
                axpy(Complex64::new(l, 0.0), a, &mut c);
            }
        }
        c
    }

    /// Hildreth coordinate ascent from `lambda`; returns sweeps used and whether the
    /// largest half-margin violation dropped below `tol`.
    fn hildreth(&self, q: &[f64], lambda: &mut [f64], max_sweeps: usize, tol: f64) -> (usize, bool) {
        let m = self.m();
        let mut ml = self.gram_times(lambda);
        for sweep in 1..=max_sweeps {
            let mut worst = 0.0f64;
            for k in 0..m {
                let r = q[k] - ml[k];
                let step = (r / self.gram[k * m + k]).max(-lambda[k]);
                if step != 0.0 {
                    lambda[k] += step;
                    for (l, v) in ml.iter_mut().enumerate() {
                        *v += step * self.gram[l * m + k];
                    }
                }
                if lambda[k] > 0.0 {
                    worst = worst.max(r.abs());
                } else {
                    worst = worst.max(r);
                }
            }
            if worst <= tol {
                return (sweep, true);
            }
        }
        (max_sweeps, false)
    }

    fn solve_support(&self, support: &[usize], rhs: &[f64]) -> Option<Vec<f64>> {
        let m = self.m();
        let p = support.len();
        let mut sub = vec![0.0; p * p];
        for (r, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                sub[r * p + c] = self.gram[i * m + j];
            }
        }
        cholesky_solve(&sub, p, rhs, PIVOT_TOL)
    }

    /// Raises `lambda[k]` along the null direction of the Gram when normal `k` is a
    /// combination `Σ β_i a_i` of the rest of the support, until some `lambda[i]`
    /// reaches zero. The dual objective grows at rate `q_k − β·q` on this ray.
    /// `None` when no coordinate blocks the ray, i.e. the primal is infeasible.
    fn dependent_step(&self, support: &[usize], k: usize, lambda: &mut [f64]) -> Option<usize> {
        let m = self.m();
        let rest: Vec<usize> = support.iter().copied().filter(|&i| i != k).collect();
        let col: Vec<f64> = rest.iter().map(|&i| self.gram[i * m + k]).collect();
        let beta = self.solve_support(&rest, &col)?;
        let mut t = f64::INFINITY;
        let mut blocking = None;
        for (&i, &b) in rest.iter().zip(&beta) {
            if b > 0.0 && lambda[i] / b < t {
                t = lambda[i] / b;
                blocking = Some(i);
            }
        }
        let drop = blocking?;
        for (&i, &b) in rest.iter().zip(&beta) {
            lambda[i] = (lambda[i] - t * b).max(0.0);
        }
        lambda[k] += t;
        lambda[drop] = 0.0;
        Some(drop)
    }

    /// Lawson–Hanson active-set iteration started from a nonnegative `lambda`.
    /// Returns `None` if a reduced system is singular or the iteration stalls.
    fn active_set(&self, q: &[f64], mut lambda: Vec<f64>, tol: f64) -> Option<Vec<f64>> {
        let m = self.m();
        let mut support: Vec<usize> = (0..m).filter(|&k| lambda[k] > 0.0).collect();
        let mut just_added: Option<usize> = None;
        for _ in 0..(3 * m + 10) {
            // inner loop: move toward the unconstrained optimum on the support
            for _ in 0..=m {
                if support.is_empty() {
                    break;
                }
                let rhs: Vec<f64> = support.iter().map(|&i| q[i]).collect();
                let Some(s) = self.solve_support(&support, &rhs) else {
                    let k = just_added?;
                    let drop = self.dependent_step(&support, k, &mut lambda)?;
                    support.retain(|&i| i != drop && (i == k || lambda[i] > 0.0));
                    for i in 0..m {
                        if !support.contains(&i) {
                            lambda[i] = 0.0;
                        }
                    }
                    continue;
                };
                if s.iter().all(|&v| v > 0.0) {
                    for (&i, &v) in support.iter().zip(&s) {
                        lambda[i] = v;
                    }
                    break;
                }
                // step toward s until the first coordinate reaches zero
                let mut alpha = 1.0f64;
                let mut blocking = None;
                for (&i, &v) in support.iter().zip(&s) {
                    if v <= 0.0 {
                        let a = if lambda[i] > 0.0 {
                            lambda[i] / (lambda[i] - v)
                        } else {
                            0.0
                        };
                        if a <= alpha {
                            alpha = a;
                            blocking = Some(i);
                        }
                    }
                }
                for (&i, &v) in support.iter().zip(&s) {
                    lambda[i] += alpha * (v - lambda[i]);
                }
                support.retain(|&i| {
                    if Some(i) == blocking || lambda[i] <= 0.0 {
                        lambda[i] = 0.0;
                        false
                    } else {
                        true
                    }
                });
                if let Some(t) = just_added {
                    if !support.contains(&t) {
                        return None;
                    }
                }
            }
            let ml = self.gram_times(&lambda);
            let mut best = None;
            let mut best_w = tol;
            for k in 0..m {
                if support.contains(&k) {
                    continue;
                }
                let w = q[k] - ml[k];
                if w > best_w {
                    best_w = w;
                    best = Some(k);
                }
            }
            match best {
                None => return Some(lambda),
                Some(k) => {
                    support.push(k);
                    just_added = Some(k);
                }
            }
        }
        None
    }

    /// Solves the dual for half-margins `q_k = b_k / 2`.
    fn solve(&self, q: &[f64], warm: Option<&[f64]>) -> Result<DualSolution> {
        let m = self.m();
        let q_scale = q.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if m == 0 || q.iter().all(|&v| v <= 0.0) {
            return Ok(DualSolution {
                lambda: vec![0.0; m],
                sweeps: 0,
                exact: true,
            });
        }
        let tol = 1e-13 * q_scale;
        let mut lambda = match warm {
            Some(w) if w.len() == m => w.iter().map(|v| v.max(0.0)).collect(),
            _ => vec![0.0; m],
        };
        let n = self.normals[0].len();
        let exact_allowed = n * m <= EXACT_THRESHOLD;

        let mut sweeps = 0;
        if exact_allowed {
            let (s, _) = self.hildreth(q, &mut lambda, WARM_SWEEPS, tol);
            sweeps += s;
            // The warm support can hold more normals than the real dimension, which
            // makes the reduced Gram singular; a cold start keeps the support independent.
            let starts = [lambda.clone(), vec![0.0; m]];
            for start in starts {
                if let Some(l) = self.active_set(q, start, tol) {
                    if self.max_half_violation(q, &l) <= 1e-10 * q_scale {
                        return Ok(DualSolution {
                            lambda: l,
                            sweeps,
                            exact: true,
                        });
                    }
                }
            }
        }
        let (s, converged) = self.hildreth(q, &mut lambda, MAX_SWEEPS, tol);
        sweeps += s;
        let violation = self.max_half_violation(q, &lambda);
        if !converged && violation > 1e-9 * q_scale.max(1e-300) {
            return Err(Error::InfeasibleSubproblem {
                violation: 2.0 * violation,
            });
        }
        Ok(DualSolution {
            lambda,
            sweeps,
            exact: false,
        })
    }

    fn max_half_violation(&self, q: &[f64], lambda: &[f64]) -> f64 {
        let ml = self.gram_times(lambda);
        q.iter()
            .zip(&ml)
            .map(|(a, b)| (a - b).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// KKT residual of a primal/dual pair for `2 Re(a_k^H c) ≥ b_k`: the largest of
/// stationarity `‖c − Σλa‖`, primal violation, dual sign violation and
/// complementary slackness, each scaled by the problem magnitude.
pub fn kkt_residual(set: &HalfSpaceSet, c: &[Complex64], lambda: &[f64]) -> f64 {
    let cn = norm_sqr(c).sqrt().max(1.0);
    let mut recon = vec![Complex64::new(0.0, 0.0); c.len()];
    for (a, &l) in set.normals.iter().zip(lambda) {
        axpy(Complex64::new(l, 0.0), a, &mut recon);
    }
    let stat = recon
        .iter()
        .zip(c)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / cn;
    let b_scale = set.offsets.iter().fold(1.0f64, |acc, b| acc.max(b.abs()));
    let mut worst = stat;
    for ((a, &b), &l) in set.normals.iter().zip(&set.offsets).zip(lambda) {
        let slack = 2.0 * real_dot(a, c) - b;
        worst = worst.max((-slack).max(0.0) / b_scale);
        worst = worst.max((-l).max(0.0));
        worst = worst.max((l * slack).abs() / (cn * cn));
    }
    worst
}

/// Minimum-norm point of a half-space intersection.
pub fn min_norm(set: &HalfSpaceSet) -> Result<MinNormSolution> {
    min_norm_warm(set, None)
}

/// As [`min_norm`], optionally seeded with an initial dual vector.
pub fn min_norm_warm(set: &HalfSpaceSet, warm: Option<&[f64]>) -> Result<MinNormSolution> {
    let dual = DualQp::new(&set.normals);
    let q: Vec<f64> = set.offsets.iter().map(|b| b / 2.0).collect();
    let sol = dual.solve(&q, warm)?;
    let point = if set.is_empty() {
        Vec::new()
    } else {
        dual.primal(&sol.lambda)
    };
    let kkt = kkt_residual(set, &point, &sol.lambda);
    Ok(MinNormSolution {
        point,
        multipliers: sol.lambda,
        kkt_residual: kkt,
        sweeps: sol.sweeps,
        exact: sol.exact,
    })
}

/// One weighted linear margin `(2 Re(a^H c_group) − q) / weight ≥ t`.
#[derive(Clone, Debug)]
pub struct BallConstraint {
    pub group: usize,
    pub normal: CVector,
    pub offset: f64,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct MaxMinBall {
    pub inner: Vec<CVector>,
    pub level: f64,
    pub power: f64,
    /// `(t, minimal power to reach t)` for every probe, in evaluation order.
    pub probes: Vec<(f64, f64)>,
}

struct GroupDual<'a> {
    dual: DualQp<'a>,
    offsets: Vec<f64>,
    weights: Vec<f64>,
    warm: Vec<f64>,
}

/// Maximises `t` subject to every [`BallConstraint`] and `Σ_j ‖c_j‖² ≤ budget`.
///
/// `floor`, when given, is a level known to be reachable within the budget (for
/// example the one attained by the linearisation point); bisection starts there so
/// the returned level never falls below it.
pub fn max_min_ball(
    constraints: &[BallConstraint],
    budget: f64,
    floor: Option<f64>,
) -> Result<MaxMinBall> {
    if !(budget > 0.0) {
        return Err(Error::Precondition(format!(
            "power budget must be positive, got {budget}"
        )));
    }
    if constraints.is_empty() {
        return Err(Error::Precondition("no constraints given".into()));
    }
    let n_groups = constraints.iter().map(|c| c.group).max().unwrap() + 1;
    let mut normals: Vec<Vec<CVector>> = vec![Vec::new(); n_groups];
    let mut offsets: Vec<Vec<f64>> = vec![Vec::new(); n_groups];
    let mut weights: Vec<Vec<f64>> = vec![Vec::new(); n_groups];
    for c in constraints {
        if !(c.weight > 0.0) {
            return Err(Error::Precondition("weights must be positive".into()));
        }
        if !(norm_sqr(&c.normal) > 0.0) {
            return Err(Error::Degenerate(format!(
                "group {} has a zero linearised direction; no finite margin is reachable",
                c.group
            )));
        }
        normals[c.group].push(c.normal.clone());
        offsets[c.group].push(c.offset);
        weights[c.group].push(c.weight);
    }
    if let Some(j) = normals.iter().position(Vec::is_empty) {
        return Err(Error::Precondition(format!("group {j} has no constraints")));
    }
    let dims: Vec<usize> = normals.iter().map(|g| g[0].len()).collect();
    let mut groups: Vec<GroupDual> = normals
        .iter()
        .zip(offsets)
        .zip(weights)
        .map(|((nm, off), w)| GroupDual {
            dual: DualQp::new(nm),
            warm: vec![0.0; off.len()],
            offsets: off,
            weights: w,
        })
        .collect();

    let mut probes = Vec::new();
    // minimal power to reach level t, with the per-group points
    let mut probe = |t: f64, groups: &mut [GroupDual]| -> (f64, Option<Vec<CVector>>) {
        let mut total = 0.0;
        let mut inner = Vec::with_capacity(groups.len());
        for g in groups.iter_mut() {
            let q: Vec<f64> = g
                .offsets
                .iter()
                .zip(&g.weights)
                .map(|(o, w)| (o + t * w) / 2.0)
                .collect();
            match g.dual.solve(&q, Some(&g.warm)) {
                Ok(sol) => {
                    let c = g.dual.primal(&sol.lambda);
                    total += norm_sqr(&c);
                    g.warm = sol.lambda;
                    inner.push(c);
                }
                Err(_) => {
                    probes.push((t, f64::INFINITY));
                    return (f64::INFINITY, None);
                }
            }
        }
        probes.push((t, total));
        (total, Some(inner))
    };

    let base_floor = offsets_floor(&groups);
    let slack = budget * (1.0 + 1e-12);
    let mut lo = base_floor;
    let mut lo_point: Option<(f64, Vec<CVector>)> = None;
    if let Some(f) = floor {
        if f > base_floor {
            let (p, pt) = probe(f, &mut groups);
            if p <= budget * (1.0 + 1e-9) {
                lo = f;
                lo_point = pt.map(|x| (p, x));
            }
        }
    }
    if lo_point.is_none() {
        let (p, pt) = probe(lo, &mut groups);
        lo_point = pt.map(|x| (p, x));
    }
    let Some(mut best) = lo_point else {
        return Err(Error::Degenerate("no feasible margin level found".into()));
    };

    let mut step = lo.abs().max(1.0);
    let mut hi = lo + step;
    let mut doublings = 0;
    loop {
        let (p, pt) = probe(hi, &mut groups);
        if p <= slack {
            lo = hi;
            best = (p, pt.unwrap());
            step *= 2.0;
            hi = lo + step;
            doublings += 1;
            if doublings > 200 {
                return Err(Error::Degenerate("margin level is unbounded".into()));
            }
        } else {
            break;
        }
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (p, pt) = probe(mid, &mut groups);
        if p <= slack {
            lo = mid;
            best = (p, pt.unwrap());
        } else {
            hi = mid;
        }
    }
    let (power, inner) = best;
    debug_assert_eq!(inner.len(), dims.len());
    Ok(MaxMinBall {
        inner,
        level: lo,
        power,
        probes,
    })
}

/// Level reachable with zero power: `min_k −q_k / w_k`.
fn offsets_floor(groups: &[GroupDual]) -> f64 {
    groups
        .iter()
        .flat_map(|g| g.offsets.iter().zip(&g.weights).map(|(o, w)| -o / w))
        .fold(f64::INFINITY, f64::min)
}
