//! Brute-force reference solvers for small instances.
//!
//! Nothing here is used on a solve path. Each routine takes only problem data and
//! reaches its answer by exhaustive enumeration or gridding, with linear algebra
//! delegated to `nalgebra` so it shares no code with the kernels it checks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::qp::HalfSpaceSet;

#[derive(Clone, Copy, Debug)]
pub struct OracleBudget {
    pub max_dim: usize,
    pub max_constraints: usize,
    pub grid_points: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            max_dim: 6,
            max_constraints: 6,
            grid_points: 64,
        }
    }
}

impl OracleBudget {
    const HARD_DIM: usize = 6;
    const HARD_CONSTRAINTS: usize = 6;
    const HARD_GRID: usize = 4096;

    fn check(&self, dim: usize, constraints: usize) -> Result<()> {
        if self.max_dim > Self::HARD_DIM
            || self.max_constraints > Self::HARD_CONSTRAINTS
            || self.grid_points > Self::HARD_GRID
        {
            return Err(Error::OracleBudget(format!(
                "budget {self:?} exceeds the hard limits ({}, {}, {})",
                Self::HARD_DIM,
                Self::HARD_CONSTRAINTS,
                Self::HARD_GRID
            )));
        }
        if dim > self.max_dim || constraints > self.max_constraints {
            return Err(Error::OracleBudget(format!(
                "instance of dimension {dim} with {constraints} constraints exceeds {self:?}"
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::OracleBudget("grid needs at least two points".into()));
        }
        Ok(())
    }
}

fn to_real(v: &[Complex64]) -> DVector<f64> {
    DVector::from_iterator(2 * v.len(), v.iter().flat_map(|z| [z.re, z.im]))
}

fn from_real(x: &DVector<f64>) -> CVector {
    x.as_slice()
        .chunks(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect()
}

#[derive(Clone, Debug)]
pub struct EnumeratedSolution {
    pub point: CVector,
    pub objective: f64,
    pub active: Vec<usize>,
}

/// Exact minimum-norm point of `{c : 2 Re(a_k^H c) ≥ b_k}` by trying every subset of
/// constraints as the active set and solving its KKT system
///
/// ```text
///     [ I    −A_S ] [x]   [0  ]
///     [ A_Sᵀ  0   ] [λ] = [b_S/2]
/// ```
///
/// in the real representation `x ∈ R^{2n}`.
pub fn enumerate_active_sets(
    set: &HalfSpaceSet,
    budget: &OracleBudget,
) -> Result<EnumeratedSolution> {
    let m = set.len();
    let n = set.dim();
    budget.check(n, m)?;
    if m == 0 {
        return Ok(EnumeratedSolution {
            point: Vec::new(),
            objective: 0.0,
            active: Vec::new(),
        });
    }
    let normals: Vec<DVector<f64>> = set.normals().iter().map(|a| to_real(a)).collect();
    let half: Vec<f64> = set.offsets().iter().map(|b| b / 2.0).collect();
    let scale = half.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let dim = 2 * n;

    let mut best: Option<EnumeratedSolution> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
        let p = active.len();
        if p > dim {
            continue;
        }
        let size = dim + p;
        let mut kkt = DMatrix::<f64>::zeros(size, size);
        let mut rhs = DVector::<f64>::zeros(size);
        for i in 0..dim {
            kkt[(i, i)] = 1.0;
        }
        for (col, &k) in active.iter().enumerate() {
            for i in 0..dim {
                kkt[(i, dim + col)] = -normals[k][i];
                kkt[(dim + col, i)] = normals[k][i];
            }
            rhs[dim + col] = half[k];
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            continue;
        };
        // singular systems can come back with garbage; verify the solve
        if kkt_matrix_check(&sol, dim, &active, &normals, &half) > 1e-9 * scale {
            continue;
        }
        let x = sol.rows(0, dim).into_owned();
        let lambda = sol.rows(dim, p);
        if lambda.iter().any(|&l| l < -1e-12 * scale) {
            continue;
        }
        let feasible = normals
            .iter()
            .zip(&half)
            .all(|(a, &q)| a.dot(&x) >= q - 1e-9 * scale);
        if !feasible {
            continue;
        }
        let objective = x.norm_squared();
        if best.as_ref().map_or(true, |b| objective < b.objective) {
            best = Some(EnumeratedSolution {
                point: from_real(&x),
                objective,
                active,
            });
        }
    }
    best.ok_or(Error::InfeasibleSubproblem {
        violation: f64::INFINITY,
    })
}

fn kkt_matrix_check(
    sol: &DVector<f64>,
    dim: usize,
    active: &[usize],
    normals: &[DVector<f64>],
    half: &[f64],
) -> f64 {
    let x = sol.rows(0, dim);
    let mut recon = DVector::<f64>::zeros(dim);
    for (col, &k) in active.iter().enumerate() {
        recon += &normals[k] * sol[dim + col];
    }
    let mut worst = (x - recon).amax();
    for &k in active {
        worst = worst.max((normals[k].dot(&x) - half[k]).abs());
    }
    worst
}

#[derive(Clone, Copy, Debug)]
pub struct GridAlpha {
    pub alpha: Complex64,
    /// Magnitude spacing of the grid.
    pub resolution: f64,
}

fn cdot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Smallest `|α|` on a magnitude × phase grid with `|ḡ^H (c_prev + α d)|² ≥ η`.
///
/// Magnitudes span `[0, R]` with `R = (|ḡ^H c_prev| + √η) / |ḡ^H d|`, a radius at
/// which every phase is feasible.
pub fn grid_min_alpha(
    g: &[Complex64],
    d: &[Complex64],
    c_prev: &[Complex64],
    eta: f64,
    budget: &OracleBudget,
) -> Result<GridAlpha> {
    budget.check(0, 0)?;
    let gd = cdot(g, d);
    let gc = cdot(g, c_prev);
    if gd.norm() == 0.0 {
        return Err(Error::DegenerateDirection("ḡ^H d = 0".into()));
    }
    let radius = (gc.norm() + eta.sqrt()) / gd.norm();
    let points = budget.grid_points;
    let step = radius / (points - 1) as f64;
    let mut best = Complex64::new(radius, 0.0);
    for p in 0..points {
        let phase = 2.0 * std::f64::consts::PI * p as f64 / points as f64;
        let unit = Complex64::from_polar(1.0, phase);
        for i in 0..points {
            let mag = step * i as f64;
            if mag >= best.norm() {
                break;
            }
            let alpha = unit * mag;
            if (gc + alpha * gd).norm_sqr() >= eta {
                best = alpha;
                break;
            }
        }
    }
    Ok(GridAlpha {
        alpha: best,
        resolution: step,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct GridQos {
    pub power: f64,
    /// Magnitude and phase spacing of the direction grid.
    pub magnitude_step: f64,
    pub phase_step: f64,
}

/// Best power found by gridding single-group precoders of dimension ≤ 2 for ≤ 2 UEs.
///
/// Candidates are `(m_1, m_2 e^{iφ})` with magnitudes in `[0, 1]` (the common phase is
/// irrelevant); each candidate is scaled to meet the most violated SNR target with
/// equality, so every candidate is feasible and the minimum is an upper bound on
/// the optimal power.
pub fn grid_qos_single_group(
    effective: &CMatrix,
    eta: &[f64],
    budget: &OracleBudget,
) -> Result<GridQos> {
    let dim = effective.rows();
    let k = effective.cols();
    if dim > 2 || k > 2 {
        return Err(Error::OracleBudget(format!(
            "grid QoS handles dimension ≤ 2 and ≤ 2 UEs, got {dim} and {k}"
        )));
    }
    budget.check(dim, k)?;
    if eta.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: eta.len(),
        });
    }
    let points = budget.grid_points;
    let mag_step = 1.0 / (points - 1) as f64;
    let phase_step = 2.0 * std::f64::consts::PI / points as f64;
    let eval = |c: &[Complex64]| -> f64 {
        let mut worst = 0.0f64;
        for (col, &e) in effective.columns().zip(eta) {
            let s = cdot(col, c).norm_sqr();
            if s == 0.0 {
                return f64::INFINITY;
            }
            worst = worst.max(e / s);
        }
        worst * c.iter().map(|z| z.norm_sqr()).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    if dim == 1 {
        best = eval(&[Complex64::new(1.0, 0.0)]);
    } else {
        for i in 0..points {
            let m1 = mag_step * i as f64;
            for l in 0..points {
                let m2 = mag_step * l as f64;
                for p in 0..points {
                    let c = [
                        Complex64::new(m1, 0.0),
                        Complex64::from_polar(m2, phase_step * p as f64),
                    ];
                    best = best.min(eval(&c));
                }
            }
        }
    }
    Ok(GridQos {
        power: best,
        magnitude_step: mag_step,
        phase_step,
    })
}
