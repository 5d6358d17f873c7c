//! Closed-form conversions between QoS and MMF answers.
//!
//! Under BDZF the groups only share the power budget, so a QoS answer with power
//! `P_app` and worst normalised SNR `λ` scales to any budget `P` with objective
//! `(P/P_app)·λ`, and an MMF answer with objective `t` scales down by `√t` to a QoS
//! answer. Both directions hold for approximate answers, which is what lets the
//! heuristic serve both problems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sqr, scale, CMatrix, CVector};
use crate::model::{ChannelSet, Precoder, Targets};
use crate::nullspace::{compose, compute_outer_layer, OuterLayer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QosSolution {
    pub precoder: Precoder,
    pub power: f64,
    /// `min_jk |ḡ_jk^H c_j|² / η_jk`; at least one for a feasible answer.
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmfSolution {
    pub precoder: Precoder,
    pub budget: f64,
    pub objective: f64,
}

/// `min_jk |ḡ_jk^H c_j|² / η_jk`.
pub fn min_weighted_snr(outer: &OuterLayer, inner: &[CVector], eta: &Targets) -> Result<f64> {
    check_shapes(&outer.effective, inner, eta)?;
    Ok(outer
        .effective
        .iter()
        .zip(inner)
        .zip(eta)
        .flat_map(|((eff, c), e)| {
            eff.columns()
                .zip(e.iter())
                .map(|(g, t)| dot(g, c).norm_sqr() / t)
                .collect::<Vec<_>>()
        })
        .fold(f64::INFINITY, f64::min))
}

fn check_shapes(effective: &[CMatrix], inner: &[CVector], eta: &Targets) -> Result<()> {
    if inner.len() != effective.len() || eta.len() != effective.len() {
        return Err(Error::DimensionMismatch {
            expected: effective.len(),
            found: if inner.len() != effective.len() { inner.len() } else { eta.len() },
        });
    }
    for ((eff, c), e) in effective.iter().zip(inner).zip(eta) {
        if c.len() != eff.rows() {
            return Err(Error::DimensionMismatch {
                expected: eff.rows(),
                found: c.len(),
            });
        }
        if e.len() != eff.cols() {
            return Err(Error::DimensionMismatch {
                expected: eff.cols(),
                found: e.len(),
            });
        }
    }
    Ok(())
}

fn inner_power(inner: &[CVector]) -> f64 {
    inner.iter().map(|c| norm_sqr(c)).sum()
}

impl QosSolution {
    /// Composes `inner` and measures its power and `λ`.
    pub fn evaluate(outer: &OuterLayer, inner: Vec<CVector>, eta: &Targets) -> Result<Self> {
        let lambda = min_weighted_snr(outer, &inner, eta)?;
        let power = inner_power(&inner);
        Ok(Self {
            precoder: compose(outer, inner)?,
            power,
            lambda,
        })
    }
}

impl MmfSolution {
    pub fn evaluate(outer: &OuterLayer, inner: Vec<CVector>, eta: &Targets, budget: f64) -> Result<Self> {
        let objective = min_weighted_snr(outer, &inner, eta)?;
        Ok(Self {
            precoder: compose(outer, inner)?,
            budget,
            objective,
        })
    }
}

/// Scales each `c_j` so that its most violated target is met with equality.
pub fn rescale_to_feasible(inner: &[CVector], effective: &[CMatrix], eta: &Targets) -> Result<Vec<CVector>> {
    check_shapes(effective, inner, eta)?;
    inner
        .iter()
        .zip(effective)
        .zip(eta)
        .enumerate()
        .map(|(j, ((c, eff), e))| {
            let mut worst = 0.0f64;
            for (g, t) in eff.columns().zip(e) {
                let s = dot(g, c).norm_sqr();
                if !(s > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "group {j}: inner vector is orthogonal to a UE channel"
                    )));
                }
                worst = worst.max(t / s);
            }
            Ok(scale(worst.sqrt(), c))
        })
        .collect()
}

/// Rescales a QoS answer to spend exactly `budget`.
pub fn qos_to_mmf(sol: &QosSolution, outer: &OuterLayer, eta: &Targets, budget: f64) -> Result<MmfSolution> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::Domain(format!(
            "power budget must be positive, got {budget}"
        )));
    }
    // never trust the stored figures
    let lambda = min_weighted_snr(outer, &sol.precoder.inner, eta)?;
    let used = inner_power(&sol.precoder.inner);
    if lambda < 1.0 - 1e-9 {
        return Err(Error::Precondition(format!(
            "QoS answer is infeasible: worst normalised SNR {lambda}"
        )));
    }
    let ratio = budget / used;
    let inner = sol.precoder.inner.iter().map(|c| scale(ratio.sqrt(), c)).collect();
    Ok(MmfSolution {
        precoder: compose(outer, inner)?,
        budget,
        objective: ratio * lambda,
    })
}

/// Scales an MMF answer down by `√t` so every target is just met.
pub fn mmf_to_qos(sol: &MmfSolution, outer: &OuterLayer, eta: &Targets) -> Result<QosSolution> {
    let t = min_weighted_snr(outer, &sol.precoder.inner, eta)?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("MMF objective must be positive, got {t}")));
    }
    let inner: Vec<CVector> = sol.precoder.inner.iter().map(|c| scale(1.0 / t.sqrt(), c)).collect();
    QosSolution::evaluate(outer, inner, eta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub alpha: f64,
    pub power: f64,
    pub scaled_power: f64,
    /// `|P(αη) / (α P(η)) − 1|`.
    pub power_deviation: f64,
    /// `max_j ‖c_j(αη) − √α c_j(η)‖ / (√α ‖c_j(η)‖)`.
    pub precoder_deviation: f64,
}

/// Runs `solver` on `η` and on `αη` and measures how far the answers are from
/// `P(αη) = αP(η)` and `c(αη) = √α c(η)`.
pub fn check_scaling_law<F>(solver: F, channels: &ChannelSet, eta: &Targets, alpha: f64) -> Result<ScalingReport>
where
    F: Fn(&OuterLayer, &Targets) -> Result<Vec<CVector>>,
{
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("scaling factor must be positive, got {alpha}")));
    }
    let outer = compute_outer_layer(channels)?;
    let scaled_eta: Targets = eta.iter().map(|e| e.iter().map(|v| v * alpha).collect()).collect();
    let base = solver(&outer, eta)?;
    let scaled = solver(&outer, &scaled_eta)?;
    check_shapes(&outer.effective, &base, eta)?;
    check_shapes(&outer.effective, &scaled, eta)?;
    let power = inner_power(&base);
    let scaled_power = inner_power(&scaled);
    let root = alpha.sqrt();
    let precoder_deviation = base
        .iter()
        .zip(&scaled)
        .map(|(b, s)| {
            let diff: CVector = s.iter().zip(b).map(|(x, y)| x - y * root).collect();
            norm(&diff) / (root * norm(b))
        })
        .fold(0.0, f64::max);
    Ok(ScalingReport {
        alpha,
        power,
        scaled_power,
        power_deviation: (scaled_power / (alpha * power) - 1.0).abs(),
        precoder_deviation,
    })
}
