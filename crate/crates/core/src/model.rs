//! Single-cell downlink system model: UE placement, path loss, Rayleigh fading,
//! MMSE channel estimation and SINR evaluation.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sqr, CMatrix, CVector};
use crate::rng::{substream, Purpose};

/// Per-UE SINR targets (or MMF weights), indexed `[group][ue]`.
pub type Targets = Vec<Vec<f64>>;

/// Targets equal to `eta` for every UE.
pub fn uniform_targets(group_sizes: &[usize], eta: f64) -> Targets {
    group_sizes.iter().map(|&k| vec![eta; k]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_antennas: usize,
    pub group_sizes: Vec<usize>,
    pub cell_radius_m: f64,
    pub exclusion_radius_m: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub master_seed: u64,
    /// Per-UE noise powers in watts, replacing the PSD × bandwidth value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power_override_w: Option<Vec<Vec<f64>>>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_antennas: 80,
            group_sizes: vec![10, 10, 10],
            cell_radius_m: 900.0,
            exclusion_radius_m: 100.0,
            noise_psd_dbm_hz: -174.0,
            bandwidth_hz: 20e6,
            master_seed: 0,
            noise_power_override_w: None,
        }
    }
}

impl SystemConfig {
    pub fn n_groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn total_users(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.group_sizes.is_empty() {
            return bad("at least one group is required".into());
        }
        if self.group_sizes.contains(&0) {
            return bad("every group needs at least one UE".into());
        }
        let k = self.total_users();
        let k_min = *self.group_sizes.iter().min().unwrap();
        if self.n_antennas <= k - k_min {
            return bad(format!(
                "need more than K - min K_j = {} antennas, got {}",
                k - k_min,
                self.n_antennas
            ));
        }
        if !(self.exclusion_radius_m >= 0.0 && self.exclusion_radius_m < self.cell_radius_m) {
            return bad(format!(
                "exclusion radius {} must lie in [0, cell radius {})",
                self.exclusion_radius_m, self.cell_radius_m
            ));
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth_hz));
        }
        if let Some(ov) = &self.noise_power_override_w {
            if ov.len() != self.n_groups()
                || ov.iter().zip(&self.group_sizes).any(|(g, &k)| g.len() != k)
            {
                return bad("noise power override does not match the group structure".into());
            }
            if ov.iter().flatten().any(|&s| !(s > 0.0)) {
                return bad("noise powers must be positive".into());
            }
        }
        Ok(())
    }
}

/// Large-scale attenuation in dB at `distance_km`.
pub fn pathloss_db(distance_km: f64) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(Error::Domain(format!(
            "distance must be positive, got {distance_km} km"
        )));
    }
    Ok(-128.1 - 37.6 * distance_km.log10())
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Thermal noise power in watts over the configured bandwidth.
pub fn noise_power_w(config: &SystemConfig) -> f64 {
    let dbm = config.noise_psd_dbm_hz + 10.0 * config.bandwidth_hz.log10();
    db_to_linear(dbm - 30.0)
}

/// Channels of all UEs, either true or estimated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    /// One N×K_j matrix per group; column k is g_jk.
    pub groups: Vec<CMatrix>,
    /// σ_jk² in watts.
    pub noise_powers: Vec<Vec<f64>>,
    /// β_jk, linear scale.
    pub large_scale: Vec<Vec<f64>>,
    /// BS-to-UE distances in meters.
    pub distances_m: Vec<Vec<f64>>,
}

impl ChannelSet {
    pub fn n_antennas(&self) -> usize {
        self.groups.first().map_or(0, |g| g.rows())
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(CMatrix::cols).collect()
    }

    pub fn total_users(&self) -> usize {
        self.groups.iter().map(CMatrix::cols).sum()
    }

    /// Stable 64-bit fingerprint of the channel coefficients and noise powers.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for g in &self.groups {
            g.rows().hash(&mut h);
            g.cols().hash(&mut h);
            for z in g.as_slice() {
                z.re.to_bits().hash(&mut h);
                z.im.to_bits().hash(&mut h);
            }
        }
        for s in self.noise_powers.iter().flatten() {
            s.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

fn complex_gaussian<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Draws UE positions and Rayleigh channels for one trial.
///
/// Distances are uniform over the annulus area, `g_jk = sqrt(β_jk) h_jk` with
/// `h_jk ~ CN(0, I_N)`.
pub fn generate_channels(config: &SystemConfig, trial_seed: u64) -> Result<ChannelSet> {
    config.validate()?;
    let n = config.n_antennas;
    let sigma2 = noise_power_w(config);
    let mut placement = substream(trial_seed, Purpose::Placement);
    let mut fading = substream(trial_seed, Purpose::Fading);
    let (r0, r1) = (config.exclusion_radius_m, config.cell_radius_m);

    let mut groups = Vec::with_capacity(config.n_groups());
    let mut noise_powers = Vec::with_capacity(config.n_groups());
    let mut large_scale = Vec::with_capacity(config.n_groups());
    let mut distances_m = Vec::with_capacity(config.n_groups());
    for (j, &kj) in config.group_sizes.iter().enumerate() {
        let mut mat = CMatrix::zeros(n, kj);
        let mut betas = Vec::with_capacity(kj);
        let mut dists = Vec::with_capacity(kj);
        for k in 0..kj {
            let u: f64 = placement.gen();
            let d = (r0 * r0 + u * (r1 * r1 - r0 * r0)).sqrt();
            // exact zero distance only possible with r0 = 0 and u = 0
            let d = d.max(1e-3);
            let beta = db_to_linear(pathloss_db(d / 1000.0)?);
            let amp = beta.sqrt();
            for entry in mat.col_mut(k) {
                *entry = complex_gaussian(&mut fading, 1.0) * amp;
            }
            betas.push(beta);
            dists.push(d);
        }
        groups.push(mat);
        large_scale.push(betas);
        distances_m.push(dists);
        noise_powers.push(match &config.noise_power_override_w {
            Some(ov) => ov[j].clone(),
            None => vec![sigma2; kj],
        });
    }
    Ok(ChannelSet {
        groups,
        noise_powers,
        large_scale,
        distances_m,
    })
}

/// MMSE estimates from uplink pilots of length `pilot_len` and power `pilot_power_w`.
///
/// `ĝ = sqrt(pτ)β / (σ² + pτβ) · (sqrt(pτ) g + n)` with `n ~ CN(0, σ² I)`; with unit
/// pilot power this is the usual TDD estimator.
pub fn mmse_estimate(
    channels: &ChannelSet,
    pilot_power_w: f64,
    pilot_len: usize,
    trial_seed: u64,
) -> Result<ChannelSet> {
    let k = channels.total_users();
    if pilot_len < k {
        return Err(Error::Precondition(format!(
            "pilot length {pilot_len} is shorter than the number of UEs {k}"
        )));
    }
    if !(pilot_power_w > 0.0) {
        return Err(Error::Precondition(format!(
            "pilot power must be positive, got {pilot_power_w}"
        )));
    }
    let mut rng = substream(trial_seed, Purpose::PilotNoise);
    let pt = pilot_power_w * pilot_len as f64;
    let mut out = channels.clone();
    for (j, mat) in out.groups.iter_mut().enumerate() {
        for kk in 0..mat.cols() {
            let beta = channels.large_scale[j][kk];
            let sigma2 = channels.noise_powers[j][kk];
            let coef = pt.sqrt() * beta / (sigma2 + pt * beta);
            for entry in mat.col_mut(kk) {
                let noise = complex_gaussian(&mut rng, sigma2);
                *entry = (*entry * pt.sqrt() + noise) * coef;
            }
        }
    }
    Ok(out)
}

/// Inner (reduced-dimension) and optionally composite (full-array) precoding vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Precoder {
    pub inner: Vec<CVector>,
    pub composite: Option<Vec<CVector>>,
}

impl Precoder {
    pub fn from_inner(inner: Vec<CVector>) -> Self {
        Self {
            inner,
            composite: None,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.inner.len()
    }

    /// Multiplies every vector (inner and composite) by the real factor `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let sc = |v: &Vec<CVector>| v.iter().map(|x| crate::linalg::scale(s, x)).collect();
        Self {
            inner: sc(&self.inner),
            composite: self.composite.as_ref().map(sc),
        }
    }
}

/// Σ_j ‖w_j‖² when composite vectors are present, Σ_j ‖c_j‖² otherwise.
pub fn total_power(precoder: &Precoder) -> f64 {
    match &precoder.composite {
        Some(w) => w.iter().map(|x| norm_sqr(x)).sum(),
        None => precoder.inner.iter().map(|x| norm_sqr(x)).sum(),
    }
}

/// γ_jk for every UE given the composite precoder.
pub fn sinr(channels: &ChannelSet, precoder: &Precoder) -> Result<Vec<Vec<f64>>> {
    let w = precoder
        .composite
        .as_ref()
        .ok_or_else(|| Error::Precondition("SINR needs composite precoding vectors".into()))?;
    if w.len() != channels.n_groups() {
        return Err(Error::DimensionMismatch {
            expected: channels.n_groups(),
            found: w.len(),
        });
    }
    let n = channels.n_antennas();
    if let Some(bad) = w.iter().find(|x| x.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let mut out = Vec::with_capacity(w.len());
    for (j, mat) in channels.groups.iter().enumerate() {
        let mut row = Vec::with_capacity(mat.cols());
        for (k, g) in mat.columns().enumerate() {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for (i, wi) in w.iter().enumerate() {
                let p = dot(g, wi).norm_sqr();
                if i == j {
                    signal = p;
                } else {
                    interference += p;
                }
            }
            row.push(signal / (interference + channels.noise_powers[j][k]));
        }
        out.push(row);
    }
    Ok(out)
}

/// Inter-group interference power `Σ_{i≠j} |g_jk^H w_i|²` for every UE.
pub fn interference(channels: &ChannelSet, precoder: &Precoder) -> Result<Vec<Vec<f64>>> {
    let w = precoder
        .composite
        .as_ref()
        .ok_or_else(|| Error::Precondition("interference needs composite vectors".into()))?;
    Ok(channels
        .groups
        .iter()
        .enumerate()
        .map(|(j, mat)| {
            mat.columns()
                .map(|g| {
                    w.iter()
                        .enumerate()
                        .filter(|(i, _)| *i != j)
                        .map(|(_, wi)| dot(g, wi).norm_sqr())
                        .sum()
                })
                .collect()
        })
        .collect())
}

/// `min_jk γ_jk / η_jk`.
pub fn min_weighted(values: &[Vec<f64>], eta: &Targets) -> f64 {
    values
        .iter()
        .zip(eta)
        .flat_map(|(v, e)| v.iter().zip(e).map(|(g, t)| g / t))
        .fold(f64::INFINITY, f64::min)
}
