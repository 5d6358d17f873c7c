//! Block-diagonalization zero-forcing outer layer.
//!
//! For every group `j` the interfering channels `G_{-j}` (all other groups stacked)
//! are factored with Householder QR; the trailing `N - τ_j` columns of the full `Q`
//! form `F_j`, an isometry onto the null space of `G_{-j}^H`. Any `w_j = F_j c_j` is
//! then invisible to every UE outside group `j`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, HouseholderQr};
use crate::model::{ChannelSet, Precoder};

/// Relative threshold on `|R_ii|` below which `G_{-j}` is declared rank deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct OuterLayer {
    /// `F_j`, shape N×(N−τ_j).
    pub bases: Vec<CMatrix>,
    /// Columns `ḡ_jk = F_j^H g_jk / σ_jk`, shape (N−τ_j)×K_j.
    pub effective: Vec<CMatrix>,
}

impl OuterLayer {
    pub fn n_groups(&self) -> usize {
        self.bases.len()
    }

    /// Inner dimension `N − τ_j` of group `j`.
    pub fn inner_dim(&self, j: usize) -> usize {
        self.bases[j].cols()
    }
}

fn outer_for_group(channels: &ChannelSet, j: usize) -> Result<(CMatrix, CMatrix)> {
    let n = channels.n_antennas();
    let others: Vec<&CMatrix> = channels
        .groups
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != j)
        .map(|(_, g)| g)
        .collect();
    let stacked = CMatrix::hstack(n, &others)?;
    let tau = stacked.cols();
    if tau >= n {
        return Err(Error::Precondition(format!(
            "group {j}: {tau} interfering UEs leave no null space with {n} antennas"
        )));
    }
    let qr = HouseholderQr::new(&stacked);
    let diag_max = qr.r_diag().iter().map(|r| r.norm()).fold(0.0, f64::max);
    if qr
        .r_diag()
        .iter()
        .any(|r| !(r.norm() > RANK_TOL * diag_max))
    {
        return Err(Error::DegenerateChannel { group: j });
    }
    let basis = qr.null_space_basis();

    let own = &channels.groups[j];
    let mut eff = CMatrix::zeros(n - tau, own.cols());
    for k in 0..own.cols() {
        // F^H g is the tail of Q^H g
        let mut g = own.col(k).to_vec();
        qr.apply_q_adjoint(&mut g);
        let inv_sigma = 1.0 / channels.noise_powers[j][k].sqrt();
        for (dst, src) in eff.col_mut(k).iter_mut().zip(&g[tau..]) {
            *dst = src * inv_sigma;
        }
    }
    Ok((basis, eff))
}

/// Computes `F_j` and the noise-normalised effective channels for every group.
pub fn compute_outer_layer(channels: &ChannelSet) -> Result<OuterLayer> {
    if channels.noise_powers.iter().flatten().any(|&s| !(s > 0.0)) {
        return Err(Error::Precondition("noise powers must be positive".into()));
    }
    let per_group: Vec<(CMatrix, CMatrix)> = (0..channels.n_groups())
        .into_par_iter()
        .map(|j| outer_for_group(channels, j))
        .collect::<Result<_>>()?;
    let (bases, effective) = per_group.into_iter().unzip();
    Ok(OuterLayer { bases, effective })
}

/// Builds `w_j = F_j c_j` for every group.
pub fn compose(outer: &OuterLayer, inner: Vec<CVector>) -> Result<Precoder> {
    if inner.len() != outer.n_groups() {
        return Err(Error::DimensionMismatch {
            expected: outer.n_groups(),
            found: inner.len(),
        });
    }
    let composite = outer
        .bases
        .iter()
        .zip(&inner)
        .map(|(f, c)| f.mul_vec(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(Precoder {
        inner,
        composite: Some(composite),
    })
}

/// Effective SNR `|ḡ_jk^H c_j|²` of every UE for the given inner vectors.
pub fn effective_snr(outer: &OuterLayer, inner: &[CVector]) -> Result<Vec<Vec<f64>>> {
    if inner.len() != outer.n_groups() {
        return Err(Error::DimensionMismatch {
            expected: outer.n_groups(),
            found: inner.len(),
        });
    }
    outer
        .effective
        .iter()
        .zip(inner)
        .map(|(eff, c)| {
            Ok(eff
                .adjoint_mul_vec(c)?
                .into_iter()
                .map(|z| z.norm_sqr())
                .collect())
        })
        .collect()
}

/// Interference dimension `τ_j = K − K_j` of every group.
pub fn interference_dims(group_sizes: &[usize]) -> Vec<usize> {
    let k: usize = group_sizes.iter().sum();
    group_sizes.iter().map(|&kj| k - kj).collect()
}

/// `8N Σ_j τ_j² − (8/3) Σ_j τ_j³`, rounded to the nearest integer.
pub fn flop_estimate_bdzf(n_antennas: usize, group_sizes: &[usize]) -> u64 {
    let taus = interference_dims(group_sizes);
    let sq: u128 = taus.iter().map(|&t| (t as u128).pow(2)).sum();
    let cube: u128 = taus.iter().map(|&t| (t as u128).pow(3)).sum();
    // 8N·sq − 8·cube/3 in thirds to keep the rounding exact
    let thirds = 24 * n_antennas as u128 * sq - 8 * cube;
    ((thirds + 1) / 3) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, norm};
    use num_complex::Complex64;
    use crate::model::{generate_channels, sinr, total_power, SystemConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inner(outer: &OuterLayer, seed: u64) -> Vec<CVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..outer.n_groups())
            .map(|j| {
                (0..outer.inner_dim(j))
                    .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_group_is_identity_like() {
        let cfg = SystemConfig {
            n_antennas: 8,
            group_sizes: vec![3],
            ..SystemConfig::default()
        };
        let ch = generate_channels(&cfg, 5).unwrap();
        let outer = compute_outer_layer(&ch).unwrap();
        assert_eq!(outer.bases[0].cols(), 8);
        for k in 0..3 {
            let expected = norm(ch.groups[0].col(k)) / ch.noise_powers[0][k].sqrt();
            let got = norm(outer.effective[0].col(k));
            assert!((got / expected - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn canonical_basis_case() {
        let mut e1 = vec![Complex64::new(0.0, 0.0); 4];
        e1[0] = Complex64::new(1.0, 0.0);
        let mut e2 = vec![Complex64::new(0.0, 0.0); 4];
        e2[1] = Complex64::new(1.0, 0.0);
        let ch = ChannelSet {
            groups: vec![
                CMatrix::from_columns(4, &[e2]).unwrap(),
                CMatrix::from_columns(4, &[e1]).unwrap(),
            ],
            noise_powers: vec![vec![1.0], vec![1.0]],
            large_scale: vec![vec![1.0], vec![1.0]],
            distances_m: vec![vec![1.0], vec![1.0]],
        };
        let outer = compute_outer_layer(&ch).unwrap();
        let f0 = &outer.bases[0];
        assert_eq!(f0.cols(), 3);
        // first row (the e_1 coordinate) is exactly zero
        for c in 0..3 {
            assert_eq!(f0[(0, c)], Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn random_orthogonality_and_isometry() {
        let cfg = SystemConfig {
            n_antennas: 32,
            group_sizes: vec![4, 4, 4],
            ..SystemConfig::default()
        };
        let ch = generate_channels(&cfg, 11).unwrap();
        let outer = compute_outer_layer(&ch).unwrap();
        for (j, f) in outer.bases.iter().enumerate() {
            assert_eq!(f.cols(), 32 - 8);
            let gram = f.adjoint_mul(f).unwrap();
            let eye = CMatrix::identity(f.cols());
            for r in 0..f.cols() {
                for c in 0..f.cols() {
                    assert!((gram[(r, c)] - eye[(r, c)]).norm() < 1e-10);
                }
            }
            for (i, g) in ch.groups.iter().enumerate() {
                if i == j {
                    continue;
                }
                for col in g.columns() {
                    let leak = f.adjoint_mul_vec(col).unwrap();
                    let worst = leak.iter().map(|z| z.norm()).fold(0.0, f64::max);
                    assert!(worst / norm(col) <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn compose_preserves_power_and_nulls_interference() {
        let cfg = SystemConfig {
            n_antennas: 24,
            group_sizes: vec![3, 5],
            ..SystemConfig::default()
        };
        let ch = generate_channels(&cfg, 2).unwrap();
        let outer = compute_outer_layer(&ch).unwrap();
        let inner = random_inner(&outer, 1);
        let prec = compose(&outer, inner.clone()).unwrap();
        let p_inner: f64 = inner.iter().map(|c| crate::linalg::norm_sqr(c)).sum();
        assert!((total_power(&prec) / p_inner - 1.0).abs() < 1e-10);
        for (c, w) in inner.iter().zip(prec.composite.as_ref().unwrap()) {
            assert!((norm(c) - norm(w)).abs() < 1e-12);
        }
        let leaks = crate::model::interference(&ch, &prec).unwrap();
        for l in leaks.iter().flatten() {
            assert!(*l < 1e-18, "{l}");
        }
        // full-channel SINR of the composite equals the effective SNR
        let gamma = sinr(&ch, &prec).unwrap();
        let snr = effective_snr(&outer, &inner).unwrap();
        for (a, b) in gamma.iter().flatten().zip(snr.iter().flatten()) {
            assert!((a / b - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn compose_zero_and_mismatch() {
        let cfg = SystemConfig {
            n_antennas: 6,
            group_sizes: vec![1, 1],
            ..SystemConfig::default()
        };
        let ch = generate_channels(&cfg, 2).unwrap();
        let outer = compute_outer_layer(&ch).unwrap();
        let zero = vec![vec![Complex64::new(0.0, 0.0); 5]; 2];
        let prec = compose(&outer, zero).unwrap();
        assert_eq!(total_power(&prec), 0.0);
        assert!(compose(&outer, vec![vec![Complex64::new(0.0, 0.0); 4]; 2]).is_err());
        assert!(compose(&outer, vec![vec![Complex64::new(0.0, 0.0); 5]]).is_err());
    }

    #[test]
    fn rank_deficient_interference_is_rejected() {
        let g: CVector = (0..6).map(|i| Complex64::new(i as f64 + 1.0, 0.5)).collect();
        let own: CVector = (0..6).map(|i| Complex64::new(0.0, i as f64)).collect();
        let ch = ChannelSet {
            groups: vec![
                CMatrix::from_columns(6, &[own]).unwrap(),
                CMatrix::from_columns(6, &[g.clone(), g]).unwrap(),
            ],
            noise_powers: vec![vec![1.0], vec![1.0, 1.0]],
            large_scale: vec![vec![1.0], vec![1.0, 1.0]],
            distances_m: vec![vec![1.0], vec![1.0, 1.0]],
        };
        assert!(matches!(
            compute_outer_layer(&ch),
            Err(Error::DegenerateChannel { group: 0 })
        ));
    }

    #[test]
    fn inner_products_against_other_groups_vanish() {
        let cfg = SystemConfig {
            n_antennas: 16,
            group_sizes: vec![2, 3],
            ..SystemConfig::default()
        };
        let ch = generate_channels(&cfg, 8).unwrap();
        let outer = compute_outer_layer(&ch).unwrap();
        let prec = compose(&outer, random_inner(&outer, 3)).unwrap();
        let w = prec.composite.unwrap();
        for g in ch.groups[1].columns() {
            assert!(dot(g, &w[0]).norm() <= 1e-10 * norm(g) * norm(&w[0]));
        }
    }

    #[test]
    fn bdzf_flop_formula() {
        assert_eq!(flop_estimate_bdzf(64, &[7]), 0);
        assert_eq!(flop_estimate_bdzf(100, &[10, 10]), 154_667);
        assert_eq!(flop_estimate_bdzf(40, &[10, 10, 10]), 320_000);
    }
}
