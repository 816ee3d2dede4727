//! Downstream beamforming evaluation: exhaustive DFT beam-pair search and
//! the spectral-efficiency frame accounting for pilot-based versus
//! sensing-aided acquisition.

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Zero;

use crate::channel::{dft_matrix, ChannelMatrix};
use crate::error::{Error, Result};

/// A transmit/receive analog beam pair drawn from the DFT codebooks.
#[derive(Debug, Clone)]
pub struct BeamPair {
    pub f: Vec<Complex64>,
    pub w: Vec<Complex64>,
    pub f_index: usize,
    pub w_index: usize,
    /// Set when the search input was zero and the broadside default applies.
    pub degenerate: bool,
}

/// Frame timing for throughput accounting.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct FrameAccounting {
    pub t_f_s: f64,
    pub t_ca_s: f64,
    pub bandwidth_hz: f64,
    pub gps_bits: f64,
}

impl Default for FrameAccounting {
    fn default() -> Self {
        Self { t_f_s: 0.010, t_ca_s: 0.0025, bandwidth_hz: 120_000.0, gps_bits: 128.0 }
    }
}

impl FrameAccounting {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_ca_s > 0.0 && self.t_ca_s < self.t_f_s) {
            return Err(Error::Config(format!(
                "need 0 < T_ca < T_f, got {} / {}",
                self.t_ca_s, self.t_f_s
            )));
        }
        if self.bandwidth_hz <= 0.0 || self.gps_bits < 0.0 {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        Ok(())
    }

    /// Rate cost of reporting the coordinate: `bits / (T_f W)`.
    pub fn gps_overhead(&self) -> f64 {
        self.gps_bits / (self.t_f_s * self.bandwidth_hz)
    }
}

/// Beamformed link gain `|w^H H f|^2`.
pub fn beam_gain(w: &[Complex64], f: &[Complex64], h: &ChannelMatrix) -> f64 {
    let mut acc = Complex64::zero();
    for row in 0..h.n_ue() {
        for col in 0..h.n_bs() {
            acc += w[row].conj() * h.at(row, col) * f[col];
        }
    }
    acc.norm_sqr()
}

/// Exhaustive search over the receive and transmit DFT codebooks for the
/// pair maximizing `|w^H H f|`. Ties resolve to the lowest
/// `(w_index, f_index)`; a zero input returns the broadside pair flagged as
/// degenerate.
pub fn beam_search(h_est: &ChannelMatrix) -> Result<BeamPair> {
    let f_ue = dft_matrix(h_est.n_ue())?;
    let f_bs = dft_matrix(h_est.n_bs())?;
    if h_est.frob_norm_sq() == 0.0 {
        return Ok(BeamPair {
            f: f_bs.column(0),
            w: f_ue.column(0),
            f_index: 0,
            w_index: 0,
            degenerate: true,
        });
    }
    let mut best = (0usize, 0usize, -1.0f64);
    for w_idx in 0..h_est.n_ue() {
        let w = f_ue.column(w_idx);
        for f_idx in 0..h_est.n_bs() {
            let f = f_bs.column(f_idx);
            let gain = beam_gain(&w, &f, h_est);
            if gain > best.2 {
                best = (w_idx, f_idx, gain);
            }
        }
    }
    Ok(BeamPair {
        f: f_bs.column(best.1),
        w: f_ue.column(best.0),
        f_index: best.1,
        w_index: best.0,
        degenerate: false,
    })
}

/// Instantaneous spectral efficiency `log2(1 + gamma |w^H H f|^2)` for a
/// linear SNR `gamma`.
pub fn instantaneous_se(w: &[Complex64], f: &[Complex64], h_true: &ChannelMatrix, gamma_snr: f64) -> f64 {
    (1.0 + gamma_snr * beam_gain(w, f, h_true)).log2()
}

/// Effective rate when acquisition consumes the first `T_ca` of the frame.
pub fn pilot_based_se(rate: f64, acct: &FrameAccounting) -> f64 {
    (acct.t_f_s - acct.t_ca_s) / acct.t_f_s * rate
}

/// Effective rate when inference runs concurrently with data transmission:
/// the acquisition window still carries data on the previous frame's beams,
/// minus the coordinate-report overhead.
pub fn sensing_aided_se(rate_prev_beams: f64, rate_current: f64, acct: &FrameAccounting) -> f64 {
    acct.t_ca_s / acct.t_f_s * rate_prev_beams
        + (acct.t_f_s - acct.t_ca_s) / acct.t_f_s * rate_current
        - acct.gps_overhead()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{outer_channel, steering_vector, Domain};

    #[test]
    fn beam_search_finds_on_grid_steering_pair() {
        // Grid angle for column k: sin(theta) = 2k/N (wrapped).
        let n_ue = 4;
        let n_bs = 16;
        let w_idx = 1usize;
        let f_idx = 5usize;
        let theta_w = (2.0 * w_idx as f64 / n_ue as f64).asin();
        let theta_f = (2.0 * f_idx as f64 / n_bs as f64).asin();
        let h = outer_channel(&steering_vector(n_ue, theta_w), &steering_vector(n_bs, theta_f));
        let pair = beam_search(&h).unwrap();
        assert_eq!((pair.w_index, pair.f_index), (w_idx, f_idx));
        assert!(!pair.degenerate);
    }

    #[test]
    fn beam_search_matches_double_loop_oracle() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let entries: Vec<Complex64> = (0..4 * 8)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        let h = ChannelMatrix::new(4, 8, entries, Domain::Spatial).unwrap();
        let pair = beam_search(&h).unwrap();

        let f_ue = dft_matrix(4).unwrap();
        let f_bs = dft_matrix(8).unwrap();
        let mut best = (0usize, 0usize, -1.0f64);
        for wi in 0..4 {
            for fi in 0..8 {
                let g = beam_gain(&f_ue.column(wi), &f_bs.column(fi), &h);
                if g > best.2 {
                    best = (wi, fi, g);
                }
            }
        }
        assert_eq!((pair.w_index, pair.f_index), (best.0, best.1));
    }

    #[test]
    fn beam_search_scale_invariant() {
        let h = outer_channel(&steering_vector(4, 0.3), &steering_vector(16, -0.5));
        let a = beam_search(&h).unwrap();
        let b = beam_search(&h.scale(Complex64::new(7.0, 0.0))).unwrap();
        assert_eq!((a.w_index, a.f_index), (b.w_index, b.f_index));
    }

    #[test]
    fn beam_search_zero_input_flags_broadside() {
        let pair = beam_search(&ChannelMatrix::zeros(4, 8, Domain::Spatial)).unwrap();
        assert!(pair.degenerate);
        assert_eq!((pair.w_index, pair.f_index), (0, 0));
    }

    #[test]
    fn instantaneous_se_hand_values() {
        // Unit-gain rank-1 channel aligned with the searched beams.
        let h = outer_channel(&steering_vector(2, 0.0), &steering_vector(4, 0.0));
        let pair = beam_search(&h).unwrap();
        let g = beam_gain(&pair.w, &pair.f, &h);
        assert!((g - 1.0).abs() < 1e-12);
        assert!((instantaneous_se(&pair.w, &pair.f, &h, 1.0) - 1.0).abs() < 1e-12);
        let se10 = instantaneous_se(&pair.w, &pair.f, &h, db_to_linear(10.0));
        assert!((se10 - 11f64.log2()).abs() < 1e-9);
        assert!((11f64.log2() - 3.459).abs() < 1e-3);

        let zero = ChannelMatrix::zeros(2, 4, Domain::Spatial);
        assert_eq!(instantaneous_se(&pair.w, &pair.f, &zero, 5.0), 0.0);
    }

    #[test]
    fn frame_accounting_identities() {
        let acct = FrameAccounting::default();
        acct.validate().unwrap();
        // Overhead at the reference constants.
        assert!((acct.gps_overhead() - 128.0 / 1200.0).abs() < 1e-15);

        // Pilot SE at half-frame acquisition halves the rate.
        let half = FrameAccounting { t_ca_s: 0.005, ..acct.clone() };
        assert!((pilot_based_se(4.0, &half) - 2.0).abs() < 1e-12);
        // Reference arithmetic: 0.75 * 4 = 3.
        assert!((pilot_based_se(4.0, &acct) - 3.0).abs() < 1e-12);

        // pilot SE + (T_ca/T_f) R == R
        let r = 3.7;
        assert!((pilot_based_se(r, &acct) + acct.t_ca_s / acct.t_f_s * r - r).abs() < 1e-12);

        // Equal rates: sensing SE is R minus overhead.
        let s = sensing_aided_se(r, r, &acct);
        assert!((s - (r - acct.gps_overhead())).abs() < 1e-12);

        let bad = FrameAccounting { t_ca_s: 0.02, ..acct };
        assert!(bad.validate().is_err());
    }
}
