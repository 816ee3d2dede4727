//! Pilot-based and location-based channel estimation baselines: a beam-pair
//! pilot observation simulator, least-squares recovery, LASSO via ISTA in
//! the angular domain, and inverse-distance-weighted KNN reconstruction from
//! stored path parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{dft_matrix, to_spatial, ChannelMatrix, Domain};
use crate::error::{Error, Result};
use crate::scene::{synth_channel, PathParam, PathType, SensingSample};

/// Frame timing and pilot signal quality.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct PilotConfig {
    pub t_f_s: f64,
    pub t_ca_s: f64,
    pub t_ce_s: f64,
    pub n_sym: usize,
    pub snr_db: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self { t_f_s: 0.010, t_ca_s: 0.0025, t_ce_s: 0.001, n_sym: 1120, snr_db: 10.0 }
    }
}

impl PilotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_ce_s > 0.0 && self.t_ce_s < self.t_ca_s && self.t_ca_s < self.t_f_s) {
            return Err(Error::Config(format!(
                "need 0 < T_ce < T_ca < T_f, got {} / {} / {}",
                self.t_ce_s, self.t_ca_s, self.t_f_s
            )));
        }
        if self.pilot_count() < 1 {
            return Err(Error::Config("pilot budget allows no pilot symbols".into()));
        }
        Ok(())
    }

    /// Symbols available for pilots: `floor((T_ca - T_ce) / T_f * N_sym)`.
    pub fn pilot_count(&self) -> usize {
        ((self.t_ca_s - self.t_ce_s) / self.t_f_s * self.n_sym as f64).floor() as usize
    }
}

/// Beamformed pilot measurements `y = A vec(H) + n` where each row of `A` is
/// the Kronecker form of one transmit/receive beam pair.
#[derive(Debug, Clone)]
pub struct PilotObservation {
    pub y: Vec<Complex64>,
    /// Row-major `P x (n_ue * n_bs)`; columns index `vec(H)` column-major.
    pub a: Vec<Complex64>,
    pub n_ue: usize,
    pub n_bs: usize,
}

impl PilotObservation {
    pub fn pilots(&self) -> usize {
        self.y.len()
    }

    fn dim(&self) -> usize {
        self.n_ue * self.n_bs
    }
}

/// Observe `h` through `P` deterministic DFT beam pairs (transmit column
/// cycling fastest) with complex Gaussian noise scaled so the mean received
/// pilot power sits `snr_db` above the noise floor.
pub fn simulate_pilots(h: &ChannelMatrix, config: &PilotConfig, seed: u64) -> Result<PilotObservation> {
    config.validate()?;
    if h.domain() != Domain::Spatial {
        return Err(Error::DomainMismatch { expected: "spatial", got: "angular" });
    }
    let p = config.pilot_count();
    let (n_ue, n_bs) = (h.n_ue(), h.n_bs());
    let f_bs = dft_matrix(n_bs)?;
    let f_ue = dft_matrix(n_ue)?;

    let dim = n_ue * n_bs;
    let mut a = vec![Complex64::zero(); p * dim];
    let mut clean = Vec::with_capacity(p);
    for t in 0..p {
        let f_idx = t % n_bs;
        let w_idx = (t / n_bs) % n_ue;
        let f = f_bs.column(f_idx);
        let w = f_ue.column(w_idx);
        // Row entries a[col * n_ue + row] = f[col] * conj(w[row]).
        for col in 0..n_bs {
            for row in 0..n_ue {
                a[t * dim + col * n_ue + row] = f[col] * w[row].conj();
            }
        }
        let mut val = Complex64::zero();
        for col in 0..n_bs {
            for row in 0..n_ue {
                val += w[row].conj() * h.at(row, col) * f[col];
            }
        }
        clean.push(val);
    }

    let mean_power: f64 = clean.iter().map(|v| v.norm_sqr()).sum::<f64>() / p as f64;
    let snr_lin = 10f64.powf(config.snr_db / 10.0);
    let mut y = clean;
    if snr_lin.is_finite() && mean_power > 0.0 {
        let noise_var = mean_power / snr_lin;
        let scale = (noise_var / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(re * scale, im * scale);
        }
    }
    Ok(PilotObservation { y, a, n_ue, n_bs })
}

/// Gauss-Jordan inverse with partial pivoting. `None` when a pivot falls
/// below `tol`.
fn invert_cmat(m: &[Complex64], n: usize, tol: f64) -> Option<Vec<Complex64>> {
    let mut aug = vec![Complex64::zero(); n * 2 * n];
    for i in 0..n {
        for j in 0..n {
            aug[i * 2 * n + j] = m[i * n + j];
        }
        aug[i * 2 * n + n + i] = Complex64::new(1.0, 0.0);
    }
    for col in 0..n {
        let mut best = col;
        let mut best_mag = aug[col * 2 * n + col].norm_sqr();
        for row in (col + 1)..n {
            let mag = aug[row * 2 * n + col].norm_sqr();
            if mag > best_mag {
                best = row;
                best_mag = mag;
            }
        }
        if best_mag < tol * tol {
            return None;
        }
        if best != col {
            for j in 0..2 * n {
                aug.swap(col * 2 * n + j, best * 2 * n + j);
            }
        }
        let pivot = aug[col * 2 * n + col];
        let inv = Complex64::new(1.0, 0.0) / pivot;
        for j in 0..2 * n {
            aug[col * 2 * n + j] *= inv;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = aug[row * 2 * n + col];
            if factor.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..2 * n {
                let v = aug[col * 2 * n + j] * factor;
                aug[row * 2 * n + j] -= v;
            }
        }
    }
    let mut out = vec![Complex64::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = aug[i * 2 * n + n + j];
        }
    }
    Some(out)
}

/// Diagnostics attached to an LS estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LsReport {
    /// True when the normal equations needed a ridge to become invertible.
    pub regularized: bool,
}

/// Least-squares channel estimate: pseudo-inverse solution of
/// `y = A vec(H)`, minimum-norm when underdetermined. A near-singular system
/// falls back to a small ridge and reports it.
pub fn ls_estimate(obs: &PilotObservation) -> Result<(ChannelMatrix, LsReport)> {
    let p = obs.pilots();
    if p == 0 {
        return Err(Error::Contract("LS needs at least one pilot"));
    }
    let dim = obs.dim();
    let mut regularized = false;
    let z = if p >= dim {
        // z = (A^H A)^-1 A^H y
        let mut gram = vec![Complex64::zero(); dim * dim];
        for t in 0..p {
            let row = &obs.a[t * dim..(t + 1) * dim];
            for i in 0..dim {
                let ai = row[i].conj();
                for j in 0..dim {
                    gram[i * dim + j] += ai * row[j];
                }
            }
        }
        let mut rhs = vec![Complex64::zero(); dim];
        for t in 0..p {
            let row = &obs.a[t * dim..(t + 1) * dim];
            for i in 0..dim {
                rhs[i] += row[i].conj() * obs.y[t];
            }
        }
        let inv = match invert_cmat(&gram, dim, 1e-12) {
            Some(inv) => inv,
            None => {
                regularized = true;
                let trace: f64 = (0..dim).map(|i| gram[i * dim + i].re).sum();
                let ridge = 1e-10 * (trace / dim as f64).max(1e-300);
                for i in 0..dim {
                    gram[i * dim + i] += Complex64::new(ridge, 0.0);
                }
                invert_cmat(&gram, dim, 0.0)
                    .ok_or(Error::Contract("ridge-regularized Gram still singular"))?
            }
        };
        let mut z = vec![Complex64::zero(); dim];
        for i in 0..dim {
            for j in 0..dim {
                z[i] += inv[i * dim + j] * rhs[j];
            }
        }
        z
    } else {
        // Minimum-norm: z = A^H (A A^H)^-1 y
        let mut m = vec![Complex64::zero(); p * p];
        for s in 0..p {
            for t in 0..p {
                let mut acc = Complex64::zero();
                for j in 0..dim {
                    acc += obs.a[s * dim + j] * obs.a[t * dim + j].conj();
                }
                m[s * p + t] = acc;
            }
        }
        let inv = match invert_cmat(&m, p, 1e-12) {
            Some(inv) => inv,
            None => {
                regularized = true;
                let trace: f64 = (0..p).map(|i| m[i * p + i].re).sum();
                let ridge = 1e-10 * (trace / p as f64).max(1e-300);
                for i in 0..p {
                    m[i * p + i] += Complex64::new(ridge, 0.0);
                }
                invert_cmat(&m, p, 0.0)
                    .ok_or(Error::Contract("ridge-regularized kernel still singular"))?
            }
        };
        let mut w = vec![Complex64::zero(); p];
        for s in 0..p {
            for t in 0..p {
                w[s] += inv[s * p + t] * obs.y[t];
            }
        }
        let mut z = vec![Complex64::zero(); dim];
        for t in 0..p {
            let row = &obs.a[t * dim..(t + 1) * dim];
            for j in 0..dim {
                z[j] += row[j].conj() * w[t];
            }
        }
        z
    };

    Ok((vec_to_channel(&z, obs.n_ue, obs.n_bs), LsReport { regularized }))
}

fn vec_to_channel(z: &[Complex64], n_ue: usize, n_bs: usize) -> ChannelMatrix {
    let mut h = ChannelMatrix::zeros(n_ue, n_bs, Domain::Spatial);
    for col in 0..n_bs {
        for row in 0..n_ue {
            *h.at_mut(row, col) = z[col * n_ue + row];
        }
    }
    h
}

/// Diagnostics attached to a LASSO estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoReport {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Magnitude soft threshold preserving phase.
pub fn soft_threshold(z: Complex64, threshold: f64) -> Complex64 {
    let mag = z.norm();
    if mag <= threshold {
        Complex64::zero()
    } else {
        z * ((mag - threshold) / mag)
    }
}

/// LASSO estimate of the angular-domain channel via ISTA, returned in the
/// spatial domain. The sensing matrix is re-expressed over `vec(H_ad)`
/// through the DFT factorization of `vec(H)`.
///
/// The problem is solved on observations normalized to unit RMS so the
/// `lambda1` grid keeps its meaning across scene power levels; the estimate
/// is scaled back before returning.
pub fn lasso_estimate(
    obs: &PilotObservation,
    lambda1: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(ChannelMatrix, LassoReport)> {
    if lambda1 < 0.0 {
        return Err(Error::Config("lasso weight must be nonnegative".into()));
    }
    if max_iter == 0 {
        return Err(Error::Config("lasso needs at least one iteration".into()));
    }
    let p = obs.pilots();
    let dim = obs.dim();
    let (n_ue, n_bs) = (obs.n_ue, obs.n_bs);
    let f_ue = dft_matrix(n_ue)?;
    let f_bs = dft_matrix(n_bs)?;

    let y_rms = (obs.y.iter().map(|v| v.norm_sqr()).sum::<f64>() / p as f64).sqrt();
    let y_scale = if y_rms > 0.0 { y_rms } else { 1.0 };
    let y_n: Vec<Complex64> = obs.y.iter().map(|v| v / y_scale).collect();

    // A_ad = A (conj(F_bs) kron F_ue), built via the two small factors.
    let mut a_ad = vec![Complex64::zero(); p * dim];
    let mut stage = vec![Complex64::zero(); n_bs * n_ue];
    for t in 0..p {
        let row = &obs.a[t * dim..(t + 1) * dim];
        // stage[col, rb] = sum_row A[col * n_ue + row] * F_ue[row, rb]
        for v in stage.iter_mut() {
            *v = Complex64::zero();
        }
        for col in 0..n_bs {
            for row_i in 0..n_ue {
                let av = row[col * n_ue + row_i];
                if av.norm_sqr() == 0.0 {
                    continue;
                }
                for rb in 0..n_ue {
                    stage[col * n_ue + rb] += av * f_ue.at(row_i, rb);
                }
            }
        }
        // out[cb * n_ue + rb] = sum_col conj(F_bs[col, cb]) * stage[col, rb]
        for cb in 0..n_bs {
            for col in 0..n_bs {
                let fcc = f_bs.at(col, cb).conj();
                for rb in 0..n_ue {
                    a_ad[t * dim + cb * n_ue + rb] += fcc * stage[col * n_ue + rb];
                }
            }
        }
    }

    // Lipschitz constant of the gradient via power iteration on A^H A.
    let matvec = |z: &[Complex64], out: &mut Vec<Complex64>| {
        let mut az = vec![Complex64::zero(); p];
        for t in 0..p {
            let row = &a_ad[t * dim..(t + 1) * dim];
            let mut acc = Complex64::zero();
            for j in 0..dim {
                acc += row[j] * z[j];
            }
            az[t] = acc;
        }
        out.iter_mut().for_each(|v| *v = Complex64::zero());
        for t in 0..p {
            let row = &a_ad[t * dim..(t + 1) * dim];
            for j in 0..dim {
                out[j] += row[j].conj() * az[t];
            }
        }
    };
    let mut v = vec![Complex64::new(1.0 / (dim as f64).sqrt(), 0.0); dim];
    let mut gv = vec![Complex64::zero(); dim];
    let mut lipschitz = 1.0f64;
    for _ in 0..60 {
        matvec(&v, &mut gv);
        let norm: f64 = gv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm <= 0.0 {
            break;
        }
        lipschitz = norm;
        for (vi, gi) in v.iter_mut().zip(gv.iter()) {
            *vi = gi / norm;
        }
    }
    let step = 1.0 / (lipschitz * 1.01).max(1e-12);

    let objective = |z: &[Complex64]| -> f64 {
        let mut resid = 0.0;
        for t in 0..p {
            let row = &a_ad[t * dim..(t + 1) * dim];
            let mut acc = Complex64::zero();
            for j in 0..dim {
                acc += row[j] * z[j];
            }
            resid += (acc - y_n[t]).norm_sqr();
        }
        let l1: f64 = z.iter().map(|v| v.norm()).sum();
        resid + lambda1 * l1
    };

    let mut z = vec![Complex64::zero(); dim];
    let mut obj = objective(&z);
    let mut converged = false;
    let mut iterations = 0;
    let mut az = vec![Complex64::zero(); p];
    let mut grad = vec![Complex64::zero(); dim];
    for it in 1..=max_iter {
        iterations = it;
        for t in 0..p {
            let row = &a_ad[t * dim..(t + 1) * dim];
            let mut acc = Complex64::zero();
            for j in 0..dim {
                acc += row[j] * z[j];
            }
            az[t] = acc - y_n[t];
        }
        grad.iter_mut().for_each(|g| *g = Complex64::zero());
        for t in 0..p {
            let row = &a_ad[t * dim..(t + 1) * dim];
            for j in 0..dim {
                grad[j] += row[j].conj() * az[t];
            }
        }
        for j in 0..dim {
            let candidate = z[j] - grad[j] * step;
            z[j] = soft_threshold(candidate, lambda1 * step / 2.0);
        }
        let new_obj = objective(&z);
        if (obj - new_obj).abs() <= tol * obj.abs().max(1.0) {
            obj = new_obj;
            converged = true;
            break;
        }
        obj = new_obj;
    }

    let h_ad = ChannelMatrix::new(
        n_ue,
        n_bs,
        {
            let mut entries = vec![Complex64::zero(); dim];
            for cb in 0..n_bs {
                for rb in 0..n_ue {
                    entries[rb * n_bs + cb] = z[cb * n_ue + rb] * y_scale;
                }
            }
            entries
        },
        Domain::Angular,
    )?;
    let h = to_spatial(&h_ad)?;
    Ok((h, LassoReport { iterations, converged, objective: obj }))
}

/// Representative paths stored per training location.
#[derive(Debug, Clone)]
pub struct KnnEntry {
    pub location: [f64; 2],
    pub paths: [PathParam; 3],
}

/// Location-indexed database of averaged strongest paths.
#[derive(Debug, Clone, Default)]
pub struct KnnDatabase {
    pub entries: Vec<KnnEntry>,
}

fn zero_path() -> PathParam {
    PathParam {
        gain: Complex64::zero(),
        aod_az: 0.0,
        aoa_az: 0.0,
        length_m: 0.0,
        path_type: PathType::Scatter,
    }
}

fn circular_mean(angles: &[f64], weights: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for (&a, &w) in angles.iter().zip(weights.iter()) {
        s += w * a.sin();
        c += w * a.cos();
    }
    let m = s.atan2(c);
    if m <= -core::f64::consts::PI {
        m + 2.0 * core::f64::consts::PI
    } else {
        m
    }
}

/// Build the database from training samples: per location, the three
/// strongest paths of each frame (zero-padded when fewer exist) averaged
/// rank-wise across frames — complex-mean gains, circular-mean angles.
/// The stored location is the mean of the per-frame position reports.
pub fn knn_build(samples: &[&SensingSample]) -> Result<KnnDatabase> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("KNN database needs training samples"));
    }
    let mut by_user: BTreeMap<u32, Vec<&SensingSample>> = BTreeMap::new();
    for s in samples {
        by_user.entry(s.user_id).or_default().push(s);
    }
    let mut entries = Vec::with_capacity(by_user.len());
    for (_, frames) in by_user {
        let n = frames.len() as f64;
        let location = [
            frames.iter().map(|s| s.coord[0]).sum::<f64>() / n,
            frames.iter().map(|s| s.coord[1]).sum::<f64>() / n,
        ];
        // Rank paths per frame.
        let ranked: Vec<[PathParam; 3]> = frames
            .iter()
            .map(|s| {
                let mut ps = s.paths.clone();
                ps.sort_by(|a, b| b.gain.norm().partial_cmp(&a.gain.norm()).expect("finite gains"));
                let mut top = [zero_path(); 3];
                for (slot, p) in ps.into_iter().take(3).enumerate() {
                    top[slot] = p;
                }
                top
            })
            .collect();
        let uniform = vec![1.0f64; ranked.len()];
        let mut paths = [zero_path(); 3];
        for (rank, slot) in paths.iter_mut().enumerate() {
            let gains: Vec<Complex64> = ranked.iter().map(|r| r[rank].gain).collect();
            let mean_gain = gains.iter().sum::<Complex64>() / Complex64::new(n, 0.0);
            let aods: Vec<f64> = ranked.iter().map(|r| r[rank].aod_az).collect();
            let aoas: Vec<f64> = ranked.iter().map(|r| r[rank].aoa_az).collect();
            let lengths: Vec<f64> = ranked.iter().map(|r| r[rank].length_m).collect();
            *slot = PathParam {
                gain: mean_gain,
                aod_az: circular_mean(&aods, &uniform),
                aoa_az: circular_mean(&aoas, &uniform),
                length_m: lengths.iter().sum::<f64>() / n,
                path_type: ranked[0][rank].path_type,
            };
        }
        entries.push(KnnEntry { location, paths });
    }
    Ok(KnnDatabase { entries })
}

/// Inverse-distance-weighted channel prediction at an unseen location:
/// average the rank-aligned path tuples of the `k` nearest entries, then
/// synthesize the channel. Returns the clamp flag when `k` exceeded the
/// database size.
pub fn knn_infer(
    db: &KnnDatabase,
    location: [f64; 2],
    k: usize,
    n_ue: usize,
    n_bs: usize,
) -> Result<(ChannelMatrix, bool)> {
    if db.entries.is_empty() {
        return Err(Error::EmptyInput("KNN database is empty"));
    }
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let clamped = k > db.entries.len();
    let k = k.min(db.entries.len());

    let mut order: Vec<(f64, usize)> = db
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let dx = e.location[0] - location[0];
            let dy = e.location[1] - location[1];
            ((dx * dx + dy * dy).sqrt().max(1e-6), i)
        })
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let neighbors = &order[..k];
    let total_inv: f64 = neighbors.iter().map(|(d, _)| 1.0 / d).sum();
    let weights: Vec<f64> = neighbors.iter().map(|(d, _)| (1.0 / d) / total_inv).collect();

    let mut predicted = [zero_path(); 3];
    for (rank, slot) in predicted.iter_mut().enumerate() {
        let mut gain = Complex64::zero();
        let mut length = 0.0;
        let mut aods = Vec::with_capacity(k);
        let mut aoas = Vec::with_capacity(k);
        for ((_, i), &w) in neighbors.iter().zip(weights.iter()) {
            let p = &db.entries[*i].paths[rank];
            gain += p.gain * w;
            length += p.length_m * w;
            aods.push(p.aod_az);
            aoas.push(p.aoa_az);
        }
        *slot = PathParam {
            gain,
            aod_az: circular_mean(&aods, &weights),
            aoa_az: circular_mean(&aoas, &weights),
            length_m: length,
            path_type: db.entries[neighbors[0].1].paths[rank].path_type,
        };
    }
    let (h, _) = synth_channel(&predicted, n_ue, n_bs)?;
    Ok((h, clamped))
}
