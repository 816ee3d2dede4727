//! Complex MIMO channel matrices: DFT domain transforms, real stacking for
//! network I/O, and the two channel-quality metrics (NMSE, subspace cosine
//! similarity).
//!
//! Everything here is double precision; conversion to the single-precision
//! tensor engine happens at the caller's boundary via [`ChannelTensor`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether a channel matrix lives in antenna (spatial) space or in the
/// DFT-transformed angular space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Spatial,
    Angular,
}

impl Domain {
    fn name(self) -> &'static str {
        match self {
            Domain::Spatial => "spatial",
            Domain::Angular => "angular",
        }
    }
}

/// Complex `n_ue x n_bs` MIMO channel, tagged with its current domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    entries: Vec<Complex64>,
    n_ue: usize,
    n_bs: usize,
    domain: Domain,
}

impl ChannelMatrix {
    pub fn new(n_ue: usize, n_bs: usize, entries: Vec<Complex64>, domain: Domain) -> Result<Self> {
        if n_ue == 0 || n_bs == 0 {
            return Err(Error::InvalidDimension(format!(
                "channel dims must be positive, got {n_ue}x{n_bs}"
            )));
        }
        if entries.len() != n_ue * n_bs {
            return Err(Error::Shape(format!(
                "{n_ue}x{n_bs} channel wants {} entries, got {}",
                n_ue * n_bs,
                entries.len()
            )));
        }
        Ok(Self { entries, n_ue, n_bs, domain })
    }

    pub fn zeros(n_ue: usize, n_bs: usize, domain: Domain) -> Self {
        Self { entries: vec![Complex64::zero(); n_ue * n_bs], n_ue, n_bs, domain }
    }

    #[inline]
    pub fn n_ue(&self) -> usize {
        self.n_ue
    }

    #[inline]
    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    #[inline]
    pub fn domain(&self) -> Domain {
        self.domain
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.n_bs + col]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut Complex64 {
        &mut self.entries[row * self.n_bs + col]
    }

    #[inline]
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            entries: self.entries.iter().map(|z| z * c).collect(),
            ..*self
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.n_ue != other.n_ue || self.n_bs != other.n_bs {
            return Err(Error::Shape(format!(
                "channel subtraction on {}x{} vs {}x{}",
                self.n_ue, self.n_bs, other.n_ue, other.n_bs
            )));
        }
        Ok(Self {
            entries: self
                .entries
                .iter()
                .zip(other.entries.iter())
                .map(|(a, b)| a - b)
                .collect(),
            ..*self
        })
    }

    #[cfg(test)]
    fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }
}

/// Real `2 x n_ue x n_bs` stacking of a complex channel: slice 0 carries the
/// real part, slice 1 the imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    values: Vec<f64>,
    n_ue: usize,
    n_bs: usize,
}

impl ChannelTensor {
    pub fn new(n_ue: usize, n_bs: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != 2 * n_ue * n_bs {
            return Err(Error::Shape(format!(
                "channel tensor wants {} values, got {}",
                2 * n_ue * n_bs,
                values.len()
            )));
        }
        Ok(Self { values, n_ue, n_bs })
    }

    #[inline]
    pub fn n_ue(&self) -> usize {
        self.n_ue
    }

    #[inline]
    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Narrow to the single-precision engine format, shape `[2, n_ue, n_bs]`.
    pub fn to_tensor_f32(&self) -> Tensor<f32> {
        Tensor::new(
            &[2, self.n_ue, self.n_bs],
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("consistent by construction")
    }

    /// Widen an engine tensor of shape `[2, n_ue, n_bs]` back to f64 storage.
    pub fn from_tensor_f32(t: &Tensor<f32>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 2 {
            return Err(Error::Shape(format!(
                "expected [2, n_ue, n_bs] tensor, got {s:?}"
            )));
        }
        Self::new(s[1], s[2], t.data().iter().map(|&v| v as f64).collect())
    }
}

/// Unitary DFT matrix of size `n`, entry `(m, k) = exp(j 2 pi m k / n) / sqrt(n)`
/// for zero-based `m, k` (identical to the one-based textbook form with
/// `(m-1)(k-1)` exponents).
#[derive(Debug, Clone)]
pub struct DftMatrix {
    entries: Vec<Complex64>,
    n: usize,
}

/// Build the size-`n` unitary DFT matrix.
pub fn dft_matrix(n: usize) -> Result<DftMatrix> {
    if n == 0 {
        return Err(Error::InvalidDimension("DFT size must be >= 1".into()));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let mut entries = Vec::with_capacity(n * n);
    for m in 0..n {
        for k in 0..n {
            // m*k mod n keeps the phase argument small for large n.
            let phase = 2.0 * PI * ((m * k) % n) as f64 / n as f64;
            entries.push(Complex64::new(phase.cos(), phase.sin()) * scale);
        }
    }
    Ok(DftMatrix { entries, n })
}

impl DftMatrix {
    #[inline]
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.n + col]
    }

    /// Column `k` as a unit-norm beamforming vector.
    pub fn column(&self, k: usize) -> Vec<Complex64> {
        (0..self.n).map(|m| self.at(m, k)).collect()
    }

    /// `|| F^H F - I ||_F`, the unitarity defect.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut sum = Complex64::zero();
                for m in 0..n {
                    sum += self.at(m, i).conj() * self.at(m, j);
                }
                let target = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::zero() };
                acc += (sum - target).norm_sqr();
            }
        }
        acc.sqrt()
    }
}

/// `F_ue^H * H * F_bs`: spatial-domain channel into the angular domain.
pub fn to_angular(h: &ChannelMatrix) -> Result<ChannelMatrix> {
    if h.domain() != Domain::Spatial {
        return Err(Error::DomainMismatch { expected: "spatial", got: h.domain().name() });
    }
    let f_ue = dft_matrix(h.n_ue())?;
    let f_bs = dft_matrix(h.n_bs())?;
    // F_ue^H H, then (F_ue^H H) F_bs
    let left = mat_mul(
        h.n_ue(),
        h.n_ue(),
        h.n_bs(),
        |i, k| f_ue.at(k, i).conj(),
        |k, j| h.at(k, j),
    );
    let out = mat_mul(
        h.n_ue(),
        h.n_bs(),
        h.n_bs(),
        |i, k| left[i * h.n_bs() + k],
        |k, j| f_bs.at(k, j),
    );
    ChannelMatrix::new(h.n_ue(), h.n_bs(), out, Domain::Angular)
}

/// `F_ue * H_ad * F_bs^H`: angular-domain channel back to antenna space.
pub fn to_spatial(h_ad: &ChannelMatrix) -> Result<ChannelMatrix> {
    if h_ad.domain() != Domain::Angular {
        return Err(Error::DomainMismatch { expected: "angular", got: h_ad.domain().name() });
    }
    let f_ue = dft_matrix(h_ad.n_ue())?;
    let f_bs = dft_matrix(h_ad.n_bs())?;
    let left = mat_mul(
        h_ad.n_ue(),
        h_ad.n_ue(),
        h_ad.n_bs(),
        |i, k| f_ue.at(i, k),
        |k, j| h_ad.at(k, j),
    );
    let out = mat_mul(
        h_ad.n_ue(),
        h_ad.n_bs(),
        h_ad.n_bs(),
        |i, k| left[i * h_ad.n_bs() + k],
        |k, j| f_bs.at(j, k).conj(),
    );
    ChannelMatrix::new(h_ad.n_ue(), h_ad.n_bs(), out, Domain::Spatial)
}

fn mat_mul(
    m: usize,
    k: usize,
    n: usize,
    a: impl Fn(usize, usize) -> Complex64,
    b: impl Fn(usize, usize) -> Complex64,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a(i, p);
            for j in 0..n {
                out[i * n + j] += aip * b(p, j);
            }
        }
    }
    out
}

/// Stack real and imaginary parts along a leading axis of size 2.
pub fn stack_real(h: &ChannelMatrix) -> ChannelTensor {
    let n = h.n_ue() * h.n_bs();
    let mut values = Vec::with_capacity(2 * n);
    values.extend(h.entries().iter().map(|z| z.re));
    values.extend(h.entries().iter().map(|z| z.im));
    ChannelTensor { values, n_ue: h.n_ue(), n_bs: h.n_bs() }
}

/// Reassemble a complex channel from a stacked tensor. The caller declares
/// the domain the tensor represents.
pub fn unstack_complex(t: &ChannelTensor, domain: Domain) -> ChannelMatrix {
    let n = t.n_ue * t.n_bs;
    let entries = (0..n)
        .map(|i| Complex64::new(t.values[i], t.values[n + i]))
        .collect();
    ChannelMatrix { entries, n_ue: t.n_ue, n_bs: t.n_bs, domain }
}

/// NMSE report in linear and dB scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nmse {
    pub linear: f64,
    pub db: f64,
}

/// Floor applied when aggregating dB values so a perfect recovery (linear 0,
/// dB -inf) survives averaging.
pub const NMSE_DB_FLOOR: f64 = -100.0;

/// `||H - H_est||_F^2 / ||H||_F^2`. A zero channel has no defined NMSE. An
/// exact recovery reports `db = -inf`; table builders clamp with
/// [`NMSE_DB_FLOOR`].
pub fn nmse(h_true: &ChannelMatrix, h_est: &ChannelMatrix) -> Result<Nmse> {
    let denom = h_true.frob_norm_sq();
    if denom <= 0.0 {
        return Err(Error::UndefinedMetric("NMSE needs a nonzero ground-truth channel"));
    }
    let diff = h_true.sub(h_est)?;
    let linear = diff.frob_norm_sq() / denom;
    let db = if linear == 0.0 { f64::NEG_INFINITY } else { 10.0 * linear.log10() };
    Ok(Nmse { linear, db })
}

/// `||H^H H_est||_F / (||H||_F ||H_est||_F)`, the subspace alignment measure.
/// Equals 1 only when the estimate matches a rank-1 truth up to scale; for
/// higher-rank channels even a perfect estimate stays below 1, and the value
/// is reported as defined.
pub fn cosine_similarity(h_true: &ChannelMatrix, h_est: &ChannelMatrix) -> Result<f64> {
    if h_true.n_ue != h_est.n_ue || h_true.n_bs != h_est.n_bs {
        return Err(Error::Shape(format!(
            "cosine similarity on {}x{} vs {}x{}",
            h_true.n_ue, h_true.n_bs, h_est.n_ue, h_est.n_bs
        )));
    }
    let nt = h_true.frob_norm();
    let ne = h_est.frob_norm();
    if nt <= 0.0 || ne <= 0.0 {
        return Err(Error::UndefinedMetric("cosine similarity needs nonzero operands"));
    }
    // G = H^H * H_est is n_bs x n_bs.
    let mut acc = 0.0;
    for i in 0..h_true.n_bs {
        for j in 0..h_est.n_bs {
            let mut sum = Complex64::zero();
            for m in 0..h_true.n_ue {
                sum += h_true.at(m, i).conj() * h_est.at(m, j);
            }
            acc += sum.norm_sqr();
        }
    }
    Ok(acc.sqrt() / (nt * ne))
}

/// Half-wavelength ULA steering vector `a(theta)_n = exp(j pi n sin theta) / sqrt(n_ant)`.
pub fn steering_vector(n_ant: usize, theta: f64) -> Vec<Complex64> {
    let scale = 1.0 / (n_ant as f64).sqrt();
    (0..n_ant)
        .map(|n| {
            let phase = PI * n as f64 * theta.sin();
            Complex64::new(phase.cos(), phase.sin()) * scale
        })
        .collect()
}

/// Rank-1 outer product `a_ue * a_bs^H` as a spatial channel.
pub fn outer_channel(a_ue: &[Complex64], a_bs: &[Complex64]) -> ChannelMatrix {
    let n_ue = a_ue.len();
    let n_bs = a_bs.len();
    let mut entries = Vec::with_capacity(n_ue * n_bs);
    for u in 0..n_ue {
        for b in 0..n_bs {
            entries.push(a_ue[u] * a_bs[b].conj());
        }
    }
    ChannelMatrix { entries, n_ue, n_bs, domain: Domain::Spatial }
}
