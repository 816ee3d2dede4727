//! Flow-matching training: linear interpolation paths, the conditional
//! velocity target, the velocity-regression loss, the modality-alignment
//! loss (temperature-scaled contrastive term plus a KL regularizer on the
//! encoded latent), and the joint training loop over encoder, velocity field
//! and temperature.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::NMSE_DB_FLOOR;
use crate::encoder::{EncoderConfig, EncoderModel, LatentGaussian};
use crate::error::{Error, Result};
use crate::graph::Tape;
use crate::ode;
use crate::optim::Adam;
use crate::params::{ParamId, ParamStore};
use crate::scene::{is_test_user, Dataset, SensingSample};
use crate::tensor::{Real, Tensor};
use crate::unet::{UNetConfig, UnetModel};

/// A source/target pair with its sampled time index.
#[derive(Debug, Clone)]
pub struct JointSample<T> {
    pub x0: Tensor<T>,
    pub x1: Tensor<T>,
    pub t: f64,
}

/// `x_t = t x1 + (1 - t) x0 + sigma_min eps`.
pub fn interpolate<T: Real>(
    x0: &Tensor<T>,
    x1: &Tensor<T>,
    t: f64,
    sigma_min: f64,
    eps: &Tensor<T>,
) -> Result<Tensor<T>> {
    if x0.shape() != x1.shape() || x0.shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "interpolate on {:?}, {:?}, eps {:?}",
            x0.shape(),
            x1.shape(),
            eps.shape()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfDomain("interpolation time must lie in [0, 1]"));
    }
    let mut out = x1.scale(T::lit(t));
    out.axpy(T::lit(1.0 - t), x0)?;
    out.axpy(T::lit(sigma_min), eps)?;
    Ok(out)
}

/// The conditional transport velocity `x1 - x0` (constant in t).
pub fn conditional_velocity<T: Real>(x0: &Tensor<T>, x1: &Tensor<T>) -> Result<Tensor<T>> {
    x1.sub(x0)
}

/// Empirical velocity-regression loss
/// `mean_s || v(t x1 + (1-t) x0, t) - (x1 - x0) ||^2` (the zero-noise limit
/// of the interpolant). Reference implementation used as the oracle for the
/// in-graph loss.
pub fn cfm_loss<T: Real, F>(samples: &[JointSample<T>], mut velocity: F) -> Result<T>
where
    F: FnMut(&Tensor<T>, f64) -> Result<Tensor<T>>,
{
    if samples.is_empty() {
        return Err(Error::Contract("velocity-regression loss needs at least one sample"));
    }
    let mut acc = T::zero();
    for s in samples {
        let zero = Tensor::zeros(s.x0.shape());
        let xt = interpolate(&s.x0, &s.x1, s.t, 0.0, &zero)?;
        let v = velocity(&xt, s.t)?;
        let target = conditional_velocity(&s.x0, &s.x1)?;
        acc = acc + v.sub(&target)?.norm_sq();
    }
    Ok(acc / T::lit(samples.len() as f64))
}

/// Cosine similarity of two flattened tensors.
fn flat_cosine<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    let na = a.norm().max(T::lit(1e-30));
    let nb = b.norm().max(T::lit(1e-30));
    Ok(a.dot(b)? / (na * nb))
}

/// One contrastive row: `-log softmax(sims / tau)[positive]`. Exposed for
/// the degenerate single-row check; batch-level use requires S >= 2.
pub(crate) fn contrastive_row_loss<T: Real>(sims: &[T], positive: usize, tau: T) -> T {
    let scaled: Vec<T> = sims.iter().map(|&s| s / tau).collect();
    let mx = scaled.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let lse = scaled
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - mx).exp())
        .ln()
        + mx;
    lse - scaled[positive]
}

/// Modality-alignment loss: temperature-scaled contrastive attraction of each
/// sampled latent to its paired channel (repelling the rest of the batch)
/// plus `lambda` times the KL-style regularizer
/// `-mean_s sum(1 + log sigma^2 - mu^2 - sigma^2)` (twice the standard
/// Gaussian KL; kept in this form deliberately).
pub fn alignment_loss<T: Real>(
    x0s: &[Tensor<T>],
    x1s: &[Tensor<T>],
    tau: T,
    lambda: f64,
    latents: &[LatentGaussian<T>],
    contrastive_enabled: bool,
) -> Result<T> {
    let s_count = x0s.len();
    if s_count < 2 {
        return Err(Error::Contract("alignment loss needs a batch of at least two samples"));
    }
    if x1s.len() != s_count || latents.len() != s_count {
        return Err(Error::Contract("alignment loss batch lists must have equal length"));
    }
    let mut contrastive = T::zero();
    if contrastive_enabled {
        for s in 0..s_count {
            let sims: Vec<T> = x1s
                .iter()
                .map(|x1| flat_cosine(&x0s[s], x1))
                .collect::<Result<_>>()?;
            contrastive = contrastive + contrastive_row_loss(&sims, s, tau);
        }
        contrastive = contrastive / T::lit(s_count as f64);
    }

    let mut kl = T::zero();
    for g in latents {
        let mut acc = T::zero();
        for (&m, &sl) in g.mu.data().iter().zip(g.sigma_log.data().iter()) {
            acc = acc + (T::one() + sl - m * m - sl.exp());
        }
        kl = kl - acc;
    }
    kl = kl / T::lit(s_count as f64);

    Ok(contrastive + T::lit(lambda) * kl)
}

/// Training configuration. Desk-scale defaults; the larger published-style
/// settings (batch 128, learning rate 1e-4, 2000 epochs) remain reachable
/// through the config file.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Number of optimization rounds; each draws one fresh minibatch
    /// (without replacement) and takes one Adam step.
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the KL regularizer inside the alignment loss.
    pub lambda_kl: f64,
    /// Disable to train the plain velocity-regression ablation.
    pub contrastive_enabled: bool,
    pub sigma_min: f64,
    /// Initial contrastive temperature (stored as log, kept positive).
    pub tau_init: f64,
    pub seed: u64,
    /// Train fraction of the user-id split.
    pub split_ratio: f64,
    /// Integration steps for the per-epoch test metric.
    pub eval_k: usize,
    /// Test samples used for the per-epoch metric (0 disables).
    pub eval_subset: usize,
    pub encoder: EncoderConfig,
    pub unet: UNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 300,
            learning_rate: 3e-3,
            lambda_kl: 1e-4,
            contrastive_enabled: true,
            sigma_min: 0.0,
            tau_init: 0.07,
            seed: 1,
            split_ratio: 0.9,
            eval_k: 2,
            eval_subset: 32,
            encoder: EncoderConfig::default(),
            unet: UNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be >= 2 (contrastive negatives)".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.lambda_kl < 0.0 || self.sigma_min < 0.0 {
            return Err(Error::Config("lambda and sigma_min must be nonnegative".into()));
        }
        if self.tau_init <= 0.0 {
            return Err(Error::Config("initial temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return Err(Error::Config("split ratio must lie in [0, 1]".into()));
        }
        self.encoder.validate()?;
        self.unet.validate()
    }
}

/// Trainable contrastive temperature `tau = exp(raw)`.
#[derive(Debug, Clone, Copy)]
pub struct Temperature {
    pub raw: ParamId,
}

impl Temperature {
    pub fn register(store: &mut ParamStore<f32>, tau_init: f64) -> Self {
        let raw = store.register("align/tau_raw", Tensor::scalar(tau_init.ln() as f32));
        Self { raw }
    }

    pub fn value(&self, store: &ParamStore<f32>) -> f64 {
        (store.value(self.raw).data()[0] as f64).exp()
    }
}

/// Per-epoch loss components and held-out metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub cfm: f64,
    pub contrastive: f64,
    pub kl: f64,
    pub total: f64,
    pub test_nmse_db: f64,
}

/// Everything a training run produces.
pub struct TrainOutcome {
    pub store: ParamStore<f32>,
    pub encoder: EncoderModel,
    pub unet: UnetModel,
    pub temperature: Temperature,
    pub history: Vec<EpochStats>,
}

struct PreparedSample {
    image: Tensor<f32>,
    cloud: Tensor<f32>,
    coord: [f64; 2],
    target: Tensor<f32>,
}

fn prepare(samples: &[&SensingSample]) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(PreparedSample {
                image: s.image.clone(),
                cloud: s.cloud.clone(),
                coord: s.coord,
                target: s.stacked_angular_f32()?,
            })
        })
        .collect()
}

/// Joint training over encoder, velocity field and temperature.
///
/// Each epoch draws `batch_size` distinct samples and per-sample times
/// `t ~ U[0,1]`, forms the reparameterized latents, and takes one Adam step
/// on `velocity regression + alignment`. The run aborts with a diagnostic if
/// the loss turns non-finite.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::Contract("training dataset is empty"));
    }
    let n_ue = dataset.meta.n_ue as usize;
    let n_bs = dataset.meta.n_bs as usize;

    let train_refs: Vec<&SensingSample> = dataset
        .samples
        .iter()
        .filter(|s| !is_test_user(s.user_id, config.split_ratio))
        .collect();
    let test_refs: Vec<&SensingSample> = dataset
        .samples
        .iter()
        .filter(|s| is_test_user(s.user_id, config.split_ratio))
        .collect();
    if train_refs.len() < config.batch_size {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} training samples",
            config.batch_size,
            train_refs.len()
        )));
    }
    let train_set = prepare(&train_refs)?;
    let eval_count = config.eval_subset.min(test_refs.len());
    let eval_set = prepare(&test_refs[..eval_count])?;
    let eval_truth: Vec<&SensingSample> = test_refs[..eval_count].to_vec();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::<f32>::new();
    let encoder = EncoderModel::new(&mut store, &mut rng, config.encoder.clone(), n_ue, n_bs)?;
    let unet = UnetModel::new(&mut store, &mut rng, config.unet.clone(), n_ue, n_bs)?;
    let temperature = Temperature::register(&mut store, config.tau_init);
    let mut adam = Adam::new(&store);

    let latent_shape = [2usize, n_ue, n_bs];
    let flat_len = 2 * n_ue * n_bs;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        // Draw order is fixed: batch indices, then per sample t and noise.
        let idx = rand::seq::index::sample(&mut rng, train_set.len(), config.batch_size).into_vec();
        let times: Vec<f64> = (0..config.batch_size).map(|_| rng.random::<f64>()).collect();
        let noises: Vec<Tensor<f32>> = (0..config.batch_size)
            .map(|_| Tensor::rand_normal(&mut rng, &latent_shape))
            .collect();
        let path_noises: Vec<Option<Tensor<f32>>> = (0..config.batch_size)
            .map(|_| {
                (config.sigma_min > 0.0).then(|| Tensor::rand_normal(&mut rng, &latent_shape))
            })
            .collect();

        let mut tape = Tape::new();
        let tau_raw = tape.param(&store, temperature.raw);
        let tau_node = tape.exp(tau_raw);

        let mut bank_data = Vec::with_capacity(config.batch_size * flat_len);
        for &i in &idx {
            bank_data.extend_from_slice(train_set[i].target.data());
        }
        let bank = Tensor::new(&[config.batch_size, flat_len], bank_data)?;

        let mut cfm_terms = Vec::with_capacity(config.batch_size);
        let mut kl_terms = Vec::with_capacity(config.batch_size);
        let mut ce_terms = Vec::with_capacity(config.batch_size);
        for (slot, &i) in idx.iter().enumerate() {
            let sample = &train_set[i];
            let t = times[slot];
            let (mu, sigma_log) =
                encoder.encode_graph(&mut tape, &store, &sample.image, &sample.cloud, &sample.coord)?;
            let half_sl = tape.scale(sigma_log, 0.5);
            let sigma = tape.exp(half_sl);
            let noise_term = tape.mul_const(sigma, &noises[slot])?;
            let x0 = tape.add(mu, noise_term)?;

            // x_t = (1 - t) x0 + t x1 (+ sigma_min eps when configured)
            let x0_scaled = tape.scale(x0, (1.0 - t) as f32);
            let mut drift = sample.target.scale(t as f32);
            if let Some(pn) = &path_noises[slot] {
                drift.axpy(config.sigma_min as f32, pn)?;
            }
            let xt = tape.add_const(x0_scaled, &drift)?;
            let v = unet.velocity_graph(&mut tape, &store, xt, t)?;

            // v - (x1 - x0)
            let minus_target = tape.add_const(v, &sample.target.scale(-1.0))?;
            let diff = tape.add(minus_target, x0)?;
            cfm_terms.push(tape.sum_sq(diff));

            kl_terms.push(tape.kl_gauss(mu, sigma_log)?);

            if config.contrastive_enabled {
                let x0_flat = tape.reshape(x0, &[flat_len])?;
                let sims = tape.cosine_bank(x0_flat, &bank)?;
                let logits = tape.div_by_scalar(sims, tau_node)?;
                ce_terms.push(tape.cross_entropy_pick(logits, slot)?);
            }
        }

        let cfm_vec = tape.concat0(&cfm_terms)?;
        let cfm = tape.mean(cfm_vec)?;
        let kl_vec = tape.concat0(&kl_terms)?;
        let kl = tape.mean(kl_vec)?;
        let kl_scaled = tape.scale(kl, config.lambda_kl as f32);
        let total = if config.contrastive_enabled {
            let ce_vec = tape.concat0(&ce_terms)?;
            let contrastive = tape.mean(ce_vec)?;
            let align = tape.add(contrastive, kl_scaled)?;
            tape.add(cfm, align)?
        } else {
            tape.add(cfm, kl_scaled)?
        };

        let cfm_v = tape.scalar_value(cfm) as f64;
        let kl_v = tape.scalar_value(kl) as f64;
        let contrastive_v = if config.contrastive_enabled {
            tape.scalar_value(total) as f64 - cfm_v - config.lambda_kl * kl_v
        } else {
            0.0
        };
        let total_v = tape.scalar_value(total) as f64;
        if !total_v.is_finite() {
            return Err(Error::Diverged {
                epoch,
                cfm: cfm_v,
                contrastive: contrastive_v,
                kl: kl_v,
            });
        }

        store.zero_grads();
        tape.backward(total, &mut store)?;
        adam.step(&mut store, config.learning_rate)?;
        drop(tape);

        let test_nmse_db = if eval_set.is_empty() || config.eval_k == 0 {
            f64::NAN
        } else {
            eval_nmse_db(&encoder, &unet, &store, &eval_set, &eval_truth, config.eval_k)?
        };

        history.push(EpochStats {
            epoch,
            cfm: cfm_v,
            contrastive: contrastive_v,
            kl: kl_v,
            total: total_v,
            test_nmse_db,
        });
    }

    Ok(TrainOutcome { store, encoder, unet, temperature, history })
}

fn eval_nmse_db(
    encoder: &EncoderModel,
    unet: &UnetModel,
    store: &ParamStore<f32>,
    eval_set: &[PreparedSample],
    truth: &[&SensingSample],
    k: usize,
) -> Result<f64> {
    let mut linear_sum = 0.0f64;
    let mut count = 0usize;
    for (p, s) in eval_set.iter().zip(truth.iter()) {
        let result = ode::infer_channel(encoder, unet, store, &p.image, &p.cloud, &p.coord, k)?;
        let nm = crate::channel::nmse(&s.channel, &result.h_hat)?;
        linear_sum += nm.linear;
        count += 1;
    }
    let mean = linear_sum / count as f64;
    Ok(if mean <= 0.0 { NMSE_DB_FLOOR } else { (10.0 * mean.log10()).max(NMSE_DB_FLOOR) })
}

/// Render one history row as the CSV line used by the training artifacts.
pub fn history_csv_row(s: &EpochStats) -> String {
    format!(
        "{},{},{},{},{},{}",
        s.epoch, s.cfm, s.contrastive, s.kl, s.total, s.test_nmse_db
    )
}

pub const HISTORY_CSV_HEADER: &str = "epoch,cfm_loss,contrastive_loss,kl_loss,total,test_nmse_db";

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(vals: &[f64]) -> Tensor<f64> {
        Tensor::new(&[vals.len()], vals.to_vec()).unwrap()
    }

    #[test]
    fn interpolate_endpoints_exact() {
        let x0 = tensor(&[1.0, -2.0]);
        let x1 = tensor(&[3.0, 5.0]);
        let eps = Tensor::zeros(&[2]);
        assert_eq!(interpolate(&x0, &x1, 0.0, 0.0, &eps).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, 1.0, 0.0, &eps).unwrap(), x1);
        let mid = interpolate(&Tensor::zeros(&[1]), &tensor(&[2.0]), 0.5, 0.0, &Tensor::zeros(&[1]))
            .unwrap();
        assert_eq!(mid.data(), &[1.0]);
    }

    #[test]
    fn interpolate_rejects_bad_args() {
        let x0 = tensor(&[1.0]);
        let x1 = tensor(&[1.0, 2.0]);
        assert!(interpolate(&x0, &x1, 0.5, 0.0, &Tensor::zeros(&[1])).is_err());
        let x1 = tensor(&[2.0]);
        assert!(interpolate(&x0, &x1, 1.5, 0.0, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn conditional_velocity_identities() {
        let x0 = tensor(&[1.0, 2.0]);
        assert_eq!(conditional_velocity(&x0, &x0).unwrap().data(), &[0.0, 0.0]);
        let x1 = tensor(&[4.0, 6.0]);
        assert_eq!(
            conditional_velocity(&Tensor::zeros(&[2]), &x1).unwrap(),
            x1
        );
        // Antisymmetry.
        let u = conditional_velocity(&x0, &x1).unwrap();
        let v = conditional_velocity(&x1, &x0).unwrap();
        assert_eq!(u.scale(-1.0), v);
    }

    #[test]
    fn affine_identity_holds_along_the_path() {
        // x_t + (1 - t) u == x1 for u = x1 - x0, any t.
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        let x0: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[8], -2.0, 2.0);
        let x1: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[8], -2.0, 2.0);
        let u = conditional_velocity(&x0, &x1).unwrap();
        for &t in &[0.0, 0.2, 0.5, 0.777, 1.0] {
            let mut xt = interpolate(&x0, &x1, t, 0.0, &Tensor::zeros(&[8])).unwrap();
            xt.axpy(1.0 - t, &u).unwrap();
            assert!(xt.max_abs_diff(&x1) < 1e-12, "t={t}");
        }
    }

    #[test]
    fn cfm_loss_oracle_and_zero_stub() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<JointSample<f64>> = (0..5)
            .map(|_| JointSample {
                x0: Tensor::rand_uniform(&mut rng, &[6], -1.0, 1.0),
                x1: Tensor::rand_uniform(&mut rng, &[6], -1.0, 1.0),
                t: rng.random::<f64>(),
            })
            .collect();

        // Perfect stub: v == x1 - x0 for the right pair is impossible to
        // know from x_t alone, so feed it per-call via closure state.
        let mut call = 0usize;
        let perfect = cfm_loss(&samples, |_x, _t| {
            let s = &samples[call];
            call += 1;
            conditional_velocity(&s.x0, &s.x1)
        })
        .unwrap();
        assert!(perfect.abs() < 1e-12);

        let zero = cfm_loss(&samples, |x, _| Ok(Tensor::zeros(x.shape()))).unwrap();
        let expect: f64 = samples
            .iter()
            .map(|s| conditional_velocity(&s.x0, &s.x1).unwrap().norm_sq())
            .sum::<f64>()
            / samples.len() as f64;
        assert!((zero - expect).abs() < 1e-12);

        assert!(cfm_loss::<f64, _>(&[], |x, _| Ok(x.clone())).is_err());
    }

    #[test]
    fn contrastive_row_degenerate_single_entry_is_zero() {
        let loss = contrastive_row_loss(&[1.0f64], 0, 1.0);
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn alignment_loss_closed_form_two_orthogonal_pairs() {
        // x0 equals its x1 and pairs are orthogonal: each row loss is
        // -log(e / (e + 1)).
        let a = tensor(&[1.0, 0.0]);
        let b = tensor(&[0.0, 1.0]);
        let latents = [
            LatentGaussian { mu: Tensor::zeros(&[2]), sigma_log: Tensor::zeros(&[2]) },
            LatentGaussian { mu: Tensor::zeros(&[2]), sigma_log: Tensor::zeros(&[2]) },
        ];
        let loss = alignment_loss(
            &[a.clone(), b.clone()],
            &[a, b],
            1.0,
            0.5,
            &latents,
            true,
        )
        .unwrap();
        let row = -(1.0f64.exp() / (1.0f64.exp() + 1.0)).ln();
        assert!((loss - row).abs() < 1e-12, "loss {loss} vs {row}");
    }

    #[test]
    fn alignment_loss_kl_zero_at_standard_normal_and_needs_batch() {
        let x = tensor(&[1.0, 0.0]);
        let y = tensor(&[0.0, 1.0]);
        let latents = [
            LatentGaussian { mu: Tensor::zeros(&[2]), sigma_log: Tensor::zeros(&[2]) },
            LatentGaussian { mu: Tensor::zeros(&[2]), sigma_log: Tensor::zeros(&[2]) },
        ];
        // Contrastive off, lambda 1: pure KL at (mu=0, sigma=1) is zero.
        let loss =
            alignment_loss(&[x.clone(), y.clone()], &[x.clone(), y.clone()], 1.0, 1.0, &latents, false)
                .unwrap();
        assert_eq!(loss, 0.0);

        assert!(alignment_loss(&[x.clone()], &[y], 1.0, 0.0, &latents[..1], true).is_err());
    }

    #[test]
    fn contrastive_is_scale_invariant_in_x0() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        let x0s: Vec<Tensor<f64>> =
            (0..3).map(|_| Tensor::rand_uniform(&mut rng, &[5], -1.0, 1.0)).collect();
        let x1s: Vec<Tensor<f64>> =
            (0..3).map(|_| Tensor::rand_uniform(&mut rng, &[5], -1.0, 1.0)).collect();
        let latents: Vec<LatentGaussian<f64>> = (0..3)
            .map(|_| LatentGaussian { mu: Tensor::zeros(&[5]), sigma_log: Tensor::zeros(&[5]) })
            .collect();
        let base = alignment_loss(&x0s, &x1s, 0.3, 0.0, &latents, true).unwrap();
        let scaled: Vec<Tensor<f64>> = x0s.iter().map(|x| x.scale(7.5)).collect();
        let after = alignment_loss(&scaled, &x1s, 0.3, 0.0, &latents, true).unwrap();
        assert!((base - after).abs() < 1e-12);
    }
}
