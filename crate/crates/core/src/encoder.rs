//! Multimodal stochastic encoder: image CNN, point-cloud network and
//! coordinate MLP fused by multi-head self-attention into a Gaussian latent
//! shaped like the stacked channel tensor.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NodeRef, Tape};
use crate::layers::{sinusoidal_embed, AttentionFuse, Conv1dPointwise, Conv2d, Linear, LEAKY_SLOPE};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Architecture knobs for the encoder. Defaults are the desk-scale setup.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct EncoderConfig {
    /// Square input image side; must survive three stride-2 halvings.
    pub image_size: usize,
    pub image_channels: usize,
    /// First CNN width; later stages double it.
    pub cnn_base: usize,
    /// Widths of the three pointwise Conv1D stages.
    pub pointnet_widths: [usize; 3],
    /// Points per cloud.
    pub cloud_points: usize,
    /// Per-modality feature dimension d.
    pub feature_dim: usize,
    /// Sinusoidal embedding width for the 2-D coordinate (split evenly).
    pub coord_embed_dim: usize,
    pub attn_heads: usize,
    /// Cloud coordinates are divided by this before the network.
    pub cloud_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            image_channels: 3,
            cnn_base: 16,
            pointnet_widths: [32, 64, 128],
            cloud_points: 256,
            feature_dim: 128,
            coord_embed_dim: 128,
            attn_heads: 4,
            cloud_scale: 50.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return Err(Error::Config(format!(
                "image size must be a positive multiple of 8, got {}",
                self.image_size
            )));
        }
        if self.image_channels == 0
            || self.cnn_base == 0
            || self.cloud_points == 0
            || self.feature_dim == 0
            || self.pointnet_widths.iter().any(|&w| w == 0)
        {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.attn_heads == 0 || self.feature_dim % self.attn_heads != 0 {
            return Err(Error::Config(format!(
                "feature dim {} must divide into {} attention heads",
                self.feature_dim, self.attn_heads
            )));
        }
        if self.coord_embed_dim % 4 != 0 || self.coord_embed_dim == 0 {
            return Err(Error::Config(format!(
                "coordinate embedding dim must be a positive multiple of 4, got {}",
                self.coord_embed_dim
            )));
        }
        if self.cloud_scale <= 0.0 {
            return Err(Error::Config("cloud scale must be positive".into()));
        }
        Ok(())
    }
}

/// Per-element Gaussian over the stacked channel tensor: `mu` and the log of
/// the variance. The standard deviation `exp(0.5 * sigma_log)` is positive by
/// construction.
#[derive(Debug, Clone)]
pub struct LatentGaussian<T> {
    pub mu: Tensor<T>,
    pub sigma_log: Tensor<T>,
}

impl<T: Real> LatentGaussian<T> {
    /// Reparameterized draw `mu + exp(0.5 sigma_log) . eps`.
    pub fn sample(&self, eps: &Tensor<T>) -> Result<Tensor<T>> {
        if eps.shape() != self.mu.shape() {
            return Err(Error::Shape(format!(
                "noise shape {:?} vs latent {:?}",
                eps.shape(),
                self.mu.shape()
            )));
        }
        let half = T::lit(0.5);
        let sigma = self.sigma_log.map(|s| (half * s).exp());
        self.mu.add(&sigma.mul(eps)?)
    }

    /// Mode of the Gaussian (deterministic inference initialization).
    pub fn map_mode(&self) -> Tensor<T> {
        self.mu.clone()
    }
}

/// Reparameterized sampling as a free function.
pub fn sample_latent<T: Real>(g: &LatentGaussian<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    g.sample(eps)
}

/// MAP (mode) extraction as a free function.
pub fn map_mode<T: Real>(g: &LatentGaussian<T>) -> Tensor<T> {
    g.map_mode()
}

/// The encoder network. Parameters live in an external [`ParamStore`] under
/// the `encoder/` name prefix.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    n_ue: usize,
    n_bs: usize,
    cnn: [Conv2d; 3],
    cnn_fc: Linear,
    pointnet: [Conv1dPointwise; 3],
    pointnet_fc: Linear,
    mlp: [Linear; 2],
    attn: AttentionFuse,
    fuse_fc: Linear,
    head_mu: Conv2d,
    head_sigma_log: Conv2d,
}

/// Initial bias of the log-variance head. The latent noise starts near
/// sigma = 0.05 so the sampled latents stay close to the mean early on;
/// otherwise the reparameterization noise drowns the contrastive signal at
/// channel scale.
const SIGMA_LOG_BIAS_INIT: f64 = -6.0;

impl EncoderModel {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        config: EncoderConfig,
        n_ue: usize,
        n_bs: usize,
    ) -> Result<Self> {
        config.validate()?;
        if n_ue == 0 || n_bs == 0 {
            return Err(Error::Config("antenna counts must be positive".into()));
        }
        let d = config.feature_dim;
        let cb = config.cnn_base;
        let cnn = [
            Conv2d::new(store, rng, "encoder/cnn.conv0", config.image_channels, cb, 2),
            Conv2d::new(store, rng, "encoder/cnn.conv1", cb, 2 * cb, 2),
            Conv2d::new(store, rng, "encoder/cnn.conv2", 2 * cb, 4 * cb, 2),
        ];
        let side = config.image_size / 8;
        let flat = 4 * cb * side * side;
        let cnn_fc = Linear::new(store, rng, "encoder/cnn.fc", flat, d);

        let [p0, p1, p2] = config.pointnet_widths;
        let pointnet = [
            Conv1dPointwise::new(store, rng, "encoder/pointnet.conv0", 3, p0),
            Conv1dPointwise::new(store, rng, "encoder/pointnet.conv1", p0, p1),
            Conv1dPointwise::new(store, rng, "encoder/pointnet.conv2", p1, p2),
        ];
        let pointnet_fc = Linear::new(store, rng, "encoder/pointnet.fc", p2, d);

        let de = config.coord_embed_dim;
        let mlp = [
            Linear::new(store, rng, "encoder/mlp.fc0", de, de),
            Linear::new(store, rng, "encoder/mlp.fc1", de, d),
        ];

        let attn = AttentionFuse::new(store, rng, "encoder/attn", d, config.attn_heads)?;
        let fuse_fc = Linear::new(store, rng, "encoder/fuse.fc", 3 * d, 2 * n_ue * n_bs);
        let head_mu = Conv2d::new(store, rng, "encoder/head.mu", 2, 2, 1);
        let head_sigma_log = Conv2d::new(store, rng, "encoder/head.sigma_log", 2, 2, 1);
        store
            .value_mut(head_sigma_log.b)
            .fill(T::lit(SIGMA_LOG_BIAS_INIT));

        Ok(Self {
            config,
            n_ue,
            n_bs,
            cnn,
            cnn_fc,
            pointnet,
            pointnet_fc,
            mlp,
            attn,
            fuse_fc,
            head_mu,
            head_sigma_log,
        })
    }

    pub fn n_ue(&self) -> usize {
        self.n_ue
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    /// Ids of every parameter of this model, in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for c in &self.cnn {
            ids.extend([c.w, c.b]);
        }
        ids.extend([self.cnn_fc.w, self.cnn_fc.b]);
        for c in &self.pointnet {
            ids.extend([c.w, c.b]);
        }
        ids.extend([self.pointnet_fc.w, self.pointnet_fc.b]);
        for l in &self.mlp {
            ids.extend([l.w, l.b]);
        }
        ids.extend([self.attn.wq, self.attn.wk, self.attn.wv, self.attn.wo]);
        ids.extend([self.fuse_fc.w, self.fuse_fc.b]);
        ids.extend([self.head_mu.w, self.head_mu.b]);
        ids.extend([self.head_sigma_log.w, self.head_sigma_log.b]);
        ids
    }

    fn check_inputs<T: Real>(
        &self,
        image: &Tensor<T>,
        cloud: &Tensor<T>,
        coord: &[f64],
    ) -> Result<()> {
        let c = &self.config;
        if image.shape() != [c.image_channels, c.image_size, c.image_size] {
            return Err(Error::Shape(format!(
                "image shape {:?}, expected {:?}",
                image.shape(),
                [c.image_channels, c.image_size, c.image_size]
            )));
        }
        if cloud.shape() != [3, c.cloud_points] {
            return Err(Error::Shape(format!(
                "cloud shape {:?}, expected [3, {}]",
                cloud.shape(),
                c.cloud_points
            )));
        }
        if coord.len() != 2 {
            return Err(Error::Shape(format!(
                "coordinate must be 2-D, got {}",
                coord.len()
            )));
        }
        Ok(())
    }

    /// Record the encoder forward pass on `tape`; returns `(mu, sigma_log)`
    /// nodes, each shaped `[2, n_ue, n_bs]`.
    pub fn encode_graph<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        image: &Tensor<T>,
        cloud: &Tensor<T>,
        coord: &[f64],
    ) -> Result<(NodeRef, NodeRef)> {
        self.check_inputs(image, cloud, coord)?;
        let slope = T::lit(LEAKY_SLOPE);

        // Image branch: three stride-2 convs with doubling widths, then FC.
        let mut x = tape.constant(image.clone());
        for conv in &self.cnn {
            let y = conv.apply(tape, store, x)?;
            x = tape.leaky_relu(y, slope);
        }
        let flat_len = tape.value(x).numel();
        let flat = tape.reshape(x, &[flat_len])?;
        let img_feat = self.cnn_fc.apply(tape, store, flat)?;
        let img_feat = tape.leaky_relu(img_feat, slope);

        // Point branch: per-point feature lift, max pool, FC.
        let scaled_cloud = cloud.scale(T::lit(1.0 / self.config.cloud_scale));
        let mut p = tape.constant(scaled_cloud);
        for conv in &self.pointnet {
            let y = conv.apply(tape, store, p)?;
            p = tape.leaky_relu(y, slope);
        }
        let pooled = tape.global_max_pool(p)?;
        let cloud_feat = self.pointnet_fc.apply(tape, store, pooled)?;
        let cloud_feat = tape.leaky_relu(cloud_feat, slope);

        // Coordinate branch: sinusoidal embedding of each component, two FCs.
        let half = self.config.coord_embed_dim / 2;
        let ex: Tensor<T> = sinusoidal_embed(coord[0], half)?;
        let ey: Tensor<T> = sinusoidal_embed(coord[1], half)?;
        let exn = tape.constant(ex);
        let eyn = tape.constant(ey);
        let embed = tape.concat0(&[exn, eyn])?;
        let h = self.mlp[0].apply(tape, store, embed)?;
        let h = tape.leaky_relu(h, slope);
        let coord_feat = self.mlp[1].apply(tape, store, h)?;
        let coord_feat = tape.leaky_relu(coord_feat, slope);

        // Fuse the three modality tokens and project into channel space.
        let fused = self.attn.apply(tape, store, &[img_feat, cloud_feat, coord_feat])?;
        let map = self.fuse_fc.apply(tape, store, fused)?;
        let map = tape.leaky_relu(map, slope);
        let map = tape.reshape(map, &[2, self.n_ue, self.n_bs])?;

        let mu = self.head_mu.apply(tape, store, map)?;
        let sigma_log = self.head_sigma_log.apply(tape, store, map)?;
        Ok((mu, sigma_log))
    }

    /// Deterministic evaluation into a [`LatentGaussian`].
    pub fn encode<T: Real>(
        &self,
        store: &ParamStore<T>,
        image: &Tensor<T>,
        cloud: &Tensor<T>,
        coord: &[f64],
    ) -> Result<LatentGaussian<T>> {
        let mut tape = Tape::new();
        let (mu, sigma_log) = self.encode_graph(&mut tape, store, image, cloud, coord)?;
        Ok(LatentGaussian {
            mu: tape.value(mu).clone(),
            sigma_log: tape.value(sigma_log).clone(),
        })
    }
}
