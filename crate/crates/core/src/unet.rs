//! Time-conditioned U-Net predicting the instantaneous transport velocity
//! over channel-tensor-shaped states.
//!
//! Each block receives the sinusoidal time embedding through its own FC
//! projection, added to the feature map before the convolutions. The decoder
//! concatenates the skip tensor from the matching encoder resolution, fuses
//! time, convolves, then upsamples (nearest neighbor).

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NodeRef, Tape};
use crate::layers::{sinusoidal_embed, Conv2d, Linear, LEAKY_SLOPE};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// U-Net sizing. Defaults match the desk-scale channel maps.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct UNetConfig {
    /// Number of stride-2 levels; spatial dims must be divisible by 2^depth.
    pub depth: usize,
    pub base_channels: usize,
    /// Sinusoidal time-embedding width.
    pub time_embed_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { depth: 2, base_channels: 32, time_embed_dim: 64 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("unet depth must be >= 1".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("unet base channels must be positive".into()));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time embedding dim must be even and positive, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }
}

struct EncLevel {
    t_proj: Linear,
    conv: Conv2d,
    down: Conv2d,
}

struct DecLevel {
    t_proj: Linear,
    conv: Conv2d,
}

/// Velocity-field network `v(x, t)`; parameters carry the `velocity/` prefix.
pub struct UnetModel {
    pub config: UNetConfig,
    n_ue: usize,
    n_bs: usize,
    enc: Vec<EncLevel>,
    bneck_t: Linear,
    bneck: [Conv2d; 2],
    dec: Vec<DecLevel>,
    final_conv: Conv2d,
}

impl UnetModel {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        config: UNetConfig,
        n_ue: usize,
        n_bs: usize,
    ) -> Result<Self> {
        config.validate()?;
        let div = 1usize << config.depth;
        if n_ue % div != 0 || n_bs % div != 0 {
            return Err(Error::Config(format!(
                "spatial dims {n_ue}x{n_bs} not divisible by 2^{}",
                config.depth
            )));
        }
        let dt = config.time_embed_dim;
        let base = config.base_channels;
        let level_ch = |l: usize| base << l;

        let mut enc = Vec::with_capacity(config.depth);
        let mut c_in = 2usize;
        for l in 0..config.depth {
            let c = level_ch(l);
            enc.push(EncLevel {
                t_proj: Linear::new(store, rng, &format!("velocity/enc{l}.t"), dt, c_in),
                conv: Conv2d::new(store, rng, &format!("velocity/enc{l}.conv"), c_in, c, 1),
                down: Conv2d::new(store, rng, &format!("velocity/enc{l}.down"), c, c, 2),
            });
            c_in = c;
        }
        let cb = level_ch(config.depth - 1);
        let bneck_t = Linear::new(store, rng, "velocity/bneck.t", dt, cb);
        let bneck = [
            Conv2d::new(store, rng, "velocity/bneck.conv0", cb, cb, 1),
            Conv2d::new(store, rng, "velocity/bneck.conv1", cb, cb, 1),
        ];

        let mut dec = Vec::with_capacity(config.depth);
        let mut c_up = cb;
        for l in (0..config.depth).rev() {
            let skip_c = level_ch(l);
            let cat_c = c_up + skip_c;
            let out_c = if l == 0 { base } else { level_ch(l - 1) };
            dec.push(DecLevel {
                t_proj: Linear::new(store, rng, &format!("velocity/dec{l}.t"), dt, cat_c),
                conv: Conv2d::new(store, rng, &format!("velocity/dec{l}.conv"), cat_c, out_c, 1),
            });
            c_up = out_c;
        }
        let final_conv = Conv2d::new(store, rng, "velocity/final.conv", base, 2, 1);

        Ok(Self { config, n_ue, n_bs, enc, bneck_t, bneck, dec, final_conv })
    }

    pub fn n_ue(&self) -> usize {
        self.n_ue
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for e in &self.enc {
            ids.extend([e.t_proj.w, e.t_proj.b, e.conv.w, e.conv.b, e.down.w, e.down.b]);
        }
        ids.extend([self.bneck_t.w, self.bneck_t.b]);
        for b in &self.bneck {
            ids.extend([b.w, b.b]);
        }
        for d in &self.dec {
            ids.extend([d.t_proj.w, d.t_proj.b, d.conv.w, d.conv.b]);
        }
        ids.extend([self.final_conv.w, self.final_conv.b]);
        ids
    }

    /// Record `v(x, t)` on the tape. `x` must be `[2, n_ue, n_bs]` and
    /// `t` must lie in `[0, 1]`.
    pub fn velocity_graph<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeRef,
        t: f64,
    ) -> Result<NodeRef> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfDomain("velocity time must lie in [0, 1]"));
        }
        let shape = tape.value(x).shape().to_vec();
        if shape != [2, self.n_ue, self.n_bs] {
            return Err(Error::Shape(format!(
                "velocity input {:?}, expected {:?}",
                shape,
                [2, self.n_ue, self.n_bs]
            )));
        }
        let slope = T::lit(LEAKY_SLOPE);
        let temb: Tensor<T> = sinusoidal_embed(t, self.config.time_embed_dim)?;
        let temb = tape.constant(temb);

        let mut h = x;
        let mut skips = Vec::with_capacity(self.enc.len());
        for level in &self.enc {
            let tb = level.t_proj.apply(tape, store, temb)?;
            let fused = tape.broadcast_chan_add(h, tb)?;
            let c = level.conv.apply(tape, store, fused)?;
            let c = tape.leaky_relu(c, slope);
            let d = level.down.apply(tape, store, c)?;
            h = tape.leaky_relu(d, slope);
            skips.push(h);
        }

        let tb = self.bneck_t.apply(tape, store, temb)?;
        let mut b = tape.broadcast_chan_add(h, tb)?;
        for conv in &self.bneck {
            let y = conv.apply(tape, store, b)?;
            b = tape.leaky_relu(y, slope);
        }

        let mut y = b;
        for (i, level) in self.dec.iter().enumerate() {
            let skip = skips[skips.len() - 1 - i];
            let cat = tape.concat0(&[y, skip])?;
            let tb = level.t_proj.apply(tape, store, temb)?;
            let fused = tape.broadcast_chan_add(cat, tb)?;
            let c = level.conv.apply(tape, store, fused)?;
            let c = tape.leaky_relu(c, slope);
            y = tape.upsample2x(c)?;
        }
        self.final_conv.apply(tape, store, y)
    }

    /// Evaluate `v(x, t)` into a fresh tensor.
    pub fn velocity<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        t: f64,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let v = self.velocity_graph(&mut tape, store, xn, t)?;
        Ok(tape.value(v).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(seed: u64, cfg: UNetConfig, n_ue: usize, n_bs: usize) -> (ParamStore<f64>, UnetModel) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = UnetModel::new(&mut store, &mut rng, cfg, n_ue, n_bs).unwrap();
        (store, model)
    }

    #[test]
    fn output_shape_equals_input_shape() {
        for (depth, n_ue, n_bs) in [(1usize, 2usize, 4usize), (2, 4, 16), (2, 4, 8)] {
            let cfg = UNetConfig { depth, base_channels: 8, time_embed_dim: 16 };
            let (store, model) = build(depth as u64, cfg, n_ue, n_bs);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let x = Tensor::rand_uniform(&mut rng, &[2, n_ue, n_bs], -1.0, 1.0);
            let v = model.velocity(&store, &x, 0.4).unwrap();
            assert_eq!(v.shape(), x.shape());
            assert!(v.is_finite());
        }
    }

    #[test]
    fn rejects_indivisible_dims_and_bad_time() {
        let cfg = UNetConfig { depth: 2, base_channels: 8, time_embed_dim: 16 };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(UnetModel::new(&mut store, &mut rng, cfg.clone(), 3, 16).is_err());

        let (store, model) = build(2, cfg, 4, 16);
        let x = Tensor::zeros(&[2, 4, 16]);
        assert!(matches!(
            model.velocity(&store, &x, 1.5),
            Err(Error::OutOfDomain(_))
        ));
        assert!(matches!(
            model.velocity(&store, &x, -0.1),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn time_conditioning_is_live() {
        let cfg = UNetConfig { depth: 2, base_channels: 8, time_embed_dim: 16 };
        let (store, model) = build(3, cfg, 4, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::rand_uniform(&mut rng, &[2, 4, 16], -1.0, 1.0);
        let v1 = model.velocity(&store, &x, 0.3).unwrap();
        let v2 = model.velocity(&store, &x, 0.7).unwrap();
        let diff = v1.max_abs_diff(&v2);
        assert!(diff > 0.0, "velocity insensitive to t");

        // Finite-difference sensitivity |dv/dt| > 0 at an interior point.
        let h = 1e-4;
        let vp = model.velocity(&store, &x, 0.5 + h).unwrap();
        let vm = model.velocity(&store, &x, 0.5 - h).unwrap();
        let sens = vp.sub(&vm).unwrap().scale(1.0 / (2.0 * h)).norm();
        assert!(sens > 0.0, "zero dv/dt sensitivity");
    }

    #[test]
    fn zeroed_bottleneck_still_input_dependent_via_skips() {
        let cfg = UNetConfig { depth: 2, base_channels: 8, time_embed_dim: 16 };
        let (mut store, model) = build(5, cfg, 4, 16);
        for conv in &model.bneck {
            store.value_mut(conv.w).fill(0.0);
            store.value_mut(conv.b).fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x1 = Tensor::rand_uniform(&mut rng, &[2, 4, 16], -1.0, 1.0);
        let x2 = Tensor::rand_uniform(&mut rng, &[2, 4, 16], -1.0, 1.0);
        let v1 = model.velocity(&store, &x1, 0.5).unwrap();
        let v2 = model.velocity(&store, &x2, 0.5).unwrap();
        assert!(v1.max_abs_diff(&v2) > 0.0, "skip connections dead");
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = UNetConfig::default();
        let (store, model) = build(7, cfg, 4, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::rand_uniform(&mut rng, &[2, 4, 16], -1.0, 1.0);
        let a = model.velocity(&store, &x, 0.25).unwrap();
        let b = model.velocity(&store, &x, 0.25).unwrap();
        assert_eq!(a, b);
    }
}
