//! Channel inference by integrating the learned velocity field over `[0, 1]`:
//! one Euler step to prime the history, then second-order Adams-Bashforth
//! updates, starting from the encoder's MAP latent.

use alloc::vec::Vec;

use crate::channel::{self, ChannelMatrix, ChannelTensor, Domain, Nmse};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};
use crate::unet::UnetModel;

/// All intermediate states `x_0, x_h, ..., x_1` of one integration run.
#[derive(Debug, Clone)]
pub struct IntegratorTrace<T> {
    pub states: Vec<Tensor<T>>,
    pub step_size: f64,
}

impl<T: Real> IntegratorTrace<T> {
    pub fn terminal(&self) -> &Tensor<T> {
        self.states.last().expect("trace holds at least the initial state")
    }
}

/// First step `x_h = x_0 + h v(x_0, 0)`.
pub fn euler_init<T: Real, F>(x0: &Tensor<T>, mut velocity: F, h: f64) -> Result<Tensor<T>>
where
    F: FnMut(&Tensor<T>, f64) -> Result<Tensor<T>>,
{
    let v0 = velocity(x0, 0.0)?;
    let mut x = x0.clone();
    x.axpy(T::lit(h), &v0)?;
    Ok(x)
}

/// Two-step update `x_{(k+1)h} = x_kh + h (3/2 v(x_kh, kh) - 1/2 v_prev)`.
/// Returns the new state together with the velocity evaluated at `x_kh`,
/// which becomes the next step's history.
pub fn ab2_step<T: Real, F>(
    x_kh: &Tensor<T>,
    v_prev: Option<&Tensor<T>>,
    mut velocity: F,
    k: usize,
    h: f64,
) -> Result<(Tensor<T>, Tensor<T>)>
where
    F: FnMut(&Tensor<T>, f64) -> Result<Tensor<T>>,
{
    let v_prev = v_prev.ok_or(Error::Contract("AB2 needs the previous step's velocity"))?;
    if k == 0 {
        return Err(Error::Contract("AB2 applies from step 1 on; step 0 is the Euler start"));
    }
    let v_curr = velocity(x_kh, k as f64 * h)?;
    let mut x = x_kh.clone();
    x.axpy(T::lit(1.5 * h), &v_curr)?;
    x.axpy(T::lit(-0.5 * h), v_prev)?;
    Ok((x, v_curr))
}

/// Integrate `dx/dt = v(x, t)` from `t = 0` to `1` in `k_steps` steps.
pub fn integrate<T: Real, F>(x0: &Tensor<T>, mut velocity: F, k_steps: usize) -> Result<IntegratorTrace<T>>
where
    F: FnMut(&Tensor<T>, f64) -> Result<Tensor<T>>,
{
    if k_steps == 0 {
        return Err(Error::Config("integration needs at least one step".into()));
    }
    let h = 1.0 / k_steps as f64;
    let mut states = Vec::with_capacity(k_steps + 1);
    states.push(x0.clone());

    let mut v_prev = velocity(x0, 0.0)?;
    let mut x = x0.clone();
    x.axpy(T::lit(h), &v_prev)?;
    states.push(x);

    for k in 1..k_steps {
        let (next, v_curr) = ab2_step(&states[k], Some(&v_prev), &mut velocity, k, h)?;
        states.push(next);
        v_prev = v_curr;
    }
    Ok(IntegratorTrace { states, step_size: h })
}

/// Result of one end-to-end inference.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    /// Estimated channel in the spatial domain.
    pub h_hat: ChannelMatrix,
    pub trace: IntegratorTrace<f32>,
}

/// Full inference pipeline: encode the sensing inputs, start from the MAP
/// latent, integrate the velocity field for `k_steps`, and map the terminal
/// state back to a spatial-domain channel.
pub fn infer_channel(
    encoder: &EncoderModel,
    unet: &UnetModel,
    store: &ParamStore<f32>,
    image: &Tensor<f32>,
    cloud: &Tensor<f32>,
    coord: &[f64],
    k_steps: usize,
) -> Result<InferenceResult> {
    let latent = encoder.encode(store, image, cloud, coord)?;
    let x0 = latent.map_mode();
    let trace = integrate(&x0, |x, t| unet.velocity(store, x, t), k_steps)?;
    let h_hat = terminal_to_spatial(trace.terminal())?;
    Ok(InferenceResult { h_hat, trace })
}

/// Convert an integrator state (stacked angular tensor) to a spatial channel.
pub fn terminal_to_spatial(state: &Tensor<f32>) -> Result<ChannelMatrix> {
    let tensor = ChannelTensor::from_tensor_f32(state)?;
    let h_ad = channel::unstack_complex(&tensor, Domain::Angular);
    channel::to_spatial(&h_ad)
}

/// Network evaluations one inference performs: the encoder once and the
/// velocity field once per integration step (the latency accounting model).
pub fn inference_call_counts(k_steps: usize) -> (usize, usize) {
    (1, k_steps)
}

/// NMSE of every intermediate state against the stacked angular ground truth.
pub fn trace_nmse(trace: &IntegratorTrace<f32>, target: &ChannelTensor) -> Result<Vec<Nmse>> {
    let truth = channel::unstack_complex(target, Domain::Angular);
    trace
        .states
        .iter()
        .map(|state| {
            let est = channel::unstack_complex(&ChannelTensor::from_tensor_f32(state)?, Domain::Angular);
            channel::nmse(&truth, &est)
        })
        .collect()
}
