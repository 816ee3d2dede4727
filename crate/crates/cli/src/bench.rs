//! Benchmark harness: evaluates the configured estimators over the held-out
//! users across an SNR or acquisition-period sweep, using the frame protocol
//! (previous-frame beams carry data while the current frame's estimate is
//! produced; the first frame only seeds beams and is excluded from
//! averages). Emits `report.json`, `results.csv` and `per_sample.csv`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use xfcsi_core::baselines::{knn_build, knn_infer, lasso_estimate, ls_estimate, simulate_pilots, KnnDatabase, PilotConfig};
use xfcsi_core::channel::{cosine_similarity, nmse, ChannelMatrix, NMSE_DB_FLOOR};
use xfcsi_core::encoder::EncoderModel;
use xfcsi_core::evalbench::{beam_search, db_to_linear, instantaneous_se, pilot_based_se, sensing_aided_se, BeamPair, FrameAccounting};
use xfcsi_core::flow::Temperature;
use xfcsi_core::ode::infer_channel;
use xfcsi_core::params::ParamStore;
use xfcsi_core::scene::{derive_seed, is_test_user, Dataset, SensingSample};
use xfcsi_core::unet::UnetModel;

use crate::config::RunConfig;
use crate::parallel::par_map_indexed;
use crate::{ckpt, FileError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    SnrDb,
    TcaMs,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::SnrDb => "snr_db",
            SweepVar::TcaMs => "tca_ms",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MethodKind {
    Flow,
    Ls,
    Lasso,
    Knn,
}

impl MethodKind {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "flow" => Some(MethodKind::Flow),
            "ls" => Some(MethodKind::Ls),
            "lasso" => Some(MethodKind::Lasso),
            "knn" => Some(MethodKind::Knn),
            _ => None,
        }
    }

    fn tag(self) -> u64 {
        match self {
            MethodKind::Flow => 1,
            MethodKind::Ls => 2,
            MethodKind::Lasso => 3,
            MethodKind::Knn => 4,
        }
    }

    /// Sensing-aided methods transmit concurrently on outdated beams and pay
    /// the coordinate-report overhead; pilot methods lose the acquisition
    /// window instead.
    fn is_sensing(self) -> bool {
        matches!(self, MethodKind::Flow | MethodKind::Knn)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodStatus {
    pub name: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Chosen LASSO weight per sweep point (lasso only).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub lasso_lambda1: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub sweep_var: String,
    pub value: f64,
    pub nmse_db: f64,
    pub cossim: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRow {
    pub method: String,
    pub value: f64,
    pub user_id: u32,
    pub frame: u32,
    pub nmse_linear: f64,
    pub nmse_db: f64,
    pub cossim: f64,
    pub se: f64,
}

/// Network invocations one flow inference performs at a given step count
/// (the latency accounting surrogate).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallCounts {
    pub k: usize,
    pub encoder_calls: usize,
    pub velocity_calls: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub sweep_var: String,
    pub sweep_values: Vec<f64>,
    pub methods: Vec<MethodStatus>,
    pub aggregates: Vec<AggregateRow>,
    pub test_users: usize,
    /// Step-count accounting for the flow method per sweep point.
    pub flow_call_counts: Vec<CallCounts>,
    pub config: RunConfig,
}

pub struct BenchOutput {
    pub report: Report,
    pub per_sample: Vec<SampleRow>,
}

struct FlowModels {
    store: ParamStore<f32>,
    encoder: EncoderModel,
    unet: UnetModel,
}

fn load_flow_models(config: &RunConfig, ckpt_dir: &Path) -> Result<FlowModels> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let encoder = EncoderModel::new(
        &mut store,
        &mut rng,
        config.train.encoder.clone(),
        config.arrays.n_ue,
        config.arrays.n_bs,
    )?;
    let unet = UnetModel::new(
        &mut store,
        &mut rng,
        config.train.unet.clone(),
        config.arrays.n_ue,
        config.arrays.n_bs,
    )?;
    let _ = Temperature::register(&mut store, config.train.tau_init);
    ckpt::apply_checkpoint(&ckpt_dir.join("encoder.ckpt"), &mut store, &["encoder/", "align/"])?;
    ckpt::apply_checkpoint(&ckpt_dir.join("velocity.ckpt"), &mut store, &["velocity/"])?;
    Ok(FlowModels { store, encoder, unet })
}

/// One sweep point resolved into concrete parameters.
struct Point {
    value: f64,
    snr_db: f64,
    t_ca_s: f64,
    flow_k: usize,
}

fn sweep_points(config: &RunConfig, sweep: SweepVar) -> Vec<Point> {
    match sweep {
        SweepVar::SnrDb => config
            .eval
            .snr_sweep_db
            .iter()
            .map(|&snr| Point {
                value: snr,
                snr_db: snr,
                t_ca_s: config.pilots.t_ca_s,
                flow_k: config.infer.k,
            })
            .collect(),
        SweepVar::TcaMs => config
            .eval
            .tca_sweep_ms
            .iter()
            .zip(config.eval.k_for_tca.iter())
            .map(|(&tca_ms, &k)| Point {
                value: tca_ms,
                snr_db: config.pilots.snr_db,
                t_ca_s: tca_ms / 1000.0,
                flow_k: k,
            })
            .collect(),
    }
}

/// Per-user frame estimates for one method at one sweep point.
fn estimate_user_frames(
    kind: MethodKind,
    frames: &[&SensingSample],
    point: &Point,
    config: &RunConfig,
    flow: Option<&FlowModels>,
    knn_db: Option<&KnnDatabase>,
    lambda1: f64,
    seed: u64,
    point_idx: usize,
) -> xfcsi_core::Result<Vec<ChannelMatrix>> {
    let mut out = Vec::with_capacity(frames.len());
    for s in frames {
        let est = match kind {
            MethodKind::Flow => {
                let m = flow.expect("flow models loaded");
                infer_channel(&m.encoder, &m.unet, &m.store, &s.image, &s.cloud, &s.coord, point.flow_k)?
                    .h_hat
            }
            MethodKind::Knn => {
                let db = knn_db.expect("knn database built");
                knn_infer(db, s.coord, config.eval.knn_k, config.arrays.n_ue, config.arrays.n_bs)?.0
            }
            MethodKind::Ls | MethodKind::Lasso => {
                let pilots = PilotConfig {
                    t_ca_s: point.t_ca_s,
                    snr_db: point.snr_db,
                    ..config.pilots.clone()
                };
                let noise_seed = derive_seed(
                    seed,
                    &[3, kind.tag(), point_idx as u64, s.user_id as u64, s.frame_index as u64],
                );
                let obs = simulate_pilots(&s.channel, &pilots, noise_seed)?;
                match kind {
                    MethodKind::Ls => ls_estimate(&obs)?.0,
                    MethodKind::Lasso => {
                        lasso_estimate(&obs, lambda1, config.eval.lasso_max_iter, config.eval.lasso_tol)?.0
                    }
                    _ => unreachable!(),
                }
            }
        };
        out.push(est);
    }
    Ok(out)
}

/// Pick the LASSO weight on held-out training samples at this sweep point.
fn select_lambda1(
    config: &RunConfig,
    train_samples: &[&SensingSample],
    point: &Point,
    seed: u64,
    point_idx: usize,
) -> xfcsi_core::Result<f64> {
    let n = config.eval.lasso_validation_samples.min(train_samples.len());
    if n == 0 || config.eval.lasso_grid.is_empty() {
        return Ok(*config.eval.lasso_grid.first().unwrap_or(&0.1));
    }
    let pilots = PilotConfig {
        t_ca_s: point.t_ca_s,
        snr_db: point.snr_db,
        ..config.pilots.clone()
    };
    let mut best = (f64::INFINITY, config.eval.lasso_grid[0]);
    for &lambda in &config.eval.lasso_grid {
        let mut total = 0.0;
        for (i, s) in train_samples[..n].iter().enumerate() {
            let noise_seed = derive_seed(seed, &[4, point_idx as u64, i as u64]);
            let obs = simulate_pilots(&s.channel, &pilots, noise_seed)?;
            let (est, _) =
                lasso_estimate(&obs, lambda, config.eval.lasso_max_iter, config.eval.lasso_tol)?;
            total += nmse(&s.channel, &est)?.linear;
        }
        if total < best.0 {
            best = (total, lambda);
        }
    }
    Ok(best.1)
}

fn beams_for(estimates: &[ChannelMatrix]) -> xfcsi_core::Result<Vec<BeamPair>> {
    estimates.iter().map(beam_search).collect()
}

/// Run the benchmark. Methods that cannot run (missing checkpoints, unknown
/// names) are skipped with an error entry; at least one must succeed.
pub fn run_benchmark(
    config: &RunConfig,
    dataset: &Dataset,
    ckpt_dir: Option<&Path>,
    sweep: SweepVar,
) -> Result<BenchOutput> {
    if dataset.meta.n_ue as usize != config.arrays.n_ue
        || dataset.meta.n_bs as usize != config.arrays.n_bs
    {
        return Err(FileError::Core(xfcsi_core::Error::Config(format!(
            "dataset arrays {}x{} do not match config {}x{}",
            dataset.meta.n_ue, dataset.meta.n_bs, config.arrays.n_ue, config.arrays.n_bs
        ))));
    }

    let train_samples: Vec<&SensingSample> = dataset
        .samples
        .iter()
        .filter(|s| !is_test_user(s.user_id, config.train.split_ratio))
        .collect();
    let mut test_users: Vec<Vec<&SensingSample>> = Vec::new();
    for s in dataset
        .samples
        .iter()
        .filter(|s| is_test_user(s.user_id, config.train.split_ratio))
    {
        match test_users.last_mut() {
            Some(u) if u[0].user_id == s.user_id => u.push(s),
            _ => test_users.push(vec![s]),
        }
    }
    // Frames must arrive ordered for the outdated-beam protocol.
    for u in &mut test_users {
        u.sort_by_key(|s| s.frame_index);
    }
    if test_users.is_empty() {
        return Err(FileError::Core(xfcsi_core::Error::Contract(
            "benchmark needs held-out test users",
        )));
    }

    let points = sweep_points(config, sweep);
    let mut statuses = Vec::new();
    let mut aggregates = Vec::new();
    let mut per_sample = Vec::new();
    let mut any_ok = false;

    for name in &config.eval.methods {
        let Some(kind) = MethodKind::parse(name) else {
            statuses.push(MethodStatus {
                name: name.clone(),
                ok: false,
                error: Some(format!("unknown method '{name}'")),
                lasso_lambda1: Vec::new(),
            });
            continue;
        };

        // Per-method resources.
        let flow = if kind == MethodKind::Flow {
            let Some(dir) = ckpt_dir else {
                statuses.push(MethodStatus {
                    name: name.clone(),
                    ok: false,
                    error: Some("no checkpoint directory supplied".into()),
                    lasso_lambda1: Vec::new(),
                });
                continue;
            };
            match load_flow_models(config, dir) {
                Ok(m) => Some(m),
                Err(e) => {
                    statuses.push(MethodStatus {
                        name: name.clone(),
                        ok: false,
                        error: Some(e.to_string()),
                        lasso_lambda1: Vec::new(),
                    });
                    continue;
                }
            }
        } else {
            None
        };
        let knn_db = if kind == MethodKind::Knn {
            match knn_build(&train_samples) {
                Ok(db) => Some(db),
                Err(e) => {
                    statuses.push(MethodStatus {
                        name: name.clone(),
                        ok: false,
                        error: Some(e.to_string()),
                        lasso_lambda1: Vec::new(),
                    });
                    continue;
                }
            }
        } else {
            None
        };

        let mut lambdas = Vec::new();
        let mut method_failed = None;
        for (pi, point) in points.iter().enumerate() {
            let lambda1 = if kind == MethodKind::Lasso {
                match select_lambda1(config, &train_samples, point, config.seed, pi) {
                    Ok(l) => {
                        lambdas.push(l);
                        l
                    }
                    Err(e) => {
                        method_failed = Some(e.to_string());
                        break;
                    }
                }
            } else {
                0.0
            };

            let acct = FrameAccounting {
                t_f_s: config.pilots.t_f_s,
                t_ca_s: point.t_ca_s,
                bandwidth_hz: config.eval.bandwidth_hz,
                gps_bits: config.eval.gps_bits,
            };
            if let Err(e) = acct.validate() {
                method_failed = Some(e.to_string());
                break;
            }
            let gamma = db_to_linear(point.snr_db);

            let flow_ref = flow.as_ref();
            let knn_ref = knn_db.as_ref();
            let user_rows: Vec<xfcsi_core::Result<Vec<SampleRow>>> =
                par_map_indexed(test_users.len(), |ui| {
                    let frames = &test_users[ui];
                    let estimates = estimate_user_frames(
                        kind,
                        frames,
                        point,
                        config,
                        flow_ref,
                        knn_ref,
                        lambda1,
                        config.seed,
                        pi,
                    )?;
                    let beams = beams_for(&estimates)?;
                    let mut rows = Vec::with_capacity(frames.len().saturating_sub(1));
                    for f in 1..frames.len() {
                        let truth = &frames[f].channel;
                        let err = nmse(truth, &estimates[f])?;
                        let cos = cosine_similarity(truth, &estimates[f])?;
                        let r_curr = instantaneous_se(&beams[f].w, &beams[f].f, truth, gamma);
                        let se = if kind.is_sensing() {
                            let r_prev =
                                instantaneous_se(&beams[f - 1].w, &beams[f - 1].f, truth, gamma);
                            sensing_aided_se(r_prev, r_curr, &acct)
                        } else {
                            pilot_based_se(r_curr, &acct)
                        };
                        rows.push(SampleRow {
                            method: kind_name(kind).to_string(),
                            value: point.value,
                            user_id: frames[f].user_id,
                            frame: frames[f].frame_index,
                            nmse_linear: err.linear,
                            nmse_db: err.db.max(NMSE_DB_FLOOR),
                            cossim: cos,
                            se,
                        });
                    }
                    Ok(rows)
                });

            let mut point_rows = Vec::new();
            for r in user_rows {
                match r {
                    Ok(rows) => point_rows.extend(rows),
                    Err(e) => {
                        method_failed = Some(e.to_string());
                        break;
                    }
                }
            }
            if method_failed.is_some() {
                break;
            }

            let n = point_rows.len() as f64;
            let mean_linear = point_rows.iter().map(|r| r.nmse_linear).sum::<f64>() / n;
            let nmse_db = if mean_linear <= 0.0 {
                NMSE_DB_FLOOR
            } else {
                (10.0 * mean_linear.log10()).max(NMSE_DB_FLOOR)
            };
            aggregates.push(AggregateRow {
                method: kind_name(kind).to_string(),
                sweep_var: sweep.name().to_string(),
                value: point.value,
                nmse_db,
                cossim: point_rows.iter().map(|r| r.cossim).sum::<f64>() / n,
                se: point_rows.iter().map(|r| r.se).sum::<f64>() / n,
            });
            per_sample.extend(point_rows);
        }

        match method_failed {
            Some(err) => {
                // Drop any partial aggregates for the failed method.
                aggregates.retain(|a| a.method != kind_name(kind));
                per_sample.retain(|r| r.method != kind_name(kind));
                statuses.push(MethodStatus {
                    name: name.clone(),
                    ok: false,
                    error: Some(err),
                    lasso_lambda1: Vec::new(),
                });
            }
            None => {
                any_ok = true;
                statuses.push(MethodStatus {
                    name: name.clone(),
                    ok: true,
                    error: None,
                    lasso_lambda1: lambdas,
                });
            }
        }
    }

    if !any_ok {
        return Err(FileError::Core(xfcsi_core::Error::Contract(
            "every requested benchmark method failed",
        )));
    }

    let flow_call_counts = points
        .iter()
        .map(|p| {
            let (encoder_calls, velocity_calls) = xfcsi_core::ode::inference_call_counts(p.flow_k);
            CallCounts { k: p.flow_k, encoder_calls, velocity_calls }
        })
        .collect();
    Ok(BenchOutput {
        report: Report {
            sweep_var: sweep.name().to_string(),
            sweep_values: points.iter().map(|p| p.value).collect(),
            methods: statuses,
            aggregates,
            test_users: test_users.len(),
            flow_call_counts,
            config: config.clone(),
        },
        per_sample,
    })
}

fn kind_name(kind: MethodKind) -> &'static str {
    match kind {
        MethodKind::Flow => "flow",
        MethodKind::Ls => "ls",
        MethodKind::Lasso => "lasso",
        MethodKind::Knn => "knn",
    }
}

/// Write `report.json`, `results.csv` and `per_sample.csv` into `out_dir`.
pub fn write_outputs(out_dir: &Path, output: &BenchOutput) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&output.report)?,
    )?;

    let mut results = String::from("method,sweep_var,value,nmse_db,cossim,se\n");
    for a in &output.report.aggregates {
        results.push_str(&format!(
            "{},{},{},{},{},{}\n",
            a.method, a.sweep_var, a.value, a.nmse_db, a.cossim, a.se
        ));
    }
    std::fs::write(out_dir.join("results.csv"), results)?;

    let sweep_var = &output.report.sweep_var;
    let mut rows = String::from("method,sweep_var,value,user_id,frame,nmse_linear,nmse_db,cossim,se\n");
    for r in &output.per_sample {
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method, sweep_var, r.value, r.user_id, r.frame, r.nmse_linear, r.nmse_db, r.cossim, r.se
        ));
    }
    std::fs::write(out_dir.join("per_sample.csv"), rows)?;
    Ok(())
}
