//! Procedural urban-intersection scenes with geometric multipath tracing.
//!
//! Two orthogonal streets cross at the origin; four buildings occupy the
//! corner quadrants and four vehicles drive the streets. Propagation is
//! traced in the horizontal plane: a line-of-sight ray when no building
//! blocks it, one first-order specular reflection per visible building wall
//! (mirror-image construction), and one scatter path per vehicle seen by
//! both ends. Sensing renders a top-down occupancy image, a surface point
//! cloud and a noisy user coordinate, all paired with the synthesized MIMO
//! channel.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{ChannelMatrix, Domain};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Antenna array sizes at both link ends (half-wavelength ULAs).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ArrayConfig {
    pub n_bs: usize,
    pub n_ue: usize,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self { n_bs: 16, n_ue: 4 }
    }
}

impl ArrayConfig {
    /// Paper-scale array sizes.
    pub fn large() -> Self {
        Self { n_bs: 64, n_ue: 16 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bs == 0 || self.n_ue == 0 {
            return Err(Error::Config("antenna counts must be positive".into()));
        }
        Ok(())
    }
}

/// Scene and sensing-generation knobs. Defaults are the desk-scale scenario.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SceneConfig {
    pub num_users: usize,
    pub frames: usize,
    /// Time between sensing frames; vehicle motion integrates over this.
    pub frame_period_s: f64,
    /// Half-extent of the square scene in meters.
    pub bounds_m: f64,
    pub road_half_width_m: f64,
    /// Gap between road edge and building faces.
    pub building_margin_m: f64,
    pub building_height_m: [f64; 2],
    pub vehicle_speed_m_s: [f64; 2],
    /// Wavelength used for path phases. The desk default is deliberately
    /// long so phases vary on a meter scale the sensing data can resolve.
    pub carrier_wavelength_m: f64,
    pub reflection_coeff: f64,
    pub scatter_coeff: f64,
    /// Distance normalizing path amplitudes (amplitude 1 at this range).
    pub ref_distance_m: f64,
    /// Global amplitude factor applied to every path (transmit-gain knob;
    /// keeps channel entries near unit scale for the learner).
    pub path_gain_scale: f64,
    pub gps_noise_std_m: f64,
    pub cloud_jitter_std_m: f64,
    pub image_size: usize,
    pub cloud_points: usize,
    pub bs_position: [f64; 3],
    pub max_place_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_users: 1000,
            frames: 5,
            frame_period_s: 1.0,
            bounds_m: 50.0,
            road_half_width_m: 8.0,
            building_margin_m: 4.0,
            building_height_m: [10.0, 18.0],
            vehicle_speed_m_s: [2.0, 6.0],
            carrier_wavelength_m: 20.0,
            reflection_coeff: 0.6,
            scatter_coeff: 0.3,
            ref_distance_m: 40.0,
            path_gain_scale: 5.0,
            gps_noise_std_m: 0.5,
            cloud_jitter_std_m: 0.05,
            image_size: 32,
            cloud_points: 256,
            bs_position: [-40.0, 0.0, 8.0],
            max_place_attempts: 200,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.frames == 0 {
            return Err(Error::Config("need at least one user and one frame".into()));
        }
        if self.bounds_m <= 0.0
            || self.road_half_width_m <= 0.0
            || self.road_half_width_m + self.building_margin_m >= self.bounds_m
        {
            return Err(Error::Config("scene bounds leave no room for buildings".into()));
        }
        if self.carrier_wavelength_m <= 0.0 || self.ref_distance_m <= 0.0 {
            return Err(Error::Config("wavelength and reference distance must be positive".into()));
        }
        if self.image_size == 0 || self.cloud_points == 0 {
            return Err(Error::Config("sensing resolutions must be positive".into()));
        }
        if self.gps_noise_std_m < 0.0 || self.cloud_jitter_std_m < 0.0 {
            return Err(Error::Config("noise standard deviations must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box given by its minimum corner and size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxObstacle {
    pub min: [f64; 3],
    pub size: [f64; 3],
}

impl BoxObstacle {
    pub fn max(&self) -> [f64; 3] {
        [
            self.min[0] + self.size[0],
            self.min[1] + self.size[1],
            self.min[2] + self.size[2],
        ]
    }

    pub fn contains_xy(&self, p: [f64; 2]) -> bool {
        let mx = self.max();
        p[0] >= self.min[0] && p[0] <= mx[0] && p[1] >= self.min[1] && p[1] <= mx[1]
    }
}

/// A moving vehicle: box footprint advancing at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    /// Center position at the current frame.
    pub position: [f64; 3],
    /// Horizontal velocity in m/s.
    pub velocity: [f64; 2],
    pub size: [f64; 3],
}

impl Vehicle {
    pub fn footprint(&self) -> BoxObstacle {
        BoxObstacle {
            min: [
                self.position[0] - self.size[0] / 2.0,
                self.position[1] - self.size[1] / 2.0,
                0.0,
            ],
            size: self.size,
        }
    }
}

/// One frame of the simulated world.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub buildings: Vec<BoxObstacle>,
    pub vehicles: Vec<Vehicle>,
    pub bs_position: [f64; 3],
    pub frame_index: u32,
    pub frame_period_s: f64,
}

impl Scene {
    /// Advance every vehicle by `frame * frame_period` from this scene's
    /// reference positions.
    pub fn at_frame(&self, frame: u32) -> Scene {
        let dt = self.frame_period_s * frame as f64;
        let vehicles = self
            .vehicles
            .iter()
            .map(|v| Vehicle {
                position: [
                    v.position[0] + v.velocity[0] * dt,
                    v.position[1] + v.velocity[1] * dt,
                    v.position[2],
                ],
                ..*v
            })
            .collect();
        Scene { vehicles, frame_index: frame, ..self.clone() }
    }
}

/// Propagation mechanism of a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathType {
    Los,
    Reflection,
    Scatter,
}

/// One propagation path: complex gain (amplitude and phase), azimuth of
/// departure and arrival, and the geometric length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParam {
    pub gain: Complex64,
    pub aod_az: f64,
    pub aoa_az: f64,
    pub length_m: f64,
    pub path_type: PathType,
}

/// A paired sensing-channel observation for one user and frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingSample {
    pub user_id: u32,
    pub frame_index: u32,
    /// `[3, s, s]` top-down occupancy: buildings, vehicles, user cell.
    pub image: Tensor<f32>,
    /// `[3, u]` surface points visible from the base station.
    pub cloud: Tensor<f32>,
    /// Noisy 2-D position report.
    pub coord: [f64; 2],
    /// Ground-truth spatial channel (entries quantized to f32 on creation
    /// so persisted datasets round-trip bit-exactly).
    pub channel: ChannelMatrix,
    /// Ground-truth paths behind `channel`, f32-quantized like the channel.
    pub paths: Vec<PathParam>,
    /// True when no line-of-sight path exists.
    pub blocked: bool,
}

/// Dataset header fields that identify how the samples were produced.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetMeta {
    pub seed: u64,
    pub generator_version: u32,
    pub num_users: u32,
    pub frames: u32,
    pub n_ue: u32,
    pub n_bs: u32,
    pub image_size: u32,
    pub cloud_points: u32,
}

/// In-memory dataset: `num_users * frames` samples in (user, frame) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<SensingSample>,
}

pub const GENERATOR_VERSION: u32 = 1;

/// SplitMix64-style seed derivation for independent substreams.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base;
    for &t in tags {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(t.wrapping_mul(0xd134_2543_de82_ef95));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn normalize_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Build the deterministic scene for a seed: four corner buildings with
/// jittered footprints and heights, four vehicles on the two streets.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let inner = config.road_half_width_m + config.building_margin_m;
    let outer = config.bounds_m - 5.0;
    let mut buildings = Vec::with_capacity(4);
    for &sx in &[1.0f64, -1.0] {
        for &sy in &[1.0f64, -1.0] {
            let jx = rng.random_range(0.0..2.0);
            let jy = rng.random_range(0.0..2.0);
            let ox = outer - rng.random_range(0.0..3.0);
            let oy = outer - rng.random_range(0.0..3.0);
            let h = rng.random_range(config.building_height_m[0]..config.building_height_m[1]);
            let (x0, x1) = if sx > 0.0 { (inner + jx, ox) } else { (-ox, -inner - jx) };
            let (y0, y1) = if sy > 0.0 { (inner + jy, oy) } else { (-oy, -inner - jy) };
            buildings.push(BoxObstacle {
                min: [x0, y0, 0.0],
                size: [x1 - x0, y1 - y0, h],
            });
        }
    }

    // Two vehicles per street, offset to opposite lanes, no boundary exit
    // within the simulated frames (speeds and spawn range keep them inside).
    let lane = config.road_half_width_m / 2.0;
    let spawn = config.bounds_m / 2.0;
    let mut vehicles = Vec::with_capacity(4);
    for i in 0..4 {
        let along = rng.random_range(-spawn..spawn);
        let speed = rng.random_range(config.vehicle_speed_m_s[0]..config.vehicle_speed_m_s[1]);
        let dir = if i % 2 == 0 { 1.0 } else { -1.0 };
        let (position, velocity, size) = if i < 2 {
            ([along, dir * lane, 0.0], [dir * speed, 0.0], [4.0, 2.0, 1.6])
        } else {
            ([dir * lane, along, 0.0], [0.0, dir * speed], [2.0, 4.0, 1.6])
        };
        vehicles.push(Vehicle { position, velocity, size });
    }

    Ok(Scene {
        buildings,
        vehicles,
        bs_position: config.bs_position,
        frame_index: 0,
        frame_period_s: config.frame_period_s,
    })
}

/// Sample one user position uniformly over the street area.
fn place_user<R: Rng>(rng: &mut R, scene: &Scene, config: &SceneConfig) -> Result<[f64; 2]> {
    let b = config.bounds_m - 2.0;
    let bs = [scene.bs_position[0], scene.bs_position[1]];
    for _ in 0..config.max_place_attempts {
        let x = rng.random_range(-b..b);
        let y = rng.random_range(-b..b);
        let on_road = x.abs() <= config.road_half_width_m || y.abs() <= config.road_half_width_m;
        if !on_road {
            continue;
        }
        if scene.buildings.iter().any(|bx| bx.contains_xy([x, y])) {
            continue;
        }
        if dist2([x, y], bs) < 5.0 {
            continue;
        }
        return Ok([x, y]);
    }
    Err(Error::Generation(format!(
        "no valid user position after {} attempts",
        config.max_place_attempts
    )))
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])).sqrt()
}

/// True when the open segment `p -> q` crosses the interior of the box
/// footprint. Faces count as outside, so grazing contacts and reflection
/// points on a wall do not block.
fn segment_blocked_by(p: [f64; 2], q: [f64; 2], bx: &BoxObstacle) -> bool {
    const EPS: f64 = 1e-9;
    let mx = bx.max();
    let lo = [bx.min[0] + EPS, bx.min[1] + EPS];
    let hi = [mx[0] - EPS, mx[1] - EPS];
    let d = [q[0] - p[0], q[1] - p[1]];
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for axis in 0..2 {
        if d[axis].abs() < 1e-15 {
            if p[axis] <= lo[axis] || p[axis] >= hi[axis] {
                return false;
            }
        } else {
            let inv = 1.0 / d[axis];
            let mut ta = (lo[axis] - p[axis]) * inv;
            let mut tb = (hi[axis] - p[axis]) * inv;
            if ta > tb {
                core::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return false;
            }
        }
    }
    t1 > EPS && t0 < 1.0 - EPS
}

fn occluded(p: [f64; 2], q: [f64; 2], buildings: &[BoxObstacle]) -> bool {
    buildings.iter().any(|b| segment_blocked_by(p, q, b))
}

/// Trace the multipath between the base station and `user`: LoS, one
/// first-order wall reflection per visible building face, one scatter path
/// per vehicle visible from both ends. Empty output means deep blockage.
pub fn trace_paths(scene: &Scene, user: [f64; 2], config: &SceneConfig) -> Vec<PathParam> {
    let bs = [scene.bs_position[0], scene.bs_position[1]];
    let lambda = config.carrier_wavelength_m;
    let dref = config.ref_distance_m * config.path_gain_scale;
    let mut paths = Vec::new();

    let phase_gain = |amp: f64, length: f64| -> Complex64 {
        let phase = -2.0 * PI * length / lambda;
        Complex64::new(phase.cos(), phase.sin()) * amp
    };

    // Line of sight.
    if !occluded(bs, user, &scene.buildings) {
        let d = dist2(bs, user).max(1.0);
        paths.push(PathParam {
            gain: phase_gain(dref / d, d),
            aod_az: normalize_angle((user[1] - bs[1]).atan2(user[0] - bs[0])),
            aoa_az: normalize_angle((bs[1] - user[1]).atan2(bs[0] - user[0])),
            length_m: d,
            path_type: PathType::Los,
        });
    }

    // First-order specular reflections off building walls (image method).
    for bx in &scene.buildings {
        let mx = bx.max();
        // (axis, wall coordinate, outward sign, span on the other axis)
        let walls = [
            (0usize, bx.min[0], -1.0f64, [bx.min[1], mx[1]]),
            (0, mx[0], 1.0, [bx.min[1], mx[1]]),
            (1, bx.min[1], -1.0, [bx.min[0], mx[0]]),
            (1, mx[1], 1.0, [bx.min[0], mx[0]]),
        ];
        for (axis, wall_c, sign, span) in walls {
            let other = 1 - axis;
            // Both endpoints must lie on the outward side of the wall plane.
            if sign * (bs[axis] - wall_c) <= 0.0 || sign * (user[axis] - wall_c) <= 0.0 {
                continue;
            }
            // Mirror the base station across the wall plane.
            let mut image = bs;
            image[axis] = 2.0 * wall_c - bs[axis];
            let d_total = dist2(image, user);
            if d_total < 1e-9 {
                continue;
            }
            // Reflection point: intersection of image->user with the plane.
            let t = (wall_c - image[axis]) / (user[axis] - image[axis]);
            if !(1e-9..=1.0 - 1e-9).contains(&t) {
                continue;
            }
            let mut rp = [0.0f64; 2];
            rp[axis] = wall_c;
            rp[other] = image[other] + t * (user[other] - image[other]);
            if rp[other] < span[0] || rp[other] > span[1] {
                continue;
            }
            if occluded(bs, rp, &scene.buildings) || occluded(rp, user, &scene.buildings) {
                continue;
            }
            let length = d_total.max(1.0);
            paths.push(PathParam {
                gain: phase_gain(config.reflection_coeff * dref / length, length),
                aod_az: normalize_angle((rp[1] - bs[1]).atan2(rp[0] - bs[0])),
                aoa_az: normalize_angle((rp[1] - user[1]).atan2(rp[0] - user[0])),
                length_m: length,
                path_type: PathType::Reflection,
            });
        }
    }

    // Single-bounce scatter off each vehicle visible from both ends.
    let scatter_ref = dref * config.ref_distance_m / 4.0;
    for v in &scene.vehicles {
        let c = [v.position[0], v.position[1]];
        if occluded(bs, c, &scene.buildings) || occluded(c, user, &scene.buildings) {
            continue;
        }
        let d1 = dist2(bs, c).max(1.0);
        let d2 = dist2(c, user).max(1.0);
        let length = d1 + d2;
        paths.push(PathParam {
            gain: phase_gain(config.scatter_coeff * scatter_ref / (d1 * d2), length),
            aod_az: normalize_angle((c[1] - bs[1]).atan2(c[0] - bs[0])),
            aoa_az: normalize_angle((c[1] - user[1]).atan2(c[0] - user[0])),
            length_m: length,
            path_type: PathType::Scatter,
        });
    }

    paths
}

/// Build the spatial channel `H = sum_p gain_p a_ue(aoa) a_bs(aod)^H` from a
/// path list. Empty paths produce the zero channel with the blockage flag.
pub fn synth_channel(paths: &[PathParam], n_ue: usize, n_bs: usize) -> Result<(ChannelMatrix, bool)> {
    if n_ue == 0 || n_bs == 0 {
        return Err(Error::InvalidDimension("antenna counts must be positive".into()));
    }
    let mut h = ChannelMatrix::zeros(n_ue, n_bs, Domain::Spatial);
    for p in paths {
        let a_ue = crate::channel::steering_vector(n_ue, p.aoa_az);
        let a_bs = crate::channel::steering_vector(n_bs, p.aod_az);
        for u in 0..n_ue {
            for b in 0..n_bs {
                *h.at_mut(u, b) += p.gain * a_ue[u] * a_bs[b].conj();
            }
        }
    }
    let blocked = paths.is_empty();
    Ok((h, blocked))
}

/// Wall surfaces (building and vehicle faces) available to the cloud sampler.
struct Surface {
    a: [f64; 2],
    b: [f64; 2],
    outward: [f64; 2],
    height: f64,
}

fn box_surfaces(bx: &BoxObstacle, out: &mut Vec<Surface>) {
    let mx = bx.max();
    let h = bx.size[2];
    out.push(Surface { a: [bx.min[0], bx.min[1]], b: [mx[0], bx.min[1]], outward: [0.0, -1.0], height: h });
    out.push(Surface { a: [bx.min[0], mx[1]], b: [mx[0], mx[1]], outward: [0.0, 1.0], height: h });
    out.push(Surface { a: [bx.min[0], bx.min[1]], b: [bx.min[0], mx[1]], outward: [-1.0, 0.0], height: h });
    out.push(Surface { a: [mx[0], bx.min[1]], b: [mx[0], mx[1]], outward: [1.0, 0.0], height: h });
}

/// Render the three sensing modalities for one user in one frame.
pub fn render_sensing<R: Rng>(
    scene: &Scene,
    user: [f64; 2],
    config: &SceneConfig,
    rng: &mut R,
) -> (Tensor<f32>, Tensor<f32>, [f64; 2]) {
    let s = config.image_size;
    let b = config.bounds_m;
    let mut image = vec![0.0f32; 3 * s * s];
    let cell = 2.0 * b / s as f64;
    let to_px = |v: f64| -> usize {
        (((v + b) / cell) as isize).clamp(0, s as isize - 1) as usize
    };
    for row in 0..s {
        for col in 0..s {
            let cx = -b + (col as f64 + 0.5) * cell;
            let cy = -b + (row as f64 + 0.5) * cell;
            if scene.buildings.iter().any(|bx| bx.contains_xy([cx, cy])) {
                image[row * s + col] = 1.0;
            }
            if scene.vehicles.iter().any(|v| v.footprint().contains_xy([cx, cy])) {
                image[s * s + row * s + col] = 1.0;
            }
        }
    }
    for v in &scene.vehicles {
        image[s * s + to_px(v.position[1]) * s + to_px(v.position[0])] = 1.0;
    }
    image[2 * s * s + to_px(user[1]) * s + to_px(user[0])] = 1.0;

    // Point cloud on surfaces visible from the base station.
    let bs = [scene.bs_position[0], scene.bs_position[1]];
    let mut surfaces = Vec::new();
    for bx in &scene.buildings {
        box_surfaces(bx, &mut surfaces);
    }
    for v in &scene.vehicles {
        box_surfaces(&v.footprint(), &mut surfaces);
    }
    let u = config.cloud_points;
    let mut cloud = vec![0.0f32; 3 * u];
    if !surfaces.is_empty() {
        let total_len: f64 = surfaces
            .iter()
            .map(|sf| dist2(sf.a, sf.b))
            .sum();
        for i in 0..u {
            let mut point = [0.0f64; 3];
            for _attempt in 0..50 {
                let mut pick = rng.random_range(0.0..total_len);
                let mut chosen = &surfaces[0];
                for sf in &surfaces {
                    let len = dist2(sf.a, sf.b);
                    if pick <= len {
                        chosen = sf;
                        break;
                    }
                    pick -= len;
                }
                let along: f64 = rng.random_range(0.0..1.0);
                let z: f64 = rng.random_range(0.0..chosen.height);
                let p = [
                    chosen.a[0] + along * (chosen.b[0] - chosen.a[0]),
                    chosen.a[1] + along * (chosen.b[1] - chosen.a[1]),
                ];
                let facing = chosen.outward[0] * (bs[0] - p[0]) + chosen.outward[1] * (bs[1] - p[1]);
                if facing <= 0.0 {
                    continue;
                }
                if occluded(bs, p, &scene.buildings) {
                    continue;
                }
                point = [p[0], p[1], z];
                break;
            }
            let jx: f64 = StandardNormal.sample(rng);
            let jy: f64 = StandardNormal.sample(rng);
            let jz: f64 = StandardNormal.sample(rng);
            cloud[i] = (point[0] + config.cloud_jitter_std_m * jx) as f32;
            cloud[u + i] = (point[1] + config.cloud_jitter_std_m * jy) as f32;
            cloud[2 * u + i] = (point[2] + config.cloud_jitter_std_m * jz) as f32;
        }
    }

    let nx: f64 = StandardNormal.sample(rng);
    let ny: f64 = StandardNormal.sample(rng);
    let coord = [
        (user[0] + config.gps_noise_std_m * nx) as f32 as f64,
        (user[1] + config.gps_noise_std_m * ny) as f32 as f64,
    ];

    (
        Tensor::new(&[3, s, s], image).expect("image buffer sized"),
        Tensor::new(&[3, u], cloud).expect("cloud buffer sized"),
        coord,
    )
}

fn quantize_channel(h: &ChannelMatrix) -> ChannelMatrix {
    let entries = h
        .entries()
        .iter()
        .map(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64))
        .collect();
    ChannelMatrix::new(h.n_ue(), h.n_bs(), entries, h.domain()).expect("same dims")
}

fn quantize_path(p: &PathParam) -> PathParam {
    PathParam {
        gain: Complex64::new(p.gain.re as f32 as f64, p.gain.im as f32 as f64),
        aod_az: p.aod_az as f32 as f64,
        aoa_az: p.aoa_az as f32 as f64,
        length_m: p.length_m as f32 as f64,
        path_type: p.path_type,
    }
}

/// Generate the full paired dataset: `num_users` positions, each observed
/// over `frames` frames of vehicle motion. Deterministic in `seed`.
pub fn generate_dataset(config: &SceneConfig, arrays: &ArrayConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    arrays.validate()?;
    let base = generate_scene(seed, config)?;
    let frames: Vec<Scene> = (0..config.frames as u32).map(|f| base.at_frame(f)).collect();

    let mut samples = Vec::with_capacity(config.num_users * config.frames);
    for user_id in 0..config.num_users as u32 {
        let mut rng_place = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, user_id as u64]));
        // Retry positions whose path list is empty in any frame so every
        // stored channel has positive energy (metrics stay well defined).
        let mut placed = None;
        for _ in 0..config.max_place_attempts {
            let pos = place_user(&mut rng_place, &base, config)?;
            let per_frame: Vec<Vec<PathParam>> =
                frames.iter().map(|sc| trace_paths(sc, pos, config)).collect();
            if per_frame.iter().all(|p| !p.is_empty()) {
                placed = Some((pos, per_frame));
                break;
            }
        }
        let (pos, per_frame) = placed.ok_or_else(|| {
            Error::Generation(format!("user {user_id}: no position with usable paths"))
        })?;

        for (f, paths) in per_frame.into_iter().enumerate() {
            let mut rng_render =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, user_id as u64, f as u64]));
            let (image, cloud, coord) =
                render_sensing(&frames[f], pos, config, &mut rng_render);
            let (h, blocked_empty) = synth_channel(&paths, arrays.n_ue, arrays.n_bs)?;
            let blocked = blocked_empty || !paths.iter().any(|p| p.path_type == PathType::Los);
            samples.push(SensingSample {
                user_id,
                frame_index: f as u32,
                image,
                cloud,
                coord,
                channel: quantize_channel(&h),
                paths: paths.iter().map(quantize_path).collect(),
                blocked,
            });
        }
    }

    Ok(Dataset {
        meta: DatasetMeta {
            seed,
            generator_version: GENERATOR_VERSION,
            num_users: config.num_users as u32,
            frames: config.frames as u32,
            n_ue: arrays.n_ue as u32,
            n_bs: arrays.n_bs as u32,
            image_size: config.image_size as u32,
            cloud_points: config.cloud_points as u32,
        },
        samples,
    })
}

impl SensingSample {
    /// Stacked angular-domain target for the learner, single precision.
    pub fn stacked_angular_f32(&self) -> Result<Tensor<f32>> {
        let h_ad = crate::channel::to_angular(&self.channel)?;
        Ok(crate::channel::stack_real(&h_ad).to_tensor_f32())
    }
}

/// Train/test split by user id: users whose id falls in the top tenth of
/// each block of ten are held out when `ratio` is 0.9 (frames of one user
/// never straddle the split).
pub fn is_test_user(user_id: u32, ratio: f64) -> bool {
    let keep = (ratio * 10.0) as u32;
    user_id % 10 >= keep
}
