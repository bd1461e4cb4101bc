//! Planar gripper with a hidden object.
//!
//! `F` single-link fingers are mounted on a ring of radius `base_radius` and
//! swing their tips towards the centre, where a convex object (rectangle, disc
//! or ellipse) sits. The object never appears in the observation: it only
//! shows up through blocked motion, the effort mismatch it causes, and the
//! touch reading.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of sensor channels per finger: angle, velocity, effort, touch.
pub const SENSORS_PER_FINGER: usize = 4;
/// Number of sub-samples used to detect the object along a swept arc.
const PATH_SAMPLES: usize = 8;
/// Joint angle of the open starting pose.
pub const OPEN_POSE: f64 = -1.0;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("contact search needs tip(from) outside and tip(to) inside the object")]
    ContactPrecondition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub num_fingers: usize,
    pub base_radius: f64,
    pub finger_length: f64,
    /// Largest joint motion per step, rad.
    pub omega_max: f64,
    pub angle_limits: [f64; 2],
    pub contact_stiffness: f64,
    pub episode_length: usize,
    pub half_extent_range: [f64; 2],
    pub shape_set: Vec<Shape>,
    pub obs_noise_std: f64,
    pub bisection_iters: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_fingers: 4,
            base_radius: 1.0,
            finger_length: 0.72,
            omega_max: 0.15,
            angle_limits: [-1.2, 1.2],
            contact_stiffness: 10.0,
            episode_length: 60,
            half_extent_range: [0.30, 0.45],
            shape_set: vec![Shape::Rect, Shape::Disc, Shape::Ellipse],
            obs_noise_std: 0.0,
            bisection_iters: 24,
        }
    }
}

impl EnvConfig {
    pub fn obs_dim(&self) -> usize {
        SENSORS_PER_FINGER * self.num_fingers
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        let inner = self.base_radius - self.finger_length;
        if self.num_fingers == 0 {
            return bad("num_fingers must be >= 1");
        }
        if !(self.finger_length > 0.0 && inner > 0.0) {
            return bad("need 0 < finger_length < base_radius");
        }
        let [lo, hi] = self.half_extent_range;
        if !(lo > inner && hi >= lo) {
            return bad("half_extent_range must satisfy base_radius - finger_length < min <= max");
        }
        // The open pose must clear the largest possible object (a rectangle corner).
        if tip_distance(OPEN_POSE, self) <= hi * 2f64.sqrt() {
            return bad("open pose would start inside the largest object");
        }
        let [amin, amax] = self.angle_limits;
        if !(amin < amax && (amin..=amax).contains(&OPEN_POSE)) {
            return bad("angle_limits must bracket the open pose");
        }
        if !(self.omega_max > 0.0 && self.contact_stiffness > 0.0) {
            return bad("omega_max and contact_stiffness must be positive");
        }
        if self.episode_length == 0 || self.shape_set.is_empty() || self.bisection_iters == 0 {
            return bad("episode_length, shape_set and bisection_iters must be nonempty");
        }
        if !(self.obs_noise_std >= 0.0) {
            return bad("obs_noise_std must be >= 0");
        }
        Ok(())
    }

    /// Observation channel names in layout order.
    pub fn observation_names(&self) -> Vec<String> {
        let f = self.num_fingers;
        ["angle", "velocity", "effort", "touch"]
            .iter()
            .flat_map(|k| (0..f).map(move |i| format!("{k}_{i}")))
            .collect()
    }

    /// Indices of the touch channels.
    pub fn touch_dims(&self) -> std::ops::Range<usize> {
        3 * self.num_fingers..4 * self.num_fingers
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rect,
    Disc,
    Ellipse,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Rect, Shape::Disc, Shape::Ellipse];

    pub fn class_index(self) -> usize {
        match self {
            Shape::Rect => 0,
            Shape::Disc => 1,
            Shape::Ellipse => 2,
        }
    }
}

/// The unobserved object. Static for the whole episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub half_extents: [f64; 2],
    /// Orientation in `[0, π)`.
    pub angle: f64,
}

impl ObjectSpec {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        point_in_object(p, self)
    }
}

/// Body-only sensor readings, laid out `[angles, velocities, efforts, touches]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(Vec<f64>);

impl Observation {
    /// The only constructor: it sees body quantities, never the object.
    pub fn from_sensors(angles: &[f64], velocities: &[f64], efforts: &[f64], touches: &[f64]) -> Self {
        let mut v = Vec::with_capacity(4 * angles.len());
        v.extend_from_slice(angles);
        v.extend_from_slice(velocities);
        v.extend_from_slice(efforts);
        v.extend_from_slice(touches);
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    fn fingers(&self) -> usize {
        self.0.len() / SENSORS_PER_FINGER
    }

    pub fn angles(&self) -> &[f64] {
        &self.0[..self.fingers()]
    }

    pub fn velocities(&self) -> &[f64] {
        let f = self.fingers();
        &self.0[f..2 * f]
    }

    pub fn efforts(&self) -> &[f64] {
        let f = self.fingers();
        &self.0[2 * f..3 * f]
    }

    pub fn touches(&self) -> &[f64] {
        let f = self.fingers();
        &self.0[3 * f..]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub angles: Vec<f64>,
    pub prev_angles: Vec<f64>,
    pub object: ObjectSpec,
    pub t: usize,
}

/// Base position of finger `i`.
pub fn base_position(i: usize, config: &EnvConfig) -> [f64; 2] {
    let beta = 2.0 * PI * i as f64 / config.num_fingers as f64;
    [config.base_radius * beta.cos(), config.base_radius * beta.sin()]
}

/// Fingertip of finger `i` at joint angle `theta`: the link points at the
/// centre when `theta = 0` and rotates counter-clockwise with `theta`.
pub fn tip_position(i: usize, theta: f64, config: &EnvConfig) -> [f64; 2] {
    let beta = 2.0 * PI * i as f64 / config.num_fingers as f64;
    let (sb, cb) = beta.sin_cos();
    let (st, ct) = theta.sin_cos();
    // Rot(theta) applied to the inward unit vector (-cos β, -sin β).
    let dir = [-(ct * cb - st * sb), -(st * cb + ct * sb)];
    [config.base_radius * cb + config.finger_length * dir[0], config.base_radius * sb + config.finger_length * dir[1]]
}

/// Tip distance from the centre, by the law of cosines.
pub fn tip_distance(theta: f64, config: &EnvConfig) -> f64 {
    let (r, l) = (config.base_radius, config.finger_length);
    (r * r + l * l - 2.0 * r * l * theta.cos()).sqrt()
}

pub fn point_in_object(p: [f64; 2], obj: &ObjectSpec) -> bool {
    let (s, c) = obj.angle.sin_cos();
    // Rot(-φ) p
    let x = c * p[0] + s * p[1];
    let y = -s * p[0] + c * p[1];
    let [a, b] = obj.half_extents;
    match obj.shape {
        Shape::Rect => x.abs() <= a && y.abs() <= b,
        Shape::Disc => x * x + y * y <= a * a,
        Shape::Ellipse => (x / a).powi(2) + (y / b).powi(2) <= 1.0,
    }
}

/// Bisects the last angle on `[from, to]` whose tip is still outside the object.
pub fn contact_angle(
    finger: usize,
    from: f64,
    to: f64,
    obj: &ObjectSpec,
    config: &EnvConfig,
) -> Result<f64, EnvError> {
    let inside = |th: f64| point_in_object(tip_position(finger, th, config), obj);
    if inside(from) || !inside(to) {
        return Err(EnvError::ContactPrecondition);
    }
    let (mut lo, mut hi) = (from, to);
    for _ in 0..config.bisection_iters {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(lo)
}

/// Samples a random object and places the hand in the open pose.
pub fn env_init(config: &EnvConfig, seed: u64) -> Result<EnvState, EnvError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = config.shape_set[rng.random_range(0..config.shape_set.len())];
    let [lo, hi] = config.half_extent_range;
    let a = rng.random_range(lo..=hi);
    let b = if shape == Shape::Disc { a } else { rng.random_range(lo..=hi) };
    let angle = rng.random_range(0.0..PI);
    let angles = vec![OPEN_POSE; config.num_fingers];
    Ok(EnvState {
        prev_angles: angles.clone(),
        angles,
        object: ObjectSpec { shape, half_extents: [a, b], angle },
        t: 0,
    })
}

/// One deterministic transition; returns the noise-free observation.
pub fn env_step(state: &EnvState, action: &[f64], config: &EnvConfig) -> (EnvState, Observation) {
    let f = config.num_fingers;
    assert_eq!(action.len(), f, "action length must equal num_fingers");
    let [amin, amax] = config.angle_limits;
    let mut next = state.angles.clone();
    let mut velocities = vec![0.0; f];
    let mut efforts = vec![0.0; f];
    let mut touches = vec![0.0; f];
    for i in 0..f {
        let u = action[i].clamp(-1.0, 1.0);
        let theta = state.angles[i];
        let desired = (theta + config.omega_max * u).clamp(amin, amax);
        let mut reached = desired;
        // Probe the swept arc; the first blocked sample bounds the bisection.
        let mut prev = theta;
        for k in 1..=PATH_SAMPLES {
            let th = theta + (desired - theta) * k as f64 / PATH_SAMPLES as f64;
            if point_in_object(tip_position(i, th, config), &state.object) {
                reached = contact_angle(i, prev, th, &state.object, config).unwrap_or(prev);
                touches[i] = config.contact_stiffness * (desired - reached).abs();
                break;
            }
            prev = th;
        }
        next[i] = reached;
        velocities[i] = reached - theta;
        efforts[i] = u - velocities[i] / config.omega_max;
    }
    let obs = Observation::from_sensors(&next, &velocities, &efforts, &touches);
    let state = EnvState { prev_angles: state.angles.clone(), angles: next, object: state.object, t: state.t + 1 };
    (state, obs)
}

/// Environment instance with its own observation-noise stream.
pub struct GripperEnv {
    config: EnvConfig,
    state: EnvState,
    noise_rng: ChaCha8Rng,
    seed: u64,
}

impl GripperEnv {
    pub fn new(config: EnvConfig, seed: u64) -> Result<Self, EnvError> {
        let state = env_init(&config, seed)?;
        let noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_655f_7365);
        Ok(Self { config, state, noise_rng, seed })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Ground-truth object, for diagnostic labels only.
    pub fn label(&self) -> ObjectSpec {
        self.state.object
    }

    pub fn angles(&self) -> &[f64] {
        &self.state.angles
    }

    pub fn step(&mut self, action: &[f64]) -> Observation {
        let (next, obs) = env_step(&self.state, action, &self.config);
        self.state = next;
        if self.config.obs_noise_std > 0.0 {
            let normal = Normal::new(0.0, self.config.obs_noise_std).expect("valid std");
            let noisy: Vec<f64> = obs.as_slice().iter().map(|v| v + normal.sample(&mut self.noise_rng)).collect();
            return Observation(noisy);
        }
        obs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Open,
    Closed,
}

/// Marker: the hand is fully open or fully closed at observation index `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseMarker {
    pub t: usize,
    pub phase: Phase,
}

/// Segment length of the scripted grasp schedule.
pub const GRASP_SEGMENT: usize = 10;

/// Proportional grasp-and-release controller with per-episode jittered targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspScript {
    pub close_target: f64,
    pub open_target: f64,
}

impl GraspScript {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            close_target: 1.2 + rng.random_range(-0.1..0.1),
            open_target: OPEN_POSE + rng.random_range(-0.1..0.1),
        }
    }

    pub fn target(&self, t: usize) -> f64 {
        if (t / GRASP_SEGMENT) % 2 == 0 {
            self.close_target
        } else {
            self.open_target
        }
    }

    pub fn action(&self, t: usize, angles: &[f64]) -> Vec<f64> {
        let target = self.target(t);
        angles.iter().map(|th| (4.0 * (target - th)).clamp(-1.0, 1.0)).collect()
    }

    /// Open/closed markers at every segment boundary, starting open.
    pub fn markers(episode_length: usize) -> Vec<PhaseMarker> {
        (0..episode_length)
            .step_by(GRASP_SEGMENT)
            .map(|t| PhaseMarker {
                t,
                phase: if (t / GRASP_SEGMENT) % 2 == 0 { Phase::Open } else { Phase::Closed },
            })
            .collect()
    }
}
