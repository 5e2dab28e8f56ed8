//! Covariance-sequence generation with an extended Kalman filter tracking a
//! vehicle from noisy position fixes.
//!
//! State `(x, y, heading, speed, turn rate)`; the turn rate decays by `beta`
//! per step and the filter observes position only. Measurement noise is drawn
//! from ChaCha8 (`rand_chacha`) through `rand_distr::Normal`, so a seed fixes
//! the sequence on every platform.

mod seqio;
mod trajectory;

pub use seqio::{read_dataset, read_packed, read_text, write_dataset, write_packed, write_text};
pub use trajectory::{ingest_csv, ingest_csv_reader, synth_trajectories, TrajectoryRecord, DEFAULT_TRACK_CAP};

use nalgebra::{Matrix2, Matrix2x5, Matrix5, Vector2, Vector5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::symmat::SymMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleModel {
    /// Per-step decay factor of the turn rate.
    pub beta: f64,
    /// Sampling period in seconds.
    pub ts: f64,
    /// Process noise variances for x, y (m^2), heading (rad^2), speed (m^2/s^2), turn rate (rad^2/s^2).
    pub q: [f64; 5],
    /// Position measurement noise variance (m^2).
    pub r: f64,
    /// Wheelbase in meters. Not used by the motion model; kept as vehicle metadata.
    pub wheelbase: f64,
}

impl Default for VehicleModel {
    fn default() -> Self {
        Self {
            beta: 0.9,
            ts: 1.0 / 25.0,
            q: [1e-3, 1e-3, 1e-3, 1e-2, 1e-2],
            r: 0.1,
            wheelbase: 2.5,
        }
    }
}

impl VehicleModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.q.iter().all(|&v| v > 0.0 && v.is_finite())
            && self.r > 0.0
            && self.r.is_finite()
            && self.beta > 0.0
            && self.beta <= 1.0
            && self.ts > 0.0
            && self.ts.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Parse(format!("invalid vehicle model {self:?}")))
        }
    }

    /// Noise-free state transition.
    pub fn transition(&self, s: &Vector5<f64>) -> Vector5<f64> {
        let (theta, v, omega) = (s[2], s[3], s[4]);
        Vector5::new(
            s[0] + self.ts * v * theta.cos(),
            s[1] + self.ts * v * theta.sin(),
            theta + self.ts * omega,
            v,
            self.beta * omega,
        )
    }

    /// Jacobian of [`Self::transition`].
    pub fn jacobian(&self, s: &Vector5<f64>) -> Matrix5<f64> {
        let (theta, v) = (s[2], s[3]);
        let (sin, cos) = theta.sin_cos();
        let ts = self.ts;
        #[rustfmt::skip]
        let f = Matrix5::new(
            1.0, 0.0, -ts * v * sin, ts * cos, 0.0,
            0.0, 1.0,  ts * v * cos, ts * sin, 0.0,
            0.0, 0.0,  1.0,          0.0,      ts,
            0.0, 0.0,  0.0,          1.0,      0.0,
            0.0, 0.0,  0.0,          0.0,      self.beta,
        );
        f
    }

    fn process_noise(&self) -> Matrix5<f64> {
        Matrix5::from_diagonal(&Vector5::from(self.q))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EkfState {
    pub x: Vector5<f64>,
    pub p: Matrix5<f64>,
}

fn symmetrize(p: &Matrix5<f64>) -> Matrix5<f64> {
    (p + p.transpose()) * 0.5
}

impl EkfState {
    /// Starts at the first position fix with zero heading, speed and turn
    /// rate; position variance equals the measurement variance, the rest 1.
    pub fn initial(z: Vector2<f64>, model: &VehicleModel) -> Self {
        Self {
            x: Vector5::new(z[0], z[1], 0.0, 0.0, 0.0),
            p: Matrix5::from_diagonal(&Vector5::new(model.r, model.r, 1.0, 1.0, 1.0)),
        }
    }

    pub fn covariance(&self) -> SymMatrix {
        let p = symmetrize(&self.p);
        let mut out = SymMatrix::zeros(5);
        for i in 0..5 {
            for j in i..5 {
                out.set(i, j, p[(i, j)]);
            }
        }
        out
    }
}

pub fn predict(state: &EkfState, model: &VehicleModel) -> EkfState {
    let f = model.jacobian(&state.x);
    EkfState {
        x: model.transition(&state.x),
        p: symmetrize(&(f * state.p * f.transpose() + model.process_noise())),
    }
}

/// Position update in Joseph form, symmetrized.
pub fn update(state: &EkfState, z: Vector2<f64>, model: &VehicleModel) -> Result<EkfState> {
    let h = Matrix2x5::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
    let r = Matrix2::identity() * model.r;
    let s = h * state.p * h.transpose() + r;
    if s.determinant().abs() <= f64::EPSILON * s.norm().powi(2) {
        return Err(Error::SingularInnovation);
    }
    let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
    let k = state.p * h.transpose() * s_inv;
    let innovation = z - h * state.x;
    let i_kh = Matrix5::identity() - k * h;
    let p = i_kh * state.p * i_kh.transpose() + k * r * k.transpose();
    Ok(EkfState {
        x: state.x + k * innovation,
        p: symmetrize(&p),
    })
}

/// Runs the filter over noisy copies of the track positions and returns the
/// posterior covariance at every step, starting with the initial one.
pub fn generate_sequence(
    traj: &TrajectoryRecord,
    model: &VehicleModel,
    noise_seed: u64,
) -> Result<Vec<SymMatrix>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = Normal::new(0.0, model.r.sqrt()).expect("positive variance");
    let mut measurements = traj
        .positions()
        .iter()
        .map(|&[x, y]| Vector2::new(x + noise.sample(&mut rng), y + noise.sample(&mut rng)));
    let first = measurements
        .next()
        .ok_or_else(|| Error::Parse(format!("track {} is empty", traj.track_id())))?;
    let mut state = EkfState::initial(first, model);
    let mut out = Vec::with_capacity(traj.len());
    out.push(state.covariance());
    for z in measurements {
        state = update(&predict(&state, model), z, model)?;
        out.push(state.covariance());
    }
    Ok(out)
}

/// Per-track seed derived from a base seed.
pub fn track_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates one covariance sequence per track, in parallel, each with its own seed.
pub fn generate_dataset(
    trajs: &[TrajectoryRecord],
    model: &VehicleModel,
    seed: u64,
) -> Result<Vec<Vec<SymMatrix>>> {
    trajs
        .par_iter()
        .enumerate()
        .map(|(k, t)| generate_sequence(t, model, track_seed(seed, k)))
        .collect()
}
