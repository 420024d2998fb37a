//! Extended Kalman filter over the joint assembly state.
//!
//! The prediction uses the unicycle pair model with additive Gaussian process
//! noise. Three linear observation channels feed the update: the leader pose,
//! the follower pose and the difference `leader − follower`. Updates run in
//! Joseph form, every angle residual is wrapped, and an innovation gate turns
//! away outliers.
//!
//! ```
//! use nalgebra::{Matrix3, Matrix6};
//! use trolley_core::estimator::{predict, update, BeliefState, EkfConfig, Measurement, MeasurementSource};
//! use trolley_core::geometry::{AssemblyState, ControlInput, Pose2};
//!
//! let x = AssemblyState::from_midpoint(Pose2::origin(), 1.34);
//! let belief = BeliefState::new(x, Matrix6::identity() * 0.01, 0.0).unwrap();
//! let u = ControlInput::new(0.5, 0.0, 0.5, 0.0);
//! let prior = predict(&belief, &u, 0.1, &(Matrix6::identity() * 1e-4)).unwrap();
//! let m = Measurement::new(
//!     MeasurementSource::LeaderPose,
//!     [0.72, 0.0, 0.0],
//!     Matrix3::identity() * 1e-4,
//!     0.1,
//! )
//! .unwrap();
//! let post = update(&prior, &m, &EkfConfig::default()).unwrap();
//! assert!(post.covariance.trace() < prior.covariance.trace());
//! ```

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize, AssemblyState, ControlInput, Pose2};
use crate::kinematics::{step_pair, UnicyclePairModel};

pub type Matrix3x6 = SMatrix<f64, 3, 6>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} noise matrix is not symmetric positive semidefinite")]
    NotPsd(&'static str),
    #[error("measurement stamped {stamp} is older than the belief at {belief}")]
    Stale { stamp: f64, belief: f64 },
    #[error("innovation distance {distance:.3} exceeds the gate {gate}")]
    Gated { distance: f64, gate: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasurementSource {
    LeaderPose,
    FollowerPose,
    RelativePose,
}

impl MeasurementSource {
    pub const ALL: [MeasurementSource; 3] = [Self::LeaderPose, Self::FollowerPose, Self::RelativePose];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LeaderPose => "leader_pose",
            Self::FollowerPose => "follower_pose",
            Self::RelativePose => "relative_pose",
        }
    }

    pub fn observation_matrix(self) -> Matrix3x6 {
        let mut h = Matrix3x6::zeros();
        let i = Matrix3::identity();
        match self {
            Self::LeaderPose => h.fixed_view_mut::<3, 3>(0, 0).copy_from(&i),
            Self::FollowerPose => h.fixed_view_mut::<3, 3>(0, 3).copy_from(&i),
            Self::RelativePose => {
                h.fixed_view_mut::<3, 3>(0, 0).copy_from(&i);
                h.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-i));
            }
        }
        h
    }

    /// Noise-free observation of `x`, heading wrapped.
    pub fn observe(self, x: &AssemblyState) -> Vector3<f64> {
        let mut y = self.observation_matrix() * x.to_vector();
        y[2] = normalize(y[2]);
        y
    }
}

fn is_symmetric_psd<const N: usize>(m: &SMatrix<f64, N, N>) -> bool {
    let m = DMatrix::from_column_slice(N, N, m.as_slice());
    if !m.iter().all(|v| v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(1e-300);
    if (&m - m.transpose()).amax() > 1e-12 * scale.max(1.0) {
        return false;
    }
    let eig = m.symmetric_eigenvalues();
    eig.iter().all(|&l| l >= -1e-10 * scale)
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub source: MeasurementSource,
    pub value: Vector3<f64>,
    pub noise: Matrix3<f64>,
    pub stamp: f64,
}

impl Measurement {
    pub fn new(source: MeasurementSource, value: [f64; 3], noise: Matrix3<f64>, stamp: f64) -> Result<Self, EstimatorError> {
        if !value.iter().all(|v| v.is_finite()) || !stamp.is_finite() {
            return Err(EstimatorError::NonFinite("measurement"));
        }
        if !is_symmetric_psd(&noise) {
            return Err(EstimatorError::NotPsd("measurement"));
        }
        Ok(Self {
            source,
            value: Vector3::from(value),
            noise,
            stamp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefState {
    pub mean: AssemblyState,
    pub covariance: Matrix6<f64>,
    pub stamp: f64,
}

impl BeliefState {
    pub fn new(mean: AssemblyState, covariance: Matrix6<f64>, stamp: f64) -> Result<Self, EstimatorError> {
        if !mean.is_finite() || !stamp.is_finite() {
            return Err(EstimatorError::NonFinite("belief"));
        }
        if !is_symmetric_psd(&covariance) {
            return Err(EstimatorError::NotPsd("belief"));
        }
        Ok(Self {
            mean,
            covariance: symmetrize(&covariance),
            stamp,
        })
    }

    /// Normalized estimation error squared of `truth` under this belief.
    /// A singular covariance is inverted on its range.
    pub fn nees(&self, truth: &AssemblyState) -> f64 {
        let e = state_error(truth, &self.mean);
        let inv = self
            .covariance
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| self.covariance.pseudo_inverse(1e-12).unwrap_or_else(|_| Matrix6::zeros()));
        (e.transpose() * inv * e)[0]
    }

    /// Covariance symmetric and positive semidefinite.
    pub fn is_valid(&self) -> bool {
        is_symmetric_psd(&self.covariance)
    }
}

/// `a − b` with both heading components wrapped.
pub fn state_error(a: &AssemblyState, b: &AssemblyState) -> Vector6<f64> {
    let mut e = a.to_vector() - b.to_vector();
    e[2] = normalize(e[2]);
    e[5] = normalize(e[5]);
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    /// Squared Mahalanobis gate on the innovation.
    pub gate: f64,
    /// Measurements older than the belief by more than this are dropped (s).
    pub late_tolerance: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            // chi-square, 3 dof, 0.999
            gate: 16.266,
            late_tolerance: 0.1,
        }
    }
}

pub fn predict(
    belief: &BeliefState,
    u: &ControlInput,
    dt: f64,
    process_noise: &Matrix6<f64>,
) -> Result<BeliefState, EstimatorError> {
    let model = UnicyclePairModel::new(dt).map_err(|_| EstimatorError::NonPositive("dt"))?;
    if !is_symmetric_psd(process_noise) {
        return Err(EstimatorError::NotPsd("process"));
    }
    let f = model.state_jacobian(&belief.mean, u);
    Ok(BeliefState {
        mean: step_pair(&model, &belief.mean, u),
        covariance: symmetrize(&(f * belief.covariance * f.transpose() + process_noise)),
        stamp: belief.stamp + dt,
    })
}

/// Kalman update with one measurement. A gated measurement is reported as
/// [`EstimatorError::Gated`] and leaves the caller's belief untouched.
pub fn update(belief: &BeliefState, m: &Measurement, cfg: &EkfConfig) -> Result<BeliefState, EstimatorError> {
    if m.stamp < belief.stamp - cfg.late_tolerance {
        return Err(EstimatorError::Stale {
            stamp: m.stamp,
            belief: belief.stamp,
        });
    }
    if !is_symmetric_psd(&m.noise) {
        return Err(EstimatorError::NotPsd("measurement"));
    }
    let h = m.source.observation_matrix();
    let sigma = belief.covariance;
    let mut innovation = m.value - h * belief.mean.to_vector();
    innovation[2] = normalize(innovation[2]);
    let s = symmetrize(&(h * sigma * h.transpose() + m.noise));
    let s_inv = match s.cholesky() {
        Some(c) => c.inverse(),
        None => s.pseudo_inverse(1e-12).map_err(|_| EstimatorError::NonFinite("innovation"))?,
    };
    let distance = (innovation.transpose() * s_inv * innovation)[0];
    if distance > cfg.gate {
        return Err(EstimatorError::Gated {
            distance,
            gate: cfg.gate,
        });
    }
    let k = sigma * h.transpose() * s_inv;
    let mut x = belief.mean.to_vector() + k * innovation;
    x[2] = normalize(x[2]);
    x[5] = normalize(x[5]);
    let a = Matrix6::identity() - k * h;
    let covariance = symmetrize(&(a * sigma * a.transpose() + k * m.noise * k.transpose()));
    if !x.iter().chain(covariance.iter()).all(|v| v.is_finite()) {
        return Err(EstimatorError::NonFinite("posterior"));
    }
    Ok(BeliefState {
        mean: AssemblyState::from_vector(&x),
        covariance,
        stamp: belief.stamp.max(m.stamp),
    })
}

/// Counters kept by [`Estimator`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EstimatorStats {
    pub applied: usize,
    pub gated: usize,
    pub dropped_late: usize,
}

/// Owns the belief and a time-ordered queue of pending measurements.
#[derive(Debug, Clone)]
pub struct Estimator {
    belief: BeliefState,
    cfg: EkfConfig,
    queue: Vec<Measurement>,
    stats: EstimatorStats,
}

impl Estimator {
    pub fn new(belief: BeliefState, cfg: EkfConfig) -> Self {
        Self {
            belief,
            cfg,
            queue: Vec::new(),
            stats: EstimatorStats::default(),
        }
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn stats(&self) -> EstimatorStats {
        self.stats
    }

    pub fn enqueue(&mut self, m: Measurement) {
        let at = self
            .queue
            .partition_point(|q| (q.stamp, q.source) <= (m.stamp, m.source));
        self.queue.insert(at, m);
    }

    pub fn predict(&mut self, u: &ControlInput, dt: f64, process_noise: &Matrix6<f64>) -> Result<(), EstimatorError> {
        self.belief = predict(&self.belief, u, dt, process_noise)?;
        Ok(())
    }

    /// Applies every queued measurement in stamp order. Stale and gated
    /// measurements are counted and skipped.
    pub fn drain(&mut self) -> Result<(), EstimatorError> {
        for m in std::mem::take(&mut self.queue) {
            match update(&self.belief, &m, &self.cfg) {
                Ok(b) => {
                    self.belief = b;
                    self.stats.applied += 1;
                }
                Err(EstimatorError::Stale { .. }) => self.stats.dropped_late += 1,
                Err(EstimatorError::Gated { .. }) => self.stats.gated += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}

/// Per-source measurement rates in Hz. Zero disables a source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementRates {
    pub leader: f64,
    pub follower: f64,
    pub relative: f64,
}

impl Default for MeasurementRates {
    fn default() -> Self {
        Self {
            leader: 10.0,
            follower: 10.0,
            relative: 10.0,
        }
    }
}

impl MeasurementRates {
    pub fn rate(&self, source: MeasurementSource) -> f64 {
        match source {
            MeasurementSource::LeaderPose => self.leader,
            MeasurementSource::FollowerPose => self.follower,
            MeasurementSource::RelativePose => self.relative,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if [self.leader, self.follower, self.relative].iter().all(|r| r.is_finite() && *r >= 0.0) {
            Ok(())
        } else {
            Err(EstimatorError::NonPositive("rates"))
        }
    }

    /// Whether `source` emits at time `t`, all sources starting at phase 0.
    pub fn is_due(&self, source: MeasurementSource, t: f64) -> bool {
        let rate = self.rate(source);
        if rate <= 0.0 {
            return false;
        }
        let n = t * rate;
        (n - n.round()).abs() <= 1e-9 * n.abs().max(1.0)
    }
}

/// Process and measurement covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub process: Matrix6<f64>,
    pub leader: Matrix3<f64>,
    pub follower: Matrix3<f64>,
    pub relative: Matrix3<f64>,
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            process: Matrix6::zeros(),
            leader: Matrix3::zeros(),
            follower: Matrix3::zeros(),
            relative: Matrix3::zeros(),
        }
    }

    /// Diagonal covariances from per-component standard deviations.
    pub fn from_sigmas(process: [f64; 6], leader: [f64; 3], follower: [f64; 3], relative: [f64; 3]) -> Self {
        let sq3 = |s: [f64; 3]| Matrix3::from_diagonal(&Vector3::from(s.map(|v| v * v)));
        Self {
            process: Matrix6::from_diagonal(&Vector6::from(process.map(|v| v * v))),
            leader: sq3(leader),
            follower: sq3(follower),
            relative: sq3(relative),
        }
    }

    pub fn measurement(&self, source: MeasurementSource) -> &Matrix3<f64> {
        match source {
            MeasurementSource::LeaderPose => &self.leader,
            MeasurementSource::FollowerPose => &self.follower,
            MeasurementSource::RelativePose => &self.relative,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !is_symmetric_psd(&self.process) {
            return Err(EstimatorError::NotPsd("process"));
        }
        for s in MeasurementSource::ALL {
            if !is_symmetric_psd(self.measurement(s)) {
                return Err(EstimatorError::NotPsd(s.as_str()));
            }
        }
        Ok(())
    }
}

/// Draws from `N(0, cov)` through a symmetric square root, so singular
/// covariances are fine.
pub fn sample_gaussian<const N: usize, R: Rng + ?Sized>(cov: &SMatrix<f64, N, N>, rng: &mut R) -> SVector<f64, N> {
    let z: [f64; N] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let mut out = SVector::<f64, N>::from([0.0; N]);
    if cov.iter().all(|v| *v == 0.0) {
        return out;
    }
    let eig = DMatrix::from_column_slice(N, N, symmetrize(cov).as_slice()).symmetric_eigen();
    let scaled = DVector::from_fn(N, |i, _| eig.eigenvalues[i].max(0.0).sqrt() * z[i]);
    out.as_mut_slice().copy_from_slice((eig.eigenvectors * scaled).as_slice());
    out
}

/// Adds a sample of `N(0, cov)` to `x`, headings wrapped.
pub fn perturb_state<R: Rng + ?Sized>(x: &AssemblyState, cov: &Matrix6<f64>, rng: &mut R) -> AssemblyState {
    let mut v = x.to_vector() + sample_gaussian(cov, rng);
    v[2] = normalize(v[2]);
    v[5] = normalize(v[5]);
    AssemblyState::from_vector(&v)
}

/// Noisy measurements of `truth` from every source due at `t`.
pub fn synthesize_measurements<R: Rng + ?Sized>(
    truth: &AssemblyState,
    noise: &NoiseModel,
    rates: &MeasurementRates,
    t: f64,
    rng: &mut R,
) -> Vec<Measurement> {
    MeasurementSource::ALL
        .into_iter()
        .filter(|&s| rates.is_due(s, t))
        .map(|source| {
            let w = noise.measurement(source);
            let mut value = source.observe(truth) + sample_gaussian(w, rng);
            value[2] = normalize(value[2]);
            Measurement {
                source,
                value,
                noise: *w,
                stamp: t,
            }
        })
        .collect()
}

/// Initial covariance used by [`run_consistency_trial`].
pub fn trial_initial_covariance() -> Matrix6<f64> {
    Matrix6::from_diagonal(&Vector6::new(0.05, 0.05, 0.02, 0.05, 0.05, 0.02).map(|s| s * s))
}

/// Nominal noise used by the consistency trial and as the simulator default.
pub fn nominal_noise() -> NoiseModel {
    NoiseModel::from_sigmas(
        [0.005, 0.005, 0.003, 0.005, 0.005, 0.003],
        [0.03, 0.03, 0.02],
        [0.03, 0.03, 0.02],
        [0.025, 0.025, 0.01],
    )
}

/// Simulates a truth trajectory with sampled noise, filters it and returns
/// the NEES after each step's updates. Both robots drive a gentle weave at
/// 0.4 m/s; the step is 0.1 s.
pub fn run_consistency_trial(
    seed: u64,
    steps: usize,
    rates: &MeasurementRates,
    noise: &NoiseModel,
) -> Result<Vec<f64>, EstimatorError> {
    if steps == 0 {
        return Err(EstimatorError::NonPositive("steps"));
    }
    rates.validate()?;
    noise.validate()?;
    let dt = 0.1;
    let model = UnicyclePairModel::new(dt).map_err(|_| EstimatorError::NonPositive("dt"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = AssemblyState::from_midpoint(Pose2::origin(), 1.34);
    let p0 = if noise.process.iter().all(|v| *v == 0.0)
        && MeasurementSource::ALL.iter().all(|&s| noise.measurement(s).iter().all(|v| *v == 0.0))
    {
        Matrix6::zeros()
    } else {
        trial_initial_covariance()
    };
    let start = perturb_state(&truth, &p0, &mut rng);
    let mut est = Estimator::new(
        BeliefState::new(start, p0, 0.0)?,
        EkfConfig {
            gate: f64::INFINITY,
            ..EkfConfig::default()
        },
    );
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = (k + 1) as f64 * dt;
        let w = 0.3 * (0.2 * t).sin();
        let u = ControlInput::new(0.4, w, 0.4, w);
        truth = perturb_state(&step_pair(&model, &truth, &u), &noise.process, &mut rng);
        est.predict(&u, dt, &noise.process)?;
        for m in synthesize_measurements(&truth, noise, rates, t, &mut rng) {
            est.enqueue(m);
        }
        est.drain()?;
        out.push(est.belief().nees(&truth));
    }
    Ok(out)
}
