//! IMU-camera extrinsic calibration with known landmarks.
//!
//! Nominal state (23): IMU attitude q (world to IMU), IMU position and
//! velocity in the world frame, gyro and accelerometer biases, camera
//! position in the IMU frame, camera attitude q_ic (IMU to camera).
//! Error state (21): [δθ, δp, δv, δb_g, δb_a, δp_C, δα].
//!
//! The world frame has z up. Sixteen landmarks (four square markers) lie
//! in the plane y = 0 and the camera looks along +y from about 1.2 m.
//! The truth trajectory is a sum of sinusoids in body rate and position.
//! The IMU stream is synthesized so that integrating it without noise and
//! with the true biases reproduces the truth exactly: body rate and
//! acceleration are held at their mid-step values over each IMU period.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::filter::{Covariance, UpdateWeights};
use crate::harness::{RunRecord, Variant, WeightSpec};
use crate::mekf::{pu_mekf_update, skew, Block, MekfState, Quaternion};
use crate::rng::{self, normal};
use crate::scenarios::config::{format_list, Config};
use crate::sqrt::{process_noise_factor_t, sr_propagate};
use crate::ud::ud_propagate;
use crate::weights::WeightMode;

/// Error-state dimension.
pub const ERR_DIM: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct ImuCamParams {
    pub imu_rate: f64,
    pub camera_rate: f64,
    pub duration: f64,
    /// Initial 1σ, radians and meters.
    pub sigma_attitude: f64,
    pub sigma_position: f64,
    pub sigma_velocity: f64,
    pub sigma_gyro_bias: f64,
    pub sigma_accel_bias: f64,
    pub sigma_lever: f64,
    pub sigma_cam_attitude: f64,
    pub pixel_sigma: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Continuous noise densities: rad/s/√Hz, m/s²/√Hz, and bias walks.
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub gyro_walk: f64,
    pub accel_walk: f64,
    pub gravity: f64,
    /// True camera position in the IMU frame (m).
    pub lever_truth: [f64; 3],
    /// True IMU-to-camera rotation as a rotation vector (rad).
    pub cam_rotation_truth: [f64; 3],
    /// Distance from the marker plane (m).
    pub standoff: f64,
    /// Position excursion amplitudes per world axis (m).
    pub translation_amplitude: [f64; 3],
    /// Attitude excursion amplitude (rad).
    pub rotation_amplitude: f64,
    pub marker_size: f64,
    pub marker_spacing: f64,
    /// One weight per block: θ, p, v, b_g, b_a, p_C, α.
    pub beta: [f64; 7],
}

impl Default for ImuCamParams {
    fn default() -> Self {
        let deg = PI / 180.0;
        Self {
            imu_rate: 100.0,
            camera_rate: 20.0,
            duration: 60.0,
            sigma_attitude: 2.0 * deg,
            sigma_position: 0.05,
            sigma_velocity: 0.01,
            sigma_gyro_bias: 1e-3,
            sigma_accel_bias: 0.02,
            sigma_lever: 0.05,
            sigma_cam_attitude: 2.0 * deg,
            pixel_sigma: 2.0,
            fx: 320.0 / (29.0 * deg).tan(),
            fy: 240.0 / (22.5 * deg).tan(),
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
            gyro_noise: 0.0035 * deg,
            accel_noise: 0.14e-3 * 9.80665,
            gyro_walk: 1e-5,
            accel_walk: 1e-4,
            gravity: 9.81,
            lever_truth: [0.05, -0.03, 0.02],
            cam_rotation_truth: [0.03, -0.02, 0.05],
            standoff: 1.2,
            translation_amplitude: [0.08, 0.1, 0.06],
            rotation_amplitude: 0.06,
            marker_size: 0.2,
            marker_spacing: 0.3,
            beta: [0.95, 0.95, 1.0, 1.0, 1.0, 0.25, 0.25],
        }
    }
}

const KEYS: &[&str] = &[
    "imu_rate", "camera_rate", "duration", "sigma_attitude_deg", "sigma_position", "sigma_velocity",
    "sigma_gyro_bias", "sigma_accel_bias", "sigma_lever", "sigma_cam_attitude_deg", "pixel_sigma", "fx", "fy", "cx",
    "cy", "width", "height", "gyro_noise", "accel_noise", "gyro_walk", "accel_walk", "gravity", "lever_truth",
    "cam_rotation_truth", "standoff", "translation_amplitude", "rotation_amplitude", "marker_size", "marker_spacing",
    "beta",
];

fn arr<const N: usize>(v: Vec<f64>, key: &str) -> Result<[f64; N]> {
    v.try_into().map_err(|_| Error::Config(format!("imu_cam.{key}: expected {N} values")))
}

impl ImuCamParams {
    pub fn from_config(c: &Config) -> Result<Self> {
        c.check_known("imu_cam.", KEYS)?;
        let d = Self::default();
        let k = |s: &str| format!("imu_cam.{s}");
        let deg = PI / 180.0;
        let p = Self {
            imu_rate: c.f64_or(&k("imu_rate"), d.imu_rate)?,
            camera_rate: c.f64_or(&k("camera_rate"), d.camera_rate)?,
            duration: c.f64_or(&k("duration"), d.duration)?,
            sigma_attitude: c.f64_or(&k("sigma_attitude_deg"), d.sigma_attitude / deg)? * deg,
            sigma_position: c.f64_or(&k("sigma_position"), d.sigma_position)?,
            sigma_velocity: c.f64_or(&k("sigma_velocity"), d.sigma_velocity)?,
            sigma_gyro_bias: c.f64_or(&k("sigma_gyro_bias"), d.sigma_gyro_bias)?,
            sigma_accel_bias: c.f64_or(&k("sigma_accel_bias"), d.sigma_accel_bias)?,
            sigma_lever: c.f64_or(&k("sigma_lever"), d.sigma_lever)?,
            sigma_cam_attitude: c.f64_or(&k("sigma_cam_attitude_deg"), d.sigma_cam_attitude / deg)? * deg,
            pixel_sigma: c.f64_or(&k("pixel_sigma"), d.pixel_sigma)?,
            fx: c.f64_or(&k("fx"), d.fx)?,
            fy: c.f64_or(&k("fy"), d.fy)?,
            cx: c.f64_or(&k("cx"), d.cx)?,
            cy: c.f64_or(&k("cy"), d.cy)?,
            width: c.f64_or(&k("width"), d.width)?,
            height: c.f64_or(&k("height"), d.height)?,
            gyro_noise: c.f64_or(&k("gyro_noise"), d.gyro_noise)?,
            accel_noise: c.f64_or(&k("accel_noise"), d.accel_noise)?,
            gyro_walk: c.f64_or(&k("gyro_walk"), d.gyro_walk)?,
            accel_walk: c.f64_or(&k("accel_walk"), d.accel_walk)?,
            gravity: c.f64_or(&k("gravity"), d.gravity)?,
            lever_truth: arr(c.vec_or(&k("lever_truth"), &d.lever_truth)?, "lever_truth")?,
            cam_rotation_truth: arr(c.vec_or(&k("cam_rotation_truth"), &d.cam_rotation_truth)?, "cam_rotation_truth")?,
            standoff: c.f64_or(&k("standoff"), d.standoff)?,
            translation_amplitude: arr(
                c.vec_or(&k("translation_amplitude"), &d.translation_amplitude)?,
                "translation_amplitude",
            )?,
            rotation_amplitude: c.f64_or(&k("rotation_amplitude"), d.rotation_amplitude)?,
            marker_size: c.f64_or(&k("marker_size"), d.marker_size)?,
            marker_spacing: c.f64_or(&k("marker_spacing"), d.marker_spacing)?,
            beta: arr(c.vec_or(&k("beta"), &d.beta)?, "beta")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.imu_rate,
            self.camera_rate,
            self.duration,
            self.sigma_attitude,
            self.sigma_position,
            self.sigma_velocity,
            self.sigma_gyro_bias,
            self.sigma_accel_bias,
            self.sigma_lever,
            self.sigma_cam_attitude,
            self.pixel_sigma,
            self.fx,
            self.fy,
            self.width,
            self.height,
            self.standoff,
        ];
        if pos.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("imu_cam: rates, sigmas and intrinsics must be positive".into()));
        }
        let ratio = self.imu_rate / self.camera_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::Config("imu_cam: camera rate must divide the IMU rate".into()));
        }
        if self.beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("imu_cam.beta: weights must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_config_text(&self) -> String {
        let deg = PI / 180.0;
        let mut s = String::from("# IMU-camera calibration against 16 known landmarks\n");
        let mut kv = |k: &str, v: String| s.push_str(&format!("imu_cam.{k} = {v}\n"));
        kv("imu_rate", format!("{:?}", self.imu_rate));
        kv("camera_rate", format!("{:?}", self.camera_rate));
        kv("duration", format!("{:?}", self.duration));
        kv("sigma_attitude_deg", format!("{:?}", self.sigma_attitude / deg));
        kv("sigma_position", format!("{:?}", self.sigma_position));
        kv("sigma_velocity", format!("{:?}", self.sigma_velocity));
        kv("sigma_gyro_bias", format!("{:?}", self.sigma_gyro_bias));
        kv("sigma_accel_bias", format!("{:?}", self.sigma_accel_bias));
        kv("sigma_lever", format!("{:?}", self.sigma_lever));
        kv("sigma_cam_attitude_deg", format!("{:?}", self.sigma_cam_attitude / deg));
        kv("pixel_sigma", format!("{:?}", self.pixel_sigma));
        kv("fx", format!("{:?}", self.fx));
        kv("fy", format!("{:?}", self.fy));
        kv("cx", format!("{:?}", self.cx));
        kv("cy", format!("{:?}", self.cy));
        kv("width", format!("{:?}", self.width));
        kv("height", format!("{:?}", self.height));
        kv("gyro_noise", format!("{:?}", self.gyro_noise));
        kv("accel_noise", format!("{:?}", self.accel_noise));
        kv("gyro_walk", format!("{:?}", self.gyro_walk));
        kv("accel_walk", format!("{:?}", self.accel_walk));
        kv("gravity", format!("{:?}", self.gravity));
        kv("lever_truth", format_list(&self.lever_truth));
        kv("cam_rotation_truth", format_list(&self.cam_rotation_truth));
        kv("standoff", format!("{:?}", self.standoff));
        kv("translation_amplitude", format_list(&self.translation_amplitude));
        kv("rotation_amplitude", format!("{:?}", self.rotation_amplitude));
        kv("marker_size", format!("{:?}", self.marker_size));
        kv("marker_spacing", format!("{:?}", self.marker_spacing));
        kv("beta", format_list(&self.beta));
        s
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.imu_rate
    }

    pub fn steps(&self) -> usize {
        (self.duration * self.imu_rate).round() as usize
    }

    pub fn steps_per_frame(&self) -> usize {
        (self.imu_rate / self.camera_rate).round() as usize
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }

    /// Initial 1σ per error state.
    pub fn sigma0(&self) -> DVector<f64> {
        let blocks = [
            self.sigma_attitude,
            self.sigma_position,
            self.sigma_velocity,
            self.sigma_gyro_bias,
            self.sigma_accel_bias,
            self.sigma_lever,
            self.sigma_cam_attitude,
        ];
        DVector::from_fn(ERR_DIM, |i, _| blocks[i / 3])
    }

    pub fn p0(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.sigma0().map(|s| s * s))
    }

    /// Block weights expanded to the 21 error states.
    pub fn beta_full(&self) -> Vec<f64> {
        (0..ERR_DIM).map(|i| self.beta[i / 3]).collect()
    }

    /// Continuous noise spectral density, ordered n_g, n_a, n_wg, n_wa.
    pub fn qc(&self) -> DMatrix<f64> {
        let d = [self.gyro_noise, self.accel_noise, self.gyro_walk, self.accel_walk];
        DMatrix::from_diagonal(&DVector::from_fn(12, |i, _| d[i / 3] * d[i / 3]))
    }

    /// Landmark corners, four per marker.
    pub fn landmarks(&self) -> Vec<Vector3<f64>> {
        let h = 0.5 * self.marker_size;
        let c = 0.5 * self.marker_spacing + h;
        let mut out = Vec::with_capacity(16);
        for (mx, mz) in [(-c, c), (c, c), (-c, -c), (c, -c)] {
            for (dx, dz) in [(-h, h), (h, h), (h, -h), (-h, -h)] {
                out.push(Vector3::new(mx + dx, 0.0, mz + dz));
            }
        }
        out
    }

    pub fn camera(&self) -> PinholeCamera {
        PinholeCamera { fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy, width: self.width, height: self.height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl PinholeCamera {
    /// Pixel of a camera-frame point, or `None` behind the camera or
    /// outside the image.
    pub fn project(&self, pc: &Vector3<f64>) -> Option<Vector2<f64>> {
        if pc[2] <= 1e-3 {
            return None;
        }
        let u = self.project_unchecked(pc);
        (u[0] >= 0.0 && u[0] < self.width && u[1] >= 0.0 && u[1] < self.height).then_some(u)
    }

    pub fn project_unchecked(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * pc[0] / pc[2] + self.cx, self.fy * pc[1] / pc[2] + self.cy)
    }

    /// ∂pixel/∂p_c.
    pub fn jacobian(&self, pc: &Vector3<f64>) -> Matrix2x3<f64> {
        let (x, y, z) = (pc[0], pc[1], pc[2]);
        Matrix2x3::new(self.fx / z, 0.0, -self.fx * x / (z * z), 0.0, self.fy / z, -self.fy * y / (z * z))
    }
}

/// Nominal 23-element state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    /// World to IMU.
    pub q: Quaternion,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub bg: Vector3<f64>,
    pub ba: Vector3<f64>,
    /// Camera position in the IMU frame.
    pub pci: Vector3<f64>,
    /// IMU to camera.
    pub q_ic: Quaternion,
}

fn v3(x: &DVector<f64>, i: usize) -> Vector3<f64> {
    Vector3::new(x[i], x[i + 1], x[i + 2])
}

/// Error-state block layout: attitude, 15 additive states, camera attitude.
pub fn layout() -> Vec<Block> {
    vec![Block::Attitude, Block::Vector(15), Block::Attitude]
}

impl NavState {
    pub fn to_mekf(&self, cov: Covariance) -> Result<MekfState> {
        let mut add = DVector::zeros(15);
        for (b, v) in [self.p, self.v, self.bg, self.ba, self.pci].iter().enumerate() {
            add.fixed_rows_mut::<3>(3 * b).copy_from(v);
        }
        MekfState::new(layout(), vec![self.q, self.q_ic], add, cov)
    }

    pub fn from_mekf(s: &MekfState) -> Self {
        let a = &s.additive;
        Self { q: s.quats[0], p: v3(a, 0), v: v3(a, 3), bg: v3(a, 6), ba: v3(a, 9), pci: v3(a, 12), q_ic: s.quats[1] }
    }

    /// Camera-frame position of a landmark.
    pub fn landmark_in_camera(&self, pf: &Vector3<f64>) -> Vector3<f64> {
        self.q_ic.dcm() * (self.q.dcm() * (pf - self.p) - self.pci)
    }

    /// Error x ⊖ x̂ with δθ from C(q)C(q̂)ᵀ = C(δq), δθ = 2·δq_v/δq₄.
    pub fn error_from(&self, est: &NavState) -> DVector<f64> {
        let ang = |a: &Quaternion, b: &Quaternion| {
            let d = a.multiply(&b.inverse());
            d.v() * (2.0 / d.w())
        };
        let mut e = DVector::zeros(ERR_DIM);
        let parts = [
            ang(&self.q, &est.q),
            self.p - est.p,
            self.v - est.v,
            self.bg - est.bg,
            self.ba - est.ba,
            self.pci - est.pci,
            ang(&self.q_ic, &est.q_ic),
        ];
        for (b, v) in parts.iter().enumerate() {
            e.fixed_rows_mut::<3>(3 * b).copy_from(v);
        }
        e
    }

    /// Vector used for logging: rotation vectors for the attitudes,
    /// the additive states as they are.
    pub fn log_vector(&self) -> DVector<f64> {
        let mut e = DVector::zeros(ERR_DIM);
        let parts =
            [self.q.to_rotation_vector(), self.p, self.v, self.bg, self.ba, self.pci, self.q_ic.to_rotation_vector()];
        for (b, v) in parts.iter().enumerate() {
            e.fixed_rows_mut::<3>(3 * b).copy_from(v);
        }
        e
    }

    /// One IMU period with body rate and specific force held constant.
    pub fn propagate(&self, gyro: &Vector3<f64>, accel: &Vector3<f64>, g: &Vector3<f64>, dt: f64) -> NavState {
        let w = gyro - self.bg;
        let a = self.q.dcm().transpose() * (accel - self.ba) + g;
        let mut out = *self;
        out.q = Quaternion::from_rotation_vector(&(w * dt)).multiply(&self.q).normalize();
        out.p = self.p + self.v * dt + a * (0.5 * dt * dt);
        out.v = self.v + a * dt;
        out
    }
}

/// Continuous error dynamics F (21×21) and noise input G (21×12) at the
/// nominal state for raw IMU readings.
pub fn error_jacobians(x: &NavState, gyro: &Vector3<f64>, accel: &Vector3<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut f = DMatrix::zeros(ERR_DIM, ERR_DIM);
    let mut g = DMatrix::zeros(ERR_DIM, 12);
    let i3 = Matrix3::identity();
    let ct = x.q.dcm().transpose();
    let w = gyro - x.bg;
    let s = accel - x.ba;
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&w)));
    f.fixed_view_mut::<3, 3>(0, 9).copy_from(&(-i3));
    f.fixed_view_mut::<3, 3>(3, 6).copy_from(&i3);
    f.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-ct * skew(&s)));
    f.fixed_view_mut::<3, 3>(6, 12).copy_from(&(-ct));
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-i3));
    g.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-ct));
    g.fixed_view_mut::<3, 3>(9, 6).copy_from(&i3);
    g.fixed_view_mut::<3, 3>(12, 9).copy_from(&i3);
    (f, g)
}

/// Pixel Jacobian (2×21) of one landmark with respect to the error state.
pub fn feature_jacobian(x: &NavState, cam: &PinholeCamera, pf: &Vector3<f64>) -> DMatrix<f64> {
    let c_wi = x.q.dcm();
    let c_ic = x.q_ic.dcm();
    let r_i = c_wi * (pf - x.p);
    let pc = c_ic * (r_i - x.pci);
    let jp = cam.jacobian(&pc);
    let mut d = DMatrix::<f64>::zeros(3, ERR_DIM);
    d.fixed_view_mut::<3, 3>(0, 0).copy_from(&(c_ic * skew(&r_i)));
    d.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-c_ic * c_wi));
    d.fixed_view_mut::<3, 3>(0, 15).copy_from(&(-c_ic));
    let alpha = skew(&(c_ic * (r_i - x.pci)));
    d.fixed_view_mut::<3, 3>(0, 18).copy_from(&alpha);
    let jp = DMatrix::from_fn(2, 3, |i, j| jp[(i, j)]);
    jp * d
}

/// Stacked residual, Jacobian and noise for the landmarks seen in a frame.
///
/// Landmarks predicted behind the camera are skipped.
pub fn measurement_stack(
    x: &NavState,
    p: &ImuCamParams,
    seen: &[(usize, Vector2<f64>)],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>, usize)> {
    let cam = p.camera();
    let marks = p.landmarks();
    let rows: Vec<_> = seen
        .iter()
        .filter_map(|(i, px)| {
            let pc = x.landmark_in_camera(&marks[*i]);
            (pc[2] > 1e-3).then(|| (feature_jacobian(x, &cam, &marks[*i]), px - cam.project_unchecked(&pc)))
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::NoVisibleFeatures);
    }
    let m = 2 * rows.len();
    let mut h = DMatrix::zeros(m, ERR_DIM);
    let mut r = DVector::zeros(m);
    for (j, (hj, rj)) in rows.iter().enumerate() {
        h.rows_mut(2 * j, 2).copy_from(hj);
        r[2 * j] = rj[0];
        r[2 * j + 1] = rj[1];
    }
    let rc = DMatrix::identity(m, m) * (p.pixel_sigma * p.pixel_sigma);
    Ok((h, rc, r, rows.len()))
}

/// Simulated truth and sensor streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuCamData {
    /// Truth at IMU steps 0..=steps.
    pub truth: Vec<NavState>,
    /// Readings applied over step k → k+1.
    pub gyro: Vec<Vector3<f64>>,
    pub accel: Vec<Vector3<f64>>,
    /// Noisy pixels of visible landmarks at step k, on camera epochs.
    pub frames: Vec<Option<Vec<(usize, Vector2<f64>)>>>,
    pub init: NavState,
}

/// Body rate (IMU frame) and world acceleration of the reference motion.
///
/// Position follows p₀ + A·(cos g₁t − cos g₂t) per axis, so the motion
/// starts at rest at p₀.
pub fn reference_motion(p: &ImuCamParams, t: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (f1, f2) = (0.5, 0.5 * 2f64.sqrt());
    let axis = [1.0, 1.13, 0.87];
    let phase = [0.0, 1.1, 2.3];
    let a = p.rotation_amplitude;
    let w = Vector3::from_fn(|i, _| {
        let (g1, g2) = (f1 * axis[i], f2 * axis[i]);
        a * (g1 * (g1 * t + phase[i]).sin() + 0.5 * g2 * (g2 * t + 2.0 * phase[i]).sin())
    });
    let (h1, h2) = (0.6, 0.6 * 3f64.sqrt());
    let acc = Vector3::from_fn(|i, _| {
        let (g1, g2) = (h1 * axis[2 - i], h2 * axis[2 - i]);
        -p.translation_amplitude[i] * (g1 * g1 * (g1 * t).cos() - g2 * g2 * (g2 * t).cos())
    });
    (w, acc)
}

/// Initial truth: camera at the standoff looking at the markers.
pub fn initial_truth(p: &ImuCamParams) -> NavState {
    // camera x = world x, camera y = −world z, camera z = world y
    let c_wc = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    let q_ic = Quaternion::from_rotation_vector(&Vector3::from_column_slice(&p.cam_rotation_truth));
    let c_wi = q_ic.dcm().transpose() * c_wc;
    let pci = Vector3::from_column_slice(&p.lever_truth);
    let cam = Vector3::new(0.0, -p.standoff, 0.0);
    NavState {
        q: Quaternion::from_dcm(&c_wi),
        p: cam - c_wi.transpose() * pci,
        v: Vector3::zeros(),
        bg: Vector3::zeros(),
        ba: Vector3::zeros(),
        pci,
        q_ic,
    }
}

/// Simulates one run: truth, IMU and camera streams, and the initial
/// estimate drawn from the initial error distribution.
pub fn imu_cam_truth(p: &ImuCamParams, seed: u64) -> ImuCamData {
    let mut init_rng = rng::stream(seed, rng::STREAM_INIT);
    let mut meas_rng = rng::stream(seed, rng::STREAM_MEAS);
    let mut proc_rng = rng::stream(seed, rng::STREAM_PROCESS);
    let dt = p.dt();
    let g = p.gravity_vector();
    let sigma0 = p.sigma0();
    let draw = |r: &mut rng::RunRng, s: f64| Vector3::from_fn(|_, _| s * normal(r));

    let mut x = initial_truth(p);
    x.bg = draw(&mut init_rng, p.sigma_gyro_bias);
    x.ba = draw(&mut init_rng, p.sigma_accel_bias);
    let dx0 = DVector::from_fn(ERR_DIM, |i, _| sigma0[i] * normal(&mut init_rng));
    let init = perturb(&x, &(-dx0));

    let steps = p.steps();
    let per = p.steps_per_frame();
    let cam = p.camera();
    let marks = p.landmarks();
    let mut data = ImuCamData {
        truth: Vec::with_capacity(steps + 1),
        gyro: Vec::with_capacity(steps),
        accel: Vec::with_capacity(steps),
        frames: Vec::with_capacity(steps + 1),
        init,
    };
    data.truth.push(x);
    data.frames.push(None);
    let (sg, sa) = (p.gyro_noise / dt.sqrt(), p.accel_noise / dt.sqrt());
    let (wg, wa) = (p.gyro_walk * dt.sqrt(), p.accel_walk * dt.sqrt());
    for k in 0..steps {
        let tm = (k as f64 + 0.5) * dt;
        let (w, a) = reference_motion(p, tm);
        let gyro = w + x.bg + draw(&mut proc_rng, sg);
        let accel = x.q.dcm() * (a - g) + x.ba + draw(&mut proc_rng, sa);
        let mut next = x;
        next.q = Quaternion::from_rotation_vector(&(w * dt)).multiply(&x.q).normalize();
        next.p = x.p + x.v * dt + a * (0.5 * dt * dt);
        next.v = x.v + a * dt;
        next.bg = x.bg + draw(&mut proc_rng, wg);
        next.ba = x.ba + draw(&mut proc_rng, wa);
        x = next;
        data.gyro.push(gyro);
        data.accel.push(accel);
        data.truth.push(x);
        if (k + 1) % per == 0 {
            let seen = marks
                .iter()
                .enumerate()
                .filter_map(|(i, pf)| {
                    let noise = Vector2::new(normal(&mut meas_rng), normal(&mut meas_rng)) * p.pixel_sigma;
                    cam.project(&x.landmark_in_camera(pf)).map(|u| (i, u + noise))
                })
                .collect();
            data.frames.push(Some(seen));
        } else {
            data.frames.push(None);
        }
    }
    data
}

/// x̂ ⊕ δx: multiplicative on attitudes, additive elsewhere.
pub fn perturb(x: &NavState, dx: &DVector<f64>) -> NavState {
    let mut m = x.to_mekf(Covariance::Full(DMatrix::zeros(ERR_DIM, ERR_DIM))).expect("fixed layout");
    m.inject(dx);
    NavState::from_mekf(&m)
}

fn propagate_cov(cov: &Covariance, phi: &DMatrix<f64>, g: &DMatrix<f64>, qd: &DMatrix<f64>) -> Result<Covariance> {
    Ok(match cov {
        Covariance::Full(p) => {
            let p = phi * p * phi.transpose() + g * qd * g.transpose();
            Covariance::Full(crate::factor::symmetrize(&p))
        }
        Covariance::Sqrt(s) => Covariance::Sqrt(sr_propagate(s, phi, &process_noise_factor_t(g, qd)?)),
        Covariance::Ud(ud) => Covariance::Ud(ud_propagate(ud, phi, g, qd)?),
    })
}

/// Runs the filter over one simulated data set.
///
/// `ekf` applies the full MEKF correction, `schmidt` fully updates the
/// attitude, position and velocity and considers the remaining states;
/// `mekf-pu` uses the UD covariance with the configured block weights.
pub fn run_imu_cam(p: &ImuCamParams, variant: Variant, weights: &WeightSpec, seed: u64) -> Result<RunRecord> {
    let beta: Vec<f64> = match variant {
        Variant::Ekf => vec![1.0; ERR_DIM],
        Variant::Schmidt => (0..ERR_DIM).map(|i| if i < 9 { 1.0 } else { 0.0 }).collect(),
        _ => {
            let pol = weights.policy(&p.beta_full(), p.sigma0().as_slice(), None)?;
            match pol.mode {
                WeightMode::Static(b) => b.iter().copied().collect(),
                _ => return Err(Error::Config("imu-cam supports static weights only".into())),
            }
        }
    };
    let w = UpdateWeights::from_slice(&beta)?;
    let data = imu_cam_truth(p, seed);
    run_imu_cam_on(p, &data, variant, &w, seed)
}

/// Filter loop on a given data set; exposed so several variants can share
/// one simulation.
pub fn run_imu_cam_on(
    p: &ImuCamParams,
    data: &ImuCamData,
    variant: Variant,
    w: &UpdateWeights,
    seed: u64,
) -> Result<RunRecord> {
    let dt = p.dt();
    let g = p.gravity_vector();
    let qd = p.qc() * dt;
    let eye = DMatrix::<f64>::identity(ERR_DIM, ERR_DIM);
    let mut state = data.init.to_mekf(variant.form().to_cov(&p.p0())?)?;
    let mut rec = RunRecord::new(variant.name(), seed, p.sigma0());
    let beta_log = w.beta().clone();
    let log = |rec: &mut RunRecord, t: f64, truth: &NavState, s: &MekfState, gate: Option<usize>| {
        let nav = NavState::from_mekf(s);
        let tv = truth.log_vector();
        let est = &tv - truth.error_from(&nav);
        let cov = s.cov.to_full();
        let sig = cov.diagonal().map(|v| v.max(0.0).sqrt());
        let cond_factor = match &s.cov {
            Covariance::Sqrt(f) => crate::factor::condition_number(f),
            Covariance::Ud(f) => {
                let mut m = f.u.clone();
                for j in 0..m.ncols() {
                    m.column_mut(j).scale_mut(f.d[j].max(0.0).sqrt());
                }
                crate::factor::condition_number(&m)
            }
            Covariance::Full(_) => f64::NAN,
        };
        let cond_full = crate::factor::condition_number(&cov);
        let cond_factor = if cond_factor.is_nan() { cond_full } else { cond_factor };
        rec.push(t, tv, est, sig, beta_log.clone(), cond_full, cond_factor, gate);
    };
    log(&mut rec, 0.0, &data.truth[0], &state, None);
    for k in 0..data.gyro.len() {
        let step = (|| -> Result<Option<usize>> {
            let nav = NavState::from_mekf(&state);
            let (f, gm) = error_jacobians(&nav, &data.gyro[k], &data.accel[k]);
            let phi = &eye + f * dt;
            state.cov = propagate_cov(&state.cov, &phi, &gm, &qd)?;
            let next = nav.propagate(&data.gyro[k], &data.accel[k], &g, dt);
            let cov = std::mem::replace(&mut state.cov, Covariance::Full(DMatrix::zeros(0, 0)));
            state = next.to_mekf(cov)?;
            if state.additive.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState);
            }
            let Some(seen) = &data.frames[k + 1] else { return Ok(None) };
            if seen.is_empty() {
                return Ok(Some(0));
            }
            let (h, r, resid, used) = measurement_stack(&next, p, seen)?;
            state = pu_mekf_update(&state, &h, &r, &resid, w)?;
            Ok(Some(used))
        })();
        match step {
            Ok(None) => {}
            Ok(gate) => log(&mut rec, (k + 1) as f64 * dt, &data.truth[k + 1], &state, gate),
            Err(e) => {
                rec.failure = Some(e.to_string());
                break;
            }
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = ImuCamParams::default().camera();
        let u = cam.project(&Vector3::new(0.0, 0.0, 2.5)).unwrap();
        assert_eq!(u, Vector2::new(320.0, 240.0));
        assert!(cam.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn all_markers_visible_at_start() {
        let p = ImuCamParams::default();
        let x = initial_truth(&p);
        let cam = p.camera();
        for f in p.landmarks() {
            let pc = x.landmark_in_camera(&f);
            assert!(cam.project(&pc).is_some(), "{f} -> {pc} -> {}", cam.project_unchecked(&pc));
        }
    }

    #[test]
    fn at_rest_state_is_constant() {
        let p = ImuCamParams::default();
        let x = initial_truth(&p);
        let accel = x.q.dcm() * (-p.gravity_vector());
        let mut y = x;
        for _ in 0..100 {
            y = y.propagate(&Vector3::zeros(), &accel, &p.gravity_vector(), 0.01);
        }
        assert_relative_eq!(y.v, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(y.q.0, x.q.0, epsilon = 1e-15);
    }

    #[test]
    fn noise_free_imu_reproduces_truth() {
        let p = ImuCamParams {
            duration: 5.0,
            gyro_noise: 0.0,
            accel_noise: 0.0,
            gyro_walk: 0.0,
            accel_walk: 0.0,
            ..ImuCamParams::default()
        };
        let d = imu_cam_truth(&p, 1);
        let mut x = d.truth[0];
        for k in 0..d.gyro.len() {
            x = x.propagate(&d.gyro[k], &d.accel[k], &p.gravity_vector(), p.dt());
        }
        let e = d.truth.last().unwrap().error_from(&x);
        assert!(e.amax() < 1e-9, "{e}");
    }

    #[test]
    fn most_landmarks_stay_in_view() {
        let p = ImuCamParams::default();
        let d = imu_cam_truth(&p, 2);
        let counts: Vec<usize> = d.frames.iter().flatten().map(|f| f.len()).collect();
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        assert!(mean >= 0.8 * 16.0, "mean visible {mean}");
    }

    #[test]
    fn error_roundtrip() {
        let x = initial_truth(&ImuCamParams::default());
        let dx = DVector::from_fn(ERR_DIM, |i, _| 1e-3 * (i as f64 - 10.0));
        let y = perturb(&x, &dx);
        assert_relative_eq!(y.error_from(&x), dx, epsilon = 1e-12);
    }
}
