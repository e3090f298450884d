//! Vertically falling body tracked by a range sensor.
//!
//! State x = [altitude (m), vertical velocity (m/s), ballistic parameter
//! (1/m)]. Drag grows with air density e^{−x₁/k_p}; the sensor sits at
//! horizontal distance d and height h₀ and measures slant range.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::NonlinearSystem;
use crate::rng::{self, normal};
use crate::scenarios::config::{format_list, Config};

/// How the initial estimate is offset from the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// truth + k·σ with the configured signs.
    Fixed,
    /// truth + k·σ with position and velocity signs drawn per run. The
    /// ballistic parameter keeps its configured sign.
    RandomSign,
    /// truth + k·σ·N(0, 1).
    Gaussian,
}

impl InitMode {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "random_sign" => Ok(Self::RandomSign),
            "gaussian" => Ok(Self::Gaussian),
            _ => Err(Error::Config(format!("falling_body.init_mode: unknown mode `{s}`"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::RandomSign => "random_sign",
            Self::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FallingBodyParams {
    pub kp: f64,
    pub g: f64,
    pub d: f64,
    pub h0: f64,
    /// Propagation step (s).
    pub dt: f64,
    /// Time between range measurements (s).
    pub meas_period: f64,
    pub duration: f64,
    /// Initial 1σ of the three states.
    pub sigma0: [f64; 3],
    /// Range noise variance (m²).
    pub r: f64,
    /// Initial truth, an illustrative choice.
    pub x0_truth: [f64; 3],
    /// Offset of the initial estimate in multiples of σ₀.
    pub init_offset: f64,
    pub init_signs: [f64; 3],
    pub init_mode: InitMode,
    /// Static update weights used by the partial-update filters.
    pub beta: [f64; 3],
    /// States whose weights the dynamic methods adapt.
    pub dynamic_states: [bool; 3],
}

impl Default for FallingBodyParams {
    fn default() -> Self {
        Self {
            kp: 6100.0,
            g: 9.81,
            d: 30000.0,
            h0: 30000.0,
            dt: 0.1,
            meas_period: 1.0,
            duration: 30.0,
            sigma0: [300.0, 600.0, 0.33],
            r: 300.0,
            x0_truth: [91440.0, -6096.0, 0.0033],
            init_offset: 1.0,
            init_signs: [1.0, 1.0, 1.0],
            init_mode: InitMode::RandomSign,
            beta: [0.9, 0.9, 0.75],
            dynamic_states: [false, false, true],
        }
    }
}

const KEYS: &[&str] = &[
    "kp", "g", "d", "h0", "dt", "meas_period", "duration", "sigma0_position", "sigma0_velocity",
    "sigma0_ballistic", "r", "x0_truth", "init_offset", "init_signs", "init_mode", "beta",
    "dynamic_states",
];

fn arr3(v: Vec<f64>, key: &str) -> Result<[f64; 3]> {
    v.try_into().map_err(|_| Error::Config(format!("falling_body.{key}: expected 3 values")))
}

impl FallingBodyParams {
    pub fn from_config(c: &Config) -> Result<Self> {
        c.check_known("falling_body.", KEYS)?;
        let d = Self::default();
        let k = |s: &str| format!("falling_body.{s}");
        let p = Self {
            kp: c.f64_or(&k("kp"), d.kp)?,
            g: c.f64_or(&k("g"), d.g)?,
            d: c.f64_or(&k("d"), d.d)?,
            h0: c.f64_or(&k("h0"), d.h0)?,
            dt: c.f64_or(&k("dt"), d.dt)?,
            meas_period: c.f64_or(&k("meas_period"), d.meas_period)?,
            duration: c.f64_or(&k("duration"), d.duration)?,
            sigma0: [
                c.f64_or(&k("sigma0_position"), d.sigma0[0])?,
                c.f64_or(&k("sigma0_velocity"), d.sigma0[1])?,
                c.f64_or(&k("sigma0_ballistic"), d.sigma0[2])?,
            ],
            r: c.f64_or(&k("r"), d.r)?,
            x0_truth: arr3(c.vec_or(&k("x0_truth"), &d.x0_truth)?, "x0_truth")?,
            init_offset: c.f64_or(&k("init_offset"), d.init_offset)?,
            init_signs: arr3(c.vec_or(&k("init_signs"), &d.init_signs)?, "init_signs")?,
            init_mode: InitMode::parse(c.str_or(&k("init_mode"), d.init_mode.name()))?,
            beta: arr3(c.vec_or(&k("beta"), &d.beta)?, "beta")?,
            dynamic_states: arr3(c.vec_or(&k("dynamic_states"), &d.dynamic_states.map(|b| b as u8 as f64))?, "dynamic_states")?
                .map(|v| v != 0.0),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.kp, self.g, self.d, self.dt, self.meas_period, self.duration, self.r];
        if pos.iter().any(|v| !(*v > 0.0)) || self.sigma0.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("falling_body: parameters must be positive".into()));
        }
        if self.beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("falling_body.beta: weights must lie in [0, 1]".into()));
        }
        if self.steps_per_meas() == 0 {
            return Err(Error::Config("falling_body: meas_period shorter than dt".into()));
        }
        Ok(())
    }

    pub fn to_config_text(&self) -> String {
        format!(
            "# Falling body tracked by a range sensor\n\
             falling_body.kp = {:?}\n\
             falling_body.g = {:?}\n\
             falling_body.d = {:?}\n\
             falling_body.h0 = {:?}\n\
             falling_body.dt = {:?}\n\
             falling_body.meas_period = {:?}\n\
             falling_body.duration = {:?}\n\
             falling_body.sigma0_position = {:?}\n\
             falling_body.sigma0_velocity = {:?}\n\
             falling_body.sigma0_ballistic = {:?}\n\
             # range noise, used as a variance (m^2)\n\
             falling_body.r = {:?}\n\
             # initial truth (illustrative)\n\
             falling_body.x0_truth = {}\n\
             # initial estimate = truth + init_offset * sigma0 (fixed | random_sign | gaussian)\n\
             falling_body.init_offset = {:?}\n\
             falling_body.init_signs = {}\n\
             falling_body.init_mode = {}\n\
             falling_body.beta = {}\n\
             # 1 marks states adapted by dnl/dc weights\n\
             falling_body.dynamic_states = {}\n",
            self.kp,
            self.g,
            self.d,
            self.h0,
            self.dt,
            self.meas_period,
            self.duration,
            self.sigma0[0],
            self.sigma0[1],
            self.sigma0[2],
            self.r,
            format_list(&self.x0_truth),
            self.init_offset,
            format_list(&self.init_signs),
            self.init_mode.name(),
            format_list(&self.beta),
            format_list(&self.dynamic_states.map(|b| b as u8 as f64)),
        )
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn steps_per_meas(&self) -> usize {
        (self.meas_period / self.dt).round() as usize
    }

    pub fn p0(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(3, self.sigma0.iter().map(|s| s * s)))
    }

    pub fn model(&self) -> FallingBody {
        FallingBody { p: self.clone() }
    }
}

/// Discrete falling-body model.
#[derive(Debug, Clone)]
pub struct FallingBody {
    pub p: FallingBodyParams,
}

impl NonlinearSystem for FallingBody {
    fn state_dim(&self) -> usize {
        3
    }

    fn meas_dim(&self) -> usize {
        1
    }

    fn f(&self, x: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> DVector<f64> {
        let dt = self.p.dt;
        let e = (-x[0] / self.p.kp).exp();
        DVector::from_column_slice(&[
            x[0] + x[1] * dt,
            x[1] + (e * x[1] * x[1] * x[2] - self.p.g) * dt,
            x[2],
        ])
    }

    fn f_jacobian(&self, x: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> DMatrix<f64> {
        let (dt, kp) = (self.p.dt, self.p.kp);
        let e = (-x[0] / kp).exp();
        DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0,
                dt,
                0.0,
                -e / kp * x[1] * x[1] * x[2] * dt,
                1.0 + 2.0 * e * x[1] * x[2] * dt,
                e * x[1] * x[1] * dt,
                0.0,
                0.0,
                1.0,
            ],
        )
    }

    fn h(&self, x: &DVector<f64>, _k: usize) -> DVector<f64> {
        let dz = x[0] - self.p.h0;
        DVector::from_element(1, (self.p.d * self.p.d + dz * dz).sqrt())
    }

    fn h_jacobian(&self, x: &DVector<f64>, k: usize) -> DMatrix<f64> {
        let r = self.h(x, k)[0];
        DMatrix::from_row_slice(1, 3, &[(x[0] - self.p.h0) / r, 0.0, 0.0])
    }

    fn g(&self) -> DMatrix<f64> {
        DMatrix::identity(3, 3)
    }

    fn q(&self) -> DMatrix<f64> {
        DMatrix::zeros(3, 3)
    }

    fn r(&self) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.p.r)
    }

    fn f_hessians(&self, x: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> Option<Vec<DMatrix<f64>>> {
        let (dt, kp) = (self.p.dt, self.p.kp);
        let e = (-x[0] / kp).exp();
        let (v, b) = (x[1], x[2]);
        let h2 = DMatrix::from_row_slice(
            3,
            3,
            &[
                e / (kp * kp) * v * v * b * dt,
                -2.0 * e / kp * v * b * dt,
                -e / kp * v * v * dt,
                -2.0 * e / kp * v * b * dt,
                2.0 * e * b * dt,
                2.0 * e * v * dt,
                -e / kp * v * v * dt,
                2.0 * e * v * dt,
                0.0,
            ],
        );
        Some(vec![DMatrix::zeros(3, 3), h2, DMatrix::zeros(3, 3)])
    }

    fn h_hessians(&self, x: &DVector<f64>, k: usize) -> Option<Vec<DMatrix<f64>>> {
        let r = self.h(x, k)[0];
        let mut h = DMatrix::zeros(3, 3);
        h[(0, 0)] = self.p.d * self.p.d / (r * r * r);
        Some(vec![h])
    }
}

/// Truth trajectory, measurements and initial estimate of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct FallingBodyData {
    /// Time of step k (index 0 is t = 0).
    pub times: Vec<f64>,
    pub truth: Vec<DVector<f64>>,
    /// Range measurement available after step k, if any.
    pub meas: Vec<Option<DVector<f64>>>,
    pub x0_est: DVector<f64>,
    pub p0: DMatrix<f64>,
}

/// Simulates truth and measurements for `seed`.
pub fn falling_body_truth(p: &FallingBodyParams, seed: u64) -> FallingBodyData {
    let sys = p.model();
    let none = DVector::zeros(0);
    let mut init = rng::stream(seed, rng::STREAM_INIT);
    let mut meas_rng = rng::stream(seed, rng::STREAM_MEAS);
    let x0 = DVector::from_column_slice(&p.x0_truth);
    let offsets: Vec<f64> = (0..3)
        .map(|i| match p.init_mode {
            InitMode::Fixed => p.init_signs[i],
            InitMode::RandomSign if i == 2 => p.init_signs[i],
            InitMode::RandomSign => {
                if normal(&mut init) < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            InitMode::Gaussian => normal(&mut init),
        })
        .collect();
    let x0_est = DVector::from_fn(3, |i, _| x0[i] + p.init_offset * offsets[i] * p.sigma0[i]);
    let steps = p.steps();
    let per = p.steps_per_meas();
    let mut times = Vec::with_capacity(steps + 1);
    let mut truth = Vec::with_capacity(steps + 1);
    let mut meas = Vec::with_capacity(steps + 1);
    times.push(0.0);
    truth.push(x0.clone());
    meas.push(None);
    let mut x = x0;
    for k in 1..=steps {
        x = sys.f(&x, &none, k);
        times.push(k as f64 * p.dt);
        if k % per == 0 {
            let y = sys.h(&x, k)[0] + p.r.sqrt() * normal(&mut meas_rng);
            meas.push(Some(DVector::from_element(1, y)));
        } else {
            meas.push(None);
        }
        truth.push(x.clone());
    }
    FallingBodyData { times, truth, meas, x0_est, p0: p.p0() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn drag_free_velocity_drop() {
        let p = FallingBodyParams::default();
        let sys = p.model();
        let x = DVector::from_column_slice(&[50000.0, -1000.0, 0.0]);
        let xn = sys.f(&x, &DVector::zeros(0), 0);
        assert_relative_eq!(xn[1], -1000.0 - 9.81 * 0.1, epsilon = 1e-12);
    }

    #[test]
    fn range_at_sensor_height() {
        let sys = FallingBodyParams::default().model();
        let x = DVector::from_column_slice(&[30000.0, 0.0, 0.0]);
        assert_eq!(sys.h(&x, 0)[0], 30000.0);
    }

    #[test]
    fn deterministic_streams() {
        let p = FallingBodyParams::default();
        assert_eq!(falling_body_truth(&p, 3), falling_body_truth(&p, 3));
        assert_ne!(falling_body_truth(&p, 3).meas, falling_body_truth(&p, 4).meas);
    }

    #[test]
    fn config_roundtrip() {
        let p = FallingBodyParams { init_offset: 2.0, ..Default::default() };
        let c = Config::parse(&p.to_config_text()).unwrap();
        assert_eq!(FallingBodyParams::from_config(&c).unwrap(), p);
    }
}
