//! Angular-rate estimation of a tumbling body from tracked 3-D features.
//!
//! State: N body vectors (feature positions relative to a body-fixed
//! origin, resolved in the camera frame) followed by the body rate ω.
//! The filter propagates with the first-order rotation (I + [ω×]Δt); the
//! simulated truth rotates exactly. Features facing away from the camera
//! (positive z) are not observed.
//!
//! A run starts with a coarse rate estimate from frame-to-frame rigid
//! alignment over the first seconds, then filters, dropping occluded or
//! uncertain features and re-initializing the feature set when too few
//! remain or on a fixed frame period.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3, SVD};

use crate::engine::Estimator;
use crate::error::{Error, Result};
use crate::filter::{chi2_gate, NonlinearSystem, UpdateWeights, CHI2_99};
use crate::harness::{RunRecord, Variant, WeightSpec};
use crate::mekf::skew;
use crate::rng::{self, normal};
use crate::scenarios::config::{format_list, Config};
use crate::weights::WeightMode;

#[derive(Debug, Clone, PartialEq)]
pub struct TumblerParams {
    /// Maximum number of tracked features.
    pub features: usize,
    /// Size of the body's feature pool the tracker can pick from.
    pub pool: usize,
    /// Radius of the feature cloud (m).
    pub radius: f64,
    pub omega_true: [f64; 3],
    pub frame_rate: f64,
    /// Filter measurement noise variance per axis (m²).
    pub r_f: f64,
    /// Simulated measurement noise 1σ (m).
    pub noise_sigma: f64,
    /// Length of the coarse initialization window (s).
    pub init_window: f64,
    /// Filtering time after initialization (s).
    pub duration: f64,
    /// Re-initialize below this many tracked features.
    pub reinit_threshold: usize,
    /// Forced re-initialization period in frames; 0 disables it.
    pub reinit_every: usize,
    /// Drop a feature when its position variance exceeds this multiple of
    /// the initial one.
    pub drop_factor: f64,
    /// Initial variance of a new feature position (m²).
    pub feature_init_var: f64,
    /// Weights for feature positions and for the rates.
    pub beta_features: f64,
    pub beta_rates: f64,
}

impl Default for TumblerParams {
    fn default() -> Self {
        Self {
            features: 12,
            pool: 48,
            radius: 0.2,
            omega_true: [0.0, 0.035, 0.0],
            frame_rate: 30.0,
            r_f: 0.005,
            noise_sigma: 0.005,
            init_window: 3.0,
            duration: 30.0,
            reinit_threshold: 6,
            reinit_every: 0,
            drop_factor: 10.0,
            feature_init_var: 0.005,
            beta_features: 1.0,
            beta_rates: 0.05,
        }
    }
}

const KEYS: &[&str] = &[
    "features", "pool", "radius", "omega_true", "frame_rate", "r_f", "noise_sigma", "init_window", "duration",
    "reinit_threshold", "reinit_every", "drop_factor", "feature_init_var", "beta_features", "beta_rates",
];

impl TumblerParams {
    pub fn from_config(c: &Config) -> Result<Self> {
        c.check_known("tumbler.", KEYS)?;
        let d = Self::default();
        let k = |s: &str| format!("tumbler.{s}");
        let omega = c.vec_or(&k("omega_true"), &d.omega_true)?;
        let p = Self {
            features: c.usize_or(&k("features"), d.features)?,
            pool: c.usize_or(&k("pool"), d.pool)?,
            radius: c.f64_or(&k("radius"), d.radius)?,
            omega_true: omega.try_into().map_err(|_| Error::Config("tumbler.omega_true: expected 3 values".into()))?,
            frame_rate: c.f64_or(&k("frame_rate"), d.frame_rate)?,
            r_f: c.f64_or(&k("r_f"), d.r_f)?,
            noise_sigma: c.f64_or(&k("noise_sigma"), d.noise_sigma)?,
            init_window: c.f64_or(&k("init_window"), d.init_window)?,
            duration: c.f64_or(&k("duration"), d.duration)?,
            reinit_threshold: c.usize_or(&k("reinit_threshold"), d.reinit_threshold)?,
            reinit_every: c.usize_or(&k("reinit_every"), d.reinit_every)?,
            drop_factor: c.f64_or(&k("drop_factor"), d.drop_factor)?,
            feature_init_var: c.f64_or(&k("feature_init_var"), d.feature_init_var)?,
            beta_features: c.f64_or(&k("beta_features"), d.beta_features)?,
            beta_rates: c.f64_or(&k("beta_rates"), d.beta_rates)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features < 3 || self.pool < self.features {
            return Err(Error::Config("tumbler: need features >= 3 and pool >= features".into()));
        }
        let pos = [self.radius, self.frame_rate, self.r_f, self.init_window, self.duration, self.feature_init_var];
        if pos.iter().any(|v| !(*v > 0.0)) || self.noise_sigma < 0.0 || self.drop_factor <= 1.0 {
            return Err(Error::Config("tumbler: rates, noise and sizes must be positive".into()));
        }
        if self.reinit_threshold < 3 || self.reinit_threshold > self.features {
            return Err(Error::Config("tumbler.reinit_threshold must lie in [3, features]".into()));
        }
        if ![self.beta_features, self.beta_rates].iter().all(|b| (0.0..=1.0).contains(b)) {
            return Err(Error::Config("tumbler: weights must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_config_text(&self) -> String {
        format!(
            "# Tumbling body observed by a depth camera\n\
             tumbler.features = {}\n\
             tumbler.pool = {}\n\
             tumbler.radius = {:?}\n\
             tumbler.omega_true = {}\n\
             tumbler.frame_rate = {:?}\n\
             # filter measurement variance per axis (m^2)\n\
             tumbler.r_f = {:?}\n\
             # simulated measurement noise 1-sigma (m)\n\
             tumbler.noise_sigma = {:?}\n\
             tumbler.init_window = {:?}\n\
             tumbler.duration = {:?}\n\
             tumbler.reinit_threshold = {}\n\
             # forced re-initialization period in frames, 0 = off\n\
             tumbler.reinit_every = {}\n\
             tumbler.drop_factor = {:?}\n\
             tumbler.feature_init_var = {:?}\n\
             tumbler.beta_features = {:?}\n\
             tumbler.beta_rates = {:?}\n",
            self.features,
            self.pool,
            self.radius,
            format_list(&self.omega_true),
            self.frame_rate,
            self.r_f,
            self.noise_sigma,
            self.init_window,
            self.duration,
            self.reinit_threshold,
            self.reinit_every,
            self.drop_factor,
            self.feature_init_var,
            self.beta_features,
            self.beta_rates,
        )
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn weights(&self, n: usize) -> Vec<f64> {
        let mut b = vec![self.beta_features; 3 * n];
        b.extend([self.beta_rates; 3]);
        b
    }
}

/// First-order rotation model for n features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TumblerModel {
    pub n: usize,
    pub dt: f64,
    pub r_f: f64,
}

impl TumblerModel {
    fn omega(&self, x: &DVector<f64>) -> Vector3<f64> {
        Vector3::new(x[3 * self.n], x[3 * self.n + 1], x[3 * self.n + 2])
    }
}

impl NonlinearSystem for TumblerModel {
    fn state_dim(&self) -> usize {
        3 * self.n + 3
    }
    fn meas_dim(&self) -> usize {
        3 * self.n
    }
    fn f(&self, x: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> DVector<f64> {
        let a = Matrix3::identity() + skew(&self.omega(x)) * self.dt;
        let mut out = x.clone();
        for i in 0..self.n {
            let p = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
            out.fixed_rows_mut::<3>(3 * i).copy_from(&(a * p));
        }
        out
    }
    fn f_jacobian(&self, x: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> DMatrix<f64> {
        let nx = self.state_dim();
        let a = Matrix3::identity() + skew(&self.omega(x)) * self.dt;
        let mut f = DMatrix::identity(nx, nx);
        for i in 0..self.n {
            let p = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
            f.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(&a);
            f.fixed_view_mut::<3, 3>(3 * i, 3 * self.n).copy_from(&(-skew(&p) * self.dt));
        }
        f
    }
    fn h(&self, x: &DVector<f64>, _k: usize) -> DVector<f64> {
        x.rows(0, 3 * self.n).into_owned()
    }
    fn h_jacobian(&self, _x: &DVector<f64>, _k: usize) -> DMatrix<f64> {
        DMatrix::identity(3 * self.n, 3 * self.n + 3)
    }
    fn g(&self) -> DMatrix<f64> {
        DMatrix::identity(self.state_dim(), self.state_dim())
    }
    fn q(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.state_dim(), self.state_dim())
    }
    fn r(&self) -> DMatrix<f64> {
        DMatrix::identity(3 * self.n, 3 * self.n) * self.r_f
    }
    /// f is bilinear: each position component couples one position and
    /// one rate with coefficient ±Δt.
    fn f_hessians(&self, _x: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> Option<Vec<DMatrix<f64>>> {
        let nx = self.state_dim();
        let w0 = 3 * self.n;
        let mut out = vec![DMatrix::zeros(nx, nx); nx];
        for i in 0..self.n {
            for r in 0..3 {
                // row r of [ω×]p = ω × p, linear in ω and p
                for a in 0..3 {
                    for b in 0..3 {
                        let mut e = Vector3::zeros();
                        e[a] = 1.0;
                        let mut q = Vector3::zeros();
                        q[b] = 1.0;
                        let c = e.cross(&q)[r] * self.dt;
                        if c != 0.0 {
                            out[3 * i + r][(w0 + a, 3 * i + b)] = c;
                            out[3 * i + r][(3 * i + b, w0 + a)] = c;
                        }
                    }
                }
            }
        }
        Some(out)
    }
    fn h_hessians(&self, _x: &DVector<f64>, _k: usize) -> Option<Vec<DMatrix<f64>>> {
        let nx = self.state_dim();
        Some(vec![DMatrix::zeros(nx, nx); 3 * self.n])
    }
}

/// Least-squares proper rotation and translation with R·pᵢ + t ≈ qᵢ.
pub fn svd_rigid_align(p: &[Vector3<f64>], q: &[Vector3<f64>]) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    if p.len() != q.len() || p.len() < 3 {
        return Err(Error::DegenerateCloud);
    }
    let n = p.len() as f64;
    let pc = p.iter().sum::<Vector3<f64>>() / n;
    let qc = q.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += (a - pc) * (b - qc).transpose();
    }
    let spread = |c: &[Vector3<f64>], m: &Vector3<f64>| {
        let mut s = Matrix3::zeros();
        for v in c {
            s += (v - m) * (v - m).transpose();
        }
        SVD::new(s, false, false).singular_values
    };
    for sv in [spread(p, &pc), spread(q, &qc)] {
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        if !(sv[1] > 1e-12 * sv[0].max(f64::MIN_POSITIVE)) || sv[0] <= 0.0 {
            return Err(Error::DegenerateCloud);
        }
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u.ok_or(Error::DegenerateCloud)?;
    let vt = svd.v_t.ok_or(Error::DegenerateCloud)?;
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Ok((r, qc - r * pc))
}

/// Roll, pitch, yaw of R = R_z(ψ)·R_y(θ)·R_x(φ), returned as (φ, θ, ψ).
pub fn euler_321(r: &Matrix3<f64>) -> Vector3<f64> {
    let theta = -r[(2, 0)].clamp(-1.0, 1.0).asin();
    let phi = r[(2, 1)].atan2(r[(2, 2)]);
    let psi = r[(1, 0)].atan2(r[(0, 0)]);
    Vector3::new(phi, theta, psi)
}

/// Coarse rate from consecutive frames of feature measurements.
///
/// `frames[k][j]` is feature j in frame k, if seen. Each consecutive pair
/// with at least three common features is aligned; its 3-2-1 angle
/// increments over Δt give one rate sample. Returns the sample mean and
/// the (n−1)-normalized sample σ (zero with a single sample).
pub fn coarse_rate_init(frames: &[Vec<Option<Vector3<f64>>>], dt: f64) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if frames.len() < 2 {
        return Err(Error::Config("coarse rate initialization needs at least two frames".into()));
    }
    let mut samples = Vec::new();
    for w in frames.windows(2) {
        let (a, b): (Vec<_>, Vec<_>) =
            w[0].iter().zip(&w[1]).filter_map(|(x, y)| Some((((*x)?), ((*y)?)))).unzip();
        if a.len() < 3 {
            continue;
        }
        let (r, _) = svd_rigid_align(&a, &b)?;
        samples.push(euler_321(&r) / dt);
    }
    if samples.is_empty() {
        return Err(Error::DegenerateCloud);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Vector3<f64>>() / n;
    let sigma = if samples.len() > 1 {
        (samples.iter().map(|s| (s - mean).component_mul(&(s - mean))).sum::<Vector3<f64>>() / (n - 1.0)).map(f64::sqrt)
    } else {
        Vector3::zeros()
    };
    Ok((mean, sigma))
}

/// Replaces the feature block: keeps ω and its 3×3 covariance, zeroes the
/// cross terms and gives every new feature variance `var` per axis.
pub fn tumbler_reinit(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    new_features: &[Vector3<f64>],
    var: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n_old = (x.len() - 3) / 3;
    let n = new_features.len();
    let mut xn = DVector::zeros(3 * n + 3);
    for (i, f) in new_features.iter().enumerate() {
        xn.fixed_rows_mut::<3>(3 * i).copy_from(f);
    }
    xn.fixed_rows_mut::<3>(3 * n).copy_from(&x.fixed_rows::<3>(3 * n_old));
    let mut pn = DMatrix::identity(3 * n + 3, 3 * n + 3) * var;
    pn.view_mut((3 * n, 3 * n), (3, 3)).copy_from(&p.view((3 * n_old, 3 * n_old), (3, 3)));
    (xn, pn)
}

/// Simulated feature pool and measurement frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TumblerData {
    pub times: Vec<f64>,
    /// True body vectors of the whole pool per frame.
    pub truth: Vec<Vec<Vector3<f64>>>,
    /// Noisy measurement of every pool feature facing the camera.
    pub meas: Vec<Vec<Option<Vector3<f64>>>>,
    pub omega: Vector3<f64>,
}

pub fn tumbler_truth(p: &TumblerParams, seed: u64) -> TumblerData {
    let mut init = rng::stream(seed, rng::STREAM_INIT);
    let mut meas_rng = rng::stream(seed, rng::STREAM_MEAS);
    let mut pts: Vec<Vector3<f64>> = (0..p.pool)
        .map(|_| {
            let v = Vector3::from_fn(|_, _| normal(&mut init));
            v.normalize() * p.radius
        })
        .collect();
    let omega = Vector3::from_column_slice(&p.omega_true);
    let step = Rotation3::new(omega * p.dt()).into_inner();
    let frames = ((p.init_window + p.duration) * p.frame_rate).round() as usize + 1;
    let mut data = TumblerData { times: Vec::new(), truth: Vec::new(), meas: Vec::new(), omega };
    for k in 0..frames {
        if k > 0 {
            pts.iter_mut().for_each(|v| *v = step * *v);
        }
        let m = pts
            .iter()
            .map(|v| {
                let noise = Vector3::from_fn(|_, _| p.noise_sigma * normal(&mut meas_rng));
                (v[2] < 0.0).then(|| v + noise)
            })
            .collect();
        data.times.push(k as f64 * p.dt());
        data.truth.push(pts.clone());
        data.meas.push(m);
    }
    data
}

/// Picks up to `n` visible pool features, most camera-facing first.
fn select_features(meas: &[Option<Vector3<f64>>], n: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..meas.len()).filter(|&i| meas[i].is_some()).collect();
    ids.sort_by(|&a, &b| meas[a].unwrap()[2].total_cmp(&meas[b].unwrap()[2]).then(a.cmp(&b)));
    ids.truncate(n);
    ids
}

fn remove_states(x: &DVector<f64>, p: &DMatrix<f64>, drop: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let keep: Vec<usize> = (0..x.len()).filter(|i| !drop.contains(&(i / 3)) || *i >= x.len() - 3).collect();
    let xn = DVector::from_fn(keep.len(), |i, _| x[keep[i]]);
    let pn = DMatrix::from_fn(keep.len(), keep.len(), |i, j| p[(keep[i], keep[j])]);
    (xn, pn)
}

/// Runs the tumbler scenario. Only the rate states are logged, since the
/// feature set changes over the run.
pub fn run_tumbler(p: &TumblerParams, variant: Variant, weights: &WeightSpec, seed: u64) -> Result<RunRecord> {
    let (beta_f, beta_w) = match variant {
        Variant::Ekf => (1.0, 1.0),
        Variant::Schmidt => (1.0, 0.0),
        Variant::MekfPu => return Err(Error::Config("mekf-pu applies to the imu-cam scenario only".into())),
        _ => match weights {
            WeightSpec::Default => (p.beta_features, p.beta_rates),
            WeightSpec::Static(v) if v.len() == 2 => (v[0], v[1]),
            WeightSpec::Static(_) => {
                return Err(Error::Config("tumbler weights: give two values, features and rates".into()))
            }
            _ => {
                let pol = weights.policy(&[p.beta_features, p.beta_rates], &[1.0, 1.0], None)?;
                match pol.mode {
                    WeightMode::Static(b) => (b[0], b[1]),
                    _ => return Err(Error::Config("tumbler supports static weights only".into())),
                }
            }
        },
    };
    let data = tumbler_truth(p, seed);
    let dt = p.dt();
    let n_init = (p.init_window * p.frame_rate).round() as usize;
    let (w0, s0) = coarse_rate_init(&data.meas[..=n_init], dt)?;
    let s0 = s0.map(|s| s.max(1e-4));

    let mut ids = select_features(&data.meas[n_init], p.features);
    if ids.len() < 3 {
        return Err(Error::NoVisibleFeatures);
    }
    let feats: Vec<_> = ids.iter().map(|&i| data.meas[n_init][i].unwrap()).collect();
    let p_rate = DMatrix::from_diagonal(&DVector::from_iterator(3, s0.iter().map(|s| s * s)));
    let seed_x = DVector::from_fn(3 * feats.len() + 3, |i, _| if i >= 3 * feats.len() { w0[i - 3 * feats.len()] } else { 0.0 });
    let mut seed_p = DMatrix::zeros(seed_x.len(), seed_x.len());
    seed_p.view_mut((3 * feats.len(), 3 * feats.len()), (3, 3)).copy_from(&p_rate);
    let (x0, p0) = tumbler_reinit(&seed_x, &seed_p, &feats, p.feature_init_var);
    let mut est = Estimator::new(variant.form(), x0, &p0)?;

    let mut rec = RunRecord::new(variant.name(), seed, DVector::from_column_slice(s0.as_slice()));
    let truth_w = DVector::from_column_slice(data.omega.as_slice());
    let log = |rec: &mut RunRecord, t: f64, est: &Estimator, bw: f64, gate: Option<usize>| {
        let n = est.x.len() - 3;
        let pf = est.covariance();
        let pw = pf.view((n, n), (3, 3)).into_owned();
        let sig = pw.diagonal().map(|v| v.max(0.0).sqrt());
        let cond_full = crate::factor::condition_number(&pf);
        rec.push(
            t,
            truth_w.clone(),
            est.x.rows(n, 3).into_owned(),
            sig,
            DVector::from_element(3, bw),
            cond_full,
            est.cond_factor(),
            gate,
        );
    };
    log(&mut rec, data.times[n_init], &est, beta_w, None);
    let u = DVector::zeros(0);
    let mut since_reinit = 0usize;
    for k in (n_init + 1)..data.times.len() {
        let step = (|| -> Result<usize> {
            let n = ids.len();
            let model = TumblerModel { n, dt, r_f: p.r_f };
            est.propagate(&model, &u, k)?;
            since_reinit += 1;
            // gate each visible tracked feature
            let pf = est.covariance();
            let mut rows = Vec::new();
            let mut resid = Vec::new();
            let mut unseen = Vec::new();
            for (j, &id) in ids.iter().enumerate() {
                let Some(y) = data.meas[k][id] else {
                    unseen.push(j);
                    continue;
                };
                let r = y - est.x.fixed_rows::<3>(3 * j);
                let s = pf.view((3 * j, 3 * j), (3, 3)).into_owned() + DMatrix::identity(3, 3) * p.r_f;
                let rv = DVector::from_column_slice(r.as_slice());
                if chi2_gate(&rv, &s, CHI2_99[2])? {
                    rows.push(j);
                    resid.extend(r.iter().copied());
                }
            }
            if !rows.is_empty() {
                let m = 3 * rows.len();
                let mut h = DMatrix::zeros(m, 3 * n + 3);
                for (a, &j) in rows.iter().enumerate() {
                    h.view_mut((3 * a, 3 * j), (3, 3)).fill_with_identity();
                }
                let w = UpdateWeights::from_slice(&{
                    let mut b = vec![beta_f; 3 * n];
                    b.extend([beta_w; 3]);
                    b
                })?;
                est.update_linear(&h, &(DMatrix::identity(m, m) * p.r_f), &DVector::from_vec(resid), &w)?;
            }
            // drop occluded or uncertain features
            let pf = est.covariance();
            let mut drop = unseen;
            for j in 0..n {
                let worst = (0..3).map(|a| pf[(3 * j + a, 3 * j + a)]).fold(0.0, f64::max);
                if worst > p.drop_factor * p.feature_init_var && !drop.contains(&j) {
                    drop.push(j);
                }
            }
            if !drop.is_empty() {
                let (x, pm) = remove_states(&est.x, &pf, &drop);
                ids = ids.iter().enumerate().filter(|(j, _)| !drop.contains(j)).map(|(_, &i)| i).collect();
                est.reset(x, &pm)?;
            }
            let forced = p.reinit_every > 0 && since_reinit >= p.reinit_every;
            if ids.len() < p.reinit_threshold || forced {
                let new_ids = select_features(&data.meas[k], p.features);
                if new_ids.len() >= p.reinit_threshold {
                    let feats: Vec<_> = new_ids.iter().map(|&i| data.meas[k][i].unwrap()).collect();
                    let (x, pm) = tumbler_reinit(&est.x, &est.covariance(), &feats, p.feature_init_var);
                    est.reset(x, &pm)?;
                    ids = new_ids;
                    since_reinit = 0;
                } else if ids.len() < 3 {
                    return Err(Error::NoVisibleFeatures);
                }
            }
            Ok(rows.len())
        })();
        match step {
            Ok(g) => log(&mut rec, data.times[k], &est, beta_w, Some(g)),
            Err(e) => {
                rec.failure = Some(e.to_string());
                break;
            }
        }
    }
    Ok(rec)
}
