//! Discrete-time nonlinear bicycle model and identification of its parameters.
//!
//! The model is the backward-Euler discretisation of a single-track vehicle
//! with linear tyres. It stays well posed at `vx = 0` as long as both cornering
//! stiffnesses are negative, which is the sign convention used throughout.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::{Dual, Real};
use crate::error::{Error, Result};

pub const NX: usize = 6;
pub const NU: usize = 2;

/// Wheelbase `lf + lr` enforced during identification, m.
pub const WHEELBASE: f64 = 2.89;

/// Default sampling time, s.
pub const DEFAULT_TS: f64 = 0.05;

const DENOMINATOR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub px: f64,
    pub py: f64,
    pub phi: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl VehicleState {
    pub fn new(px: f64, py: f64, phi: f64, vx: f64, vy: f64, omega: f64) -> Self {
        Self {
            px,
            py,
            phi,
            vx,
            vy,
            omega,
        }
    }

    pub fn to_array(self) -> [f64; NX] {
        [self.px, self.py, self.phi, self.vx, self.vy, self.omega]
    }

    pub fn from_array(a: [f64; NX]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Speed over ground.
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal acceleration, m/s².
    pub a: f64,
    /// Front steering angle, rad.
    pub delta: f64,
}

impl ControlInput {
    pub fn new(a: f64, delta: f64) -> Self {
        Self { a, delta }
    }

    pub fn to_array(self) -> [f64; NU] {
        [self.a, self.delta]
    }

    pub fn from_array(a: [f64; NU]) -> Self {
        Self::new(a[0], a[1])
    }
}

/// Physical parameters of the bicycle model. Stiffnesses are negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub m_mass: f64,
    pub lf: f64,
    pub lr: f64,
    pub kf: f64,
    pub kr: f64,
    pub iz: f64,
}

impl Default for VehicleParams {
    /// Identified values of the reference vehicle.
    fn default() -> Self {
        Self {
            m_mass: 1699.98,
            lf: 1.287,
            lr: 1.603,
            kf: -102129.83,
            kr: -89999.98,
            iz: 2699.98,
        }
    }
}

impl VehicleParams {
    pub fn lk(&self) -> f64 {
        self.lf * self.kf - self.lr * self.kr
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lf > 0.0
            && self.lr > 0.0
            && self.iz > 0.0
            && self.m_mass > 0.0
            && self.kf < 0.0
            && self.kr < 0.0
            && [self.m_mass, self.lf, self.lr, self.kf, self.kr, self.iz]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "vehicle parameters out of range: {self:?}"
            )))
        }
    }

    fn generic<T: Real>(&self) -> GenericParams<T> {
        GenericParams {
            m: T::cst(self.m_mass),
            lf: T::cst(self.lf),
            lr: T::cst(self.lr),
            kf: T::cst(self.kf),
            kr: T::cst(self.kr),
            iz: T::cst(self.iz),
        }
    }
}

/// Parameter set over an arbitrary scalar so identification can differentiate
/// through the model.
#[derive(Debug, Clone, Copy)]
pub struct GenericParams<T> {
    pub m: T,
    pub lf: T,
    pub lr: T,
    pub kf: T,
    pub kr: T,
    pub iz: T,
}

/// Componentwise state and input bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: [f64; NX],
    pub x_max: [f64; NX],
    pub u_min: [f64; NU],
    pub u_max: [f64; NU],
}

impl Default for Bounds {
    fn default() -> Self {
        let inf = f64::INFINITY;
        Self {
            x_min: [-inf, -inf, -inf, 0.0, -inf, -inf],
            x_max: [inf, inf, inf, 20.0, inf, inf],
            u_min: [-6.0, -0.6],
            u_max: [3.0, 0.6],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let xs = self.x_min.iter().zip(&self.x_max).all(|(lo, hi)| lo <= hi);
        let us = self.u_min.iter().zip(&self.u_max).all(|(lo, hi)| lo <= hi);
        if xs && us {
            Ok(())
        } else {
            Err(Error::InvalidParameter("bounds with min > max".into()))
        }
    }

    pub fn clamp_u(&self, u: [f64; NU]) -> [f64; NU] {
        [
            u[0].clamp(self.u_min[0], self.u_max[0]),
            u[1].clamp(self.u_min[1], self.u_max[1]),
        ]
    }

    pub fn clamp_x(&self, x: [f64; NX]) -> [f64; NX] {
        let mut out = x;
        for i in 0..NX {
            out[i] = x[i].clamp(self.x_min[i], self.x_max[i]);
        }
        out
    }
}

/// Model evaluation over any [`Real`]; the single source of truth for the model
/// arithmetic used by simulation, the OCP and identification.
pub fn step_generic<T: Real>(x: &[T; NX], u: &[T; NU], p: &GenericParams<T>, ts: f64) -> [T; NX] {
    let [px, py, phi, vx, vy, w] = *x;
    let [a, delta] = *u;
    let (s, c) = (phi.sin(), phi.cos());
    let lk = p.lf * p.kf - p.lr * p.kr;

    let px1 = px + (vx * c - vy * s) * ts;
    let py1 = py + (vy * c + vx * s) * ts;
    let phi1 = phi + w * ts;
    let vx1 = vx + a * ts;

    let num_vy = p.m * vx * vy + lk * w * ts - p.kf * delta * vx * ts - p.m * vx * vx * w * ts;
    let den_vy = p.m * vx - (p.kf + p.kr) * ts;
    let num_w = p.iz * vx * w + lk * vy * ts - p.lf * p.kf * delta * vx * ts;
    let den_w = p.iz * vx - (p.lf * p.lf * p.kf + p.lr * p.lr * p.kr) * ts;

    [px1, py1, phi1, vx1, num_vy / den_vy, num_w / den_w]
}

fn denominators(x: &[f64; NX], p: &VehicleParams, ts: f64) -> (f64, f64) {
    let vx = x[3];
    (
        p.m_mass * vx - ts * (p.kf + p.kr),
        p.iz * vx - ts * (p.lf * p.lf * p.kf + p.lr * p.lr * p.kr),
    )
}

fn check_denominators(x: &[f64; NX], p: &VehicleParams, ts: f64) -> Result<()> {
    let (d1, d2) = denominators(x, p, ts);
    if d1.abs() < DENOMINATOR_FLOOR || d2.abs() < DENOMINATOR_FLOOR {
        return Err(Error::DegenerateDenominator { vx: x[3] });
    }
    Ok(())
}

/// One model step. No clamping is applied.
pub fn step(state: &VehicleState, input: &ControlInput, params: &VehicleParams, ts: f64) -> Result<VehicleState> {
    if !(ts > 0.0) {
        return Err(Error::InvalidParameter(format!("ts must be positive, got {ts}")));
    }
    let x = state.to_array();
    check_denominators(&x, params, ts)?;
    let next = step_generic(&x, &input.to_array(), &params.generic::<f64>(), ts);
    Ok(VehicleState::from_array(next))
}

/// Array form of [`step`] without validation, for inner loops that already
/// guarantee `vx >= 0`.
#[inline]
pub fn step_array(x: &[f64; NX], u: &[f64; NU], params: &VehicleParams, ts: f64) -> [f64; NX] {
    step_generic(x, u, &params.generic::<f64>(), ts)
}

/// Value and Jacobians `(f, df/dx, df/du)` of one model step.
pub fn step_with_jacobians(
    x: &[f64; NX],
    u: &[f64; NU],
    params: &VehicleParams,
    ts: f64,
) -> ([f64; NX], [[f64; NX]; NX], [[f64; NU]; NX]) {
    type D = Dual<8>;
    let xd: [D; NX] = std::array::from_fn(|i| D::var(x[i], i));
    let ud: [D; NU] = std::array::from_fn(|i| D::var(u[i], NX + i));
    let out = step_generic(&xd, &ud, &params.generic::<D>(), ts);
    let mut f = [0.0; NX];
    let mut a = [[0.0; NX]; NX];
    let mut b = [[0.0; NU]; NX];
    for r in 0..NX {
        f[r] = out[r].v;
        for c in 0..NX {
            a[r][c] = out[r].d[c];
        }
        for c in 0..NU {
            b[r][c] = out[r].d[NX + c];
        }
    }
    (f, a, b)
}

// ---------------------------------------------------------------------------
// Identification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOptions {
    /// Minimum variance required in both `a` and `delta` over the log.
    pub excitation_floor: f64,
    /// Smoothing width of the Huber surrogate for the absolute residual.
    pub huber_delta: f64,
    pub max_iters: usize,
    /// Starting point of the local search.
    pub initial: VehicleParams,
    /// Optional fixed vehicle mass. The model is invariant to a common scaling of
    /// `(m, iz, kf, kr)`, so absolute values are only recoverable when one of
    /// them is known.
    pub known_mass: Option<f64>,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self {
            excitation_floor: 1e-4,
            huber_delta: 1e-3,
            max_iters: 400,
            initial: VehicleParams::default(),
            known_mass: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub params: VehicleParams,
    /// Sum over transitions of the componentwise absolute one-step error.
    pub residual: f64,
    /// `residual / (M - 1)`.
    pub residual_per_sample: f64,
    pub iterations: usize,
}

pub const MIN_LOG_LEN: usize = 50;

// Optimisation variables: (lf, kf, kr, m, iz) scaled to O(1).
const NP: usize = 5;
const SCALE: [f64; NP] = [1.0, 1e5, 1e5, 1e3, 1e3];

fn param_box(opts: &IdentifyOptions) -> ([f64; NP], [f64; NP]) {
    let (m_lo, m_hi) = match opts.known_mass {
        Some(m) => (m, m),
        None => (1000.0, 2200.0),
    };
    let lo = [0.05, -1e6, -1e6, m_lo, 1.0];
    let hi = [WHEELBASE - 0.05, -1.0, -1.0, m_hi, 1e5];
    (
        std::array::from_fn(|i| lo[i] / SCALE[i]),
        std::array::from_fn(|i| hi[i] / SCALE[i]),
    )
}

fn to_params(z: &[f64; NP]) -> VehicleParams {
    let lf = z[0] * SCALE[0];
    VehicleParams {
        lf,
        lr: WHEELBASE - lf,
        kf: z[1] * SCALE[1],
        kr: z[2] * SCALE[2],
        m_mass: z[3] * SCALE[3],
        iz: z[4] * SCALE[4],
    }
}

fn huber(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() <= delta {
        (0.5 * r * r / delta, r / delta)
    } else {
        (r.abs() - 0.5 * delta, r.signum())
    }
}

struct Objective<'a> {
    log: &'a [(VehicleState, ControlInput)],
    ts: f64,
    delta: f64,
}

impl Objective<'_> {
    fn eval(&self, z: &[f64; NP]) -> (f64, [f64; NP]) {
        type D = Dual<NP>;
        let vars: [D; NP] = std::array::from_fn(|i| D::var(z[i], i));
        let lf = vars[0] * SCALE[0];
        let p = GenericParams {
            lf,
            lr: -lf + WHEELBASE,
            kf: vars[1] * SCALE[1],
            kr: vars[2] * SCALE[2],
            m: vars[3] * SCALE[3],
            iz: vars[4] * SCALE[4],
        };
        let mut value = 0.0;
        let mut grad = [0.0; NP];
        for pair in self.log.windows(2) {
            let (x, u) = pair[0];
            let xn = pair[1].0.to_array();
            let xd = x.to_array().map(D::cst);
            let ud = u.to_array().map(D::cst);
            let pred = step_generic(&xd, &ud, &p, self.ts);
            // Position, heading and speed rows do not depend on the parameters.
            for r in 4..NX {
                let res = pred[r] - xn[r];
                let (h, dh) = huber(res.v, self.delta);
                value += h;
                for i in 0..NP {
                    grad[i] += dh * res.d[i];
                }
            }
        }
        (value, grad)
    }

    fn l1(&self, params: &VehicleParams) -> f64 {
        self.log
            .windows(2)
            .map(|pair| {
                let pred = step_array(&pair[0].0.to_array(), &pair[0].1.to_array(), params, self.ts);
                let next = pair[1].0.to_array();
                pred.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>()
            })
            .sum()
    }
}

fn variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

fn project(z: &mut [f64; NP], lo: &[f64; NP], hi: &[f64; NP]) {
    for i in 0..NP {
        z[i] = z[i].clamp(lo[i], hi[i]);
    }
}

/// Fit `(lf, lr, kf, kr, m, iz)` to a logged trajectory by minimising the
/// one-step prediction residual subject to `lf + lr = 2.89` and box bounds.
///
/// Uses projected BFGS on a Huber-smoothed L1 residual, with `lr` eliminated.
pub fn identify_params(
    log: &[(VehicleState, ControlInput)],
    ts: f64,
    opts: &IdentifyOptions,
) -> Result<Identification> {
    if log.len() < MIN_LOG_LEN {
        return Err(Error::Precondition(format!(
            "identification needs at least {MIN_LOG_LEN} samples, got {}",
            log.len()
        )));
    }
    if !(ts > 0.0) {
        return Err(Error::InvalidParameter(format!("ts must be positive, got {ts}")));
    }
    let var_a = variance(log.iter().map(|(_, u)| u.a));
    let var_d = variance(log.iter().map(|(_, u)| u.delta));
    if var_a < opts.excitation_floor || var_d < opts.excitation_floor {
        return Err(Error::InsufficientExcitation {
            var_a,
            var_delta: var_d,
        });
    }

    let obj = Objective {
        log,
        ts,
        delta: opts.huber_delta,
    };
    let (lo, hi) = param_box(opts);
    let init = opts.initial;
    let mut z = [
        init.lf / SCALE[0],
        init.kf / SCALE[1],
        init.kr / SCALE[2],
        opts.known_mass.unwrap_or(init.m_mass) / SCALE[3],
        init.iz / SCALE[4],
    ];
    project(&mut z, &lo, &hi);

    let (mut f, mut g) = obj.eval(&z);
    let mut hinv = [[0.0; NP]; NP];
    for (i, row) in hinv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut iterations = 0;
    for it in 0..opts.max_iters {
        iterations = it + 1;
        let active: [bool; NP] =
            std::array::from_fn(|i| (z[i] <= lo[i] && g[i] > 0.0) || (z[i] >= hi[i] && g[i] < 0.0));
        let pg_norm = (0..NP).filter(|&i| !active[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg_norm < 1e-12 {
            break;
        }
        let mut d = [0.0; NP];
        for i in 0..NP {
            if active[i] {
                continue;
            }
            for j in 0..NP {
                if !active[j] {
                    d[i] -= hinv[i][j] * g[j];
                }
            }
        }
        let slope: f64 = (0..NP).map(|i| d[i] * g[i]).sum();
        if slope >= 0.0 {
            // Not a descent direction; restart from steepest descent.
            for i in 0..NP {
                d[i] = if active[i] { 0.0 } else { -g[i] };
                hinv[i] = [0.0; NP];
                hinv[i][i] = 1.0;
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: [f64; NP] = std::array::from_fn(|i| z[i] + alpha * d[i]);
            project(&mut trial, &lo, &hi);
            let (ft, gt) = obj.eval(&trial);
            let moved: f64 = (0..NP).map(|i| g[i] * (trial[i] - z[i])).sum();
            if ft <= f + 1e-4 * moved {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((zn, fnew, gn)) = accepted else {
            break;
        };
        let s: [f64; NP] = std::array::from_fn(|i| zn[i] - z[i]);
        let y: [f64; NP] = std::array::from_fn(|i| gn[i] - g[i]);
        let sy: f64 = (0..NP).map(|i| s[i] * y[i]).sum();
        let step_norm = s.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let improvement = f - fnew;
        z = zn;
        f = fnew;
        g = gn;
        if sy > 1e-16 {
            // Inverse BFGS update.
            let hy: [f64; NP] = std::array::from_fn(|i| (0..NP).map(|j| hinv[i][j] * y[j]).sum());
            let yhy: f64 = (0..NP).map(|i| y[i] * hy[i]).sum();
            for i in 0..NP {
                for j in 0..NP {
                    hinv[i][j] += ((sy + yhy) * s[i] * s[j]) / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        if step_norm < 1e-14 || (improvement >= 0.0 && improvement < 1e-16 * f.max(1e-300)) {
            break;
        }
    }

    let params = to_params(&z);
    if !params.lf.is_finite() || params.validate().is_err() || !f.is_finite() {
        return Err(Error::IdentificationDiverged(format!(
            "optimizer left the feasible set: {params:?}"
        )));
    }
    let residual = obj.l1(&params);
    Ok(Identification {
        params,
        residual,
        residual_per_sample: residual / (log.len() - 1) as f64,
        iterations,
    })
}

/// Forward-simulate the model under an input sequence, producing an
/// identification log aligned as `(x_i, u_i)`.
pub fn simulate_log(
    x0: VehicleState,
    inputs: &[ControlInput],
    params: &VehicleParams,
    ts: f64,
) -> Result<Vec<(VehicleState, ControlInput)>> {
    let mut x = x0;
    let mut out = Vec::with_capacity(inputs.len());
    for u in inputs {
        out.push((x, *u));
        x = step(&x, u, params, ts)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Log files
// ---------------------------------------------------------------------------

const LOG_HEADER: [&str; 9] = ["t", "px", "py", "phi", "vx", "vy", "omega", "a", "delta"];

#[derive(Debug, Serialize, Deserialize)]
struct LogRow {
    t: f64,
    px: f64,
    py: f64,
    phi: f64,
    vx: f64,
    vy: f64,
    omega: f64,
    a: f64,
    delta: f64,
}

/// Read an identification log (`t,px,py,phi,vx,vy,omega,a,delta` with header).
/// Returns the rows and the sampling time inferred from `t`.
pub fn read_log<R: Read>(reader: R) -> Result<(Vec<(VehicleState, ControlInput)>, Option<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != LOG_HEADER {
        return Err(Error::Format(format!(
            "identification log header must be {LOG_HEADER:?}, got {got:?}"
        )));
    }
    let mut rows = Vec::new();
    let mut times = Vec::new();
    for rec in rdr.deserialize() {
        let r: LogRow = rec?;
        times.push(r.t);
        rows.push((
            VehicleState::new(r.px, r.py, r.phi, r.vx, r.vy, r.omega),
            ControlInput::new(r.a, r.delta),
        ));
    }
    let ts = if times.len() >= 2 {
        Some((times[times.len() - 1] - times[0]) / (times.len() - 1) as f64)
    } else {
        None
    };
    Ok((rows, ts))
}

pub fn read_log_file(path: &Path) -> Result<(Vec<(VehicleState, ControlInput)>, Option<f64>)> {
    read_log(std::fs::File::open(path)?)
}

pub fn write_log<W: Write>(writer: W, log: &[(VehicleState, ControlInput)], ts: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (i, (x, u)) in log.iter().enumerate() {
        w.serialize(LogRow {
            t: i as f64 * ts,
            px: x.px,
            py: x.py,
            phi: x.phi,
            vx: x.vx,
            vy: x.vy,
            omega: x.omega,
            a: u.a,
            delta: u.delta,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TS: f64 = DEFAULT_TS;

    fn p() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn straight_coasting() {
        let x = VehicleState::new(0.0, 0.0, 0.0, 10.0, 0.0, 0.0);
        let next = step(&x, &ControlInput::default(), &p(), TS).unwrap();
        assert_eq!(next, VehicleState::new(0.5, 0.0, 0.0, 10.0, 0.0, 0.0));
    }

    #[test]
    fn accelerating_and_steering_matches_high_precision_values() {
        // Reference values evaluated with 50-digit mpmath.
        let x = VehicleState::new(0.0, 0.0, 0.0, 10.0, 0.0, 0.0);
        let next = step(&x, &ControlInput::new(1.0, 0.1), &p(), TS).unwrap();
        assert!((next.px - 0.5).abs() < 1e-12);
        assert_eq!(next.py, 0.0);
        assert_eq!(next.phi, 0.0);
        assert!((next.vx - 10.05).abs() < 1e-12);
        assert!((next.vy - 0.19192797658132763754).abs() < 1e-6);
        assert!((next.omega - 0.13976768938894633815).abs() < 1e-6);

        let x = VehicleState::new(3.0, -2.0, 0.3, 8.0, 0.4, 0.2);
        let next = step(&x, &ControlInput::new(-1.5, -0.2), &p(), TS).unwrap();
        let want = [
            3.3762241915170156164,
            -1.8626851875529520496,
            0.31,
            7.925,
            -0.15901474956154744069,
            -0.14268511624122424973,
        ];
        for (a, b) in next.to_array().iter().zip(want) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn heading_north_moves_along_y() {
        let x = VehicleState::new(3.0, 4.0, std::f64::consts::FRAC_PI_2, 5.0, 0.0, 0.0);
        let next = step(&x, &ControlInput::default(), &p(), TS).unwrap();
        assert!((next.px - 3.0).abs() < 1e-15);
        assert!((next.py - 4.25).abs() < 1e-15);
        assert_eq!(next.vx, 5.0);
        assert_eq!(next.vy, 0.0);
        assert_eq!(next.omega, 0.0);
    }

    #[test]
    fn degenerate_denominator_detected() {
        let mut params = p();
        params.kf = 0.0;
        params.kr = 0.0;
        let x = VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            step(&x, &ControlInput::default(), &params, TS),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn standstill_is_well_posed() {
        let x = VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let next = step(&x, &ControlInput::new(2.0, 0.3), &p(), TS).unwrap();
        assert!(next.is_finite());
        assert_eq!(next.vy, 0.0);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let x = [1.0, 2.0, 0.4, 7.0, 0.3, -0.1];
        let u = [0.5, 0.05];
        let (f, a, b) = step_with_jacobians(&x, &u, &p(), TS);
        assert_eq!(f, step_array(&x, &u, &p(), TS));
        let h = 1e-6;
        for c in 0..NX {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let fp = step_array(&xp, &u, &p(), TS);
            let fm = step_array(&xm, &u, &p(), TS);
            for r in 0..NX {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!((fd - a[r][c]).abs() < 1e-6, "A[{r}][{c}] {} vs {fd}", a[r][c]);
            }
        }
        for c in 0..NU {
            let mut up = u;
            let mut um = u;
            up[c] += h;
            um[c] -= h;
            let fp = step_array(&x, &up, &p(), TS);
            let fm = step_array(&x, &um, &p(), TS);
            for r in 0..NX {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!((fd - b[r][c]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn lateral_rest_state_is_invariant(vx in 0.01f64..20.0, phi in -3.0f64..3.0, a in -6.0f64..3.0) {
            let x = VehicleState::new(1.0, -1.0, phi, vx, 0.0, 0.0);
            let next = step(&x, &ControlInput::new(a, 0.0), &p(), TS).unwrap();
            prop_assert_eq!(next.vy, 0.0);
            prop_assert_eq!(next.omega, 0.0);
        }

        #[test]
        fn position_update_is_parameter_free(
            px in -100.0f64..100.0, py in -100.0f64..100.0, phi in -3.0f64..3.0,
            vx in 0.0f64..20.0, vy in -2.0f64..2.0, w in -1.0f64..1.0,
            m in 1000.0f64..2200.0, lf in 0.5f64..2.3,
        ) {
            let x = VehicleState::new(px, py, phi, vx, vy, w);
            let u = ControlInput::new(0.3, 0.1);
            let other = VehicleParams { m_mass: m, lf, lr: WHEELBASE - lf, ..p() };
            let a = step(&x, &u, &p(), TS).unwrap();
            let b = step(&x, &u, &other, TS).unwrap();
            prop_assert_eq!(a.px, b.px);
            prop_assert_eq!(a.py, b.py);
        }
    }

    fn excitation_inputs(n: usize) -> Vec<ControlInput> {
        (0..n)
            .map(|i| {
                let t = i as f64 * TS;
                ControlInput::new(1.5 * (0.7 * t).sin(), 0.15 * (1.3 * t).sin() + 0.05 * (3.1 * t).cos())
            })
            .collect()
    }

    #[test]
    fn identification_preconditions() {
        let x0 = VehicleState::new(0.0, 0.0, 0.0, 8.0, 0.0, 0.0);
        let short = simulate_log(x0, &excitation_inputs(10), &p(), TS).unwrap();
        assert!(matches!(
            identify_params(&short, TS, &IdentifyOptions::default()),
            Err(Error::Precondition(_))
        ));
        let coasting = simulate_log(x0, &vec![ControlInput::default(); 200], &p(), TS).unwrap();
        assert!(matches!(
            identify_params(&coasting, TS, &IdentifyOptions::default()),
            Err(Error::InsufficientExcitation { .. })
        ));
    }

    #[test]
    fn identification_with_known_mass_recovers_all_parameters() {
        let truth = VehicleParams {
            m_mass: 1450.0,
            lf: 1.1,
            lr: WHEELBASE - 1.1,
            kf: -80000.0,
            kr: -110000.0,
            iz: 2300.0,
        };
        let x0 = VehicleState::new(0.0, 0.0, 0.0, 8.0, 0.0, 0.0);
        let log = simulate_log(x0, &excitation_inputs(400), &truth, TS).unwrap();
        let opts = IdentifyOptions {
            known_mass: Some(truth.m_mass),
            ..Default::default()
        };
        let id = identify_params(&log, TS, &opts).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(id.params.lf, truth.lf) < 0.01, "{:?}", id);
        assert!(rel(id.params.kf, truth.kf) < 0.02, "{:?}", id);
        assert!(rel(id.params.kr, truth.kr) < 0.02, "{:?}", id);
        assert!(rel(id.params.iz, truth.iz) < 0.02, "{:?}", id);
        assert!(id.residual_per_sample < 1e-3);
    }

    #[test]
    fn mass_stiffness_inertia_scaling_leaves_model_unchanged() {
        let base = p();
        let c = 1.23;
        let scaled = VehicleParams {
            m_mass: base.m_mass * c,
            kf: base.kf * c,
            kr: base.kr * c,
            iz: base.iz * c,
            ..base
        };
        let x = [1.0, 2.0, 0.4, 7.0, 0.3, -0.1];
        let u = [0.5, 0.05];
        let a = step_array(&x, &u, &base, TS);
        let b = step_array(&x, &u, &scaled, TS);
        for i in 0..NX {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn log_round_trip_through_csv() {
        let x0 = VehicleState::new(0.0, 0.0, 0.0, 8.0, 0.0, 0.0);
        let log = simulate_log(x0, &excitation_inputs(60), &p(), TS).unwrap();
        let mut buf = Vec::new();
        write_log(&mut buf, &log, TS).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,px,py,phi,vx,vy,omega,a,delta"));
        let (back, ts) = read_log(&buf[..]).unwrap();
        assert_eq!(back, log);
        assert!((ts.unwrap() - TS).abs() < 1e-12);
    }

    #[test]
    fn log_with_wrong_header_is_rejected() {
        let text = "t,x,y\n0,1,2\n";
        assert!(matches!(read_log(text.as_bytes()), Err(Error::Format(_))));
    }
}
