//! Horizon cost and the multiple-shooting SQP solver.
//!
//! Decision variables are the states `x_1..x_N` and controls `u_0..u_{N-1}`.
//! Every iteration linearizes the dynamics around the current iterate,
//! condenses the linear defect recursion into a box-constrained QP over the
//! control increments, and globalizes with an L1 merit line search.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix4, SMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_array, step_with_jacobians, Bounds, VehicleParams, VehicleState, NU, NX};
use crate::error::{Error, Result};
use crate::potential::{
    field_terms, total_field, total_field_jet, FieldOptions, PFParams, PotentialScene, VehicleFieldVariant,
};

type M6 = SMatrix<f64, NX, NX>;
type M62 = SMatrix<f64, NX, NU>;

/// Defect bound a converged solution must satisfy at every shooting node.
pub const DEFECT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    pub n: usize,
    pub ts: f64,
    pub q: [f64; NX],
    pub r: [f64; NU],
    pub rd: [f64; NU],
    pub bounds: Bounds,
    pub pf_variant: VehicleFieldVariant,
    pub ttc: bool,
    pub max_iters: usize,
    pub tol_kkt: f64,
    pub tol_step: f64,
    /// Factor on the position weights when the scene requests stronger tracking.
    pub tracking_boost: f64,
    /// Weight of the quadratic exterior penalty on state bounds.
    pub state_penalty: f64,
    /// Lateral shift of the extra initial guesses tried when an obstacle field
    /// is active; 0 disables them.
    pub escape_offset: f64,
    /// Obstacle field level along the nominal solution that triggers them.
    pub escape_gate: f64,
    pub vehicle: VehicleParams,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            n: 10,
            ts: crate::dynamics::DEFAULT_TS,
            q: [1.0, 1.0, 0.5, 2.0, 0.1, 0.1],
            r: [0.1, 1.0],
            rd: [0.5, 5.0],
            bounds: Bounds::default(),
            pf_variant: VehicleFieldVariant::Ellipse,
            ttc: true,
            max_iters: 50,
            tol_kkt: 1e-4,
            tol_step: 1e-8,
            tracking_boost: 5.0,
            state_penalty: 1e3,
            escape_offset: 1.5,
            escape_gate: 1.0,
            vehicle: VehicleParams::default(),
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = self.q.iter().chain(&self.r).chain(&self.rd);
        if self.n == 0 {
            return Err(Error::InvalidParameter("horizon length must be at least 1".into()));
        }
        if !(self.ts > 0.0) {
            return Err(Error::InvalidParameter("ts must be positive".into()));
        }
        if weights.clone().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "cost weights must be finite and nonnegative".into(),
            ));
        }
        if self.max_iters == 0 || !(self.tol_kkt > 0.0) || !(self.tol_step > 0.0) {
            return Err(Error::InvalidParameter(
                "solver tolerances and iteration cap must be positive".into(),
            ));
        }
        if !(self.tracking_boost >= 1.0) || !(self.state_penalty >= 0.0) || !(self.escape_offset >= 0.0) {
            return Err(Error::InvalidParameter(
                "tracking_boost must be >= 1 and state_penalty >= 0".into(),
            ));
        }
        self.bounds.validate()?;
        self.vehicle.validate()
    }

    pub fn field_options(&self) -> FieldOptions {
        FieldOptions {
            variant: self.pf_variant,
            ttc: self.ttc,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn effective_q(&self, scene: &PotentialScene) -> [f64; NX] {
        let mut q = self.q;
        if scene.tracking_boost {
            q[0] *= self.tracking_boost;
            q[1] *= self.tracking_boost;
        }
        q
    }
}

/// Everything the cost depends on besides the decision variables.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub x0: [f64; NX],
    /// `x_ref,τ` for τ = 1..N.
    pub x_ref: &'a [[f64; NX]],
    pub scene: &'a PotentialScene,
    pub pf: &'a PFParams,
    /// Control applied on the previous tick; when given, the first control
    /// increment is penalized like the in-horizon increments.
    pub u_prev: Option<[f64; NU]>,
}

impl Problem<'_> {
    fn check(&self, cfg: &OcpConfig, x: &[[f64; NX]], u: &[[f64; NU]]) -> Result<()> {
        let n = cfg.n;
        if self.x_ref.len() != n || x.len() != n || u.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "horizon {n}, got {} reference states, {} states, {} controls",
                self.x_ref.len(),
                x.len(),
                u.len()
            )));
        }
        self.scene.validate(n)
    }
}

/// Objective split by term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostBreakdown {
    pub tracking: f64,
    pub control: f64,
    pub rate: f64,
    pub field: f64,
    pub penalty: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.tracking + self.control + self.rate + self.field + self.penalty
    }
}

fn as_state(x: &[f64; NX]) -> VehicleState {
    VehicleState::from_array(*x)
}

fn bound_violation(v: f64, lo: f64, hi: f64) -> f64 {
    if v > hi {
        v - hi
    } else if v < lo {
        v - lo
    } else {
        0.0
    }
}

fn breakdown(cfg: &OcpConfig, pb: &Problem<'_>, x: &[[f64; NX]], u: &[[f64; NU]]) -> CostBreakdown {
    let q = cfg.effective_q(pb.scene);
    let opts = cfg.field_options();
    let mut c = CostBreakdown::default();
    for (k, xk) in x.iter().enumerate() {
        let r = &pb.x_ref[k];
        for i in 0..NX {
            let d = xk[i] - r[i];
            c.tracking += q[i] * d * d;
            let v = bound_violation(xk[i], cfg.bounds.x_min[i], cfg.bounds.x_max[i]);
            c.penalty += cfg.state_penalty * v * v;
        }
        c.field += total_field(&pb.scene.stages[k], &as_state(xk), pb.pf, opts);
    }
    for (k, uk) in u.iter().enumerate() {
        let prev = if k == 0 { pb.u_prev } else { Some(u[k - 1]) };
        for j in 0..NU {
            c.control += cfg.r[j] * uk[j] * uk[j];
            if let Some(p) = prev {
                let d = uk[j] - p[j];
                c.rate += cfg.rd[j] * d * d;
            }
        }
    }
    c
}

/// Horizon objective: tracking, control effort, control rate, the potential
/// field at every stage and the exterior state-bound penalty (zero inside the
/// bounds).
pub fn build_cost(cfg: &OcpConfig, pb: &Problem<'_>, x: &[[f64; NX]], u: &[[f64; NU]]) -> Result<f64> {
    pb.check(cfg, x, u)?;
    Ok(breakdown(cfg, pb, x, u).total())
}

/// Per-term objective values.
pub fn cost_breakdown(cfg: &OcpConfig, pb: &Problem<'_>, x: &[[f64; NX]], u: &[[f64; NU]]) -> Result<CostBreakdown> {
    pb.check(cfg, x, u)?;
    Ok(breakdown(cfg, pb, x, u))
}

/// Exact gradient plus a positive semidefinite curvature model of the objective.
struct Derivatives {
    gx: Vec<SMatrix<f64, NX, 1>>,
    gu: DVector<f64>,
    hx: Vec<M6>,
    hu: DMatrix<f64>,
}

fn psd_clip(h: &[[f64; 4]; 4]) -> Matrix4<f64> {
    let m = Matrix4::from_fn(|i, j| 0.5 * (h[i][j] + h[j][i]));
    let eig = SymmetricEigen::new(m);
    let lam = eig.eigenvalues.map(|v| v.max(0.0));
    eig.eigenvectors * Matrix4::from_diagonal(&lam) * eig.eigenvectors.transpose()
}

fn derivatives(cfg: &OcpConfig, pb: &Problem<'_>, x: &[[f64; NX]], u: &[[f64; NU]]) -> Derivatives {
    let n = cfg.n;
    let q = cfg.effective_q(pb.scene);
    let opts = cfg.field_options();
    let mut gx = Vec::with_capacity(n);
    let mut hx = Vec::with_capacity(n);
    for (k, xk) in x.iter().enumerate() {
        let r = &pb.x_ref[k];
        let mut g = SMatrix::<f64, NX, 1>::zeros();
        let mut h = M6::zeros();
        for i in 0..NX {
            g[i] = 2.0 * q[i] * (xk[i] - r[i]);
            h[(i, i)] = 2.0 * q[i];
            let v = bound_violation(xk[i], cfg.bounds.x_min[i], cfg.bounds.x_max[i]);
            if v != 0.0 {
                g[i] += 2.0 * cfg.state_penalty * v;
                h[(i, i)] += 2.0 * cfg.state_penalty;
            }
        }
        let jet = total_field_jet(&pb.scene.stages[k], &as_state(xk), pb.pf, opts);
        let hp = psd_clip(&jet.h);
        for i in 0..4 {
            g[i] += jet.g[i];
            for j in 0..4 {
                h[(i, j)] += hp[(i, j)];
            }
        }
        gx.push(g);
        hx.push(h);
    }
    let mut gu = DVector::zeros(NU * n);
    let mut hu = DMatrix::zeros(NU * n, NU * n);
    for (k, uk) in u.iter().enumerate() {
        for j in 0..NU {
            let a = NU * k + j;
            gu[a] += 2.0 * cfg.r[j] * uk[j];
            hu[(a, a)] += 2.0 * cfg.r[j];
            let w = cfg.rd[j];
            if k == 0 {
                if let Some(p) = pb.u_prev {
                    gu[a] += 2.0 * w * (uk[j] - p[j]);
                    hu[(a, a)] += 2.0 * w;
                }
            } else {
                let b = NU * (k - 1) + j;
                let d = uk[j] - u[k - 1][j];
                gu[a] += 2.0 * w * d;
                gu[b] -= 2.0 * w * d;
                hu[(a, a)] += 2.0 * w;
                hu[(b, b)] += 2.0 * w;
                hu[(a, b)] -= 2.0 * w;
                hu[(b, a)] -= 2.0 * w;
            }
        }
    }
    Derivatives { gx, gu, hx, hu }
}

/// Gradient of [`build_cost`], ordered as all states `x_1..x_N` then all controls.
pub fn cost_gradient(cfg: &OcpConfig, pb: &Problem<'_>, x: &[[f64; NX]], u: &[[f64; NU]]) -> Result<Vec<f64>> {
    pb.check(cfg, x, u)?;
    let d = derivatives(cfg, pb, x, u);
    let mut out: Vec<f64> = d.gx.iter().flat_map(|g| g.iter().copied()).collect();
    out.extend(d.gu.iter());
    Ok(out)
}

/// Linearized dynamics condensed onto the control increments:
/// `Δx = S Δu + s0`, with the defects `c` of the current iterate.
struct Condensed {
    s: DMatrix<f64>,
    s0: DVector<f64>,
    defects: Vec<[f64; NX]>,
}

fn condense(cfg: &OcpConfig, x0: &[f64; NX], x: &[[f64; NX]], u: &[[f64; NU]]) -> Condensed {
    let n = cfg.n;
    let mut s = DMatrix::zeros(NX * n, NU * n);
    let mut s0 = DVector::zeros(NX * n);
    let mut defects = Vec::with_capacity(n);
    for k in 0..n {
        let prev = if k == 0 { x0 } else { &x[k - 1] };
        let (f, a, b) = step_with_jacobians(prev, &u[k], &cfg.vehicle, cfg.ts);
        let a = M6::from_fn(|i, j| a[i][j]);
        let b = M62::from_fn(|i, j| b[i][j]);
        let c: [f64; NX] = std::array::from_fn(|i| f[i] - x[k][i]);
        defects.push(c);
        let rows = NX * k;
        if k > 0 {
            let prev_rows = s.rows(NX * (k - 1), NX).clone_owned();
            let block = a * prev_rows;
            s.rows_mut(rows, NX).copy_from(&block);
            let prev_s0 = s0.rows(NX * (k - 1), NX).clone_owned();
            let v = a * prev_s0;
            s0.rows_mut(rows, NX).copy_from(&v);
        }
        s.view_mut((rows, NU * k), (NX, NU)).copy_from(&b);
        for i in 0..NX {
            s0[rows + i] += c[i];
        }
    }
    Condensed { s, s0, defects }
}

fn max_defect(defects: &[[f64; NX]]) -> f64 {
    defects.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

fn l1_defect(defects: &[[f64; NX]]) -> f64 {
    defects.iter().flatten().map(|v| v.abs()).sum()
}

fn defects_of(cfg: &OcpConfig, x0: &[f64; NX], x: &[[f64; NX]], u: &[[f64; NU]]) -> Vec<[f64; NX]> {
    (0..cfg.n)
        .map(|k| {
            let prev = if k == 0 { x0 } else { &x[k - 1] };
            let f = step_array(prev, &u[k], &cfg.vehicle, cfg.ts);
            std::array::from_fn(|i| f[i] - x[k][i])
        })
        .collect()
}

/// States reached from `x0` under `u`; a defect-free trajectory.
fn rollout(cfg: &OcpConfig, x0: &[f64; NX], u: &[[f64; NU]]) -> Vec<[f64; NX]> {
    let mut prev = *x0;
    u.iter()
        .map(|uk| {
            prev = step_array(&prev, uk, &cfg.vehicle, cfg.ts);
            prev
        })
        .collect()
}

fn blockdiag_mul(hx: &[M6], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for (k, h) in hx.iter().enumerate() {
        let seg = h * v.fixed_rows::<NX>(NX * k);
        out.fixed_rows_mut::<NX>(NX * k).copy_from(&seg);
    }
    out
}

fn stacked_gx(d: &Derivatives) -> DVector<f64> {
    DVector::from_iterator(d.gx.len() * NX, d.gx.iter().flat_map(|g| g.iter().copied()))
}

/// Projected gradient of the reduced (dynamics-eliminated) objective in the
/// controls, measured with a unit projection step.
fn projected_reduced_gradient(cfg: &OcpConfig, u: &[[f64; NU]], reduced: &DVector<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for (k, uk) in u.iter().enumerate() {
        for j in 0..NU {
            let g = reduced[NU * k + j];
            let moved = (uk[j] - g).clamp(cfg.bounds.u_min[j], cfg.bounds.u_max[j]);
            m = m.max((uk[j] - moved).abs());
        }
    }
    m
}

/// Solve `min ½ dᵀHd + gᵀd` over `lb ≤ d ≤ ub` by projected Newton steps on
/// the free variables. `H` must be positive definite.
pub fn box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let clamp = |v: &DVector<f64>| DVector::from_fn(n, |i, _| v[i].clamp(lb[i], ub[i]));
    let q = |d: &DVector<f64>| 0.5 * d.dot(&(h * d)) + g.dot(d);
    let mut d = clamp(&DVector::zeros(n));
    let scale = 1.0 + g.amax();
    for _ in 0..200 {
        let grad = h * &d + g;
        let pg = &d - clamp(&(&d - &grad));
        let pg_norm = pg.amax();
        if pg_norm <= 1e-13 * scale {
            break;
        }
        let eps = pg_norm.min(1e-9);
        let free: Vec<usize> = (0..n)
            .filter(|&i| !((d[i] <= lb[i] + eps && grad[i] > 0.0) || (d[i] >= ub[i] - eps && grad[i] < 0.0)))
            .collect();
        let mut dir = DVector::zeros(n);
        let newton = if free.is_empty() {
            None
        } else {
            let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let gf = DVector::from_fn(free.len(), |a, _| -grad[free[a]]);
            hff.cholesky().map(|c| c.solve(&gf))
        };
        match newton {
            Some(step) => {
                for (a, &i) in free.iter().enumerate() {
                    dir[i] = step[a];
                }
            }
            None => dir = -&grad,
        }
        let q0 = q(&d);
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-14 {
            let cand = clamp(&(&d + alpha * &dir));
            let decrease = grad.dot(&(&cand - &d));
            if q(&cand) <= q0 + 1e-4 * decrease && decrease < 0.0 {
                d = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Iteration cap or a stalled line search; the best iterate is returned.
    MaxIters,
    /// The dynamics defects could not be closed.
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub cost: f64,
    pub merit: f64,
    pub kkt: f64,
    pub defect: f64,
    pub step_norm: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    /// `x_1..x_N`.
    pub x: Vec<[f64; NX]>,
    /// `u_0..u_{N-1}`.
    pub u: Vec<[f64; NU]>,
    pub cost: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub max_defect: f64,
    pub iterations: usize,
    /// Seconds; not part of any deterministic output.
    pub wall_time: f64,
    pub trace: Vec<TraceRow>,
}

impl OcpSolution {
    pub fn first_control(&self) -> [f64; NU] {
        self.u[0]
    }

    /// Warm start for the next tick: shift by one stage and repeat the last.
    pub fn shifted(&self) -> (Vec<[f64; NX]>, Vec<[f64; NU]>) {
        let mut x: Vec<_> = self.x.iter().skip(1).copied().collect();
        let mut u: Vec<_> = self.u.iter().skip(1).copied().collect();
        x.push(*self.x.last().expect("non-empty horizon"));
        u.push(*self.u.last().expect("non-empty horizon"));
        (x, u)
    }
}

/// Write the per-iteration trace as delimited text.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["iter", "cost", "merit", "kkt", "defect", "step_norm", "alpha"])?;
    for r in rows {
        wr.write_record([
            r.iter.to_string(),
            format!("{:.6}", r.cost),
            format!("{:.6}", r.merit),
            format!("{:.6e}", r.kkt),
            format!("{:.6e}", r.defect),
            format!("{:.6e}", r.step_norm),
            format!("{:.6}", r.alpha),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Solve the horizon problem from `pb.x0`. Without a warm start the states
/// start on the reference and the controls at zero.
///
/// A vehicle centered behind an obstacle sits on a symmetric saddle of the
/// field where the lateral gradient vanishes. When an obstacle field is active
/// the problem is therefore also solved from guesses shifted to the left and
/// right of the nominal solution, and the cheapest result is kept (the
/// nominal one on ties, then left before right).
pub fn solve(cfg: &OcpConfig, pb: &Problem<'_>, warm: Option<(&[[f64; NX]], &[[f64; NU]])>) -> Result<OcpSolution> {
    let started = Instant::now();
    cfg.validate()?;
    let n = cfg.n;
    let x0_clamped = cfg.bounds.clamp_x(pb.x0);
    if x0_clamped != pb.x0 {
        log::warn!("initial state outside state bounds, clamped");
    }
    let pb = Problem { x0: x0_clamped, ..*pb };
    let (x, u): (Vec<[f64; NX]>, Vec<[f64; NU]>) = match warm {
        Some((wx, wu)) => (wx.to_vec(), wu.iter().map(|v| cfg.bounds.clamp_u(*v)).collect()),
        None => (pb.x_ref.to_vec(), vec![[0.0; NU]; n]),
    };
    pb.check(cfg, &x, &u)?;
    let mut best = sqp(cfg, &pb, x, u);
    if cfg.escape_offset > 0.0 && obstacle_level(cfg, &pb, &best.x) > cfg.escape_gate {
        let nominal = best.clone();
        for side in [1.0, -1.0] {
            let shift = side * cfg.escape_offset;
            let guess: Vec<[f64; NX]> = nominal
                .x
                .iter()
                .zip(pb.x_ref)
                .enumerate()
                .map(|(k, (xk, r))| {
                    let w = shift * (k + 1) as f64 / n as f64;
                    let mut g = *xk;
                    g[0] -= w * r[2].sin();
                    g[1] += w * r[2].cos();
                    g
                })
                .collect();
            let cand = sqp(cfg, &pb, guess, nominal.u.clone());
            if cand.status != SolveStatus::Infeasible && cand.cost < best.cost {
                best = cand;
            }
        }
    }
    best.wall_time = started.elapsed().as_secs_f64();
    Ok(best)
}

/// Largest vehicle, time-to-collision or pedestrian field along a trajectory.
fn obstacle_level(cfg: &OcpConfig, pb: &Problem<'_>, x: &[[f64; NX]]) -> f64 {
    x.iter()
        .zip(&pb.scene.stages)
        .map(|(xk, st)| {
            let t = field_terms(st, &as_state(xk), pb.pf, cfg.field_options());
            t.v + t.ttc.max(0.0) + t.pd
        })
        .fold(0.0, f64::max)
}

fn sqp(cfg: &OcpConfig, pb: &Problem<'_>, mut x: Vec<[f64; NX]>, mut u: Vec<[f64; NU]>) -> OcpSolution {
    let n = cfg.n;
    let pb = *pb;
    let mut mu: f64 = 10.0;
    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxIters;
    let mut kkt;
    let mut defect;
    let mut iterations = 0;
    let mut restored = false;
    loop {
        let der = derivatives(cfg, &pb, &x, &u);
        let cond = condense(cfg, &pb.x0, &x, &u);
        let gx = stacked_gx(&der);
        let reduced = cond.s.transpose() * &gx + &der.gu;
        defect = max_defect(&cond.defects);
        kkt = projected_reduced_gradient(cfg, &u, &reduced).max(defect);
        let cost = breakdown(cfg, &pb, &x, &u).total();
        let merit = cost + mu * l1_defect(&cond.defects);
        let mut row = TraceRow {
            iter: iterations,
            cost,
            merit,
            kkt,
            defect,
            step_norm: 0.0,
            alpha: 0.0,
        };
        if kkt <= cfg.tol_kkt {
            trace.push(row);
            status = SolveStatus::Converged;
            break;
        }
        if iterations >= cfg.max_iters {
            trace.push(row);
            break;
        }

        // Condensed QP in the control increments.
        let hs = DMatrix::from_fn(NX * n, NU * n, |r, c| {
            let k = r / NX;
            (0..NX).map(|i| der.hx[k][(r % NX, i)] * cond.s[(NX * k + i, c)]).sum()
        });
        let mut h = cond.s.transpose() * hs + &der.hu;
        for i in 0..NU * n {
            h[(i, i)] += 1e-9;
        }
        let g = cond.s.transpose() * (&gx + blockdiag_mul(&der.hx, &cond.s0)) + &der.gu;
        let lb = DVector::from_fn(NU * n, |i, _| cfg.bounds.u_min[i % NU] - u[i / NU][i % NU]);
        let ub = DVector::from_fn(NU * n, |i, _| cfg.bounds.u_max[i % NU] - u[i / NU][i % NU]);
        let du = box_qp(&h, &g, &lb, &ub);
        let dx = &cond.s * &du + &cond.s0;
        let step_norm = du.amax().max(dx.amax());
        row.step_norm = step_norm;
        iterations += 1;
        if step_norm <= cfg.tol_step {
            trace.push(row);
            status = if defect <= DEFECT_TOL {
                SolveStatus::Converged
            } else {
                SolveStatus::Infeasible
            };
            break;
        }

        // Penalty parameter large enough to make the step a descent direction.
        let c1 = l1_defect(&cond.defects);
        let slope_f = gx.dot(&dx) + der.gu.dot(&du);
        let curv = dx.dot(&blockdiag_mul(&der.hx, &dx)) + du.dot(&(&der.hu * &du));
        if c1 > 0.0 {
            let need = (slope_f + 0.5 * curv.max(0.0)) / (0.5 * c1);
            mu = mu.max(1.1 * need);
        }
        let merit0 = cost + mu * c1;
        let slope = slope_f - mu * c1;

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1e-6 {
            let xt: Vec<[f64; NX]> = (0..n)
                .map(|k| std::array::from_fn(|i| x[k][i] + alpha * dx[NX * k + i]))
                .collect();
            let ut: Vec<[f64; NU]> = (0..n)
                .map(|k| {
                    let v = std::array::from_fn(|j| u[k][j] + alpha * du[NU * k + j]);
                    cfg.bounds.clamp_u(v)
                })
                .collect();
            let mt = breakdown(cfg, &pb, &xt, &ut).total() + mu * l1_defect(&defects_of(cfg, &pb.x0, &xt, &ut));
            if mt.is_finite() && mt <= merit0 + 1e-4 * alpha * slope.min(0.0) {
                accepted = Some((xt, ut));
                break;
            }
            alpha *= 0.5;
        }
        row.merit = merit0;
        row.alpha = if accepted.is_some() { alpha } else { 0.0 };
        trace.push(row);
        match accepted {
            Some((xt, ut)) => {
                x = xt;
                u = ut;
            }
            // A stalled search on an infeasible iterate: restart from the
            // controls' own rollout, which has no defects.
            None if defect > DEFECT_TOL && !restored => {
                x = rollout(cfg, &pb.x0, &u);
                restored = true;
            }
            None => {
                status = if defect <= DEFECT_TOL {
                    SolveStatus::MaxIters
                } else {
                    SolveStatus::Infeasible
                };
                break;
            }
        }
    }
    let cost = breakdown(cfg, &pb, &x, &u).total();
    OcpSolution {
        x,
        u,
        cost,
        status,
        kkt_residual: kkt,
        max_defect: defect,
        iterations,
        wall_time: 0.0,
        trace,
    }
}

/// Finite-difference comparison of [`cost_gradient`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub rel_error: Vec<f64>,
    /// Coordinates where the one-sided difference quotients disagree, i.e. a
    /// piecewise boundary of some field lies within the probe interval.
    pub nonsmooth: Vec<bool>,
    /// Largest relative error over the smooth coordinates.
    pub max_rel_error: f64,
}

impl GradientReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }

    pub fn flagged(&self) -> usize {
        self.nonsmooth.iter().filter(|f| **f).count()
    }
}

/// One-sided quotients that differ by more than this (relative) mark a kink.
pub const KINK_TOL: f64 = 1e-3;

pub fn check_gradients(cfg: &OcpConfig, pb: &Problem<'_>, x: &[[f64; NX]], u: &[[f64; NU]]) -> Result<GradientReport> {
    let analytic = cost_gradient(cfg, pb, x, u)?;
    let n = cfg.n;
    let mut z: Vec<f64> = x.iter().flatten().copied().collect();
    z.extend(u.iter().flatten());
    let eval = |z: &[f64]| {
        let xs: Vec<[f64; NX]> = z[..NX * n].chunks(NX).map(|c| std::array::from_fn(|i| c[i])).collect();
        let us: Vec<[f64; NU]> = z[NX * n..].chunks(NU).map(|c| std::array::from_fn(|i| c[i])).collect();
        breakdown(cfg, pb, &xs, &us).total()
    };
    let f0 = eval(&z);
    let mut fd = Vec::with_capacity(z.len());
    let mut rel = Vec::with_capacity(z.len());
    let mut kink = Vec::with_capacity(z.len());
    let mut max_rel: f64 = 0.0;
    for i in 0..z.len() {
        let h = 1e-5 * z[i].abs().max(1.0);
        let orig = z[i];
        z[i] = orig + h;
        let fp = eval(&z);
        z[i] = orig - h;
        let fm = eval(&z);
        z[i] = orig;
        let central = (fp - fm) / (2.0 * h);
        let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
        let nonsmooth = (fwd - bwd).abs() > KINK_TOL * fwd.abs().max(bwd.abs()).max(1.0);
        let e = (analytic[i] - central).abs() / analytic[i].abs().max(central.abs()).max(1.0);
        if !nonsmooth {
            max_rel = max_rel.max(e);
        }
        fd.push(central);
        rel.push(e);
        kink.push(nonsmooth);
    }
    Ok(GradientReport {
        analytic,
        finite_difference: fd,
        rel_error: rel,
        nonsmooth: kink,
        max_rel_error: max_rel,
    })
}

pub mod survey;
pub use survey::{gradient_survey, probe_scene, GradientSurvey};
