//! Interpolation-style Gaussian process regression for motion prediction.
//!
//! Each record stacks 15 history states `[x, y, phi, vx, vy]` into a 75-vector
//! and 10 future poses `[x, y, phi]` into a 30-vector. Positions are centered
//! on the first history position so that every record starts at the origin.
//! One scalar GP with an RBF kernel is fitted per output dimension.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::unwrap_near;

pub const HISTORY_LEN: usize = 15;
pub const FUTURE_LEN: usize = 10;
pub const HISTORY_DIM: usize = 5;
pub const FUTURE_DIM: usize = 3;
pub const NZ: usize = HISTORY_LEN * HISTORY_DIM;
pub const NY: usize = FUTURE_LEN * FUTURE_DIM;
pub const MIN_RECORDS: usize = 10;

/// `[x, y, phi, vx, vy]`.
pub type HistoryState = [f64; HISTORY_DIM];
/// `[x, y, phi]`.
pub type FuturePose = [f64; FUTURE_DIM];

/// A centered record with the offset needed to map it back to the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredRecord {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub offset: [f64; 2],
}

fn center_history(history: &[HistoryState]) -> Result<(Vec<f64>, [f64; 2], f64)> {
    if history.len() != HISTORY_LEN {
        return Err(Error::ArityMismatch {
            expected: HISTORY_LEN,
            got: history.len(),
        });
    }
    let offset = [history[0][0], history[0][1]];
    let mut z = Vec::with_capacity(NZ);
    let mut heading = history[0][2];
    for h in history {
        heading = unwrap_near(h[2], heading);
        z.extend_from_slice(&[h[0] - offset[0], h[1] - offset[1], heading, h[3], h[4]]);
    }
    Ok((z, offset, heading))
}

/// Shift positions by the first history position. Headings are only unwrapped
/// along the record so a crossing of ±π does not create a jump.
pub fn center_record(history: &[HistoryState], future: &[FuturePose]) -> Result<CenteredRecord> {
    let (z, offset, mut heading) = center_history(history)?;
    if future.len() != FUTURE_LEN {
        return Err(Error::ArityMismatch {
            expected: FUTURE_LEN,
            got: future.len(),
        });
    }
    let mut y = Vec::with_capacity(NY);
    for f in future {
        heading = unwrap_near(f[2], heading);
        y.extend_from_slice(&[f[0] - offset[0], f[1] - offset[1], heading]);
    }
    Ok(CenteredRecord { z, y, offset })
}

/// Centered training set; row `j` of `inputs`/`outputs` is record `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub offsets: Vec<[f64; 2]>,
}

impl TrajectoryDataset {
    pub fn from_records(records: &[CenteredRecord]) -> Self {
        let m = records.len();
        let inputs = DMatrix::from_fn(m, NZ, |r, c| records[r].z[c]);
        let outputs = DMatrix::from_fn(m, NY, |r, c| records[r].y[c]);
        Self {
            inputs,
            outputs,
            offsets: records.iter().map(|r| r.offset).collect(),
        }
    }

    /// Build from world-frame `(history, future)` pairs.
    pub fn from_world(pairs: &[(Vec<HistoryState>, Vec<FuturePose>)]) -> Result<Self> {
        let recs = pairs
            .iter()
            .map(|(h, f)| center_record(h, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_records(&recs))
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// World-frame rows of 105 values: 75 history entries then 30 future entries.
    pub fn world_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|r| {
                let off = self.offsets[r];
                let mut row = Vec::with_capacity(NZ + NY);
                for c in 0..NZ {
                    let shift = match c % HISTORY_DIM {
                        0 => off[0],
                        1 => off[1],
                        _ => 0.0,
                    };
                    row.push(self.inputs[(r, c)] + shift);
                }
                for c in 0..NY {
                    let shift = match c % FUTURE_DIM {
                        0 => off[0],
                        1 => off[1],
                        _ => 0.0,
                    };
                    row.push(self.outputs[(r, c)] + shift);
                }
                row
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..NZ)
            .map(|i| format!("z{i}"))
            .chain((0..NY).map(|i| format!("y{i}")))
            .collect();
        wr.write_record(&header)?;
        for row in self.world_rows() {
            wr.write_record(row.iter().map(|v| format!("{v:.6}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut pairs = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != NZ + NY {
                return Err(Error::Format(format!(
                    "dataset row {} has {} columns, expected {}",
                    line + 2,
                    rec.len(),
                    NZ + NY
                )));
            }
            let vals = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("dataset row {}: {e}", line + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            let hist = vals[..NZ]
                .chunks(HISTORY_DIM)
                .map(|c| [c[0], c[1], c[2], c[3], c[4]])
                .collect();
            let fut = vals[NZ..].chunks(FUTURE_DIM).map(|c| [c[0], c[1], c[2]]).collect();
            pairs.push((hist, fut));
        }
        Self::from_world(&pairs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// RBF kernel hyperparameters of one output dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub beta: f64,
    pub length_scale: f64,
    pub sigma: f64,
}

impl KernelHyperparams {
    pub fn gamma(&self) -> f64 {
        -0.5 / (self.length_scale * self.length_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.length_scale > 0.0 && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid kernel hyperparameters {self:?}"
            )));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn row(m: &DMatrix<f64>, r: usize) -> Vec<f64> {
    m.row(r).iter().copied().collect()
}

fn pairwise_sq_dists(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|r| row(z, r)).collect();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = sq_dist(&rows[i], &rows[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Gram matrix `β² exp(γ‖z_j − z_k‖²)` over the rows of `z`.
pub fn gram_matrix(z: &DMatrix<f64>, hp: &KernelHyperparams) -> DMatrix<f64> {
    let b2 = hp.beta * hp.beta;
    let g = hp.gamma();
    pairwise_sq_dists(z).map(|d| b2 * (g * d).exp())
}

/// Diagonal jitter schedule, relative to `β²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub initial: f64,
    pub max: f64,
    pub factor: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-8,
            max: 1e-2,
            factor: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
struct DimFactor {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn factor_dim(d2: &DMatrix<f64>, y: DVector<f64>, hp: &KernelHyperparams, policy: JitterPolicy) -> Result<DimFactor> {
    let b2 = hp.beta * hp.beta;
    let g = hp.gamma();
    let n = d2.nrows();
    let mut base = d2.map(|d| b2 * (g * d).exp());
    for i in 0..n {
        base[(i, i)] += hp.sigma * hp.sigma;
    }
    let mut rel = policy.initial;
    loop {
        let jitter = rel * b2;
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            let alpha = chol.solve(&y);
            return Ok(DimFactor { chol, alpha, jitter });
        }
        if rel >= policy.max {
            return Err(Error::SingularGram { jitter });
        }
        rel = if rel == 0.0 {
            1e-12
        } else {
            (rel * policy.factor).min(policy.max)
        };
    }
}

/// Posterior for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Centered-frame mean, 30 entries.
    pub mean: Vec<f64>,
    /// Per-dimension variance, clamped at zero.
    pub variance: Vec<f64>,
    /// World-frame poses for τ = 1..10.
    pub waypoints: Vec<FuturePose>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    hyperparams: Vec<KernelHyperparams>,
    jitter: JitterPolicy,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

/// Trained predictor: training data, hyperparameters and per-dimension factorizations.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: DMatrix<f64>,
    input_rows: Vec<Vec<f64>>,
    outputs: DMatrix<f64>,
    hyperparams: Vec<KernelHyperparams>,
    policy: JitterPolicy,
    factors: Vec<DimFactor>,
}

impl GpModel {
    pub fn with_hyperparams(
        data: &TrajectoryDataset,
        hyperparams: Vec<KernelHyperparams>,
        policy: JitterPolicy,
    ) -> Result<Self> {
        if hyperparams.len() != data.outputs.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} hyperparameter sets for {} outputs",
                hyperparams.len(),
                data.outputs.ncols()
            )));
        }
        if data.is_empty() {
            return Err(Error::TooFewRecords { min: 1, got: 0 });
        }
        for hp in &hyperparams {
            hp.validate()?;
        }
        let d2 = pairwise_sq_dists(&data.inputs);
        let factors = hyperparams
            .iter()
            .enumerate()
            .map(|(i, hp)| factor_dim(&d2, data.outputs.column(i).into_owned(), hp, policy))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_rows: (0..data.len()).map(|r| row(&data.inputs, r)).collect(),
            inputs: data.inputs.clone(),
            outputs: data.outputs.clone(),
            hyperparams,
            policy,
            factors,
        })
    }

    pub fn hyperparams(&self) -> &[KernelHyperparams] {
        &self.hyperparams
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Jitter actually added to each dimension's diagonal.
    pub fn jitters(&self) -> Vec<f64> {
        self.factors.iter().map(|f| f.jitter).collect()
    }

    fn query_dists(&self, z: &[f64]) -> Vec<f64> {
        self.input_rows.iter().map(|r| sq_dist(r, z)).collect()
    }

    fn kernel_vector(&self, d2: &[f64], hp: &KernelHyperparams) -> DVector<f64> {
        let (b2, g) = (hp.beta * hp.beta, hp.gamma());
        DVector::from_iterator(d2.len(), d2.iter().map(|d| b2 * (g * d).exp()))
    }

    /// Posterior in the centered frame for an already centered 75-vector.
    pub fn predict_centered(&self, z: &[f64], with_variance: bool) -> (Vec<f64>, Vec<f64>) {
        let d2 = self.query_dists(z);
        let mut mean = Vec::with_capacity(self.hyperparams.len());
        let mut var = Vec::with_capacity(self.hyperparams.len());
        for (hp, f) in self.hyperparams.iter().zip(&self.factors) {
            let k = self.kernel_vector(&d2, hp);
            mean.push(k.dot(&f.alpha));
            if with_variance {
                let l = f.chol.l_dirty();
                let v = l
                    .solve_lower_triangular(&k)
                    .expect("Cholesky factor has a positive diagonal");
                var.push((hp.beta * hp.beta - v.norm_squared()).max(0.0));
            }
        }
        (mean, var)
    }

    /// Largest normalised kernel value between the query and any training
    /// input under the widest length scale. Values near zero mean the mean
    /// has decayed toward the prior and should not be trusted.
    pub fn support(&self, history: &[HistoryState]) -> Result<f64> {
        let (z, _, _) = center_history(history)?;
        let g = self
            .hyperparams
            .iter()
            .map(|hp| hp.gamma())
            .fold(f64::NEG_INFINITY, f64::max);
        let d2 = self.query_dists(&z).into_iter().fold(f64::INFINITY, f64::min);
        Ok((g * d2).exp())
    }

    fn predict_impl(&self, history: &[HistoryState], with_variance: bool) -> Result<Prediction> {
        let (z, offset, _) = center_history(history)?;
        let (mean, variance) = self.predict_centered(&z, with_variance);
        let waypoints = mean
            .chunks(FUTURE_DIM)
            .map(|c| [c[0] + offset[0], c[1] + offset[1], c[2]])
            .collect();
        Ok(Prediction {
            mean,
            variance,
            waypoints,
        })
    }

    /// Mean and variance of the 10 future poses.
    pub fn predict(&self, history: &[HistoryState]) -> Result<Prediction> {
        self.predict_impl(history, true)
    }

    /// Mean only; used in the closed loop where variances are not consumed.
    pub fn predict_mean(&self, history: &[HistoryState]) -> Result<Prediction> {
        self.predict_impl(history, false)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            hyperparams: self.hyperparams.clone(),
            jitter: self.policy,
            inputs: self.input_rows.clone(),
            outputs: (0..self.outputs.nrows()).map(|r| row(&self.outputs, r)).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Restore a saved model; the Gram systems are factorized again.
    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        let m = f.inputs.len();
        if f.outputs.len() != m || f.inputs.iter().any(|r| r.len() != NZ) || f.outputs.iter().any(|r| r.len() != NY) {
            return Err(Error::Format("model file has inconsistent dimensions".into()));
        }
        let data = TrajectoryDataset {
            inputs: DMatrix::from_fn(m, NZ, |r, c| f.inputs[r][c]),
            outputs: DMatrix::from_fn(m, NY, |r, c| f.outputs[r][c]),
            offsets: vec![[0.0, 0.0]; m],
        };
        Self::with_hyperparams(&data, f.hyperparams, f.jitter)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Number of log-spaced length scales searched.
    pub length_scales: usize,
    pub max_iters: usize,
    pub jitter: JitterPolicy,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            length_scales: 21,
            max_iters: 150,
            jitter: JitterPolicy::default(),
        }
    }
}

/// Log marginal likelihood (without the constant) and its gradient in
/// `(log β, log σ)`, given the eigenvalues `lam` of the unit-amplitude
/// kernel matrix and the projected targets `a = Vᵀ y`.
fn lml(lam: &[f64], a: &[f64], log_beta: f64, log_sigma: f64, jitter: f64) -> (f64, [f64; 2]) {
    let b2 = (2.0 * log_beta).exp();
    let s2 = (2.0 * log_sigma).exp();
    let mut f = 0.0;
    let mut g = [0.0; 2];
    for (l, ai) in lam.iter().zip(a) {
        let d = b2 * l + s2 + jitter * b2;
        let q = ai * ai / d;
        f += -0.5 * (q + d.ln());
        let dd = 0.5 * (q / d - 1.0 / d);
        g[0] += dd * 2.0 * b2 * (l + jitter);
        g[1] += dd * 2.0 * s2;
    }
    (f, g)
}

/// Gradient ascent with an adaptive step in `(log β, log σ)`; `log σ` is kept above its floor.
fn ascend(lam: &[f64], a: &[f64], start: [f64; 2], floor: f64, jitter: f64, iters: usize) -> ([f64; 2], f64) {
    let mut x = start;
    x[1] = x[1].max(floor);
    let (mut f, mut g) = lml(lam, a, x[0], x[1], jitter);
    let mut step = 0.1;
    for _ in 0..iters {
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if gn < 1e-9 * (1.0 + f.abs()) {
            break;
        }
        let cand = [x[0] + step * g[0] / gn, (x[1] + step * g[1] / gn).max(floor)];
        let (fc, gc) = lml(lam, a, cand[0], cand[1], jitter);
        if fc > f {
            x = cand;
            f = fc;
            g = gc;
            step = (step * 1.5).min(2.0);
        } else {
            step *= 0.5;
            if step < 1e-8 {
                break;
            }
        }
    }
    (x, f)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        0.0
    } else {
        v[v.len() / 2]
    }
}

/// Maximum-likelihood fit of one `(β, l, σ)` per output dimension.
///
/// Length scales are searched on a log grid spanning four decades around the
/// median input distance; for each one the unit kernel matrix is
/// eigendecomposed once and shared by all dimensions, which makes every
/// likelihood evaluation in `(β, σ)` linear in the number of records.
pub fn fit(data: &TrajectoryDataset, opts: &FitOptions) -> Result<GpModel> {
    let m = data.len();
    if m < MIN_RECORDS {
        return Err(Error::TooFewRecords {
            min: MIN_RECORDS,
            got: m,
        });
    }
    if opts.restarts == 0 || opts.length_scales == 0 {
        return Err(Error::InvalidParameter(
            "restarts and length_scales must be positive".into(),
        ));
    }
    let d2 = pairwise_sq_dists(&data.inputs);
    let positive: Vec<f64> = (0..m)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| d2[(i, j)])
        .filter(|d| *d > 0.0)
        .map(f64::sqrt)
        .collect();
    let scale_z = if positive.is_empty() { 1.0 } else { median(positive) };
    let ny = data.outputs.ncols();
    let ys: Vec<DVector<f64>> = (0..ny).map(|i| data.outputs.column(i).into_owned()).collect();
    let y_scale: Vec<f64> = ys
        .iter()
        .map(|y| (y.norm_squared() / m as f64).sqrt().max(1e-3))
        .collect();

    let grid: Vec<f64> = (0..opts.length_scales)
        .map(|k| {
            let t = if opts.length_scales == 1 {
                0.5
            } else {
                k as f64 / (opts.length_scales - 1) as f64
            };
            scale_z * 10f64.powf(-2.0 + 4.0 * t)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<[f64; 2]> = (0..opts.restarts)
        .map(|_| {
            [
                rng.gen_range(-2.0..2.0) * std::f64::consts::LN_10,
                rng.gen_range(-2.0..2.0) * std::f64::consts::LN_10,
            ]
        })
        .collect();

    let mut best: Vec<(f64, KernelHyperparams)> = vec![
        (
            f64::NEG_INFINITY,
            KernelHyperparams {
                beta: 1.0,
                length_scale: scale_z,
                sigma: 1.0
            }
        );
        ny
    ];
    for &l in &grid {
        let g = -0.5 / (l * l);
        let r = d2.map(|d| (g * d).exp());
        let eig = SymmetricEigen::new(r);
        let lam: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        let vt = eig.eigenvectors.transpose();
        for (i, y) in ys.iter().enumerate() {
            let a: Vec<f64> = (&vt * y).iter().copied().collect();
            let ln_scale = y_scale[i].ln();
            let floor = ln_scale + (1e-4f64).ln();
            for s in &starts {
                let start = [ln_scale + s[0], ln_scale + s[1]];
                let (x, f) = ascend(&lam, &a, start, floor, opts.jitter.initial, opts.max_iters);
                if f > best[i].0 {
                    best[i] = (
                        f,
                        KernelHyperparams {
                            beta: x[0].exp(),
                            length_scale: l,
                            sigma: x[1].exp(),
                        },
                    );
                }
            }
        }
    }
    let hps = best.into_iter().map(|b| b.1).collect();
    GpModel::with_hyperparams(data, hps, opts.jitter)
}

/// Constant-velocity world-frame record: straight motion at `speed` along `heading`.
pub fn constant_velocity_record(
    start: [f64; 2],
    heading: f64,
    speed: f64,
    ts: f64,
) -> (Vec<HistoryState>, Vec<FuturePose>) {
    let (s, c) = heading.sin_cos();
    let at = |k: f64| [start[0] + c * speed * ts * k, start[1] + s * speed * ts * k];
    let hist = (0..HISTORY_LEN)
        .map(|k| {
            let p = at(k as f64);
            [p[0], p[1], heading, speed, 0.0]
        })
        .collect();
    let fut = (1..=FUTURE_LEN)
        .map(|k| {
            let p = at((HISTORY_LEN - 1 + k) as f64);
            [p[0], p[1], heading]
        })
        .collect();
    (hist, fut)
}

/// Synthetic constant-velocity dataset with random starts, headings and speeds.
pub fn synthetic_constant_velocity(m: usize, seed: u64, ts: f64, max_speed: f64) -> TrajectoryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<_> = (0..m)
        .map(|_| {
            let start = [rng.gen_range(-300.0..300.0), rng.gen_range(-300.0..300.0)];
            let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let speed = rng.gen_range(0.0..max_speed);
            constant_velocity_record(start, heading, speed, ts)
        })
        .collect();
    TrajectoryDataset::from_world(&pairs).expect("records have the right arity")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::OnceLock;

    fn cv_model() -> &'static (TrajectoryDataset, GpModel) {
        static M: OnceLock<(TrajectoryDataset, GpModel)> = OnceLock::new();
        M.get_or_init(|| {
            let data = synthetic_constant_velocity(200, 5, 0.05, 15.0);
            let model = fit(
                &data,
                &FitOptions {
                    restarts: 3,
                    length_scales: 9,
                    ..Default::default()
                },
            )
            .unwrap();
            (data, model)
        })
    }

    #[test]
    fn centering_constant_position() {
        let hist = vec![[100.0, 200.0, 0.3, 0.0, 0.0]; 15];
        let fut = vec![[100.0, 200.0, 0.3]; 10];
        let r = center_record(&hist, &fut).unwrap();
        for k in 0..15 {
            assert_eq!((r.z[5 * k], r.z[5 * k + 1], r.z[5 * k + 2]), (0.0, 0.0, 0.3));
        }
        for k in 0..10 {
            assert_eq!((r.y[3 * k], r.y[3 * k + 1]), (0.0, 0.0));
        }
        assert_eq!(r.offset, [100.0, 200.0]);
    }

    #[test]
    fn centering_is_translation_invariant() {
        let (h, f) = constant_velocity_record([50.0, 0.0], 0.0, 20.0, 0.05);
        let r = center_record(&h, &f).unwrap();
        for k in 0..15 {
            assert!((r.z[5 * k] - k as f64).abs() < 1e-12);
        }
        assert!((r.y[0] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn centering_arity() {
        let (h, f) = constant_velocity_record([0.0, 0.0], 0.0, 1.0, 0.05);
        assert!(matches!(
            center_record(&h[..14], &f),
            Err(Error::ArityMismatch { expected: 15, got: 14 })
        ));
        assert!(matches!(center_record(&h, &f[..9]), Err(Error::ArityMismatch { .. })));
    }

    #[test]
    fn gram_examples() {
        let hp = KernelHyperparams {
            beta: 0.7,
            length_scale: 1.0,
            sigma: 0.0,
        };
        let one = gram_matrix(&DMatrix::from_row_slice(1, 1, &[3.0]), &hp);
        assert!((one[(0, 0)] - 0.49).abs() < 1e-15);
        let unit = KernelHyperparams { beta: 1.0, ..hp };
        let same = gram_matrix(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]), &unit);
        assert!(same.iter().all(|v| *v == 1.0));
        let g = gram_matrix(&DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), &unit);
        assert!((g[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(g, g.transpose());
    }

    #[test]
    fn too_few_records() {
        let data = synthetic_constant_velocity(5, 1, 0.05, 10.0);
        assert!(matches!(
            fit(&data, &FitOptions::default()),
            Err(Error::TooFewRecords { min: 10, got: 5 })
        ));
    }

    #[test]
    fn identical_records_fit_through_jitter() {
        let (h, f) = constant_velocity_record([3.0, 4.0], 0.5, 8.0, 0.05);
        let data = TrajectoryDataset::from_world(&vec![(h.clone(), f); 12]).unwrap();
        let model = fit(
            &data,
            &FitOptions {
                restarts: 2,
                length_scales: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let p = model.predict(&h).unwrap();
        assert!(p.mean.iter().all(|v| v.is_finite()));
        assert!(p.variance.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn fitted_model_reproduces_training_outputs() {
        let (data, model) = cv_model();
        for r in (0..data.len()).step_by(17) {
            let z = row(&data.inputs, r);
            let (mean, _) = model.predict_centered(&z, false);
            for (i, m) in mean.iter().enumerate() {
                let noise = model.hyperparams()[i].sigma;
                assert!(
                    (m - data.outputs[(r, i)]).abs() <= 3.0 * noise + 1e-3,
                    "record {r} dim {i}"
                );
            }
        }
    }

    #[test]
    fn far_query_falls_back_to_prior() {
        let (_, model) = cv_model();
        let hist: Vec<HistoryState> = (0..15).map(|k| [k as f64 * 1e4, 0.0, 0.0, 1e4, 0.0]).collect();
        let p = model.predict(&hist).unwrap();
        for i in 0..NY {
            let b2 = model.hyperparams()[i].beta.powi(2);
            assert!(p.mean[i].abs() < 1e-6 * (1.0 + b2));
            assert!((p.variance[i] - b2).abs() <= 1e-9 * b2.max(1.0));
        }
    }

    #[test]
    fn constant_velocity_prediction_is_accurate() {
        let (_, model) = cv_model();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut se = 0.0;
        let mut count = 0.0;
        for _ in 0..40 {
            let start = [rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0)];
            let (h, f) = constant_velocity_record(start, rng.gen_range(-3.0..3.0), rng.gen_range(1.0..14.0), 0.05);
            let p = model.predict_mean(&h).unwrap();
            for (w, t) in p.waypoints.iter().zip(&f) {
                se += (w[0] - t[0]).powi(2) + (w[1] - t[1]).powi(2);
                count += 1.0;
            }
        }
        let rmse = (se / count).sqrt();
        assert!(rmse <= 0.5, "rmse {rmse}");
    }

    #[test]
    fn model_and_dataset_files_round_trip() {
        let (data, model) = cv_model();
        let back = GpModel::from_json(&model.to_json().unwrap()).unwrap();
        let (h, _) = constant_velocity_record([10.0, -5.0], 1.0, 9.0, 0.05);
        assert_eq!(model.predict(&h).unwrap(), back.predict(&h).unwrap());

        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let again = TrajectoryDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(again.len(), data.len());
        assert!((again.inputs.clone() - data.inputs.clone()).amax() < 1e-5);
        assert!((again.outputs.clone() - data.outputs.clone()).amax() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn predictions_are_translation_equivariant(
            dx in -500.0f64..500.0, dy in -500.0f64..500.0,
            heading in -3.0f64..3.0, speed in 0.5f64..14.0,
        ) {
            let (_, model) = cv_model();
            let (h, _) = constant_velocity_record([1.0, 2.0], heading, speed, 0.05);
            let moved: Vec<HistoryState> = h.iter().map(|s| [s[0] + dx, s[1] + dy, s[2], s[3], s[4]]).collect();
            let a = model.predict(&h).unwrap();
            let b = model.predict(&moved).unwrap();
            for (p, q) in a.waypoints.iter().zip(&b.waypoints) {
                prop_assert!((q[0] - p[0] - dx).abs() <= 1e-9);
                prop_assert!((q[1] - p[1] - dy).abs() <= 1e-9);
            }
            prop_assert!(b.variance.iter().all(|v| *v >= 0.0));
        }
    }
}
