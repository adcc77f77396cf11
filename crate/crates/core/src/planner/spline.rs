//! Natural cubic splines and arc-length parameterised planar paths.

use crate::error::{Error, Result};

/// Piecewise cubic `S(x) = a_i + b_i h + c_i h^2 + d_i h^3`, `h = x - x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

/// Fit a natural cubic spline through `(x_i, y_i)` with strictly increasing `x_i`.
pub fn fit_spline(knots: &[(f64, f64)]) -> Result<CubicSpline> {
    for w in knots.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::DegenerateKnots);
        }
    }
    if knots.len() < 3 {
        return Err(Error::Precondition(format!(
            "cubic spline needs at least 3 knots, got {}",
            knots.len()
        )));
    }
    let n = knots.len() - 1;
    let x: Vec<f64> = knots.iter().map(|k| k.0).collect();
    let a: Vec<f64> = knots.iter().map(|k| k.1).collect();
    let h: Vec<f64> = (0..n).map(|i| x[i + 1] - x[i]).collect();

    // Tridiagonal system for the interior c_i; natural ends fix c_0 = c_n = 0.
    let m = n - 1;
    let mut diag = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for k in 0..m {
        let i = k + 1;
        diag[k] = 2.0 * (h[i - 1] + h[i]);
        rhs[k] = 3.0 * ((a[i + 1] - a[i]) / h[i] - (a[i] - a[i - 1]) / h[i - 1]);
    }
    // Thomas algorithm; off-diagonals are h[k] (below) and h[k+1] (above).
    for k in 1..m {
        let w = h[k] / diag[k - 1];
        diag[k] -= w * h[k];
        rhs[k] -= w * rhs[k - 1];
    }
    let mut c = vec![0.0; n + 1];
    for k in (0..m).rev() {
        let upper = if k + 1 < m { h[k + 1] * c[k + 2] } else { 0.0 };
        c[k + 1] = (rhs[k] - upper) / diag[k];
    }
    let mut b = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        b[i] = (a[i + 1] - a[i]) / h[i] - h[i] * (2.0 * c[i] + c[i + 1]) / 3.0;
        d[i] = (c[i + 1] - c[i]) / (3.0 * h[i]);
    }
    c.truncate(n);
    let mut a = a;
    a.truncate(n);
    Ok(CubicSpline { x, a, b, c, d })
}

impl CubicSpline {
    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.a.len();
        match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Value, first and second derivative. Outside the domain the end cubic is extended.
    pub fn eval_all(&self, t: f64) -> (f64, f64, f64) {
        let i = self.interval(t);
        let h = t - self.x[i];
        let (a, b, c, d) = (self.a[i], self.b[i], self.c[i], self.d[i]);
        (
            a + h * (b + h * (c + h * d)),
            b + h * (2.0 * c + 3.0 * d * h),
            2.0 * c + 6.0 * d * h,
        )
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_all(t).0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.eval_all(t).1
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        self.eval_all(t).2
    }
}

/// Planar path `(x(s), y(s))` with both coordinates splined over cumulative chord length.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpline {
    pub sx: CubicSpline,
    pub sy: CubicSpline,
}

impl PathSpline {
    pub fn fit(points: &[[f64; 2]]) -> Result<Self> {
        let mut s = 0.0;
        let mut kx = Vec::with_capacity(points.len());
        let mut ky = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                let q = points[i - 1];
                s += (p[0] - q[0]).hypot(p[1] - q[1]);
            }
            kx.push((s, p[0]));
            ky.push((s, p[1]));
        }
        Ok(Self {
            sx: fit_spline(&kx)?,
            sy: fit_spline(&ky)?,
        })
    }

    pub fn length(&self) -> f64 {
        self.sx.domain().1
    }

    pub fn point(&self, s: f64) -> [f64; 2] {
        [self.sx.eval(s), self.sy.eval(s)]
    }

    pub fn heading(&self, s: f64) -> f64 {
        self.sy.derivative(s).atan2(self.sx.derivative(s))
    }

    /// Signed curvature, positive for left turns.
    pub fn curvature(&self, s: f64) -> f64 {
        let (_, dx, ddx) = self.sx.eval_all(s);
        let (_, dy, ddy) = self.sy.eval_all(s);
        let n = (dx * dx + dy * dy).powf(1.5).max(1e-12);
        (dx * ddy - dy * ddx) / n
    }
}
