//! Smoothing curve `θ(x) = a2 − a1 / √(a3 + (x + a4)⁻⁴)` fitted to discrete
//! pixel samples by damped Gauss-Newton (Levenberg-Marquardt) with a
//! central-difference Jacobian.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Central-difference step for the numerical Jacobian.
pub const JACOBIAN_STEP: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 200;
/// Stop once an accepted step changes the residual by less than this fraction.
pub const RELATIVE_TOLERANCE: f64 = 1e-10;

const MAX_DAMPING: f64 = 1e30;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("x = {x} is the pole of the curve (x + a4 = 0)")]
    Pole { x: f64 },
    #[error("non-positive radicand {radicand} at x = {x}")]
    Radicand { x: f64, radicand: f64 },
    #[error("need at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("normal equations stayed singular under maximum damping (last iterate {last:?})")]
    FitFailed { last: CurveParams },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl CurveParams {
    pub fn new(a1: f64, a2: f64, a3: f64, a4: f64) -> Self {
        Self { a1, a2, a3, a4 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.a1, self.a2, self.a3, self.a4]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

pub fn eval_theta(p: &CurveParams, x: f64) -> Result<f64, FitError> {
    let u = x + p.a4;
    if u == 0.0 {
        return Err(FitError::Pole { x });
    }
    let radicand = p.a3 + u.powi(-4);
    if radicand.is_nan() || radicand <= 0.0 || radicand.is_infinite() {
        return Err(FitError::Radicand { x, radicand });
    }
    Ok(p.a2 - p.a1 / radicand.sqrt())
}

/// Gradient of θ at `x` with respect to (a1, a2, a3, a4) by central differences.
pub fn numeric_gradient(p: &CurveParams, x: f64) -> Result<[f64; 4], FitError> {
    let base = p.to_array();
    let mut grad = [0.0; 4];
    for (i, g) in grad.iter_mut().enumerate() {
        let mut hi = base;
        let mut lo = base;
        hi[i] += JACOBIAN_STEP;
        lo[i] -= JACOBIAN_STEP;
        let f_hi = eval_theta(&CurveParams::from_array(hi), x)?;
        let f_lo = eval_theta(&CurveParams::from_array(lo), x)?;
        *g = (f_hi - f_lo) / (2.0 * JACOBIAN_STEP);
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub points: Vec<(f64, f64)>,
}

impl PointSet {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        Self { points }
    }

    /// Parses `x,y` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, FitError> {
        let mut points = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| FitError::Parse {
                line: idx + 1,
                message,
            };
            let mut cols = line.split(',').map(str::trim);
            let (Some(xs), Some(ys), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(err("expected two comma-separated columns".into()));
            };
            let x = xs.parse::<f64>().map_err(|e| err(format!("x: {e}")))?;
            let y = ys.parse::<f64>().map_err(|e| err(format!("y: {e}")))?;
            points.push((x, y));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `a = (1, mean y, 1, 1 − min x)`, which puts the pole left of every sample.
    pub fn default_init(&self) -> CurveParams {
        let n = self.points.len().max(1) as f64;
        let mean_y = self.points.iter().map(|p| p.1).sum::<f64>() / n;
        let min_x = self
            .points
            .iter()
            .map(|p| p.0)
            .fold(f64::INFINITY, f64::min);
        CurveParams::new(1.0, mean_y, 1.0, 1.0 - min_x)
    }
}

/// Sum of squared residuals.
pub fn residual(p: &CurveParams, points: &PointSet) -> Result<f64, FitError> {
    points.points.iter().try_fold(0.0, |acc, &(x, y)| {
        let e = eval_theta(p, x)? - y;
        Ok(acc + e * e)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: CurveParams,
    pub residual: f64,
    pub iterations: usize,
    /// Residual at the start and after every accepted step.
    pub history: Vec<f64>,
}

/// Parameter document written by the command-line front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl From<&FitReport> for FitDocument {
    fn from(r: &FitReport) -> Self {
        let p = r.params;
        Self {
            a1: p.a1,
            a2: p.a2,
            a3: p.a3,
            a4: p.a4,
            residual: r.residual,
            iterations: r.iterations,
        }
    }
}

pub fn fit_theta(points: &PointSet, init: Option<CurveParams>) -> Result<FitReport, FitError> {
    if points.len() < 4 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    if let Some(i) = points
        .points
        .iter()
        .position(|(x, y)| !x.is_finite() || !y.is_finite())
    {
        return Err(FitError::NonFinite(i));
    }
    let mut params = Vector4::from(init.unwrap_or_else(|| points.default_init()).to_array());
    let mut cost = residual(&CurveParams::from_vector(&params), points)?;
    let mut history = vec![cost];
    let mut damping: Option<f64> = None;
    let mut growth = 2.0;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS && cost > 0.0 {
        iterations += 1;
        let current = CurveParams::from_vector(&params);
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jte = Vector4::<f64>::zeros();
        for &(x, y) in &points.points {
            let row = Vector4::from(numeric_gradient(&current, x)?);
            let e = eval_theta(&current, x)? - y;
            jtj += row * row.transpose();
            jte += row * e;
        }
        let lambda = *damping.get_or_insert_with(|| {
            1e-3 * (0..4).map(|i| jtj[(i, i)]).fold(f64::MIN_POSITIVE, f64::max)
        });

        let mut lambda = lambda;
        let accepted = loop {
            if lambda > MAX_DAMPING {
                break None;
            }
            let system = jtj + Matrix4::identity() * lambda;
            let step = match system.lu().solve(&jte) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => {
                    lambda *= growth;
                    growth *= 2.0;
                    continue;
                }
            };
            let candidate = params - step;
            match residual(&CurveParams::from_vector(&candidate), points) {
                Ok(new_cost) if new_cost < cost => {
                    // gain ratio against the linearised model
                    let predicted = step.dot(&(lambda * step + jte));
                    let rho = (cost - new_cost) / predicted.max(f64::MIN_POSITIVE);
                    lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                    growth = 2.0;
                    break Some((candidate, new_cost, lambda));
                }
                _ => {
                    lambda *= growth;
                    growth *= 2.0;
                }
            }
        };

        let Some((candidate, new_cost, next_lambda)) = accepted else {
            if !jtj.iter().all(|v| v.is_finite()) {
                return Err(FitError::FitFailed {
                    last: CurveParams::from_vector(&params),
                });
            }
            // no descent direction left at any damping
            break;
        };
        let relative = (cost - new_cost) / cost;
        params = candidate;
        cost = new_cost;
        history.push(cost);
        damping = Some(next_lambda);
        if relative < RELATIVE_TOLERANCE {
            break;
        }
    }

    Ok(FitReport {
        params: CurveParams::from_vector(&params),
        residual: cost,
        iterations,
        history,
    })
}
