//! PolyCG: Fletcher–Reeves conjugate gradient over the coefficient tensors.
//!
//! The coefficients `(W₀, W₁, …, W_d)` enter the predictions linearly, so the
//! fitting problem is a least-squares problem in one long parameter vector.
//! Each iteration needs the predictions of a direction (`f_P`) and the
//! gradient tensors
//!
//! ```text
//! Rᵢ = Σ_p 2 (f(x_p) − y_p) · x̃ᵢ,p ⊗ … ⊗ x̃ᵢ,p   (+ 2λᵢWᵢ)
//! ```
//!
//! Both are computed chunk-wise over rows: for order `i` the rows of a chunk
//! are lifted to their `(i−1)`-fold Kronecker powers and combined with the
//! tensor (reshaped to `k^{i−1} × k`) through one GEMM, so the full outer
//! product is never held in memory. Partial gradients are reduced in chunk
//! order, making results independent of the thread count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dim_reduction::{apply_reduction, ReductionMap};
use crate::error::{check_dims, HopsError, Result};
use crate::numerics::{dot, gemm, Matrix};
use crate::poly_model::{check_reductions, Coefficients, PolyModel, PolySpec};

const CHUNK_ROWS: usize = 512;

/// How the step length `α` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// `Σ‖Rᵢ‖² / (2 Σ_p f_R(x_p)²)`, the residual tensors standing in for
    /// the direction in the denominator.
    Paper,
    /// Exact minimizer of the (quadratic) loss along the search direction.
    #[default]
    ExactLineSearch,
}

impl std::str::FromStr for AlphaMode {
    type Err = HopsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(AlphaMode::Paper),
            "exact" | "exact-line-search" => Ok(AlphaMode::ExactLineSearch),
            _ => Err(HopsError::InvalidParameter(format!(
                "unknown alpha mode '{s}'; valid: paper, exact-line-search"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub tolerance: f64,
    pub alpha_mode: AlphaMode,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tolerance: 1e-7,
            alpha_mode: AlphaMode::ExactLineSearch,
            record_trace: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(HopsError::InvalidParameter("max_iter must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(HopsError::InvalidParameter("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative loss change fell below the tolerance.
    Tolerance,
    MaxIter,
    /// Zero loss or zero gradient.
    Converged,
    /// The direction predicts zero everywhere; no further progress possible.
    DirectionAnnihilated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Loss after the update of this iteration.
    pub loss: f64,
    pub alpha: f64,
    /// `None` when the loop stopped before computing it.
    pub beta: Option<f64>,
    /// `sqrt(Σᵢ‖Rᵢ‖²)` of the gradient this iteration stepped along.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub initial_loss: f64,
    pub iterations: Vec<IterationRecord>,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
}

impl SolverTrace {
    pub fn final_loss(&self) -> f64 {
        self.iterations.last().map_or(self.initial_loss, |r| r.loss)
    }

    /// `iteration,loss,alpha,beta,grad_norm`; `beta` empty when absent.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "loss", "alpha", "beta", "grad_norm"])?;
        for r in &self.iterations {
            out.write_record([
                r.iteration.to_string(),
                r.loss.to_string(),
                r.alpha.to_string(),
                r.beta.map_or_else(String::new, |b| b.to_string()),
                r.grad_norm.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-order embedded inputs `X̃ᵢ = X·Lᵢ` (order 1: `X` itself).
#[derive(Debug, Clone)]
pub struct ReducedDesign {
    rows: usize,
    /// `bases[i - 1]`; `None` when order `i` is absent.
    bases: Vec<Option<Matrix>>,
}

impl ReducedDesign {
    /// Embeds normalized features `x` for every order of `spec`.
    pub fn new(x: &Matrix, spec: &PolySpec, reductions: &[Option<ReductionMap>]) -> Result<Self> {
        check_dims("ReducedDesign input columns", spec.input_dim(), x.cols())?;
        check_reductions(spec, reductions)?;
        let higher = match spec.trend_column() {
            Some(t) if spec.max_order() > 1 => Some(x.without_column(t)),
            _ => None,
        };
        let mut bases = Vec::with_capacity(spec.max_order());
        for order in 1..=spec.max_order() {
            if spec.k(order) == 0 {
                bases.push(None);
            } else if order == 1 {
                bases.push(Some(x.clone()));
            } else {
                let map = reductions[order - 2].as_ref().expect("checked");
                let src = higher.as_ref().unwrap_or(x);
                bases.push(Some(apply_reduction(src, map)?));
            }
        }
        Ok(Self { rows: x.rows(), bases })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn max_order(&self) -> usize {
        self.bases.len()
    }

    /// `X̃ᵢ`, if order `i` is present.
    pub fn base(&self, order: usize) -> Option<&Matrix> {
        self.bases[order - 1].as_ref()
    }

    fn chunks(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .step_by(CHUNK_ROWS)
            .map(|s| (s, (s + CHUNK_ROWS).min(self.rows)))
            .collect()
    }

    /// Predictions `f(x_p)` of an arbitrary coefficient set.
    pub fn predict(&self, coeffs: &Coefficients) -> Vec<f64> {
        let parts: Vec<Vec<f64>> = self
            .chunks()
            .into_par_iter()
            .map(|(s, e)| self.predict_chunk(coeffs, s, e))
            .collect();
        parts.concat()
    }

    fn predict_chunk(&self, coeffs: &Coefficients, start: usize, end: usize) -> Vec<f64> {
        let rows = end - start;
        let mut out = vec![coeffs.w0; rows];
        for (idx, base) in self.bases.iter().enumerate() {
            let Some(base) = base else { continue };
            let order = idx + 1;
            let k = base.cols();
            let block = &base.data()[start * k..end * k];
            let w = coeffs.tensor(order);
            if order == 1 {
                for (o, row) in out.iter_mut().zip(block.chunks_exact(k)) {
                    *o += dot(row, w);
                }
                continue;
            }
            let lifted = lift_block(block, k, order - 1);
            let width = k.pow(order as u32 - 1);
            let mut t = vec![0.0; rows * k];
            gemm(
                rows,
                width,
                k,
                1.0,
                (&lifted, width as isize, 1),
                (w, k as isize, 1),
                0.0,
                &mut t,
            );
            for ((o, trow), row) in out.iter_mut().zip(t.chunks_exact(k)).zip(block.chunks_exact(k)) {
                *o += dot(trow, row);
            }
        }
        out
    }

    /// `Σ_p weights_p · X̃ᵢ(x_p)` for every order, `W₀` slot receiving
    /// `Σ_p weights_p`.
    pub fn weighted_lift_sum(&self, weights: &[f64]) -> Coefficients {
        let parts: Vec<Coefficients> = self
            .chunks()
            .into_par_iter()
            .map(|(s, e)| self.lift_sum_chunk(weights, s, e))
            .collect();
        let mut iter = parts.into_iter();
        let mut total = iter.next().unwrap_or_else(|| self.zero_coeffs());
        for p in iter {
            total.axpy(1.0, &p);
        }
        total
    }

    fn zero_coeffs(&self) -> Coefficients {
        Coefficients {
            w0: 0.0,
            tensors: self
                .bases
                .iter()
                .enumerate()
                .map(|(i, b)| vec![0.0; b.as_ref().map_or(0, |b| b.cols().pow(i as u32 + 1))])
                .collect(),
        }
    }

    fn lift_sum_chunk(&self, weights: &[f64], start: usize, end: usize) -> Coefficients {
        let rows = end - start;
        let wts = &weights[start..end];
        let mut acc = self.zero_coeffs();
        acc.w0 = wts.iter().sum();
        for (idx, base) in self.bases.iter().enumerate() {
            let Some(base) = base else { continue };
            let order = idx + 1;
            let k = base.cols();
            let block = &base.data()[start * k..end * k];
            let g = acc.tensor_mut(order);
            if order == 1 {
                for (row, &wp) in block.chunks_exact(k).zip(wts) {
                    for (gi, &xi) in g.iter_mut().zip(row) {
                        *gi += wp * xi;
                    }
                }
                continue;
            }
            let lifted = lift_block(block, k, order - 1);
            let width = k.pow(order as u32 - 1);
            let scaled: Vec<f64> = block
                .chunks_exact(k)
                .zip(wts)
                .flat_map(|(row, &wp)| row.iter().map(move |v| v * wp))
                .collect();
            // G (width × k) = liftedᵀ · diag(w) · X̃
            gemm(
                width,
                rows,
                k,
                1.0,
                (&lifted, 1, width as isize),
                (&scaled, k as isize, 1),
                0.0,
                g,
            );
        }
        acc
    }
}

/// Row-wise `power`-fold Kronecker product of each `k`-row in `block`.
fn lift_block(block: &[f64], k: usize, power: usize) -> Vec<f64> {
    if power == 1 {
        return block.to_vec();
    }
    let width = k.pow(power as u32);
    let mut out = Vec::with_capacity(block.len() / k * width);
    let mut cur = Vec::with_capacity(width);
    let mut next = Vec::with_capacity(width);
    for row in block.chunks_exact(k) {
        cur.clear();
        cur.push(1.0);
        for _ in 0..power {
            next.clear();
            for &a in &cur {
                next.extend(row.iter().map(|&c| a * c));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.extend_from_slice(&cur);
    }
    out
}

/// Gradient tensors `R₀ … R_d` of the penalized squared loss at `state`,
/// together with the residuals `f(x_p) − y_p`.
pub fn gradient(
    state: &Coefficients,
    design: &ReducedDesign,
    y: &[f64],
    lambda: &[f64],
) -> Result<(Coefficients, Vec<f64>)> {
    check_dims("gradient target length", design.rows(), y.len())?;
    check_dims("gradient lambda length", design.max_order() + 1, lambda.len())?;
    let residual: Vec<f64> = design
        .predict(state)
        .iter()
        .zip(y)
        .map(|(f, t)| f - t)
        .collect();
    Ok((gradient_at(state, design, &residual, lambda), residual))
}

fn gradient_at(
    state: &Coefficients,
    design: &ReducedDesign,
    residual: &[f64],
    lambda: &[f64],
) -> Coefficients {
    let twice: Vec<f64> = residual.iter().map(|r| 2.0 * r).collect();
    let mut g = design.weighted_lift_sum(&twice);
    if lambda.iter().any(|&l| l != 0.0) {
        g.w0 += 2.0 * lambda[0] * state.w0;
        for (i, (gt, wt)) in g.tensors.iter_mut().zip(&state.tensors).enumerate() {
            let l = lambda[i + 1];
            if l != 0.0 {
                for (a, b) in gt.iter_mut().zip(wt) {
                    *a += 2.0 * l * b;
                }
            }
        }
    }
    g
}

fn penalty(state: &Coefficients, lambda: &[f64]) -> f64 {
    state.weighted_dot(state, lambda)
}

/// Step length along `direction`.
///
/// `residual` is `f(x_p) − y_p` at `state`, `grad` the gradient there and
/// `grad_norm_sq` its summed squared Frobenius norm. In paper mode the
/// denominator evaluates the polynomial with the gradient tensors as
/// coefficients (constant channel included); in exact mode the returned
/// value minimizes the loss along `direction`. Returns `None` when the
/// denominator vanishes.
pub fn step_size(
    mode: AlphaMode,
    state: &Coefficients,
    grad: &Coefficients,
    grad_norm_sq: f64,
    direction: &Coefficients,
    direction_pred: &[f64],
    residual: &[f64],
    design: &ReducedDesign,
    lambda: &[f64],
) -> Option<f64> {
    match mode {
        AlphaMode::Paper => {
            let f_r = design.predict(grad);
            let denom = 2.0 * f_r.iter().map(|v| v * v).sum::<f64>();
            (denom > 0.0).then(|| grad_norm_sq / denom)
        }
        AlphaMode::ExactLineSearch => {
            let denom = direction_pred.iter().map(|v| v * v).sum::<f64>()
                + direction.weighted_dot(direction, lambda);
            let slope = dot(residual, direction_pred) + state.weighted_dot(direction, lambda);
            (denom > 0.0).then(|| -slope / denom)
        }
    }
}

/// Runs PolyCG from zero coefficients on normalized features `x`.
pub fn fit(
    x: &Matrix,
    y: &[f64],
    spec: &PolySpec,
    reductions: Vec<Option<ReductionMap>>,
    config: &SolverConfig,
) -> Result<(PolyModel, SolverTrace)> {
    check_dims("fit target length", x.rows(), y.len())?;
    if let Some(index) = y.iter().position(|v| !v.is_finite()) {
        return Err(HopsError::NonFinite {
            context: "fit targets",
            index,
        });
    }
    let design = ReducedDesign::new(x, spec, &reductions)?;
    let (coeffs, trace) = fit_design(&design, y, spec, config)?;
    Ok((PolyModel::new(spec.clone(), coeffs, reductions)?, trace))
}

/// PolyCG on a prepared [`ReducedDesign`].
pub fn fit_design(
    design: &ReducedDesign,
    y: &[f64],
    spec: &PolySpec,
    config: &SolverConfig,
) -> Result<(Coefficients, SolverTrace)> {
    config.validate()?;
    check_dims("fit_design target length", design.rows(), y.len())?;
    let lambda = spec.lambda();
    let mut w = Coefficients::zeros(spec);
    let (mut grad, mut residual) = gradient(&w, design, y, lambda)?;
    let mut loss = sse(&residual) + penalty(&w, lambda);
    let mut grad_norm_sq = grad.norm_sq();
    let mut direction = grad.scaled(-1.0);
    let mut trace = SolverTrace {
        initial_loss: loss,
        iterations: Vec::new(),
        iterations_run: 0,
        stop_reason: StopReason::MaxIter,
    };
    if !loss.is_finite() || !grad.is_finite() {
        return Err(HopsError::Divergence {
            iteration: 0,
            trace: Box::new(trace),
        });
    }
    if loss == 0.0 || grad_norm_sq == 0.0 {
        trace.stop_reason = StopReason::Converged;
        return Ok((w, trace));
    }

    for j in 0..config.max_iter {
        let direction_pred = design.predict(&direction);
        let Some(alpha) = step_size(
            config.alpha_mode,
            &w,
            &grad,
            grad_norm_sq,
            &direction,
            &direction_pred,
            &residual,
            design,
            lambda,
        ) else {
            trace.stop_reason = StopReason::DirectionAnnihilated;
            break;
        };
        w.axpy(alpha, &direction);
        for (r, fp) in residual.iter_mut().zip(&direction_pred) {
            *r += alpha * fp;
        }
        let new_loss = sse(&residual) + penalty(&w, lambda);
        trace.iterations_run = j + 1;
        let mut record = IterationRecord {
            iteration: j,
            loss: new_loss,
            alpha,
            beta: None,
            grad_norm: grad_norm_sq.sqrt(),
        };
        if !new_loss.is_finite() || !alpha.is_finite() || !w.is_finite() {
            trace.iterations.push(record);
            return Err(HopsError::Divergence {
                iteration: j,
                trace: Box::new(trace),
            });
        }
        let rel_change = (new_loss - loss).abs() / loss;
        loss = new_loss;
        if loss == 0.0 {
            push(&mut trace, record, config);
            trace.stop_reason = StopReason::Converged;
            break;
        }
        if rel_change <= config.tolerance {
            push(&mut trace, record, config);
            trace.stop_reason = StopReason::Tolerance;
            break;
        }
        grad = gradient_at(&w, design, &residual, lambda);
        let new_norm_sq = grad.norm_sq();
        let beta = new_norm_sq / grad_norm_sq;
        record.beta = Some(beta);
        push(&mut trace, record, config);
        grad_norm_sq = new_norm_sq;
        if grad_norm_sq == 0.0 {
            trace.stop_reason = StopReason::Converged;
            break;
        }
        // P ← −R + βP
        direction.scale_add(beta, &grad.scaled(-1.0));
    }
    Ok((w, trace))
}

fn push(trace: &mut SolverTrace, record: IterationRecord, config: &SolverConfig) {
    if config.record_trace {
        trace.iterations.push(record);
    }
}

fn sse(residual: &[f64]) -> f64 {
    residual.iter().map(|r| r * r).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::lstsq_minnorm;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn lift_block_matches_outer_product() {
        let block = [1.0, 2.0, 3.0, -1.0];
        let lifted = lift_block(&block, 2, 2);
        assert_eq!(lifted, vec![1.0, 2.0, 2.0, 4.0, 9.0, -3.0, -3.0, 1.0]);
    }

    #[test]
    fn linear_gradient_closed_form() {
        let mut seed = 3;
        let x = Matrix::from_fn(7, 3, |_, _| lcg(&mut seed));
        let y: Vec<f64> = (0..7).map(|_| lcg(&mut seed)).collect();
        let spec = PolySpec::new(3, vec![3], None).unwrap();
        let design = ReducedDesign::new(&x, &spec, &[]).unwrap();
        let state = Coefficients { w0: 0.3, tensors: vec![vec![0.1, -0.2, 0.5]] };
        let (g, r) = gradient(&state, &design, &y, &[0.0, 0.0]).unwrap();
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let expected = x.t_matvec(&twice).unwrap();
        for (a, b) in g.tensor(1).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((g.w0 - twice.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let spec = PolySpec::new(2, vec![2], None).unwrap();
        let design = ReducedDesign::new(&x, &spec, &[]).unwrap();
        let state = Coefficients { w0: 1.0, tensors: vec![vec![2.0, 3.0]] };
        let y = design.predict(&state);
        let (g, _) = gradient(&state, &design, &y, &[0.0, 0.0]).unwrap();
        assert_eq!(g.norm_sq(), 0.0);
    }

    #[test]
    fn first_step_modes_agree() {
        let mut seed = 5;
        let x = Matrix::from_fn(10, 2, |_, _| lcg(&mut seed));
        let y: Vec<f64> = (0..10).map(|_| lcg(&mut seed)).collect();
        let spec = PolySpec::new(2, vec![2], None).unwrap();
        let design = ReducedDesign::new(&x, &spec, &[]).unwrap();
        let w = Coefficients::zeros(&spec);
        let lambda = [0.0; 2];
        let (g, r) = gradient(&w, &design, &y, &lambda).unwrap();
        let p = g.scaled(-1.0);
        let fp = design.predict(&p);
        let a = step_size(AlphaMode::Paper, &w, &g, g.norm_sq(), &p, &fp, &r, &design, &lambda).unwrap();
        let b = step_size(AlphaMode::ExactLineSearch, &w, &g, g.norm_sq(), &p, &fp, &r, &design, &lambda)
            .unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs());
    }

    #[test]
    fn one_dimensional_paper_alpha_is_half() {
        // Identity design without intercept: f_R = R, so α = ‖R‖² / (2‖R‖²).
        let x = Matrix::identity(3);
        let spec = PolySpec::new(3, vec![3], None).unwrap();
        let design = ReducedDesign::new(&x, &spec, &[]).unwrap();
        let w = Coefficients::zeros(&spec);
        let y = [1.0, -2.0, 0.5];
        let (mut g, r) = gradient(&w, &design, &y, &[0.0; 2]).unwrap();
        g.w0 = 0.0;
        let p = g.scaled(-1.0);
        let fp = design.predict(&p);
        let a = step_size(AlphaMode::Paper, &w, &g, g.norm_sq(), &p, &fp, &r, &design, &[0.0; 2]).unwrap();
        assert!((a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_target_intercept_only() {
        let x = Matrix::from_fn(6, 2, |i, j| (i + j) as f64);
        let spec = PolySpec::new(2, vec![0], None).unwrap();
        let (model, trace) = fit(&x, &[4.0; 6], &spec, vec![], &SolverConfig::default()).unwrap();
        assert!(trace.iterations_run <= 2);
        assert!((model.coeffs.w0 - 4.0).abs() < 1e-12);
        assert_eq!(trace.stop_reason, StopReason::Converged);
    }

    #[test]
    fn linear_fit_matches_ols() {
        let mut seed = 9;
        let x = Matrix::from_fn(30, 4, |_, _| lcg(&mut seed));
        let y: Vec<f64> = (0..30).map(|_| lcg(&mut seed)).collect();
        let spec = PolySpec::new(4, vec![4], None).unwrap();
        let config = SolverConfig { tolerance: 1e-14, ..Default::default() };
        let (model, _) = fit(&x, &y, &spec, vec![], &config).unwrap();
        let fitted = model.evaluate_batch(&x).unwrap();
        let with_intercept = Matrix::from_fn(30, 5, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
        let w = lstsq_minnorm(&with_intercept, &y).unwrap();
        let ols = with_intercept.matvec(&w).unwrap();
        let num: f64 = fitted.iter().zip(&ols).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = ols.iter().map(|v| v * v).sum();
        assert!((num / den).sqrt() < 1e-6);
    }

    #[test]
    fn max_iter_one() {
        let mut seed = 1;
        let x = Matrix::from_fn(12, 2, |_, _| lcg(&mut seed));
        let y: Vec<f64> = (0..12).map(|_| lcg(&mut seed)).collect();
        let spec = PolySpec::new(2, vec![2], None).unwrap();
        let config = SolverConfig { max_iter: 1, ..Default::default() };
        let (_, trace) = fit(&x, &y, &spec, vec![], &config).unwrap();
        assert_eq!(trace.iterations.len(), 1);
        assert_eq!(trace.stop_reason, StopReason::MaxIter);
    }

    #[test]
    fn invalid_config() {
        let x = Matrix::identity(2);
        let spec = PolySpec::new(2, vec![2], None).unwrap();
        let bad = SolverConfig { max_iter: 0, ..Default::default() };
        assert!(fit(&x, &[1.0, 2.0], &spec, vec![], &bad).is_err());
        let bad = SolverConfig { tolerance: 0.0, ..Default::default() };
        assert!(fit(&x, &[1.0, 2.0], &spec, vec![], &bad).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let spec = PolySpec::new(1, vec![1], None).unwrap();
        let err = fit(&x, &[1e300, -1e300], &spec, vec![], &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, HopsError::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn trace_csv_header() {
        let x = Matrix::from_fn(8, 2, |i, j| ((i * 3 + j) % 5) as f64);
        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let spec = PolySpec::new(2, vec![2], None).unwrap();
        let (_, trace) = fit(&x, &y, &spec, vec![], &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,loss,alpha,beta,grad_norm\n"));
        assert_eq!(text.lines().count(), trace.iterations.len() + 1);
    }
}
