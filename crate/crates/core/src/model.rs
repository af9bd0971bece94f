//! Individuals: a list of expression-tree features feeding a ridge head.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::data::Dataset;
use crate::expr::{ComplexityTable, ExprError, ExprTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("normal equations are rank deficient")]
    RankDeficient,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("target has zero variance")]
    ConstantTarget,
    #[error("model produced non-finite predictions")]
    NonFinitePrediction,
    #[error("individual has no feature trees")]
    NoFeatures,
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Ridge penalty. The intercept is never penalised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RidgeConfig {
    pub regularization_strength: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            regularization_strength: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    /// Identity tag assigned by the evolutionary loop.
    pub id: u64,
    features: Vec<ExprTree>,
    coefficients: Vec<f64>,
    intercept: f64,
    fitness: f64,
    complexity: u64,
    size: usize,
    case_errors: Option<Vec<f64>>,
}

impl Individual {
    /// An unfitted individual: zero head, infinite fitness.
    pub fn new(features: Vec<ExprTree>) -> Self {
        let mut ind = Self {
            id: 0,
            coefficients: vec![0.0; features.len()],
            features,
            intercept: 0.0,
            fitness: f64::INFINITY,
            complexity: 0,
            size: 0,
            case_errors: None,
        };
        ind.recompute_measures(&ComplexityTable::default());
        ind
    }

    pub fn features(&self) -> &[ExprTree] {
        &self.features
    }

    /// Mutable access to the feature trees. Invalidates the head and caches;
    /// the individual must be refit.
    pub fn features_mut(&mut self) -> &mut Vec<ExprTree> {
        self.fitness = f64::INFINITY;
        self.case_errors = None;
        &mut self.features
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// Sets the head directly; `coefficients` must have one entry per feature.
    pub fn set_head(&mut self, coefficients: Vec<f64>, intercept: f64) -> Result<()> {
        if coefficients.len() != self.features.len() {
            return Err(ModelError::Length(coefficients.len(), self.features.len()));
        }
        self.coefficients = coefficients;
        self.intercept = intercept;
        self.case_errors = None;
        Ok(())
    }

    /// MSE on the data the head was last fit on.
    pub fn fitness(&self) -> f64 {
        self.fitness
    }

    pub fn complexity(&self) -> u64 {
        self.complexity
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cached_case_errors(&self) -> Option<&[f64]> {
        self.case_errors.as_deref()
    }

    pub fn dimensions(&self) -> usize {
        self.features.len()
    }

    pub fn max_depth(&self) -> usize {
        self.features.iter().map(ExprTree::depth).max().unwrap_or(0)
    }

    /// Complexity and size are sums over the feature trees.
    pub fn recompute_measures(&mut self, table: &ComplexityTable) {
        self.complexity = self.features.iter().map(|t| t.complexity(table)).sum();
        self.size = self.features.iter().map(ExprTree::size).sum();
    }

    pub fn report(&self, names: Option<&[String]>) -> ModelReport {
        ModelReport {
            features: self.features.iter().map(|t| t.to_infix(names)).collect(),
            coefficients: self.coefficients.clone(),
            intercept: self.intercept,
            fitness: self.fitness,
            complexity: self.complexity,
            size: self.size,
        }
    }
}

/// Serializable description of a fitted individual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub features: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub fitness: f64,
    pub complexity: u64,
    pub size: usize,
}

/// Feature values in columns, plus a trailing column of ones.
pub fn design_matrix(ind: &Individual, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = x.nrows();
    let m = ind.features.len();
    let mut phi = DMatrix::from_element(d, m + 1, 1.0);
    for (j, tree) in ind.features.iter().enumerate() {
        let col = tree.evaluate(x)?;
        phi.column_mut(j).copy_from_slice(&col);
    }
    Ok(phi)
}

const RANK_TOL: f64 = 1e-12;

/// Solves `(PhiᵀPhi + λI)β = Phiᵀy`, where the last column of `phi` is the
/// intercept and is left out of the penalty.
///
/// The Gram matrix is Jacobi-scaled before the Cholesky factorisation, and
/// one round of iterative refinement is applied.
pub fn fit_ridge(phi: &DMatrix<f64>, y: &DVector<f64>, cfg: &RidgeConfig) -> Result<DVector<f64>> {
    let (d, p) = phi.shape();
    if p == 0 || d == 0 {
        return Err(ModelError::Empty);
    }
    if d != y.len() {
        return Err(ModelError::Length(d, y.len()));
    }
    let lambda = cfg.regularization_strength.max(0.0);
    let mut gram = phi.tr_mul(phi);
    for j in 0..p - 1 {
        gram[(j, j)] += lambda;
    }
    let mut scale = DVector::zeros(p);
    for j in 0..p {
        let g = gram[(j, j)];
        if !g.is_finite() || g <= 0.0 {
            return Err(ModelError::RankDeficient);
        }
        scale[j] = 1.0 / g.sqrt();
    }
    let scaled = DMatrix::from_fn(p, p, |i, j| gram[(i, j)] * scale[i] * scale[j]);
    let chol = scaled.cholesky().ok_or(ModelError::RankDeficient)?;
    if chol.l_dirty().diagonal().iter().any(|&l| l * l < RANK_TOL) {
        return Err(ModelError::RankDeficient);
    }
    let solve = |rhs: DVector<f64>| -> DVector<f64> {
        let scaled_rhs = rhs.component_mul(&scale);
        chol.solve(&scaled_rhs).component_mul(&scale)
    };
    let mut beta = solve(phi.tr_mul(y));
    // refinement on the penalised system
    let mut residual_rhs = phi.tr_mul(&(y - phi * &beta));
    for j in 0..p - 1 {
        residual_rhs[j] -= lambda * beta[j];
    }
    beta += solve(residual_rhs);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(ModelError::RankDeficient);
    }
    Ok(beta)
}

pub fn mse(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(ModelError::Length(y_hat.len(), y.len()));
    }
    if y.is_empty() {
        return Err(ModelError::Empty);
    }
    let sum: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / y.len() as f64)
}

pub fn r2(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(ModelError::Length(y_hat.len(), y.len()));
    }
    if y.len() < 2 {
        return Err(ModelError::Empty);
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(ModelError::ConstantTarget);
    }
    let ss_res: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn predict(ind: &Individual, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut out = vec![ind.intercept; x.nrows()];
    for (tree, &c) in ind.features.iter().zip(&ind.coefficients) {
        if c == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(tree.evaluate(x)?) {
            *o += c * v;
        }
    }
    Ok(out)
}

/// Absolute error on every row of `ds`; the result is cached in `ind`.
pub fn case_errors<'a>(ind: &'a mut Individual, ds: &Dataset) -> Result<&'a [f64]> {
    let pred = predict(ind, ds.features())?;
    let errs: Vec<f64> = pred
        .iter()
        .zip(ds.targets().iter())
        .map(|(p, y)| (p - y).abs())
        .collect();
    if errs.iter().any(|e| !e.is_finite()) {
        return Err(ModelError::NonFinitePrediction);
    }
    ind.case_errors = Some(errs);
    Ok(ind.case_errors.as_deref().unwrap_or_default())
}

/// Fits the ridge head on `fit_data` and sets fitness to the resulting MSE.
pub fn fit_individual(ind: &Individual, fit_data: &Dataset, cfg: &RidgeConfig) -> Result<Individual> {
    if ind.features.is_empty() {
        return Err(ModelError::NoFeatures);
    }
    let phi = design_matrix(ind, fit_data.features())?;
    let beta = fit_ridge(&phi, fit_data.targets(), cfg)?;
    let m = ind.features.len();
    let mut out = ind.clone();
    out.coefficients = beta.as_slice()[..m].to_vec();
    out.intercept = beta[m];
    out.case_errors = None;
    out.recompute_measures(&ComplexityTable::default());
    // same summation order as `predict`, so fitness equals its MSE exactly
    let mut pred = vec![out.intercept; phi.nrows()];
    for (j, &c) in out.coefficients.iter().enumerate() {
        if c != 0.0 {
            for (o, v) in pred.iter_mut().zip(phi.column(j).iter()) {
                *o += c * v;
            }
        }
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinitePrediction);
    }
    out.fitness = mse(&pred, fit_data.targets().as_slice())?;
    if !out.fitness.is_finite() {
        return Err(ModelError::NonFinitePrediction);
    }
    Ok(out)
}

/// Like [`fit_individual`], but when the head cannot be fit the individual
/// falls back to an intercept-only head predicting the target mean.
pub fn fit_individual_or_mean(ind: &Individual, fit_data: &Dataset, cfg: &RidgeConfig) -> Result<Individual> {
    match fit_individual(ind, fit_data, cfg) {
        Ok(fitted) => Ok(fitted),
        Err(ModelError::RankDeficient | ModelError::NonFinitePrediction) => {
            let y = fit_data.targets().as_slice();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let mut out = ind.clone();
            out.coefficients = vec![0.0; ind.features.len()];
            out.intercept = mean;
            out.case_errors = None;
            out.recompute_measures(&ComplexityTable::default());
            out.fitness = mse(&vec![mean; y.len()], y)?;
            Ok(out)
        }
        Err(e) => Err(e),
    }
}

/// Settings for gradient descent on tree edge weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightTuning {
    pub iters: usize,
    pub learning_rate: f64,
    /// Refit the ridge head after every step; when false the head is frozen.
    pub refit_head: bool,
}

impl Default for WeightTuning {
    fn default() -> Self {
        Self {
            iters: 10,
            learning_rate: 0.1,
            refit_head: true,
        }
    }
}

/// Gradient of the fit-data MSE with respect to every edge weight of every
/// feature, with the head held fixed. Concatenated in feature order, each
/// feature's weights in [`ExprTree::weights`] order.
pub fn weight_gradient(ind: &Individual, fit_data: &Dataset) -> Result<Vec<f64>> {
    let x = fit_data.features();
    let y = fit_data.targets();
    let pred = predict(ind, x)?;
    let d = y.len() as f64;
    let resid: Vec<f64> = pred.iter().zip(y.iter()).map(|(p, t)| p - t).collect();
    let mut grad = Vec::new();
    for (tree, &c) in ind.features.iter().zip(&ind.coefficients) {
        for partials in tree.gradient(x)?.into_values() {
            let s: f64 = partials.iter().zip(&resid).map(|(g, r)| g * r).sum();
            grad.push(2.0 * c * s / d);
        }
    }
    Ok(grad)
}

fn refresh_fitness(ind: &mut Individual, fit_data: &Dataset) -> Result<()> {
    let pred = predict(ind, fit_data.features())?;
    ind.fitness = mse(&pred, fit_data.targets().as_slice())?;
    ind.case_errors = None;
    Ok(())
}

/// Gradient descent on edge weights, returning the best individual seen by
/// fit-data MSE. A step that worsens the MSE is rejected and halves the
/// learning rate; rounds with non-finite gradients are skipped. The result is
/// never worse than `ind`.
pub fn optimize_weights(ind: &Individual, fit_data: &Dataset, tuning: &WeightTuning, cfg: &RidgeConfig) -> Individual {
    let mut current = ind.clone();
    let mut lr = tuning.learning_rate;
    for _ in 0..tuning.iters {
        let Ok(grad) = weight_gradient(&current, fit_data) else {
            continue;
        };
        if grad.iter().any(|g| !g.is_finite()) {
            continue;
        }
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let mut candidate = current.clone();
        let mut offset = 0;
        for tree in candidate.features_mut() {
            let mut w = tree.weights();
            for (wi, gi) in w.iter_mut().zip(&grad[offset..]) {
                *wi -= lr * gi;
            }
            offset += w.len();
            if w.iter().any(|v| !v.is_finite()) {
                continue;
            }
            tree.set_weights(&w);
        }
        let evaluated = if tuning.refit_head {
            fit_individual(&candidate, fit_data, cfg)
        } else {
            candidate.coefficients = current.coefficients.clone();
            candidate.intercept = current.intercept;
            refresh_fitness(&mut candidate, fit_data).map(|_| candidate)
        };
        match evaluated {
            Ok(next) if next.fitness.is_finite() && next.fitness <= current.fitness => current = next,
            _ => lr *= 0.5,
        }
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Op;

    fn line_data(d: usize, slope: f64) -> Dataset {
        let x = DMatrix::from_fn(d, 1, |i, _| (i as f64 + 1.0) / d as f64);
        let y = DVector::from_fn(d, |i, _| slope * x[(i, 0)]);
        Dataset::new(x, y, vec!["x".into()]).unwrap()
    }

    #[test]
    fn design_matrix_columns() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let ind = Individual::new(vec![ExprTree::var(0)]);
        let phi = design_matrix(&ind, &x).unwrap();
        assert_eq!(phi.column(0).as_slice(), &[1.0, 3.0, 5.0]);
        assert_eq!(phi.column(1).as_slice(), &[1.0, 1.0, 1.0]);
        let x5 = DMatrix::from_element(5, 2, 0.5);
        let two = Individual::new(vec![ExprTree::var(1), ExprTree::constant(2.0)]);
        let phi = design_matrix(&two, &x5).unwrap();
        assert_eq!(phi.shape(), (5, 3));
        assert!(phi.column(1).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn exact_linear_recovery() {
        let ds = line_data(20, 2.0);
        let phi = design_matrix(&Individual::new(vec![ExprTree::var(0)]), ds.features()).unwrap();
        let beta = fit_ridge(
            &phi,
            ds.targets(),
            &RidgeConfig {
                regularization_strength: 0.0,
            },
        )
        .unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-10);
        assert!(beta[1].abs() < 1e-10);
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let ds = line_data(20, 2.0);
        let phi = design_matrix(&Individual::new(vec![ExprTree::var(0)]), ds.features()).unwrap();
        let beta = fit_ridge(
            &phi,
            ds.targets(),
            &RidgeConfig {
                regularization_strength: 1e12,
            },
        )
        .unwrap();
        assert!(beta[0].abs() < 1e-6);
        // intercept absorbs the mean
        let mean = ds.targets().mean();
        assert!((beta[1] - mean).abs() < 1e-4);
    }

    #[test]
    fn collinear_columns_without_penalty_fail() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let phi = DMatrix::from_fn(10, 3, |i, j| if j == 2 { 1.0 } else { x[(i, 0)] });
        let y = DVector::from_fn(10, |i, _| i as f64);
        assert_eq!(
            fit_ridge(
                &phi,
                &y,
                &RidgeConfig {
                    regularization_strength: 0.0
                }
            ),
            Err(ModelError::RankDeficient)
        );
        assert!(fit_ridge(&phi, &y, &RidgeConfig::default()).is_ok());
    }

    #[test]
    fn mse_and_r2_values() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((mse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert!(mse(&[1.0], &[]).is_err());
        let y = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&[0.0; 4], &y).unwrap(), 0.0);
        assert_eq!(r2(&[1.0, 2.0], &[3.0, 3.0]), Err(ModelError::ConstantTarget));
    }

    #[test]
    fn case_errors_are_absolute_residuals() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 4.0]);
        let ds = Dataset::new(x, DVector::from_vec(vec![3.0, 4.0]), vec!["a".into()]).unwrap();
        let mut ind = Individual::new(vec![ExprTree::var(0)]);
        ind.set_head(vec![1.0], 0.0).unwrap();
        assert_eq!(case_errors(&mut ind, &ds).unwrap(), &[2.0, 0.0]);
        assert_eq!(ind.cached_case_errors(), Some(&[2.0, 0.0][..]));
    }

    #[test]
    fn fit_sets_fitness_and_measures() {
        let ds = line_data(30, -1.5);
        let sq = ExprTree::unary(Op::Square, ExprTree::var(0));
        let ind = Individual::new(vec![ExprTree::var(0), sq]);
        let fitted = fit_individual(&ind, &ds, &RidgeConfig::default()).unwrap();
        let pred = predict(&fitted, ds.features()).unwrap();
        assert_eq!(fitted.fitness(), mse(&pred, ds.targets().as_slice()).unwrap());
        assert_eq!(fitted.complexity(), 1 + 2);
        assert_eq!(fitted.size(), 1 + 2);
        assert!(fitted.fitness() < 1e-10);
    }

    #[test]
    fn degenerate_fit_falls_back_to_mean() {
        let ds = line_data(10, 1.0);
        // 1e30-valued features overwhelm the ridge and must not break fitting
        let huge = ExprTree::unary(Op::Exp, ExprTree::constant(1.0))
            .with_weights(&[1e6])
            .unwrap();
        let ind = Individual::new(vec![huge.clone(), huge]);
        let fitted = fit_individual_or_mean(
            &ind,
            &ds,
            &RidgeConfig {
                regularization_strength: 0.0,
            },
        )
        .unwrap();
        assert!(fitted.fitness().is_finite());
    }

    #[test]
    fn frozen_head_descent_moves_weight_toward_target() {
        let ds = line_data(40, 3.0);
        // feature w * x expressed as (w * x + 1 * 0)
        let tree = ExprTree::binary(Op::Add, ExprTree::var(0), ExprTree::constant(0.0));
        let mut ind = Individual::new(vec![tree]);
        ind.set_head(vec![1.0], 0.0).unwrap();
        refresh_fitness(&mut ind, &ds).unwrap();
        let tuning = WeightTuning {
            iters: 1,
            learning_rate: 0.1,
            refit_head: false,
        };
        let mut w_prev = 1.0;
        let mut cur = ind;
        for _ in 0..30 {
            cur = optimize_weights(&cur, &ds, &tuning, &RidgeConfig::default());
            let w = cur.features()[0].weights()[0];
            assert!(w >= w_prev && w <= 3.0, "w = {w}");
            w_prev = w;
        }
        assert!(w_prev > 1.5);
    }

    #[test]
    fn tuning_at_optimum_changes_nothing() {
        let ds = line_data(20, 2.0);
        let tree = ExprTree::binary(Op::Add, ExprTree::var(0), ExprTree::constant(0.0));
        let ind = fit_individual(&Individual::new(vec![tree]), &ds, &RidgeConfig::default()).unwrap();
        let out = optimize_weights(&ind, &ds, &WeightTuning::default(), &RidgeConfig::default());
        assert!(out.fitness() <= ind.fitness());
        assert!(out.fitness() < 1e-12);
    }
}
