//! OLS, LASSO (coordinate descent) and ridge regression with an unpenalized intercept.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::r_squared;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    None,
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    /// Population standard deviation; 0 marks a constant column (coefficient fixed at 0).
    pub sd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Slope t-values, OLS only.
    pub t_values: Option<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub duality_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub penalty: Penalty,
    pub column_standardization: Vec<ColumnScale>,
    pub diagnostics: Diagnostics,
}

impl LinearFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::InvalidInput(format!(
                "design has {} columns, model expects {}",
                x.ncols(),
                self.coefficients.len()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| self.intercept + (0..x.ncols()).map(|j| x[(i, j)] * self.coefficients[j]).sum::<f64>())
            .collect())
    }

    /// Coefficients in standard-deviation units (`beta_j * sd_j`).
    pub fn standardized_coefficients(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.column_standardization)
            .map(|(b, c)| b * c.sd)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OlsOptions {
    /// On an exactly collinear design, fit ridge with this lambda instead of failing.
    pub ridge_fallback: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    pub max_sweeps: usize,
    /// Stop once every KKT condition holds within this tolerance.
    pub kkt_tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 10_000,
            kkt_tol: 1e-9,
        }
    }
}

fn check_shapes(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if x.ncols() != names.len() {
        return Err(Error::InvalidInput(format!("{} columns but {} names", x.ncols(), names.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("design or target contains missing/non-finite values".into()));
    }
    Ok(())
}

fn column_scales(x: &DMatrix<f64>) -> Vec<ColumnScale> {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            // Treat round-off level spread as constant.
            let sd = if var.sqrt() <= 1e-12 * (1.0 + mean.abs()) { 0.0 } else { var.sqrt() };
            ColumnScale { mean, sd }
        })
        .collect()
}

fn centered(x: &DMatrix<f64>, scales: &[ColumnScale]) -> DMatrix<f64> {
    let mut c = x.clone();
    for (j, s) in scales.iter().enumerate() {
        c.column_mut(j).add_scalar_mut(-s.mean);
    }
    c
}

/// Standardized columns; constant columns become all-zero.
fn standardized(x: &DMatrix<f64>, scales: &[ColumnScale]) -> DMatrix<f64> {
    let mut z = centered(x, scales);
    for (j, s) in scales.iter().enumerate() {
        let f = if s.sd > 0.0 { 1.0 / s.sd } else { 0.0 };
        z.column_mut(j).scale_mut(f);
    }
    z
}

fn intercept_from(y_mean: f64, coefficients: &[f64], scales: &[ColumnScale]) -> f64 {
    y_mean - coefficients.iter().zip(scales).map(|(b, s)| b * s.mean).sum::<f64>()
}

/// First column (in order) that is an exact linear combination of the intercept
/// and earlier columns, with the columns it depends on.
fn find_collinear(xc: &DMatrix<f64>, scales: &[ColumnScale], names: &[String]) -> Option<(usize, Vec<String>)> {
    let n = xc.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut independent: Vec<usize> = Vec::new();
    for j in 0..xc.ncols() {
        if scales[j].sd == 0.0 {
            return Some((j, vec!["intercept".into()]));
        }
        let col = xc.column(j).into_owned();
        let mut r = col.clone();
        for q in &basis {
            let d = q.dot(&r);
            r.axpy(-d, q, 1.0);
        }
        if r.norm() <= 1e-9 * col.norm() {
            let a = DMatrix::from_fn(n, independent.len(), |i, k| xc[(i, independent[k])]);
            let coef = a.svd(true, true).solve(&col, 1e-12).ok()?;
            let depends_on = independent
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() > 1e-8)
                .map(|(&k, _)| names[k].clone())
                .collect();
            return Some((j, depends_on));
        }
        basis.push(r.normalize());
        independent.push(j);
    }
    None
}

/// Ordinary least squares via QR of the centered design.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64], names: &[String], opts: &OlsOptions) -> Result<LinearFit> {
    check_shapes(x, y, names)?;
    let (n, p) = (x.nrows(), x.ncols());
    if n < p + 1 {
        return Err(Error::InvalidInput(format!("OLS needs at least {} rows for {p} columns, got {n}", p + 1)));
    }
    let scales = column_scales(x);
    let xc = centered(x, &scales);
    if let Some((col, depends_on)) = find_collinear(&xc, &scales, names) {
        if let Some(lambda) = opts.ridge_fallback {
            log::warn!("column `{}` is collinear; falling back to ridge with lambda {lambda}", names[col]);
            return fit_ridge(x, y, names, lambda);
        }
        return Err(Error::Collinear {
            column: names[col].clone(),
            depends_on,
        });
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    if p == 0 {
        return Ok(LinearFit {
            intercept: y_mean,
            names: vec![],
            coefficients: vec![],
            lambda: 0.0,
            penalty: Penalty::None,
            column_standardization: scales,
            diagnostics: Diagnostics {
                t_values: Some(vec![]),
                iterations: 0,
                converged: true,
                duality_gap: None,
            },
        });
    }
    let qr = xc.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let qty = q.transpose() * &yc;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("singular R factor in OLS".into()))?;
    let resid = &yc - &xc * &beta;
    let dof = n - p - 1;
    let t_values = if dof > 0 {
        let sigma2 = resid.norm_squared() / dof as f64;
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::Numerical("singular R factor in OLS".into()))?;
        Some(
            (0..p)
                .map(|j| {
                    let se = (sigma2 * r_inv.row(j).norm_squared()).sqrt();
                    if se > 0.0 { beta[j] / se } else { f64::INFINITY.copysign(beta[j]) }
                })
                .collect(),
        )
    } else {
        None
    };
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    Ok(LinearFit {
        intercept: intercept_from(y_mean, &coefficients, &scales),
        names: names.to_vec(),
        coefficients,
        lambda: 0.0,
        penalty: Penalty::None,
        column_standardization: scales,
        diagnostics: Diagnostics {
            t_values,
            iterations: 0,
            converged: true,
            duality_gap: None,
        },
    })
}

/// Ridge on standardized columns: `(Z'Z + lambda I)^-1 Z'(y - ybar)`, de-standardized.
/// `lambda == 0` is plain OLS.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], names: &[String], lambda: f64) -> Result<LinearFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        let mut f = fit_ols(x, y, names, &OlsOptions::default())?;
        f.penalty = Penalty::L2;
        f.diagnostics.t_values = None;
        return Ok(f);
    }
    check_shapes(x, y, names)?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("empty design".into()));
    }
    let scales = column_scales(x);
    let z = standardized(x, &scales);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut a = z.transpose() * &z;
    for j in 0..a.ncols() {
        a[(j, j)] += lambda;
    }
    let b = z.transpose() * yc;
    let beta = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge normal matrix not positive definite".into()))?
        .solve(&b);
    let coefficients: Vec<f64> = beta
        .iter()
        .zip(&scales)
        .map(|(b, s)| if s.sd > 0.0 { b / s.sd } else { 0.0 })
        .collect();
    Ok(LinearFit {
        intercept: intercept_from(y_mean, &coefficients, &scales),
        names: names.to_vec(),
        coefficients,
        lambda,
        penalty: Penalty::L2,
        column_standardization: scales,
        diagnostics: Diagnostics {
            t_values: None,
            iterations: 0,
            converged: true,
            duality_gap: None,
        },
    })
}

/// Largest useful LASSO penalty: above it every coefficient is zero.
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = x.nrows() as f64;
    let scales = column_scales(x);
    let z = standardized(x, &scales);
    let y_mean = y.iter().sum::<f64>() / n;
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    (z.transpose() * yc).amax() / n
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// LASSO by cyclic coordinate descent on standardized columns, minimizing
/// `(1/2n) |y - ybar - Z b|^2 + lambda |b|_1`. Coefficients are reported on the input scale.
pub fn fit_lasso(x: &DMatrix<f64>, y: &[f64], names: &[String], lambda: f64, opts: &LassoOptions) -> Result<LinearFit> {
    check_shapes(x, y, names)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let (n, p) = (x.nrows(), x.ncols());
    if n == 0 {
        return Err(Error::InvalidInput("empty design".into()));
    }
    let nf = n as f64;
    let scales = column_scales(x);
    let z = standardized(x, &scales);
    let y_mean = y.iter().sum::<f64>() / nf;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let active_cols: Vec<usize> = (0..p).filter(|&j| scales[j].sd > 0.0).collect();
    // Column norms are n after standardization; recomputed to absorb round-off.
    let norms: Vec<f64> = (0..p).map(|j| z.column(j).norm_squared() / nf).collect();
    let mut beta = vec![0.0; p];
    let mut resid = yc.clone();
    let kkt = |beta: &[f64], resid: &DVector<f64>| -> f64 {
        active_cols
            .iter()
            .map(|&j| {
                let g = z.column(j).dot(resid) / nf;
                if beta[j] != 0.0 {
                    (g - lambda * beta[j].signum()).abs()
                } else {
                    (g.abs() - lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    };
    let mut sweeps = 0;
    let mut converged = kkt(&beta, &resid) <= opts.kkt_tol;
    while !converged && sweeps < opts.max_sweeps {
        sweeps += 1;
        for &j in &active_cols {
            let col = z.column(j);
            let old = beta[j];
            let rho = col.dot(&resid) / nf + norms[j] * old;
            let new = soft_threshold(rho, lambda) / norms[j];
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                beta[j] = new;
            }
        }
        // Re-sync the residual now and then so round-off cannot accumulate.
        if sweeps % 100 == 0 {
            resid = &yc - &z * DVector::from_column_slice(&beta);
        }
        converged = kkt(&beta, &resid) <= opts.kkt_tol;
    }
    let gap = duality_gap(&z, &yc, &beta, lambda);
    if !converged {
        return Err(Error::NoConvergence {
            sweeps,
            gap: if lambda > 0.0 { gap } else { kkt(&beta, &resid) },
        });
    }
    let coefficients: Vec<f64> = beta
        .iter()
        .zip(&scales)
        .map(|(b, s)| if s.sd > 0.0 { b / s.sd } else { 0.0 })
        .collect();
    Ok(LinearFit {
        intercept: intercept_from(y_mean, &coefficients, &scales),
        names: names.to_vec(),
        coefficients,
        lambda,
        penalty: Penalty::L1,
        column_standardization: scales,
        diagnostics: Diagnostics {
            t_values: None,
            iterations: sweeps,
            converged,
            duality_gap: (lambda > 0.0).then_some(gap),
        },
    })
}

/// Primal minus dual objective for the scaled LASSO problem (0 at the optimum).
fn duality_gap(z: &DMatrix<f64>, yc: &DVector<f64>, beta: &[f64], lambda: f64) -> f64 {
    let nf = z.nrows() as f64;
    let resid = yc - z * DVector::from_column_slice(beta);
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let primal = resid.norm_squared() / (2.0 * nf) + lambda * l1;
    let corr = (z.transpose() * &resid).amax() / nf;
    let scale = if corr > lambda && corr > 0.0 { lambda / corr } else { 1.0 };
    let theta = &resid * scale;
    let dual = (yc.norm_squared() - (yc - &theta).norm_squared()) / (2.0 * nf);
    primal - dual
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// (lambda, validation R^2) for every grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Pick the grid value with the best validation R^2; ties go to the larger lambda.
/// Grid points are fitted in parallel.
pub fn select_lambda(
    penalty: Penalty,
    grid: &[f64],
    train: (&DMatrix<f64>, &[f64]),
    validation: (&DMatrix<f64>, &[f64]),
    names: &[String],
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    let scores: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&lambda| {
            let fit = match penalty {
                Penalty::L1 => fit_lasso(train.0, train.1, names, lambda, &LassoOptions::default())?,
                Penalty::L2 => fit_ridge(train.0, train.1, names, lambda)?,
                Penalty::None => fit_ols(train.0, train.1, names, &OlsOptions::default())?,
            };
            let pred = fit.predict(validation.0)?;
            Ok((lambda, r_squared(validation.1, &pred).unwrap_or(f64::NEG_INFINITY)))
        })
        .collect::<Result<_>>()?;
    let best = scores
        .iter()
        .copied()
        .reduce(|a, b| {
            if b.1 > a.1 || (b.1 == a.1 && b.0 > a.0) {
                b
            } else {
                a
            }
        })
        .expect("non-empty grid");
    Ok(LambdaSelection { lambda: best.0, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    fn random_problem(n: usize, p: usize, seed: u64, noise: f64) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, j| rng.sample::<f64, _>(StandardNormal) * (1.0 + j as f64) + j as f64);
        let beta: Vec<f64> = (0..p).map(|j| if j % 2 == 0 { 1.0 + j as f64 } else { -0.5 }).collect();
        let y = (0..n)
            .map(|i| 0.7 + (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y, beta)
    }

    /// Independent oracle: normal equations with an explicit intercept column.
    fn normal_equations(x: &DMatrix<f64>, y: &[f64], ridge: Option<f64>) -> Vec<f64> {
        let n = x.nrows();
        let p = x.ncols();
        let a = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let mut ata = a.transpose() * &a;
        if let Some(l) = ridge {
            for j in 1..=p {
                ata[(j, j)] += l;
            }
        }
        let aty = a.transpose() * DVector::from_column_slice(y);
        ata.lu().solve(&aty).unwrap().iter().copied().collect()
    }

    #[test]
    fn ols_line() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let f = fit_ols(&x, &[2.0, 4.0, 6.0], &names(1), &OlsOptions::default()).unwrap();
        assert!(f.intercept.abs() < 1e-12);
        assert!((f.coefficients[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ols_constant_target() {
        let (x, _, _) = random_problem(20, 3, 1, 1.0);
        let f = fit_ols(&x, &[4.5; 20], &names(3), &OlsOptions::default()).unwrap();
        assert!(f.coefficients.iter().all(|b| b.abs() < 1e-10));
        assert!((f.intercept - 4.5).abs() < 1e-10);
    }

    #[test]
    fn ols_matches_normal_equations() {
        let (x, y, _) = random_problem(50, 5, 2, 0.3);
        let f = fit_ols(&x, &y, &names(5), &OlsOptions::default()).unwrap();
        let o = normal_equations(&x, &y, None);
        assert!((f.intercept - o[0]).abs() < 1e-8);
        for j in 0..5 {
            assert!((f.coefficients[j] - o[j + 1]).abs() < 1e-8);
        }
    }

    #[test]
    fn ols_residuals_orthogonal_to_columns() {
        let (x, y, _) = random_problem(40, 4, 3, 1.0);
        let f = fit_ols(&x, &y, &names(4), &OlsOptions::default()).unwrap();
        let pred = f.predict(&x).unwrap();
        let r: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        assert!(r.iter().sum::<f64>().abs() < 1e-8);
        for j in 0..4 {
            let d: f64 = (0..40).map(|i| r[i] * x[(i, j)]).sum();
            assert!(d.abs() < 1e-8, "column {j}: {d}");
        }
    }

    #[test]
    fn collinear_column_is_named() {
        let (mut x, y, _) = random_problem(30, 3, 4, 1.0);
        x = x.insert_column(3, 0.0);
        for i in 0..30 {
            x[(i, 3)] = 2.0 * x[(i, 0)] - x[(i, 2)] + 1.0;
        }
        match fit_ols(&x, &y, &names(4), &OlsOptions::default()) {
            Err(Error::Collinear { column, depends_on }) => {
                assert_eq!(column, "f3");
                assert_eq!(depends_on, vec!["f0".to_string(), "f2".to_string()]);
            }
            other => panic!("expected collinearity error, got {other:?}"),
        }
        let f = fit_ols(&x, &y, &names(4), &OlsOptions { ridge_fallback: Some(1e-3) }).unwrap();
        assert_eq!(f.penalty, Penalty::L2);
        let constant = x.clone().insert_column(4, 3.0);
        assert!(matches!(
            fit_ols(&constant, &y, &names(5), &OlsOptions::default()),
            Err(Error::Collinear { column, .. }) if column == "f3"
        ));
    }

    #[test]
    fn ols_t_value_matches_textbook() {
        // Simple regression: t = b / (s / sqrt(Sxx)).
        let xs = [1.0, 2.0, 4.0, 5.0, 7.0, 8.0];
        let ys = [1.2, 1.9, 4.4, 4.8, 7.5, 7.7];
        let x = DMatrix::from_column_slice(6, 1, &xs);
        let f = fit_ols(&x, &ys, &names(1), &OlsOptions::default()).unwrap();
        let mx = xs.iter().sum::<f64>() / 6.0;
        let my = ys.iter().sum::<f64>() / 6.0;
        let sxx: f64 = xs.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
        let b = sxy / sxx;
        let a = my - b * mx;
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
        let t = b / ((rss / 4.0).sqrt() / sxx.sqrt());
        assert!((f.diagnostics.t_values.unwrap()[0] - t).abs() < 1e-9 * t.abs());
    }

    #[test]
    fn ridge_zero_equals_ols() {
        let (x, y, _) = random_problem(60, 4, 5, 0.5);
        let o = fit_ols(&x, &y, &names(4), &OlsOptions::default()).unwrap();
        let r = fit_ridge(&x, &y, &names(4), 0.0).unwrap();
        assert!((o.intercept - r.intercept).abs() < 1e-8);
        for (a, b) in o.coefficients.iter().zip(&r.coefficients) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_huge_lambda_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(100, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..100).map(|i| x[(i, 0)] - x[(i, 2)]).collect();
        let f = fit_ridge(&x, &y, &names(3), 1e8).unwrap();
        assert!(f.coefficients.iter().all(|b| b.abs() < 1e-4));
    }

    #[test]
    fn ridge_two_feature_oracle() {
        let (x, y, _) = random_problem(25, 2, 7, 1.0);
        let lambda = 3.0;
        let f = fit_ridge(&x, &y, &names(2), lambda).unwrap();
        // Explicit 2x2 solve on standardized columns.
        let n = 25.0;
        let stats: Vec<(f64, f64)> = (0..2)
            .map(|j| {
                let m = x.column(j).sum() / n;
                let sd = (x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                (m, sd)
            })
            .collect();
        let z = |i: usize, j: usize| (x[(i, j)] - stats[j].0) / stats[j].1;
        let ym = y.iter().sum::<f64>() / n;
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (lambda, 0.0, lambda, 0.0, 0.0);
        for i in 0..25 {
            a11 += z(i, 0) * z(i, 0);
            a12 += z(i, 0) * z(i, 1);
            a22 += z(i, 1) * z(i, 1);
            b1 += z(i, 0) * (y[i] - ym);
            b2 += z(i, 1) * (y[i] - ym);
        }
        let det = a11 * a22 - a12 * a12;
        let g1 = (a22 * b1 - a12 * b2) / det;
        let g2 = (a11 * b2 - a12 * b1) / det;
        assert!((f.coefficients[0] - g1 / stats[0].1).abs() < 1e-10);
        assert!((f.coefficients[1] - g2 / stats[1].1).abs() < 1e-10);
    }

    #[test]
    fn lasso_zero_lambda_equals_ols() {
        let (x, y, _) = random_problem(80, 4, 8, 0.5);
        let o = fit_ols(&x, &y, &names(4), &OlsOptions::default()).unwrap();
        let l = fit_lasso(&x, &y, &names(4), 0.0, &LassoOptions::default()).unwrap();
        assert!((o.intercept - l.intercept).abs() < 1e-6);
        for (a, b) in o.coefficients.iter().zip(&l.coefficients) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn lasso_above_lambda_max_is_all_zero() {
        let (x, y, _) = random_problem(50, 5, 9, 1.0);
        let lmax = lasso_lambda_max(&x, &y);
        for l in [lmax, lmax * 1.5] {
            let f = fit_lasso(&x, &y, &names(5), l, &LassoOptions::default()).unwrap();
            assert!(f.coefficients.iter().all(|b| *b == 0.0));
            assert!((f.intercept - y.iter().sum::<f64>() / 50.0).abs() < 1e-12);
        }
        let f = fit_lasso(&x, &y, &names(5), lmax * 0.9, &LassoOptions::default()).unwrap();
        assert!(f.coefficients.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn lasso_univariate_soft_threshold() {
        let (x, y, _) = random_problem(40, 1, 10, 2.0);
        let n = 40.0;
        let m = x.column(0).sum() / n;
        let sd = (x.column(0).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        let ym = y.iter().sum::<f64>() / n;
        let c: f64 = (0..40).map(|i| (x[(i, 0)] - m) / sd * (y[i] - ym)).sum::<f64>() / n;
        for frac in [0.1, 0.5, 0.9] {
            let lambda = frac * c.abs();
            let f = fit_lasso(&x, &y, &names(1), lambda, &LassoOptions::default()).unwrap();
            let expected = c.signum() * (c.abs() - lambda) / sd;
            assert!((f.coefficients[0] - expected).abs() < 1e-6, "{} vs {expected}", f.coefficients[0]);
        }
    }

    #[test]
    fn lasso_kkt_and_gap() {
        let (x, y, _) = random_problem(120, 6, 11, 1.0);
        let lambda = 0.1 * lasso_lambda_max(&x, &y);
        let f = fit_lasso(&x, &y, &names(6), lambda, &LassoOptions::default()).unwrap();
        assert!(f.diagnostics.duality_gap.unwrap().abs() < 1e-8);
        let pred = f.predict(&x).unwrap();
        for j in 0..6 {
            let m = x.column(j).sum() / 120.0;
            let sd = (x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / 120.0).sqrt();
            let g: f64 = (0..120).map(|i| (x[(i, j)] - m) / sd * (y[i] - pred[i])).sum::<f64>() / 120.0;
            let b = f.coefficients[j];
            if b != 0.0 {
                assert!((g - lambda * b.signum()).abs() < 1e-6);
            } else {
                assert!(g.abs() <= lambda + 1e-6);
            }
        }
    }

    #[test]
    fn lasso_sweep_budget_reports_gap() {
        let (x, y, _) = random_problem(60, 5, 12, 1.0);
        let opts = LassoOptions {
            max_sweeps: 1,
            kkt_tol: 1e-14,
        };
        match fit_lasso(&x, &y, &names(5), 0.01, &opts) {
            Err(Error::NoConvergence { sweeps, gap }) => {
                assert_eq!(sweeps, 1);
                assert!(gap > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn select_lambda_cases() {
        let (x, y, _) = random_problem(60, 3, 13, 0.0);
        let (xv, yv, _) = random_problem(30, 3, 14, 0.0);
        let n = names(3);
        assert_eq!(select_lambda(Penalty::L2, &[0.0], (&x, &y), (&xv, &yv), &n).unwrap().lambda, 0.0);
        assert_eq!(select_lambda(Penalty::L2, &[0.0, 1e6], (&x, &y), (&xv, &yv), &n).unwrap().lambda, 0.0);
        assert_eq!(select_lambda(Penalty::L1, &[0.0, 1e6], (&x, &y), (&xv, &yv), &n).unwrap().lambda, 0.0);
    }

    #[test]
    fn select_lambda_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = 12;
        let x = DMatrix::from_fn(100, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let xv = DMatrix::from_fn(60, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let target = |m: &DMatrix<f64>, i: usize| 2.0 * m[(i, 0)] - m[(i, 3)];
        let y: Vec<f64> = (0..100).map(|i| target(&x, i) + 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let yv: Vec<f64> = (0..60).map(|i| target(&xv, i) + 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let grid: Vec<f64> = (0..10).map(|k| 1e-3 * 10f64.powf(k as f64 / 3.0)).collect();
        let n = names(p);
        let sel = select_lambda(Penalty::L1, &grid, (&x, &y), (&xv, &yv), &n).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &l in &grid {
            let f = fit_lasso(&x, &y, &n, l, &LassoOptions::default()).unwrap();
            let r2 = r_squared(&yv, &f.predict(&xv).unwrap()).unwrap();
            if r2 >= best.0 {
                best = (r2, l);
            }
        }
        assert_eq!(sel.lambda, best.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn adding_a_column_never_lowers_r2(seed in 0u64..1000, p in 1usize..5) {
            let (x, y, _) = random_problem(40, p + 1, seed, 1.0);
            let small = x.columns(0, p).into_owned();
            let a = fit_ols(&small, &y, &names(p), &OlsOptions::default()).unwrap();
            let b = fit_ols(&x, &y, &names(p + 1), &OlsOptions::default()).unwrap();
            let ra = r_squared(&y, &a.predict(&small).unwrap()).unwrap();
            let rb = r_squared(&y, &b.predict(&x).unwrap()).unwrap();
            prop_assert!(rb >= ra - 1e-12);
        }

        #[test]
        fn ridge_norm_shrinks_with_lambda(seed in 0u64..1000) {
            let (x, y, _) = random_problem(30, 4, seed, 1.0);
            let mut prev = f64::INFINITY;
            for l in [0.0, 0.1, 1.0, 10.0, 100.0, 1e4] {
                let f = fit_ridge(&x, &y, &names(4), l).unwrap();
                let norm: f64 = f.standardized_coefficients().iter().map(|b| b * b).sum::<f64>().sqrt();
                prop_assert!(norm <= prev * (1.0 + 1e-9));
                prev = norm;
            }
        }

        #[test]
        fn lasso_active_set_shrinks_with_lambda(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(60, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y: Vec<f64> = (0..60).map(|i| x[(i, 0)] + 0.5 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal)).collect();
            let lmax = lasso_lambda_max(&x, &y);
            let mut prev = usize::MAX;
            for frac in [0.01, 0.05, 0.2, 0.5, 1.0] {
                let f = fit_lasso(&x, &y, &names(6), frac * lmax, &LassoOptions::default()).unwrap();
                let active = f.coefficients.iter().filter(|b| **b != 0.0).count();
                prop_assert!(active <= prev);
                prev = active;
            }
        }
    }
}
