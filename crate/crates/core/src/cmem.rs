//! Component multiplicative error model: volume = daily level x periodic
//! seasonal x intraday dynamic component x unit-mean noise.

use serde::{Deserialize, Serialize};

use crate::calendar::{ForecastMode, BINS_PER_DAY};
use crate::error::{Error, Result};
use crate::features::{FeaturePanel, Provenance};
use crate::optim::{bfgs, BfgsOptions};

pub const CMEM_FEATURES: [&str; 7] = ["eta", "seas", "mu", "x", "eta_seas", "seas_mu", "eta_mu"];

/// `omega + alpha * driver + beta * previous` recursion coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmemConfig {
    pub max_iter: usize,
    /// Optimization stops once no coordinate moves by more than this in an iteration.
    pub tol: f64,
}

impl Default for CmemConfig {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-6 }
    }
}

/// Estimated model. Daily quantities are in the units of the fitted data.
///
/// Recursions, with `vbar` the previous day's mean of `x / s`:
/// `eta_t = omega_d + alpha_d * vbar_{t-1} + beta_d * eta_{t-1}` (first day:
/// `eta_0 = initial_level_ratio * vbar_0`), and
/// `mu_tj = omega_m + alpha_m * x_prev / (eta s)_prev + beta_m * mu_prev`, restarting
/// from `mu = 1` (and a unit driver) at every open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmemFit {
    pub seasonal: Vec<f64>,
    pub daily_params: RecursionParams,
    pub intra_params: RecursionParams,
    pub initial_level_ratio: f64,
    pub eta_path: Vec<f64>,
    pub mu_path: Vec<Vec<f64>>,
    /// Zero bins are raised to this value before fitting and filtering.
    pub floor: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub scale_convention: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmemFeatureRow {
    pub eta: f64,
    pub seas: f64,
    pub mu: f64,
    pub x: f64,
    pub eta_seas: f64,
    pub seas_mu: f64,
    pub eta_mu: f64,
}

impl CmemFeatureRow {
    pub fn new(eta: f64, seas: f64, mu: f64) -> Self {
        Self {
            eta,
            seas,
            mu,
            x: eta * seas * mu,
            eta_seas: eta * seas,
            seas_mu: seas * mu,
            eta_mu: eta * mu,
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [self.eta, self.seas, self.mu, self.x, self.eta_seas, self.seas_mu, self.eta_mu]
    }

    /// Same row with daily-level quantities multiplied by `k` (e.g. turnover to shares).
    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.eta * k, self.seas, self.mu)
    }
}

#[derive(Debug, Clone)]
struct State {
    omega_d: f64,
    alpha_d: f64,
    beta_d: f64,
    alpha_m: f64,
    beta_m: f64,
    psi: f64,
    s: Vec<f64>,
}

impl State {
    fn omega_m(&self) -> f64 {
        1.0 - self.alpha_m - self.beta_m
    }

    /// Multiply the whole daily path by `c` (exact within the recursion family).
    fn rescale_daily(&mut self, c: f64) {
        self.omega_d *= c;
        self.alpha_d *= c;
        self.psi *= c;
    }
}

#[derive(Default)]
struct Paths {
    eta: Vec<f64>,
    mu: Vec<f64>,
    eps: Vec<f64>,
}

fn day_mean_deseasonalized(day: &[f64], s: &[f64]) -> f64 {
    day.iter().zip(s).map(|(x, s)| x / s).sum::<f64>() / BINS_PER_DAY as f64
}

/// Run the recursions over `x` (whole days, flattened). Returns the mean of the
/// exponential quasi-likelihood `eps + ln(yhat)`, or +inf if a component turns non-positive.
fn filter(st: &State, x: &[f64], mut paths: Option<&mut Paths>) -> f64 {
    let n_days = x.len() / BINS_PER_DAY;
    let omega_m = st.omega_m();
    let (mut eta_prev, mut vbar_prev) = (0.0, 0.0);
    let mut obj = 0.0;
    if let Some(p) = paths.as_deref_mut() {
        p.eta.clear();
        p.mu.clear();
        p.eps.clear();
    }
    for t in 0..n_days {
        let day = &x[t * BINS_PER_DAY..(t + 1) * BINS_PER_DAY];
        let eta = if t == 0 {
            st.psi * day_mean_deseasonalized(day, &st.s)
        } else {
            st.omega_d + st.alpha_d * vbar_prev + st.beta_d * eta_prev
        };
        if !(eta > 0.0) {
            return f64::INFINITY;
        }
        let (mut mu_prev, mut r_prev) = (1.0, 1.0);
        for (j, &xj) in day.iter().enumerate() {
            let mu = omega_m + st.alpha_m * r_prev + st.beta_m * mu_prev;
            if !(mu > 0.0) {
                return f64::INFINITY;
            }
            let yhat = eta * st.s[j] * mu;
            let eps = xj / yhat;
            obj += eps + yhat.ln();
            r_prev = xj / (eta * st.s[j]);
            mu_prev = mu;
            if let Some(p) = paths.as_deref_mut() {
                p.mu.push(mu);
                p.eps.push(eps);
            }
        }
        if let Some(p) = paths.as_deref_mut() {
            p.eta.push(eta);
        }
        vbar_prev = day_mean_deseasonalized(day, &st.s);
        eta_prev = eta;
    }
    obj / x.len() as f64
}

fn softmax3(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b).max(0.0);
    let (ea, eb, ec) = ((a - m).exp(), (b - m).exp(), (-m).exp());
    let z = ea + eb + ec;
    (ea / z, eb / z)
}

fn inv_softmax3(p: f64, q: f64) -> (f64, f64) {
    let p = p.max(1e-8);
    let q = q.max(1e-8);
    let rest = (1.0 - p - q).max(1e-8);
    ((p / rest).ln(), (q / rest).ln())
}

// Unconstrained coordinates: ln omega_d, two logits for (alpha_d, beta_d), two logits
// for (alpha_m, beta_m), ln psi, then one log-seasonal per bin (centered on unpack).
const N_SCALAR: usize = 6;
const N_PARAMS: usize = N_SCALAR + BINS_PER_DAY;

fn pack(st: &State) -> Vec<f64> {
    let (la, lb) = inv_softmax3(st.alpha_d, st.beta_d);
    let (ma, mb) = inv_softmax3(st.alpha_m, st.beta_m);
    let mut u = vec![st.omega_d.max(1e-300).ln(), la, lb, ma, mb, st.psi.ln()];
    u.extend(st.s.iter().map(|v| v.ln()));
    u
}

fn unpack(u: &[f64]) -> State {
    let (alpha_d, beta_d) = softmax3(u[1], u[2]);
    let (alpha_m, beta_m) = softmax3(u[3], u[4]);
    let zbar = u[N_SCALAR..].iter().sum::<f64>() / BINS_PER_DAY as f64;
    State {
        omega_d: u[0].exp(),
        alpha_d,
        beta_d,
        alpha_m,
        beta_m,
        psi: u[5].exp(),
        s: u[N_SCALAR..].iter().map(|z| (z - zbar).exp()).collect(),
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Mean quasi-likelihood and its exact gradient with respect to the packed
/// coordinates, propagated forward through both recursions.
fn objective_and_gradient(u: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
    const P: usize = N_PARAMS;
    let st = unpack(u);
    let n_days = x.len() / BINS_PER_DAY;
    let nb = BINS_PER_DAY as f64;
    let omega_m = st.omega_m();

    // Derivatives of the constrained parameters.
    let mut d_omega_d = [0.0; P];
    d_omega_d[0] = st.omega_d;
    let (pa, pb) = (st.alpha_d, st.beta_d);
    let mut d_alpha_d = [0.0; P];
    let mut d_beta_d = [0.0; P];
    d_alpha_d[1] = pa * (1.0 - pa);
    d_alpha_d[2] = -pa * pb;
    d_beta_d[1] = -pa * pb;
    d_beta_d[2] = pb * (1.0 - pb);
    let (qa, qb) = (st.alpha_m, st.beta_m);
    let mut d_alpha_m = [0.0; P];
    let mut d_beta_m = [0.0; P];
    d_alpha_m[3] = qa * (1.0 - qa);
    d_alpha_m[4] = -qa * qb;
    d_beta_m[3] = -qa * qb;
    d_beta_m[4] = qb * (1.0 - qb);
    let mut d_omega_m = [0.0; P];
    for k in 0..P {
        d_omega_m[k] = -d_alpha_m[k] - d_beta_m[k];
    }
    // d ln s_j / d z_k = delta_jk - 1/26

    let mut g = [0.0; P];
    let mut obj = 0.0;
    let mut eta_prev = 0.0;
    let mut d_eta_prev = [0.0; P];
    let mut vbar_prev = 0.0;
    let mut d_vbar_prev = [0.0; P];
    let mut d_eta: [f64; P];
    let mut d_mu = [0.0; P];
    let mut d_r = [0.0; P];
    let mut d_lnyhat = [0.0; P];

    for t in 0..n_days {
        let day = &x[t * BINS_PER_DAY..(t + 1) * BINS_PER_DAY];
        let vbar = day_mean_deseasonalized(day, &st.s);
        let mut d_vbar = [0.0; P];
        for k in 0..BINS_PER_DAY {
            d_vbar[N_SCALAR + k] = -(day[k] / st.s[k] - vbar) / nb;
        }
        let eta;
        if t == 0 {
            eta = st.psi * vbar;
            d_eta = [0.0; P];
            axpy(&mut d_eta, st.psi, &d_vbar);
            d_eta[5] += eta;
        } else {
            eta = st.omega_d + st.alpha_d * vbar_prev + st.beta_d * eta_prev;
            d_eta = d_omega_d;
            axpy(&mut d_eta, vbar_prev, &d_alpha_d);
            axpy(&mut d_eta, st.alpha_d, &d_vbar_prev);
            axpy(&mut d_eta, eta_prev, &d_beta_d);
            axpy(&mut d_eta, st.beta_d, &d_eta_prev);
        }
        let (mut mu_prev, mut r_prev) = (1.0, 1.0);
        let mut d_mu_prev = [0.0; P];
        let mut d_r_prev = [0.0; P];
        for (j, &xj) in day.iter().enumerate() {
            let mu = omega_m + st.alpha_m * r_prev + st.beta_m * mu_prev;
            for k in 0..P {
                d_mu[k] = d_omega_m[k]
                    + d_alpha_m[k] * r_prev
                    + st.alpha_m * d_r_prev[k]
                    + d_beta_m[k] * mu_prev
                    + st.beta_m * d_mu_prev[k];
            }
            let es = eta * st.s[j];
            let yhat = es * mu;
            let eps = xj / yhat;
            obj += eps + yhat.ln();
            // d ln(eta s_j) and d ln yhat
            for k in 0..P {
                d_lnyhat[k] = d_eta[k] / eta;
            }
            for k in 0..BINS_PER_DAY {
                d_lnyhat[N_SCALAR + k] -= 1.0 / nb;
            }
            d_lnyhat[N_SCALAR + j] += 1.0;
            let r = xj / es;
            for k in 0..P {
                d_r[k] = -r * d_lnyhat[k];
                d_lnyhat[k] += d_mu[k] / mu;
            }
            axpy(&mut g, 1.0 - eps, &d_lnyhat);
            r_prev = r;
            mu_prev = mu;
            d_r_prev = d_r;
            d_mu_prev = d_mu;
        }
        eta_prev = eta;
        d_eta_prev = d_eta;
        vbar_prev = vbar;
        d_vbar_prev = d_vbar;
    }
    let n = x.len() as f64;
    for (out, gk) in grad.iter_mut().zip(&g) {
        *out = gk / n;
    }
    obj / n
}

/// Rescale the daily path until the residuals have mean exactly 1.
fn scale_step(st: &mut State, x: &[f64], paths: &mut Paths) {
    for _ in 0..200 {
        filter(st, x, Some(paths));
        let m = paths.eps.iter().sum::<f64>() / paths.eps.len() as f64;
        if !m.is_finite() || (m - 1.0).abs() < 1e-13 {
            break;
        }
        st.rescale_daily(m);
    }
}

fn check_days(days: &[Vec<f64>]) -> Result<()> {
    for (t, d) in days.iter().enumerate() {
        if d.len() != BINS_PER_DAY {
            return Err(Error::InvalidInput(format!("day {t} has {} bins, expected {BINS_PER_DAY}", d.len())));
        }
        if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!("day {t} has a negative or non-finite value")));
        }
    }
    Ok(())
}

fn floored(days: &[Vec<f64>], floor: f64) -> Vec<f64> {
    days.iter().flatten().map(|&v| if v > 0.0 { v } else { floor }).collect()
}

/// Fit on whole days of positive turnover (`days[t][j]`).
pub fn fit(days: &[Vec<f64>], config: &CmemConfig) -> Result<CmemFit> {
    if days.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 training days, got {}", days.len())));
    }
    check_days(days)?;
    let floor = days
        .iter()
        .flatten()
        .copied()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Err(Error::InvalidInput("training window has no positive volume".into()));
    }
    let raw = floored(days, floor);
    // Work on unit-mean data so the optimizer sees the same problem at any scale.
    let scale = raw.iter().sum::<f64>() / raw.len() as f64;
    let x: Vec<f64> = raw.iter().map(|v| v / scale).collect();
    let n_days = days.len();

    let mut s: Vec<f64> = (0..BINS_PER_DAY)
        .map(|j| {
            let lg: f64 = (0..n_days)
                .map(|t| {
                    let day = &x[t * BINS_PER_DAY..(t + 1) * BINS_PER_DAY];
                    (day[j] / (day.iter().sum::<f64>() / BINS_PER_DAY as f64)).ln()
                })
                .sum();
            (lg / n_days as f64).exp()
        })
        .collect();
    let g = (s.iter().map(|v| v.ln()).sum::<f64>() / BINS_PER_DAY as f64).exp();
    s.iter_mut().for_each(|v| *v /= g);
    let mut st = State {
        omega_d: 0.2,
        alpha_d: 0.3,
        beta_d: 0.5,
        alpha_m: 0.2,
        beta_m: 0.5,
        psi: 1.0,
        s,
    };
    let opts = BfgsOptions {
        max_iter: config.max_iter,
        g_tol: 1e-10,
        x_tol: config.tol,
    };
    let m = bfgs(|u, g| objective_and_gradient(u, x.as_slice(), g), &pack(&st), &opts);
    if !m.converged {
        log::warn!("component model did not converge in {} iterations", m.iterations);
    }
    let (iterations, converged) = (m.iterations, m.converged);
    st = unpack(&m.x);
    let mut paths = Paths::default();
    // Pin the residual mean to 1 exactly; the likelihood optimum only gets it to O(1/n).
    scale_step(&mut st, &x, &mut paths);
    let objective = filter(&st, &x, Some(&mut paths));
    let mu_path = paths.mu.chunks(BINS_PER_DAY).map(<[f64]>::to_vec).collect();
    Ok(CmemFit {
        seasonal: st.s.clone(),
        daily_params: RecursionParams {
            omega: st.omega_d * scale,
            alpha: st.alpha_d,
            beta: st.beta_d,
        },
        intra_params: RecursionParams {
            omega: st.omega_m(),
            alpha: st.alpha_m,
            beta: st.beta_m,
        },
        initial_level_ratio: st.psi,
        eta_path: paths.eta.iter().map(|e| e * scale).collect(),
        mu_path,
        floor,
        objective,
        iterations,
        converged,
        scale_convention: "seasonal geometric mean 1; intraday component unit unconditional mean; \
                           residual sample mean 1"
            .into(),
    })
}

impl CmemFit {
    fn state(&self) -> State {
        State {
            omega_d: self.daily_params.omega,
            alpha_d: self.daily_params.alpha,
            beta_d: self.daily_params.beta,
            alpha_m: self.intra_params.alpha,
            beta_m: self.intra_params.beta,
            psi: self.initial_level_ratio,
            s: self.seasonal.clone(),
        }
    }

    /// Filtered in-sample paths on `days` (no look-ahead within a day).
    pub fn filter_days(&self, days: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        check_days(days)?;
        let x = floored(days, self.floor);
        let mut p = Paths::default();
        let obj = filter(&self.state(), &x, Some(&mut p));
        if !obj.is_finite() {
            return Err(Error::Numerical("component recursion left the positive region".into()));
        }
        let chunk = |v: &[f64]| v.chunks(BINS_PER_DAY).map(<[f64]>::to_vec).collect::<Vec<_>>();
        Ok((p.eta, chunk(&p.mu), chunk(&p.eps)))
    }

    /// Components for the day after `history`. Static mode uses only `history`;
    /// dynamic mode updates the intraday component with each realized bin of `next_day`.
    pub fn forecast(
        &self,
        history: &[Vec<f64>],
        next_day: Option<&[f64]>,
        mode: ForecastMode,
    ) -> Result<Vec<CmemFeatureRow>> {
        if history.is_empty() {
            return Err(Error::InvalidInput("forecast needs at least one history day".into()));
        }
        let realized = match (mode, next_day) {
            (ForecastMode::Dynamic, None) => {
                return Err(Error::InvalidInput("dynamic forecasts need the realized bins of the target day".into()))
            }
            (ForecastMode::Dynamic, Some(d)) => {
                check_days(&[d.to_vec()])?;
                Some(d.iter().map(|&v| if v > 0.0 { v } else { self.floor }).collect::<Vec<_>>())
            }
            (ForecastMode::Static, _) => None,
        };
        let (eta_hist, _, _) = self.filter_days(history)?;
        let st = self.state();
        let last = history.last().expect("non-empty");
        let last_floored: Vec<f64> = last.iter().map(|&v| if v > 0.0 { v } else { self.floor }).collect();
        let eta_prev = *eta_hist.last().expect("non-empty");
        let eta = st.omega_d + st.alpha_d * day_mean_deseasonalized(&last_floored, &st.s) + st.beta_d * eta_prev;
        let (mut mu_prev, mut r_prev) = (1.0, 1.0);
        let omega_m = st.omega_m();
        let mut rows = Vec::with_capacity(BINS_PER_DAY);
        for j in 0..BINS_PER_DAY {
            let mu = omega_m + st.alpha_m * r_prev + st.beta_m * mu_prev;
            rows.push(CmemFeatureRow::new(eta, st.s[j], mu));
            r_prev = match &realized {
                Some(d) => d[j] / (eta * st.s[j]),
                None => mu,
            };
            mu_prev = mu;
        }
        Ok(rows)
    }
}

/// Rolling out-of-sample components: day `d >= window` is forecast from a model
/// fitted on days `d - window .. d`, refitting every `refit_every` days.
pub fn rolling_forecasts(
    days: &[Vec<f64>],
    window: usize,
    refit_every: usize,
    mode: ForecastMode,
    config: &CmemConfig,
) -> Result<Vec<Option<Vec<CmemFeatureRow>>>> {
    if window < 2 || refit_every == 0 {
        return Err(Error::Config("window must be >= 2 and refit_every >= 1".into()));
    }
    let mut out = vec![None; days.len().min(window)];
    let mut current: Option<CmemFit> = None;
    for d in window..days.len() {
        let history = &days[d - window..d];
        if current.is_none() || (d - window) % refit_every == 0 {
            current = Some(fit(history, config)?);
        }
        let fit = current.as_ref().expect("fitted above");
        out.push(Some(fit.forecast(history, Some(&days[d]), mode)?));
    }
    Ok(out)
}

/// Rolling-fit settings for component features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentConfig {
    /// Training days per fit.
    pub window: usize,
    pub refit_every: usize,
    pub fit: CmemConfig,
}

impl Default for ComponentConfig {
    fn default() -> Self {
        Self {
            window: 20,
            refit_every: 5,
            fit: CmemConfig::default(),
        }
    }
}

/// Append the seven component columns (in shares) to `panel`, forecast in the
/// panel's mode from rolling fits on outstanding-shares turnover. Rows of days
/// without a forecast (the first `window` complete days of each stock, and
/// incomplete days) are dropped.
pub fn join_components(panel: &mut FeaturePanel, config: &ComponentConfig) -> Result<()> {
    let n = panel.n_rows();
    let mut values = vec![[0.0; 7]; n];
    let mut keep = vec![false; n];
    let mut start = 0;
    while start < n {
        let stock = panel.keys[start].stock.clone();
        let mut end = start;
        while end < n && panel.keys[end].stock == stock {
            end += 1;
        }
        let shares = *panel
            .outstanding_shares
            .get(&stock)
            .ok_or_else(|| Error::InvalidInput(format!("no outstanding shares for {stock}")))?;
        // complete days as (first row, turnover)
        let mut days: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut r = start;
        while r < end {
            let day = panel.keys[r].day;
            let mut e = r;
            while e < end && panel.keys[e].day == day {
                e += 1;
            }
            if e - r == BINS_PER_DAY && (r..e).all(|i| panel.keys[i].bin == i - r) {
                days.push((r, panel.target[r..e].iter().map(|v| v / shares).collect()));
            }
            r = e;
        }
        let series: Vec<Vec<f64>> = days.iter().map(|(_, d)| d.clone()).collect();
        if series.len() > config.window {
            let forecasts = rolling_forecasts(&series, config.window, config.refit_every, panel.mode, &config.fit)
                .map_err(|e| Error::Numerical(format!("{stock}: {e}")))?;
            for ((first, _), fc) in days.iter().zip(forecasts) {
                if let Some(rows) = fc {
                    for (j, row) in rows.iter().enumerate() {
                        values[first + j] = row.scaled(shares).values();
                        keep[first + j] = true;
                    }
                }
            }
        }
        start = end;
    }
    if !keep.iter().any(|k| *k) {
        return Err(Error::InvalidInput(format!(
            "no stock has more than {} complete days for component forecasts",
            config.window
        )));
    }
    for (k, name) in CMEM_FEATURES.iter().enumerate() {
        panel.add_column(name, Provenance::Cmem, true, values.iter().map(|v| v[k]).collect())?;
    }
    panel.retain_rows(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::r_squared;
    use crate::synth::{generate_volume_panel, SynthConfig};

    fn synth_days(cfg: &SynthConfig, stock: usize) -> Vec<Vec<f64>> {
        let (panel, _) = generate_volume_panel(cfg).unwrap();
        panel.volume[stock]
            .iter()
            .map(|d| d.iter().map(|&v| v as f64 / panel.outstanding_shares[stock]).collect())
            .collect()
    }

    #[test]
    fn feature_row_products() {
        let r = CmemFeatureRow::new(2.0, 0.5, 1.0);
        assert_eq!(r.values(), [2.0, 0.5, 1.0, 1.0, 1.0, 0.5, 2.0]);
        assert_eq!(CmemFeatureRow::new(1.0, 1.0, 1.0).values(), [1.0; 7]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = SynthConfig {
            n_stocks: 1,
            n_days: 6,
            ..Default::default()
        };
        let x: Vec<f64> = synth_days(&cfg, 0).into_iter().flatten().collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let x: Vec<f64> = x.iter().map(|v| v / mean).collect();
        let mut u = vec![-1.3, 0.2, 0.7, -0.4, 0.3, 0.1];
        u.extend((0..BINS_PER_DAY).map(|j| ((j as f64) * 0.37).sin() * 0.4));
        let mut g = vec![0.0; N_PARAMS];
        let f0 = objective_and_gradient(&u, &x, &mut g);
        let st = unpack(&u);
        assert!((f0 - filter(&st, &x, None)).abs() < 1e-12);
        let h = 1e-6;
        let mut scratch = vec![0.0; N_PARAMS];
        for k in 0..N_PARAMS {
            let mut up = u.clone();
            up[k] += h;
            let mut dn = u.clone();
            dn[k] -= h;
            let fd = (objective_and_gradient(&up, &x, &mut scratch) - objective_and_gradient(&dn, &x, &mut scratch)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "coordinate {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn constant_data_recovers_flat_profile() {
        let days = vec![vec![3.0e-4; 26]; 12];
        let f = fit(&days, &CmemConfig::default()).unwrap();
        for s in &f.seasonal {
            assert!((s - 1.0).abs() < 1e-6);
        }
        for mode in [ForecastMode::Static, ForecastMode::Dynamic] {
            let rows = f.forecast(&days, Some(&days[0]), mode).unwrap();
            for r in rows {
                assert!((r.x - 3.0e-4).abs() < 1e-9 * 3.0e-4 * 1e3, "{}", r.x);
            }
        }
    }

    #[test]
    fn too_few_days_is_an_error() {
        assert!(fit(&[vec![1.0; 26]], &CmemConfig::default()).is_err());
        assert!(fit(&[vec![1.0; 26], vec![1.0; 25]], &CmemConfig::default()).is_err());
    }

    #[test]
    fn identification_and_moment_condition() {
        let cfg = SynthConfig {
            n_stocks: 1,
            n_days: 40,
            ..Default::default()
        };
        let days = synth_days(&cfg, 0);
        let f = fit(&days, &CmemConfig::default()).unwrap();
        assert!(f.seasonal.iter().map(|s| s.ln()).sum::<f64>().abs() < 1e-8);
        assert!(f.seasonal.iter().all(|s| *s > 0.0));
        assert!(f.intra_params.alpha + f.intra_params.beta < 1.0);
        let (_, mu, eps) = f.filter_days(&days).unwrap();
        let all: Vec<f64> = eps.into_iter().flatten().collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        assert!((m - 1.0).abs() < 1e-3, "{m}");
        let mu_mean = mu.iter().flatten().sum::<f64>() / (40.0 * 26.0);
        assert!((mu_mean - 1.0).abs() < 0.02, "{mu_mean}");
        // x feature equals the product of the three components
        let rows = f.forecast(&days, None, ForecastMode::Static).unwrap();
        for r in rows {
            assert!((r.x - r.eta * r.seas * r.mu).abs() <= 1e-12 * r.x);
        }
    }

    #[test]
    fn scale_equivariance() {
        let cfg = SynthConfig {
            n_stocks: 1,
            n_days: 30,
            seed: 3,
            ..Default::default()
        };
        let days = synth_days(&cfg, 0);
        let base = fit(&days, &CmemConfig::default()).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let scaled: Vec<Vec<f64>> = days.iter().map(|d| d.iter().map(|v| v * c).collect()).collect();
            let f = fit(&scaled, &CmemConfig::default()).unwrap();
            for (a, b) in f.seasonal.iter().zip(&base.seasonal) {
                assert!((a - b).abs() < 1e-6, "seasonal {a} vs {b}");
            }
            for (a, b) in f.eta_path.iter().zip(&base.eta_path) {
                assert!((a - c * b).abs() < 1e-6 * c * b, "eta {a} vs {}", c * b);
            }
            assert!((f.intra_params.alpha - base.intra_params.alpha).abs() < 1e-6);
            assert!((f.intra_params.beta - base.intra_params.beta).abs() < 1e-6);
        }
    }

    #[test]
    fn static_forecast_ignores_target_day() {
        let cfg = SynthConfig {
            n_stocks: 1,
            n_days: 12,
            ..Default::default()
        };
        let days = synth_days(&cfg, 0);
        let f = fit(&days[..11], &CmemConfig::default()).unwrap();
        let a = f.forecast(&days[..11], Some(&days[11]), ForecastMode::Static).unwrap();
        let mutated = vec![1.0; 26];
        let b = f.forecast(&days[..11], Some(&mutated), ForecastMode::Static).unwrap();
        assert_eq!(a, b);
        assert!(f.forecast(&days[..11], None, ForecastMode::Dynamic).is_err());
    }

    #[test]
    fn dynamic_on_static_path_matches_static() {
        let cfg = SynthConfig {
            n_stocks: 1,
            n_days: 15,
            ..Default::default()
        };
        let days = synth_days(&cfg, 0);
        let f = fit(&days, &CmemConfig::default()).unwrap();
        let stat = f.forecast(&days, None, ForecastMode::Static).unwrap();
        let on_path: Vec<f64> = stat.iter().map(|r| r.x).collect();
        let dynamic = f.forecast(&days, Some(&on_path), ForecastMode::Dynamic).unwrap();
        for (a, b) in stat.iter().zip(&dynamic) {
            assert!((a.x - b.x).abs() < 1e-12 * a.x);
        }
    }

    #[test]
    fn no_intraday_dynamics_makes_modes_agree() {
        let mut f = fit(&vec![vec![1.0; 26]; 3], &CmemConfig::default()).unwrap();
        f.intra_params = RecursionParams {
            omega: 1.0,
            alpha: 0.0,
            beta: 0.0,
        };
        let hist = vec![(0..26).map(|j| 1.0 + j as f64 / 10.0).collect::<Vec<_>>(); 3];
        let next: Vec<f64> = (0..26).map(|j| 5.0 - j as f64 / 10.0).collect();
        let a = f.forecast(&hist, None, ForecastMode::Static).unwrap();
        let b = f.forecast(&hist, Some(&next), ForecastMode::Dynamic).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rolling_forecasts_are_out_of_sample() {
        let cfg = SynthConfig {
            n_stocks: 1,
            n_days: 25,
            ..Default::default()
        };
        let days = synth_days(&cfg, 0);
        let out = rolling_forecasts(&days, 10, 5, ForecastMode::Dynamic, &CmemConfig::default()).unwrap();
        assert_eq!(out.len(), 25);
        assert!(out[..10].iter().all(Option::is_none));
        let mut y = Vec::new();
        let mut p = Vec::new();
        for d in 10..25 {
            let rows = out[d].as_ref().unwrap();
            y.extend(&days[d]);
            p.extend(rows.iter().map(|r| r.x));
        }
        assert!(r_squared(&y, &p).unwrap() > 0.0);
    }
}
