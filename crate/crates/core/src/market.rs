//! Multi-asset Heston market: parameters, validation, coefficients, payoff and
//! Euler–Maruyama path simulation under the physical measure and the two
//! martingale measures used for pricing.
//!
//! Discounted prices follow
//! ```text
//! dS = diag(S) (A diag(Y²) μ̄ dt + A diag(Y) dW)
//! dY² = diag(κ)(θ − Y²) dt + diag(σ) diag(Y) (diag(ρ) dW + diag(√(1−ρ²)) dB)
//! ```
//! with `Y = √Y²`. The variance uses full truncation: the positive part of the
//! running variance enters both drift and diffusion, and stored paths hold that
//! positive part.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, ArrayViewMut1, ArrayViewMut2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::riccati::RiccatiCurves;

/// Probability measure a batch of paths is simulated under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    /// Physical measure.
    P,
    /// Variance-optimal martingale measure (mean-variance hedging).
    #[serde(rename = "Q_mv")]
    QMv,
    /// Minimal martingale measure (local risk minimization).
    #[serde(rename = "Q_lr")]
    QLr,
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Measure::P => "P",
            Measure::QMv => "Q_mv",
            Measure::QLr => "Q_lr",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub m: usize,
    /// Mixing matrix, row-major `m × m`.
    pub a: Vec<Vec<f64>>,
    pub mu_bar: Vec<f64>,
    /// Short-rate loadings; an empty vector means `r̄ = 0`.
    #[serde(default)]
    pub r_bar: Vec<f64>,
    pub kappa: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
    pub s0: Vec<f64>,
    pub y0_sq: Vec<f64>,
    pub strike: f64,
    pub maturity: f64,
}

impl HestonParams {
    /// Model configuration used throughout the numerical experiments:
    /// `A = I`, `μ̄ = 0.1`, `κ = 0.5`, `θ = 0.05`, `σ = 0.1`, `ρ = −0.45`,
    /// `S̃₀ = 100`, `Y²₀ = 0.025`, `K = 100`, `T = 1`.
    pub fn table1(m: usize) -> Self {
        let mut a = vec![vec![0.0; m]; m];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        HestonParams {
            m,
            a,
            mu_bar: vec![0.1; m],
            r_bar: Vec::new(),
            kappa: vec![0.5; m],
            theta: vec![0.05; m],
            sigma: vec![0.1; m],
            rho: vec![-0.45; m],
            s0: vec![100.0; m],
            y0_sq: vec![0.025; m],
            strike: 100.0,
            maturity: 1.0,
        }
    }

    /// Extracts the one-dimensional model of component `j` (diagonal `A` only).
    pub fn component(&self, j: usize) -> HestonParams {
        HestonParams {
            m: 1,
            a: vec![vec![self.a[j][j]]],
            mu_bar: vec![self.mu_bar[j]],
            r_bar: if self.r_bar.is_empty() {
                Vec::new()
            } else {
                vec![self.r_bar[j]]
            },
            kappa: vec![self.kappa[j]],
            theta: vec![self.theta[j]],
            sigma: vec![self.sigma[j]],
            rho: vec![self.rho[j]],
            s0: vec![self.s0[j]],
            y0_sq: vec![self.y0_sq[j]],
            strike: self.strike,
            maturity: self.maturity,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_json_value(serde_json::from_str(s)?)
    }

    /// Fields missing from `v` are taken from [`HestonParams::table1`] with
    /// the given `m` (default 1).
    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let serde_json::Value::Object(given) = v else {
            return Err(HedgeError::InvalidParams(
                "model parameters must be a JSON object".into(),
            ));
        };
        let m =
            match given.get("m") {
                None => 1,
                Some(m) => m.as_u64().filter(|&m| m >= 1).ok_or_else(|| {
                    HedgeError::InvalidParams(format!("asset count must be a positive integer, got {m}"))
                })? as usize,
            };
        let mut full = serde_json::to_value(Self::table1(m))?;
        let obj = full.as_object_mut().expect("struct serializes to an object");
        obj.extend(given);
        let p: HestonParams = serde_json::from_value(full)?;
        p.check_dims()?;
        Ok(p)
    }

    pub fn r_bar(&self, i: usize) -> f64 {
        self.r_bar.get(i).copied().unwrap_or(0.0)
    }

    pub fn has_rate(&self) -> bool {
        self.r_bar.iter().any(|&r| r != 0.0)
    }

    pub fn is_diagonal(&self) -> bool {
        self.a
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| i == j || v == 0.0))
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, j| self.a[i][j])
    }

    pub fn check_dims(&self) -> Result<()> {
        let m = self.m;
        if m == 0 {
            return Err(HedgeError::InvalidParams("m must be at least 1".into()));
        }
        let vectors: [(&'static str, usize); 8] = [
            ("mu_bar", self.mu_bar.len()),
            ("kappa", self.kappa.len()),
            ("theta", self.theta.len()),
            ("sigma", self.sigma.len()),
            ("rho", self.rho.len()),
            ("s0", self.s0.len()),
            ("y0_sq", self.y0_sq.len()),
            ("a rows", self.a.len()),
        ];
        for (what, got) in vectors {
            if got != m {
                return Err(HedgeError::Dimension { what, expected: m, got });
            }
        }
        if !self.r_bar.is_empty() && self.r_bar.len() != m {
            return Err(HedgeError::Dimension {
                what: "r_bar",
                expected: m,
                got: self.r_bar.len(),
            });
        }
        for row in &self.a {
            if row.len() != m {
                return Err(HedgeError::Dimension {
                    what: "a columns",
                    expected: m,
                    got: row.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`validate`]; failing checks are listed, never repaired.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// All checks except the mean-variance existence condition.
    pub fn is_ok(&self) -> bool {
        self.checks
            .iter()
            .filter(|c| !c.name.starts_with("rho_sq_below_half"))
            .all(|c| c.passed)
    }

    /// Everything including `ρᵢ² < ½`.
    pub fn mvh_ok(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub(crate) fn into_result(self, require_mvh: bool) -> Result<()> {
        let ok = if require_mvh { self.mvh_ok() } else { self.is_ok() };
        if ok {
            Ok(())
        } else {
            let names: Vec<String> = self
                .failures()
                .filter(|c| require_mvh || !c.name.starts_with("rho_sq_below_half"))
                .map(|c| format!("{} ({})", c.name, c.detail))
                .collect();
            Err(HedgeError::InvalidParams(names.join("; ")))
        }
    }
}

pub fn validate(params: &HestonParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = params.check_dims() {
        report.push("dimensions", false, e.to_string());
        return report;
    }
    report.push("dimensions", true, format!("m = {}", params.m));
    for i in 0..params.m {
        let lhs = 2.0 * params.kappa[i] * params.theta[i];
        let rhs = params.sigma[i] * params.sigma[i];
        report.push(
            format!("feller[{i}]"),
            lhs > rhs,
            format!("2κθ = {lhs:.6} vs σ² = {rhs:.6}"),
        );
    }
    for i in 0..params.m {
        let r = params.rho[i];
        report.push(format!("rho_range[{i}]"), (-1.0..=1.0).contains(&r), format!("ρ = {r}"));
    }
    for i in 0..params.m {
        let r2 = params.rho[i] * params.rho[i];
        report.push(format!("rho_sq_below_half[{i}]"), r2 < 0.5, format!("ρ² = {r2:.6}"));
    }
    let a = params.a_matrix();
    let lu = a.clone().lu();
    let det = lu.determinant();
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    report.push(
        "a_invertible",
        det.is_finite() && det.abs() > 1e-12 * scale.powi(params.m as i32),
        format!("det(A) = {det:e}"),
    );
    for i in 0..params.m {
        report.push(
            format!("y0_sq_positive[{i}]"),
            params.y0_sq[i] > 0.0,
            format!("Y²₀ = {}", params.y0_sq[i]),
        );
        report.push(
            format!("s0_positive[{i}]"),
            params.s0[i] > 0.0,
            format!("S̃₀ = {}", params.s0[i]),
        );
    }
    report.push("strike_positive", params.strike > 0.0, format!("K = {}", params.strike));
    report.push(
        "maturity_positive",
        params.maturity > 0.0,
        format!("T = {}", params.maturity),
    );
    report
}

/// Market coefficients at a state `(s̃, y²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketCoeffs {
    /// `A diag(y)`, row-major `m × m`.
    pub sigma_t: Vec<f64>,
    /// Market price of risk `diag(y) μ̄`.
    pub phi: Vec<f64>,
    /// `diag(s̃) A diag(y²) μ̄`.
    pub drift_s: Vec<f64>,
    pub r_t: f64,
}

pub fn coeffs_at(params: &HestonParams, s_tilde: &[f64], y_sq: &[f64]) -> Result<MarketCoeffs> {
    let m = params.m;
    for (what, len) in [("s_tilde", s_tilde.len()), ("y_sq", y_sq.len())] {
        if len != m {
            return Err(HedgeError::Dimension {
                what,
                expected: m,
                got: len,
            });
        }
    }
    if let Some(&v) = y_sq.iter().find(|&&v| v < 0.0) {
        return Err(HedgeError::NegativeVariance(v));
    }
    let y: Vec<f64> = y_sq.iter().map(|v| v.sqrt()).collect();
    let mut sigma_t = vec![0.0; m * m];
    let mut drift_s = vec![0.0; m];
    for i in 0..m {
        let mut d = 0.0;
        for j in 0..m {
            sigma_t[i * m + j] = params.a[i][j] * y[j];
            d += params.a[i][j] * y_sq[j] * params.mu_bar[j];
        }
        drift_s[i] = s_tilde[i] * d;
    }
    let phi = (0..m).map(|j| y[j] * params.mu_bar[j]).collect();
    let r_t = (0..m).map(|j| params.r_bar(j) * y_sq[j]).sum();
    Ok(MarketCoeffs {
        sigma_t,
        phi,
        drift_s,
        r_t,
    })
}

/// Undiscounted basket call `max(Σ sᵢ − mK, 0)`.
pub fn payoff(s_terminal: &[f64], params: &HestonParams) -> Result<f64> {
    if s_terminal.len() != params.m {
        return Err(HedgeError::Dimension {
            what: "s_terminal",
            expected: params.m,
            got: s_terminal.len(),
        });
    }
    Ok(discounted_payoff(s_terminal, 1.0, params))
}

/// Discounted claim `e^{−∫r} max(Σ Sᵢ_T − mK, 0)` written in discounted prices:
/// `max(Σ S̃ᵢ_T − mK·D_T, 0)` with `D_T = e^{−∫r}`.
pub fn discounted_payoff(s_tilde_terminal: &[f64], discount: f64, params: &HestonParams) -> f64 {
    let basket: f64 = s_tilde_terminal.iter().sum();
    (basket - params.m as f64 * params.strike * discount).max(0.0)
}

/// European claim paid at maturity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// `max(Σ Sᵢ_T − mK, 0)`.
    #[default]
    BasketCall,
    /// A fixed amount.
    Constant(f64),
}

impl Claim {
    /// Discounted claim on path `b`.
    pub fn discounted(&self, paths: &PathBatch, params: &HestonParams, b: usize) -> f64 {
        match *self {
            Claim::BasketCall => paths.terminal_payoff(params, b),
            Claim::Constant(c) => c * paths.discount[[b, paths.n_steps]],
        }
    }
}

/// A batch of discretized forward paths on the uniform grid `t_n = n Δt`.
#[derive(Clone, Debug)]
pub struct PathBatch {
    pub n_steps: usize,
    pub dt: f64,
    pub batch_size: usize,
    pub m: usize,
    /// `B × (N+1) × m`.
    pub s_tilde: Array3<f64>,
    /// `B × (N+1) × m`, positive part of the running variance.
    pub y_sq: Array3<f64>,
    /// `B × N × m` increments of the `W` Brownian motion of `measure`.
    pub dw: Array3<f64>,
    /// `B × N × m` increments of `B`.
    pub db: Array3<f64>,
    /// `B × (N+1)` discount factors `e^{−∫₀^{t_n} r ds}`.
    pub discount: Array2<f64>,
    pub measure: Measure,
}

impl PathBatch {
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn terminal_payoff(&self, params: &HestonParams, b: usize) -> f64 {
        let s = self.s_tilde.slice(s![b, self.n_steps, ..]);
        let s = s.as_slice().expect("contiguous");
        discounted_payoff(s, self.discount[[b, self.n_steps]], params)
    }

    /// Long-format CSV: one row per (path, step, asset).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["path", "step", "asset", "s_tilde", "y_sq", "dw", "db"])?;
        for b in 0..self.batch_size {
            for n in 0..=self.n_steps {
                for i in 0..self.m {
                    let (dw, db) = if n < self.n_steps {
                        (self.dw[[b, n, i]].to_string(), self.db[[b, n, i]].to_string())
                    } else {
                        (String::new(), String::new())
                    };
                    out.write_record([
                        b.to_string(),
                        n.to_string(),
                        i.to_string(),
                        self.s_tilde[[b, n, i]].to_string(),
                        self.y_sq[[b, n, i]].to_string(),
                        dw,
                        db,
                    ])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Standard normal draws for a batch: `B × N × 2m`, the first `m` entries of
/// each step drive `W`, the remaining `m` drive `B`.
///
/// Every path has its own ChaCha stream keyed by its index, so results do not
/// depend on how many threads fill the batch. With `antithetic`, path `2k+1`
/// reuses the draws of path `2k` with flipped sign.
pub fn draw_normals(seed: u64, batch: usize, n_steps: usize, m: usize, antithetic: bool) -> Array3<f64> {
    draw_normals_range(seed, 0, batch, n_steps, m, antithetic)
}

/// Draws for global paths `first..first + count` of the same stream family
/// as [`draw_normals`].
pub fn draw_normals_range(
    seed: u64,
    first: usize,
    count: usize,
    n_steps: usize,
    m: usize,
    antithetic: bool,
) -> Array3<f64> {
    let mut z = Array3::<f64>::zeros((count, n_steps, 2 * m));
    Zip::indexed(z.outer_iter_mut()).par_for_each(|k, mut zb| {
        let b = first + k;
        let (stream, sign) = if antithetic {
            ((b / 2) as u64, if b % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (b as u64, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        for v in zb.iter_mut() {
            let x: f64 = rng.sample(StandardNormal);
            *v = sign * x;
        }
    });
    z
}

/// Simulates `batch_size` Euler paths with `n_steps` uniform steps.
///
/// Under [`Measure::QMv`] the mixing matrix must be diagonal; the measure
/// change is applied per component with the closed-form `χ₁` curves.
pub fn simulate(
    params: &HestonParams,
    n_steps: usize,
    batch_size: usize,
    seed: u64,
    measure: Measure,
) -> Result<PathBatch> {
    simulate_with(params, n_steps, batch_size, seed, measure, false)
}

pub fn simulate_with(
    params: &HestonParams,
    n_steps: usize,
    batch_size: usize,
    seed: u64,
    measure: Measure,
    antithetic: bool,
) -> Result<PathBatch> {
    simulate_range(params, n_steps, seed, measure, 0, batch_size, antithetic)
}

/// Paths `first..first + count` of the batch that [`simulate_with`] would
/// produce with the same seed; lets large batches be processed in blocks.
pub fn simulate_range(
    params: &HestonParams,
    n_steps: usize,
    seed: u64,
    measure: Measure,
    first: usize,
    count: usize,
    antithetic: bool,
) -> Result<PathBatch> {
    if n_steps == 0 {
        return Err(HedgeError::InvalidParams("at least one time step is required".into()));
    }
    params.check_dims()?;
    let z = draw_normals_range(seed, first, count, n_steps, params.m, antithetic);
    let dt = params.maturity / n_steps as f64;
    let sq = dt.sqrt();
    let m = params.m;
    let dw = z.slice(s![.., .., 0..m]).mapv(|v| v * sq);
    let db = z.slice(s![.., .., m..2 * m]).mapv(|v| v * sq);
    evolve(params, measure, dw, db)
}

/// Runs the Euler scheme on given Brownian increments (`B × N × m` each).
pub fn evolve(params: &HestonParams, measure: Measure, dw: Array3<f64>, db: Array3<f64>) -> Result<PathBatch> {
    validate(params).into_result(false)?;
    if dw.dim() != db.dim() || dw.dim().2 != params.m {
        return Err(HedgeError::Dimension {
            what: "increments",
            expected: params.m,
            got: dw.dim().2,
        });
    }
    let curves = match measure {
        Measure::QMv => {
            if !params.is_diagonal() {
                return Err(HedgeError::Unsupported(
                    "Q_mv simulation requires a diagonal mixing matrix".into(),
                ));
            }
            Some(RiccatiCurves::new(params)?)
        }
        _ => None,
    };
    let (batch, n_steps, m) = dw.dim();
    let dt = params.maturity / n_steps as f64;
    let mut s_tilde = Array3::<f64>::zeros((batch, n_steps + 1, m));
    let mut y_sq = Array3::<f64>::zeros((batch, n_steps + 1, m));
    let mut discount = Array2::<f64>::zeros((batch, n_steps + 1));
    let stepper = Stepper::new(params, measure, curves.as_ref(), dt);

    Zip::from(s_tilde.outer_iter_mut())
        .and(y_sq.outer_iter_mut())
        .and(discount.outer_iter_mut())
        .and(dw.outer_iter())
        .and(db.outer_iter())
        .par_for_each(|s_b, v_b, d_b, dw_b, db_b| {
            stepper.run_path(s_b, v_b, d_b, dw_b, db_b);
        });

    Ok(PathBatch {
        n_steps,
        dt,
        batch_size: batch,
        m,
        s_tilde,
        y_sq,
        dw,
        db,
        discount,
        measure,
    })
}

struct Stepper<'a> {
    params: &'a HestonParams,
    measure: Measure,
    curves: Option<&'a RiccatiCurves>,
    dt: f64,
    diagonal: bool,
    sqrt_one_minus_rho2: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(params: &'a HestonParams, measure: Measure, curves: Option<&'a RiccatiCurves>, dt: f64) -> Self {
        Stepper {
            params,
            measure,
            curves,
            dt,
            diagonal: params.is_diagonal(),
            sqrt_one_minus_rho2: params.rho.iter().map(|r| (1.0 - r * r).max(0.0).sqrt()).collect(),
        }
    }

    /// Variance drift coefficient multiplying the positive part `v⁺`, and
    /// the constant part, under the active measure: drift = `c − k v⁺`.
    fn variance_drift(&self, i: usize, t: f64) -> (f64, f64) {
        let p = self.params;
        let base = p.kappa[i] * p.theta[i];
        let k = match self.measure {
            Measure::P => p.kappa[i],
            Measure::QLr => p.kappa[i] + p.sigma[i] * p.rho[i] * p.mu_bar[i],
            Measure::QMv => {
                let chi1 = self.curves.expect("curves for Q_mv").chi1(i, t);
                p.kappa[i] + p.rho[i] * p.sigma[i] * p.mu_bar[i]
                    - chi1 * p.sigma[i] * p.sigma[i] * (1.0 - p.rho[i] * p.rho[i])
            }
        };
        (base, k)
    }

    fn run_path(
        &self,
        mut s_b: ArrayViewMut2<f64>,
        mut v_b: ArrayViewMut2<f64>,
        mut d_b: ArrayViewMut1<f64>,
        dw_b: ndarray::ArrayView2<f64>,
        db_b: ndarray::ArrayView2<f64>,
    ) {
        let p = self.params;
        let m = p.m;
        let n_steps = dw_b.nrows();
        let dt = self.dt;
        let mut s: Vec<f64> = p.s0.clone();
        let mut v_raw: Vec<f64> = p.y0_sq.clone();
        let mut vp = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut disc = 1.0;
        let drift_on = self.measure == Measure::P;
        for n in 0..=n_steps {
            for i in 0..m {
                vp[i] = v_raw[i].max(0.0);
                y[i] = vp[i].sqrt();
                s_b[[n, i]] = s[i];
                v_b[[n, i]] = vp[i];
            }
            d_b[n] = disc;
            if n == n_steps {
                break;
            }
            let t = n as f64 * dt;
            let dw = dw_b.row(n);
            let db = db_b.row(n);
            if self.diagonal {
                for i in 0..m {
                    let a = p.a[i][i];
                    let drift = if drift_on { a * vp[i] * p.mu_bar[i] } else { 0.0 };
                    s[i] *= 1.0 + drift * dt + a * y[i] * dw[i];
                }
            } else {
                let s_old = s.clone();
                for i in 0..m {
                    let mut drift = 0.0;
                    let mut diff = 0.0;
                    for j in 0..m {
                        let a = p.a[i][j];
                        if drift_on {
                            drift += a * vp[j] * p.mu_bar[j];
                        }
                        diff += a * y[j] * dw[j];
                    }
                    s[i] = s_old[i] * (1.0 + drift * dt + diff);
                }
            }
            let mut r = 0.0;
            for i in 0..m {
                let (c, k) = self.variance_drift(i, t);
                v_raw[i] +=
                    (c - k * vp[i]) * dt + p.sigma[i] * y[i] * (p.rho[i] * dw[i] + self.sqrt_one_minus_rho2[i] * db[i]);
                r += p.r_bar(i) * vp[i];
            }
            if r != 0.0 {
                disc *= (-r * dt).exp();
            }
        }
    }
}

/// Splitmix64 finalizer; derives independent stream seeds from a base seed.
pub fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
