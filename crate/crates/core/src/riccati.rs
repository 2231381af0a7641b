//! Closed-form solution of the stochastic Riccati equation for the Heston
//! market with diagonal structure.
//!
//! Each component `j` contributes `exp(χ₀ʲ(t) + χ₁ʲ(t) Y²ⱼ)` to the
//! opportunity process. With `τ = T − t` the scalar Riccati ODE reads
//! `dχ₁/dτ = 𝔄 + 𝔅 χ₁ + ℭ χ₁²`, `dχ₀/dτ = 𝔉 χ₁`, both vanishing at `τ = 0`.
//!
//! The textbook expressions contain `e^{±𝔇τ/2}` and a cancellation between
//! `−𝔅/2ℭ` and the fraction; we evaluate the algebraically equivalent
//! forms
//! ```text
//! χ₁ = 2𝔄 (1 − e^{−𝔇τ}) / [(𝔅+𝔇) e^{−𝔇τ} − (𝔅−𝔇)]
//! χ₀ = 𝔉 [ 2𝔄τ/(𝔇−𝔅) − ln(1 + 2𝔄ℭ(1 − e^{−𝔇τ}) / (𝔇(𝔇−𝔅))) / ℭ ]
//! ```
//! which only involve decaying exponentials.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::market::HestonParams;

/// Grid size used for cached curves.
pub const CURVE_POINTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiccatiConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub f: f64,
}

pub fn riccati_constants(params: &HestonParams, j: usize) -> Result<RiccatiConstants> {
    let mu = params.mu_bar[j];
    let kappa = params.kappa[j];
    let sigma = params.sigma[j];
    let rho = params.rho[j];
    let a = -mu * mu;
    let b = -kappa - 2.0 * rho * sigma * mu;
    let c = 0.5 * sigma * sigma * (1.0 - 2.0 * rho * rho);
    let disc = b * b - 4.0 * a * c;
    if c == 0.0 {
        return Err(HedgeError::Unsupported(format!(
            "component {j}: C = 0 (ρ² = ½ or σ = 0) has no closed form here"
        )));
    }
    if disc.is_nan() || disc <= 0.0 {
        return Err(HedgeError::Unsupported(format!(
            "component {j}: D² = {disc:e} is not positive"
        )));
    }
    Ok(RiccatiConstants {
        a,
        b,
        c,
        d: disc.sqrt(),
        f: kappa * params.theta[j],
    })
}

impl RiccatiConstants {
    /// `(χ₀, χ₁)` at time-to-maturity `tau ≥ 0`.
    pub fn chi_tau(&self, tau: f64) -> (f64, f64) {
        let RiccatiConstants { a, b, c, d, f } = *self;
        let one_minus_e = -(-d * tau).exp_m1();
        let e = 1.0 - one_minus_e;
        let den = (b + d) * e - (b - d);
        let chi1 = 2.0 * a * one_minus_e / den;
        let chi0 = f * (2.0 * a * tau / (d - b) - (2.0 * a * c * one_minus_e / (d * (d - b))).ln_1p() / c);
        (chi0, chi1)
    }

    /// Same quantities evaluated literally from the published expressions
    /// (kept for cross-checking the rearranged forms).
    pub fn chi_tau_direct(&self, tau: f64) -> (f64, f64) {
        let RiccatiConstants { b, c, d, f, .. } = *self;
        let em = (-d * tau / 2.0).exp();
        let ep = (d * tau / 2.0).exp();
        let chi0 = f * (-b / (2.0 * c) * tau - ((b + d) * em - (b - d) * ep).ln() / c + (2.0 * d).ln() / c);
        let chi1 = -b / (2.0 * c) + d / (2.0 * c) * ((b + d) * em + (b - d) * ep) / ((b + d) * em - (b - d) * ep);
        (chi0, chi1)
    }
}

/// `(χ₀ʲ(t), χ₁ʲ(t))` at calendar time `t ∈ [0, T]`.
pub fn chi(t: f64, params: &HestonParams, j: usize) -> Result<(f64, f64)> {
    if !(0.0..=params.maturity).contains(&t) {
        return Err(HedgeError::InvalidParams(format!(
            "time {t} outside [0, {}]",
            params.maturity
        )));
    }
    Ok(riccati_constants(params, j)?.chi_tau(params.maturity - t))
}

/// Opportunity process `L = Πⱼ exp(χ₀ʲ(t) + χ₁ʲ(t) y²ⱼ)`.
pub fn opportunity_process(params: &HestonParams, t: f64, y_sq: &[f64]) -> Result<f64> {
    if y_sq.len() != params.m {
        return Err(HedgeError::Dimension {
            what: "y_sq",
            expected: params.m,
            got: y_sq.len(),
        });
    }
    let mut log_l = 0.0;
    for (j, &v) in y_sq.iter().enumerate() {
        let (c0, c1) = chi(t, params, j)?;
        log_l += c0 + c1 * v;
    }
    Ok(log_l.exp())
}

/// Controls of the BSRE solution:
/// `Λ₁ = L diag(ρ) diag(y) diag(σ) ψ`, `Λ₂ = L diag(√(1−ρ²)) diag(y) diag(σ) ψ`.
pub fn bsre_controls(params: &HestonParams, t: f64, y_sq: &[f64], l: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = params.m;
    let mut l1 = vec![0.0; m];
    let mut l2 = vec![0.0; m];
    for j in 0..m {
        let (_, psi) = chi(t, params, j)?;
        let base = l * y_sq[j].max(0.0).sqrt() * params.sigma[j] * psi;
        l1[j] = params.rho[j] * base;
        l2[j] = (1.0 - params.rho[j] * params.rho[j]).max(0.0).sqrt() * base;
    }
    Ok((l1, l2))
}

/// `χ` curves cached on a uniform calendar-time grid, linearly interpolated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiccatiCurves {
    pub maturity: f64,
    pub constants: Vec<RiccatiConstants>,
    /// Per component, values at `t_k = k T / (points − 1)`.
    pub chi0: Vec<Vec<f64>>,
    pub chi1: Vec<Vec<f64>>,
}

impl RiccatiCurves {
    pub fn new(params: &HestonParams) -> Result<Self> {
        Self::with_points(params, CURVE_POINTS)
    }

    pub fn with_points(params: &HestonParams, points: usize) -> Result<Self> {
        let points = points.max(2);
        let t_max = params.maturity;
        let mut constants = Vec::with_capacity(params.m);
        let mut chi0 = Vec::with_capacity(params.m);
        let mut chi1 = Vec::with_capacity(params.m);
        for j in 0..params.m {
            let k = riccati_constants(params, j)?;
            let (c0, c1): (Vec<f64>, Vec<f64>) = (0..points)
                .map(|i| {
                    let t = t_max * i as f64 / (points - 1) as f64;
                    k.chi_tau(t_max - t)
                })
                .unzip();
            constants.push(k);
            chi0.push(c0);
            chi1.push(c1);
        }
        Ok(RiccatiCurves {
            maturity: t_max,
            constants,
            chi0,
            chi1,
        })
    }

    fn lerp(&self, values: &[f64], t: f64) -> f64 {
        let last = values.len() - 1;
        let x = (t / self.maturity).clamp(0.0, 1.0) * last as f64;
        let i = (x.floor() as usize).min(last - 1);
        let w = x - i as f64;
        values[i] * (1.0 - w) + values[i + 1] * w
    }

    pub fn chi0(&self, j: usize, t: f64) -> f64 {
        self.lerp(&self.chi0[j], t)
    }

    pub fn chi1(&self, j: usize, t: f64) -> f64 {
        self.lerp(&self.chi1[j], t)
    }

    pub fn opportunity(&self, t: f64, y_sq: &[f64]) -> f64 {
        (0..self.chi0.len())
            .map(|j| self.chi0(j, t) + self.chi1(j, t) * y_sq[j])
            .sum::<f64>()
            .exp()
    }

    /// CSV with columns `t, chi0_0, chi1_0, chi0_1, …`.
    pub fn write_csv<W: Write>(&self, w: W, stride: usize) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let m = self.chi0.len();
        let mut header = vec!["t".to_string()];
        for j in 0..m {
            header.push(format!("chi0_{j}"));
            header.push(format!("chi1_{j}"));
        }
        out.write_record(&header)?;
        let n = self.chi0.first().map_or(0, Vec::len);
        let stride = stride.max(1);
        let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
        if idx.last() != Some(&(n - 1)) {
            idx.push(n - 1);
        }
        for i in idx {
            let t = self.maturity * i as f64 / (n - 1) as f64;
            let mut row = vec![t.to_string()];
            for j in 0..m {
                row.push(self.chi0[j][i].to_string());
                row.push(self.chi1[j][i].to_string());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
