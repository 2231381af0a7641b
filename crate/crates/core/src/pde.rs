//! One-asset benchmark: the Heston pricing PDE under either pricing measure,
//! marched in time to maturity `τ = T − t` with the modified Craig–Sneyd
//! ADI scheme, plus the strategies read off its solution.
//!
//! State is `(v, s)` with `v` the variance. Arrays are indexed `[[j, i]]`
//! with `j` along `v` and `i` along `s`.

use std::io::Write;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::hedge::HedgeRun;
use crate::market::{validate, HestonParams, PathBatch};
use crate::riccati::{riccati_constants, RiccatiConstants};

/// Far-field price as a multiple of the strike.
pub const S_MAX_FACTOR: f64 = 8.0;
/// Far-field variance.
pub const V_MAX: f64 = 5.0;
/// MCS weight.
pub const THETA: f64 = 1.0 / 3.0;
/// Above this variance the drift term is discretized upwind.
const UPWIND_FROM: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeMode {
    /// Variance-optimal measure: `κ̃(t) = κ + ρσμ − χ₁(t)σ²(1−ρ²)`.
    Mvh,
    /// Minimal martingale measure: `κ̃ = κ + ρσμ`.
    Lrm,
}

/// Grid resolution of the benchmark solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeConfig {
    pub m_s: usize,
    pub m_y: usize,
    pub n_time: usize,
}

impl Default for PdeConfig {
    fn default() -> Self {
        PdeConfig {
            m_s: 200,
            m_y: 100,
            n_time: 200,
        }
    }
}

/// Builds the grid and solves in one call.
pub fn solve_default(params: &HestonParams, mode: PdeMode, cfg: &PdeConfig) -> Result<PdeGrid> {
    let grid = build_grid(params.strike, cfg.m_s, cfg.m_y)?;
    solve_pde(params, mode, &grid, cfg.n_time)
}

/// Time-dependent variance drift `κθ − κ̃(τ)v`.
#[derive(Clone, Debug)]
pub struct PdeCoeffs {
    pub mode: PdeMode,
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub mu: f64,
    constants: Option<RiccatiConstants>,
}

impl PdeCoeffs {
    pub fn new(params: &HestonParams, mode: PdeMode) -> Result<Self> {
        if params.m != 1 {
            return Err(HedgeError::Unsupported(format!(
                "the PDE benchmark is one-dimensional, got m = {}",
                params.m
            )));
        }
        validate(params).into_result(mode == PdeMode::Mvh)?;
        let constants = match mode {
            PdeMode::Mvh => Some(riccati_constants(params, 0)?),
            PdeMode::Lrm => None,
        };
        Ok(PdeCoeffs {
            mode,
            kappa: params.kappa[0],
            theta: params.theta[0],
            sigma: params.sigma[0],
            rho: params.rho[0],
            mu: params.mu_bar[0],
            constants,
        })
    }

    /// `χ₁` at time to maturity `τ` (zero in local-risk mode).
    pub fn chi1_tau(&self, tau: f64) -> f64 {
        self.constants.map_or(0.0, |k| k.chi_tau(tau).1)
    }

    /// Mean-reversion speed at time to maturity `τ`.
    pub fn kappa_tilde(&self, tau: f64) -> f64 {
        let base = self.kappa + self.rho * self.sigma * self.mu;
        match self.mode {
            PdeMode::Lrm => base,
            PdeMode::Mvh => base - self.chi1_tau(tau) * self.sigma * self.sigma * (1.0 - self.rho * self.rho),
        }
    }

    /// `θ̃ = κθ/κ̃`, so that `κ̃θ̃ = κθ`.
    pub fn theta_tilde(&self, tau: f64) -> f64 {
        self.kappa * self.theta / self.kappa_tilde(tau)
    }
}

/// Meshes plus the value slices `f(τ_k, v_j, s_i)`.
#[derive(Clone, Debug)]
pub struct PdeGrid {
    pub strike: f64,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub maturity: f64,
    /// `τ_k = kΔτ`, filled by [`solve_pde`].
    pub tau: Vec<f64>,
    /// One `(m_v+1) × (m_s+1)` array per stored `τ_k`.
    pub slices: Vec<Array2<f64>>,
    pub mode: Option<PdeMode>,
}

/// `x_k = center + c·sinh(ξ_k)` on a uniform `ξ` grid with exact endpoints.
fn sinh_mesh(lo: f64, hi: f64, center: f64, c: f64, intervals: usize) -> Vec<f64> {
    let a = ((lo - center) / c).asinh();
    let b = ((hi - center) / c).asinh();
    let mut x: Vec<f64> = (0..=intervals)
        .map(|k| center + c * (a + (b - a) * k as f64 / intervals as f64).sinh())
        .collect();
    x[0] = lo;
    x[intervals] = hi;
    x
}

pub fn build_grid(strike: f64, m_s: usize, m_y: usize) -> Result<PdeGrid> {
    if m_s < 16 || m_y < 16 {
        return Err(HedgeError::InvalidParams(format!(
            "PDE grid too coarse: m_s = {m_s}, m_y = {m_y} (need at least 16 each)"
        )));
    }
    if strike <= 0.0 {
        return Err(HedgeError::InvalidParams("strike must be positive".into()));
    }
    let s = sinh_mesh(0.0, S_MAX_FACTOR * strike, strike, strike / 5.0, m_s);
    let v = sinh_mesh(0.0, V_MAX, 0.0, V_MAX / 500.0, m_y);
    Ok(PdeGrid {
        strike,
        s,
        v,
        maturity: 0.0,
        tau: Vec::new(),
        slices: Vec::new(),
        mode: None,
    })
}

/// Three-point stencil weights for node `k` of a non-uniform mesh.
#[derive(Clone, Copy, Debug, Default)]
struct Stencil {
    lo: f64,
    mid: f64,
    hi: f64,
}

fn central_first(x: &[f64], k: usize) -> Stencil {
    let (h0, h1) = (x[k] - x[k - 1], x[k + 1] - x[k]);
    Stencil {
        lo: -h1 / (h0 * (h0 + h1)),
        mid: (h1 - h0) / (h0 * h1),
        hi: h0 / (h1 * (h0 + h1)),
    }
}

fn central_second(x: &[f64], k: usize) -> Stencil {
    let (h0, h1) = (x[k] - x[k - 1], x[k + 1] - x[k]);
    Stencil {
        lo: 2.0 / (h0 * (h0 + h1)),
        mid: -2.0 / (h0 * h1),
        hi: 2.0 / (h1 * (h0 + h1)),
    }
}

/// Second-order forward first derivative at node 0: weights on nodes 0, 1, 2.
fn forward_first(x: &[f64]) -> [f64; 3] {
    let (h1, h2) = (x[1] - x[0], x[2] - x[1]);
    [
        -(2.0 * h1 + h2) / (h1 * (h1 + h2)),
        (h1 + h2) / (h1 * h2),
        -h1 / (h2 * (h1 + h2)),
    ]
}

/// Semi-discrete operator `F = A₀ + A₁ + A₂` with boundary data folded in.
struct Operator<'a> {
    s: &'a [f64],
    v: &'a [f64],
    coeffs: &'a PdeCoeffs,
    ds1: Vec<Stencil>,
    ds2: Vec<Stencil>,
    dv1: Vec<Stencil>,
    dv2: Vec<Stencil>,
    fwd_v: [f64; 3],
    /// Spacing of the last `s` cell; the ghost node mirrors it.
    h_last: f64,
}

impl<'a> Operator<'a> {
    fn new(grid: &'a PdeGrid, coeffs: &'a PdeCoeffs) -> Self {
        let (ms, mv) = (grid.s.len() - 1, grid.v.len() - 1);
        let mut ds1 = vec![Stencil::default(); ms + 1];
        let mut ds2 = vec![Stencil::default(); ms + 1];
        for i in 1..ms {
            ds1[i] = central_first(&grid.s, i);
            ds2[i] = central_second(&grid.s, i);
        }
        let h = grid.s[ms] - grid.s[ms - 1];
        // ghost node f_{ms+1} = f_{ms−1} + 2h gives f_s = 1 and this f_ss
        ds2[ms] = Stencil {
            lo: 2.0 / (h * h),
            mid: -2.0 / (h * h),
            hi: 0.0,
        };
        let mut dv1 = vec![Stencil::default(); mv + 1];
        let mut dv2 = vec![Stencil::default(); mv + 1];
        for j in 1..mv {
            dv1[j] = central_first(&grid.v, j);
            dv2[j] = central_second(&grid.v, j);
        }
        Operator {
            s: &grid.s,
            v: &grid.v,
            coeffs,
            ds1,
            ds2,
            dv1,
            dv2,
            fwd_v: forward_first(&grid.v),
            h_last: h,
        }
    }

    fn ms(&self) -> usize {
        self.s.len() - 1
    }

    fn mv(&self) -> usize {
        self.v.len() - 1
    }

    /// Row `i` of `A₁` on line `j`: weights on `(i−1, i, i+1)` and a constant.
    fn a1_row(&self, j: usize, i: usize) -> (Stencil, f64) {
        let c = 0.5 * self.s[i] * self.s[i] * self.v[j];
        let st = self.ds2[i];
        let w = Stencil {
            lo: c * st.lo,
            mid: c * st.mid,
            hi: c * st.hi,
        };
        let constant = if i == self.ms() { c * 2.0 / self.h_last } else { 0.0 };
        (w, constant)
    }

    /// Row `j ≥ 1` of `A₂`: weights on `(j−1, j, j+1)`.
    fn a2_row(&self, tau: f64, j: usize) -> Stencil {
        let v = self.v[j];
        let k = self.coeffs;
        let diff = 0.5 * k.sigma * k.sigma * v;
        let drift = k.kappa * k.theta - k.kappa_tilde(tau) * v;
        let d2 = self.dv2[j];
        let mut w = Stencil {
            lo: diff * d2.lo,
            mid: diff * d2.mid,
            hi: diff * d2.hi,
        };
        if v > UPWIND_FROM {
            if drift >= 0.0 {
                let h = self.v[j + 1] - v;
                w.mid -= drift / h;
                w.hi += drift / h;
            } else {
                let h = v - self.v[j - 1];
                w.lo -= drift / h;
                w.mid += drift / h;
            }
        } else {
            let d1 = self.dv1[j];
            w.lo += drift * d1.lo;
            w.mid += drift * d1.mid;
            w.hi += drift * d1.hi;
        }
        w
    }

    /// Row 0 of `A₂` (`v = 0`): only `κθ f_v`, forward three-point.
    fn a2_row0(&self) -> [f64; 3] {
        let c = self.coeffs.kappa * self.coeffs.theta;
        self.fwd_v.map(|a| c * a)
    }

    fn apply_a0(&self, u: &Array2<f64>, out: &mut Array2<f64>) {
        let k = self.coeffs;
        let rs = k.rho * k.sigma;
        if rs == 0.0 {
            return;
        }
        for j in 1..self.mv() {
            let bv = self.dv1[j];
            let wv = [bv.lo, bv.mid, bv.hi];
            for i in 1..self.ms() {
                let bs = self.ds1[i];
                let ws = [bs.lo, bs.mid, bs.hi];
                let mut acc = 0.0;
                for (b, &wb) in wv.iter().enumerate() {
                    for (a, &wa) in ws.iter().enumerate() {
                        acc += wb * wa * u[[j + b - 1, i + a - 1]];
                    }
                }
                out[[j, i]] += rs * self.s[i] * self.v[j] * acc;
            }
        }
    }

    fn apply_a1(&self, u: &Array2<f64>, out: &mut Array2<f64>) {
        let ms = self.ms();
        for j in 1..self.mv() {
            for i in 1..=ms {
                let (w, c) = self.a1_row(j, i);
                let hi = if i < ms { u[[j, i + 1]] } else { 0.0 };
                out[[j, i]] += w.lo * u[[j, i - 1]] + w.mid * u[[j, i]] + w.hi * hi + c;
            }
        }
    }

    fn apply_a2(&self, tau: f64, u: &Array2<f64>, out: &mut Array2<f64>) {
        let r0 = self.a2_row0();
        let rows: Vec<Stencil> = (1..self.mv()).map(|j| self.a2_row(tau, j)).collect();
        for i in 1..=self.ms() {
            out[[0, i]] += r0[0] * u[[0, i]] + r0[1] * u[[1, i]] + r0[2] * u[[2, i]];
            for j in 1..self.mv() {
                let w = rows[j - 1];
                out[[j, i]] += w.lo * u[[j - 1, i]] + w.mid * u[[j, i]] + w.hi * u[[j + 1, i]];
            }
        }
    }

    fn apply(&self, which: Part, tau: f64, u: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(u.raw_dim());
        match which {
            Part::Mixed => self.apply_a0(u, &mut out),
            Part::S => self.apply_a1(u, &mut out),
            Part::V => self.apply_a2(tau, u, &mut out),
            Part::All => {
                self.apply_a0(u, &mut out);
                self.apply_a1(u, &mut out);
                self.apply_a2(tau, u, &mut out);
            }
        }
        out
    }

    /// Dirichlet data: `f(s=0) = 0`, `f(v=𝕍) = s`.
    fn impose(&self, u: &mut Array2<f64>) {
        let mv = self.mv();
        for j in 0..=mv {
            u[[j, 0]] = 0.0;
        }
        for i in 0..=self.ms() {
            u[[mv, i]] = self.s[i];
        }
    }

    /// Solves `(I − wA₁)y = rhs` line by line in `s`.
    fn solve_s(&self, w: f64, rhs: &Array2<f64>) -> Array2<f64> {
        let ms = self.ms();
        let mut y = rhs.clone();
        let n = ms;
        let (mut a, mut b, mut c, mut d) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for j in 1..self.mv() {
            for i in 1..=ms {
                let (st, k) = self.a1_row(j, i);
                let r = i - 1;
                a[r] = -w * st.lo;
                b[r] = 1.0 - w * st.mid;
                c[r] = -w * st.hi;
                d[r] = rhs[[j, i]] + w * k;
            }
            // left neighbour is the s = 0 boundary with value 0
            a[0] = 0.0;
            thomas(&a, &b, &c, &mut d);
            for i in 1..=ms {
                y[[j, i]] = d[i - 1];
            }
        }
        self.impose(&mut y);
        y
    }

    /// Solves `(I − wA₂(τ))y = rhs` line by line in `v`.
    fn solve_v(&self, w: f64, tau: f64, rhs: &Array2<f64>) -> Array2<f64> {
        let mv = self.mv();
        let mut y = rhs.clone();
        let n = mv;
        let rows: Vec<Stencil> = (1..mv).map(|j| self.a2_row(tau, j)).collect();
        let r0 = self.a2_row0();
        let (mut a, mut b, mut c, mut d) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 1..=self.ms() {
            for j in 1..mv {
                let st = rows[j - 1];
                a[j] = -w * st.lo;
                b[j] = 1.0 - w * st.mid;
                c[j] = -w * st.hi;
                d[j] = rhs[[j, i]];
            }
            // far boundary v = 𝕍 carries f = s
            let last = mv - 1;
            d[last] -= c[last] * self.s[i];
            c[last] = 0.0;
            // row 0 has a second super-diagonal entry; remove it with row 1
            let (m00, m01, m02) = (1.0 - w * r0[0], -w * r0[1], -w * r0[2]);
            let mut d0 = rhs[[0, i]];
            let f = m02 / c[1];
            b[0] = m00 - f * a[1];
            c[0] = m01 - f * b[1];
            d0 -= f * d[1];
            d[0] = d0;
            a[0] = 0.0;
            thomas(&a, &b, &c, &mut d);
            for j in 0..mv {
                y[[j, i]] = d[j];
            }
        }
        self.impose(&mut y);
        y
    }
}

#[derive(Clone, Copy)]
enum Part {
    Mixed,
    S,
    V,
    All,
}

/// Thomas algorithm; `a[0]` and `c[n−1]` are ignored. Solution overwrites `d`.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64]) {
    let n = d.len();
    let mut cp = vec![0.0; n];
    let mut beta = b[0];
    d[0] /= beta;
    for k in 1..n {
        cp[k - 1] = c[k - 1] / beta;
        beta = b[k] - a[k] * cp[k - 1];
        d[k] = (d[k] - a[k] * d[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        d[k] -= cp[k] * d[k + 1];
    }
}

fn initial_slice(grid: &PdeGrid, op: &Operator) -> Array2<f64> {
    let mut u = Array2::from_shape_fn((grid.v.len(), grid.s.len()), |(_, i)| {
        (grid.s[i] - grid.strike).max(0.0)
    });
    op.impose(&mut u);
    u
}

/// Marches from the payoff at `τ = 0` to `τ = T` and stores every slice.
pub fn solve_pde(params: &HestonParams, mode: PdeMode, grid: &PdeGrid, n_time: usize) -> Result<PdeGrid> {
    let coeffs = PdeCoeffs::new(params, mode)?;
    solve_with(params, &coeffs, grid, n_time)
}

pub fn solve_with(params: &HestonParams, coeffs: &PdeCoeffs, grid: &PdeGrid, n_time: usize) -> Result<PdeGrid> {
    if n_time == 0 {
        return Err(HedgeError::InvalidParams("n_time must be positive".into()));
    }
    if (grid.strike - params.strike).abs() > 1e-12 * params.strike {
        return Err(HedgeError::InvalidParams(
            "grid strike differs from the claim strike".into(),
        ));
    }
    let op = Operator::new(grid, coeffs);
    let t_mat = params.maturity;
    let dt = t_mat / n_time as f64;
    let bound = 10.0 * grid.s[grid.s.len() - 1];
    let mut slices = Vec::with_capacity(n_time + 1);
    let mut u = initial_slice(grid, &op);
    slices.push(u.clone());
    let w = THETA * dt;
    for n in 1..=n_time {
        let (t0, t1) = ((n - 1) as f64 * dt, n as f64 * dt);
        if n <= DAMPING_STEPS {
            let half = 0.5 * dt;
            let mid = douglas_implicit(&op, &u, t0, half);
            u = douglas_implicit(&op, &mid, t0 + half, half);
            slices.push(u.clone());
            continue;
        }
        let f_all = op.apply(Part::All, t0, &u);
        let f0 = op.apply(Part::Mixed, t0, &u);
        let f1 = op.apply(Part::S, t0, &u);
        let f2 = op.apply(Part::V, t0, &u);
        let y0 = &u + &(&f_all * dt);
        let y1 = op.solve_s(w, &(&y0 - &(&f1 * w)));
        let y2 = op.solve_v(w, t1, &(&y1 - &(&f2 * w)));
        let g0 = op.apply(Part::Mixed, t1, &y2);
        let g_all = op.apply(Part::All, t1, &y2);
        let yh0 = &y0 + &((&g0 - &f0) * w);
        let yt0 = &yh0 + &((&g_all - &f_all) * ((0.5 - THETA) * dt));
        let yt1 = op.solve_s(w, &(&yt0 - &(&f1 * w)));
        let next = op.solve_v(w, t1, &(&yt1 - &(&f2 * w)));
        let max_abs = next.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !max_abs.is_finite() || max_abs > bound {
            return Err(HedgeError::PdeUnstable { step: n, max_abs });
        }
        u = next;
        slices.push(u.clone());
    }
    Ok(PdeGrid {
        strike: grid.strike,
        s: grid.s.clone(),
        v: grid.v.clone(),
        maturity: t_mat,
        tau: (0..=n_time).map(|k| k as f64 * dt).collect(),
        slices,
        mode: Some(coeffs.mode),
    })
}

/// Startup steps replaced by two fully implicit half-steps each, damping
/// the payoff kink.
pub const DAMPING_STEPS: usize = 2;

/// Douglas splitting with weight 1.
fn douglas_implicit(op: &Operator, u: &Array2<f64>, t0: f64, dt: f64) -> Array2<f64> {
    let t1 = t0 + dt;
    let f_all = op.apply(Part::All, t0, u);
    let f1 = op.apply(Part::S, t0, u);
    let f2 = op.apply(Part::V, t0, u);
    let y0 = u + &(&f_all * dt);
    let y1 = op.solve_s(dt, &(&y0 - &(&f1 * dt)));
    op.solve_v(dt, t1, &(&y1 - &(&f2 * dt)))
}

/// Explicit Euler on the same semi-discretization with a step well inside
/// the stability limit; a slow reference for the ADI march.
pub fn solve_explicit_reference(params: &HestonParams, coeffs: &PdeCoeffs, grid: &PdeGrid) -> Result<Array2<f64>> {
    let op = Operator::new(grid, coeffs);
    let mut rate: f64 = 0.0;
    for j in 1..op.mv() {
        for i in 1..=op.ms() {
            let (w, _) = op.a1_row(j, i);
            rate = rate.max(w.mid.abs());
        }
        let w = op.a2_row(0.0, j);
        rate = rate.max(w.mid.abs());
    }
    rate = rate.max(op.a2_row0()[0].abs());
    // mixed term and time dependence are covered by the safety factor
    let n = ((params.maturity * rate / 0.2).ceil() as usize).max(1);
    let dt = params.maturity / n as f64;
    let mut u = initial_slice(grid, &op);
    for k in 0..n {
        let f = op.apply(Part::All, k as f64 * dt, &u);
        u = &u + &(&f * dt);
        op.impose(&mut u);
    }
    Ok(u)
}

/// Interpolated value and derivatives at one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdeSample {
    pub f: f64,
    /// `∂f/∂v`.
    pub f2: f64,
    /// `∂f/∂s`.
    pub f3: f64,
    /// The query was outside the truncated domain and was clamped.
    pub clamped: bool,
}

impl PdeGrid {
    pub fn ms(&self) -> usize {
        self.s.len() - 1
    }

    pub fn mv(&self) -> usize {
        self.v.len() - 1
    }

    fn ds_node(&self, f: &Array2<f64>, j: usize, i: usize) -> f64 {
        let ms = self.ms();
        if i == ms {
            1.0
        } else if i == 0 {
            (f[[j, 1]] - f[[j, 0]]) / (self.s[1] - self.s[0])
        } else {
            let st = central_first(&self.s, i);
            st.lo * f[[j, i - 1]] + st.mid * f[[j, i]] + st.hi * f[[j, i + 1]]
        }
    }

    fn dv_node(&self, f: &Array2<f64>, j: usize, i: usize) -> f64 {
        let mv = self.mv();
        if j == 0 {
            let w = forward_first(&self.v);
            w[0] * f[[0, i]] + w[1] * f[[1, i]] + w[2] * f[[2, i]]
        } else if j == mv {
            (f[[mv, i]] - f[[mv - 1, i]]) / (self.v[mv] - self.v[mv - 1])
        } else {
            let st = central_first(&self.v, j);
            st.lo * f[[j - 1, i]] + st.mid * f[[j, i]] + st.hi * f[[j + 1, i]]
        }
    }

    /// Bilinear interpolation of value and nodal derivatives in one slice.
    fn sample_slice(&self, k: usize, v: f64, s: f64) -> (f64, f64, f64) {
        let f = &self.slices[k];
        let cell = |x: &[f64], q: f64| {
            let idx = x.partition_point(|&g| g <= q).clamp(1, x.len() - 1) - 1;
            let w = (q - x[idx]) / (x[idx + 1] - x[idx]);
            (idx, w)
        };
        let (j, wv) = cell(&self.v, v);
        let (i, ws) = cell(&self.s, s);
        let corners = [
            (j, i, (1.0 - wv) * (1.0 - ws)),
            (j, i + 1, (1.0 - wv) * ws),
            (j + 1, i, wv * (1.0 - ws)),
            (j + 1, i + 1, wv * ws),
        ];
        let (mut val, mut f2, mut f3) = (0.0, 0.0, 0.0);
        for (jj, ii, w) in corners {
            if w == 0.0 {
                continue;
            }
            val += w * f[[jj, ii]];
            f2 += w * self.dv_node(f, jj, ii);
            f3 += w * self.ds_node(f, jj, ii);
        }
        (val, f2, f3)
    }

    /// Value and derivatives at calendar time `t`, variance `v` and price `s`,
    /// linear in time between stored slices.
    pub fn interpolate(&self, t: f64, v: f64, s: f64) -> Result<PdeSample> {
        if self.slices.is_empty() {
            return Err(HedgeError::Refused("PDE grid has not been solved".into()));
        }
        let (s_max, v_max) = (self.s[self.ms()], self.v[self.mv()]);
        let clamped = !(0.0..=s_max).contains(&s) || !(0.0..=v_max).contains(&v) || !s.is_finite() || !v.is_finite();
        let s = if s.is_finite() { s.clamp(0.0, s_max) } else { s_max };
        let v = if v.is_finite() { v.clamp(0.0, v_max) } else { v_max };
        let tau = (self.maturity - t).clamp(0.0, self.maturity);
        let last = self.slices.len() - 1;
        let dt = if last > 0 { self.maturity / last as f64 } else { 1.0 };
        let x = if last > 0 { tau / dt } else { 0.0 };
        let k = (x.floor() as usize).min(last.saturating_sub(1));
        let w = if last > 0 { (x - k as f64).clamp(0.0, 1.0) } else { 0.0 };
        let (f_a, f2_a, f3_a) = self.sample_slice(k, v, s);
        let (f, f2, f3) = if w > 0.0 {
            let (f_b, f2_b, f3_b) = self.sample_slice(k + 1, v, s);
            (
                f_a + w * (f_b - f_a),
                f2_a + w * (f2_b - f2_a),
                f3_a + w * (f3_b - f3_a),
            )
        } else {
            (f_a, f2_a, f3_a)
        };
        Ok(PdeSample { f, f2, f3, clamped })
    }

    /// Price at `t = 0`.
    pub fn price_at(&self, v: f64, s: f64) -> Result<f64> {
        Ok(self.interpolate(0.0, v, s)?.f)
    }

    /// CSV `t, y, s, f` for every `stride`-th stored slice.
    pub fn write_slices_csv<W: Write>(&self, w: W, stride: usize) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "y", "s", "f"])?;
        let last = self.slices.len().saturating_sub(1);
        let mut ks: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
        if ks.last() != Some(&last) {
            ks.push(last);
        }
        for k in ks {
            let t = self.maturity - self.tau[k];
            for j in 0..=self.mv() {
                for i in 0..=self.ms() {
                    out.write_record([
                        t.to_string(),
                        self.v[j].to_string(),
                        self.s[i].to_string(),
                        self.slices[k][[j, i]].to_string(),
                    ])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// CK (mean-variance) or HPS (local-risk) strategy along the given paths.
///
/// `v0` is the initial wealth of the CK recursion; the PDE price at the
/// initial state is used when absent.
pub fn benchmark_strategies(
    grid: &PdeGrid,
    params: &HestonParams,
    paths: &PathBatch,
    mode: PdeMode,
    v0: Option<f64>,
) -> Result<HedgeRun> {
    if paths.m != 1 || params.m != 1 {
        return Err(HedgeError::Unsupported("benchmark strategies need m = 1".into()));
    }
    let coeffs = PdeCoeffs::new(params, mode)?;
    let (bsz, n_steps) = (paths.batch_size, paths.n_steps);
    let rs = params.rho[0] * params.sigma[0];
    let mu = params.mu_bar[0];
    let start = v0.map_or_else(|| grid.price_at(params.y0_sq[0], params.s0[0]), Ok)?;
    let mut price = Array2::<f64>::zeros((bsz, n_steps + 1));
    let mut wealth = Array2::<f64>::zeros((bsz, n_steps + 1));
    let mut xi = Array3::<f64>::zeros((bsz, n_steps, 1));
    let mut psi = Array2::<f64>::zeros((bsz, n_steps));
    let mut cost = Array2::<f64>::zeros((bsz, n_steps + 1));
    let mut flagged = Array2::from_elem((bsz, n_steps), false);
    for b in 0..bsz {
        wealth[[b, 0]] = start;
        let mut gains = 0.0;
        for n in 0..=n_steps {
            let t = paths.time(n);
            let (s, v) = (paths.s_tilde[[b, n, 0]], paths.y_sq[[b, n, 0]]);
            let q = grid.interpolate(t, v, s)?;
            price[[b, n]] = q.f;
            if mode == PdeMode::Lrm {
                wealth[[b, n]] = q.f;
            }
            cost[[b, n]] = q.f - gains;
            if n == n_steps {
                break;
            }
            let mut ratio = q.f3 + rs * q.f2 / s;
            if mode == PdeMode::Mvh {
                let chi1 = coeffs.chi1_tau(params.maturity - t);
                ratio += (mu + rs * chi1) * (q.f - wealth[[b, n]]) / s;
                wealth[[b, n + 1]] = wealth[[b, n]] + ratio * (paths.s_tilde[[b, n + 1, 0]] - s);
            }
            flagged[[b, n]] = q.clamped;
            xi[[b, n, 0]] = ratio;
            psi[[b, n]] = q.f - ratio * s;
            gains += ratio * (paths.s_tilde[[b, n + 1, 0]] - s);
        }
    }
    Ok(HedgeRun {
        label: match mode {
            PdeMode::Mvh => "ck".into(),
            PdeMode::Lrm => "hps".into(),
        },
        n_steps,
        dt: paths.dt,
        price,
        wealth,
        xi,
        psi,
        cost: (mode == PdeMode::Lrm).then_some(cost),
        flagged,
    })
}

/// Column `j` of a slice as an `s`-profile, for tests and plotting.
pub fn s_profile(grid: &PdeGrid, k: usize, j: usize) -> Vec<f64> {
    grid.slices[k].slice(s![j, ..]).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate, Measure};
    use approx::assert_abs_diff_eq;

    fn p1() -> HestonParams {
        HestonParams::table1(1)
    }

    fn solved(mode: PdeMode, ms: usize, mv: usize, nt: usize) -> PdeGrid {
        let p = p1();
        let g = build_grid(p.strike, ms, mv).unwrap();
        solve_pde(&p, mode, &g, nt).unwrap()
    }

    #[test]
    fn grid_endpoints_and_stretching() {
        let g = build_grid(100.0, 200, 100).unwrap();
        assert_eq!(g.s[0], 0.0);
        assert_eq!(*g.s.last().unwrap(), 800.0);
        assert_eq!(g.v[0], 0.0);
        assert_eq!(*g.v.last().unwrap(), 5.0);
        assert!(g.s.windows(2).all(|w| w[1] > w[0]));
        assert!(g.v.windows(2).all(|w| w[1] > w[0]));
        let gaps: Vec<f64> = g.s.windows(2).map(|w| w[1] - w[0]).collect();
        let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        let k_cell = g.s.partition_point(|&x| x <= 100.0) - 1;
        assert!((gaps[k_cell] - min_gap) / min_gap < 0.01);
        assert!(gaps.last().unwrap() / min_gap >= 5.0);
        assert!(build_grid(100.0, 8, 100).is_err());
    }

    #[test]
    fn thomas_solves_tridiagonal() {
        let a = [0.0, 1.0, 1.0];
        let b = [4.0, 4.0, 4.0];
        let c = [1.0, 1.0, 0.0];
        let x = [1.0, -2.0, 3.0];
        let mut d = [4.0 * x[0] + x[1], x[0] + 4.0 * x[1] + x[2], x[1] + 4.0 * x[2]];
        thomas(&a, &b, &c, &mut d);
        for k in 0..3 {
            assert_abs_diff_eq!(d[k], x[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn kappa_theta_product_is_preserved() {
        let p = p1();
        for mode in [PdeMode::Mvh, PdeMode::Lrm] {
            let c = PdeCoeffs::new(&p, mode).unwrap();
            for tau in [0.0, 0.3, 1.0] {
                assert_abs_diff_eq!(c.kappa_tilde(tau) * c.theta_tilde(tau), 0.025, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn boundary_conditions_on_every_slice() {
        let g = solved(PdeMode::Mvh, 60, 30, 40);
        let (ms, mv) = (g.ms(), g.mv());
        for (k, f) in g.slices.iter().enumerate() {
            for j in 0..=mv {
                assert!(f[[j, 0]].abs() <= 1e-10, "slice {k}");
            }
            for i in 0..=ms {
                assert!((f[[mv, i]] - g.s[i]).abs() <= 1e-10, "slice {k}");
            }
            let t = g.maturity - g.tau[k];
            let q = g.interpolate(t, 0.3, g.s[ms]).unwrap();
            assert!((q.f3 - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn nodes_and_linear_profiles_are_reproduced() {
        let mut g = build_grid(100.0, 40, 20).unwrap();
        g.maturity = 1.0;
        g.tau = vec![0.0];
        let f = Array2::from_shape_fn((g.v.len(), g.s.len()), |(j, i)| 3.0 * g.s[i] - 2.0 * g.v[j] + 1.0);
        g.slices = vec![f.clone()];
        let q = g.interpolate(1.0, g.v[5], g.s[7]).unwrap();
        assert_eq!(q.f, f[[5, 7]]);
        let q = g.interpolate(1.0, 0.37, 123.4).unwrap();
        assert_abs_diff_eq!(q.f, 3.0 * 123.4 - 2.0 * 0.37 + 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(q.f2, -2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(q.f3, 3.0, epsilon = 1e-10);
        let q = g.interpolate(1.0, 9.0, 50.0).unwrap();
        assert!(q.clamped);
    }

    #[test]
    fn prices_are_monotone_in_s_and_above_intrinsic() {
        let g = solved(PdeMode::Lrm, 80, 40, 50);
        // the far-field layer next to v = 𝕍 is excluded
        let j_max = g.v.partition_point(|&v| v <= 1.0);
        for (k, f) in g.slices.iter().enumerate() {
            for j in 0..j_max {
                for i in 0..g.ms() {
                    // the second-order stencils are not monotone; allow 1e-6 of the strike
                    assert!(
                        f[[j, i + 1]] >= f[[j, i]] - 1e-4,
                        "slice {k}, v {}, s {}: {} {}",
                        g.v[j],
                        g.s[i],
                        f[[j, i]],
                        f[[j, i + 1]]
                    );
                    assert!(
                        f[[j, i]] >= (g.s[i] - 100.0).max(0.0) - 1e-4,
                        "slice {k}, v {}, s {}: {}",
                        g.v[j],
                        g.s[i],
                        f[[j, i]]
                    );
                }
            }
        }
    }

    #[test]
    fn adi_matches_explicit_reference() {
        let p = p1();
        let g = build_grid(p.strike, 30, 20).unwrap();
        for mode in [PdeMode::Mvh, PdeMode::Lrm] {
            let c = PdeCoeffs::new(&p, mode).unwrap();
            let adi = solve_with(&p, &c, &g, 400).unwrap();
            let reference = solve_explicit_reference(&p, &c, &g).unwrap();
            let last = adi.slices.last().unwrap();
            let mut worst: f64 = 0.0;
            for j in 0..g.v.len() {
                for i in 0..g.s.len() {
                    if g.s[i] < 300.0 && g.v[j] < 1.0 {
                        worst = worst.max((last[[j, i]] - reference[[j, i]]).abs());
                    }
                }
            }
            assert!(worst < 2e-3, "{mode:?}: max |ADI − explicit| = {worst}");
            // v = 0 row carries only inflow yet stays above intrinsic value
            for i in 0..g.s.len() {
                assert!(reference[[0, i]] >= (g.s[i] - p.strike).max(0.0) - 1e-3);
                assert!(last[[0, i]] >= (g.s[i] - p.strike).max(0.0) - 1e-3);
            }
        }
    }

    #[test]
    fn self_convergence_in_space_and_time() {
        let p = p1();
        let price = |ms, mv, nt| solved(PdeMode::Mvh, ms, mv, nt).price_at(p.y0_sq[0], p.s0[0]).unwrap();
        let base = price(100, 50, 100);
        let fine_grid = price(200, 100, 100);
        let fine_time = price(100, 50, 200);
        assert!((fine_grid - base).abs() / fine_grid < 1e-3, "{base} vs {fine_grid}");
        assert!((fine_time - base).abs() / fine_time < 5e-4, "{base} vs {fine_time}");
    }

    #[test]
    fn zero_drift_modes_coincide_bitwise() {
        let mut p = p1();
        p.mu_bar = vec![0.0];
        let g = build_grid(p.strike, 40, 20).unwrap();
        let a = solve_pde(&p, PdeMode::Mvh, &g, 20).unwrap();
        let b = solve_pde(&p, PdeMode::Lrm, &g, 20).unwrap();
        assert_eq!(a.slices, b.slices);
    }

    #[test]
    fn rejects_multi_asset() {
        let p = HestonParams::table1(2);
        assert!(matches!(
            PdeCoeffs::new(&p, PdeMode::Lrm),
            Err(HedgeError::Unsupported(_))
        ));
    }

    #[test]
    fn strategies_relations() {
        let p = p1();
        let g = solved(PdeMode::Mvh, 60, 30, 50);
        let paths = simulate(&p, 10, 50, 3, Measure::P).unwrap();
        let ck = benchmark_strategies(&g, &p, &paths, PdeMode::Mvh, None).unwrap();
        let hps = benchmark_strategies(&g, &p, &paths, PdeMode::Lrm, None).unwrap();
        // first step: V₀ equals the PDE price at the initial state, so the
        // correction term vanishes and both strategies agree
        for b in 0..paths.batch_size {
            assert_abs_diff_eq!(ck.xi[[b, 0, 0]], hps.xi[[b, 0, 0]], epsilon = 1e-12);
            for n in 0..paths.n_steps {
                let ds = paths.s_tilde[[b, n + 1, 0]] - paths.s_tilde[[b, n, 0]];
                assert_abs_diff_eq!(
                    ck.wealth[[b, n + 1]] - ck.wealth[[b, n]],
                    ck.xi[[b, n, 0]] * ds,
                    epsilon = 1e-10
                );
            }
        }
        let mut q = p.clone();
        q.rho = vec![0.0];
        let g0 = solved_with(&q, PdeMode::Lrm);
        let hps0 = benchmark_strategies(&g0, &q, &paths, PdeMode::Lrm, None).unwrap();
        for b in 0..paths.batch_size {
            let (s, v) = (paths.s_tilde[[b, 3, 0]], paths.y_sq[[b, 3, 0]]);
            let d = g0.interpolate(paths.time(3), v, s).unwrap().f3;
            assert_abs_diff_eq!(hps0.xi[[b, 3, 0]], d, epsilon = 1e-14);
        }
    }

    fn solved_with(p: &HestonParams, mode: PdeMode) -> PdeGrid {
        let g = build_grid(p.strike, 60, 30).unwrap();
        solve_pde(p, mode, &g, 50).unwrap()
    }

    #[test]
    fn slice_csv_header() {
        let g = solved(PdeMode::Lrm, 20, 16, 4);
        let mut buf = Vec::new();
        g.write_slices_csv(&mut buf, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,y,s,f\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 21 * 17);
    }
}
