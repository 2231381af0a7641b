//! Mean-variance hedging: opportunity process, extended-market price process
//! and the optimal self-financing strategy.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::bsde::{train, BsdeModel, BsdeProblem, BsdeRunResult, Roll, SolverConfig};
use crate::error::{HedgeError, Result};
use crate::hedge::{HedgeRun, SigmaSolver};
use crate::market::{validate, Claim, HestonParams, PathBatch};

/// Lower guard for the opportunity process in divisions.
pub const L_FLOOR: f64 = 1e-6;
/// Upper edge of the plausible band for the learned opportunity process.
pub const L_CEILING: f64 = 1.05;
/// Clamp-activation rate above which the BSRE solution is flagged.
pub const CLAMP_ALARM_RATE: f64 = 0.01;

/// Stochastic Riccati equation for the opportunity process `L` with terminal
/// value 1. Controls are `(Λ₁, Λ₂)`.
#[derive(Clone, Debug)]
pub struct Bsre<'a> {
    pub params: &'a HestonParams,
}

impl BsdeProblem for Bsre<'_> {
    type Aux = ();

    fn control_dim(&self) -> usize {
        2 * self.params.m
    }

    /// Order of `|Λ|` near the initial state: `σ√θ·μ̄²T`, floored.
    fn control_scale(&self) -> f64 {
        let p = self.params;
        (0..p.m)
            .map(|j| p.sigma[j] * p.theta[j].sqrt() * p.mu_bar[j].powi(2) * p.maturity)
            .fold(0.0, f64::max)
            .max(1e-4)
    }

    fn prepare(&self, _: &PathBatch) -> Result<()> {
        Ok(())
    }

    fn terminal(&self, _: &PathBatch, _: usize) -> f64 {
        1.0
    }

    fn driver(&self, paths: &PathBatch, _: &(), b: usize, n: usize, y: f64, z: &[f64], dz: &mut [f64]) -> (f64, f64) {
        let m = self.params.m;
        let lc = y.max(L_FLOOR);
        let (mut phi2, mut cross, mut lam2) = (0.0, 0.0, 0.0);
        for j in 0..m {
            let phi = paths.y_sq[[b, n, j]].sqrt() * self.params.mu_bar[j];
            phi2 += phi * phi;
            cross += phi * z[j];
            lam2 += z[j] * z[j];
            dz[j] = -(2.0 * phi + 2.0 * z[j] / lc);
            dz[m + j] = 0.0;
        }
        let h = -(phi2 * y + 2.0 * cross + lam2 / lc);
        let dh_dy = if y > L_FLOOR { -(phi2 - lam2 / (y * y)) } else { -phi2 };
        (h, dh_dy)
    }
}

/// Counts, per roll, how often the opportunity process leaves
/// `(L_FLOOR, L_CEILING]` at the points where the driver is evaluated.
#[derive(Debug, Default)]
pub struct ClampMonitor {
    outside: AtomicU64,
    total: AtomicU64,
    /// Cumulative `(outside, total)` at the start of each roll.
    marks: Mutex<Vec<(u64, u64)>>,
}

impl ClampMonitor {
    fn mark(&self) {
        let now = (self.outside.load(Ordering::Relaxed), self.total.load(Ordering::Relaxed));
        self.marks.lock().expect("monitor lock").push(now);
    }

    /// Number of rolls started so far.
    pub fn rolls(&self) -> usize {
        self.marks.lock().expect("monitor lock").len()
    }

    /// Clamp rate over the last `window` rolls, including the one in progress.
    pub fn recent_rate(&self, window: usize) -> f64 {
        let marks = self.marks.lock().expect("monitor lock");
        let now = (self.outside.load(Ordering::Relaxed), self.total.load(Ordering::Relaxed));
        let from = marks.len().saturating_sub(window.max(1));
        let start = marks.get(from).copied().unwrap_or((0, 0));
        let total = now.1 - start.1;
        if total == 0 {
            0.0
        } else {
            (now.0 - start.0) as f64 / total as f64
        }
    }
}

/// [`Bsre`] reporting every driver evaluation to a [`ClampMonitor`].
pub struct MonitoredBsre<'a> {
    pub inner: Bsre<'a>,
    pub monitor: &'a ClampMonitor,
}

impl BsdeProblem for MonitoredBsre<'_> {
    type Aux = ();

    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }

    fn control_scale(&self) -> f64 {
        self.inner.control_scale()
    }

    fn prepare(&self, paths: &PathBatch) -> Result<()> {
        self.monitor.mark();
        self.inner.prepare(paths)
    }

    fn terminal(&self, paths: &PathBatch, b: usize) -> f64 {
        self.inner.terminal(paths, b)
    }

    fn driver(&self, paths: &PathBatch, aux: &(), b: usize, n: usize, y: f64, z: &[f64], dz: &mut [f64]) -> (f64, f64) {
        if !(y > L_FLOOR && y <= L_CEILING) {
            self.monitor.outside.fetch_add(1, Ordering::Relaxed);
        }
        self.monitor.total.fetch_add(1, Ordering::Relaxed);
        self.inner.driver(paths, aux, b, n, y, z, dz)
    }
}

/// Outcome of a BSRE run watched by the clamp alarm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsreAlarm {
    pub l0: Option<f64>,
    /// Iteration at which training aborted, if it did.
    pub diverged_at: Option<usize>,
    /// Clamp rate over the last tenth of the training rolls.
    pub training_clamp_rate: f64,
    pub eval_clamp: Option<ClampReport>,
    pub alarm: bool,
}

/// Trains the BSRE while monitoring clamp activations; the alarm fires when
/// the late-training or evaluation clamp rate exceeds [`CLAMP_ALARM_RATE`].
pub fn bsre_with_alarm(params: &HestonParams, cfg: &SolverConfig, seed: u64) -> Result<BsreAlarm> {
    validate(params).into_result(true)?;
    let monitor = ClampMonitor::default();
    let problem = MonitoredBsre {
        inner: Bsre { params },
        monitor: &monitor,
    };
    let outcome = train(&problem, params, cfg, seed);
    let (run, diverged_at) = match outcome {
        Ok(run) => (Some(run), None),
        Err(HedgeError::Diverged { iteration, .. }) => (None, Some(iteration)),
        Err(e) => return Err(e),
    };
    // the evaluation roll is the last mark when training completed
    let training_rolls = monitor.rolls() - usize::from(run.is_some());
    let window = (training_rolls / 10).max(1);
    let training_clamp_rate = if run.is_some() {
        let marks = monitor.marks.lock().expect("monitor lock");
        let end = marks[training_rolls];
        let start = marks[training_rolls.saturating_sub(window)];
        let total = end.1 - start.1;
        if total == 0 {
            0.0
        } else {
            (end.0 - start.0) as f64 / total as f64
        }
    } else {
        monitor.recent_rate(window)
    };
    let eval_clamp = run.as_ref().map(|r| clamp_report(&r.eval_roll.y));
    let alarm = training_clamp_rate > CLAMP_ALARM_RATE || eval_clamp.as_ref().is_some_and(|c| c.unreliable);
    Ok(BsreAlarm {
        l0: run.as_ref().map(|r| r.y0),
        diverged_at,
        training_clamp_rate,
        eval_clamp,
        alarm,
    })
}

/// Upstream opportunity process evaluated on a batch.
pub struct FrozenBsre {
    /// `B × (N+1)`.
    pub l: Array2<f64>,
    /// `B × N × 2m`.
    pub lambda: Array3<f64>,
}

/// Linear BSDE for the mean-variance price process in the extended market,
/// driven by a frozen opportunity-process solution.
#[derive(Clone, Debug)]
pub struct ExtendedMv<'a> {
    pub params: &'a HestonParams,
    pub claim: Claim,
    pub bsre: &'a BsdeModel,
}

impl BsdeProblem for ExtendedMv<'_> {
    type Aux = FrozenBsre;

    fn control_dim(&self) -> usize {
        2 * self.params.m
    }

    fn control_scale(&self) -> f64 {
        price_control_scale(self.params)
    }

    fn prepare(&self, paths: &PathBatch) -> Result<FrozenBsre> {
        let roll = self.bsre.roll(&Bsre { params: self.params }, paths)?;
        Ok(FrozenBsre {
            l: roll.y,
            lambda: roll.z,
        })
    }

    fn terminal(&self, paths: &PathBatch, b: usize) -> f64 {
        self.claim.discounted(paths, self.params, b)
    }

    fn driver(
        &self,
        paths: &PathBatch,
        aux: &FrozenBsre,
        b: usize,
        n: usize,
        _: f64,
        z: &[f64],
        dz: &mut [f64],
    ) -> (f64, f64) {
        let m = self.params.m;
        let d = paths.discount[[b, n]];
        let l = aux.l[[b, n]].max(L_FLOOR);
        let mut drift = 0.0;
        for j in 0..m {
            let phi = paths.y_sq[[b, n, j]].sqrt() * self.params.mu_bar[j];
            let lam2 = aux.lambda[[b, n, m + j]];
            drift += phi * z[j] - lam2 * z[m + j] / l;
            dz[j] = -d * phi;
            dz[m + j] = d * lam2 / l;
        }
        (-d * drift, 0.0)
    }
}

/// Control scale for price-type equations: about `S̃₀√θ/2` per asset.
pub(crate) fn price_control_scale(p: &HestonParams) -> f64 {
    (0..p.m)
        .map(|j| 0.5 * p.s0[j] * p.theta[j].sqrt())
        .fold(0.0, f64::max)
        .max(1e-3)
}

/// Share of `(path, step)` pairs where the learned `L` leaves `(1e−6, 1.05]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClampReport {
    pub below_floor: usize,
    pub above_ceiling: usize,
    pub total: usize,
    pub rate: f64,
    pub unreliable: bool,
}

pub fn clamp_report(l: &Array2<f64>) -> ClampReport {
    let below = l.iter().filter(|&&v| v <= L_FLOOR).count();
    let above = l.iter().filter(|&&v| v > L_CEILING).count();
    let total = l.len();
    let rate = (below + above) as f64 / total.max(1) as f64;
    ClampReport {
        below_floor: below,
        above_ceiling: above,
        total,
        rate,
        unreliable: rate > CLAMP_ALARM_RATE,
    }
}

pub fn solve_bsre(params: &HestonParams, cfg: &SolverConfig, seed: u64) -> Result<BsdeRunResult> {
    validate(params).into_result(true)?;
    train(&Bsre { params }, params, cfg, seed)
}

pub fn solve_extended_bsde(
    params: &HestonParams,
    cfg: &SolverConfig,
    bsre: &BsdeRunResult,
    seed: u64,
) -> Result<BsdeRunResult> {
    solve_extended_bsde_for(params, Claim::BasketCall, cfg, bsre, seed)
}

pub fn solve_extended_bsde_for(
    params: &HestonParams,
    claim: Claim,
    cfg: &SolverConfig,
    bsre: &BsdeRunResult,
    seed: u64,
) -> Result<BsdeRunResult> {
    validate(params).into_result(true)?;
    if bsre.model.n_steps() != cfg.n_steps {
        return Err(HedgeError::Refused(format!(
            "opportunity process was trained with N = {}, requested N = {}",
            bsre.model.n_steps(),
            cfg.n_steps
        )));
    }
    if !bsre.y0.is_finite() || !bsre.eval_loss.is_finite() {
        return Err(HedgeError::Refused("opportunity process solution is not finite".into()));
    }
    let problem = ExtendedMv {
        params,
        claim,
        bsre: &bsre.model,
    };
    train(&problem, params, cfg, seed)
}

/// Everything the mean-variance pipeline produces on one path batch.
#[derive(Clone, Debug)]
pub struct MvhRun {
    pub y_l: f64,
    pub y_x: f64,
    /// `B × (N+1)`.
    pub l: Array2<f64>,
    /// `(Λ₁, Λ₂)`, `B × N × 2m`.
    pub lambda: Array3<f64>,
    /// `B × (N+1)`.
    pub x: Array2<f64>,
    /// `(η₁, η₂)`, `B × N × 2m`.
    pub eta: Array3<f64>,
    /// `ν = −Λ₂/L`, `B × N × m`.
    pub nu: Array3<f64>,
    pub hedge: HedgeRun,
    /// `mean (V_N − H)²`.
    pub hedging_error: f64,
    pub clamp: ClampReport,
}

/// `ξ = diag(S̃)⁻¹ σ⁻ᵀ[(φ + Λ₁/L)(X − V) + η₁]`, or `None` when `σ` is singular.
pub fn mvh_hedge_ratio(
    solver: &SigmaSolver,
    params: &HestonParams,
    s: &[f64],
    y_sq: &[f64],
    lambda1_over_l: &[f64],
    x_minus_v: f64,
    eta1: &[f64],
) -> Option<Vec<f64>> {
    let rhs: Vec<f64> = (0..params.m)
        .map(|j| (y_sq[j].max(0.0).sqrt() * params.mu_bar[j] + lambda1_over_l[j]) * x_minus_v + eta1[j])
        .collect();
    let u = solver.solve(y_sq, &rhs)?;
    Some(u.iter().zip(s).map(|(u, s)| u / s).collect())
}

pub fn extract_strategy(
    params: &HestonParams,
    bsre: &BsdeRunResult,
    ext: &BsdeRunResult,
    paths: &PathBatch,
) -> Result<MvhRun> {
    extract_strategy_for(params, Claim::BasketCall, bsre, ext, paths)
}

pub fn extract_strategy_for(
    params: &HestonParams,
    claim: Claim,
    bsre: &BsdeRunResult,
    ext: &BsdeRunResult,
    paths: &PathBatch,
) -> Result<MvhRun> {
    let problem = Bsre { params };
    let l_roll = bsre.model.roll(&problem, paths)?;
    let x_roll = ext.model.roll(
        &ExtendedMv {
            params,
            claim,
            bsre: &bsre.model,
        },
        paths,
    )?;
    Ok(assemble(params, claim, bsre.y0, ext.y0, l_roll, x_roll, paths))
}

fn assemble(
    params: &HestonParams,
    claim: Claim,
    y_l: f64,
    y_x: f64,
    l_roll: Roll,
    x_roll: Roll,
    paths: &PathBatch,
) -> MvhRun {
    let (bsz, n_steps, m) = (paths.batch_size, paths.n_steps, paths.m);
    let solver = SigmaSolver::new(params);
    let mut xi = Array3::<f64>::zeros((bsz, n_steps, m));
    let mut psi = Array2::<f64>::zeros((bsz, n_steps));
    let mut v = Array2::<f64>::zeros((bsz, n_steps + 1));
    let mut nu = Array3::<f64>::zeros((bsz, n_steps, m));
    let mut flagged = Array2::from_elem((bsz, n_steps), false);
    let mut err = 0.0;
    for b in 0..bsz {
        v[[b, 0]] = y_x;
        let mut prev = vec![0.0; m];
        for n in 0..n_steps {
            let l = l_roll.y[[b, n]].max(L_FLOOR);
            let lam1_l: Vec<f64> = (0..m).map(|j| l_roll.z[[b, n, j]] / l).collect();
            for j in 0..m {
                nu[[b, n, j]] = -l_roll.z[[b, n, m + j]] / l;
            }
            let s_n = paths.s_tilde.slice(s![b, n, ..]).to_vec();
            let y_n = paths.y_sq.slice(s![b, n, ..]).to_vec();
            let eta1 = x_roll.z.slice(s![b, n, ..m]).to_vec();
            let x_n = x_roll.y[[b, n]];
            let ratio = mvh_hedge_ratio(&solver, params, &s_n, &y_n, &lam1_l, x_n - v[[b, n]], &eta1);
            let ratio = match ratio {
                Some(r) => r,
                None => {
                    flagged[[b, n]] = true;
                    prev.clone()
                }
            };
            let mut gain = 0.0;
            let mut held = 0.0;
            for j in 0..m {
                xi[[b, n, j]] = ratio[j];
                held += ratio[j] * s_n[j];
                gain += ratio[j] * (paths.s_tilde[[b, n + 1, j]] - s_n[j]);
            }
            psi[[b, n]] = x_n - held;
            v[[b, n + 1]] = v[[b, n]] + gain;
            prev = ratio;
        }
        let h = claim.discounted(paths, params, b);
        err += (v[[b, n_steps]] - h).powi(2);
    }
    let clamp = clamp_report(&l_roll.y);
    let hedge = HedgeRun {
        label: "mvh".into(),
        n_steps,
        dt: paths.dt,
        price: x_roll.y.clone(),
        wealth: v,
        xi,
        psi,
        cost: None,
        flagged,
    };
    MvhRun {
        y_l,
        y_x,
        l: l_roll.y,
        lambda: l_roll.z,
        x: x_roll.y,
        eta: x_roll.z,
        nu,
        hedge,
        hedging_error: err / bsz as f64,
        clamp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::evaluation_paths;
    use crate::market::{simulate, Measure};
    use crate::riccati::{bsre_controls, opportunity_process};
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;

    fn one_asset() -> HestonParams {
        HestonParams::table1(1)
    }

    #[test]
    fn hedge_ratio_vanishes_without_signal() {
        let p = one_asset();
        let solver = SigmaSolver::new(&p);
        let r = mvh_hedge_ratio(&solver, &p, &[100.0], &[0.04], &[0.3], 0.0, &[0.0]).unwrap();
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn hedge_ratio_hand_example() {
        // S = 100, Y = 0.2, φ = 0.02 (μ̄ = 0.1), Λ₁/L = 0, X − V = 1, η₁ = 4
        let p = one_asset();
        let solver = SigmaSolver::new(&p);
        let r = mvh_hedge_ratio(&solver, &p, &[100.0], &[0.04], &[0.0], 1.0, &[4.0]).unwrap();
        assert_abs_diff_eq!(r[0], 0.201, epsilon = 1e-12);
    }

    #[test]
    fn singular_sigma_yields_none() {
        let p = one_asset();
        let solver = SigmaSolver::new(&p);
        assert!(mvh_hedge_ratio(&solver, &p, &[100.0], &[0.0], &[0.0], 1.0, &[4.0]).is_none());
    }

    #[test]
    fn clamp_report_counts_band_exits() {
        let l = Array2::from_shape_vec((2, 3), vec![1.0, 0.5, 1e-7, 1.2, 0.99, 1.05]).unwrap();
        let r = clamp_report(&l);
        assert_eq!((r.below_floor, r.above_ceiling, r.total), (1, 1, 6));
        assert!(r.unreliable);
    }

    #[test]
    fn driver_with_closed_form_controls_matches_drift() {
        // Itô residual r_n = (L_{n+1} − L_n) − [−hΔt + Λᵀ(ΔW, ΔB)] with the
        // closed-form (L, Λ); its path average summed over [0, T] is O(Δt).
        let p = one_asset();
        let problem = Bsre { params: &p };
        let residual = |n_steps: usize| {
            let paths = simulate(&p, n_steps, 20_000, 41, Measure::P).unwrap();
            let mut acc = 0.0;
            let mut dz = vec![0.0; 2];
            for b in 0..paths.batch_size {
                for n in 0..n_steps {
                    let t = paths.time(n);
                    let y = [paths.y_sq[[b, n, 0]]];
                    let l = opportunity_process(&p, t, &y).unwrap();
                    let l_next = opportunity_process(&p, paths.time(n + 1), &[paths.y_sq[[b, n + 1, 0]]]).unwrap();
                    let (l1, l2) = bsre_controls(&p, t, &y, l).unwrap();
                    let z = [l1[0], l2[0]];
                    let (h, _) = problem.driver(&paths, &(), b, n, l, &z, &mut dz);
                    let pred = l - h * paths.dt + z[0] * paths.dw[[b, n, 0]] + z[1] * paths.db[[b, n, 0]];
                    acc += l_next - pred;
                }
            }
            (acc / paths.batch_size as f64).abs()
        };
        let coarse = residual(5);
        let fine = residual(20);
        assert!(fine < 0.5 * coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn zero_drift_bsre_learns_one() {
        let mut p = one_asset();
        p.mu_bar = vec![0.0];
        let cfg = SolverConfig {
            iterations: 600,
            eval_batch: 4000,
            ..SolverConfig::default()
        };
        let run = solve_bsre(&p, &cfg, 5).unwrap();
        assert!((run.y0 - 1.0).abs() < 1e-3, "y_L = {}", run.y0);
        assert!(run.eval_loss < 1e-6, "eval loss {}", run.eval_loss);
    }

    #[test]
    fn strategy_wealth_is_self_financing() {
        let p = one_asset();
        let cfg = SolverConfig {
            iterations: 50,
            eval_batch: 200,
            ..SolverConfig::default()
        };
        let bsre = solve_bsre(&p, &cfg, 1).unwrap();
        let ext = solve_extended_bsde(&p, &cfg.around(6.85), &bsre, 1).unwrap();
        let paths = evaluation_paths(&p, &cfg, 99).unwrap();
        let run = extract_strategy(&p, &bsre, &ext, &paths).unwrap();
        let h = &run.hedge;
        for b in 0..paths.batch_size {
            assert_eq!(h.wealth[[b, 0]], ext.y0);
            for n in 0..paths.n_steps {
                let gain = h.xi[[b, n, 0]] * (paths.s_tilde[[b, n + 1, 0]] - paths.s_tilde[[b, n, 0]]);
                assert_abs_diff_eq!(h.wealth[[b, n + 1]] - h.wealth[[b, n]], gain, epsilon = 1e-12);
                assert_abs_diff_eq!(
                    h.psi[[b, n]],
                    run.x[[b, n]] - h.xi[[b, n, 0]] * paths.s_tilde[[b, n, 0]],
                    epsilon = 1e-12
                );
            }
        }
        assert!(run.nu.iter().all(|v| v.is_finite()));
        assert!(run.hedging_error.is_finite());
        let l0 = Array1::from_iter(run.l.column(0).iter().copied());
        assert!(l0.iter().all(|&v| v == bsre.y0));
    }

    #[test]
    fn extended_bsde_refuses_mismatched_bsre() {
        let p = one_asset();
        let cfg = SolverConfig {
            iterations: 2,
            eval_batch: 10,
            ..SolverConfig::default()
        };
        let bsre = solve_bsre(&p, &cfg, 1).unwrap();
        let other = SolverConfig { n_steps: 20, ..cfg };
        let err = solve_extended_bsde(&p, &other, &bsre, 1).unwrap_err();
        assert!(matches!(err, HedgeError::Refused(_)));
    }

    #[test]
    fn bsre_requires_rho_condition() {
        let mut p = one_asset();
        p.rho = vec![0.8];
        let cfg = SolverConfig {
            iterations: 1,
            ..SolverConfig::default()
        };
        assert!(matches!(solve_bsre(&p, &cfg, 0), Err(HedgeError::InvalidParams(_))));
    }

    #[test]
    fn monitor_rate_uses_recent_rolls() {
        let mon = ClampMonitor::default();
        for (out, tot) in [(10, 10), (0, 10), (1, 10)] {
            mon.mark();
            mon.outside.fetch_add(out, Ordering::Relaxed);
            mon.total.fetch_add(tot, Ordering::Relaxed);
        }
        assert_eq!(mon.rolls(), 3);
        assert_abs_diff_eq!(mon.recent_rate(1), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(mon.recent_rate(2), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(mon.recent_rate(3), 11.0 / 30.0, epsilon = 1e-15);
        assert_eq!(ClampMonitor::default().recent_rate(5), 0.0);
    }

    #[test]
    fn monitored_problem_counts_every_driver_call() {
        let p = one_asset();
        let mon = ClampMonitor::default();
        let prob = MonitoredBsre {
            inner: Bsre { params: &p },
            monitor: &mon,
        };
        let paths = simulate(&p, 4, 8, 1, Measure::P).unwrap();
        prob.prepare(&paths).unwrap();
        let mut dz = vec![0.0; 2];
        prob.driver(&paths, &(), 0, 0, 0.5, &[0.0, 0.0], &mut dz);
        prob.driver(&paths, &(), 0, 1, 2.0, &[0.0, 0.0], &mut dz);
        prob.driver(&paths, &(), 0, 2, -1.0, &[0.0, 0.0], &mut dz);
        assert_eq!(mon.rolls(), 1);
        assert_abs_diff_eq!(mon.recent_rate(1), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn alarm_quiet_on_benign_run() {
        let p = one_asset();
        let cfg = SolverConfig {
            iterations: 300,
            eval_batch: 1000,
            ..SolverConfig::default()
        }
        .around(1.0);
        let a = bsre_with_alarm(&p, &cfg, 2).unwrap();
        assert!(!a.alarm, "{a:?}");
        assert!(a.diverged_at.is_none() && a.l0.is_some());
        assert_eq!(a.training_clamp_rate, 0.0);
    }

    #[test]
    fn alarm_fires_when_l_leaves_band() {
        let mut p = one_asset();
        p.mu_bar = vec![6.0];
        let cfg = SolverConfig {
            iterations: 300,
            schedule: crate::nn::LrSchedule {
                initial: 1e-3,
                second: 1e-3,
                switch_at: 300,
            },
            eval_batch: 1000,
            ..SolverConfig::default()
        }
        .around(1.0);
        let a = bsre_with_alarm(&p, &cfg, 2).unwrap();
        assert!(a.alarm, "{a:?}");
        assert!(a.training_clamp_rate > CLAMP_ALARM_RATE);
    }
}
