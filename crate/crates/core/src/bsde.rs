//! Deep BSDE solver on the uniform grid `t_n = nΔt`.
//!
//! The backward variable is rolled forward as
//! `Y_{n+1} = Y_n − h(t_n, X_n, Y_n, Z_n)Δt + Z_nᵀ(ΔW_n, ΔB_n)`,
//! with `Z_0` a trainable vector and `Z_n = net_n(X_n)` for `n ≥ 1`. The loss
//! is `mean (ϑ(X_N) − Y_N)²` over a fresh batch of forward paths each
//! iteration. Gradients flow backward through the roll by an explicit adjoint
//! recursion, then through each network.

use std::time::Instant;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::market::{mix_seed, simulate, HestonParams, Measure, PathBatch};
use crate::nn::{write_loss_csv, Checkpoint, LrSchedule, Mlp, Tape, TrainState, Trainable};

/// Seed of the out-of-sample evaluation batch derived from a run seed.
pub fn eval_seed(seed: u64) -> u64 {
    mix_seed(seed ^ 0xE7A1_0000_0000_0000, 0x5EED)
}

/// Contract for one backward equation on a forward path batch.
pub trait BsdeProblem: Sync {
    /// Per-batch data computed once before rolling (e.g. frozen upstream
    /// solutions evaluated on the same paths).
    type Aux;

    /// Length of `Z_n`: `m` components against `W`, then `m` against `B`.
    fn control_dim(&self) -> usize;

    /// Typical magnitude of the controls; network outputs are multiplied by it.
    fn control_scale(&self) -> f64 {
        1.0
    }

    fn prepare(&self, paths: &PathBatch) -> Result<Self::Aux>;

    fn terminal(&self, paths: &PathBatch, b: usize) -> f64;

    /// Returns `(h, ∂h/∂y)` and writes `∂h/∂z` into `dz`.
    #[allow(clippy::too_many_arguments)]
    fn driver(
        &self,
        paths: &PathBatch,
        aux: &Self::Aux,
        b: usize,
        n: usize,
        y: f64,
        z: &[f64],
        dz: &mut [f64],
    ) -> (f64, f64);
}

/// Zero driver with a fixed terminal value; useful for sanity runs.
#[derive(Clone, Debug)]
pub struct ConstantTarget {
    pub value: f64,
    pub m: usize,
}

impl BsdeProblem for ConstantTarget {
    type Aux = ();

    fn control_dim(&self) -> usize {
        2 * self.m
    }

    fn prepare(&self, _: &PathBatch) -> Result<()> {
        Ok(())
    }

    fn terminal(&self, _: &PathBatch, _: usize) -> f64 {
        self.value
    }

    fn driver(&self, _: &PathBatch, _: &(), _: usize, _: usize, _: f64, _: &[f64], dz: &mut [f64]) -> (f64, f64) {
        dz.iter_mut().for_each(|d| *d = 0.0);
        (0.0, 0.0)
    }
}

/// Standardized network inputs: `(S̃/S̃₀ − 1)/√(θT)` and `(Y² − θ)/θ` per asset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    s0: Vec<f64>,
    s_scale: Vec<f64>,
    theta: Vec<f64>,
}

impl FeatureMap {
    pub fn new(params: &HestonParams) -> Self {
        FeatureMap {
            s0: params.s0.clone(),
            s_scale: params
                .theta
                .iter()
                .map(|&th| (th * params.maturity).sqrt().max(1e-8))
                .collect(),
            theta: params.theta.iter().map(|&t| t.max(1e-8)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.s0.len()
    }

    pub fn at_step(&self, paths: &PathBatch, n: usize) -> Array2<f64> {
        let m = self.s0.len();
        let mut x = Array2::zeros((paths.batch_size, 2 * m));
        for b in 0..paths.batch_size {
            for i in 0..m {
                x[[b, i]] = (paths.s_tilde[[b, n, i]] / self.s0[i] - 1.0) / self.s_scale[i];
                x[[b, m + i]] = (paths.y_sq[[b, n, i]] - self.theta[i]) / self.theta[i];
            }
        }
        x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n_steps: usize,
    pub iterations: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    /// Uniform range for the initial guess of `Y_0`.
    pub y_init: (f64, f64),
    /// Half-width of the uniform range for the raw `Z_0` entries.
    pub z0_init: f64,
    pub eval_batch: usize,
    pub hidden_layers: usize,
    /// Hidden width; `2m + 20` when absent.
    pub width: Option<usize>,
    /// Overrides the problem's control scale.
    pub control_scale: Option<f64>,
    /// Abort when the training loss exceeds this value.
    pub divergence_threshold: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_steps: 10,
            iterations: 8000,
            batch_size: 128,
            schedule: LrSchedule::default(),
            y_init: (0.5, 2.0),
            z0_init: 0.1,
            eval_batch: 10_000,
            hidden_layers: 4,
            width: None,
            control_scale: None,
            divergence_threshold: 1e12,
        }
    }
}

impl SolverConfig {
    /// Same solver with `Y_0` drawn from `c·[0.95, 1.05]`.
    pub fn around(&self, c: f64) -> Self {
        let (a, b) = (0.95 * c, 1.05 * c);
        SolverConfig {
            y_init: (a.min(b), a.max(b)),
            ..self.clone()
        }
    }
}

/// Trainable part of a solution: `y_0`, raw `Z_0` and the step networks
/// for `n = 1..N−1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsdeModel {
    pub y0: f64,
    pub z0: Vec<f64>,
    pub nets: Vec<Mlp>,
    pub scale: f64,
    pub features: FeatureMap,
    #[serde(skip)]
    grad_y0: f64,
    #[serde(skip)]
    grad_z0: Vec<f64>,
}

impl BsdeModel {
    pub fn init(params: &HestonParams, q: usize, scale: f64, cfg: &SolverConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xD1CE));
        let (lo, hi) = cfg.y_init;
        let y0 = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let z0 = (0..q)
            .map(|_| {
                if cfg.z0_init > 0.0 {
                    rng.random_range(-cfg.z0_init..cfg.z0_init)
                } else {
                    0.0
                }
            })
            .collect();
        let features = FeatureMap::new(params);
        let width = cfg.width.unwrap_or(2 * params.m + 20);
        let nets = (1..cfg.n_steps)
            .map(|_| Mlp::with_shape(features.dim(), width, cfg.hidden_layers, q, &mut rng))
            .collect();
        BsdeModel {
            y0,
            z0,
            nets,
            scale,
            features,
            grad_y0: 0.0,
            grad_z0: vec![0.0; q],
        }
    }

    pub fn n_steps(&self) -> usize {
        self.nets.len() + 1
    }

    pub fn control_dim(&self) -> usize {
        self.z0.len()
    }

    /// Controls at step `n` for every path, `B × q`.
    pub fn controls(&self, paths: &PathBatch, n: usize) -> Array2<f64> {
        if n == 0 {
            let z = Array1::from(self.z0.clone()) * self.scale;
            z.broadcast((paths.batch_size, self.z0.len())).unwrap().to_owned()
        } else {
            let x = self.features.at_step(paths, n);
            self.nets[n - 1].forward_batch(x.view()) * self.scale
        }
    }

    /// Forward roll without recording.
    pub fn roll<P: BsdeProblem>(&self, problem: &P, paths: &PathBatch) -> Result<Roll> {
        let aux = problem.prepare(paths)?;
        roll_forward(problem, &aux, paths, self, false).map(|(r, _)| r)
    }
}

impl Trainable for BsdeModel {
    fn groups(&mut self) -> Vec<(&mut [f64], &[f64])> {
        let mut g: Vec<(&mut [f64], &[f64])> = Vec::with_capacity(self.nets.len() + 2);
        g.push((std::slice::from_mut(&mut self.y0), std::slice::from_ref(&self.grad_y0)));
        g.push((&mut self.z0[..], &self.grad_z0[..]));
        for net in &mut self.nets {
            g.push((&mut net.params[..], &net.grads[..]));
        }
        g
    }

    fn named_tensors(&self) -> Vec<(String, Vec<f64>)> {
        let mut t = vec![("y0".to_string(), vec![self.y0]), ("z0".to_string(), self.z0.clone())];
        for (k, net) in self.nets.iter().enumerate() {
            t.push((format!("net_{:03}", k + 1), net.params.clone()));
        }
        t
    }

    fn zero_grad(&mut self) {
        self.grad_y0 = 0.0;
        self.grad_z0 = vec![0.0; self.z0.len()];
        for net in &mut self.nets {
            net.zero_grad();
        }
    }
}

/// Realized backward paths on one batch.
#[derive(Clone, Debug)]
pub struct Roll {
    /// `B × (N+1)`.
    pub y: Array2<f64>,
    /// `B × N × q`.
    pub z: Array3<f64>,
    hy: Array2<f64>,
    hz: Array3<f64>,
}

impl Roll {
    pub fn terminal_residuals<P: BsdeProblem>(&self, problem: &P, paths: &PathBatch) -> Array1<f64> {
        let n = paths.n_steps;
        Array1::from_shape_fn(paths.batch_size, |b| problem.terminal(paths, b) - self.y[[b, n]])
    }

    pub fn loss<P: BsdeProblem>(&self, problem: &P, paths: &PathBatch) -> f64 {
        self.terminal_residuals(problem, paths)
            .mapv(|r| r * r)
            .mean()
            .unwrap_or(f64::NAN)
    }
}

/// `Y_{n+1} = Y_n − hΔt + Z_nᵀΔ𝒲_n` over all paths.
pub fn roll_forward<P: BsdeProblem>(
    problem: &P,
    aux: &P::Aux,
    paths: &PathBatch,
    model: &BsdeModel,
    taped: bool,
) -> Result<(Roll, Vec<Tape>)> {
    let (bsz, n_steps, m) = (paths.batch_size, paths.n_steps, paths.m);
    let q = problem.control_dim();
    if q != 2 * m || model.control_dim() != q {
        return Err(HedgeError::Dimension {
            what: "control dimension",
            expected: 2 * m,
            got: model.control_dim(),
        });
    }
    if model.n_steps() != n_steps {
        return Err(HedgeError::Dimension {
            what: "time steps",
            expected: model.n_steps(),
            got: n_steps,
        });
    }
    let dt = paths.dt;
    let mut y = Array2::<f64>::zeros((bsz, n_steps + 1));
    let mut z = Array3::<f64>::zeros((bsz, n_steps, q));
    let mut hy = Array2::<f64>::zeros((bsz, n_steps));
    let mut hz = Array3::<f64>::zeros((bsz, n_steps, q));
    let mut tapes = Vec::new();
    y.column_mut(0).fill(model.y0);
    let mut dz = vec![0.0; q];
    let mut zb = vec![0.0; q];
    for n in 0..n_steps {
        let zn = if n == 0 || !taped {
            model.controls(paths, n)
        } else {
            let x = model.features.at_step(paths, n);
            let (out, tape) = model.nets[n - 1].forward_taped(x.view());
            tapes.push(tape);
            out * model.scale
        };
        for b in 0..bsz {
            zb.copy_from_slice(zn.row(b).as_slice().expect("contiguous"));
            let yn = y[[b, n]];
            let (h, dh_dy) = problem.driver(paths, aux, b, n, yn, &zb, &mut dz);
            let mut next = yn - h * dt;
            for i in 0..m {
                next += zb[i] * paths.dw[[b, n, i]] + zb[m + i] * paths.db[[b, n, i]];
            }
            if !next.is_finite() {
                return Err(HedgeError::NonFinite { step: n });
            }
            y[[b, n + 1]] = next;
            hy[[b, n]] = dh_dy;
            for k in 0..q {
                z[[b, n, k]] = zb[k];
                hz[[b, n, k]] = dz[k];
            }
        }
    }
    Ok((Roll { y, z, hy, hz }, tapes))
}

/// Loss and parameter gradients on one batch; gradients are accumulated into
/// the model.
pub fn loss_and_grad<P: BsdeProblem>(problem: &P, paths: &PathBatch, model: &mut BsdeModel) -> Result<f64> {
    let aux = problem.prepare(paths)?;
    let (roll, tapes) = roll_forward(problem, &aux, paths, model, true)?;
    let (bsz, n_steps, m) = (paths.batch_size, paths.n_steps, paths.m);
    let q = 2 * m;
    let dt = paths.dt;
    let resid = roll.terminal_residuals(problem, paths);
    let loss = resid.mapv(|r| r * r).mean().unwrap();
    // adjoint a_n = ∂loss/∂Y_n
    let mut a = resid.mapv(|r| -2.0 * r / bsz as f64);
    model.zero_grad();
    for n in (0..n_steps).rev() {
        let mut gz = Array2::<f64>::zeros((bsz, q));
        for b in 0..bsz {
            let ab = a[b];
            for i in 0..m {
                gz[[b, i]] = ab * (paths.dw[[b, n, i]] - roll.hz[[b, n, i]] * dt);
                gz[[b, m + i]] = ab * (paths.db[[b, n, i]] - roll.hz[[b, n, m + i]] * dt);
            }
            a[b] = ab * (1.0 - roll.hy[[b, n]] * dt);
        }
        gz *= model.scale;
        if n == 0 {
            let g = gz.sum_axis(Axis(0));
            model.grad_z0.iter_mut().zip(g.iter()).for_each(|(d, v)| *d += v);
        } else {
            model.nets[n - 1].backward(&tapes[n - 1], gz.view());
        }
    }
    model.grad_y0 = a.sum();
    Ok(loss)
}

/// Trained solution with evaluation on an independent batch.
#[derive(Clone, Debug)]
pub struct BsdeRunResult {
    pub model: BsdeModel,
    pub y0: f64,
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub eval_loss: f64,
    pub eval_paths: PathBatch,
    pub eval_roll: Roll,
    pub iterations: u64,
    pub seconds: f64,
}

impl BsdeRunResult {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iterations,
            tensors: self.model.named_tensors().into_iter().collect(),
        }
    }

    pub fn write_loss_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_loss_csv(w, &self.loss_trace)
    }
}

/// Training batch of iteration `it` (fresh ℙ paths every iteration).
pub fn training_paths(params: &HestonParams, cfg: &SolverConfig, seed: u64, it: u64) -> Result<PathBatch> {
    simulate(params, cfg.n_steps, cfg.batch_size, mix_seed(seed, it), Measure::P)
}

pub fn evaluation_paths(params: &HestonParams, cfg: &SolverConfig, seed: u64) -> Result<PathBatch> {
    simulate(params, cfg.n_steps, cfg.eval_batch, eval_seed(seed), Measure::P)
}

/// Minimizes the terminal mismatch with Adam and the configured schedule.
///
/// Returns the final iterate. A non-finite or exploding loss aborts with the
/// trace recorded so far.
pub fn train<P: BsdeProblem>(
    problem: &P,
    params: &HestonParams,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<BsdeRunResult> {
    let start = Instant::now();
    let scale = cfg.control_scale.unwrap_or_else(|| problem.control_scale());
    let model = BsdeModel::init(params, problem.control_dim(), scale, cfg, seed);
    let mut state = TrainState::new(model, cfg.schedule);
    for it in 0..cfg.iterations {
        let paths = training_paths(params, cfg, seed, it)?;
        let loss = match loss_and_grad(problem, &paths, &mut state.model) {
            Ok(l) => l,
            Err(HedgeError::NonFinite { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || loss > cfg.divergence_threshold {
            let mut trace = state.losses.clone();
            trace.push(loss);
            return Err(HedgeError::Diverged {
                iteration: it as usize,
                loss,
                loss_trace: trace,
            });
        }
        state.adam_step(loss)?;
        if it % 1000 == 0 {
            log::debug!("iteration {it}: loss {loss:.3e}, y0 {:.6}", state.model.y0);
        }
    }
    let final_loss = state.losses.last().copied().unwrap_or(f64::NAN);
    let eval_paths = evaluation_paths(params, cfg, seed)?;
    let eval_roll = state.model.roll(problem, &eval_paths)?;
    let eval_loss = eval_roll.loss(problem, &eval_paths);
    Ok(BsdeRunResult {
        y0: state.model.y0,
        model: state.model,
        loss_trace: state.losses,
        final_loss,
        eval_loss,
        eval_paths,
        eval_roll,
        iterations: cfg.iterations,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `Z` slice of a roll for one path and step, split into the `W` and `B` parts.
pub fn split_control(z: ArrayView2<f64>, b: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let row = z.row(b);
    (row.slice(s![..m]).to_vec(), row.slice(s![m..]).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// `h = −zᵀφ̄` with a constant vector `φ̄`.
    struct Linear {
        phi: Vec<f64>,
    }

    impl BsdeProblem for Linear {
        type Aux = ();
        fn control_dim(&self) -> usize {
            self.phi.len()
        }
        fn prepare(&self, _: &PathBatch) -> Result<()> {
            Ok(())
        }
        fn terminal(&self, paths: &PathBatch, b: usize) -> f64 {
            paths.s_tilde[[b, paths.n_steps, 0]] / 100.0
        }
        fn driver(&self, _: &PathBatch, _: &(), _: usize, _: usize, _: f64, z: &[f64], dz: &mut [f64]) -> (f64, f64) {
            let mut h = 0.0;
            for k in 0..z.len() {
                h -= z[k] * self.phi[k];
                dz[k] = -self.phi[k];
            }
            (h, 0.0)
        }
    }

    /// Nonlinear in y and z so every adjoint term is exercised.
    struct Quadratic;

    impl BsdeProblem for Quadratic {
        type Aux = ();
        fn control_dim(&self) -> usize {
            2
        }
        fn prepare(&self, _: &PathBatch) -> Result<()> {
            Ok(())
        }
        fn terminal(&self, paths: &PathBatch, b: usize) -> f64 {
            (paths.s_tilde[[b, paths.n_steps, 0]] / 100.0 - 1.0).max(0.0) * 10.0
        }
        fn driver(&self, _: &PathBatch, _: &(), _: usize, _: usize, y: f64, z: &[f64], dz: &mut [f64]) -> (f64, f64) {
            dz[0] = 2.0 * z[0] + 0.3 * y;
            dz[1] = -0.5;
            (
                z[0] * z[0] + 0.3 * y * z[0] - 0.5 * z[1] + 0.2 * y * y,
                0.3 * z[0] + 0.4 * y,
            )
        }
    }

    fn params1() -> HestonParams {
        HestonParams::table1(1)
    }

    fn small_cfg() -> SolverConfig {
        SolverConfig {
            n_steps: 5,
            batch_size: 16,
            eval_batch: 64,
            width: Some(6),
            hidden_layers: 2,
            ..SolverConfig::default()
        }
    }

    fn zeroed(model: &mut BsdeModel) {
        model.z0.iter_mut().for_each(|v| *v = 0.0);
        for net in &mut model.nets {
            net.params.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn constant_roll_with_zero_controls() {
        let p = params1();
        let cfg = small_cfg();
        let mut model = BsdeModel::init(&p, 2, 1.0, &cfg, 1);
        zeroed(&mut model);
        model.y0 = 1.7;
        let paths = training_paths(&p, &cfg, 3, 0).unwrap();
        let roll = model.roll(&ConstantTarget { value: 0.0, m: 1 }, &paths).unwrap();
        assert!(roll.y.iter().all(|&v| v == 1.7));
    }

    #[test]
    fn constant_control_telescopes() {
        let p = params1();
        let cfg = small_cfg();
        let mut model = BsdeModel::init(&p, 2, 1.0, &cfg, 1);
        zeroed(&mut model);
        let c = [0.4, -1.3];
        model.z0 = c.to_vec();
        for net in &mut model.nets {
            let n = net.n_params();
            net.params[n - 2..].copy_from_slice(&c);
        }
        model.y0 = 0.25;
        let paths = training_paths(&p, &cfg, 5, 0).unwrap();
        let roll = model.roll(&ConstantTarget { value: 0.0, m: 1 }, &paths).unwrap();
        for b in 0..paths.batch_size {
            let w: f64 = paths.dw.slice(s![b, .., 0]).sum();
            let bb: f64 = paths.db.slice(s![b, .., 0]).sum();
            assert_abs_diff_eq!(roll.y[[b, 5]], 0.25 + c[0] * w + c[1] * bb, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_driver_closed_form() {
        let p = params1();
        let cfg = small_cfg();
        let phi = vec![0.3, -0.7];
        let problem = Linear { phi: phi.clone() };
        let mut model = BsdeModel::init(&p, 2, 1.0, &cfg, 1);
        zeroed(&mut model);
        let c = [1.5, 0.2];
        model.z0 = c.to_vec();
        for net in &mut model.nets {
            let n = net.n_params();
            net.params[n - 2..].copy_from_slice(&c);
        }
        model.y0 = -0.4;
        let paths = training_paths(&p, &cfg, 8, 0).unwrap();
        let roll = model.roll(&problem, &paths).unwrap();
        let t = p.maturity;
        let drift: f64 = c.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>() * t;
        for b in 0..paths.batch_size {
            let w: f64 = paths.dw.slice(s![b, .., 0]).sum();
            let bb: f64 = paths.db.slice(s![b, .., 0]).sum();
            assert_abs_diff_eq!(roll.y[[b, 5]], -0.4 + c[0] * w + c[1] * bb + drift, epsilon = 1e-12);
        }
    }

    #[test]
    fn martingale_sum_for_zero_driver() {
        let p = params1();
        let cfg = SolverConfig {
            eval_batch: 20_000,
            ..small_cfg()
        };
        let model = BsdeModel::init(&p, 2, 1.0, &cfg, 9);
        let paths = evaluation_paths(&p, &cfg, 9).unwrap();
        let roll = model.roll(&ConstantTarget { value: 0.0, m: 1 }, &paths).unwrap();
        let inc = roll.y.column(5).mapv(|v| v - model.y0);
        let mean = inc.mean().unwrap();
        let se = inc.std(1.0) / (inc.len() as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean} se {se}");
    }

    fn finite_difference_check<P: BsdeProblem>(problem: &P, scale: f64) {
        let p = params1();
        let cfg = small_cfg();
        let mut model = BsdeModel::init(&p, 2, scale, &cfg, 21);
        // move biases off zero so ReLU kinks are unlikely at the samples
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for net in &mut model.nets {
            for v in net.params.iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let paths = training_paths(&p, &cfg, 17, 0).unwrap();
        loss_and_grad(problem, &paths, &mut model).unwrap();
        let analytic: Vec<f64> = model.groups().into_iter().flat_map(|(_, g)| g.to_vec()).collect();
        let total = analytic.len();
        let h = 1e-5;
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        for k in (0..total).step_by(total / 150 + 1) {
            let eval = |model: &mut BsdeModel, delta: f64| {
                let mut off = 0;
                for (params, _) in model.groups() {
                    if k < off + params.len() {
                        params[k - off] += delta;
                        break;
                    }
                    off += params.len();
                }
                let aux = problem.prepare(&paths).unwrap();
                let (r, _) = roll_forward(problem, &aux, &paths, model, false).unwrap();
                r.loss(problem, &paths)
            };
            let mut m1 = model.clone();
            let mut m2 = model.clone();
            let fd = (eval(&mut m1, h) - eval(&mut m2, -h)) / (2.0 * h);
            let denom = fd.abs().max(analytic[k].abs()).max(1e-7);
            let rel = (fd - analytic[k]).abs() / denom;
            worst = worst.max(rel);
            checked += 1;
        }
        assert!(checked >= 100, "only {checked} parameters checked");
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences_linear() {
        finite_difference_check(&Linear { phi: vec![0.3, -0.7] }, 1.0);
    }

    #[test]
    fn gradient_matches_finite_differences_nonlinear() {
        finite_difference_check(&Quadratic, 0.5);
    }

    #[test]
    fn constant_target_is_learned() {
        let p = params1();
        let cfg = SolverConfig {
            n_steps: 10,
            iterations: 2000,
            schedule: LrSchedule {
                initial: 5e-2,
                second: 5e-3,
                switch_at: 1000,
            },
            eval_batch: 10_000,
            ..SolverConfig::default()
        };
        let problem = ConstantTarget { value: 3.0, m: 1 };
        let run = train(&problem, &p, &cfg, 2).unwrap();
        assert_eq!(run.loss_trace.len(), 2000);
        assert!((run.y0 - 3.0).abs() < 1e-3, "y0 {}", run.y0);
        assert!(run.eval_loss < 1e-6, "eval loss {}", run.eval_loss);
    }

    #[test]
    fn training_is_reproducible() {
        let p = params1();
        let cfg = SolverConfig {
            iterations: 30,
            eval_batch: 256,
            ..small_cfg()
        };
        let problem = ConstantTarget { value: 1.0, m: 1 };
        let a = train(&problem, &p, &cfg, 77).unwrap();
        let b = train(&problem, &p, &cfg, 77).unwrap();
        assert_eq!(a.y0.to_bits(), b.y0.to_bits());
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn divergence_aborts_with_trace() {
        let p = params1();
        let cfg = SolverConfig {
            iterations: 50,
            divergence_threshold: 1e-30,
            ..small_cfg()
        };
        let err = train(&ConstantTarget { value: 5.0, m: 1 }, &p, &cfg, 1).unwrap_err();
        match err {
            HedgeError::Diverged {
                iteration, loss_trace, ..
            } => {
                assert_eq!(iteration, 0);
                assert_eq!(loss_trace.len(), 1);
            }
            e => panic!("unexpected {e}"),
        }
    }
}
