//! Local risk minimization through the Föllmer–Schweizer decomposition.

use ndarray::{s, Array1, Array2, Array3};

use crate::bsde::{train, BsdeProblem, BsdeRunResult, SolverConfig};
use crate::error::Result;
use crate::hedge::{HedgeRun, SigmaSolver};
use crate::market::{validate, Claim, HestonParams, PathBatch};
use crate::mc::SampleStats;
use crate::mvh::price_control_scale;

/// Linear BSDE whose initial value is the minimal-martingale-measure price.
/// The forward roll gains `+η₁ᵀφΔt`.
#[derive(Clone, Debug)]
pub struct FsBsde<'a> {
    pub params: &'a HestonParams,
    pub claim: Claim,
}

impl BsdeProblem for FsBsde<'_> {
    type Aux = ();

    fn control_dim(&self) -> usize {
        2 * self.params.m
    }

    fn control_scale(&self) -> f64 {
        price_control_scale(self.params)
    }

    fn prepare(&self, _: &PathBatch) -> Result<()> {
        Ok(())
    }

    fn terminal(&self, paths: &PathBatch, b: usize) -> f64 {
        self.claim.discounted(paths, self.params, b)
    }

    fn driver(&self, paths: &PathBatch, _: &(), b: usize, n: usize, _: f64, z: &[f64], dz: &mut [f64]) -> (f64, f64) {
        let m = self.params.m;
        let mut h = 0.0;
        for j in 0..m {
            let phi = paths.y_sq[[b, n, j]].sqrt() * self.params.mu_bar[j];
            h -= z[j] * phi;
            dz[j] = -phi;
            dz[m + j] = 0.0;
        }
        (h, 0.0)
    }
}

pub fn solve_fs_bsde(params: &HestonParams, cfg: &SolverConfig, seed: u64) -> Result<BsdeRunResult> {
    solve_fs_bsde_for(params, Claim::BasketCall, cfg, seed)
}

pub fn solve_fs_bsde_for(params: &HestonParams, claim: Claim, cfg: &SolverConfig, seed: u64) -> Result<BsdeRunResult> {
    validate(params).into_result(false)?;
    train(&FsBsde { params, claim }, params, cfg, seed)
}

/// Locally risk-minimizing strategy on one path batch.
#[derive(Clone, Debug)]
pub struct LrmRun {
    pub y_x: f64,
    /// `B × (N+1)`.
    pub x: Array2<f64>,
    /// `(η₁, η₂)`, `B × N × 2m`.
    pub eta: Array3<f64>,
    /// Shares, cash, value `V = X` and cost `C`.
    pub hedge: HedgeRun,
    /// Per path `H − [ŷ + Σ ξᵀΔS̃ + Σ η₂ᵀΔB]`.
    pub fs_residual: Array1<f64>,
    /// Per path `Σ η₂ᵀΔB`.
    pub orthogonal_part: Array1<f64>,
    /// Per path `Σ η₁ᵀΔW`.
    pub tradable_part: Array1<f64>,
}

impl LrmRun {
    /// Statistics of `C_N − C_0`.
    pub fn cost_increment(&self) -> SampleStats {
        let c = self.hedge.cost.as_ref().expect("cost process");
        let n = self.hedge.n_steps;
        let inc: Vec<f64> = (0..c.nrows()).map(|b| c[[b, n]] - c[[b, 0]]).collect();
        SampleStats::of(&inc)
    }

    pub fn residual_stats(&self) -> SampleStats {
        SampleStats::of(self.fs_residual.as_slice().unwrap())
    }

    /// Sample covariance of the orthogonal and tradable martingale parts
    /// (their product has mean zero under exact orthogonality).
    pub fn orthogonality(&self) -> SampleStats {
        let prod: Vec<f64> = self
            .orthogonal_part
            .iter()
            .zip(self.tradable_part.iter())
            .map(|(a, b)| a * b)
            .collect();
        SampleStats::of(&prod)
    }
}

/// `ξ = diag(S̃)⁻¹ σ⁻ᵀ η₁`, or `None` when `σ` is singular.
pub fn lrm_hedge_ratio(solver: &SigmaSolver, s: &[f64], y_sq: &[f64], eta1: &[f64]) -> Option<Vec<f64>> {
    let u = solver.solve(y_sq, eta1)?;
    Some(u.iter().zip(s).map(|(u, s)| u / s).collect())
}

pub fn extract_strategy(params: &HestonParams, run: &BsdeRunResult, paths: &PathBatch) -> Result<LrmRun> {
    extract_strategy_for(params, Claim::BasketCall, run, paths)
}

pub fn extract_strategy_for(
    params: &HestonParams,
    claim: Claim,
    run: &BsdeRunResult,
    paths: &PathBatch,
) -> Result<LrmRun> {
    let roll = run.model.roll(&FsBsde { params, claim }, paths)?;
    let (bsz, n_steps, m) = (paths.batch_size, paths.n_steps, paths.m);
    let solver = SigmaSolver::new(params);
    let mut xi = Array3::<f64>::zeros((bsz, n_steps, m));
    let mut psi = Array2::<f64>::zeros((bsz, n_steps));
    let mut cost = Array2::<f64>::zeros((bsz, n_steps + 1));
    let mut flagged = Array2::from_elem((bsz, n_steps), false);
    let mut fs_residual = Array1::<f64>::zeros(bsz);
    let mut orth = Array1::<f64>::zeros(bsz);
    let mut trad = Array1::<f64>::zeros(bsz);
    for b in 0..bsz {
        cost[[b, 0]] = roll.y[[b, 0]];
        let mut prev = vec![0.0; m];
        let mut gains = 0.0;
        let mut orth_b = 0.0;
        let mut trad_b = 0.0;
        for n in 0..n_steps {
            let s_n = paths.s_tilde.slice(s![b, n, ..]).to_vec();
            let y_n = paths.y_sq.slice(s![b, n, ..]).to_vec();
            let eta1 = roll.z.slice(s![b, n, ..m]).to_vec();
            let ratio = match lrm_hedge_ratio(&solver, &s_n, &y_n, &eta1) {
                Some(r) => r,
                None => {
                    flagged[[b, n]] = true;
                    prev.clone()
                }
            };
            let mut held = 0.0;
            for j in 0..m {
                xi[[b, n, j]] = ratio[j];
                held += ratio[j] * s_n[j];
                gains += ratio[j] * (paths.s_tilde[[b, n + 1, j]] - s_n[j]);
                orth_b += roll.z[[b, n, m + j]] * paths.db[[b, n, j]];
                trad_b += roll.z[[b, n, j]] * paths.dw[[b, n, j]];
            }
            psi[[b, n]] = roll.y[[b, n]] - held;
            cost[[b, n + 1]] = roll.y[[b, n + 1]] - gains;
            prev = ratio;
        }
        fs_residual[b] = claim.discounted(paths, params, b) - (run.y0 + gains + orth_b);
        orth[b] = orth_b;
        trad[b] = trad_b;
    }
    let hedge = HedgeRun {
        label: "lrm".into(),
        n_steps,
        dt: paths.dt,
        price: roll.y.clone(),
        wealth: roll.y.clone(),
        xi,
        psi,
        cost: Some(cost),
        flagged,
    };
    Ok(LrmRun {
        y_x: run.y0,
        x: roll.y,
        eta: roll.z,
        hedge,
        fs_residual,
        orthogonal_part: orth,
        tradable_part: trad,
    })
}
