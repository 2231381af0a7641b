//! Experiment orchestration: presets, per-stage execution, persisted
//! reports and the summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bsde::{BsdeRunResult, SolverConfig};
use crate::error::{HedgeError, Result};
use crate::hedge::{mse_over_time, HedgeRun, MseOverTime};
use crate::market::{mix_seed, simulate, simulate_range, Claim, HestonParams, Measure, PathBatch};
use crate::mc::{self, McEstimate};
use crate::mvh::{self, ClampReport};
use crate::nn::LrSchedule;
use crate::pde::{self, PdeConfig, PdeGrid, PdeMode};
use crate::riccati::{opportunity_process, RiccatiCurves};
use crate::{lrm, validate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mvh,
    Lrm,
    Mc,
    Pde,
    Riccati,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Riccati, Method::Mc, Method::Pde, Method::Mvh, Method::Lrm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mvh => "mvh",
            Method::Lrm => "lrm",
            Method::Mc => "mc",
            Method::Pde => "pde",
            Method::Riccati => "riccati",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = HedgeError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HedgeError::InvalidParams(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub batch: usize,
    pub steps: usize,
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            batch: 100_000,
            steps: 100,
            antithetic: false,
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub params: HestonParams,
    pub solver: SolverConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub mc: McConfig,
    pub pde: PdeConfig,
    pub claim: Claim,
    /// ℙ paths on which strategies are compared.
    pub hedge_paths: usize,
    /// Paths written to each `hedge_run_*.csv`.
    pub csv_paths: usize,
    /// Pilot ℙ paths for the initial guess of a price.
    pub pilot_paths: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset("table1-m1").expect("built-in preset")
    }
}

pub const PRESETS: [&str; 6] = ["table1-m1", "table1-m5", "table1-m20", "table1-m100", "quick", "full"];

impl ExperimentConfig {
    /// Named configurations. `table1-m*` and `full` use the full training
    /// budget; `quick` halves it and uses a smaller Monte Carlo batch.
    pub fn preset(name: &str) -> Result<Self> {
        let full_solver = SolverConfig {
            iterations: 8000,
            schedule: LrSchedule {
                initial: 5e-2,
                second: 5e-3,
                switch_at: 4000,
            },
            ..SolverConfig::default()
        };
        let base = |m: usize| ExperimentConfig {
            name: name.to_string(),
            params: HestonParams::table1(m),
            solver: full_solver.clone(),
            methods: if m == 1 {
                vec![Method::Riccati, Method::Mc, Method::Pde, Method::Mvh, Method::Lrm]
            } else {
                vec![Method::Riccati, Method::Mc, Method::Mvh, Method::Lrm]
            },
            seeds: vec![0],
            out_dir: None,
            mc: McConfig::default(),
            pde: PdeConfig::default(),
            claim: Claim::BasketCall,
            hedge_paths: 1000,
            csv_paths: 20,
            pilot_paths: 1024,
        };
        match name {
            "table1-m1" | "full" => Ok(base(1)),
            "table1-m5" => Ok(base(5)),
            "table1-m20" => Ok(base(20)),
            "table1-m100" => Ok(base(100)),
            "quick" => {
                let mut c = base(1);
                c.solver.iterations = 4000;
                c.solver.schedule.switch_at = 2000;
                c.mc.batch = 20_000;
                Ok(c)
            }
            _ => Err(HedgeError::InvalidParams(format!(
                "unknown preset {name:?}; known: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Missing fields take the `table1-m1` defaults; a partial `params`
    /// object is completed from the reference model with its own `m`.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut given: serde_json::Value = serde_json::from_str(s)?;
        if let Some(params) = given.get_mut("params") {
            *params = serde_json::to_value(HestonParams::from_json_value(params.take())?)?;
        }
        let mut full = serde_json::to_value(Self::default())?;
        merge_json(&mut full, given);
        let c: ExperimentConfig = serde_json::from_value(full)?;
        c.params.check_dims()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn with_steps(mut self, n: usize) -> Self {
        self.solver.n_steps = n;
        self
    }

    fn wants(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}

/// Overwrites `base` with `given`, descending into objects present in both.
fn merge_json(base: &mut serde_json::Value, given: serde_json::Value) {
    match (base, given) {
        (serde_json::Value::Object(b), serde_json::Value::Object(g)) => {
            for (k, v) in g {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// One relative error with the raw numbers it was computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub label: String,
    pub reference: f64,
    pub value: f64,
    pub rel_err_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepSummary {
    pub price: f64,
    pub final_loss: f64,
    pub eval_loss: f64,
    pub iterations: u64,
    /// Mean squared terminal hedging error on the hedge paths.
    pub hedging_error: f64,
    pub flagged_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsreSummary {
    pub l0: f64,
    pub final_loss: f64,
    pub eval_loss: f64,
    pub clamp: ClampReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeSummary {
    pub mode: PdeMode,
    pub price: f64,
    pub config: PdeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub label: String,
    pub mean_price: f64,
    pub mean_cash: f64,
    pub mean_shares: f64,
    pub per_step: MseOverTime,
}

/// Results for one seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub l_closed_form: Option<f64>,
    pub bsre: Option<BsreSummary>,
    pub mc: Vec<McEstimate>,
    pub pde: Vec<PdeSummary>,
    pub mvh: Option<DeepSummary>,
    pub lrm: Option<DeepSummary>,
    pub errors: Vec<ErrorEntry>,
    pub mse: Vec<MseSummary>,
    /// Loss traces keyed by series (`bsre`, `mvh`, `lrm`).
    pub loss_traces: BTreeMap<String, Vec<f64>>,
    /// Wall-clock seconds per stage; excluded from reproducibility checks.
    pub seconds: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedReport>,
    pub failure: Option<StageFailure>,
}

impl RunReport {
    /// The report with every wall-clock field zeroed.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        for s in &mut r.seeds {
            s.seconds.values_mut().for_each(|v| *v = 0.0);
        }
        r
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Rows `(seed, method, quantity, value)` of the summary table.
    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for s in &self.seeds {
            let mut push = |method: &str, quantity: &str, value: f64| {
                rows.push(SummaryRow {
                    seed: s.seed,
                    method: method.into(),
                    quantity: quantity.into(),
                    value,
                })
            };
            if let Some(l) = s.l_closed_form {
                push("riccati", "L_value", l);
            }
            if let Some(b) = &s.bsre {
                push("bsre", "L_value", b.l0);
                push("bsre", "eval_loss", b.eval_loss);
                push("bsre", "clamp_rate", b.clamp.rate);
            }
            for e in &s.mc {
                let tag = format!("mc_{}", e.measure);
                push(&tag, "price", e.price);
                push(&tag, "std_err", e.std_err);
            }
            for p in &s.pde {
                push(&format!("pde_{}", p.mode.name()), "price", p.price);
            }
            for (name, d) in [("mvh", &s.mvh), ("lrm", &s.lrm)] {
                if let Some(d) = d {
                    push(name, "price", d.price);
                    push(name, "eval_loss", d.eval_loss);
                    push(name, "hedging_error", d.hedging_error);
                }
            }
            for e in &s.errors {
                push(&e.label, "rel_err_pct", e.rel_err_pct);
            }
            for m in &s.mse {
                push(&format!("mse_{}", m.label), "mean_price", m.mean_price);
                push(&format!("mse_{}", m.label), "mean_cash", m.mean_cash);
                push(&format!("mse_{}", m.label), "mean_shares", m.mean_shares);
            }
            for (k, v) in &s.seconds {
                push("time", k, *v);
            }
        }
        rows
    }

    /// Fixed-layout table; numbers use the shortest round-trip notation so
    /// [`parse_summary`] recovers them exactly.
    pub fn summary_table(&self) -> String {
        let rows = self.summary_rows();
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.config.name);
        let _ = writeln!(out, "{:<6} | {:<24} | {:<16} | value", "seed", "method", "quantity");
        let _ = writeln!(out, "{}", "-".repeat(64));
        for r in rows {
            let _ = writeln!(
                out,
                "{:<6} | {:<24} | {:<16} | {:?}",
                r.seed, r.method, r.quantity, r.value
            );
        }
        if let Some(f) = &self.failure {
            let _ = writeln!(out, "# failed in stage {}: {}", f.stage, f.message);
        }
        out
    }
}

impl PdeMode {
    pub fn name(self) -> &'static str {
        match self {
            PdeMode::Mvh => "mvh",
            PdeMode::Lrm => "lrm",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub seed: u64,
    pub method: String,
    pub quantity: String,
    pub value: f64,
}

pub fn parse_summary(text: &str) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with('-') || line.starts_with("seed") || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('|').map(str::trim).collect();
        let bad = || HedgeError::InvalidParams(format!("malformed summary line {line:?}"));
        if cols.len() != 4 {
            return Err(bad());
        }
        rows.push(SummaryRow {
            seed: cols[0].parse().map_err(|_| bad())?,
            method: cols[1].to_string(),
            quantity: cols[2].to_string(),
            value: cols[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Mean of the discounted claim over a small ℙ batch; a starting guess for
/// the price, independent of the pricing measures.
pub fn pilot_guess(params: &HestonParams, claim: Claim, cfg: &ExperimentConfig, seed: u64) -> Result<f64> {
    let paths = simulate(
        params,
        cfg.solver.n_steps,
        cfg.pilot_paths.max(2),
        mix_seed(seed, 0x9170),
        Measure::P,
    )?;
    let n = paths.batch_size;
    Ok((0..n).map(|b| claim.discounted(&paths, params, b)).sum::<f64>() / n as f64)
}

/// ℙ paths on which deep and benchmark strategies are compared.
pub fn hedge_paths(cfg: &ExperimentConfig, seed: u64) -> Result<PathBatch> {
    simulate_range(
        &cfg.params,
        cfg.solver.n_steps,
        mix_seed(seed, 0x4ED6),
        Measure::P,
        0,
        cfg.hedge_paths.max(1),
        false,
    )
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: Option<&'a Path>,
    report: RunReport,
}

impl Runner<'_> {
    fn file(&self, name: &str) -> Result<Option<BufWriter<File>>> {
        match self.out {
            Some(dir) => Ok(Some(BufWriter::new(File::create(dir.join(name))?))),
            None => Ok(None),
        }
    }

    fn persist(&self) -> Result<()> {
        if let Some(w) = self.file("report.json")? {
            serde_json::to_writer_pretty(w, &self.report)?;
        }
        Ok(())
    }

    fn seed_mut(&mut self) -> &mut SeedReport {
        self.report.seeds.last_mut().expect("seed entry")
    }

    fn write_loss(&self, series: &str, seed: u64, trace: &[f64]) -> Result<()> {
        if let Some(w) = self.file(&format!("loss_{series}_seed{seed}.csv"))? {
            crate::nn::write_loss_csv(w, trace)?;
        }
        Ok(())
    }

    fn write_hedge(&self, run: &HedgeRun, seed: u64) -> Result<()> {
        if let Some(w) = self.file(&format!("hedge_run_{}_seed{seed}.csv", run.label))? {
            run.write_csv(w, self.cfg.csv_paths)?;
        }
        Ok(())
    }

    fn record_training(&mut self, series: &str, seed: u64, run: &BsdeRunResult) -> Result<()> {
        self.write_loss(series, seed, &run.loss_trace)?;
        let s = self.seed_mut();
        s.loss_traces.insert(series.into(), run.loss_trace.clone());
        s.seconds.insert(format!("train_{series}"), run.seconds);
        Ok(())
    }

    fn push_error(&mut self, label: &str, reference: f64, value: f64) -> Result<()> {
        let r = mc::rel_err_pct(reference, value)?;
        self.seed_mut().errors.push(ErrorEntry {
            label: label.into(),
            reference,
            value,
            rel_err_pct: r.rel_err_pct,
        });
        Ok(())
    }

    fn mc_price(&self, seed: u64, measure: Measure) -> Option<f64> {
        let s = self.report.seeds.iter().find(|s| s.seed == seed)?;
        s.mc.iter().find(|e| e.measure == measure).map(|e| e.price)
    }

    fn pde_price(&self, seed: u64, mode: PdeMode) -> Option<f64> {
        let s = self.report.seeds.iter().find(|s| s.seed == seed)?;
        s.pde.iter().find(|p| p.mode == mode).map(|p| p.price)
    }

    fn stage_riccati(&mut self) -> Result<()> {
        let p = &self.cfg.params;
        let l = opportunity_process(p, 0.0, &p.y0_sq)?;
        self.seed_mut().l_closed_form = Some(l);
        if let Some(w) = self.file("riccati_curves.csv")? {
            RiccatiCurves::with_points(p, 1001)?.write_csv(w, 1)?;
        }
        Ok(())
    }

    fn stage_mc(&mut self, seed: u64, measure: Measure) -> Result<()> {
        let c = self.cfg;
        let start = Instant::now();
        let est = mc::price_claim(
            &c.params,
            c.claim,
            measure,
            c.mc.batch,
            c.mc.steps,
            seed,
            c.mc.antithetic,
        )?;
        let s = self.seed_mut();
        s.seconds.insert(format!("mc_{measure}"), start.elapsed().as_secs_f64());
        s.mc.push(est);
        Ok(())
    }

    fn stage_pde(&mut self, mode: PdeMode) -> Result<PdeGrid> {
        let c = self.cfg;
        let start = Instant::now();
        let grid = pde::solve_default(&c.params, mode, &c.pde)?;
        let price = grid.price_at(c.params.y0_sq[0], c.params.s0[0])?;
        if let Some(w) = self.file(&format!("pde_slices_{}.csv", mode.name()))? {
            grid.write_slices_csv(w, (c.pde.n_time / 4).max(1))?;
        }
        let s = self.seed_mut();
        s.seconds
            .insert(format!("pde_{}", mode.name()), start.elapsed().as_secs_f64());
        s.pde.push(PdeSummary {
            mode,
            price,
            config: c.pde,
        });
        Ok(grid)
    }

    fn pde_applicable(&self) -> bool {
        self.cfg.params.m == 1 && self.cfg.claim == Claim::BasketCall
    }

    fn benchmark(&mut self, seed: u64, mode: PdeMode, deep: &HedgeRun, paths: &PathBatch, v0: f64) -> Result<()> {
        let grid = self.stage_pde(mode)?;
        let bench = pde::benchmark_strategies(&grid, &self.cfg.params, paths, mode, Some(v0))?;
        self.write_hedge(&bench, seed)?;
        let mse = mse_over_time(deep, &bench)?;
        if let Some(w) = self.file(&format!("mse_{}_seed{seed}.csv", deep.label))? {
            mse.write_csv(w, paths.dt)?;
        }
        self.seed_mut().mse.push(MseSummary {
            label: deep.label.clone(),
            mean_price: mse.mean_price,
            mean_cash: mse.mean_cash,
            mean_shares: mse.mean_shares,
            per_step: mse,
        });
        Ok(())
    }

    fn stage_mvh(&mut self, seed: u64) -> Result<()> {
        let c = self.cfg;
        let p = &c.params;
        let bsre_cfg = c.solver.around(1.0);
        let bsre = mvh::solve_bsre(p, &bsre_cfg, seed)
            .map_err(|e| self.abort_trace("bsre", seed, e))
            .map_err(|e| e.in_stage("mvh/bsre"))?;
        self.record_training("bsre", seed, &bsre)?;
        let guess = pilot_guess(p, c.claim, c, seed)?;
        let ext_cfg = c.solver.around(guess);
        let ext = mvh::solve_extended_bsde_for(p, c.claim, &ext_cfg, &bsre, mix_seed(seed, 1))
            .map_err(|e| self.abort_trace("mvh", seed, e))
            .map_err(|e| e.in_stage("mvh/extended"))?;
        self.record_training("mvh", seed, &ext)?;
        let paths = hedge_paths(c, seed)?;
        let run = mvh::extract_strategy_for(p, c.claim, &bsre, &ext, &paths).map_err(|e| e.in_stage("mvh/strategy"))?;
        self.write_hedge(&run.hedge, seed)?;
        let eval_clamp = mvh::clamp_report(&bsre.eval_roll.y);
        {
            let s = self.seed_mut();
            s.bsre = Some(BsreSummary {
                l0: bsre.y0,
                final_loss: bsre.final_loss,
                eval_loss: bsre.eval_loss,
                clamp: eval_clamp,
            });
            s.mvh = Some(DeepSummary {
                price: ext.y0,
                final_loss: ext.final_loss,
                eval_loss: ext.eval_loss,
                iterations: ext.iterations,
                hedging_error: run.hedging_error,
                flagged_steps: run.hedge.flagged_count(),
            });
        }
        if let Some(l) = self.report.seeds.last().and_then(|s| s.l_closed_form) {
            self.push_error("bsre_vs_closed_form", l, bsre.y0)?;
        }
        if let Some(mc) = self.mc_price(seed, Measure::QMv) {
            self.push_error("mvh_vs_mc", mc, ext.y0)?;
        }
        if self.pde_applicable() {
            self.benchmark(seed, PdeMode::Mvh, &run.hedge, &paths, ext.y0)
                .map_err(|e| e.in_stage("mvh/pde"))?;
            let pde = self.pde_price(seed, PdeMode::Mvh).expect("pde price");
            self.push_error("mvh_vs_pde", pde, ext.y0)?;
            if let Some(mc) = self.mc_price(seed, Measure::QMv) {
                self.push_error("mc_mv_vs_pde", pde, mc)?;
            }
        }
        Ok(())
    }

    fn stage_lrm(&mut self, seed: u64) -> Result<()> {
        let c = self.cfg;
        let p = &c.params;
        let guess = pilot_guess(p, c.claim, c, seed)?;
        let cfg = c.solver.around(guess);
        let fs = lrm::solve_fs_bsde_for(p, c.claim, &cfg, mix_seed(seed, 2))
            .map_err(|e| self.abort_trace("lrm", seed, e))
            .map_err(|e| e.in_stage("lrm/fs"))?;
        self.record_training("lrm", seed, &fs)?;
        let paths = hedge_paths(c, seed)?;
        let run = lrm::extract_strategy_for(p, c.claim, &fs, &paths).map_err(|e| e.in_stage("lrm/strategy"))?;
        self.write_hedge(&run.hedge, seed)?;
        let hedging_error =
            (0..paths.batch_size).map(|b| run.fs_residual[b].powi(2)).sum::<f64>() / paths.batch_size as f64;
        self.seed_mut().lrm = Some(DeepSummary {
            price: fs.y0,
            final_loss: fs.final_loss,
            eval_loss: fs.eval_loss,
            iterations: fs.iterations,
            hedging_error,
            flagged_steps: run.hedge.flagged_count(),
        });
        if let Some(mc) = self.mc_price(seed, Measure::QLr) {
            self.push_error("lrm_vs_mc", mc, fs.y0)?;
        }
        if self.pde_applicable() {
            self.benchmark(seed, PdeMode::Lrm, &run.hedge, &paths, fs.y0)
                .map_err(|e| e.in_stage("lrm/pde"))?;
            let pde = self.pde_price(seed, PdeMode::Lrm).expect("pde price");
            self.push_error("lrm_vs_pde", pde, fs.y0)?;
            if let Some(mc) = self.mc_price(seed, Measure::QLr) {
                self.push_error("mc_lr_vs_pde", pde, mc)?;
            }
        }
        Ok(())
    }

    /// Keeps the truncated trace of an aborted training run.
    fn abort_trace(&self, series: &str, seed: u64, e: HedgeError) -> HedgeError {
        if let HedgeError::Diverged { loss_trace, .. } = &e {
            let _ = self.write_loss(series, seed, loss_trace);
        }
        e
    }

    fn run_seed(&mut self, seed: u64) -> Result<()> {
        let c = self.cfg;
        self.report.seeds.push(SeedReport {
            seed,
            ..SeedReport::default()
        });
        let deep = c.wants(Method::Mvh) || c.wants(Method::Lrm);
        let mvh_ok = validate(&c.params).mvh_ok();
        if c.wants(Method::Riccati) || (c.wants(Method::Mvh) && mvh_ok) {
            self.stage_riccati().map_err(|e| e.in_stage("riccati"))?;
        }
        if c.wants(Method::Mc) || deep {
            if (c.wants(Method::Mc) && mvh_ok) || c.wants(Method::Mvh) {
                self.stage_mc(seed, Measure::QMv).map_err(|e| e.in_stage("mc/Q_mv"))?;
            }
            if c.wants(Method::Mc) || c.wants(Method::Lrm) {
                self.stage_mc(seed, Measure::QLr).map_err(|e| e.in_stage("mc/Q_lr"))?;
            }
        }
        if c.wants(Method::Pde) && !c.wants(Method::Mvh) && !c.wants(Method::Lrm) {
            if c.params.m != 1 {
                return Err(HedgeError::Unsupported("the PDE benchmark needs m = 1".into()).in_stage("pde"));
            }
            for mode in [PdeMode::Mvh, PdeMode::Lrm] {
                self.stage_pde(mode)
                    .map_err(|e| e.in_stage(format!("pde/{}", mode.name())))?;
            }
        }
        if c.wants(Method::Mvh) {
            self.stage_mvh(seed)?;
        }
        if c.wants(Method::Lrm) {
            self.stage_lrm(seed)?;
        }
        Ok(())
    }
}

/// Runs every requested method for every seed, persisting `report.json`
/// and the CSV artifacts into `cfg.out_dir` when set.
///
/// A failing stage stops the run; the partial report is still written and
/// the error carries the stage name.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    if cfg.methods.is_empty() {
        return Err(HedgeError::InvalidParams("no method requested".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(HedgeError::InvalidParams("no seed given".into()));
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut runner = Runner {
        cfg,
        out: cfg.out_dir.as_deref(),
        report: RunReport {
            config: cfg.clone(),
            seeds: Vec::new(),
            failure: None,
        },
    };
    for &seed in &cfg.seeds {
        if let Err(e) = runner.run_seed(seed) {
            let stage = match &e {
                HedgeError::Stage { stage, .. } => stage.clone(),
                _ => "report".into(),
            };
            let message = match &e {
                HedgeError::Stage { source, .. } => source.to_string(),
                other => other.to_string(),
            };
            runner.report.failure = Some(StageFailure { stage, message });
            runner.persist()?;
            return Err(e);
        }
        runner.persist()?;
    }
    Ok(runner.report)
}
