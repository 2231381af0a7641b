//! Strategy paths shared by the deep pipelines and the PDE benchmarks.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::market::HestonParams;

/// Variances at or below this are treated as a degenerate volatility matrix.
pub const SINGULAR_VARIANCE: f64 = 1e-14;

/// Solves `σᵀu = r` for `σ = A diag(y)`, i.e. `u = A⁻ᵀ(r ./ y)`.
pub struct SigmaSolver {
    lu: Option<LU<f64, Dyn, Dyn>>,
    diag: Option<Vec<f64>>,
}

impl SigmaSolver {
    pub fn new(params: &HestonParams) -> Self {
        if params.is_diagonal() {
            SigmaSolver {
                lu: None,
                diag: Some((0..params.m).map(|i| params.a[i][i]).collect()),
            }
        } else {
            let at: DMatrix<f64> = params.a_matrix().transpose();
            SigmaSolver {
                lu: Some(at.lu()),
                diag: None,
            }
        }
    }

    /// `None` when some variance vanishes or `A` is singular.
    pub fn solve(&self, y_sq: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
        if y_sq.iter().any(|&v| v <= SINGULAR_VARIANCE) {
            return None;
        }
        let scaled: Vec<f64> = rhs.iter().zip(y_sq).map(|(r, v)| r / v.sqrt()).collect();
        let u = match (&self.diag, &self.lu) {
            (Some(d), _) => {
                if d.contains(&0.0) {
                    return None;
                }
                scaled.iter().zip(d).map(|(s, a)| s / a).collect()
            }
            (None, Some(lu)) => lu.solve(&DVector::from_vec(scaled))?.iter().copied().collect(),
            _ => unreachable!(),
        };
        let u: Vec<f64> = u;
        u.iter().all(|v| v.is_finite()).then_some(u)
    }
}

/// One hedging strategy evaluated on a path batch.
#[derive(Clone, Debug)]
pub struct HedgeRun {
    pub label: String,
    pub n_steps: usize,
    pub dt: f64,
    /// Price process `X`, `B × (N+1)`.
    pub price: Array2<f64>,
    /// Portfolio value `V`, `B × (N+1)`.
    pub wealth: Array2<f64>,
    /// Shares `ξ`, `B × N × m`.
    pub xi: Array3<f64>,
    /// Cash account `ψ`, `B × N`.
    pub psi: Array2<f64>,
    /// Cost process, local-risk strategies only.
    pub cost: Option<Array2<f64>>,
    /// Steps where the strategy was carried forward or the state clamped.
    pub flagged: Array2<bool>,
}

impl HedgeRun {
    pub fn batch_size(&self) -> usize {
        self.price.nrows()
    }

    pub fn m(&self) -> usize {
        self.xi.dim().2
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    /// Rows `path_id, step, price, wealth, xi_0.., psi[, cost]`, limited to
    /// the first `max_paths` paths.
    pub fn write_csv<W: Write>(&self, w: W, max_paths: usize) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let m = self.m();
        let mut header = vec!["path_id".to_string(), "step".into(), "price".into(), "wealth".into()];
        header.extend((0..m).map(|i| format!("xi_{i}")));
        header.push("psi".into());
        if self.cost.is_some() {
            header.push("cost".into());
        }
        out.write_record(&header)?;
        for b in 0..self.batch_size().min(max_paths) {
            for n in 0..=self.n_steps {
                let mut row = vec![
                    b.to_string(),
                    n.to_string(),
                    self.price[[b, n]].to_string(),
                    self.wealth[[b, n]].to_string(),
                ];
                for i in 0..m {
                    row.push(if n < self.n_steps {
                        self.xi[[b, n, i]].to_string()
                    } else {
                        String::new()
                    });
                }
                row.push(if n < self.n_steps {
                    self.psi[[b, n]].to_string()
                } else {
                    String::new()
                });
                if let Some(c) = &self.cost {
                    row.push(c[[b, n]].to_string());
                }
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, max_paths: usize) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), max_paths)
    }
}

/// Per-step mean squared differences between two strategies on the same paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseOverTime {
    pub price: Vec<f64>,
    pub cash: Vec<f64>,
    pub shares: Vec<f64>,
    pub mean_price: f64,
    pub mean_cash: f64,
    pub mean_shares: f64,
}

pub fn mse_over_time(deep: &HedgeRun, bench: &HedgeRun) -> Result<MseOverTime> {
    if deep.xi.dim() != bench.xi.dim() || deep.price.dim() != bench.price.dim() {
        return Err(HedgeError::Dimension {
            what: "hedge run shapes",
            expected: deep.xi.len(),
            got: bench.xi.len(),
        });
    }
    let (bsz, n_steps, m) = deep.xi.dim();
    let mut price = vec![0.0; n_steps];
    let mut cash = vec![0.0; n_steps];
    let mut shares = vec![0.0; n_steps];
    for n in 0..n_steps {
        let (mut p, mut c, mut s) = (0.0, 0.0, 0.0);
        for b in 0..bsz {
            p += (deep.price[[b, n]] - bench.price[[b, n]]).powi(2);
            c += (deep.psi[[b, n]] - bench.psi[[b, n]]).powi(2);
            for i in 0..m {
                s += (deep.xi[[b, n, i]] - bench.xi[[b, n, i]]).powi(2);
            }
        }
        price[n] = p / bsz as f64;
        cash[n] = c / bsz as f64;
        shares[n] = s / (bsz * m) as f64;
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(MseOverTime {
        mean_price: avg(&price),
        mean_cash: avg(&cash),
        mean_shares: avg(&shares),
        price,
        cash,
        shares,
    })
}

impl MseOverTime {
    pub fn write_csv<W: Write>(&self, w: W, dt: f64) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "t", "mse_price", "mse_cash", "mse_shares"])?;
        for n in 0..self.price.len() {
            out.write_record([
                n.to_string(),
                (n as f64 * dt).to_string(),
                self.price[n].to_string(),
                self.cash[n].to_string(),
                self.shares[n].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn run(offset: f64) -> HedgeRun {
        let (b, n, m) = (4, 3, 2);
        let price = Array2::from_shape_fn((b, n + 1), |(i, j)| (i * 7 + j) as f64 + offset);
        HedgeRun {
            label: "x".into(),
            n_steps: n,
            dt: 1.0 / n as f64,
            wealth: price.clone(),
            price,
            xi: Array3::from_shape_fn((b, n, m), |(i, j, k)| (i + j + k) as f64 * 0.1 + offset),
            psi: Array2::from_elem((b, n), 2.0 + offset),
            cost: None,
            flagged: Array2::from_elem((b, n), false),
        }
    }

    #[test]
    fn identical_runs_have_zero_mse() {
        let r = run(0.0);
        let mse = mse_over_time(&r, &r).unwrap();
        assert!(mse.price.iter().chain(&mse.cash).chain(&mse.shares).all(|&v| v == 0.0));
        assert_eq!(mse.mean_price, 0.0);
    }

    #[test]
    fn constant_offset_gives_offset_squared() {
        let mse = mse_over_time(&run(0.5), &run(0.0)).unwrap();
        for v in mse.price.iter().chain(&mse.cash).chain(&mse.shares) {
            assert_relative_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut other = run(0.0);
        other.xi = Array3::zeros((4, 2, 2));
        assert!(mse_over_time(&run(0.0), &other).is_err());
    }

    #[test]
    fn sigma_solver_diagonal_and_general() {
        let mut p = HestonParams::table1(2);
        let s = SigmaSolver::new(&p);
        let u = s.solve(&[0.04, 0.25], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(u[0], 5.0, epsilon = 1e-12);
        assert_relative_eq!(u[1], 2.0, epsilon = 1e-12);
        assert!(s.solve(&[0.0, 0.25], &[1.0, 1.0]).is_none());

        p.a = vec![vec![1.0, 0.5], vec![0.2, 1.0]];
        let s = SigmaSolver::new(&p);
        let y = [0.04, 0.09];
        let rhs = [0.3, -0.7];
        let u = s.solve(&y, &rhs).unwrap();
        // check σᵀu = rhs with σ = A diag(√y)
        for j in 0..2 {
            let lhs: f64 = (0..2).map(|i| p.a[i][j] * y[j].sqrt() * u[i]).sum();
            assert_relative_eq!(lhs, rhs[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_shape() {
        let r = run(0.0);
        let mut buf = Vec::new();
        r.write_csv(&mut buf, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "path_id,step,price,wealth,xi_0,xi_1,psi");
        assert_eq!(lines.len(), 1 + 2 * 4);
    }
}
