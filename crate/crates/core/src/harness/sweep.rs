use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generator::{generate_instance, GeneratorConfig};
use crate::allocator::{regret_terms, run, RunRecord};
use crate::error::{Error, Result};
use crate::lp::solve_hindsight_opt;

/// JSON writes NaN as `null`; read it back as NaN.
fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// One `(T, seed)` cell. Numeric fields are NaN when `status` is not `ok`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub episodes: usize,
    pub seed: u64,
    #[serde(deserialize_with = "nan_from_null")]
    pub opt: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub opt_gap: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub reward: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub regret: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub term_i: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub term_ii: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub term_iii: f64,
    pub stop_episode: Option<usize>,
    pub stop_step: Option<usize>,
    #[serde(deserialize_with = "nan_from_null")]
    pub consumption: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub budget: f64,
    pub covered: bool,
    pub runtime_secs: f64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub episodes: usize,
    pub runs: usize,
    pub failures: usize,
    #[serde(deserialize_with = "nan_from_null")]
    pub mean_regret: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub stderr_regret: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub mean_regret_per_episode: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub mean_reward: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub mean_opt: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

impl SweepReport {
    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for row in &mut out.rows {
            row.runtime_secs = 0.0;
        }
        out
    }
}

/// The run record of one cell together with its report row.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub row: SweepRow,
    pub record: Option<RunRecord>,
}

/// Generates, runs and scores one cell.
pub fn run_cell(cfg: &GeneratorConfig, episodes: usize, seed: u64) -> CellOutcome {
    let start = Instant::now();
    let cell_cfg = GeneratorConfig { episodes, ..cfg.clone() };
    let scored = (|| -> Result<(SweepRow, RunRecord)> {
        let (kernel, fs) = generate_instance(&cell_cfg, seed)?;
        let record = run(&kernel, fs.iter().cloned(), &cell_cfg.run_config(seed))?;
        let opt = solve_hindsight_opt(&kernel, &fs, cell_cfg.rho)?;
        let terms = regret_terms(&record, &kernel, &fs, opt.value)?;
        let row = SweepRow {
            episodes,
            seed,
            opt: opt.value,
            opt_gap: opt.duality_gap,
            reward: record.total_reward,
            regret: opt.value - record.total_reward,
            term_i: terms.term_i,
            term_ii: terms.term_ii,
            term_iii: terms.term_iii,
            stop_episode: record.stop.map(|p| p.episode),
            stop_step: record.stop.map(|p| p.step),
            consumption: record.total_consumption,
            budget: record.initial_budget,
            covered: record.always_covered(),
            runtime_secs: 0.0,
            status: "ok".into(),
        };
        Ok((row, record))
    })();
    let runtime_secs = start.elapsed().as_secs_f64();
    match scored {
        Ok((row, record)) => CellOutcome { row: SweepRow { runtime_secs, ..row }, record: Some(record) },
        Err(e) => CellOutcome { row: failed_row(episodes, seed, &e, runtime_secs), record: None },
    }
}

fn failed_row(episodes: usize, seed: u64, err: &Error, runtime_secs: f64) -> SweepRow {
    SweepRow {
        episodes,
        seed,
        opt: f64::NAN,
        opt_gap: f64::NAN,
        reward: f64::NAN,
        regret: f64::NAN,
        term_i: f64::NAN,
        term_ii: f64::NAN,
        term_iii: f64::NAN,
        stop_episode: None,
        stop_step: None,
        consumption: f64::NAN,
        budget: f64::NAN,
        covered: false,
        runtime_secs,
        status: format!("error: {err}"),
    }
}

/// Every `(T, seed)` cell in T-major order, executed in parallel on the
/// current rayon pool. Failed cells are reported, not propagated.
pub fn sweep_outcomes(cfg: &GeneratorConfig, t_grid: &[usize], seeds: &[u64]) -> Result<Vec<CellOutcome>> {
    cfg.validate()?;
    if t_grid.contains(&0) {
        return Err(Error::InvalidArgument("episode counts in the grid must be positive".into()));
    }
    let cells: Vec<(usize, u64)> = t_grid.iter().flat_map(|&t| seeds.iter().map(move |&s| (t, s))).collect();
    Ok(cells.into_par_iter().map(|(t, seed)| run_cell(cfg, t, seed)).collect())
}

pub fn sweep(cfg: &GeneratorConfig, t_grid: &[usize], seeds: &[u64]) -> Result<SweepReport> {
    let rows: Vec<SweepRow> = sweep_outcomes(cfg, t_grid, seeds)?.into_iter().map(|c| c.row).collect();
    let aggregates = t_grid.iter().map(|&t| aggregate(t, &rows)).collect();
    Ok(SweepReport { rows, aggregates })
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn aggregate(episodes: usize, rows: &[SweepRow]) -> SweepAggregate {
    let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.episodes == episodes).collect();
    let ok: Vec<&SweepRow> = cell.iter().copied().filter(|r| r.status == "ok").collect();
    let pick = |f: fn(&SweepRow) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
    let (mean_regret, stderr_regret) = mean_stderr(&pick(|r| r.regret));
    SweepAggregate {
        episodes,
        runs: ok.len(),
        failures: cell.len() - ok.len(),
        mean_regret,
        stderr_regret,
        mean_regret_per_episode: mean_regret / episodes as f64,
        mean_reward: mean_stderr(&pick(|r| r.reward)).0,
        mean_opt: mean_stderr(&pick(|r| r.opt)).0,
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mean_stderr_small_cases() {
        assert!(mean_stderr(&[]).0.is_nan());
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [200.0, 800.0, 3200.0].iter().map(|&t: &f64| (t, 3.0 * t.sqrt())).collect();
        assert_abs_diff_eq!(loglog_slope(&pts), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_cell_matches_direct_run() {
        let cfg = GeneratorConfig { episodes: 12, ..Default::default() };
        let report = sweep(&cfg, &[12], &[7]).unwrap();
        let (kernel, fs) = generate_instance(&cfg, 7).unwrap();
        let direct = run(&kernel, fs, &cfg.run_config(7)).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].reward, direct.total_reward);
        assert_eq!(report.rows[0].consumption, direct.total_consumption);
        assert_eq!(report.rows[0].stop_episode, direct.stop.map(|p| p.episode));
    }

    #[test]
    fn failing_cell_is_reported() {
        let row = failed_row(5, 1, &Error::InvalidArgument("x".into()), 0.0);
        let agg = aggregate(5, &[row]);
        assert_eq!(agg.failures, 1);
        assert_eq!(agg.runs, 0);
    }
}
