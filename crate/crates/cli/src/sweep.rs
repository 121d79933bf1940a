use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use gridtopo::grid::GridGraph;
use gridtopo::learner::{evaluate, test_budget, StatCache};
use log::{info, warn};
use rayon::prelude::*;

use crate::commands::{cmd_simulate, run_learn, structural_partial, LearnSettings, Method};
use crate::config::ExperimentConfig;
use crate::{load_grid, write_file, CliError};

/// One `(m, tolerance, seed)` cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub m: usize,
    pub tolerance: f64,
    pub method: Method,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub errors: usize,
    pub relative_error: f64,
    pub wall_ms: u128,
    /// Not part of the CSV.
    pub tests_run: usize,
    /// Set when leaf attachment failed and the partial result was scored.
    pub structural_failure: bool,
}

/// Mean counts over the seeds of one `(m, tolerance)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub m: usize,
    pub tolerance: f64,
    pub method: Method,
    pub runs: usize,
    pub mean_fp: f64,
    pub mean_fn: f64,
    pub mean_errors: f64,
    pub mean_relative_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    /// Sorted by tolerance, then `m`, then seed.
    pub rows: Vec<SweepRow>,
    /// Largest test count any run may use on this grid.
    pub budget: usize,
}

#[derive(Debug)]
pub struct SweepFailure {
    pub partial: SweepResult,
    pub error: CliError,
}

pub const HEADER: &str = "seed,m,tolerance,method,fp,fn,errors,relative_error,wall_ms";

impl SweepResult {
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut out: Vec<Aggregate> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(a) if a.m == r.m && a.tolerance == r.tolerance => {
                    a.runs += 1;
                    a.mean_fp += r.false_positives as f64;
                    a.mean_fn += r.false_negatives as f64;
                    a.mean_errors += r.errors as f64;
                    a.mean_relative_error += r.relative_error;
                }
                _ => out.push(Aggregate {
                    m: r.m,
                    tolerance: r.tolerance,
                    method: r.method,
                    runs: 1,
                    mean_fp: r.false_positives as f64,
                    mean_fn: r.false_negatives as f64,
                    mean_errors: r.errors as f64,
                    mean_relative_error: r.relative_error,
                }),
            }
        }
        for a in &mut out {
            let n = a.runs as f64;
            a.mean_fp /= n;
            a.mean_fn /= n;
            a.mean_errors /= n;
            a.mean_relative_error /= n;
        }
        out
    }

    pub fn aggregate(&self, m: usize, tolerance: f64) -> Option<Aggregate> {
        self.aggregates().into_iter().find(|a| a.m == m && a.tolerance == tolerance)
    }

    /// Rows in CSV form followed by a `#`-prefixed aggregate block.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:e},{},{},{},{},{:.6},{}",
                r.seed,
                r.m,
                r.tolerance,
                r.method,
                r.false_positives,
                r.false_negatives,
                r.errors,
                r.relative_error,
                r.wall_ms
            );
        }
        out.push_str("# aggregate\n# m,tolerance,method,runs,mean_fp,mean_fn,mean_errors,mean_relative_error\n");
        for a in self.aggregates() {
            let _ = writeln!(
                out,
                "# {},{:e},{},{},{:.3},{:.3},{:.3},{:.6}",
                a.m, a.tolerance, a.method, a.runs, a.mean_fp, a.mean_fn, a.mean_errors, a.mean_relative_error
            );
        }
        out
    }
}

fn run_group(cfg: &ExperimentConfig, grid: &GridGraph, m: usize, seed: u64) -> Result<Vec<SweepRow>, CliError> {
    let start = Instant::now();
    let mm = match cfg.method {
        Method::Oracle => None,
        _ => Some(cmd_simulate(grid, cfg.model, &cfg.injection, m, seed)?),
    };
    if let (Some(dir), Some(mm)) = (&cfg.measurements_dir, &mm) {
        write_file(&dir.join(format!("m{m}_seed{seed}.csv")), &mm.to_csv())?;
    }
    let simulate_ms = start.elapsed().as_millis();
    let truth = grid.operational_tree()?;
    let cache = Arc::new(StatCache::default());
    let mut rows = Vec::with_capacity(cfg.tolerances.len());
    for &tol in &cfg.tolerances {
        let start = Instant::now();
        let settings = LearnSettings {
            method: cfg.method,
            kernel: cfg.kernel_params(tol).with_seed(cfg.kernel_seed ^ seed),
            outer: cfg.outer,
            alpha: tol,
            injection: cfg.injection.clone(),
            model: cfg.model,
            prune_to_tree: cfg.prune_to_tree,
            blind: false,
        };
        let (learned, structural_failure) = match run_learn(grid, mm.as_ref(), &settings, Some(cache.clone())) {
            Ok(r) => (r.learned, false),
            Err(e) => {
                let (partial, reason) = structural_partial(e)?;
                warn!("m={m} seed={seed} tolerance={tol:e}: {reason}; scoring the partial topology");
                (partial, true)
            }
        };
        let metrics = evaluate(&learned, &truth);
        rows.push(SweepRow {
            seed,
            m,
            tolerance: tol,
            method: cfg.method,
            false_positives: metrics.false_positives,
            false_negatives: metrics.false_negatives,
            errors: metrics.errors,
            relative_error: metrics.relative_error,
            wall_ms: simulate_ms + start.elapsed().as_millis(),
            tests_run: learned.tests_run,
            structural_failure,
        });
    }
    info!("m={m} seed={seed} done in {} ms", start.elapsed().as_millis());
    Ok(rows)
}

/// Simulates, learns and scores every `(m, tolerance, seed)` cell. Cells
/// sharing `(m, seed)` share one measurement matrix and one statistic cache.
/// On failure the rows completed so far are returned with the error.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, SweepFailure> {
    let fail = |error| SweepFailure { partial: SweepResult::default(), error };
    let grid = load_grid(&cfg.grid).map_err(fail)?;
    if let Some(dir) = &cfg.measurements_dir {
        std::fs::create_dir_all(dir).map_err(|source| fail(CliError::Io { path: dir.clone(), source }))?;
    }
    let groups: Vec<(usize, u64)> = cfg.samples.iter().flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s))).collect();
    let outcomes: Vec<Result<Vec<SweepRow>, CliError>> =
        groups.par_iter().map(|&(m, seed)| run_group(cfg, &grid, m, seed)).collect();
    let mut rows = Vec::new();
    let mut first_error = None;
    for o in outcomes {
        match o {
            Ok(r) => rows.extend(r),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    rows.sort_by(|a, b| a.tolerance.total_cmp(&b.tolerance).then(a.m.cmp(&b.m)).then(a.seed.cmp(&b.seed)));
    let result = SweepResult { rows, budget: test_budget(&grid.candidate_graph(), grid.n_nodes()) };
    match first_error {
        None => Ok(result),
        Some(error) => Err(SweepFailure { partial: result, error }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, m: usize, tolerance: f64, errors: usize) -> SweepRow {
        SweepRow {
            seed,
            m,
            tolerance,
            method: Method::Kci,
            false_positives: errors,
            false_negatives: 0,
            errors,
            relative_error: errors as f64 / 4.0,
            wall_ms: 7,
            tests_run: 0,
            structural_failure: false,
        }
    }

    #[test]
    fn csv_layout_and_aggregates() {
        let r =
            SweepResult { rows: vec![row(0, 200, 1e-10, 2), row(1, 200, 1e-10, 1), row(0, 500, 1e-10, 0)], budget: 0 };
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], HEADER);
        assert_eq!(lines[1], "0,200,1e-10,kci,2,0,2,0.500000,7");
        assert_eq!(lines[4], "# aggregate");
        assert_eq!(lines[5], "# m,tolerance,method,runs,mean_fp,mean_fn,mean_errors,mean_relative_error");
        assert_eq!(lines[6], "# 200,1e-10,kci,2,1.500,0.000,1.500,0.375000");
        assert_eq!(lines.len(), 1 + 3 + 2 + 2);
        let a = r.aggregate(500, 1e-10).unwrap();
        assert_eq!((a.runs, a.mean_errors), (1, 0.0));
    }
}
