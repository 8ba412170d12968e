//! Multi-method, multi-seed comparisons and the η sweep.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use surge_core::Mode;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::train::{run_dir, run_training, write_run, RunResult};

/// Final statistics of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: Mode,
    pub seed: u64,
    pub final_loss: f64,
    pub final_dist: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Standard deviation of the per-step loss changes.
    pub trajectory_std: f64,
}

impl RunSummary {
    pub fn of(run: &RunResult) -> Self {
        Self {
            method: run.method,
            seed: run.seed,
            final_loss: run.final_loss,
            final_dist: run.final_dist,
            test_accuracy: run.test_accuracy,
            trajectory_std: trajectory_std(&run.losses),
        }
    }
}

pub fn trajectory_std(losses: &[f64]) -> f64 {
    let mut deltas: Vec<f64> = losses.windows(2).map(|w| w[1] - w[0]).collect();
    if deltas.len() < 2 {
        return 0.0;
    }
    let n = deltas.len() as f64;
    let m = sorted_sum(&mut deltas) / n;
    let mut sq: Vec<f64> = deltas.iter().map(|d| (d - m).powi(2)).collect();
    (sorted_sum(&mut sq) / n).sqrt()
}

/// Sum in ascending order, so the result does not depend on input order.
fn sorted_sum(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some(0.5 * (v[n / 2 - 1] + v[n / 2])),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    (!v.is_empty()).then(|| sorted_sum(&mut v) / values.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Mode,
    pub runs: usize,
    pub median_final_loss: f64,
    pub median_final_dist: Option<f64>,
    pub mean_test_accuracy: Option<f64>,
    pub median_trajectory_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodSummary>,
    /// `wins[i][j]`: seeds on which method `i` ends with a strictly lower loss than method `j`.
    pub wins: Vec<Vec<usize>>,
}

/// Aggregate the runs of every `(method, seed)` pair; any missing pair is an error.
pub fn summarize(methods: &[Mode], seeds: &[u64], runs: &[RunSummary]) -> Result<Summary> {
    if seeds.is_empty() {
        return Err(HarnessError::config("no seeds to summarize"));
    }
    let find = |m: Mode, s: u64| runs.iter().find(|r| r.method == m && r.seed == s);
    let missing: Vec<String> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .filter(|&(m, s)| find(m, s).is_none())
        .map(|(m, s)| format!("{m} seed {s}"))
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingRuns(missing));
    }
    let per_method: Vec<Vec<&RunSummary>> = methods
        .iter()
        .map(|&m| seeds.iter().map(|&s| find(m, s).expect("checked")).collect())
        .collect();
    let summaries = methods
        .iter()
        .zip(&per_method)
        .map(|(&method, rs)| {
            let collect =
                |f: &dyn Fn(&RunSummary) -> Option<f64>| -> Vec<f64> { rs.iter().filter_map(|r| f(r)).collect() };
            MethodSummary {
                method,
                runs: rs.len(),
                median_final_loss: median(&collect(&|r| Some(r.final_loss))).expect("nonempty"),
                median_final_dist: median(&collect(&|r| r.final_dist)),
                mean_test_accuracy: mean(&collect(&|r| r.test_accuracy)),
                median_trajectory_std: median(&collect(&|r| Some(r.trajectory_std))).expect("nonempty"),
            }
        })
        .collect();
    let wins = per_method
        .iter()
        .map(|a| {
            per_method
                .iter()
                .map(|b| a.iter().zip(b).filter(|(x, y)| x.final_loss < y.final_loss).count())
                .collect()
        })
        .collect();
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    Ok(Summary {
        seeds,
        methods: summaries,
        wins,
    })
}

/// Run `jobs` on a pool of `workers` threads (0: all cores). Results keep job order.
pub fn run_jobs<T: Send>(workers: usize, jobs: Vec<Box<dyn FnOnce() -> T + Send + '_>>) -> Vec<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| jobs.into_par_iter().map(|job| job()).collect())
}

/// Train every configured `(method, seed)` pair.
pub fn run_all(cfg: &ExperimentConfig) -> Vec<Result<RunResult>> {
    let jobs = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .map(|(m, s)| Box::new(move || run_training(cfg, m, s)) as Box<dyn FnOnce() -> _ + Send>)
        .collect();
    run_jobs(cfg.workers, jobs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseContrast {
    pub ste: MethodSummary,
    pub noise: MethodSummary,
    pub surge: MethodSummary,
    /// Noise injection makes the loss trajectory more volatile than compensation.
    pub noise_more_volatile: bool,
    pub surge_beats_noise: bool,
}

pub fn noise_contrast(summary: &Summary) -> Result<NoiseContrast> {
    let get = |m: Mode| {
        summary
            .methods
            .iter()
            .find(|s| s.method == m)
            .cloned()
            .ok_or_else(|| HarnessError::config(format!("noise contrast needs method {m}")))
    };
    let (ste, noise, surge) = (get(Mode::Ste)?, get(Mode::SteNoise)?, get(Mode::SteSurge)?);
    Ok(NoiseContrast {
        noise_more_volatile: noise.median_trajectory_std > surge.median_trajectory_std,
        surge_beats_noise: surge.median_final_loss < noise.median_final_loss,
        ste,
        noise,
        surge,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepEntry {
    pub method: Mode,
    pub eta: Option<f64>,
    pub fixed_lambda: Option<f64>,
    pub completed: usize,
    /// Seeds whose run aborted, with the reason.
    pub failures: Vec<(u64, String)>,
    pub median_final_loss: Option<f64>,
    pub mean_test_accuracy: Option<f64>,
}

/// Every compensated method under each η and each constant λ; other methods once as references.
pub fn eta_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepEntry>> {
    let sweep = cfg.sweep.clone().unwrap_or_default();
    let mut variants: Vec<(Mode, Option<f64>, Option<f64>)> = Vec::new();
    for &m in &cfg.methods {
        if m.uses_surge() {
            variants.extend(sweep.etas.iter().map(|&e| (m, Some(e), None)));
            variants.extend(sweep.fixed_lambdas.iter().map(|&l| (m, None, Some(l))));
        } else {
            variants.push((m, None, None));
        }
    }
    let configs: Vec<ExperimentConfig> = variants
        .iter()
        .map(|&(_, eta, fixed)| {
            let mut c = cfg.clone();
            if let Some(e) = eta {
                c.eta = e;
            }
            c.fixed_lambda = fixed;
            c
        })
        .collect();
    let jobs: Vec<Box<dyn FnOnce() -> Result<RunSummary> + Send>> = variants
        .iter()
        .zip(&configs)
        .flat_map(|(&(m, _, _), c)| cfg.seeds.iter().map(move |&s| (m, s, c)))
        .map(|(m, s, c)| {
            Box::new(move || run_training(c, m, s).map(|r| RunSummary::of(&r))) as Box<dyn FnOnce() -> _ + Send>
        })
        .collect();
    let mut results = run_jobs(cfg.workers, jobs).into_iter();
    let mut out = Vec::new();
    for (method, eta, fixed_lambda) in variants {
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for &seed in &cfg.seeds {
            match results.next().expect("one result per job") {
                Ok(r) => ok.push(r),
                Err(e @ HarnessError::NonFinite { .. }) => failures.push((seed, e.to_string())),
                Err(e) => return Err(e),
            }
        }
        let losses: Vec<f64> = ok.iter().map(|r| r.final_loss).collect();
        let accs: Vec<f64> = ok.iter().filter_map(|r| r.test_accuracy).collect();
        out.push(SweepEntry {
            method,
            eta,
            fixed_lambda,
            completed: ok.len(),
            failures,
            median_final_loss: median(&losses),
            mean_test_accuracy: mean(&accs),
        });
    }
    Ok(out)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(HarnessError::io(path))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_summary_csv(path: &Path, summary: &Summary) -> Result<()> {
    let mut text =
        String::from("method,runs,median_final_loss,median_final_dist,mean_test_accuracy,median_trajectory_std\n");
    for m in &summary.methods {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.method,
            m.runs,
            m.median_final_loss,
            opt(m.median_final_dist),
            opt(m.mean_test_accuracy),
            m.median_trajectory_std
        ));
    }
    fs::write(path, text).map_err(HarnessError::io(path))
}

fn write_sweep_csv(path: &Path, entries: &[SweepEntry]) -> Result<()> {
    let mut text = String::from("method,eta,fixed_lambda,completed,failed,median_final_loss,mean_test_accuracy\n");
    for e in entries {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.method,
            opt(e.eta),
            opt(e.fixed_lambda),
            e.completed,
            e.failures.len(),
            opt(e.median_final_loss),
            opt(e.mean_test_accuracy)
        ));
    }
    fs::write(path, text).map_err(HarnessError::io(path))
}

#[derive(Debug)]
pub struct CompareOutput {
    pub summary: Summary,
    pub noise: Option<NoiseContrast>,
    pub sweep: Option<Vec<SweepEntry>>,
}

/// Run everything the configuration asks for and write the reports into
/// `output_dir`: one directory per run, `summary.{json,csv}`, and when
/// applicable `noise_contrast.json` and `sweep.{json,csv}`.
pub fn compare(cfg: &ExperimentConfig) -> Result<CompareOutput> {
    cfg.validate()?;
    if cfg.methods.len() < 2 {
        return Err(HarnessError::config("compare needs at least two methods"));
    }
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    let mut runs = Vec::new();
    for result in run_all(cfg) {
        let run = result?;
        write_run(&run_dir(out, run.method, run.seed), cfg, &run)?;
        runs.push(RunSummary::of(&run));
    }
    let summary = summarize(&cfg.methods, &cfg.seeds, &runs)?;
    write_json(&out.join("summary.json"), &summary)?;
    write_summary_csv(&out.join("summary.csv"), &summary)?;

    let has = |m| cfg.methods.contains(&m);
    let noise = if has(Mode::Ste) && has(Mode::SteNoise) && has(Mode::SteSurge) {
        let n = noise_contrast(&summary)?;
        write_json(&out.join("noise_contrast.json"), &n)?;
        Some(n)
    } else {
        None
    };
    let sweep = match cfg.sweep {
        Some(_) => {
            let s = eta_sweep(cfg)?;
            write_json(&out.join("sweep.json"), &s)?;
            write_sweep_csv(&out.join("sweep.csv"), &s)?;
            Some(s)
        }
        None => None,
    };
    Ok(CompareOutput { summary, noise, sweep })
}
