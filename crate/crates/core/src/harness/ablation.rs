//! The seven-row ablation: {InfoNCE, DCE} × {±SRC} × {±hard negatives},
//! minus plain-InfoNCE-with-hard-negatives-only.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::csv::fmt_f64;
use crate::harness::train::{train, FinalMetrics};
use crate::semantic::{ContrastKind, CurriculumSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationRow {
    pub name: &'static str,
    pub contrastive: ContrastKind,
    pub src: bool,
    pub hard_negatives: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationGrid {
    pub rows: [AblationRow; 7],
}

const fn row(name: &'static str, contrastive: ContrastKind, src: bool, hard_negatives: bool) -> AblationRow {
    AblationRow { name, contrastive, src, hard_negatives }
}

impl Default for AblationGrid {
    fn default() -> Self {
        use ContrastKind::{Dce, Infonce};
        AblationGrid {
            rows: [
                row("InfoNCE", Infonce, false, false),
                row("InfoNCE+SRC", Infonce, true, false),
                row("InfoNCE+SRC+HNeg", Infonce, true, true),
                row("DCE", Dce, false, false),
                row("DCE+HNeg", Dce, false, true),
                row("DCE+SRC", Dce, true, false),
                row("DCE+SRC+HNeg", Dce, true, true),
            ],
        }
    }
}

impl AblationGrid {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.name == name)
    }
}

impl AblationRow {
    /// The base configuration with this row's terms switched on or off. The
    /// SRC weight and the curriculum come from `base` when enabled.
    pub fn configure(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = *base;
        cfg.loss.contrastive = self.contrastive;
        cfg.loss.lambda_src = if self.src { base.loss.lambda_src } else { 0.0 };
        if !self.hard_negatives {
            cfg.loss.schedule = CurriculumSchedule::constant(0.0);
        }
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub names: Vec<&'static str>,
    pub seeds: Vec<u64>,
    /// `per_seed[config][seed_index]`.
    pub per_seed: Vec<Vec<FinalMetrics>>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

impl AblationTable {
    pub fn column(&self, config: usize, f: impl Fn(&FinalMetrics) -> f64) -> Vec<f64> {
        self.per_seed[config].iter().map(f).collect()
    }

    pub fn mean_top1(&self, config: usize) -> f64 {
        mean_std(&self.column(config, |m| m.top1_retrieval)).0
    }

    /// Summary CSV: one row per configuration with mean and sample standard
    /// deviation of each final metric.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "config,seeds,top1_mean,top1_std,src_div_mean,src_div_std,cluster_consistency_mean,cluster_consistency_std\n",
        );
        for (i, name) in self.names.iter().enumerate() {
            let mut fields = vec![name.to_string(), self.seeds.len().to_string()];
            for f in [
                (|m: &FinalMetrics| m.top1_retrieval) as fn(&FinalMetrics) -> f64,
                |m| m.src_div,
                |m| m.cluster_consistency,
            ] {
                let (mean, std) = mean_std(&self.column(i, f));
                fields.push(fmt_f64(mean));
                fields.push(fmt_f64(std));
            }
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }

    /// One row per (configuration, seed).
    pub fn per_seed_csv(&self) -> String {
        let mut s = String::from("config,seed,top1_retrieval,src_div,cluster_consistency\n");
        for (i, name) in self.names.iter().enumerate() {
            for (seed, m) in self.seeds.iter().zip(&self.per_seed[i]) {
                s.push_str(&format!(
                    "{name},{seed},{},{},{}\n",
                    fmt_f64(m.top1_retrieval),
                    fmt_f64(m.src_div),
                    fmt_f64(m.cluster_consistency)
                ));
            }
        }
        s
    }
}

/// One-sided sign test of "a beats b" over paired samples; ties are dropped.
/// Returns `(wins, losses, p)` with `p = P(Binomial(wins + losses, 1/2) >= wins)`.
pub fn sign_test(a: &[f64], b: &[f64]) -> (usize, usize, f64) {
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let n = wins + losses;
    let mut p = 0.0;
    for k in wins..=n {
        p += binomial(n, k) * 0.5f64.powi(n as i32);
    }
    (wins, losses, if n == 0 { 1.0 } else { p.min(1.0) })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Trains every configuration of `grid` once per seed. Runs are independent
/// and may execute on `workers` threads; the result order is always
/// (configuration, seed).
pub fn run_ablation(base: &RunConfig, grid: &AblationGrid, seeds: &[u64], workers: usize) -> Result<AblationTable> {
    if seeds.len() < 2 {
        return Err(Error::pre(format!("ablation needs at least 2 seeds, got {}", seeds.len())));
    }
    let jobs: Vec<(usize, usize)> =
        (0..grid.rows.len()).flat_map(|c| (0..seeds.len()).map(move |s| (c, s))).collect();
    let results: Mutex<Vec<Option<Result<FinalMetrics>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let run_job = |j: usize| {
        let (c, s) = jobs[j];
        let mut cfg = grid.rows[c].configure(base);
        cfg.seed = seeds[s];
        let r = train(&cfg).map(|o| o.metrics.last);
        results.lock().expect("no worker panicked")[j] = Some(r);
    };
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= jobs.len() {
                    break;
                }
                run_job(j);
            });
        }
    });
    let flat = results.into_inner().expect("no worker panicked");
    let mut per_seed = vec![Vec::with_capacity(seeds.len()); grid.rows.len()];
    for ((c, _), r) in jobs.iter().zip(flat) {
        per_seed[*c].push(r.expect("every job ran")?);
    }
    Ok(AblationTable { names: grid.rows.iter().map(|r| r.name).collect(), seeds: seeds.to_vec(), per_seed })
}
