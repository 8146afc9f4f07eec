//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 I/O or
//! format error, 3 gradient check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use patchsem::harness::csv::write_records;
use patchsem::harness::gradcheck::GradcheckOptions;
use patchsem::harness::simmap::write_simmap;
use patchsem::harness::{
    export_simmap, gradcheck_with, read_fmap, run_ablation, train, write_fmap, AblationGrid, Family, Heads, RunConfig,
};
use patchsem::numerics::l2_normalize_rows;
use patchsem::{
    dce, gamma_at, gather_patches, hdce, head_forward, infonce, sample_patch_indices, src_loss, ContrastConfig, Error,
    FeatureMap, Matrix, PatchIndexSet, ProjectionHead, RngState, Side,
};

#[derive(Parser)]
#[command(name = "patchsem", version, about = "Patch-wise contrastive and relation-consistency losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Flip the sign of one family's analytic gradient (self-test).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Loss diagnostics for a pair of feature maps.
    Loss {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 256)]
        k: usize,
        /// Heads JSON; without it raw features are normalized directly.
        #[arg(long)]
        head: Option<PathBuf>,
        /// Curriculum step for gamma; defaults to the end of warmup.
        #[arg(long)]
        step: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the projection head on the synthetic task.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the trained heads as JSON.
        #[arg(long)]
        head_out: Option<PathBuf>,
        /// Also write the evaluation pair as `<prefix>_input.fmap` and `<prefix>_output.fmap`.
        #[arg(long)]
        pair_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Seven-configuration ablation over seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Also write one row per (configuration, seed).
        #[arg(long)]
        per_seed: Option<PathBuf>,
    },
    /// Similarity of one query location to every location.
    Simmap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        head: PathBuf,
        /// Query cell as `H,W`.
        #[arg(long, value_parser = parse_query)]
        query: (usize, usize),
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_query(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(',').ok_or_else(|| format!("expected H,W, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(h)?, p(w)?))
}

enum Failure {
    Usage(String),
    Format(String),
    Gradcheck,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_io_or_format() {
            Failure::Format(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn context(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| match Failure::from(e) {
        Failure::Format(m) => Failure::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::Format(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct LossReport {
    l_src: f64,
    l_dce: f64,
    l_hdce: f64,
    l_infonce: f64,
    gamma: f64,
    npc_mean: f64,
    npc_min: f64,
}

fn load_heads(path: &Path) -> Result<Heads, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Format(format!("{}: {e}", path.display())))?;
    match Heads::from_json(&text) {
        Ok(h) => Ok(h),
        Err(_) => {
            let input: ProjectionHead = serde_json::from_str(&text).map_err(Error::from).map_err(context(path))?;
            input.validate().map_err(context(path))?;
            Ok(Heads { input, output: None })
        }
    }
}

fn embed(fm: &FeatureMap, idx: &PatchIndexSet, head: Option<&ProjectionHead>, side: Side) -> Result<Matrix, Error> {
    let x = gather_patches(fm, idx)?;
    match head {
        Some(h) => Ok(head_forward(h, &x, side)?.0.vectors().clone()),
        None => l2_normalize_rows(&x),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gradcheck { seed, trials, corrupt } => {
            let corrupt = match corrupt {
                Some(name) => Some(Family::parse(&name).ok_or_else(|| Failure::Usage(format!("unknown family {name:?}")))?),
                None => None,
            };
            let opts = GradcheckOptions { trials, corrupt, ..Default::default() };
            let report = gradcheck_with(seed, &opts)?;
            print!("{report}");
            if !report.passed() {
                return Err(Failure::Gradcheck);
            }
        }
        Command::Loss { input, output, config, k, head, step, seed } => {
            let cfg = RunConfig::load(&config)?;
            let fm_in = read_fmap(&input).map_err(context(&input))?;
            let fm_out = read_fmap(&output).map_err(context(&output))?;
            if (fm_in.height(), fm_in.width()) != (fm_out.height(), fm_out.width()) {
                return Err(Failure::Usage("input and output maps differ in spatial size".into()));
            }
            let heads = head.as_deref().map(load_heads).transpose()?;
            let loss = cfg.effective_loss();
            let k = k.min(fm_in.locations());
            let idx = sample_patch_indices(&mut RngState::new(seed), fm_in.height(), fm_in.width(), k)?;
            let z = embed(&fm_in, &idx, heads.as_ref().map(|h| &h.input), Side::Input)?;
            let w = embed(&fm_out, &idx, heads.as_ref().map(|h| h.output_head()), Side::Output)?;
            let gamma = gamma_at(&loss.schedule, step.unwrap_or(loss.schedule.warmup_steps));
            let plain = ContrastConfig { gamma: 0.0, ..loss.contrast };
            let nce = infonce(&z, &w, &plain)?;
            let report = LossReport {
                l_src: src_loss(&z, &w, &loss.relation)?.loss,
                l_dce: dce(&z, &w, &plain)?.loss,
                l_hdce: hdce(&z, &w, &ContrastConfig { gamma, ..loss.contrast })?.loss,
                l_infonce: nce.loss,
                gamma,
                npc_mean: nce.npc.iter().sum::<f64>() / nce.npc.len() as f64,
                npc_min: nce.npc.iter().copied().fold(f64::INFINITY, f64::min),
            };
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
        }
        Command::Train { config, out, head_out, pair_out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = train(&cfg)?;
            write(&out, write_records(&outcome.metrics.records))?;
            if let Some(p) = head_out {
                write(&p, outcome.heads.to_json())?;
            }
            if let Some(prefix) = pair_out {
                let prefix = prefix.to_string_lossy().into_owned();
                for (tag, fm) in [("input", &outcome.pair.input), ("output", &outcome.pair.output)] {
                    let p = PathBuf::from(format!("{prefix}_{tag}.fmap"));
                    write_fmap(&p, fm).map_err(context(&p))?;
                }
            }
            println!("{}", serde_json::to_string(&outcome.metrics.last).expect("metrics serialize"));
        }
        Command::Ablate { config, seeds, out, workers, per_seed } => {
            let cfg = RunConfig::load(&config)?;
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
            let table = run_ablation(&cfg, &AblationGrid::default(), &seed_list, workers)?;
            write(&out, table.to_csv())?;
            if let Some(p) = per_seed {
                write(&p, table.per_seed_csv())?;
            }
        }
        Command::Simmap { input, output, head, query, out } => {
            let fm_in = read_fmap(&input).map_err(context(&input))?;
            let fm_out = read_fmap(&output).map_err(context(&output))?;
            let heads = load_heads(&head)?;
            let grids = export_simmap(&fm_in, &fm_out, &heads, query)?;
            for p in write_simmap(&out, &grids)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Format(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Gradcheck) => {
            eprintln!("gradient check failed");
            ExitCode::from(3)
        }
    }
}
