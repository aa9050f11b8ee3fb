//! Experiment CLI: generate bounded instances, build and persist indexes,
//! query them, evaluate recall, and inspect the embedding and hash family.
//!
//! Exit codes: 0 success, 1 validation error (bad flags or files),
//! 2 internal assertion failure (a violated hard guarantee).

// Flag validation spells `!(x > lo)` on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use lpann::embed::{center_scan, verify_average_embedding, CenterPolicy};
use lpann::eval::{evaluate, plant_instance, PlantedInstance};
use lpann::forest::{build_forest, derive_params, load_forest, save_forest};
use lpann::io::{read_dataset, read_truth, write_dataset, write_truth};
use lpann::lsh::{collision_frequency_mc, collision_probability};
use lpann::{AvgEmbedding, Dataset, Forest};

#[derive(Parser)]
#[command(name = "lpann", version, about = "ANN search for l_p spaces: planted instances, index builds, recall evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted bounded instance (dataset, queries, truth).
    Gen {
        /// Number of dataset points.
        #[arg(long)]
        n: usize,
        /// Dimension.
        #[arg(long)]
        d: usize,
        /// l_p exponent (>= 2).
        #[arg(long)]
        p: f64,
        /// Query-budget knob in (0, 1].
        #[arg(long)]
        eps: f64,
        /// Master seed; all randomness derives from it.
        #[arg(long)]
        seed: u64,
        /// Number of planted queries.
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long)]
        out_data: PathBuf,
        #[arg(long)]
        out_queries: PathBuf,
        #[arg(long)]
        out_truth: PathBuf,
    },
    /// Build an index over a dataset file and persist it.
    Build {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_index: PathBuf,
    },
    /// Query a persisted index; writes one CSV row per query.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a persisted index against planted truth; writes JSON.
    Eval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check both average-embedding properties on a dataset.
    VerifyEmbed {
        #[arg(long)]
        data: PathBuf,
        /// Random probe pairs on top of all dataset pairs.
        #[arg(long)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Scan candidate centers and report the best non-contraction ratio.
    ConjectureScan {
        #[arg(long)]
        data: PathBuf,
        /// CSV of every evaluated candidate.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Analytic vs Monte-Carlo collision curve of the hash family.
    LshCurve {
        #[arg(long)]
        width: f64,
        #[arg(long)]
        smin: f64,
        #[arg(long)]
        smax: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum CliError {
    Validation(String),
    Internal(String),
}

impl CliError {
    fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }
}

macro_rules! from_validation {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::validation(e)
            }
        })*
    };
}

from_validation!(
    lpann::io::FormatError,
    lpann::metric::MetricError,
    lpann::embed::EmbedError,
    lpann::forest::ForestError,
    lpann::forest::PersistError,
    lpann::eval::EvalError,
    std::io::Error
);

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(format!("report serialization failed: {e}"))
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal assertion failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Gen {
            n,
            d,
            p,
            eps,
            seed,
            queries,
            out_data,
            out_queries,
            out_truth,
        } => {
            if queries == 0 {
                return Err(CliError::Validation(
                    "--queries must be >= 1 (the query file cannot be empty)".into(),
                ));
            }
            let inst = plant_instance(n, d, p, eps, queries, seed)?;
            write_dataset(&inst.dataset, &out_data)?;
            let qs = Dataset::new(inst.queries.clone(), p)?;
            write_dataset(&qs, &out_queries)?;
            write_truth(&inst.truth, &out_truth)?;
            println!(
                "wrote {} points (d={}, p={}), {} queries, truth -> {}",
                n,
                d,
                p,
                queries,
                out_truth.display()
            );
            Ok(())
        }
        Command::Build {
            data,
            eps,
            seed,
            out_index,
        } => {
            let ds: Dataset = read_dataset(&data)?;
            let params = derive_params(ds.p_exp(), eps, ds.len(), seed)?;
            let forest = build_forest(ds, params)?;
            let out = File::create(&out_index)?;
            save_forest(&forest, BufWriter::new(out))?;
            println!(
                "built {} trees over {} points in {:.1} ms -> {}",
                forest.params().n_trees,
                forest.dataset().len(),
                forest.build_ms(),
                out_index.display()
            );
            Ok(())
        }
        Command::Query {
            index,
            queries,
            out,
        } => {
            let forest: Forest = load_forest(BufReader::new(File::open(&index)?))?;
            let qs: Dataset = read_dataset(&queries)?;
            check_compatible(&forest, &qs)?;
            let mut w = csv::Writer::from_path(&out).map_err(CliError::validation)?;
            w.write_record(["query_id", "found", "result_id", "distance"])
                .map_err(CliError::validation)?;
            let mut hits = 0usize;
            for (i, q) in qs.iter().enumerate() {
                match forest.query(q)? {
                    Some(res) => {
                        hits += 1;
                        w.write_record([
                            i.to_string(),
                            "1".into(),
                            res.id.to_string(),
                            format!("{:.17e}", res.distance),
                        ])
                    }
                    None => w.write_record([i.to_string(), "0".into(), String::new(), String::new()]),
                }
                .map_err(CliError::validation)?;
            }
            w.flush()?;
            println!("{hits}/{} queries answered -> {}", qs.len(), out.display());
            Ok(())
        }
        Command::Eval {
            index,
            data,
            queries,
            truth,
            out,
        } => {
            let forest: Forest = load_forest(BufReader::new(File::open(&index)?))?;
            let ds: Dataset = read_dataset(&data)?;
            if &ds != forest.dataset() {
                return Err(CliError::Validation(format!(
                    "--data does not match the dataset inside the index \
                     (file: {} points dim {} p {}, index: {} points dim {} p {})",
                    ds.len(),
                    ds.dim(),
                    ds.p_exp(),
                    forest.dataset().len(),
                    forest.dataset().dim(),
                    forest.dataset().p_exp()
                )));
            }
            let qs: Dataset = read_dataset(&queries)?;
            check_compatible(&forest, &qs)?;
            let truth = read_truth(&truth, qs.len(), ds.len())?;
            let inst = PlantedInstance {
                dataset: ds,
                queries: qs.iter().map(|q| q.to_vec()).collect(),
                truth,
            };
            let report = evaluate(&forest, &inst)?;
            let json = serde_json::to_string_pretty(&report)?;
            let mut f = File::create(&out)?;
            f.write_all(json.as_bytes())?;
            f.write_all(b"\n")?;
            println!("{report}");
            if !report.all_within_c {
                return Err(CliError::Internal(
                    "a returned answer exceeded the c*r guarantee".into(),
                ));
            }
            Ok(())
        }
        Command::VerifyEmbed { data, pairs, seed } => {
            let ds: Dataset = read_dataset(&data)?;
            let scan = center_scan(&ds, &CenterPolicy::default(), seed)?;
            let emb = AvgEmbedding::new(ds.p_exp(), scan.best_z)?;
            let rep = verify_average_embedding(&ds, &emb, pairs, seed)?;
            println!("center             {}", scan.best_candidate);
            println!("lipschitz bound D  {}", emb.lip_const());
            println!("max lip ratio      {:.9}", rep.max_lip_ratio);
            println!("non-contraction C  {:.9}", rep.noncontraction_ratio_c);
            println!("pairs probed       {}", rep.pairs_probed);
            println!("passed lipschitz   {}", rep.passed_lipschitz);
            println!("passed non-contraction {}", rep.passed_noncontraction);
            Ok(())
        }
        Command::ConjectureScan { data, out, seed } => {
            let ds: Dataset = read_dataset(&data)?;
            let scan = center_scan(&ds, &CenterPolicy::default(), seed)?;
            let mut w = csv::Writer::from_path(&out).map_err(CliError::validation)?;
            w.write_record(["candidate", "kind", "c_emp", "is_best"])
                .map_err(CliError::validation)?;
            for (i, (kind, c)) in scan.evaluated.iter().enumerate() {
                let is_best = *c == scan.best_c && *kind == scan.best_candidate;
                w.write_record([
                    i.to_string(),
                    kind.to_string(),
                    format!("{c:.12e}"),
                    (is_best as u8).to_string(),
                ])
                .map_err(CliError::validation)?;
            }
            w.flush()?;
            println!(
                "best center {} with C = {:.6} over {} candidates -> {}",
                scan.best_candidate,
                scan.best_c,
                scan.evaluated.len(),
                out.display()
            );
            Ok(())
        }
        Command::LshCurve {
            width,
            smin,
            smax,
            steps,
            trials,
            out,
            seed,
        } => {
            if !(width > 0.0) {
                return Err(CliError::Validation("--width must be > 0".into()));
            }
            if steps < 2 || !(smin >= 0.0) || !(smax > smin) || trials == 0 {
                return Err(CliError::Validation(
                    "need --steps >= 2, 0 <= --smin < --smax, --trials >= 1".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = csv::Writer::from_path(&out).map_err(CliError::validation)?;
            w.write_record(["W", "s", "p_analytic", "p_montecarlo", "n_trials"])
                .map_err(CliError::validation)?;
            for i in 0..steps {
                let s = smin + (smax - smin) * i as f64 / (steps - 1) as f64;
                let analytic = collision_probability(width, s);
                let mc = collision_frequency_mc(width, s, trials, &mut rng);
                w.write_record([
                    format!("{width}"),
                    format!("{s}"),
                    format!("{analytic:.12}"),
                    format!("{mc:.12}"),
                    trials.to_string(),
                ])
                .map_err(CliError::validation)?;
            }
            w.flush()?;
            println!("wrote {} curve points -> {}", steps, out.display());
            Ok(())
        }
    }
}

fn check_compatible(forest: &Forest, queries: &Dataset) -> Result<(), CliError> {
    let ds = forest.dataset();
    if queries.dim() != ds.dim() {
        return Err(CliError::Validation(format!(
            "dimension mismatch: queries have dim {}, index has dim {}",
            queries.dim(),
            ds.dim()
        )));
    }
    if queries.p_exp() != ds.p_exp() {
        return Err(CliError::Validation(format!(
            "exponent mismatch: queries have p = {}, index has p = {}",
            queries.p_exp(),
            ds.p_exp()
        )));
    }
    Ok(())
}
