//! Command-line driver: configuration selection, single-configuration
//! completion, aggregated completion, synthetic experiments, and dimension
//! padding. All randomness flows from `--seed`; reports embed the resolved
//! run configuration with the timestamp isolated in a metadata block.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use kronmc::aggregation::{
    aggregate_estimate_with_mode, cv_mse_curve, cv_partition, pad_dimensions,
    select_num_configurations, FallbackMode,
};
use kronmc::als::{complete, ConvergencePolicy};
use kronmc::config_select::rank_configurations;
use kronmc::io::{format_from_path, load_mask, load_matrix, save_mask, save_matrix};
use kronmc::matrix::{candidate_set, CandidateMode, Configuration, DenseMatrix, ObservationMask};
use kronmc::rng::{mix_seed, stream_rng};
use kronmc::sim::{
    run_aggregation_study, run_selection_sweep, ScenarioSpec, SimulationReport, SweepGrid,
};
use kronmc::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "kronmc", version, about = "Kronecker-product matrix completion")]
struct Cli {
    /// Master seed for all randomness.
    #[arg(long, global = true, env = "KRONMC_SEED", default_value_t = 0)]
    seed: u64,

    /// Bound the rayon thread pool.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank candidate configurations by the rearranged spectral criterion.
    SelectConfig {
        #[arg(long)]
        input: PathBuf,
        /// Mask file (dense 0/1 CSV or 1-based index list).
        #[arg(long, conflicts_with = "rate")]
        mask: Option<PathBuf>,
        /// Draw a Bernoulli observation mask at this rate instead.
        #[arg(long)]
        rate: Option<f64>,
        /// Candidate set: `s=INT` or `delta=FLOAT`.
        #[arg(long)]
        candidate: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete a matrix under one configuration.
    Complete {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Configuration as `pxq` (left Kronecker factor shape).
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Clamp output entries to [0, 1] (grayscale images).
        #[arg(long)]
        trim: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate completions over the top-ranked configurations.
    Aggregate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, conflicts_with = "rate")]
        mask: Option<PathBuf>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        candidate: String,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        /// Number of configurations to aggregate, or `auto` for CV choice.
        #[arg(long, default_value = "auto")]
        num_configs: String,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// `equal` or a file with one positive weight per line.
        #[arg(long, default_value = "equal")]
        weights: String,
        #[arg(long)]
        trim: bool,
        #[arg(long)]
        out: PathBuf,
        /// JSON diagnostics path (default: `<out>.report.json`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a named synthetic experiment and emit report files.
    Simulate {
        /// One of: l1, s1, l2, s2, sweep, missing-block.
        #[arg(long)]
        scenario: String,
        /// `desk` (small replicate counts) or `paper` (full design).
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-pad a matrix/mask pair to larger dimensions.
    Pad {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Target shape as `ROWSxCOLS`.
        #[arg(long)]
        to: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: PathBuf,
    },
}

fn parse_candidate(s: &str) -> Result<CandidateMode> {
    let err = || Error::InvalidArgument(format!("candidate {s:?}: expected s=INT or delta=FLOAT"));
    let (key, value) = s.split_once('=').ok_or_else(err)?;
    match key.trim() {
        "s" => Ok(CandidateMode::S(value.trim().parse().map_err(|_| err())?)),
        "delta" => Ok(CandidateMode::Delta(
            value.trim().parse().map_err(|_| err())?,
        )),
        _ => Err(err()),
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let err = || Error::InvalidArgument(format!("shape {s:?}: expected ROWSxCOLS"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(err)?;
    Ok((
        a.trim().parse().map_err(|_| err())?,
        b.trim().parse().map_err(|_| err())?,
    ))
}

fn bernoulli_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Result<ObservationMask> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "observing rate {rate} outside (0, 1]"
        )));
    }
    use rand::Rng;
    let mut rng = stream_rng(seed, &[0xc11, rows as u64, cols as u64]);
    let mut mask = ObservationMask::empty(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if rng.gen::<f64>() < rate {
                mask.insert(i, j);
            }
        }
    }
    Ok(mask)
}

fn resolve_mask(
    input: &DenseMatrix,
    mask: &Option<PathBuf>,
    rate: &Option<f64>,
    seed: u64,
) -> Result<ObservationMask> {
    match (mask, rate) {
        (Some(path), None) => load_mask(path, Some((input.rows(), input.cols()))),
        (None, Some(rate)) => bernoulli_mask(input.rows(), input.cols(), *rate, seed),
        _ => Err(Error::InvalidArgument(
            "exactly one of --mask and --rate is required".into(),
        )),
    }
}

fn load_weights(spec: &str, n: usize) -> Result<Vec<f64>> {
    if spec == "equal" {
        return Ok(vec![1.0; n]);
    }
    let text = std::fs::read_to_string(spec)?;
    let mut weights = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let w: f64 = line.parse().map_err(|_| Error::Parse {
            path: spec.to_string(),
            position: lineno + 1,
            msg: format!("invalid weight {line:?}"),
        })?;
        weights.push(w);
    }
    Ok(weights)
}

/// Fully resolved invocation, embedded in every report for provenance.
#[derive(Debug, Serialize)]
struct RunConfig {
    command: String,
    args: Vec<String>,
    seed: u64,
    threads: Option<usize>,
}

fn metadata_block() -> serde_json::Value {
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    json!({ "timestamp_unix": ts })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serializable") + "\n")?;
    Ok(())
}

fn config_json(c: &Configuration) -> serde_json::Value {
    json!({ "p": c.p(), "q": c.q(), "p_star": c.p_star(), "q_star": c.q_star() })
}

fn run(cli: Cli, run_config: RunConfig) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::SelectConfig {
            input,
            mask,
            rate,
            candidate,
            out,
        } => {
            let y = load_matrix(&input, format_from_path(&input))?;
            let mask = resolve_mask(&y, &mask, &rate, seed)?;
            let mode = parse_candidate(&candidate)?;
            let set = candidate_set(y.rows(), y.cols(), mode)?;
            let ranking = rank_configurations(&y, &mask, &set)?;
            let selected = ranking.best().ok_or(Error::EmptyCandidateSet)?;
            let report = json!({
                "metadata": metadata_block(),
                "run_config": serde_json::to_value(&run_config).expect("serializable"),
                "selected": config_json(&selected.config),
                "ranking": ranking.scores().iter().map(|s| json!({
                    "config": config_json(&s.config),
                    "score": s.score,
                })).collect::<Vec<_>>(),
            });
            write_json(&out, &report)?;
        }
        Command::Complete {
            input,
            mask,
            config,
            rank,
            max_iter,
            tol,
            trim,
            out,
        } => {
            let y = load_matrix(&input, format_from_path(&input))?;
            let mask = load_mask(&mask, Some((y.rows(), y.cols())))?;
            let (p, q) = parse_shape(&config)?;
            let c = Configuration::new(p, q, y.rows(), y.cols())?;
            let policy = ConvergencePolicy {
                max_iterations: max_iter,
                relative_tolerance: tol,
                ..ConvergencePolicy::default()
            };
            let (_, mut xhat) = complete(&y, &mask, &c, rank, &policy)?;
            if trim {
                xhat = DenseMatrix::from_fn(xhat.rows(), xhat.cols(), |i, j| {
                    xhat.get(i, j).clamp(0.0, 1.0)
                });
            }
            save_matrix(&xhat, &out, format_from_path(&out))?;
        }
        Command::Aggregate {
            input,
            mask,
            rate,
            candidate,
            rank,
            num_configs,
            folds,
            weights,
            trim,
            out,
            report,
        } => {
            let y = load_matrix(&input, format_from_path(&input))?;
            let mask = resolve_mask(&y, &mask, &rate, seed)?;
            let mode = parse_candidate(&candidate)?;
            let set = candidate_set(y.rows(), y.cols(), mode)?;
            let ranking = rank_configurations(&y, &mask, &set)?;
            let weights = load_weights(&weights, ranking.len())?;
            let policy = ConvergencePolicy::default();
            let mut cv_curve = None;
            let d = if num_configs == "auto" {
                let part = cv_partition(&mask, folds, mix_seed(seed, &[0xcf]))?;
                let curve = cv_mse_curve(
                    &y, &mask, &part, &ranking, ranking.len(), &weights, rank, &policy,
                )?;
                let d = select_num_configurations(
                    &y, &mask, &part, &ranking, ranking.len(), &weights, rank, &policy,
                )?;
                cv_curve = Some(curve);
                d
            } else {
                num_configs.parse().map_err(|_| {
                    Error::InvalidArgument(format!("num-configs {num_configs:?}: expected INT or auto"))
                })?
            };
            let est = aggregate_estimate_with_mode(
                &y,
                &mask,
                &ranking,
                d,
                &weights,
                rank,
                &policy,
                FallbackMode::ExtendToFeasible,
            )?;
            let mut combined = est.combined.clone();
            if trim {
                combined = DenseMatrix::from_fn(combined.rows(), combined.cols(), |i, j| {
                    combined.get(i, j).clamp(0.0, 1.0)
                });
            }
            save_matrix(&combined, &out, format_from_path(&out))?;
            let report_path = report.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".report.json");
                PathBuf::from(p)
            });
            let diagnostics = json!({
                "metadata": metadata_block(),
                "run_config": serde_json::to_value(&run_config).expect("serializable"),
                "num_configs": d,
                "scores": est.ranking.scores().iter().map(|s| json!({
                    "config": config_json(&s.config),
                    "score": s.score,
                })).collect::<Vec<_>>(),
                "fallback_entry_count": est.fallback_entries.len(),
                "infeasible_entry_count": est.infeasible_entries.len(),
                "dropped_configs": est.dropped,
                "cv_mse_curve": cv_curve,
            });
            write_json(&report_path, &diagnostics)?;
        }
        Command::Simulate {
            scenario,
            scale,
            out,
        } => {
            std::fs::create_dir_all(&out)?;
            let replicates = match scale.as_str() {
                "desk" => 20,
                "paper" => 100,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "scale {other:?}: expected desk or paper"
                    )))
                }
            };
            let report = match scenario.as_str() {
                "sweep" => {
                    let paper = scale == "paper";
                    let snr_max = if paper { 20 } else { 10 };
                    let grid = SweepGrid {
                        m0: 4,
                        n0: 4,
                        big_m: 9,
                        big_n: 9,
                        snrs: (1..=snr_max).map(|k| k as f64 * 0.1).collect(),
                        taus: if paper { vec![0.1, 0.2] } else { vec![0.2] },
                        gaps: if paper {
                            vec![0.3, 0.4, 0.5]
                        } else {
                            vec![0.5]
                        },
                        modes: if paper {
                            vec![CandidateMode::S(5), CandidateMode::S(6), CandidateMode::S(7)]
                        } else {
                            vec![CandidateMode::S(7)]
                        },
                        replicates,
                        seed,
                        early_stop_gamma: false,
                    };
                    let sweep = run_selection_sweep(&grid)?;
                    let mut freq_csv = String::from("snr,tau,gap,candidate,frequency\n");
                    for c in &sweep.cells {
                        freq_csv.push_str(&format!(
                            "{},{},{},{:?},{}\n",
                            c.snr, c.tau, c.gap, c.mode, c.frequency
                        ));
                    }
                    std::fs::write(out.join("frequencies.csv"), freq_csv)?;
                    let mut gamma_csv = String::from("tau,gap,candidate,gamma_star\n");
                    for g in &sweep.gamma_star {
                        gamma_csv.push_str(&format!(
                            "{},{},{:?},{}\n",
                            g.tau,
                            g.gap,
                            g.mode,
                            g.gamma.map_or("NA".into(), |v| v.to_string())
                        ));
                    }
                    std::fs::write(out.join("gamma_star.csv"), gamma_csv)?;
                    SimulationReport::Sweep(sweep)
                }
                name @ ("l1" | "s1" | "l2" | "s2" | "missing-block") => {
                    let spec = match name {
                        "l1" => ScenarioSpec::l1(seed, replicates),
                        "s1" | "missing-block" => ScenarioSpec::s1(seed, replicates),
                        "l2" => ScenarioSpec::l2(seed, replicates),
                        _ => ScenarioSpec::s2(seed, replicates),
                    };
                    let forced = (name == "missing-block").then_some((16usize, 32usize));
                    let study = run_aggregation_study(&spec, 10, forced, forced.is_none())?;
                    let mut mse_csv = String::from("d,mean_mse_rank1,mean_mse_rank2\n");
                    for d in 0..study.d_max {
                        mse_csv.push_str(&format!(
                            "{},{},{}\n",
                            d + 1,
                            study.mean_mse_by_rank[0][d],
                            study.mean_mse_by_rank[1][d]
                        ));
                    }
                    std::fs::write(out.join("mse.csv"), mse_csv)?;
                    if let Some(medians) = &study.median_region_mse_by_rank {
                        let bench = study.median_benchmark_region_mse.unwrap_or(f64::NAN);
                        let mut csv =
                            String::from("d,median_region_mse_rank1,median_region_mse_rank2,median_benchmark_region_mse\n");
                        for d in 0..study.d_max {
                            csv.push_str(&format!(
                                "{},{},{},{}\n",
                                d + 1,
                                medians[0][d],
                                medians[1][d],
                                bench
                            ));
                        }
                        std::fs::write(out.join("region_mse.csv"), csv)?;
                    }
                    SimulationReport::Aggregation(study)
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "scenario {other:?}: expected l1, s1, l2, s2, sweep, or missing-block"
                    )))
                }
            };
            let envelope = json!({
                "metadata": metadata_block(),
                "run_config": serde_json::to_value(&run_config).expect("serializable"),
                "report": serde_json::to_value(&report).expect("serializable"),
            });
            write_json(&out.join("report.json"), &envelope)?;
        }
        Command::Pad {
            input,
            mask,
            to,
            out,
            mask_out,
        } => {
            let y = load_matrix(&input, format_from_path(&input))?;
            let mask = load_mask(&mask, Some((y.rows(), y.cols())))?;
            let (rows, cols) = parse_shape(&to)?;
            let (y2, m2) = pad_dimensions(&y, &mask, rows, cols)?;
            save_matrix(&y2, &out, format_from_path(&out))?;
            save_mask(&m2, &mask_out)?;
        }
    }
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::DimensionMismatch(_) => "DimensionMismatch",
        Error::InvalidBound(_) => "InvalidBound",
        Error::EmptyCandidateSet => "EmptyCandidateSet",
        Error::RankTooLarge { .. } => "RankTooLarge",
        Error::Irrecoverable { .. } => "Irrecoverable",
        Error::UnderdeterminedRow { .. } => "UnderdeterminedRow",
        Error::Diverged { .. } => "Diverged",
        Error::EmptyMask => "EmptyMask",
        Error::ShrinkNotAllowed(..) => "ShrinkNotAllowed",
        Error::InvalidGap(_) => "InvalidGap",
        Error::ConfigOutOfRange(..) => "ConfigOutOfRange",
        Error::FoldFailed { .. } => "FoldFailed",
        Error::Parse { .. } => "Parse",
        Error::DuplicateIndex(..) => "DuplicateIndex",
        Error::OutOfBounds(..) => "OutOfBounds",
        Error::UnsupportedMaxval(_) => "UnsupportedMaxval",
        Error::InvalidArgument(_) => "InvalidArgument",
        Error::Io(_) => "Io",
    }
}

fn main() {
    let cli = Cli::parse();
    let run_config = RunConfig {
        command: std::env::args().nth(1).unwrap_or_default(),
        args: std::env::args().skip(2).collect(),
        seed: cli.seed,
        threads: cli.threads,
    };
    if let Err(e) = run(cli, run_config) {
        let payload = json!({ "error": { "kind": error_kind(&e), "message": e.to_string() } });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
