//! Command-line front end. Every run is driven by a JSON experiment config;
//! outputs land in the config's output directory and embed the config hash
//! and seed. Reruns with the same config and seed are byte-identical.

use clap::{Parser, Subcommand, ValueEnum};
use hfpd_ot::config::{config_hash, ExperimentConfig};
use hfpd_ot::eot::{sinkhorn, wasserstein2_1d, SINKHORN_MAX_ITER, SINKHORN_TOL};
use hfpd_ot::fairness::{
    average_mass_threshold, compare_repair_schemes, diversity_index, frequency_map, markov_bound,
    sample_empirical_marginals, RepairConfig, RepairScheme,
};
use hfpd_ot::hyperprior::{marginal_density_grid_2x2, HyperpriorParams, QuadratureSpec};
use hfpd_ot::io::{encode_sample_block, matrix_csv, table_csv, SampleBlock};
use hfpd_ot::potentials::solve_potentials;
use hfpd_ot::sampler::hmc_sample;
use hfpd_ot::{HfpdError, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "hfpd-ot", about = "Hierarchical probabilistic design over transport plans")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rayon worker threads (default: one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Preferred format for the primary artifact.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Entropic transport plan between the nominal marginals.
    Sinkhorn,
    /// Solve for the dual potentials matching the knowledge radii.
    Potentials,
    /// Draw transport plans from the hyperprior at the configured potentials.
    Sample,
    /// Sample-based fairness statistics.
    Fairness {
        #[arg(long, value_enum)]
        experiment: FairnessExperiment,
        /// Conditioning column for the markov experiment.
        #[arg(long, default_value_t = 0)]
        y_index: usize,
        /// Cost budget for the markov experiment; defaults to the squared
        /// 1D Wasserstein distance between the nominal marginals.
        #[arg(long)]
        w2sq: Option<f64>,
    },
    /// Compare repair schemes over resampled empirical marginals.
    Repair {
        /// Number of marginal pairs to generate.
        #[arg(long, default_value_t = 50)]
        pairs: usize,
    },
    /// Quadrature marginal density of a 2x2 plan's first row.
    Grid2x2 {
        /// Grid points per axis.
        #[arg(long, default_value_t = 41)]
        grid_points: usize,
        /// Gauss-Legendre order for integrating the free coordinate.
        #[arg(long, default_value_t = 64)]
        quad_order: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FairnessExperiment {
    Frequency,
    Diversity,
    Markov,
}

fn main() {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        // A pool may already exist (tests, repeated invocations); that is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &HfpdError) -> i32 {
    match e {
        HfpdError::Convergence(..) => 3,
        HfpdError::SamplerHealth(..) => 4,
        HfpdError::Io(..) => 1,
        _ => 2,
    }
}

struct Run {
    cfg: ExperimentConfig,
    hash: String,
    dir: PathBuf,
}

impl Run {
    fn write(&self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(name);
        std::fs::write(&path, contents)?;
        println!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, payload: &T) -> Result<PathBuf> {
        let wrapped = serde_json::json!({
            "config_hash": self.hash,
            "seed": self.cfg.seed,
            "result": payload,
        });
        let mut text = serde_json::to_string_pretty(&wrapped)
            .map_err(|e| HfpdError::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

fn load_run(cli: &Cli) -> Result<Run> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| HfpdError::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.display().to_string();
    }
    let hash = config_hash(&cfg);
    let dir = Path::new(&cfg.output.directory).to_path_buf();
    Ok(Run { cfg, hash, dir })
}

fn configured_params(cfg: &ExperimentConfig) -> Result<HyperpriorParams> {
    let potentials = cfg.problem.potentials.ok_or_else(|| {
        HfpdError::Config("this command needs problem.potentials in the config".into())
    })?;
    HyperpriorParams::new(cfg.constraints()?, potentials)
}

fn run(cli: &Cli) -> Result<()> {
    let run = load_run(cli)?;
    let cfg = &run.cfg;
    match &cli.command {
        Command::Sinkhorn => {
            let mu0 = cfg.problem.mu0.build(cfg.problem.m)?;
            let nu0 = cfg.problem.nu0.build(cfg.problem.n)?;
            let ideal = cfg.ideal_design()?;
            let solution = sinkhorn(&mu0, &nu0, &ideal, SINKHORN_TOL, SINKHORN_MAX_ITER)?;
            let cost = cfg.cost_matrix()?;
            if cli.format == OutputFormat::Json {
                run.write_json(
                    "plan.json",
                    &serde_json::json!({
                        "m": cfg.problem.m,
                        "n": cfg.problem.n,
                        "entries": solution.plan.entries(),
                    }),
                )?;
            } else {
                let csv = matrix_csv(&run.hash, cfg.seed, cfg.problem.m, solution.plan.entries());
                run.write("plan.csv", csv.as_bytes())?;
            }
            run.write_json(
                "sinkhorn_report.json",
                &serde_json::json!({
                    "iterations": solution.iterations,
                    "marginal_error": solution.marginal_error,
                    "transport_cost": solution.cost(&cost),
                }),
            )?;
        }
        Command::Potentials => {
            let constraints = cfg.constraints()?;
            let (params, report) = solve_potentials(
                &constraints,
                cfg.solver.tol,
                &cfg.hmc_config(),
                cfg.solver.n_samp,
                cfg.solver.max_outer,
            )?;
            run.write_json(
                "potentials.json",
                &serde_json::json!({
                    "lambda": params.potentials,
                    "report": report,
                }),
            )?;
            if !report.converged {
                return Err(HfpdError::Convergence(
                    "dual solve hit max_outer before the decrement tolerance".into(),
                    report
                        .trajectory
                        .last()
                        .map_or(f64::NAN, |s| s.newton_decrement),
                ));
            }
        }
        Command::Sample => {
            let params = configured_params(cfg)?;
            let (plans, diagnostics) = hmc_sample(&params, &cfg.hmc_config(), cfg.solver.n_samp)?;
            let block = SampleBlock::from_plans(&plans, cfg.seed)?;
            if cli.format == OutputFormat::Csv {
                let records: Vec<Vec<String>> = plans
                    .iter()
                    .map(|p| p.entries().iter().map(|e| format!("{e:.17e}")).collect())
                    .collect();
                let columns: Vec<String> = (0..cfg.problem.m)
                    .flat_map(|i| (0..cfg.problem.n).map(move |j| format!("pi_{i}_{j}")))
                    .collect();
                let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
                let csv = table_csv(&run.hash, cfg.seed, &cols, &records);
                run.write("samples.csv", csv.as_bytes())?;
            } else {
                run.write("samples.bin", &encode_sample_block(&block))?;
            }
            run.write_json("sampler_diagnostics.json", &diagnostics)?;
        }
        Command::Fairness {
            experiment,
            y_index,
            w2sq,
        } => {
            let params = configured_params(cfg)?;
            let (plans, diagnostics) = hmc_sample(&params, &cfg.hmc_config(), cfg.solver.n_samp)?;
            match experiment {
                FairnessExperiment::Frequency => {
                    let threshold = average_mass_threshold(cfg.problem.m, cfg.problem.n);
                    let map = frequency_map(&plans, threshold)?;
                    let csv = matrix_csv(&run.hash, cfg.seed, map.rows, &map.probabilities);
                    run.write("frequency.csv", csv.as_bytes())?;
                    run.write_json(
                        "frequency_report.json",
                        &serde_json::json!({
                            "threshold": map.threshold,
                            "sample_count": map.sample_count,
                            "mean_frequency": map.mean(),
                            "sampler": diagnostics,
                        }),
                    )?;
                }
                FairnessExperiment::Diversity => {
                    let (mean, se) = diversity_index(&plans)?;
                    run.write_json(
                        "diversity.json",
                        &serde_json::json!({
                            "diversity_mean": mean,
                            "diversity_se": se,
                            "max_index": (cfg.problem.m * cfg.problem.n) as f64,
                            "sampler": diagnostics,
                        }),
                    )?;
                }
                FairnessExperiment::Markov => {
                    let cost = cfg.cost_matrix()?;
                    let budget = match w2sq {
                        Some(v) => *v,
                        None => wasserstein2_1d(
                            &cfg.problem.mu0.build(cfg.problem.m)?,
                            &cfg.problem.nu0.build(cfg.problem.n)?,
                            &cfg.x_support(),
                            &cfg.y_support(),
                        )?,
                    };
                    let (bound, empirical) = markov_bound(&plans, *y_index, &cost, budget)?;
                    run.write_json(
                        "markov.json",
                        &serde_json::json!({
                            "y_index": y_index,
                            "w2sq": budget,
                            "markov_bound": bound,
                            "empirical_fraction": empirical,
                            "sampler": diagnostics,
                        }),
                    )?;
                }
            }
        }
        Command::Repair { pairs } => {
            if *pairs == 0 {
                return Err(HfpdError::Parameter("--pairs must be >= 1".into()));
            }
            let params = configured_params(cfg)?;
            let mu0 = cfg.problem.mu0.build(cfg.problem.m)?;
            let nu0 = cfg.problem.nu0.build(cfg.problem.n)?;
            let sequence: Vec<_> = (0..*pairs)
                .map(|t| {
                    sample_empirical_marginals(
                        &mu0,
                        &nu0,
                        cfg.problem.eta,
                        cfg.problem.zeta,
                        cfg.seed.wrapping_add(t as u64),
                    )
                })
                .collect::<Result<_>>()?;
            let repair_cfg = RepairConfig {
                x_support: cfg.x_support(),
                y_support: cfg.y_support(),
                epsilon: cfg.problem.epsilon,
                sampler: cfg.hmc_config(),
                w0: 0.5,
                w1: 0.5,
            };
            let schemes = [
                RepairScheme::DeterministicEot,
                RepairScheme::RandomizedHfpd,
                RepairScheme::NominalOt,
            ];
            let comparisons = compare_repair_schemes(&sequence, &schemes, &params, &repair_cfg)?;
            let mut records = Vec::new();
            let mut summary = Vec::new();
            for comp in &comparisons {
                let label = format!("{:?}", comp.scheme);
                for (t, r) in comp.results.iter().enumerate() {
                    records.push(vec![
                        label.clone(),
                        t.to_string(),
                        format!("{:.17e}", r.icd),
                        format!("{:.17e}", r.distortion),
                    ]);
                }
                let (icd_mean, icd_var) = comp.icd_mean_var();
                summary.push(serde_json::json!({
                    "scheme": label,
                    "icd_mean": icd_mean,
                    "icd_var": icd_var,
                }));
            }
            let csv = table_csv(
                &run.hash,
                cfg.seed,
                &["scheme", "pair", "icd", "distortion"],
                &records,
            );
            run.write("repair.csv", csv.as_bytes())?;
            run.write_json("repair_summary.json", &summary)?;
        }
        Command::Grid2x2 {
            grid_points,
            quad_order,
        } => {
            if *grid_points < 2 {
                return Err(HfpdError::Parameter("--grid-points must be >= 2".into()));
            }
            let params = configured_params(cfg)?;
            let quad = QuadratureSpec::new(*quad_order)?;
            let k = *grid_points;
            let mut grid = Vec::with_capacity(k * k);
            for a in 0..k {
                for b in 0..k {
                    grid.push((
                        (a as f64 + 0.5) / k as f64,
                        (b as f64 + 0.5) / k as f64,
                    ));
                }
            }
            let density = marginal_density_grid_2x2(&params, &grid, &quad)?;
            let records: Vec<Vec<String>> = grid
                .iter()
                .zip(&density)
                .map(|(&(p11, p12), &d)| {
                    vec![
                        format!("{p11:.17e}"),
                        format!("{p12:.17e}"),
                        format!("{d:.17e}"),
                    ]
                })
                .collect();
            let csv = table_csv(
                &run.hash,
                cfg.seed,
                &["pi11", "pi12", "density"],
                &records,
            );
            run.write("grid2x2.csv", csv.as_bytes())?;
        }
    }
    Ok(())
}
