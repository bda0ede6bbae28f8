//! `dpselft` command-line front end.
//!
//! Every subcommand reads an optional JSON experiment config, applies the
//! command-line overrides, and writes its artifacts into `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpselft::accountant::{LedgerReport, PrivacyLedger};
use dpselft::data::{read_dataset, save_dataset, Dataset};
use dpselft::nn::{build_model, checkpoint, LayerSubset};
use dpselft::pipeline::{
    finetune, finetune_sigma, generator_for, make_task, run_pipeline, run_suite,
    synthesize_and_select, write_results_csv, Arm, ExperimentConfig, RunResult,
};
use dpselft::rng::{self, tag};
use dpselft::synth::{self, generate_candidates, Encoder, SynthConfig, SynthNoise};
use dpselft::theory::{
    verify_noise_tradeoff, verify_selection_transfer, BoundReport, QuadraticProblem,
    TransferInstance,
};
use dpselft::Error;

#[derive(Parser)]
#[command(
    name = "dpselft",
    version,
    about = "Differentially private selective fine-tuning"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the total privacy budget.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Single-threaded execution and `wall_ms = 0` so outputs are byte-identical across runs.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the private and test splits of the configured task.
    GenData,
    /// Releases the private synthetic dataset.
    Synth {
        /// Private data CSV; defaults to the configured task.
        #[arg(long)]
        private: Option<PathBuf>,
    },
    /// Synthesizes, then ranks candidate layers on the synthetic data.
    Select,
    /// Private fine-tuning of a fixed layer set on the task data.
    Finetune {
        /// Layers to train, e.g. `3,5`; defaults to the config's heuristic layers.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
    },
    /// One arm end to end.
    Run {
        #[arg(long)]
        arm: Option<Arm>,
    },
    /// Arms × budgets × seeds, with a summary table.
    Suite {
        /// Repeatable; defaults to every arm.
        #[arg(long)]
        arm: Vec<Arm>,
        /// Additional budgets to sweep (repeatable); `--epsilon` is included.
        #[arg(long = "epsilons", value_delimiter = ',')]
        epsilons: Vec<f64>,
        /// Number of seeds, starting at `--seed` (default 0).
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
    /// Checks the noise trade-off and selection transfer bounds numerically.
    VerifyTheory {
        #[arg(long, default_value_t = 200_000)]
        trials: usize,
        /// Worst-case selection instance (JSON); a built-in one is used otherwise.
        #[arg(long)]
        instance: Option<PathBuf>,
    },
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BudgetViolation { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Io(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let Cli { common, command } = cli;
    match command {
        Command::GenData => gen_data(&common),
        Command::Synth { private } => synth_cmd(&common, private.as_deref()),
        Command::Select => select_cmd(&common),
        Command::Finetune { layers } => finetune_cmd(&common, &layers),
        Command::Run { arm } => run_cmd(&common, arm),
        Command::Suite {
            arm,
            epsilons,
            seeds,
            threads,
        } => suite_cmd(&common, arm, epsilons, seeds, threads),
        Command::VerifyTheory { trials, instance } => {
            verify_cmd(&common, trials, instance.as_deref())
        }
    }
}

impl Common {
    fn config(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).map_err(|e| Failure {
                code: 2,
                message: format!("{}: {e}", p.display()),
            })?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epsilon {
            cfg.privacy.epsilon = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> CliResult<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    fs::write(
        path,
        serde_json::to_string_pretty(value).map_err(Error::from)?,
    )?;
    Ok(())
}

/// Reports the ledger, writes `ledger.json`, and enforces the budget.
fn finish_ledger(
    out: &Path,
    ledger: &PrivacyLedger,
    cfg: &ExperimentConfig,
) -> CliResult<LedgerReport> {
    let report = ledger.report(&cfg.privacy_spec()?)?;
    write_json(&out.join("ledger.json"), &report)?;
    report.check_budget()?;
    Ok(report)
}

fn gen_data(common: &Common) -> CliResult {
    let cfg = common.config()?;
    let out = common.out_dir()?;
    let task = make_task(&cfg.task, cfg.seed)?;
    save_dataset(out.join("private.csv"), &task.private)?;
    save_dataset(out.join("test.csv"), &task.test)?;
    println!(
        "wrote {} private and {} test records to {}",
        task.private.len(),
        task.test.len(),
        out.display()
    );
    Ok(())
}

fn private_data(
    cfg: &ExperimentConfig,
    path: Option<&Path>,
) -> CliResult<(Dataset, dpselft::pipeline::Task)> {
    let task = make_task(&cfg.task, cfg.seed)?;
    let private = match path {
        Some(p) => read_dataset(p, Some(cfg.task.classes))?,
        None => task.private.clone(),
    };
    if private.dim() != Some(cfg.task.dim) {
        return Err(Error::DimensionMismatch {
            expected: cfg.task.dim,
            got: private.dim().unwrap_or(0),
        }
        .into());
    }
    Ok((private, task))
}

fn synth_cmd(common: &Common, private: Option<&Path>) -> CliResult {
    let cfg = common.config()?;
    let out = common.out_dir()?;
    let (private, task) = private_data(&cfg, private)?;
    let spec = cfg.privacy_spec()?;
    let generator = generator_for(&task, &cfg.synth.generator, cfg.seed);
    let pool = generate_candidates(&generator, &mut rng::stream(cfg.seed, &[tag::CANDIDATES]))?;
    let encoder = match cfg.synth.projection_dim {
        Some(p) => Encoder::random_projection(
            pool.dim(),
            p,
            rng::derive_seed(cfg.seed, &[tag::CANDIDATES, 2]),
        )?,
        None => Encoder::identity(pool.dim()),
    };
    let noise = if cfg.privacy.non_private {
        SynthNoise::Fixed { sigma: 0.0 }
    } else {
        SynthNoise::Budget {
            epsilon: spec.epsilon_syn,
            delta: spec.delta_syn,
        }
    };
    let synth_cfg = SynthConfig {
        metric: cfg.synth.metric,
        mode: cfg.synth.mode,
        k_syn: cfg.synth.k_syn.unwrap_or(private.len().min(pool.len())),
        train_fraction: cfg.synth.train_fraction,
        split_seed: rng::derive_seed(cfg.seed, &[tag::SPLIT]),
        noise_seed: rng::derive_seed(cfg.seed, &[tag::SYNTH_NOISE]),
    };
    let mut ledger = PrivacyLedger::new();
    let synthetic =
        synth::build_synthetic_dataset(&private, &pool, &encoder, noise, &synth_cfg, &mut ledger)?;
    synthetic.save(out)?;
    let report = finish_ledger(out, &ledger, &cfg)?;
    println!(
        "{} synthetic records ({} train, {} val), eps_syn {:.4}",
        synthetic.records(),
        synthetic.train.len(),
        synthetic.val.len(),
        report.total_epsilon
    );
    Ok(())
}

fn select_cmd(common: &Common) -> CliResult {
    let mut cfg = common.config()?;
    if !cfg.arm.uses_selection() {
        cfg.arm = Arm::DpSelft;
    }
    let out = common.out_dir()?;
    let task = make_task(&cfg.task, cfg.seed)?;
    let spec = cfg.privacy_spec()?;
    let base = build_model(
        &cfg.model_specs(),
        rng::derive_seed(cfg.seed, &[tag::MODEL]),
    )?;
    let sigma = finetune_sigma(&cfg, &spec, task.private.len())?;
    let generator = generator_for(&task, &cfg.synth.generator, cfg.seed);
    let mut ledger = PrivacyLedger::new();
    let outcome = synthesize_and_select(
        &cfg,
        &spec,
        &task.private,
        &generator,
        &base,
        sigma,
        &mut ledger,
    )?;
    outcome.synthetic.save(out.join("synthetic"))?;
    outcome.report.save_csv(out.join("selection_report.csv"))?;
    checkpoint::save(out.join("base.ckpt"), &base)?;
    finish_ledger(out, &ledger, &cfg)?;
    println!("selected layers {}", outcome.report.chosen);
    for (rank, subset) in outcome.report.ranked_subsets().iter().enumerate() {
        let c = &outcome.report.candidates[outcome.report.ranking[rank]];
        println!(
            "  {:>2}. {:<6} perf {:.4}  rho {:.4}",
            rank + 1,
            subset.to_string(),
            c.perf,
            c.rho
        );
    }
    Ok(())
}

fn finetune_cmd(common: &Common, layers: &[usize]) -> CliResult {
    let cfg = common.config()?;
    let out = common.out_dir()?;
    let task = make_task(&cfg.task, cfg.seed)?;
    let spec = cfg.privacy_spec()?;
    let mut model = build_model(
        &cfg.model_specs(),
        rng::derive_seed(cfg.seed, &[tag::MODEL]),
    )?;
    let subset = if layers.is_empty() {
        LayerSubset::new(cfg.heuristic_layers.iter().copied())
    } else {
        LayerSubset::new(layers.iter().copied())
    };
    model.validate_subset(&subset)?;
    let sigma = finetune_sigma(&cfg, &spec, task.private.len())?;
    let mut ledger = PrivacyLedger::new();
    finetune(
        &mut model,
        &task.private,
        &subset,
        &cfg.train,
        sigma,
        cfg.privacy.non_private,
        rng::derive_seed(cfg.seed, &[tag::FINETUNE]),
        &mut ledger,
    )?;
    let accuracy = model.accuracy(&task.test)?;
    checkpoint::save(out.join("model.ckpt"), &model)?;
    let report = finish_ledger(out, &ledger, &cfg)?;
    println!(
        "layers {subset}  sigma {sigma:.4}  eps_ft {:.4}  accuracy {accuracy:.4}",
        report.total_epsilon
    );
    Ok(())
}

fn check_result(r: &RunResult) -> CliResult {
    if r.ledger.total_epsilon > r.eps_total {
        return Err(Error::BudgetViolation {
            accounted: r.ledger.total_epsilon,
            configured: r.eps_total,
        }
        .into());
    }
    if !r.accuracy.is_finite() {
        return Err(Error::Numeric("non-finite accuracy".into()).into());
    }
    Ok(())
}

fn run_cmd(common: &Common, arm: Option<Arm>) -> CliResult {
    let mut cfg = common.config()?;
    if let Some(a) = arm {
        cfg.arm = a;
    }
    let out = common.out_dir()?;
    let mut r = run_pipeline(&cfg)?;
    if common.deterministic {
        r.wall_ms = 0;
    }
    check_result(&r)?;
    write_results_csv(
        fs::File::create(out.join("results.csv"))?,
        std::slice::from_ref(&r),
    )?;
    write_json(&out.join("ledger.json"), &r.ledger)?;
    if let Some(sel) = &r.selection {
        sel.save_csv(out.join("selection_report.csv"))?;
    }
    println!(
        "{} seed {}: accuracy {:.4}, layers {}, eps {:.4} (syn {:.4}, ft {:.4}), sigma {:.4}",
        r.arm,
        r.seed,
        r.accuracy,
        r.selected,
        r.ledger.total_epsilon,
        r.eps_syn(),
        r.eps_ft(),
        r.sigma
    );
    Ok(())
}

fn suite_cmd(
    common: &Common,
    arms: Vec<Arm>,
    epsilons: Vec<f64>,
    seeds: u64,
    threads: usize,
) -> CliResult {
    let cfg = common.config()?;
    let out = common.out_dir()?;
    let arms = if arms.is_empty() {
        Arm::ALL.to_vec()
    } else {
        arms
    };
    let mut budgets = vec![cfg.privacy.epsilon];
    budgets.extend(epsilons.into_iter().filter(|e| *e != cfg.privacy.epsilon));
    let mut configs = Vec::new();
    for &eps in &budgets {
        for arm in &arms {
            let mut c = cfg.clone();
            c.arm = arm.clone();
            c.privacy.epsilon = eps;
            c.validate()?;
            configs.push(c);
        }
    }
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()).into());
    }
    let seed_list: Vec<u64> = (cfg.seed..cfg.seed + seeds).collect();
    let threads = if common.deterministic { 1 } else { threads };
    let mut suite = run_suite(&configs, &seed_list, threads)?;
    if common.deterministic {
        for row in &mut suite.rows {
            if let Ok(r) = &mut row.result {
                r.wall_ms = 0;
            }
        }
    }
    suite.write_csv(fs::File::create(out.join("results.csv"))?)?;
    let table = suite.table();
    fs::write(out.join("summary.txt"), &table)?;
    print!("{table}");
    for row in &suite.rows {
        if let Ok(r) = &row.result {
            check_result(r)?;
        }
    }
    Ok(())
}

/// Isotropic instance where the bound holds with equality in expectation.
fn default_tradeoff(trials: usize, seed: u64) -> dpselft::Result<BoundReport> {
    let p = QuadraticProblem::diagonal(&[1.0, 1.0], vec![1.0, 1.0])?;
    verify_noise_tradeoff(&p, &[0, 1], 0.1, 1.0, 2.0, trials, seed)
}

fn default_transfer() -> TransferInstance {
    TransferInstance {
        candidates: vec!["first".into(), "second".into()],
        r_syn: vec![vec![0.25, 0.05, 0.3], vec![0.45, 0.05, 0.5]],
        r_pri: vec![vec![0.2, 0.1, 0.3], vec![0.5, 0.0, 0.5]],
        probs: vec![1.0 / 3.0; 3],
        alpha_tail: 0.0,
        tail_value: 0.0,
        bound_b: 1.0,
        tau: 0.05,
    }
}

fn verify_cmd(common: &Common, trials: usize, instance: Option<&Path>) -> CliResult {
    let out = common.out_dir()?;
    let seed = common.seed.unwrap_or(0);
    let inst = match instance {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(Error::from)?,
        None => default_transfer(),
    };
    let reports = vec![
        default_tradeoff(trials, seed)?,
        verify_selection_transfer(&inst)?,
    ];
    write_json(&out.join("theory.json"), &reports)?;
    let mut violated = false;
    for r in &reports {
        println!(
            "{:<32} measured {:.6} ± {:.6}  bound {:.6}  {}",
            r.name,
            r.measured,
            r.half_width,
            r.bound,
            if r.violated { "VIOLATED" } else { "ok" }
        );
        violated |= r.violated;
    }
    if violated {
        return Err(Error::Numeric("a bound was violated".into()).into());
    }
    Ok(())
}
