//! End-to-end runs: private synthetic data, layer selection, private
//! fine-tuning of the selected layers, and the baseline arms.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::{
    calibrate_sigma, split_budget, LedgerReport, MechanismEvent, PrivacyLedger, PrivacySpec, Stage,
};
use crate::data::{Dataset, Example};
use crate::dp_optim::{sampling_rate, train, DpTrainConfig, Optimizer};
use crate::error::{Error, Result};
use crate::nn::{build_model, LayerSpec, LayerSubset, LayeredModel};
use crate::rng::{self, tag};
use crate::select::{self, Family, PerturbationMode, Radius, SelectionConfig, SelectionReport};
use crate::synth::{
    self, generate_candidates, Encoder, GeneratorConfig, Metric, MixtureComponent, ReleaseMode,
    SynthConfig, SynthNoise, SyntheticDataset,
};

/// Gaussian-mixture classification task with orthogonal class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_private: usize,
    pub n_test: usize,
    /// Distance between any two class means, in units of `noise_std`.
    pub separation: f64,
    pub noise_std: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            dim: 16,
            n_private: 1024,
            n_test: 1024,
            separation: 3.0,
            noise_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub private: Dataset,
    pub test: Dataset,
    pub means: Vec<Vec<f64>>,
    pub noise_std: f64,
}

/// Class means are `R·u_k` for orthonormal `u_k`, so every pair sits at
/// distance `separation · noise_std`. Labels are uniform.
pub fn make_task(spec: &TaskSpec, seed: u64) -> Result<Task> {
    if spec.classes < 2 {
        return Err(Error::Config("a task needs at least two classes".into()));
    }
    if spec.dim < spec.classes {
        return Err(Error::Config(format!(
            "orthogonal means need dim >= classes ({} < {})",
            spec.dim, spec.classes
        )));
    }
    if !(spec.noise_std > 0.0) || !(spec.separation > 0.0) {
        return Err(Error::Numeric(
            "degenerate mixture: noise_std and separation must be > 0".into(),
        ));
    }
    if spec.n_private == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut r = rng::stream(seed, &[tag::DATA]);
    let raw = DMatrix::from_fn(spec.dim, spec.classes, |_, _| rng::gaussian(&mut r, 1.0));
    let q = raw.qr().q();
    let radius = spec.separation * spec.noise_std / 2f64.sqrt();
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|k| (0..spec.dim).map(|i| radius * q[(i, k)]).collect())
        .collect();
    let sample = |n: usize, r: &mut rng::StreamRng| -> Result<Dataset> {
        let examples = (0..n)
            .map(|_| {
                let label = r.random_range(0..spec.classes);
                let features = means[label]
                    .iter()
                    .map(|m| m + rng::gaussian(r, spec.noise_std))
                    .collect();
                Example::new(features, label)
            })
            .collect();
        Dataset::new(examples, spec.classes)
    };
    let private = sample(spec.n_private, &mut r)?;
    let test = sample(spec.n_test, &mut rng::stream(seed, &[tag::DATA, 1]))?;
    Ok(Task {
        private,
        test,
        means,
        noise_std: spec.noise_std,
    })
}

/// Local stand-in for the public candidate generator: components near each
/// class mean (jittered, wider) plus broad background components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub seed_count: usize,
    pub variations: usize,
    pub perturbation: f64,
    /// Jitter of each component mean around the class mean, in `noise_std` units.
    pub mean_jitter: f64,
    /// Component spread, in `noise_std` units.
    pub spread: f64,
    pub background_components: usize,
    pub background_weight: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed_count: 16,
            variations: 3,
            perturbation: 0.1,
            mean_jitter: 0.5,
            spread: 1.5,
            background_components: 2,
            background_weight: 0.25,
        }
    }
}

pub fn generator_for(task: &Task, spec: &GeneratorSpec, seed: u64) -> GeneratorConfig {
    let mut r = rng::stream(seed, &[tag::CANDIDATES, 1]);
    let s = task.noise_std;
    let mut components: Vec<MixtureComponent> = task
        .means
        .iter()
        .map(|m| MixtureComponent {
            mean: m
                .iter()
                .map(|v| v + rng::gaussian(&mut r, spec.mean_jitter * s))
                .collect(),
            std: spec.spread * s,
            weight: 1.0,
        })
        .collect();
    let dim = task.means[0].len();
    let radius = task.means[0].iter().map(|v| v * v).sum::<f64>().sqrt();
    for _ in 0..spec.background_components {
        components.push(MixtureComponent {
            mean: (0..dim)
                .map(|_| rng::gaussian(&mut r, radius / (dim as f64).sqrt()))
                .collect(),
            std: 2.0 * spec.spread * s,
            weight: spec.background_weight,
        });
    }
    GeneratorConfig {
        components,
        seed_count: spec.seed_count,
        variations: spec.variations,
        perturbation: spec.perturbation * s,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Arm {
    #[default]
    DpSelft,
    DpSelftAdapter,
    FullParameter,
    Heuristic,
    RandomSelection,
    CleanSelection,
    RandomNoiseSelection,
}

impl Arm {
    pub const ALL: [Arm; 7] = [
        Arm::DpSelft,
        Arm::DpSelftAdapter,
        Arm::FullParameter,
        Arm::Heuristic,
        Arm::RandomSelection,
        Arm::CleanSelection,
        Arm::RandomNoiseSelection,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Arm::DpSelft => "dp-selft",
            Arm::DpSelftAdapter => "dp-selft+adapter",
            Arm::FullParameter => "full-parameter",
            Arm::Heuristic => "heuristic",
            Arm::RandomSelection => "random-selection",
            Arm::CleanSelection => "clean-selection",
            Arm::RandomNoiseSelection => "random-noise-selection",
        }
    }

    /// Arms that build synthetic data and run a selector.
    pub fn uses_selection(&self) -> bool {
        matches!(
            self,
            Arm::DpSelft | Arm::DpSelftAdapter | Arm::CleanSelection | Arm::RandomNoiseSelection
        )
    }

    fn perturbation(&self) -> PerturbationMode {
        match self {
            Arm::CleanSelection => PerturbationMode::None,
            Arm::RandomNoiseSelection => PerturbationMode::Random,
            _ => PerturbationMode::FirstOrder,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown arm '{s}'")))
    }
}

impl TryFrom<String> for Arm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Arm> for String {
    fn from(a: Arm) -> String {
        a.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub epsilon_syn: f64,
    /// Debug mode: no noise, no clipping, nothing recorded.
    pub non_private: bool,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            epsilon: 5.0,
            delta: 1e-5,
            epsilon_syn: 0.3,
            non_private: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub generator: GeneratorSpec,
    pub metric: Metric,
    pub mode: ReleaseMode,
    /// Synthetic records kept; `None` means `min(n_private, pool size)`.
    pub k_syn: Option<usize>,
    pub train_fraction: f64,
    /// Random-projection width; `None` uses the identity encoder.
    pub projection_dim: Option<usize>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            generator: GeneratorSpec::default(),
            metric: Metric::Euclidean,
            mode: ReleaseMode::Joint,
            k_syn: None,
            train_fraction: 0.7,
            projection_dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionSettings {
    pub steps: usize,
    pub learning_rate: f64,
    /// PGA refinement steps for the worst-case arms; 0 keeps the closed form.
    pub pga_steps: usize,
    /// Explicit radius; `None` matches the fine-tuning noise.
    pub rho: Option<f64>,
    pub top_k: usize,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self {
            steps: 20,
            learning_rate: 0.5,
            pga_steps: 0,
            rho: None,
            top_k: 2,
        }
    }
}

pub fn default_model(input: usize, classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(input, 32),
        LayerSpec::tanh(32),
        LayerSpec::dense(32, 32),
        LayerSpec::tanh(32),
        LayerSpec::dense(32, 32),
        LayerSpec::dense(32, classes),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    /// Empty means [`default_model`] for the task.
    pub model: Vec<LayerSpec>,
    pub privacy: PrivacyConfig,
    pub train: DpTrainConfig,
    pub synth: SynthSettings,
    pub selection: SelectionSettings,
    pub arm: Arm,
    pub heuristic_layers: Vec<usize>,
    pub adapter_rank: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::default(),
            model: Vec::new(),
            privacy: PrivacyConfig::default(),
            train: DpTrainConfig::default(),
            synth: SynthSettings::default(),
            selection: SelectionSettings::default(),
            arm: Arm::DpSelft,
            heuristic_layers: vec![3, 5],
            adapter_rank: 4,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn model_specs(&self) -> Vec<LayerSpec> {
        if self.model.is_empty() {
            default_model(self.task.dim, self.task.classes)
        } else {
            self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let specs = self.model_specs();
        let first = specs
            .first()
            .ok_or_else(|| Error::Config("empty model".into()))?;
        if first.input != self.task.dim || specs.last().map(|s| s.output) != Some(self.task.classes)
        {
            return Err(Error::Config("model widths do not match the task".into()));
        }
        let mut train = self.train.clone();
        if self.privacy.non_private {
            train.noise_multiplier = 0.0;
            train.clip_norm = f64::INFINITY;
        } else {
            split_budget(
                self.privacy.epsilon,
                self.privacy.delta,
                self.privacy.epsilon_syn,
            )?;
            if !self.train.clip_norm.is_finite() {
                return Err(Error::Config("private runs need a finite clip norm".into()));
            }
        }
        train.validate()?;
        if self.selection.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        if !(self.synth.train_fraction > 0.0 && self.synth.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self.adapter_rank == 0 {
            return Err(Error::Config("adapter rank must be >= 1".into()));
        }
        Ok(())
    }

    /// The same split for every arm; arms without a synthetic stage leave
    /// its share unspent, so all arms fine-tune with identical noise.
    pub fn privacy_spec(&self) -> Result<PrivacySpec> {
        split_budget(
            self.privacy.epsilon,
            self.privacy.delta,
            self.privacy.epsilon_syn,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub arm: Arm,
    pub seed: u64,
    pub eps_total: f64,
    pub accuracy: f64,
    pub selected: LayerSubset,
    /// Fine-tuning noise multiplier.
    pub sigma: f64,
    pub ledger: LedgerReport,
    pub selection: Option<SelectionReport>,
    pub synthetic_records: usize,
    pub wall_ms: u128,
}

impl RunResult {
    pub fn eps_syn(&self) -> f64 {
        self.ledger.stage(Stage::Synthetic).epsilon
    }

    pub fn eps_ft(&self) -> f64 {
        self.ledger.stage(Stage::FineTune).epsilon
    }
}

/// Everything stage 1 and 2 produce for a selecting arm.
pub struct SelectionOutcome {
    pub synthetic: SyntheticDataset,
    pub report: SelectionReport,
}

/// Calibrated fine-tuning noise multiplier (0 in non-private mode).
pub fn finetune_sigma(cfg: &ExperimentConfig, spec: &PrivacySpec, n: usize) -> Result<f64> {
    if cfg.privacy.non_private {
        return Ok(0.0);
    }
    calibrate_sigma(
        spec.epsilon_ft,
        spec.delta_ft,
        sampling_rate(cfg.train.batch_size, n),
        cfg.train.steps as u64,
    )
}

/// Stages 1 and 2 on the given private data and base model.
pub fn synthesize_and_select(
    cfg: &ExperimentConfig,
    spec: &PrivacySpec,
    private: &Dataset,
    generator: &GeneratorConfig,
    model: &LayeredModel,
    sigma_ft: f64,
    ledger: &mut PrivacyLedger,
) -> Result<SelectionOutcome> {
    let pool = generate_candidates(generator, &mut rng::stream(cfg.seed, &[tag::CANDIDATES]))?;
    let dim = pool.dim();
    let encoder = match cfg.synth.projection_dim {
        Some(p) => {
            Encoder::random_projection(dim, p, rng::derive_seed(cfg.seed, &[tag::CANDIDATES, 2]))?
        }
        None => Encoder::identity(dim),
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
    let synthetic =
        synth::build_synthetic_dataset(private, &pool, &encoder, noise, &synth_cfg, ledger)?;
    let mode = match cfg.arm.perturbation() {
        PerturbationMode::FirstOrder if cfg.selection.pga_steps > 0 => PerturbationMode::Pga {
            steps: cfg.selection.pga_steps,
        },
        m => m,
    };
    let radius = match cfg.selection.rho {
        Some(rho) => Radius::Explicit { rho },
        None => Radius::Matched {
            noise_multiplier: sigma_ft,
            batch_size: cfg.train.batch_size,
        },
    };
    let sel_cfg = SelectionConfig {
        steps: cfg.selection.steps,
        learning_rate: cfg.selection.learning_rate,
        clip_norm: if cfg.train.clip_norm.is_finite() {
            cfg.train.clip_norm
        } else {
            1.0
        },
        mode,
        radius,
        top_k: cfg.selection.top_k,
    };
    let report = select::select(
        model,
        &Family::PerLayer,
        &synthetic.train,
        &synthetic.val,
        &sel_cfg,
        rng::derive_seed(cfg.seed, &[tag::SELECTION]),
    )?;
    Ok(SelectionOutcome { synthetic, report })
}

/// Private fine-tuning of `subset`, recorded in `ledger`.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    model: &mut LayeredModel,
    private: &Dataset,
    subset: &LayerSubset,
    train_cfg: &DpTrainConfig,
    sigma: f64,
    non_private: bool,
    seed: u64,
    ledger: &mut PrivacyLedger,
) -> Result<()> {
    let mut tc = train_cfg.clone();
    tc.noise_multiplier = sigma;
    if non_private {
        tc.noise_multiplier = 0.0;
        tc.clip_norm = f64::INFINITY;
    }
    train(model, private, subset, &tc, Optimizer::AdamW, seed)?;
    if tc.noise_multiplier > 0.0 {
        ledger.record(
            Stage::FineTune,
            "dp-adamw",
            MechanismEvent::subsampled(
                tc.noise_multiplier,
                sampling_rate(tc.batch_size, private.len()),
                tc.steps as u64,
            ),
        )?;
    }
    Ok(())
}

/// One arm on one seed, end to end.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunResult> {
    let start = Instant::now();
    cfg.validate()?;
    let task = make_task(&cfg.task, cfg.seed)?;
    let spec = cfg.privacy_spec()?;
    let base = build_model(
        &cfg.model_specs(),
        rng::derive_seed(cfg.seed, &[tag::MODEL]),
    )?;
    let sigma = finetune_sigma(cfg, &spec, task.private.len())?;
    let mut ledger = PrivacyLedger::new();
    let mut selection = None;
    let mut synthetic_records = 0;

    let subset = match cfg.arm {
        Arm::FullParameter => base.all_parameterized(),
        Arm::Heuristic => {
            let s = LayerSubset::new(cfg.heuristic_layers.iter().copied());
            base.validate_subset(&s)?;
            s
        }
        Arm::RandomSelection => {
            let mut r = rng::stream(cfg.seed, &[tag::RANDOM_ARM]);
            select::random_layers(&base, cfg.selection.top_k, &mut r)?
        }
        _ => {
            let generator = generator_for(&task, &cfg.synth.generator, cfg.seed);
            let out = synthesize_and_select(
                cfg,
                &spec,
                &task.private,
                &generator,
                &base,
                sigma,
                &mut ledger,
            )?;
            synthetic_records = out.synthetic.records();
            let chosen = out.report.chosen.clone();
            selection = Some(out.report);
            chosen
        }
    };

    let mut model = if cfg.arm == Arm::DpSelftAdapter {
        let mut m = base.clone();
        for layer in subset.iter() {
            let spec = &m.specs()[layer - 1];
            let rank = cfg.adapter_rank.min(spec.input).min(spec.output);
            m = m.attach_adapter(layer, rank, rng::derive_seed(cfg.seed, &[tag::ADAPTER]))?;
        }
        m
    } else {
        base
    };
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
    let report = ledger.report(&spec)?;
    report.check_budget()?;
    Ok(RunResult {
        arm: cfg.arm.clone(),
        seed: cfg.seed,
        eps_total: cfg.privacy.epsilon,
        accuracy,
        selected: subset,
        sigma,
        ledger: report,
        selection,
        synthetic_records,
        wall_ms: start.elapsed().as_millis(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub arm: Arm,
    pub eps_total: f64,
    pub seed: u64,
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub arm: Arm,
    pub eps_total: f64,
    pub runs: usize,
    pub failures: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub rows: Vec<SuiteRow>,
    pub summaries: Vec<SuiteSummary>,
}

/// Every config on every seed. Failed runs are kept as rows with their error.
/// Cells run on up to `threads` worker threads; results do not depend on it.
pub fn run_suite(
    configs: &[ExperimentConfig],
    seeds: &[u64],
    threads: usize,
) -> Result<SuiteResult> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "suite needs at least one config and one seed".into(),
        ));
    }
    let cells: Vec<ExperimentConfig> = configs
        .iter()
        .flat_map(|c| {
            seeds.iter().map(move |&s| ExperimentConfig {
                seed: s,
                ..c.clone()
            })
        })
        .collect();
    let threads = threads.clamp(1, cells.len());
    let mut outcomes: Vec<Option<std::result::Result<RunResult, String>>> = vec![None; cells.len()];
    std::thread::scope(|scope| {
        for (chunk_cells, chunk_out) in cells
            .chunks(cells.len().div_ceil(threads))
            .zip(outcomes.chunks_mut(cells.len().div_ceil(threads)))
        {
            scope.spawn(move || {
                for (c, o) in chunk_cells.iter().zip(chunk_out) {
                    *o = Some(run_pipeline(c).map_err(|e| e.to_string()));
                }
            });
        }
    });
    let rows: Vec<SuiteRow> = cells
        .iter()
        .zip(outcomes)
        .map(|(c, o)| SuiteRow {
            arm: c.arm.clone(),
            eps_total: c.privacy.epsilon,
            seed: c.seed,
            result: o.expect("every cell ran"),
        })
        .collect();
    let summaries = configs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let group = &rows[i * seeds.len()..(i + 1) * seeds.len()];
            let acc: Vec<f64> = group
                .iter()
                .filter_map(|r| r.result.as_ref().ok().map(|r| r.accuracy))
                .collect();
            let (mean, std) = mean_std(&acc);
            SuiteSummary {
                arm: c.arm.clone(),
                eps_total: c.privacy.epsilon,
                runs: acc.len(),
                failures: group.len() - acc.len(),
                mean_accuracy: mean,
                std_accuracy: std,
            }
        })
        .collect();
    Ok(SuiteResult { rows, summaries })
}

/// Mean and sample standard deviation; NaN for empty input.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub const RESULT_COLUMNS: [&str; 12] = [
    "arm",
    "seed",
    "eps_total",
    "eps_syn",
    "eps_ft",
    "sigma",
    "k",
    "accuracy",
    "selected_layers",
    "wall_ms",
    "accuracy_std",
    "error",
];

fn result_record(r: &RunResult) -> Vec<String> {
    vec![
        r.arm.to_string(),
        r.seed.to_string(),
        r.eps_total.to_string(),
        r.eps_syn().to_string(),
        r.eps_ft().to_string(),
        r.sigma.to_string(),
        r.selected.len().to_string(),
        r.accuracy.to_string(),
        r.selected.to_string(),
        r.wall_ms.to_string(),
        String::new(),
        String::new(),
    ]
}

/// Writes run results as CSV with the [`RESULT_COLUMNS`] header.
pub fn write_results_csv<W: Write>(out: W, results: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in results {
        w.write_record(result_record(r))?;
    }
    w.flush()?;
    Ok(())
}

impl SuiteResult {
    /// One row per run, then one `summary` row per config.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RESULT_COLUMNS)?;
        for row in &self.rows {
            match &row.result {
                Ok(r) => w.write_record(result_record(r))?,
                Err(e) => {
                    let mut rec = vec![String::new(); RESULT_COLUMNS.len()];
                    rec[0] = row.arm.to_string();
                    rec[1] = row.seed.to_string();
                    rec[2] = row.eps_total.to_string();
                    rec[11] = e.clone();
                    w.write_record(rec)?;
                }
            }
        }
        for s in &self.summaries {
            let mut rec = vec![String::new(); RESULT_COLUMNS.len()];
            rec[0] = s.arm.to_string();
            rec[1] = "summary".into();
            rec[2] = s.eps_total.to_string();
            rec[7] = s.mean_accuracy.to_string();
            rec[10] = s.std_accuracy.to_string();
            if s.failures > 0 {
                rec[11] = format!("{} failed runs", s.failures);
            }
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned summary table.
    pub fn table(&self) -> String {
        let header = ["arm", "eps", "runs", "failed", "mean acc", "std"];
        let rows: Vec<[String; 6]> = self
            .summaries
            .iter()
            .map(|s| {
                [
                    s.arm.to_string(),
                    format!("{}", s.eps_total),
                    s.runs.to_string(),
                    s.failures.to_string(),
                    format!("{:.4}", s.mean_accuracy),
                    format!("{:.4}", s.std_accuracy),
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for r in &rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[&str]| -> String {
            cells
                .iter()
                .zip(width)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(&header);
        out.push('\n');
        out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
        for r in &rows {
            out.push('\n');
            out.push_str(&line(&r.each_ref().map(String::as_str)));
        }
        out.push('\n');
        out
    }
}
