//! Experiment configs, run artifacts and the reproduction table.
//!
//! An [`ExperimentConfig`] names a library problem (or defines one inline)
//! and overrides any subset of its settings. [`resolve`] expands it against
//! the library defaults; [`run_experiment`] trains and writes
//!
//! - `config.resolved.json`: the fully expanded config plus its digest,
//! - `trace.csv`: one row per logged iteration,
//! - `u.wanprm`: the final solution network,
//! - `state.json`: resumable training state (static and space-time runs),
//! - `summary.json`: final error, time, iteration count and digest,
//! - `MANIFEST.json`: the config digest and a SHA-256 of every file above.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Result, WanError};
use crate::eval::{export_error_slice, export_slice, Slice, SliceSpec};
use crate::field::ScalarField;
use crate::geometry::Domain;
use crate::library::{library_entry, Algorithm};
use crate::network::{default_phi_spec, default_u_spec, load_checkpoint, save_checkpoint, Activation, MlpSpec, Network};
use crate::objective::{pretrain_w, BoundaryWeight, PretrainConfig};
use crate::problem::PdeProblem;
use crate::rng::{stream_key, Stream};
use crate::trainer::{run_wan_semidiscrete, write_record, TrainConfig, TrainState, Trainer, TRACE_HEADER};

pub const CONFIG_FILE: &str = "config.resolved.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const NETWORK_FILE: &str = "u.wanprm";
pub const STATE_FILE: &str = "state.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "MANIFEST.json";

/// A library problem by name, or a full inline definition.
#[derive(Debug, Clone)]
pub enum ProblemRef {
    Named(String),
    Inline(Box<PdeProblem>),
}

impl Serialize for ProblemRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Named(n) => s.serialize_str(n),
            Self::Inline(p) => p.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ProblemRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RefVisitor;

        impl<'de> Visitor<'de> for RefVisitor {
            type Value = ProblemRef;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a library problem name or an inline problem object")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<ProblemRef, E> {
                Ok(ProblemRef::Named(v.to_string()))
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> std::result::Result<ProblemRef, A::Error> {
                let p = PdeProblem::deserialize(de::value::MapAccessDeserializer::new(map))?;
                Ok(ProblemRef::Inline(Box::new(p)))
            }
        }

        d.deserialize_any(RefVisitor)
    }
}

/// Changes to a default network. `layers`/`width` rescale the default
/// (cycling its activation schedule); `hidden_widths`/`activations` replace
/// it outright.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<Vec<Activation>>,
}

impl NetworkOverride {
    pub fn scaled(layers: usize, width: usize) -> Self {
        Self {
            layers: Some(layers),
            width: Some(width),
            ..Self::default()
        }
    }

    fn explicit(spec: &MlpSpec) -> Self {
        Self {
            hidden_widths: Some(spec.hidden_widths.clone()),
            activations: Some(spec.activations.clone()),
            ..Self::default()
        }
    }

    pub fn apply(&self, base: &MlpSpec) -> Result<MlpSpec> {
        let cycle = |acts: &[Activation], n: usize| -> Vec<Activation> {
            if acts.is_empty() {
                vec![Activation::Tanh; n]
            } else {
                acts.iter().cycle().take(n).copied().collect()
            }
        };
        let mut widths = base.hidden_widths.clone();
        let mut acts = base.activations.clone();
        if self.layers.is_some() || self.width.is_some() {
            let n = self.layers.unwrap_or(widths.len());
            let w = self.width.or_else(|| widths.first().copied()).unwrap_or(1);
            widths = vec![w; n];
            acts = cycle(&acts, n);
        }
        if let Some(w) = &self.hidden_widths {
            widths = w.clone();
            if self.activations.is_none() {
                acts = cycle(&acts, widths.len());
            }
        }
        if let Some(a) = &self.activations {
            acts = a.clone();
        }
        MlpSpec::new(base.input_dim, widths, acts)
    }
}

/// How the test function is made to vanish on the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightChoice {
    /// Product of distances to the faces.
    Analytic,
    /// Softplus network fitted before training.
    Learned {
        layers: usize,
        width: usize,
        pretrain: PretrainConfig,
    },
}

/// The experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_network: Option<NetworkOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_network: Option<NetworkOverride>,
    /// Training settings merged over the problem's defaults.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub train: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_seed: Option<u64>,
    /// Outer iterations between state snapshots; 0 keeps only the final one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_weight: Option<WeightChoice>,
    /// Written to echoed configs for provenance; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl ExperimentConfig {
    pub fn named(problem: &str) -> Self {
        Self {
            problem: ProblemRef::Named(problem.to_string()),
            algorithm: None,
            u_network: None,
            phi_network: None,
            train: Map::new(),
            output_dir: None,
            eval_seed: None,
            checkpoint_every: None,
            boundary_weight: None,
            config_digest: None,
        }
    }

    /// Parses a config file. Syntax and type errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| WanError::config(format!("invalid experiment config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| WanError::config(format!("{}: {e}", path.display())))
    }
}

const DEFAULT_CHECKPOINT_EVERY: usize = 1000;

/// Training defaults for an inline problem: the nonlinear-cube settings
/// with sample counts scaled to the dimension.
fn inline_train_defaults(p: &PdeProblem) -> TrainConfig {
    let d = p.spatial_dim();
    let n_boundary = 40 * p.domain.face_count();
    let parabolic = p.is_parabolic();
    let alpha = 10_000.0 * n_boundary as f64;
    TrainConfig {
        k_u: 2,
        k_phi: 1,
        tau_theta: 0.015,
        tau_eta: 0.04,
        n_interior: 400 * d,
        n_boundary,
        n_initial: if parabolic { n_boundary } else { 0 },
        alpha,
        gamma: if parabolic { alpha } else { 0.0 },
        max_iterations: 2000,
        resample_every: 1,
        u_optimizer: crate::optim::OptimizerKind::Adagrad,
        phi_optimizer: crate::optim::OptimizerKind::Adagrad,
        adam: Default::default(),
        seed: 0,
        log_every: 10,
        theta_form: crate::objective::IntForm::Direct,
        boundary_form: crate::objective::ErrorForm::Squared,
        target_error: None,
        eval_seed: None,
    }
}

/// A config with every default filled in.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub name: String,
    pub problem_ref: ProblemRef,
    pub problem: PdeProblem,
    pub algorithm: Algorithm,
    pub u_spec: MlpSpec,
    pub phi_spec: MlpSpec,
    pub train: TrainConfig,
    pub output_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub boundary_weight: WeightChoice,
    /// Published relative error of the library problem, if any.
    pub reported_error: Option<f64>,
}

/// Scalar overrides applied after resolution (command-line flags).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_iterations: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

fn network_input_dim(problem: &PdeProblem, algorithm: Algorithm) -> usize {
    match algorithm {
        Algorithm::SemiDiscrete { .. } => problem.spatial_dim(),
        _ => problem.input_dim(),
    }
}

fn with_input_dim(mut spec: MlpSpec, dim: usize) -> MlpSpec {
    spec.input_dim = dim;
    spec
}

/// Expands `cfg` against the library defaults and validates the result.
pub fn resolve(cfg: &ExperimentConfig) -> Result<ResolvedExperiment> {
    let (problem, default_algorithm, base_train, u_base, phi_base, reported) = match &cfg.problem {
        ProblemRef::Named(name) => {
            let e = library_entry(name)?;
            (e.problem, e.algorithm, Some(e.config), Some(e.u_spec), Some(e.phi_spec), e.reported_error)
        }
        ProblemRef::Inline(p) => {
            let algorithm = if p.is_parabolic() { Algorithm::SpaceTime } else { Algorithm::Static };
            let train = inline_train_defaults(p);
            ((**p).clone(), algorithm, Some(train), None, None, None)
        }
    };
    problem.validate()?;
    let algorithm = cfg.algorithm.unwrap_or(default_algorithm);
    match algorithm {
        Algorithm::Static if problem.is_parabolic() => {
            return Err(WanError::config("algorithm `static` needs a problem without time dependence"))
        }
        Algorithm::SpaceTime | Algorithm::SemiDiscrete { .. } if !problem.is_parabolic() => {
            return Err(WanError::config("this algorithm needs a parabolic problem"))
        }
        Algorithm::SemiDiscrete { steps: 0 } => return Err(WanError::config("semi_discrete needs at least one step")),
        _ => {}
    }
    let dim = network_input_dim(&problem, algorithm);
    let u_base = with_input_dim(u_base.unwrap_or_else(|| default_u_spec(dim)), dim);
    let phi_base = with_input_dim(phi_base.unwrap_or_else(|| default_phi_spec(dim)), dim);
    let u_spec = cfg.u_network.clone().unwrap_or_default().apply(&u_base)?;
    let phi_spec = cfg.phi_network.clone().unwrap_or_default().apply(&phi_base)?;

    let mut merged = match base_train {
        Some(t) => match serde_json::to_value(t)? {
            Value::Object(m) => m,
            _ => unreachable!("TrainConfig serializes to an object"),
        },
        None => unreachable!("every problem source provides training defaults"),
    };
    for (k, v) in &cfg.train {
        merged.insert(k.clone(), v.clone());
    }
    let mut train: TrainConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| WanError::config(format!("train: {e}")))?;
    if let Some(s) = cfg.eval_seed {
        train.eval_seed = Some(s);
    }
    train.validate(algorithm == Algorithm::SpaceTime)?;

    let boundary_weight = cfg.boundary_weight.clone().unwrap_or(WeightChoice::Analytic);
    if matches!(boundary_weight, WeightChoice::Learned { .. }) && matches!(algorithm, Algorithm::SemiDiscrete { .. }) {
        return Err(WanError::config("a learned boundary weight is not supported by the semi-discrete solver"));
    }
    Ok(ResolvedExperiment {
        name: problem.name.clone(),
        problem_ref: cfg.problem.clone(),
        problem,
        algorithm,
        u_spec,
        phi_spec,
        train,
        output_dir: cfg.output_dir.clone(),
        checkpoint_every: cfg.checkpoint_every.unwrap_or(DEFAULT_CHECKPOINT_EVERY),
        boundary_weight,
        reported_error: reported,
    })
}

impl ResolvedExperiment {
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(m) = o.max_iterations {
            self.train.max_iterations = m;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = Some(d.clone());
        }
        self.train.validate(self.algorithm == Algorithm::SpaceTime)
    }

    /// The resolved settings as a config file; loading it back resolves to
    /// the same experiment.
    pub fn echo(&self) -> ExperimentConfig {
        let train = match serde_json::to_value(&self.train) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("TrainConfig serializes to an object"),
        };
        ExperimentConfig {
            problem: self.problem_ref.clone(),
            algorithm: Some(self.algorithm),
            u_network: Some(NetworkOverride::explicit(&self.u_spec)),
            phi_network: Some(NetworkOverride::explicit(&self.phi_spec)),
            train,
            output_dir: self.output_dir.clone(),
            eval_seed: None,
            checkpoint_every: Some(self.checkpoint_every),
            boundary_weight: Some(self.boundary_weight.clone()),
            config_digest: None,
        }
    }

    /// First 16 hex digits of the SHA-256 of the echoed config, output
    /// directory excluded.
    pub fn digest(&self) -> String {
        let mut echo = self.echo();
        echo.output_dir = None;
        let bytes = serde_json::to_vec(&echo).expect("config serializes");
        Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }

    fn weight(&self) -> Result<BoundaryWeight> {
        match &self.boundary_weight {
            WeightChoice::Analytic => Ok(BoundaryWeight::Analytic {
                domain: self.problem.domain.clone(),
            }),
            WeightChoice::Learned { layers, width, pretrain } => {
                let d = self.problem.spatial_dim();
                let spec = MlpSpec::uniform(d, *layers, *width, Activation::Tanh)?;
                Ok(pretrain_w(&self.problem.domain, spec, pretrain)?.0)
            }
        }
    }

    /// Exact solution on the domain the solution network lives on.
    pub fn network_exact(&self) -> Option<ScalarField> {
        let exact = self.problem.exact.clone()?;
        match (self.algorithm, self.problem.domain.t_end()) {
            (Algorithm::SemiDiscrete { .. }, Some(t)) => Some(exact.at_time(t)),
            _ => Some(exact),
        }
    }

    pub fn network_domain(&self) -> Domain {
        match self.algorithm {
            Algorithm::SemiDiscrete { .. } => self.problem.domain.spatial().clone(),
            _ => self.problem.domain.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub algorithm: Algorithm,
    pub status: RunStatus,
    pub iterations: usize,
    pub seconds: f64,
    pub initial_rel_error: Option<f64>,
    pub final_rel_error: Option<f64>,
    pub reported_error: Option<f64>,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Per time step, for the semi-discrete solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_errors: Option<Vec<Option<f64>>>,
}

impl Summary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// `state.json`: training state tagged with the config digest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedState {
    pub config_digest: String,
    pub state: TrainState,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Ties each artifact in a directory to the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    /// Hashes `names` (relative to `dir`) and writes `MANIFEST.json`,
    /// merging with entries already listed there under the same digest.
    pub fn record(dir: &Path, config_digest: &str, names: &[String]) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let mut files = match fs::read_to_string(&path).ok().and_then(|t| serde_json::from_str::<Manifest>(&t).ok()) {
            Some(m) if m.config_digest == config_digest => m.files,
            _ => Vec::new(),
        };
        for name in names {
            let sha256 = sha256_hex(&fs::read(dir.join(name))?);
            files.retain(|e| &e.name != name);
            files.push(ManifestEntry { name: name.clone(), sha256 });
        }
        files.sort_by(|a, b| a.name.cmp(&b.name));
        let m = Manifest {
            config_digest: config_digest.to_string(),
            files,
        };
        write_json(&path, &m)?;
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }

    /// Names of listed files whose contents no longer match.
    pub fn stale(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|e| fs::read(dir.join(&e.name)).map(|b| sha256_hex(&b) != e.sha256).unwrap_or(true))
            .map(|e| e.name.clone())
            .collect()
    }
}

fn artifact_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_file() && name != MANIFEST_FILE && name != STATE_FILE {
            names.push(name);
        }
    }
    Ok(names)
}

/// Writes the resolved config to `dir` and returns its digest.
pub fn write_resolved_config(res: &ResolvedExperiment, dir: &Path) -> Result<String> {
    let digest = res.digest();
    let mut echo = res.echo();
    echo.config_digest = Some(digest.clone());
    write_json(&dir.join(CONFIG_FILE), &echo)?;
    Ok(digest)
}

/// Trains `res`, streaming artifacts into `dir`. `on_record` sees every
/// trace record as it is logged. On a training failure the last good state,
/// the network and an `aborted` summary are still written before the error
/// is returned.
pub fn run_experiment(res: &ResolvedExperiment, dir: &Path, on_record: impl FnMut(&crate::trainer::TraceRecord)) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    let digest = write_resolved_config(res, dir)?;
    let out = match res.algorithm {
        Algorithm::SemiDiscrete { steps } => run_semidiscrete(res, dir, steps, digest.clone()),
        _ => run_trainer(res, dir, digest.clone(), on_record),
    };
    let mut names = artifact_names(dir)?;
    if dir.join(STATE_FILE).exists() {
        names.push(STATE_FILE.to_string());
    }
    Manifest::record(dir, &digest, &names)?;
    out
}

fn run_trainer(
    res: &ResolvedExperiment,
    dir: &Path,
    digest: String,
    mut on_record: impl FnMut(&crate::trainer::TraceRecord),
) -> Result<Summary> {
    let started = Instant::now();
    let cfg = &res.train;
    let u = Network::init(res.u_spec.clone(), stream_key(cfg.seed, Stream::Init, 0));
    let v = Network::init(res.phi_spec.clone(), stream_key(cfg.seed, Stream::TestNetwork, 0));
    let mut trainer = Trainer::with_networks(&res.problem, u, v, res.weight()?, cfg.clone())?;
    let initial_rel_error = trainer.relative_error()?;

    let mut trace = BufWriter::new(fs::File::create(dir.join(TRACE_FILE))?);
    writeln!(trace, "{TRACE_HEADER}")?;
    trace.flush()?;
    let save_state = |t: &Trainer| -> Result<()> {
        let saved = SavedState {
            config_digest: digest.clone(),
            state: t.checkpoint(),
        };
        write_json(&dir.join(STATE_FILE), &saved)?;
        save_checkpoint(dir.join(NETWORK_FILE), &t.state().u.spec, &t.state().u.params)
    };

    let mut failure = None;
    while !trainer.done() {
        let before = trainer.state().trace.len();
        if let Err(e) = trainer.step() {
            failure = Some(e);
            break;
        }
        for r in &trainer.state().trace.records[before..] {
            write_record(&mut trace, r)?;
            on_record(r);
        }
        trace.flush()?;
        let it = trainer.state().iteration;
        if res.checkpoint_every > 0 && it % res.checkpoint_every == 0 && !trainer.done() {
            save_state(&trainer)?;
        }
    }
    save_state(&trainer)?;
    let final_rel_error = trainer.relative_error()?;
    let summary = Summary {
        experiment: res.name.clone(),
        algorithm: res.algorithm,
        status: if failure.is_some() { RunStatus::Aborted } else { RunStatus::Completed },
        iterations: trainer.state().iteration,
        seconds: started.elapsed().as_secs_f64(),
        initial_rel_error,
        final_rel_error,
        reported_error: res.reported_error,
        config_digest: digest,
        error: failure.as_ref().map(|e| e.to_string()),
        step_errors: None,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

fn run_semidiscrete(res: &ResolvedExperiment, dir: &Path, steps: usize, digest: String) -> Result<Summary> {
    let started = Instant::now();
    let mut summary = Summary {
        experiment: res.name.clone(),
        algorithm: res.algorithm,
        status: RunStatus::Completed,
        iterations: 0,
        seconds: 0.0,
        initial_rel_error: None,
        final_rel_error: None,
        reported_error: res.reported_error,
        config_digest: digest,
        error: None,
        step_errors: None,
    };
    match run_wan_semidiscrete(&res.problem, res.u_spec.clone(), res.phi_spec.clone(), &res.train, steps) {
        Ok(out) => {
            out.trace.write_csv(BufWriter::new(fs::File::create(dir.join(TRACE_FILE))?))?;
            for (n, net) in out.networks.iter().enumerate() {
                save_checkpoint(dir.join(format!("u_step{:03}.wanprm", n + 1)), &net.spec, &net.params)?;
            }
            if let Some(last) = out.networks.last() {
                save_checkpoint(dir.join(NETWORK_FILE), &last.spec, &last.params)?;
            }
            summary.iterations = steps * res.train.max_iterations;
            summary.final_rel_error = out.step_errors.last().copied().flatten();
            summary.step_errors = Some(out.step_errors);
            summary.seconds = started.elapsed().as_secs_f64();
            write_json(&dir.join(SUMMARY_FILE), &summary)?;
            Ok(summary)
        }
        Err(e) => {
            summary.status = RunStatus::Aborted;
            summary.error = Some(e.to_string());
            summary.seconds = started.elapsed().as_secs_f64();
            write_json(&dir.join(SUMMARY_FILE), &summary)?;
            Err(e)
        }
    }
}

/// Files written by [`export`].
#[derive(Debug, Clone)]
pub struct ExportOutcome {
    pub files: Vec<PathBuf>,
    pub slice: Slice,
    pub error_slice: Option<Slice>,
}

/// Looks for the resolved config next to a network checkpoint.
pub fn config_beside(checkpoint: &Path) -> PathBuf {
    checkpoint.parent().unwrap_or_else(|| Path::new(".")).join(CONFIG_FILE)
}

/// Writes `slice.csv` / `slice.grid` for the network in `checkpoint`, and
/// `error_slice.csv` / `error_slice.grid` when the problem has an exact
/// solution.
pub fn export(checkpoint: &Path, res: &ResolvedExperiment, spec: &SliceSpec, out_dir: &Path) -> Result<ExportOutcome> {
    let (net_spec, params) = load_checkpoint(checkpoint)?;
    let net = Network::new(net_spec, params)?;
    let domain = res.network_domain();
    if net.input_dim() != domain.input_dim() {
        return Err(WanError::DimensionMismatch {
            context: "checkpoint input dimension",
            expected: domain.input_dim(),
            got: net.input_dim(),
        });
    }
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut write = |stem: &str, s: &Slice| -> Result<()> {
        let csv = out_dir.join(format!("{stem}.csv"));
        let grid = out_dir.join(format!("{stem}.grid"));
        let mut w = BufWriter::new(fs::File::create(&csv)?);
        s.write_csv(&mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(fs::File::create(&grid)?);
        s.write_grid(&mut w)?;
        w.flush()?;
        files.push(csv);
        files.push(grid);
        Ok(())
    };
    let slice = export_slice(&net, &domain, spec)?;
    write("slice", &slice)?;
    let error_slice = match res.network_exact() {
        Some(exact) => {
            let s = export_error_slice(&net, &exact, &domain, spec)?;
            write("error_slice", &s)?;
            Some(s)
        }
        None => None,
    };
    let names: Vec<String> = files
        .iter()
        .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    Manifest::record(out_dir, &res.digest(), &names)?;
    Ok(ExportOutcome {
        files,
        slice,
        error_slice,
    })
}

/// Parses a slice description such as `x1,x2` or `x1,x3:x2=0.25,t=1`:
/// two free axes, then optional fixed values. Coordinates are `x1..xd` and
/// `t`. Unlisted coordinates sit at the middle of the bounding box, time at
/// its horizon.
pub fn parse_slice(text: &str, domain: &Domain, resolution: usize) -> Result<SliceSpec> {
    let d = domain.spatial_dim();
    let index = |name: &str| -> Result<usize> {
        let name = name.trim();
        if name == "t" {
            return if domain.is_time_dependent() {
                Ok(d)
            } else {
                Err(WanError::config("slice names `t` but the domain has no time axis"))
            };
        }
        match name.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()) {
            Some(k) if (1..=d).contains(&k) => Ok(k - 1),
            _ => Err(WanError::config(format!("bad slice coordinate `{name}` (expected x1..x{d} or t)"))),
        }
    };
    let (axes, fixed_part) = match text.split_once(':') {
        Some((a, f)) => (a, Some(f)),
        None => (text, None),
    };
    let names: Vec<&str> = axes.split(',').collect();
    if names.len() != 2 {
        return Err(WanError::config(format!("slice `{text}` must name exactly two free axes")));
    }
    let axes = (index(names[0])?, index(names[1])?);
    if axes.0 == axes.1 {
        return Err(WanError::config("slice axes must differ"));
    }
    let (lo, hi) = domain.bounds();
    let mut fixed: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    if let Some(t) = domain.t_end() {
        fixed.push(t);
    }
    for item in fixed_part.into_iter().flat_map(|f| f.split(',')).filter(|s| !s.trim().is_empty()) {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| WanError::config(format!("bad slice assignment `{item}` (expected name=value)")))?;
        let k = index(name)?;
        if k == axes.0 || k == axes.1 {
            return Err(WanError::config(format!("`{}` is a free axis and cannot be fixed", name.trim())));
        }
        fixed[k] = value
            .trim()
            .parse()
            .map_err(|_| WanError::config(format!("bad slice value `{}`", value.trim())))?;
    }
    if resolution < 2 {
        return Err(WanError::config("slice resolution must be at least 2"));
    }
    Ok(SliceSpec {
        fixed,
        axes,
        resolution,
        extent: None,
    })
}

/// Run size for `reproduce`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Printed settings.
    Paper,
    /// Reduced settings that finish in minutes on one core.
    Desk,
}

impl std::str::FromStr for Scale {
    type Err = WanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(WanError::config(format!("unknown scale `{other}` (expected desk or paper)"))),
        }
    }
}

pub const REPRODUCE_IDS: [&str; 10] = [
    "nonsmooth",
    "smooth_poisson",
    "nonl_cube",
    "neum_cube",
    "poisson_l",
    "exp_parabolic_cn",
    "exp_parabolic_st",
    "scalability",
    "sample_sweep",
    "architecture_sweep",
];

/// Desk-scale reduction of one library problem.
#[derive(Debug, Clone, Copy)]
pub struct DeskScaling {
    pub layers: usize,
    pub width: usize,
    pub n_interior: usize,
    /// Boundary points per face; `None` keeps the printed count.
    pub boundary_per_face: Option<usize>,
    pub iterations: usize,
}

/// Desk settings per reproduce id (d = 5 unless noted).
pub fn desk_scaling(id: &str, d: usize) -> DeskScaling {
    let base = DeskScaling {
        layers: 4,
        width: 20,
        n_interior: 2000,
        boundary_per_face: Some(20),
        iterations: 2000,
    };
    match id {
        "nonsmooth" => DeskScaling {
            n_interior: 4000,
            boundary_per_face: None,
            iterations: 10_000,
            ..base
        },
        "neum_cube" => DeskScaling { iterations: 600, ..base },
        "exp_parabolic_cn" => DeskScaling {
            n_interior: 1000,
            iterations: 200,
            ..base
        },
        "scalability" => DeskScaling {
            n_interior: 400 * d,
            boundary_per_face: Some(2 * d),
            iterations: 200,
            ..base
        },
        "sample_sweep" | "architecture_sweep" => DeskScaling { iterations: 500, ..base },
        _ => base,
    }
}

/// Applies a desk reduction to a resolved experiment. A boundary weight
/// printed per boundary point (`α = c × N_b`, likewise γ) keeps its
/// per-point value when `N_b` changes.
pub fn scale_down(res: &mut ResolvedExperiment, s: &DeskScaling) -> Result<()> {
    res.u_spec = NetworkOverride::scaled(s.layers, s.width).apply(&res.u_spec)?;
    res.phi_spec = NetworkOverride::scaled(s.layers, s.width).apply(&res.phi_spec)?;
    let t = &mut res.train;
    t.n_interior = s.n_interior;
    t.max_iterations = s.iterations;
    if let Some(per_face) = s.boundary_per_face {
        let n_b = per_face * res.problem.domain.face_count();
        let printed_per_point = library_entry(&res.name).map(|e| e.alpha_printed.contains("N_b")).unwrap_or(false);
        if printed_per_point {
            let ratio = n_b as f64 / t.n_boundary as f64;
            t.alpha *= ratio;
            t.gamma *= ratio;
        }
        t.n_boundary = n_b;
        if t.n_initial > 0 {
            t.n_initial = n_b;
        }
    }
    res.train.validate(res.algorithm == Algorithm::SpaceTime)
}

/// One run of a reproduction, with the label used for its subdirectory.
#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub label: String,
    pub experiment: ResolvedExperiment,
}

fn named_run(label: String, problem: &str, scale: Scale, id: &str, edit: impl FnOnce(&mut ResolvedExperiment)) -> Result<PlannedRun> {
    let mut r = resolve(&ExperimentConfig::named(problem))?;
    if scale == Scale::Desk {
        let s = desk_scaling(id, r.problem.spatial_dim());
        scale_down(&mut r, &s)?;
    }
    edit(&mut r);
    r.train.validate(r.algorithm == Algorithm::SpaceTime)?;
    Ok(PlannedRun { label, experiment: r })
}

/// The runs behind a reproduce id.
pub fn reproduce_plan(id: &str, scale: Scale) -> Result<Vec<PlannedRun>> {
    let dims = |paper: &[usize], desk: &[usize]| -> Vec<usize> {
        match scale {
            Scale::Paper => paper.to_vec(),
            Scale::Desk => desk.to_vec(),
        }
    };
    let single = |problem: &str| named_run(problem.to_string(), problem, scale, id, |_| {});
    let per_dim = |prefix: &str, ds: Vec<usize>| -> Result<Vec<PlannedRun>> {
        ds.into_iter().map(|d| single(&format!("{prefix}_d{d}"))).collect()
    };
    match id {
        "nonsmooth" => Ok(vec![single("eq_weak")?]),
        "smooth_poisson" => Ok(vec![single("smooth_poisson_d5")?]),
        "nonl_cube" => per_dim("nonl_cube", dims(&[5, 10, 15, 20, 25], &[5])),
        "neum_cube" => per_dim("neum_cube", dims(&[5, 10], &[5])),
        "poisson_l" => per_dim("poisson_l", dims(&[5, 10], &[5])),
        "exp_parabolic_cn" => Ok(vec![single("exp_parabolic_cn_d5")?]),
        "exp_parabolic_st" => per_dim("exp_parabolic_st", dims(&[5, 10], &[5])),
        "scalability" => dims(&[5, 10, 15, 20, 25], &[5, 10, 15])
            .into_iter()
            .map(|d| {
                let p = format!("nonl_cube_d{d}");
                named_run(p.clone(), &p, scale, id, |r| {
                    if scale == Scale::Paper {
                        r.train.target_error = Some(0.01);
                    }
                })
            })
            .collect(),
        "sample_sweep" => {
            let d = 5;
            let combos: Vec<(usize, usize)> = match scale {
                Scale::Paper => {
                    let mut c = Vec::new();
                    for n_r in [500, 16_000] {
                        for per_face in [5, 10, 20, 40] {
                            c.push((n_r, per_face));
                        }
                    }
                    for per_face in [5, 20] {
                        for n_r in [500, 2000, 4000, 8000, 16_000] {
                            if !c.contains(&(n_r, per_face)) {
                                c.push((n_r, per_face));
                            }
                        }
                    }
                    c
                }
                Scale::Desk => vec![(500, 5), (500, 20), (2000, 5), (2000, 20)],
            };
            combos
                .into_iter()
                .map(|(n_r, per_face)| {
                    named_run(format!("nr{n_r}_nb{}", 2 * d * per_face), "nonl_cube_d5", scale, id, |r| {
                        let n_b = 2 * d * per_face;
                        r.train.alpha *= n_b as f64 / r.train.n_boundary as f64;
                        r.train.n_interior = n_r;
                        r.train.n_boundary = n_b;
                        r.train.k_u = 2;
                        r.train.k_phi = 1;
                        r.train.tau_theta = 0.015;
                        r.train.tau_eta = 0.04;
                        if scale == Scale::Paper {
                            r.train.target_error = Some(0.01);
                        }
                    })
                })
                .collect()
        }
        "architecture_sweep" => {
            let combos: Vec<(usize, usize)> = match scale {
                Scale::Paper => {
                    let mut c = Vec::new();
                    for layers in [3, 9] {
                        for width in [5, 10, 20, 40] {
                            c.push((layers, width));
                        }
                    }
                    for width in [10, 20] {
                        for layers in [3, 5, 7, 9] {
                            if !c.contains(&(layers, width)) {
                                c.push((layers, width));
                            }
                        }
                    }
                    c
                }
                Scale::Desk => vec![(3, 5), (3, 20), (6, 10), (6, 20)],
            };
            combos
                .into_iter()
                .map(|(layers, width)| {
                    named_run(format!("l{layers}_w{width}"), "nonl_cube_d5", scale, id, |r| {
                        let spec = NetworkOverride::scaled(layers, width).apply(&r.u_spec);
                        r.u_spec = spec.expect("positive layer sizes");
                        if scale == Scale::Paper {
                            r.train.target_error = Some(0.01);
                        }
                    })
                })
                .collect()
        }
        other => Err(WanError::UnknownExperiment {
            id: other.to_string(),
            valid: REPRODUCE_IDS.join(", "),
        }),
    }
}

/// One row of the observed-vs-published table.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub problem: String,
    pub dim: usize,
    pub iterations: usize,
    pub seconds: f64,
    pub observed_error: Option<f64>,
    pub reported_error: Option<f64>,
    pub status: RunStatus,
}

impl ComparisonRow {
    pub fn new(run: &PlannedRun, summary: &Summary) -> Self {
        Self {
            label: run.label.clone(),
            problem: run.experiment.name.clone(),
            dim: run.experiment.problem.spatial_dim(),
            iterations: summary.iterations,
            seconds: summary.seconds,
            observed_error: summary.final_rel_error,
            reported_error: summary.reported_error,
            status: summary.status,
        }
    }
}

const COMPARISON_HEADER: &str = "label,problem,d,iterations,seconds,observed_error,reported_error,status";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut w: W) -> Result<()> {
    writeln!(w, "{COMPARISON_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.3},{},{},{}",
            r.label,
            r.problem,
            r.dim,
            r.iterations,
            r.seconds,
            opt(r.observed_error),
            opt(r.reported_error),
            match r.status {
                RunStatus::Completed => "completed",
                RunStatus::Aborted => "aborted",
            }
        )?;
    }
    Ok(())
}

/// Fixed-width text rendering of the comparison table.
pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let pct = |v: Option<f64>| v.map(|x| format!("{:.2}%", 100.0 * x)).unwrap_or_else(|| "-".into());
    let mut s = format!(
        "{:<24} {:>3} {:>10} {:>10} {:>10} {:>10}\n",
        "run", "d", "iters", "seconds", "observed", "published"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<24} {:>3} {:>10} {:>10.1} {:>10} {:>10}{}\n",
            r.label,
            r.dim,
            r.iterations,
            r.seconds,
            pct(r.observed_error),
            pct(r.reported_error),
            if r.status == RunStatus::Aborted { "  (aborted)" } else { "" }
        ));
    }
    s
}

#[cfg(test)]
mod tests;
