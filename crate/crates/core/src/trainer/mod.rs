//! Alternating descent–ascent training loops.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WanError};
use crate::eval::EvalSet;
use crate::field::ScalarField;
use crate::geometry::CollocationBatch;
use crate::network::{MlpSpec, Network};
use crate::objective::{BoundaryWeight, ErrorForm, IntForm, LossBreakdown, LossContext, LossSettings};
use crate::optim::{AdamHyper, Optimizer, OptimizerKind};
use crate::problem::{crank_nicolson_subproblem, GradientField, PdeProblem};
use crate::rng::{stream_key, Stream};

fn default_one() -> usize {
    1
}

fn default_log_every() -> usize {
    100
}

fn default_theta_form() -> IntForm {
    IntForm::Direct
}

fn default_boundary_form() -> ErrorForm {
    ErrorForm::Squared
}

fn default_adagrad() -> OptimizerKind {
    OptimizerKind::Adagrad
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k_u: usize,
    pub k_phi: usize,
    pub tau_theta: f64,
    pub tau_eta: f64,
    pub n_interior: usize,
    pub n_boundary: usize,
    #[serde(default)]
    pub n_initial: usize,
    pub alpha: f64,
    #[serde(default)]
    pub gamma: f64,
    pub max_iterations: usize,
    /// Outer iterations between fresh batches.
    #[serde(default = "default_one")]
    pub resample_every: usize,
    #[serde(default = "default_adagrad")]
    pub u_optimizer: OptimizerKind,
    #[serde(default = "default_adagrad")]
    pub phi_optimizer: OptimizerKind,
    #[serde(default)]
    pub adam: AdamHyper,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_theta_form")]
    pub theta_form: IntForm,
    #[serde(default = "default_boundary_form")]
    pub boundary_form: ErrorForm,
    /// Stop once the logged relative error drops below this value.
    #[serde(default)]
    pub target_error: Option<f64>,
    /// Seed of the evaluation point set; `seed` when absent.
    #[serde(default)]
    pub eval_seed: Option<u64>,
}

impl TrainConfig {
    pub fn validate(&self, parabolic: bool) -> Result<()> {
        let counts = [
            ("k_u", self.k_u),
            ("k_phi", self.k_phi),
            ("n_interior", self.n_interior),
            ("n_boundary", self.n_boundary),
            ("resample_every", self.resample_every),
            ("log_every", self.log_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(WanError::config(format!("{name} must be positive")));
            }
        }
        if parabolic && self.n_initial == 0 {
            return Err(WanError::config("n_initial must be positive for space-time training"));
        }
        for (name, v) in [("tau_theta", self.tau_theta), ("tau_eta", self.tau_eta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(WanError::config(format!("{name} must be positive")));
            }
        }
        if let Some(t) = self.target_error {
            if !(t > 0.0) {
                return Err(WanError::config("target_error must be positive"));
            }
        }
        self.settings().validate(parabolic)
    }

    pub fn settings(&self) -> LossSettings {
        LossSettings {
            alpha: self.alpha,
            gamma: self.gamma,
            theta_form: self.theta_form,
            boundary_form: self.boundary_form,
        }
    }
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Completed outer iterations.
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub rel_error: Option<f64>,
    pub seconds: f64,
    /// Key of the interior stream the logged batch came from.
    pub seed_digest: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

/// Column order of the trace CSV.
pub const TRACE_HEADER: &str = "iteration,L_int,L_bdry,L_init,total,pairing,test_norm,rel_error,seconds";

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Writes the header and all records. A missing error is left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            write_record(&mut w, r)?;
        }
        Ok(())
    }

    /// Appends `other` with iteration indices shifted past this trace.
    fn extend_shifted(&mut self, other: TrainTrace, iteration_offset: usize, seconds_offset: f64) {
        for mut r in other.records {
            r.iteration += iteration_offset;
            r.seconds += seconds_offset;
            self.records.push(r);
        }
    }
}

pub fn write_record<W: Write>(w: &mut W, r: &TraceRecord) -> Result<()> {
    let l = &r.loss;
    let err = r.rel_error.map(|e| e.to_string()).unwrap_or_default();
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{}",
        r.iteration, l.l_int, l.l_bdry, l.l_init, l.total, l.pairing, l.test_norm, err, r.seconds
    )?;
    Ok(())
}

/// What happened inside the loop, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoopEvent {
    Sample { iteration: usize, batch: u64 },
    Theta { iteration: usize },
    Eta { iteration: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopCounters {
    pub batches: usize,
    #[serde(default)]
    pub last_batch: Option<u64>,
    pub theta_updates: usize,
    pub eta_updates: usize,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub u: Network,
    pub v: Network,
    pub weight: BoundaryWeight,
    pub u_opt: Optimizer,
    pub v_opt: Optimizer,
    /// Completed outer iterations.
    pub iteration: usize,
    /// Wall-clock seconds spent before this state was saved.
    pub seconds: f64,
    pub trace: TrainTrace,
    pub counters: LoopCounters,
}

impl TrainState {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

/// Algorithm-1 style loop shared by the static and space-time solvers:
/// per outer iteration, (re)sample, `K_u` descent steps on θ, then `K_φ`
/// ascent steps on η.
pub struct Trainer<'a> {
    problem: &'a PdeProblem,
    config: TrainConfig,
    state: TrainState,
    eval: Option<EvalSet>,
    batch: Option<(u64, CollocationBatch)>,
    started: Instant,
    events: Option<Vec<LoopEvent>>,
}

impl<'a> Trainer<'a> {
    /// Fresh networks initialized from `config.seed`, with the analytic
    /// boundary weight.
    pub fn new(problem: &'a PdeProblem, u_spec: MlpSpec, phi_spec: MlpSpec, config: TrainConfig) -> Result<Self> {
        let u = Network::init(u_spec, stream_key(config.seed, Stream::Init, 0));
        let v = Network::init(phi_spec, stream_key(config.seed, Stream::TestNetwork, 0));
        let weight = BoundaryWeight::Analytic {
            domain: problem.domain.clone(),
        };
        Self::with_networks(problem, u, v, weight, config)
    }

    pub fn with_networks(problem: &'a PdeProblem, u: Network, v: Network, weight: BoundaryWeight, config: TrainConfig) -> Result<Self> {
        let u_opt = Optimizer::with_hyper(config.u_optimizer, u.params.len(), config.adam);
        let v_opt = Optimizer::with_hyper(config.phi_optimizer, v.params.len(), config.adam);
        let state = TrainState {
            u,
            v,
            weight,
            u_opt,
            v_opt,
            iteration: 0,
            seconds: 0.0,
            trace: TrainTrace::default(),
            counters: LoopCounters::default(),
        };
        Self::resume(problem, state, config)
    }

    /// Continues from a saved state.
    pub fn resume(problem: &'a PdeProblem, state: TrainState, config: TrainConfig) -> Result<Self> {
        problem.validate()?;
        config.validate(problem.is_parabolic())?;
        let dim = problem.input_dim();
        for (net, what) in [(&state.u, "solution network input"), (&state.v, "test network input")] {
            if net.input_dim() != dim {
                return Err(WanError::DimensionMismatch {
                    context: what,
                    expected: dim,
                    got: net.input_dim(),
                });
            }
        }
        let eval = match &problem.exact {
            Some(exact) => {
                let mut set = crate::eval::build_eval_set(&problem.domain, config.eval_seed.unwrap_or(config.seed))?;
                set.attach_exact(exact)?;
                Some(set)
            }
            None => None,
        };
        Ok(Self {
            problem,
            config,
            state,
            eval,
            batch: None,
            started: Instant::now(),
            events: None,
        })
    }

    /// Starts recording [`LoopEvent`]s.
    pub fn record_events(&mut self) {
        self.events = Some(Vec::new());
    }

    pub fn events(&self) -> &[LoopEvent] {
        self.events.as_deref().unwrap_or(&[])
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Snapshot with the elapsed time folded in.
    pub fn checkpoint(&self) -> TrainState {
        let mut s = self.state.clone();
        s.seconds = self.seconds();
        s
    }

    pub fn into_state(self) -> TrainState {
        self.checkpoint()
    }

    fn seconds(&self) -> f64 {
        self.state.seconds + self.started.elapsed().as_secs_f64()
    }

    fn event(&mut self, e: LoopEvent) {
        if let Some(ev) = &mut self.events {
            ev.push(e);
        }
    }

    /// Relative error of the current solution on the evaluation set.
    pub fn relative_error(&self) -> Result<Option<f64>> {
        self.eval.as_ref().map(|s| s.relative_error(&self.state.u)).transpose()
    }

    /// Makes the batch used by outer iteration `iteration` current.
    fn batch_for(&mut self, iteration: usize) -> Result<&CollocationBatch> {
        let index = (iteration / self.config.resample_every) as u64;
        if self.batch.as_ref().map(|(i, _)| *i) != Some(index) {
            let c = &self.config;
            let n_initial = if self.problem.is_parabolic() { c.n_initial } else { 0 };
            let batch = CollocationBatch::sample(&self.problem.domain, c.n_interior, c.n_boundary, n_initial, c.seed, index)?;
            self.batch = Some((index, batch));
            // A resumed run redraws its current batch without counting it.
            if self.state.counters.last_batch != Some(index) {
                self.state.counters.batches += 1;
                self.state.counters.last_batch = Some(index);
                self.event(LoopEvent::Sample { iteration, batch: index });
            }
        }
        Ok(&self.batch.as_ref().expect("batch drawn above").1)
    }

    /// One outer iteration. On failure the state is rolled back to the start
    /// of the iteration.
    pub fn step(&mut self) -> Result<()> {
        let snapshot = (self.state.u.clone(), self.state.v.clone(), self.state.u_opt.clone(), self.state.v_opt.clone());
        let events_len = self.events.as_ref().map(Vec::len);
        let counters = self.state.counters.clone();
        if let Err(e) = self.step_inner() {
            (self.state.u, self.state.v, self.state.u_opt, self.state.v_opt) = snapshot;
            self.state.counters = counters;
            if let (Some(ev), Some(n)) = (&mut self.events, events_len) {
                ev.truncate(n);
            }
            return Err(WanError::TrainingAborted {
                iteration: self.state.iteration,
                source: Box::new(e),
            });
        }
        self.state.iteration += 1;
        let it = self.state.iteration;
        if it % self.config.log_every == 0 || it == self.config.max_iterations {
            self.log()?;
        }
        Ok(())
    }

    fn step_inner(&mut self) -> Result<()> {
        let iteration = self.state.iteration;
        self.batch_for(iteration)?;
        let settings = self.config.settings();
        let (k_u, k_phi) = (self.config.k_u, self.config.k_phi);
        let (tau_theta, tau_eta) = (self.config.tau_theta, self.config.tau_eta);
        let batch = &self.batch.as_ref().expect("batch drawn above").1;
        let ctx = LossContext::new(self.problem, batch, &self.state.weight)?;
        let mut new_events = Vec::new();

        let ve = ctx.eval_v(&self.state.v)?;
        for _ in 0..k_u {
            let (_, g) = ctx.theta_gradient(&self.state.u, &ve, &settings)?;
            self.state.u_opt.descend(&mut self.state.u.params.0, &g, tau_theta)?;
            self.state.counters.theta_updates += 1;
            new_events.push(LoopEvent::Theta { iteration });
        }
        let ue = ctx.eval_u(&self.state.u)?;
        for _ in 0..k_phi {
            let (_, g) = ctx.eta_gradient(&ue, &self.state.v)?;
            self.state.v_opt.ascend(&mut self.state.v.params.0, &g, tau_eta)?;
            self.state.counters.eta_updates += 1;
            new_events.push(LoopEvent::Eta { iteration });
        }
        for e in new_events {
            self.event(e);
        }
        Ok(())
    }

    /// Loss breakdown of the current networks on the batch of outer
    /// iteration `iteration`, with that batch's stream key.
    pub fn breakdown_at(&mut self, iteration: usize) -> Result<(LossBreakdown, u64)> {
        self.batch_for(iteration)?;
        let batch = &self.batch.as_ref().expect("batch drawn above").1;
        let ctx = LossContext::new(self.problem, batch, &self.state.weight)?;
        let b = ctx.breakdown(&ctx.eval_u(&self.state.u)?, &ctx.eval_v(&self.state.v)?, &self.config.settings())?;
        Ok((b, batch.seed_digest))
    }

    fn log(&mut self) -> Result<()> {
        // Losses are reported on the batch of the iteration just completed.
        let (loss, digest) = self.breakdown_at(self.state.iteration - 1)?;
        let rel_error = self.relative_error()?;
        let record = TraceRecord {
            iteration: self.state.iteration,
            loss,
            rel_error,
            seconds: self.seconds(),
            seed_digest: digest,
        };
        self.state.trace.records.push(record);
        Ok(())
    }

    fn target_reached(&self) -> bool {
        match (self.config.target_error, self.state.trace.last()) {
            (Some(t), Some(r)) => r.iteration == self.state.iteration && r.rel_error.is_some_and(|e| e < t),
            _ => false,
        }
    }

    /// True once the iteration budget is spent or the target error was hit.
    pub fn done(&self) -> bool {
        self.state.iteration >= self.config.max_iterations || self.target_reached()
    }

    /// Runs until [`done`](Self::done). `on_record` sees every new trace record.
    pub fn run_with(&mut self, mut on_record: impl FnMut(&TraceRecord)) -> Result<()> {
        while !self.done() {
            let before = self.state.trace.len();
            self.step()?;
            for r in &self.state.trace.records[before..] {
                on_record(r);
            }
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| {})
    }
}

/// Static solver: returns the trained solution network and its trace.
pub fn run_wan(problem: &PdeProblem, u_spec: MlpSpec, phi_spec: MlpSpec, config: &TrainConfig) -> Result<(Network, TrainTrace)> {
    if problem.is_parabolic() {
        return Err(WanError::config("run_wan expects a static problem"));
    }
    let mut t = Trainer::new(problem, u_spec, phi_spec, config.clone())?;
    t.run()?;
    let s = t.into_state();
    Ok((s.u, s.trace))
}

/// Space-time solver on `Ω × [0, T]`; both networks take `(x, t)`.
pub fn run_wan_spacetime(problem: &PdeProblem, u_spec: MlpSpec, phi_spec: MlpSpec, config: &TrainConfig) -> Result<(Network, TrainTrace)> {
    if !problem.is_parabolic() {
        return Err(WanError::config("space-time training expects a parabolic problem"));
    }
    let mut t = Trainer::new(problem, u_spec, phi_spec, config.clone())?;
    t.run()?;
    let s = t.into_state();
    Ok((s.u, s.trace))
}

/// Output of the semi-discrete solver.
#[derive(Debug, Clone)]
pub struct SemiDiscreteResult {
    /// `u(·, t_n)` for `n = 1..=N`.
    pub networks: Vec<Network>,
    /// Per-step traces concatenated; iterations count across steps.
    pub trace: TrainTrace,
    /// Final-iteration relative error of each step against `u*(·, t_n)`.
    pub step_errors: Vec<Option<f64>>,
}

/// Crank–Nicolson in time with one static solve per step. Each step starts
/// from the previous step's networks; the first from a fresh initialization.
pub fn run_wan_semidiscrete(
    problem: &PdeProblem,
    u_spec: MlpSpec,
    phi_spec: MlpSpec,
    config: &TrainConfig,
    steps: usize,
) -> Result<SemiDiscreteResult> {
    problem.validate()?;
    let t_end = problem
        .domain
        .t_end()
        .ok_or_else(|| WanError::config("semi-discrete training expects a parabolic problem"))?;
    if steps == 0 {
        return Err(WanError::config("the number of time steps must be at least 1"));
    }
    let d = problem.spatial_dim();
    if u_spec.input_dim != d || phi_spec.input_dim != d {
        return Err(WanError::DimensionMismatch {
            context: "semi-discrete networks take spatial inputs",
            expected: d,
            got: u_spec.input_dim,
        });
    }
    let h = t_end / steps as f64;
    let initial: ScalarField = problem.initial.clone().expect("validated parabolic problem");
    let mut prev: Arc<dyn GradientField> = Arc::new(initial);
    let mut warm: Option<(Network, Network)> = None;
    let mut out = SemiDiscreteResult {
        networks: Vec::with_capacity(steps),
        trace: TrainTrace::default(),
        step_errors: Vec::with_capacity(steps),
    };
    let mut seconds = 0.0;
    for n in 0..steps {
        let wrap = |e: WanError| WanError::TimeStep { step: n, source: Box::new(e) };
        let sub = crank_nicolson_subproblem(problem, prev.clone(), n as f64 * h, h).map_err(wrap)?;
        let mut cfg = config.clone();
        cfg.seed = stream_key(config.seed, Stream::Misc, n as u64);
        cfg.eval_seed = Some(config.eval_seed.unwrap_or(config.seed));
        let mut trainer = match warm.take() {
            None => Trainer::new(&sub, u_spec.clone(), phi_spec.clone(), cfg),
            Some((u, v)) => {
                let weight = BoundaryWeight::Analytic { domain: sub.domain.clone() };
                Trainer::with_networks(&sub, u, v, weight, cfg)
            }
        }
        .map_err(wrap)?;
        trainer.run().map_err(wrap)?;
        let err = trainer.relative_error().map_err(wrap)?;
        let state = trainer.into_state();
        out.trace
            .extend_shifted(state.trace, n * config.max_iterations, seconds);
        seconds += state.seconds;
        out.step_errors.push(err);
        prev = Arc::new(state.u.clone());
        out.networks.push(state.u.clone());
        warm = Some((state.u, state.v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
