//! Replicated experiments, aggregation and output files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use fmdpu_core::agent::AgentParams;
use fmdpu_core::expert::{ExpertParams, Oracle};
use fmdpu_core::fmdp::Fmdp;
use fmdpu_core::model::{ActionSet, Awareness, PartialState, VarSet};
use fmdpu_core::sim::{SimConfig, SimError, Simulation};
use fmdpu_core::svi::{greedy_policy, FlatModel, SviError};
use fmdpu_core::tree::render;
use fmdpu_core::sim::Variant;

use crate::config::ExperimentConfig;
use crate::domain::{parse_domain, DomainError};

/// Discount applied to the cumulative reward metric.
pub const METRIC_DISCOUNT: f64 = 0.99;
/// Largest state space evaluated exactly.
pub const FLAT_LIMIT: usize = 1 << 14;
/// Convergence tolerance of the expert's value iteration.
pub const ORACLE_TOL: f64 = 1e-6;
/// Policy error regarded as converged when counting steps to threshold.
pub const ERROR_THRESHOLD: f64 = 0.15;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Domain { path: String, source: DomainError },
    #[error("configuration: {0}")]
    Config(String),
    #[error("planning the true model failed: {0}")]
    Oracle(#[from] SviError),
    #[error("replica {replica} (seed {seed}) failed: {source}")]
    Replica { replica: usize, seed: u64, source: SimError },
    #[error("cannot write output: {0}")]
    Output(String),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io { .. } | HarnessError::Domain { .. } | HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Exact evaluation data for small domains.
#[derive(Debug)]
pub struct FlatFacts {
    pub model: FlatModel,
    pub v_opt: Vec<f64>,
}

/// A loaded domain with everything replicas share read-only.
#[derive(Debug, Clone)]
pub struct Domain {
    pub model: Arc<Fmdp>,
    pub oracle: Arc<Oracle>,
    pub starts: Arc<Vec<PartialState>>,
    pub flat: Option<Arc<FlatFacts>>,
}

impl Domain {
    pub fn new(model: Fmdp) -> Result<Self, HarnessError> {
        let model = Arc::new(model);
        let oracle = Arc::new(Oracle::new(model.clone(), ORACLE_TOL)?);
        let starts = Arc::new(model.start_states());
        let n: usize = model.vars.cards().iter().product();
        let flat = (n <= FLAT_LIMIT).then(|| {
            let fm = FlatModel::from_fmdp(&model);
            let v_opt = fm.value_iteration(1e-12);
            Arc::new(FlatFacts { model: fm, v_opt })
        });
        Ok(Domain { model, oracle, starts, flat })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
        let model = parse_domain(&text)
            .map_err(|source| HarnessError::Domain { path: path.display().to_string(), source })?;
        Self::new(model)
    }

    /// Exact policy error of a stochastic policy given per complete state.
    pub fn policy_error(&self, policy: impl Fn(&PartialState) -> Vec<f64>) -> Option<f64> {
        let f = self.flat.as_ref()?;
        let probs: Vec<Vec<f64>> = (0..f.model.num_states()).map(|i| policy(&f.model.state(i))).collect();
        let v = f.model.evaluate(&probs, 1e-10);
        Some(f.model.policy_error(&f.v_opt, &v))
    }
}

/// One row of the trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub step: u64,
    pub episode: u64,
    pub reward: f64,
    pub rdisc: f64,
    pub err_approx: f64,
    pub vars_aware: usize,
    pub actions_aware: usize,
    pub advice_count: u64,
    pub query_count: u64,
}

pub const TRACE_HEADER: [&str; 9] = [
    "step",
    "episode",
    "reward",
    "rdisc",
    "errApprox",
    "numVarsAware",
    "numActionsAware",
    "adviceCount",
    "queryCount",
];

/// Trace as CSV text.
pub fn write_trace(rows: &[Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).unwrap();
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.episode.to_string(),
            r.reward.to_string(),
            r.rdisc.to_string(),
            r.err_approx.to_string(),
            r.vars_aware.to_string(),
            r.actions_aware.to_string(),
            r.advice_count.to_string(),
            r.query_count.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Parses a trace written by [`write_trace`].
pub fn read_trace(text: &str) -> Result<Vec<Row>, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(str::to_owned).collect();
    if header != TRACE_HEADER {
        return Err("unexpected header".into());
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let f = |i: usize| rec.get(i).unwrap_or("").to_owned();
        let num = |i: usize| f(i).parse::<f64>().map_err(|e| e.to_string());
        let int = |i: usize| f(i).parse::<u64>().map_err(|e| e.to_string());
        rows.push(Row {
            step: int(0)?,
            episode: int(1)?,
            reward: num(2)?,
            rdisc: num(3)?,
            err_approx: num(4)?,
            vars_aware: int(5)? as usize,
            actions_aware: int(6)? as usize,
            advice_count: int(7)?,
            query_count: int(8)?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct ReplicaResult {
    pub replica: usize,
    pub rows: Vec<Row>,
    /// (step, episode) of every episode reset forced by the length cap.
    pub cutoffs: Vec<(u64, u64)>,
    /// (steps completed, exact policy error of the greedy policy).
    pub policy_errors: Vec<(u64, f64)>,
    pub final_policy_error: Option<f64>,
    pub final_awareness: Awareness,
    pub utterances: u64,
    /// Text dump of the final greedy policy.
    pub final_policy: String,
}

impl ReplicaResult {
    pub fn final_rdisc(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.rdisc)
    }

    pub fn final_err_approx(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.err_approx)
    }

    /// First evaluated step with policy error at or below `threshold`, if any.
    pub fn steps_to(&self, threshold: f64) -> Option<u64> {
        self.policy_errors.iter().find(|(_, e)| *e <= threshold).map(|(s, _)| *s)
    }
}

/// Resolves the configured initial awareness against the domain.
///
/// Unspecified variable and scope sets start empty; unspecified actions default to
/// the first declared action. The scope is always added to the variables.
pub fn initial_awareness(model: &Fmdp, cfg: &ExperimentConfig) -> Result<Awareness, HarnessError> {
    let vars = |names: &Option<Vec<String>>| -> Result<VarSet, HarnessError> {
        let mut s = VarSet::EMPTY;
        for n in names.iter().flatten() {
            let v = model.vars.by_name(n).ok_or_else(|| HarnessError::Config(format!("unknown variable {n}")))?;
            s.insert(v);
        }
        Ok(s)
    };
    let scope = vars(&cfg.initial_scope)?;
    let variables = vars(&cfg.initial_variables)?.union(scope);
    let actions: ActionSet = match &cfg.initial_actions {
        Some(names) => names
            .iter()
            .map(|n| model.action_by_name(n).ok_or_else(|| HarnessError::Config(format!("unknown action {n}"))))
            .collect::<Result<_, _>>()?,
        None => model.action_ids().take(1).collect(),
    };
    if actions.is_empty() {
        return Err(HarnessError::Config("initial action set is empty".into()));
    }
    Ok(Awareness { variables, actions, reward_scope: scope })
}

pub fn sim_config(model: &Fmdp, cfg: &ExperimentConfig) -> Result<SimConfig, HarnessError> {
    Ok(SimConfig {
        variant: cfg.variant.variant(),
        agent: AgentParams {
            epsilon: cfg.epsilon,
            rho: cfg.rho,
            k: cfg.k,
            max_in_degree: cfg.max_in_degree,
            conservative: cfg.variant.variant() != fmdpu_core::sim::Variant::NonConservative,
        },
        expert: ExpertParams { mu: cfg.mu, beta: cfg.beta(), kappa: cfg.kappa },
        initial: initial_awareness(model, cfg)?,
        cutoff: 10 * cfg.kappa,
    })
}

/// Environment and agent streams of replica `k`: streams 2k and 2k+1 of the master seed.
pub fn replica_rngs(seed: u64, k: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    env.set_stream(2 * k as u64);
    let mut agent = ChaCha8Rng::seed_from_u64(seed);
    agent.set_stream(2 * k as u64 + 1);
    (env, agent)
}

pub fn run_replica(domain: &Domain, cfg: &ExperimentConfig, k: usize) -> Result<ReplicaResult, HarnessError> {
    let fail = |source| HarnessError::Replica { replica: k, seed: cfg.seed, source };
    let sc = sim_config(&domain.model, cfg)?;
    let (env_rng, agent_rng) = replica_rngs(cfg.seed, k);
    let mut sim = Simulation::new(domain.oracle.clone(), domain.starts.clone(), sc, env_rng, agent_rng).map_err(fail)?;
    let mut rows = Vec::with_capacity(cfg.steps as usize);
    let mut cutoffs = Vec::new();
    let mut policy_errors = Vec::new();
    let mut rdisc = 0.0;
    for _ in 0..cfg.steps {
        let m = sim.step().map_err(fail)?;
        rdisc = m.reward + METRIC_DISCOUNT * rdisc;
        if m.cutoff {
            cutoffs.push((m.step, m.episode));
        }
        rows.push(Row {
            step: m.step,
            episode: m.episode,
            reward: m.reward,
            rdisc,
            err_approx: m.err_approx,
            vars_aware: m.vars_aware,
            actions_aware: m.actions_aware,
            advice_count: m.advice_count,
            query_count: m.query_count,
        });
        let done = m.step + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 {
            if let Some(e) = domain.policy_error(|s| sim.policy_probs(s)) {
                policy_errors.push((done, e));
            }
        }
    }
    let final_policy_error = domain.policy_error(|s| sim.policy_probs(s));
    Ok(ReplicaResult {
        replica: k,
        rows,
        cutoffs,
        policy_errors,
        final_policy_error,
        final_awareness: sim.awareness(),
        utterances: sim.expert().utterances(),
        final_policy: policy_text(&domain.model, &sim),
    })
}

fn state_text(model: &Fmdp, s: &PartialState) -> String {
    let parts: Vec<String> = s
        .assigned()
        .iter()
        .map(|v| {
            let d = model.vars.decl(v);
            format!("{}={}", d.name, d.domain[s.get(v).unwrap() as usize])
        })
        .collect();
    parts.join(" ")
}

/// Indented tree dump of the greedy policy followed by any advice overrides.
pub fn policy_text<R: rand::Rng>(model: &Fmdp, sim: &Simulation<R>) -> String {
    let cards = model.vars.cards();
    let mut name = |a: &fmdpu_core::ActionId| model.action_name(*a).to_string();
    match sim.config().variant {
        Variant::Random => "uniform over all actions\n".to_string(),
        Variant::TruePolicy => {
            let t = greedy_policy(&sim.expert().oracle().values.q, &cards).expect("model has actions");
            render(&t, &model.vars, &mut name)
        }
        _ => {
            let agent = sim.agent();
            let mut out = match greedy_policy(&agent.values().q, &cards) {
                Some(t) => render(&t, &model.vars, &mut name),
                None => "no aware actions\n".to_string(),
            };
            let mut overrides: Vec<String> = agent
                .advice()
                .entries()
                .map(|(s, e)| format!("  [{}] -> {}\n", state_text(model, s), model.action_name(e.action)))
                .collect();
            if !overrides.is_empty() {
                overrides.sort();
                out.push_str("advice overrides:\n");
                out.extend(overrides);
            }
            out
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub replicas: Vec<ReplicaResult>,
    pub aggregate: Vec<AggregateRow>,
}

/// Mean and standard error over replicas at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub step: u64,
    pub mean: [f64; 7],
    pub stderr: [f64; 7],
}

pub const AGGREGATE_COLUMNS: [&str; 7] =
    ["reward", "rdisc", "errApprox", "numVarsAware", "numActionsAware", "adviceCount", "queryCount"];

/// Sample mean and standard error (sample standard deviation over √n; 0 for one sample).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(replicas: &[ReplicaResult]) -> Vec<AggregateRow> {
    let len = replicas.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let mut mean = [0.0; 7];
            let mut stderr = [0.0; 7];
            for c in 0..7 {
                let xs: Vec<f64> = replicas
                    .iter()
                    .map(|r| {
                        let row = &r.rows[i];
                        match c {
                            0 => row.reward,
                            1 => row.rdisc,
                            2 => row.err_approx,
                            3 => row.vars_aware as f64,
                            4 => row.actions_aware as f64,
                            5 => row.advice_count as f64,
                            _ => row.query_count as f64,
                        }
                    })
                    .collect();
                (mean[c], stderr[c]) = mean_stderr(&xs);
            }
            AggregateRow { step: replicas[0].rows[i].step, mean, stderr }
        })
        .collect()
}

pub fn write_aggregate(rows: &[AggregateRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string()];
    for c in AGGREGATE_COLUMNS {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_stderr"));
    }
    w.write_record(&header).unwrap();
    for r in rows {
        let mut rec = vec![r.step.to_string()];
        for c in 0..7 {
            rec.push(r.mean[c].to_string());
            rec.push(r.stderr[c].to_string());
        }
        w.write_record(&rec).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Runs all replicas of a configuration in parallel.
pub fn run_experiment(domain: &Domain, cfg: &ExperimentConfig) -> Result<RunResult, HarnessError> {
    sim_config(&domain.model, cfg)?;
    let replicas: Vec<ReplicaResult> =
        (0..cfg.replicas).into_par_iter().map(|k| run_replica(domain, cfg, k)).collect::<Result<_, _>>()?;
    let aggregate = aggregate(&replicas);
    Ok(RunResult { config: cfg.clone(), replicas, aggregate })
}

impl RunResult {
    /// Most frequent final policy across replicas, with its count; earliest replica on ties.
    pub fn modal_policy(&self) -> Option<(&str, usize)> {
        let mut best: Option<(&str, usize)> = None;
        for r in &self.replicas {
            let n = self.replicas.iter().filter(|x| x.final_policy == r.final_policy).count();
            if best.map_or(true, |(_, m)| n > m) {
                best = Some((&r.final_policy, n));
            }
        }
        best
    }
}

/// One-line-per-replica and overall summary.
pub fn summary(run: &RunResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# configuration");
    s.push_str(&run.config.to_text());
    let _ = writeln!(s, "\n# replicas");
    let _ = writeln!(s, "replica,final_rdisc,final_errApprox,final_policy_error,vars_aware,actions_aware,cutoffs,steps_to_threshold");
    for r in &run.replicas {
        let pe = r.final_policy_error.map_or("NA".to_string(), |e| format!("{e:.6}"));
        let reach = r.steps_to(ERROR_THRESHOLD).map_or("NA".to_string(), |t| t.to_string());
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{},{},{},{}",
            r.replica,
            r.final_rdisc(),
            r.final_err_approx(),
            pe,
            r.final_awareness.variables.len(),
            r.final_awareness.actions.len(),
            r.cutoffs.len(),
            reach
        );
    }
    let (m, se) = mean_stderr(&run.replicas.iter().map(|r| r.final_rdisc()).collect::<Vec<_>>());
    let _ = writeln!(s, "\n# totals\nfinal_rdisc_mean={m:.6}\nfinal_rdisc_stderr={se:.6}");
    let errs: Vec<f64> = run.replicas.iter().filter_map(|r| r.final_policy_error).collect();
    if !errs.is_empty() {
        let (m, se) = mean_stderr(&errs);
        let _ = writeln!(s, "final_policy_error_mean={m:.6}\nfinal_policy_error_stderr={se:.6}");
    }
    s
}

/// Writes replica traces, cutoff events, the aggregate and the summary into `dir`.
pub fn write_outputs(run: &RunResult, dir: &Path) -> Result<(), HarnessError> {
    let out = |e: std::io::Error| HarnessError::Output(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(out)?;
    for r in &run.replicas {
        fs::write(dir.join(format!("replica_{}.csv", r.replica)), write_trace(&r.rows)).map_err(out)?;
        let mut ev = String::from("step,episode,event\n");
        for (step, ep) in &r.cutoffs {
            let _ = writeln!(ev, "{step},{ep},cutoff");
        }
        fs::write(dir.join(format!("replica_{}_events.csv", r.replica)), ev).map_err(out)?;
    }
    fs::write(dir.join("aggregate.csv"), write_aggregate(&run.aggregate)).map_err(out)?;
    fs::write(dir.join("summary.txt"), summary(run)).map_err(out)?;
    Ok(())
}

/// Runs several configurations on one domain and tabulates final results.
pub fn compare_variants(domain: &Domain, cfgs: &[ExperimentConfig]) -> Result<(Vec<RunResult>, String), HarnessError> {
    if let Some(first) = cfgs.first() {
        if cfgs.iter().any(|c| c.steps != first.steps) {
            return Err(HarnessError::Config("all configurations must use the same number of steps".into()));
        }
    }
    let runs: Vec<RunResult> = cfgs.iter().map(|c| run_experiment(domain, c)).collect::<Result<_, _>>()?;
    let mut table = String::from("variant,beta,final_rdisc_mean,final_rdisc_stderr,vars_aware_mean,actions_aware_mean,policy_error_mean\n");
    for r in &runs {
        let rd: Vec<f64> = r.replicas.iter().map(|x| x.final_rdisc()).collect();
        let (m, se) = mean_stderr(&rd);
        let va = r.replicas.iter().map(|x| x.final_awareness.variables.len() as f64).sum::<f64>() / rd.len() as f64;
        let aa = r.replicas.iter().map(|x| x.final_awareness.actions.len() as f64).sum::<f64>() / rd.len() as f64;
        let errs: Vec<f64> = r.replicas.iter().filter_map(|x| x.final_policy_error).collect();
        let pe = if errs.is_empty() { "NA".to_string() } else { format!("{:.6}", mean_stderr(&errs).0) };
        let _ = writeln!(table, "{},{},{m:.6},{se:.6},{va:.3},{aa:.3},{pe}", r.config.variant, r.config.beta());
    }
    Ok((runs, table))
}

/// Mean of the aggregate columns at the last step of each run, aligned by step.
pub fn aligned_curves(runs: &[RunResult]) -> String {
    let mut w = String::from("step");
    for r in runs {
        let _ = write!(w, ",{}_rdisc_mean,{}_rdisc_stderr", r.config.variant, r.config.variant);
    }
    w.push('\n');
    let len = runs.iter().map(|r| r.aggregate.len()).min().unwrap_or(0);
    for i in 0..len {
        let _ = write!(w, "{}", runs[0].aggregate[i].step);
        for r in runs {
            let _ = write!(w, ",{},{}", r.aggregate[i].mean[1], r.aggregate[i].stderr[1]);
        }
        w.push('\n');
    }
    w
}
