use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fmdpu::config::{parse_config, ExperimentConfig};
use fmdpu::domain::parse_domain;
use fmdpu::harness::{aligned_curves, compare_variants, run_experiment, write_outputs, Domain, HarnessError};

#[derive(Parser)]
#[command(name = "fmdpu", version, about = "Learn factored MDPs under unawareness with a simulated expert")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write per-replica traces, the aggregate and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run several configurations on the same domain and tabulate them.
    Compare {
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parse and validate a domain file.
    ValidateDomain { path: PathBuf },
    /// Run a configuration and print the most common final policy as a tree dump.
    ExportPolicy {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// Flags that override configuration file values.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    replicas: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    max_in_degree: Option<String>,
    #[arg(long)]
    initial_variables: Option<String>,
    #[arg(long)]
    initial_actions: Option<String>,
    #[arg(long)]
    initial_scope: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("domain", &self.domain),
            ("variant", &self.variant),
            ("steps", &self.steps),
            ("replicas", &self.replicas),
            ("seed", &self.seed),
            ("epsilon", &self.epsilon),
            ("rho", &self.rho),
            ("k", &self.k),
            ("mu", &self.mu),
            ("beta", &self.beta),
            ("kappa", &self.kappa),
            ("max_in_degree", &self.max_in_degree),
            ("initial_variables", &self.initial_variables),
            ("initial_actions", &self.initial_actions),
            ("initial_scope", &self.initial_scope),
            ("eval_every", &self.eval_every),
        ]
    }
}

fn config_error(msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(msg.to_string())
}

/// Reads a configuration, applies overrides and resolves the domain path against the file's directory.
fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let domain_overridden = overrides.domain.is_some();
    for (key, value) in overrides.pairs() {
        if let Some(v) = value {
            cfg.set(key, v).map_err(config_error)?;
        }
    }
    if cfg.domain.as_os_str().is_empty() {
        return Err(config_error(format!("{}: no domain given", path.display())));
    }
    if cfg.domain.is_relative() && !domain_overridden {
        if let Some(dir) = path.parent() {
            cfg.domain = dir.join(&cfg.domain);
        }
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::Output(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, out, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let domain = Domain::load(&cfg.domain)?;
            let run = run_experiment(&domain, &cfg)?;
            write_outputs(&run, &out)?;
            if let Some((policy, _)) = run.modal_policy() {
                write_file(&out.join("policy.txt"), policy)?;
            }
            println!("wrote {} replicas to {}", run.replicas.len(), out.display());
        }
        Command::Compare { config, out, overrides } => {
            let cfgs: Vec<ExperimentConfig> =
                config.iter().map(|p| load_config(p, &overrides)).collect::<Result<_, _>>()?;
            if cfgs.iter().any(|c| c.domain != cfgs[0].domain) {
                return Err(config_error("all configurations must use the same domain"));
            }
            let domain = Domain::load(&cfgs[0].domain)?;
            let (runs, table) = compare_variants(&domain, &cfgs)?;
            fs::create_dir_all(&out).map_err(|e| HarnessError::Output(e.to_string()))?;
            for (i, r) in runs.iter().enumerate() {
                write_outputs(r, &out.join(format!("{i}_{}", r.config.variant)))?;
            }
            write_file(&out.join("curves.csv"), &aligned_curves(&runs))?;
            write_file(&out.join("comparison.csv"), &table)?;
            print!("{table}");
        }
        Command::ValidateDomain { path } => {
            let text = fs::read_to_string(&path).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
            let m = parse_domain(&text).map_err(|source| HarnessError::Domain { path: path.display().to_string(), source })?;
            let states: f64 = m.vars.cards().iter().map(|&c| c as f64).product();
            println!(
                "ok: {} variables, {} actions, {} states, {} start states, discount {}",
                m.num_vars(),
                m.num_actions(),
                states,
                m.start_states().len(),
                m.discount
            );
        }
        Command::ExportPolicy { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let domain = Domain::load(&cfg.domain)?;
            let run = run_experiment(&domain, &cfg)?;
            if let Some((policy, n)) = run.modal_policy() {
                println!("# most common final policy ({n} of {} replicas)", run.replicas.len());
                print!("{policy}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
