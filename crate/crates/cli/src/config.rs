//! Experiment configuration: `key=value` lines, `#` comments.

use std::fmt;
use std::path::PathBuf;

use fmdpu_core::sim::Variant;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected key=value")]
    Malformed { line: usize },
    #[error("{key}: invalid value `{value}`: {reason}")]
    Invalid { key: String, value: String, reason: String },
}

/// Named agent variants; the tolerance variants change the expert's β.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VariantName {
    Default,
    NonConservative,
    TruePolicy,
    Random,
    LowTolerance,
    HighTolerance,
}

impl VariantName {
    pub const ALL: [VariantName; 6] = [
        VariantName::Default,
        VariantName::NonConservative,
        VariantName::TruePolicy,
        VariantName::Random,
        VariantName::LowTolerance,
        VariantName::HighTolerance,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VariantName::Default => "default",
            VariantName::NonConservative => "nonConservative",
            VariantName::TruePolicy => "truePolicy",
            VariantName::Random => "random",
            VariantName::LowTolerance => "lowTolerance",
            VariantName::HighTolerance => "highTolerance",
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            VariantName::NonConservative => Variant::NonConservative,
            VariantName::TruePolicy => Variant::TruePolicy,
            VariantName::Random => Variant::Random,
            _ => Variant::Default,
        }
    }

    pub fn default_beta(self) -> f64 {
        match self {
            VariantName::LowTolerance => 0.01,
            VariantName::HighTolerance => 0.5,
            _ => 0.1,
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub domain: PathBuf,
    pub variant: VariantName,
    pub steps: u64,
    pub replicas: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub rho: f64,
    pub k: f64,
    pub mu: u64,
    /// Explicit β; when absent the variant's default applies.
    pub beta: Option<f64>,
    pub kappa: u64,
    pub max_in_degree: usize,
    pub initial_variables: Option<Vec<String>>,
    pub initial_actions: Option<Vec<String>>,
    pub initial_scope: Option<Vec<String>>,
    /// Steps between exact policy-error evaluations; 0 disables them.
    pub eval_every: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: PathBuf::new(),
            variant: VariantName::Default,
            steps: 1000,
            replicas: 1,
            seed: 0,
            epsilon: 0.1,
            rho: 0.1,
            k: 5.0,
            mu: 10,
            beta: None,
            kappa: 50,
            max_in_degree: 5,
            initial_variables: None,
            initial_actions: None,
            initial_scope: None,
            eval_every: 50,
        }
    }
}

pub const KEYS: &[&str] = &[
    "domain",
    "variant",
    "steps",
    "replicas",
    "seed",
    "epsilon",
    "rho",
    "k",
    "mu",
    "beta",
    "kappa",
    "max_in_degree",
    "initial_variables",
    "initial_actions",
    "initial_scope",
    "eval_every",
];

fn invalid(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::Invalid { key: key.into(), value: value.into(), reason: reason.into() }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| invalid(key, value, "not a number"))
}

fn positive_int(key: &str, value: &str) -> Result<u64, ConfigError> {
    let x: u64 = parse_num(key, value)?;
    if x == 0 {
        return Err(invalid(key, value, "must be a positive integer"));
    }
    Ok(x)
}

fn names(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

impl ExperimentConfig {
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or_else(|| self.variant.default_beta())
    }

    /// Sets one key from its textual value, validating ranges.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "domain" => self.domain = PathBuf::from(value),
            "variant" => {
                self.variant = VariantName::parse(value).ok_or_else(|| invalid(key, value, "unknown variant"))?
            }
            "steps" => self.steps = positive_int(key, value)?,
            "replicas" => self.replicas = positive_int(key, value)? as usize,
            "seed" => self.seed = parse_num(key, value)?,
            "epsilon" => {
                let x: f64 = parse_num(key, value)?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(invalid(key, value, "must lie in [0, 1]"));
                }
                self.epsilon = x;
            }
            "rho" => {
                let x: f64 = parse_num(key, value)?;
                if !(x > 0.0 && x < 0.5) {
                    return Err(invalid(key, value, "must lie in (0, 0.5)"));
                }
                self.rho = x;
            }
            "k" => {
                let x: f64 = parse_num(key, value)?;
                if !(x > 0.0 && x.is_finite()) {
                    return Err(invalid(key, value, "must be positive"));
                }
                self.k = x;
            }
            "mu" => self.mu = positive_int(key, value)?,
            "beta" => {
                let x: f64 = parse_num(key, value)?;
                if !x.is_finite() {
                    return Err(invalid(key, value, "must be finite"));
                }
                self.beta = Some(x);
            }
            "kappa" => self.kappa = positive_int(key, value)?,
            "max_in_degree" => self.max_in_degree = positive_int(key, value)? as usize,
            "initial_variables" => self.initial_variables = Some(names(value)),
            "initial_actions" => self.initial_actions = Some(names(value)),
            "initial_scope" => self.initial_scope = Some(names(value)),
            "eval_every" => self.eval_every = parse_num(key, value)?,
            _ => return Err(ConfigError::UnknownKey { line: 0, key: key.into() }),
        }
        Ok(())
    }

    /// Renders the effective configuration in the file format.
    pub fn to_text(&self) -> String {
        let list = |v: &Option<Vec<String>>| v.as_ref().map(|v| v.join(","));
        let mut lines = vec![
            format!("domain={}", self.domain.display()),
            format!("variant={}", self.variant),
            format!("steps={}", self.steps),
            format!("replicas={}", self.replicas),
            format!("seed={}", self.seed),
            format!("epsilon={}", self.epsilon),
            format!("rho={}", self.rho),
            format!("k={}", self.k),
            format!("mu={}", self.mu),
            format!("beta={}", self.beta()),
            format!("kappa={}", self.kappa),
            format!("max_in_degree={}", self.max_in_degree),
        ];
        for (k, v) in [
            ("initial_variables", list(&self.initial_variables)),
            ("initial_actions", list(&self.initial_actions)),
            ("initial_scope", list(&self.initial_scope)),
        ] {
            if let Some(v) = v {
                lines.push(format!("{k}={v}"));
            }
        }
        lines.push(format!("eval_every={}", self.eval_every));
        lines.join("\n") + "\n"
    }
}

/// Parses a configuration file; unspecified keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Malformed { line: i + 1 })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line: i + 1, key: key.into() });
        }
        cfg.set(key, value)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.epsilon, 0.1);
        assert_eq!(c.rho, 0.1);
        assert_eq!(c.k, 5.0);
        assert_eq!(c.mu, 10);
        assert_eq!(c.beta(), 0.1);
        assert_eq!(c.kappa, 50);
        assert_eq!(c.max_in_degree, 5);
    }

    #[test]
    fn beta_half_is_high_tolerance() {
        let c = parse_config("beta=0.5").unwrap();
        assert_eq!(c.beta(), VariantName::HighTolerance.default_beta());
        let c = parse_config("variant=highTolerance").unwrap();
        assert_eq!(c.beta(), 0.5);
    }

    #[test]
    fn range_and_key_errors() {
        assert!(matches!(parse_config("epsilon=1.5"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(parse_config("rho=0.5"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(parse_config("k=0"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(parse_config("mu=0"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(parse_config("colour=red"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(parse_config("# c\nsteps"), Err(ConfigError::Malformed { line: 2 })));
    }

    #[test]
    fn text_roundtrip() {
        let c = parse_config("variant=random\nsteps=20 # short\ninitial_actions=MOVE, GETU\n").unwrap();
        assert_eq!(c.initial_actions, Some(vec!["MOVE".to_string(), "GETU".to_string()]));
        let mut expect = c.clone();
        expect.beta = Some(c.beta());
        assert_eq!(parse_config(&c.to_text()).unwrap(), expect);
    }
}
