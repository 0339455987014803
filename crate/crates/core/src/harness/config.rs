//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, unknown keys are errors.
//! Lists are comma separated. Faults are written `valve:<tank>:<multiplier>`
//! or `engine:<engine>:<multiplier>`, optionally suffixed with `@<onset step>`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::env::{EnvConfig, FaultKind, FaultSpec, N_TANKS};
use crate::error::{Error, Result};
use crate::model::ModelFitConfig;
use crate::ppo::Hyperparameters;

/// Post-fault condition of an adaptation trial.
#[derive(Clone, Debug, PartialEq)]
pub enum TrialFault {
    Fixed(Vec<FaultSpec<f64>>),
    /// Drawn per seed by the novel-fault sampler.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub pretrain_steps: usize,
    pub complement_faults: Vec<FaultSpec<f64>>,
    /// PPO steps used to fine-tune each complement policy.
    pub complement_steps: usize,
    pub trial_fault: TrialFault,
    pub post_fault_steps: usize,
    pub seeds: Vec<u64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "tank4_engine2".into(),
            pretrain_steps: 50_000,
            complement_faults: vec![
                FaultSpec::valve(1, 10.0),
                FaultSpec::valve(3, 10.0),
                FaultSpec::valve(5, 10.0),
            ],
            complement_steps: 20_000,
            trial_fault: TrialFault::Fixed(vec![FaultSpec::valve(4, 10.0), FaultSpec::engine(2, 2.0)]),
            post_fault_steps: 100_000,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub hp: Hyperparameters<f64>,
    pub env: EnvConfig<f64>,
    pub model: ModelFitConfig<f64>,
    /// Episodes per candidate when scoring on the process model.
    pub model_eval_episodes: usize,
    pub scenario: Scenario,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hp: Hyperparameters::default(),
            env: EnvConfig::default(),
            model: ModelFitConfig::default(),
            model_eval_episodes: 4,
            scenario: Scenario::default(),
        }
    }
}

fn parse_num<V: FromStr>(key: &str, value: &str) -> std::result::Result<V, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse `{value}` for `{key}`"))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> std::result::Result<Vec<V>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_array<const N: usize>(key: &str, value: &str) -> std::result::Result<[f64; N], String> {
    let v: Vec<f64> = parse_list(key, value)?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("`{key}` needs {N} values, got {}", v.len()))
}

pub fn parse_fault(text: &str) -> std::result::Result<FaultSpec<f64>, String> {
    let text = text.trim();
    let (body, onset) = match text.split_once('@') {
        Some((b, o)) => (b, parse_num::<usize>("fault onset", o)?),
        None => (text, 0),
    };
    let parts: Vec<&str> = body.split(':').map(str::trim).collect();
    let [kind, index, multiplier] = parts[..] else {
        return Err(format!("fault `{text}` is not kind:index:multiplier"));
    };
    let kind = match kind {
        "valve" => FaultKind::ValveResistance,
        "engine" => FaultKind::EngineDemand,
        other => return Err(format!("unknown fault kind `{other}`")),
    };
    let fault = FaultSpec {
        kind,
        index: parse_num("fault index", index)?,
        multiplier: parse_num("fault multiplier", multiplier)?,
        onset_step: onset,
    };
    fault.validate().map_err(|e| e.to_string())?;
    Ok(fault)
}

pub fn format_fault(f: &FaultSpec<f64>) -> String {
    let kind = match f.kind {
        FaultKind::ValveResistance => "valve",
        FaultKind::EngineDemand => "engine",
    };
    let mut s = format!("{kind}:{}:{}", f.index, f.multiplier);
    if f.onset_step != 0 {
        let _ = write!(s, "@{}", f.onset_step);
    }
    s
}

fn parse_faults(value: &str) -> std::result::Result<Vec<FaultSpec<f64>>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_fault)
        .collect()
}

fn join<V: ToString>(xs: &[V]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| match e {
                    SetError::Unknown => Error::UnknownKey(key.trim().to_string()),
                    SetError::Invalid(message) => Error::Config { line: i + 1, message },
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.env.validate()?;
        if self.scenario.seeds.is_empty() {
            return Err(Error::InvalidArgument("scenario.seeds must not be empty".into()));
        }
        if self.scenario.pretrain_steps < self.hp.t_update {
            return Err(Error::InvalidArgument(format!(
                "scenario.pretrain_steps ({}) must be at least hp.t_update ({})",
                self.scenario.pretrain_steps, self.hp.t_update
            )));
        }
        if self.scenario.post_fault_steps < self.hp.t_update {
            return Err(Error::InvalidArgument(
                "scenario.post_fault_steps must cover the post-fault memory".into(),
            ));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), SetError> {
        let hp = &mut self.hp;
        let env = &mut self.env;
        let sc = &mut self.scenario;
        match key {
            "hp.gamma" => hp.gamma = parse_num(key, v)?,
            "hp.clip_eps" => hp.clip_eps = parse_num(key, v)?,
            "hp.epochs" => hp.epochs = parse_num(key, v)?,
            "hp.t_update" => hp.t_update = parse_num(key, v)?,
            "hp.lr_ppo" => hp.lr_ppo = parse_num(key, v)?,
            "hp.alpha_in" => hp.alpha_in = parse_num(key, v)?,
            "hp.alpha_out" => hp.alpha_out = parse_num(key, v)?,
            "hp.k_in" => hp.k_in = parse_num(key, v)?,
            "hp.k_out" => hp.k_out = parse_num(key, v)?,
            "hp.complement_size" => hp.complement_size = parse_num(key, v)?,
            "hp.mem_capacity" => hp.mem_capacity = parse_num(key, v)?,
            "hp.adam_beta1" => hp.adam_beta1 = parse_num(key, v)?,
            "hp.adam_beta2" => hp.adam_beta2 = parse_num(key, v)?,
            "hp.test_fraction" => hp.test_fraction = parse_num(key, v)?,
            "hp.hidden" => hp.hidden = parse_list(key, v)?,
            "hp.seed" => hp.seed = parse_num(key, v)?,

            "env.capacity" => env.capacities = [parse_num(key, v)?; N_TANKS],
            "env.capacities" => env.capacities = parse_array(key, v)?,
            "env.fill_fraction" => env.fill_fraction = parse_num(key, v)?,
            "env.fill_noise" => env.fill_noise = parse_num(key, v)?,
            "env.positions" => env.positions = parse_array(key, v)?,
            "env.resistance" => env.resistances = [parse_num(key, v)?; N_TANKS],
            "env.resistances" => env.resistances = parse_array(key, v)?,
            "env.k_flow" => env.k_flow = parse_num(key, v)?,
            "env.engine_demand" => env.engine_demands = [parse_num(key, v)?; 2],
            "env.engine_demands" => env.engine_demands = parse_array(key, v)?,
            "env.horizon" => env.horizon = parse_num(key, v)?,
            "env.min_fuel_fraction" => env.min_fuel_fraction = parse_num(key, v)?,
            "env.reward.w_cg" => env.reward.w_cg = parse_num(key, v)?,
            "env.reward.w_var" => env.reward.w_var = parse_num(key, v)?,
            "env.reward.w_valve" => env.reward.w_valve = parse_num(key, v)?,

            "model.lr" => self.model.lr = parse_num(key, v)?,
            "model.epochs" => self.model.epochs = parse_num(key, v)?,
            "model.hidden" => self.model.hidden = parse_list(key, v)?,
            "model.eval_episodes" => self.model_eval_episodes = parse_num(key, v)?,

            "scenario.name" => sc.name = v.to_string(),
            "scenario.pretrain_steps" => sc.pretrain_steps = parse_num(key, v)?,
            "scenario.complement_faults" => sc.complement_faults = parse_faults(v)?,
            "scenario.complement_steps" => sc.complement_steps = parse_num(key, v)?,
            "scenario.trial_fault" => {
                sc.trial_fault = if v == "random" {
                    TrialFault::Random
                } else {
                    TrialFault::Fixed(parse_faults(v)?)
                }
            }
            "scenario.post_fault_steps" => sc.post_fault_steps = parse_num(key, v)?,
            "scenario.seeds" => sc.seeds = parse_list(key, v)?,
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    /// Renders every key; `parse(render())` reproduces the config.
    pub fn render(&self) -> String {
        let hp = &self.hp;
        let env = &self.env;
        let sc = &self.scenario;
        let trial = match &sc.trial_fault {
            TrialFault::Random => "random".to_string(),
            TrialFault::Fixed(f) => f.iter().map(format_fault).collect::<Vec<_>>().join(", "),
        };
        let lines = [
            format!("hp.gamma = {}", hp.gamma),
            format!("hp.clip_eps = {}", hp.clip_eps),
            format!("hp.epochs = {}", hp.epochs),
            format!("hp.t_update = {}", hp.t_update),
            format!("hp.lr_ppo = {}", hp.lr_ppo),
            format!("hp.alpha_in = {}", hp.alpha_in),
            format!("hp.alpha_out = {}", hp.alpha_out),
            format!("hp.k_in = {}", hp.k_in),
            format!("hp.k_out = {}", hp.k_out),
            format!("hp.complement_size = {}", hp.complement_size),
            format!("hp.mem_capacity = {}", hp.mem_capacity),
            format!("hp.adam_beta1 = {}", hp.adam_beta1),
            format!("hp.adam_beta2 = {}", hp.adam_beta2),
            format!("hp.test_fraction = {}", hp.test_fraction),
            format!("hp.hidden = {}", join(&hp.hidden)),
            format!("hp.seed = {}", hp.seed),
            format!("env.capacities = {}", join(&env.capacities)),
            format!("env.fill_fraction = {}", env.fill_fraction),
            format!("env.fill_noise = {}", env.fill_noise),
            format!("env.positions = {}", join(&env.positions)),
            format!("env.resistances = {}", join(&env.resistances)),
            format!("env.k_flow = {}", env.k_flow),
            format!("env.engine_demands = {}", join(&env.engine_demands)),
            format!("env.horizon = {}", env.horizon),
            format!("env.min_fuel_fraction = {}", env.min_fuel_fraction),
            format!("env.reward.w_cg = {}", env.reward.w_cg),
            format!("env.reward.w_var = {}", env.reward.w_var),
            format!("env.reward.w_valve = {}", env.reward.w_valve),
            format!("model.lr = {}", self.model.lr),
            format!("model.epochs = {}", self.model.epochs),
            format!("model.hidden = {}", join(&self.model.hidden)),
            format!("model.eval_episodes = {}", self.model_eval_episodes),
            format!("scenario.name = {}", sc.name),
            format!("scenario.pretrain_steps = {}", sc.pretrain_steps),
            format!(
                "scenario.complement_faults = {}",
                sc.complement_faults.iter().map(format_fault).collect::<Vec<_>>().join(", ")
            ),
            format!("scenario.complement_steps = {}", sc.complement_steps),
            format!("scenario.trial_fault = {trial}"),
            format!("scenario.post_fault_steps = {}", sc.post_fault_steps),
            format!("scenario.seeds = {}", join(&sc.seeds)),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

enum SetError {
    Unknown,
    Invalid(String),
}

impl From<String> for SetError {
    fn from(s: String) -> Self {
        SetError::Invalid(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn parses_keys_comments_and_faults() {
        let text = "
            # nominal system, shorter episodes
            env.horizon = 50   # trailing comment
            env.reward.w_cg = 2.5
            env.capacity = 120
            hp.k_in = 0
            hp.hidden = 16, 16
            scenario.trial_fault = valve:2:4@10, engine:1:3
            scenario.seeds = 7, 8
        ";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.env.horizon, 50);
        assert_eq!(cfg.env.reward.w_cg, 2.5);
        assert_eq!(cfg.env.capacities, [120.0; 6]);
        assert_eq!(cfg.hp.k_in, 0);
        assert_eq!(cfg.hp.hidden, vec![16, 16]);
        assert_eq!(cfg.scenario.seeds, vec![7, 8]);
        assert_eq!(
            cfg.scenario.trial_fault,
            TrialFault::Fixed(vec![FaultSpec::valve(2, 4.0).at(10), FaultSpec::engine(1, 3.0)])
        );
    }

    #[test]
    fn unknown_and_malformed_lines_fail_fast() {
        assert!(matches!(
            ExperimentConfig::parse("env.colour = red"),
            Err(Error::UnknownKey(k)) if k == "env.colour"
        ));
        assert!(matches!(
            ExperimentConfig::parse("\nhp.gamma 0.9"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("hp.epochs = five"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(ExperimentConfig::parse("scenario.trial_fault = valve:9:2").is_err());
        assert!(ExperimentConfig::parse("hp.gamma = 1.5").is_err());
        assert!(ExperimentConfig::parse("env.positions = 1, 2").is_err());
    }
}
