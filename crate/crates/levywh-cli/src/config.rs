//! Run configuration: a flat sectioned text file.
//!
//! Format: `[section]` headers, `key = value` lines, `#` comment lines.
//! Vectors are whitespace-separated numbers, matrices additionally use
//! `;` between rows:
//!
//! ```text
//! [horizon]
//! alpha = 1 0
//! T = -1 1; 0 -1
//! ```
//!
//! Sections: `[model]` (mu, sigma2, and optional lambda_plus/alpha_plus/
//! T_plus and the minus-side analogues), `[horizon]` (alpha, T), `[run]`
//! (command, delta, reversal, alpha_hat, x_grid, y_grid, stages, rate)
//! and `[sim]` (seed, n_paths, bin_edges_x, bin_edges_y). Unknown
//! sections or keys are rejected so typos surface immediately.

use std::collections::BTreeMap;

use levywh::factorization::ReversalChoice;
use levywh::fluid::JumpDiffusionModel;
use levywh::ph::PhaseTypeRep;
use nalgebra::{DMatrix, DVector};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Reverse,
    Factorize,
    Density,
    BmErlang,
    Simulate,
    Verify,
}

impl Command {
    fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "reverse" => Ok(Command::Reverse),
            "factorize" => Ok(Command::Factorize),
            "density" => Ok(Command::Density),
            "bm-erlang" => Ok(Command::BmErlang),
            "simulate" => Ok(Command::Simulate),
            "verify" => Ok(Command::Verify),
            other => Err(CliError::Config(format!(
                "run.command: unknown command '{other}' (expected reverse|factorize|density|bm-erlang|simulate|verify)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimSettings {
    pub seed: u64,
    pub n_paths: usize,
    pub bin_edges_x: Vec<f64>,
    pub bin_edges_y: Vec<f64>,
}

#[derive(Debug)]
pub struct RunConfig {
    pub command: Command,
    pub model: Option<JumpDiffusionModel<f64>>,
    pub horizon: PhaseTypeRep<f64>,
    pub delta: f64,
    pub reversal: ReversalChoice<f64>,
    pub x_grid: Option<Vec<f64>>,
    pub y_grid: Option<Vec<f64>>,
    pub stages: Option<usize>,
    pub rate: Option<f64>,
    pub sim: Option<SimSettings>,
}

struct Raw {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self, CliError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        CliError::Config(format!("line {}: malformed section header", lineno + 1))
                    })?
                    .trim()
                    .to_string();
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let section = current.as_ref().ok_or_else(|| {
                CliError::Config(format!("line {}: key outside any [section]", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let entry = sections.get_mut(section).expect("section exists");
            if entry
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(CliError::Config(format!("duplicate key {section}.{key}")));
            }
        }
        Ok(Raw { sections })
    }

    fn check_known(&self) -> Result<(), CliError> {
        let known: BTreeMap<&str, &[&str]> = BTreeMap::from([
            (
                "model",
                &[
                    "mu",
                    "sigma2",
                    "lambda_plus",
                    "alpha_plus",
                    "T_plus",
                    "lambda_minus",
                    "alpha_minus",
                    "T_minus",
                ][..],
            ),
            ("horizon", &["alpha", "T"][..]),
            (
                "run",
                &[
                    "command",
                    "delta",
                    "reversal",
                    "alpha_hat",
                    "x_grid",
                    "y_grid",
                    "stages",
                    "rate",
                ][..],
            ),
            (
                "sim",
                &["seed", "n_paths", "bin_edges_x", "bin_edges_y"][..],
            ),
        ]);
        for (section, keys) in &self.sections {
            let allowed = known
                .get(section.as_str())
                .ok_or_else(|| CliError::Config(format!("unknown section [{section}]")))?;
            for key in keys.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(CliError::Config(format!("unknown key {section}.{key}")));
                }
            }
        }
        Ok(())
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
    }

    fn require(&self, section: &str, key: &str) -> Result<&str, CliError> {
        self.get(section, key)
            .ok_or_else(|| CliError::Config(format!("missing key {section}.{key}")))
    }

    fn f64_at(&self, section: &str, key: &str) -> Result<f64, CliError> {
        parse_f64(self.require(section, key)?, section, key)
    }

    fn f64_opt(&self, section: &str, key: &str) -> Result<Option<f64>, CliError> {
        self.get(section, key)
            .map(|v| parse_f64(v, section, key))
            .transpose()
    }

    fn usize_opt(&self, section: &str, key: &str) -> Result<Option<usize>, CliError> {
        self.get(section, key)
            .map(|v| {
                v.parse::<usize>().map_err(|_| {
                    CliError::Config(format!(
                        "{section}.{key}: '{v}' is not a nonnegative integer"
                    ))
                })
            })
            .transpose()
    }

    fn vector_at(&self, section: &str, key: &str) -> Result<Vec<f64>, CliError> {
        parse_vector(self.require(section, key)?, section, key)
    }

    fn vector_opt(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.get(section, key)
            .map(|v| parse_vector(v, section, key))
            .transpose()
    }

    fn matrix_at(&self, section: &str, key: &str) -> Result<DMatrix<f64>, CliError> {
        let text = self.require(section, key)?;
        let rows: Vec<Vec<f64>> = text
            .split(';')
            .map(|row| parse_vector(row, section, key))
            .collect::<Result<_, _>>()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(CliError::Config(format!(
                "{section}.{key}: matrix must be square with ';' separated rows"
            )));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

fn parse_f64(v: &str, section: &str, key: &str) -> Result<f64, CliError> {
    v.parse::<f64>()
        .map_err(|_| CliError::Config(format!("{section}.{key}: '{v}' is not a number")))
}

fn parse_vector(v: &str, section: &str, key: &str) -> Result<Vec<f64>, CliError> {
    let out: Result<Vec<f64>, CliError> = v
        .split_whitespace()
        .map(|t| parse_f64(t, section, key))
        .collect();
    let out = out?;
    if out.is_empty() {
        return Err(CliError::Config(format!("{section}.{key}: empty vector")));
    }
    Ok(out)
}

fn check_increasing(v: &[f64], section: &str, key: &str) -> Result<(), CliError> {
    for w in v.windows(2) {
        if !(w[0] < w[1]) {
            return Err(CliError::Config(format!(
                "{section}.{key}: entries must be strictly increasing"
            )));
        }
    }
    Ok(())
}

fn numeric(e: levywh::Error, what: &str) -> CliError {
    CliError::Config(format!("{what}: {e}"))
}

impl RunConfig {
    pub fn load(text: &str) -> Result<Self, CliError> {
        let raw = Raw::parse(text)?;
        raw.check_known()?;

        let command = Command::parse(raw.require("run", "command")?)?;

        let horizon = {
            let alpha = DVector::from_vec(raw.vector_at("horizon", "alpha")?);
            let gen = raw.matrix_at("horizon", "T")?;
            PhaseTypeRep::new(alpha, gen).map_err(|e| numeric(e, "horizon"))?
        };

        let model = if raw.sections.contains_key("model") {
            let mu = raw.f64_at("model", "mu")?;
            let sigma2 = raw.f64_at("model", "sigma2")?;
            let mut sides = Vec::new();
            for side in ["plus", "minus"] {
                let lam = raw.f64_opt("model", &format!("lambda_{side}"))?;
                let jump = match lam {
                    None | Some(0.0) => None,
                    Some(rate) => {
                        let alpha =
                            DVector::from_vec(raw.vector_at("model", &format!("alpha_{side}"))?);
                        let gen = raw.matrix_at("model", &format!("T_{side}"))?;
                        let rep = PhaseTypeRep::new(alpha, gen)
                            .map_err(|e| numeric(e, &format!("model.{side}-jump law")))?;
                        Some((rate, rep))
                    }
                };
                sides.push(jump);
            }
            let down = sides.pop().unwrap();
            let up = sides.pop().unwrap();
            Some(JumpDiffusionModel::new(mu, sigma2, up, down).map_err(|e| numeric(e, "model"))?)
        } else {
            None
        };

        let delta = raw.f64_opt("run", "delta")?.unwrap_or(0.0);
        if delta < 0.0 {
            return Err(CliError::Config("run.delta: must be nonnegative".into()));
        }

        let reversal = match raw.get("run", "reversal").unwrap_or("standard") {
            "standard" => ReversalChoice::Standard,
            "general" => {
                let hat = raw.vector_at("run", "alpha_hat")?;
                ReversalChoice::General(DVector::from_vec(hat))
            }
            "stationary" => ReversalChoice::Stationary,
            other => {
                return Err(CliError::Config(format!(
                    "run.reversal: unknown choice '{other}' (expected standard|general|stationary)"
                )))
            }
        };

        let x_grid = raw.vector_opt("run", "x_grid")?;
        if let Some(g) = &x_grid {
            check_increasing(g, "run", "x_grid")?;
        }
        let y_grid = raw.vector_opt("run", "y_grid")?;
        if let Some(g) = &y_grid {
            check_increasing(g, "run", "y_grid")?;
        }

        let sim = if raw.sections.contains_key("sim") {
            let seed = raw
                .usize_opt("sim", "seed")?
                .ok_or_else(|| CliError::Config("missing key sim.seed".into()))?
                as u64;
            let n_paths = raw
                .usize_opt("sim", "n_paths")?
                .ok_or_else(|| CliError::Config("missing key sim.n_paths".into()))?;
            if n_paths == 0 {
                return Err(CliError::Config("sim.n_paths: must be at least 1".into()));
            }
            let bin_edges_x = raw.vector_at("sim", "bin_edges_x")?;
            check_increasing(&bin_edges_x, "sim", "bin_edges_x")?;
            let bin_edges_y = raw.vector_at("sim", "bin_edges_y")?;
            check_increasing(&bin_edges_y, "sim", "bin_edges_y")?;
            Some(SimSettings {
                seed,
                n_paths,
                bin_edges_x,
                bin_edges_y,
            })
        } else {
            None
        };

        let cfg = RunConfig {
            command,
            model,
            horizon,
            delta,
            reversal,
            x_grid,
            y_grid,
            stages: raw.usize_opt("run", "stages")?,
            rate: raw.f64_opt("run", "rate")?,
            sim,
        };
        cfg.check_command_inputs()?;
        Ok(cfg)
    }

    fn check_command_inputs(&self) -> Result<(), CliError> {
        let need_model = |cmd: &str| -> Result<(), CliError> {
            if self.model.is_none() {
                return Err(CliError::Config(format!(
                    "command '{cmd}' requires a [model] section"
                )));
            }
            Ok(())
        };
        match self.command {
            Command::Reverse => Ok(()),
            Command::Factorize => need_model("factorize"),
            Command::Density => {
                need_model("density")?;
                if self.x_grid.is_none() {
                    return Err(CliError::Config("missing key run.x_grid".into()));
                }
                if self.y_grid.is_none() {
                    return Err(CliError::Config("missing key run.y_grid".into()));
                }
                Ok(())
            }
            Command::BmErlang => {
                need_model("bm-erlang")?;
                let model = self.model.as_ref().unwrap();
                if model.up_jumps().is_some() || model.down_jumps().is_some() {
                    return Err(CliError::Config(
                        "bm-erlang requires a pure Brownian [model] (no jump keys)".into(),
                    ));
                }
                if self.stages.is_none() {
                    return Err(CliError::Config("missing key run.stages".into()));
                }
                if self.rate.is_none() {
                    return Err(CliError::Config("missing key run.rate".into()));
                }
                if self.x_grid.is_none() {
                    return Err(CliError::Config("missing key run.x_grid".into()));
                }
                Ok(())
            }
            Command::Simulate => {
                need_model("simulate")?;
                if self.sim.is_none() {
                    return Err(CliError::Config(
                        "command 'simulate' requires a [sim] section".into(),
                    ));
                }
                Ok(())
            }
            Command::Verify => need_model("verify"),
        }
    }
}
