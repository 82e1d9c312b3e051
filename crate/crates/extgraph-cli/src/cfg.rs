//! Flat key=value configuration file with flag overrides (flags win).

use std::path::{Path, PathBuf};

use extgraph::graph::Graph;
use extgraph::scmevm::FitMethod;
use extgraph::synthgen::{benchmark_graph_16, demo_graph_5, GenKind};

use crate::error::{CliError, Result};
use crate::io::read_json;

/// Parsed TOML table; every value is looked up by the flag's snake_case name.
pub struct FileCfg(toml::Table);

impl FileCfg {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileCfg(toml::Table::new()));
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(e.to_string()))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("invalid config file: {e}")))?;
        if table.values().any(|v| v.is_table() || v.is_array()) {
            return Err(CliError::Config("config file must be flat key = value".into()));
        }
        Ok(FileCfg(table))
    }

    pub fn str(&self, key: &str) -> Result<Option<String>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(CliError::Config(format!("config key {key}: expected string, got {other}"))),
        }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(other) => Err(CliError::Config(format!("config key {key}: expected number, got {other}"))),
        }
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(other) => Err(CliError::Config(format!("config key {key}: expected nonnegative integer, got {other}"))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.str(key)?.map(PathBuf::from))
    }
}

/// Flag value if present, else config value, else the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag value if present, else config value, else a configuration error.
pub fn pick_req<T>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| CliError::Config(format!("missing required option: {what}")))
}

/// Comma-separated list of reals, e.g. "0.2,0.21,0.22".
pub fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{what}: bad number '{s}'")))
        })
        .collect()
}

/// Comma-separated list of 1-based column indices.
pub fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("{what}: bad index '{s}'")))
        })
        .collect()
}

pub fn parse_method(text: &str) -> Result<FitMethod> {
    match text {
        "one" => Ok(FitMethod::OneStep),
        "two" => Ok(FitMethod::TwoStep),
        "three" => Ok(FitMethod::ThreeStep),
        other => Err(CliError::Config(format!("unknown method '{other}' (one|two|three)"))),
    }
}

pub fn parse_kind(text: &str) -> Result<GenKind> {
    match text {
        "scmevm" => Ok(GenKind::ScmevmTrue),
        "gaussian" => Ok(GenKind::Gaussian),
        "laplace" => Ok(GenKind::Laplace),
        "student-t" => Ok(GenKind::StudentT),
        other => Err(CliError::Config(format!(
            "unknown kind '{other}' (scmevm|gaussian|laplace|student-t)"
        ))),
    }
}

/// Residual dependence structure requested on the command line.
#[derive(Debug, Clone)]
pub enum StructureChoice {
    Independent,
    Saturated,
    Graphical(String),
    Select,
}

pub fn parse_structure(text: &str) -> Result<StructureChoice> {
    match text {
        "independent" => Ok(StructureChoice::Independent),
        "saturated" => Ok(StructureChoice::Saturated),
        "select" => Ok(StructureChoice::Select),
        other => match other.strip_prefix("graphical:") {
            Some(path) if !path.is_empty() => Ok(StructureChoice::Graphical(path.to_string())),
            _ => Err(CliError::Config(format!(
                "unknown structure '{other}' (independent|saturated|graphical:<path>|select)"
            ))),
        },
    }
}

/// Named fixture (`demo5`, `bench16`) or a path to a graph JSON file.
pub fn resolve_graph(text: &str) -> Result<Graph> {
    match text {
        "demo5" => Ok(demo_graph_5()),
        "bench16" => Ok(benchmark_graph_16()),
        path => read_json(Path::new(path)),
    }
}
