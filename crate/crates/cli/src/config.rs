use std::path::{Path, PathBuf};

use ftree_core::hypergraphs::ConfigFile;
use ftree_core::measures::MeasureFile;
use ftree_core::trees::TreeFile;
use ftree_core::{CantorParams, ConfigGraph, DiscreteMeasure, Mollifier, NormOptions, PhiSpec, TreeGraph};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A file path or the object itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureSource {
    Cantor { cantor: CantorParams },
    Other(Source<MeasureFile>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    pub phi: Option<PhiSpec>,
    pub t: Option<f64>,
    pub eps: Option<f64>,
    pub mollifier: Option<Mollifier>,
}

/// Everything a run depends on. Command-line flags override the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub measure: Option<MeasureSource>,
    #[serde(default)]
    pub kernel: KernelBlock,
    pub tree: Option<Source<TreeFile>>,
    pub config_graph: Option<Source<ConfigFile>>,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub steps: Option<usize>,
    pub tol: Option<f64>,
    pub threshold: Option<f64>,
    pub budget: Option<u64>,
    pub seed: Option<u64>,
    /// Parameters for `gen-measure`.
    pub cantor: Option<CantorParams>,
    /// Sobolev exponent of the averaging operator; defaults to `(d - 1) / 2`.
    pub alpha: Option<f64>,
    pub n_param: Option<f64>,
    /// Iteration cap for operator norms.
    pub norm_max_iter: Option<usize>,
    pub ma_samples: Option<usize>,
    pub grid_log2: Option<u32>,
    pub annulus_range: Option<[i32; 2]>,
    pub norm_range: Option<[i32; 2]>,
    pub bump: Option<Mollifier>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        cfg.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Resolves relative file references against `dir`.
    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(MeasureSource::Other(Source::Path(p))) = &mut self.measure {
            fix(p);
        }
        if let Some(Source::Path(p)) = &mut self.tree {
            fix(p);
        }
        if let Some(Source::Path(p)) = &mut self.config_graph {
            fix(p);
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn measure(&self) -> Result<DiscreteMeasure, CliError> {
        match &self.measure {
            None => Err(CliError::Usage("no measure given (--measure or config `measure`)".into())),
            Some(MeasureSource::Cantor { cantor }) => {
                Ok(ftree_core::gen_cantor_measure(cantor, self.budget_or(1 << 20) as usize)?)
            }
            Some(MeasureSource::Other(Source::Path(p))) => read_json::<MeasureFile>(p)?.into_measure().map_err(Into::into),
            Some(MeasureSource::Other(Source::Inline(f))) => f.clone().into_measure().map_err(Into::into),
        }
    }

    pub fn tree(&self) -> Result<Option<TreeGraph>, CliError> {
        Ok(match &self.tree {
            None => None,
            Some(Source::Path(p)) => Some(read_json::<TreeFile>(p)?.into_tree()?),
            Some(Source::Inline(f)) => Some(f.clone().into_tree()?),
        })
    }

    pub fn require_tree(&self) -> Result<TreeGraph, CliError> {
        self.tree()?
            .ok_or_else(|| CliError::Usage("no tree given (--tree or config `tree`)".into()))
    }

    pub fn config_graph(&self) -> Result<ConfigGraph, CliError> {
        match &self.config_graph {
            None => Err(CliError::Usage("no configuration graph given (config `config_graph`)".into())),
            Some(Source::Path(p)) => Ok(read_json::<ConfigFile>(p)?.into_config()?),
            Some(Source::Inline(f)) => Ok(f.clone().into_config()?),
        }
    }

    pub fn phi(&self) -> PhiSpec {
        self.kernel.phi.clone().unwrap_or(PhiSpec::Euclidean)
    }

    pub fn mollifier(&self) -> Mollifier {
        self.kernel.mollifier.unwrap_or_default()
    }

    pub fn t(&self) -> Result<f64, CliError> {
        self.kernel.t.ok_or_else(|| missing("--t", "kernel.t"))
    }

    pub fn eps(&self) -> Result<f64, CliError> {
        self.kernel.eps.ok_or_else(|| missing("--eps", "kernel.eps"))
    }

    pub fn norm_options(&self) -> NormOptions {
        let mut opts = NormOptions::default();
        if let Some(n) = self.norm_max_iter {
            opts.max_iter = n;
        }
        opts
    }

    pub fn budget_or(&self, default: u64) -> u64 {
        self.budget.unwrap_or(default)
    }
}

pub fn missing(flag: &str, key: &str) -> CliError {
    CliError::Usage(format!("missing parameter: pass {flag} or set `{key}` in the config"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// `--phi` accepts a bare family name (`euclidean`) or a JSON object such as
/// `{"family":"quadratic_form","params":[[4,0],[0,1]]}`.
pub fn parse_phi(arg: &str) -> Result<PhiSpec, CliError> {
    let text = arg.trim();
    if text.starts_with('{') {
        return serde_json::from_str(text).map_err(|e| CliError::Usage(format!("--phi: {e}")));
    }
    match text {
        "euclidean" => Ok(PhiSpec::Euclidean),
        "quadratic_form" | "perturbed_euclidean" => Err(CliError::Usage(format!(
            "--phi {text} needs parameters: pass a JSON object or set `kernel.phi` in the config"
        ))),
        other => Err(CliError::Usage(format!(
            "unknown phi family `{other}` (euclidean, quadratic_form, perturbed_euclidean)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_forms_parse() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"measure": {"cantor": {"dim": 1, "branches": 2, "ratio": 0.3333333333333333, "depth": 3}},
                "kernel": {"phi": {"family": "euclidean"}, "t": 0.5, "eps": 0.1},
                "tree": {"n": 3, "edges": [[1, 2], [2, 3]]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.measure().unwrap().len(), 8);
        assert_eq!(cfg.tree().unwrap().unwrap().n(), 3);
        let path: ExperimentConfig = serde_json::from_str(r#"{"measure": "m.json"}"#).unwrap();
        assert!(matches!(path.measure, Some(MeasureSource::Other(Source::Path(_)))));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn phi_flag() {
        assert_eq!(parse_phi("euclidean").unwrap(), PhiSpec::Euclidean);
        assert!(parse_phi("quadratic_form").is_err());
        assert!(parse_phi("nope").is_err());
        let q = parse_phi(r#"{"family":"quadratic_form","params":[[4,0],[0,1]]}"#).unwrap();
        assert_eq!(q.family(), "quadratic_form");
    }
}
