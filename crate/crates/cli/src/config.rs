//! Run configuration: a TOML file provides defaults, command-line flags
//! override file keys, and the merged result is echoed next to the outputs
//! for provenance.

use std::path::{Path, PathBuf};

use mrct::decomp::DecompConfig;
use mrct::harness::WarmStart;
use mrct::objective::{PenaltySpec, RegKind, RegScope, RegularizerSpec};
use mrct::solver::SolverConfig;
use mrct::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub label_column: Option<String>,
    pub depth: Option<usize>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub regularizer: Vec<RegularizerSpec>,
    pub penalty: Option<PenaltySpec>,
    pub solver: Option<SolverConfig>,
    pub decomp: Option<DecompConfig>,
    pub harness: Option<HarnessConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub k: Option<usize>,
    pub grid_min_exp: Option<i32>,
    pub grid_max_exp: Option<i32>,
    pub warm: Option<WarmStart>,
    pub psi_grid: Option<Vec<f64>>,
    pub inner_k: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// The fully resolved configuration echoed to `effective-config.toml`.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    pub data: PathBuf,
    pub label_column: Option<String>,
    pub depth: usize,
    pub gamma: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub regularizer: Vec<RegularizerSpec>,
    pub penalty: PenaltySpec,
    pub solver: SolverConfig,
    pub decomp: Option<DecompConfig>,
    pub harness_k: usize,
    pub warm: WarmStart,
}

/// Parses the compact regularizer grammar `kind:scope:lambda[:alpha|:q,eps]`.
pub fn parse_reg_spec(text: &str) -> Result<RegularizerSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() < 3 || parts.len() > 4 {
        return Err(Error::Config(format!(
            "regularizer {text:?} must be kind:scope:lambda[:alpha|:q,eps]"
        )));
    }
    let kind = match parts[0] {
        "l1" => RegKind::L1,
        "linf" => RegKind::LInf,
        "l0exp" => RegKind::L0Exp,
        "appr1" => RegKind::Appr1,
        "appr2" => RegKind::Appr2,
        "logeps" => RegKind::LogEps,
        other => {
            return Err(Error::Config(format!(
                "unknown regularizer kind {other:?} (expected l1, linf, l0exp, appr1, appr2 or logeps)"
            )))
        }
    };
    let scope = match parts[1] {
        "local" => RegScope::Local,
        "global" => RegScope::Global,
        other => {
            return Err(Error::Config(format!(
                "unknown regularizer scope {other:?} (expected local or global)"
            )))
        }
    };
    let lambda: f64 = parts[2]
        .parse()
        .map_err(|_| Error::Config(format!("bad lambda {:?}", parts[2])))?;
    let mut spec = RegularizerSpec::new(kind, scope, lambda);
    if let Some(extra) = parts.get(3) {
        match kind {
            RegKind::L0Exp => {
                spec.alpha = extra
                    .parse()
                    .map_err(|_| Error::Config(format!("bad alpha {extra:?}")))?;
            }
            RegKind::Appr1 | RegKind::Appr2 | RegKind::LogEps => {
                let (q, eps) = extra.split_once(',').ok_or_else(|| {
                    Error::Config(format!("expected q,eps after {kind:?}, got {extra:?}"))
                })?;
                spec.q = q
                    .parse()
                    .map_err(|_| Error::Config(format!("bad q {q:?}")))?;
                spec.eps = eps
                    .parse()
                    .map_err(|_| Error::Config(format!("bad eps {eps:?}")))?;
            }
            _ => {
                return Err(Error::Config(format!(
                    "{:?} takes no extra shape parameters",
                    parts[0]
                )))
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}
