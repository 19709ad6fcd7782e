//! Rank override files.
//!
//! One layer per line: `name rs rt` (Tucker-2), `name r` (Tucker-1),
//! `name auto` (ranks from VBMF) or `name skip`. `#` starts a comment.

use std::fmt;

use thiserror::Error;
use tuckervid_core::compress::{CompressionPlan, RankSpec, Strategy};
use tuckervid_core::cost::Rewrite;
use tuckervid_core::network::{LayerKind, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankOverride {
    Tucker2 { rs: usize, rt: usize },
    Tucker1 { r: usize },
    Auto,
    Skip,
}

impl fmt::Display for RankOverride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankOverride::Tucker2 { rs, rt } => write!(f, "{rs} {rt}"),
            RankOverride::Tucker1 { r } => write!(f, "{r}"),
            RankOverride::Auto => f.write_str("auto"),
            RankOverride::Skip => f.write_str("skip"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RankFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: layer `{layer}` listed twice")]
    Duplicate { line: usize, layer: String },
    #[error("rank file names unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("layer `{0}` has no weights to compress")]
    NotCompressible(String),
    #[error("`auto` for `{0}` needs the model weights")]
    NeedsWeights(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RankFile {
    pub entries: Vec<(String, RankOverride)>,
}

impl RankFile {
    pub fn parse(text: &str) -> Result<Self, RankFileError> {
        let mut entries: Vec<(String, RankOverride)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            let syntax = |msg: String| RankFileError::Syntax { line, msg };
            let rank = |s: &str| -> Result<usize, RankFileError> {
                match s.parse::<usize>() {
                    Ok(0) => Err(syntax("ranks must be at least 1".into())),
                    Ok(r) => Ok(r),
                    Err(_) => Err(syntax(format!("`{s}` is not a rank"))),
                }
            };
            let o = match fields[1..] {
                [] => return Err(syntax(format!("missing ranks for `{}`", fields[0]))),
                ["auto"] => RankOverride::Auto,
                ["skip"] => RankOverride::Skip,
                [r] => RankOverride::Tucker1 { r: rank(r)? },
                [rs, rt] => RankOverride::Tucker2 {
                    rs: rank(rs)?,
                    rt: rank(rt)?,
                },
                _ => return Err(syntax(format!("too many fields: `{body}`"))),
            };
            let name = fields[0].to_string();
            if entries.iter().any(|(n, _)| *n == name) {
                return Err(RankFileError::Duplicate { line, layer: name });
            }
            entries.push((name, o));
        }
        Ok(Self { entries })
    }

    fn check_layers(&self, net: &NetworkSpec) -> Result<(), RankFileError> {
        for (name, o) in &self.entries {
            let layer = net.layer(name).ok_or_else(|| RankFileError::UnknownLayer(name.clone()))?;
            if !layer.kind.has_weights() && *o != RankOverride::Skip {
                return Err(RankFileError::NotCompressible(name.clone()));
            }
        }
        Ok(())
    }

    /// Applies the overrides on top of `plan`. `auto` keeps the plan's
    /// strategy, or picks a default one if the plan skipped the layer.
    pub fn apply(&self, net: &NetworkSpec, plan: &mut CompressionPlan) -> Result<(), RankFileError> {
        self.check_layers(net)?;
        for (name, o) in &self.entries {
            let (strategy, ranks) = match *o {
                RankOverride::Tucker2 { rs, rt } => (Strategy::Tucker2, RankSpec::Explicit(vec![rs, rt])),
                RankOverride::Tucker1 { r } => (Strategy::Tucker1, RankSpec::Explicit(vec![r])),
                RankOverride::Skip => (Strategy::Skip, RankSpec::Auto),
                RankOverride::Auto => {
                    let current = plan.entry(name).map(|e| e.strategy);
                    let strategy = match (current, &net.layer(name).expect("checked").kind) {
                        (Some(s), _) if s != Strategy::Skip => s,
                        (_, LayerKind::Linear(_)) => Strategy::Tucker1,
                        _ => Strategy::Tucker2,
                    };
                    (strategy, RankSpec::Auto)
                }
            };
            plan.set(name, strategy, ranks)
                .map_err(|_| RankFileError::UnknownLayer(name.clone()))?;
        }
        Ok(())
    }

    /// Closed-form rewrites for cost projection. Layers not listed are kept.
    pub fn rewrites(&self, net: &NetworkSpec) -> Result<Vec<(String, Rewrite)>, RankFileError> {
        self.check_layers(net)?;
        self.entries
            .iter()
            .map(|(name, o)| {
                let rw = match *o {
                    RankOverride::Tucker2 { rs, rt } => Rewrite::Tucker2 { rs, rt },
                    RankOverride::Tucker1 { r } => Rewrite::Tucker1 { r },
                    RankOverride::Skip => Rewrite::Keep,
                    RankOverride::Auto => return Err(RankFileError::NeedsWeights(name.clone())),
                };
                Ok((name.clone(), rw))
            })
            .collect()
    }
}
