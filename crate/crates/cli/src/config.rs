//! Flag and config-file resolution.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use scenclust_core::dataset::Scenery;
use scenclust_core::forest::ForestConfig;
use scenclust_core::pipeline::{InputSpec, SessionRequest, SubsetSpec};
use scenclust_core::proximity::CoLeafRule;
use scenclust_core::render::RenderSpec;
use scenclust_core::seriation::Linkage;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_OUT: &str = "scenclust-out";

#[derive(Debug, Parser)]
#[command(
    name = "scenclust",
    version,
    about = "Cluster traffic scenarios with unsupervised random forests"
)]
pub struct Args {
    /// Scenario CSV to cluster.
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate N scenarios per scenery template instead of reading a CSV.
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub i_min: Option<f64>,
    #[arg(long)]
    pub m_min: Option<usize>,
    #[arg(long, value_name = "average|single|complete")]
    pub linkage: Option<Linkage>,
    /// Reorder leaves optimally after linkage.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub olo: Option<bool>,
    /// Forest seed; also seeds the synthetic generator.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Re-cluster the ordered block [LO, HI) of a finished session.
    #[arg(long, value_name = "SESSION:LO:HI", value_parser = parse_subset)]
    pub subset: Option<SubsetSpec>,
    /// Artifact store root.
    #[arg(long, env = "SCENCLUST_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run one session per value and write a contact sheet.
    #[arg(long, value_name = "A,B,..", value_delimiter = ',', num_args = 1..)]
    pub sweep_i_min: Option<Vec<f64>>,
    /// JSON config; flags take precedence over its fields.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

pub fn parse_subset(s: &str) -> Result<SubsetSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [parent, lo, hi] = parts[..] else {
        return Err(format!("expected SESSION:LO:HI, got {s:?}"));
    };
    let num = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| format!("{v:?} is not an index"))
    };
    Ok(SubsetSpec {
        parent: parent.to_owned(),
        lo: num(lo)?,
        hi: num(hi)?,
    })
}

/// Config file layout; every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<InputSpec>,
    pub trees: Option<usize>,
    pub i_min: Option<f64>,
    pub m_min: Option<usize>,
    pub seed: Option<u64>,
    pub subspace_size: Option<usize>,
    pub linkage: Option<Linkage>,
    pub olo: Option<bool>,
    pub co_leaf: Option<CoLeafRule>,
    pub render: Option<RenderSpec>,
    pub subset: Option<SubsetSpec>,
    pub out: Option<PathBuf>,
    pub sweep_i_min: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bad = |message: String| CliError::Config {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let mut config: FileConfig = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        // relative paths inside the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(InputSpec::Csv { path }) = &mut config.input {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(out) = &mut config.out {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(config)
    }
}

/// Fully merged settings for one invocation.
#[derive(Debug)]
pub struct Plan {
    pub input: Option<InputSpec>,
    pub request: SessionRequest,
    pub out: PathBuf,
    pub sweep: Option<Vec<f64>>,
}

pub fn resolve(args: Args) -> Result<Plan, CliError> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let input = match (args.input, args.synthetic) {
        (Some(path), _) => Some(InputSpec::Csv { path }),
        (None, Some(count_per_template)) => Some(InputSpec::Synthetic {
            count_per_template,
            seed,
            sceneries: Scenery::ALL.to_vec(),
        }),
        (None, None) => file.input,
    };
    let defaults = ForestConfig::default();
    let forest = ForestConfig {
        trees: args.trees.or(file.trees).unwrap_or(defaults.trees),
        i_min: args.i_min.or(file.i_min).unwrap_or(defaults.i_min),
        m_min: args.m_min.or(file.m_min).unwrap_or(defaults.m_min),
        seed,
        subspace_size: file.subspace_size,
    };
    let subset = args.subset.or(file.subset);
    if input.is_none() && subset.is_none() {
        return Err(CliError::NoInput);
    }
    let request = SessionRequest {
        dataset_id: None,
        forest,
        linkage: args.linkage.or(file.linkage).unwrap_or_default(),
        olo: args.olo.or(file.olo).unwrap_or(false),
        co_leaf: file.co_leaf.unwrap_or_default(),
        render: file.render.unwrap_or_default(),
        subset,
    };
    Ok(Plan {
        input,
        request,
        out: args
            .out
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        sweep: args.sweep_i_min.or(file.sweep_i_min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> Args {
        Args::try_parse_from(std::iter::once("scenclust").chain(extra.iter().copied())).unwrap()
    }

    #[test]
    fn subset_syntax() {
        let s = parse_subset("abc:3:9").unwrap();
        assert_eq!((s.parent.as_str(), s.lo, s.hi), ("abc", 3, 9));
        assert!(parse_subset("abc:3").is_err());
        assert!(parse_subset("abc:x:9").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"input": {"kind": "csv", "path": "rows.csv"}, "trees": 7, "i_min": 0.1, "olo": true}"#,
        )
        .unwrap();
        let plan = resolve(args(&[
            "--config",
            path.to_str().unwrap(),
            "--i-min",
            "0.3",
        ]))
        .unwrap();
        assert_eq!(plan.request.forest.trees, 7);
        assert_eq!(plan.request.forest.i_min, 0.3);
        assert!(plan.request.olo);
        assert_eq!(
            plan.input,
            Some(InputSpec::Csv {
                path: dir.path().join("rows.csv")
            })
        );
        let plan = resolve(args(&[
            "--config",
            path.to_str().unwrap(),
            "--olo",
            "false",
        ]))
        .unwrap();
        assert!(!plan.request.olo);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"tress": 7}"#).unwrap();
        let err = resolve(args(&["--config", path.to_str().unwrap()])).unwrap_err();
        assert_eq!(err.kind(), "invalid_config");
    }

    #[test]
    fn input_is_required_without_a_subset() {
        assert!(matches!(resolve(args(&[])), Err(CliError::NoInput)));
        assert!(resolve(args(&["--subset", "0123456789abcdef:0:4"])).is_ok());
    }

    #[test]
    fn sweep_list_splits_on_commas() {
        let plan = resolve(args(&[
            "--synthetic",
            "5",
            "--sweep-i-min",
            "0.24,0.29,0.34",
        ]))
        .unwrap();
        assert_eq!(plan.sweep, Some(vec![0.24, 0.29, 0.34]));
    }
}
