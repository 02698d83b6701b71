//! TOML run configuration. Every key is optional; missing keys take the
//! library defaults, and command-line flags override the file.

use std::path::Path;

use jigsaw_core::depth::DepthSampleConfig;
use jigsaw_core::image_jigsaw::ImageGridConfig;
use jigsaw_core::reward::{parse_rational, rational_from_f64, Rational, RewardSpec};
use jigsaw_core::video::VideoClipConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub image: ImageGridConfig,
    pub video: VideoClipConfig,
    #[serde(alias = "3d")]
    pub rgbd: DepthSampleConfig,
    pub reward: RewardSection,
    pub run: RunSection,
}

/// A fraction written as a TOML number or as a string like `"1/5"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Fraction {
    Number(f64),
    Text(String),
}

impl Fraction {
    fn to_rational(&self, field: &str) -> Result<Rational, CliError> {
        match self {
            Fraction::Number(x) => rational_from_f64(*x),
            Fraction::Text(s) => parse_rational(s),
        }
        .map_err(|e| CliError::Config(format!("{field}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub gamma: Option<Fraction>,
    pub format_bonus: Option<Fraction>,
    pub partial_credit: bool,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection {
            gamma: None,
            format_bonus: None,
            partial_credit: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub shard_size: Option<usize>,
    pub created_unix_s: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reward spec from the file, with flag values taking precedence.
    pub fn reward_spec(&self, gamma: Option<&str>, format_bonus: Option<&str>) -> Result<RewardSpec, CliError> {
        let pick = |flag: Option<&str>, file: &Option<Fraction>, field: &str, default: Rational| match (flag, file) {
            (Some(s), _) => parse_rational(s).map_err(|e| CliError::Config(format!("{field}: {e}"))),
            (None, Some(f)) => f.to_rational(field),
            (None, None) => Ok(default),
        };
        let d = RewardSpec::default();
        let gamma = pick(gamma, &self.reward.gamma, "reward.gamma", d.gamma())?;
        let bonus = pick(format_bonus, &self.reward.format_bonus, "reward.format_bonus", d.format_bonus())?;
        RewardSpec::new(gamma, bonus)
            .map(|s| s.with_partial_credit(self.reward.partial_credit))
            .map_err(|e| CliError::Config(format!("reward: {e}")))
    }
}

/// Parses `MxN` (rows by columns).
pub fn parse_grid(s: &str) -> Result<(u32, u32), CliError> {
    let bad = || CliError::Config(format!("--grid: expected ROWSxCOLS, got {s:?}"));
    let (m, n) = s.split_once(['x', 'X', '*']).ok_or_else(bad)?;
    Ok((m.trim().parse().map_err(|_| bad())?, n.trim().parse().map_err(|_| bad())?))
}
