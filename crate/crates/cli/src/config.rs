use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use inse_core::dataset::{CodecTool, OracleTool, ToolsConfig};
use inse_core::frontend::GammatoneConfig;
use inse_core::training::TrainConfig;
use serde::Deserialize;

/// A problem with the invocation rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Contents of the `--config` TOML file.
///
/// ```toml
/// workers = 4
/// seed = 0
/// out_dir = "runs/a"
/// [train]
/// epochs = 50
/// [gammatone]
/// db_floor = -120.0
/// [codecs.heaac]
/// executable = "/opt/codecs/heaac.sh"
/// bitrates = [16, 20, 24, 32, 40, 48]
/// [oracle]
/// executable = "/opt/visqol/run.sh"
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub gammatone: GammatoneConfig,
    #[serde(default)]
    pub codecs: BTreeMap<String, CodecTool>,
    #[serde(default)]
    pub oracle: OracleTool,
    #[serde(skip)]
    pub tools: ToolsConfig,
}

impl CliConfig {
    pub fn parse(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut cfg: CliConfig =
            toml::from_str(text).map_err(|e| UsageError(format!("config: {e}")))?;
        if cfg.train.gammatone != GammatoneConfig::default() {
            return Err(UsageError(
                "config: put frontend settings under [gammatone], not [train.gammatone]".into(),
            )
            .into());
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for tool in cfg.codecs.values_mut() {
            resolve(&mut tool.executable);
        }
        for p in [
            &mut cfg.oracle.executable,
            &mut cfg.oracle.labels_csv,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        Ok(cfg)
    }

    /// Loads the file (if any), then layers `INSE_CODEC_<ID>` / `INSE_ORACLE`
    /// from the environment over the tool paths.
    pub fn resolve(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text, p.parent().unwrap_or(Path::new(".")))
                    .with_context(|| format!("in {}", p.display()))?
            }
            None => Self::default(),
        };
        cfg.tools = ToolsConfig {
            codecs: cfg.codecs.clone(),
            oracle: cfg.oracle.clone(),
        };
        cfg.tools.apply_env(env);
        Ok(cfg)
    }
}

/// Training flags; each one overrides its environment variable, which in
/// turn overrides the `[train]` table of the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainOverrides {
    /// Adam learning rate [default: 4e-5]
    #[arg(long, env = "INSE_LEARNING_RATE")]
    pub learning_rate: Option<f64>,
    /// Mini-batch size [default: 32]
    #[arg(long, env = "INSE_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Epochs per fold [default: 50]
    #[arg(long, env = "INSE_EPOCHS")]
    pub epochs: Option<usize>,
    /// Cross-validation folds, split by excerpt [default: 5, i.e. 80/20 train/validation]
    #[arg(long, env = "INSE_FOLDS")]
    pub folds: Option<usize>,
    /// Smooth-L1 transition point [default: 1.0]
    #[arg(long, env = "INSE_SMOOTH_L1_BETA")]
    pub smooth_l1_beta: Option<f64>,
    /// Dropout before each hidden fully connected layer [default: 0.5]
    #[arg(long, env = "INSE_DROPOUT")]
    pub dropout: Option<f64>,
    /// Narrow every 64-wide branch to this width [default: full size]
    #[arg(long, env = "INSE_WIDTH")]
    pub width: Option<usize>,
    /// Train only these fold indices [default: all]
    #[arg(long, value_delimiter = ',')]
    pub only_folds: Option<Vec<usize>>,
    /// Stop each fold after this many optimizer steps [default: no limit]
    #[arg(long, env = "INSE_MAX_STEPS")]
    pub max_steps: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.folds {
            c.k_folds = v;
        }
        if let Some(v) = self.smooth_l1_beta {
            c.smooth_l1_beta = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        if self.width.is_some() {
            c.width = self.width;
        }
        if self.only_folds.is_some() {
            c.folds = self.only_folds.clone();
        }
        if self.max_steps.is_some() {
            c.max_steps = self.max_steps;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(CliConfig::parse("bogus = 1", Path::new(".")).is_err());
        assert!(CliConfig::parse("[train]\nlr = 1", Path::new(".")).is_err());
        assert!(CliConfig::parse("[train.gammatone]\nn_bands = 16", Path::new(".")).is_err());
    }

    #[test]
    fn empty_file_gives_reference_defaults() {
        let c = CliConfig::parse("", Path::new(".")).unwrap();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.gammatone, GammatoneConfig::default());
    }

    #[test]
    fn flag_beats_file_and_env_beats_file_tools() {
        let c = CliConfig::parse(
            "[train]\nepochs = 7\nlearning_rate = 1e-3\n[codecs.aac]\nexecutable = \"aac.sh\"\nbitrates = [96]\n",
            Path::new("/etc/inse"),
        )
        .unwrap();
        assert_eq!(
            c.codecs["aac"].executable,
            PathBuf::from("/etc/inse/aac.sh")
        );
        let flags = TrainOverrides {
            epochs: Some(2),
            ..Default::default()
        };
        let t = flags.apply(c.train.clone());
        assert_eq!((t.epochs, t.learning_rate, t.batch_size), (2, 1e-3, 32));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[codecs.aac]\nexecutable = \"aac.sh\"\nbitrates = [96]\n",
        )
        .unwrap();
        let r = CliConfig::resolve(
            Some(&path),
            [("INSE_CODEC_AAC".to_string(), "/usr/bin/aac".to_string())],
        )
        .unwrap();
        assert_eq!(
            r.tools.codecs["aac"].executable,
            PathBuf::from("/usr/bin/aac")
        );
        assert_eq!(r.tools.codecs["aac"].bitrates, vec![96]);
    }
}
