//! Run configuration: defaults, the plain-text `key=value` config file, and
//! the canonical header line embedded in every output artifact.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ColumnOrder;
use crate::error::{Error, Result};
use crate::model::Mode;

/// Everything a run needs; serialized verbatim into artifact headers and the
/// checkpoint, so any output can be traced back to its exact configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Dataset preset name (ETH, HOTEL, UNIV1, UNIV3, ZARA1, ZARA2, or any
    /// label for custom data).
    pub dataset: String,
    /// Annotation file path.
    pub data: Option<String>,
    pub mode: Mode,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Seconds per raw frame-id increment.
    pub frame_period: f64,
    /// Window start advance, in annotated frames.
    pub stride: usize,
    pub fractions: [f64; 3],
    pub batch_size: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub clip_norm: f64,
    pub columns: ColumnOrder,
    /// Frozen attention scores file, if any.
    pub scores_file: Option<String>,
    /// Feed the weighted crowd feature instead of raw scores.
    pub crowd_feature: bool,
    /// Output directory.
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "ZARA1".into(),
            data: None,
            mode: Mode::Attention,
            epochs: 30,
            lr: 0.003,
            dropout: 0.5,
            seed: 0,
            frame_period: 0.4,
            stride: 10,
            fractions: [0.8, 0.1, 0.1],
            batch_size: 8,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-8,
            clip_norm: 10.0,
            columns: ColumnOrder::FramePedXY,
            scores_file: None,
            crowd_feature: false,
            out: "out".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.frame_period <= 0.0 {
            return Err(Error::Config("frame_period must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|f| *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "fractions {:?} must be nonnegative and sum to 1",
                self.fractions
            )));
        }
        if self.rmsprop_decay <= 0.0 || self.rmsprop_decay >= 1.0 {
            return Err(Error::Config("rmsprop_decay must be in (0, 1)".into()));
        }
        if self.rmsprop_eps <= 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::Config("rmsprop_eps and clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("{key}={value}: invalid {what}"));
        match key {
            "dataset" => self.dataset = crate::dataset::canonical_dataset_name(value),
            "data" => self.data = Some(value.to_string()),
            "mode" => self.mode = Mode::parse(value)?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("integer"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("number"))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad("number"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("integer"))?,
            "frame_period" => self.frame_period = value.parse().map_err(|_| bad("number"))?,
            "stride" => self.stride = value.parse().map_err(|_| bad("integer"))?,
            "fractions" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 3 {
                    return Err(bad("triple"));
                }
                for (slot, part) in self.fractions.iter_mut().zip(parts) {
                    *slot = part.trim().parse().map_err(|_| bad("number"))?;
                }
            }
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("integer"))?,
            "rmsprop_decay" => self.rmsprop_decay = value.parse().map_err(|_| bad("number"))?,
            "rmsprop_eps" => self.rmsprop_eps = value.parse().map_err(|_| bad("number"))?,
            "clip_norm" => self.clip_norm = value.parse().map_err(|_| bad("number"))?,
            "columns" => self.columns = ColumnOrder::parse(value)?,
            "scores_file" => self.scores_file = Some(value.to_string()),
            "crowd_feature" => self.crowd_feature = value.parse().map_err(|_| bad("bool"))?,
            "out" => self.out = value.to_string(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Reads a `key=value` file (one pair per line, `#` comments) over the
    /// current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(Error::Parse {
                line: lineno + 1,
                msg: "expected key=value".into(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The canonical one-line form embedded in artifact headers. Field order
    /// is fixed; identical configurations produce identical lines.
    pub fn header_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "dataset={} data={} mode={} epochs={} lr={} dropout={} seed={} frame_period={} \
             stride={} fractions={},{},{} batch_size={} rmsprop_decay={} rmsprop_eps={} \
             clip_norm={} columns={} scores_file={} crowd_feature={} out={}",
            self.dataset,
            self.data.as_deref().unwrap_or("-"),
            self.mode,
            self.epochs,
            self.lr,
            self.dropout,
            self.seed,
            self.frame_period,
            self.stride,
            self.fractions[0],
            self.fractions[1],
            self.fractions[2],
            self.batch_size,
            self.rmsprop_decay,
            self.rmsprop_eps,
            self.clip_norm,
            self.columns,
            self.scores_file.as_deref().unwrap_or("-"),
            self.crowd_feature,
            self.out,
        );
        s
    }

    /// True when two runs were trained over the same sample partition, which
    /// is what makes their metrics comparable.
    pub fn same_split(&self, other: &RunConfig) -> bool {
        self.dataset == other.dataset
            && self.data == other.data
            && self.seed == other.seed
            && self.frame_period == other.frame_period
            && self.stride == other.stride
            && self.fractions == other.fractions
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn set_and_override() {
        let mut c = RunConfig::default();
        c.set("mode", "social").unwrap();
        c.set("epochs", "5").unwrap();
        c.set("fractions", "0.6,0.2,0.2").unwrap();
        assert_eq!(c.mode, Mode::SocialOnly);
        assert_eq!(c.epochs, 5);
        assert_eq!(c.fractions, [0.6, 0.2, 0.2]);
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("epochs", "x").is_err());
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut c = RunConfig::default();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.fractions = [0.5, 0.2, 0.2];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.lr = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nmode = social\nlr = 0.01\nseed=7\n").unwrap();
        let mut c = RunConfig::default();
        c.apply_file(&path).unwrap();
        assert_eq!(c.mode, Mode::SocialOnly);
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn header_line_is_deterministic() {
        let c = RunConfig::default();
        assert_eq!(c.header_line(), c.header_line());
        assert!(c.header_line().contains("lr=0.003"));
        assert!(c.header_line().contains("fractions=0.8,0.1,0.1"));
    }

    #[test]
    fn same_split_ignores_mode_and_epochs() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.mode = Mode::SocialOnly;
        b.epochs = 1;
        assert!(a.same_split(&b));
        b.seed = 9;
        assert!(!a.same_split(&b));
    }
}
