//! `key=value` experiment configuration files.

use std::path::Path;

use crate::data::{Protocol, SplitSpec};
use crate::error::{Error, Result};
use crate::harness::train::TrainConfig;
use crate::model::ModelConfig;

/// Model, optimization and split settings of one experiment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = || Error::Config(format!("invalid value '{value}' for {key}"));
        match key {
            k if ModelConfig::is_key(k) => self.model.set(k, value),
            k if TrainConfig::is_key(k) => self.train.set(k, value),
            "split" => {
                self.split.protocol = value.parse::<Protocol>().map_err(|_| bad())?;
                Ok(())
            }
            "split_seed" => {
                self.split.seed = value.parse().map_err(|_| bad())?;
                Ok(())
            }
            "split_ratios" => {
                let r = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                self.split.ratios = r.try_into().map_err(|_| bad())?;
                Ok(())
            }
            _ => Err(Error::Config(format!("unknown key '{key}'"))),
        }
    }

    /// Parses lines of `key=value`; `#` starts a comment and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies the settings of `text` on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |message: String| Error::Parse { line: i + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key=value, got '{line}'")))?;
            self.set(k.trim(), v).map_err(|e| at(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = self.model.to_pairs();
        pairs.extend(self.train.to_pairs());
        let r: Vec<String> = self.split.ratios.iter().map(|v| v.to_string()).collect();
        pairs.push(("split".into(), self.split.protocol.to_string()));
        pairs.push(("split_ratios".into(), r.join(",")));
        pairs.push(("split_seed".into(), self.split.seed.to_string()));
        pairs
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn parses_every_section() {
        let cfg = ExperimentConfig::parse("# demo\nd_model = 16\nlr=0.01 # fast\n\nseeds=0..2\nsplit=sd\nvariant=no-sgm\n").unwrap();
        assert_eq!(cfg.model.d_model, 16);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.split.protocol, Protocol::SubjectDependent);
        assert_eq!(cfg.model.variant, Variant::NoSgm);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ExperimentConfig::parse("d_model=8\n\nlearning_rate=1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("learning_rate"));
        assert!(matches!(ExperimentConfig::parse("d_model"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn text_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("kernels", "3,7").unwrap();
        cfg.set("split_ratios", "0.5,0.25,0.25").unwrap();
        cfg.set("d_node", "6").unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
