//! TOML experiment files.
//!
//! Every section and key is optional; missing values take the evaluation
//! defaults. Unknown keys are rejected.
//!
//! ```toml
//! [channel]      # ChannelConfig
//! [measurement]  # MeasurementOptions
//! [gd]           # GdConfig
//! [localization] # LocalizationOptions
//! [plan]         # McPlan: k_values, runs_per_point, seed
//! [[plan.filters]]
//! kind = "ages"
//! [[scenarios]]  # ScenarioConfig, one table per scenario
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::localization::GdConfig;
use crate::measurement::MeasurementOptions;
use crate::sim::{LocalizationOptions, McPlan, ScenarioConfig, SimSettings};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub channel: ChannelConfig,
    pub measurement: MeasurementOptions,
    pub gd: GdConfig,
    pub localization: LocalizationOptions,
    pub plan: McPlan,
    pub scenarios: Vec<ScenarioConfig>,
}

impl Default for ExperimentFile {
    fn default() -> Self {
        Self {
            channel: ChannelConfig::default(),
            measurement: MeasurementOptions::default(),
            gd: GdConfig::default(),
            localization: LocalizationOptions::default(),
            plan: McPlan::default(),
            scenarios: default_scenarios(),
        }
    }
}

/// The three evaluation scenarios: 20 m / 90 km/h, 30 m / 90 km/h, 30 m / 50 km/h.
pub fn default_scenarios() -> Vec<ScenarioConfig> {
    vec![
        ScenarioConfig::new("h20_v90", 20.0, 90.0),
        ScenarioConfig::new("h30_v90", 30.0, 90.0),
        ScenarioConfig::new("h30_v50", 30.0, 50.0),
    ]
}

/// Bundled presets as `(name, description, toml)`.
pub const PRESETS: [(&str, &str, &str); 4] = [
    ("all", "all three scenarios", include_str!("../presets/all.toml")),
    ("h20_v90", "altitude 20 m, 90 km/h", include_str!("../presets/h20_v90.toml")),
    ("h30_v90", "altitude 30 m, 90 km/h", include_str!("../presets/h30_v90.toml")),
    ("h30_v50", "altitude 30 m, 50 km/h", include_str!("../presets/h30_v50.toml")),
];

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn preset(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, _, text)| Self::parse(text).expect("bundled presets parse"))
    }

    /// Loads `source` as a file path, or as a preset name when no such file exists.
    pub fn load(source: &str) -> Result<Self> {
        let path = Path::new(source);
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return Self::parse(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{source}: {msg}")),
                other => other,
            });
        }
        Self::preset(source).ok_or_else(|| {
            let names: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
            Error::Config(format!(
                "'{source}' is neither a readable file nor a preset ({})",
                names.join(", ")
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.gd.validate()?;
        self.plan.validate()?;
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios configured".into()));
        }
        let mut ids: Vec<&str> = self.scenarios.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate scenario id '{}'", w[0])));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        Ok(())
    }

    pub fn settings(&self) -> SimSettings {
        SimSettings {
            channel: self.channel.clone(),
            measurement: self.measurement.clone(),
            gd: self.gd.clone(),
            localization: self.localization.clone(),
        }
    }
}
