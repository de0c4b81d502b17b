use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controller::TheoremMode;
use crate::cost::{setpoint_rng, CostSequence, RandomSetpoints, SetpointSchedule};
use crate::error::{Error, Result};
use crate::linalg;
use crate::system::{LinearSystem, SystemSpec};

use super::export::read_schedule_csv;
use super::SimOptions;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub q: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SetpointSpec {
    Random {
        change_prob: f64,
        eta_range: [f64; 2],
    },
    /// CSV with columns `t,theta_1..theta_n,eta_1..eta_m`. Relative paths
    /// are resolved against the config file's directory by [`RunConfig::load`].
    Schedule { schedule_file: PathBuf },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub cost: CostSpec,
    pub horizon: usize,
    pub gamma_v: f64,
    pub gamma_x: f64,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub setpoints: SetpointSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_true")]
    pub record_predictions: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text).map_err(|e| Error::format(path, e))?;
        if let SetpointSpec::Schedule { schedule_file } = &mut config.setpoints {
            if schedule_file.is_relative() {
                if let Some(dir) = path.parent() {
                    *schedule_file = dir.join(&*schedule_file);
                }
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn mode(&self) -> TheoremMode {
        if self.strict {
            TheoremMode::Strict
        } else {
            TheoremMode::Advisory
        }
    }

    /// Shape checks that need no numerical work.
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if let SetpointSpec::Random { change_prob, eta_range } = self.setpoints {
            RandomSetpoints { change_prob, eta_range }.validate()?;
            if self.seed.is_none() {
                return Err(Error::InvalidArgument(
                    "random setpoints need a seed".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn linear_system(&self) -> Result<LinearSystem> {
        LinearSystem::from_spec(&self.system)
    }

    pub fn options(&self, sys: &LinearSystem) -> Result<SimOptions> {
        let x0 = DVector::from_vec(self.x0.clone());
        let v0 = DVector::from_vec(self.v0.clone());
        linalg::ensure_len(&x0, sys.n(), "x0")?;
        linalg::ensure_len(&v0, sys.m(), "v0")?;
        Ok(SimOptions {
            gamma_v: self.gamma_v,
            gamma_x: self.gamma_x,
            x0,
            v0,
            mode: self.mode(),
            record_predictions: self.record_predictions,
        })
    }

    /// Setpoints for the whole horizon; random processes use stream 0 of the seed.
    pub fn schedule(&self, sys: &LinearSystem) -> Result<SetpointSchedule> {
        self.validate()?;
        let schedule = match &self.setpoints {
            SetpointSpec::Random { change_prob, eta_range } => {
                let seed = self.seed.expect("validated");
                RandomSetpoints {
                    change_prob: *change_prob,
                    eta_range: *eta_range,
                }
                .generate(sys, self.horizon, &mut setpoint_rng(seed, 0))?
            }
            SetpointSpec::Schedule { schedule_file } => read_schedule_csv(schedule_file)?,
        };
        if schedule.horizon() != self.horizon {
            return Err(Error::HorizonMismatch {
                expected: self.horizon,
                found: schedule.horizon(),
            });
        }
        if schedule.n() != sys.n() || schedule.m() != sys.m() {
            return Err(Error::InvalidArgument(format!(
                "schedule has n={}, m={}, system has n={}, m={}",
                schedule.n(),
                schedule.m(),
                sys.n(),
                sys.m()
            )));
        }
        Ok(schedule)
    }

    pub fn costs(&self, schedule: &SetpointSchedule) -> Result<CostSequence> {
        CostSequence::quadratic(schedule, self.cost.q, self.cost.r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "system": {"A": [[0.5, 0.0], [0.0, 0.2]], "B": [[1.0], [1.0]]},
        "cost": {"q": 1.0, "r": 2.0},
        "horizon": 4,
        "gamma_v": 0.3,
        "gamma_x": 0.9,
        "x0": [0.0, 0.0],
        "v0": [0.0],
        "setpoints": {"mode": "random", "change_prob": 0.5, "eta_range": [-1.0, 1.0]},
        "seed": 7
    }"#;

    #[test]
    fn parses_documented_schema() {
        let c = RunConfig::from_json(SAMPLE).unwrap();
        assert_eq!(c.horizon, 4);
        assert_eq!(c.seed, Some(7));
        assert!(!c.strict);
        assert!(c.record_predictions);
        assert_eq!(
            c.setpoints,
            SetpointSpec::Random {
                change_prob: 0.5,
                eta_range: [-1.0, 1.0]
            }
        );
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn random_setpoints_require_seed() {
        let mut c = RunConfig::from_json(SAMPLE).unwrap();
        c.seed = None;
        assert!(c.validate().is_err());
        assert!(c.clone().with_seed(1).validate().is_ok());
        c.horizon = 0;
        assert!(c.with_seed(1).validate().is_err());
    }

    #[test]
    fn schedule_has_configured_horizon() {
        let c = RunConfig::from_json(SAMPLE).unwrap();
        let sys = c.linear_system().unwrap();
        let s = c.schedule(&sys).unwrap();
        assert_eq!(s.horizon(), 4);
        assert!(s.max_steady_state_residual(&sys) < 1e-12);
    }

    #[test]
    fn wrong_initial_state_length() {
        let mut c = RunConfig::from_json(SAMPLE).unwrap();
        c.x0 = vec![0.0];
        let sys = c.linear_system().unwrap();
        assert!(matches!(c.options(&sys), Err(Error::DimensionMismatch { .. })));
    }
}
