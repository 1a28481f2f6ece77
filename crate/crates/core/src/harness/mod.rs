//! Scenario files, presets and the experiment drivers behind the CLI.

mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contact_env::{CommandTransient, HoleGeometry, SimConfig, Trace, World};
use crate::error::{Error, Result};
use crate::observers::{
    Controller, ControllerKind, GainSet, MismatchConfig, ObserverConfig, PdGains,
};
use crate::rigid_body::ManipulatorModel;

pub use report::{
    compare_controllers, misalignment_sweep, run_scenario, Comparison, RunSummary, SweepReport,
    SweepSpec, TrialResult,
};

/// Shipped scenario variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 0.2 mm clearance, 1e5 N/m fixture.
    Nominal,
    /// 0.034 mm clearance, 1e6 N/m fixture.
    Tight,
    /// Nominal with force-sensor noise.
    Noisy,
    /// Nominal with a 35 N lateral command pulse before the peg reaches the hole.
    Aggressive,
}

/// Desk-scale three-link arm whose last link is the peg, with 2 N·m of
/// Coulomb friction in every joint.
pub fn default_model() -> ManipulatorModel {
    ManipulatorModel {
        joint_friction: vec![2.0; 3],
        ..ManipulatorModel::new(vec![0.35, 0.30, 0.10], vec![2.0, 1.5, 0.5], 0.0, 20.0)
    }
}

/// One fully specified experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub controller: ControllerKind,
    pub gain_set: GainSet,
    pub seed: u64,
    pub model: ManipulatorModel,
    pub geom: HoleGeometry,
    pub sim: SimConfig,
    pub observer: ObserverConfig,
    #[serde(default)]
    pub mismatch: MismatchConfig,
}

impl Scenario {
    pub fn preset(preset: Preset, controller: ControllerKind) -> Self {
        let mut sim = SimConfig::default();
        let geom = match preset {
            Preset::Tight => HoleGeometry::tight(),
            _ => HoleGeometry::nominal(),
        };
        match preset {
            Preset::Noisy => sim.sensor_noise_std = 0.5,
            Preset::Aggressive => {
                sim.transient = Some(CommandTransient {
                    start: 0.02,
                    duration: 0.05,
                    force: 35.0,
                })
            }
            _ => {}
        }
        let label = match preset {
            Preset::Nominal => "nominal",
            Preset::Tight => "tight",
            Preset::Noisy => "noisy",
            Preset::Aggressive => "aggressive",
        };
        Self {
            name: format!("{}-{label}", controller.label()),
            controller,
            gain_set: controller.gain_set(),
            seed: 0,
            model: default_model(),
            geom,
            sim,
            observer: ObserverConfig::default(),
            mismatch: MismatchConfig::default(),
        }
    }

    pub fn gains(&self) -> PdGains {
        PdGains::planar(self.gain_set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        if self.gain_set != self.controller.gain_set() {
            return Err(Error::config(
                "gain_set",
                format!(
                    "{} runs with gain set {:?}",
                    self.controller.label(),
                    self.controller.gain_set()
                ),
            ));
        }
        self.model.validate()?;
        self.geom.validate()?;
        self.sim.validate()?;
        self.mismatch.validate()?;
        self.observer.composite(self.sim.control_dt)?;
        if self.observer.active_axes.len() != 3 {
            return Err(Error::config(
                "observer.active_axes",
                "expected one flag per task axis",
            ));
        }
        Ok(())
    }

    pub fn build_world(&self) -> Result<World> {
        self.validate()?;
        let controller = Controller::new(
            self.controller,
            self.gains(),
            &self.observer,
            self.sim.control_dt,
        )?;
        World::new(
            self.model.clone(),
            self.geom.clone(),
            self.sim.clone(),
            controller,
            self.mismatch.clone(),
            self.seed,
        )
    }

    pub fn simulate(&self) -> Result<Trace> {
        self.build_world()?.run()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scenario: Self = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}
