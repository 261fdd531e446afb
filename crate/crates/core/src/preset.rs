//! Named calibration presets.
//!
//! A preset bundles everything needed to turn (speed, interval, mount) into a
//! detection probability: the beacon's path-loss model, the receiver's scan
//! duty, advertising event timing and pass geometry. Presets round-trip
//! through a small TOML file with one section per concern.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rendezvous::{
    AdvertiserConfig, RendezvousError, ScannerConfig, DEFAULT_EVENT_DURATION_MS, MAX_JITTER_MS,
};
use crate::rf_model::{PathLossModel, RfError};

pub const HM10_BT4: &str = "hm10-bt4";
pub const OTSB_BT5: &str = "otsb-bt5";
pub const DEFAULT_PRESET: &str = HM10_BT4;

/// Closest approach of the vehicle to the roadside beacon.
pub const DEFAULT_LATERAL_OFFSET_M: f64 = 2.0;

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset `{0}` (known: hm10-bt4, otsb-bt5)")]
    Unknown(String),
    #[error("preset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("preset parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("preset encode: {0}")]
    Encode(#[from] toml::ser::Error),
    #[error(transparent)]
    Rf(#[from] RfError),
    #[error(transparent)]
    Rendezvous(#[from] RendezvousError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvertisingTiming {
    pub event_duration_ms: f64,
    pub jitter_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassSetup {
    pub lateral_offset_m: f64,
    /// Receiver on the wheel arch facing away from the beacon, so the whole
    /// vehicle body sits in the path.
    pub far_side_vehicle_body: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub path_loss: PathLossModel,
    pub scanner: ScannerConfig,
    pub advertising: AdvertisingTiming,
    pub pass: PassSetup,
}

impl Preset {
    pub fn named(name: &str) -> Result<Self, PresetError> {
        let path_loss = match name {
            HM10_BT4 => PathLossModel::hm10_bt4(),
            OTSB_BT5 => PathLossModel::otsb_bt5(),
            other => return Err(PresetError::Unknown(other.to_string())),
        };
        Ok(Preset {
            name: name.to_string(),
            path_loss,
            // the receiver and vehicle are shared by both beacons
            scanner: ScannerConfig::calibrated(),
            advertising: AdvertisingTiming { event_duration_ms: DEFAULT_EVENT_DURATION_MS, jitter_ms: MAX_JITTER_MS },
            pass: PassSetup { lateral_offset_m: DEFAULT_LATERAL_OFFSET_M, far_side_vehicle_body: false },
        })
    }

    /// Resolves a built-in name or loads a preset file.
    pub fn resolve(name_or_path: &str) -> Result<Self, PresetError> {
        match Preset::named(name_or_path) {
            Ok(p) => Ok(p),
            Err(PresetError::Unknown(_)) if Path::new(name_or_path).is_file() => Preset::load(name_or_path),
            Err(e) => Err(e),
        }
    }

    pub fn advertiser(&self, interval_ms: f64) -> Result<AdvertiserConfig, RendezvousError> {
        AdvertiserConfig::new(interval_ms, self.advertising.event_duration_ms, self.advertising.jitter_ms)
    }

    pub fn validate(&self) -> Result<(), PresetError> {
        self.path_loss.validate()?;
        ScannerConfig::new(self.scanner.scan_window_ms, self.scanner.scan_cycle_ms)?;
        AdvertiserConfig::new(1000.0, self.advertising.event_duration_ms, self.advertising.jitter_ms)?;
        if !(self.pass.lateral_offset_m >= 0.0) {
            return Err(RendezvousError::Geometry("lateral offset must be >= 0".into()).into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, PresetError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, PresetError> {
        let preset: Preset = toml::from_str(text)?;
        preset.validate()?;
        Ok(preset)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PresetError> {
        Preset::from_toml(&std::fs::read_to_string(path)?)
    }
}
