//! Log-distance path-loss model with per-material attenuation.
//!
//! Predicted signal strength follows
//!
//! ```text
//! rssi(d) = rssi_ref - 10 * n * log10(d) - sum(attenuation of each material)
//! ```
//!
//! with `d` in metres and `rssi_ref` the strength measured at 1 m. The model
//! converts between RSSI, distance and detection range, and can be fitted to
//! field measurements.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Signal strength both reference beacons are configured to emit at 1 m.
pub const RSSI_AT_ONE_METRE: f64 = -70.0;

/// Below this level detections become unreliable.
pub const RELIABILITY_THRESHOLD: f64 = -95.0;

/// Distance at which the HM-10 (Bluetooth 4.0) beacon crosses the threshold.
pub const HM10_RELIABLE_RANGE_M: f64 = 25.0;

/// Distance at which the off-the-shelf Bluetooth 5.0 beacon crosses the threshold.
pub const BT5_RELIABLE_RANGE_M: f64 = 41.0;

/// Unobstructed loss-of-signal range implied by the cardboard case result
/// (57 m at a 14% loss). Used as the default.
pub const CLEAR_RANGE_CARDBOARD_FIT_M: f64 = 66.3;

/// Unobstructed loss-of-signal range implied by the plastic case result
/// (45 m at a 44% loss). Inconsistent with the cardboard figure; kept as an
/// alternative preset.
pub const CLEAR_RANGE_PLASTIC_FIT_M: f64 = 80.4;

pub const PLASTIC_CASE_RANGE_M: f64 = 45.0;
pub const CARDBOARD_CASE_RANGE_M: f64 = 57.0;
/// Measured range with the beacon submerged in a litre of water.
pub const WATER_RANGE_M: f64 = 33.0;
/// Extrapolated water range (measured 33 m plus the 4 m trend extension).
pub const WATER_RANGE_EXTRAPOLATED_M: f64 = 37.0;

/// Thin sandwich bag. Only described as a small effect; this is a free value.
pub const PLASTIC_BAG_ATTENUATION_DB: f64 = 0.5;

/// Bonnet attenuation produced by calibrating against the bonnet drive-by
/// matrix on the default search grid.
pub const CALIBRATED_BONNET_ATTENUATION_DB: f64 = 2.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RfError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("invalid path-loss model: {0}")]
    InvalidModel(String),
    #[error("obstructed range {obstructed} m exceeds clear range {clear} m")]
    ObstructedExceedsClear { clear: f64, obstructed: f64 },
    #[error("fit needs samples at two or more distinct distances beyond 1 m")]
    SingularFit,
    #[error("unknown material `{0}`")]
    UnknownMaterial(String),
    #[error("sample csv: {0}")]
    Csv(String),
}

/// Obstruction between beacon and receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    None,
    PlasticCase,
    CardboardCase,
    WaterLitre,
    PlasticBag,
    Bonnet,
    VehicleBody,
}

impl Material {
    pub const ALL: [Material; 7] = [
        Material::None,
        Material::PlasticCase,
        Material::CardboardCase,
        Material::WaterLitre,
        Material::PlasticBag,
        Material::Bonnet,
        Material::VehicleBody,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Material::None => "none",
            Material::PlasticCase => "plastic_case",
            Material::CardboardCase => "cardboard_case",
            Material::WaterLitre => "water",
            Material::PlasticBag => "plastic_bag",
            Material::Bonnet => "bonnet",
            Material::VehicleBody => "vehicle_body",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Material {
    type Err = RfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" | "" => Ok(Material::None),
            "plastic_case" | "plastic" => Ok(Material::PlasticCase),
            "cardboard_case" | "cardboard" => Ok(Material::CardboardCase),
            "water" | "water_litre" => Ok(Material::WaterLitre),
            "plastic_bag" | "bag" => Ok(Material::PlasticBag),
            "bonnet" => Ok(Material::Bonnet),
            "vehicle_body" => Ok(Material::VehicleBody),
            other => Err(RfError::UnknownMaterial(other.to_string())),
        }
    }
}

/// A set of materials; each material counts once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct MaterialSet(u8);

impl MaterialSet {
    pub const EMPTY: MaterialSet = MaterialSet(0);

    pub fn with(self, material: Material) -> Self {
        MaterialSet(self.0 | material.bit())
    }

    pub fn contains(self, material: Material) -> bool {
        self.0 & material.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Material> {
        Material::ALL.into_iter().filter(move |m| self.contains(*m))
    }
}

impl FromIterator<Material> for MaterialSet {
    fn from_iter<I: IntoIterator<Item = Material>>(iter: I) -> Self {
        iter.into_iter().fold(MaterialSet::EMPTY, MaterialSet::with)
    }
}

impl fmt::Display for MaterialSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(Material::name).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for MaterialSet {
    type Err = RfError;

    /// Parses a `+`-joined list such as `plastic_case+water`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() {
            return Ok(MaterialSet::EMPTY);
        }
        s.split('+').map(str::parse).collect()
    }
}

/// Extra loss in dB for each obstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationTable {
    pub plastic_case: f64,
    pub cardboard_case: f64,
    pub water_litre: f64,
    pub plastic_bag: f64,
    pub bonnet: f64,
    pub vehicle_body: f64,
}

impl AttenuationTable {
    /// Derives case and water losses from loss-of-signal ranges measured with
    /// and without the obstruction.
    pub fn from_loss_ranges(clear_range: f64, water_range: f64, exponent: f64) -> Result<Self, RfError> {
        Ok(AttenuationTable {
            plastic_case: attenuation_from_ranges(clear_range, PLASTIC_CASE_RANGE_M, exponent)?,
            cardboard_case: attenuation_from_ranges(clear_range, CARDBOARD_CASE_RANGE_M, exponent)?,
            water_litre: attenuation_from_ranges(clear_range, water_range, exponent)?,
            plastic_bag: PLASTIC_BAG_ATTENUATION_DB,
            bonnet: CALIBRATED_BONNET_ATTENUATION_DB,
            // The bonnet is the most heavily obstructed mounting point, so it
            // bounds a far-side body obstruction from above.
            vehicle_body: CALIBRATED_BONNET_ATTENUATION_DB,
        })
    }

    pub fn get(&self, material: Material) -> f64 {
        match material {
            Material::None => 0.0,
            Material::PlasticCase => self.plastic_case,
            Material::CardboardCase => self.cardboard_case,
            Material::WaterLitre => self.water_litre,
            Material::PlasticBag => self.plastic_bag,
            Material::Bonnet => self.bonnet,
            Material::VehicleBody => self.vehicle_body,
        }
    }

    pub fn total(&self, materials: MaterialSet) -> f64 {
        materials.iter().map(|m| self.get(m)).sum()
    }

    fn validate(&self) -> Result<(), RfError> {
        for m in Material::ALL {
            let a = self.get(m);
            if !a.is_finite() || a < 0.0 {
                return Err(RfError::InvalidModel(format!("attenuation for {m} must be finite and >= 0, got {a}")));
            }
        }
        Ok(())
    }
}

impl Default for AttenuationTable {
    fn default() -> Self {
        AttenuationTable::from_loss_ranges(CLEAR_RANGE_CARDBOARD_FIT_M, WATER_RANGE_M, hm10_exponent())
            .expect("default ranges are ordered")
    }
}

/// Log-distance radio propagation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    /// dBm at 1 m.
    pub rssi_ref: f64,
    pub exponent: f64,
    /// dBm floor below which detection is unreliable.
    pub reliability_threshold: f64,
    pub attenuation: AttenuationTable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RssiPrediction {
    pub dbm: f64,
    /// Set when the requested distance was inside 1 m and got clamped.
    pub near_field_clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeEstimate {
    pub meters: f64,
    /// The attenuated 1 m signal is already below the threshold.
    pub dead_on_arrival: bool,
}

/// Exponent that puts `threshold` exactly at `range` metres.
pub fn exponent_for_range(rssi_ref: f64, threshold: f64, range: f64) -> f64 {
    (rssi_ref - threshold) / (10.0 * range.log10())
}

pub fn hm10_exponent() -> f64 {
    exponent_for_range(RSSI_AT_ONE_METRE, RELIABILITY_THRESHOLD, HM10_RELIABLE_RANGE_M)
}

pub fn bt5_exponent() -> f64 {
    exponent_for_range(RSSI_AT_ONE_METRE, RELIABILITY_THRESHOLD, BT5_RELIABLE_RANGE_M)
}

impl PathLossModel {
    pub fn new(rssi_ref: f64, exponent: f64, reliability_threshold: f64, attenuation: AttenuationTable) -> Result<Self, RfError> {
        let model = PathLossModel { rssi_ref, exponent, reliability_threshold, attenuation };
        model.validate()?;
        Ok(model)
    }

    /// HM-10 Bluetooth 4.0 beacon: reaches -95 dBm at 25 m.
    pub fn hm10_bt4() -> Self {
        PathLossModel {
            rssi_ref: RSSI_AT_ONE_METRE,
            exponent: hm10_exponent(),
            reliability_threshold: RELIABILITY_THRESHOLD,
            attenuation: AttenuationTable::default(),
        }
    }

    /// Off-the-shelf Bluetooth 5.0 beacon: reaches -95 dBm at 41 m.
    pub fn otsb_bt5() -> Self {
        PathLossModel { exponent: bt5_exponent(), ..PathLossModel::hm10_bt4() }
    }

    pub fn validate(&self) -> Result<(), RfError> {
        if !(self.exponent > 0.5 && self.exponent < 6.0) {
            return Err(RfError::InvalidModel(format!("exponent {} outside (0.5, 6.0)", self.exponent)));
        }
        if !self.rssi_ref.is_finite() || !self.reliability_threshold.is_finite() {
            return Err(RfError::InvalidModel("rssi values must be finite".into()));
        }
        if self.rssi_ref <= self.reliability_threshold {
            return Err(RfError::InvalidModel(format!(
                "rssi_ref {} must exceed reliability threshold {}",
                self.rssi_ref, self.reliability_threshold
            )));
        }
        self.attenuation.validate()
    }

    pub fn predict_rssi(&self, distance: f64, materials: MaterialSet) -> Result<RssiPrediction, RfError> {
        if !(distance > 0.0) {
            return Err(RfError::NonPositiveDistance(distance));
        }
        let near_field_clamped = distance < 1.0;
        let d = distance.max(1.0);
        let dbm = self.rssi_ref - 10.0 * self.exponent * d.log10() - self.attenuation.total(materials);
        Ok(RssiPrediction { dbm, near_field_clamped })
    }

    /// Distance at which the predicted RSSI equals `threshold`.
    pub fn detection_range(&self, threshold: f64, materials: MaterialSet) -> RangeEstimate {
        let headroom = self.rssi_ref - self.attenuation.total(materials) - threshold;
        if headroom < 0.0 {
            return RangeEstimate { meters: 0.0, dead_on_arrival: true };
        }
        RangeEstimate { meters: 10f64.powf(headroom / (10.0 * self.exponent)), dead_on_arrival: false }
    }

    /// Range at the model's own reliability threshold.
    pub fn reliable_range(&self, materials: MaterialSet) -> RangeEstimate {
        self.detection_range(self.reliability_threshold, materials)
    }
}

/// Loss in dB implied by an obstruction shrinking the range from
/// `range_clear` to `range_obstructed`.
pub fn attenuation_from_ranges(range_clear: f64, range_obstructed: f64, exponent: f64) -> Result<f64, RfError> {
    if !(range_obstructed > 0.0) {
        return Err(RfError::NonPositiveDistance(range_obstructed));
    }
    if range_obstructed > range_clear {
        return Err(RfError::ObstructedExceedsClear { clear: range_clear, obstructed: range_obstructed });
    }
    Ok(10.0 * exponent * (range_clear / range_obstructed).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RssiSample {
    pub distance: f64,
    pub rssi: f64,
    pub materials: MaterialSet,
}

impl RssiSample {
    pub fn new(distance: f64, rssi: f64, materials: MaterialSet) -> Result<Self, RfError> {
        if !(distance > 0.0) {
            return Err(RfError::NonPositiveDistance(distance));
        }
        Ok(RssiSample { distance, rssi, materials })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: PathLossModel,
    /// Standard error of the fitted exponent.
    pub stderr: f64,
    /// Measured minus predicted, per sample, in dBm.
    pub residuals: Vec<f64>,
    pub rms_residual: f64,
}

/// Least-squares exponent with the default threshold and attenuation table.
pub fn fit_exponent(samples: &[RssiSample], rssi_ref: f64) -> Result<FitReport, RfError> {
    fit_exponent_with(samples, rssi_ref, RELIABILITY_THRESHOLD, AttenuationTable::default())
}

/// Fits `n` in `rssi = rssi_ref - att - n * 10 log10(d)`, minimising squared
/// dBm residuals. The reference level is held fixed, so the fit is a
/// regression through the origin on `x = 10 log10(d)`.
pub fn fit_exponent_with(
    samples: &[RssiSample],
    rssi_ref: f64,
    threshold: f64,
    attenuation: AttenuationTable,
) -> Result<FitReport, RfError> {
    let mut distances: Vec<f64> = samples.iter().map(|s| s.distance).collect();
    distances.sort_by(f64::total_cmp);
    distances.dedup();
    if distances.len() < 2 || distances.last().is_none_or(|d| *d <= 1.0) {
        return Err(RfError::SingularFit);
    }

    let (mut sxx, mut sxy) = (0.0, 0.0);
    for s in samples {
        let x = 10.0 * s.distance.log10();
        let y = rssi_ref - attenuation.total(s.materials) - s.rssi;
        sxx += x * x;
        sxy += x * y;
    }
    if sxx <= 0.0 {
        return Err(RfError::SingularFit);
    }
    let exponent = sxy / sxx;
    let model = PathLossModel::new(rssi_ref, exponent, threshold, attenuation)?;

    let residuals: Vec<f64> = samples
        .iter()
        .map(|s| s.rssi - model.predict_rssi(s.distance, s.materials).map(|p| p.dbm).unwrap_or(f64::NAN))
        .collect();
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    let m = samples.len() as f64;
    let stderr = if samples.len() > 1 { (ssr / (m - 1.0) / sxx).sqrt() } else { 0.0 };
    let rms_residual = (ssr / m).sqrt();
    Ok(FitReport { model, stderr, residuals, rms_residual })
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    distance_m: f64,
    rssi_dbm: f64,
    #[serde(default)]
    materials: String,
}

/// Reads `distance_m,rssi_dbm,materials` rows.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<RssiSample>, RfError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<SampleRow>().enumerate() {
        let row = row.map_err(|e| RfError::Csv(format!("row {}: {e}", line + 1)))?;
        out.push(RssiSample::new(row.distance_m, row.rssi_dbm, row.materials.parse()?)?);
    }
    Ok(out)
}
