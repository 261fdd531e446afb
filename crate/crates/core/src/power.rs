//! Beacon battery life versus broadcast interval, and the speed-to-interval
//! deployment guide.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preset::Preset;
use crate::sim::{self, Mount, SimError};

/// Every row of the published guide sits on this line (131.25 days / 700 ms).
pub const DEFAULT_DAYS_PER_MS: f64 = 0.1875;

/// Highest speed the field tests covered.
pub const MAX_VALIDATED_SPEED_MPH: f64 = 45.0;

/// Published guide: (max road speed mph, broadcast interval ms).
pub const FIELD_GUIDE: [(u32, u32); 9] = [
    (5, 1400),
    (10, 1300),
    (15, 1300),
    (20, 1200),
    (25, 1200),
    (30, 1000),
    (35, 900),
    (40, 700),
    (45, 700),
];

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("interval must be positive, got {0} ms")]
    NonPositiveInterval(f64),
    #[error("speed must be positive, got {0} mph")]
    NonPositiveSpeed(f64),
    #[error("{0} mph is outside the validated envelope (max {MAX_VALIDATED_SPEED_MPH} mph)")]
    OutsideEnvelope(f64),
    #[error("reliability target must be in [0, 1], got {0}")]
    BadTarget(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    pub days_per_ms: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        BatteryModel { days_per_ms: DEFAULT_DAYS_PER_MS }
    }
}

impl BatteryModel {
    pub fn battery_life(&self, interval_ms: f64) -> Result<f64, PowerError> {
        if !(interval_ms > 0.0) {
            return Err(PowerError::NonPositiveInterval(interval_ms));
        }
        Ok(self.days_per_ms * interval_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuideRow {
    pub max_speed_mph: f64,
    pub interval_ms: u32,
    pub battery_days: f64,
    /// False when no interval met the reliability target; the row then
    /// carries the shortest supported interval.
    pub feasible: bool,
}

/// Interval and battery life from the published guide. Speeds between rows
/// round up to the next listed speed.
pub fn recommend_interval(max_speed_mph: f64) -> Result<GuideRow, PowerError> {
    recommend_interval_with(&BatteryModel::default(), max_speed_mph)
}

pub fn recommend_interval_with(model: &BatteryModel, max_speed_mph: f64) -> Result<GuideRow, PowerError> {
    if !(max_speed_mph > 0.0) {
        return Err(PowerError::NonPositiveSpeed(max_speed_mph));
    }
    let (speed, interval) = FIELD_GUIDE
        .iter()
        .copied()
        .find(|(s, _)| max_speed_mph <= f64::from(*s))
        .ok_or(PowerError::OutsideEnvelope(max_speed_mph))?;
    Ok(GuideRow {
        max_speed_mph: f64::from(speed),
        interval_ms: interval,
        battery_days: model.battery_life(f64::from(interval))?,
        feasible: true,
    })
}

/// The published guide, one row per listed speed.
pub fn field_guide() -> Vec<GuideRow> {
    FIELD_GUIDE
        .iter()
        .map(|&(s, _)| recommend_interval(f64::from(s)).expect("listed speeds are in the envelope"))
        .collect()
}

/// Candidate intervals: 100 ms steps, then the BLE maximum.
pub fn candidate_intervals() -> impl DoubleEndedIterator<Item = u32> {
    (1..=102).map(|k| 100 * k).chain(std::iter::once(10240))
}

/// Largest candidate interval whose expected detection probability reaches
/// `target`, if any.
pub fn largest_reliable_interval(preset: &Preset, speed_mph: f64, mount: Mount, target: f64) -> Result<Option<u32>, PowerError> {
    for interval in candidate_intervals().rev() {
        if sim::expected_probability(preset, speed_mph, f64::from(interval), mount)? >= target {
            return Ok(Some(interval));
        }
    }
    Ok(None)
}

/// Rebuilds the guide from the detection model: for each speed the largest
/// interval that still meets `reliability_target` under `mount`.
pub fn derive_guide(
    reliability_target: f64,
    speeds_mph: &[f64],
    preset: &Preset,
    mount: Mount,
    battery: &BatteryModel,
) -> Result<Vec<GuideRow>, PowerError> {
    if !(0.0..=1.0).contains(&reliability_target) {
        return Err(PowerError::BadTarget(reliability_target));
    }
    speeds_mph
        .iter()
        .map(|&speed| {
            if !(speed > 0.0) {
                return Err(PowerError::NonPositiveSpeed(speed));
            }
            let found = largest_reliable_interval(preset, speed, mount, reliability_target)?;
            let interval = found.unwrap_or(100);
            Ok(GuideRow {
                max_speed_mph: speed,
                interval_ms: interval,
                battery_days: battery.battery_life(f64::from(interval))?,
                feasible: found.is_some(),
            })
        })
        .collect()
}

pub fn guide_csv(rows: &[GuideRow]) -> String {
    let mut out = String::from("max_speed_mph,interval_ms,battery_days,feasible\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.2},{}", r.max_speed_mph, r.interval_ms, r.battery_days, r.feasible);
    }
    out
}

pub fn guide_text(rows: &[GuideRow]) -> String {
    let mut out = format!("{:>14}  {:>12}  {:>12}\n", "max speed mph", "interval ms", "battery days");
    for r in rows {
        let flag = if r.feasible { "" } else { "  (infeasible)" };
        let _ = writeln!(out, "{:>14}  {:>12}  {:>12.2}{flag}", r.max_speed_mph, r.interval_ms, r.battery_days);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preset::HM10_BT4;
    use proptest::prelude::*;

    #[test]
    fn battery_examples() {
        let m = BatteryModel::default();
        assert_eq!(m.battery_life(700.0).unwrap(), 131.25);
        assert_eq!(m.battery_life(1400.0).unwrap(), 262.5);
        assert_eq!(m.battery_life(1000.0).unwrap(), 187.5);
        assert!(m.battery_life(0.0).is_err());
    }

    #[test]
    fn recommend_examples() {
        let r = recommend_interval(45.0).unwrap();
        assert_eq!((r.interval_ms, r.battery_days), (700, 131.25));
        let r = recommend_interval(5.0).unwrap();
        assert_eq!((r.interval_ms, r.battery_days), (1400, 262.5));
        let r = recommend_interval(30.0).unwrap();
        assert_eq!((r.interval_ms, r.battery_days), (1000, 187.5));
    }

    #[test]
    fn rounds_up_between_rows() {
        assert_eq!(recommend_interval(27.0).unwrap().interval_ms, 1000);
        assert_eq!(recommend_interval(0.5).unwrap().interval_ms, 1400);
    }

    #[test]
    fn envelope_errors() {
        assert!(matches!(recommend_interval(45.1), Err(PowerError::OutsideEnvelope(_))));
        assert!(matches!(recommend_interval(0.0), Err(PowerError::NonPositiveSpeed(_))));
    }

    #[test]
    fn all_published_rows() {
        let expected = [
            (5.0, 1400, 262.5),
            (10.0, 1300, 243.75),
            (15.0, 1300, 243.75),
            (20.0, 1200, 225.0),
            (25.0, 1200, 225.0),
            (30.0, 1000, 187.5),
            (35.0, 900, 168.75),
            (40.0, 700, 131.25),
            (45.0, 700, 131.25),
        ];
        let rows = field_guide();
        assert_eq!(rows.len(), 9);
        for (row, (s, i, d)) in rows.iter().zip(expected) {
            assert_eq!((row.max_speed_mph, row.interval_ms), (s, i));
            assert!((row.battery_days - d).abs() < 0.01);
        }
    }

    #[test]
    fn derived_guide_near_published_at_top_speed() {
        let p = Preset::named(HM10_BT4).unwrap();
        let rows = derive_guide(0.95, &[45.0], &p, Mount::WheelArch, &BatteryModel::default()).unwrap();
        assert!(rows[0].feasible);
        assert!(rows[0].interval_ms.abs_diff(700) <= 100, "{:?}", rows[0]);
    }

    #[test]
    fn published_rows_are_reliable_on_the_wheel_arch() {
        let p = Preset::named(HM10_BT4).unwrap();
        for (speed, interval) in FIELD_GUIDE {
            let e = sim::expected_probability(&p, f64::from(speed), f64::from(interval), Mount::WheelArch).unwrap();
            assert!(e >= 0.95, "{speed} mph @ {interval} ms: {e}");
        }
    }

    #[test]
    fn vacuous_target_gives_maximum() {
        let p = Preset::named(HM10_BT4).unwrap();
        let speeds = [5.0, 25.0, 45.0, 60.0];
        let rows = derive_guide(0.0, &speeds, &p, Mount::Bonnet, &BatteryModel::default()).unwrap();
        assert!(rows.iter().all(|r| r.interval_ms == 10240 && r.feasible));
    }

    #[test]
    fn impossible_target_flags_infeasible() {
        let p = Preset::named(HM10_BT4).unwrap();
        let rows = derive_guide(1.0, &[45.0], &p, Mount::Bonnet, &BatteryModel::default()).unwrap();
        assert!(!rows[0].feasible);
        assert!(derive_guide(1.5, &[45.0], &p, Mount::Bonnet, &BatteryModel::default()).is_err());
    }

    #[test]
    fn derived_guide_monotone() {
        let p = Preset::named(HM10_BT4).unwrap();
        let speeds: Vec<f64> = (1..=9).map(|i| 5.0 * i as f64).collect();
        for mount in [Mount::WheelArch, Mount::Bonnet] {
            let rows = derive_guide(0.95, &speeds, &p, mount, &BatteryModel::default()).unwrap();
            for w in rows.windows(2) {
                assert!(w[1].interval_ms <= w[0].interval_ms);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let csv = guide_csv(&field_guide());
        assert!(csv.starts_with("max_speed_mph,interval_ms,battery_days,feasible\n5,1400,262.50,true\n"));
        assert!(guide_text(&field_guide()).contains("131.25"));
    }

    proptest! {
        #[test]
        fn battery_is_linear(a in 1.0..5000.0f64, b in 1.0..5000.0f64) {
            let m = BatteryModel::default();
            let lhs = m.battery_life(a + b).unwrap();
            let rhs = m.battery_life(a).unwrap() + m.battery_life(b).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs);
        }

        #[test]
        fn recommendation_monotone(a in 0.1..45.0f64, b in 0.1..45.0f64) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(recommend_interval(hi).unwrap().interval_ms <= recommend_interval(lo).unwrap().interval_ms);
        }
    }
}
