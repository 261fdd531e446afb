//! Probability that a scanner on a passing vehicle hears a roadside beacon.
//!
//! The analytic model treats each advertising event in range as an
//! independent trial that lands in a scan window with chance
//! `q = min(1, (scan_window + event_duration) / scan_cycle)`. The oracle
//! samples real phases instead, so the two can be compared.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

pub const MIN_INTERVAL_MS: f64 = 100.0;
pub const MAX_INTERVAL_MS: f64 = 10240.0;
pub const MAX_JITTER_MS: f64 = 10.0;
/// Time one advertising event is hearable. Not measured; a free parameter.
pub const DEFAULT_EVENT_DURATION_MS: f64 = 3.0;
/// The receiver's fastest reliable loop.
pub const DEFAULT_SCAN_CYCLE_MS: f64 = 2500.0;
/// Scan window produced by calibrating against the wheel-arch and bonnet
/// drive-by matrices on the default search grid.
pub const CALIBRATED_SCAN_WINDOW_MS: f64 = 1570.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RendezvousError {
    #[error("invalid advertiser: {0}")]
    Advertiser(String),
    #[error("invalid scanner: {0}")]
    Scanner(String),
    #[error("speed must be positive, got {0} m/s")]
    NonPositiveSpeed(f64),
    #[error("invalid pass geometry: {0}")]
    Geometry(String),
    #[error("oracle needs at least one trial")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvertiserConfig {
    pub interval_ms: f64,
    pub event_duration_ms: f64,
    /// Upper bound of the uniform random delay added to each event.
    pub jitter_ms: f64,
}

impl AdvertiserConfig {
    pub fn new(interval_ms: f64, event_duration_ms: f64, jitter_ms: f64) -> Result<Self, RendezvousError> {
        if !(MIN_INTERVAL_MS..=MAX_INTERVAL_MS).contains(&interval_ms) {
            return Err(RendezvousError::Advertiser(format!(
                "interval {interval_ms} ms outside [{MIN_INTERVAL_MS}, {MAX_INTERVAL_MS}]"
            )));
        }
        if !(event_duration_ms > 0.0) || event_duration_ms > interval_ms {
            return Err(RendezvousError::Advertiser(format!(
                "event duration {event_duration_ms} ms must be in (0, interval]"
            )));
        }
        if !(0.0..=MAX_JITTER_MS).contains(&jitter_ms) {
            return Err(RendezvousError::Advertiser(format!("jitter {jitter_ms} ms outside [0, {MAX_JITTER_MS}]")));
        }
        Ok(AdvertiserConfig { interval_ms, event_duration_ms, jitter_ms })
    }

    /// Default event duration and full BLE jitter.
    pub fn with_interval(interval_ms: f64) -> Result<Self, RendezvousError> {
        Self::new(interval_ms, DEFAULT_EVENT_DURATION_MS, MAX_JITTER_MS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScannerConfig {
    pub scan_window_ms: f64,
    pub scan_cycle_ms: f64,
}

impl ScannerConfig {
    pub fn new(scan_window_ms: f64, scan_cycle_ms: f64) -> Result<Self, RendezvousError> {
        if !(scan_window_ms > 0.0) || !scan_cycle_ms.is_finite() || scan_window_ms > scan_cycle_ms {
            return Err(RendezvousError::Scanner(format!(
                "need 0 < window ({scan_window_ms}) <= cycle ({scan_cycle_ms})"
            )));
        }
        Ok(ScannerConfig { scan_window_ms, scan_cycle_ms })
    }

    pub fn calibrated() -> Self {
        ScannerConfig { scan_window_ms: CALIBRATED_SCAN_WINDOW_MS, scan_cycle_ms: DEFAULT_SCAN_CYCLE_MS }
    }
}

/// A straight pass past one beacon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassGeometry {
    pub speed_mps: f64,
    /// Closest approach.
    pub lateral_offset_m: f64,
    pub detection_range_m: f64,
}

/// Seconds spent inside the detection disc: `2 sqrt(R^2 - o^2) / v`.
pub fn in_range_time(geometry: &PassGeometry) -> Result<f64, RendezvousError> {
    let PassGeometry { speed_mps, lateral_offset_m, detection_range_m } = *geometry;
    if !(speed_mps > 0.0) {
        return Err(RendezvousError::NonPositiveSpeed(speed_mps));
    }
    if !(lateral_offset_m >= 0.0) || !(detection_range_m >= 0.0) {
        return Err(RendezvousError::Geometry("offset and range must be non-negative".into()));
    }
    if lateral_offset_m >= detection_range_m {
        return Ok(0.0);
    }
    let half_chord = (detection_range_m.powi(2) - lateral_offset_m.powi(2)).sqrt();
    Ok(2.0 * half_chord / speed_mps)
}

/// Chance that one advertising event overlaps a scan window.
pub fn hit_probability(adv: &AdvertiserConfig, scan: &ScannerConfig) -> f64 {
    ((scan.scan_window_ms + adv.event_duration_ms) / scan.scan_cycle_ms).min(1.0)
}

/// Expected number of advertising events while in range.
pub fn expected_events(adv: &AdvertiserConfig, t_in_s: f64) -> f64 {
    (t_in_s.max(0.0) * 1000.0) / adv.interval_ms
}

/// Analytic single-pass detection probability.
///
/// `floor(N)` events always occur; the fractional remainder adds one more
/// event with probability `frac(N)`.
pub fn detection_probability(adv: &AdvertiserConfig, scan: &ScannerConfig, t_in_s: f64) -> f64 {
    let events = expected_events(adv, t_in_s);
    if events <= 0.0 {
        return 0.0;
    }
    let q = hit_probability(adv, scan);
    let whole = events.floor();
    let frac = events - whole;
    let miss = (1.0 - q).powf(whole) * (1.0 - frac * q);
    (1.0 - miss).clamp(0.0, 1.0)
}

/// Runs one pass with sampled phases. Returns the time in ms since entering
/// range at which the first heard event started.
///
/// The advertiser schedule is stationary: nominal slots `a + k * interval`
/// with `a` uniform in `[0, interval)`, each delayed by uniform jitter. Scan
/// windows repeat every cycle from a uniform phase.
pub fn simulate_trial<R: Rng + ?Sized>(adv: &AdvertiserConfig, scan: &ScannerConfig, t_in_s: f64, rng: &mut R) -> Option<f64> {
    let advertiser_phase = rng.gen_range(0.0..adv.interval_ms);
    let scanner_phase = rng.gen_range(0.0..scan.scan_cycle_ms);
    let t_in_ms = t_in_s * 1000.0;
    if t_in_ms <= 0.0 {
        return None;
    }
    let cycle = scan.scan_cycle_ms;
    let mut k = -1.0;
    loop {
        let nominal = advertiser_phase + k * adv.interval_ms;
        if nominal >= t_in_ms {
            return None;
        }
        let jitter = if adv.jitter_ms > 0.0 { rng.gen_range(0.0..=adv.jitter_ms) } else { 0.0 };
        let start = nominal + jitter;
        if (0.0..t_in_ms).contains(&start) {
            // event [start, start + e) overlaps window [w, w + W) iff start - w in (-e, W)
            let r = (start - scanner_phase).rem_euclid(cycle);
            if r < scan.scan_window_ms || r > cycle - adv.event_duration_ms {
                return Some(start);
            }
        }
        k += 1.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub detections: u64,
    pub trials: u64,
    /// Mean first-detection time relative to closest approach, seconds.
    /// Positive means after passing the beacon.
    pub mean_latency_s: Option<f64>,
}

/// Brute-force Monte Carlo estimate. Trial `i` draws from the stream
/// `(seed, i)`, so the estimate is identical for any thread count.
pub fn detection_probability_oracle(
    adv: &AdvertiserConfig,
    scan: &ScannerConfig,
    t_in_s: f64,
    trials: u64,
    seed: u64,
) -> Result<OracleEstimate, RendezvousError> {
    if trials == 0 {
        return Err(RendezvousError::NoTrials);
    }
    let hits: Vec<Option<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| simulate_trial(adv, scan, t_in_s, &mut stream_rng(seed, &[i])))
        .collect();
    let detections = hits.iter().flatten().count() as u64;
    let latency_sum: f64 = hits.iter().flatten().map(|t| t / 1000.0 - t_in_s / 2.0).sum();
    let p = detections as f64 / trials as f64;
    Ok(OracleEstimate {
        probability: p,
        std_error: (p * (1.0 - p) / trials as f64).sqrt(),
        detections,
        trials,
        mean_latency_s: (detections > 0).then(|| latency_sum / detections as f64),
    })
}
