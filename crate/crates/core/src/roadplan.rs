//! Road geometry, curvature-limited speed profile and beacon siting.
//!
//! Beacons go where vehicles must slow down: the tightest bends first, then
//! midpoints of whatever stretch is still uncovered. Each site gets the
//! broadcast interval the guide recommends for its local top speed.

use std::fmt::Write as _;
use std::str::FromStr;

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::power::{self, PowerError};
use crate::preset::{Preset, PresetError};
use crate::protocol::BeaconId;
use crate::sim::{self, Mount, SimError, MPS_PER_MPH};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const DEFAULT_SURFACE_VMAX_MPH: f64 = 45.0;
/// Lateral acceleration a driver tolerates on a rough dirt road.
pub const DEFAULT_LATERAL_ACCEL: f64 = 2.0;
pub const DEFAULT_MAX_SPACING_M: f64 = 400.0;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("road needs at least two points")]
    TooFewPoints,
    #[error("zero-length segment between points {0} and {1}")]
    DegenerateSegment(usize, usize),
    #[error("invalid coordinate: {0}")]
    BadCoordinate(String),
    #[error("invalid plan parameter: {0}")]
    Parameter(String),
    #[error("road geojson: {0}")]
    GeoJson(String),
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self, PlanError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(PlanError::BadCoordinate(format!("({lat}, {lon})")));
        }
        Ok(LatLon { lat, lon })
    }
}

/// Great-circle distance on a spherical earth.
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = p2 - p1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Local east/north metres relative to `origin` (equirectangular).
fn local_xy(origin: LatLon, p: LatLon) -> (f64, f64) {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    ((p.lon - origin.lon) * k * origin.lat.to_radians().cos(), (p.lat - origin.lat) * k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    points: Vec<LatLon>,
    /// Arc length at each vertex.
    chainage: Vec<f64>,
    pub surface_vmax_mph: f64,
}

impl Road {
    pub fn new(points: Vec<LatLon>, surface_vmax_mph: f64) -> Result<Self, PlanError> {
        if points.len() < 2 {
            return Err(PlanError::TooFewPoints);
        }
        if !(surface_vmax_mph > 0.0) {
            return Err(PlanError::Parameter(format!("surface vmax {surface_vmax_mph} mph")));
        }
        let mut chainage = vec![0.0];
        for (i, w) in points.windows(2).enumerate() {
            let d = haversine_m(w[0], w[1]);
            if d <= 0.0 {
                return Err(PlanError::DegenerateSegment(i, i + 1));
            }
            chainage.push(chainage[i] + d);
        }
        Ok(Road { points, chainage, surface_vmax_mph })
    }

    /// Reads the first LineString in a geometry, feature or collection. A
    /// `surface_vmax_mph` property on the feature overrides the default cap.
    pub fn from_geojson(text: &str) -> Result<Self, PlanError> {
        let gj = GeoJson::from_str(text).map_err(|e| PlanError::GeoJson(e.to_string()))?;
        let mut candidates: Vec<(Geometry, Option<JsonObject>)> = match gj {
            GeoJson::Geometry(g) => vec![(g, None)],
            GeoJson::Feature(f) => f.geometry.map(|g| (g, f.properties)).into_iter().collect(),
            GeoJson::FeatureCollection(fc) => {
                fc.features.into_iter().filter_map(|f| f.geometry.map(|g| (g, f.properties))).collect()
            }
        };
        let idx = candidates
            .iter()
            .position(|(g, _)| matches!(g.value, Value::LineString(_)))
            .ok_or_else(|| PlanError::GeoJson("no LineString found".into()))?;
        let (geometry, props) = candidates.swap_remove(idx);
        let Value::LineString(coords) = geometry.value else { unreachable!() };
        let points = coords
            .iter()
            .map(|c| match c.as_slice() {
                [lon, lat, ..] => LatLon::new(*lat, *lon),
                _ => Err(PlanError::BadCoordinate(format!("{c:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let vmax = props
            .as_ref()
            .and_then(|p| p.get("surface_vmax_mph"))
            .and_then(|v| v.as_f64())
            .unwrap_or(DEFAULT_SURFACE_VMAX_MPH);
        Road::new(points, vmax)
    }

    pub fn points(&self) -> &[LatLon] {
        &self.points
    }

    pub fn length_m(&self) -> f64 {
        *self.chainage.last().expect("road has points")
    }

    pub fn chainage(&self) -> &[f64] {
        &self.chainage
    }

    fn segment_at(&self, s: f64) -> usize {
        let i = self.chainage.partition_point(|&c| c <= s);
        i.saturating_sub(1).min(self.points.len() - 2)
    }

    /// Point at arc length `s`, clamped to the road.
    pub fn point_at(&self, s: f64) -> LatLon {
        let s = s.clamp(0.0, self.length_m());
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let t = ((s - self.chainage[i]) / (self.chainage[i + 1] - self.chainage[i])).clamp(0.0, 1.0);
        LatLon { lat: a.lat + t * (b.lat - a.lat), lon: a.lon + t * (b.lon - a.lon) }
    }

    /// Nearest point on the polyline: (arc length, distance in metres).
    pub fn project(&self, p: LatLon) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let (bx, by) = local_xy(a, self.points[i + 1]);
            let (px, py) = local_xy(a, p);
            let len2 = bx * bx + by * by;
            let t = ((px * bx + py * by) / len2).clamp(0.0, 1.0);
            let d = ((px - t * bx).powi(2) + (py - t * by).powi(2)).sqrt();
            if d < best.1 {
                let s = self.chainage[i] + t * (self.chainage[i + 1] - self.chainage[i]);
                best = (s, d);
            }
        }
        best
    }
}

/// Curvature speed limit at each vertex, mph:
/// `min(surface_vmax, sqrt(a_lat_max * radius))`, radius from the circle
/// through each vertex and its neighbours.
pub fn speed_profile(road: &Road, a_lat_max: f64) -> Vec<f64> {
    let n = road.points.len();
    let cap_mps = road.surface_vmax_mph * MPS_PER_MPH;
    let mut v = vec![road.surface_vmax_mph; n];
    if n < 3 {
        return v;
    }
    for (i, w) in road.points.windows(3).enumerate() {
        let (ax, ay) = local_xy(w[1], w[0]);
        let (cx, cy) = local_xy(w[1], w[2]);
        let a = (ax * ax + ay * ay).sqrt();
        let c = (cx * cx + cy * cy).sqrt();
        let b = ((ax - cx).powi(2) + (ay - cy).powi(2)).sqrt();
        let twice_area = (ax * cy - ay * cx).abs();
        // collinear within 1e-9 of the chord lengths: straight
        if twice_area <= 1e-9 * a * c {
            continue;
        }
        let radius = a * b * c / (2.0 * twice_area);
        let mps = (a_lat_max * radius).sqrt().min(cap_mps);
        v[i + 1] = (mps / MPS_PER_MPH).min(road.surface_vmax_mph);
    }
    v[0] = v[1];
    v[n - 1] = v[n - 2];
    v
}

fn speed_at(road: &Road, profile: &[f64], s: f64) -> f64 {
    let i = road.segment_at(s);
    let (c0, c1) = (road.chainage[i], road.chainage[i + 1]);
    let t = ((s - c0) / (c1 - c0)).clamp(0.0, 1.0);
    profile[i] + t * (profile[i + 1] - profile[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub start_m: f64,
    pub end_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaconSite {
    pub beacon_id: BeaconId,
    pub position: LatLon,
    /// Arc length along the road.
    pub chainage_m: f64,
    /// Distance from the centreline.
    pub offset_m: f64,
    pub beacon_preset: String,
    pub interval_ms: u32,
    pub predicted_battery_days: f64,
    pub local_vmax_mph: f64,
    /// Single-pass detection probability at `local_vmax_mph`, when planned.
    pub detection_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Siting {
    pub sites: Vec<BeaconSite>,
    pub coverage_gaps: Vec<RoadSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SitingConfig {
    pub max_spacing_m: f64,
    pub count_budget: usize,
    pub a_lat_max: f64,
    pub offset_m: f64,
    pub preset_name: String,
}

impl SitingConfig {
    pub fn new(max_spacing_m: f64, count_budget: usize) -> Self {
        SitingConfig {
            max_spacing_m,
            count_budget,
            a_lat_max: DEFAULT_LATERAL_ACCEL,
            offset_m: crate::preset::DEFAULT_LATERAL_OFFSET_M,
            preset_name: crate::preset::DEFAULT_PRESET.to_string(),
        }
    }
}

/// Stretches of road farther than `radius` from every site.
fn uncovered(length: f64, sites: &[f64], radius: f64) -> Vec<RoadSegment> {
    let mut sorted = sites.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut gaps = Vec::new();
    let mut reached = 0.0;
    for s in sorted {
        let lo = s - radius;
        if lo - reached > 1e-6 {
            gaps.push(RoadSegment { start_m: reached, end_m: lo });
        }
        reached = f64::max(reached, s + radius);
    }
    if length - reached > 1e-6 {
        gaps.push(RoadSegment { start_m: reached, end_m: length });
    }
    gaps
}

/// Greedy siting: curvature speed minima first (slowest first, skipping any
/// already within half a spacing of a site), then the midpoint of the
/// longest uncovered stretch until the budget runs out or nothing is
/// uncovered.
pub fn select_sites(road: &Road, config: &SitingConfig) -> Result<Siting, PlanError> {
    if config.count_budget == 0 {
        return Err(PlanError::Parameter("count budget must be at least 1".into()));
    }
    if !(config.max_spacing_m > 0.0) {
        return Err(PlanError::Parameter(format!("max spacing {} m", config.max_spacing_m)));
    }
    if !(config.a_lat_max > 0.0) || !(config.offset_m >= 0.0) {
        return Err(PlanError::Parameter("lateral acceleration must be > 0 and offset >= 0".into()));
    }
    let profile = speed_profile(road, config.a_lat_max);
    let radius = config.max_spacing_m / 2.0;
    let n = profile.len();

    let mut minima: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| {
            profile[i] < road.surface_vmax_mph - 1e-9 && profile[i] <= profile[i - 1] && profile[i] <= profile[i + 1]
        })
        .collect();
    minima.sort_by(|&a, &b| profile[a].total_cmp(&profile[b]).then(a.cmp(&b)));

    let mut chosen: Vec<f64> = Vec::new();
    for i in minima {
        if chosen.len() == config.count_budget {
            break;
        }
        let s = road.chainage[i];
        if chosen.iter().all(|c| (c - s).abs() > radius) {
            chosen.push(s);
        }
    }
    while chosen.len() < config.count_budget {
        let gaps = uncovered(road.length_m(), &chosen, radius);
        let Some(widest) = gaps
            .iter()
            .max_by(|a, b| (a.end_m - a.start_m).total_cmp(&(b.end_m - b.start_m)).then(b.start_m.total_cmp(&a.start_m)))
        else {
            break;
        };
        chosen.push((widest.start_m + widest.end_m) / 2.0);
    }
    chosen.sort_by(f64::total_cmp);

    let sites = chosen
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let local_vmax_mph = speed_at(road, &profile, s);
            let row = power::recommend_interval(local_vmax_mph)?;
            let id = BeaconId::new(&format!("B-{:02}", k + 1)).map_err(|e| PlanError::Parameter(e.to_string()))?;
            Ok(BeaconSite {
                beacon_id: id,
                position: road.point_at(s),
                chainage_m: s,
                offset_m: config.offset_m,
                beacon_preset: config.preset_name.clone(),
                interval_ms: row.interval_ms,
                predicted_battery_days: row.battery_days,
                local_vmax_mph,
                detection_probability: None,
            })
        })
        .collect::<Result<Vec<_>, PlanError>>()?;
    Ok(Siting { sites, coverage_gaps: uncovered(road.length_m(), &chosen, radius) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentPlan {
    pub road: Road,
    pub sites: Vec<BeaconSite>,
    pub coverage_gaps: Vec<RoadSegment>,
    /// Sum of per-site detection probabilities for one traverse.
    pub expected_detections: f64,
}

/// Sites the road and scores each site with the rendezvous model at its
/// local top speed and recommended interval.
pub fn plan_deployment(road: &Road, config: &SitingConfig, mount: Mount) -> Result<DeploymentPlan, PlanError> {
    let mut preset = Preset::named(&config.preset_name)?;
    preset.pass.lateral_offset_m = config.offset_m;
    let siting = select_sites(road, config)?;
    let mut sites = siting.sites;
    for site in &mut sites {
        let p = sim::expected_probability(&preset, site.local_vmax_mph, f64::from(site.interval_ms), mount)?;
        site.detection_probability = Some(p);
    }
    let expected_detections = sites.iter().filter_map(|s| s.detection_probability).sum();
    Ok(DeploymentPlan { road: road.clone(), sites, coverage_gaps: siting.coverage_gaps, expected_detections })
}

impl DeploymentPlan {
    /// Point per beacon with its id, interval, battery life and local speed.
    pub fn to_geojson(&self) -> String {
        let features = self
            .sites
            .iter()
            .map(|s| {
                let mut props = JsonObject::new();
                props.insert("beacon_id".into(), s.beacon_id.as_str().into());
                props.insert("interval_ms".into(), s.interval_ms.into());
                props.insert("battery_days".into(), s.predicted_battery_days.into());
                props.insert("local_vmax_mph".into(), round6(s.local_vmax_mph).into());
                props.insert("chainage_m".into(), round6(s.chainage_m).into());
                props.insert("offset_m".into(), s.offset_m.into());
                props.insert("preset".into(), s.beacon_preset.clone().into());
                if let Some(p) = s.detection_probability {
                    props.insert("detection_probability".into(), round6(p).into());
                }
                Feature {
                    bbox: None,
                    geometry: Some(Geometry::new(Value::Point(vec![s.position.lon, s.position.lat]))),
                    id: None,
                    properties: Some(props),
                    foreign_members: None,
                }
            })
            .collect();
        GeoJson::FeatureCollection(FeatureCollection { bbox: None, features, foreign_members: None }).to_string()
    }

    /// `beacon_id,lat,lon,interval_ms,preset`
    pub fn registry_csv(&self) -> String {
        let mut out = String::from("beacon_id,lat,lon,interval_ms,preset\n");
        for s in &self.sites {
            let _ = writeln!(out, "{},{},{},{},{}", s.beacon_id, s.position.lat, s.position.lon, s.interval_ms, s.beacon_preset);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "road length {:.1} m, {} sites, {} coverage gaps, expected detections per traverse {:.3}\n",
            self.road.length_m(),
            self.sites.len(),
            self.coverage_gaps.len(),
            self.expected_detections
        );
        for s in &self.sites {
            let _ = writeln!(
                out,
                "{:<6} at {:>8.1} m  vmax {:>5.1} mph  interval {:>5} ms  battery {:>7.2} d  p_detect {:.3}",
                s.beacon_id,
                s.chainage_m,
                s.local_vmax_mph,
                s.interval_ms,
                s.predicted_battery_days,
                s.detection_probability.unwrap_or(f64::NAN)
            );
        }
        for g in &self.coverage_gaps {
            let _ = writeln!(out, "gap {:.1}..{:.1} m", g.start_m, g.end_m);
        }
        out
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const M_PER_DEG: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

    /// Builds a road from local metres around (5.4 N, 118.0 E).
    fn road_from_xy(xy: &[(f64, f64)]) -> Road {
        let o = LatLon { lat: 5.4, lon: 118.0 };
        let pts = xy
            .iter()
            .map(|&(x, y)| LatLon { lat: o.lat + y / M_PER_DEG, lon: o.lon + x / (M_PER_DEG * o.lat.to_radians().cos()) })
            .collect();
        Road::new(pts, DEFAULT_SURFACE_VMAX_MPH).unwrap()
    }

    fn straight(len: f64) -> Road {
        road_from_xy(&[(0.0, 0.0), (len / 2.0, 0.0), (len, 0.0)])
    }

    fn hairpin() -> Road {
        // 300 m approach, a tight 8 m-radius turn, 300 m return
        let mut xy = vec![(-300.0, 8.0), (-150.0, 8.0)];
        for k in 0..=8 {
            let a = std::f64::consts::FRAC_PI_2 - std::f64::consts::PI * k as f64 / 8.0;
            xy.push((8.0 * a.cos(), 8.0 * a.sin()));
        }
        xy.extend([(-150.0, -8.0), (-300.0, -8.0)]);
        road_from_xy(&xy)
    }

    #[test]
    fn haversine_known_distance() {
        // one degree of latitude on the 6371 km sphere
        let d = haversine_m(LatLon { lat: 0.0, lon: 0.0 }, LatLon { lat: 1.0, lon: 0.0 });
        assert!((d - 111_194.93).abs() < 0.01, "{d}");
    }

    #[test]
    fn rejects_degenerate_roads() {
        let p = LatLon { lat: 5.0, lon: 118.0 };
        assert!(matches!(Road::new(vec![p], 45.0), Err(PlanError::TooFewPoints)));
        assert!(matches!(Road::new(vec![p, p], 45.0), Err(PlanError::DegenerateSegment(0, 1))));
        assert!(LatLon::new(91.0, 0.0).is_err());
    }

    #[test]
    fn straight_road_runs_at_cap() {
        let v = speed_profile(&straight(1000.0), DEFAULT_LATERAL_ACCEL);
        assert!(v.iter().all(|&s| s == DEFAULT_SURFACE_VMAX_MPH));
    }

    #[test]
    fn two_point_road_is_uniform() {
        let road = road_from_xy(&[(0.0, 0.0), (500.0, 0.0)]);
        assert_eq!(speed_profile(&road, 2.0), vec![45.0, 45.0]);
    }

    #[test]
    fn right_angle_bend_speed() {
        // three points on a 10 m circle spanning 90 degrees
        let r = 10.0;
        let pts: Vec<_> = [0.0f64, 45.0, 90.0]
            .iter()
            .map(|d| (r * d.to_radians().cos(), r * d.to_radians().sin()))
            .collect();
        let road = road_from_xy(&pts);
        let v = speed_profile(&road, 2.0);
        let apex_mps = v[1] * MPS_PER_MPH;
        assert!((apex_mps - 20f64.sqrt()).abs() < 0.01, "{apex_mps}");
        assert!((v[1] - 10.0).abs() < 0.05);
        assert_eq!(v[0], v[1]);
        assert_eq!(v[2], v[1]);
    }

    #[test]
    fn single_site_on_straight_road_is_midpoint() {
        let road = straight(1000.0);
        let s = select_sites(&road, &SitingConfig::new(400.0, 1)).unwrap();
        assert_eq!(s.sites.len(), 1);
        assert!((s.sites[0].chainage_m - road.length_m() / 2.0).abs() < 1e-6);
        assert_eq!(s.sites[0].interval_ms, 700);
        assert_eq!(s.sites[0].predicted_battery_days, 131.25);
        assert!(!s.coverage_gaps.is_empty());
    }

    #[test]
    fn hairpin_gets_the_site() {
        let road = hairpin();
        let s = select_sites(&road, &SitingConfig::new(400.0, 1)).unwrap();
        let profile = speed_profile(&road, DEFAULT_LATERAL_ACCEL);
        let (apex, _) = profile.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!((s.sites[0].chainage_m - road.chainage()[apex]).abs() < 1e-9);
        assert!(s.sites[0].local_vmax_mph < 10.0);
        assert_eq!(s.sites[0].interval_ms, 1300);
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(matches!(select_sites(&straight(100.0), &SitingConfig::new(400.0, 0)), Err(PlanError::Parameter(_))));
    }

    #[test]
    fn three_sites_cover_a_kilometre() {
        let road = straight(1000.0);
        let plan = plan_deployment(&road, &SitingConfig::new(400.0, 3), Mount::WheelArch).unwrap();
        assert_eq!(plan.sites.len(), 3);
        assert!(plan.coverage_gaps.is_empty());
        let ids: Vec<_> = plan.sites.iter().map(|s| s.beacon_id.to_string()).collect();
        assert_eq!(ids, ["B-01", "B-02", "B-03"]);
    }

    #[test]
    fn planned_sites_meet_reliability() {
        for road in [straight(1000.0), hairpin()] {
            let plan = plan_deployment(&road, &SitingConfig::new(300.0, 4), Mount::WheelArch).unwrap();
            for s in &plan.sites {
                assert!(s.detection_probability.unwrap() >= 0.95, "{s:?}");
            }
            assert!(plan.expected_detections >= 0.95 * plan.sites.len() as f64);
        }
    }

    #[test]
    fn bonnet_mount_scores_lower() {
        let road = straight(1000.0);
        let cfg = SitingConfig::new(400.0, 3);
        let arch = plan_deployment(&road, &cfg, Mount::WheelArch).unwrap();
        let bonnet = plan_deployment(&road, &cfg, Mount::Bonnet).unwrap();
        assert!(bonnet.expected_detections < arch.expected_detections);
    }

    #[test]
    fn planned_probability_agrees_with_oracle() {
        let road = straight(1000.0);
        let plan = plan_deployment(&road, &SitingConfig::new(400.0, 1), Mount::WheelArch).unwrap();
        let site = &plan.sites[0];
        let preset = Preset::named(&site.beacon_preset).unwrap();
        let t = sim::pass_time(&preset, site.local_vmax_mph, Mount::WheelArch).unwrap();
        let adv = preset.advertiser(f64::from(site.interval_ms)).unwrap();
        let o = crate::rendezvous::detection_probability_oracle(&adv, &preset.scanner, t, 20_000, 4).unwrap();
        assert!(o.probability >= 0.95, "{}", o.probability);
    }

    #[test]
    fn two_point_road_plans() {
        let road = road_from_xy(&[(0.0, 0.0), (600.0, 0.0)]);
        let plan = plan_deployment(&road, &SitingConfig::new(400.0, 2), Mount::WheelArch).unwrap();
        assert_eq!(plan.sites.len(), 2);
    }

    #[test]
    fn unknown_preset() {
        let mut cfg = SitingConfig::new(400.0, 1);
        cfg.preset_name = "nrf-51".into();
        assert!(matches!(plan_deployment(&straight(100.0), &cfg, Mount::WheelArch), Err(PlanError::Preset(_))));
    }

    #[test]
    fn geojson_roundtrip_of_road_and_plan() {
        let text = r#"{"type":"Feature","properties":{"surface_vmax_mph":30},
            "geometry":{"type":"LineString","coordinates":[[118.0,5.4],[118.002,5.401],[118.004,5.4]]}}"#;
        let road = Road::from_geojson(text).unwrap();
        assert_eq!(road.surface_vmax_mph, 30.0);
        assert_eq!(road.points().len(), 3);
        let plan = plan_deployment(&road, &SitingConfig::new(200.0, 2), Mount::WheelArch).unwrap();
        let out: GeoJson = plan.to_geojson().parse().unwrap();
        let GeoJson::FeatureCollection(fc) = out else { panic!("expected collection") };
        assert_eq!(fc.features.len(), 2);
        let props = fc.features[0].properties.as_ref().unwrap();
        for key in ["beacon_id", "interval_ms", "battery_days", "local_vmax_mph"] {
            assert!(props.contains_key(key), "{key}");
        }
        assert!(plan.registry_csv().starts_with("beacon_id,lat,lon,interval_ms,preset\nB-01,"));
        assert!(Road::from_geojson(r#"{"type":"Point","coordinates":[1,2]}"#).is_err());
    }

    proptest! {
        #[test]
        fn sites_sorted_and_on_road(budget in 1usize..6, spacing in 50.0..600.0f64, bend in 5.0..80.0f64) {
            let mut road_xy = vec![(0.0, 0.0), (200.0, 0.0)];
            for k in 1..=6 {
                let a = std::f64::consts::PI * k as f64 / 12.0;
                road_xy.push((200.0 + bend * a.sin(), bend * (1.0 - a.cos())));
            }
            road_xy.push((200.0 + bend + 1.0, bend + 300.0));
            let road = road_from_xy(&road_xy);
            let siting = select_sites(&road, &SitingConfig::new(spacing, budget)).unwrap();
            for w in siting.sites.windows(2) {
                prop_assert!(w[0].chainage_m <= w[1].chainage_m);
            }
            for s in &siting.sites {
                let (_, d) = road.project(s.position);
                prop_assert!(d < 1e-6, "site off road by {d} m");
                let row = power::recommend_interval(s.local_vmax_mph).unwrap();
                prop_assert_eq!(row.interval_ms, s.interval_ms);
            }
        }

        #[test]
        fn gentler_limit_never_speeds_up(a_lo in 0.5..3.0f64, extra in 0.0..3.0f64, bend in 3.0..100.0f64) {
            let xy: Vec<_> = (0..=6)
                .map(|k| {
                    let a = std::f64::consts::PI * k as f64 / 6.0;
                    (bend * a.cos(), bend * a.sin())
                })
                .collect();
            let road = road_from_xy(&xy);
            let lo = speed_profile(&road, a_lo);
            let hi = speed_profile(&road, a_lo + extra);
            for (l, h) in lo.iter().zip(&hi) {
                prop_assert!(l <= h);
                prop_assert!(*l > 0.0 && *h <= road.surface_vmax_mph);
            }
        }
    }
}
