//! End-to-end: plan a road, drive a receiver past the beacons, ship the
//! detections by SMS and land them on the map.

use bletrack_core::preset::{Preset, HM10_BT4};
use bletrack_core::protocol::{
    decode_sms, merge_detections, BeaconRegistry, DetectionStore, ReceiverEvent, ReceiverId, ReceiverState,
};
use bletrack_core::rf_model::{fit_exponent, read_samples_csv, MaterialSet};
use bletrack_core::roadplan::{plan_deployment, Road, SitingConfig};
use bletrack_core::sim::{self, Mount};
use chrono::DateTime;
use geojson::GeoJson;

const ROAD: &str = r#"{"type":"FeatureCollection","features":[
  {"type":"Feature","properties":{"name":"camp"},"geometry":{"type":"Point","coordinates":[118.0,5.4]}},
  {"type":"Feature","properties":{"surface_vmax_mph":40},"geometry":{"type":"LineString","coordinates":
    [[118.0,5.4],[118.003,5.4],[118.0035,5.4003],[118.003,5.4006],[118.0,5.4006],[117.997,5.4012]]}}]}"#;

#[test]
fn plan_drive_report_map() {
    let road = Road::from_geojson(ROAD).unwrap();
    assert_eq!(road.surface_vmax_mph, 40.0);
    let plan = plan_deployment(&road, &SitingConfig::new(300.0, 4), Mount::WheelArch).unwrap();
    assert_eq!(plan.sites.len(), 4);
    let registry = BeaconRegistry::from_csv(plan.registry_csv().as_bytes()).unwrap();
    assert_eq!(registry.entries.len(), 4);

    // drive the road at each site's local top speed and see who hears what
    let preset = Preset::named(HM10_BT4).unwrap();
    let rx = ReceiverId::new("TRUCK-7").unwrap();
    let mut receiver = ReceiverState::new(rx.clone());
    let mut heard = Vec::new();
    for (k, site) in plan.sites.iter().enumerate() {
        let t = 60 * (k as u32 + 1);
        if sim::simulate_pass(&preset, 11 + k as u64, site.local_vmax_mph, f64::from(site.interval_ms), Mount::WheelArch).unwrap() {
            receiver.step(&ReceiverEvent::Sighting { beacon: site.beacon_id.clone(), rssi_dbm: -88.0, t });
            heard.push(site.beacon_id.clone());
        }
    }
    assert!(!heard.is_empty());
    let out = receiver.step(&ReceiverEvent::GsmUp { t: 3600 });
    let wires: Vec<String> = out.payloads.iter().map(|p| p.to_wire()).collect();
    assert!(receiver.buffer.is_empty());

    let msg = decode_sms(&wires).unwrap();
    assert_eq!(msg.receiver_id, rx);
    let mut store = DetectionStore::default();
    let at = DateTime::from_timestamp(1_556_186_400, 0).unwrap();
    merge_detections(&mut store, &msg.receiver_id, &msg.records, &registry, at);
    assert_eq!(store.events.len(), heard.len());
    assert!(store.quarantine.is_empty());

    let GeoJson::FeatureCollection(fc) = store.to_geojson().parse::<GeoJson>().unwrap() else { panic!() };
    for (f, site) in fc.features.iter().zip(plan.sites.iter().filter(|s| heard.contains(&s.beacon_id))) {
        let props = f.properties.as_ref().unwrap();
        assert_eq!(props["beacon_id"], site.beacon_id.as_str());
        let geojson::Value::Point(c) = &f.geometry.as_ref().unwrap().value else { panic!() };
        assert_eq!((c[1], c[0]), (site.position.lat, site.position.lon));
    }
}

#[test]
fn fitted_exponent_from_noisy_walk() {
    // every two metres out to 30 m, generated from n = 1.9 with a fixed +-1 dB pattern
    let mut csv = String::from("distance_m,rssi_dbm,materials\n");
    for (k, d) in (1..=15).map(|k| 2.0 * k as f64).enumerate() {
        let noise = if k % 2 == 0 { 1.0 } else { -1.0 };
        csv.push_str(&format!("{d},{},\n", -70.0 - 19.0 * d.log10() + noise));
    }
    let samples = read_samples_csv(csv.as_bytes()).unwrap();
    let fit = fit_exponent(&samples, -70.0).unwrap();
    assert!((fit.model.exponent - 1.9).abs() < 0.05, "{}", fit.model.exponent);
    assert!(fit.rms_residual < 1.2);
    let range = fit.model.detection_range(-95.0, MaterialSet::EMPTY).meters;
    assert!((range - 10f64.powf(25.0 / 19.0)).abs() < 2.0);
}

#[test]
fn preset_file_roundtrip_drives_the_same_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("custom.toml");
    let mut p = Preset::named(HM10_BT4).unwrap();
    p.name = "custom".into();
    p.scanner.scan_window_ms = 900.0;
    std::fs::write(&path, p.to_toml().unwrap()).unwrap();
    let loaded = Preset::resolve(path.to_str().unwrap()).unwrap();
    assert_eq!(loaded, p);
    let a = sim::expected_probability(&p, 30.0, 1000.0, Mount::Bonnet).unwrap();
    let b = sim::expected_probability(&loaded, 30.0, 1000.0, Mount::Bonnet).unwrap();
    assert_eq!(a, b);
}
