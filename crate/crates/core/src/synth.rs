//! Deterministic synthetic datasets.
//!
//! Each village gets a base yield (scaled by a zone factor), a linear trend
//! and Gaussian noise per season. Years `first_year..=last_year` have both
//! seasons; an optional trailing year has Season A only, marked preliminary.
//! Centroids fall inside Rwanda's bounding box and boundaries are small
//! squares around them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::ingest::{Season, SeasonalObservation, VillageRecord, VillageRegistry, Zone};
use crate::snapshot::Dataset;

const LON: (f64, f64) = (28.86, 30.90);
const LAT: (f64, f64) = (-2.84, -1.05);
const PROVINCES: [&str; 5] = ["Kigali", "Northern", "Southern", "Eastern", "Western"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub villages: usize,
    pub zones: usize,
    pub seed: u64,
    /// Mean base yield in the first year, kg/ha.
    pub base_mean: f64,
    pub base_sd: f64,
    /// Mean annual yield change, kg/ha/yr.
    pub trend_mean: f64,
    pub trend_sd: f64,
    /// Season-level noise, kg/ha.
    pub noise_sd: f64,
    pub first_year: i32,
    pub last_year: i32,
    pub preliminary_year: Option<i32>,
    pub boundaries: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            villages: 1000,
            zones: 12,
            seed: 2015,
            base_mean: 1300.0,
            base_sd: 350.0,
            trend_mean: 45.0,
            trend_sd: 60.0,
            noise_sd: 120.0,
            first_year: 2019,
            last_year: 2023,
            preliminary_year: Some(2024),
            boundaries: true,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.villages == 0 || self.zones == 0 {
            return Err(Error::Config("synthetic dataset needs villages and zones".into()));
        }
        if self.last_year < self.first_year {
            return Err(Error::Config("synthetic years are empty".into()));
        }
        if self.preliminary_year.is_some_and(|p| p <= self.last_year) {
            return Err(Error::Config("preliminary year must follow the last full year".into()));
        }
        for (name, v) in [
            ("base_sd", self.base_sd),
            ("trend_sd", self.trend_sd),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn round_to(x: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (x * f).round() / f
}

pub fn village_id(i: usize) -> String {
    format!("V{:05}", i + 1)
}

pub fn zone_id(k: usize) -> String {
    format!("AEZ{:02}", k + 1)
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated sd")
}

pub fn synth_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let zones: Vec<Zone> = (0..config.zones)
        .map(|k| Zone {
            aez_id: zone_id(k),
            name: format!("Zone {}", k + 1),
        })
        .collect();
    let zone_factor: Vec<f64> = (0..config.zones).map(|_| rng.random_range(0.75..1.25)).collect();

    let (base, trend, noise) = (normal(config.base_sd), normal(config.trend_sd), normal(config.noise_sd));
    let mut villages = Vec::with_capacity(config.villages);
    let mut observations = Vec::with_capacity(config.villages * 11);
    let mut features = Vec::new();
    for i in 0..config.villages {
        let id = village_id(i);
        let zone = i * config.zones / config.villages;
        let lon = round_to(rng.random_range(LON.0..LON.1), 5);
        let lat = round_to(rng.random_range(LAT.0..LAT.1), 5);
        let level = ((config.base_mean + base.sample(&mut rng)) * zone_factor[zone]).max(150.0);
        let slope = config.trend_mean + trend.sample(&mut rng);
        let mut seasons = Vec::new();
        for year in config.first_year..=config.last_year {
            seasons.push((year, Season::A, false));
            seasons.push((year, Season::B, false));
        }
        if let Some(p) = config.preliminary_year {
            seasons.push((p, Season::A, true));
        }
        for (year, season, preliminary) in seasons {
            let expected = level + slope * (year - config.first_year) as f64;
            let tilt = if season == Season::A { 1.04 } else { 0.96 };
            let y = (expected * tilt + noise.sample(&mut rng)).max(0.0);
            observations.push(SeasonalObservation {
                village_id: id.clone(),
                year,
                season,
                yield_mean: round_to(y, 1),
                maize_area: round_to(rng.random_range(5.0..80.0), 2),
                preliminary,
            });
        }
        if config.boundaries {
            let h = 0.004;
            let ring: Vec<[f64; 2]> = [(-h, -h), (h, -h), (h, h), (-h, h), (-h, -h)]
                .iter()
                .map(|(dx, dy)| [round_to(lon + dx, 5), round_to(lat + dy, 5)])
                .collect();
            features.push(json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"village_id": id},
            }));
        }
        villages.push(VillageRecord {
            village_id: id,
            name: format!("Village {}", i + 1),
            district: format!("D{:02}", i % 30 + 1),
            province: PROVINCES[i % PROVINCES.len()].into(),
            aez_id: zone_id(zone),
            centroid: Some((lon, lat)),
        });
    }
    let registry = VillageRegistry::new(villages, zones)?;
    let ds = Dataset::new(registry, observations)?;
    if config.boundaries {
        ds.with_boundaries(json!({"type": "FeatureCollection", "features": features}))
    } else {
        Ok(ds)
    }
}

/// Pixel records scattered over the registry's villages: each pixel is the
/// village's `means` value plus Gaussian(0, sigma) noise.
pub fn synth_pixels(
    village_ids: &[String],
    means: &[f64],
    count: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<(u32, f32)>> {
    if village_ids.len() != means.len() || village_ids.is_empty() {
        return Err(Error::Config("pixel synthesis needs one mean per village".into()));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("pixel sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let v = rng.random_range(0..village_ids.len());
            (v as u32, (means[v] + noise.sample(&mut rng)).max(0.0) as f32)
        })
        .collect())
}

pub fn boundary_count(boundaries: &Value) -> usize {
    boundaries["features"].as_array().map_or(0, Vec::len)
}
