//! A validated dataset as a directory of plain files.
//!
//! ```text
//! villages.csv  aez.csv  yields.csv  [boundaries.geojson]
//! quality.json  manifest.json  [pixel_summary.csv]
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ingest::{
    load_observations, write_observations, AnnualTable, QualityReport, SeasonalObservation, VillageRegistry,
    ZonalSummary,
};

pub const VILLAGES_FILE: &str = "villages.csv";
pub const ZONES_FILE: &str = "aez.csv";
pub const YIELDS_FILE: &str = "yields.csv";
pub const BOUNDARIES_FILE: &str = "boundaries.geojson";
pub const QUALITY_FILE: &str = "quality.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PIXEL_SUMMARY_FILE: &str = "pixel_summary.csv";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub registry: VillageRegistry,
    pub observations: Vec<SeasonalObservation>,
    pub table: AnnualTable,
    pub quality: QualityReport,
    pub boundaries: Option<Value>,
    pub pixel_summary: Option<ZonalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub villages: usize,
    pub zones: usize,
    pub observations: usize,
    pub villages_with_data: usize,
    pub years: Vec<i32>,
    pub preliminary_years: Vec<i32>,
    pub files: Vec<&'static str>,
}

impl Dataset {
    pub fn new(registry: VillageRegistry, observations: Vec<SeasonalObservation>) -> Result<Self> {
        let (table, quality) = AnnualTable::build(&observations, &registry)?;
        Ok(Dataset {
            registry,
            observations,
            table,
            quality,
            boundaries: None,
            pixel_summary: None,
        })
    }

    pub fn with_boundaries(mut self, boundaries: Value) -> Result<Self> {
        if boundaries.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(Error::validation("boundaries", "expected a GeoJSON FeatureCollection"));
        }
        self.boundaries = Some(boundaries);
        Ok(self)
    }

    /// Loads the input files of a snapshot or of a raw data directory and
    /// re-validates them. Derived reports are recomputed, not read.
    pub fn load(dir: &Path) -> Result<Self> {
        let registry = VillageRegistry::load(&dir.join(VILLAGES_FILE), &dir.join(ZONES_FILE))?;
        let observations = load_observations(&dir.join(YIELDS_FILE))?;
        let mut ds = Dataset::new(registry, observations)?;
        let path = dir.join(BOUNDARIES_FILE);
        if path.exists() {
            ds = ds.with_boundaries(read_geojson(&path)?)?;
        }
        Ok(ds)
    }

    pub fn manifest(&self) -> Manifest {
        let years = self.table.years();
        let preliminary_years = years
            .iter()
            .copied()
            .filter(|&y| self.table.is_preliminary_year(y))
            .collect();
        let mut files = vec![VILLAGES_FILE, ZONES_FILE, YIELDS_FILE, QUALITY_FILE];
        if self.boundaries.is_some() {
            files.push(BOUNDARIES_FILE);
        }
        if self.pixel_summary.is_some() {
            files.push(PIXEL_SUMMARY_FILE);
        }
        files.sort_unstable();
        Manifest {
            villages: self.registry.len(),
            zones: self.registry.zones().count(),
            observations: self.observations.len(),
            villages_with_data: self.table.len(),
            years,
            preliminary_years,
            files,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(VILLAGES_FILE), |w| self.registry.write_villages_csv(w))?;
        write_file(&dir.join(ZONES_FILE), |w| self.registry.write_zones_csv(w))?;
        write_file(&dir.join(YIELDS_FILE), |w| write_observations(&self.observations, w))?;
        write_file(&dir.join(QUALITY_FILE), |w| crate::export::write_json(w, &self.quality))?;
        if let Some(b) = &self.boundaries {
            write_file(&dir.join(BOUNDARIES_FILE), |w| crate::export::write_json(w, b))?;
        }
        if let Some(p) = &self.pixel_summary {
            write_file(&dir.join(PIXEL_SUMMARY_FILE), |w| p.write_csv(w))?;
        }
        write_file(&dir.join(MANIFEST_FILE), |w| {
            crate::export::write_json(w, &self.manifest())
        })
    }
}

pub fn read_geojson(path: &Path) -> Result<Value> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Creates `path` and hands a buffered writer to `body`.
pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_dataset, SynthConfig};

    #[test]
    fn save_load_round_trip() {
        let ds = synth_dataset(&SynthConfig {
            villages: 40,
            ..SynthConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.table, ds.table);
        assert_eq!(back.quality, ds.quality);
        assert_eq!(back.boundaries, ds.boundaries);
        assert_eq!(back.manifest(), ds.manifest());

        let again = tempfile::tempdir().unwrap();
        back.save(again.path()).unwrap();
        for f in [VILLAGES_FILE, ZONES_FILE, YIELDS_FILE, MANIFEST_FILE, BOUNDARIES_FILE] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(again.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn manifest_lists_years() {
        let ds = synth_dataset(&SynthConfig {
            villages: 12,
            ..SynthConfig::default()
        })
        .unwrap();
        let m = ds.manifest();
        assert_eq!(m.years, (2019..=2024).collect::<Vec<_>>());
        assert_eq!(m.preliminary_years, [2024]);
        assert_eq!(m.observations, 12 * 11);
    }
}
