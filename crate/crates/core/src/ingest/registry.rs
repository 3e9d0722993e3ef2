use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A village, the smallest administrative unit yields are averaged over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VillageRecord {
    pub village_id: String,
    pub name: String,
    pub district: String,
    pub province: String,
    pub aez_id: String,
    /// `(lon, lat)` in degrees.
    pub centroid: Option<(f64, f64)>,
}

/// An agro-ecological zone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zone {
    pub aez_id: String,
    pub name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct VillageRow {
    village_id: String,
    name: String,
    district: String,
    province: String,
    aez_id: String,
    lon: Option<f64>,
    lat: Option<f64>,
}

/// Villages keyed by id, each resolved to a known agro-ecological zone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VillageRegistry {
    villages: BTreeMap<String, VillageRecord>,
    zones: BTreeMap<String, Zone>,
}

impl VillageRegistry {
    pub fn new(villages: Vec<VillageRecord>, zones: Vec<Zone>) -> Result<Self> {
        let mut zone_map = BTreeMap::new();
        for zone in zones {
            if zone_map.contains_key(&zone.aez_id) {
                return Err(Error::DuplicateZone(zone.aez_id));
            }
            zone_map.insert(zone.aez_id.clone(), zone);
        }
        let mut village_map = BTreeMap::new();
        for village in villages {
            if village.village_id.is_empty() {
                return Err(Error::validation("villages", "empty village_id"));
            }
            if village_map.contains_key(&village.village_id) {
                return Err(Error::DuplicateVillage(village.village_id));
            }
            if !zone_map.contains_key(&village.aez_id) {
                return Err(Error::UnknownZone {
                    village: village.village_id,
                    zone: village.aez_id,
                });
            }
            village_map.insert(village.village_id.clone(), village);
        }
        Ok(Self {
            villages: village_map,
            zones: zone_map,
        })
    }

    /// Loads `villages.csv` and `aez.csv`.
    pub fn load(villages: &Path, aez: &Path) -> Result<Self> {
        let v = std::fs::File::open(villages).map_err(|e| Error::io(villages, e))?;
        let z = std::fs::File::open(aez).map_err(|e| Error::io(aez, e))?;
        let zones = read_zones(z).map_err(|e| relabel(e, aez))?;
        let villages_rows = read_villages(v).map_err(|e| relabel(e, villages))?;
        Self::new(villages_rows, zones)
    }

    pub fn from_readers(villages: impl Read, aez: impl Read) -> Result<Self> {
        Self::new(read_villages(villages)?, read_zones(aez)?)
    }

    pub fn len(&self) -> usize {
        self.villages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.villages.is_empty()
    }

    pub fn get(&self, village_id: &str) -> Option<&VillageRecord> {
        self.villages.get(village_id)
    }

    pub fn contains(&self, village_id: &str) -> bool {
        self.villages.contains_key(village_id)
    }

    pub fn zone_of(&self, village_id: &str) -> Option<&Zone> {
        self.villages.get(village_id).and_then(|v| self.zones.get(&v.aez_id))
    }

    /// Villages in ascending id order.
    pub fn villages(&self) -> impl Iterator<Item = &VillageRecord> {
        self.villages.values()
    }

    pub fn zones(&self) -> impl Iterator<Item = &Zone> {
        self.zones.values()
    }

    pub fn write_villages_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for v in self.villages.values() {
            w.serialize(VillageRow {
                village_id: v.village_id.clone(),
                name: v.name.clone(),
                district: v.district.clone(),
                province: v.province.clone(),
                aez_id: v.aez_id.clone(),
                lon: v.centroid.map(|c| c.0),
                lat: v.centroid.map(|c| c.1),
            })
            .map_err(|e| Error::csv("villages.csv", e))?;
        }
        w.flush().map_err(|e| Error::io("villages.csv", e))?;
        Ok(())
    }

    pub fn write_zones_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for z in self.zones.values() {
            w.serialize(z).map_err(|e| Error::csv("aez.csv", e))?;
        }
        w.flush().map_err(|e| Error::io("aez.csv", e))?;
        Ok(())
    }
}

fn relabel(err: Error, path: &Path) -> Error {
    match err {
        Error::Csv { source, .. } => Error::csv(path, source),
        other => other,
    }
}

fn read_villages(input: impl Read) -> Result<Vec<VillageRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize::<VillageRow>() {
        let row = row.map_err(|e| Error::csv("villages.csv", e))?;
        let centroid = match (row.lon, row.lat) {
            (Some(lon), Some(lat)) => Some((lon, lat)),
            (None, None) => None,
            _ => {
                return Err(Error::validation(
                    format!("village {:?}", row.village_id),
                    "lon and lat must both be present or both blank",
                ))
            }
        };
        out.push(VillageRecord {
            village_id: row.village_id,
            name: row.name,
            district: row.district,
            province: row.province,
            aez_id: row.aez_id,
            centroid,
        });
    }
    Ok(out)
}

fn read_zones(input: impl Read) -> Result<Vec<Zone>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    rdr.deserialize::<Zone>()
        .map(|r| r.map_err(|e| Error::csv("aez.csv", e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const AEZ: &str = "aez_id,name\nZ1,Highlands\nZ2,Eastern savanna\n";

    #[test]
    fn loads_three_villages_across_two_zones() {
        let villages = "village_id,name,district,province,aez_id,lon,lat\n\
            RW-0001,Alpha,Gasabo,Kigali,Z1,30.1,-1.9\n\
            RW-0002,Beta,Kayonza,East,Z2,,\n\
            RW-0003,Gamma,Kayonza,East,Z2,30.6,-1.8\n";
        let reg = VillageRegistry::from_readers(villages.as_bytes(), AEZ.as_bytes()).unwrap();
        assert_eq!(reg.len(), 3);
        assert_eq!(reg.zone_of("RW-0001").unwrap().aez_id, "Z1");
        assert_eq!(reg.zone_of("RW-0002").unwrap().aez_id, "Z2");
        assert_eq!(reg.zone_of("RW-0003").unwrap().name, "Eastern savanna");
        assert_eq!(reg.get("RW-0002").unwrap().centroid, None);
        assert_eq!(reg.get("RW-0003").unwrap().centroid, Some((30.6, -1.8)));
    }

    #[test]
    fn duplicate_village_is_named() {
        let villages = "village_id,name,district,province,aez_id,lon,lat\n\
            RW-0001,Alpha,Gasabo,Kigali,Z1,,\n\
            RW-0001,Alpha again,Gasabo,Kigali,Z1,,\n";
        let err = VillageRegistry::from_readers(villages.as_bytes(), AEZ.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("RW-0001"), "{err}");
    }

    #[test]
    fn unknown_zone_names_village_and_zone() {
        let villages = "village_id,name,district,province,aez_id,lon,lat\n\
            RW-0007,Alpha,Gasabo,Kigali,Z9,,\n";
        let err = VillageRegistry::from_readers(villages.as_bytes(), AEZ.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Z9") && msg.contains("RW-0007"), "{msg}");
    }

    #[test]
    fn half_centroid_rejected() {
        let villages = "village_id,name,district,province,aez_id,lon,lat\n\
            RW-0001,Alpha,Gasabo,Kigali,Z1,30.1,\n";
        assert!(VillageRegistry::from_readers(villages.as_bytes(), AEZ.as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let villages = "village_id,name,district,province,aez_id,lon,lat\n\
            RW-0002,Beta,Kayonza,East,Z2,,\n\
            RW-0001,Alpha,Gasabo,Kigali,Z1,30.1,-1.9\n";
        let reg = VillageRegistry::from_readers(villages.as_bytes(), AEZ.as_bytes()).unwrap();
        let (mut v, mut z) = (Vec::new(), Vec::new());
        reg.write_villages_csv(&mut v).unwrap();
        reg.write_zones_csv(&mut z).unwrap();
        let back = VillageRegistry::from_readers(v.as_slice(), z.as_slice()).unwrap();
        assert_eq!(back, reg);
        assert!(String::from_utf8(v)
            .unwrap()
            .starts_with("village_id,name,district,province,aez_id,lon,lat\nRW-0001"));
    }
}
