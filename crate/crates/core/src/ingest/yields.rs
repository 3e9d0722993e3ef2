use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::VillageRegistry;
use crate::error::{Error, Result};

/// One of the two maize seasons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Season {
    A,
    B,
}

impl Season {
    pub fn as_char(self) -> char {
        match self {
            Season::A => 'A',
            Season::B => 'B',
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Mean village yield and maize area for one season.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalObservation {
    pub village_id: String,
    pub year: i32,
    pub season: Season,
    pub yield_mean: f64,
    pub maize_area: f64,
    pub preliminary: bool,
}

impl SeasonalObservation {
    fn validate(&self) -> Result<()> {
        let ctx = || format!("observation {}/{}/{}", self.village_id, self.year, self.season);
        if !self.yield_mean.is_finite() || self.yield_mean < 0.0 {
            return Err(Error::validation(
                ctx(),
                format!("yield {} must be finite and >= 0", self.yield_mean),
            ));
        }
        if !self.maize_area.is_finite() || self.maize_area < 0.0 {
            return Err(Error::validation(
                ctx(),
                format!("maize area {} must be finite and >= 0", self.maize_area),
            ));
        }
        Ok(())
    }
}

/// Annual (area-weighted) village yield.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnualPoint {
    pub year: i32,
    pub yield_kg_ha: f64,
    /// Total maize area over the contributing seasons.
    pub area_ha: f64,
    pub preliminary: bool,
    pub seasons: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnualYieldSeries {
    pub village_id: String,
    /// Strictly increasing years.
    pub points: Vec<AnnualPoint>,
}

impl AnnualYieldSeries {
    pub fn point(&self, year: i32) -> Option<&AnnualPoint> {
        self.points
            .binary_search_by_key(&year, |p| p.year)
            .ok()
            .map(|i| &self.points[i])
    }
}

/// Combines the seasons of one village-year into an annual point.
///
/// Two seasons: area-weighted mean, undefined when both areas are zero.
/// One season: that season's yield, whatever its area.
pub fn combine_seasons(village_id: &str, year: i32, seasons: &[&SeasonalObservation]) -> Result<AnnualPoint> {
    let preliminary = seasons.iter().any(|s| s.preliminary);
    match seasons {
        [] => Err(Error::validation(
            format!("village {village_id:?} year {year}"),
            "no seasons to aggregate",
        )),
        [only] => Ok(AnnualPoint {
            year,
            yield_kg_ha: only.yield_mean,
            area_ha: only.maize_area,
            preliminary,
            seasons: 1,
        }),
        many => {
            let area: f64 = many.iter().map(|s| s.maize_area).sum();
            if area <= 0.0 {
                return Err(Error::UndefinedAnnual {
                    village: village_id.to_string(),
                    year,
                });
            }
            let weighted: f64 = many.iter().map(|s| s.yield_mean * s.maize_area).sum();
            let lo = many.iter().map(|s| s.yield_mean).fold(f64::INFINITY, f64::min);
            let hi = many.iter().map(|s| s.yield_mean).fold(f64::NEG_INFINITY, f64::max);
            Ok(AnnualPoint {
                year,
                // rounding can push the quotient a hair outside the season range
                yield_kg_ha: (weighted / area).clamp(lo, hi),
                area_ha: area,
                preliminary,
                seasons: many.len() as u8,
            })
        }
    }
}

/// Area-weighted annual yield for every village observed in `year`.
pub fn aggregate_annual(observations: &[SeasonalObservation], year: i32) -> Result<BTreeMap<String, AnnualPoint>> {
    let mut by_village: BTreeMap<&str, Vec<&SeasonalObservation>> = BTreeMap::new();
    for obs in observations.iter().filter(|o| o.year == year) {
        obs.validate()?;
        by_village.entry(obs.village_id.as_str()).or_default().push(obs);
    }
    by_village
        .into_iter()
        .map(|(id, seasons)| Ok((id.to_string(), combine_seasons(id, year, &seasons)?)))
        .collect()
}

/// Village-years that needed special handling while building annual series.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QualityReport {
    /// Non-preliminary village-years with a single season.
    pub single_season: Vec<(String, i32)>,
    /// Two-season village-years with zero total area, excluded.
    pub zero_area_excluded: Vec<(String, i32)>,
    /// Registry villages without any annual point.
    pub villages_without_data: Vec<String>,
}

/// Annual yield series for every village with data, in id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnualTable {
    series: BTreeMap<String, AnnualYieldSeries>,
}

impl AnnualTable {
    /// Validates observations against the registry and aggregates them.
    pub fn build(observations: &[SeasonalObservation], registry: &VillageRegistry) -> Result<(Self, QualityReport)> {
        let mut grouped: BTreeMap<(&str, i32), Vec<&SeasonalObservation>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for obs in observations {
            obs.validate()?;
            if !registry.contains(&obs.village_id) {
                return Err(Error::UnknownVillage(obs.village_id.clone()));
            }
            if !seen.insert((obs.village_id.as_str(), obs.year, obs.season)) {
                return Err(Error::DuplicateObservation {
                    village: obs.village_id.clone(),
                    year: obs.year,
                    season: obs.season.as_char(),
                });
            }
            grouped
                .entry((obs.village_id.as_str(), obs.year))
                .or_default()
                .push(obs);
        }

        let mut report = QualityReport::default();
        let mut series: BTreeMap<String, AnnualYieldSeries> = BTreeMap::new();
        for ((id, year), seasons) in grouped {
            match combine_seasons(id, year, &seasons) {
                Ok(point) => {
                    if point.seasons == 1 && !point.preliminary {
                        report.single_season.push((id.to_string(), year));
                    }
                    series
                        .entry(id.to_string())
                        .or_insert_with(|| AnnualYieldSeries {
                            village_id: id.to_string(),
                            points: Vec::new(),
                        })
                        .points
                        .push(point);
                }
                Err(Error::UndefinedAnnual { .. }) => {
                    report.zero_area_excluded.push((id.to_string(), year));
                }
                Err(e) => return Err(e),
            }
        }
        report.villages_without_data = registry
            .villages()
            .filter(|v| !series.contains_key(&v.village_id))
            .map(|v| v.village_id.clone())
            .collect();
        Ok((Self { series }, report))
    }

    pub fn from_series(series: impl IntoIterator<Item = AnnualYieldSeries>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for mut s in series {
            s.points.sort_by_key(|p| p.year);
            if s.points.windows(2).any(|w| w[0].year == w[1].year) {
                return Err(Error::validation(
                    format!("series {:?}", s.village_id),
                    "duplicate year",
                ));
            }
            if map.contains_key(&s.village_id) {
                return Err(Error::DuplicateVillage(s.village_id));
            }
            map.insert(s.village_id.clone(), s);
        }
        Ok(Self { series: map })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn get(&self, village_id: &str) -> Option<&AnnualYieldSeries> {
        self.series.get(village_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AnnualYieldSeries> {
        self.series.values()
    }

    /// Every year with at least one village observation, ascending.
    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self
            .series
            .values()
            .flat_map(|s| s.points.iter().map(|p| p.year))
            .collect();
        set.into_iter().collect()
    }

    /// `(village_id, point)` for villages observed in `year`.
    pub fn year_points(&self, year: i32) -> impl Iterator<Item = (&str, &AnnualPoint)> {
        self.series
            .values()
            .filter_map(move |s| s.point(year).map(|p| (s.village_id.as_str(), p)))
    }

    pub fn is_preliminary_year(&self, year: i32) -> bool {
        self.year_points(year).any(|(_, p)| p.preliminary)
    }

    /// Copy with every yield multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for s in out.series.values_mut() {
            for p in &mut s.points {
                p.yield_kg_ha *= factor;
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct YieldRow {
    village_id: String,
    year: i32,
    season: Season,
    yield_kg_ha: f64,
    maize_area_ha: f64,
    preliminary: u8,
}

pub fn read_observations(input: impl Read) -> Result<Vec<SeasonalObservation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize::<YieldRow>() {
        let row = row.map_err(|e| Error::csv("yields.csv", e))?;
        let preliminary = match row.preliminary {
            0 => false,
            1 => true,
            other => {
                return Err(Error::validation(
                    format!("observation {}/{}/{}", row.village_id, row.year, row.season),
                    format!("preliminary must be 0 or 1, got {other}"),
                ))
            }
        };
        out.push(SeasonalObservation {
            village_id: row.village_id,
            year: row.year,
            season: row.season,
            yield_mean: row.yield_kg_ha,
            maize_area: row.maize_area_ha,
            preliminary,
        });
    }
    Ok(out)
}

pub fn load_observations(path: &Path) -> Result<Vec<SeasonalObservation>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_observations(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        other => other,
    })
}

/// Writes observations sorted by (village, year, season).
pub fn write_observations(observations: &[SeasonalObservation], out: impl Write) -> Result<()> {
    let mut sorted: Vec<&SeasonalObservation> = observations.iter().collect();
    sorted.sort_by(|a, b| (&a.village_id, a.year, a.season).cmp(&(&b.village_id, b.year, b.season)));
    let mut w = csv::Writer::from_writer(out);
    for o in sorted {
        w.serialize(YieldRow {
            village_id: o.village_id.clone(),
            year: o.year,
            season: o.season,
            yield_kg_ha: o.yield_mean,
            maize_area_ha: o.maize_area,
            preliminary: o.preliminary as u8,
        })
        .map_err(|e| Error::csv("yields.csv", e))?;
    }
    w.flush().map_err(|e| Error::io("yields.csv", e))?;
    Ok(())
}
