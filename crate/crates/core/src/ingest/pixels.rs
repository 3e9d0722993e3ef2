//! Pixel-to-village zonal aggregation.
//!
//! Binary pixel files have the layout
//!
//! ```text
//! "YTPX" | version u8 = 0x01 | record count u64
//! | dictionary: id count u32, then per id (byte length u32, UTF-8 bytes)
//! | records: (village index u32, yield f32) * record count
//! ```
//!
//! All integers and floats are little-endian. Record indices refer to the
//! dictionary, which precedes the records.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::VillageRegistry;
use crate::error::{Error, Result};

pub const PIXEL_MAGIC: &[u8; 4] = b"YTPX";
pub const PIXEL_VERSION: u8 = 0x01;

const RECORD_BYTES: usize = 8;
const CHUNK_RECORDS: usize = 1 << 18;
const CHUNKS_PER_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelRecord {
    pub village_id: String,
    pub yield_value: f64,
}

/// Running (sum, count) with Neumaier compensation. Merging is associative
/// up to floating-point reassociation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZonalAccumulator {
    sum: f64,
    compensation: f64,
    count: u64,
}

impl ZonalAccumulator {
    #[inline]
    pub fn push(&mut self, value: f64) {
        self.add(value);
        self.count += 1;
    }

    #[inline]
    fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &ZonalAccumulator) {
        self.add(other.sum);
        self.compensation += other.compensation;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.compensation
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum() / self.count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZonalStat {
    pub mean: f64,
    pub count: u64,
}

/// Per-village pixel means plus a coverage report.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ZonalSummary {
    pub stats: BTreeMap<String, ZonalStat>,
    /// Records whose village id is not in the registry (skipped).
    pub unknown_records: u64,
    pub unknown_ids: BTreeSet<String>,
    /// Records with a non-finite or negative yield (skipped).
    pub invalid_records: u64,
    /// Registry villages that received no pixels.
    pub empty_villages: Vec<String>,
}

impl ZonalSummary {
    fn from_accumulators<'a>(
        registry: &VillageRegistry,
        accs: impl Iterator<Item = (&'a str, ZonalAccumulator)>,
        unknown_records: u64,
        unknown_ids: BTreeSet<String>,
        invalid_records: u64,
    ) -> Self {
        let stats: BTreeMap<String, ZonalStat> = accs
            .filter_map(|(id, acc)| {
                acc.mean().map(|mean| {
                    (
                        id.to_string(),
                        ZonalStat {
                            mean,
                            count: acc.count(),
                        },
                    )
                })
            })
            .collect();
        let empty_villages = registry
            .villages()
            .filter(|v| !stats.contains_key(&v.village_id))
            .map(|v| v.village_id.clone())
            .collect();
        Self {
            stats,
            unknown_records,
            unknown_ids,
            invalid_records,
            empty_villages,
        }
    }

    /// `village_id,mean_yield_kg_ha,pixel_count`
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["village_id", "mean_yield_kg_ha", "pixel_count"])
            .map_err(|e| Error::csv("pixel summary", e))?;
        for (id, s) in &self.stats {
            w.write_record([id.as_str(), &s.mean.to_string(), &s.count.to_string()])
                .map_err(|e| Error::csv("pixel summary", e))?;
        }
        w.flush().map_err(|e| Error::io("pixel summary", e))?;
        Ok(())
    }
}

fn valid_pixel(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

/// Single-pass zonal mean over an arbitrary record stream.
pub fn zonal_aggregate<I>(pixels: I, registry: &VillageRegistry) -> ZonalSummary
where
    I: IntoIterator<Item = PixelRecord>,
{
    let mut accs: BTreeMap<String, ZonalAccumulator> = registry
        .villages()
        .map(|v| (v.village_id.clone(), ZonalAccumulator::default()))
        .collect();
    let (mut unknown, mut invalid) = (0u64, 0u64);
    let mut unknown_ids = BTreeSet::new();
    for px in pixels {
        match accs.get_mut(&px.village_id) {
            None => {
                unknown += 1;
                unknown_ids.insert(px.village_id);
            }
            Some(_) if !valid_pixel(px.yield_value) => invalid += 1,
            Some(acc) => acc.push(px.yield_value),
        }
    }
    ZonalSummary::from_accumulators(
        registry,
        accs.iter().map(|(k, v)| (k.as_str(), *v)),
        unknown,
        unknown_ids,
        invalid,
    )
}

/// Reads the CSV alternative `village_id,yield_kg_ha`.
pub fn read_pixels_csv(input: impl Read) -> impl Iterator<Item = Result<PixelRecord>> {
    #[derive(Deserialize)]
    struct Row {
        village_id: String,
        yield_kg_ha: f64,
    }
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input)
        .into_deserialize::<Row>()
        .map(|r| {
            r.map(|row| PixelRecord {
                village_id: row.village_id,
                yield_value: row.yield_kg_ha,
            })
            .map_err(|e| Error::csv("pixels.csv", e))
        })
}

/// Header of a binary pixel file.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelHeader {
    pub record_count: u64,
    pub dictionary: Vec<String>,
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::PixelFormat(format!("truncated {what}: {e}")))
}

pub fn read_pixel_header<R: Read>(r: &mut R) -> Result<PixelHeader> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != PIXEL_MAGIC {
        return Err(Error::PixelFormat(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 1];
    read_exact(r, &mut version, "version")?;
    if version[0] != PIXEL_VERSION {
        return Err(Error::PixelFormat(format!("unsupported version {:#04x}", version[0])));
    }
    let mut u64buf = [0u8; 8];
    read_exact(r, &mut u64buf, "record count")?;
    let record_count = u64::from_le_bytes(u64buf);
    let mut u32buf = [0u8; 4];
    read_exact(r, &mut u32buf, "dictionary size")?;
    let n_ids = u32::from_le_bytes(u32buf) as usize;
    let mut dictionary = Vec::with_capacity(n_ids.min(1 << 20));
    for i in 0..n_ids {
        read_exact(r, &mut u32buf, "dictionary entry length")?;
        let len = u32::from_le_bytes(u32buf) as usize;
        let mut bytes = vec![0u8; len];
        read_exact(r, &mut bytes, "dictionary entry")?;
        let id =
            String::from_utf8(bytes).map_err(|_| Error::PixelFormat(format!("dictionary entry {i} is not UTF-8")))?;
        dictionary.push(id);
    }
    Ok(PixelHeader {
        record_count,
        dictionary,
    })
}

/// Writes a binary pixel file. Record indices must be valid dictionary slots.
pub fn write_pixels_binary<W: Write>(out: &mut W, dictionary: &[String], records: &[(u32, f32)]) -> Result<()> {
    let io = |e| Error::io("pixels", e);
    out.write_all(PIXEL_MAGIC).map_err(io)?;
    out.write_all(&[PIXEL_VERSION]).map_err(io)?;
    out.write_all(&(records.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&(dictionary.len() as u32).to_le_bytes()).map_err(io)?;
    for id in dictionary {
        out.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(id.as_bytes()).map_err(io)?;
    }
    let mut buf = Vec::with_capacity(records.len().min(CHUNK_RECORDS) * RECORD_BYTES);
    for chunk in records.chunks(CHUNK_RECORDS) {
        buf.clear();
        for &(idx, y) in chunk {
            if idx as usize >= dictionary.len() {
                return Err(Error::PixelFormat(format!("record index {idx} outside dictionary")));
            }
            buf.extend_from_slice(&idx.to_le_bytes());
            buf.extend_from_slice(&y.to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

#[derive(Default)]
struct ChunkPartial {
    accs: Vec<ZonalAccumulator>,
    unknown: u64,
    unknown_slots: BTreeSet<u32>,
    invalid: u64,
    bad_index: Option<u32>,
}

fn reduce_chunk(bytes: &[u8], slot_of: &[Option<usize>], slots: usize) -> ChunkPartial {
    let mut part = ChunkPartial {
        accs: vec![ZonalAccumulator::default(); slots],
        ..Default::default()
    };
    for rec in bytes.chunks_exact(RECORD_BYTES) {
        let idx = u32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]);
        let y = f32::from_le_bytes([rec[4], rec[5], rec[6], rec[7]]) as f64;
        match slot_of.get(idx as usize) {
            None => {
                part.bad_index.get_or_insert(idx);
            }
            Some(None) => {
                part.unknown += 1;
                part.unknown_slots.insert(idx);
            }
            Some(Some(_)) if !valid_pixel(y) => part.invalid += 1,
            Some(Some(slot)) => part.accs[*slot].push(y),
        }
    }
    part
}

/// Streams a binary pixel file and reduces it to village means.
///
/// Fixed-size chunks are reduced in parallel and merged in file order, so the
/// result does not depend on the thread count.
pub fn zonal_aggregate_binary<R: BufRead>(mut input: R, registry: &VillageRegistry) -> Result<ZonalSummary> {
    let header = read_pixel_header(&mut input)?;
    let village_ids: Vec<&str> = registry.villages().map(|v| v.village_id.as_str()).collect();
    let slot_index: BTreeMap<&str, usize> = village_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let slot_of: Vec<Option<usize>> = header
        .dictionary
        .iter()
        .map(|id| slot_index.get(id.as_str()).copied())
        .collect();
    let mut totals = vec![ZonalAccumulator::default(); village_ids.len()];
    let mut unknown_ids = BTreeSet::new();
    let (mut unknown, mut invalid) = (0u64, 0u64);
    let mut remaining = header.record_count;
    let mut batch = vec![0u8; CHUNK_RECORDS * CHUNKS_PER_BATCH * RECORD_BYTES];
    while remaining > 0 {
        let take = remaining.min((CHUNK_RECORDS * CHUNKS_PER_BATCH) as u64) as usize;
        let bytes = &mut batch[..take * RECORD_BYTES];
        read_exact(&mut input, bytes, "pixel records")?;
        let partials: Vec<ChunkPartial> = bytes
            .par_chunks(CHUNK_RECORDS * RECORD_BYTES)
            .map(|c| reduce_chunk(c, &slot_of, village_ids.len()))
            .collect();
        for part in partials {
            if let Some(idx) = part.bad_index {
                return Err(Error::PixelFormat(format!("record index {idx} outside dictionary")));
            }
            for (total, acc) in totals.iter_mut().zip(&part.accs) {
                total.merge(acc);
            }
            unknown += part.unknown;
            unknown_ids.extend(
                part.unknown_slots
                    .iter()
                    .map(|&i| header.dictionary[i as usize].clone()),
            );
            invalid += part.invalid;
        }
        remaining -= take as u64;
    }
    Ok(ZonalSummary::from_accumulators(
        registry,
        village_ids.into_iter().zip(totals),
        unknown,
        unknown_ids,
        invalid,
    ))
}
