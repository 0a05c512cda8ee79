//! On-disk formats: JSONL records, the packed binary record container, and
//! the campaign truth table CSV.
//!
//! Binary container layout (all little-endian): magic `PSTW`, version byte,
//! `u32` record count, then per record: length-prefixed device id, `u64` seq,
//! `f64` timestamp, `i32` trigger position (−1 when absent), `u16` per-channel
//! sample count, the channel-1 then channel-2 `u16` samples, and an optional
//! truth block.

use std::io::Write as _;
use std::path::Path;

use crate::dropsim::{EventTruth, Scenario, SpeciesClass, TruthLabel};
use crate::firmware::WaveformRecord;
use crate::{Error, Result};

pub const RECORD_MAGIC: &[u8; 4] = b"PSTW";
pub const RECORD_VERSION: u8 = 1;

/// Serialize records as one JSON object per line.
pub fn records_to_jsonl(records: &[WaveformRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records_jsonl(path: &Path, records: &[WaveformRecord]) -> Result<()> {
    Ok(std::fs::write(path, records_to_jsonl(records)?)?)
}

pub fn read_records_jsonl(path: &Path) -> Result<Vec<WaveformRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: WaveformRecord = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), ln + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

fn species_code(s: Option<SpeciesClass>) -> u8 {
    match s {
        Some(SpeciesClass::Sz) => 0,
        Some(SpeciesClass::Rd) => 1,
        Some(SpeciesClass::Tc) => 2,
        Some(SpeciesClass::Os) => 3,
        Some(SpeciesClass::Cp) => 4,
        Some(SpeciesClass::BlackSphere) => 5,
        Some(SpeciesClass::Debris) => 6,
        None => 255,
    }
}

fn species_from_code(code: u8) -> Result<Option<SpeciesClass>> {
    Ok(match code {
        0 => Some(SpeciesClass::Sz),
        1 => Some(SpeciesClass::Rd),
        2 => Some(SpeciesClass::Tc),
        3 => Some(SpeciesClass::Os),
        4 => Some(SpeciesClass::Cp),
        5 => Some(SpeciesClass::BlackSphere),
        6 => Some(SpeciesClass::Debris),
        255 => None,
        other => return Err(Error::Data(format!("unknown species code {other}"))),
    })
}

fn scenario_code(s: Option<Scenario>) -> u8 {
    match s {
        Some(sc) => Scenario::ALL.iter().position(|x| *x == sc).unwrap() as u8,
        None => 255,
    }
}

fn scenario_from_code(code: u8) -> Result<Option<Scenario>> {
    match code {
        255 => Ok(None),
        c if (c as usize) < Scenario::ALL.len() => Ok(Some(Scenario::ALL[c as usize])),
        other => Err(Error::Data(format!("unknown scenario code {other}"))),
    }
}

/// Encode records into the packed binary container.
pub fn records_to_binary(records: &[WaveformRecord]) -> Result<Vec<u8>> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(RECORD_MAGIC);
    buf.push(RECORD_VERSION);
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for rec in records {
        if rec.ch1.len() != rec.ch2.len() {
            return Err(Error::Data(format!("record {} has uneven channels", rec.record_id())));
        }
        let id = rec.device_id.as_bytes();
        buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&rec.seq.to_le_bytes());
        buf.extend_from_slice(&rec.timestamp.to_le_bytes());
        let tp: i32 = rec.trigger_pos.map_or(-1, |p| p as i32);
        buf.extend_from_slice(&tp.to_le_bytes());
        buf.extend_from_slice(&(rec.ch1.len() as u16).to_le_bytes());
        for &c in rec.ch1.iter().chain(rec.ch2.iter()) {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        match &rec.truth {
            None => buf.push(0),
            Some(t) => {
                buf.push(1);
                buf.push(species_code(t.species));
                buf.extend_from_slice(&t.count.to_le_bytes());
                buf.push(scenario_code(t.scenario));
                buf.push(t.reference as u8);
            }
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Data("truncated binary record file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decode a packed binary container.
pub fn records_from_binary(data: &[u8]) -> Result<Vec<WaveformRecord>> {
    let mut cur = Cursor { data, pos: 0 };
    if cur.take(4)? != RECORD_MAGIC {
        return Err(Error::Data("bad magic: not a packed record file".into()));
    }
    let version = cur.u8()?;
    if version != RECORD_VERSION {
        return Err(Error::Data(format!("unsupported record container version {version}")));
    }
    let n = cur.u32()? as usize;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let id_len = cur.u16()? as usize;
        let device_id = String::from_utf8(cur.take(id_len)?.to_vec())
            .map_err(|e| Error::Data(format!("device id not utf-8: {e}")))?;
        let seq = cur.u64()?;
        let timestamp = cur.f64()?;
        let tp = cur.i32()?;
        let samples = cur.u16()? as usize;
        let mut ch1 = Vec::with_capacity(samples);
        let mut ch2 = Vec::with_capacity(samples);
        for _ in 0..samples {
            ch1.push(cur.u16()?);
        }
        for _ in 0..samples {
            ch2.push(cur.u16()?);
        }
        let truth = match cur.u8()? {
            0 => None,
            1 => {
                let species = species_from_code(cur.u8()?)?;
                let count = cur.u32()?;
                let scenario = scenario_from_code(cur.u8()?)?;
                let reference = cur.u8()? != 0;
                Some(TruthLabel { species, count, scenario, reference })
            }
            other => return Err(Error::Data(format!("bad truth flag {other}"))),
        };
        records.push(WaveformRecord {
            device_id,
            seq,
            timestamp,
            trigger_pos: if tp < 0 { None } else { Some(tp as usize) },
            ch1,
            ch2,
            truth,
        });
    }
    Ok(records)
}

pub fn write_records_binary(path: &Path, records: &[WaveformRecord]) -> Result<()> {
    let buf = records_to_binary(records)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_records_binary(path: &Path) -> Result<Vec<WaveformRecord>> {
    records_from_binary(&std::fs::read(path)?)
}

/// Truth table CSV: one row per generated event, record ids joined by `;`.
pub fn truth_to_csv(truth: &[EventTruth]) -> String {
    let mut out = String::from("event_id,device_id,scenario,species,count,record_ids\n");
    for t in truth {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.event_id,
            t.device_id,
            t.scenario.as_str(),
            t.species.map_or("none", |s| s.as_str()),
            t.count,
            t.record_ids.join(";")
        ));
    }
    out
}

pub fn write_truth_csv(path: &Path, truth: &[EventTruth]) -> Result<()> {
    Ok(std::fs::write(path, truth_to_csv(truth))?)
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<EventTruth>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Data(format!(
                "{}:{}: expected 6 fields, got {}",
                path.display(),
                ln + 1,
                fields.len()
            )));
        }
        let scenario = Scenario::ALL
            .iter()
            .copied()
            .find(|s| s.as_str() == fields[2])
            .ok_or_else(|| Error::Data(format!("unknown scenario {:?}", fields[2])))?;
        let species = match fields[3] {
            "none" => None,
            name => Some(
                [
                    SpeciesClass::Sz,
                    SpeciesClass::Rd,
                    SpeciesClass::Tc,
                    SpeciesClass::Os,
                    SpeciesClass::Cp,
                    SpeciesClass::BlackSphere,
                    SpeciesClass::Debris,
                ]
                .into_iter()
                .find(|s| s.as_str() == name)
                .ok_or_else(|| Error::Data(format!("unknown species {name:?}")))?,
            ),
        };
        rows.push(EventTruth {
            event_id: fields[0].parse().map_err(|e| Error::Data(format!("event_id: {e}")))?,
            device_id: fields[1].to_string(),
            scenario,
            species,
            count: fields[4].parse().map_err(|e| Error::Data(format!("count: {e}")))?,
            record_ids: if fields[5].is_empty() {
                Vec::new()
            } else {
                fields[5].split(';').map(str::to_string).collect()
            },
        });
    }
    Ok(rows)
}
