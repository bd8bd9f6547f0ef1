//! File formats: feature and raw-record JSON Lines, the packed binary
//! feature cache, model documents and CSV traces.
//!
//! Feature vectors are stored as `f32`. Reading widens them to `f64`
//! exactly, so loading then re-writing a feature file reproduces it byte for
//! byte.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cvfr::{CvfrDocument, CvfrModel};
use crate::error::{ensure_dims, Error, Result};
use crate::inference::{FeatureRecord, QuerySet, UNIT_NORM_TOLERANCE};
use crate::synth::RawRecord;
use crate::vcc::{VccDocument, VccModel};
use crate::viewpoint::Viewpoint;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureLine {
    record_id: String,
    vehicle_id: String,
    camera_id: String,
    viewpoint: Viewpoint,
    appearance: Vec<f32>,
    viewpoint_feature: Vec<f32>,
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| f64::from(*x)).collect()
}

/// Round every entry to `f32` precision, as a feature file would.
pub fn quantize(v: &[f64]) -> Vec<f64> {
    widen(&narrow(v))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: format!("line {line}: {message}"),
    }
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_error(path, n + 1, e))?);
    }
    Ok(out)
}

pub fn features_to_jsonl(records: &[FeatureRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let line = FeatureLine {
            record_id: r.record_id.clone(),
            vehicle_id: r.vehicle_id.clone(),
            camera_id: r.camera_id.clone(),
            viewpoint: r.viewpoint,
            appearance: narrow(&r.appearance),
            viewpoint_feature: narrow(&r.viewpoint_feature),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_features(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    write_text(path, &features_to_jsonl(records)?)
}

/// Check constant dimensions and unit norms.
pub fn validate_features(records: &[FeatureRecord], tolerance: f64) -> Result<()> {
    let Some(first) = records.first() else {
        return Ok(());
    };
    for r in records {
        ensure_dims(first.appearance.len(), r.appearance.len(), "appearance feature")?;
        ensure_dims(
            first.viewpoint_feature.len(),
            r.viewpoint_feature.len(),
            "viewpoint feature",
        )?;
        r.validate(tolerance)?;
    }
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let lines: Vec<FeatureLine> = read_lines(path)?;
    let records: Vec<FeatureRecord> = lines
        .into_iter()
        .map(|l| FeatureRecord {
            record_id: l.record_id,
            vehicle_id: l.vehicle_id,
            camera_id: l.camera_id,
            viewpoint: l.viewpoint,
            appearance: widen(&l.appearance),
            viewpoint_feature: widen(&l.viewpoint_feature),
        })
        .collect();
    validate_features(&records, UNIT_NORM_TOLERANCE).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(records)
}

pub fn raw_to_jsonl(records: &[RawRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_raw(path: &Path, records: &[RawRecord]) -> Result<()> {
    write_text(path, &raw_to_jsonl(records)?)
}

pub fn read_raw(path: &Path) -> Result<Vec<RawRecord>> {
    let records: Vec<RawRecord> = read_lines(path)?;
    if let Some(first) = records.first() {
        for (n, r) in records.iter().enumerate() {
            if r.input.len() != first.input.len() {
                return Err(parse_error(path, n + 1, "input dimension differs from line 1"));
            }
            if r.input.iter().any(|x| !x.is_finite()) {
                return Err(parse_error(path, n + 1, "non-finite input"));
            }
        }
    }
    Ok(records)
}

/// Group query records into one set per vehicle, in first-appearance order.
pub fn group_query_sets(records: &[FeatureRecord]) -> Result<Vec<QuerySet>> {
    let mut groups: Vec<(String, Vec<FeatureRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(v, _)| *v == r.vehicle_id) {
            Some((_, g)) => g.push(r.clone()),
            None => groups.push((r.vehicle_id.clone(), vec![r.clone()])),
        }
    }
    groups.into_iter().map(|(_, g)| QuerySet::new(g)).collect()
}

pub const CACHE_MAGIC: &[u8; 5] = b"MURF1";

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::invalid(format!("token too long for the binary cache: {s:.40}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Packed little-endian form of a feature file:
/// magic, record count, both dims (u32 each), then per record three
/// length-prefixed UTF-8 tokens, a viewpoint byte and the f32 features.
pub fn features_to_cache(records: &[FeatureRecord]) -> Result<Vec<u8>> {
    let (da, dv) = records
        .first()
        .map_or((0, 0), |r| (r.appearance.len(), r.viewpoint_feature.len()));
    let mut out = Vec::with_capacity(16 + records.len() * (4 * (da + dv) + 32));
    out.extend_from_slice(CACHE_MAGIC);
    for n in [records.len(), da, dv] {
        let n = u32::try_from(n).map_err(|_| Error::invalid("feature cache too large"))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    for r in records {
        ensure_dims(da, r.appearance.len(), "appearance feature")?;
        ensure_dims(dv, r.viewpoint_feature.len(), "viewpoint feature")?;
        put_str(&mut out, &r.record_id)?;
        put_str(&mut out, &r.vehicle_id)?;
        put_str(&mut out, &r.camera_id)?;
        out.push(r.viewpoint.index() as u8);
        for x in r.appearance.iter().chain(&r.viewpoint_feature) {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::invalid("feature cache truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let b = self.take(2)?;
        let len = u16::from_le_bytes([b[0], b[1]]) as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::invalid("feature cache token is not UTF-8"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(4 * n)?;
        Ok(b.chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }
}

pub fn features_from_cache(bytes: &[u8]) -> Result<Vec<FeatureRecord>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(CACHE_MAGIC.len())? != CACHE_MAGIC {
        return Err(Error::invalid("not a feature cache (bad magic)"));
    }
    let (n, da, dv) = (c.u32()?, c.u32()?, c.u32()?);
    let mut records = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let record_id = c.string()?;
        let vehicle_id = c.string()?;
        let camera_id = c.string()?;
        let view = c.take(1)?[0] as usize;
        let viewpoint = Viewpoint::from_index(view)
            .ok_or_else(|| Error::invalid(format!("bad viewpoint byte {view}")))?;
        records.push(FeatureRecord {
            record_id,
            vehicle_id,
            camera_id,
            viewpoint,
            appearance: c.floats(da)?,
            viewpoint_feature: c.floats(dv)?,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::invalid("trailing bytes after feature cache"));
    }
    validate_features(&records, UNIT_NORM_TOLERANCE)?;
    Ok(records)
}

pub fn write_cache(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let bytes = features_to_cache(records)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<Vec<FeatureRecord>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    features_from_cache(&bytes).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Load a feature file in either format, chosen by content.
pub fn load_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let mut head = [0u8; 5];
    let is_cache = fs::File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?
        == 5
        && &head == CACHE_MAGIC;
    if is_cache {
        read_cache(path)
    } else {
        read_features(path)
    }
}

fn model_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Model(format!("{}: {e}", path.display()))
}

pub fn vcc_to_json(model: &VccModel) -> Result<String> {
    Ok(serde_json::to_string(&model.to_document())? + "\n")
}

pub fn cvfr_to_json(model: &CvfrModel) -> Result<String> {
    Ok(serde_json::to_string(&model.to_document())? + "\n")
}

pub fn save_vcc(path: &Path, model: &VccModel) -> Result<()> {
    write_text(path, &vcc_to_json(model)?)
}

pub fn load_vcc(path: &Path) -> Result<VccModel> {
    let text = read_text(path)?;
    let doc: VccDocument = serde_json::from_str(&text).map_err(|e| model_error(path, e))?;
    VccModel::from_document(&doc).map_err(|e| model_error(path, e))
}

pub fn save_cvfr(path: &Path, model: &CvfrModel) -> Result<()> {
    write_text(path, &cvfr_to_json(model)?)
}

pub fn load_cvfr(path: &Path) -> Result<CvfrModel> {
    let text = read_text(path)?;
    let doc: CvfrDocument = serde_json::from_str(&text).map_err(|e| model_error(path, e))?;
    CvfrModel::from_document(&doc).map_err(|e| model_error(path, e))
}

/// CSV with a header row from the field names of `rows`' JSON form.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let value = serde_json::to_value(row)?;
        let serde_json::Value::Object(map) = value else {
            return Err(Error::invalid("CSV rows must serialize as objects"));
        };
        if i == 0 {
            out.push_str(&map.keys().cloned().collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        let cells: Vec<String> = map
            .values()
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::vector::l2_normalize;
    use crate::nn::SeededRng;

    fn records(n: usize, seed: u64) -> Vec<FeatureRecord> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|i| FeatureRecord {
                record_id: format!("r{i:04}"),
                vehicle_id: format!("v{}", i % 4),
                camera_id: format!("c{}", i % 7),
                viewpoint: Viewpoint::ALL[i % 3],
                appearance: quantize(&l2_normalize(&rng.normal_vec(8, 1.0)).unwrap()),
                viewpoint_feature: quantize(&l2_normalize(&rng.normal_vec(3, 1.0)).unwrap()),
            })
            .collect()
    }

    #[test]
    fn jsonl_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        let recs = records(20, 1);
        write_features(&path, &recs).unwrap();
        let first = fs::read(&path).unwrap();
        let loaded = read_features(&path).unwrap();
        assert_eq!(loaded, recs);
        write_features(&path, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
        let line = String::from_utf8(first).unwrap();
        assert!(line.starts_with(
            r#"{"record_id":"r0000","vehicle_id":"v0","camera_id":"c0","viewpoint":"front","appearance":["#
        ));
    }

    #[test]
    fn cache_round_trips_against_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let recs = records(25, 2);
        let (j, b) = (dir.path().join("f.jsonl"), dir.path().join("f.murf"));
        write_features(&j, &recs).unwrap();
        write_cache(&b, &recs).unwrap();
        assert_eq!(load_features(&j).unwrap(), load_features(&b).unwrap());
        let bytes = fs::read(&b).unwrap();
        assert_eq!(&bytes[..5], b"MURF1");
        assert_eq!(&bytes[5..9], &25u32.to_le_bytes());
        assert!(features_from_cache(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(features_from_cache(&bad).is_err());
    }

    #[test]
    fn non_unit_features_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        let mut recs = records(3, 3);
        recs[1].appearance[0] += 0.01;
        write_features(&path, &recs).unwrap();
        assert!(matches!(read_features(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        let mut text = features_to_jsonl(&records(2, 4)).unwrap();
        text.push_str("{\"record_id\": 3}\n");
        fs::write(&path, text).unwrap();
        let err = read_features(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn query_grouping() {
        let recs = records(6, 5);
        // v0: r0000 (front), r0004 (side); v1: r0001 (side), r0005 (rear)
        let sets = group_query_sets(&recs).unwrap();
        assert_eq!(sets.len(), 4);
        assert_eq!(sets[0].vehicle_id, "v0");
        assert_eq!(sets[0].records.len(), 2);
        assert_eq!(sets[0].missing, vec![Viewpoint::Rear]);
    }

    #[test]
    fn csv_rows() {
        #[derive(Serialize)]
        struct Row {
            epoch: usize,
            loss: f64,
        }
        let csv = to_csv(&[Row { epoch: 0, loss: 1.5 }, Row { epoch: 1, loss: 0.25 }]).unwrap();
        assert_eq!(csv, "epoch,loss\n0,1.5\n1,0.25\n");
    }
}
