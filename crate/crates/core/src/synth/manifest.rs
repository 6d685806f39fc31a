//! JSON-lines dataset manifests and the provenance-disjoint split.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;



use super::{SampleRecord, Split};
use crate::error::{Error, Result};

pub fn write_manifest(records: &[SampleRecord], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::invalid(format!("manifest serialization: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Stable unit-interval hash of an id under a seed.
fn unit_hash(seed: u64, id: &str) -> f64 {
    splitmix64(seed ^ fnv1a(id)) as f64 / u64::MAX as f64
}

fn record_ids(r: &SampleRecord) -> Vec<&str> {
    let mut ids = vec![r.provenance.background_id.as_str()];
    if let Some(obj) = &r.provenance.object_id {
        ids.push(obj.as_str());
    }
    ids
}

/// Split counts after dropping records whose ids straddle the partition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSummary {
    pub train: usize,
    pub test: usize,
    pub dropped: usize,
}

/// Partition records so that no background id and no object id appears in
/// both splits. Every id is assigned independently by a seeded hash; records
/// with ids on both sides are dropped, not reassigned. The assignment
/// probability is calibrated over a few candidates so the realized test
/// fraction lands near `test_frac` despite the drops.
pub fn split_train_test(
    records: &mut Vec<SampleRecord>,
    test_frac: f64,
    seed: u64,
) -> Result<SplitSummary> {
    if !(0.0..1.0).contains(&test_frac) || test_frac == 0.0 {
        return Err(Error::invalid(format!(
            "test fraction {test_frac} outside (0, 1)"
        )));
    }
    let assign = |q: f64, r: &SampleRecord| -> Option<Split> {
        let tests: Vec<bool> = record_ids(r)
            .iter()
            .map(|id| unit_hash(seed, id) < q)
            .collect();
        if tests.iter().all(|&t| t) {
            Some(Split::Test)
        } else if tests.iter().all(|&t| !t) {
            Some(Split::Train)
        } else {
            None
        }
    };

    let mut best: Option<(f64, f64)> = None; // (|realized − target|, q)
    for mult in [1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0] {
        let q = (test_frac * mult).min(0.9);
        let (mut tr, mut te) = (0usize, 0usize);
        for r in records.iter() {
            match assign(q, r) {
                Some(Split::Train) => tr += 1,
                Some(Split::Test) => te += 1,
                None => {}
            }
        }
        if tr == 0 || te == 0 {
            continue;
        }
        let realized = te as f64 / (tr + te) as f64;
        let err = (realized - test_frac).abs();
        if best.map_or(true, |(be, _)| err < be) {
            best = Some((err, q));
        }
    }
    let Some((_, q)) = best else {
        return Err(Error::invalid(
            "split_train_test: corpus too small to satisfy a disjoint split",
        ));
    };

    let mut summary = SplitSummary {
        train: 0,
        test: 0,
        dropped: 0,
    };
    records.retain_mut(|r| match assign(q, r) {
        Some(split) => {
            r.split = split;
            match split {
                Split::Train => summary.train += 1,
                Split::Test => summary.test += 1,
            }
            true
        }
        None => {
            summary.dropped += 1;
            false
        }
    });
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{LabeledBox, Provenance, Technique};

    fn record(bg: &str, obj: Option<&str>) -> SampleRecord {
        SampleRecord {
            image: format!("images/{bg}.png"),
            mask: None,
            boxes: vec![],
            technique: Technique::Authentic,
            provenance: Provenance {
                object_id: obj.map(|s| s.to_string()),
                background_id: bg.to_string(),
            },
            split: Split::Train,
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = std::env::temp_dir().join("tamperlab_manifest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.jsonl");
        let mut records = vec![record("bg_a", Some("obj_1")), record("bg_b", None)];
        records[0].technique = Technique::Splice;
        records[0].boxes.push(LabeledBox {
            x1: 1,
            y1: 2,
            x2: 11,
            y2: 12,
            class: "splice".into(),
        });
        records[0].mask = Some("masks/m.png".into());
        write_manifest(&records, &path).unwrap();
        let loaded = read_manifest(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].boxes, records[0].boxes);
        assert_eq!(loaded[0].technique, Technique::Splice);
        assert_eq!(loaded[1].provenance.background_id, "bg_b");
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn empty_manifest_reads_empty() {
        let dir = std::env::temp_dir().join("tamperlab_manifest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.jsonl");
        write_manifest(&[], &path).unwrap();
        assert!(read_manifest(&path).unwrap().is_empty());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = std::env::temp_dir().join("tamperlab_manifest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        std::fs::write(&path, "{\"image\": \"x\"}\nnot json\n").unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("line 1") || err.to_string().contains("line 2"));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn split_keeps_ids_disjoint() {
        let mut records = Vec::new();
        for i in 0..100 {
            let bg = format!("bg_{i}");
            let obj = format!("obj_{}", (i * 7) % 60);
            let mut r = record(&bg, Some(&obj));
            r.technique = Technique::Splice;
            records.push(r);
        }
        let summary = split_train_test(&mut records, 0.1, 42).unwrap();
        assert_eq!(summary.train + summary.test, records.len());

        use std::collections::HashSet;
        let mut train_ids: HashSet<&str> = HashSet::new();
        let mut test_ids: HashSet<&str> = HashSet::new();
        for r in &records {
            let target = if r.split == Split::Train {
                &mut train_ids
            } else {
                &mut test_ids
            };
            target.insert(r.provenance.background_id.as_str());
            if let Some(obj) = &r.provenance.object_id {
                target.insert(obj.as_str());
            }
        }
        assert!(train_ids.is_disjoint(&test_ids));
    }

    #[test]
    fn split_fraction_lands_in_band() {
        let mut records = Vec::new();
        for i in 0..100 {
            records.push(record(&format!("bg_{i}"), Some(&format!("obj_{i}"))));
        }
        let summary = split_train_test(&mut records, 0.1, 7).unwrap();
        let frac = summary.test as f64 / (summary.train + summary.test) as f64;
        assert!((0.05..=0.2).contains(&frac), "test fraction {frac}");
    }
}
