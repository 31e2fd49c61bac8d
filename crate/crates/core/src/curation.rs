//! Dataset generation: manifest ingestion, time-of-day histograms,
//! round-robin stratified sampling, balanced/augmented training manifests,
//! and the crop-retention criterion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::{CaptureKind, CropWindow};
use crate::record::{AnnotationRecord, BoundingBox, Label};
use crate::{Error, Result};

pub const MANIFEST_COLUMNS: [&str; 10] = [
    "image_id",
    "site_id",
    "timestamp_unix",
    "capture_kind",
    "label",
    "box_x",
    "box_y",
    "box_w",
    "box_h",
    "class_name",
];

pub const ANIMAL_BIN_MINUTES: u32 = 15;
pub const NO_ANIMAL_BIN_MINUTES: u32 = 3;
pub const MIN_RETENTION: f64 = 0.90;

const SECONDS_PER_DAY: i64 = 86_400;

/// Seconds since local midnight for a UTC timestamp and a fixed offset.
pub fn seconds_of_day(timestamp: i64, utc_offset_minutes: i32) -> u32 {
    (timestamp + utc_offset_minutes as i64 * 60).rem_euclid(SECONDS_PER_DAY) as u32
}

/// Local calendar date for a UTC timestamp and a fixed offset.
pub fn local_date(timestamp: i64, utc_offset_minutes: i32) -> NaiveDate {
    let days = (timestamp + utc_offset_minutes as i64 * 60).div_euclid(SECONDS_PER_DAY);
    NaiveDate::from_ymd_opt(1970, 1, 1)
        .and_then(|epoch| epoch.checked_add_signed(chrono::Duration::days(days)))
        .expect("timestamp within chrono's date range")
}

// ---------------------------------------------------------------------------
// Manifest I/O

pub fn ingest_manifest(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(file, &path.display().to_string())
}

/// Parses manifest CSV. One row per box; NoAnimal images have a single row
/// with empty box fields. Rows of the same image are grouped in order of
/// first appearance.
pub fn parse_manifest<R: Read>(reader: R, source: &str) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = HashMap::new();
    for name in MANIFEST_COLUMNS {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Manifest {
                path: source.to_string(),
                line: 1,
                field: name.to_string(),
                message: "missing column in header".into(),
            })?;
        col.insert(name, idx);
    }

    let mut records: Vec<AnnotationRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let err = |field: &str, message: String| Error::Manifest {
            path: source.to_string(),
            line,
            field: field.to_string(),
            message,
        };
        let get = |name: &str| row.get(col[name]).unwrap_or("");

        let image_id = get("image_id").to_string();
        if image_id.is_empty() {
            return Err(err("image_id", "empty".into()));
        }
        let site_id = get("site_id").to_string();
        if site_id.is_empty() {
            return Err(err("site_id", "empty".into()));
        }
        let timestamp: i64 = get("timestamp_unix")
            .parse()
            .map_err(|e| err("timestamp_unix", format!("{e}")))?;
        if timestamp <= 0 {
            return Err(err("timestamp_unix", "must be positive".into()));
        }
        let capture_kind: CaptureKind = get("capture_kind")
            .parse()
            .map_err(|e: Error| err("capture_kind", e.to_string()))?;
        let label: Label = get("label")
            .parse()
            .map_err(|e: Error| err("label", e.to_string()))?;

        let box_fields = ["box_x", "box_y", "box_w", "box_h"];
        let filled = box_fields.iter().filter(|f| !get(f).is_empty()).count();
        let bbox = match filled {
            0 => None,
            4 => {
                let mut v = [0.0f64; 4];
                for (slot, f) in v.iter_mut().zip(box_fields) {
                    *slot = get(f).parse().map_err(|e| err(f, format!("{e}")))?;
                }
                let b = BoundingBox::new(v[0], v[1], v[2], v[3]).with_class(get("class_name"));
                if b.w <= 0.0 {
                    return Err(err("box_w", format!("must be positive, got {}", b.w)));
                }
                if b.h <= 0.0 {
                    return Err(err("box_h", format!("must be positive, got {}", b.h)));
                }
                if b.x < 0.0 {
                    return Err(err("box_x", format!("must be non-negative, got {}", b.x)));
                }
                if b.y < 0.0 {
                    return Err(err("box_y", format!("must be non-negative, got {}", b.y)));
                }
                Some(b)
            }
            _ => {
                return Err(err(
                    "box_x",
                    "box fields must be all set or all empty".into(),
                ))
            }
        };

        match label {
            Label::Animal if bbox.is_none() => {
                return Err(err("label", "Animal row without a bounding box".into()))
            }
            Label::NoAnimal if bbox.is_some() => {
                return Err(err("label", "NoAnimal row with a bounding box".into()))
            }
            _ => {}
        }

        if let Some(&i) = index.get(&image_id) {
            let rec = &mut records[i];
            if rec.site_id != site_id {
                return Err(err(
                    "site_id",
                    format!("conflicts with earlier row ({})", rec.site_id),
                ));
            }
            if rec.timestamp != timestamp {
                return Err(err("timestamp_unix", "conflicts with earlier row".into()));
            }
            if rec.capture_kind != capture_kind {
                return Err(err("capture_kind", "conflicts with earlier row".into()));
            }
            if rec.label != label {
                return Err(err("label", "conflicts with earlier row".into()));
            }
            match bbox {
                Some(b) => rec.boxes.push(b),
                None => return Err(err("image_id", "duplicate NoAnimal row".into())),
            }
        } else {
            index.insert(image_id.clone(), records.len());
            records.push(AnnotationRecord {
                image_id,
                site_id,
                timestamp,
                capture_kind,
                label,
                boxes: bbox.into_iter().collect(),
            });
        }
    }
    Ok(records)
}

fn record_rows(rec: &AnnotationRecord) -> Vec<Vec<String>> {
    let head = vec![
        rec.image_id.clone(),
        rec.site_id.clone(),
        rec.timestamp.to_string(),
        rec.capture_kind.to_string(),
        rec.label.to_string(),
    ];
    if rec.boxes.is_empty() {
        let mut row = head;
        row.extend(std::iter::repeat_n(String::new(), 5));
        return vec![row];
    }
    rec.boxes
        .iter()
        .map(|b| {
            let mut row = head.clone();
            row.extend([
                b.x.to_string(),
                b.y.to_string(),
                b.w.to_string(),
                b.h.to_string(),
                b.class_name.clone(),
            ]);
            row
        })
        .collect()
}

pub fn write_manifest<W: Write>(records: &[AnnotationRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MANIFEST_COLUMNS)?;
    for rec in records {
        for row in record_rows(rec) {
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<manifest>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Temporal histograms and stratified sampling

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalHistogram {
    pub bin_minutes: u32,
    /// Bin index → image ids, ids in input order.
    pub bins: BTreeMap<u32, Vec<String>>,
}

impl TemporalHistogram {
    pub fn total(&self) -> usize {
        self.bins.values().map(Vec::len).sum()
    }

    pub fn bin_of(seconds_of_day: u32, bin_minutes: u32) -> u32 {
        seconds_of_day / (60 * bin_minutes)
    }
}

/// Buckets `(image_id, timestamp)` pairs by local time of day.
pub fn temporal_histogram<'a, I>(
    items: I,
    bin_minutes: u32,
    utc_offset_minutes: i32,
) -> Result<TemporalHistogram>
where
    I: IntoIterator<Item = (&'a str, i64)>,
{
    if bin_minutes == 0 || 1440 % bin_minutes != 0 {
        return Err(Error::invalid(format!(
            "bin width {bin_minutes} min does not divide a day"
        )));
    }
    let mut bins: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (id, ts) in items {
        let bin = TemporalHistogram::bin_of(seconds_of_day(ts, utc_offset_minutes), bin_minutes);
        bins.entry(bin).or_default().push(id.to_string());
    }
    Ok(TemporalHistogram { bin_minutes, bins })
}

pub fn record_histogram<'a, I>(
    records: I,
    bin_minutes: u32,
    utc_offset_minutes: i32,
) -> Result<TemporalHistogram>
where
    I: IntoIterator<Item = &'a AnnotationRecord>,
{
    temporal_histogram(
        records
            .into_iter()
            .map(|r| (r.image_id.as_str(), r.timestamp)),
        bin_minutes,
        utc_offset_minutes,
    )
}

/// Round-robin over non-empty bins in ascending order, one uniform draw
/// without replacement per bin per pass, until `n` ids or exhaustion.
pub fn stratified_sample_with<R: Rng + ?Sized>(
    hist: &TemporalHistogram,
    n: usize,
    rng: &mut R,
) -> Vec<String> {
    let mut queues: Vec<Vec<&String>> = hist
        .bins
        .values()
        .filter(|ids| !ids.is_empty())
        .map(|ids| {
            let mut q: Vec<&String> = ids.iter().collect();
            q.sort();
            q.shuffle(rng);
            q
        })
        .collect();
    let target = n.min(hist.total());
    let mut out = Vec::with_capacity(target);
    let mut cursor = vec![0usize; queues.len()];
    while out.len() < target {
        for (q, c) in queues.iter_mut().zip(cursor.iter_mut()) {
            if out.len() == target {
                break;
            }
            if let Some(id) = q.get(*c) {
                out.push((*id).clone());
                *c += 1;
            }
        }
    }
    out
}

pub fn stratified_sample(hist: &TemporalHistogram, n: usize, seed: u64) -> Vec<String> {
    stratified_sample_with(hist, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

// ---------------------------------------------------------------------------
// Training sets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    None,
    Hflip,
}

impl Transform {
    pub fn as_str(&self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Hflip => "hflip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSetConfig {
    pub flip_augment: bool,
    pub balance: bool,
    /// Sample through time-of-day histograms; off draws from a single bin.
    pub time_sampling: bool,
    pub animal_bin_minutes: u32,
    pub no_animal_bin_minutes: u32,
    pub utc_offset_minutes: i32,
    /// Fraction of sampled source images per class held out as `test`.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainingSetConfig {
    fn default() -> Self {
        TrainingSetConfig {
            flip_augment: true,
            balance: true,
            time_sampling: true,
            animal_bin_minutes: ANIMAL_BIN_MINUTES,
            no_animal_bin_minutes: NO_ANIMAL_BIN_MINUTES,
            utc_offset_minutes: 0,
            holdout_fraction: 0.0,
            seed: 0,
        }
    }
}

impl TrainingSetConfig {
    /// Night datasets: no cropping-driven augmentation or time sampling.
    pub fn night() -> Self {
        TrainingSetConfig {
            flip_augment: false,
            time_sampling: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub record: AnnotationRecord,
    pub transform: Transform,
    pub split: Split,
}

/// Training-set manifest. Boxes of `hflip` entries are in source-frame
/// coordinates; consumers flip them together with the pixels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl TrainingSetManifest {
    pub fn count(&self, label: Label) -> usize {
        self.entries
            .iter()
            .filter(|e| e.record.label == label)
            .count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = MANIFEST_COLUMNS.to_vec();
        header.extend(["transform", "split"]);
        w.write_record(&header)?;
        for e in &self.entries {
            for mut row in record_rows(&e.record) {
                row.push(e.transform.as_str().to_string());
                row.push(e.split.as_str().to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()
            .map_err(|err| Error::io("<training manifest>", err))?;
        Ok(())
    }
}

fn sample_records<'a, R: Rng>(
    pool: &[&'a AnnotationRecord],
    bin_minutes: u32,
    cfg: &TrainingSetConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<&'a AnnotationRecord>> {
    let hist = if cfg.time_sampling {
        record_histogram(pool.iter().copied(), bin_minutes, cfg.utc_offset_minutes)?
    } else {
        TemporalHistogram {
            bin_minutes: 1440,
            bins: BTreeMap::from([(0, pool.iter().map(|r| r.image_id.clone()).collect())]),
        }
    };
    let by_id: HashMap<&str, &AnnotationRecord> =
        pool.iter().map(|r| (r.image_id.as_str(), *r)).collect();
    Ok(stratified_sample_with(&hist, n, rng)
        .iter()
        .map(|id| by_id[id.as_str()])
        .collect())
}

/// Balanced, time-representative training manifest for one site.
///
/// Animal images are drawn from the 15-minute histogram and optionally
/// flip-augmented; NoAnimal images come from the 3-minute histogram,
/// diagnostic frames first, motion frames only to fill a shortfall.
pub fn build_training_set(
    records: &[AnnotationRecord],
    cfg: &TrainingSetConfig,
) -> Result<TrainingSetManifest> {
    let sites: BTreeSet<&str> = records.iter().map(|r| r.site_id.as_str()).collect();
    if sites.len() > 1 {
        return Err(Error::invalid(format!(
            "training set must come from one site, got {}",
            sites.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::invalid("holdout fraction must be in [0, 1)"));
    }
    let animals: Vec<&AnnotationRecord> = records
        .iter()
        .filter(|r| r.label == Label::Animal)
        .collect();
    let empties: Vec<&AnnotationRecord> = records
        .iter()
        .filter(|r| r.label == Label::NoAnimal)
        .collect();
    let mult = if cfg.flip_augment { 2 } else { 1 };

    let (k_animal, k_empty) = if cfg.balance {
        if animals.is_empty() {
            return Err(Error::CannotBalance("Animal".into()));
        }
        if empties.is_empty() {
            return Err(Error::CannotBalance("NoAnimal".into()));
        }
        let k = animals.len().min(empties.len() / mult);
        if k == 0 {
            return Err(Error::CannotBalance("NoAnimal".into()));
        }
        (k, k * mult)
    } else {
        (animals.len(), empties.len())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chosen_animals = sample_records(&animals, cfg.animal_bin_minutes, cfg, k_animal, &mut rng)?;

    let (diag, motion): (Vec<_>, Vec<_>) = empties
        .iter()
        .partition(|r| r.capture_kind == CaptureKind::Diagnostic);
    let mut chosen_empties =
        sample_records(&diag, cfg.no_animal_bin_minutes, cfg, k_empty, &mut rng)?;
    if chosen_empties.len() < k_empty {
        let rest = k_empty - chosen_empties.len();
        chosen_empties.extend(sample_records(
            &motion,
            cfg.no_animal_bin_minutes,
            cfg,
            rest,
            &mut rng,
        )?);
    }

    let held_out = |ids: &[&AnnotationRecord], rng: &mut ChaCha8Rng| -> BTreeSet<String> {
        let k = (ids.len() as f64 * cfg.holdout_fraction).round() as usize;
        let mut v: Vec<&String> = ids.iter().map(|r| &r.image_id).collect();
        v.sort();
        v.shuffle(rng);
        v.into_iter().take(k).cloned().collect()
    };
    let test_animals = held_out(&chosen_animals, &mut rng);
    let test_empties = held_out(&chosen_empties, &mut rng);
    let split_of = |set: &BTreeSet<String>, id: &str| {
        if set.contains(id) {
            Split::Test
        } else {
            Split::Train
        }
    };

    let mut entries = Vec::with_capacity(k_animal * mult + k_empty);
    for r in chosen_animals {
        let split = split_of(&test_animals, &r.image_id);
        entries.push(ManifestEntry {
            record: r.clone(),
            transform: Transform::None,
            split,
        });
        if cfg.flip_augment {
            entries.push(ManifestEntry {
                record: r.clone(),
                transform: Transform::Hflip,
                split,
            });
        }
    }
    for r in chosen_empties {
        entries.push(ManifestEntry {
            record: r.clone(),
            transform: Transform::None,
            split: split_of(&test_empties, &r.image_id),
        });
    }
    Ok(TrainingSetManifest { entries })
}

// ---------------------------------------------------------------------------
// Crop retention

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetentionMode {
    /// Box center strictly inside the window.
    #[default]
    Center,
    /// Whole box inside the window.
    Containment,
}

/// Fraction of boxes the crop window keeps.
pub fn retention_rate(
    boxes: &[BoundingBox],
    window: &CropWindow,
    mode: RetentionMode,
) -> Result<f64> {
    if boxes.is_empty() {
        return Err(Error::invalid("retention rate needs at least one box"));
    }
    let kept = boxes
        .iter()
        .filter(|b| match mode {
            RetentionMode::Center => {
                let (cx, cy) = b.center();
                window.contains_point(cx, cy)
            }
            RetentionMode::Containment => window.contains_box(b),
        })
        .count();
    Ok(kept as f64 / boxes.len() as f64)
}

pub fn passes_retention(rate: f64) -> bool {
    rate >= MIN_RETENTION
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str =
        "image_id,site_id,timestamp_unix,capture_kind,label,box_x,box_y,box_w,box_h,class_name\n";

    fn rec(id: &str, ts: i64, label: Label, kind: CaptureKind) -> AnnotationRecord {
        AnnotationRecord {
            image_id: id.into(),
            site_id: "s1".into(),
            timestamp: ts,
            capture_kind: kind,
            label,
            boxes: if label == Label::Animal {
                vec![BoundingBox::new(10.0, 10.0, 5.0, 5.0).with_class("bird")]
            } else {
                vec![]
            },
        }
    }

    #[test]
    fn header_only_manifest_is_empty() {
        assert!(parse_manifest(HEADER.as_bytes(), "m").unwrap().is_empty());
    }

    #[test]
    fn zero_width_box_is_reported_with_its_line() {
        let text = format!(
            "{HEADER}a,s1,100,motion,Animal,1,2,3,4,bird\nb,s1,100,motion,Animal,1,2,0,4,bird\n"
        );
        match parse_manifest(text.as_bytes(), "m") {
            Err(Error::Manifest { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "box_w");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn animal_without_box_is_rejected() {
        let text = format!("{HEADER}a,s1,100,motion,Animal,,,,,\n");
        assert!(matches!(
            parse_manifest(text.as_bytes(), "m"),
            Err(Error::Manifest { line: 2, .. })
        ));
    }

    #[test]
    fn three_row_fixture_round_trips() {
        let text = format!(
            "{HEADER}img1,s1,1562000000,motion,Animal,100.5,200,50,40,bird\n\
             img1,s1,1562000000,motion,Animal,300,220,60,45,mammal\n\
             img2,s1,1562000600,diagnostic,NoAnimal,,,,,\n"
        );
        let recs = parse_manifest(text.as_bytes(), "m").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].boxes.len(), 2);
        assert_eq!(
            recs[0].boxes[0],
            BoundingBox::new(100.5, 200.0, 50.0, 40.0).with_class("bird")
        );
        assert_eq!(recs[0].boxes[1].class_name, "mammal");
        assert_eq!(recs[1].capture_kind, CaptureKind::Diagnostic);
        assert_eq!(recs[1].label, Label::NoAnimal);
        assert_eq!(recs[1].timestamp, 1562000600);

        let mut out = Vec::new();
        write_manifest(&recs, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn histogram_bin_boundaries() {
        let h = temporal_histogram(
            [("a", 86_400), ("b", 86_400 + 900), ("c", 86_400 + 899)],
            15,
            0,
        )
        .unwrap();
        assert_eq!(h.bins[&0], vec!["a".to_string(), "c".to_string()]);
        assert_eq!(h.bins[&1], vec!["b".to_string()]);
        assert!(temporal_histogram([("a", 1)], 7, 0).is_err());
    }

    #[test]
    fn histogram_respects_utc_offset() {
        // 23:00 UTC is local midnight at UTC+01:00
        let h = temporal_histogram([("a", 86_400 - 3600)], 15, 60).unwrap();
        assert_eq!(h.bins.keys().copied().collect::<Vec<_>>(), vec![0]);
        assert_eq!(
            local_date(86_400 - 3600, 60),
            NaiveDate::from_ymd_opt(1970, 1, 2).unwrap()
        );
        assert_eq!(
            local_date(86_400 - 3600, 0),
            NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()
        );
    }

    #[test]
    fn histogram_matches_floor_division_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let ts: Vec<(String, i64)> = (0..1000)
            .map(|i| {
                (
                    format!("i{i}"),
                    rng.gen_range(1_500_000_000i64..1_600_000_000),
                )
            })
            .collect();
        for (bin, off) in [(15u32, 0i32), (3, -300), (60, 330)] {
            let h = temporal_histogram(ts.iter().map(|(i, t)| (i.as_str(), *t)), bin, off).unwrap();
            let mut oracle: BTreeMap<u32, usize> = BTreeMap::new();
            for (_, t) in &ts {
                let local = t + off as i64 * 60;
                let sod = local - (local / 86_400) * 86_400;
                *oracle.entry((sod / (60 * bin as i64)) as u32).or_default() += 1;
            }
            let got: BTreeMap<u32, usize> = h.bins.iter().map(|(k, v)| (*k, v.len())).collect();
            assert_eq!(got, oracle);
            assert_eq!(h.total(), 1000);
        }
    }

    fn hist(bins: &[(u32, &[&str])]) -> TemporalHistogram {
        TemporalHistogram {
            bin_minutes: 3,
            bins: bins
                .iter()
                .map(|(k, ids)| (*k, ids.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }

    #[test]
    fn stratified_round_robin_examples() {
        let one = hist(&[(4, &["a", "b", "c", "d", "e"])]);
        let mut all = stratified_sample(&one, 5, 1);
        all.sort();
        assert_eq!(all, vec!["a", "b", "c", "d", "e"]);

        let two = hist(&[(0, &["a1", "a2"]), (1, &["b1", "b2"])]);
        let s = stratified_sample(&two, 2, 9);
        assert!(s[0].starts_with('a') && s[1].starts_with('b'));

        // {5, 0, 3} with quota 4 -> two from each non-empty bin
        let three = hist(&[
            (0, &["a", "b", "c", "d", "e"]),
            (1, &[]),
            (2, &["x", "y", "z"]),
        ]);
        let s = stratified_sample(&three, 4, 3);
        let from_first = s.iter().filter(|id| "abcde".contains(id.as_str())).count();
        assert_eq!((from_first, s.len()), (2, 4));

        assert_eq!(stratified_sample(&three, 4, 3), s);
        assert_eq!(stratified_sample(&three, 100, 3).len(), 8);
    }

    proptest! {
        #[test]
        fn stratified_sample_is_a_duplicate_free_subset(
            sizes in proptest::collection::vec(0usize..6, 1..6),
            n in 0usize..30,
            seed in any::<u64>(),
        ) {
            let mut bins = BTreeMap::new();
            let mut all = BTreeSet::new();
            for (b, &k) in sizes.iter().enumerate() {
                let ids: Vec<String> = (0..k).map(|i| format!("{b}-{i}")).collect();
                all.extend(ids.iter().cloned());
                bins.insert(b as u32, ids);
            }
            let h = TemporalHistogram { bin_minutes: 15, bins };
            let s = stratified_sample(&h, n, seed);
            let uniq: BTreeSet<_> = s.iter().cloned().collect();
            prop_assert_eq!(uniq.len(), s.len());
            prop_assert!(uniq.is_subset(&all));
            prop_assert_eq!(s.len(), n.min(all.len()));
        }
    }

    fn site_records(n_animal: usize, n_empty: usize, n_diag: usize) -> Vec<AnnotationRecord> {
        let mut v = Vec::new();
        for i in 0..n_animal {
            v.push(rec(
                &format!("a{i}"),
                1_562_000_000 + 97 * i as i64,
                Label::Animal,
                CaptureKind::Motion,
            ));
        }
        for i in 0..n_empty {
            let kind = if i < n_diag {
                CaptureKind::Diagnostic
            } else {
                CaptureKind::Motion
            };
            v.push(rec(
                &format!("e{i}"),
                1_562_000_000 + 61 * i as i64,
                Label::NoAnimal,
                kind,
            ));
        }
        v
    }

    #[test]
    fn balanced_flipped_training_set() {
        let recs = site_records(10, 100, 30);
        let m = build_training_set(&recs, &TrainingSetConfig::default()).unwrap();
        assert_eq!(m.count(Label::Animal), 20);
        assert_eq!(m.count(Label::NoAnimal), 20);
        let flips = m
            .entries
            .iter()
            .filter(|e| e.transform == Transform::Hflip)
            .count();
        assert_eq!(flips, 10);
        // 30 diagnostic frames cover the 20 NoAnimal slots
        assert!(m
            .entries
            .iter()
            .filter(|e| e.record.label == Label::NoAnimal)
            .all(|e| e.record.capture_kind == CaptureKind::Diagnostic));
    }

    #[test]
    fn diagnostic_shortfall_falls_back_to_motion() {
        let recs = site_records(10, 100, 5);
        let m = build_training_set(&recs, &TrainingSetConfig::default()).unwrap();
        let diag = m
            .entries
            .iter()
            .filter(|e| e.record.capture_kind == CaptureKind::Diagnostic)
            .count();
        assert_eq!(diag, 5);
        assert_eq!(m.count(Label::NoAnimal), 20);
    }

    #[test]
    fn night_config_gives_exact_parity() {
        // site 1 of the night-time set: 46 Animal / 46 No-Animal
        let recs = site_records(46, 400, 0);
        let m = build_training_set(&recs, &TrainingSetConfig::night()).unwrap();
        assert_eq!((m.count(Label::Animal), m.count(Label::NoAnimal)), (46, 46));
    }

    #[test]
    fn identity_config_lists_everything_once() {
        let recs = site_records(3, 7, 2);
        let cfg = TrainingSetConfig {
            flip_augment: false,
            balance: false,
            ..TrainingSetConfig::default()
        };
        let m = build_training_set(&recs, &cfg).unwrap();
        assert_eq!(m.entries.len(), 10);
        assert!(m.entries.iter().all(|e| e.transform == Transform::None));
        let ids: BTreeSet<_> = m
            .entries
            .iter()
            .map(|e| e.record.image_id.clone())
            .collect();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn empty_class_cannot_balance() {
        let recs = site_records(0, 5, 0);
        assert!(matches!(
            build_training_set(&recs, &TrainingSetConfig::default()),
            Err(Error::CannotBalance(_))
        ));
    }

    #[test]
    fn holdout_marks_whole_source_images() {
        let recs = site_records(20, 100, 100);
        let cfg = TrainingSetConfig {
            holdout_fraction: 0.25,
            ..TrainingSetConfig::default()
        };
        let m = build_training_set(&recs, &cfg).unwrap();
        let test: Vec<_> = m
            .entries
            .iter()
            .filter(|e| e.split == Split::Test)
            .collect();
        // 5 of 20 animal sources (x2 with flips) and 10 of 40 NoAnimal
        assert_eq!(test.len(), 20);
        let mut out = Vec::new();
        m.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("image_id,site_id,timestamp_unix,capture_kind,label,box_x,box_y,box_w,box_h,class_name,transform,split\n"));
        assert_eq!(text.lines().count(), 1 + m.entries.len());
    }

    proptest! {
        #[test]
        fn balance_and_flip_invariants(na in 1usize..15, ne in 2usize..40, nd in 0usize..40, seed in any::<u64>(), flip in any::<bool>()) {
            let recs = site_records(na, ne, nd.min(ne));
            let cfg = TrainingSetConfig { flip_augment: flip, seed, ..TrainingSetConfig::default() };
            let m = build_training_set(&recs, &cfg).unwrap();
            prop_assert_eq!(m.count(Label::Animal), m.count(Label::NoAnimal));
            let flips = m.entries.iter().filter(|e| e.transform == Transform::Hflip).count();
            let originals = m.entries.iter().filter(|e| e.record.label == Label::Animal && e.transform == Transform::None).count();
            prop_assert_eq!(flips, if flip { originals } else { 0 });
            prop_assert!(m.entries.iter().filter(|e| e.record.label == Label::NoAnimal).all(|e| e.transform == Transform::None));
        }
    }

    #[test]
    fn retention_examples() {
        let window = CropWindow {
            origin_x: 0,
            origin_y: 0,
            size: 100,
        };
        let mut boxes: Vec<BoundingBox> = (0..9)
            .map(|i| BoundingBox::new(10.0 * i as f64, 10.0, 4.0, 4.0))
            .collect();
        boxes.push(BoundingBox::new(150.0, 10.0, 4.0, 4.0));
        assert!(
            (retention_rate(&boxes, &window, RetentionMode::Center).unwrap() - 0.9).abs() < 1e-12
        );
        assert!(passes_retention(0.9));

        // 9% loss passes, 11% does not
        let mut b91: Vec<_> = (0..91)
            .map(|_| BoundingBox::new(40.0, 40.0, 20.0, 20.0))
            .collect();
        b91.extend((0..9).map(|_| BoundingBox::new(500.0, 500.0, 20.0, 20.0)));
        let r = retention_rate(&b91, &window, RetentionMode::Center).unwrap();
        assert!((r - 0.91).abs() < 1e-12 && passes_retention(r));
        assert!(!passes_retention(0.89));

        let centered = vec![BoundingBox::new(45.0, 45.0, 10.0, 10.0); 4];
        assert_eq!(
            retention_rate(&centered, &window, RetentionMode::Center).unwrap(),
            1.0
        );
        assert!(retention_rate(&[], &window, RetentionMode::Center).is_err());

        // straddling box: center inside, not contained
        let edge = [BoundingBox::new(90.0, 40.0, 16.0, 10.0)];
        assert_eq!(
            retention_rate(&edge, &window, RetentionMode::Center).unwrap(),
            1.0
        );
        assert_eq!(
            retention_rate(&edge, &window, RetentionMode::Containment).unwrap(),
            0.0
        );
    }
}
