//! Dataset construction: synthetic document rendering, balanced rotation
//! assignment, JSONL manifests, and stratified splits.
//!
//! The synthetic generator stands in for real scanned documents. It renders
//! pages whose orientation is recoverable from layout cues alone:
//! left-aligned rows of glyph blobs with ragged right edges (breaks the
//! ±90° symmetry), descender marks below the baseline plus a top margin
//! sampled smaller than the bottom margin and an optional header bar
//! (breaks the 180° symmetry). Every sample derives its stream from
//! `(seed, id)`, so parallel and serial generation produce identical
//! corpora.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, ImageBuffer, ImagingError, RotationClass};
use crate::metrics::REQUIRED_FIELDS;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {source}")]
    MalformedLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error("manifest line {line}: image file not found: {path}")]
    MissingImageFile { line: usize, path: String },
    #[error("manifest line {line}: duplicate id \"{id}\"")]
    DuplicateId { line: usize, id: String },
    #[error("manifest line {line}: fields map must have exactly the keys {expected:?}, got {got:?}")]
    WrongFieldKeys {
        line: usize,
        expected: [&'static str; 4],
        got: Vec<String>,
    },
    #[error("duplicate upright id \"{0}\"")]
    DuplicateUprightId(String),
    #[error("canvas {w}x{h} too small for one text line")]
    CanvasTooSmall { w: u32, h: u32 },
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("invalid split fractions: train {train} + val {val} must be positive and sum below 1")]
    InvalidSplit { train: f64, val: f64 },
}

/// One benchmark item: a stored (possibly rotated) image, its rotation
/// label, and optional OCR ground truth. `image_path` is relative to the
/// directory containing the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image_path: String,
    pub rotation_class: RotationClass,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<BTreeMap<String, String>>,
}

/// Resolve and decode a record's image relative to the corpus directory.
pub fn load_image(base_dir: &Path, record: &SampleRecord) -> Result<ImageBuffer, DataError> {
    Ok(ImageBuffer::from_path(&base_dir.join(&record.image_path))?)
}

/// Knobs of the synthetic page renderer. All ranges are inclusive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub canvas_w: (u32, u32),
    pub canvas_h: (u32, u32),
    pub margin_top: (u32, u32),
    pub margin_bottom: (u32, u32),
    pub line_height: (u32, u32),
    pub line_gap: (u32, u32),
    pub glyph_width: (u32, u32),
    pub descender_prob: f64,
    pub header_prob: f64,
    pub noise_amplitude: u8,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            // Tall receipt-like pages; the planner maps these to small grids.
            canvas_w: (150, 210),
            canvas_h: (320, 400),
            margin_top: (8, 16),
            margin_bottom: (30, 48),
            line_height: (10, 16),
            line_gap: (4, 8),
            glyph_width: (5, 13),
            descender_prob: 0.35,
            header_prob: 0.5,
            noise_amplitude: 6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let ranges = [
            ("canvas_w", self.canvas_w),
            ("canvas_h", self.canvas_h),
            ("margin_top", self.margin_top),
            ("margin_bottom", self.margin_bottom),
            ("line_height", self.line_height),
            ("line_gap", self.line_gap),
            ("glyph_width", self.glyph_width),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(DataError::InvalidConfig(format!("{name} range {lo}..={hi} is empty")));
            }
        }
        if self.margin_top.1 >= self.margin_bottom.0 {
            return Err(DataError::InvalidConfig(
                "margin_top range must stay below margin_bottom range".into(),
            ));
        }
        if !(self.descender_prob > 0.0 && self.descender_prob < 1.0) {
            return Err(DataError::InvalidConfig(
                "descender_prob must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.header_prob) {
            return Err(DataError::InvalidConfig("header_prob must lie in [0, 1]".into()));
        }
        if self.line_height.0 < 2 || self.glyph_width.0 < 1 {
            return Err(DataError::InvalidConfig(
                "line_height must be at least 2 and glyph_width at least 1".into(),
            ));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng, range: (u32, u32)) -> u32 {
        rng.gen_range(range.0..=range.1)
    }
}

/// Render one upright synthetic page. Same `(sample_seed, cfg)` always
/// yields a byte-identical image.
pub fn synth_document(sample_seed: u64, cfg: &SynthConfig) -> Result<ImageBuffer, DataError> {
    cfg.validate()?;
    let mut rng = crate::rng::derive(sample_seed, "synth-doc");
    let w = cfg.sample(&mut rng, cfg.canvas_w);
    let h = cfg.sample(&mut rng, cfg.canvas_h);
    let top = cfg.sample(&mut rng, cfg.margin_top);
    let bottom = cfg.sample(&mut rng, cfg.margin_bottom);
    if top + cfg.line_height.0 + bottom > h {
        return Err(DataError::CanvasTooSmall { w, h });
    }
    let left = 7 + rng.gen_range(0..=3);
    if left + cfg.glyph_width.0 + 6 >= w {
        return Err(DataError::CanvasTooSmall { w, h });
    }

    let mut page = ImageBuffer::white(w, h);
    let fill_rect = |page: &mut ImageBuffer, r0: u32, r1: u32, c0: u32, c1: u32, shade: u8| {
        for r in r0..r1.min(h) {
            for c in c0..c1.min(w) {
                page.set_pixel(r, c, [shade, shade, shade]);
            }
        }
    };

    let mut y = top;
    if rng.gen_bool(cfg.header_prob) {
        let bar_h = rng.gen_range(4..=7);
        let shade = rng.gen_range(70..110) as u8;
        fill_rect(&mut page, y, y + bar_h, left, w - 6, shade);
        y += bar_h + cfg.sample(&mut rng, cfg.line_gap);
    }

    let descender_allowance = 3;
    loop {
        let lh = cfg.sample(&mut rng, cfg.line_height);
        if y + lh + bottom > h {
            break;
        }
        // ragged right edge: this line stops somewhere short of the margin
        let usable = (w - left - 6) as f64;
        let limit = left + (usable * rng.gen_range(0.55..0.95)) as u32;
        let mut x = left;
        let mut blobs: Vec<(u32, u32)> = Vec::new();
        loop {
            let gw = cfg.sample(&mut rng, cfg.glyph_width);
            if x + gw > limit {
                break;
            }
            let shade = rng.gen_range(30..90) as u8;
            fill_rect(&mut page, y, y + lh, x, x + gw, shade);
            blobs.push((x, gw));
            x += gw + rng.gen_range(2..=5);
        }
        if !blobs.is_empty() && rng.gen_bool(cfg.descender_prob) {
            let (bx, bw) = blobs[rng.gen_range(0..blobs.len())];
            let dw = (bw / 2).max(2);
            let dh = rng.gen_range(2..=descender_allowance);
            if y + lh + dh + 1 < h {
                let shade = rng.gen_range(30..90) as u8;
                fill_rect(&mut page, y + lh, y + lh + dh, bx + bw / 4, bx + bw / 4 + dw, shade);
            }
        }
        y += lh + descender_allowance + cfg.sample(&mut rng, cfg.line_gap);
    }

    if cfg.noise_amplitude > 0 {
        let amp = i32::from(cfg.noise_amplitude);
        for r in 0..h {
            for c in 0..w {
                let delta = rng.gen_range(-amp..=amp);
                let px = page.pixel(r, c);
                let v = (i32::from(px[0]) + delta).clamp(0, 255) as u8;
                page.set_pixel(r, c, [v, v, v]);
            }
        }
    }
    Ok(page)
}

/// Deterministic pseudo-text and the four receipt fields for a sample; the
/// field values are embedded verbatim in the text, so an exact OCR pass
/// scores 100% field accuracy.
pub fn synth_ground_truth(
    seed: u64,
    id: &str,
) -> (String, BTreeMap<String, String>) {
    let mut rng = crate::rng::derive(seed, &format!("synth-text/{id}"));
    let word = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
        let n = rng.gen_range(3..=8);
        (0..n)
            .map(|_| (b'a' + rng.gen_range(0..26)) as char)
            .collect()
    };
    let company = format!("{} {}", word(&mut rng), word(&mut rng));
    let date = format!(
        "20{:02}-{:02}-{:02}",
        rng.gen_range(20..27),
        rng.gen_range(1..=12),
        rng.gen_range(1..=28)
    );
    let address = format!("{} {} {}", rng.gen_range(1..200), word(&mut rng), word(&mut rng));
    let total = format!("{}.{:02}", rng.gen_range(1..500), rng.gen_range(0..100));
    let mut text = format!("{company} {date} {address} total {total}");
    while text.chars().count() < 60 {
        text.push(' ');
        text.push_str(&word(&mut rng));
    }
    let fields = [
        ("company", company),
        ("date", date),
        ("address", address),
        ("total", total),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    (text, fields)
}

/// Assign rotation classes round-robin over a seeded shuffle (class counts
/// differ by at most one), physically rotate each upright, and write the
/// rotated PNGs under `corpus_dir/images/`.
pub fn make_rotation_dataset(
    uprights: &[(String, ImageBuffer)],
    seed: u64,
    corpus_dir: &Path,
    language: &str,
) -> Result<Vec<SampleRecord>, DataError> {
    let mut seen = HashSet::new();
    for (id, _) in uprights {
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateUprightId(id.clone()));
        }
    }
    let images_dir = corpus_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|source| DataError::Io {
        path: images_dir.display().to_string(),
        source,
    })?;

    let mut order: Vec<usize> = (0..uprights.len()).collect();
    order.shuffle(&mut crate::rng::derive(seed, "rotation-assign"));

    let mut records = vec![None; uprights.len()];
    for (pos, &idx) in order.iter().enumerate() {
        let (id, upright) = &uprights[idx];
        let cls = RotationClass::from_label((pos % 4) as u8).expect("mod 4");
        let rotated = imaging::apply_rotation_class(upright, cls);
        let rel_path = format!("images/{id}.png");
        rotated.save_png(&corpus_dir.join(&rel_path))?;
        records[idx] = Some(SampleRecord {
            id: id.clone(),
            image_path: rel_path,
            rotation_class: cls,
            language: language.to_string(),
            gt_text: None,
            fields: None,
        });
    }
    Ok(records.into_iter().map(|r| r.expect("filled")).collect())
}

/// Generate a complete corpus: synthetic uprights, balanced rotations,
/// ground-truth text and fields, and `manifest.jsonl`, all under `out_dir`.
pub fn generate_corpus(
    count: usize,
    seed: u64,
    cfg: &SynthConfig,
    language: &str,
    out_dir: &Path,
) -> Result<Vec<SampleRecord>, DataError> {
    let mut uprights = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("{language}-{i:05}");
        let sample_seed = crate::rng::derive(seed, &format!("sample/{id}")).gen::<u64>();
        uprights.push((id, synth_document(sample_seed, cfg)?));
    }
    let mut records = make_rotation_dataset(&uprights, seed, out_dir, language)?;
    for record in &mut records {
        let (text, fields) = synth_ground_truth(seed, &record.id);
        record.gt_text = Some(text);
        record.fields = Some(fields);
    }
    write_manifest(&records, &out_dir.join("manifest.jsonl"))?;
    Ok(records)
}

fn validate_fields(
    line: usize,
    fields: &Option<BTreeMap<String, String>>,
) -> Result<(), DataError> {
    if let Some(map) = fields {
        let got: BTreeSet<&str> = map.keys().map(String::as_str).collect();
        let expected: BTreeSet<&str> = REQUIRED_FIELDS.into_iter().collect();
        if got != expected {
            return Err(DataError::WrongFieldKeys {
                line,
                expected: REQUIRED_FIELDS,
                got: map.keys().cloned().collect(),
            });
        }
    }
    Ok(())
}

/// Parse and validate a JSONL manifest. Image paths are checked for
/// existence relative to the manifest's directory; failures report the
/// 1-based line number.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(line)
            .map_err(|source| DataError::MalformedLine { line: line_no, source })?;
        if !ids.insert(record.id.clone()) {
            return Err(DataError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        validate_fields(line_no, &record.fields)?;
        let image = base.join(&record.image_path);
        if !image.is_file() {
            return Err(DataError::MissingImageFile {
                line: line_no,
                path: image.display().to_string(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Write records as one JSON object per line.
pub fn write_manifest(records: &[SampleRecord], path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Stratified split by `(rotation_class, language)`: within each stratum a
/// seeded shuffle, then `floor(n*train_frac)` / `floor(n*val_frac)` / rest.
/// A stratum with fewer records than partitions goes entirely to train.
pub fn split(
    records: &[SampleRecord],
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>, Vec<SampleRecord>), DataError> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(DataError::InvalidSplit {
            train: train_frac,
            val: val_frac,
        });
    }
    let mut strata: BTreeMap<(u8, String), Vec<&SampleRecord>> = BTreeMap::new();
    for record in records {
        strata
            .entry((record.rotation_class.label(), record.language.clone()))
            .or_default()
            .push(record);
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for ((label, language), mut stratum) in strata {
        let mut rng = crate::rng::derive(seed, &format!("split/{label}/{language}"));
        stratum.shuffle(&mut rng);
        let n = stratum.len();
        if n < 3 {
            log::warn!(
                "stratum (class {label}, language {language}) has only {n} record(s); all assigned to train"
            );
            train.extend(stratum.into_iter().cloned());
            continue;
        }
        let n_train = (n as f64 * train_frac).floor() as usize;
        let n_val = (n as f64 * val_frac).floor() as usize;
        for (i, record) in stratum.into_iter().enumerate() {
            if i < n_train {
                train.push(record.clone());
            } else if i < n_train + n_val {
                val.push(record.clone());
            } else {
                test.push(record.clone());
            }
        }
    }
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_seed_deterministic() {
        let cfg = SynthConfig::default();
        let a = synth_document(99, &cfg).unwrap();
        let b = synth_document(99, &cfg).unwrap();
        assert_eq!(a, b);
        let c = synth_document(100, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_pages_are_mostly_white() {
        let cfg = SynthConfig::default();
        for seed in 0..100u64 {
            let img = synth_document(seed, &cfg).unwrap();
            let mean: f64 = img.data().iter().map(|&b| f64::from(b)).sum::<f64>()
                / img.data().len() as f64;
            assert!(mean > 0.6 * 255.0, "seed {seed}: mean {mean}");
        }
    }

    /// Count runs of consecutive rows whose dark-pixel fraction crosses a
    /// threshold; a crude text-line detector independent of the renderer.
    fn dark_row_runs(img: &ImageBuffer) -> usize {
        let mut runs = 0;
        let mut in_run = false;
        for r in 0..img.height() {
            let dark = (0..img.width())
                .filter(|&c| img.pixel(r, c)[0] < 128)
                .count();
            let texty = dark as f64 / img.width() as f64 > 0.08;
            if texty && !in_run {
                runs += 1;
            }
            in_run = texty;
        }
        runs
    }

    #[test]
    fn synth_pages_have_text_rows() {
        let cfg = SynthConfig::default();
        for seed in 0..50u64 {
            let img = synth_document(seed, &cfg).unwrap();
            assert!(dark_row_runs(&img) >= 3, "seed {seed}");
        }
    }

    #[test]
    fn synth_rejects_impossible_canvas() {
        let cfg = SynthConfig {
            canvas_h: (20, 20),
            margin_top: (10, 10),
            margin_bottom: (15, 15),
            ..SynthConfig::default()
        };
        assert!(matches!(
            synth_document(1, &cfg),
            Err(DataError::CanvasTooSmall { .. })
        ));
    }

    #[test]
    fn rotation_dataset_balances_classes() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |n: usize| -> Vec<(String, ImageBuffer)> {
            (0..n)
                .map(|i| {
                    (
                        format!("u{i}"),
                        synth_document(i as u64, &SynthConfig::default()).unwrap(),
                    )
                })
                .collect()
        };
        let records = make_rotation_dataset(&mk(8), 7, dir.path(), "en").unwrap();
        let mut counts = [0usize; 4];
        for r in &records {
            counts[r.rotation_class.label() as usize] += 1;
        }
        assert_eq!(counts, [2, 2, 2, 2]);

        let dir2 = tempfile::tempdir().unwrap();
        let records = make_rotation_dataset(&mk(6), 7, dir2.path(), "en").unwrap();
        let mut counts = [0usize; 4];
        for r in &records {
            counts[r.rotation_class.label() as usize] += 1;
        }
        let mut sorted = counts;
        sorted.sort_unstable();
        assert_eq!(sorted, [1, 1, 2, 2]);
    }

    #[test]
    fn stored_rotation_inverts_to_upright_byte_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let uprights: Vec<(String, ImageBuffer)> = (0..8)
            .map(|i| {
                (
                    format!("u{i}"),
                    synth_document(i as u64 + 40, &SynthConfig::default()).unwrap(),
                )
            })
            .collect();
        let records = make_rotation_dataset(&uprights, 3, dir.path(), "en").unwrap();
        for (record, (_, upright)) in records.iter().zip(&uprights) {
            let stored = load_image(dir.path(), record).unwrap();
            let recovered =
                imaging::rotate_quarter(&stored, imaging::correction_turns(record.rotation_class));
            assert_eq!(&recovered, upright, "id {}", record.id);
        }
    }

    #[test]
    fn duplicate_upright_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = synth_document(1, &SynthConfig::default()).unwrap();
        let ups = vec![("a".to_string(), img.clone()), ("a".to_string(), img)];
        assert!(matches!(
            make_rotation_dataset(&ups, 1, dir.path(), "en"),
            Err(DataError::DuplicateUprightId(_))
        ));
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let records = generate_corpus(6, 11, &SynthConfig::default(), "en", dir.path()).unwrap();
        let manifest = dir.path().join("manifest.jsonl");
        let loaded = load_manifest(&manifest).unwrap();
        assert_eq!(loaded, records);

        // write(load(m)) reproduces the file byte for byte
        let rewritten = dir.path().join("rewritten.jsonl");
        write_manifest(&loaded, &rewritten).unwrap();
        assert_eq!(
            std::fs::read(&manifest).unwrap(),
            std::fs::read(&rewritten).unwrap()
        );

        // empty file -> empty list
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(load_manifest(&empty).unwrap().is_empty());

        // unknown rotation label names the line
        let bad = dir.path().join("bad.jsonl");
        let good_line = serde_json::to_string(&records[0]).unwrap();
        std::fs::write(
            &bad,
            format!(
                "{good_line}\n{}\n",
                good_line.replace("\"rotation_class\":0", "\"rotation_class\":5")
                    .replace("\"rotation_class\":1", "\"rotation_class\":5")
                    .replace("\"rotation_class\":2", "\"rotation_class\":5")
                    .replace("\"rotation_class\":3", "\"rotation_class\":5")
                    .replace(&records[0].id, "other-id")
            ),
        )
        .unwrap();
        match load_manifest(&bad) {
            Err(DataError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed line, got {other:?}"),
        }

        // missing image file
        let missing = dir.path().join("missing.jsonl");
        std::fs::write(
            &missing,
            good_line.replace("images/", "nowhere/") + "\n",
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&missing),
            Err(DataError::MissingImageFile { line: 1, .. })
        ));

        // duplicate id
        let dup = dir.path().join("dup.jsonl");
        std::fs::write(&dup, format!("{good_line}\n{good_line}\n")).unwrap();
        assert!(matches!(
            load_manifest(&dup),
            Err(DataError::DuplicateId { line: 2, .. })
        ));

        // wrong field key set
        let wrong = dir.path().join("wrong.jsonl");
        std::fs::write(&wrong, good_line.replace("\"total\"", "\"sum\"") + "\n").unwrap();
        assert!(matches!(
            load_manifest(&wrong),
            Err(DataError::WrongFieldKeys { line: 1, .. })
        ));
    }

    #[test]
    fn split_is_stratified_and_exhaustive() {
        let dir = tempfile::tempdir().unwrap();
        let records = generate_corpus(400, 13, &SynthConfig::default(), "en", dir.path()).unwrap();
        let (train, val, test) = split(&records, 0.8, 0.1, 5).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (320, 40, 40));
        for label in 0..4u8 {
            let count = |part: &[SampleRecord]| {
                part.iter()
                    .filter(|r| r.rotation_class.label() == label)
                    .count()
            };
            assert_eq!(count(&train), 80);
            assert_eq!(count(&val), 10);
            assert_eq!(count(&test), 10);
        }

        // deterministic
        let again = split(&records, 0.8, 0.1, 5).unwrap();
        assert_eq!(again.0, train);
        assert_eq!(again.1, val);
        assert_eq!(again.2, test);

        // union is the input multiset
        let mut all: Vec<String> = train
            .iter()
            .chain(&val)
            .chain(&test)
            .map(|r| r.id.clone())
            .collect();
        all.sort();
        let mut expected: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn tiny_stratum_goes_to_train() {
        let dir = tempfile::tempdir().unwrap();
        let records = generate_corpus(2, 17, &SynthConfig::default(), "xx", dir.path()).unwrap();
        let (train, val, test) = split(&records, 0.5, 0.25, 1).unwrap();
        assert_eq!(train.len(), 2);
        assert!(val.is_empty() && test.is_empty());
    }

    #[test]
    fn ground_truth_is_deterministic_and_long_enough() {
        let (text_a, fields_a) = synth_ground_truth(3, "x-1");
        let (text_b, fields_b) = synth_ground_truth(3, "x-1");
        assert_eq!(text_a, text_b);
        assert_eq!(fields_a, fields_b);
        assert!(text_a.chars().count() >= 60);
        for key in REQUIRED_FIELDS {
            assert!(text_a.contains(&fields_a[key]), "field {key} embedded");
        }
        let (text_c, _) = synth_ground_truth(3, "x-2");
        assert_ne!(text_a, text_c);
    }
}
