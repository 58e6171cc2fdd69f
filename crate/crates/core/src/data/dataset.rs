use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image_io::{read_ppm, write_ppm};
use super::{Annotation, RoadClass, Sample};
use crate::detect::{fmt_sig6, BBox};
use crate::error::{Error, Result};

/// Files that `load_dataset` refused, with the reason for each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkipReport {
    pub entries: Vec<(PathBuf, String)>,
}

impl SkipReport {
    pub fn push(&mut self, path: impl Into<PathBuf>, reason: impl Into<String>) {
        self.entries.push((path.into(), reason.into()));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl fmt::Display for SkipReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (path, reason) in &self.entries {
            writeln!(f, "{}: {}", path.display(), reason)?;
        }
        Ok(())
    }
}

/// Parses one `class cx cy w h` line.
pub fn parse_label_line(line: &str) -> std::result::Result<Annotation, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    }
    let id: usize = fields[0]
        .parse()
        .map_err(|_| format!("bad class id {:?}", fields[0]))?;
    let class = RoadClass::from_id(id).ok_or_else(|| format!("class id {id} out of range"))?;
    let mut v = [0.0; 4];
    for (slot, s) in v.iter_mut().zip(&fields[1..]) {
        *slot = s.parse().map_err(|_| format!("bad number {s:?}"))?;
    }
    let bbox = BBox::new(v[0], v[1], v[2], v[3]);
    if !bbox.is_normalized() {
        return Err(format!("box {line:?} outside the image"));
    }
    Ok(Annotation::new(class, bbox))
}

/// Parses a whole label file. Blank lines are ignored.
pub fn parse_labels(text: &str) -> Result<Vec<Annotation>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line(l).map_err(|msg| Error::Parse { line: i + 1, msg }))
        .collect()
}

pub fn write_labels(annotations: &[Annotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        let b = a.bbox;
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            a.class.id(),
            fmt_sig6(b.cx),
            fmt_sig6(b.cy),
            fmt_sig6(b.w),
            fmt_sig6(b.h)
        ));
    }
    out
}

/// Writes `<id>.ppm` and `<id>.txt` into `dir`.
pub fn write_sample(sample: &Sample, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let img = dir.join(format!("{}.ppm", sample.id));
    write_ppm(&sample.image, &img)?;
    fs::write(dir.join(format!("{}.txt", sample.id)), write_labels(&sample.annotations))?;
    Ok(img)
}

/// Loads every `*.ppm` in `dir` (sorted by name) with its sibling `.txt` label file.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Vec<Sample>, SkipReport)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();

    let mut samples = Vec::new();
    let mut report = SkipReport::default();
    for path in paths {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let label_path = path.with_extension("txt");
        let text = match fs::read_to_string(&label_path) {
            Ok(t) => t,
            Err(e) => {
                report.push(&path, format!("label file {}: {e}", label_path.display()));
                continue;
            }
        };
        let annotations = match parse_labels(&text) {
            Ok(a) => a,
            Err(e) => {
                report.push(&label_path, e.to_string());
                continue;
            }
        };
        match read_ppm(&path) {
            Ok(image) => samples.push(Sample { id, image, annotations }),
            Err(e) => report.push(&path, e.to_string()),
        }
    }
    if !report.is_empty() {
        log::warn!("skipped {} file(s) while loading {}", report.len(), dir.as_ref().display());
    }
    Ok((samples, report))
}

/// Seeded shuffle then cut at `round(fraction * N)`.
pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    if items.len() < 2 {
        return Err(Error::Config(format!("cannot split {} sample(s)", items.len())));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction * items.len() as f64).round() as usize;
    let train = order[..cut].iter().map(|&i| items[i].clone()).collect();
    let val = order[cut..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, val))
}

/// Independent RNG stream for one sample, keyed by the run seed and the sample id.
pub fn rng_for(seed: u64, id: &str) -> ChaCha8Rng {
    // FNV-1a keeps the stream stable across toolchains.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}
