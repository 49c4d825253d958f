//! Corpus storage and ingestion.
//!
//! A corpus is a directory holding `manifest.json` plus one line-delimited
//! file per split (`train.jsonl`, `val.jsonl`). Each line is a JSON object
//!
//! ```text
//! {"id": "s-00001", "transcript": "abc", "features": [[..], ..], "priors": [[..], ..]}
//! ```
//!
//! where `features` (`n×d`) and `priors` (`n×m`) are optional but at least
//! one must be present. Floats are written in shortest round-trip form, so
//! saving and loading reproduces every `f64` bit for bit.
//!
//! On load, prior rows holding an entry below [`PRIOR_FLOOR`] or not summing
//! to one are floored and renormalised; rows that are already valid are kept
//! verbatim. Sequences are then brought to the manifest's frame count
//! according to its [`PaddingPolicy`].

mod synthetic;

pub use synthetic::{generate_synthetic, synthetic_corpus, ContextualRule, SyntheticSpec};

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::ctc::Transcript;
use crate::error::{Error, Result};
use crate::prior::FeatureSequence;
use crate::relax::{rows_to_array, LabelSet, LabelingAssignment, ROW_SUM_TOL};

pub const FORMAT_VERSION: u32 = 1;

/// Prior entries are raised to at least this on load.
pub const PRIOR_FLOOR: f64 = 1e-12;

/// Blank mass of a padding frame; the rest is spread evenly.
pub const PAD_BLANK_MASS: f64 = 0.9;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_FILE: &str = "val.jsonl";

/// How sequences whose length differs from the corpus frame count are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingPolicy {
    /// Any length mismatch is an error.
    #[default]
    Strict,
    /// Short sequences are padded at the end; long ones are an error.
    Pad,
    /// Short sequences are padded, long ones truncated.
    PadOrTruncate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub labels: LabelSet,
    pub blank: usize,
    pub n_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default)]
    pub padding: PaddingPolicy,
    /// Generator settings when the corpus is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl CorpusManifest {
    pub fn new(labels: LabelSet, blank: usize, n_frames: usize, feature_dim: Option<usize>) -> Result<Self> {
        let manifest = CorpusManifest {
            format_version: FORMAT_VERSION,
            labels,
            blank,
            n_frames,
            feature_dim,
            padding: PaddingPolicy::Strict,
            synthetic: None,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn m(&self) -> usize {
        self.labels.size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported corpus format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.blank >= self.m() {
            return Err(Error::InvalidInput(format!("blank index {} out of range", self.blank)));
        }
        if self.n_frames == 0 {
            return Err(Error::InvalidInput("n_frames must be positive".into()));
        }
        if self.feature_dim == Some(0) {
            return Err(Error::InvalidInput("feature_dim must be positive".into()));
        }
        Ok(())
    }
}

/// One labelled sequence: a transcript with features, priors, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub id: String,
    pub features: Option<FeatureSequence>,
    pub priors: Option<LabelingAssignment>,
    pub transcript: Transcript,
}

impl SequenceSample {
    pub fn n(&self) -> usize {
        self.priors
            .as_ref()
            .map(LabelingAssignment::n)
            .or_else(|| self.features.as_ref().map(FeatureSequence::n))
            .unwrap_or(0)
    }
}

/// A manifest with its training and validation splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub train: Vec<SequenceSample>,
    pub val: Vec<SequenceSample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    priors: Option<Vec<Vec<f64>>>,
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::FileUnreadable { path: path.to_path_buf(), source })
}

fn unwritable(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::FileUnwritable { path: path.to_path_buf(), source }
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = read_text(path)?;
    let manifest: CorpusManifest = serde_json::from_str(&text)
        .map_err(|e| Error::ParseError { line: e.line(), message: e.to_string() })?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &CorpusManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    fs::write(path, text + "\n").map_err(unwritable(path))
}

/// Prior rows already on the simplex and above the floor are kept as is;
/// others are floored and renormalised.
fn clean_priors(mut probs: Array2<f64>) -> std::result::Result<LabelingAssignment, String> {
    for (t, mut row) in probs.rows_mut().into_iter().enumerate() {
        if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(format!("frame {t} has an invalid prior entry {v}"));
        }
        let sum = row.sum();
        if sum <= 0.0 {
            return Err(format!("frame {t} has zero prior mass"));
        }
        if row.iter().any(|&v| v < PRIOR_FLOOR) || (sum - 1.0).abs() > ROW_SUM_TOL {
            row.mapv_inplace(|v| (v / sum).max(PRIOR_FLOOR));
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
    }
    LabelingAssignment::new(probs).map_err(|e| e.to_string())
}

/// The frame used to pad prior sequences: blank-dominant, rest uniform.
pub fn padding_frame(m: usize, blank: usize) -> Vec<f64> {
    let rest = (1.0 - PAD_BLANK_MASS) / (m - 1) as f64;
    (0..m).map(|k| if k == blank { PAD_BLANK_MASS } else { rest }).collect()
}

fn fit_length(
    a: Array2<f64>,
    n: usize,
    policy: PaddingPolicy,
    pad_row: &[f64],
) -> std::result::Result<Array2<f64>, String> {
    let len = a.nrows();
    if len == n {
        return Ok(a);
    }
    match policy {
        PaddingPolicy::Strict => Err(format!("has {len} frames, corpus requires {n}")),
        PaddingPolicy::Pad if len > n => Err(format!("has {len} frames, more than the corpus's {n}")),
        _ if len > n => Ok(a.slice(s![..n, ..]).to_owned()),
        _ => {
            let mut out = Array2::zeros((n, a.ncols()));
            out.slice_mut(s![..len, ..]).assign(&a);
            for mut row in out.rows_mut().into_iter().skip(len) {
                row.iter_mut().zip(pad_row).for_each(|(v, p)| *v = *p);
            }
            Ok(out)
        }
    }
}

fn sample_from_record(record: SampleRecord, manifest: &CorpusManifest) -> std::result::Result<SequenceSample, String> {
    let transcript =
        Transcript::parse(&record.transcript, &manifest.labels, manifest.blank).map_err(|e| e.to_string())?;
    if record.features.is_none() && record.priors.is_none() {
        return Err("has neither features nor priors".into());
    }
    let m = manifest.m();
    let features = match record.features {
        None => None,
        Some(rows) => {
            let a = rows_to_array(&rows).map_err(|e| format!("features: {e}"))?;
            if let Some(d) = manifest.feature_dim {
                if a.ncols() != d {
                    return Err(format!("features have dimension {}, corpus declares {d}", a.ncols()));
                }
            }
            let pad = vec![0.0; a.ncols()];
            let a = fit_length(a, manifest.n_frames, manifest.padding, &pad)?;
            Some(FeatureSequence::new(a).map_err(|e| e.to_string())?)
        }
    };
    let priors = match record.priors {
        None => None,
        Some(rows) => {
            let a = rows_to_array(&rows).map_err(|e| format!("priors: {e}"))?;
            if a.ncols() != m {
                return Err(format!("priors have {} labels, corpus has {m}", a.ncols()));
            }
            let pad = padding_frame(m, manifest.blank);
            Some(clean_priors(fit_length(a, manifest.n_frames, manifest.padding, &pad)?)?)
        }
    };
    let sample = SequenceSample { id: record.id, features, priors, transcript };
    let required = sample.transcript.min_frames();
    if required > sample.n() {
        return Err(format!("transcript needs {required} frames, sequence has {}", sample.n()));
    }
    Ok(sample)
}

/// Reads one split file, validating every sample against the manifest.
pub fn load_samples(path: &Path, manifest: &CorpusManifest) -> Result<Vec<SequenceSample>> {
    let file = fs::File::open(path).map_err(|source| Error::FileUnreadable { path: path.to_path_buf(), source })?;
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::FileUnreadable { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::ParseError { line: idx + 1, message: e.to_string() })?;
        let id = record.id.clone();
        let sample = sample_from_record(record, manifest)
            .map_err(|message| Error::InvariantViolation { id, message })?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn save_samples(path: &Path, samples: &[SequenceSample]) -> Result<()> {
    let file = fs::File::create(path).map_err(unwritable(path))?;
    let mut out = BufWriter::new(file);
    for sample in samples {
        let record = SampleRecord {
            id: sample.id.clone(),
            transcript: sample.transcript.text().to_string(),
            features: sample.features.as_ref().map(|f| to_rows(f.frames())),
            priors: sample.priors.as_ref().map(LabelingAssignment::to_rows),
        };
        let line = serde_json::to_string(&record).expect("sample serialises");
        writeln!(out, "{line}").map_err(unwritable(path))?;
    }
    out.flush().map_err(unwritable(path))
}

pub fn split_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join(MANIFEST_FILE), dir.join(TRAIN_FILE), dir.join(VAL_FILE))
}

/// Loads a corpus directory. A missing validation file yields an empty split.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let (manifest_path, train_path, val_path) = split_paths(dir);
    let manifest = read_manifest(&manifest_path)?;
    let train = load_samples(&train_path, &manifest)?;
    let val = if val_path.exists() { load_samples(&val_path, &manifest)? } else { Vec::new() };
    Ok(Corpus { manifest, train, val })
}

pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(unwritable(dir))?;
    let (manifest_path, train_path, val_path) = split_paths(dir);
    write_manifest(&manifest_path, &corpus.manifest)?;
    save_samples(&train_path, &corpus.train)?;
    save_samples(&val_path, &corpus.val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> CorpusManifest {
        CorpusManifest::new(LabelSet::new(["_", "a", "b"]).unwrap(), 0, n, None).unwrap()
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn empty_file_is_empty_list() {
        let f = write_lines(&[]);
        assert!(load_samples(f.path(), &manifest(2)).unwrap().is_empty());
    }

    #[test]
    fn negative_prior_names_sample() {
        let f = write_lines(&[
            r#"{"id":"ok","transcript":"a","priors":[[0.1,0.8,0.1],[0.8,0.1,0.1]]}"#,
            r#"{"id":"bad-7","transcript":"a","priors":[[0.1,1.0,-0.1],[0.8,0.1,0.1]]}"#,
        ]);
        match load_samples(f.path(), &manifest(2)) {
            Err(Error::InvariantViolation { id, .. }) => assert_eq!(id, "bad-7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&[r#"{"id":"a","transcript":"a","priors":[[0.5,0.5,0.0]]}"#, "{not json"]);
        assert!(matches!(load_samples(f.path(), &manifest(1)), Err(Error::ParseError { line: 2, .. })));
    }

    #[test]
    fn floor_and_renormalise_on_load() {
        let f = write_lines(&[r#"{"id":"z","transcript":"b","priors":[[0.0,0.0,2.0]]}"#]);
        let s = &load_samples(f.path(), &manifest(1)).unwrap()[0];
        let p = s.priors.as_ref().unwrap();
        assert!(p.probs().iter().all(|&v| v >= PRIOR_FLOOR * 0.999));
        assert!((p.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neither_features_nor_priors() {
        let f = write_lines(&[r#"{"id":"x","transcript":"a"}"#]);
        assert!(matches!(load_samples(f.path(), &manifest(1)), Err(Error::InvariantViolation { .. })));
    }

    #[test]
    fn padding_policies() {
        let line = r#"{"id":"p","transcript":"a","priors":[[0.1,0.8,0.1]],"features":[[1.5,2.5]]}"#;
        let f = write_lines(&[line]);
        let mut m = manifest(3);
        assert!(load_samples(f.path(), &m).is_err());
        m.padding = PaddingPolicy::Pad;
        let s = &load_samples(f.path(), &m).unwrap()[0];
        let p = s.priors.as_ref().unwrap();
        assert_eq!(p.n(), 3);
        let pad = p.row(2);
        assert!((pad[0] - 0.9).abs() < 1e-15 && (pad[1] - 0.05).abs() < 1e-15 && (pad[2] - 0.05).abs() < 1e-15);
        assert_eq!(s.features.as_ref().unwrap().frames().row(1).to_vec(), vec![0.0, 0.0]);

        let long = r#"{"id":"q","transcript":"a","priors":[[0.1,0.8,0.1],[1,0,0],[1,0,0],[1,0,0]]}"#;
        let f = write_lines(&[long]);
        assert!(load_samples(f.path(), &m).is_err());
        m.padding = PaddingPolicy::PadOrTruncate;
        assert_eq!(load_samples(f.path(), &m).unwrap()[0].n(), 3);
    }

    #[test]
    fn round_trip_is_exact() {
        let m = manifest(2);
        let rows = vec![vec![0.1, 0.2, 0.7], vec![1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0]];
        let features = Array2::from_shape_vec((2, 2), vec![0.1 + 0.2, -1e-300, std::f64::consts::PI, 7.0]).unwrap();
        let sample = SequenceSample {
            id: "r".into(),
            features: Some(FeatureSequence::new(features).unwrap()),
            priors: Some(LabelingAssignment::from_rows(&rows).unwrap()),
            transcript: Transcript::parse("ab", &m.labels, 0).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus { manifest: m, train: vec![sample.clone()], val: vec![] };
        save_corpus(dir.path(), &corpus).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, corpus);
    }

    #[test]
    fn manifest_version_checked() {
        let mut m = manifest(2);
        m.format_version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        write_manifest(&path, &m).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::InvalidInput(_))));
        assert!(matches!(
            read_manifest(&dir.path().join("missing.json")),
            Err(Error::FileUnreadable { .. })
        ));
    }
}
