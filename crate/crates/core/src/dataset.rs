//! Paired control/target/prompt dataset building and checking.
//!
//! Layout under a dataset root:
//!
//! ```text
//! <root>/source/<stem>.png   control image (triangle approximation)
//! <root>/target/<stem>.png   target image (the resized input)
//! <root>/prompt.jsonl        one {"source", "target", "prompt"} object per line
//! ```
//!
//! Captions are read from `<stem>.txt` sidecars next to the inputs, or
//! replaced by a fixed stub in [`CaptionMode::Stub`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approximator::{approximate, ApproxConfig, ApproxError};
use crate::raster::Raster;
use crate::rng::seed_for_name;

pub const MANIFEST_FILE: &str = "prompt.jsonl";
pub const SOURCE_DIR: &str = "source";
pub const TARGET_DIR: &str = "target";

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "ppm", "pnm"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no supported images found in {0}")]
    NoInputs(PathBuf),
    #[error("invalid build config: {0}")]
    InvalidConfig(String),
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("dataset is invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// One training triple. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub source: String,
    pub target: String,
    pub prompt: String,
}

impl DatasetEntry {
    pub fn for_stem(stem: &str, prompt: String) -> Self {
        DatasetEntry {
            source: format!("{SOURCE_DIR}/{stem}.png"),
            target: format!("{TARGET_DIR}/{stem}.png"),
            prompt,
        }
    }

    /// `{"source": "...", "target": "...", "prompt": "..."}` plus a newline.
    pub fn manifest_line(&self) -> String {
        let q = |s: &str| serde_json::to_string(s).expect("strings always serialize");
        format!(
            "{{\"source\": {}, \"target\": {}, \"prompt\": {}}}\n",
            q(&self.source),
            q(&self.target),
            q(&self.prompt)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CaptionMode {
    /// Require a `<stem>.txt` caption next to every image.
    #[default]
    Sidecar,
    /// Use `"an image of <stem>"` for every image.
    Stub,
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Square edge length; 0 keeps the original size.
    pub resize: u32,
    /// Approximation settings. Its `seed` is replaced per file.
    pub approx: ApproxConfig,
    pub caption_mode: CaptionMode,
    pub parallelism: usize,
    pub seed: u64,
    /// Write `source/<stem>.trace.csv` score traces.
    pub emit_traces: bool,
}

impl BuildConfig {
    pub fn new(input_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        BuildConfig {
            input_dir: input_dir.into(),
            output_dir: output_dir.into(),
            resize: 512,
            approx: ApproxConfig::default(),
            caption_mode: CaptionMode::Sidecar,
            parallelism: 1,
            seed: 0,
            emit_traces: false,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.resize != 0 && self.resize < 64 {
            return Err(DatasetError::InvalidConfig(format!(
                "resize must be 0 or at least 64, got {}",
                self.resize
            )));
        }
        if self.parallelism == 0 {
            return Err(DatasetError::InvalidConfig("parallelism must be at least 1".into()));
        }
        self.approx.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputFile {
    pub image: PathBuf,
    pub caption: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub file: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub processed: usize,
    pub skipped: Vec<Skipped>,
    /// Wall-clock seconds for the whole build.
    pub total_runtime: f64,
    /// `(file name, final RMSE)` for every processed input, in discovery order.
    pub per_image_scores: Vec<(String, f64)>,
}

fn is_supported_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|s| e.eq_ignore_ascii_case(s)))
}

/// Supported images in `input_dir`, sorted bytewise by file name, each with
/// its `<stem>.txt` caption when one exists.
pub fn discover_inputs(input_dir: &Path) -> Result<Vec<InputFile>, DatasetError> {
    let mut images = Vec::new();
    for entry in fs::read_dir(input_dir).map_err(io_err(input_dir))? {
        let entry = entry.map_err(io_err(input_dir))?;
        let path = entry.path();
        if path.is_file() && is_supported_image(&path) {
            images.push(path);
        }
    }
    images.sort_by(|a, b| {
        let key = |p: &PathBuf| p.file_name().map(|n| n.as_encoded_bytes().to_vec());
        key(a).cmp(&key(b))
    });
    Ok(images
        .into_iter()
        .map(|image| {
            let caption = Some(image.with_extension("txt")).filter(|c| c.is_file());
            InputFile { image, caption }
        })
        .collect())
}

struct Built {
    entry: DatasetEntry,
    name: String,
    score: f64,
}

fn resolve_prompt(input: &InputFile, stem: &str, mode: CaptionMode) -> Result<String, String> {
    match mode {
        CaptionMode::Stub => Ok(format!("an image of {stem}")),
        CaptionMode::Sidecar => {
            let path = input.caption.as_ref().ok_or("missing caption")?;
            let text = fs::read_to_string(path).map_err(|e| format!("unreadable caption: {e}"))?;
            let text = text.trim();
            if text.is_empty() {
                return Err("empty caption".into());
            }
            Ok(text.to_string())
        }
    }
}

fn build_one(input: &InputFile, stem: &str, config: &BuildConfig) -> Result<Built, String> {
    let prompt = resolve_prompt(input, stem, config.caption_mode)?;
    let mut target = Raster::load(&input.image).map_err(|e| format!("unreadable image: {e}"))?;
    if config.resize > 0 {
        target = target
            .resize_square(config.resize)
            .map_err(|e| format!("resize failed: {e}"))?;
    }
    let approx = ApproxConfig { seed: seed_for_name(config.seed, stem), ..config.approx.clone() };
    let state = approximate(&target, &approx).map_err(|e| e.to_string())?;

    let entry = DatasetEntry::for_stem(stem, prompt);
    let root = &config.output_dir;
    let write = |r: &Raster, rel: &str| {
        r.save_png(&root.join(rel)).map_err(|e| format!("write failed: {e}"))
    };
    write(&state.target, &entry.target)?;
    write(&state.canvas, &entry.source)?;
    if config.emit_traces {
        let path = root.join(SOURCE_DIR).join(format!("{stem}.trace.csv"));
        fs::write(&path, state.trace_csv()).map_err(|e| format!("write failed: {e}"))?;
    }
    let name = input
        .image
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Built { entry, name, score: state.score })
}

/// Build a dataset from every supported image in `config.input_dir`.
///
/// Per-file problems never abort the batch; they show up in
/// [`BuildReport::skipped`]. The manifest lists entries in discovery order
/// whatever the worker count.
pub fn build(config: &BuildConfig) -> Result<BuildReport, DatasetError> {
    let started = Instant::now();
    config.validate()?;
    let inputs = discover_inputs(&config.input_dir)?;
    if inputs.is_empty() {
        return Err(DatasetError::NoInputs(config.input_dir.clone()));
    }
    for dir in [SOURCE_DIR, TARGET_DIR] {
        let path = config.output_dir.join(dir);
        fs::create_dir_all(&path).map_err(io_err(&path))?;
    }

    // Stems name the outputs, so a second image with the same stem is dropped.
    let mut seen = HashSet::new();
    let jobs: Vec<(&InputFile, Result<String, String>)> = inputs
        .iter()
        .map(|input| {
            let stem = match input.image.file_stem().and_then(|s| s.to_str()) {
                Some(s) => s.to_string(),
                None => return (input, Err("non-UTF-8 file name".to_string())),
            };
            if !seen.insert(stem.clone()) {
                return (input, Err(format!("duplicate stem {stem:?}")));
            }
            (input, Ok(stem))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| DatasetError::InvalidConfig(e.to_string()))?;
    let results: Vec<Result<Built, String>> = pool.install(|| {
        jobs.par_iter()
            .map(|(input, stem)| match stem {
                Ok(stem) => build_one(input, stem, config),
                Err(reason) => Err(reason.clone()),
            })
            .collect()
    });

    let mut report = BuildReport::default();
    let mut manifest = String::new();
    for ((input, _), result) in jobs.iter().zip(results) {
        match result {
            Ok(built) => {
                manifest.push_str(&built.entry.manifest_line());
                report.processed += 1;
                report.per_image_scores.push((built.name, built.score));
            }
            Err(reason) => report.skipped.push(Skipped { file: input.image.clone(), reason }),
        }
    }
    let manifest_path = config.output_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;
    report.total_runtime = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Parse `<root>/prompt.jsonl`.
pub fn read_manifest(root: &Path) -> Result<Vec<DatasetEntry>, DatasetError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| DatasetError::ManifestParse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryCheck {
    /// 1-based manifest line.
    pub line: usize,
    pub entry: DatasetEntry,
    pub problems: Vec<String>,
}

impl EntryCheck {
    pub fn passed(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub entries: Vec<EntryCheck>,
    /// PNGs under `source/` or `target/` that no entry references.
    pub orphans: Vec<String>,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &EntryCheck> {
        self.entries.iter().filter(|e| !e.passed())
    }

    pub fn is_clean(&self) -> bool {
        self.orphans.is_empty() && self.entries.iter().all(EntryCheck::passed)
    }
}

fn is_contained(rel: &str) -> bool {
    let p = Path::new(rel);
    !rel.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

fn check_image(root: &Path, rel: &str, problems: &mut Vec<String>) -> Option<(u32, u32)> {
    if !is_contained(rel) {
        problems.push(format!("path escapes dataset root: {rel}"));
        return None;
    }
    let path = root.join(rel);
    if !path.is_file() {
        problems.push(format!("missing file: {rel}"));
        return None;
    }
    match Raster::load(&path) {
        Ok(r) => Some(r.dimensions()),
        Err(e) => {
            problems.push(format!("undecodable image: {e}"));
            None
        }
    }
}

fn png_files(dir: &Path, prefix: &str) -> Vec<String> {
    let Ok(read) = fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut out: Vec<String> = read
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(|n| format!("{prefix}/{n}")))
        .collect();
    out.sort();
    out
}

/// Check every manifest entry under `root`: both files exist and decode,
/// control and target share dimensions, the prompt is non-empty and no path
/// is used twice.
pub fn validate_manifest(root: &Path) -> Result<ValidationReport, DatasetError> {
    let entries = read_manifest(root)?;
    let mut uses: HashMap<&str, usize> = HashMap::new();
    for e in &entries {
        *uses.entry(e.source.as_str()).or_default() += 1;
        *uses.entry(e.target.as_str()).or_default() += 1;
    }

    let mut report = ValidationReport::default();
    for (i, entry) in entries.iter().enumerate() {
        let mut problems = Vec::new();
        for path in [&entry.source, &entry.target] {
            if uses[path.as_str()] > 1 {
                problems.push(format!("duplicate path: {path}"));
            }
        }
        let src = check_image(root, &entry.source, &mut problems);
        let tgt = check_image(root, &entry.target, &mut problems);
        if let (Some(a), Some(b)) = (src, tgt) {
            if a != b {
                problems.push(format!(
                    "dimension mismatch: source {}x{} vs target {}x{}",
                    a.0, a.1, b.0, b.1
                ));
            }
        }
        if entry.prompt.trim().is_empty() {
            problems.push("empty prompt".into());
        }
        report.entries.push(EntryCheck { line: i + 1, entry: entry.clone(), problems });
    }

    let referenced: HashSet<&str> = uses.keys().copied().collect();
    for dir in [SOURCE_DIR, TARGET_DIR] {
        for rel in png_files(&root.join(dir), dir) {
            if !referenced.contains(rel.as_str()) {
                report.orphans.push(rel);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub count: usize,
    /// Target image dimensions `(width, height)` and how many entries have them.
    pub dimensions: BTreeMap<(u32, u32), usize>,
    /// Prompt lengths in characters.
    pub prompt_len_mean: f64,
    pub prompt_len_min: usize,
    pub prompt_len_max: usize,
}

impl fmt::Display for DatasetStats {
    /// `key=value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "count={}", self.count)?;
        for ((w, h), n) in &self.dimensions {
            writeln!(f, "dims={w}x{h}:{n}")?;
        }
        writeln!(f, "prompt_len_mean={}", self.prompt_len_mean)?;
        writeln!(f, "prompt_len_min={}", self.prompt_len_min)?;
        write!(f, "prompt_len_max={}", self.prompt_len_max)
    }
}

/// Entry count, target dimension histogram and prompt length summary.
pub fn dataset_stats(root: &Path) -> Result<DatasetStats, DatasetError> {
    let entries = read_manifest(root)?;
    let mut dimensions = BTreeMap::new();
    for e in &entries {
        if !is_contained(&e.target) {
            return Err(DatasetError::Invalid(format!("path escapes dataset root: {}", e.target)));
        }
        let path = root.join(&e.target);
        let dims = image::image_dimensions(&path)
            .map_err(|err| DatasetError::Invalid(format!("{}: {err}", e.target)))?;
        *dimensions.entry(dims).or_default() += 1;
    }
    let lens: Vec<usize> = entries.iter().map(|e| e.prompt.chars().count()).collect();
    let mean = if lens.is_empty() {
        0.0
    } else {
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    };
    Ok(DatasetStats {
        count: entries.len(),
        dimensions,
        prompt_len_mean: mean,
        prompt_len_min: lens.iter().copied().min().unwrap_or(0),
        prompt_len_max: lens.iter().copied().max().unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"x").unwrap();
    }

    #[test]
    fn discover_empty_dir() {
        let d = tempfile::tempdir().unwrap();
        assert!(discover_inputs(d.path()).unwrap().is_empty());
    }

    #[test]
    fn discover_pairs_captions() {
        let d = tempfile::tempdir().unwrap();
        for n in ["b.jpg", "a.txt", "a.png", "notes.md", "c.PPM"] {
            touch(d.path(), n);
        }
        let found = discover_inputs(d.path()).unwrap();
        let names: Vec<_> = found
            .iter()
            .map(|f| {
                (
                    f.image.file_name().unwrap().to_str().unwrap().to_string(),
                    f.caption.as_ref().map(|c| c.file_name().unwrap().to_str().unwrap().to_string()),
                )
            })
            .collect();
        assert_eq!(
            names,
            vec![
                ("a.png".to_string(), Some("a.txt".to_string())),
                ("b.jpg".to_string(), None),
                ("c.PPM".to_string(), None),
            ]
        );
    }

    #[test]
    fn discover_orders_bytewise() {
        let d = tempfile::tempdir().unwrap();
        for n in ["b.png", "B.png", "a.png", "_.png"] {
            touch(d.path(), n);
        }
        let names: Vec<_> = discover_inputs(d.path())
            .unwrap()
            .into_iter()
            .map(|f| f.image.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["B.png", "_.png", "a.png", "b.png"]);
    }

    #[test]
    fn discover_missing_dir_errors() {
        assert!(matches!(
            discover_inputs(Path::new("/definitely/not/here")),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn manifest_line_format() {
        let e = DatasetEntry::for_stem("cat", "a \"cat\"\non a mat".into());
        assert_eq!(
            e.manifest_line(),
            "{\"source\": \"source/cat.png\", \"target\": \"target/cat.png\", \"prompt\": \"a \\\"cat\\\"\\non a mat\"}\n"
        );
        let back: DatasetEntry = serde_json::from_str(e.manifest_line().trim_end()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn config_bounds() {
        let mut c = BuildConfig::new("a", "b");
        c.resize = 32;
        assert!(c.validate().is_err());
        c.resize = 0;
        assert!(c.validate().is_ok());
        c.parallelism = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unsafe_paths_rejected() {
        assert!(is_contained("source/a.png"));
        assert!(!is_contained("../a.png"));
        assert!(!is_contained("/etc/passwd"));
        assert!(!is_contained(""));
    }

    #[test]
    fn parse_error_reports_line() {
        let d = tempfile::tempdir().unwrap();
        let good = DatasetEntry::for_stem("a", "p".into()).manifest_line();
        fs::write(d.path().join(MANIFEST_FILE), format!("{good}{{not json\n")).unwrap();
        match validate_manifest(d.path()) {
            Err(DatasetError::ManifestParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
