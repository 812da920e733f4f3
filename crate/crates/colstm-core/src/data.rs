//! Skeleton sequence I/O, preprocessing, joint-covariance analysis, and a
//! synthetic dataset generator with planted joint-activity structure.
//!
//! # Sequence CSV format
//!
//! ```text
//! fps=30,joints=2
//! 1.0000000000000000e0,0.0000000000000000e0, ... (3·J values per line)
//! ```
//!
//! One header line, then one frame per line with `3·J` comma-separated
//! decimal floats (x,y,z per joint). [`save_sequence`] writes 17 significant
//! digits so a save/load round-trip is bitwise exact.
//!
//! # Preprocessing
//!
//! The pipeline order is fixed: downsample, then smooth, then centralize.
//! [`preprocess`] enforces it; the individual steps are exposed for tests
//! and tooling.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::SequenceSample;
use crate::rng::{derive_rng, STREAM_SYNTH};
use crate::tensor::Matrix;

/// A motion-capture sequence: `T` frames of `3·J` coordinates at a fixed
/// frame rate. `center_joint` optionally names the joint that acts as the
/// body center during centralization (falling back to the per-frame centroid
/// when absent).
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub fps: f64,
    pub joints: usize,
    /// `frames[t]` holds `[x0, y0, z0, x1, y1, z1, …]`.
    pub frames: Vec<Vec<f64>>,
    pub center_joint: Option<usize>,
}

impl SkeletonSequence {
    /// Build a sequence, checking the shape/finiteness invariants.
    pub fn new(fps: f64, joints: usize, frames: Vec<Vec<f64>>) -> Result<Self> {
        let seq = SkeletonSequence {
            fps,
            joints,
            frames,
            center_joint: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Data(format!("fps must be positive, got {}", self.fps)));
        }
        if self.joints == 0 {
            return Err(Error::Data("a sequence needs at least one joint".into()));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != 3 * self.joints {
                return Err(Error::Data(format!(
                    "frame {t} has {} values, expected {} (3 × {} joints)",
                    f.len(),
                    3 * self.joints,
                    self.joints
                )));
            }
            if let Some(v) = f.iter().find(|v| !v.is_finite()) {
                return Err(Error::Data(format!("frame {t} contains non-finite value {v}")));
            }
        }
        if let Some(c) = self.center_joint {
            if c >= self.joints {
                return Err(Error::Data(format!(
                    "center joint {c} out of range for {} joints",
                    self.joints
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The (x, y, z) of one joint in one frame.
    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        let f = &self.frames[t];
        [f[3 * j], f[3 * j + 1], f[3 * j + 2]]
    }
}

/// Load a sequence from the CSV format described in the module docs.
/// Malformed input fails with the 1-based line number.
pub fn load_sequence(path: &Path) -> Result<SkeletonSequence> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file, expected `fps=<v>,joints=<J>` header"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let header = header.trim();
    let (fps, joints) = parse_header(header).ok_or_else(|| {
        Error::parse(
            path,
            1,
            format!("expected header `fps=<v>,joints=<J>`, got `{header}`"),
        )
    })?;
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::parse(path, 1, format!("fps must be positive, got {fps}")));
    }
    if joints == 0 {
        return Err(Error::parse(path, 1, "joint count must be positive"));
    }

    let mut frames = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut frame = Vec::with_capacity(3 * joints);
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(path, lineno, format!("non-numeric field `{}`", field.trim()))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite value {v}")));
            }
            frame.push(v);
        }
        if frame.len() != 3 * joints {
            return Err(Error::parse(
                path,
                lineno,
                format!(
                    "ragged row: {} values, expected {} (3 × {joints} joints)",
                    frame.len(),
                    3 * joints
                ),
            ));
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(Error::parse(path, 1, "no frames after the header"));
    }
    Ok(SkeletonSequence {
        fps,
        joints,
        frames,
        center_joint: None,
    })
}

fn parse_header(header: &str) -> Option<(f64, usize)> {
    let rest = header.strip_prefix("fps=")?;
    let (fps_str, joints_str) = rest.split_once(",joints=")?;
    Some((fps_str.trim().parse().ok()?, joints_str.trim().parse().ok()?))
}

/// Write a sequence in the exact inverse of [`load_sequence`]'s format.
/// Coordinates carry 17 significant digits, which round-trips every finite
/// f64 bitwise. Refuses empty sequences.
pub fn save_sequence(seq: &SkeletonSequence, path: &Path) -> Result<()> {
    seq.validate()?;
    if seq.frames.is_empty() {
        return Err(Error::Data("refusing to save a sequence with no frames".into()));
    }
    let mut out = String::new();
    // `{}` on f64 prints the shortest string that parses back to the same
    // bits, so the header round-trips too.
    let _ = writeln!(out, "fps={},joints={}", seq.fps, seq.joints);
    for frame in &seq.frames {
        for (i, v) in frame.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Keep every k-th frame, `k = round(fps / target_fps)`, starting from the
/// first; the stored rate becomes `fps / k`. Asking for a rate above the
/// source rate is an error.
pub fn downsample(seq: &SkeletonSequence, target_fps: f64) -> Result<SkeletonSequence> {
    if !(target_fps > 0.0 && target_fps.is_finite()) {
        return Err(Error::Data(format!("target fps must be positive, got {target_fps}")));
    }
    if target_fps > seq.fps {
        return Err(Error::Data(format!(
            "target fps {target_fps} exceeds the source rate {}",
            seq.fps
        )));
    }
    let k = (seq.fps / target_fps).round() as usize;
    debug_assert!(k >= 1);
    let frames: Vec<Vec<f64>> = seq.frames.iter().step_by(k).cloned().collect();
    Ok(SkeletonSequence {
        fps: seq.fps / k as f64,
        joints: seq.joints,
        frames,
        center_joint: seq.center_joint,
    })
}

/// The 5-tap noise filter, written as integer weights over 35.
const SMOOTH_WEIGHTS: [f64; 5] = [-3.0, 12.0, 17.0, 12.0, -3.0];

/// Reflect an out-of-range frame index back into `0..t_len` by mirroring at
/// the ends without repeating the edge frame.
fn reflect(idx: i64, t_len: usize) -> usize {
    debug_assert!(t_len >= 2);
    let mut i = idx;
    let last = (t_len - 1) as i64;
    loop {
        if i < 0 {
            i = -i;
        } else if i > last {
            i = 2 * last - i;
        } else {
            return i as usize;
        }
    }
}

/// Convolve every coordinate channel with `(−3, 12, 17, 12, −3)/35`, using
/// reflect-padding at the ends. The kernel has unit DC gain, so constant
/// channels pass through unchanged; it is symmetric with zero first moment,
/// so linear ramps survive in the interior. A single-frame sequence is
/// returned as-is (the window degenerates to the identity).
pub fn smooth(seq: &SkeletonSequence) -> SkeletonSequence {
    assert!(!seq.frames.is_empty(), "cannot smooth an empty sequence");
    let t_len = seq.frames.len();
    if t_len == 1 {
        return seq.clone();
    }
    let width = 3 * seq.joints;
    let mut frames = vec![vec![0.0; width]; t_len];
    for t in 0..t_len {
        for ch in 0..width {
            // Integer-weight accumulation followed by a single division keeps
            // the impulse response exact: (…+17·1+…)/35 is literally 17/35.
            let mut num = 0.0;
            for (d, w) in SMOOTH_WEIGHTS.iter().enumerate() {
                let src = reflect(t as i64 + d as i64 - 2, t_len);
                num += w * seq.frames[src][ch];
            }
            frames[t][ch] = num / 35.0;
        }
    }
    SkeletonSequence {
        fps: seq.fps,
        joints: seq.joints,
        frames,
        center_joint: seq.center_joint,
    }
}

/// Subtract a per-frame body center from every joint. The center is the
/// joint named by `cfg.center_joint`, falling back to the sequence's own
/// `center_joint`, falling back to the per-frame centroid of all joints.
pub fn centralize(seq: &SkeletonSequence, cfg: &PreprocessConfig) -> Result<SkeletonSequence> {
    let center = cfg.center_joint.or(seq.center_joint);
    if let Some(c) = center {
        if c >= seq.joints {
            return Err(Error::Data(format!(
                "center joint {c} out of range for {} joints",
                seq.joints
            )));
        }
    }
    let mut frames = seq.frames.clone();
    for frame in frames.iter_mut() {
        let cx;
        let cy;
        let cz;
        match center {
            Some(c) => {
                cx = frame[3 * c];
                cy = frame[3 * c + 1];
                cz = frame[3 * c + 2];
            }
            None => {
                let n = seq.joints as f64;
                cx = (0..seq.joints).map(|j| frame[3 * j]).sum::<f64>() / n;
                cy = (0..seq.joints).map(|j| frame[3 * j + 1]).sum::<f64>() / n;
                cz = (0..seq.joints).map(|j| frame[3 * j + 2]).sum::<f64>() / n;
            }
        }
        for j in 0..seq.joints {
            frame[3 * j] -= cx;
            frame[3 * j + 1] -= cy;
            frame[3 * j + 2] -= cz;
        }
    }
    Ok(SkeletonSequence {
        fps: seq.fps,
        joints: seq.joints,
        frames,
        center_joint: seq.center_joint,
    })
}

/// Preprocessing chain settings. The step order is fixed (downsample, then
/// smooth, then centralize); flags only switch steps off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// `null` skips downsampling.
    #[serde(default = "default_target_fps")]
    pub target_fps: Option<f64>,
    #[serde(default = "default_true")]
    pub smooth: bool,
    #[serde(default = "default_true")]
    pub centralize: bool,
    /// Body-center joint; `null` means centroid (or the sequence's own
    /// designated joint when it has one).
    #[serde(default)]
    pub center_joint: Option<usize>,
}

fn default_target_fps() -> Option<f64> {
    Some(30.0)
}
fn default_true() -> bool {
    true
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_fps: default_target_fps(),
            smooth: true,
            centralize: true,
            center_joint: None,
        }
    }
}

impl PreprocessConfig {
    /// No-op configuration: every step disabled.
    pub fn off() -> Self {
        PreprocessConfig {
            target_fps: None,
            smooth: false,
            centralize: false,
            center_joint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.target_fps {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("target_fps must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// Run the full chain in its fixed order.
pub fn preprocess(seq: &SkeletonSequence, cfg: &PreprocessConfig) -> Result<SkeletonSequence> {
    cfg.validate()?;
    let mut out = match cfg.target_fps {
        Some(t) => downsample(seq, t)?,
        None => seq.clone(),
    };
    if cfg.smooth {
        out = smooth(&out);
    }
    if cfg.centralize {
        out = centralize(&out, cfg)?;
    }
    Ok(out)
}

/// Absolute joint-covariance map over per-frame movement.
///
/// For each joint the displacement magnitude `‖pos_t − pos_{t−1}‖₂` forms a
/// per-frame activity series; those series are pooled over all sequences and
/// their `J×J` population covariance is returned elementwise-absolute.
/// Sequences shorter than 2 frames contribute nothing and are skipped with a
/// warning.
pub fn joint_covariance(sequences: &[SkeletonSequence]) -> Result<Matrix> {
    let joints = sequences
        .first()
        .ok_or_else(|| Error::Data("no sequences given".into()))?
        .joints;
    for (i, s) in sequences.iter().enumerate() {
        if s.joints != joints {
            return Err(Error::Data(format!(
                "sequence {i} has {} joints, expected {joints}",
                s.joints
            )));
        }
    }

    // activity[j] collects joint j's displacement magnitudes across all
    // usable sequences, aligned on (sequence, frame-step) pairs.
    let mut activity: Vec<Vec<f64>> = vec![Vec::new(); joints];
    let mut usable = 0usize;
    for (i, s) in sequences.iter().enumerate() {
        if s.len() < 2 {
            log::warn!("sequence {i} has {} frame(s); skipping it in the covariance", s.len());
            continue;
        }
        usable += 1;
        for t in 1..s.len() {
            for j in 0..joints {
                let prev = s.joint(t - 1, j);
                let cur = s.joint(t, j);
                let d = [cur[0] - prev[0], cur[1] - prev[1], cur[2] - prev[2]];
                activity[j].push((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
            }
        }
    }
    if usable == 0 {
        return Err(Error::Data("no sequence has at least 2 frames".into()));
    }

    let n = activity[0].len() as f64;
    let means: Vec<f64> = activity.iter().map(|a| a.iter().sum::<f64>() / n).collect();
    let mut cov = Matrix::zeros(joints, joints);
    for a in 0..joints {
        for b in a..joints {
            let mut acc = 0.0;
            for k in 0..activity[a].len() {
                acc += (activity[a][k] - means[a]) * (activity[b][k] - means[b]);
            }
            let v = (acc / n).abs();
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok(cov)
}

/// One dataset entry: a sequence file, its class label, and an optional
/// cross-validation fold id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

/// A labeled list of sequence files plus the class-name table.
///
/// On disk this is line-delimited JSON: the first line holds
/// `{"classes":[…]}`, then one entry object per line. Paths are interpreted
/// relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ClassesRecord {
    classes: Vec<String>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Data("manifest declares no classes".into()));
        }
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.label >= self.classes.len() {
                return Err(Error::Data(format!(
                    "entry {i} ({}) has label {}, but only {} classes are declared",
                    e.path,
                    e.label,
                    self.classes.len()
                )));
            }
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Data(format!("duplicate path in manifest: {}", e.path)));
            }
        }
        Ok(())
    }
}

/// Read and validate a manifest. Parse failures carry the line number.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty manifest, expected a classes record"))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let classes: ClassesRecord = serde_json::from_str(&first)
        .map_err(|e| Error::parse(path, 1, format!("bad classes record: {e}")))?;
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, format!("bad manifest entry: {e}")))?;
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        classes: classes.classes,
        entries,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Write a manifest in the line-delimited format read by [`load_manifest`].
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let mut out = String::new();
    let classes = ClassesRecord {
        classes: manifest.classes.clone(),
    };
    let _ = writeln!(out, "{}", serde_json::to_string(&classes)?);
    for e in &manifest.entries {
        let _ = writeln!(out, "{}", serde_json::to_string(e)?);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load every sequence a manifest names (relative to `base`), run the
/// preprocessing chain, and return training-ready samples with their fold
/// ids. All sequences must agree on the joint count.
pub fn load_dataset(
    manifest: &DatasetManifest,
    base: &Path,
    cfg: &PreprocessConfig,
) -> Result<Vec<(SequenceSample, Option<usize>)>> {
    manifest.validate()?;
    if manifest.entries.is_empty() {
        return Err(Error::Data("manifest lists no sequences".into()));
    }
    let mut out = Vec::with_capacity(manifest.entries.len());
    let mut joints: Option<usize> = None;
    for e in &manifest.entries {
        let path: PathBuf = base.join(&e.path);
        let seq = load_sequence(&path)?;
        match joints {
            None => joints = Some(seq.joints),
            Some(j) if j != seq.joints => {
                return Err(Error::Data(format!(
                    "{} has {} joints, but earlier sequences have {j}",
                    e.path, seq.joints
                )));
            }
            _ => {}
        }
        let seq = preprocess(&seq, cfg)?;
        out.push((
            SequenceSample {
                frames: seq.frames,
                label: e.label,
            },
            e.fold,
        ));
    }
    Ok(out)
}

/// Recipe for a synthetic dataset in which each class is defined by the set
/// of joints that move: active joints share one class-frequency sinusoid
/// (with a per-sample random phase), every coordinate gets i.i.d. Gaussian
/// noise on top, and inactive joints are noise only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub joints: usize,
    /// Per class, the 0-based joints that carry the signal.
    pub active: Vec<Vec<usize>>,
    /// Per class, the sinusoid frequency in Hz.
    pub frequencies: Vec<f64>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Inclusive frame-count range.
    pub length_range: (usize, usize),
    pub samples_per_class: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub seed: u64,
}

fn default_amplitude() -> f64 {
    1.0
}
fn default_folds() -> usize {
    5
}
fn default_fps() -> f64 {
    30.0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        if self.active.len() != self.classes || self.frequencies.len() != self.classes {
            return Err(Error::Config(format!(
                "active sets ({}) and frequencies ({}) must both have one entry per class ({})",
                self.active.len(),
                self.frequencies.len(),
                self.classes
            )));
        }
        for (c, set) in self.active.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Config(format!("class {c} has an empty active-joint set")));
            }
            let mut seen = HashSet::new();
            for &j in set {
                if j >= self.joints {
                    return Err(Error::Config(format!(
                        "class {c} lists joint {j}, but only {} joints exist",
                        self.joints
                    )));
                }
                if !seen.insert(j) {
                    return Err(Error::Config(format!("class {c} lists joint {j} twice")));
                }
            }
        }
        for (c, &f) in self.frequencies.iter().enumerate() {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("class {c} frequency must be positive, got {f}")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be nonnegative, got {}", self.noise)));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!(
                "amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        let (lo, hi) = self.length_range;
        if lo == 0 || hi < lo {
            return Err(Error::Config(format!(
                "length range ({lo}, {hi}) must satisfy 1 ≤ lo ≤ hi"
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("need at least one sample per class".into()));
        }
        if self.folds == 0 {
            return Err(Error::Config("need at least one fold".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }
}

/// Generate the dataset a [`SynthSpec`] describes. Sequences come back in
/// class-major order together with a manifest whose paths follow
/// `class<c>_sample<s>.csv`; fold ids cycle through `0..folds` within each
/// class. Fully deterministic given the seed.
pub fn synth_generate(spec: &SynthSpec) -> Result<(DatasetManifest, Vec<SkeletonSequence>)> {
    spec.validate()?;
    let mut sequences = Vec::with_capacity(spec.classes * spec.samples_per_class);
    let mut entries = Vec::with_capacity(sequences.capacity());
    let (lo, hi) = spec.length_range;
    for c in 0..spec.classes {
        let active: HashSet<usize> = spec.active[c].iter().copied().collect();
        for s in 0..spec.samples_per_class {
            let mut rng = derive_rng(spec.seed, &[STREAM_SYNTH, c as u64, s as u64]);
            let t_len = rng.gen_range(lo..=hi);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut frames = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let angle = std::f64::consts::TAU * spec.frequencies[c] * t as f64 / spec.fps + phase;
                let signal = spec.amplitude * angle.sin();
                let mut frame = Vec::with_capacity(3 * spec.joints);
                for j in 0..spec.joints {
                    let base = if active.contains(&j) { signal } else { 0.0 };
                    for _ in 0..3 {
                        let eps: f64 = rng.sample(StandardNormal);
                        frame.push(base + spec.noise * eps);
                    }
                }
                frames.push(frame);
            }
            sequences.push(SkeletonSequence {
                fps: spec.fps,
                joints: spec.joints,
                frames,
                center_joint: None,
            });
            entries.push(ManifestEntry {
                path: format!("class{c}_sample{s}.csv"),
                label: c,
                fold: Some(s % spec.folds),
            });
        }
    }
    let manifest = DatasetManifest {
        classes: (0..spec.classes).map(|c| format!("class{c}")).collect(),
        entries,
    };
    Ok((manifest, sequences))
}
