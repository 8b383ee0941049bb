//! Media sets, synthetic data with planted prototype structure, set-size
//! balancing, pair sampling, and the text file formats.
//!
//! A dataset file starts with `PSET v1 dim=<d>` (optionally followed by
//! `sets=<n> media=<m>` counts) and holds one medium per line:
//!
//! ```text
//! <subject_id> <set_id> <media_id> <modality:0|1> <v_1> ... <v_d> [#mode=<int>]
//! ```
//!
//! Consecutive lines sharing a `set_id` form one set. Pair files hold
//! `<set_id_a> <set_id_b> <label>` per line; a pair whose two ids are equal
//! refers to the two halves of that set (see [`Dataset::split_halves`]).

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const HEADER_MAGIC: &str = "PSET";
const HEADER_VERSION: &str = "v1";
const SPLIT_SALT: u64 = 0x5eed_5b11_7000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Image,
    VideoFrame,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Image => 0,
            Modality::VideoFrame => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Image),
            1 => Some(Modality::VideoFrame),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaFeature {
    pub media_id: u64,
    pub modality: Modality,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaSet {
    pub set_id: u64,
    pub subject_id: u64,
    pub media: Vec<MediaFeature>,
    /// One planted mode label per medium; synthetic data only.
    pub planted_mode: Option<Vec<usize>>,
}

impl MediaSet {
    pub fn len(&self) -> usize {
        self.media.len()
    }

    pub fn is_empty(&self) -> bool {
        self.media.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.media.first().map(|m| m.vector.len())
    }

    /// Stacks the media vectors into an `n x d_in` matrix, one row per medium.
    pub fn to_matrix(&self) -> Result<Array2<f64>> {
        let d = self
            .dim()
            .ok_or_else(|| Error::Domain(format!("set {} is empty", self.set_id)))?;
        let mut out = Array2::zeros((self.media.len(), d));
        for (i, m) in self.media.iter().enumerate() {
            if m.vector.len() != d {
                return Err(Error::Shape(format!(
                    "set {}: medium {} has dimension {}, expected {d}",
                    self.set_id,
                    m.media_id,
                    m.vector.len()
                )));
            }
            out.row_mut(i)
                .iter_mut()
                .zip(&m.vector)
                .for_each(|(o, v)| *o = *v);
        }
        Ok(out)
    }

    /// Returns a set made of the media at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> MediaSet {
        MediaSet {
            set_id: self.set_id,
            subject_id: self.subject_id,
            media: indices.iter().map(|&i| self.media[i].clone()).collect(),
            planted_mode: self
                .planted_mode
                .as_ref()
                .map(|modes| indices.iter().map(|&i| modes[i]).collect()),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.media.is_empty() {
            return Err(Error::Domain(format!("set {} is empty", self.set_id)));
        }
        if let Some(modes) = &self.planted_mode {
            if modes.len() != self.media.len() {
                return Err(Error::Shape(format!(
                    "set {}: {} planted labels for {} media",
                    self.set_id,
                    modes.len(),
                    self.media.len()
                )));
            }
        }
        for m in &self.media {
            if m.vector.len() != dim {
                return Err(Error::Shape(format!(
                    "medium {} has dimension {}, expected {dim}",
                    m.media_id,
                    m.vector.len()
                )));
            }
            if m.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "medium {} has non-finite entries",
                    m.media_id
                )));
            }
        }
        Ok(())
    }
}

/// Binary pair label: 0 = genuine (same subject), 1 = imposter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SetPair {
    pub a: u64,
    pub b: u64,
    pub label: u8,
}

impl SetPair {
    pub fn is_genuine(&self) -> bool {
        self.label == 0
    }

    /// True when the pair denotes the two halves of one set.
    pub fn is_split(&self) -> bool {
        self.a == self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub sets: Vec<MediaSet>,
}

impl Dataset {
    pub fn new(dim: usize, sets: Vec<MediaSet>) -> Result<Self> {
        let ds = Dataset { dim, sets };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        let mut set_ids = HashSet::new();
        let mut media_ids = HashSet::new();
        for s in &self.sets {
            s.validate(self.dim)?;
            if !set_ids.insert(s.set_id) {
                return Err(Error::Domain(format!("duplicate set id {}", s.set_id)));
            }
            for m in &s.media {
                if !media_ids.insert(m.media_id) {
                    return Err(Error::Domain(format!("duplicate media id {}", m.media_id)));
                }
            }
        }
        Ok(())
    }

    pub fn set(&self, set_id: u64) -> Option<&MediaSet> {
        self.sets.iter().find(|s| s.set_id == set_id)
    }

    pub fn media_count(&self) -> usize {
        self.sets.iter().map(MediaSet::len).sum()
    }

    /// Set indices grouped by subject, ordered by subject id.
    pub fn sets_by_subject(&self) -> BTreeMap<u64, Vec<usize>> {
        let mut out: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.sets.iter().enumerate() {
            out.entry(s.subject_id).or_default().push(i);
        }
        out
    }

    /// Deterministic uniform split of a set into two disjoint halves. The
    /// shuffle is seeded from the set id so pair files stay reproducible.
    pub fn split_halves(set: &MediaSet) -> Result<(MediaSet, MediaSet)> {
        if set.len() < 2 {
            return Err(Error::Domain(format!(
                "set {} has {} media and cannot be split",
                set.set_id,
                set.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(set.set_id ^ SPLIT_SALT);
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut rng);
        let half = set.len() / 2;
        let (mut first, mut second) = (order[..half].to_vec(), order[half..].to_vec());
        first.sort_unstable();
        second.sort_unstable();
        Ok((set.select(&first), set.select(&second)))
    }

    /// Materializes both sides of a pair.
    pub fn resolve_pair(&self, pair: &SetPair) -> Result<(MediaSet, MediaSet)> {
        let lookup = |id: u64| {
            self.set(id)
                .ok_or_else(|| Error::Domain(format!("pair references unknown set {id}")))
        };
        if pair.is_split() {
            Self::split_halves(lookup(pair.a)?)
        } else {
            Ok((lookup(pair.a)?.clone(), lookup(pair.b)?.clone()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub modes_per_subject: usize,
    pub sets_per_subject: usize,
    pub min_media: usize,
    pub max_media: usize,
    pub dim: usize,
    /// RMS norm of the per-medium noise around its mode point.
    pub mode_noise: f64,
    /// RMS norm of each mode's offset from the subject center.
    pub mode_offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 20,
            modes_per_subject: 3,
            sets_per_subject: 1,
            min_media: 12,
            max_media: 24,
            dim: 32,
            mode_noise: 0.05,
            mode_offset: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_subjects", self.n_subjects),
            ("modes_per_subject", self.modes_per_subject),
            ("sets_per_subject", self.sets_per_subject),
            ("min_media", self.min_media),
            ("dim", self.dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.max_media < self.min_media {
            return Err(Error::Config(format!(
                "media range {}..={} is empty",
                self.min_media, self.max_media
            )));
        }
        if !(self.mode_noise >= 0.0 && self.mode_noise.is_finite()) {
            return Err(Error::Config(format!(
                "mode_noise must be >= 0, got {}",
                self.mode_noise
            )));
        }
        if !(self.mode_offset >= 0.0 && self.mode_offset.is_finite()) {
            return Err(Error::Config(format!(
                "mode_offset must be >= 0, got {}",
                self.mode_offset
            )));
        }
        Ok(())
    }

    /// Applies `key=value` lines (`#` comments) over `self`.
    pub fn apply_config_text(mut self, text: &str) -> Result<Self> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Config(format!("line {}: {m}", idx + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || err(format!("invalid value `{value}` for {key}"));
            match key {
                "n_subjects" => self.n_subjects = value.parse().map_err(|_| bad())?,
                "modes_per_subject" => self.modes_per_subject = value.parse().map_err(|_| bad())?,
                "sets_per_subject" => self.sets_per_subject = value.parse().map_err(|_| bad())?,
                "min_media" => self.min_media = value.parse().map_err(|_| bad())?,
                "max_media" => self.max_media = value.parse().map_err(|_| bad())?,
                "dim" => self.dim = value.parse().map_err(|_| bad())?,
                "mode_noise" => self.mode_noise = value.parse().map_err(|_| bad())?,
                "mode_offset" => self.mode_offset = value.parse().map_err(|_| bad())?,
                "seed" => self.seed = value.parse().map_err(|_| bad())?,
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Generates subjects with unit-norm centers, `modes_per_subject` modes
/// around each center and noisy media around the modes. Mode labels are
/// balanced within each set and recorded as `planted_mode`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coord_scale = 1.0 / (cfg.dim as f64).sqrt();
    let mut sets = Vec::with_capacity(cfg.n_subjects * cfg.sets_per_subject);
    let mut next_media = 0u64;

    for subject in 0..cfg.n_subjects {
        let center = normalized(gaussian_vec(&mut rng, cfg.dim, 1.0));
        let modes: Vec<Vec<f64>> = (0..cfg.modes_per_subject)
            .map(|_| {
                let offset = gaussian_vec(&mut rng, cfg.dim, cfg.mode_offset * coord_scale);
                normalized(center.iter().zip(&offset).map(|(c, o)| c + o).collect())
            })
            .collect();

        for _ in 0..cfg.sets_per_subject {
            let n = rng.random_range(cfg.min_media..=cfg.max_media);
            let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.modes_per_subject).collect();
            labels.shuffle(&mut rng);
            let media = labels
                .iter()
                .map(|&mode| {
                    let noise = gaussian_vec(&mut rng, cfg.dim, cfg.mode_noise * coord_scale);
                    let modality = if rng.random_bool(0.5) {
                        Modality::VideoFrame
                    } else {
                        Modality::Image
                    };
                    let media_id = next_media;
                    next_media += 1;
                    MediaFeature {
                        media_id,
                        modality,
                        vector: modes[mode].iter().zip(&noise).map(|(m, e)| m + e).collect(),
                    }
                })
                .collect();
            sets.push(MediaSet {
                set_id: sets.len() as u64,
                subject_id: subject as u64,
                media,
                planted_mode: Some(labels),
            });
        }
    }
    Dataset::new(cfg.dim, sets)
}

/// Resamples a set to exactly `r` media. Small sets keep every original and
/// are topped up with jittered copies of uniformly drawn media; large sets
/// are subsampled without replacement (original order kept).
pub fn balance_set(set: &MediaSet, r: usize, jitter: f64, rng: &mut impl Rng) -> Result<MediaSet> {
    if set.is_empty() {
        return Err(Error::Domain(format!(
            "cannot balance empty set {}",
            set.set_id
        )));
    }
    if r == 0 {
        return Err(Error::Config("balance size R must be at least 1".into()));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::Config(format!("jitter must be >= 0, got {jitter}")));
    }
    let n = set.len();
    if n == r {
        return Ok(set.clone());
    }
    if n > r {
        let mut keep = index::sample(rng, n, r).into_vec();
        keep.sort_unstable();
        return Ok(set.select(&keep));
    }

    let mut out = set.clone();
    for _ in n..r {
        let src = rng.random_range(0..n);
        let mut copy = set.media[src].clone();
        if jitter > 0.0 {
            for v in copy.vector.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += jitter * z;
            }
        }
        out.media.push(copy);
        if let (Some(dst), Some(modes)) = (out.planted_mode.as_mut(), set.planted_mode.as_ref()) {
            dst.push(modes[src]);
        }
    }
    Ok(out)
}

/// Samples `n_pairs` set pairs, `round(n_pairs * genuine_fraction)` of them
/// genuine. Genuine pairs use two sets of one subject when available and
/// otherwise the two halves of a single set.
pub fn sample_pairs(
    ds: &Dataset,
    n_pairs: usize,
    genuine_fraction: f64,
    rng: &mut impl Rng,
) -> Result<Vec<SetPair>> {
    if !(0.0..=1.0).contains(&genuine_fraction) {
        return Err(Error::Config(format!(
            "genuine_fraction must lie in [0, 1], got {genuine_fraction}"
        )));
    }
    let n_genuine = (n_pairs as f64 * genuine_fraction).round() as usize;
    let n_imposter = n_pairs - n_genuine;

    let by_subject = ds.sets_by_subject();
    let subjects: Vec<&Vec<usize>> = by_subject.values().collect();
    let genuine_pool: Vec<&Vec<usize>> = subjects
        .iter()
        .copied()
        .filter(|sets| sets.len() >= 2 || ds.sets[sets[0]].len() >= 2)
        .collect();

    if n_genuine > 0 && genuine_pool.is_empty() {
        return Err(Error::Domain(
            "no genuine pair can be built: every subject has a single one-medium set".into(),
        ));
    }
    if n_imposter > 0 && subjects.len() < 2 {
        return Err(Error::Domain(
            "imposter pairs need at least two subjects".into(),
        ));
    }

    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_genuine {
        let sets = genuine_pool[rng.random_range(0..genuine_pool.len())];
        let pair = if sets.len() >= 2 {
            let pick = index::sample(rng, sets.len(), 2);
            SetPair {
                a: ds.sets[sets[pick.index(0)]].set_id,
                b: ds.sets[sets[pick.index(1)]].set_id,
                label: 0,
            }
        } else {
            let id = ds.sets[sets[0]].set_id;
            SetPair {
                a: id,
                b: id,
                label: 0,
            }
        };
        pairs.push(pair);
    }
    for _ in 0..n_imposter {
        let pick = index::sample(rng, subjects.len(), 2);
        let sa = subjects[pick.index(0)];
        let sb = subjects[pick.index(1)];
        pairs.push(SetPair {
            a: ds.sets[sa[rng.random_range(0..sa.len())]].set_id,
            b: ds.sets[sb[rng.random_range(0..sb.len())]].set_id,
            label: 1,
        });
    }
    pairs.shuffle(rng);
    Ok(pairs)
}

pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{HEADER_MAGIC} {HEADER_VERSION} dim={} sets={} media={}",
        ds.dim,
        ds.sets.len(),
        ds.media_count()
    );
    for s in &ds.sets {
        for (i, m) in s.media.iter().enumerate() {
            let _ = write!(
                out,
                "{} {} {} {}",
                s.subject_id,
                s.set_id,
                m.media_id,
                m.modality.code()
            );
            for v in &m.vector {
                // `{}` on f64 prints the shortest string that parses back bit-exactly.
                let _ = write!(out, " {v}");
            }
            if let Some(modes) = &s.planted_mode {
                let _ = write!(out, " #mode={}", modes[i]);
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

fn parse_header(line: &str) -> Result<(usize, Option<usize>, Option<usize>)> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(HEADER_MAGIC) || tokens.next() != Some(HEADER_VERSION) {
        return Err(bad(format!(
            "expected `{HEADER_MAGIC} {HEADER_VERSION} dim=<d>` header"
        )));
    }
    let (mut dim, mut sets, mut media) = (None, None, None);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header field `{tok}`")))?;
        let value: usize = value
            .parse()
            .map_err(|_| bad(format!("header field `{key}` is not an integer")))?;
        match key {
            "dim" => dim = Some(value),
            "sets" => sets = Some(value),
            "media" => media = Some(value),
            _ => return Err(bad(format!("unknown header field `{key}`"))),
        }
    }
    let dim = dim.ok_or_else(|| bad("header is missing dim=".into()))?;
    if dim == 0 {
        return Err(bad("dim must be at least 1".into()));
    }
    Ok((dim, sets, media))
}

/// Parses the dataset text format. Lines are numbered from 1 (the header).
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let (dim, expected_sets, expected_media) = parse_header(header)?;
    let unterminated_tail = !text.ends_with('\n');
    let last_line = text.lines().count();

    let mut sets: Vec<MediaSet> = Vec::new();
    let mut media_total = 0usize;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let body = raw.trim();
        if body.is_empty() {
            continue;
        }
        let mut record = || -> Result<()> {
            let parse_err = |msg: String| Error::Parse { line: line_no, msg };
            let (values_part, mode) = match body.split_once('#') {
                Some((head, tail)) => {
                    let label = tail.trim().strip_prefix("mode=").ok_or_else(|| {
                        parse_err(format!("unknown annotation `#{}`", tail.trim()))
                    })?;
                    let label: usize = label.parse().map_err(|_| {
                        parse_err(format!("mode label `{label}` is not an integer"))
                    })?;
                    (head, Some(label))
                }
                None => (body, None),
            };
            let tokens: Vec<&str> = values_part.split_whitespace().collect();
            if tokens.len() < 4 {
                return Err(parse_err(format!(
                    "record has {} fields, expected at least 4",
                    tokens.len()
                )));
            }
            let int = |i: usize, name: &str| -> Result<u64> {
                tokens[i]
                    .parse()
                    .map_err(|_| parse_err(format!("{name} `{}` is not an integer", tokens[i])))
            };
            let subject_id = int(0, "subject_id")?;
            let set_id = int(1, "set_id")?;
            let media_id = int(2, "media_id")?;
            let modality = u8::try_from(int(3, "modality")?)
                .ok()
                .and_then(Modality::from_code)
                .ok_or_else(|| parse_err(format!("modality `{}` must be 0 or 1", tokens[3])))?;
            let vector = tokens[4..]
                .iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| parse_err(format!("value `{t}` is not a number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if vector.len() != dim {
                return Err(Error::Format {
                    line: line_no,
                    msg: format!(
                        "record has dimension {}, header declares {dim}",
                        vector.len()
                    ),
                });
            }
            if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
                return Err(parse_err(format!("non-finite value {bad}")));
            }

            let medium = MediaFeature {
                media_id,
                modality,
                vector,
            };
            match sets.last_mut() {
                Some(s) if s.set_id == set_id => {
                    if s.subject_id != subject_id {
                        return Err(parse_err(format!(
                            "set {set_id} changes subject from {} to {subject_id}",
                            s.subject_id
                        )));
                    }
                    if s.planted_mode.is_some() != mode.is_some() {
                        return Err(parse_err(format!(
                            "set {set_id} mixes labelled and unlabelled media"
                        )));
                    }
                    s.media.push(medium);
                    if let (Some(modes), Some(m)) = (s.planted_mode.as_mut(), mode) {
                        modes.push(m);
                    }
                }
                _ => {
                    if sets.iter().any(|s| s.set_id == set_id) {
                        return Err(parse_err(format!("set {set_id} is not contiguous")));
                    }
                    sets.push(MediaSet {
                        set_id,
                        subject_id,
                        media: vec![medium],
                        planted_mode: mode.map(|m| vec![m]),
                    });
                }
            }
            Ok(())
        };
        if let Err(e) = record() {
            // a damaged final line without its newline is a cut-off write
            if unterminated_tail && line_no == last_line {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("truncated record ({e})"),
                });
            }
            return Err(e);
        }
        media_total += 1;
    }

    let end = last_line + 1;
    if let Some(n) = expected_media {
        if n != media_total {
            return Err(Error::Parse {
                line: end,
                msg: format!("truncated file: header declares {n} media, found {media_total}"),
            });
        }
    }
    if let Some(n) = expected_sets {
        if n != sets.len() {
            return Err(Error::Parse {
                line: end,
                msg: format!("header declares {n} sets, found {}", sets.len()),
            });
        }
    }
    Dataset::new(dim, sets)
}

pub fn format_pairs(pairs: &[SetPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{} {} {}", p.a, p.b, p.label);
    }
    out
}

pub fn save_pairs(pairs: &[SetPair], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_pairs(pairs))?;
    Ok(())
}

pub fn parse_pairs(text: &str) -> Result<Vec<SetPair>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields, found {}", tokens.len()),
            });
        }
        let num = |t: &str| -> Result<u64> {
            t.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("`{t}` is not an integer"),
            })
        };
        let label = num(tokens[2])?;
        if label > 1 {
            return Err(Error::Parse {
                line,
                msg: format!("label {label} must be 0 or 1"),
            });
        }
        out.push(SetPair {
            a: num(tokens[0])?,
            b: num(tokens[1])?,
            label: label as u8,
        });
    }
    Ok(out)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<SetPair>> {
    parse_pairs(&fs::read_to_string(path)?)
}
