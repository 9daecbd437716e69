//! Spectral-cube ingestion and the patch sampling protocol: per-band
//! normalization, mirror-padded patch extraction around labeled pixels,
//! stratified train/test splitting, and minority-class replication.
//!
//! Patches are materialized lazily: a `PatchSet` holds pixel coordinates
//! into a shared cube and builds patch tensors per batch, so a full
//! 145x145x200 scene never expands into thousands of stored patches.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{Rng, Seeds};
use crate::tensor::{read_ascii_line, Tensor};

/// Per-class labeled-pixel counts of the Indian Pines ground truth
/// (16 classes, 10249 labeled pixels on a 145x145 grid, 200 bands).
pub const INDIAN_PINES_CLASS_COUNTS: [usize; 16] = [
    46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205, 1265, 386, 93,
];

/// Per-class labeled-pixel counts of the Kennedy Space Center ground truth
/// (13 classes, 5211 labeled pixels, 176 bands).
pub const KSC_CLASS_COUNTS: [usize; 13] = [
    761, 243, 256, 252, 161, 229, 105, 431, 520, 404, 419, 503, 927,
];

/// A hyperspectral scene: row-major [h, w, c] reflectance values.
pub struct HsiCube {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    values: Vec<f64>,
}

impl HsiCube {
    /// All extents must be >= 1, the value count must match them, and every
    /// value must be finite.
    pub fn new(h: usize, w: usize, c: usize, values: Vec<f64>) -> Result<HsiCube> {
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Data(format!(
                "cube extents must be >= 1, got {h}x{w}x{c}"
            )));
        }
        let len = checked_volume(&[h, w, c])?;
        if values.len() != len {
            return Err(Error::Data(format!(
                "cube {h}x{w}x{c} needs {len} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("cube contains non-finite value {bad}")));
        }
        Ok(HsiCube { h, w, c, values })
    }

    pub fn at(&self, i: usize, j: usize, z: usize) -> f64 {
        self.values[(i * self.w + j) * self.c + z]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Writes the container format: ASCII `HSC1 <h> <w> <c>\n` then h*w*c
    /// little-endian 32-bit floats, row-major over h, w, then c.
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "HSC1 {} {} {}", self.h, self.w, self.c)?;
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the container format; values widen to f64.
    pub fn read(r: &mut impl Read) -> Result<HsiCube> {
        let (h, wd, c) = parse_extent_header(r, "HSC1")?;
        let len = checked_volume(&[h, wd, c])?;
        let mut values = Vec::with_capacity(len);
        let mut buf = [0u8; 4];
        for i in 0..len {
            r.read_exact(&mut buf).map_err(|e| {
                Error::Format(format!("truncated cube payload at value {i}/{len}: {e}"))
            })?;
            values.push(f32::from_le_bytes(buf) as f64);
        }
        HsiCube::new(h, wd, c, values)
    }
}

/// Ground-truth grid: 0 marks unlabeled pixels, 1..=k the classes.
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    /// Number of classes.
    pub k: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, k: usize, labels: Vec<u16>) -> Result<LabelMap> {
        if h == 0 || w == 0 {
            return Err(Error::Data(format!(
                "label extents must be >= 1, got {h}x{w}"
            )));
        }
        if k == 0 || k > u16::MAX as usize {
            return Err(Error::Data(format!("class count {k} out of range")));
        }
        if labels.len() != h * w {
            return Err(Error::Data(format!(
                "label grid {h}x{w} needs {} cells, got {}",
                h * w,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|l| **l as usize > k) {
            return Err(Error::Data(format!("label {bad} exceeds class count {k}")));
        }
        Ok(LabelMap { h, w, k, labels })
    }

    pub fn at(&self, i: usize, j: usize) -> u16 {
        self.labels[i * self.w + j]
    }

    /// Labeled-pixel count per class, indexed 0..k for classes 1..=k.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| **l > 0).count()
    }

    /// Writes the container format: ASCII `LBL1 <h> <w> <k>\n` then h*w
    /// little-endian unsigned 16-bit labels.
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "LBL1 {} {} {}", self.h, self.w, self.k)?;
        for l in &self.labels {
            w.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<LabelMap> {
        let (h, wd, k) = parse_extent_header(r, "LBL1")?;
        let len = checked_volume(&[h, wd])?;
        let mut labels = Vec::with_capacity(len);
        let mut buf = [0u8; 2];
        for i in 0..len {
            r.read_exact(&mut buf).map_err(|e| {
                Error::Format(format!("truncated label payload at cell {i}/{len}: {e}"))
            })?;
            labels.push(u16::from_le_bytes(buf));
        }
        LabelMap::new(h, wd, k, labels)
    }
}

/// Parses `<magic> <a> <b> <c>\n`, rejecting wrong magic or malformed extents.
fn parse_extent_header(r: &mut impl Read, magic: &str) -> Result<(usize, usize, usize)> {
    let header = read_ascii_line(r)?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(magic) {
        return Err(Error::Format(format!(
            "bad magic in header {header:?}, expected {magic}"
        )));
    }
    let mut extent = || -> Result<usize> {
        parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad extent in header {header:?}")))
    };
    let out = (extent()?, extent()?, extent()?);
    if parts.next().is_some() {
        return Err(Error::Format(format!(
            "trailing tokens in header {header:?}"
        )));
    }
    Ok(out)
}

/// Element count with overflow and size-cap checks (2^31 elements).
fn checked_volume(extents: &[usize]) -> Result<usize> {
    let len = extents
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|len| *len <= 1 << 31)
        .ok_or_else(|| Error::Format(format!("extents {extents:?} overflow the size cap")))?;
    Ok(len)
}

fn open_reader(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Ok(std::io::BufReader::new(file))
}

/// Rejects bytes past the declared payload; cube and label files are
/// standalone containers.
fn expect_eof(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::Format(format!(
            "{}: trailing bytes after declared payload",
            path.display()
        ))),
        Err(e) => Err(Error::Io(e)),
    }
}

pub fn load_cube(path: &Path) -> Result<HsiCube> {
    let mut r = open_reader(path)?;
    let cube = HsiCube::read(&mut r)?;
    expect_eof(&mut r, path)?;
    Ok(cube)
}

pub fn save_cube(path: &Path, cube: &HsiCube) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    cube.write(&mut w)
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let mut r = open_reader(path)?;
    let labels = LabelMap::read(&mut r)?;
    expect_eof(&mut r, path)?;
    Ok(labels)
}

pub fn save_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    labels.write(&mut w)
}

/// Rescales every band to zero mean and unit variance: (v - mu)/(sigma + 1e-8)
/// with statistics over all pixels. Constant bands map to zero.
pub fn normalize_bands(cube: &HsiCube) -> HsiCube {
    let all: Vec<(usize, usize)> = (0..cube.h)
        .flat_map(|i| (0..cube.w).map(move |j| (i, j)))
        .collect();
    normalize_bands_over(cube, &all).expect("full pixel set is never empty")
}

/// As `normalize_bands`, but the statistics come from the listed pixels only
/// (e.g. training pixels) while the rescaling still applies everywhere.
pub fn normalize_bands_over(cube: &HsiCube, pixels: &[(usize, usize)]) -> Result<HsiCube> {
    if pixels.is_empty() {
        return Err(Error::Contract(
            "normalization needs at least one pixel".into(),
        ));
    }
    let c = cube.c;
    let n = pixels.len() as f64;
    let mut mean = vec![0.0; c];
    for &(i, j) in pixels {
        let row = &cube.values[(i * cube.w + j) * c..][..c];
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; c];
    for &(i, j) in pixels {
        let row = &cube.values[(i * cube.w + j) * c..][..c];
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / ((s / n).sqrt() + 1e-8)).collect();
    let mut values = Vec::with_capacity(cube.values.len());
    for row in cube.values.chunks(c) {
        for ((v, m), is) in row.iter().zip(&mean).zip(&inv_std) {
            values.push((v - m) * is);
        }
    }
    HsiCube::new(cube.h, cube.w, c, values)
}

/// Which split a patch set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// All labeled pixels, before any train/test split.
    All,
    Train,
    Test,
}

/// Labeled patch centers over a shared cube. Patch tensors are built on
/// demand by `batch`; coordinates and the originating seed are the
/// provenance that makes split disjointness checkable.
pub struct PatchSet {
    cube: Arc<HsiCube>,
    size: usize,
    num_classes: usize,
    split: Split,
    coords: Vec<(usize, usize)>,
    /// 0-based class index per patch (label map value minus one).
    labels: Vec<usize>,
    /// Root seed of the split that produced this set; None for the raw
    /// extraction, which is deterministic.
    seed: Option<u64>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn cube(&self) -> &Arc<HsiCube> {
        &self.cube
    }

    /// Patch count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Materializes the patches at `idx` as one [b, size, size, c] tensor
    /// plus their class indices. Borders mirror around the edge pixel.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let s = self.size;
        let c = self.cube.c;
        let pad = s / 2;
        let mut values = vec![0.0; idx.len() * s * s * c];
        for (bi, &i) in idx.iter().enumerate() {
            let (ci, cj) = *self.coords.get(i).ok_or_else(|| {
                Error::Contract(format!(
                    "patch index {i} out of range ({} patches)",
                    self.len()
                ))
            })?;
            let dst = &mut values[bi * s * s * c..][..s * s * c];
            for di in 0..s {
                let ii = reflect(ci as isize + di as isize - pad as isize, self.cube.h);
                for dj in 0..s {
                    let jj = reflect(cj as isize + dj as isize - pad as isize, self.cube.w);
                    let src = &self.cube.values[(ii * self.cube.w + jj) * c..][..c];
                    dst[(di * s + dj) * c..][..c].copy_from_slice(src);
                }
            }
        }
        let t = Tensor::new(&[idx.len(), s, s, c], values)?;
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((t, labels))
    }

    /// Single patch as [1, size, size, c].
    pub fn patch(&self, i: usize) -> Result<Tensor> {
        Ok(self.batch(&[i])?.0)
    }

    fn subset(&self, idx: &[usize], split: Split, seed: Option<u64>) -> PatchSet {
        PatchSet {
            cube: Arc::clone(&self.cube),
            size: self.size,
            num_classes: self.num_classes,
            split,
            coords: idx.iter().map(|&i| self.coords[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            seed,
        }
    }
}

/// Mirror-reflection of an out-of-range index around the border pixel
/// (-1 -> 1, extent -> extent-2). Valid for offsets up to extent-1.
fn reflect(p: isize, extent: usize) -> usize {
    let e = extent as isize;
    let mut p = p;
    if p < 0 {
        p = -p;
    }
    if p >= e {
        p = 2 * (e - 1) - p;
    }
    debug_assert!((0..e).contains(&p));
    p as usize
}

/// One patch per labeled pixel, centered on it, in row-major scan order.
/// `size` must be odd so patches center exactly; the implied padding
/// (size/2) must stay below both cube extents for single-reflection mirrors.
pub fn extract_patches(cube: &Arc<HsiCube>, labels: &LabelMap, size: usize) -> Result<PatchSet> {
    if size.is_multiple_of(2) || size == 0 {
        return Err(Error::Contract(format!(
            "patch size must be odd, got {size}"
        )));
    }
    if labels.h != cube.h || labels.w != cube.w {
        return Err(Error::Data(format!(
            "label grid {}x{} does not match cube {}x{}",
            labels.h, labels.w, cube.h, cube.w
        )));
    }
    let pad = size / 2;
    if pad >= cube.h || pad >= cube.w {
        return Err(Error::Contract(format!(
            "patch size {size} pads beyond the {}x{} scene",
            cube.h, cube.w
        )));
    }
    let mut coords = Vec::new();
    let mut classes = Vec::new();
    for i in 0..labels.h {
        for j in 0..labels.w {
            let l = labels.at(i, j);
            if l > 0 {
                coords.push((i, j));
                classes.push(l as usize - 1);
            }
        }
    }
    Ok(PatchSet {
        cube: Arc::clone(cube),
        size,
        num_classes: labels.k,
        split: Split::All,
        coords,
        labels: classes,
        seed: None,
    })
}

/// Stratified split: per class, `rule(count)` random patches go to training
/// and the rest to test. Every class must be present on both sides.
fn split_by_rule(
    set: &PatchSet,
    seeds: &Seeds,
    rule: impl Fn(usize) -> usize,
) -> Result<(PatchSet, PatchSet)> {
    let counts = set.class_counts();
    let mut rng = seeds.split();
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (cls, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::Data(format!("class {} has no patches", cls + 1)));
        }
        let mut members: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == cls).collect();
        members.shuffle(&mut rng);
        let take = rule(count);
        if take == 0 || take >= count {
            return Err(Error::Data(format!(
                "class {}: rule takes {take} of {count} patches, leaving an empty side",
                cls + 1
            )));
        }
        train_idx.extend_from_slice(&members[..take]);
        test_idx.extend_from_slice(&members[take..]);
    }
    // Row-major order keeps provenance readable; training reshuffles anyway.
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        set.subset(&train_idx, Split::Train, Some(seeds.root)),
        set.subset(&test_idx, Split::Test, Some(seeds.root)),
    ))
}

/// Per class: if `fraction` of the class count falls below `cap`, take the
/// ceiling of that fraction; otherwise take exactly `cap`.
pub fn split_capped(
    set: &PatchSet,
    fraction: f64,
    cap: usize,
    seeds: &Seeds,
) -> Result<(PatchSet, PatchSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!(
            "fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    if cap == 0 {
        return Err(Error::Contract("cap must be >= 1".into()));
    }
    split_by_rule(set, seeds, move |count| {
        let want = fraction * count as f64;
        if want < cap as f64 {
            want.ceil() as usize
        } else {
            cap
        }
    })
}

/// The Indian Pines protocol: 30% of each class for training, capped at 80
/// samples for the richer classes. Requires the full 16-class ground truth.
pub fn split_indian_pines(set: &PatchSet, seeds: &Seeds) -> Result<(PatchSet, PatchSet)> {
    if set.num_classes != INDIAN_PINES_CLASS_COUNTS.len() {
        return Err(Error::Data(format!(
            "expected {} classes, got {}",
            INDIAN_PINES_CLASS_COUNTS.len(),
            set.num_classes
        )));
    }
    split_capped(set, 0.3, 80, seeds)
}

/// Plain stratified fraction split: ceil(fraction * count) per class.
pub fn split_fraction(
    set: &PatchSet,
    fraction: f64,
    seeds: &Seeds,
) -> Result<(PatchSet, PatchSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!(
            "fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    split_by_rule(set, seeds, move |count| {
        (fraction * count as f64).ceil() as usize
    })
}

/// Oversamples classes below `target` by whole-copy replication (every
/// member repeats floor(target/count) times) plus a random remainder, so
/// each class reaches exactly `target`. Classes at or above it are
/// untouched, as is anything outside the given training set.
pub fn replicate_minority(train: &PatchSet, target: usize, seeds: &Seeds) -> Result<PatchSet> {
    if train.split != Split::Train {
        return Err(Error::Contract(
            "replication applies to training sets only".into(),
        ));
    }
    if target == 0 {
        return Err(Error::Contract("replication target must be >= 1".into()));
    }
    let mut rng = seeds.stream("replicate");
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for cls in 0..train.num_classes {
        let members: Vec<usize> = (0..train.len())
            .filter(|&i| train.labels[i] == cls)
            .collect();
        if members.is_empty() {
            return Err(Error::Data(format!(
                "class {} has no training patches",
                cls + 1
            )));
        }
        let n = members.len();
        if n >= target {
            continue;
        }
        let deficit = target - n;
        for _ in 0..deficit / n {
            idx.extend_from_slice(&members);
        }
        let mut fill = members;
        fill.shuffle(&mut rng);
        idx.extend_from_slice(&fill[..deficit % n]);
    }
    Ok(train.subset(&idx, Split::Train, train.seed.or(Some(seeds.root))))
}

/// Named dataset protocols the command line can select.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    IndianPines,
    Ksc,
}

impl std::str::FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Dataset> {
        match s {
            "indian" | "indian_pines" => Ok(Dataset::IndianPines),
            "ksc" => Ok(Dataset::Ksc),
            other => Err(Error::Config(format!(
                "unknown dataset {other:?}, expected indian or ksc"
            ))),
        }
    }
}

impl std::fmt::Display for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dataset::IndianPines => "indian",
            Dataset::Ksc => "ksc",
        })
    }
}

impl Dataset {
    /// Applies the dataset's sampling protocol: capped 30% for Indian Pines
    /// with minorities replicated up to the 80-sample cap, a stratified 10%
    /// for KSC with no replication.
    pub fn prepare_splits(&self, set: &PatchSet, seeds: &Seeds) -> Result<(PatchSet, PatchSet)> {
        self.prepare_splits_with(set, seeds, None)
    }

    /// The sampling protocol with an optional scale-down: after the protocol
    /// split, keep `train_fraction` of the training pixels per class (the
    /// discarded remainder joins neither side) and shrink the replication
    /// target proportionally. The test side is the full protocol test split.
    pub fn prepare_splits_with(
        &self,
        set: &PatchSet,
        seeds: &Seeds,
        train_fraction: Option<f64>,
    ) -> Result<(PatchSet, PatchSet)> {
        match self {
            Dataset::IndianPines => {
                let (train, test) = split_indian_pines(set, seeds)?;
                let (train, target) = match train_fraction {
                    None => (train, 80),
                    Some(f) => {
                        let (sub, _) = split_fraction(&train, f, &seeds.derive("scale"))?;
                        (sub, (80.0 * f).ceil() as usize)
                    }
                };
                let train = replicate_minority(&train, target, seeds)?;
                Ok((train, test))
            }
            Dataset::Ksc => {
                let (train, test) = split_fraction(set, 0.1, seeds)?;
                let train = match train_fraction {
                    None => train,
                    Some(f) => split_fraction(&train, f, &seeds.derive("scale"))?.0,
                };
                Ok((train, test))
            }
        }
    }
}

/// Recipe for a synthetic labeled scene: class blobs grown on the grid,
/// spectra built from per-class codes that live only on the informative
/// bands, plus decoy objects painted on all the others. The decoys are
/// region-grown shapes with their own spectral codes but no relation to
/// the true labels, so the uninformative bands look like a legitimate
/// scene of other materials. Band weighting pays off exactly when those
/// decoy bands drown the signal ones: per-band rescaling cannot remove
/// spatial structure, and a full-band classifier keeps tripping over it.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub class_counts: Vec<usize>,
    /// Bands carrying class information.
    pub informative: std::ops::Range<usize>,
    /// Amplitude of the per-class spectral codes.
    pub signal: f64,
    /// Noise sigma on every band.
    pub band_noise: f64,
    /// Amplitude of the decoy-object codes on uninformative bands.
    pub clutter: f64,
}

impl SynthSpec {
    /// Scene with the Indian Pines ground-truth histogram and band count.
    pub fn indian_pines() -> SynthSpec {
        SynthSpec {
            h: 145,
            w: 145,
            c: 200,
            class_counts: INDIAN_PINES_CLASS_COUNTS.to_vec(),
            informative: 44..60,
            signal: 0.3,
            band_noise: 0.25,
            clutter: 2.5,
        }
    }

    /// Scene with the Kennedy Space Center histogram and band count.
    pub fn ksc() -> SynthSpec {
        SynthSpec {
            h: 256,
            w: 256,
            c: 176,
            class_counts: KSC_CLASS_COUNTS.to_vec(),
            informative: 30..54,
            signal: 0.6,
            band_noise: 0.25,
            clutter: 1.0,
        }
    }

    /// Minute three-class scene for demos and command-line smoke tests.
    pub fn demo() -> SynthSpec {
        SynthSpec {
            h: 24,
            w: 24,
            c: 12,
            class_counts: vec![40, 40, 40],
            informative: 3..7,
            signal: 1.0,
            band_noise: 0.15,
            clutter: 0.8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.class_counts.is_empty() || self.class_counts.contains(&0) {
            return Err(Error::Data(format!(
                "every class needs at least one pixel, got {:?}",
                self.class_counts
            )));
        }
        let total: usize = self.class_counts.iter().sum();
        if total > self.h * self.w {
            return Err(Error::Data(format!(
                "{total} labeled pixels exceed the {}x{} grid",
                self.h, self.w
            )));
        }
        if self.informative.start >= self.informative.end || self.informative.end > self.c {
            return Err(Error::Data(format!(
                "informative band range {:?} does not fit {} bands",
                self.informative, self.c
            )));
        }
        Ok(())
    }
}

/// O(1) random draw / removal over the unassigned grid cells.
struct FreePool {
    cells: Vec<usize>,
    /// Position of each cell in `cells`, usize::MAX once taken.
    pos: Vec<usize>,
}

impl FreePool {
    fn new(n: usize) -> FreePool {
        FreePool {
            cells: (0..n).collect(),
            pos: (0..n).collect(),
        }
    }

    fn is_free(&self, cell: usize) -> bool {
        self.pos[cell] != usize::MAX
    }

    fn take(&mut self, cell: usize) {
        let i = self.pos[cell];
        debug_assert!(i != usize::MAX);
        self.cells.swap_remove(i);
        if i < self.cells.len() {
            self.pos[self.cells[i]] = i;
        }
        self.pos[cell] = usize::MAX;
    }

    fn random(&self, rng: &mut Rng) -> usize {
        self.cells[rng.gen_range(0..self.cells.len())]
    }
}

/// Grows one connected blob per class (re-seeding if a blob gets walled in)
/// until every class holds exactly its requested pixel count. Classes take
/// turns one pixel at a time, so blob sizes track the histogram.
pub fn synth_labels(spec: &SynthSpec, rng: &mut Rng) -> Result<LabelMap> {
    spec.validate()?;
    let (h, w, k) = (spec.h, spec.w, spec.class_counts.len());
    let mut grid = vec![0u16; h * w];
    let mut pool = FreePool::new(h * w);
    let mut remaining = spec.class_counts.clone();
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new(); k];
    let claim = |cell: usize,
                 cls: usize,
                 grid: &mut Vec<u16>,
                 pool: &mut FreePool,
                 frontier: &mut Vec<Vec<usize>>| {
        pool.take(cell);
        grid[cell] = (cls + 1) as u16;
        frontier[cls].push(cell);
    };
    for (cls, rem) in remaining.iter_mut().enumerate() {
        let cell = pool.random(rng);
        claim(cell, cls, &mut grid, &mut pool, &mut frontier);
        *rem -= 1;
    }
    let mut left: usize = remaining.iter().sum();
    while left > 0 {
        for cls in 0..k {
            if remaining[cls] == 0 {
                continue;
            }
            let cell = loop {
                if frontier[cls].is_empty() {
                    break pool.random(rng);
                }
                let fi = rng.gen_range(0..frontier[cls].len());
                let at = frontier[cls][fi];
                let (i, j) = (at / w, at % w);
                let mut open = [0usize; 4];
                let mut found = 0;
                if i > 0 && pool.is_free(at - w) {
                    open[found] = at - w;
                    found += 1;
                }
                if i + 1 < h && pool.is_free(at + w) {
                    open[found] = at + w;
                    found += 1;
                }
                if j > 0 && pool.is_free(at - 1) {
                    open[found] = at - 1;
                    found += 1;
                }
                if j + 1 < w && pool.is_free(at + 1) {
                    open[found] = at + 1;
                    found += 1;
                }
                if found == 0 {
                    frontier[cls].swap_remove(fi);
                    continue;
                }
                break open[rng.gen_range(0..found)];
            };
            claim(cell, cls, &mut grid, &mut pool, &mut frontier);
            remaining[cls] -= 1;
            left -= 1;
        }
    }
    LabelMap::new(h, w, k, grid)
}

/// Paints spectra over a label map: a smooth background curve everywhere,
/// per-class codes on the informative bands, decoy-object codes on the
/// rest, plus Gaussian pixel noise throughout. The decoy objects are grown
/// with the same region machinery as the labels but from an independent
/// draw, so their shapes carry no information about the true classes.
///
/// When the band count allows it, the scene additionally splits into two
/// terrain modes, large regions in which the class codes sit on different
/// band ranges (the spec's range, or its mirror at the top of the spectrum)
/// while the inactive range carries decoys like any other band. No single
/// fixed band weighting then suits every pixel; weighting bands per patch
/// pays, which is the situation that separates a learned attention mask
/// from plain convolution kernels. Narrow-spectrum scenes whose mirror
/// range would overlap fall back to one mode.
///
/// Values are rounded through f32 so the disk container round-trips
/// bit-exactly.
pub fn synth_cube(labels: &LabelMap, spec: &SynthSpec, rng: &mut Rng) -> Result<HsiCube> {
    spec.validate()?;
    if labels.k != spec.class_counts.len() {
        return Err(Error::Data(format!(
            "label map has {} classes, spec has {}",
            labels.k,
            spec.class_counts.len()
        )));
    }
    let c = spec.c;
    let unit = Normal::new(0.0, 1.0).expect("unit normal is well formed");
    let base: Vec<f64> = (0..c)
        .map(|z| 0.5 + 0.4 * (3.0 * std::f64::consts::TAU * z as f64 / c as f64).sin())
        .collect();
    let width = spec.informative.len();
    let range_a = spec.informative.clone();
    let mirror = (c - range_a.end)..(c - range_a.start);
    let two_mode = mirror.start >= range_a.end;
    // One code per class; in a two-mode scene the same code appears on
    // whichever range the pixel's mode makes active.
    let codes: Vec<Vec<f64>> = (0..labels.k)
        .map(|_| (0..width).map(|_| spec.signal * unit.sample(rng)).collect())
        .collect();
    // Many patch-scale decoy blobs rather than a few field-scale ones: a
    // handful of big decoys would give training and test patches the same
    // decoy context, which a full-band classifier learns to ignore. Small
    // blobs make every patch's decoy fingerprint distinctive instead.
    let decoy_classes = 4 * labels.k;
    let decoys = if width < c {
        let blob = labels.labeled_count().div_ceil(decoy_classes).max(1);
        let decoy_spec = SynthSpec {
            class_counts: vec![blob; decoy_classes],
            ..spec.clone()
        };
        Some(synth_labels(&decoy_spec, rng)?)
    } else {
        None
    };
    let decoy_codes: Vec<Vec<f64>> = (0..decoy_classes)
        .map(|_| (0..c).map(|_| spec.clutter * unit.sample(rng)).collect())
        .collect();
    // Mode map: four large lobes claim roughly half the scene for the
    // mirror range; everything unclaimed keeps the spec's range.
    let modes = if two_mode {
        let lobe = labels.h * labels.w / 8;
        let mode_spec = SynthSpec {
            class_counts: vec![lobe.max(1); 4],
            ..spec.clone()
        };
        Some(synth_labels(&mode_spec, rng)?)
    } else {
        None
    };
    let mut values = Vec::with_capacity(labels.h * labels.w * c);
    for cell in 0..labels.h * labels.w {
        let label = labels.labels[cell] as usize;
        let decoy = decoys.as_ref().map_or(0, |d| d.labels[cell] as usize);
        let mode = modes.as_ref().map_or(0, |m| usize::from(m.labels[cell] > 0));
        let active = if mode == 0 { &range_a } else { &mirror };
        for z in 0..c {
            let mut v = base[z];
            if active.contains(&z) {
                if label > 0 {
                    v += codes[label - 1][z - active.start];
                }
            } else if decoy > 0 {
                v += decoy_codes[decoy - 1][z];
            }
            v += spec.band_noise * unit.sample(rng);
            values.push((v as f32) as f64);
        }
    }
    HsiCube::new(labels.h, labels.w, c, values)
}

/// Labels plus cube from one seed, via dedicated named streams.
pub fn synthesize(spec: &SynthSpec, seed: u64) -> Result<(HsiCube, LabelMap)> {
    let seeds = Seeds::new(seed);
    let labels = synth_labels(spec, &mut seeds.stream("synth-labels"))?;
    let cube = synth_cube(&labels, spec, &mut seeds.stream("synth-cube"))?;
    Ok((cube, labels))
}
