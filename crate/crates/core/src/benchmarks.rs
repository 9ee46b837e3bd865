//! Sample generators for the long-memory tasks and the pixel-sequence MNIST
//! pipeline.
//!
//! All generators are pure functions of their arguments and the random
//! stream. Timesteps are zero-based: a sequence of length `T` runs over
//! `t = 0..T`, and "the last step" is `t = T - 1`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkKind {
    /// Output the first input of an i.i.d. Gaussian stream.
    CopyFirst,
    /// Recall five marked values from a two-channel stream.
    Denoising,
    /// Output the single nonzero input, placed uniformly at random.
    SparseCopy,
    /// Classify a digit shown pixel by pixel.
    SeqMnist,
}

impl BenchmarkKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::CopyFirst => "copy_first",
            BenchmarkKind::Denoising => "denoising",
            BenchmarkKind::SparseCopy => "sparse_copy",
            BenchmarkKind::SeqMnist => "seq_mnist",
        }
    }

    pub fn input_dim(self) -> usize {
        match self {
            BenchmarkKind::Denoising => 2,
            _ => 1,
        }
    }

    pub fn output_dim(self) -> usize {
        match self {
            BenchmarkKind::Denoising => 5,
            BenchmarkKind::SeqMnist => 10,
            _ => 1,
        }
    }

    pub fn is_classification(self) -> bool {
        self == BenchmarkKind::SeqMnist
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            BenchmarkKind::CopyFirst,
            BenchmarkKind::Denoising,
            BenchmarkKind::SparseCopy,
            BenchmarkKind::SeqMnist,
        ]
        .into_iter()
        .find(|k| k.name() == s.replace('-', "_"))
        .ok_or_else(|| Error::InvalidArgument(format!("unknown benchmark '{s}'")))
    }
}

/// Parameters of a synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpec {
    pub benchmark: BenchmarkKind,
    /// Sequence length.
    pub t: usize,
    /// Denoising forgetting period.
    pub n: usize,
    /// Trailing black pixels for MNIST.
    pub n_black: usize,
}

impl SampleSpec {
    pub fn new(benchmark: BenchmarkKind, t: usize) -> Self {
        SampleSpec {
            benchmark,
            t,
            n: 0,
            n_black: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.benchmark {
            BenchmarkKind::CopyFirst | BenchmarkKind::SparseCopy if self.t == 0 => {
                Err(Error::InvalidArgument("T must be >= 1".into()))
            }
            BenchmarkKind::Denoising => denoising_span(self.t, self.n).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Draws one sample. MNIST samples come from a dataset, not from here.
    pub fn sample(&self, rng: &mut RngState) -> Result<LabeledSequence> {
        match self.benchmark {
            BenchmarkKind::CopyFirst => gen_copy_first(self.t, rng),
            BenchmarkKind::Denoising => gen_denoising(self.t, self.n, rng),
            BenchmarkKind::SparseCopy => gen_sparse_copy(self.t, rng),
            BenchmarkKind::SeqMnist => Err(Error::InvalidArgument(
                "seq_mnist samples are drawn from a loaded dataset".into(),
            )),
        }
    }

    pub fn generate(&self, count: usize, rng: &mut RngState) -> Result<Vec<LabeledSequence>> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Values(Vector),
    Class(usize),
}

/// One input sequence `[T x d]` with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub inputs: Matrix,
    pub target: Target,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn values(&self) -> Option<&Vector> {
        match &self.target {
            Target::Values(v) => Some(v),
            Target::Class(_) => None,
        }
    }
}

/// Time-major batch: `inputs[t]` is `[batch x d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub inputs: Vec<Matrix>,
    pub targets: BatchTargets,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchTargets {
    /// `[batch x k]`
    Values(Matrix),
    Classes(Vec<usize>),
}

impl SequenceBatch {
    /// Stacks samples that share length, width and target kind.
    pub fn from_samples(samples: &[&LabeledSequence]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (t_len, d) = first.inputs.shape();
        if samples.iter().any(|s| s.inputs.shape() != (t_len, d)) {
            return Err(Error::shape("SequenceBatch", "samples differ in length or width"));
        }
        let inputs = (0..t_len)
            .map(|t| {
                let mut m = Matrix::zeros(samples.len(), d);
                for (b, s) in samples.iter().enumerate() {
                    m.row_mut(b).copy_from_slice(s.inputs.row(t));
                }
                m
            })
            .collect();
        let targets = match &first.target {
            Target::Values(v) => {
                let k = v.len();
                let mut m = Matrix::zeros(samples.len(), k);
                for (b, s) in samples.iter().enumerate() {
                    match &s.target {
                        Target::Values(v) if v.len() == k => m.row_mut(b).copy_from_slice(v.as_slice()),
                        _ => return Err(Error::shape("SequenceBatch", "mixed target kinds")),
                    }
                }
                BatchTargets::Values(m)
            }
            Target::Class(_) => BatchTargets::Classes(
                samples
                    .iter()
                    .map(|s| match s.target {
                        Target::Class(c) => Ok(c),
                        _ => Err(Error::shape("SequenceBatch", "mixed target kinds")),
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(SequenceBatch { inputs, targets })
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }

    /// Sub-batch of rows `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SequenceBatch {
        let rows: Vec<usize> = range.clone().collect();
        SequenceBatch {
            inputs: self.inputs.iter().map(|m| m.select_rows(&rows)).collect(),
            targets: match &self.targets {
                BatchTargets::Values(m) => BatchTargets::Values(m.select_rows(&rows)),
                BatchTargets::Classes(c) => BatchTargets::Classes(c[range].to_vec()),
            },
        }
    }
}

/// `x_t ~ N(0,1)` for `t < T`; the target is `x_0`.
pub fn gen_copy_first(t_len: usize, rng: &mut RngState) -> Result<LabeledSequence> {
    if t_len == 0 {
        return Err(Error::InvalidArgument("copy_first needs T >= 1".into()));
    }
    let inputs = Matrix::from_fn(t_len, 1, |_, _| rng.normal());
    let target = Target::Values(Vector::from(vec![inputs.get(0, 0)]));
    Ok(LabeledSequence { inputs, target })
}

/// Number of admissible marker positions `{0, .., span-1}` for denoising.
///
/// Markers must precede the forgetting window (`t < T - N`) and may not
/// land on the final step, which carries the end-of-sequence flag.
fn denoising_span(t_len: usize, n: usize) -> Result<usize> {
    let span = t_len.saturating_sub(n).min(t_len.saturating_sub(1));
    if n > t_len || span < 5 {
        return Err(Error::InvalidArgument(format!(
            "denoising needs five marker slots before the forgetting period: T={t_len}, N={n}"
        )));
    }
    Ok(span)
}

/// Two-channel denoising sample.
///
/// Channel 0 is `-1` except `0` at the five marked steps and `1` at the last
/// step; channel 1 is i.i.d. `N(0,1)`. Marked steps are distinct, lie before
/// `T - N`, and the target lists their channel-1 values in time order.
pub fn gen_denoising(t_len: usize, n: usize, rng: &mut RngState) -> Result<LabeledSequence> {
    let span = denoising_span(t_len, n)?;
    let mut marks = rng.sample_distinct(span, 5);
    marks.sort_unstable();
    let mut inputs = Matrix::zeros(t_len, 2);
    for t in 0..t_len {
        inputs.set(t, 0, -1.0);
        inputs.set(t, 1, rng.normal());
    }
    for &t in &marks {
        inputs.set(t, 0, 0.0);
    }
    inputs.set(t_len - 1, 0, 1.0);
    let target = marks.iter().map(|&t| inputs.get(t, 1)).collect::<Vec<_>>();
    Ok(LabeledSequence {
        inputs,
        target: Target::Values(Vector::from(target)),
    })
}

/// Marker positions of a denoising sample, read back from channel 0.
pub fn denoising_marks(sample: &LabeledSequence) -> Vec<usize> {
    (0..sample.len())
        .filter(|&t| sample.inputs.get(t, 0) == 0.0)
        .collect()
}

/// A single `N(0,1)` value at a uniform position; zeros elsewhere.
pub fn gen_sparse_copy(t_len: usize, rng: &mut RngState) -> Result<LabeledSequence> {
    if t_len == 0 {
        return Err(Error::InvalidArgument("sparse_copy needs T >= 1".into()));
    }
    let pos = rng.below(t_len as u64) as usize;
    let value = rng.normal();
    let mut inputs = Matrix::zeros(t_len, 1);
    inputs.set(pos, 0, value);
    Ok(LabeledSequence {
        inputs,
        target: Target::Values(Vector::from(vec![value])),
    })
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdxError {
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("file truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} outside 0..=9")]
    BadLabel(u8),
}

/// Raw IDX image set, pixels row-major per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn read_be_u32(bytes: &[u8], at: usize) -> std::result::Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            needed: at + 4,
            have: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> std::result::Result<(), IdxError> {
    let found = read_be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<IdxImages, IdxError> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            have: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..needed].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, IdxError> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_be_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            have: bytes.len(),
        });
    }
    let labels = bytes[8..needed].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(IdxError::BadLabel(bad));
    }
    Ok(labels)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IDX_IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Images paired with digit labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistDataset {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl MnistDataset {
    pub fn new(images: IdxImages, labels: Vec<u8>) -> std::result::Result<Self, IdxError> {
        if images.count != labels.len() {
            return Err(IdxError::CountMismatch {
                images: images.count,
                labels: labels.len(),
            });
        }
        Ok(MnistDataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` images (or all, if fewer).
    pub fn take(&self, n: usize) -> MnistDataset {
        let n = n.min(self.len());
        let per = self.images.rows * self.images.cols;
        MnistDataset {
            images: IdxImages {
                count: n,
                rows: self.images.rows,
                cols: self.images.cols,
                pixels: self.images.pixels[..n * per].to_vec(),
            },
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn sequence(&self, i: usize, layout: PixelLayout, n_black: usize) -> LabeledSequence {
        seq_mnist_sample(
            self.images.image(i),
            self.images.rows,
            self.images.cols,
            self.labels[i] as usize,
            layout,
            n_black,
        )
    }

    pub fn write_idx(&self, image_path: &Path, label_path: &Path) -> Result<()> {
        std::fs::write(image_path, encode_idx_images(&self.images)).map_err(|e| Error::io(image_path, e))?;
        std::fs::write(label_path, encode_idx_labels(&self.labels)).map_err(|e| Error::io(label_path, e))
    }
}

pub fn load_mnist(image_path: &Path, label_path: &Path) -> Result<MnistDataset> {
    let img = std::fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let lbl = std::fs::read(label_path).map_err(|e| Error::io(label_path, e))?;
    Ok(MnistDataset::new(parse_idx_images(&img)?, parse_idx_labels(&lbl)?)?)
}

/// How an image is turned into a pixel stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelLayout {
    /// Native resolution (784 steps for MNIST).
    Native,
    /// Zero-padded to 32x32 (1024 steps), image centered.
    Pad32,
    /// Area-averaged down to `side x side`.
    Downsample(usize),
}

impl FromStr for PixelLayout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" | "28" => Ok(PixelLayout::Native),
            "pad32" | "32" => Ok(PixelLayout::Pad32),
            _ => s
                .strip_prefix("down")
                .unwrap_or(s)
                .parse()
                .ok()
                .filter(|&k| k > 0)
                .map(PixelLayout::Downsample)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown pixel layout '{s}'"))),
        }
    }
}

/// Box-filter resampling of a `rows x cols` image in `[0,1]` to `side x side`.
fn area_downsample(img: &[f64], rows: usize, cols: usize, side: usize) -> Vec<f64> {
    let overlap = |lo: f64, hi: f64, k: usize| (hi.min(k as f64 + 1.0) - lo.max(k as f64)).max(0.0);
    let (sy, sx) = (rows as f64 / side as f64, cols as f64 / side as f64);
    let mut out = vec![0.0; side * side];
    for oy in 0..side {
        let (y0, y1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
        for ox in 0..side {
            let (x0, x1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
            let mut acc = 0.0;
            for r in (y0.floor() as usize)..(y1.ceil() as usize).min(rows) {
                let wy = overlap(y0, y1, r);
                for c in (x0.floor() as usize)..(x1.ceil() as usize).min(cols) {
                    acc += wy * overlap(x0, x1, c) * img[r * cols + c];
                }
            }
            out[oy * side + ox] = acc / (sy * sx);
        }
    }
    out
}

/// Flattens an image row-major into a pixel stream scaled to `[0,1]`,
/// followed by `n_black` zero steps.
pub fn seq_mnist_sample(
    image: &[u8],
    rows: usize,
    cols: usize,
    label: usize,
    layout: PixelLayout,
    n_black: usize,
) -> LabeledSequence {
    let scaled: Vec<f64> = image.iter().map(|&p| p as f64 / 255.0).collect();
    let pixels = match layout {
        PixelLayout::Native => scaled,
        PixelLayout::Pad32 => {
            let (oy, ox) = (32usize.saturating_sub(rows) / 2, 32usize.saturating_sub(cols) / 2);
            let mut out = vec![0.0; 32 * 32];
            for r in 0..rows.min(32) {
                for c in 0..cols.min(32) {
                    out[(r + oy) * 32 + c + ox] = scaled[r * cols + c];
                }
            }
            out
        }
        PixelLayout::Downsample(side) => area_downsample(&scaled, rows, cols, side),
    };
    let len = pixels.len() + n_black;
    let mut data = pixels;
    data.resize(len, 0.0);
    LabeledSequence {
        inputs: Matrix::from_vec(len, 1, data).expect("pixel values are finite"),
        target: Target::Class(label),
    }
}

// Segment boxes (x0, y0, x1, y1) on a 12x20 glyph: top, upper-left,
// upper-right, middle, lower-left, lower-right, bottom.
const SEGMENTS: [(i32, i32, i32, i32); 7] = [
    (0, 0, 12, 2),
    (0, 0, 2, 11),
    (10, 0, 12, 11),
    (0, 9, 12, 11),
    (0, 9, 2, 20),
    (10, 9, 12, 20),
    (0, 18, 12, 20),
];

const DIGIT_SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, false, true, true, true],
    [false, false, true, false, false, true, false],
    [true, false, true, true, true, false, true],
    [true, false, true, true, false, true, true],
    [false, true, true, true, false, true, false],
    [true, true, false, true, false, true, true],
    [true, true, false, true, true, true, true],
    [true, false, true, false, false, true, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

/// MNIST-shaped stand-in dataset: 28x28 seven-segment digits with random
/// placement, stroke intensity and background speckle. Used when the real
/// IDX files are not available.
pub fn synthetic_digits(count: usize, rng: &mut RngState) -> MnistDataset {
    let (rows, cols) = (28usize, 28usize);
    let mut pixels = vec![0u8; count * rows * cols];
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let digit = rng.below(10) as usize;
        labels.push(digit as u8);
        let ox = 8 + rng.below(5) as i32 - 2;
        let oy = 4 + rng.below(5) as i32 - 2;
        let ink = 160.0 + 95.0 * rng.uniform();
        let img = &mut pixels[i * rows * cols..(i + 1) * rows * cols];
        for (seg, on) in SEGMENTS.iter().zip(DIGIT_SEGMENTS[digit]) {
            if !on {
                continue;
            }
            let (x0, y0, x1, y1) = *seg;
            for y in (oy + y0)..(oy + y1) {
                for x in (ox + x0)..(ox + x1) {
                    if (0..rows as i32).contains(&y) && (0..cols as i32).contains(&x) {
                        let v = ink * (0.85 + 0.15 * rng.uniform());
                        img[y as usize * cols + x as usize] = v.round().min(255.0) as u8;
                    }
                }
            }
        }
        for p in img.iter_mut() {
            if *p == 0 && rng.uniform() < 0.03 {
                *p = (rng.uniform() * 80.0) as u8;
            }
        }
    }
    MnistDataset {
        images: IdxImages {
            count,
            rows,
            cols,
            pixels,
        },
        labels,
    }
}

/// Writes `sample,t,x0[,x1..]` rows.
pub fn write_inputs_csv(w: &mut impl Write, samples: &[LabeledSequence]) -> std::io::Result<()> {
    let d = samples.first().map_or(1, |s| s.inputs.cols());
    let cols: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    writeln!(w, "sample,t,{}", cols.join(","))?;
    for (i, s) in samples.iter().enumerate() {
        for t in 0..s.len() {
            let vals: Vec<String> = s.inputs.row(t).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{i},{t},{}", vals.join(","))?;
        }
    }
    Ok(())
}

/// Writes `sample,y0[,y1..]` or `sample,class` rows.
pub fn write_targets_csv(w: &mut impl Write, samples: &[LabeledSequence]) -> std::io::Result<()> {
    match samples.first().map(|s| &s.target) {
        Some(Target::Class(_)) => writeln!(w, "sample,class")?,
        Some(Target::Values(v)) => {
            let cols: Vec<String> = (0..v.len()).map(|k| format!("y{k}")).collect();
            writeln!(w, "sample,{}", cols.join(","))?
        }
        None => writeln!(w, "sample")?,
    }
    for (i, s) in samples.iter().enumerate() {
        match &s.target {
            Target::Class(c) => writeln!(w, "{i},{c}")?,
            Target::Values(v) => {
                let vals: Vec<String> = v.as_slice().iter().map(|x| format!("{x:?}")).collect();
                writeln!(w, "{i},{}", vals.join(","))?
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_first_target_is_first_input() {
        let mut rng = RngState::new(1);
        for t in [1, 5, 50] {
            let s = gen_copy_first(t, &mut rng).unwrap();
            assert_eq!(s.len(), t);
            assert_eq!(s.values().unwrap()[0], s.inputs.get(0, 0));
        }
        assert!(gen_copy_first(0, &mut rng).is_err());
    }

    #[test]
    fn copy_first_input_statistics() {
        let mut rng = RngState::new(2);
        let vals: Vec<f64> = (0..10_000)
            .flat_map(|_| gen_copy_first(3, &mut rng).unwrap().inputs.into_vec())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.05);
        assert!((0.95..=1.05).contains(&std));
    }

    #[test]
    fn denoising_marker_code() {
        let mut rng = RngState::new(3);
        for _ in 0..200 {
            let s = gen_denoising(30, 10, &mut rng).unwrap();
            let ch: Vec<f64> = (0..30).map(|t| s.inputs.get(t, 0)).collect();
            assert_eq!(ch.iter().filter(|&&v| v == 0.0).count(), 5);
            assert_eq!(ch.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(ch[29], 1.0);
            assert!(ch.iter().all(|&v| v == -1.0 || v == 0.0 || v == 1.0));
            let marks = denoising_marks(&s);
            assert!(marks.iter().all(|&t| t < 20));
            let rescanned: Vec<f64> = marks.iter().map(|&t| s.inputs.get(t, 1)).collect();
            assert_eq!(s.values().unwrap().as_slice(), &rescanned[..]);
        }
    }

    #[test]
    fn denoising_boundaries() {
        let mut rng = RngState::new(4);
        let s = gen_denoising(40, 35, &mut rng).unwrap();
        assert_eq!(denoising_marks(&s), vec![0, 1, 2, 3, 4]);
        assert!(gen_denoising(40, 36, &mut rng).is_err());
        assert!(gen_denoising(5, 0, &mut rng).is_err());
        let s = gen_denoising(6, 0, &mut rng).unwrap();
        assert_eq!(denoising_marks(&s), vec![0, 1, 2, 3, 4]);
        assert!(SampleSpec { benchmark: BenchmarkKind::Denoising, t: 10, n: 8, n_black: 0 }
            .validate()
            .is_err());
    }

    #[test]
    fn sparse_copy_single_nonzero() {
        let mut rng = RngState::new(5);
        for _ in 0..100 {
            let s = gen_sparse_copy(20, &mut rng).unwrap();
            let nz: Vec<f64> = s.inputs.as_slice().iter().copied().filter(|&v| v != 0.0).collect();
            assert!(nz.len() <= 1);
            if let Some(v) = nz.first() {
                assert_eq!(*v, s.values().unwrap()[0]);
            }
        }
        let s = gen_sparse_copy(1, &mut rng).unwrap();
        assert_eq!(s.inputs.get(0, 0), s.values().unwrap()[0]);
    }

    #[test]
    fn generators_are_deterministic() {
        for kind in [BenchmarkKind::CopyFirst, BenchmarkKind::Denoising, BenchmarkKind::SparseCopy] {
            let spec = SampleSpec { benchmark: kind, t: 20, n: 5, n_black: 0 };
            let a = spec.generate(10, &mut RngState::new(9)).unwrap();
            let b = spec.generate(10, &mut RngState::new(9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let images = IdxImages { count: 2, rows: 2, cols: 3, pixels: (0..12).collect() };
        let bytes = encode_idx_images(&images);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_idx_images(&bytes).unwrap(), images);
        let mut bad = bytes.clone();
        bad[3] = 1;
        assert!(matches!(parse_idx_images(&bad), Err(IdxError::BadMagic { .. })));
        assert!(matches!(parse_idx_images(&bytes[..20]), Err(IdxError::Truncated { .. })));
        assert!(matches!(parse_idx_images(&bytes[..2]), Err(IdxError::Truncated { .. })));
        let labels = encode_idx_labels(&[3, 7]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![3, 7]);
        assert!(matches!(parse_idx_labels(&bytes), Err(IdxError::BadMagic { .. })));
        assert!(matches!(parse_idx_labels(&encode_idx_labels(&[12])), Err(IdxError::BadLabel(12))));
        assert!(matches!(
            MnistDataset::new(images, vec![1]),
            Err(IdxError::CountMismatch { images: 2, labels: 1 })
        ));
    }

    #[test]
    fn mnist_sequences() {
        let img = vec![0u8; 784];
        let s = seq_mnist_sample(&img, 28, 28, 4, PixelLayout::Native, 0);
        assert_eq!(s.len(), 784);
        let s = seq_mnist_sample(&img, 28, 28, 4, PixelLayout::Native, 300);
        assert_eq!(s.len(), 1084);
        assert!(s.inputs.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(s.target, Target::Class(4));

        let white = vec![255u8; 784];
        let s = seq_mnist_sample(&white, 28, 28, 0, PixelLayout::Pad32, 0);
        assert_eq!(s.len(), 1024);
        assert_eq!(s.inputs.as_slice().iter().sum::<f64>(), 784.0);
        assert_eq!(s.inputs.get(0, 0), 0.0);
        assert_eq!(s.inputs.get(2 * 32 + 2, 0), 1.0);

        let s = seq_mnist_sample(&white, 28, 28, 0, PixelLayout::Downsample(8), 5);
        assert_eq!(s.len(), 69);
        assert!(s.inputs.as_slice()[..64].iter().all(|&v| (v - 1.0).abs() < 1e-12));

        // Mass is conserved by the box filter.
        let mut rng = RngState::new(1);
        let img: Vec<u8> = (0..784).map(|_| rng.below(256) as u8).collect();
        let full: f64 = img.iter().map(|&p| p as f64 / 255.0).sum();
        let s = seq_mnist_sample(&img, 28, 28, 0, PixelLayout::Downsample(8), 0);
        let small: f64 = s.inputs.as_slice().iter().sum();
        assert!((full - small * (28.0 * 28.0 / 64.0)).abs() < 1e-9);
    }

    #[test]
    fn synthetic_digits_are_distinct_per_class() {
        let ds = synthetic_digits(200, &mut RngState::new(3));
        assert_eq!(ds.len(), 200);
        assert!(ds.labels.iter().all(|&l| l < 10));
        let ones: Vec<usize> = (0..200).filter(|&i| ds.labels[i] == 1).collect();
        let eights: Vec<usize> = (0..200).filter(|&i| ds.labels[i] == 8).collect();
        let ink = |i: usize| ds.images.image(i).iter().map(|&p| p as f64).sum::<f64>();
        assert!(ink(ones[0]) < ink(eights[0]));
    }

    #[test]
    fn batch_assembly() {
        let mut rng = RngState::new(1);
        let a = gen_denoising(10, 2, &mut rng).unwrap();
        let b = gen_denoising(10, 2, &mut rng).unwrap();
        let batch = SequenceBatch::from_samples(&[&a, &b]).unwrap();
        assert_eq!(batch.inputs.len(), 10);
        assert_eq!(batch.inputs[3].row(1), b.inputs.row(3));
        let BatchTargets::Values(t) = &batch.targets else { panic!() };
        assert_eq!(t.row(0), a.values().unwrap().as_slice());
        let c = gen_copy_first(10, &mut rng).unwrap();
        assert!(SequenceBatch::from_samples(&[&a, &c]).is_err());
        let half = batch.slice(1..2);
        assert_eq!(half.inputs[0].row(0), b.inputs.row(0));
    }

    #[test]
    fn csv_export() {
        let mut rng = RngState::new(1);
        let s = vec![gen_sparse_copy(3, &mut rng).unwrap()];
        let mut buf = Vec::new();
        write_inputs_csv(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sample,t,x0\n0,0,"));
        assert_eq!(text.lines().count(), 4);
        let mut buf = Vec::new();
        write_targets_csv(&mut buf, &s).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("sample,y0\n"));
    }
}
