//! Batch augmenters: mixup, CutMix, flip/pad-crop and the identity.
//!
//! One mixing coefficient is drawn per batch and partners come from a random
//! permutation of the same batch. Draw order inside a mixing call is fixed:
//! lambda, then the pairing permutation, then (CutMix only) the box centre.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

const TARGET_SUM_TOL: f64 = 1e-9;

/// `batch x channels x height x width` tensor stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let want = batch * channels * height * width;
        if data.len() != want {
            return Err(Error::shape(
                "ImageTensor::new",
                format!(
                    "{} values for a {batch}x{channels}x{height}x{width} tensor",
                    data.len()
                ),
            ));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
            data: vec![0.0; batch * channels * height * width],
        }
    }

    /// Reinterprets each matrix row as one `channels x height x width` image.
    pub fn from_matrix(m: &Matrix, channels: usize, height: usize, width: usize) -> Result<Self> {
        if m.cols() != channels * height * width {
            return Err(Error::shape(
                "ImageTensor::from_matrix",
                format!("row length {} is not {channels}x{height}x{width}", m.cols()),
            ));
        }
        Self::new(m.rows(), channels, height, width, m.data().to_vec())
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.batch, self.sample_len(), self.data.clone())
            .expect("tensor length is batch * sample_len")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn image(&self, b: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    #[inline]
    fn offset(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.channels + c) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f64) {
        let o = self.offset(b, c, y, x);
        self.data[o] = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchInputs {
    Features(Matrix),
    Images(ImageTensor),
}

impl BatchInputs {
    pub fn len(&self) -> usize {
        match self {
            BatchInputs::Features(m) => m.rows(),
            BatchInputs::Images(t) => t.batch(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One flattened sample per row.
    pub fn to_matrix(&self) -> Matrix {
        match self {
            BatchInputs::Features(m) => m.clone(),
            BatchInputs::Images(t) => t.to_matrix(),
        }
    }

    fn sample_len(&self) -> usize {
        match self {
            BatchInputs::Features(m) => m.cols(),
            BatchInputs::Images(t) => t.sample_len(),
        }
    }

    fn raw(&self) -> &[f64] {
        match self {
            BatchInputs::Features(m) => m.data(),
            BatchInputs::Images(t) => t.data(),
        }
    }

    fn with_raw(&self, data: Vec<f64>) -> Self {
        match self {
            BatchInputs::Features(m) => BatchInputs::Features(
                Matrix::from_vec(m.rows(), m.cols(), data).expect("same shape"),
            ),
            BatchInputs::Images(t) => BatchInputs::Images(ImageTensor { data, ..t.clone() }),
        }
    }
}

/// Half-open pixel rectangle `[y0, y1) x [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixInfo {
    /// For CutMix this is the area-adjusted coefficient.
    pub lambda: f64,
    /// `pairing[k]` is the partner of sample `k`.
    pub pairing: Vec<usize>,
    pub label_mixing: bool,
    pub cut: Option<CutBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: BatchInputs,
    /// Soft labels, `batch x classes`, rows summing to one.
    pub targets: Matrix,
    pub mix_info: Option<MixInfo>,
}

impl Batch {
    pub fn new(inputs: BatchInputs, targets: Matrix) -> Result<Self> {
        if inputs.len() != targets.rows() {
            return Err(Error::shape(
                "Batch::new",
                format!("{} inputs but {} target rows", inputs.len(), targets.rows()),
            ));
        }
        let batch = Self {
            inputs,
            targets,
            mix_info: None,
        };
        batch.check_targets()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn check_targets(&self) -> Result<()> {
        for r in 0..self.targets.rows() {
            let row = self.targets.row(r);
            let total: f64 = row.iter().sum();
            if row.iter().any(|&v| v < 0.0) || (total - 1.0).abs() > TARGET_SUM_TOL {
                return Err(Error::shape(
                    "Batch",
                    format!("target row {r} is not a distribution (sum {total})"),
                ));
            }
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "mixing alpha must be positive, got {alpha}"
        )))
    }
}

fn check_pairing(pairing: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if pairing.len() != n {
        return Err(Error::shape(
            "pairing",
            format!("{} partners for {n} samples", pairing.len()),
        ));
    }
    for &j in pairing {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(Error::shape("pairing", "not a permutation"));
        }
    }
    Ok(())
}

/// `lambda * a + (1 - lambda) * b`, kept inside the closed interval spanned
/// by `a` and `b` despite rounding.
#[inline]
fn blend(a: f64, b: f64, lambda: f64) -> f64 {
    let v = lambda * a + (1.0 - lambda) * b;
    v.clamp(a.min(b), a.max(b))
}

fn mix_rows(data: &[f64], width: usize, pairing: &[usize], lambda: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for (k, &j) in pairing.iter().enumerate() {
        let own = &data[k * width..(k + 1) * width];
        let other = &data[j * width..(j + 1) * width];
        out.extend(own.iter().zip(other).map(|(&a, &b)| blend(a, b, lambda)));
    }
    out
}

/// Mixup with an explicit coefficient and pairing.
pub fn mixup_with(batch: &Batch, lambda: f64, pairing: &[usize]) -> Result<Batch> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda {lambda} outside [0, 1]")));
    }
    let n = batch.len();
    check_pairing(pairing, n)?;
    let inputs = batch.inputs.with_raw(mix_rows(
        batch.inputs.raw(),
        batch.inputs.sample_len(),
        pairing,
        lambda,
    ));
    let k = batch.targets.cols();
    let targets = Matrix::from_vec(n, k, mix_rows(batch.targets.data(), k, pairing, lambda))?;
    Ok(Batch {
        inputs,
        targets,
        mix_info: Some(MixInfo {
            lambda,
            pairing: pairing.to_vec(),
            label_mixing: true,
            cut: None,
        }),
    })
}

/// Draws `lambda ~ Beta(alpha, alpha)` and a pairing permutation, then mixes
/// inputs and targets with the same coefficient.
pub fn mixup_batch(batch: &Batch, alpha: f64, rng: &mut RngStream) -> Result<Batch> {
    check_alpha(alpha)?;
    if batch.is_empty() {
        return Err(Error::shape("mixup_batch", "empty batch"));
    }
    let lambda = rng.sample_beta(alpha)?;
    let pairing = rng.permutation(batch.len());
    mixup_with(batch, lambda, &pairing)
}

/// Box of side `W*sqrt(1-lambda)` by `H*sqrt(1-lambda)` centred at
/// `(cy, cx)` and clipped to the image.
pub fn cutmix_box(height: usize, width: usize, lambda: f64, cy: usize, cx: usize) -> CutBox {
    let ratio = (1.0 - lambda).max(0.0).sqrt();
    let cut_w = (width as f64 * ratio) as usize;
    let cut_h = (height as f64 * ratio) as usize;
    CutBox {
        y0: cy.saturating_sub(cut_h / 2).min(height),
        y1: (cy + cut_h / 2).min(height),
        x0: cx.saturating_sub(cut_w / 2).min(width),
        x1: (cx + cut_w / 2).min(width),
    }
}

/// Coefficient of the receiving image once `cut` has been pasted over it.
pub fn adjusted_lambda(cut: &CutBox, height: usize, width: usize) -> f64 {
    1.0 - cut.area() as f64 / (height * width) as f64
}

/// CutMix with an explicit box and pairing: the partner's pixels inside
/// `cut` overwrite every channel of each image.
pub fn cutmix_with_box(
    images: &ImageTensor,
    targets: &Matrix,
    cut: CutBox,
    pairing: &[usize],
    label_mixing: bool,
) -> Result<Batch> {
    let n = images.batch();
    if targets.rows() != n {
        return Err(Error::shape(
            "cutmix",
            format!("{n} images but {} target rows", targets.rows()),
        ));
    }
    check_pairing(pairing, n)?;
    if cut.y1 > images.height() || cut.x1 > images.width() || cut.y0 > cut.y1 || cut.x0 > cut.x1 {
        return Err(Error::shape("cutmix", format!("box {cut:?} outside image")));
    }
    let mut out = images.clone();
    for (b, &j) in pairing.iter().enumerate() {
        for c in 0..images.channels() {
            for y in cut.y0..cut.y1 {
                for x in cut.x0..cut.x1 {
                    out.set(b, c, y, x, images.get(j, c, y, x));
                }
            }
        }
    }
    let lambda = adjusted_lambda(&cut, images.height(), images.width());
    let k = targets.cols();
    let mixed = if label_mixing {
        mix_rows(targets.data(), k, pairing, lambda)
    } else {
        // Keep the label of whichever image contributes more area.
        let mut data = Vec::with_capacity(n * k);
        for (b, &j) in pairing.iter().enumerate() {
            data.extend_from_slice(targets.row(if lambda >= 0.5 { b } else { j }));
        }
        data
    };
    Ok(Batch {
        inputs: BatchInputs::Images(out),
        targets: Matrix::from_vec(n, k, mixed)?,
        mix_info: Some(MixInfo {
            lambda,
            pairing: pairing.to_vec(),
            label_mixing,
            cut: Some(cut),
        }),
    })
}

pub fn cutmix_batch(
    images: &ImageTensor,
    targets: &Matrix,
    alpha: f64,
    rng: &mut RngStream,
    label_mixing: bool,
) -> Result<Batch> {
    check_alpha(alpha)?;
    if images.batch() == 0 || images.height() == 0 || images.width() == 0 {
        return Err(Error::shape("cutmix_batch", "empty image batch"));
    }
    let lambda = rng.sample_beta(alpha)?;
    let pairing = rng.permutation(images.batch());
    let cy = rng.below(images.height());
    let cx = rng.below(images.width());
    let cut = cutmix_box(images.height(), images.width(), lambda, cy, cx);
    cutmix_with_box(images, targets, cut, &pairing, label_mixing)
}

/// Random horizontal flip followed by zero padding and a random crop back to
/// the original size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicAugment {
    pub flip_prob: f64,
    pub pad: usize,
}

impl Default for BasicAugment {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            pad: 4,
        }
    }
}

impl BasicAugment {
    /// Per image, draws the flip coin, then the row offset, then the column
    /// offset (each offset uniform over `0..=2*pad`).
    pub fn apply(&self, images: &ImageTensor, rng: &mut RngStream) -> ImageTensor {
        let mut out = images.clone();
        let span = 2 * self.pad + 1;
        for b in 0..images.batch() {
            let flip = rng.uniform01() < self.flip_prob;
            let dy = rng.below(span);
            let dx = rng.below(span);
            self.transform_one(images, &mut out, b, flip, dy, dx);
        }
        out
    }

    /// Writes image `b` of `src` into `dst` flipped (optionally) and cropped
    /// at offset `(dy, dx)` of the padded canvas.
    pub fn transform_one(
        &self,
        src: &ImageTensor,
        dst: &mut ImageTensor,
        b: usize,
        flip: bool,
        dy: usize,
        dx: usize,
    ) {
        let (h, w) = (src.height(), src.width());
        for c in 0..src.channels() {
            for y in 0..h {
                for x in 0..w {
                    let sy = (y + dy).checked_sub(self.pad).filter(|&v| v < h);
                    let sx = (x + dx).checked_sub(self.pad).filter(|&v| v < w);
                    let v = match (sy, sx) {
                        (Some(sy), Some(sx)) => {
                            let sx = if flip { w - 1 - sx } else { sx };
                            src.get(b, c, sy, sx)
                        }
                        _ => 0.0,
                    };
                    dst.set(b, c, y, x, v);
                }
            }
        }
    }
}

pub fn basic_augment(images: &ImageTensor, rng: &mut RngStream) -> ImageTensor {
    BasicAugment::default().apply(images, rng)
}

/// Tabular data has no label-preserving transform; the clean branch trains
/// on the raw batch.
pub fn identity_augment(batch: Batch) -> Batch {
    batch
}
