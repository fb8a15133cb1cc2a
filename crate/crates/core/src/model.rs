//! Fully connected ReLU classifier with a softmax head, trained against soft
//! labels with hand-written backpropagation.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

/// Lower bound applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    /// Input width, hidden widths..., class count.
    pub layer_sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::config(format!(
                "an MLP needs at least two non-empty layers, got {layer_sizes:?}"
            )));
        }
        Ok(Self { layer_sizes })
    }

    pub fn with_hidden(inputs: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(inputs);
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        Self::new(sizes)
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

/// Weights are stored `fan_in x fan_out` so a batch forward is `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpState {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

pub type Gradients = MlpState;

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`activations[0]` is the batch itself).
    activations: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    hidden_pre: Vec<Matrix>,
    probs: Matrix,
}

impl ForwardCache {
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn into_probs(self) -> Matrix {
        self.probs
    }
}

impl MlpState {
    /// He-normal weights (`std = sqrt(2 / fan_in)`) and zero biases, drawn
    /// layer by layer in row-major order.
    pub fn init(spec: &MlpSpec, rng: &mut RngStream) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            weights.push(Matrix::from_fn(fan_in, fan_out, |_, _| {
                std * rng.standard_normal()
            }));
            biases.push(Matrix::zeros(1, fan_out));
        }
        Self { weights, biases }
    }

    pub fn zeros_like(spec: &MlpSpec) -> Self {
        let weights = spec
            .layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[0], w[1]))
            .collect();
        let biases = spec.layer_sizes[1..]
            .iter()
            .map(|&n| Matrix::zeros(1, n))
            .collect();
        Self { weights, biases }
    }

    pub fn spec(&self) -> MlpSpec {
        let mut sizes = vec![self.weights[0].rows()];
        sizes.extend(self.weights.iter().map(Matrix::cols));
        MlpSpec { layer_sizes: sizes }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Parameters in a fixed order: `W0, b0, W1, b1, ...`.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardCache> {
        if inputs.cols() != self.weights[0].rows() {
            return Err(Error::shape(
                "forward",
                format!(
                    "input width {} but the first layer expects {}",
                    inputs.cols(),
                    self.weights[0].rows()
                ),
            ));
        }
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers());
        let mut hidden_pre = Vec::with_capacity(last);
        let mut a = inputs.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = a.matmul(w)?.broadcast_add_row(b)?;
            activations.push(a);
            if l == last {
                return Ok(ForwardCache {
                    activations,
                    hidden_pre,
                    probs: z.softmax_rows(),
                });
            }
            a = z.relu();
            hidden_pre.push(z);
        }
        unreachable!("an MLP has at least one layer")
    }

    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward(inputs)?.into_probs())
    }

    /// Exact gradients of [`loss_ce_soft`] (mean over the batch).
    pub fn backward(&self, cache: &ForwardCache, targets: &Matrix) -> Result<Gradients> {
        let probs = &cache.probs;
        if targets.shape() != probs.shape() {
            return Err(Error::shape(
                "backward",
                format!("targets {:?} vs probs {:?}", targets.shape(), probs.shape()),
            ));
        }
        if cache.activations.len() != self.num_layers()
            || cache
                .activations
                .iter()
                .zip(&self.weights)
                .any(|(a, w)| a.cols() != w.rows())
        {
            return Err(Error::shape(
                "backward",
                "cache does not match this network",
            ));
        }
        let n = probs.rows() as f64;
        let mut delta = probs.sub(targets)?.scale(1.0 / n);
        let mut weights = vec![Matrix::zeros(0, 0); self.num_layers()];
        let mut biases = vec![Matrix::zeros(0, 0); self.num_layers()];
        for l in (0..self.num_layers()).rev() {
            weights[l] = cache.activations[l].transpose().matmul(&delta)?;
            biases[l] = delta.row_sum();
            if l > 0 {
                delta = delta
                    .matmul(&self.weights[l].transpose())?
                    .hadamard(&cache.hidden_pre[l - 1].relu_grad_mask())?;
            }
        }
        Ok(Gradients { weights, biases })
    }

    /// Plain-text dump: a `layers` header with the widths, then for each
    /// layer a `W l rows cols` and `b l 1 cols` line followed by one line of
    /// space-separated values per row. Values round-trip exactly.
    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        let spec = self.spec();
        let sizes: Vec<String> = spec.layer_sizes.iter().map(|s| s.to_string()).collect();
        writeln!(out, "layers {}", sizes.join(" "))?;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            write_tensor(out, "W", l, w)?;
            write_tensor(out, "b", l, b)?;
        }
        Ok(())
    }

    /// Reads what [`MlpState::write_to`] wrote. `lines` must be positioned at
    /// the `layers` line.
    pub fn read_from<B: BufRead>(
        lines: &mut std::io::Lines<B>,
    ) -> std::result::Result<Self, String> {
        let header = next_line(lines)?;
        let sizes: Vec<usize> = header
            .strip_prefix("layers ")
            .ok_or_else(|| format!("expected `layers`, got {header:?}"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format!("bad layer size {t:?}")))
            .collect::<std::result::Result<_, _>>()?;
        let spec = MlpSpec::new(sizes).map_err(|e| e.to_string())?;
        let mut state = MlpState::zeros_like(&spec);
        for l in 0..state.num_layers() {
            state.weights[l] = read_tensor(lines, "W", l, state.weights[l].shape())?;
            state.biases[l] = read_tensor(lines, "b", l, state.biases[l].shape())?;
        }
        Ok(state)
    }
}

fn write_tensor(out: &mut impl Write, tag: &str, l: usize, m: &Matrix) -> std::io::Result<()> {
    writeln!(out, "{tag} {l} {} {}", m.rows(), m.cols())?;
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

fn next_line<B: BufRead>(lines: &mut std::io::Lines<B>) -> std::result::Result<String, String> {
    match lines.next() {
        Some(Ok(line)) => Ok(line),
        Some(Err(e)) => Err(e.to_string()),
        None => Err("unexpected end of file".into()),
    }
}

fn read_tensor<B: BufRead>(
    lines: &mut std::io::Lines<B>,
    tag: &str,
    l: usize,
    shape: (usize, usize),
) -> std::result::Result<Matrix, String> {
    let header = next_line(lines)?;
    let want = format!("{tag} {l} {} {}", shape.0, shape.1);
    if header.trim() != want {
        return Err(format!("expected {want:?}, got {header:?}"));
    }
    let mut data = Vec::with_capacity(shape.0 * shape.1);
    for r in 0..shape.0 {
        let line = next_line(lines)?;
        let before = data.len();
        for t in line.split_whitespace() {
            data.push(t.parse::<f64>().map_err(|_| format!("bad value {t:?}"))?);
        }
        if data.len() - before != shape.1 {
            return Err(format!("{tag}{l} row {r}: expected {} values", shape.1));
        }
    }
    Matrix::from_vec(shape.0, shape.1, data).map_err(|e| e.to_string())
}

/// Mean over rows of `-sum_k y_k ln(max(p_k, 1e-12))`.
pub fn loss_ce_soft(probs: &Matrix, targets: &Matrix) -> Result<f64> {
    if probs.shape() != targets.shape() {
        return Err(Error::shape(
            "loss_ce_soft",
            format!("probs {:?} vs targets {:?}", probs.shape(), targets.shape()),
        ));
    }
    if probs.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &y)| {
            if y == 0.0 {
                0.0
            } else {
                -y * p.max(PROB_FLOOR).ln()
            }
        })
        .sum();
    Ok(total / probs.rows() as f64)
}

/// Fraction of rows whose arg-max (lowest index on ties) equals the label.
pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions for {} labels", probs.rows(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = probs
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    Matrix::from_fn(labels.len(), classes, |r, c| {
        if labels[r] == c {
            1.0
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sizes: &[usize]) -> MlpSpec {
        MlpSpec::new(sizes.to_vec()).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![4]).is_err());
        assert!(MlpSpec::new(vec![4, 0, 3]).is_err());
        assert_eq!(
            MlpSpec::with_hidden(4, &[128, 128], 3).unwrap().layer_sizes,
            vec![4, 128, 128, 3]
        );
    }

    #[test]
    fn init_is_he_normal_with_zero_biases() {
        let s = spec(&[128, 256, 10]);
        let state = MlpState::init(&s, &mut RngStream::new(5));
        assert!(state
            .biases
            .iter()
            .all(|b| b.data().iter().all(|&v| v == 0.0)));
        let w = state.weights[0].data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let want = (2.0f64 / 128.0).sqrt();
        assert!((std - want).abs() < 0.1 * want, "std {std} vs {want}");
        assert_eq!(MlpState::init(&s, &mut RngStream::new(5)), state);
    }

    #[test]
    fn zero_network_is_uniform() {
        let state = MlpState::zeros_like(&spec(&[3, 4, 5]));
        let probs = state.predict(&Matrix::filled(2, 3, 0.7)).unwrap();
        for v in probs.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_hand_computed_2_2_2() {
        let state = MlpState {
            weights: vec![
                Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0]]),
                Matrix::from_rows(&[[1.0, 0.0], [-1.0, 1.0]]),
            ],
            biases: vec![
                Matrix::from_rows(&[[0.0, 0.5]]),
                Matrix::from_rows(&[[0.1, -0.1]]),
            ],
        };
        let x = Matrix::from_rows(&[[1.0, 1.0]]);
        // hidden z = [1.5, 1.5], relu same; logits = [1.5 - 1.5 + 0.1, 1.5 - 0.1] = [0.1, 1.4]
        let e0 = 0.1f64.exp();
        let e1 = 1.4f64.exp();
        let probs = state.predict(&x).unwrap();
        assert!((probs.get(0, 0) - e0 / (e0 + e1)).abs() < 1e-12);
        assert!((probs.get(0, 1) - e1 / (e0 + e1)).abs() < 1e-12);
    }

    #[test]
    fn batch_forward_equals_stacked_rows() {
        let s = spec(&[4, 6, 3]);
        let mut rng = RngStream::new(1);
        let state = MlpState::init(&s, &mut rng);
        let x = Matrix::from_fn(5, 4, |_, _| rng.uniform01());
        let batch = state.predict(&x).unwrap();
        for r in 0..5 {
            let single = state.predict(&x.select_rows(&[r])).unwrap();
            assert_eq!(single.row(0), batch.row(r));
        }
        assert!(state.forward(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn loss_closed_forms() {
        let y = one_hot(&[0, 2], 3);
        assert!(loss_ce_soft(&y, &y).unwrap().abs() < 1e-12);
        let uniform = Matrix::filled(2, 3, 1.0 / 3.0);
        let soft = Matrix::from_rows(&[[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]]);
        assert!((loss_ce_soft(&uniform, &soft).unwrap() - 3f64.ln()).abs() < 1e-12);
        // Zero probability is floored, never infinite.
        let hard = Matrix::from_rows(&[[0.0, 1.0, 0.0]]);
        let l = loss_ce_soft(&hard, &one_hot(&[0], 3)).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn perfect_prediction_has_zero_output_delta() {
        let s = spec(&[2, 3, 2]);
        let state = MlpState::init(&s, &mut RngStream::new(0));
        let x = Matrix::from_rows(&[[0.3, 0.9]]);
        let cache = state.forward(&x).unwrap();
        let grads = state.backward(&cache, &cache.probs().clone()).unwrap();
        for t in grads.tensors() {
            assert!(t.data().iter().all(|&v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn duplicated_sample_doubles_summed_gradient() {
        let s = spec(&[3, 4, 2]);
        let mut rng = RngStream::new(2);
        let state = MlpState::init(&s, &mut rng);
        let x = Matrix::from_rows(&[[0.1, 0.5, 0.9]]);
        let y = Matrix::from_rows(&[[0.3, 0.7]]);
        let g1 = state.backward(&state.forward(&x).unwrap(), &y).unwrap();
        let x2 = x.select_rows(&[0, 0]);
        let y2 = y.select_rows(&[0, 0]);
        let g2 = state.backward(&state.forward(&x2).unwrap(), &y2).unwrap();
        // Undo the mean: batch of two sums to twice the single-sample gradient.
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((2.0 * v - 2.0 * u).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backward_rejects_mismatch() {
        let s = spec(&[2, 3, 2]);
        let state = MlpState::init(&s, &mut RngStream::new(0));
        let cache = state.forward(&Matrix::zeros(1, 2)).unwrap();
        assert!(state.backward(&cache, &Matrix::zeros(1, 3)).is_err());
        let other = MlpState::init(&spec(&[2, 4, 2]), &mut RngStream::new(0));
        assert!(other.backward(&cache, &Matrix::filled(1, 2, 0.5)).is_err());
    }

    #[test]
    fn accuracy_counts() {
        let probs = Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]]);
        assert_eq!(accuracy(&probs, &[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&probs, &[1, 0, 1]).unwrap(), 0.0);
        assert!(accuracy(&probs, &[0]).is_err());
    }

    #[test]
    fn text_dump_round_trips() {
        let state = MlpState::init(&spec(&[3, 5, 2]), &mut RngStream::new(9));
        let mut buf = Vec::new();
        state.write_to(&mut buf).unwrap();
        let back = MlpState::read_from(&mut std::io::Cursor::new(buf).lines()).unwrap();
        assert_eq!(back, state);
    }
}
