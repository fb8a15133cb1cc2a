//! Distributional checks on the random pieces and an independent oracle for
//! the synthetic image task.

use mwh::augment::{BasicAugment, ImageTensor};
use mwh::data::{split, SplitSpec, SyntheticImages};
use mwh::harness::{self, config::DataConfig, TrainConfig};
use mwh::linalg::Matrix;
use mwh::model::{loss_ce_soft, MlpSpec, MlpState};
use mwh::rng::RngStream;
use mwh::schedule::StrategySpec;

/// Pearson chi-square statistic against a uniform expectation.
fn chi_square(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

// Upper 0.1% points of the chi-square distribution.
const CHI2_999_DF4: f64 = 18.467;
const CHI2_999_DF24: f64 = 51.179;
const CHI2_999_DF999: f64 = 1142.9;

#[test]
fn permutation_positions_are_uniform() {
    let mut rng = RngStream::new(21);
    let n = 5;
    let mut counts = vec![0usize; n];
    for _ in 0..50_000 {
        let p = rng.permutation(n);
        counts[p.iter().position(|&v| v == 0).unwrap()] += 1;
    }
    assert!(chi_square(&counts) < CHI2_999_DF4, "{counts:?}");
}

#[test]
fn large_permutation_positions_are_uniform() {
    let mut rng = RngStream::new(24);
    let n = 1000;
    let mut counts = vec![0usize; n];
    for _ in 0..10_000 {
        let p = rng.permutation(n);
        counts[p.iter().position(|&v| v == 0).unwrap()] += 1;
    }
    assert!(chi_square(&counts) < CHI2_999_DF999);
}

#[test]
fn crop_offsets_are_uniform() {
    let pad = 2;
    let aug = BasicAugment {
        flip_prob: 0.0,
        pad,
    };
    let mut img = ImageTensor::zeros(1, 1, 5, 5);
    img.set(0, 0, 2, 2, 1.0);
    let side = 2 * pad + 1;
    let mut counts = vec![0usize; side * side];
    let mut rng = RngStream::new(22);
    for _ in 0..25_000 {
        let out = aug.apply(&img, &mut rng);
        let at = out.image(0).iter().position(|&v| v == 1.0).unwrap();
        // The centre pixel lands at (4 - dy, 4 - dx).
        let (y, x) = (at / 5, at % 5);
        counts[(4 - y) * side + (4 - x)] += 1;
    }
    assert!(chi_square(&counts) < CHI2_999_DF24, "{counts:?}");
}

#[test]
fn flip_rate_matches_probability() {
    let aug = BasicAugment {
        flip_prob: 0.5,
        pad: 0,
    };
    let img = ImageTensor::new(1, 1, 1, 2, vec![1.0, 2.0]).unwrap();
    let mut rng = RngStream::new(23);
    let trials = 20_000;
    let flips = (0..trials)
        .filter(|_| aug.apply(&img, &mut rng).image(0)[0] == 2.0)
        .count();
    // Four standard deviations of a fair binomial.
    let sd = (trials as f64 * 0.25).sqrt();
    assert!(
        (flips as f64 - trials as f64 / 2.0).abs() < 4.0 * sd,
        "{flips}"
    );
}

#[test]
fn gamma_mean_matches_shape() {
    for (shape, seed) in [(0.3, 1), (1.0, 2), (4.5, 3)] {
        let mut rng = RngStream::new(seed);
        let n = 50_000;
        let mean = (0..n)
            .map(|_| rng.sample_gamma(shape).unwrap())
            .sum::<f64>()
            / n as f64;
        // Variance of the sample mean is shape / n.
        assert!(
            (mean - shape).abs() < 4.0 * (shape / n as f64).sqrt(),
            "{shape}: {mean}"
        );
    }
}

#[test]
fn nearest_centroid_solves_synthetic_images() {
    let spec = SyntheticImages {
        classes: 4,
        ..SyntheticImages::default()
    };
    let ds = spec.generate().unwrap();
    let (train, test) = split(&ds, &SplitSpec::default(), &mut RngStream::new(5)).unwrap();
    let d = train.feature_dim();
    let mut centroids = Matrix::zeros(4, d);
    let mut sizes = [0usize; 4];
    for (r, &l) in train.labels.iter().enumerate() {
        sizes[l] += 1;
        for c in 0..d {
            centroids.set(l, c, centroids.get(l, c) + train.features.get(r, c));
        }
    }
    for (l, &s) in sizes.iter().enumerate() {
        centroids.row_mut(l).iter_mut().for_each(|v| *v /= s as f64);
    }
    let correct = test
        .labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| {
            let dist = |k: usize| -> f64 {
                (0..d)
                    .map(|c| (test.features.get(r, c) - centroids.get(k, c)).powi(2))
                    .sum()
            };
            (0..4).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap() == l
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc > 0.9, "nearest centroid accuracy {acc}");

    // The MLP should do at least as well as the linear oracle here.
    let mut cfg = TrainConfig::new(DataConfig::synthetic(spec));
    cfg.epochs = 15;
    cfg.batch_size = 32;
    cfg.model.hidden = vec![32];
    cfg.augment.basic = false;
    cfg.set_strategy(&StrategySpec::Baseline);
    let rec = harness::run_training(&cfg).unwrap();
    assert!(
        rec.test_accuracy > 0.9,
        "mlp accuracy {}",
        rec.test_accuracy
    );
}

fn finite_difference_worst(layers: Vec<usize>, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let spec = MlpSpec::new(layers.clone()).unwrap();
    let mut state = MlpState::init(&spec, &mut rng);
    for b in state.biases.iter_mut() {
        b.data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.1 * rng.standard_normal());
    }
    let n = 5;
    let k = *layers.last().unwrap();
    let x = Matrix::from_fn(n, layers[0], |_, _| rng.standard_normal());
    let mut y = Matrix::from_fn(n, k, |_, _| rng.uniform01() + 1e-3);
    for r in 0..n {
        let s: f64 = y.row(r).iter().sum();
        y.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    let grads = state.backward(&state.forward(&x).unwrap(), &y).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data().to_vec()).collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (t, g) in analytic.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let orig = state.tensors()[t].data()[i];
            let mut at = |v: f64| {
                state.tensors_mut()[t].data_mut()[i] = v;
                loss_ce_soft(&state.predict(&x).unwrap(), &y).unwrap()
            };
            let numeric = (at(orig + h) - at(orig - h)) / (2.0 * h);
            state.tensors_mut()[t].data_mut()[i] = orig;
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for (layers, seed) in [
        (vec![4, 5, 3], 1),
        (vec![4, 5, 3], 2),
        (vec![3, 2], 3),
        (vec![3, 6, 4, 2], 4),
    ] {
        let worst = finite_difference_worst(layers.clone(), seed);
        assert!(worst < 1e-4, "{layers:?}: {worst:e}");
    }
}
