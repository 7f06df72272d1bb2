//! 6-4-2-4-6 autoencoder over normalized keypoint attributes, trained by
//! full-batch gradient descent with hand-written backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Keypoint, ResampleConfig};
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 6;
pub const LATENT_DIM: usize = 2;
const HIDDEN_DIM: usize = 4;

/// `(inputs, outputs)` of each dense layer, in forward order.
const LAYERS: [(usize, usize); 4] = [
    (INPUT_DIM, HIDDEN_DIM),
    (HIDDEN_DIM, LATENT_DIM),
    (LATENT_DIM, HIDDEN_DIM),
    (HIDDEN_DIM, INPUT_DIM),
];

/// Total number of trainable parameters.
pub const PARAM_COUNT: usize = {
    let mut n = 0;
    let mut i = 0;
    while i < LAYERS.len() {
        n += LAYERS[i].0 * LAYERS[i].1 + LAYERS[i].1;
        i += 1;
    }
    n
};

/// Per-attribute min-max scaling to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub min: [f64; INPUT_DIM],
    pub range: [f64; INPUT_DIM],
}

impl Normalizer {
    pub fn fit(raw: &[[f64; INPUT_DIM]]) -> Self {
        let mut min = [f64::INFINITY; INPUT_DIM];
        let mut max = [f64::NEG_INFINITY; INPUT_DIM];
        for v in raw {
            for k in 0..INPUT_DIM {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
        let mut range = [0.0; INPUT_DIM];
        for k in 0..INPUT_DIM {
            range[k] = max[k] - min[k];
        }
        Self { min, range }
    }

    /// Constant attributes map to 0.
    pub fn apply(&self, v: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        let mut out = [0.0; INPUT_DIM];
        for k in 0..INPUT_DIM {
            if self.range[k] > 0.0 {
                out[k] = (v[k] - self.min[k]) / self.range[k];
            }
        }
        out
    }
}

/// Raw attribute vector `(x, y, size, angle, response, octave)`; an unset
/// angle (-1) becomes 0.
pub fn attributes(kp: &Keypoint) -> [f64; INPUT_DIM] {
    let angle = if kp.angle < 0.0 { 0.0 } else { kp.angle };
    [kp.x, kp.y, kp.size, angle, kp.response, kp.octave as f64]
}

/// Network weights stored flat: for each layer, a row-major `out x in`
/// weight block followed by `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub params: Vec<f64>,
}

struct Activations {
    a: [[f64; INPUT_DIM]; 4],
}

impl Autoencoder {
    /// Weights uniform in `(-0.5, 0.5) / sqrt(fan_in)`, biases zero.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(PARAM_COUNT);
        for &(fan_in, fan_out) in &LAYERS {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-0.5..0.5) * scale);
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Self { params }
    }

    fn forward(&self, x: &[f64; INPUT_DIM]) -> Activations {
        let mut acts = Activations {
            a: [[0.0; INPUT_DIM]; 4],
        };
        let mut input = *x;
        let mut off = 0;
        for (l, &(n_in, n_out)) in LAYERS.iter().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut out = [0.0; INPUT_DIM];
            for o in 0..n_out {
                let mut z = b[o];
                for i in 0..n_in {
                    z += w[o * n_in + i] * input[i];
                }
                out[o] = if l + 1 < LAYERS.len() { z.tanh() } else { z };
            }
            acts.a[l] = out;
            input = out;
            off += n_in * n_out + n_out;
        }
        acts
    }

    pub fn encode(&self, x: &[f64; INPUT_DIM]) -> [f64; LATENT_DIM] {
        let a = self.forward(x).a[1];
        [a[0], a[1]]
    }

    pub fn reconstruct(&self, x: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        self.forward(x).a[3]
    }

    /// Reconstruction loss `sum_i |x_i - g(f(x_i))|^2`.
    pub fn loss(&self, data: &[[f64; INPUT_DIM]]) -> f64 {
        data.iter()
            .map(|x| {
                let y = self.reconstruct(x);
                (0..INPUT_DIM).map(|k| (y[k] - x[k]).powi(2)).sum::<f64>()
            })
            .sum()
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, data: &[[f64; INPUT_DIM]]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; PARAM_COUNT];
        let mut offsets = [0usize; 4];
        let mut off = 0;
        for (l, &(n_in, n_out)) in LAYERS.iter().enumerate() {
            offsets[l] = off;
            off += n_in * n_out + n_out;
        }

        let mut loss = 0.0;
        for x in data {
            let acts = self.forward(x);
            // delta holds dL/dz for the current layer.
            let mut delta = [0.0; INPUT_DIM];
            for k in 0..INPUT_DIM {
                let e = acts.a[3][k] - x[k];
                loss += e * e;
                delta[k] = 2.0 * e;
            }
            for l in (0..LAYERS.len()).rev() {
                let (n_in, n_out) = LAYERS[l];
                let input: &[f64; INPUT_DIM] = if l == 0 { x } else { &acts.a[l - 1] };
                let o = offsets[l];
                for r in 0..n_out {
                    for c in 0..n_in {
                        grad[o + r * n_in + c] += delta[r] * input[c];
                    }
                    grad[o + n_in * n_out + r] += delta[r];
                }
                if l == 0 {
                    break;
                }
                let mut prev = [0.0; INPUT_DIM];
                for c in 0..n_in {
                    let mut s = 0.0;
                    for r in 0..n_out {
                        s += self.params[o + r * n_in + c] * delta[r];
                    }
                    let a = input[c];
                    prev[c] = s * (1.0 - a * a);
                }
                delta = prev;
            }
        }
        (loss, grad)
    }
}

/// A trained network together with the normalization it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedAutoencoder {
    pub network: Autoencoder,
    pub normalizer: Normalizer,
    /// `loss_history[e]` is the loss after `e` epochs (index 0 = before training).
    pub loss_history: Vec<f64>,
    pub latents: Vec<[f64; LATENT_DIM]>,
}

/// Normalized training matrix for a keypoint set.
pub fn training_data(keypoints: &[Keypoint]) -> (Normalizer, Vec<[f64; INPUT_DIM]>) {
    let raw: Vec<[f64; INPUT_DIM]> = keypoints.iter().map(attributes).collect();
    let norm = Normalizer::fit(&raw);
    let data = raw.iter().map(|v| norm.apply(v)).collect();
    (norm, data)
}

/// Trains on `keypoints` for `cfg.epochs` full-batch steps and returns the
/// final latent projections. `warm_start` replaces the seeded initialization.
pub fn train_autoencoder(
    keypoints: &[Keypoint],
    cfg: &ResampleConfig,
    warm_start: Option<&Autoencoder>,
) -> Result<TrainedAutoencoder> {
    if keypoints.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "autoencoder needs at least 2 keypoints, got {}",
            keypoints.len()
        )));
    }
    cfg.validate()?;
    let (normalizer, data) = training_data(keypoints);
    let mut network = match warm_start {
        Some(net) => net.clone(),
        None => Autoencoder::init(cfg.seed),
    };
    let n = data.len() as f64;
    let mut loss_history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = network.loss_and_gradient(&data);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        loss_history.push(loss);
        // Step on the mean loss so the step size does not scale with |K|.
        for (p, g) in network.params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g / n;
        }
    }
    let final_loss = network.loss(&data);
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: cfg.epochs });
    }
    loss_history.push(final_loss);
    let latents = data.iter().map(|x| network.encode(x)).collect();
    Ok(TrainedAutoencoder {
        network,
        normalizer,
        loss_history,
        latents,
    })
}
