use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected network with tanh hidden layers and a linear output
/// layer. Parameters live in one flat vector, layer by layer, each layer
/// stored as a row-major `out x in` weight block followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations of one forward pass; `acts[0]` is the input and the last
/// entry is the raw (pre-head) output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need an input and an output layer");
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let mut mlp = Self::zeros(sizes);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut mlp.params[off..off + fan_in * fan_out] {
                *p = rng.random_range(-a..a);
            }
            off += fan_in * fan_out + fan_out;
        }
        mlp
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward(&self, input: &[f64]) -> ForwardCache {
        assert_eq!(input.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.to_vec());
        let mut off = 0;
        for (li, w) in self.sizes.windows(2).enumerate() {
            let (nin, nout) = (w[0], w[1]);
            let weights = &self.params[off..off + nin * nout];
            let bias = &self.params[off + nin * nout..off + nin * nout + nout];
            let prev = &acts[li];
            let mut out: Vec<f64> = (0..nout)
                .map(|o| {
                    bias[o]
                        + weights[o * nin..(o + 1) * nin]
                            .iter()
                            .zip(prev)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            if li + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
            off += nin * nout + nout;
        }
        ForwardCache { acts }
    }

    /// Accumulates `d(g_out . output)/d params` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, g_out: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = g_out.to_vec();
        for li in (0..layers).rev() {
            let (nin, nout) = (self.sizes[li], self.sizes[li + 1]);
            let off = offsets[li];
            let prev = &cache.acts[li];
            for o in 0..nout {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * nin..off + (o + 1) * nin];
                row.iter_mut().zip(prev).for_each(|(g, a)| *g += d * a);
                grad[off + nin * nout + o] += d;
            }
            if li == 0 {
                break;
            }
            let weights = &self.params[off..off + nin * nout];
            let mut next = vec![0.0; nin];
            for o in 0..nout {
                let d = delta[o];
                if d != 0.0 {
                    next.iter_mut()
                        .zip(&weights[o * nin..(o + 1) * nin])
                        .for_each(|(n, w)| *n += d * w);
                }
            }
            // through tanh of the previous hidden layer
            next.iter_mut()
                .zip(prev)
                .for_each(|(n, a)| *n *= 1.0 - a * a);
            delta = next;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::init(&[4, 5, 3, 2], &mut rng);
        let input = [0.3, -0.2, 0.9, 0.1];
        let g_out = [0.7, -1.3];
        let mut grad = vec![0.0; mlp.num_params()];
        mlp.backward(&mlp.forward(&input), &g_out, &mut grad);
        let f = |m: &Mlp| {
            m.forward(&input)
                .output()
                .iter()
                .zip(&g_out)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        for i in 0..mlp.num_params() {
            let mut p = mlp.clone();
            p.params[i] += 1e-6;
            let mut m = mlp.clone();
            m.params[i] -= 1e-6;
            let num = (f(&p) - f(&m)) / 2e-6;
            assert!(
                (num - grad[i]).abs() < 1e-7,
                "param {i}: {num} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::zeros(&[3, 4, 2]);
        assert_eq!(mlp.forward(&[1.0, 2.0, 3.0]).output(), &[0.0, 0.0]);
        assert_eq!(mlp.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }
}
