//! Shared-weight feature encoder: a small perceptron mapping raw media
//! vectors to deep representations. Both sides of a set pair go through the
//! same parameters.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::MediaSet;
use crate::error::{shape_err, Error, Result};

pub const DEFAULT_SLOPE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// How encoder weights are drawn. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean normal with a fixed standard deviation.
    Normal(f64),
    /// Zero-mean normal with std `gain / sqrt(fan_in)`.
    FanIn(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Dense>,
    /// Negative-side slope of the leaky nonlinearity between layers.
    pub slope: f64,
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// Input to each layer; `inputs[0]` is the raw batch.
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pub pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

impl Encoder {
    /// `dims = [d_in, hidden..., d]`; at least one layer.
    pub fn new(dims: &[usize], slope: f64, init: Init, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "invalid encoder dimensions {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = match init {
                    Init::Normal(std) => std,
                    Init::FanIn(gain) => gain / (fan_in as f64).sqrt(),
                };
                let normal = Normal::new(0.0, std)
                    .map_err(|e| Error::Config(format!("bad init std {std}: {e}")))?;
                Ok(Dense {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(rng)),
                    bias: Array1::zeros(fan_out),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder { layers, slope })
    }

    /// Single linear layer with identity weights.
    pub fn identity(dim: usize) -> Self {
        Encoder {
            layers: vec![Dense {
                weight: Array2::eye(dim),
                bias: Array1::zeros(dim),
            }],
            slope: DEFAULT_SLOPE,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
            slope: self.slope,
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<Array1<f64>> {
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward(&batch)?.output.row(0).to_owned())
    }

    /// Encodes every medium of a set; row `i` is medium `i`.
    pub fn encode_set(&self, set: &MediaSet) -> Result<Array2<f64>> {
        Ok(self.forward(&set.to_matrix()?)?.output)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<EncoderTrace> {
        if x.ncols() != self.in_dim() {
            return Err(shape_err("encoder input width", self.in_dim(), x.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut act = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = act.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(act);
            if l < last {
                act = z.mapv(|v| leaky(v, self.slope));
                pre.push(z);
            } else {
                act = z;
            }
        }
        Ok(EncoderTrace {
            inputs,
            pre,
            output: act,
        })
    }

    /// Back-propagates `d_out` (gradient w.r.t. the batch output). Parameter
    /// gradients are added into `grads`; returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        trace: &EncoderTrace,
        d_out: &Array2<f64>,
        grads: &mut Encoder,
    ) -> Array2<f64> {
        let mut delta = d_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            if l < self.layers.len() - 1 {
                let slope = self.slope;
                delta.zip_mut_with(&trace.pre[l], |d, &z| {
                    if z <= 0.0 {
                        *d *= slope;
                    }
                });
            }
            grads.layers[l].weight += &delta.t().dot(&trace.inputs[l]);
            grads.layers[l].bias += &delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[l].weight);
        }
        delta
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{MediaFeature, Modality};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_encoder(seed: u64) -> Encoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Encoder::new(&[5, 7, 4], DEFAULT_SLOPE, Init::FanIn(1.0), &mut rng).unwrap();
        for l in enc.layers.iter_mut() {
            l.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        enc
    }

    fn set_of(rows: &[Vec<f64>]) -> MediaSet {
        MediaSet {
            set_id: 0,
            subject_id: 0,
            media: rows
                .iter()
                .enumerate()
                .map(|(i, v)| MediaFeature {
                    media_id: i as u64,
                    modality: Modality::Image,
                    vector: v.clone(),
                })
                .collect(),
            planted_mode: None,
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let enc = random_encoder(1).zeros_like();
        let out = enc.encode(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let enc = Encoder::identity(3);
        let x = [0.3, -1.5, 2.0];
        assert_eq!(enc.encode(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let enc = random_encoder(2);
        assert!(matches!(enc.encode(&[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn jvp_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..10 {
            let enc = random_encoder(100 + trial);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            // analytic J v = sum over output weights of backward rows
            let xm = Array2::from_shape_vec((1, 5), x.clone()).unwrap();
            let trace = enc.forward(&xm).unwrap();
            let mut jvp = Array1::zeros(4);
            for o in 0..4 {
                let mut d_out = Array2::zeros((1, 4));
                d_out[[0, o]] = 1.0;
                let mut g = enc.zeros_like();
                let dx = enc.backward(&trace, &d_out, &mut g);
                jvp[o] = dx.row(0).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            }
            let h = 1e-6;
            let plus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let fd = (enc.encode(&plus).unwrap() - enc.encode(&minus).unwrap()) / (2.0 * h);
            for (a, n) in jvp.iter().zip(fd.iter()) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                assert!(rel <= 1e-4, "trial {trial}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn parameter_gradients_match_central_differences() {
        let enc = random_encoder(4);
        let x = array![[0.2, -0.4, 1.0, 0.3, -0.9], [1.1, 0.0, -0.2, 0.5, 0.7]];
        let weights = array![[0.5, -1.0, 2.0, 0.1], [-0.3, 0.8, 0.4, 1.5]];
        let loss = |e: &Encoder| (e.forward(&x).unwrap().output * &weights).sum();
        let trace = enc.forward(&x).unwrap();
        let mut grads = enc.zeros_like();
        enc.backward(&trace, &weights, &mut grads);
        let h = 1e-5;
        for l in 0..enc.layers.len() {
            for idx in 0..enc.layers[l].weight.len() {
                let mut p = enc.clone();
                p.layers[l].weight.as_slice_mut().unwrap()[idx] += h;
                let mut m = enc.clone();
                m.layers[l].weight.as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let a = grads.layers[l].weight.as_slice().unwrap()[idx];
                assert!(
                    (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-6),
                    "{a} vs {fd}"
                );
            }
            for idx in 0..enc.layers[l].bias.len() {
                let mut p = enc.clone();
                p.layers[l].bias[idx] += h;
                let mut m = enc.clone();
                m.layers[l].bias[idx] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let a = grads.layers[l].bias[idx];
                assert!(
                    (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-6),
                    "{a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn encode_set_rows_follow_media() {
        let enc = random_encoder(5);
        let v = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let single = set_of(std::slice::from_ref(&v));
        let f = enc.encode_set(&single).unwrap();
        assert_eq!(f.dim(), (1, 4));
        assert_eq!(f.row(0).to_owned(), enc.encode(&v).unwrap());

        let w = vec![-0.5, 0.0, 0.7, 1.0, -1.0];
        let dup = enc
            .encode_set(&set_of(&[v.clone(), w.clone(), v.clone()]))
            .unwrap();
        assert_eq!(dup.row(0), dup.row(2));

        let swapped = enc
            .encode_set(&set_of(&[w.clone(), v.clone(), v.clone()]))
            .unwrap();
        assert_eq!(swapped.row(0), dup.row(1));
        assert_eq!(swapped.row(1), dup.row(0));
    }

    #[test]
    fn weight_tying_order_independent() {
        let enc = random_encoder(6);
        let a = set_of(&[vec![0.1; 5], vec![0.3; 5]]);
        let b = set_of(&[vec![-0.2; 5]]);
        let (fa1, fb1) = (enc.encode_set(&a).unwrap(), enc.encode_set(&b).unwrap());
        let (fb2, fa2) = (enc.encode_set(&b).unwrap(), enc.encode_set(&a).unwrap());
        assert_eq!(fa1, fa2);
        assert_eq!(fb1, fb2);
    }
}
