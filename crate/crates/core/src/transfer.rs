//! Class-agnostic weight transfer: a two-layer fully connected network that
//! maps a class's concatenated classification and box-regression weights to
//! its segmentation weights. One parameter set serves every class, so it
//! applies unchanged to classes never seen during training.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::debug;
use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferNet {
    d_cls: usize,
    d_det: usize,
    /// `hidden x (d_cls + d_det)`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `d_seg x hidden`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Leaky rectifier slope for negative pre-activations; 1 makes the net linear.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferGradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// One supervision triple `(w_cls, w_det) -> w_seg`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSample {
    pub w_cls: Array1<f64>,
    pub w_det: Array1<f64>,
    pub target: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// `None` trains on the full batch every step.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TransferNet,
    /// Loss of the batch seen at each step, before that step's update.
    pub trace: Vec<f64>,
}

impl TransferNet {
    pub fn zeros(d_cls: usize, d_det: usize, hidden: usize, d_seg: usize, alpha: f64) -> Result<Self> {
        if hidden == 0 || d_seg == 0 || d_cls + d_det == 0 {
            return Err(Error::invalid(format!(
                "transfer net dimensions must be positive (in {}, hidden {hidden}, out {d_seg})",
                d_cls + d_det
            )));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("leaky slope must be finite"));
        }
        Ok(Self {
            d_cls,
            d_det,
            w1: Array2::zeros((hidden, d_cls + d_det)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((d_seg, hidden)),
            b2: Array1::zeros(d_seg),
            alpha,
        })
    }

    /// Gaussian init scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn random(
        d_cls: usize,
        d_det: usize,
        hidden: usize,
        d_seg: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::zeros(d_cls, d_det, hidden, d_seg, alpha)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, 1.0 / ((d_cls + d_det) as f64).sqrt()).expect("valid sigma");
        let n2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("valid sigma");
        net.w1.mapv_inplace(|_| n1.sample(&mut rng));
        net.w2.mapv_inplace(|_| n2.sample(&mut rng));
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.d_cls + self.d_det
    }

    pub fn cls_dim(&self) -> usize {
        self.d_cls
    }

    pub fn det_dim(&self) -> usize {
        self.d_det
    }

    pub fn hidden_dim(&self) -> usize {
        self.b1.len()
    }

    pub fn output_dim(&self) -> usize {
        self.b2.len()
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn join(&self, w_cls: ArrayView1<'_, f64>, w_det: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if w_cls.len() != self.d_cls {
            return Err(Error::DimensionMismatch {
                expected: self.d_cls,
                got: w_cls.len(),
            });
        }
        if w_det.len() != self.d_det {
            return Err(Error::DimensionMismatch {
                expected: self.d_det,
                got: w_det.len(),
            });
        }
        Ok(concatenate![Axis(0), w_cls, w_det])
    }

    fn activate(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.alpha * z
        }
    }

    fn slope(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.alpha
        }
    }

    /// `w_seg = W2 act(W1 [w_cls; w_det] + b1) + b2`.
    pub fn forward(&self, w_cls: ArrayView1<'_, f64>, w_det: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let x = self.join(w_cls, w_det)?;
        let hidden = (self.w1.dot(&x) + &self.b1).mapv(|z| self.activate(z));
        Ok(self.w2.dot(&hidden) + &self.b2)
    }

    /// Segmentation weights for a class that had no mask supervision.
    pub fn apply_to_unseen_class(
        &self,
        w_cls: ArrayView1<'_, f64>,
        w_det: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        self.forward(w_cls, w_det)
    }

    /// Flattened parameters in the order `w1, b1, w2, b2` (row-major).
    pub fn params(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for slot in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *slot = it.next().expect("length checked");
        }
        Ok(())
    }

    fn apply_update(&mut self, grads: &TransferGradients, lr: f64) {
        self.w1.scaled_add(-lr, &grads.w1);
        self.b1.scaled_add(-lr, &grads.b1);
        self.w2.scaled_add(-lr, &grads.w2);
        self.b2.scaled_add(-lr, &grads.b2);
    }

    /// Little-endian binary checkpoint: `d_cls, d_det, hidden, d_seg` as
    /// u32, `alpha` as f64, then `w1, b1, w2, b2` row-major as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.num_params());
        for d in [self.d_cls, self.d_det, self.hidden_dim(), self.output_dim()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.alpha.to_le_bytes());
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(Error::Format("transfer checkpoint shorter than its header".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let alpha = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let mut net = Self::zeros(dim(0), dim(1), dim(2), dim(3), alpha)?;
        let body = &bytes[24..];
        if body.len() != 8 * net.num_params() {
            return Err(Error::Format(format!(
                "transfer checkpoint holds {} bytes of parameters, expected {}",
                body.len(),
                8 * net.num_params()
            )));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        net.set_params(&params)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

impl TransferGradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }
}

/// Loss `1/2 * mean_n ||f(x_n) - t_n||^2` and its parameter gradients.
pub fn transfer_gradient(net: &TransferNet, batch: &[TransferSample]) -> Result<(f64, TransferGradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("transfer_gradient needs a non-empty batch"));
    }
    let mut grads = TransferGradients {
        w1: Array2::zeros(net.w1.raw_dim()),
        b1: Array1::zeros(net.b1.raw_dim()),
        w2: Array2::zeros(net.w2.raw_dim()),
        b2: Array1::zeros(net.b2.raw_dim()),
    };
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for sample in batch {
        if sample.target.len() != net.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.output_dim(),
                got: sample.target.len(),
            });
        }
        let x = net.join(sample.w_cls.view(), sample.w_det.view())?;
        let pre = net.w1.dot(&x) + &net.b1;
        let hidden = pre.mapv(|z| net.activate(z));
        let out = net.w2.dot(&hidden) + &net.b2;
        let residual = &out - &sample.target;
        loss += 0.5 * residual.dot(&residual);

        let d_out = &residual * scale;
        let d_hidden = net.w2.t().dot(&d_out);
        let d_pre = &d_hidden * &pre.mapv(|z| net.slope(z));

        grads.w2 += &outer(&d_out, &hidden);
        grads.b2 += &d_out;
        grads.w1 += &outer(&d_pre, &x);
        grads.b1 += &d_pre;
    }
    Ok((loss * scale, grads))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}

/// Plain gradient descent. Aborts if the loss becomes non-finite.
pub fn train_transfer(
    net: &TransferNet,
    dataset: &[TransferSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if config.steps == 0 {
        return Err(Error::invalid("train_transfer needs at least one step"));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::invalid(format!(
            "learning rate must be non-negative and finite, got {}",
            config.learning_rate
        )));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("train_transfer needs a non-empty dataset"));
    }
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::with_capacity(config.steps);
    let batch_size = config
        .batch_size
        .filter(|&b| b > 0 && b < dataset.len());

    let mut scratch = Vec::new();
    for step in 0..config.steps {
        let batch: &[TransferSample] = match batch_size {
            Some(b) => {
                scratch.clear();
                scratch.extend(
                    sample(&mut rng, dataset.len(), b)
                        .into_iter()
                        .map(|i| dataset[i].clone()),
                );
                &scratch
            }
            None => dataset,
        };
        let (loss, grads) = transfer_gradient(&net, batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { step, value: loss });
        }
        trace.push(loss);
        net.apply_update(&grads, config.learning_rate);
        if step % 500 == 0 {
            debug!("transfer step {step}: loss {loss:.6e}");
        }
    }
    Ok(TrainOutcome { net, trace })
}

/// Synthetic supervision from a fixed random linear map, for desk-scale
/// training where real detector weights are unavailable.
pub fn synthetic_linear_dataset(
    d_cls: usize,
    d_det: usize,
    d_seg: usize,
    n: usize,
    seed: u64,
) -> (Array2<f64>, Vec<TransferSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid sigma");
    let d_in = d_cls + d_det;
    let map = Array2::from_shape_fn((d_seg, d_in), |_| normal.sample(&mut rng) / (d_in as f64).sqrt());
    let samples = (0..n)
        .map(|_| {
            let x = Array1::from_shape_fn(d_in, |_| normal.sample(&mut rng));
            let target = map.dot(&x);
            TransferSample {
                w_cls: x.slice(s![..d_cls]).to_owned(),
                w_det: x.slice(s![d_cls..]).to_owned(),
                target,
            }
        })
        .collect();
    (map, samples)
}

pub fn trace_to_csv(trace: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{l:?}");
    }
    out
}
