//! A small MLP variational auto-encoder with diagonal Gaussian heads.
//!
//! Encoder: `x (w*d) -> tanh(h) -> (mean, log_var) (m)`.
//! Decoder: `z (m) -> tanh(h) -> (mean, log_var) (w*d)`.
//! Every emitted log-variance is clamped to `[-10, 10]`; the clamp's
//! derivative is taken as zero outside the interval.

use crate::error::{Error, Result};
use crate::numerics::{
    axpy, clamp_log_var, logpdf_unchecked, AdamState, GaussianDiag, Mat64, Rng, Vec64, LOG_VAR_MAX, LOG_VAR_MIN,
};

/// Anything that maps windows to a diagonal Gaussian posterior over a latent
/// space and latents back to a diagonal Gaussian over windows.
pub trait GaussianVae {
    fn input_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn encode(&self, x: &[f64]) -> Result<GaussianDiag>;
    fn decode(&self, z: &[f64]) -> Result<GaussianDiag>;
}

/// Fully connected layer `y = W x + b` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Mat64,
    pub bias: Vec64,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Mat64::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(input: usize, output: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let mut layer = Self::zeros(input, output);
        for w in layer.weight.as_mut_slice() {
            *w = (2.0 * rng.uniform() - 1.0) * limit;
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, x: &[f64]) -> Vec64 {
        let mut y = self.bias.clone();
        for (yi, row) in y.iter_mut().zip(0..self.weight.rows()) {
            *yi += crate::numerics::dot(self.weight.row(row), x);
        }
        y
    }

    fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    /// Accumulates `dW += dy x^T`, `db += dy`.
    fn accumulate(&mut self, dy: &[f64], x: &[f64], scale: f64) {
        for (i, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(scale * g, x, self.weight.row_mut(i));
                self.bias[i] += scale * g;
            }
        }
    }
}

pub const ENC_HIDDEN: usize = 0;
pub const ENC_MEAN: usize = 1;
pub const ENC_LOG_VAR: usize = 2;
pub const DEC_HIDDEN: usize = 3;
pub const DEC_MEAN: usize = 4;
pub const DEC_LOG_VAR: usize = 5;

/// Parameter tensor names in serialization order.
pub const LAYER_NAMES: [&str; 6] = [
    "enc.hidden",
    "enc.mean",
    "enc.log_var",
    "dec.hidden",
    "dec.mean",
    "dec.log_var",
];

/// Diagonal-Gaussian MLP VAE over flattened windows of `window` steps and
/// `channels` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    window: usize,
    channels: usize,
    latent: usize,
    hidden: usize,
    layers: [Dense; 6],
}

impl VaeModel {
    /// Glorot-initialized model, deterministic in `seed`.
    pub fn new(window: usize, channels: usize, latent: usize, hidden: usize, seed: u64) -> Result<Self> {
        Self::check_dims(window, channels, latent, hidden)?;
        let input = window * channels;
        let mut rng = Rng::new(seed);
        let layers = [
            Dense::glorot(input, hidden, &mut rng),
            Dense::glorot(hidden, latent, &mut rng),
            Dense::glorot(hidden, latent, &mut rng),
            Dense::glorot(latent, hidden, &mut rng),
            Dense::glorot(hidden, input, &mut rng),
            Dense::glorot(hidden, input, &mut rng),
        ];
        Ok(Self {
            window,
            channels,
            latent,
            hidden,
            layers,
        })
    }

    /// Model with every weight and bias set to zero.
    pub fn zeros(window: usize, channels: usize, latent: usize, hidden: usize) -> Result<Self> {
        Self::check_dims(window, channels, latent, hidden)?;
        let input = window * channels;
        Ok(Self {
            window,
            channels,
            latent,
            hidden,
            layers: [
                Dense::zeros(input, hidden),
                Dense::zeros(hidden, latent),
                Dense::zeros(hidden, latent),
                Dense::zeros(latent, hidden),
                Dense::zeros(hidden, input),
                Dense::zeros(hidden, input),
            ],
        })
    }

    pub fn for_config(window: usize, channels: usize, cfg: &TrainConfig) -> Result<Self> {
        Self::new(window, channels, cfg.latent, cfg.hidden, cfg.seed)
    }

    /// Assembles a model from explicit layers, validating that shapes chain.
    pub fn from_layers(window: usize, channels: usize, layers: [Dense; 6]) -> Result<Self> {
        let input = window * channels;
        let hidden = layers[ENC_HIDDEN].output_dim();
        let latent = layers[ENC_MEAN].output_dim();
        Self::check_dims(window, channels, latent, hidden)?;
        let expect = [
            (input, hidden),
            (hidden, latent),
            (hidden, latent),
            (latent, hidden),
            (hidden, input),
            (hidden, input),
        ];
        for (i, (layer, &(fan_in, fan_out))) in layers.iter().zip(&expect).enumerate() {
            if layer.input_dim() != fan_in || layer.output_dim() != fan_out || layer.bias.len() != fan_out {
                return Err(Error::shape(format!(
                    "layer {} is {}x{} with {} biases, expected {fan_out}x{fan_in}",
                    LAYER_NAMES[i],
                    layer.output_dim(),
                    layer.input_dim(),
                    layer.bias.len()
                )));
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Layer {
                    layer: i,
                    what: "parameters",
                });
            }
        }
        Ok(Self {
            window,
            channels,
            latent,
            hidden,
            layers,
        })
    }

    fn check_dims(window: usize, channels: usize, latent: usize, hidden: usize) -> Result<()> {
        if window == 0 || channels == 0 || latent == 0 || hidden == 0 {
            return Err(Error::invalid(format!(
                "vae dimensions must be positive (window {window}, channels {channels}, latent {latent}, hidden {hidden})"
            )));
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn latent(&self) -> usize {
        self.latent
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layers(&self) -> &[Dense; 6] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// All parameters flattened layer by layer (weights row-major, then bias).
    pub fn params(&self) -> Vec64 {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} parameters given, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn check_len(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::shape(format!("{what} of length {got}, expected {want}")));
        }
        Ok(())
    }

    fn encoder_pass(&self, x: &[f64]) -> Result<EncoderPass> {
        let a = self.layers[ENC_HIDDEN].forward(x);
        let h: Vec64 = a.iter().map(|v| v.tanh()).collect();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Layer {
                layer: ENC_HIDDEN,
                what: "hidden activation",
            });
        }
        let mean = self.layers[ENC_MEAN].forward(&h);
        let lv_raw = self.layers[ENC_LOG_VAR].forward(&h);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Layer {
                layer: ENC_MEAN,
                what: "latent mean",
            });
        }
        if lv_raw.iter().any(|v| v.is_nan()) {
            return Err(Error::Layer {
                layer: ENC_LOG_VAR,
                what: "latent log-variance",
            });
        }
        Ok(EncoderPass { h, mean, lv_raw })
    }

    fn decoder_pass(&self, z: &[f64]) -> Result<DecoderPass> {
        let a = self.layers[DEC_HIDDEN].forward(z);
        let h: Vec64 = a.iter().map(|v| v.tanh()).collect();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Layer {
                layer: DEC_HIDDEN,
                what: "hidden activation",
            });
        }
        let mean = self.layers[DEC_MEAN].forward(&h);
        let lv_raw = self.layers[DEC_LOG_VAR].forward(&h);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Layer {
                layer: DEC_MEAN,
                what: "reconstruction mean",
            });
        }
        if lv_raw.iter().any(|v| v.is_nan()) {
            return Err(Error::Layer {
                layer: DEC_LOG_VAR,
                what: "reconstruction log-variance",
            });
        }
        Ok(DecoderPass { h, mean, lv_raw })
    }

    /// Posterior `q(z | x)`.
    pub fn encode(&self, x: &[f64]) -> Result<GaussianDiag> {
        self.check_len(x.len(), self.window * self.channels, "window")?;
        let p = self.encoder_pass(x)?;
        Ok(GaussianDiag {
            mean: p.mean,
            log_var: p.lv_raw.into_iter().map(clamp_log_var).collect(),
        })
    }

    /// Likelihood `p(x | z)`.
    pub fn decode(&self, z: &[f64]) -> Result<GaussianDiag> {
        self.check_len(z.len(), self.latent, "latent")?;
        let p = self.decoder_pass(z)?;
        Ok(GaussianDiag {
            mean: p.mean,
            log_var: p.lv_raw.into_iter().map(clamp_log_var).collect(),
        })
    }

    /// Reconstruction through the posterior mean.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Reconstruction> {
        let z = self.encode(x)?.mean;
        let px = self.decode(&z)?;
        let log_likelihood = logpdf_unchecked(x, &px.mean, &px.log_var);
        Ok(Reconstruction {
            mean: px.mean,
            log_likelihood,
        })
    }

    /// Negative ELBO of one window with `n_mc` reparameterized samples, and
    /// its gradient with respect to [`VaeModel::params`].
    pub fn elbo_loss(&self, x: &[f64], rng: &mut Rng, n_mc: usize) -> Result<Elbo> {
        let mut grad = self.zero_grads();
        let out = self.elbo_accumulate(x, rng, n_mc, &mut grad, 1.0)?;
        Ok(Elbo {
            grad: flatten(&grad),
            ..out
        })
    }

    fn zero_grads(&self) -> [Dense; 6] {
        self.layers.clone().map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
    }

    /// Adds `scale * d(loss)/d(params)` into `grad` and returns the loss parts.
    fn elbo_accumulate(
        &self,
        x: &[f64],
        rng: &mut Rng,
        n_mc: usize,
        grad: &mut [Dense; 6],
        scale: f64,
    ) -> Result<Elbo> {
        self.check_len(x.len(), self.window * self.channels, "window")?;
        if n_mc == 0 {
            return Err(Error::invalid("n_mc must be at least 1"));
        }
        let enc = self.encoder_pass(x)?;
        let lv: Vec64 = enc.lv_raw.iter().map(|&v| clamp_log_var(v)).collect();
        let kl: f64 = 0.5
            * enc
                .mean
                .iter()
                .zip(&lv)
                .map(|(&mu, &l)| mu * mu + l.exp() - l - 1.0)
                .sum::<f64>();

        let m = self.latent;
        let mut d_mean: Vec64 = enc.mean.clone();
        let mut d_lv: Vec64 = lv.iter().map(|l| 0.5 * (l.exp() - 1.0)).collect();
        let inv = 1.0 / n_mc as f64;
        let mut nll_total = 0.0;

        for _ in 0..n_mc {
            let eps: Vec64 = (0..m).map(|_| rng.normal()).collect();
            let std: Vec64 = lv.iter().map(|l| (0.5 * l).exp()).collect();
            let z: Vec64 = (0..m).map(|j| enc.mean[j] + std[j] * eps[j]).collect();
            let dec = self.decoder_pass(&z)?;

            let mut nll = 0.0;
            let n = x.len();
            let mut d_xm = vec![0.0; n];
            let mut d_xlv = vec![0.0; n];
            for j in 0..n {
                let l = clamp_log_var(dec.lv_raw[j]);
                let prec = (-l).exp();
                let r = x[j] - dec.mean[j];
                nll += 0.918_938_533_204_672_7 + 0.5 * l + 0.5 * r * r * prec;
                d_xm[j] = -r * prec;
                if in_clamp(dec.lv_raw[j]) {
                    d_xlv[j] = 0.5 - 0.5 * r * r * prec;
                }
            }
            if !nll.is_finite() {
                return Err(Error::Layer {
                    layer: DEC_MEAN,
                    what: "reconstruction likelihood",
                });
            }
            nll_total += nll;

            let s = scale * inv;
            grad[DEC_MEAN].accumulate(&d_xm, &dec.h, s);
            grad[DEC_LOG_VAR].accumulate(&d_xlv, &dec.h, s);
            let mut d_h = vec![0.0; self.hidden];
            self.layers[DEC_MEAN].weight.tr_matvec_acc(&d_xm, &mut d_h);
            self.layers[DEC_LOG_VAR].weight.tr_matvec_acc(&d_xlv, &mut d_h);
            let d_a: Vec64 = d_h.iter().zip(&dec.h).map(|(g, h)| g * (1.0 - h * h)).collect();
            grad[DEC_HIDDEN].accumulate(&d_a, &z, s);
            let mut d_z = vec![0.0; m];
            self.layers[DEC_HIDDEN].weight.tr_matvec_acc(&d_a, &mut d_z);
            for j in 0..m {
                d_mean[j] += inv * d_z[j];
                d_lv[j] += inv * d_z[j] * eps[j] * 0.5 * std[j];
            }
        }

        for (j, g) in d_lv.iter_mut().enumerate() {
            if !in_clamp(enc.lv_raw[j]) {
                *g = 0.0;
            }
        }
        grad[ENC_MEAN].accumulate(&d_mean, &enc.h, scale);
        grad[ENC_LOG_VAR].accumulate(&d_lv, &enc.h, scale);
        let mut d_h = vec![0.0; self.hidden];
        self.layers[ENC_MEAN].weight.tr_matvec_acc(&d_mean, &mut d_h);
        self.layers[ENC_LOG_VAR].weight.tr_matvec_acc(&d_lv, &mut d_h);
        let d_a: Vec64 = d_h.iter().zip(&enc.h).map(|(g, h)| g * (1.0 - h * h)).collect();
        grad[ENC_HIDDEN].accumulate(&d_a, x, scale);

        let recon_nll = nll_total * inv;
        Ok(Elbo {
            loss: recon_nll + kl,
            recon_nll,
            kl,
            grad: Vec::new(),
        })
    }
}

#[inline]
fn in_clamp(raw: f64) -> bool {
    (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw)
}

fn flatten(layers: &[Dense; 6]) -> Vec64 {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

impl GaussianVae for VaeModel {
    fn input_dim(&self) -> usize {
        self.window * self.channels
    }

    fn latent_dim(&self) -> usize {
        self.latent
    }

    fn encode(&self, x: &[f64]) -> Result<GaussianDiag> {
        VaeModel::encode(self, x)
    }

    fn decode(&self, z: &[f64]) -> Result<GaussianDiag> {
        VaeModel::decode(self, z)
    }
}

struct EncoderPass {
    h: Vec64,
    mean: Vec64,
    lv_raw: Vec64,
}

struct DecoderPass {
    h: Vec64,
    mean: Vec64,
    lv_raw: Vec64,
}

/// Negative ELBO split into its two terms.
#[derive(Debug, Clone)]
pub struct Elbo {
    pub loss: f64,
    pub recon_nll: f64,
    pub kl: f64,
    /// Gradient of `loss`, laid out like [`VaeModel::params`].
    pub grad: Vec64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub mean: Vec64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    pub latent: usize,
    pub n_mc: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 100,
            lr: 0.001,
            seed: 0,
            hidden: 32,
            latent: 8,
            n_mc: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 || self.latent == 0 || self.n_mc == 0 {
            return Err(Error::invalid("batch_size, hidden, latent and n_mc must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Trains a copy of `model` with Adam over shuffled mini-batches and returns
/// it with the mean loss of every epoch.
pub fn train_vae(model: &VaeModel, data: &[Vec64], cfg: &TrainConfig) -> Result<(VaeModel, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut model = model.clone();
    let mut rng = Rng::new(cfg.seed);
    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let out = model.elbo_accumulate(&data[i], &mut rng, cfg.n_mc, &mut grad, scale)?;
                epoch_loss += out.loss;
            }
            adam.step(&mut params, &flatten(&grad))?;
            model.set_params(&params)?;
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok((model, history))
}
