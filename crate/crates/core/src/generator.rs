//! Dense feedforward ReLU generator `G: R^k -> R^n`.
//!
//! Backpropagation is hand-written: [`GeneratorNetwork::forward_cached`]
//! records every layer input and pre-activation, and
//! [`GeneratorNetwork::backward`] walks the layers in reverse. The ReLU
//! derivative at exactly zero is taken as zero.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{gaussian_matrix, norm, norm_sq, DenseMatrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine map followed by an activation; `weights` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        check_len("layer bias", bias.len(), weights.rows())?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("layer bias is not finite".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// A latent code `z ∈ R^k` with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("latent code is not finite".into()));
        }
        Ok(Self(z))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Projects onto the closed unit ball.
    pub fn clamp_to_unit_ball(&mut self) {
        let n = norm(&self.0);
        if n > 1.0 {
            self.0.iter_mut().for_each(|v| *v /= n);
        }
    }
}

impl std::ops::Deref for LatentCode {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `inputs[i]` is the input to layer `i`; `inputs[0]` is `z`.
    pub inputs: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Clone, Debug)]
pub struct ParamGradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNetwork {
    layers: Vec<Layer>,
}

impl GeneratorNetwork {
    /// Builds a network after checking that consecutive widths chain.
    ///
    /// Networks built by [`random_generator`] and [`train_glo`] use ReLU on
    /// hidden layers and identity on the output layer; this constructor
    /// accepts any activation per layer.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("generator needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::Dimension(format!(
                    "layer {} takes {} inputs but layer {} produces {}",
                    i + 1,
                    pair[1].input_dim(),
                    i,
                    pair[0].output_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("generator input", z.len(), self.latent_dim())?;
        let mut h = z.to_vec();
        for layer in &self.layers {
            let mut pre = layer.weights.matvec(&h)?;
            for (v, b) in pre.iter_mut().zip(&layer.bias) {
                *v = layer.activation.apply(*v + b);
            }
            h = pre;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, z: &[f64]) -> Result<ForwardCache> {
        check_len("generator input", z.len(), self.latent_dim())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = z.to_vec();
        for layer in &self.layers {
            let mut pre = layer.weights.matvec(&h)?;
            for (v, b) in pre.iter_mut().zip(&layer.bias) {
                *v += b;
            }
            let out = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut h, out));
            pre_activations.push(pre);
        }
        Ok(ForwardCache {
            inputs,
            pre_activations,
            output: h,
        })
    }

    /// Reverse pass. Returns `J_G(z)ᵀ · cotangent` and, when requested, the
    /// gradient of `⟨cotangent, G(z)⟩` with respect to every parameter.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        cotangent: &[f64],
        want_params: bool,
    ) -> Result<(Vec<f64>, Option<ParamGradients>)> {
        check_len("cotangent", cotangent.len(), self.output_dim())?;
        let mut grads = want_params.then(|| ParamGradients {
            weights: Vec::with_capacity(self.layers.len()),
            biases: Vec::with_capacity(self.layers.len()),
        });
        let mut delta = cotangent.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            for (d, &pre) in delta.iter_mut().zip(&cache.pre_activations[i]) {
                *d *= layer.activation.derivative(pre);
            }
            if let Some(g) = grads.as_mut() {
                let input = &cache.inputs[i];
                let mut gw = Vec::with_capacity(delta.len() * input.len());
                for &d in &delta {
                    gw.extend(input.iter().map(|&a| d * a));
                }
                g.weights.push(gw);
                g.biases.push(delta.clone());
            }
            delta = layer.weights.matvec_transpose(&delta)?;
        }
        if let Some(g) = grads.as_mut() {
            g.weights.reverse();
            g.biases.reverse();
        }
        Ok((delta, grads))
    }

    /// Vector-Jacobian product `J_G(z)ᵀ · cotangent`.
    pub fn vjp(&self, z: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        check_len("cotangent", cotangent.len(), self.output_dim())?;
        let cache = self.forward_cached(z)?;
        Ok(self.backward(&cache, cotangent, false)?.0)
    }

    /// `‖w − G(z)‖²`
    pub fn inner_loss(&self, z: &[f64], w: &[f64]) -> Result<f64> {
        check_len("projection target", w.len(), self.output_dim())?;
        let x = self.forward(z)?;
        Ok(x.iter().zip(w).map(|(a, b)| (b - a) * (b - a)).sum())
    }

    /// Gradient of `‖w − G(z)‖²` with respect to `z`.
    pub fn grad_inner_loss(&self, z: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inner_loss_and_grad(z, w)?.1)
    }

    pub(crate) fn inner_loss_and_grad(&self, z: &[f64], w: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("projection target", w.len(), self.output_dim())?;
        let cache = self.forward_cached(z)?;
        let resid: Vec<f64> = w.iter().zip(&cache.output).map(|(a, b)| a - b).collect();
        let loss = norm_sq(&resid);
        let mut g = self.backward(&cache, &resid, false)?.0;
        g.iter_mut().for_each(|v| *v *= -2.0);
        Ok((loss, g))
    }

    fn apply_gradients(&mut self, grads: &ParamGradients, lr: f64) {
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            for (w, g) in layer.weights.entries_mut().iter_mut().zip(gw) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.entries().iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }
}

/// Random He-initialized generator: weights `N(0, 2/fan_in)`, zero biases,
/// ReLU on hidden layers, identity on the output.
pub fn random_generator(
    latent_dim: usize,
    hidden_dims: &[usize],
    output_dim: usize,
    rng: &mut RngStream,
) -> Result<GeneratorNetwork> {
    if latent_dim == 0 || output_dim == 0 || hidden_dims.contains(&0) {
        return Err(Error::Dimension(format!(
            "generator dims must all be >= 1 (k={latent_dim}, hidden={hidden_dims:?}, n={output_dim})"
        )));
    }
    let widths: Vec<usize> = std::iter::once(latent_dim)
        .chain(hidden_dims.iter().copied())
        .chain(std::iter::once(output_dim))
        .collect();
    let last = widths.len() - 2;
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = gaussian_matrix(fan_out, fan_in, (2.0 / fan_in as f64).sqrt(), rng)?;
            let activation = if i == last {
                Activation::Identity
            } else {
                Activation::Relu
            };
            Layer::new(weights, vec![0.0; fan_out], activation)
        })
        .collect::<Result<Vec<_>>>()?;
    GeneratorNetwork::new(layers)
}

// ---------------------------------------------------------------------------
// Weight files
// ---------------------------------------------------------------------------

pub const WEIGHT_FORMAT_VERSION: &str = "1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightDoc {
    format_version: String,
    latent_dim: usize,
    output_dim: usize,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl GeneratorNetwork {
    /// Writes the JSON weight document. Floats use shortest round-trip
    /// decimal form, so a load reproduces every entry bit-exactly.
    pub fn save_weights<W: Write>(&self, sink: W) -> Result<()> {
        let doc = WeightDoc {
            format_version: WEIGHT_FORMAT_VERSION.to_string(),
            latent_dim: self.latent_dim(),
            output_dim: self.output_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    activation: l.activation,
                    weights: l.weights.entries().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        serde_json::to_writer_pretty(sink, &doc)?;
        Ok(())
    }

    pub fn load_weights<R: Read>(source: R) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_reader(source).map_err(|e| Error::Schema(e.to_string()))?;
        match value.get("format_version") {
            Some(serde_json::Value::String(v)) if v == WEIGHT_FORMAT_VERSION => {}
            Some(serde_json::Value::String(v)) => {
                return Err(Error::UnsupportedVersion { found: v.clone() })
            }
            Some(other) => {
                return Err(Error::UnsupportedVersion {
                    found: other.to_string(),
                })
            }
            None => return Err(Error::Schema("missing format_version".into())),
        }
        let doc: WeightDoc =
            serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;

        let mut layers = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.into_iter().enumerate() {
            if l.weights.len() != l.rows * l.cols {
                return Err(Error::Dimension(format!(
                    "layer {i}: declared {}x{} but weights has {} entries",
                    l.rows,
                    l.cols,
                    l.weights.len()
                )));
            }
            if l.bias.len() != l.rows {
                return Err(Error::Dimension(format!(
                    "layer {i}: declared {} rows but bias has {} entries",
                    l.rows,
                    l.bias.len()
                )));
            }
            layers.push(Layer::new(
                DenseMatrix::new(l.rows, l.cols, l.weights)?,
                l.bias,
                l.activation,
            )?);
        }
        let net = GeneratorNetwork::new(layers)?;
        if net.latent_dim() != doc.latent_dim || net.output_dim() != doc.output_dim {
            return Err(Error::Dimension(format!(
                "declared {}→{} but layers give {}→{}",
                doc.latent_dim,
                doc.output_dim,
                net.latent_dim(),
                net.output_dim()
            )));
        }
        Ok(net)
    }

    pub fn save_weights_to(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.save_weights(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_weights_from(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::load_weights(std::io::BufReader::new(f))
    }
}

// ---------------------------------------------------------------------------
// GLO training
// ---------------------------------------------------------------------------

/// Hyperparameters for joint generator/latent training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GloConfig {
    pub latent_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub lr_weights: f64,
    pub lr_latent: f64,
}

#[derive(Clone, Debug)]
pub struct GloOutcome {
    pub generator: GeneratorNetwork,
    pub codes: Vec<LatentCode>,
    /// Mean per-sample squared loss accumulated during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Largest latent norm seen after any update within each epoch.
    pub epoch_max_latent_norm: Vec<f64>,
}

impl GloOutcome {
    /// Mean `‖x − G(z)‖²` over the dataset with the final parameters.
    pub fn reconstruction_loss(&self, dataset: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for (x, z) in dataset.iter().zip(&self.codes) {
            total += self.generator.inner_loss(z, x)?;
        }
        Ok(total / dataset.len() as f64)
    }
}

/// Trains a generator by SGD over `(network weights, per-sample latent
/// codes)` under squared loss. Codes start on the unit sphere and are
/// projected back onto the unit ball after every update.
pub fn train_glo(
    dataset: &[Vec<f64>],
    cfg: &GloConfig,
    rng: &mut RngStream,
) -> Result<GloOutcome> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidArgument("GLO training needs a non-empty dataset".into()))?;
    let n = first.len();
    for (i, x) in dataset.iter().enumerate() {
        check_len(&format!("training sample {i}"), x.len(), n)?;
    }
    if !(cfg.lr_weights > 0.0 && cfg.lr_latent > 0.0) {
        return Err(Error::InvalidArgument("learning rates must be positive".into()));
    }

    let mut net_rng = rng.split(0);
    let mut code_rng = rng.split(1);
    let mut order_rng = rng.split(2);

    let mut generator = random_generator(cfg.latent_dim, &cfg.hidden_dims, n, &mut net_rng)?;
    let mut codes: Vec<LatentCode> = dataset
        .iter()
        .map(|_| LatentCode(code_rng.unit_sphere(cfg.latent_dim)))
        .collect();

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut epoch_max_latent_norm = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut max_norm = 0.0f64;
        for &i in &order {
            let cache = generator.forward_cached(&codes[i])?;
            let resid: Vec<f64> = cache.output.iter().zip(&dataset[i]).map(|(g, x)| g - x).collect();
            total += norm_sq(&resid);
            let cot: Vec<f64> = resid.iter().map(|r| 2.0 * r).collect();
            let (gz, gp) = generator.backward(&cache, &cot, true)?;
            generator.apply_gradients(&gp.expect("requested"), cfg.lr_weights);
            let z = &mut codes[i].0;
            for (zi, gi) in z.iter_mut().zip(&gz) {
                *zi -= cfg.lr_latent * gi;
            }
            codes[i].clamp_to_unit_ball();
            max_norm = max_norm.max(norm(&codes[i]));
        }
        let loss = total / dataset.len() as f64;
        if !loss.is_finite() || !generator.all_finite() {
            return Err(Error::Divergence {
                stage: "glo epoch",
                step: epoch,
                loss,
            });
        }
        epoch_losses.push(loss);
        epoch_max_latent_norm.push(max_norm);
    }

    Ok(GloOutcome {
        generator,
        codes,
        epoch_losses,
        epoch_max_latent_norm,
    })
}
