//! Random-MLP table generators.
//!
//! A [`MlpSpec`] fixes the architecture, activations and noise levels of a
//! random network; its weights are a pure function of `weight_seed` and the
//! input width, so the same spec reproduces the same network wherever it is
//! applied. Each generated row `i` draws its input noise and per-layer noise
//! from `rng.derive(i)`, in this order: input normals, then layer noise
//! normals for layer 0, 1, ...

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{label, RngStream};

/// Width of the Gaussian noise vector appended to each row in conditional
/// generation.
pub const COND_NOISE_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Sine,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Self::Tanh, Self::Relu, Self::Sine, Self::Identity];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(0.0),
            Self::Sine => x.sin(),
            Self::Identity => x,
        }
    }

    fn init_gain(self) -> f64 {
        match self {
            Self::Relu => std::f64::consts::SQRT_2,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weight_seed: u64,
    /// Std of the Gaussian noise added after each layer.
    pub noise_std: Vec<f64>,
    /// Std of the noise vector appended to conditional inputs.
    pub input_noise_std: f64,
}

/// Ranges `sample_mlp_spec` draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorRanges {
    pub layers: (usize, usize),
    pub widths: (usize, usize),
    /// Log-uniform range of per-layer noise std.
    pub noise_std: (f64, f64),
    pub input_noise_std: (f64, f64),
    pub activations: Vec<Activation>,
}

impl Default for GeneratorRanges {
    fn default() -> Self {
        Self {
            layers: (1, 4),
            widths: (8, 64),
            noise_std: (1e-3, 0.3),
            input_noise_std: (0.1, 1.0),
            activations: Activation::ALL.to_vec(),
        }
    }
}

impl GeneratorRanges {
    pub fn validate(&self) -> Result<()> {
        if self.layers.0 == 0 || self.layers.0 > self.layers.1 {
            return Err(Error::config(format!(
                "invalid layer range {:?}",
                self.layers
            )));
        }
        if self.widths.0 == 0 || self.widths.0 > self.widths.1 {
            return Err(Error::config(format!(
                "invalid width range {:?}",
                self.widths
            )));
        }
        let (lo, hi) = self.noise_std;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(format!(
                "invalid noise range {:?}",
                self.noise_std
            )));
        }
        let (lo, hi) = self.input_noise_std;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(format!(
                "invalid input noise range {:?}",
                self.input_noise_std
            )));
        }
        if self.activations.is_empty() {
            return Err(Error::config("activation set is empty"));
        }
        Ok(())
    }
}

/// One dense layer, `out x in` row-major weights.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

pub fn sample_mlp_spec(rng: &RngStream, ranges: &GeneratorRanges) -> Result<MlpSpec> {
    ranges.validate()?;
    let mut r = rng.clone();
    let layers = r.int_inclusive(ranges.layers.0, ranges.layers.1);
    let mut layer_widths = Vec::with_capacity(layers);
    let mut activations = Vec::with_capacity(layers);
    let mut noise_std = Vec::with_capacity(layers);
    for _ in 0..layers {
        layer_widths.push(r.int_inclusive(ranges.widths.0, ranges.widths.1));
        activations.push(ranges.activations[r.below(ranges.activations.len() as u64) as usize]);
        noise_std.push(r.log_uniform(ranges.noise_std.0, ranges.noise_std.1));
    }
    let input_noise_std = r.uniform_range(ranges.input_noise_std.0, ranges.input_noise_std.1);
    Ok(MlpSpec {
        layer_widths,
        activations,
        weight_seed: r.next_u64(),
        noise_std,
        input_noise_std,
    })
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.layer_widths.len();
        if n == 0 || self.layer_widths.contains(&0) {
            return Err(Error::config(
                "MLP needs at least one layer of positive width",
            ));
        }
        if self.activations.len() != n || self.noise_std.len() != n {
            return Err(Error::config("MLP per-layer fields disagree in length"));
        }
        if self
            .noise_std
            .iter()
            .chain(std::iter::once(&self.input_noise_std))
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::config("noise std must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn final_width(&self) -> usize {
        *self
            .layer_widths
            .last()
            .expect("validated spec has a layer")
    }

    /// Force the last layer to be at least `width` wide.
    pub fn with_min_final_width(mut self, width: usize) -> Self {
        if let Some(last) = self.layer_widths.last_mut() {
            *last = (*last).max(width);
        }
        self
    }

    /// Weights for an input of width `input_width`.
    pub fn layers(&self, input_width: usize) -> Vec<DenseLayer> {
        let root = RngStream::new(self.weight_seed, label::WEIGHTS).derive(input_width as u64);
        let mut fan_in = input_width;
        self.layer_widths
            .iter()
            .zip(&self.activations)
            .enumerate()
            .map(|(l, (&width, act))| {
                let mut r = root.derive(l as u64);
                let scale = act.init_gain() / (fan_in as f64).sqrt();
                let weights = (0..width * fan_in).map(|_| r.normal() * scale).collect();
                let bias = (0..width).map(|_| 0.1 * r.normal()).collect();
                let layer = DenseLayer {
                    weights,
                    bias,
                    inputs: fan_in,
                    outputs: width,
                };
                fan_in = width;
                layer
            })
            .collect()
    }

    /// Push one input vector through the network, drawing layer noise from `noise`.
    fn propagate(&self, layers: &[DenseLayer], input: Vec<f64>, noise: &mut RngStream) -> Vec<f64> {
        let mut h = input;
        for ((layer, act), &std) in layers.iter().zip(&self.activations).zip(&self.noise_std) {
            let mut out = Vec::with_capacity(layer.outputs);
            for o in 0..layer.outputs {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let pre = row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + layer.bias[o];
                out.push(act.apply(pre));
            }
            if std > 0.0 {
                for v in &mut out {
                    *v += std * noise.normal();
                }
            } else {
                // keep the stream position independent of the noise level
                for _ in 0..layer.outputs {
                    noise.normal();
                }
            }
            h = out;
        }
        h
    }
}

/// Unconditional table: `n` rows of `d_out` standardized columns.
pub fn gen_unconditional(
    spec: &MlpSpec,
    n: usize,
    d_out: usize,
    rng: &RngStream,
) -> Result<Array2<f64>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::config("unconditional table needs at least one row"));
    }
    let width = spec.final_width();
    if d_out > width {
        return Err(Error::config(format!(
            "requested {d_out} columns from a final layer of width {width}"
        )));
    }
    let input_width = spec.layer_widths[0];
    let layers = spec.layers(input_width);
    let mut full = Array2::<f64>::zeros((n, width));
    for i in 0..n {
        let mut r = rng.derive(i as u64);
        let z: Vec<f64> = (0..input_width).map(|_| r.normal()).collect();
        let h = spec.propagate(&layers, z, &mut r);
        full.row_mut(i).assign(&ndarray::Array1::from(h));
    }

    // Pick d_out distinct neurons in a random order, preferring ones that vary.
    let mut order: Vec<usize> = (0..width).collect();
    rng.derive(label::SELECT).shuffle(&mut order);
    let stats: Vec<(f64, f64)> = (0..width)
        .map(|j| column_stats(full.column(j).iter().copied()))
        .collect();
    let (mut chosen, degenerate): (Vec<usize>, Vec<usize>) =
        order.into_iter().partition(|&j| stats[j].1 > 1e-24);
    chosen.extend(degenerate);
    chosen.truncate(d_out);

    let mut out = Array2::<f64>::zeros((n, d_out));
    for (k, &j) in chosen.iter().enumerate() {
        let (mean, var) = stats[j];
        let sd = var.sqrt();
        for i in 0..n {
            out[[i, k]] = if var > 1e-24 {
                (full[[i, j]] - mean) / sd
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

/// Conditional table: row `i` is the network applied to `x_i` concatenated
/// with `COND_NOISE_WIDTH` Gaussian values of std `input_noise_std`.
pub fn gen_conditional(
    spec: &MlpSpec,
    x: &Array2<f64>,
    d_out: usize,
    rng: &RngStream,
) -> Result<Array2<f64>> {
    spec.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("conditional input contains non-finite values"));
    }
    let width = spec.final_width();
    if d_out > width {
        return Err(Error::config(format!(
            "requested {d_out} columns from a final layer of width {width}"
        )));
    }
    let (n, d) = x.dim();
    let layers = spec.layers(d + COND_NOISE_WIDTH);
    let mut out = Array2::<f64>::zeros((n, d_out));
    for i in 0..n {
        let mut r = rng.derive(i as u64);
        let mut input: Vec<f64> = x.row(i).to_vec();
        input.extend((0..COND_NOISE_WIDTH).map(|_| spec.input_noise_std * r.normal()));
        let h = spec.propagate(&layers, input, &mut r);
        for k in 0..d_out {
            out[[i, k]] = h[k];
        }
    }
    Ok(out)
}

/// Population mean and variance (divisor `n`).
pub(crate) fn column_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}
