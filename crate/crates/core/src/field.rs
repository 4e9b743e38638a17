//! The radiance field: the main network producing `(c, σ)` and the
//! hash-encoded color-correction network producing `Δc`.

use rand::Rng;

use crate::autodiff::{detach, ops, Tensor, Value};
use crate::encodings::{
    fourier, fourier_width, ndc_to_unit, DirectionEncoding, HashGrid, HashGridConfig,
    POSITION_DEGREE,
};
use crate::error::{Error, Result};

pub const DENSITY_BIAS_INIT: f64 = 0.1;
pub const COLOR_BIAS_INIT: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub position_degree: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Zero-based hidden layer whose input is re-concatenated with the
    /// encoded position.
    pub skip_layer: usize,
    pub view_width: usize,
    pub direction: DirectionEncoding,
    pub color_correction: bool,
    pub cc_width: usize,
    pub hash: HashGridConfig,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            position_degree: POSITION_DEGREE,
            hidden_width: 128,
            hidden_layers: 8,
            skip_layer: 4,
            view_width: 64,
            direction: DirectionEncoding::SphericalHarmonics,
            color_correction: true,
            cc_width: 64,
            hash: HashGridConfig::default(),
        }
    }
}

/// Affine layer `y = x·Wᵀ + b` with `W: out×in`, `b: 1×out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Value,
    pub bias: Value,
}

impl Linear {
    /// Fan-in uniform init with bound `√(6/in)` for ReLU layers, zero bias.
    pub fn relu_init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self::uniform(inputs, outputs, (6.0 / inputs as f64).sqrt(), 0.0, rng)
    }

    /// Fan-in uniform init with bound `1/√in` and a constant bias.
    pub fn head_init(inputs: usize, outputs: usize, bias: f64, rng: &mut impl Rng) -> Self {
        Self::uniform(inputs, outputs, 1.0 / (inputs as f64).sqrt(), bias, rng)
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Value::param(Tensor::zeros(outputs, inputs)),
            bias: Value::param(Tensor::zeros(1, outputs)),
        }
    }

    fn uniform(inputs: usize, outputs: usize, bound: f64, bias: f64, rng: &mut impl Rng) -> Self {
        let w = (0..inputs * outputs)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            weight: Value::param(Tensor::from_vec(outputs, inputs, w)),
            bias: Value::param(Tensor::full(1, outputs, bias)),
        }
    }

    pub fn forward(&self, x: &Value) -> Result<Value> {
        ops::affine(x, &self.weight, &self.bias)
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape().1
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape().0
    }

    fn frozen(&self) -> Self {
        Self {
            weight: detach(&self.weight),
            bias: detach(&self.bias),
        }
    }
}

/// Fourier-encoded position through eight ReLU layers (skip re-injection at
/// `skip_layer`), a ReLU density head branching off before the direction is
/// seen, and a sigmoid color head after the direction-conditioned layer.
#[derive(Debug, Clone)]
pub struct MainNetwork {
    pub hidden: Vec<Linear>,
    pub density: Linear,
    pub view: Linear,
    pub color: Linear,
    position_degree: usize,
    skip_layer: usize,
    direction: DirectionEncoding,
}

impl MainNetwork {
    pub fn new(config: &FieldConfig, rng: &mut impl Rng) -> Self {
        let enc = fourier_width(3, config.position_degree);
        let w = config.hidden_width;
        let hidden = (0..config.hidden_layers)
            .map(|i| {
                let inputs = if i == 0 {
                    enc
                } else if i == config.skip_layer {
                    w + enc
                } else {
                    w
                };
                Linear::relu_init(inputs, w, rng)
            })
            .collect();
        let density = Linear::head_init(w, 1, DENSITY_BIAS_INIT, rng);
        let view = Linear::relu_init(w + config.direction.width(), config.view_width, rng);
        let color = Linear::head_init(config.view_width, 3, COLOR_BIAS_INIT, rng);
        Self {
            hidden,
            density,
            view,
            color,
            position_degree: config.position_degree,
            skip_layer: config.skip_layer,
            direction: config.direction,
        }
    }

    /// Returns `(c, σ)` for `n×3` NDC points and `n×3` unit directions.
    pub fn forward(&self, points: &Value, dirs: &Value) -> Result<(Value, Value)> {
        let (features, sigma) = self.trunk(points)?;
        let color = self.color_head(&features, dirs)?;
        Ok((color, sigma))
    }

    /// Position-only part: last hidden features and `σ`.
    pub fn trunk(&self, points: &Value) -> Result<(Value, Value)> {
        let encoded = fourier(points, self.position_degree);
        let mut h = encoded.clone();
        for (i, layer) in self.hidden.iter().enumerate() {
            if i == self.skip_layer && i > 0 {
                h = ops::concat_cols(&[&h, &encoded])?;
            }
            h = ops::relu(&layer.forward(&h)?);
        }
        let sigma = ops::relu(&self.density.forward(&h)?);
        Ok((h, sigma))
    }

    pub fn color_head(&self, features: &Value, dirs: &Value) -> Result<Value> {
        let d = self.direction.encode(dirs)?;
        let h = ops::relu(&self.view.forward(&ops::concat_cols(&[features, &d])?)?);
        Ok(ops::sigmoid(&self.color.forward(&h)?))
    }

    pub fn direction_encoding(&self) -> DirectionEncoding {
        self.direction
    }

    fn layers(&self) -> impl Iterator<Item = (String, &Linear)> {
        self.hidden
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("main.hidden{i}"), l))
            .chain([
                ("main.density".to_string(), &self.density),
                ("main.view".to_string(), &self.view),
                ("main.color".to_string(), &self.color),
            ])
    }

    fn frozen(&self) -> Self {
        Self {
            hidden: self.hidden.iter().map(Linear::frozen).collect(),
            density: self.density.frozen(),
            view: self.view.frozen(),
            color: self.color.frozen(),
            ..*self
        }
    }
}

/// Hash encoding of the detached NDC point, one ReLU layer, one linear
/// output layer.
#[derive(Debug, Clone)]
pub struct ColorCorrectionNetwork {
    pub grid: HashGrid,
    pub hidden: Linear,
    pub output: Linear,
}

impl ColorCorrectionNetwork {
    /// The output layer starts at zero so `Δc ≡ 0` at initialization.
    pub fn new(config: &FieldConfig, rng: &mut impl Rng) -> Result<Self> {
        let grid = HashGrid::new(config.hash, rng)?;
        let hidden = Linear::relu_init(grid.output_width(), config.cc_width, rng);
        let output = Linear::zeros(config.cc_width, 3);
        Ok(Self {
            grid,
            hidden,
            output,
        })
    }

    /// `Δc` for `n×3` NDC points. The points are detached before lookup, so
    /// no gradient reaches whatever produced them.
    pub fn forward(&self, points: &Value) -> Result<Value> {
        let unit = ndc_to_unit(&detach(points));
        let enc = self.grid.encode(&unit)?;
        let h = ops::relu(&self.hidden.forward(&enc)?);
        self.output.forward(&h)
    }

    fn frozen(&self) -> Result<Self> {
        Ok(Self {
            grid: self.grid.frozen(),
            hidden: self.hidden.frozen(),
            output: self.output.frozen(),
        })
    }
}

/// Per-sample field evaluation.
#[derive(Debug, Clone)]
pub struct FieldOutput {
    /// Main color in `(0,1)³`.
    pub color: Value,
    /// Density `σ ≥ 0`, shared by both renders.
    pub sigma: Value,
    /// `clamp(c + Δc, 0, 1)`; the same node as `color` when color correction
    /// is disabled.
    pub corrected: Value,
    pub delta: Option<Value>,
}

#[derive(Debug, Clone)]
pub struct Field {
    config: FieldConfig,
    pub main: MainNetwork,
    pub correction: Option<ColorCorrectionNetwork>,
}

impl Field {
    pub fn new(config: FieldConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.hidden_layers == 0 || config.skip_layer >= config.hidden_layers {
            return Err(Error::Config(format!(
                "skip layer {} outside {} hidden layers",
                config.skip_layer, config.hidden_layers
            )));
        }
        let main = MainNetwork::new(&config, rng);
        let correction = if config.color_correction {
            Some(ColorCorrectionNetwork::new(&config, rng)?)
        } else {
            None
        };
        Ok(Self {
            config,
            main,
            correction,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn forward(&self, points: &Value, dirs: &Value) -> Result<FieldOutput> {
        let (color, sigma) = self.main.forward(points, dirs)?;
        match &self.correction {
            Some(cc) => {
                let delta = cc.forward(points)?;
                let corrected = ops::clamp(&ops::add(&color, &delta)?, 0.0, 1.0);
                Ok(FieldOutput {
                    color,
                    sigma,
                    corrected,
                    delta: Some(delta),
                })
            }
            None => Ok(FieldOutput {
                corrected: color.clone(),
                color,
                sigma,
                delta: None,
            }),
        }
    }

    /// Trainable tensors of the main network, in a fixed order.
    pub fn main_parameters(&self) -> Vec<Value> {
        self.main
            .layers()
            .flat_map(|(_, l)| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    /// Hash table plus both color-correction layers; empty without the branch.
    pub fn correction_parameters(&self) -> Vec<Value> {
        self.named_correction()
            .into_iter()
            .map(|(_, v)| v)
            .collect()
    }

    fn named_correction(&self) -> Vec<(String, Value)> {
        let Some(cc) = &self.correction else {
            return Vec::new();
        };
        vec![
            ("cc.hash_table".into(), cc.grid.table().clone()),
            ("cc.hidden.weight".into(), cc.hidden.weight.clone()),
            ("cc.hidden.bias".into(), cc.hidden.bias.clone()),
            ("cc.output.weight".into(), cc.output.weight.clone()),
            ("cc.output.bias".into(), cc.output.bias.clone()),
        ]
    }

    /// Every parameter with a stable name: main network first, then the
    /// color-correction branch.
    pub fn named_parameters(&self) -> Vec<(String, Value)> {
        let mut out: Vec<(String, Value)> = self
            .main
            .layers()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), l.weight.clone()),
                    (format!("{name}.bias"), l.bias.clone()),
                ]
            })
            .collect();
        out.extend(self.named_correction());
        out
    }

    /// A copy whose parameters are constants: evaluating it never touches the
    /// original's gradients or data.
    pub fn frozen(&self) -> Result<Self> {
        Ok(Self {
            config: self.config.clone(),
            main: self.main.frozen(),
            correction: self.correction.as_ref().map(|c| c.frozen()).transpose()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(n: usize, rng: &mut impl Rng) -> (Value, Value) {
        let pts: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut dirs = Vec::with_capacity(n * 3);
        for _ in 0..n {
            let d: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), -1.0];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            dirs.extend(d.map(|v| v / norm));
        }
        (
            Value::constant(Tensor::from_vec(n, 3, pts)),
            Value::constant(Tensor::from_vec(n, 3, dirs)),
        )
    }

    #[test]
    fn layer_widths_and_head_biases() {
        let field = Field::new(FieldConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let m = &field.main;
        assert_eq!(m.hidden.len(), 8);
        assert_eq!(m.hidden[0].inputs(), 60);
        assert_eq!(m.hidden[4].inputs(), 128 + 60);
        assert!(m.hidden.iter().all(|l| l.outputs() == 128));
        assert_eq!((m.view.inputs(), m.view.outputs()), (128 + 16, 64));
        assert_eq!((m.density.inputs(), m.density.outputs()), (128, 1));
        assert_eq!((m.color.inputs(), m.color.outputs()), (64, 3));
        assert!(m.density.bias.data().as_slice().iter().all(|&b| b == 0.1));
        assert!(m.color.bias.data().as_slice().iter().all(|&b| b == 0.02));
        let cc = field.correction.as_ref().unwrap();
        assert_eq!((cc.hidden.inputs(), cc.hidden.outputs()), (32, 64));
        assert_eq!(cc.output.outputs(), 3);
    }

    #[test]
    fn zero_features_expose_head_biases() {
        // With all trunk weights zeroed the heads see h = 0, so the outputs
        // are exactly the activated biases.
        let field = Field::new(FieldConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for l in &field.main.hidden {
            l.weight.data_mut().fill(0.0);
        }
        field.main.view.weight.data_mut().fill(0.0);
        let (pts, dirs) = random_inputs(4, &mut ChaCha8Rng::seed_from_u64(2));
        let (c, sigma) = field.main.forward(&pts, &dirs).unwrap();
        assert!(sigma.data().as_slice().iter().all(|&s| s == 0.1));
        let expected = crate::autodiff::ops::stable_sigmoid(0.02);
        assert!(c.data().as_slice().iter().all(|&v| v == expected));
    }

    #[test]
    fn outputs_stay_in_activation_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field = Field::new(FieldConfig::default(), &mut rng).unwrap();
        let (pts, dirs) = random_inputs(10_000, &mut rng);
        let out = field.forward(&pts, &dirs).unwrap();
        assert!(out.color.data().as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(out.sigma.data().as_slice().iter().all(|&v| v >= 0.0));
        assert_eq!(out.color.shape(), (10_000, 3));
        assert_eq!(out.sigma.shape(), (10_000, 1));
    }

    #[test]
    fn density_ignores_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field = Field::new(FieldConfig::default(), &mut rng).unwrap();
        let (pts, d1) = random_inputs(64, &mut rng);
        let (_, d2) = random_inputs(64, &mut rng);
        let (_, s1) = field.main.forward(&pts, &d1).unwrap();
        let (_, s2) = field.main.forward(&pts, &d2).unwrap();
        assert_eq!(s1.data().as_slice(), s2.data().as_slice());
    }

    #[test]
    fn fresh_correction_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field = Field::new(FieldConfig::default(), &mut rng).unwrap();
        let (pts, dirs) = random_inputs(256, &mut rng);
        let out = field.forward(&pts, &dirs).unwrap();
        assert!(out.delta.unwrap().data().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(out.corrected.data().as_slice(), out.color.data().as_slice());
    }

    #[test]
    fn clamp_of_corrected_color() {
        let c = Value::constant(Tensor::row(&[0.9, 0.9, 0.9]));
        let dc = Value::constant(Tensor::row(&[0.3, 0.0, -1.0]));
        let cc = ops::clamp(&ops::add(&c, &dc).unwrap(), 0.0, 1.0);
        let got = cc.data().as_slice().to_vec();
        assert_eq!(got[0], 1.0);
        assert!((got[1] - 0.9).abs() < 1e-15);
        assert_eq!(got[2], 0.0);
    }

    #[test]
    fn correction_never_reaches_its_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let field = Field::new(FieldConfig::default(), &mut rng).unwrap();
        let cc = field.correction.as_ref().unwrap();
        cc.output.weight.data_mut().fill(0.5);
        let pts = Value::param(Tensor::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.5, 0.5, -0.9]));
        let delta = cc.forward(&pts).unwrap();
        backward(&ops::sum(&delta)).unwrap();
        assert!(pts.grad().is_none());
        assert!(cc.grid.table().grad().is_some());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Field::new(FieldConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = Field::new(FieldConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for ((na, va), (nb, vb)) in a.named_parameters().iter().zip(b.named_parameters()) {
            assert_eq!(na, &nb);
            assert_eq!(va.data().as_slice(), vb.data().as_slice());
        }
    }

    #[test]
    fn frozen_copy_has_no_trainable_parameters() {
        let field = Field::new(FieldConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let frozen = field.frozen().unwrap();
        assert!(frozen
            .named_parameters()
            .iter()
            .all(|(_, v)| !v.requires_grad()));
        for ((_, a), (_, b)) in field.named_parameters().iter().zip(frozen.named_parameters()) {
            assert_eq!(a.data().as_slice(), b.data().as_slice());
        }
    }
}
