use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EncoderConfig, EncoderError, REFERENCE_GRU_LAYERS};
use crate::autograd::{Graph, Scalar, Tensor, Var};
use crate::features::FeatureMatrix;

const NORM_EPS: f64 = 1e-12;
const GATES: [&str; 3] = ["z", "r", "h"];
const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

/// Encoder parameters, kept in a fixed order of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechEncoder<T> {
    config: EncoderConfig,
    params: Vec<(String, Tensor<T>)>,
}

/// Whether a parameter is a weight (Xavier init) and its shape.
fn layout(cfg: &EncoderConfig) -> Vec<(String, bool, Vec<usize>)> {
    let (c, h) = (cfg.conv_channels, cfg.gru_hidden);
    let mut out = vec![
        (
            "conv.weight".to_string(),
            true,
            vec![cfg.conv_kernel * cfg.input_dim, c],
        ),
        ("conv.bias".to_string(), false, vec![c]),
    ];
    for l in 0..cfg.gru_layers {
        let input = if l == 0 { c } else { 2 * h };
        for dir in DIRECTIONS {
            let base = format!("gru.{}.{dir}", l + 1);
            for g in GATES {
                out.push((format!("{base}.w_{g}"), true, vec![input, h]));
            }
            for g in GATES {
                out.push((format!("{base}.u_{g}"), true, vec![h, h]));
            }
            for g in GATES {
                out.push((format!("{base}.b_{g}"), false, vec![h]));
            }
        }
    }
    out.push(("attention.w".to_string(), true, vec![2 * h, cfg.attention_dim]));
    out.push(("attention.u".to_string(), true, vec![cfg.attention_dim]));
    out.push(("projection.weight".to_string(), true, vec![2 * h, cfg.embed_dim]));
    out.push(("projection.bias".to_string(), false, vec![cfg.embed_dim]));
    out
}

impl<T: Scalar> SpeechEncoder<T> {
    /// Freshly initialised encoder; deterministic in `config.init_seed`.
    pub fn new(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        if config.gru_layers != REFERENCE_GRU_LAYERS {
            log::warn!(
                "encoder uses {} GRU layers instead of {REFERENCE_GRU_LAYERS}",
                config.gru_layers
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let params = layout(&config)
            .into_iter()
            .map(|(name, weight, shape)| {
                let n: usize = shape.iter().product();
                let data = if weight {
                    let fan_out = if shape.len() > 1 { shape[1] } else { 1 };
                    let bound = (6.0 / (shape[0] + fan_out) as f64).sqrt();
                    (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
                } else {
                    vec![T::zero(); n]
                };
                (name, Tensor::new(shape, data).expect("layout shapes match data"))
            })
            .collect();
        let encoder = SpeechEncoder { config, params };
        log::debug!("encoder initialised with {} parameters", encoder.param_count());
        Ok(encoder)
    }

    /// Build from explicit tensors, which must follow the documented layout.
    pub fn from_params(config: EncoderConfig, params: Vec<(String, Tensor<T>)>) -> Result<Self, EncoderError> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(EncoderError::Parameter {
                name: "*".into(),
                reason: format!("expected {} tensors, found {}", expected.len(), params.len()),
            });
        }
        for ((name, _, shape), (got_name, tensor)) in expected.iter().zip(&params) {
            if name != got_name || shape.as_slice() != tensor.shape() {
                return Err(EncoderError::Parameter {
                    name: got_name.clone(),
                    reason: format!("expected {name} with shape {shape:?}, found shape {:?}", tensor.shape()),
                });
            }
        }
        Ok(SpeechEncoder { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> SpeechEncoder<U> {
        SpeechEncoder {
            config: self.config,
            params: self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Record every parameter on `graph`, as trainable leaves or constants.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> EncoderVars {
        let all: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| graph.leaf(t.clone(), trainable))
            .collect();
        EncoderVars::from_vars(self.config, all)
    }

    /// Unit-norm encoding of one utterance.
    pub fn encode(&self, features: &FeatureMatrix) -> Result<Vec<T>, EncoderError> {
        self.encode_tensor(&features.to_tensor())
    }

    /// Unit-norm encoding of a `[T, D]` feature tensor.
    pub fn encode_tensor(&self, features: &Tensor<T>) -> Result<Vec<T>, EncoderError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(features.clone());
        let out = vars.encode(&mut g, x)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Attention weights over the post-convolution frames of one utterance.
    pub fn attention_weights(&self, features: &Tensor<T>) -> Result<Vec<T>, EncoderError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(features.clone());
        let conv = vars.conv_subsample(&mut g, x)?;
        let h = vars.bigru_stack(&mut g, conv)?;
        let (_, alpha) = vars.attention_pool(&mut g, h)?;
        Ok(g.value(alpha).data().to_vec())
    }
}

/// Gate parameters of one GRU direction, indexed `[z, r, h]`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w: [Var; 3],
    pub u: [Var; 3],
    pub b: [Var; 3],
}

/// Encoder parameters recorded on a particular graph.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    config: EncoderConfig,
    pub conv_weight: Var,
    pub conv_bias: Var,
    /// `[forward, backward]` per layer.
    pub gru: Vec<[GruVars; 2]>,
    pub attention_w: Var,
    pub attention_u: Var,
    pub projection_weight: Var,
    pub projection_bias: Var,
    all: Vec<Var>,
}

impl EncoderVars {
    /// Interpret `all` (one variable per parameter, in the encoder's
    /// parameter order) as encoder parameters.
    pub fn from_vars(config: EncoderConfig, all: Vec<Var>) -> Self {
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("one variable per parameter");
        let conv_weight = next();
        let conv_bias = next();
        let mut gru = Vec::with_capacity(config.gru_layers);
        for _ in 0..config.gru_layers {
            let mut dir = || {
                let w = [next(), next(), next()];
                let u = [next(), next(), next()];
                let b = [next(), next(), next()];
                GruVars { w, u, b }
            };
            let fwd = dir();
            let bwd = dir();
            gru.push([fwd, bwd]);
        }
        let (attention_w, attention_u) = (next(), next());
        let (projection_weight, projection_bias) = (next(), next());
        EncoderVars {
            config,
            conv_weight,
            conv_bias,
            gru,
            attention_w,
            attention_u,
            projection_weight,
            projection_bias,
            all,
        }
    }

    /// Every parameter variable, in the encoder's parameter order.
    pub fn all(&self) -> &[Var] {
        &self.all
    }

    /// `[T, D] -> [T', C]` strided convolution without padding.
    pub fn conv_subsample<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, EncoderError> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(EncoderError::InputDim {
                expected: self.config.input_dim,
                found: shape.get(1).copied().unwrap_or(0),
            });
        }
        if shape[0] < self.config.conv_kernel {
            return Err(EncoderError::TooShort {
                frames: shape[0],
                kernel: self.config.conv_kernel,
            });
        }
        let windows = g.unfold(x, self.config.conv_kernel, self.config.conv_stride)?;
        let y = g.matmul(windows, self.conv_weight)?;
        Ok(g.add(y, self.conv_bias)?)
    }

    fn gru_direction<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        p: &GruVars,
        reverse: bool,
    ) -> Result<Var, EncoderError> {
        let steps = g.shape(x)[0];
        let hidden = self.config.gru_hidden;
        let mut inputs = [x; 3];
        for (input, (&w, &b)) in inputs.iter_mut().zip(p.w.iter().zip(&p.b)) {
            let xw = g.matmul(x, w)?;
            *input = g.add(xw, b)?;
        }
        let mut h = g.constant(Tensor::zeros(vec![1, hidden]));
        let mut outputs = vec![h; steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        };
        for t in order {
            let xz = g.slice(inputs[0], 0, t, 1)?;
            let xr = g.slice(inputs[1], 0, t, 1)?;
            let xh = g.slice(inputs[2], 0, t, 1)?;
            let hz = g.matmul(h, p.u[0])?;
            let hr = g.matmul(h, p.u[1])?;
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z)?;
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r)?;
            let rh = g.mul(r, h)?;
            let cand = g.matmul(rh, p.u[2])?;
            let cand = g.add(xh, cand)?;
            let cand = g.tanh(cand)?;
            let step = g.sub(cand, h)?;
            let step = g.mul(z, step)?;
            h = g.add(h, step)?;
            outputs[t] = h;
        }
        Ok(g.concat(&outputs, 0)?)
    }

    /// `[T', C] -> [T', 2H]`: each layer runs both directions from a zero
    /// state and concatenates them, forward half first.
    pub fn bigru_stack<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, EncoderError> {
        let mut h = x;
        for [fwd, bwd] in &self.gru {
            let a = self.gru_direction(g, h, fwd, false)?;
            let b = self.gru_direction(g, h, bwd, true)?;
            h = g.concat(&[a, b], 1)?;
        }
        Ok(h)
    }

    /// `[T', 2H] -> ([1, 2H] pooled, [T'] weights)`.
    pub fn attention_pool<T: Scalar>(&self, g: &mut Graph<T>, h: Var) -> Result<(Var, Var), EncoderError> {
        let steps = g.shape(h)[0];
        let proj = g.matmul(h, self.attention_w)?;
        let proj = g.tanh(proj)?;
        let scores = g.mul(proj, self.attention_u)?;
        let scores = g.sum(scores, 1)?;
        let alpha = g.softmax(scores, 0)?;
        let row = g.reshape(alpha, vec![1, steps])?;
        let pooled = g.matmul(row, h)?;
        Ok((pooled, alpha))
    }

    /// `[T, D] -> [1, E]` unit-norm encoding.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, EncoderError> {
        let conv = self.conv_subsample(g, x)?;
        let h = self.bigru_stack(g, conv)?;
        let (pooled, _) = self.attention_pool(g, h)?;
        let y = g.matmul(pooled, self.projection_weight)?;
        let y = g.add(y, self.projection_bias)?;
        Ok(g.l2_normalize(y, 1, T::of(NORM_EPS))?)
    }
}
