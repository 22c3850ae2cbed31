//! Network definitions. Each model describes an architecture; its weights
//! live in a separate [`ParamStore`] so optimisers and checkpoints stay
//! per-network.

use diffcore::{LstmWeights, ParamStore, Rng, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use diffcore::Bound;

const LEAKY_SLOPE: f64 = 0.2;
/// Generator inputs are reflect-padded to a multiple of this.
pub const PAD_MULTIPLE: usize = 32;

/// Whether stochastic layers are active.
pub enum Phase<'a> {
    Train(&'a mut Rng),
    Eval,
}

impl Phase<'_> {
    fn dropout<T: Scalar>(&mut self, tape: &Tape<T>, x: Var, p: f64) -> Result<Var> {
        Ok(match self {
            Phase::Train(rng) if p > 0.0 => tape.dropout(x, p, true, rng)?,
            _ => x,
        })
    }
}

fn init_conv<T: Scalar>(store: &mut ParamStore<T>, name: &str, shape: &[usize], std: f64, rng: &mut Rng) {
    store.insert_normal(format!("{name}.w"), shape, std, rng);
    store.insert_zeros(format!("{name}.b"), &[shape[0]]);
}

fn init_linear<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    inputs: usize,
    outputs: usize,
    std: f64,
    rng: &mut Rng,
) {
    store.insert_normal(format!("{name}.w"), &[inputs, outputs], std, rng);
    store.insert_zeros(format!("{name}.b"), &[outputs]);
}

fn conv1d<T: Scalar>(tape: &Tape<T>, p: &Bound, name: &str, x: Var, kernel: usize) -> Result<Var> {
    let y = tape.conv1d(x, p.get(&format!("{name}.w"))?, kernel / 2)?;
    Ok(tape.add_channel_bias(y, p.get(&format!("{name}.b"))?)?)
}

fn conv2d<T: Scalar>(tape: &Tape<T>, p: &Bound, name: &str, x: Var, kernel: usize) -> Result<Var> {
    let y = tape.conv2d(x, p.get(&format!("{name}.w"))?, kernel / 2)?;
    Ok(tape.add_channel_bias(y, p.get(&format!("{name}.b"))?)?)
}

fn linear<T: Scalar>(tape: &Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    Ok(tape.linear(x, p.get(&format!("{name}.w"))?, p.get(&format!("{name}.b"))?)?)
}

fn lrelu<T: Scalar>(tape: &Tape<T>, x: Var) -> Result<Var> {
    Ok(tape.leaky_relu(x, T::lit(LEAKY_SLOPE))?)
}

fn check_odd(kernel: usize, what: &str) -> Result<()> {
    if kernel % 2 == 0 {
        return Err(invalid(format!("{what}: kernel size {kernel} must be odd")));
    }
    Ok(())
}

fn expect_shape(actual: &[usize], expected: &[Option<usize>], what: &str) -> Result<()> {
    let ok = actual.len() == expected.len() && actual.iter().zip(expected).all(|(a, e)| e.is_none_or(|e| e == *a));
    if !ok {
        let shown: Vec<String> = expected
            .iter()
            .map(|e| e.map_or("_".into(), |v| v.to_string()))
            .collect();
        return Err(invalid(format!(
            "{what}: input shape {actual:?}, expected [{}]",
            shown.join(", ")
        )));
    }
    Ok(())
}

/// Architecture hyperparameters for every network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub generator_base_channels: usize,
    pub generator_kernel: usize,
    pub generator_dropout: f64,
    pub discriminator_channels: Vec<usize>,
    pub discriminator_kernel: usize,
    pub classifier_channels: Vec<usize>,
    pub classifier_kernel: usize,
    pub cnn_channels: Vec<usize>,
    pub cnn_kernel: usize,
    pub cnn_hidden: usize,
    pub lstm_hidden: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            generator_base_channels: 16,
            generator_kernel: 5,
            generator_dropout: 0.5,
            discriminator_channels: vec![16, 32, 64, 64],
            discriminator_kernel: 5,
            classifier_channels: vec![8, 16],
            classifier_kernel: 5,
            cnn_channels: vec![8, 16, 32],
            cnn_kernel: 3,
            cnn_hidden: 64,
            lstm_hidden: 64,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, what) in [
            (self.generator_kernel, "generator"),
            (self.discriminator_kernel, "discriminator"),
            (self.classifier_kernel, "classifier"),
            (self.cnn_kernel, "cnn"),
        ] {
            check_odd(k, what)?;
        }
        if !(0.0..1.0).contains(&self.generator_dropout) {
            return Err(invalid("generator_dropout must lie in [0, 1)"));
        }
        let counts = [self.generator_base_channels, self.cnn_hidden, self.lstm_hidden];
        let lists = [
            &self.discriminator_channels,
            &self.classifier_channels,
            &self.cnn_channels,
        ];
        if counts.contains(&0) || lists.iter().any(|l| l.is_empty() || l.contains(&0)) {
            return Err(invalid("model channel counts must be positive"));
        }
        if !(self.init_std > 0.0) {
            return Err(invalid("init_std must be positive"));
        }
        Ok(())
    }

    pub fn generator(&self, levels: usize) -> GeneratorConfig {
        GeneratorConfig {
            levels,
            base_channels: self.generator_base_channels,
            kernel_size: self.generator_kernel,
            dropout_rate: self.generator_dropout,
        }
    }

    pub fn discriminator(&self, n_samples: usize, n_domains: usize) -> Discriminator {
        Discriminator {
            channels: self.discriminator_channels.clone(),
            kernel_size: self.discriminator_kernel,
            n_samples,
            n_domains: n_domains.max(1),
        }
    }

    pub fn classifier(&self) -> Classifier1D {
        Classifier1D {
            channels: self.classifier_channels.clone(),
            kernel_size: self.classifier_kernel,
        }
    }

    pub fn cnn_hs(&self, grid: usize) -> CnnHs {
        CnnHs {
            trunk: self.image_trunk(grid),
        }
    }

    pub fn cnn_lstm(&self, grid: usize, seq_len: usize) -> CnnLstmRul {
        CnnLstmRul {
            trunk: self.image_trunk(grid),
            lstm_hidden: self.lstm_hidden,
            seq_len,
        }
    }

    fn image_trunk(&self, grid: usize) -> ImageTrunk {
        ImageTrunk {
            grid,
            channels: self.cnn_channels.clone(),
            kernel_size: self.cnn_kernel,
            hidden: self.cnn_hidden,
        }
    }
}

/// One multiscale generator: a 1-D U-Net of depth `levels`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub dropout_rate: f64,
}

/// Output and per-level encoder activations of a generator pass.
pub struct UNetTrace {
    pub output: Var,
    /// Encoder activation at each level, shallowest first, on the padded
    /// length.
    pub skips: Vec<Var>,
    pub pad_left: usize,
}

impl GeneratorConfig {
    fn width(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    pub fn init<T: Scalar>(&self, std: f64, rng: &mut Rng) -> Result<ParamStore<T>> {
        check_odd(self.kernel_size, "generator")?;
        if !(1..=8).contains(&self.levels) {
            return Err(invalid(format!("generator levels {} outside 1..=8", self.levels)));
        }
        let k = self.kernel_size;
        let mut s = ParamStore::new();
        for l in 1..=self.levels {
            let c_in = if l == 1 { 2 } else { self.width(l - 1) };
            init_conv(&mut s, &format!("enc{l}"), &[self.width(l), c_in, k], std, rng);
        }
        for l in (1..=self.levels).rev() {
            let c_in = if l == self.levels {
                self.width(l)
            } else {
                2 * self.width(l + 1)
            };
            init_conv(&mut s, &format!("dec{l}"), &[self.width(l), c_in, k], std, rng);
        }
        init_conv(&mut s, "out", &[2, 2 * self.width(1), k], std, rng);
        Ok(s)
    }

    /// Padding `(left, right)` applied to a length-`n` input.
    pub fn padding(n: usize) -> (usize, usize) {
        let total = n.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE - n;
        (total / 2, total - total / 2)
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var, phase: &mut Phase) -> Result<Var> {
        Ok(self.trace(tape, p, x, phase)?.output)
    }

    pub fn trace<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var, phase: &mut Phase) -> Result<UNetTrace> {
        let shape = tape.shape(x);
        expect_shape(&shape, &[None, Some(2), None], "generator")?;
        let n = shape[2];
        let (left, right) = Self::padding(n);
        if left.max(right) >= n {
            return Err(invalid(format!("generator: input length {n} too short to pad")));
        }
        let k = self.kernel_size;
        let mut h = if left + right > 0 {
            tape.reflect_pad1d(x, left, right)?
        } else {
            x
        };
        let mut skips = Vec::with_capacity(self.levels);
        for l in 1..=self.levels {
            h = lrelu(tape, conv1d(tape, p, &format!("enc{l}"), h, k)?)?;
            skips.push(h);
            h = tape.max_pool1d(h, 2)?;
        }
        for l in (1..=self.levels).rev() {
            h = tape.upsample1d(h, 2)?;
            h = tape.relu(conv1d(tape, p, &format!("dec{l}"), h, k)?)?;
            if l + 2 > self.levels {
                h = phase.dropout(tape, h, self.dropout_rate)?;
            }
            h = tape.concat(&[h, skips[l - 1]])?;
        }
        let out = conv1d(tape, p, "out", h, k)?;
        let output = if left + right > 0 {
            tape.narrow(out, 2, left, n)?
        } else {
            out
        };
        Ok(UNetTrace {
            output,
            skips,
            pad_left: left,
        })
    }
}

/// Shared 1-D trunk with a critic head and a domain head.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub n_samples: usize,
    pub n_domains: usize,
}

impl Discriminator {
    pub fn feature_len(&self) -> usize {
        let len = self.channels.iter().fold(self.n_samples, |l, _| l / 2);
        len * self.channels.last().copied().unwrap_or(0)
    }

    pub fn init<T: Scalar>(&self, std: f64, rng: &mut Rng) -> Result<ParamStore<T>> {
        check_odd(self.kernel_size, "discriminator")?;
        if self.feature_len() == 0 {
            return Err(invalid(format!("discriminator: {} samples too short", self.n_samples)));
        }
        let mut s = ParamStore::new();
        let mut c_in = 2;
        for (i, &c) in self.channels.iter().enumerate() {
            init_conv(&mut s, &format!("trunk{i}"), &[c, c_in, self.kernel_size], std, rng);
            c_in = c;
        }
        init_linear(&mut s, "critic", self.feature_len(), 1, std, rng);
        init_linear(&mut s, "domain", self.feature_len(), self.n_domains, std, rng);
        Ok(s)
    }

    /// `[b, 2, n] → [b, feature_len]`.
    pub fn trunk<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        expect_shape(&tape.shape(x), &[None, Some(2), Some(self.n_samples)], "discriminator")?;
        let mut h = x;
        for i in 0..self.channels.len() {
            h = lrelu(tape, conv1d(tape, p, &format!("trunk{i}"), h, self.kernel_size)?)?;
            h = tape.max_pool1d(h, 2)?;
        }
        Ok(tape.flatten(h)?)
    }

    /// Critic value per row, `[b]`; affine in the trunk features.
    pub fn critic_head<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, features: Var) -> Result<Var> {
        let b = tape.shape(features)[0];
        Ok(tape.reshape(linear(tape, p, "critic", features)?, &[b])?)
    }

    /// Domain logits `[b, n_domains]`.
    pub fn domain_head<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, features: Var) -> Result<Var> {
        linear(tape, p, "domain", features)
    }

    pub fn critic<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let f = self.trunk(tape, p, x)?;
        self.critic_head(tape, p, f)
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let f = self.trunk(tape, p, x)?;
        Ok((self.critic_head(tape, p, f)?, self.domain_head(tape, p, f)?))
    }
}

/// Small 1-D conv classifier used inside adversarial training; output in
/// `(0, 1)`, shape `[b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier1D {
    pub channels: Vec<usize>,
    pub kernel_size: usize,
}

impl Classifier1D {
    pub fn init<T: Scalar>(&self, std: f64, rng: &mut Rng) -> Result<ParamStore<T>> {
        check_odd(self.kernel_size, "classifier")?;
        let mut s = ParamStore::new();
        let mut c_in = 2;
        for (i, &c) in self.channels.iter().enumerate() {
            init_conv(&mut s, &format!("conv{i}"), &[c, c_in, self.kernel_size], std, rng);
            c_in = c;
        }
        init_linear(&mut s, "head", c_in, 1, std, rng);
        Ok(s)
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        expect_shape(&shape, &[None, Some(2), None], "classifier")?;
        let mut h = x;
        for i in 0..self.channels.len() {
            h = lrelu(tape, conv1d(tape, p, &format!("conv{i}"), h, self.kernel_size)?)?;
            h = tape.max_pool1d(h, 2)?;
        }
        let y = linear(tape, p, "head", tape.mean_last(h)?)?;
        Ok(tape.reshape(tape.sigmoid(y)?, &[shape[0]])?)
    }
}

/// 2-D conv stack followed by a hidden linear layer, shared by both image
/// models.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTrunk {
    pub grid: usize,
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub hidden: usize,
}

impl ImageTrunk {
    fn flat_len(&self) -> usize {
        let side = self.channels.iter().fold(self.grid, |g, _| g / 2);
        side * side * self.channels.last().copied().unwrap_or(0)
    }

    fn init<T: Scalar>(&self, s: &mut ParamStore<T>, std: f64, rng: &mut Rng) -> Result<()> {
        check_odd(self.kernel_size, "cnn")?;
        if self.flat_len() == 0 {
            return Err(invalid(format!(
                "cnn: grid {} too small for {} pooling levels",
                self.grid,
                self.channels.len()
            )));
        }
        let mut c_in = 3;
        for (i, &c) in self.channels.iter().enumerate() {
            let k = self.kernel_size;
            init_conv(s, &format!("conv{i}"), &[c, c_in, k, k], std, rng);
            c_in = c;
        }
        init_linear(s, "fc", self.flat_len(), self.hidden, std, rng);
        Ok(())
    }

    /// `[b, 3, g, g] → [b, hidden]`.
    fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.channels.len() {
            h = tape.relu(conv2d(tape, p, &format!("conv{i}"), h, self.kernel_size)?)?;
            h = tape.max_pool2d(h, 2)?;
        }
        Ok(tape.relu(linear(tape, p, "fc", tape.flatten(h)?)?)?)
    }
}

/// Health-stage scorer on single NSP images; `[b, 3, g, g] → [b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnHs {
    pub trunk: ImageTrunk,
}

impl CnnHs {
    pub fn init<T: Scalar>(&self, std: f64, rng: &mut Rng) -> Result<ParamStore<T>> {
        let mut s = ParamStore::new();
        self.trunk.init(&mut s, std, rng)?;
        init_linear(&mut s, "head", self.trunk.hidden, 1, std, rng);
        Ok(s)
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let g = self.trunk.grid;
        let shape = tape.shape(x);
        expect_shape(&shape, &[None, Some(3), Some(g), Some(g)], "cnn_hs")?;
        let y = linear(tape, p, "head", self.trunk.forward(tape, p, x)?)?;
        Ok(tape.reshape(tape.sigmoid(y)?, &[shape[0]])?)
    }
}

/// RUL regressor on NSP image sequences; `[b, L, 3, g, g] → [b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnLstmRul {
    pub trunk: ImageTrunk,
    pub lstm_hidden: usize,
    pub seq_len: usize,
}

impl CnnLstmRul {
    pub fn init<T: Scalar>(&self, std: f64, rng: &mut Rng) -> Result<ParamStore<T>> {
        if self.seq_len == 0 {
            return Err(invalid("cnn_lstm: sequence length must be ≥ 1"));
        }
        let mut s = ParamStore::new();
        self.trunk.init(&mut s, std, rng)?;
        let (i, h) = (self.trunk.hidden, self.lstm_hidden);
        s.insert_normal("lstm.w_input", &[i, 4 * h], std, rng);
        s.insert_normal("lstm.w_hidden", &[h, 4 * h], std, rng);
        s.insert_zeros("lstm.b", &[4 * h]);
        init_linear(&mut s, "head", h, 1, std, rng);
        Ok(s)
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let g = self.trunk.grid;
        let shape = tape.shape(x);
        expect_shape(
            &shape,
            &[None, Some(self.seq_len), Some(3), Some(g), Some(g)],
            "cnn_lstm",
        )?;
        let (b, l) = (shape[0], shape[1]);
        let frames = tape.reshape(x, &[b * l, 3, g, g])?;
        let feats = tape.reshape(self.trunk.forward(tape, p, frames)?, &[b, l, self.trunk.hidden])?;
        let w = LstmWeights {
            w_input: p.get("lstm.w_input")?,
            w_hidden: p.get("lstm.w_hidden")?,
            bias: p.get("lstm.b")?,
        };
        let mut h = tape.constant(Tensor::zeros(vec![b, self.lstm_hidden]));
        let mut c = tape.constant(Tensor::zeros(vec![b, self.lstm_hidden]));
        for t in 0..l {
            let xt = tape.reshape(tape.narrow(feats, 1, t, 1)?, &[b, self.trunk.hidden])?;
            (h, c) = tape.lstm_cell(xt, h, c, &w)?;
        }
        let y = linear(tape, p, "head", h)?;
        Ok(tape.reshape(tape.sigmoid(y)?, &[b])?)
    }
}
