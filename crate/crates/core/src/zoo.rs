// SPDX-License-Identifier: Apache-2.0

//! Builders for the four reference topologies.
//!
//! Weights are pseudo-random from a fixed per-model seed. Batch-norm
//! statistics are set from the expected first and second moments of each
//! layer's accumulator so that activations neither saturate nor collapse.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{
    BatchNormAttrs, ConvAttrs, DataType, DenseAttrs, Flow, Model, Node, Op, PoolAttrs, QuantAttrs, Rational, Rounding,
    Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ZooId {
    CnvW1A1,
    KwsMlp,
    AdAe,
    IcCnn,
}

impl ZooId {
    pub const ALL: [ZooId; 4] = [ZooId::CnvW1A1, ZooId::KwsMlp, ZooId::AdAe, ZooId::IcCnn];

    pub fn as_str(&self) -> &'static str {
        match self {
            ZooId::CnvW1A1 => "cnv-w1a1",
            ZooId::KwsMlp => "kws-mlp",
            ZooId::AdAe => "ad-ae",
            ZooId::IcCnn => "ic-cnn",
        }
    }

    fn seed(&self) -> u64 {
        match self {
            ZooId::CnvW1A1 => 0xC1,
            ZooId::KwsMlp => 0x4B,
            ZooId::AdAe => 0xAD,
            ZooId::IcCnn => 0x1C,
        }
    }
}

impl fmt::Display for ZooId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ZooId {
    type Err = ZooError;

    /// Accepts `cnv-w1a1` as well as `CNV_W1A1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        ZooId::ALL.into_iter().find(|id| id.as_str() == norm).ok_or_else(|| ZooError::UnknownId(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooSpec {
    pub id: ZooId,
    /// Multiplies every hidden width; 1 gives the reference sizes.
    pub width_scale: Rational,
}

impl ZooSpec {
    pub fn new(id: ZooId) -> Self {
        ZooSpec { id, width_scale: Rational::from_integer(1) }
    }

    pub fn scaled(id: ZooId, width_scale: Rational) -> Self {
        ZooSpec { id, width_scale }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ZooError {
    #[error("width scale {scale} leaves layer `{layer}` with zero width")]
    UnsupportedScale { scale: Rational, layer: String },
    #[error("unknown zoo model `{0}` (cnv-w1a1, kws-mlp, ad-ae, ic-cnn)")]
    UnknownId(String),
}

pub fn build(spec: &ZooSpec) -> Result<Model, ZooError> {
    if spec.width_scale <= Rational::from_integer(0) {
        return Err(ZooError::UnsupportedScale { scale: spec.width_scale, layer: "*".into() });
    }
    let mut b = Builder::new(spec);
    match spec.id {
        ZooId::CnvW1A1 => cnv(&mut b)?,
        ZooId::KwsMlp => kws(&mut b)?,
        ZooId::AdAe => ad(&mut b, &AdConfig::default())?,
        ZooId::IcCnn => ic(&mut b)?,
    }
    Ok(b.finish())
}

/// Shape knobs of the anomaly-detection autoencoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdConfig {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
    /// Hidden layers on each side of the bottleneck.
    pub depth: usize,
}

impl Default for AdConfig {
    fn default() -> Self {
        AdConfig { input: 128, hidden: 72, latent: 8, depth: 2 }
    }
}

/// Builds the autoencoder with explicit shape knobs.
pub fn build_ad(config: &AdConfig, width_scale: Rational) -> Result<Model, ZooError> {
    let spec = ZooSpec::scaled(ZooId::AdAe, width_scale);
    let mut b = Builder::new(&spec);
    ad(&mut b, config)?;
    Ok(b.finish())
}

/// First two moments of the values on an edge, used to pick BN statistics.
#[derive(Debug, Clone, Copy)]
struct Moments {
    mean: f64,
    m2: f64,
}

impl Moments {
    fn uniform(dt: DataType) -> Self {
        if dt == DataType::Bipolar {
            return Moments { mean: 0.0, m2: 1.0 };
        }
        let (lo, hi) = dt.mantissa_range().unwrap();
        let lsb = dt.mantissa_to_f64(1);
        let vals = (lo..=hi).map(|m| m as f64 * lsb);
        let n = (hi - lo + 1) as f64;
        let (s, s2) = vals.fold((0.0, 0.0), |(s, s2), v| (s + v, s2 + v * v));
        Moments { mean: s / n, m2: s2 / n }
    }
}

struct Builder {
    model: Model,
    rng: ChaCha8Rng,
    scale: Rational,
    /// Current activation tensor, its shape and its value moments.
    cur: String,
    shape: Vec<usize>,
    dtype: DataType,
    moments: Moments,
}

impl Builder {
    fn new(spec: &ZooSpec) -> Self {
        let flow = match spec.id {
            ZooId::CnvW1A1 | ZooId::KwsMlp => Flow::Finn,
            ZooId::AdAe | ZooId::IcCnn => Flow::Hls4ml,
        };
        let model = Model::new(spec.id.as_str(), flow);
        Builder {
            model,
            rng: ChaCha8Rng::seed_from_u64(spec.id.seed()),
            scale: spec.width_scale,
            cur: String::new(),
            shape: vec![],
            dtype: DataType::Float32,
            moments: Moments { mean: 0.0, m2: 1.0 },
        }
    }

    fn input(&mut self, shape: Vec<usize>, dtype: DataType) {
        self.model.add_input("input", shape.clone(), dtype);
        self.cur = "input".into();
        self.shape = shape;
        self.dtype = dtype;
        self.moments = Moments::uniform(dtype);
    }

    fn width(&self, w: usize, layer: &str) -> Result<usize, ZooError> {
        let scaled = (self.scale * Rational::from_integer(w as i64)).floor().to_integer();
        if scaled < 1 {
            return Err(ZooError::UnsupportedScale { scale: self.scale, layer: layer.into() });
        }
        Ok(scaled as usize)
    }

    fn push(&mut self, name: &str, op: Op, extra: &[&str]) -> String {
        let out = name.to_string();
        let mut ins = vec![self.cur.as_str()];
        ins.extend_from_slice(extra);
        self.model.add_node(Node::new(name, op, &ins, &[&out]));
        self.cur = out.clone();
        out
    }

    /// Random weight mantissas. Multi-level domains use a sub-range shrunk
    /// with fan-in so accumulators stay in a useful range.
    fn weights(&mut self, n: usize, fan_in: usize, dt: DataType) -> Vec<i64> {
        if dt == DataType::Bipolar {
            return (0..n).map(|_| if self.rng.gen() { 1 } else { -1 }).collect();
        }
        let (lo, hi) = dt.mantissa_range().unwrap();
        let shrink = (4.0 / (fan_in as f64).sqrt()).min(1.0);
        let r = ((hi as f64 * shrink).round() as i64).max(1);
        let (lo, hi) = (lo.max(-r), hi.min(r));
        (0..n).map(|_| self.rng.gen_range(lo..=hi)).collect()
    }

    /// Adds a linear layer and returns the per-channel accumulator moments.
    fn linear(&mut self, name: &str, m: usize, op: Op, wdt: DataType, bias: Option<DataType>) -> Vec<Moments> {
        let (wshape, fan_in) = match &op {
            Op::Conv2D(a) => {
                let k = a.kernel as usize;
                (vec![m, self.shape[1], k, k], self.shape[1] * k * k)
            }
            _ => (vec![m, self.shape[1]], self.shape[1]),
        };
        let w = self.weights(m * fan_in, fan_in, wdt);
        let wname = format!("{name}.weight");
        let mut moments = Vec::with_capacity(m);
        let x = self.moments;
        let var_x = (x.m2 - x.mean * x.mean).max(1e-12);
        let wr = |v: i64| wdt.mantissa_to_f64(v);
        let b = bias.map(|bdt| {
            let (lo, hi) = bdt.mantissa_range().unwrap();
            let r = (hi / 4).max(1);
            (0..m).map(|_| self.rng.gen_range(lo.max(-r)..=r)).collect::<Vec<i64>>()
        });
        for c in 0..m {
            let row = &w[c * fan_in..(c + 1) * fan_in];
            let bias_v = match (&b, bias) {
                (Some(b), Some(bdt)) => bdt.mantissa_to_f64(b[c]),
                _ => 0.0,
            };
            let mean = row.iter().map(|&v| wr(v)).sum::<f64>() * x.mean + bias_v;
            let var = row.iter().map(|&v| wr(v) * wr(v)).sum::<f64>() * var_x;
            moments.push(Moments { mean, m2: var + mean * mean });
        }
        self.model.add_initializer(&wname, Tensor::int(wshape, wdt, w));
        let mut extra = vec![wname.clone()];
        if let (Some(bv), Some(bdt)) = (b, bias) {
            let bname = format!("{name}.bias");
            self.model.add_initializer(&bname, Tensor::int(vec![m], bdt, bv));
            extra.push(bname);
        }
        let extra_refs: Vec<&str> = extra.iter().map(String::as_str).collect();
        let conv = match &op {
            Op::Conv2D(a) => Some(a.clone()),
            _ => None,
        };
        self.push(name, op, &extra_refs);
        self.shape = match conv {
            Some(a) => {
                let (k, s) = (a.kernel as usize, a.stride as usize);
                let pad = (a.pads[0] + a.pads[1]) as usize;
                let oh = (self.shape[2] + pad - k) / s + 1;
                let ow = (self.shape[3] + pad - k) / s + 1;
                vec![1, m, oh, ow]
            }
            None => vec![1, m],
        };
        self.dtype = DataType::Float32;
        moments
    }

    /// BatchNorm that maps each accumulator channel to roughly
    /// `target_mean +- target_std`. About one channel in ten gets a negative
    /// gamma.
    fn batchnorm(&mut self, name: &str, acc: &[Moments], target_mean: f64, target_std: f64) {
        let m = acc.len();
        let mut gamma = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        let mut mean = Vec::with_capacity(m);
        let mut var = Vec::with_capacity(m);
        for a in acc {
            let sign = if self.rng.gen_bool(0.1) { -1.0 } else { 1.0 };
            gamma.push(sign * target_std * self.rng.gen_range(0.6..1.4));
            beta.push(target_mean + target_std * self.rng.gen_range(-0.3..0.3));
            let v = (a.m2 - a.mean * a.mean).max(1e-6);
            let sd = v.sqrt();
            mean.push(a.mean + sd * self.rng.gen_range(-0.2..0.2));
            var.push(v * self.rng.gen_range(0.8..1.25));
        }
        let mut names = Vec::new();
        for (suffix, vals) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
            let n = format!("{name}.{suffix}");
            self.model.add_initializer(&n, Tensor::float(vec![m], vals));
            names.push(n);
        }
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        self.push(name, Op::BatchNorm(BatchNormAttrs { epsilon: 1e-5 }), &refs);
    }

    fn relu(&mut self, name: &str) {
        self.push(name, Op::Relu, &[]);
    }

    fn quant(&mut self, name: &str, scale: Rational, dtype: DataType) {
        let q = QuantAttrs { scale, zero_point: 0, dtype, rounding: Rounding::RoundHalfUp };
        let out = crate::ir::quant_output_dtype(q.scale, q.zero_point, q.dtype);
        self.push(name, Op::Quant(q), &[]);
        self.dtype = out;
        self.moments = Moments::uniform(out);
        if !dtype.signed() {
            // Post-ReLU activations: skew toward zero.
            self.moments.mean *= 0.6;
            self.moments.m2 *= 0.5;
        }
    }

    fn maxpool(&mut self, name: &str, k: u32) {
        self.push(name, Op::MaxPool2D(PoolAttrs { kernel: k, stride: k }), &[]);
        let k = k as usize;
        self.shape = vec![1, self.shape[1], self.shape[2] / k, self.shape[3] / k];
    }

    fn flatten(&mut self, name: &str) {
        self.push(name, Op::Flatten, &[]);
        self.shape = vec![1, self.shape.iter().product()];
    }

    fn finish(mut self) -> Model {
        self.model.outputs.push(self.cur.clone());
        self.model
    }
}

/// Binarized VGG-style network: three conv blocks and three dense layers.
fn cnv(b: &mut Builder) -> Result<(), ZooError> {
    b.input(vec![1, 3, 32, 32], DataType::uint(8));
    let blocks: [(usize, bool); 6] = [(64, false), (64, true), (128, false), (128, true), (256, false), (256, false)];
    let one = Rational::from_integer(1);
    for (i, &(f, pool)) in blocks.iter().enumerate() {
        let name = format!("conv{}", i + 1);
        let m = b.width(f, &name)?;
        let acc = b.linear(&name, m, Op::Conv2D(ConvAttrs::new(3, 1)), DataType::Bipolar, None);
        b.batchnorm(&format!("bn{}", i + 1), &acc, 0.0, 1.0);
        b.quant(&format!("act{}", i + 1), one, DataType::Bipolar);
        if pool {
            b.maxpool(&format!("pool{}", i + 1), 2);
        }
    }
    b.flatten("flatten");
    for i in 1..=2 {
        let name = format!("fc{i}");
        let m = b.width(512, &name)?;
        let acc = b.linear(&name, m, Op::Dense(DenseAttrs::default()), DataType::Bipolar, None);
        b.batchnorm(&format!("bn_fc{i}"), &acc, 0.0, 1.0);
        b.quant(&format!("act_fc{i}"), one, DataType::Bipolar);
    }
    b.linear("fc3", 10, Op::Dense(DenseAttrs::default()), DataType::Bipolar, None);
    b.push("argmax", Op::ArgMax, &[]);
    Ok(())
}

/// Keyword-spotting MLP: 490 -> 256 -> 256 -> 256 -> 12 with 3-bit weights
/// and activations.
fn kws(b: &mut Builder) -> Result<(), ZooError> {
    b.input(vec![1, 490], DataType::int(8));
    let act_scale = Rational::new(1, 4);
    for i in 1..=3 {
        let name = format!("fc{i}");
        let m = b.width(256, &name)?;
        let acc = b.linear(&name, m, Op::Dense(DenseAttrs::default()), DataType::int(3), None);
        b.batchnorm(&format!("bn{i}"), &acc, 0.6, 0.6);
        b.relu(&format!("relu{i}"));
        b.quant(&format!("act{i}"), act_scale, DataType::uint(3));
    }
    b.linear("fc4", 12, Op::Dense(DenseAttrs::default()), DataType::int(3), None);
    b.push("argmax", Op::ArgMax, &[]);
    Ok(())
}

/// Fully connected autoencoder with a narrow bottleneck.
fn ad(b: &mut Builder, cfg: &AdConfig) -> Result<(), ZooError> {
    b.input(vec![1, cfg.input], DataType::fixed(12, 4));
    let wdt = DataType::fixed(6, 1);
    let bdt = DataType::fixed(8, 3);
    let act = DataType::int(8);
    let act_scale = Rational::new(1, 32); // FIXED<8,3>
    let mut widths: Vec<(String, usize)> = Vec::new();
    for i in 0..cfg.depth {
        widths.push((format!("enc{}", i + 1), cfg.hidden));
    }
    widths.push(("latent".into(), cfg.latent));
    for i in 0..cfg.depth {
        widths.push((format!("dec{}", i + 1), cfg.hidden));
    }
    for (name, w) in widths {
        let m = b.width(w, &name)?;
        let acc = b.linear(&name, m, Op::Dense(DenseAttrs::default()), wdt, Some(bdt));
        b.batchnorm(&format!("{name}_bn"), &acc, 0.8, 0.8);
        b.relu(&format!("{name}_relu"));
        b.quant(&format!("{name}_act"), act_scale, act);
    }
    b.linear("output", cfg.input, Op::Dense(DenseAttrs::default()), wdt, Some(bdt));
    Ok(())
}

/// Image-classification CNN: five convolutions, a dense head and softmax.
fn ic(b: &mut Builder) -> Result<(), ZooError> {
    let fx = DataType::fixed(8, 2);
    b.input(vec![1, 3, 32, 32], fx);
    let act_scale = Rational::new(1, 64); // FIXED<8,2>
    let layers: [(usize, u32, u32); 5] = [(32, 1, 1), (4, 4, 1), (32, 4, 1), (32, 4, 4), (4, 4, 1)];
    for (i, &(f, k, s)) in layers.iter().enumerate() {
        let name = format!("conv{}", i + 1);
        let m = b.width(f, &name)?;
        let mut a = ConvAttrs::new(k, s);
        // "Same" padding, extra row and column at the end.
        let total = k.saturating_sub(s);
        a.pads = [total / 2, total - total / 2];
        b.linear(&name, m, Op::Conv2D(a), fx, Some(fx));
        b.quant(&format!("q{}", i + 1), act_scale, DataType::int(8));
        b.relu(&format!("relu{}", i + 1));
    }
    b.flatten("flatten");
    b.linear("fc", 10, Op::Dense(DenseAttrs::default()), fx, Some(fx));
    b.push("softmax", Op::Softmax, &[]);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{run, ExecValue, Mode};

    fn zero_input(m: &Model) -> ExecValue {
        m.inputs
            .iter()
            .map(|vi| (vi.name.clone(), Tensor::int(vi.shape.clone(), vi.dtype, vec![0; vi.shape.iter().product()])))
            .collect()
    }

    #[test]
    fn reference_param_counts() {
        let cnv = build(&ZooSpec::new(ZooId::CnvW1A1)).unwrap();
        assert_eq!(cnv.count_params().params, 1_542_848);
        let kws = build(&ZooSpec::new(ZooId::KwsMlp)).unwrap();
        assert_eq!(kws.count_params().params, 259_584);
    }

    #[test]
    fn all_models_validate_and_run_on_zero_input() {
        for id in ZooId::ALL {
            let m = build(&ZooSpec::new(id)).unwrap();
            let diags = crate::ir::validate(&m);
            assert!(diags.is_empty(), "{id}: {diags:?}");
            run(&m, &zero_input(&m), Mode::Float).unwrap_or_else(|e| panic!("{id}: {e}"));
        }
    }

    #[test]
    fn cnv_spatial_trace() {
        let m = build(&ZooSpec::new(ZooId::CnvW1A1)).unwrap();
        let types = m.types().unwrap();
        let dims: Vec<usize> = ["input", "conv1", "conv2", "pool2", "conv3", "conv4", "pool4", "conv5", "conv6"]
            .iter()
            .map(|t| types[*t].shape[2])
            .collect();
        assert_eq!(dims, vec![32, 30, 28, 14, 12, 10, 5, 3, 1]);
    }

    #[test]
    fn ic_shapes() {
        let m = build(&ZooSpec::new(ZooId::IcCnn)).unwrap();
        let types = m.types().unwrap();
        assert_eq!(types["conv4"].shape, vec![1, 32, 8, 8]);
        assert_eq!(types["flatten"].shape, vec![1, 256]);
        assert_eq!(types["softmax"].shape, vec![1, 10]);
    }

    #[test]
    fn scaled_builds() {
        let eighth = Rational::new(1, 8);
        let m = build(&ZooSpec::scaled(ZooId::CnvW1A1, eighth)).unwrap();
        assert!(crate::ir::validate(&m).is_empty());
        assert!(matches!(
            build(&ZooSpec::scaled(ZooId::IcCnn, eighth)),
            Err(ZooError::UnsupportedScale { .. })
        ));
        assert!(matches!(build(&ZooSpec::scaled(ZooId::KwsMlp, Rational::new(1, 512))), Err(ZooError::UnsupportedScale { .. })));
    }

    #[test]
    fn deterministic() {
        for id in ZooId::ALL {
            assert_eq!(build(&ZooSpec::new(id)).unwrap(), build(&ZooSpec::new(id)).unwrap());
        }
    }

    #[test]
    fn id_parsing() {
        assert_eq!("CNV_W1A1".parse::<ZooId>().unwrap(), ZooId::CnvW1A1);
        assert_eq!("kws-mlp".parse::<ZooId>().unwrap(), ZooId::KwsMlp);
        assert!("bogus".parse::<ZooId>().is_err());
    }
}
