// SPDX-License-Identifier: Apache-2.0

//! Small randomized graphs used by tests and examples.

use rand::Rng;

use crate::ir::{
    BatchNormAttrs, ConvAttrs, DataType, DenseAttrs, Flow, Model, Node, Op, PoolAttrs, QuantAttrs, Rational, Rounding,
    Tensor,
};

#[allow(clippy::too_many_arguments)]
fn add_bn(m: &mut Model, x: &str, out: &str, g: Vec<f64>, b: Vec<f64>, mu: Vec<f64>, var: Vec<f64>, eps: f64) {
    let n = g.len();
    let mut ins = vec![x.to_string()];
    for (s, v) in [("gamma", g), ("beta", b), ("mean", mu), ("var", var)] {
        let name = format!("bn.{s}");
        m.add_initializer(&name, Tensor::float(vec![n], v));
        ins.push(name);
    }
    let refs: Vec<&str> = ins.iter().map(String::as_str).collect();
    m.add_node(Node::new("bn", Op::BatchNorm(BatchNormAttrs { epsilon: eps }), &refs, &[out]));
}

/// Float `Dense` or `Conv2D` followed by a random BatchNorm, with a float
/// input. About one channel in five has a negative gamma.
pub fn linear_bn(rng: &mut impl Rng, conv: bool) -> Model {
    let mut m = Model::new(if conv { "conv_bn" } else { "dense_bn" }, Flow::Hls4ml);
    let cout = rng.gen_range(1..=8);
    let (w_shape, op) = if conv {
        let cin = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=3u32);
        let hw = rng.gen_range(k as usize..=6);
        m.add_input("x", vec![1, cin, hw, hw], DataType::Float32);
        (vec![cout, cin, k as usize, k as usize], Op::Conv2D(ConvAttrs::new(k, 1)))
    } else {
        let n = rng.gen_range(1..=16);
        m.add_input("x", vec![1, n], DataType::Float32);
        (vec![cout, n], Op::Dense(DenseAttrs::default()))
    };
    let numel: usize = w_shape.iter().product();
    m.add_initializer("w", Tensor::float(w_shape, (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    m.add_initializer("b", Tensor::float(vec![cout], (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    m.add_node(Node::new("linear", op, &["x", "w", "b"], &["z"]));
    let sign = |r: &mut dyn rand::RngCore| if r.gen_bool(0.2) { -1.0 } else { 1.0 };
    let g = (0..cout).map(|_| sign(rng) * rng.gen_range(0.1..3.0)).collect();
    let b = (0..cout).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mu = (0..cout).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let var = (0..cout).map(|_| rng.gen_range(0.01..4.0)).collect();
    add_bn(&mut m, "z", "y", g, b, mu, var, 1e-3);
    m.outputs.push("y".into());
    m
}

/// `linear_bn` with an identity BatchNorm: gamma 1, beta 0, mean 0 and
/// `var + eps == 1` exactly.
pub fn linear_identity_bn(rng: &mut impl Rng, conv: bool) -> Model {
    let mut m = linear_bn(rng, conv);
    let c = m.initializers["bn.gamma"].numel();
    let eps = 1.0 / 1024.0;
    for (name, v) in [("bn.gamma", 1.0), ("bn.beta", 0.0), ("bn.mean", 0.0), ("bn.var", 1.0 - eps)] {
        m.initializers.insert(name.into(), Tensor::float(vec![c], vec![v; c]));
    }
    let bn = m.nodes.iter_mut().find(|n| n.name == "bn").unwrap();
    bn.op = Op::BatchNorm(BatchNormAttrs { epsilon: eps });
    m
}

/// `Dense(INT8 weights) -> BatchNorm -> ReLU -> Quant(UINT3, scale 1/4)` on
/// one INT8 input. The BatchNorm statistics place the quantizer's steps
/// inside the accumulator range.
pub fn toy_layer(rng: &mut impl Rng, channels: usize) -> Model {
    let mut m = Model::new("toy", Flow::Finn);
    m.add_input("x", vec![1, 1], DataType::int(8));
    let w: Vec<i64> = (0..channels).map(|_| rng.gen_range(-128..=127)).collect();
    m.add_initializer("w", Tensor::int(vec![channels, 1], DataType::int(8), w));
    m.add_node(Node::new("fc", Op::Dense(DenseAttrs::default()), &["x", "w"], &["z"]));
    let g = (0..channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b = (0..channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mu = (0..channels).map(|_| rng.gen_range(-2000.0..2000.0)).collect();
    let var = (0..channels).map(|_| rng.gen_range(1.0..1e7)).collect();
    add_bn(&mut m, "z", "n", g, b, mu, var, 1e-5);
    m.add_node(Node::new("relu", Op::Relu, &["n"], &["r"]));
    let q = QuantAttrs { scale: Rational::new(1, 4), zero_point: 0, dtype: DataType::uint(3), rounding: Rounding::RoundHalfUp };
    m.add_node(Node::new("q", Op::Quant(q), &["r"], &["y"]));
    m.outputs.push("y".into());
    m
}

/// Integer `Dense` layer whose inputs span at most `max_input_bits` bits in
/// total, with random signed weights and an optional bias.
pub fn small_int_layer(rng: &mut impl Rng, max_input_bits: u32) -> Model {
    let mut m = Model::new("small", Flow::Hls4ml);
    let n = rng.gen_range(1..=3usize);
    let per = (max_input_bits / n as u32).clamp(1, 8) as u8;
    let x_dtype = if per >= 2 && rng.gen_bool(0.5) { DataType::int(per) } else { DataType::uint(per) };
    m.add_input("x", vec![1, n], x_dtype);
    let cout = rng.gen_range(1..=4usize);
    let wb = rng.gen_range(2..=6u8);
    let w_dtype = DataType::int(wb);
    let (lo, hi) = w_dtype.mantissa_range().unwrap();
    m.add_initializer("w", Tensor::int(vec![cout, n], w_dtype, (0..cout * n).map(|_| rng.gen_range(lo..=hi)).collect()));
    let mut ins = vec!["x", "w"];
    if rng.gen_bool(0.5) {
        let b_dtype = DataType::int(8);
        m.add_initializer("b", Tensor::int(vec![cout], b_dtype, (0..cout).map(|_| rng.gen_range(-128..=127)).collect()));
        ins.push("b");
    }
    m.add_node(Node::new("fc", Op::Dense(DenseAttrs::default()), &ins, &["y"]));
    m.outputs.push("y".into());
    m
}

/// Residual-style block on a `[1, 2, 4, 4]` INT8 input: ReLU, then a fork
/// into a 4x4/4 max pool and a 4x4/4 convolution, joined by Add. Each branch
/// gathers all 16 pixels before emitting, so an input FIFO shallower than
/// 16 on either branch deadlocks.
pub fn pool_conv_join() -> Model {
    let mut m = Model::new("pool_conv_join", Flow::Hls4ml);
    m.add_input("x", vec![1, 2, 4, 4], DataType::int(8));
    m.add_node(Node::new("relu", Op::Relu, &["x"], &["h"]));
    m.add_node(Node::new("pool", Op::MaxPool2D(PoolAttrs { kernel: 4, stride: 4 }), &["h"], &["a"]));
    let w: Vec<i64> = (0..2 * 2 * 16).map(|i| [1, -1, 0][i % 3]).collect();
    m.add_initializer("w", Tensor::int(vec![2, 2, 4, 4], DataType::int(2), w));
    m.add_node(Node::new("conv", Op::Conv2D(ConvAttrs::new(4, 4)), &["h", "w"], &["b"]));
    m.add_node(Node::new("add", Op::Add, &["a", "b"], &["y"]));
    m.outputs.push("y".into());
    m
}
