// SPDX-License-Identifier: Apache-2.0

//! Builds a two-layer integer MLP by hand, validates it, and round-trips it
//! through the text format.

use qflow::ir::{parse_model, serialize_model, DataType, DenseAttrs, Flow, Model, Node, Op, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut m = Model::new("tiny_mlp", Flow::Hls4ml);
    m.add_input("x", vec![1, 4], DataType::int(4));
    m.add_initializer("w1", Tensor::int(vec![3, 4], DataType::int(2), vec![1, -1, 0, 1, -2, 1, 1, 0, 0, 1, -1, -1]));
    m.add_initializer("w2", Tensor::int(vec![2, 3], DataType::int(2), vec![1, 1, -1, 0, -2, 1]));
    m.add_node(Node::new("fc1", Op::Dense(DenseAttrs { fused_relu: true, ..Default::default() }), &["x", "w1"], &["h"]));
    m.add_node(Node::new("fc2", Op::Dense(DenseAttrs::default()), &["h", "w2"], &["y"]));
    m.outputs.push("y".into());
    let m = m.validated()?;

    for (name, info) in m.types()? {
        println!("{name:>3}: {:?} {}", info.shape, info.dtype);
    }
    let text = serialize_model(&m);
    let back = parse_model(&text)?;
    assert_eq!(back, m);
    println!("params: {}", m.count_params().params);
    println!("{text}");
    Ok(())
}
