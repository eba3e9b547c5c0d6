// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qflow::cost::bops_layer;
use qflow::dataflow::fixtures::random_pipeline;
use qflow::dataflow::{simulate, size_fifos, FifoPlan};
use qflow::exec::{argmax, kernels, random_inputs, run, Mode};
use qflow::fixtures::{linear_bn, small_int_layer, toy_layer};
use qflow::ir::{parse_model, serialize_model, DataType, Flow, Op, QuantAttrs, Rational, Rounding};
use qflow::passes::{fold_bn, merge_relu, minimize_accumulators, streamline};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), depth in 1u64..20) {
        let p = random_pipeline(&mut rng(seed), 12, Flow::Hls4ml);
        let plan = FifoPlan::uniform(&p, depth);
        prop_assert_eq!(simulate(&p, &plan, 2, None).unwrap(), simulate(&p, &plan, 2, None).unwrap());
    }

    #[test]
    fn sized_plan_reproduces_unbounded_cycles(seed in any::<u64>(), n in 1u64..4, finn in any::<bool>()) {
        let mode = if finn { Flow::Finn } else { Flow::Hls4ml };
        let p = random_pipeline(&mut rng(seed), 12, mode);
        let s = size_fifos(&p, n, mode).unwrap();
        prop_assert_eq!(s.sized.total_cycles, s.unbounded.total_cycles);
        for (e, &d) in &s.plan.depths {
            prop_assert!(s.sized.max_occupancy[e] < d);
            match mode {
                Flow::Finn => prop_assert!(d.is_power_of_two()),
                Flow::Hls4ml => prop_assert_eq!(d, s.unbounded.max_occupancy[e] + 1),
            }
        }
    }

    #[test]
    fn deeper_fifo_never_slows(seed in any::<u64>(), pick in any::<prop::sample::Index>(), extra in 1u64..8) {
        let p = random_pipeline(&mut rng(seed), 12, Flow::Hls4ml);
        let s = size_fifos(&p, 2, Flow::Hls4ml).unwrap();
        if s.plan.depths.is_empty() {
            return Ok(());
        }
        // Start from a tight plan so the change matters.
        let mut base = s.plan.clone();
        for d in base.depths.values_mut() {
            *d = (*d).div_ceil(2).max(1);
        }
        let key = base.depths.keys().nth(pick.index(base.depths.len())).unwrap().clone();
        let r0 = simulate(&p, &base, 2, None).unwrap();
        let mut deeper = base.clone();
        *deeper.depths.get_mut(&key).unwrap() += extra;
        let r1 = simulate(&p, &deeper, 2, None).unwrap();
        if !r0.deadlock {
            prop_assert!(!r1.deadlock);
            prop_assert!(r1.total_cycles <= r0.total_cycles, "{} -> {}", r0.total_cycles, r1.total_cycles);
        }
    }

    #[test]
    fn sink_receives_declared_tokens(seed in any::<u64>(), n in 1u64..4) {
        let p = random_pipeline(&mut rng(seed), 12, Flow::Hls4ml);
        let s = size_fifos(&p, n, Flow::Hls4ml).unwrap();
        let r = &s.sized;
        prop_assert_eq!(r.completions.len() as u64, n);
        let expected = (p.sink_tokens_per_inference() * n) as f64 / r.total_cycles as f64;
        prop_assert!((r.throughput_tokens_per_cycle - expected).abs() < 1e-12);
    }

    #[test]
    fn bops_grows_with_every_argument(m in 1i64..64, n in 1i64..64, k in 1i64..5, ba in 1i64..9, bw in 1i64..9, p in 1i64..50) {
        let base = bops_layer(m, n, k, ba, bw, p).unwrap();
        prop_assert!(base > 0.0);
        for bigger in [
            bops_layer(m + 1, n, k, ba, bw, p),
            bops_layer(m, n + 1, k, ba, bw, p),
            bops_layer(m, n, k + 1, ba, bw, p),
            bops_layer(m, n, k, ba + 1, bw, p),
            bops_layer(m, n, k, ba, bw + 1, p),
            bops_layer(m, n, k, ba, bw, p + 1),
        ] {
            prop_assert!(bigger.unwrap() > base);
        }
    }

    #[test]
    fn softmax_preserves_argmax(v in prop::collection::vec(-500.0f64..500.0, 1..40)) {
        prop_assert_eq!(argmax(&kernels::softmax(&v)).unwrap(), argmax(&v).unwrap());
    }

    #[test]
    fn quant_levels_stay_in_range(x in -1e3f64..1e3, bits in 2u8..9, signed in any::<bool>(), num in 1i64..16) {
        let dtype = if signed { DataType::int(bits) } else { DataType::uint(bits) };
        let q = QuantAttrs { scale: Rational::new(num, 8), zero_point: 0, dtype, rounding: Rounding::RoundHalfUp };
        let level = kernels::quant_level(x, &q);
        prop_assert!(dtype.contains_mantissa(level));
    }

    #[test]
    fn exact_and_float_backends_agree_on_integer_layers(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = small_int_layer(&mut r, 12);
        let (m, _) = minimize_accumulators(&m).unwrap();
        for _ in 0..8 {
            let inp = random_inputs(&m, &mut r);
            let a = run(&m, &inp, Mode::Float).unwrap()["y"].to_f64();
            let b = run(&m, &inp, Mode::ExactInt).unwrap()["y"].to_f64();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn fold_bn_preserves_outputs(seed in any::<u64>(), conv in any::<bool>()) {
        let mut r = rng(seed);
        let m = linear_bn(&mut r, conv);
        let (f, rep) = fold_bn(&m).unwrap();
        prop_assert_eq!(rep.removed, 1);
        let inp = random_inputs(&m, &mut r);
        let a = run(&m, &inp, Mode::Float).unwrap()["y"].to_f64();
        let b = run(&f, &inp, Mode::Float).unwrap()["y"].to_f64();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(y.abs()).max(1e-9), "{} vs {}", x, y);
        }
    }

    #[test]
    fn streamline_with_min_accum_is_exact(seed in any::<u64>(), channels in 1usize..6) {
        let mut r = rng(seed);
        let m = toy_layer(&mut r, channels);
        let (s, _) = streamline(&m).unwrap();
        let (s, _) = minimize_accumulators(&s).unwrap();
        for _ in 0..16 {
            let inp = random_inputs(&m, &mut r);
            let want = run(&m, &inp, Mode::Float).unwrap()["y"].to_f64();
            prop_assert_eq!(run(&s, &inp, Mode::ExactInt).unwrap()["y"].to_f64(), want);
        }
    }

    #[test]
    fn merge_relu_into_dense_is_exact(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut m = small_int_layer(&mut r, 12);
        m.outputs = vec!["r".into()];
        m.add_node(qflow::ir::Node::new("relu", Op::Relu, &["y"], &["r"]));
        let (f, rep) = merge_relu(&m).unwrap();
        prop_assert_eq!(rep.removed, 1);
        prop_assert!(f.node("fc").unwrap().op.fused_relu());
        for _ in 0..8 {
            let inp = random_inputs(&m, &mut r);
            prop_assert_eq!(run(&m, &inp, Mode::ExactInt).unwrap()["r"].to_f64(), run(&f, &inp, Mode::ExactInt).unwrap()["r"].to_f64());
        }
    }

    #[test]
    fn min_accum_is_idempotent(seed in any::<u64>()) {
        let m = small_int_layer(&mut rng(seed), 12);
        let (once, _) = minimize_accumulators(&m).unwrap();
        let (twice, rep) = minimize_accumulators(&once).unwrap();
        prop_assert_eq!(rep.changes(), 0);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn model_text_round_trips(seed in any::<u64>(), conv in any::<bool>()) {
        let m = linear_bn(&mut rng(seed), conv);
        let text = serialize_model(&m);
        let back = parse_model(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(serialize_model(&back), text);
    }
}
