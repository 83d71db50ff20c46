use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::{grad_check_many, Graph, Tensor};

fn toy(seed: u64) -> EncoderConfig {
    EncoderConfig {
        input_dim: 5,
        conv_channels: 4,
        conv_kernel: 3,
        conv_stride: 2,
        gru_hidden: 3,
        gru_layers: 2,
        embed_dim: 6,
        attention_dim: 4,
        init_seed: seed,
    }
}

fn random(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn init_is_seeded() {
    let a = SpeechEncoder::<f32>::new(toy(1)).unwrap();
    assert_eq!(a, SpeechEncoder::new(toy(1)).unwrap());
    assert_ne!(a, SpeechEncoder::new(toy(2)).unwrap());
    assert!(a.param("conv.bias").unwrap().data().iter().all(|&v| v == 0.0));
    let bound = (6.0f32 / (15 + 4) as f32).sqrt();
    let w = a.param("conv.weight").unwrap();
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    assert!(w.data().iter().any(|v| v.abs() > bound / 2.0));
}

#[test]
fn parameter_count_matches_formula() {
    let cfg = EncoderConfig {
        embed_dim: 16,
        gru_hidden: 8,
        ..EncoderConfig::default()
    };
    // 64*235 + 48*73 + 3*48*25 + 128*17 + 16*17
    assert_eq!(cfg.param_count(), 24_592);
    assert_eq!(SpeechEncoder::<f32>::new(cfg).unwrap().param_count(), 24_592);
    let enc = SpeechEncoder::<f32>::new(toy(0)).unwrap();
    assert_eq!(enc.param_count(), toy(0).param_count());
}

#[test]
fn conv_length_formula() {
    let cfg = EncoderConfig::default();
    assert_eq!(cfg.conv_frames(98), Some(47));
    assert_eq!(cfg.conv_frames(6), Some(1));
    assert_eq!(cfg.conv_frames(5), None);
}

fn conv_output(enc: &SpeechEncoder<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let vars = enc.bind(&mut g, false);
    let x = g.constant(x.clone());
    let y = vars.conv_subsample(&mut g, x).unwrap();
    g.value(y).clone()
}

#[test]
fn single_tap_kernel_passes_constant_input() {
    let mut enc = SpeechEncoder::<f64>::new(toy(0)).unwrap();
    let w = enc.param_mut("conv.weight").unwrap();
    w.data_mut().iter_mut().for_each(|v| *v = 0.0);
    // tap 1, input channel 2, output channel 0
    w.data_mut()[(5 + 2) * 4] = 1.0;
    let x = Tensor::filled(vec![9, 5], 0.75);
    let y = conv_output(&enc, &x);
    assert_eq!(y.shape(), &[4, 4]);
    for row in y.data().chunks(4) {
        assert_eq!(row, &[0.75, 0.0, 0.0, 0.0]);
    }
}

#[test]
fn conv_matches_sliding_window_oracle() {
    let mut enc = SpeechEncoder::<f64>::new(toy(3)).unwrap();
    *enc.param_mut("conv.bias").unwrap() = random(vec![4], 8);
    let x = random(vec![10, 5], 4);
    let y = conv_output(&enc, &x);
    let w = enc.param("conv.weight").unwrap().data();
    let b = enc.param("conv.bias").unwrap().data();
    let xs = x.data();
    for t in 0..4 {
        for c in 0..4 {
            let mut acc = b[c];
            for k in 0..3 {
                for d in 0..5 {
                    acc += xs[(2 * t + k) * 5 + d] * w[(k * 5 + d) * 4 + c];
                }
            }
            assert!((y.data()[t * 4 + c] - acc).abs() < 1e-6);
        }
    }
}

#[test]
fn short_or_misshaped_input_is_rejected() {
    let enc = SpeechEncoder::<f64>::new(toy(0)).unwrap();
    assert!(matches!(
        enc.encode_tensor(&Tensor::zeros(vec![2, 5])),
        Err(EncoderError::TooShort { .. })
    ));
    assert!(matches!(
        enc.encode_tensor(&Tensor::zeros(vec![8, 4])),
        Err(EncoderError::InputDim { .. })
    ));
}

fn zeroed(cfg: EncoderConfig) -> SpeechEncoder<f64> {
    let mut enc = SpeechEncoder::<f64>::new(cfg).unwrap();
    for (_, t) in enc.params_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    enc
}

#[test]
fn zero_parameters_give_zero_states_and_bias_direction() {
    let mut enc = zeroed(toy(0));
    let mut g = Graph::new();
    let vars = enc.bind(&mut g, false);
    let x = g.constant(random(vec![11, 5], 1));
    let c = vars.conv_subsample(&mut g, x).unwrap();
    let h = vars.bigru_stack(&mut g, c).unwrap();
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));

    *enc.param_mut("projection.bias").unwrap() = Tensor::vector(vec![3.0, 0.0, -4.0, 0.0, 0.0, 0.0]);
    for seed in 0..3 {
        let out = enc.encode_tensor(&random(vec![7 + seed as usize, 5], seed)).unwrap();
        let expected = [0.6, 0.0, -0.8, 0.0, 0.0, 0.0];
        assert!(out.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn single_frame_is_direction_symmetric() {
    let mut enc = SpeechEncoder::<f64>::new(toy(5)).unwrap();
    let copies: Vec<(String, Tensor<f64>)> = enc
        .params()
        .iter()
        .filter(|(n, _)| n.contains(".fwd."))
        .map(|(n, t)| (n.replace(".fwd.", ".bwd."), t.clone()))
        .collect();
    for (name, t) in copies {
        *enc.param_mut(&name).unwrap() = t;
    }
    let mut g = Graph::new();
    let vars = enc.bind(&mut g, false);
    let x = g.constant(random(vec![3, 5], 2));
    let c = vars.conv_subsample(&mut g, x).unwrap();
    assert_eq!(g.shape(c), &[1, 4]);
    let h = vars.bigru_stack(&mut g, c).unwrap();
    let out = g.value(h).data();
    assert_eq!(&out[..3], &out[3..]);
}

#[test]
fn gru_matches_hand_trace() {
    let cfg = EncoderConfig {
        input_dim: 2,
        conv_channels: 2,
        conv_kernel: 1,
        conv_stride: 1,
        gru_hidden: 2,
        gru_layers: 1,
        embed_dim: 2,
        attention_dim: 2,
        init_seed: 9,
    };
    let mut enc = SpeechEncoder::<f64>::new(cfg).unwrap();
    for (i, (_, t)) in enc.params_mut().iter_mut().enumerate() {
        *t = random(t.shape().to_vec(), 100 + i as u64);
    }
    let x = random(vec![3, 2], 77);
    let mut g = Graph::new();
    let vars = enc.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let h = vars.bigru_stack(&mut g, xv).unwrap();
    let got = g.value(h).data().to_vec();

    let p = |name: &str| enc.param(name).unwrap().data().to_vec();
    let trace = |dir: &str, order: [usize; 3]| {
        let w: Vec<Vec<f64>> = ["w_z", "w_r", "w_h"]
            .iter()
            .map(|n| p(&format!("gru.1.{dir}.{n}")))
            .collect();
        let u: Vec<Vec<f64>> = ["u_z", "u_r", "u_h"]
            .iter()
            .map(|n| p(&format!("gru.1.{dir}.{n}")))
            .collect();
        let b: Vec<Vec<f64>> = ["b_z", "b_r", "b_h"]
            .iter()
            .map(|n| p(&format!("gru.1.{dir}.{n}")))
            .collect();
        let mut h = [0.0f64; 2];
        let mut out = [[0.0f64; 2]; 3];
        for t in order {
            let xt = [x.data()[2 * t], x.data()[2 * t + 1]];
            let affine = |g: usize, j: usize, state: [f64; 2]| {
                b[g][j] + xt[0] * w[g][j] + xt[1] * w[g][2 + j] + state[0] * u[g][j] + state[1] * u[g][2 + j]
            };
            let z = [sigmoid(affine(0, 0, h)), sigmoid(affine(0, 1, h))];
            let r = [sigmoid(affine(1, 0, h)), sigmoid(affine(1, 1, h))];
            let rh = [r[0] * h[0], r[1] * h[1]];
            let cand = [affine(2, 0, rh).tanh(), affine(2, 1, rh).tanh()];
            h = [
                (1.0 - z[0]) * h[0] + z[0] * cand[0],
                (1.0 - z[1]) * h[1] + z[1] * cand[1],
            ];
            out[t] = h;
        }
        out
    };
    let fwd = trace("fwd", [0, 1, 2]);
    let bwd = trace("bwd", [2, 1, 0]);
    for t in 0..3 {
        let expected = [fwd[t][0], fwd[t][1], bwd[t][0], bwd[t][1]];
        for j in 0..4 {
            assert!((got[t * 4 + j] - expected[j]).abs() < 1e-12, "t={t} j={j}");
        }
    }
}

fn pool(enc: &SpeechEncoder<f64>, h: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let vars = enc.bind(&mut g, false);
    let hv = g.constant(h.clone());
    let (pooled, alpha) = vars.attention_pool(&mut g, hv).unwrap();
    (g.value(pooled).data().to_vec(), g.value(alpha).data().to_vec())
}

#[test]
fn attention_single_step_and_uniform_cases() {
    let mut enc = SpeechEncoder::<f64>::new(toy(6)).unwrap();
    let one = random(vec![1, 6], 1);
    let (pooled, alpha) = pool(&enc, &one);
    assert_eq!(alpha, vec![1.0]);
    assert_eq!(pooled, one.data());

    enc.param_mut("attention.w")
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = 0.0);
    let h = random(vec![4, 6], 2);
    let (pooled, alpha) = pool(&enc, &h);
    assert!(alpha.iter().all(|a| (a - 0.25).abs() < 1e-15));
    for (c, p) in pooled.iter().enumerate() {
        let mean = (0..4).map(|t| h.data()[t * 6 + c]).sum::<f64>() / 4.0;
        assert!((p - mean).abs() < 1e-12);
    }
}

#[test]
fn attention_matches_formula() {
    let enc = SpeechEncoder::<f64>::new(toy(7)).unwrap();
    let h = random(vec![4, 6], 3);
    let (pooled, alpha) = pool(&enc, &h);
    let w = enc.param("attention.w").unwrap().data();
    let u = enc.param("attention.u").unwrap().data();
    let scores: Vec<f64> = (0..4)
        .map(|t| {
            (0..4)
                .map(|a| u[a] * (0..6).map(|c| h.data()[t * 6 + c] * w[c * 4 + a]).sum::<f64>().tanh())
                .sum()
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let expected: Vec<f64> = scores.iter().map(|s| (s - max).exp() / z).collect();
    for t in 0..4 {
        assert!((alpha[t] - expected[t]).abs() < 1e-12);
    }
    for (c, p) in pooled.iter().enumerate() {
        let v: f64 = (0..4).map(|t| expected[t] * h.data()[t * 6 + c]).sum();
        assert!((p - v).abs() < 1e-12);
    }
}

#[test]
fn encode_is_unit_norm_and_deterministic() {
    let enc = SpeechEncoder::<f32>::new(toy(8)).unwrap();
    let x = random(vec![13, 5], 5).cast::<f32>();
    let a = enc.encode_tensor(&x).unwrap();
    assert_eq!(a, enc.encode_tensor(&x).unwrap());
    let norm: f32 = a.iter().map(|v| v * v).sum::<f32>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);
}

#[test]
fn encode_gradient_matches_finite_differences() {
    let enc = SpeechEncoder::<f64>::new(toy(10)).unwrap();
    let x = random(vec![9, 5], 6);
    let target = random(vec![1, 6], 7);
    let names: Vec<String> = enc.params().iter().map(|(n, _)| n.clone()).collect();
    let mut inputs: Vec<Tensor<f64>> = enc.params().iter().map(|(_, t)| t.clone()).collect();
    // nonzero biases exercise every path
    for (i, t) in inputs.iter_mut().enumerate() {
        if names[i].contains("b_") || names[i].ends_with("bias") {
            *t = random(t.shape().to_vec(), 200 + i as u64);
        }
    }
    let err = grad_check_many(
        |g, vars| {
            let bound = EncoderVars::from_vars(toy(10), vars.to_vec());
            let xv = g.constant(x.clone());
            let y = bound.encode(g, xv).unwrap();
            let t = g.constant(target.clone());
            let d = g.mul(y, t)?;
            g.sum_all(d)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let ck = Checkpoint {
        encoder: SpeechEncoder::new(toy(11)).unwrap(),
        step: 1234,
        optimizer: vec![1, 2, 3, 250],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.sgck");
    save_checkpoint(&path, &ck).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"SGCK");
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(checkpoint::encode(&back), bytes);

    std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(EncoderError::Corrupt { .. })));
    let mut bad = bytes.clone();
    bad[1] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(EncoderError::Format { .. })));
}

#[test]
fn checkpoint_with_wrong_shapes_is_rejected() {
    let enc = SpeechEncoder::<f32>::new(toy(0)).unwrap();
    let mut params = enc.params().to_vec();
    params[1].1 = Tensor::zeros(vec![5]);
    assert!(matches!(
        SpeechEncoder::from_params(toy(0), params),
        Err(EncoderError::Parameter { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_weights_are_a_distribution(frames in 3usize..30, seed in any::<u64>()) {
        let enc = SpeechEncoder::<f64>::new(toy(seed)).unwrap();
        let x = random(vec![frames, 5], seed ^ 1);
        let alpha = enc.attention_weights(&x).unwrap();
        prop_assert_eq!(alpha.len(), toy(0).conv_frames(frames).unwrap());
        prop_assert!(alpha.iter().all(|&a| a >= 0.0));
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert_eq!(enc.encode_tensor(&x).unwrap().len(), 6);
    }
}
