mod common;

use inse_core::frontend::PairedInput;
use inse_core::model::{
    batch_tensor, build_model, Checkpoint, FeatureLayer, Model, ModelSpec, TrainingMetadata,
};
use inse_core::nn::{Parameterized, Tensor};
use inse_core::training::NormStats;
use inse_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pair(spec: &ModelSpec, seed: u64) -> PairedInput {
    let [c, h, w] = spec.input_shape;
    assert_eq!(c, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..c * h * w)
        .map(|_| rng.random_range(-2.0f32..2.0))
        .collect();
    PairedInput::from_raw(data, h, w, true).unwrap()
}

fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(
        shape,
        (0..shape.iter().product())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

#[test]
fn full_model_traces_the_published_shapes() {
    let spec = ModelSpec::standard();
    let model = build_model(&spec, 7).unwrap();
    let x = batch_tensor::<f32>(&[&random_pair(&spec, 1)]).unwrap();
    let (scores, trace) = model.infer_traced(&x).unwrap();
    assert_eq!(scores.len(), 1);
    let shapes: Vec<Vec<usize>> = trace.iter().map(|t| t.shape.clone()).collect();
    let expect: Vec<Vec<usize>> = vec![
        vec![208, 16, 180],
        vec![224, 16, 90],
        vec![224, 16, 90],
        vec![256, 16, 45],
        vec![256, 16, 45],
        vec![256, 14, 22],
        vec![256, 14, 22],
        vec![256, 4, 4],
        vec![3200],
        vec![512],
        vec![1],
    ];
    assert_eq!(shapes, expect);
}

#[test]
fn parameter_budget() {
    let spec = ModelSpec::standard();
    let model = build_model(&spec, 0).unwrap();
    let total = model.count_parameters();
    assert!((total as f64 - 15.25e6).abs() <= 0.05 * 15.25e6, "{total}");
    let fc: usize = model
        .fc_layers()
        .iter()
        .map(|l| l.weight.len() + l.bias.len())
        .sum();
    assert_eq!(fc, 4096 * 3200 + 3200 + 3200 * 512 + 512 + 512 + 1);
    assert_eq!(fc, 14_749_825);
    let last = model.fc_layers().last().unwrap();
    assert_eq!(last.weight.len() + last.bias.len(), 513);
    // Non-trainable running statistics are excluded from the count.
    let all: usize = model.params().iter().map(|(_, p)| p.len()).sum();
    assert!(all > total);
}

#[test]
fn first_block_and_factorized_block_shapes() {
    let spec = ModelSpec::standard();
    let shapes = spec.feature_shapes().unwrap();
    assert_eq!(shapes[0], (208, 16, 180));
    assert_eq!(shapes[5], (256, 14, 22));
    let model = build_model(&spec, 0).unwrap();
    let FeatureLayer::Inception(a1) = &model.features()[0] else {
        panic!("first layer is not an inception block")
    };
    assert_eq!(a1.in_channels(), 2);
}

#[test]
fn zero_input_with_zero_bias_gives_zero_branch_outputs() {
    let spec = ModelSpec::reduced(4);
    let mut model = Model::<f64>::new(&spec, 3).unwrap();
    let FeatureLayer::Inception(block) = &mut model.features_mut()[0] else {
        panic!()
    };
    for (name, p) in block.params_mut() {
        if name.ends_with("conv.bias") {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let x = Tensor::<f64>::zeros([1, 2, 32, 360]);
    let outs = block.first_conv_outputs(&x);
    assert_eq!(outs.len(), 4);
    for o in outs {
        assert!(o.data().iter().all(|&v| v == 0.0));
    }
}

fn naive_gates(w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64], means: &[f64]) -> Vec<f64> {
    let c = means.len();
    let r = b1.len();
    let hidden: Vec<f64> = (0..r)
        .map(|j| (b1[j] + (0..c).map(|i| w1[j * c + i] * means[i]).sum::<f64>()).max(0.0))
        .collect();
    (0..c)
        .map(|i| {
            let z = b2[i] + (0..r).map(|j| w2[i * r + j] * hidden[j]).sum::<f64>();
            1.0 / (1.0 + (-z).exp())
        })
        .collect()
}

#[test]
fn squeeze_excitation_matches_naive_oracle() {
    let spec = ModelSpec::miniature();
    let model = Model::<f64>::new(&spec, 11).unwrap();
    let FeatureLayer::Se(se) = &model.features()[1] else {
        panic!()
    };
    assert_eq!(se.channels(), 16);
    let x = random_tensor([2, 16, 4, 6], 5);
    let gates = se.gates(&x);
    assert_eq!(gates.shape(), [2, 16, 1, 1]);
    let y = se.infer(&x);
    assert_eq!(y.shape(), x.shape());
    for n in 0..2 {
        let means: Vec<f64> = x
            .sample(n)
            .chunks(24)
            .map(|p| p.iter().sum::<f64>() / 24.0)
            .collect();
        let want = naive_gates(
            &se.squeeze.weight.value,
            &se.squeeze.bias.value,
            &se.excite.weight.value,
            &se.excite.bias.value,
            &means,
        );
        for (c, w) in want.iter().enumerate() {
            let g = gates.sample(n)[c];
            assert!((g - w).abs() < 1e-12);
            assert!(g > 0.0 && g < 1.0);
            for k in 0..24 {
                let i = c * 24 + k;
                assert!((y.sample(n)[i] - x.sample(n)[i] * w).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn saturated_gates_pass_input_through() {
    let spec = ModelSpec::miniature();
    let mut model = Model::<f64>::new(&spec, 2).unwrap();
    let FeatureLayer::Se(se) = &mut model.features_mut()[1] else {
        panic!()
    };
    se.excite.weight.value.iter_mut().for_each(|v| *v = 0.0);
    se.excite.bias.value.iter_mut().for_each(|v| *v = 60.0);
    let x = random_tensor([1, 16, 4, 6], 9);
    let y = se.infer(&x);
    for (a, b) in x.data().iter().zip(y.data()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn samples_in_a_batch_are_independent() {
    let spec = ModelSpec::reduced(4);
    let model = build_model(&spec, 1).unwrap();
    let pairs: Vec<PairedInput> = (0..3).map(|i| random_pair(&spec, 40 + i)).collect();
    let refs: Vec<&PairedInput> = pairs.iter().collect();
    let joint = model.infer(&batch_tensor(&refs).unwrap()).unwrap();
    for (i, p) in pairs.iter().enumerate() {
        let alone = model.infer(&batch_tensor(&[p]).unwrap()).unwrap();
        assert!(
            (alone[0] - joint[i]).abs() < 1e-5,
            "{} vs {}",
            alone[0],
            joint[i]
        );
    }
}

#[test]
fn channel_order_matters() {
    let spec = ModelSpec::reduced(4);
    let model = build_model(&spec, 1).unwrap();
    let p = random_pair(&spec, 3);
    let a = model.infer(&batch_tensor(&[&p]).unwrap()).unwrap()[0];
    let b = model
        .infer(&batch_tensor(&[&p.swapped()]).unwrap())
        .unwrap()[0];
    assert!((a - b).abs() > 1e-6);
}

#[test]
fn same_seed_same_weights_and_checkpoint_roundtrip() {
    let spec = ModelSpec::reduced(4);
    let a = build_model(&spec, 21).unwrap();
    let b = build_model(&spec, 21).unwrap();
    let c = build_model(&spec, 22).unwrap();
    let values = |m: &Model<f32>| {
        m.params()
            .into_iter()
            .flat_map(|(_, p)| p.value.clone())
            .collect::<Vec<f32>>()
    };
    assert_eq!(values(&a), values(&b));
    assert_ne!(values(&a), values(&c));

    // Perturb so the checkpoint holds something other than the initialisation.
    let mut trained = a.clone();
    for (_, p) in trained.params_mut() {
        p.value.iter_mut().for_each(|v| *v += 0.25);
    }
    let meta = TrainingMetadata {
        seed: 21,
        epochs: 1,
        fold: Some(0),
        learning_rate: 4e-5,
        batch_size: 32,
        smooth_l1_beta: 1.0,
        steps: 3,
    };
    let ckpt = Checkpoint::from_model(
        &trained,
        NormStats {
            mean: vec![-50.0; 32],
            std: vec![12.0; 32],
        },
        Default::default(),
        meta,
    );
    let mut buf = Vec::new();
    ckpt.write_to(&mut buf).unwrap();
    let back = Checkpoint::read_from(buf.as_slice()).unwrap();
    assert_eq!(back, ckpt);
    let restored = back.model().unwrap();
    assert_eq!(values(&restored), values(&trained));
    let p = random_pair(&spec, 8);
    let x = batch_tensor(&[&p]).unwrap();
    assert_eq!(
        restored.infer(&x).unwrap()[0].to_bits(),
        trained.infer(&x).unwrap()[0].to_bits()
    );
}

#[test]
fn unnormalized_input_and_wrong_shape_are_rejected() {
    let spec = ModelSpec::reduced(4);
    let model = build_model(&spec, 0).unwrap();
    let raw = PairedInput::from_raw(vec![-60.0; 2 * 32 * 360], 32, 360, false).unwrap();
    assert!(matches!(model.predict(&[&raw]), Err(Error::State(_))));
    let narrow = PairedInput::from_raw(vec![0.0; 2 * 32 * 358], 32, 358, true).unwrap();
    assert!(matches!(model.predict(&[&narrow]), Err(Error::Shape(_))));
}

#[test]
fn miniature_gradients_match_finite_differences() {
    let err = common::max_gradient_error(1e-5, 4);
    assert!(err < 1e-4, "max relative gradient error {err:e}");
}
