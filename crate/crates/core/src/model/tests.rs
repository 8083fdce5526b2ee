use super::*;
use crate::gradcheck::{check_stack, jitter_params, numeric_grad, rel_error, DEFAULT_STEP};
use crate::norm::l2_forward;

fn mlp(hidden: Vec<usize>, kinds: &[NormKind]) -> StackDescriptor {
    StackDescriptor {
        arch: Arch::Mlp {
            input_dim: 4,
            hidden,
            num_classes: 3,
        },
        norms: kinds.iter().map(|&k| NormSpec::new(k)).collect(),
    }
}

fn cnn(kind: NormKind) -> StackDescriptor {
    StackDescriptor {
        arch: Arch::Cnn {
            in_channels: 1,
            channels: [2, 4],
            num_classes: 3,
        },
        norms: vec![NormSpec::new(kind); 2],
    }
}

#[test]
fn equal_logits_give_ln_c() {
    let (loss, _) = cross_entropy(&Tensor::full(&[2, 5], 0.7).unwrap(), &[0, 4]).unwrap();
    assert!((loss - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn large_correct_margin_drives_loss_to_zero() {
    let mut last = f64::INFINITY;
    for margin in [1.0, 10.0, 100.0, 1000.0] {
        let logits = Tensor::new(vec![1, 3], vec![margin, 0.0, 0.0]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        assert!(loss <= last && loss >= 0.0);
        assert!(grad.data().iter().all(|g| g.is_finite()));
        last = loss;
    }
    assert_eq!(last, 0.0);
}

#[test]
fn cross_entropy_gradient_matches_differences() {
    let mut rng = Rng::new(3);
    let logits = Tensor::randn(&mut rng, &[4, 3], 0.0, 2.0).unwrap();
    let labels = [2, 0, 1, 1];
    let (_, grad) = cross_entropy(&logits, &labels).unwrap();
    let num = numeric_grad(
        |v| Ok(cross_entropy(&Tensor::new(vec![4, 3], v.to_vec())?, &labels)?.0),
        logits.data(),
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(rel_error(grad.data(), &num) < 1e-6);
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    assert!(cross_entropy(&Tensor::zeros(&[2, 3]).unwrap(), &[0, 3]).is_err());
    assert!(cross_entropy(&Tensor::zeros(&[2, 3]).unwrap(), &[0]).is_err());
}

fn param(vals: &[f64], grads: &[f64]) -> Param {
    let mut p = Param::new(Tensor::new(vec![vals.len()], vals.to_vec()).unwrap()).unwrap();
    p.grad.data_mut().copy_from_slice(grads);
    p
}

#[test]
fn plain_sgd_step() {
    let mut p = param(&[1.0, -2.0], &[0.5, 1.0]);
    sgd_step(&mut [&mut p], 0.1, 0.0, 0.0).unwrap();
    assert_eq!(p.value.data(), &[1.0 - 0.05, -2.0 - 0.1]);
}

#[test]
fn zero_gradient_leaves_params() {
    let mut p = param(&[1.0, -2.0], &[0.0, 0.0]);
    sgd_step(&mut [&mut p], 0.1, 0.9, 0.0).unwrap();
    assert_eq!(p.value.data(), &[1.0, -2.0]);
}

#[test]
fn momentum_unrolls_to_one_plus_1_9() {
    let (lr, g) = (0.1, 0.5);
    let mut p = param(&[0.0], &[g]);
    sgd_step(&mut [&mut p], lr, 0.9, 0.0).unwrap();
    sgd_step(&mut [&mut p], lr, 0.9, 0.0).unwrap();
    assert!((p.value.data()[0] + lr * g * (1.0 + 1.9)).abs() < 1e-15);
}

#[test]
fn forward_shapes_and_features() {
    let mut rng = Rng::new(0);
    let mut s = Stack::build(mlp(vec![5, 6], &[NormKind::Bn, NormKind::L2Bn]), &mut rng).unwrap();
    let x = Tensor::randn(&mut rng, &[7, 4], 0.0, 1.0).unwrap();
    let (logits, feats) = s.forward(&x, Mode::Train).unwrap();
    assert_eq!(logits.shape(), &[7, 3]);
    assert_eq!(feats.shape(), &[7, 6]);

    let mut c = Stack::build(cnn(NormKind::Bn), &mut rng).unwrap();
    let img = Tensor::randn(&mut rng, &[3, 1, 5, 5], 0.0, 1.0).unwrap();
    let (logits, feats) = c.forward(&img, Mode::Train).unwrap();
    assert_eq!(logits.shape(), &[3, 3]);
    assert_eq!(feats.shape(), &[3, 4]);
}

#[test]
fn shape_error_names_the_layer() {
    let mut s = Stack::build(mlp(vec![5], &[NormKind::Bn]), &mut Rng::new(0)).unwrap();
    let err = s.forward(&Tensor::zeros(&[2, 6]).unwrap(), Mode::Train).unwrap_err();
    match &err {
        Error::Layer { index, .. } => assert_eq!(*index, 1),
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().starts_with("layer 1"), "{err}");
}

#[test]
fn swapping_bn_for_l2bn_keeps_parameter_shapes() {
    for base in [mlp(vec![5, 6], &[NormKind::Bn; 2]), cnn(NormKind::Bn)] {
        let bn = Stack::build(base.clone(), &mut Rng::new(1)).unwrap();
        let mut swapped = bn.clone();
        swapped.apply_placement(Placement::All, NormKind::Bn, NormKind::L2Bn).unwrap();
        assert!(swapped.descriptor().norms.iter().all(|s| s.kind == NormKind::L2Bn));
        let shapes = |s: &Stack| s.params().iter().map(|p| p.value.shape().to_vec()).collect::<Vec<_>>();
        assert_eq!(shapes(&bn), shapes(&swapped));
        assert_eq!(bn.param_count(), swapped.param_count());
    }
}

#[test]
fn placement_policies_on_three_positions() {
    use NormKind::{Bn, L2Bn};
    let k = |p: Placement| p.kinds(3, Bn, L2Bn);
    assert_eq!(k(Placement::None), vec![Bn, Bn, Bn]);
    assert_eq!(k(Placement::ClassifierOnly), vec![Bn, Bn, L2Bn]);
    assert_eq!(k(Placement::EarlyStages), vec![L2Bn, Bn, Bn]);
    assert_eq!(k(Placement::LateStages), vec![Bn, L2Bn, L2Bn]);
    assert_eq!(k(Placement::All), vec![L2Bn; 3]);
    for p in Placement::ALL {
        assert_eq!(p.to_string().parse::<Placement>().unwrap(), p);
    }
}

#[test]
fn inputs_to_l2bn_batch_stage_have_equal_norms() {
    let mut rng = Rng::new(5);
    let mut s = Stack::build(mlp(vec![6, 6], &[NormKind::L2Bn; 2]), &mut rng).unwrap();
    let mut x = Tensor::randn(&mut rng, &[8, 4], 0.0, 3.0).unwrap();
    for layer in s.layers_mut() {
        if let Layer::Norm(n) = layer {
            let (y, _) = l2_forward(&x, &n.spec).unwrap();
            let norms: Vec<f64> = y.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            assert!(norms.iter().all(|n| (n - norms[0]).abs() <= 1e-10));
        }
        x = layer.forward(&x, Mode::Train).unwrap();
    }
}

#[test]
fn whole_stack_gradients_for_every_kind() {
    let labels = [0, 1, 2, 0, 1, 2];
    for kind in NormKind::ALL {
        let desc = if kind.needs_rank4() {
            cnn(kind)
        } else {
            mlp(vec![5, 4], &[kind, NormKind::Bn])
        };
        let mut rng = Rng::new(11);
        let mut stack = Stack::build(desc, &mut rng).unwrap();
        jitter_params(&mut stack, &mut rng, 0.1).unwrap();
        let x = if kind.needs_rank4() {
            Tensor::randn(&mut rng, &[6, 1, 4, 4], 0.2, 1.0).unwrap()
        } else {
            Tensor::randn(&mut rng, &[6, 4], 0.2, 1.0).unwrap()
        };
        let report = check_stack(&stack, &x, &labels, DEFAULT_STEP).unwrap();
        assert!(report.passes(1e-4), "{kind}: {:?}", report.entries);
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        model: ModelConfig::Mlp { hidden: vec![8] },
        norm: NormSpec::new(NormKind::L2Bn),
        data: crate::data::DataSource::Blobs(crate::data::BlobSpec {
            num_classes: 3,
            dim: 4,
            samples_per_class: 20,
            test_per_class: 5,
            ..Default::default()
        }),
        ..TrainConfig::default()
    };
    let data = cfg.data.load(std::path::Path::new(".")).unwrap();
    let a = train(&cfg, &data).unwrap();
    let b = train(&cfg, &data).unwrap();
    assert_eq!(a.records.len(), 2);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!(x.same_metrics(y));
        assert!((0.0..=1.0).contains(&x.train_acc));
    }
    assert_eq!(a.stack.params(), b.stack.params());
}

#[test]
fn divergence_is_reported_with_context() {
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        learning_rate: 1e300,
        model: ModelConfig::Mlp { hidden: vec![8] },
        data: crate::data::DataSource::Blobs(crate::data::BlobSpec {
            num_classes: 3,
            dim: 4,
            samples_per_class: 20,
            test_per_class: 0,
            ..Default::default()
        }),
        ..TrainConfig::default()
    };
    let data = cfg.data.load(std::path::Path::new(".")).unwrap();
    match train(&cfg, &data) {
        Err(Error::Diverged { epoch, step, .. }) => assert!(epoch == 1 && step >= 2),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("expected divergence"),
    }
}

#[test]
fn config_rejects_unit_batches() {
    let cfg = TrainConfig {
        batch_size: 1,
        ..TrainConfig::default()
    };
    assert!(cfg.validate().is_err());
}
