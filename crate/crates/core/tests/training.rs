use normlab::data::{make_blobs, BlobSpec};
use normlab::model::{train, ModelConfig, TrainConfig};
use normlab::{NormKind, NormSpec};

fn run(kind: NormKind, data: &normlab::data::Dataset) -> f64 {
    let cfg = TrainConfig {
        seed: 7,
        epochs: 15,
        batch_size: 32,
        model: ModelConfig::Mlp { hidden: vec![32, 32] },
        norm: NormSpec::new(kind),
        ..TrainConfig::default()
    };
    train(&cfg, data).unwrap().records.last().unwrap().angles.iir_train
}

#[test]
fn l2bn_gives_lower_iir_on_small_blobs() {
    let data = make_blobs(&BlobSpec {
        num_classes: 3,
        dim: 2,
        norm_spread: 10.0,
        seed: 7,
        ..BlobSpec::default()
    })
    .unwrap();
    let (bn, l2bn) = (run(NormKind::Bn, &data), run(NormKind::L2Bn, &data));
    assert!(bn > l2bn, "bn {bn} l2bn {l2bn}");
}

#[test]
fn every_kind_trains_on_images() {
    use normlab::data::{synth_idx_images, Dataset, Provenance, Split};
    let spec = normlab::data::SynthImageSpec {
        per_class: 6,
        height: 6,
        width: 6,
        num_classes: 3,
        ..Default::default()
    };
    let (img, labels) = synth_idx_images(&spec, 0).unwrap();
    let x = normlab::Tensor::new(
        vec![img.count, 1, img.rows, img.cols],
        img.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .unwrap();
    let data = Dataset::new(
        Split::new(x, labels.iter().map(|&l| l as usize).collect()).unwrap(),
        None,
        3,
        Provenance::IdxFiles,
    )
    .unwrap();
    for kind in NormKind::ALL {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 6,
            model: ModelConfig::Cnn { channels: [4, 4] },
            norm: NormSpec::new(kind),
            ..TrainConfig::default()
        };
        let out = train(&cfg, &data).unwrap_or_else(|e| panic!("{kind}: {e}"));
        assert_eq!(out.records.len(), 2);
        assert!(out.records.iter().all(|r| r.train_loss.is_finite()), "{kind}");
    }
}
