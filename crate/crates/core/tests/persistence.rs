use std::fs;

use normlab::data::{
    load_checkpoint, load_checkpoint_into, load_idx, read_idx_images, read_idx_labels, save_checkpoint,
    CHECKPOINT_MAGIC,
};
use normlab::model::{Arch, Stack, StackDescriptor};
use normlab::{Mode, NormKind, NormSpec, Rng, Tensor};

/// Four 2x3 images; pixel (r, c) of image k is 40k + 10r + c, with image 3
/// saturating at 255 in its last pixel.
fn fixture() -> (Vec<u8>, Vec<u8>) {
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 3];
    for k in 0..4u32 {
        for r in 0..2u32 {
            for c in 0..3u32 {
                let v = if (k, r, c) == (3, 1, 2) { 255 } else { 40 * k + 10 * r + c };
                images.push(v as u8);
            }
        }
    }
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 4, 7, 2, 0, 9];
    (images, labels)
}

/// Decodes the fixture directly from the bytes, independent of the loader.
fn reference_decode(images: &[u8], labels: &[u8]) -> (Vec<usize>, Vec<f64>, Vec<usize>) {
    let be = |b: &[u8]| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize;
    let (n, rows, cols) = (be(&images[4..8]), be(&images[8..12]), be(&images[12..16]));
    let pixels = images[16..16 + n * rows * cols].iter().map(|&p| p as f64 / 255.0).collect();
    let ys = labels[8..8 + be(&labels[4..8])].iter().map(|&l| l as usize).collect();
    (vec![n, 1, rows, cols], pixels, ys)
}

#[test]
fn idx_fixture_matches_byte_level_decode() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = fixture();
    let (pi, pl) = (dir.path().join("i.idx3"), dir.path().join("l.idx1"));
    fs::write(&pi, &img).unwrap();
    fs::write(&pl, &lab).unwrap();

    let split = load_idx(&pi, &pl).unwrap();
    let (shape, pixels, labels) = reference_decode(&img, &lab);
    assert_eq!(split.x.shape(), &shape[..]);
    assert_eq!(split.x.data(), &pixels[..]);
    assert_eq!(split.y, labels);
    assert_eq!(split.y, vec![7, 2, 0, 9]);
    assert_eq!(split.x.data()[23], 1.0);

    let raw = read_idx_images(&pi).unwrap();
    assert_eq!((raw.count, raw.rows, raw.cols), (4, 2, 3));
    assert_eq!(read_idx_labels(&pl).unwrap(), vec![7, 2, 0, 9]);
}

#[test]
fn idx_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let (mut img, lab) = fixture();
    let pl = dir.path().join("l.idx1");
    fs::write(&pl, &lab).unwrap();

    let swapped = dir.path().join("swapped.idx3");
    fs::write(&swapped, &lab).unwrap();
    let e = read_idx_images(&swapped).unwrap_err().to_string();
    assert!(e.contains("magic"), "{e}");

    img.truncate(30);
    let short = dir.path().join("short.idx3");
    fs::write(&short, &img).unwrap();
    let e = load_idx(&short, &pl).unwrap_err().to_string();
    assert!(e.contains("byte offset"), "{e}");

    let (img, _) = fixture();
    let pi = dir.path().join("i.idx3");
    fs::write(&pi, &img).unwrap();
    let mut three = lab.clone();
    three[7] = 3;
    three.pop();
    fs::write(&pl, &three).unwrap();
    assert!(load_idx(&pi, &pl).is_err());
}

fn trained_stack() -> (Stack, Tensor) {
    let desc = StackDescriptor {
        arch: Arch::Cnn {
            in_channels: 1,
            channels: [3, 4],
            num_classes: 3,
        },
        norms: vec![NormSpec::new(NormKind::Gn { channels_per_group: 1 }), NormSpec::new(NormKind::L2Bn)],
    };
    let mut rng = Rng::new(8);
    let mut stack = Stack::build(desc, &mut rng).unwrap();
    let x = Tensor::randn(&mut rng, &[5, 1, 6, 6], 0.0, 1.0).unwrap();
    for _ in 0..3 {
        stack.forward(&x, Mode::Train).unwrap();
    }
    for p in stack.params_mut() {
        let n = Tensor::randn(&mut rng, p.value.shape(), 0.0, 0.1).unwrap();
        p.value.axpy(1.0, &n).unwrap();
    }
    (stack, x)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let (mut stack, x) = trained_stack();
    save_checkpoint(&stack, &path).unwrap();
    assert_eq!(&fs::read(&path).unwrap()[..8], CHECKPOINT_MAGIC);

    let mut loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.descriptor(), stack.descriptor());
    let bits = |s: &Stack| -> Vec<u64> {
        let mut v: Vec<u64> = s.params().iter().flat_map(|p| p.value.data().iter().map(|x| x.to_bits())).collect();
        for n in s.norm_layers() {
            for t in [&n.state.running_mean, &n.state.running_var].into_iter().flatten() {
                v.extend(t.data().iter().map(|x| x.to_bits()));
            }
            v.push(n.state.batches_tracked);
        }
        v
    };
    assert_eq!(bits(&stack), bits(&loaded));
    let (a, fa) = stack.forward(&x, Mode::Eval).unwrap();
    let (b, fb) = loaded.forward(&x, Mode::Eval).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(fa.data(), fb.data());

    let mut fresh = Stack::build(stack.descriptor().clone(), &mut Rng::new(99)).unwrap();
    load_checkpoint_into(&path, &mut fresh).unwrap();
    assert_eq!(bits(&fresh), bits(&stack));
}

#[test]
fn checkpoint_rejects_mismatch_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let (stack, _) = trained_stack();
    save_checkpoint(&stack, &path).unwrap();

    let mut other_desc = stack.descriptor().clone();
    other_desc.norms[1] = NormSpec::new(NormKind::Bn);
    let mut other = Stack::build(other_desc, &mut Rng::new(0)).unwrap();
    let e = load_checkpoint_into(&path, &mut other).unwrap_err().to_string();
    assert!(e.contains("descriptor"), "{e}");

    let bytes = fs::read(&path).unwrap();
    let mut versioned = bytes.clone();
    versioned[8] = 9;
    fs::write(&path, &versioned).unwrap();
    let e = load_checkpoint(&path).unwrap_err().to_string();
    assert!(e.contains("version 9"), "{e}");

    let mut magic = bytes.clone();
    magic[0] = b'X';
    fs::write(&path, &magic).unwrap();
    assert!(load_checkpoint(&path).is_err());

    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    let e = load_checkpoint(&path).unwrap_err().to_string();
    assert!(e.contains("truncated"), "{e}");
}
