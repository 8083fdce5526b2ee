use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use normlab::data::{
    save_checkpoint, synth_idx_images, write_idx_images, write_idx_labels, write_log, DataSource, LogFormat,
    SynthImageSpec,
};
use normlab::geomsim::{export_trajectory, iterate, random_start, CenterConfig, SimNorm};
use normlab::gradcheck::{check_norm_layer, shape_for_kind, DEFAULT_STEP};
use normlab::model::TrainConfig;
use normlab::{NormKind, NormSpec, Rng};

use crate::LogFormatArg;

pub const MANIFEST: &str = "manifest.json";
pub const LOG_CSV: &str = "log.csv";
pub const LOG_JSONL: &str = "log.jsonl";
pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAJECTORY: &str = "trajectory.csv";

/// Written beside every run's outputs; enough to repeat the run.
#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    seed: u64,
    normlab_version: &'a str,
    cli_version: &'a str,
    parallel_kernels: bool,
    config: C,
    outputs: Vec<&'a str>,
}

fn write_manifest<C: Serialize>(dir: &Path, command: &str, seed: u64, config: C, outputs: Vec<&str>) -> Result<()> {
    let m = RunManifest {
        command,
        seed,
        normlab_version: normlab::VERSION,
        cli_version: env!("CARGO_PKG_VERSION"),
        parallel_kernels: normlab::par::PARALLEL,
        config,
        outputs,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Serialize)]
struct SimConfig<'a> {
    norm: &'a str,
    classes: usize,
    dim: usize,
    iters: usize,
    eps_var: f64,
}

pub fn sim(norm: &str, classes: usize, dim: usize, iters: usize, seed: u64, eps_var: f64, out: &Path) -> Result<()> {
    let kind: SimNorm = norm.parse()?;
    if classes < 2 || dim < 1 || iters < 1 {
        bail!("need --classes >= 2, --dim >= 1 and --iters >= 1");
    }
    let start = random_start(&mut Rng::new(seed), classes, dim)?;
    let mut cfg = CenterConfig::new(start.clone(), kind);
    cfg.max_iters = iters;
    cfg.stop_on_convergence = false;
    cfg.eps_var = eps_var;
    cfg.record_centers = true;
    let t = iterate(&cfg)?;

    create_dir(out)?;
    export_trajectory(&t, Some(&start), &out.join(TRAJECTORY))?;
    write_manifest(
        out,
        "sim",
        seed,
        SimConfig {
            norm,
            classes,
            dim,
            iters,
            eps_var,
        },
        vec![TRAJECTORY],
    )?;
    println!(
        "final_min_angle_deg={} converged_at={}",
        t.final_min_angle(),
        t.converged_at.map_or("none".to_string(), |k| k.to_string())
    );
    Ok(())
}

pub fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = s
        .split([',', 'x', 'X'])
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad shape {s:?}; expected e.g. 6,4 or 4x3x2x2"))?;
    if !(dims.len() == 2 || dims.len() == 4) || dims.contains(&0) {
        bail!("shape {s:?} must have 2 or 4 positive dimensions");
    }
    Ok(dims)
}

/// Returns whether every gradient is within `tol`.
pub fn gradcheck(layer: &str, shape: &str, seed: u64, tol: f64) -> Result<bool> {
    let kind: NormKind = layer.parse()?;
    let shape = parse_shape(shape)?;
    let report = check_norm_layer(NormSpec::new(kind), &shape, seed, DEFAULT_STEP)?;
    let used = shape_for_kind(kind, &shape);
    println!("layer={kind} shape={used:?} seed={seed} step={DEFAULT_STEP:e}");
    for e in &report.entries {
        println!("{:<10} max_rel_err={:.3e}", e.name, e.rel_error);
    }
    let ok = report.passes(tol);
    println!("{} (tol {tol:e})", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn absolute(p: &Path, base: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Makes data paths absolute so the manifest does not depend on the config location.
fn resolve_paths(source: &mut DataSource, base: &Path) {
    match source {
        DataSource::Blobs(_) => {}
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            for p in [train_images, train_labels].into_iter().chain(test_images.iter_mut()).chain(test_labels.iter_mut()) {
                *p = absolute(p, base);
            }
        }
        DataSource::Csv { train, test, .. } => {
            *train = absolute(train, base);
            if let Some(t) = test {
                *t = absolute(t, base);
            }
        }
    }
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: TrainConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = fs::canonicalize(&base).unwrap_or(base);
    resolve_paths(&mut cfg.data, &base);
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(config: &Path, out: &Path, format: LogFormatArg) -> Result<()> {
    let cfg = load_config(config)?;
    let data = cfg.data.load(Path::new(""))?;
    let outcome = normlab::model::train(&cfg, &data)?;
    for r in &outcome.records {
        println!(
            "epoch {:>3}  loss {:.4}  train_acc {:.4}  test_acc {}  iir_train {:.4}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.test_acc.map_or("-".to_string(), |a| format!("{a:.4}")),
            r.angles.iir_train
        );
    }

    create_dir(out)?;
    let (log_name, fmt) = match format {
        LogFormatArg::Csv => (LOG_CSV, LogFormat::Csv),
        LogFormatArg::Jsonl => (LOG_JSONL, LogFormat::Jsonl),
    };
    write_log(&outcome.records, &out.join(log_name), fmt)?;
    save_checkpoint(&outcome.stack, &out.join(CHECKPOINT))?;
    write_manifest(out, "train", cfg.seed, &cfg, vec![log_name, CHECKPOINT])?;
    Ok(())
}

pub fn synth_idx(out: &Path, seed: u64, per_class: usize, test_per_class: usize) -> Result<()> {
    let spec = SynthImageSpec {
        seed,
        per_class,
        ..SynthImageSpec::default()
    };
    let sets = [
        ("train-images.idx3-ubyte", "train-labels.idx1-ubyte", per_class, 0),
        ("test-images.idx3-ubyte", "test-labels.idx1-ubyte", test_per_class, 1),
    ];
    create_dir(out)?;
    let mut outputs = Vec::new();
    for (img, lab, count, stream) in sets {
        if count == 0 {
            continue;
        }
        let s = SynthImageSpec {
            per_class: count,
            ..spec.clone()
        };
        let (images, labels) = synth_idx_images(&s, stream)?;
        write_idx_images(&out.join(img), &images)?;
        write_idx_labels(&out.join(lab), &labels)?;
        outputs.extend([img, lab]);
    }
    #[derive(Serialize)]
    struct SynthConfig<'a> {
        images: &'a SynthImageSpec,
        test_per_class: usize,
    }
    write_manifest(
        out,
        "synth-idx",
        seed,
        SynthConfig {
            images: &spec,
            test_per_class,
        },
        outputs,
    )
}
