use std::path::Path;

use anyhow::{bail, Context, Result};

use normlab::data::{load_csv, read_log};
use normlab::metrics::{angle_report, AngleReport, LabeledFeatures};
use normlab::model::EpochRecord;

use crate::run::{LOG_CSV, LOG_JSONL};

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.prec$}"))
}

/// Left-aligned first column, right-aligned numbers.
fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect::<Vec<_>>()
            .join("  ")
    };
    println!("{}", line(header.to_vec()));
    for r in rows {
        println!("{}", line(r.iter().map(String::as_str).collect()));
    }
}

pub fn angles(features: &Path, labels_column: &str, test: Option<&Path>) -> Result<()> {
    let train = load_csv(features, labels_column)?;
    let test = test.map(|p| load_csv(p, labels_column)).transpose()?;
    let classes = train.num_classes().max(test.as_ref().map_or(0, |t| t.num_classes()));
    let train_lf = LabeledFeatures::new(train.x, train.y, classes)?;
    let test_lf = test.map(|t| LabeledFeatures::new(t.x, t.y, classes)).transpose()?;
    let report = angle_report(&train_lf, test_lf.as_ref())?;

    println!("{}", serde_json::to_string(&report)?);
    let AngleReport {
        intra_train,
        intra_test,
        inter,
        iir_train,
        iir_test,
    } = report;
    print_table(
        &["metric", "value"],
        &[
            vec!["intra_train_deg".into(), format!("{intra_train:.4}")],
            vec!["intra_test_deg".into(), fmt_opt(intra_test, 4)],
            vec!["inter_deg".into(), format!("{inter:.4}")],
            vec!["iir_train".into(), format!("{iir_train:.4}")],
            vec!["iir_test".into(), fmt_opt(iir_test, 4)],
        ],
    );
    Ok(())
}

fn load_run(dir: &Path) -> Result<Vec<EpochRecord>> {
    let path = [LOG_CSV, LOG_JSONL]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .with_context(|| format!("no {LOG_CSV} or {LOG_JSONL} in {}", dir.display()))?;
    let records = read_log(&path)?;
    if records.is_empty() {
        bail!("{} has no epochs", path.display());
    }
    Ok(records)
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

fn signed(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".to_string(), |x| format!("{x:+.prec$}"))
}

/// Accuracy used for the summary: test when both runs have it, else train.
fn accuracy_delta(a: &EpochRecord, b: &EpochRecord) -> (Option<f64>, &'static str) {
    match delta(a.test_acc, b.test_acc) {
        Some(d) => (Some(d), "test"),
        None => (Some(b.train_acc - a.train_acc), "train"),
    }
}

pub fn compare(run_a: &Path, run_b: &Path) -> Result<()> {
    let a = load_run(run_a)?;
    let b = load_run(run_b)?;
    println!("deltas are run b minus run a ({} vs {})", run_b.display(), run_a.display());
    let rows: Vec<Vec<String>> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            vec![
                x.epoch.to_string(),
                signed(Some(y.train_loss - x.train_loss), 4),
                signed(Some(y.train_acc - x.train_acc), 4),
                signed(delta(x.test_acc, y.test_acc), 4),
                signed(Some(y.angles.intra_train - x.angles.intra_train), 3),
                signed(Some(y.angles.inter - x.angles.inter), 3),
                signed(Some(y.angles.iir_train - x.angles.iir_train), 4),
                signed(delta(x.angles.iir_test, y.angles.iir_test), 4),
            ]
        })
        .collect();
    print_table(
        &["epoch", "d_loss", "d_train_acc", "d_test_acc", "d_intra_deg", "d_inter_deg", "d_iir_train", "d_iir_test"],
        &rows,
    );
    if a.len() != b.len() {
        println!("note: run a has {} epochs, run b has {}; compared the first {}", a.len(), b.len(), rows.len());
    }

    let (fa, fb) = (a.last().unwrap(), b.last().unwrap());
    let (d_acc, which) = accuracy_delta(fa, fb);
    println!(
        "final: d_accuracy({which})={} d_intra={} d_inter={} d_iir={}",
        signed(d_acc, 4),
        signed(Some(fb.angles.intra_train - fa.angles.intra_train), 3),
        signed(Some(fb.angles.inter - fa.angles.inter), 3),
        signed(Some(fb.angles.iir_train - fa.angles.iir_train), 4),
    );
    Ok(())
}
