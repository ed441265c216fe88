//! CSV, JSON and SVG exports of a run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::bail;
use nalgebra::{DMatrix, SymmetricEigen};

use conceptgcn::graph::GraphDocument;
use conceptgcn::linalg::DenseMatrix;
use conceptgcn::stage2::predict;
use conceptgcn::train::{EpochRecord, MetricsLog};

use crate::run::{LoadedRun, CONCEPT, METRICS};

/// Projection of the rows of `h` onto its two leading principal axes.
///
/// Each axis is signed so that its largest-magnitude component is positive.
/// Missing axes (fewer than two columns) project to zero.
pub fn pca_2d(h: &DenseMatrix) -> Vec<[f64; 2]> {
    let (n, d) = h.shape();
    if n == 0 || d == 0 {
        return vec![[0.0; 2]; n];
    }
    let x = DMatrix::from_row_slice(n, d, h.data());
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
            if pivot < 0.0 {
                v.iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut p = [0.0; 2];
            for (k, axis) in axes.iter().enumerate() {
                p[k] = centered.row(i).iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            p
        })
        .collect()
}

/// `node_name,label,pc1,pc2,h0..`: stage-1 features with their 2-D projection.
pub fn write_embeddings(run: &LoadedRun, out: &Path) -> anyhow::Result<()> {
    let (stage1, _) = run.inference()?;
    let projected = pca_2d(&stage1.high);
    let mut w = csv::Writer::from_path(out)?;
    let mut header = vec!["node_name".to_string(), "label".into(), "pc1".into(), "pc2".into()];
    header.extend((0..stage1.high.cols()).map(|j| format!("h{j}")));
    w.write_record(&header)?;
    for i in 0..run.graph.num_nodes() {
        let mut record = vec![run.graph.node_names()[i].clone(), run.graph.labels()[i].to_string()];
        record.extend(projected[i].iter().map(|v| v.to_string()));
        record.extend(stage1.high.row(i).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// `node_name,label,p0..`: predicted label and final class probabilities.
pub fn write_predictions(run: &LoadedRun, out: &Path) -> anyhow::Result<()> {
    let (_, probs) = run.inference()?;
    let labels = predict(&probs)?;
    let mut w = csv::Writer::from_path(out)?;
    let mut header = vec!["node_name".to_string(), "label".into()];
    header.extend((0..probs.cols()).map(|c| format!("p{c}")));
    w.write_record(&header)?;
    for (i, label) in labels.iter().enumerate() {
        let mut record = vec![run.graph.node_names()[i].clone(), label.to_string()];
        record.extend(probs.row(i).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Copies the conceptual graph after checking it against the graph schema.
pub fn write_concept_graph(dir: &Path, out: &Path) -> anyhow::Result<()> {
    let doc = GraphDocument::read(&dir.join(CONCEPT))?;
    if doc.edge_weights.is_none() {
        bail!("{CONCEPT} has no edge_weights");
    }
    doc.write(out)?;
    Ok(())
}

/// Writes the metrics CSV to `out` and the chart next to it; returns the SVG path.
pub fn write_curves(dir: &Path, out: &Path) -> anyhow::Result<PathBuf> {
    let svg_path = out.with_extension("svg");
    if svg_path == out {
        bail!("curves output {} must not end in .svg", out.display());
    }
    let log = MetricsLog::read_csv(&dir.join(METRICS))?;
    log.write_csv(out)?;
    std::fs::write(&svg_path, curves_svg(&log))?;
    Ok(svg_path)
}

const WIDTH: f64 = 640.0;
const PANEL: f64 = 220.0;
const MARGIN: f64 = 40.0;

type Series = (&'static str, &'static str, fn(&EpochRecord) -> f64);

fn panel(svg: &mut String, log: &MetricsLog, top: f64, title: &str, series: &[Series]) {
    let records = log.records();
    let first = records.first().map_or(0, |r| r.epoch) as f64;
    let last = records.last().map_or(1, |r| r.epoch) as f64;
    let span_x = (last - first).max(1.0);
    let values = records.iter().flat_map(|r| series.iter().map(move |s| (s.2)(r)));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi.max(lo + 1e-12)) } else { (0.0, 1.0) };
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = PANEL - 2.0 * MARGIN;
    let x = |epoch: f64| MARGIN + plot_w * (epoch - first) / span_x;
    let y = |v: f64| top + MARGIN + plot_h * (1.0 - (v - lo) / (hi - lo));

    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{:.2}" width="{plot_w}" height="{plot_h}" fill="none" stroke="gray"/>"#,
        top + MARGIN
    );
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{:.2}" font-size="14">{title}</text>"#, top + MARGIN - 8.0);
    let _ = writeln!(
        svg,
        r#"<text x="4" y="{:.2}" font-size="10">{hi:.3}</text><text x="4" y="{:.2}" font-size="10">{lo:.3}</text>"#,
        top + MARGIN + 4.0,
        top + MARGIN + plot_h
    );
    for (k, (name, color, value)) in series.iter().enumerate() {
        let points: Vec<String> = records
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.epoch as f64), y(value(r))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN - 150.0 + 75.0 * k as f64,
            top + MARGIN - 8.0
        );
    }
}

/// Loss and accuracy against epoch, one panel each.
pub fn curves_svg(log: &MetricsLog) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{}" font-family="sans-serif">"#,
        2.0 * PANEL + 20.0
    );
    panel(
        &mut svg,
        log,
        0.0,
        "loss",
        &[("train", "#1f77b4", |r| r.train_loss), ("val", "#d62728", |r| r.val_loss)],
    );
    panel(
        &mut svg,
        log,
        PANEL,
        "accuracy",
        &[("train", "#1f77b4", |r| r.train_acc), ("val", "#d62728", |r| r.val_acc)],
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="11">epoch</text>"#,
        WIDTH / 2.0,
        2.0 * PANEL + 10.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_finds_the_dominant_direction() {
        // points spread along (1, 1), with a small orthogonal wobble that is
        // mirror-symmetric in t and so uncorrelated with it
        let mut data = Vec::new();
        for i in 0..20 {
            let t = i as f64 - 9.5;
            let wobble = if i.min(19 - i) % 2 == 0 { 0.1 } else { -0.1 };
            data.extend([t + wobble, t - wobble]);
        }
        let h = DenseMatrix::new(20, 2, data).unwrap();
        let p = pca_2d(&h);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for (i, row) in p.iter().enumerate() {
            let t = i as f64 - 9.5;
            assert!((row[0].abs() - 2.0 * t.abs() * s).abs() < 1e-9, "{row:?}");
            assert!((row[1].abs() - 0.2 * s).abs() < 1e-9, "{row:?}");
        }
        let mean: f64 = p.iter().map(|r| r[0]).sum::<f64>() / 20.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn pca_of_one_column_pads_with_zero() {
        let h = DenseMatrix::new(3, 1, vec![1.0, 2.0, 6.0]).unwrap();
        let p = pca_2d(&h);
        assert_eq!(p.iter().map(|r| r[1]).collect::<Vec<_>>(), vec![0.0; 3]);
        assert!((p[0][0] + 2.0).abs() < 1e-12 && (p[2][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let mut log = MetricsLog::new();
        for epoch in 1..=5 {
            log.push(EpochRecord {
                epoch,
                train_loss: 1.0 / epoch as f64,
                val_loss: 1.2 / epoch as f64,
                train_acc: 0.1 * epoch as f64,
                val_acc: 0.09 * epoch as f64,
                lr: 0.1,
                wall_ms: 1.0,
            })
            .unwrap();
        }
        let svg = curves_svg(&log);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert_eq!(curves_svg(&log), svg);
    }
}
