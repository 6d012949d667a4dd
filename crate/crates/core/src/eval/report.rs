use std::fmt::Write;

use super::{EvalReport, Roc};

/// Row labels of the comparison table, in order.
pub const METRIC_ROWS: [&str; 8] =
    ["AUC", "Precision", "Recall", "MCC", "f-measure", "TNR", "FPR", "FNR"];

/// One row per metric, one `mean` and `stdev` column pair per report.
pub fn comparison_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric");
    for r in reports {
        write!(out, ",{0}_mean,{0}_stdev", r.model).unwrap();
    }
    out.push('\n');
    for (row, name) in METRIC_ROWS.iter().enumerate() {
        out.push_str(name);
        for r in reports {
            write!(out, ",{:.4},{:.4}", r.mean.values()[row], r.stdev.values()[row]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn comparison_markdown(reports: &[EvalReport]) -> String {
    let mut out = String::from("| Accuracy Metric |");
    for r in reports {
        write!(out, " {} |", r.model).unwrap();
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(reports.len()));
    out.push('\n');
    for (row, name) in METRIC_ROWS.iter().enumerate() {
        write!(out, "| {name} |").unwrap();
        for r in reports {
            let (m, s) = (r.mean.values()[row], r.stdev.values()[row]);
            if r.folds.len() > 1 {
                write!(out, " {m:.2} ± {s:.2} |").unwrap();
            } else {
                write!(out, " {m:.2} |").unwrap();
            }
        }
        out.push('\n');
    }
    if let Some(r) = reports.first() {
        write!(out, "\nProtocol: {}; features: {}; seed {}.\n", r.protocol, r.feature_set, r.seed)
            .unwrap();
    }
    out
}

pub fn roc_csv(roc: &Roc) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for (i, (fpr, tpr)) in roc.points.iter().enumerate() {
        match i.checked_sub(1).and_then(|j| roc.thresholds.get(j)) {
            Some(t) => writeln!(out, "{fpr},{tpr},{t}").unwrap(),
            None => writeln!(out, "{fpr},{tpr},").unwrap(),
        }
    }
    out
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A plain SVG plot of one or more labelled ROC curves.
pub fn roc_svg(curves: &[(String, Roc, f64)]) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let px = |x: f64| PAD + x * SIZE;
    let py = |y: f64| PAD + (1.0 - y) * SIZE;
    let full = SIZE + 2.0 * PAD;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{}" font-family="sans-serif" font-size="12">"#,
        full + 20.0 * curves.len() as f64
    )
    .unwrap();
    writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    )
    .unwrap();
    writeln!(out, r#"<text x="{}" y="{}">False positive rate</text>"#, px(0.4), full - 10.0).unwrap();
    writeln!(
        out,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})">True positive rate</text>"#,
        py(0.4),
        py(0.4)
    )
    .unwrap();
    for (i, (name, roc, auc)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = roc
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{PAD}" y="{}" fill="{color}">{name} (AUC {:.2})</text>"#,
            full + 20.0 * i as f64 + 5.0,
            100.0 * auc
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn csv_layout() {
        let fold = evaluate_scores(&[0.9, 0.2, 0.7, 0.4], &[true, false, false, true], 0).unwrap();
        let r = EvalReport::from_folds("RF".into(), "rules".into(), "hold-out".into(), 1, String::new(), vec![fold]);
        let csv = comparison_csv(&[r.clone()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "metric,RF_mean,RF_stdev");
        assert_eq!(lines.len(), 9);
        assert!(lines[1].starts_with("AUC,75.0000"));
        let md = comparison_markdown(&[r]);
        assert!(md.contains("| AUC | 75.00 |"));
    }

    #[test]
    fn roc_outputs() {
        let (roc, auc) = roc_auc(&[0.9, 0.2], &[true, false]).unwrap();
        let csv = roc_csv(&roc);
        assert_eq!(csv, "fpr,tpr,threshold\n0,0,\n0,1,0.9\n1,1,0.2\n");
        let svg = roc_svg(&[("RF".into(), roc, auc)]);
        assert!(svg.starts_with("<svg") && svg.contains("RF (AUC 100.00)"));
    }
}
