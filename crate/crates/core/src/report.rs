//! Comparison tables (Markdown) and bar charts (SVG).

use std::fmt::Write as _;

use crate::experiment::{AugmentMode, EvalRecord};

fn pct_increase(value: f64, base: f64) -> Option<f64> {
    (base > 0.0).then(|| 100.0 * (value - base) / base)
}

/// Accuracy comparison across modes with a relative-increase column
/// against the `none` row. Without a `none` row, or with a single row,
/// the column is omitted.
pub fn accuracy_table(records: &[EvalRecord]) -> String {
    let base = records.iter().find(|r| r.mode == AugmentMode::None).map(|r| r.metrics.accuracy);
    let delta = base.filter(|_| records.len() > 1);
    let mut out = String::from("| Method | Accuracy | UAR | Macro F1 |");
    out.push_str(if delta.is_some() { " (%)INC. |\n|---|---|---|---|---|\n" } else { "\n|---|---|---|---|\n" });
    for r in records {
        let m = &r.metrics;
        let _ = write!(out, "| {} | {:.4} | {:.4} | {:.4} |", r.mode.label(), m.accuracy, m.uar, m.macro_f1);
        if let Some(b) = delta {
            match pct_increase(m.accuracy, b) {
                Some(p) if r.mode != AugmentMode::None => {
                    let _ = write!(out, " {p:+.2} |");
                }
                _ => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Precision, recall and F1 of one class across modes.
pub fn class_table(records: &[EvalRecord], class: &str) -> String {
    let mut out = format!("| Method | Precision ({class}) | Recall ({class}) | F1 ({class}) |\n|---|---|---|---|\n");
    for r in records {
        match r.metrics.class(class) {
            Some(c) => {
                let _ = writeln!(out, "| {} | {:.4} | {:.4} | {:.4} |", r.mode.label(), c.precision, c.recall, c.f1);
            }
            None => {
                let _ = writeln!(out, "| {} | - | - | - |", r.mode.label());
            }
        }
    }
    out
}

/// FID per generated-sample count, followed by their average.
pub fn fid_table(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("| Samples (n) | FID |\n|---|---|\n");
    for (n, fid) in rows {
        let _ = writeln!(out, "| {n} | {fid:.4} |");
    }
    if !rows.is_empty() {
        let avg = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
        let _ = writeln!(out, "| AVG. FID | {avg:.4} |");
    }
    out
}

pub const FID_TABLE_HEADER: &str = "n,fid";

pub fn fid_table_csv(rows: &[(usize, f64)]) -> String {
    let mut out = format!("{FID_TABLE_HEADER}\n");
    for (n, fid) in rows {
        let _ = writeln!(out, "{n},{fid:e}");
    }
    out
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#76b7b2"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart of values in `[0, 1]`: one group per category, one
/// bar per series.
pub fn bar_chart_svg(title: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (760.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 60.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let groups = categories.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, escape(title));
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(s, r##"<line x1="{left}" x2="{}" y1="{y0:.1}" y2="{y0:.1}" stroke="#ddd"/>"##, left + plot_w, y0 = y(v));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, left - 6.0, y(v) + 4.0);
    }
    for (g, cat) in categories.iter().enumerate() {
        let gx = left + g as f64 * group_w + 0.1 * group_w;
        for (k, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0);
            let x = gx + k as f64 * bar_w;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{:.4}</title></rect>"#,
                y(v),
                bar_w * 0.95,
                top + plot_h - y(v),
                PALETTE[k % PALETTE.len()],
                v
            );
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, gx + 0.4 * group_w, h - bottom + 18.0, escape(cat));
    }
    let _ = writeln!(s, r##"<line x1="{left}" x2="{left}" y1="{top}" y2="{}" stroke="#333"/>"##, top + plot_h);
    for (k, (name, _)) in series.iter().enumerate() {
        let ly = top + 20.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{ly}" width="12" height="12" fill="{}"/>"#, w - right + 15.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - right + 33.0, ly + 10.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// UAR per mode.
pub fn uar_chart(records: &[EvalRecord]) -> String {
    let cats: Vec<String> = records.iter().map(|r| r.mode.label().to_string()).collect();
    let values = records.iter().map(|r| r.metrics.uar).collect();
    bar_chart_svg("Unweighted average recall by augmentation", &cats, &[("UAR".into(), values)])
}

/// Per-class precision or recall, one series per mode.
pub fn classwise_chart(records: &[EvalRecord], recall: bool) -> String {
    let classes = records.first().map(|r| r.metrics.class_names.clone()).unwrap_or_default();
    let series = records
        .iter()
        .map(|r| {
            let v = classes
                .iter()
                .map(|c| r.metrics.class(c).map_or(0.0, |m| if recall { m.recall } else { m.precision }))
                .collect();
            (r.mode.label().to_string(), v)
        })
        .collect::<Vec<_>>();
    let title = if recall { "Class-wise recall" } else { "Class-wise precision" };
    bar_chart_svg(title, &classes, &series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{confusion_matrix, metrics_from_confusion};

    fn record(mode: AugmentMode, pred: &[usize]) -> EvalRecord {
        let names: Vec<String> = ["english", "hindi", "hindi-english"].map(String::from).to_vec();
        let truth = [0, 0, 1, 1, 2, 2, 2, 2];
        let cm = confusion_matrix(&truth, pred, &names).unwrap();
        EvalRecord { mode, test_hash: "h".into(), n_test: 8, synthetic: 0, metrics: metrics_from_confusion(&cm).unwrap() }
    }

    #[test]
    fn accuracy_table_has_relative_increase_column() {
        let rows = [record(AugmentMode::None, &[0, 0, 1, 1, 2, 2, 0, 0]), record(AugmentMode::Gan, &[0, 0, 1, 1, 2, 2, 2, 0])];
        let t = accuracy_table(&rows);
        assert!(t.lines().next().unwrap().contains("(%)INC."));
        // 0.75 -> 0.875 is +16.67%
        assert!(t.contains("| Proposed GAN | 0.8750 |"));
        assert!(t.contains("+16.67 |"));
        assert_eq!(t.lines().count(), 4);
    }

    #[test]
    fn single_mode_table_has_no_delta() {
        let t = accuracy_table(&[record(AugmentMode::None, &[0; 8])]);
        assert!(!t.contains("INC"));
        assert_eq!(t.lines().count(), 3);
    }

    #[test]
    fn fid_table_ends_with_average() {
        let t = fid_table(&[(500, 10.0), (1000, 9.0), (2000, 8.0), (2400, 9.0)]);
        assert_eq!(t.lines().count(), 7);
        assert!(t.lines().last().unwrap().contains("AVG. FID | 9.0000"));
    }

    #[test]
    fn charts_are_well_formed_svg() {
        let rows = [record(AugmentMode::None, &[0; 8]), record(AugmentMode::Pitch, &[0, 0, 1, 1, 2, 2, 2, 2])];
        for (svg, bars) in [(uar_chart(&rows), 2), (classwise_chart(&rows, true), 6), (classwise_chart(&rows, false), 6)] {
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
            assert_eq!(svg.matches("<title>").count(), bars);
        }
    }
}
