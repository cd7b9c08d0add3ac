//! Tabular and chart output for a robustness grid.

use std::fmt::Write as _;

use crate::corruption::NUM_SEVERITIES;
use crate::error::Result;
use crate::eval::{mpc, rpc, RobustnessGrid};

pub const CSV_HEADER: &str = "corruption,sev1,sev2,sev3,sev4,sev5,mean";

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// One row per corruption with the five severities and their mean, then
/// `clean`, `mPC` and `rPC` rows whose value sits in the `mean` column.
/// rPC is left empty when the clean score is zero.
pub fn report_csv(grid: &RobustnessGrid) -> Result<String> {
    grid.validate()?;
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (row, (_, mean)) in grid.rows.iter().zip(grid.row_means()) {
        let cells: Vec<String> = row.scores.iter().map(|&v| fmt(v)).collect();
        writeln!(out, "{},{},{}", row.corruption.name(), cells.join(","), fmt(mean)).unwrap();
    }
    let m = mpc(grid);
    let blanks = ",".repeat(NUM_SEVERITIES);
    writeln!(out, "clean{blanks},{}", fmt(grid.clean_score)).unwrap();
    writeln!(out, "mPC{blanks},{}", fmt(m)).unwrap();
    let r = rpc(m, grid.clean_score).map(fmt).unwrap_or_default();
    writeln!(out, "rPC{blanks},{r}").unwrap();
    Ok(out)
}

/// Horizontal bar per corruption (severity mean), with dashed lines at
/// the clean score and mPC.
pub fn report_svg(grid: &RobustnessGrid) -> Result<String> {
    grid.validate()?;
    let (left, top, bar_h, gap, plot_w) = (110.0, 30.0, 16.0, 6.0, 400.0);
    let means = grid.row_means();
    let height = top + means.len() as f64 * (bar_h + gap) + 30.0;
    let width = left + plot_w + 60.0;
    let x = |v: f64| left + plot_w * v / 100.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{left}" y="18" font-size="13">{} per corruption (mean over severities)</text>"#,
        grid.metric.to_string().to_uppercase()
    )
    .unwrap();
    for (i, (kind, mean)) in means.iter().enumerate() {
        let y = top + i as f64 * (bar_h + gap);
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + bar_h - 4.0,
            kind.label()
        )
        .unwrap();
        writeln!(
            s,
            r##"<rect x="{left}" y="{y}" width="{:.2}" height="{bar_h}" fill="#4a7ab5"/>"##,
            x(*mean) - left
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{}">{:.1}</text>"#, x(*mean) + 4.0, y + bar_h - 4.0, mean).unwrap();
    }
    let bottom = height - 24.0;
    for (value, label, colour) in [(grid.clean_score, "clean", "#c0392b"), (mpc(grid), "mPC", "#27ae60")] {
        writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{top}" x2="{0:.2}" y2="{bottom}" stroke="{colour}" stroke-dasharray="4 3"/>"#,
            x(value)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{}" fill="{colour}" text-anchor="middle">{label} {:.1}</text>"#,
            x(value),
            bottom + 14.0,
            value
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Parse the `mean` column of the footer rows back out of a report.
pub fn footer_value(csv: &str, row: &str) -> Option<f64> {
    csv.lines()
        .find(|l| l.split(',').next() == Some(row))
        .and_then(|l| l.rsplit(',').next())
        .and_then(|v| v.parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Metric;

    fn grid() -> RobustnessGrid {
        let scores: Vec<f64> = (0..75).map(|i| (i % 50) as f64 + 0.5).collect();
        RobustnessGrid::from_flat(Metric::Pckh, 80.0, &scores).unwrap()
    }

    #[test]
    fn csv_layout_and_footer() {
        let g = grid();
        let csv = report_csv(&g).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 15 + 3);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 7));
        assert!(lines[1].starts_with("gaussian_noise,0.50,1.50,2.50,3.50,4.50,2.50"));
        let m = footer_value(&csv, "mPC").unwrap();
        assert!((m - mpc(&g)).abs() < 0.005);
        assert_eq!(footer_value(&csv, "clean"), Some(80.0));
        let r = footer_value(&csv, "rPC").unwrap();
        assert!((r - 100.0 * mpc(&g) / 80.0).abs() < 0.005);
    }

    #[test]
    fn svg_has_one_bar_per_corruption() {
        let svg = report_svg(&grid()).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 15);
        assert_eq!(svg.matches("<line").count(), 2);
    }

    #[test]
    fn zero_clean_score_leaves_rpc_empty() {
        let mut g = grid();
        g.clean_score = 0.0;
        let csv = report_csv(&g).unwrap();
        assert_eq!(csv.lines().last(), Some("rPC,,,,,,"));
        assert_eq!(footer_value(&csv, "rPC"), None);
        g.clean_score = -1.0;
        assert!(report_csv(&g).is_err());
    }
}
