//! Minimal SVG scatter rendering for the inspection reports.

use std::collections::BTreeMap;

use crate::inspection::{Grouping, ScatterRow};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

const SIZE: f64 = 640.0;
const MARGIN: f64 = 48.0;

pub fn scatter_svg(rows: &[ScatterRow], grouping: Grouping, title: &str) -> String {
    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    for row in rows {
        let key = match grouping {
            Grouping::Label => row.label.to_string(),
            Grouping::Site => row.site.clone(),
        };
        let next = groups.len();
        groups.entry(key).or_insert(next);
    }

    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in rows {
        min_x = min_x.min(row.pc1);
        max_x = max_x.max(row.pc1);
        min_y = min_y.min(row.pc2);
        max_y = max_y.max(row.pc2);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(min_x, max_x), span(min_y, max_y));
    let to_px = |x: f64, y: f64| {
        (
            MARGIN + (x - min_x) / sx * (SIZE - 2.0 * MARGIN),
            // SVG y grows downward.
            SIZE - MARGIN - (y - min_y) / sy * (SIZE - 2.0 * MARGIN),
        )
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        SIZE / 2.0
    ));

    for row in rows {
        let key = match grouping {
            Grouping::Label => row.label.to_string(),
            Grouping::Site => row.site.clone(),
        };
        let color = PALETTE[groups[&key] % PALETTE.len()];
        let (px, py) = to_px(row.pc1, row.pc2);
        svg.push_str(&format!(
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n"
        ));
    }

    for (key, idx) in &groups {
        let color = PALETTE[idx % PALETTE.len()];
        let y = 40.0 + 18.0 * *idx as f64;
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{y:.1}\" r=\"4\" fill=\"{color}\"/>\n",
            SIZE - MARGIN - 80.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{key}</text>\n",
            SIZE - MARGIN - 70.0,
            y + 4.0
        ));
    }

    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">pc1</text>\n",
        SIZE / 2.0,
        SIZE - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">pc2</text>\n",
        SIZE / 2.0,
        SIZE / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}
