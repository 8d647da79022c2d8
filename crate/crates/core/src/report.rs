//! Static HTML rendering of the diagnostics report.

use std::fmt::Write;

use crate::similarity::{DiagnosticsReport, Flag};

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Four decimals, the precision used everywhere a human reads a similarity.
pub fn fmt_sim(sim: f64) -> String {
    format!("{sim:.4}")
}

/// One table per flag. Error categories are assigned by curators in the
/// review UI, so the page groups by flag only.
pub fn render_diagnostics_html(report: &DiagnosticsReport) -> String {
    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Label diagnostics</title>\n");
    html.push_str("<style>body{font-family:sans-serif}table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:2px 6px}</style>\n");
    html.push_str("</head><body>\n<h1>Label diagnostics</h1>\n");
    let _ = writeln!(
        html,
        "<p>{} images; gap threshold {}; weak threshold {}; top-k {}</p>",
        report.images.len(),
        fmt_sim(report.rules.gap_threshold),
        fmt_sim(report.rules.weak_threshold),
        report.top_k
    );
    for flag in Flag::ALL {
        let flagged: Vec<_> = report.images.iter().filter(|d| d.has_flag(flag)).collect();
        let _ = writeln!(html, "<h2>{} ({})</h2>", flag, flagged.len());
        if flagged.is_empty() {
            continue;
        }
        html.push_str("<table><tr><th>image</th><th>assigned (A)</th><th>sim</th><th>best match (L)</th><th>sim</th><th>gap</th></tr>\n");
        for d in flagged {
            let top = d.top_dataset();
            let _ = writeln!(
                html,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                escape(&d.image_id),
                escape(&d.best_assigned.label),
                fmt_sim(d.best_assigned.sim),
                escape(&top.label),
                fmt_sim(top.sim),
                fmt_sim(d.gap)
            );
        }
        html.push_str("</table>\n");
    }
    html.push_str("<h2>Weakest assigned labels</h2>\n<table><tr><th>image</th><th>label</th><th>sim</th></tr>\n");
    for s in &report.worst_assigned {
        let _ = writeln!(
            html,
            "<tr><td>{}</td><td>{}</td><td>{}</td></tr>",
            escape(&s.image_id),
            escape(&s.label),
            fmt_sim(s.similarity)
        );
    }
    html.push_str("</table>\n</body></html>\n");
    html
}
