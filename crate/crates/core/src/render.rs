//! Terminal and HTML renderings. Every renderer reads only the canonical
//! JSON payload, so output is a pure function of that payload.

use std::fmt::Write as _;

use crate::expectancy::{DocumentAnalysis, Exactness, TokenStats};
use crate::memorization::MemorizationReport;

/// Quantized z-score band for terminal colors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ZBand {
    None,
    Dim,
    Red,
    Strong,
    Extreme,
}

pub fn z_band(z: f64, threshold: f64) -> ZBand {
    if z >= threshold + 2.0 {
        ZBand::Extreme
    } else if z >= threshold + 1.0 {
        ZBand::Strong
    } else if z >= threshold {
        ZBand::Red
    } else if z >= 1.0 {
        ZBand::Dim
    } else {
        ZBand::None
    }
}

fn ansi_code(band: ZBand) -> Option<&'static str> {
    match band {
        ZBand::None => None,
        ZBand::Dim => Some("\x1b[2;33m"),
        ZBand::Red => Some("\x1b[31m"),
        ZBand::Strong => Some("\x1b[1;31m"),
        ZBand::Extreme => Some("\x1b[1;97;41m"),
    }
}

const RESET: &str = "\x1b[0m";

/// Probability with three significant digits.
pub fn sig3(p: f64) -> String {
    if p == 0.0 || !p.is_finite() {
        return format!("{p}");
    }
    let magnitude = p.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    format!("{p:.decimals$}")
}

/// Colors each token by its z band.
pub fn render_ansi(json: &str) -> Result<String, serde_json::Error> {
    let a = DocumentAnalysis::from_json(json)?;
    let threshold = a.options.z_threshold;
    let mut out = String::with_capacity(a.source_text.len() * 2);
    for (pos, tok) in a.tokens.iter().enumerate() {
        match a.stats_at(pos).and_then(|s| ansi_code(z_band(s.z, threshold))) {
            Some(code) => {
                out.push_str(code);
                out.push_str(&tok.text);
                out.push_str(RESET);
            }
            None => out.push_str(&tok.text),
        }
    }
    out.push('\n');
    Ok(out)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn tooltip(tok_text: &str, s: &TokenStats) -> String {
    let mut t = format!(
        "{:?}  p={}  rank={}  z={:.2}",
        tok_text,
        sig3(s.actual_probability),
        s.actual_rank.map_or("-".to_string(), |r| r.to_string()),
        s.z
    );
    if s.exactness == Exactness::TopKApprox {
        t.push_str("  (bound)");
    }
    for alt in &s.alternatives {
        let _ = write!(t, "\n{:?}  {}", alt.text, sig3(alt.probability));
    }
    t
}

/// Heat intensity in [0, 1] for positive z.
fn heat(z: f64, threshold: f64) -> f64 {
    let scale = (2.0 * threshold).max(1.0);
    (z / scale).clamp(0.0, 1.0)
}

const STYLE: &str = "body{font-family:Georgia,serif;max-width:52em;margin:2em auto;line-height:1.7}\
.doc{white-space:pre-wrap}\
.tok.salient{color:#7f1d1d;font-weight:bold}\
.tok.approx{text-decoration:underline dashed}\
.tok.unscored{color:#6b7280}\
table{border-collapse:collapse;margin-top:1em}td,th{padding:0 .8em;text-align:left}";

/// Standalone page: continuous heatmap with hover alternatives, followed by
/// the ranked, missing-token and segment views.
pub fn render_html(json: &str) -> Result<String, serde_json::Error> {
    let a = DocumentAnalysis::from_json(json)?;
    let threshold = a.options.z_threshold;
    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Expectancy heatmap</title>\
         <style>{STYLE}</style></head><body>\n<div class=\"doc\">"
    );
    for (pos, tok) in a.tokens.iter().enumerate() {
        match a.stats_at(pos) {
            None => {
                let _ = write!(
                    out,
                    "<span class=\"tok unscored\" title=\"no distribution\">{}</span>",
                    escape(&tok.text)
                );
            }
            Some(s) => {
                let mut class = String::from("tok");
                if s.flagged {
                    class.push_str(" salient");
                }
                if s.exactness == Exactness::TopKApprox {
                    class.push_str(" approx");
                }
                let _ = write!(
                    out,
                    "<span class=\"{class}\" data-z=\"{}\" style=\"background:rgba(220,38,38,{:.3})\" title=\"{}\">{}</span>",
                    s.z,
                    heat(s.z, threshold),
                    escape(&tooltip(&tok.text, s)),
                    escape(&tok.text)
                );
            }
        }
    }
    out.push_str("</div>\n");

    out.push_str("<h2>Most surprising tokens</h2>\n<table><tr><th>Token</th><th>Position</th><th>Surprisal (nats)</th><th>z</th></tr>\n");
    for r in &a.views.ranked {
        let _ = writeln!(
            out,
            "<tr><td>{}</td><td>{}</td><td>{:.3}</td><td>{:.2}</td></tr>",
            escape(&format!("{:?}", r.text)),
            r.position,
            r.surprisal_nats,
            r.z
        );
    }
    out.push_str("</table>\n");

    if let Some(m) = &a.views.missing {
        let note = if m.exactness == Exactness::TopKApprox { " (lower bounds)" } else { "" };
        let _ = writeln!(
            out,
            "<h2>Expected but missing{note}</h2>\n<table><tr><th>Token</th><th>Cumulative probability</th></tr>"
        );
        for e in &m.entries {
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td>{}</td></tr>",
                escape(&e.text),
                sig3(e.cumulative_probability)
            );
        }
        out.push_str("</table>\n");
    }

    for (title, segs) in [("Sentences", &a.views.sentences), ("Paragraphs", &a.views.paragraphs)] {
        let _ = writeln!(
            out,
            "<h2>{title}</h2>\n<table><tr><th>Text</th><th>Mean z</th><th>Max z</th><th>Flagged</th></tr>"
        );
        for s in segs.iter() {
            let text = a.source_text.get(s.byte_start..s.byte_end).unwrap_or_default().trim();
            let preview: String = text.chars().take(80).collect();
            let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                escape(&preview),
                fmt(s.mean_z, 2),
                fmt(s.max_z, 2),
                fmt(s.flagged_fraction.map(|f| f * 100.0), 0) + if s.flagged_fraction.is_some() { "%" } else { "" }
            );
        }
        out.push_str("</table>\n");
    }
    out.push_str("</body></html>\n");
    Ok(out)
}

/// Green for reproduced tokens, red for the rest.
pub fn render_memorization_ansi(json: &str) -> Result<String, serde_json::Error> {
    let r: MemorizationReport = serde_json::from_str(json)?;
    let mut out = String::new();
    if let Some(p) = r.prefix_len {
        let _ = write!(out, "[prefix {p} tokens] ");
    }
    for (tok, &m) in r.tokens.iter().zip(&r.matches) {
        out.push_str(if m { "\x1b[32m" } else { "\x1b[31m" });
        out.push_str(tok);
        out.push_str(RESET);
    }
    let _ = writeln!(
        out,
        "\nmatch fraction {:.3}, longest run {}",
        r.match_fraction, r.longest_match_run
    );
    Ok(out)
}

pub fn render_memorization_html(json: &str) -> Result<String, serde_json::Error> {
    let r: MemorizationReport = serde_json::from_str(json)?;
    let mut out = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Memorization probe</title>\
         <style>.doc{white-space:pre-wrap}.hit{background:#bbf7d0}.miss{background:#fecaca}</style></head><body>\n<div class=\"doc\">",
    );
    for (tok, &m) in r.tokens.iter().zip(&r.matches) {
        let _ = write!(
            out,
            "<span class=\"{}\">{}</span>",
            if m { "hit" } else { "miss" },
            escape(tok)
        );
    }
    let _ = write!(
        out,
        "</div>\n<p>match fraction {:.3}, longest run {}</p>\n</body></html>\n",
        r.match_fraction, r.longest_match_run
    );
    Ok(out)
}
