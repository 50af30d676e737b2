//! Heatmap renderings of word scores: red for positive, blue for negative,
//! intensity proportional to |score|.

use std::fmt::Write as _;

use plex_core::explainers::ImportanceVector;

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

/// Inline background for one score; `None` for exactly zero.
pub fn html_background(score: f64) -> Option<String> {
    let a = score.abs().min(1.0);
    if a == 0.0 {
        return None;
    }
    let (r, g, b) = if score > 0.0 {
        (255, 0, 0)
    } else {
        (0, 0, 255)
    };
    Some(format!("rgba({r},{g},{b},{a:.3})"))
}

const STYLE: &str = "body{font-family:system-ui,sans-serif;margin:2em;color:#222;background:#fff}\
.s{margin:.8em 0;line-height:2}.meta{color:#777;font-size:.8em;margin-right:.6em}\
.w{padding:.15em .3em;border-radius:3px}.legend{margin-bottom:1.5em;font-size:.85em}\
.legend span{display:inline-block;padding:.2em .6em}";

/// Self-contained page: no scripts, no external resources.
pub fn html_page(rows: &[(Vec<String>, ImportanceVector)]) -> String {
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>word importance</title><style>");
    out.push_str(STYLE);
    out.push_str("</style></head><body>\n<div class=\"legend\">");
    for s in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let bg = html_background(s)
            .map(|c| format!(" style=\"background-color:{c}\""))
            .unwrap_or_default();
        write!(out, "<span{bg}>{s:+.1}</span>").unwrap();
    }
    out.push_str(" &nbsp;red = supports the class, blue = opposes it</div>\n");
    for (words, v) in rows {
        write!(
            out,
            "<p class=\"s\"><span class=\"meta\">{} &middot; {} &middot; class {}</span>",
            escape(&v.id),
            v.method,
            v.class
        )
        .unwrap();
        for (w, &s) in words.iter().zip(&v.scores) {
            let style = html_background(s)
                .map(|c| format!(" style=\"background-color:{c}\""))
                .unwrap_or_default();
            write!(
                out,
                "<span class=\"w\"{style} title=\"{s:.3}\">{}</span> ",
                escape(w)
            )
            .unwrap();
        }
        out.push_str("</p>\n");
    }
    out.push_str("</body></html>\n");
    out
}

/// Terminal rendering with 24-bit background colours blended from white.
pub fn ansi_line(words: &[String], v: &ImportanceVector) -> String {
    let mut out = format!("{} [{} class {}] ", v.id, v.method, v.class);
    for (w, &s) in words.iter().zip(&v.scores) {
        let fade = (255.0 * (1.0 - s.abs().min(1.0))).round() as u8;
        let (r, g, b) = if s >= 0.0 {
            (255, fade, fade)
        } else {
            (fade, fade, 255)
        };
        write!(out, "\x1b[30;48;2;{r};{g};{b}m{w}\x1b[0m ").unwrap();
    }
    out.trim_end().to_string()
}
