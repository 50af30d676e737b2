//! `--config FILE` support: `key = value` lines appended to the command line
//! so they take precedence over flags given earlier.

use std::path::Path;

/// Parse `key=value` lines; `#` starts a comment. `true` turns into a bare
/// flag and `false` drops the key.
pub fn config_args(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", i + 1));
        }
        match value.trim() {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => {
                out.push(format!("--{key}"));
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

/// Strip `--config PATH` / `--config=PATH` from `args` and append the file's settings.
pub fn expand(args: Vec<String>) -> Result<Vec<String>, String> {
    let mut out = Vec::with_capacity(args.len());
    let mut files = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            files.push(it.next().ok_or("--config needs a path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            files.push(p.to_string());
        } else {
            out.push(a);
        }
    }
    for f in files {
        let text = std::fs::read_to_string(Path::new(&f))
            .map_err(|e| format!("reading config {f}: {e}"))?;
        out.extend(config_args(&text)?);
    }
    Ok(out)
}
