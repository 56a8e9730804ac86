//! `--config FILE` support: `key = value` lines that stand in for flags.

use std::path::Path;

use gencorr::{Error, Result};

/// Expand `--config FILE` into flags. Keys already given on the command
/// line win; `true` adds a bare switch and `false` drops the key.
pub fn expand(args: Vec<String>) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(args.len());
    let mut config: Option<String> = None;
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        if a == "--config" {
            config = Some(iter.next().ok_or_else(|| Error::InvalidInput("--config needs a file".into()))?);
        } else if let Some(path) = a.strip_prefix("--config=") {
            config = Some(path.to_string());
        } else {
            out.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(out);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::File {
        path: Path::new(&path).to_path_buf(),
        message: e.to_string(),
    })?;
    let given: Vec<String> = out
        .iter()
        .filter_map(|a| a.strip_prefix("--").map(|k| k.split('=').next().unwrap_or(k).to_string()))
        .collect();
    let mut extra = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::File {
            path: Path::new(&path).to_path_buf(),
            message: format!("line {}: expected `key = value`", i + 1),
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if given.contains(&key) {
            continue;
        }
        match value {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            v => {
                extra.push(format!("--{key}"));
                extra.push(v.to_string());
            }
        }
    }
    // flags go before any `--` separator
    match out.iter().position(|a| a == "--") {
        Some(i) => {
            out.splice(i..i, extra);
        }
        None => out.extend(extra),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "# defaults\nalpha = 0.01\nk = 5\nper_template = true\nrandom-groups = false\n").unwrap();
        let args: Vec<String> = ["gencorr", "disco", "--k", "3", "--config", cfg.to_str().unwrap()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = expand(args).unwrap();
        assert_eq!(out, ["gencorr", "disco", "--k", "3", "--alpha", "0.01", "--per-template"]);
    }

    #[test]
    fn missing_config_names_path() {
        let err = expand(vec!["gencorr".into(), "--config".into(), "/nonexistent/x.conf".into()]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.conf"));
    }
}
