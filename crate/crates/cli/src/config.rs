//! `--config FILE` support.
//!
//! The file holds `key = value` lines named after the long flags
//! (`betas-data = 0.5,2` or `betas_data = 0.5,2`); `#` starts a comment. Each
//! entry becomes a flag inserted after the subcommand name unless that flag
//! was also given on the command line.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(e: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.to_string()))
}

/// Returns `args` with the `--config` option replaced by the flags it holds.
pub fn expand(args: Vec<String>) -> Result<Vec<String>, UsageError> {
    let Some(pos) = args
        .iter()
        .position(|a| a == "--config" || a.starts_with("--config="))
    else {
        return Ok(args);
    };
    let mut args = args;
    let path = if let Some(p) = args[pos].strip_prefix("--config=") {
        let p = p.to_string();
        args.remove(pos);
        p
    } else {
        if pos + 1 >= args.len() {
            return Err(UsageError("--config needs a file".into()));
        }
        args.remove(pos);
        args.remove(pos)
    };
    if args.len() < 2 || args[1].starts_with('-') {
        return Err(UsageError("--config must follow a subcommand".into()));
    }
    let given: HashSet<String> = args
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let entries = read(Path::new(&path))?;
    let mut flags = Vec::new();
    for (key, value) in entries {
        if given.contains(&key) {
            continue;
        }
        match value.as_str() {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            _ => flags.push(format!("--{key}={value}")),
        }
    }
    args.splice(2..2, flags);
    Ok(args)
}

fn read(path: &Path) -> Result<Vec<(String, String)>, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text).map_err(|m| UsageError(format!("{}: {m}", path.display())))
}

pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(format!("line {}: bad key {:?}", i + 1, k.trim()));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn flags_win_over_file() {
        let dir = std::env::temp_dir().join(format!("mxql-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(
            &path,
            "# test\nbeta = 2\nbetas_data = 0.5,2\nshared-dataset = true\nlr = 0.1\n",
        )
        .unwrap();
        let args = expand(argv(&format!(
            "mxql regress --lr 0.5 --config {}",
            path.display()
        )))
        .unwrap();
        assert_eq!(
            args,
            argv("mxql regress --beta=2 --betas-data=0.5,2 --shared-dataset --lr 0.5")
        );
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse("beta 2").is_err());
        assert!(parse("config = x").is_err());
        assert_eq!(parse("  # only a comment\n").unwrap(), vec![]);
    }
}
