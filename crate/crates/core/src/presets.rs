//! Configurations shipped with the crate.

use crate::config::LoadedConfig;
use crate::error::{Error, Result};

pub const UNDERCOUPLED: &str = include_str!("../configs/undercoupled.toml");
pub const OVERCOUPLED: &str = include_str!("../configs/overcoupled.toml");
pub const GAP_SCAN: &str = include_str!("../configs/gap_scan.toml");

pub const ALL: [(&str, &str); 3] = [
    ("undercoupled", UNDERCOUPLED),
    ("overcoupled", OVERCOUPLED),
    ("gap_scan", GAP_SCAN),
];

pub fn text(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn load(name: &str) -> Result<LoadedConfig> {
    let text = text(name).ok_or_else(|| {
        let names: Vec<&str> = ALL.iter().map(|(n, _)| *n).collect();
        Error::Config(format!(
            "unknown preset `{name}` (available: {})",
            names.join(", ")
        ))
    })?;
    LoadedConfig::parse(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for (name, _) in ALL {
            load(name).unwrap().config.resolve().unwrap();
        }
        assert!(load("nope").is_err());
    }
}
