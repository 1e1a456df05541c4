use std::fs;
use std::io::Write;
use std::path::Path;

use scatternet_core::scenario::builtin;
use scatternet_core::{Scenario, ScoreWeights};

use crate::harness::TrialRow;
use crate::{Error, Result};

/// Parses and validates a scenario document.
pub fn read_scenario(text: &str, origin: &str) -> Result<Scenario> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|source| Error::Json {
        path: origin.to_string(),
        source,
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Loads a scenario file, or a built-in layout by name (`training11`) when
/// no such file exists.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let shown = path.display().to_string();
    if !path.exists() {
        if let Some(s) = path.to_str().and_then(builtin) {
            return Ok(s);
        }
    }
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: shown.clone(),
        source,
    })?;
    read_scenario(&text, &shown)
}

pub fn write_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(scenario).expect("scenarios always serialize");
    json.push('\n');
    fs::write(path, json).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_rows<W: Write>(rows: &[TrialRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Parses `"w_m,w_h,w_b,w_ci,w_rl,w_rn;..."` into weight vectors on top of
/// `base`.
pub fn parse_weights_grid(spec: &str, base: ScoreWeights) -> Result<Vec<ScoreWeights>> {
    let mut grid = Vec::new();
    for (i, entry) in spec
        .split(';')
        .map(str::trim)
        .filter(|e| !e.is_empty())
        .enumerate()
    {
        let values: Vec<f64> = entry
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::WeightsGrid(format!("entry {}: {e}", i + 1)))?;
        let w: [f64; 6] = values.try_into().map_err(|v: Vec<f64>| {
            Error::WeightsGrid(format!(
                "entry {} has {} values, expected 6",
                i + 1,
                v.len()
            ))
        })?;
        let weights = base.with_weights(w);
        weights.validate()?;
        grid.push(weights);
    }
    if grid.is_empty() {
        return Err(Error::WeightsGrid("no weight vectors given".into()));
    }
    Ok(grid)
}
