//! Parameter sweeps over dotted config paths.

use std::io;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::checkeq;
use super::config::ScenarioConfig;
use super::metrics::RunMetrics;
use super::run::{run, SimError};
use crate::agents::{self, Role};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub seed: u64,
    /// Axis path and the value this cell took, in axis order.
    pub params: Vec<(String, toml::Value)>,
    pub metrics: RunMetrics,
    /// Analytic solver deviation flag for the cell's bond and economics.
    pub solver_equilibrium: bool,
}

/// Axes declared in the config's `[sweep]` table, in key order.
pub fn axes(config: &ScenarioConfig) -> Vec<SweepAxis> {
    config
        .sweep
        .iter()
        .map(|(path, values)| SweepAxis {
            path: path.clone(),
            values: values.as_array().cloned().unwrap_or_default(),
        })
        .collect()
}

/// Seed of grid cell `index`: the first eight bytes of
/// `sha256(base || index)`, both big-endian.
pub fn cell_seed(base: u64, index: usize) -> u64 {
    let digest = Sha256::new()
        .chain_update(base.to_be_bytes())
        .chain_update((index as u64).to_be_bytes())
        .finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Cartesian product of the axes, last axis fastest. No axes yield one
/// empty assignment.
fn cells(axes: &[SweepAxis]) -> Vec<Vec<(String, toml::Value)>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push((axis.path.clone(), v.clone()));
                    cell
                })
            })
            .collect();
    }
    out
}

/// The config of one cell, before its seed is applied.
pub fn cell_config(
    base: &ScenarioConfig,
    params: &[(String, toml::Value)],
) -> Result<ScenarioConfig, SimError> {
    let mut config = base.clone();
    config.sweep.clear();
    for (path, value) in params {
        config = config.with_value(path, value.clone())?;
    }
    Ok(config)
}

fn solver_equilibrium(config: &ScenarioConfig) -> bool {
    let Ok(bond) = config.solver_bond() else {
        return false;
    };
    let mut grid = config.check_eq.clone();
    grid.falsification_cost = config.economics.falsification_cost;
    let s = checkeq::scenario(&grid, config.economics.error_probability, bond);
    agents::deviation_test(Role::Solver, &s).is_ok_and(|r| r.equilibrium)
}

/// Runs every cell, in parallel, and returns rows in cell order.
pub fn sweep(base: &ScenarioConfig, axes: &[SweepAxis]) -> Result<Vec<SweepRow>, SimError> {
    let configs = cells(axes)
        .into_iter()
        .enumerate()
        .map(|(index, params)| {
            let mut config = cell_config(base, &params)?;
            config.seed = cell_seed(base.seed, index);
            Ok((index, params, config))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    configs
        .into_par_iter()
        .map(|(index, params, config)| {
            let out = run(&config)?;
            Ok(SweepRow {
                index,
                seed: config.seed,
                params,
                metrics: out.metrics,
                solver_equilibrium: solver_equilibrium(&config),
            })
        })
        .collect()
}

fn metric_fields(m: &RunMetrics) -> (Vec<String>, Vec<String>) {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(m).expect("metrics serialize");
    let bytes = w.into_inner().expect("in-memory writer");
    let mut rows = csv::Reader::from_reader(&bytes[..]);
    let header = rows
        .headers()
        .expect("header row")
        .iter()
        .map(String::from)
        .collect();
    let values = rows
        .records()
        .next()
        .expect("one row")
        .expect("valid row")
        .iter()
        .map(String::from)
        .collect();
    (header, values)
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One header row, then one row per cell.
pub fn write_csv<W: io::Write>(out: W, axes: &[SweepAxis], rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (metric_header, _) = metric_fields(&RunMetrics::default());
    let mut header = vec!["index".to_string(), "seed".to_string()];
    header.extend(axes.iter().map(|a| a.path.clone()));
    header.extend(metric_header);
    header.push("solver_equilibrium".into());
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.index.to_string(), row.seed.to_string()];
        record.extend(row.params.iter().map(|(_, v)| value_text(v)));
        record.extend(metric_fields(&row.metrics).1);
        record.push(row.solver_equilibrium.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
