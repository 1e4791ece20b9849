//! Parameter sweeps over a base configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use serde::Deserialize;
use serde_json::Value;

use super::{run, Outcome, RunConfig, RunReport};

/// A base configuration plus a grid of dotted field paths to vary. Every
/// combination of grid values is run once.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub base: RunConfig,
    pub grid: BTreeMap<String, Vec<Value>>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> anyhow::Result<SweepSpec> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// All grid points in odometer order, last field fastest.
    pub fn expand(&self) -> anyhow::Result<Vec<(BTreeMap<String, Value>, RunConfig)>> {
        let base = serde_json::to_value(&self.base)?;
        let fields: Vec<(&String, &Vec<Value>)> = self.grid.iter().collect();
        if fields.iter().any(|(_, v)| v.is_empty()) {
            bail!("sweep grid has a field with no values");
        }
        let total: usize = fields.iter().map(|(_, v)| v.len()).product();
        let mut out = Vec::with_capacity(total);
        for mut i in 0..total {
            let mut point = BTreeMap::new();
            let mut doc = base.clone();
            for (name, values) in fields.iter().rev() {
                let v = &values[i % values.len()];
                i /= values.len();
                set_path(&mut doc, name, v.clone())?;
                point.insert((*name).clone(), v.clone());
            }
            let cfg: RunConfig = serde_json::from_value(doc).context("applying sweep point")?;
            cfg.validate()?;
            out.push((point, cfg));
        }
        Ok(out)
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> anyhow::Result<()> {
    let mut cur = doc;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = cur.as_object_mut().ok_or_else(|| anyhow!("`{path}` does not name a config field"))?;
        if !obj.contains_key(part) {
            bail!("unknown config field `{path}`");
        }
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(part).unwrap();
    }
    bail!("empty field path")
}

/// Runs every grid point, writing each run under `out/run-<i>` and a
/// combined `sweep.csv`.
pub fn sweep(spec: &SweepSpec, out: &Path) -> anyhow::Result<Vec<RunReport>> {
    let points = spec.expand()?;
    std::fs::create_dir_all(out)?;
    let mut reports = Vec::new();
    let mut csv = String::new();
    let names: Vec<&String> = spec.grid.keys().collect();
    for n in &names {
        write!(csv, "{n},")?;
    }
    csv.push_str(
        "submitted,valid,mvcc_conflict,throughput_tps,committed_tps,endorsement_mean_ms,commit_mean_ms,\
         total_mean_ms,total_p95_ms,vscc_mean_ms,mvcc_mean_ms,ledger_update_mean_ms\n",
    );
    for (i, (point, cfg)) in points.iter().enumerate() {
        eprintln!("sweep point {}/{}: {}", i + 1, points.len(), serde_json::to_string(point)?);
        let output = run(&cfg)?;
        output.write(&out.join(format!("run-{i}")))?;
        let r = output.report;
        for n in &names {
            write!(csv, "{},", point[*n])?;
        }
        writeln!(
            csv,
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
            r.submitted,
            r.count(Outcome::Valid),
            r.count(Outcome::MvccConflict),
            r.throughput_tps,
            r.committed_tps,
            r.latency_ms.endorsement.mean,
            r.latency_ms.commit.mean,
            r.latency_ms.total.mean,
            r.latency_ms.total.p95,
            r.blocks.vscc_ms.mean,
            r.blocks.mvcc_ms.mean,
            r.blocks.ledger_update_ms.mean,
        )?;
        reports.push(r);
    }
    std::fs::write(out.join("sweep.csv"), csv)?;
    Ok(reports)
}
