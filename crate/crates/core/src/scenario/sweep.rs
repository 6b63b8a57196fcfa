use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;

use crate::engine::derive_seed;

use super::config::ScenarioConfig;
use super::{parse_config, run, ScenarioError};

enum Step {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<Step>, ScenarioError> {
    let bad = || ScenarioError::UnknownPath(path.to_owned());
    let mut steps = Vec::new();
    for part in path.split('.') {
        let (key, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if key.is_empty() {
            return Err(bad());
        }
        steps.push(Step::Key(key.to_owned()));
        while !rest.is_empty() {
            let close = rest.find(']').ok_or_else(bad)?;
            if !rest.starts_with('[') {
                return Err(bad());
            }
            steps.push(Step::Index(rest[1..close].parse().map_err(|_| bad())?));
            rest = &rest[close + 1..];
        }
    }
    Ok(steps)
}

/// Set the number at `path` (such as `quantum_links[0].w0`) in a parsed
/// scenario document. Only the leaf may be absent; it is then created.
pub fn set_param(doc: &mut toml::Value, path: &str, value: f64) -> Result<(), ScenarioError> {
    let bad = || ScenarioError::UnknownPath(path.to_owned());
    let steps = parse_path(path)?;
    let mut cur = doc;
    let last = steps.len() - 1;
    for (i, step) in steps.iter().enumerate() {
        cur = match step {
            Step::Key(k) => {
                let table = cur.as_table_mut().ok_or_else(bad)?;
                if i == last && !table.contains_key(k) {
                    table.insert(k.clone(), toml::Value::Float(0.0));
                }
                table.get_mut(k).ok_or_else(bad)?
            }
            Step::Index(j) => cur.as_array_mut().and_then(|a| a.get_mut(*j)).ok_or_else(bad)?,
        };
    }
    if cur.is_table() || cur.is_array() || cur.is_str() {
        return Err(bad());
    }
    *cur = if value.fract() == 0.0 && value.abs() < 9e15 {
        toml::Value::Integer(value as i64)
    } else {
        toml::Value::Float(value)
    };
    Ok(())
}

/// Independent seed of replication `r` under a base seed.
pub fn replication_seed(base: u64, r: u32) -> u64 {
    let d = derive_seed(base, "sweep", &format!("replication-{r}"));
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub replication: u32,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub hard_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub value: f64,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub path: String,
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<Aggregate>,
}

/// Run the scenario once per grid value and replication, in parallel.
pub fn sweep(
    doc: &toml::Value,
    path: &str,
    values: &[f64],
    replications: u32,
    seed: Option<u64>,
) -> Result<SweepResult, ScenarioError> {
    if replications == 0 {
        return Err(ScenarioError::Usage("replications must be at least 1".into()));
    }
    let mut configs: Vec<ScenarioConfig> = Vec::with_capacity(values.len());
    for &v in values {
        let mut d = doc.clone();
        set_param(&mut d, path, v)?;
        configs.push(parse_config(d)?);
    }
    let base = seed.unwrap_or(configs.first().map_or(0, |c| c.seed));
    let jobs: Vec<(usize, u32)> = (0..values.len()).flat_map(|i| (0..replications).map(move |r| (i, r))).collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let s = replication_seed(base, r);
            let out = run(&configs[i], Some(s), None, &format!("{path}={}#{r}", values[i]));
            let metrics = out
                .metrics
                .rows()
                .into_iter()
                .filter_map(|(name, v, _)| v.parse::<f64>().ok().map(|v| (name, v)))
                .collect();
            SweepRow { value: values[i], replication: r, seed: s, metrics, hard_failures: out.hard_failures() }
        })
        .collect();

    let aggregates = values
        .iter()
        .map(|&v| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.value == v).collect();
            let names: BTreeSet<&String> = group.iter().flat_map(|r| r.metrics.keys()).collect();
            let mut mean = BTreeMap::new();
            let mut std = BTreeMap::new();
            for name in names {
                let xs: Vec<f64> = group.iter().filter_map(|r| r.metrics.get(name).copied()).collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let s = if xs.len() > 1 {
                    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
                mean.insert(name.clone(), m);
                std.insert(name.clone(), s);
            }
            Aggregate { value: v, mean, std }
        })
        .collect();
    Ok(SweepResult { path: path.to_owned(), rows, aggregates })
}

impl SweepResult {
    pub fn metric_names(&self) -> Vec<String> {
        let names: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.metrics.keys()).collect();
        names.into_iter().cloned().collect()
    }

    /// Wide CSV: one `run` row per (value, replication), then `mean` and
    /// `std` rows per value. Missing metrics are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let names = self.metric_names();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_owned(), "param".into(), "value".into(), "replication".into(), "seed".into()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        let cell = |m: &BTreeMap<String, f64>, n: &String| m.get(n).map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec!["run".to_owned(), self.path.clone(), r.value.to_string(), r.replication.to_string()];
            rec.push(r.seed.to_string());
            rec.extend(names.iter().map(|n| cell(&r.metrics, n)));
            w.write_record(&rec)?;
        }
        for a in &self.aggregates {
            for (label, m) in [("mean", &a.mean), ("std", &a.std)] {
                let mut rec =
                    vec![label.to_owned(), self.path.clone(), a.value.to_string(), String::new(), String::new()];
                rec.extend(names.iter().map(|n| cell(m, n)));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths() {
        let mut doc: toml::Value = toml::from_str("a = 1\n[[b]]\nc = 0.5\nd = [1, 2]\n").unwrap();
        set_param(&mut doc, "b[0].c", 0.25).unwrap();
        set_param(&mut doc, "b[0].d[1]", 7.0).unwrap();
        set_param(&mut doc, "b[0].e", 3.0).unwrap();
        assert_eq!(doc["b"][0]["c"].as_float(), Some(0.25));
        assert_eq!(doc["b"][0]["d"][1].as_integer(), Some(7));
        assert_eq!(doc["b"][0]["e"].as_integer(), Some(3));
        for bad in ["x.y", "b[3].c", "b", "b[0].c[", "", "a.b"] {
            assert!(set_param(&mut doc, bad, 1.0).is_err(), "{bad}");
        }
    }

    #[test]
    fn replication_seeds_differ() {
        assert_ne!(replication_seed(1, 0), replication_seed(1, 1));
        assert_eq!(replication_seed(1, 0), replication_seed(1, 0));
    }
}
