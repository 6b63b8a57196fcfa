use std::collections::BTreeMap;

/// Observations of one quantity, kept raw so summaries are exact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub unit: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }

    /// Nearest-rank quantile.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
        Some(v[rank - 1])
    }
}

/// Named scalar values and series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    values: BTreeMap<String, (f64, String)>,
    series: BTreeMap<String, Series>,
}

impl Metrics {
    pub fn set(&mut self, name: &str, value: f64, unit: &str) {
        self.values.insert(name.to_owned(), (value, unit.to_owned()));
    }

    pub fn incr(&mut self, name: &str, by: f64, unit: &str) {
        let e = self.values.entry(name.to_owned()).or_insert_with(|| (0.0, unit.to_owned()));
        e.0 += by;
    }

    pub fn observe(&mut self, name: &str, value: f64, unit: &str) {
        let s =
            self.series.entry(name.to_owned()).or_insert_with(|| Series { unit: unit.to_owned(), values: Vec::new() });
        s.values.push(value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).map(|v| v.0)
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty() && self.series.is_empty()
    }

    /// Flattened `(metric, value, unit)` rows: scalars first, then series
    /// summaries, each in name order.
    pub fn rows(&self) -> Vec<(String, String, String)> {
        let mut rows: Vec<(String, String, String)> =
            self.values.iter().map(|(k, (v, u))| (k.clone(), fmt_value(*v), u.clone())).collect();
        for (name, s) in &self.series {
            rows.push((format!("{name}.count"), s.values.len().to_string(), "count".into()));
            let stats =
                [("mean", s.mean()), ("p50", s.quantile(0.5)), ("p95", s.quantile(0.95)), ("max", s.quantile(1.0))];
            for (label, v) in stats {
                if let Some(v) = v {
                    rows.push((format!("{name}.{label}"), fmt_value(v), s.unit.clone()));
                }
            }
        }
        rows
    }
}

pub(crate) fn fmt_value(v: f64) -> String {
    if v.is_finite() && v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
