use std::collections::BTreeMap;
use std::path::Path;

use super::{auroc, operating_point_metrics, HarnessError};

/// Marker written for an undefined value (NPV with no negative predictions,
/// std over fewer than two seeds).
pub const NA: &str = "NA";

pub const METRICS_HEADER: [&str; 8] = ["method", "rate", "seed", "auroc", "bal_acc", "sens", "spec", "npv"];

/// One evaluated (method, rate, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub rate: f64,
    pub seed: u64,
    pub auroc: f64,
    pub bal_acc: f64,
    pub sens: f64,
    pub spec: f64,
    pub npv: Option<f64>,
}

impl MetricRow {
    /// Test metrics with the operating point fixed on validation scores.
    pub fn compute(
        method: &str,
        rate: f64,
        seed: u64,
        (scores, labels): (&[f64], &[u8]),
        (val_scores, val_labels): (&[f64], &[u8]),
        target_sensitivity: f64,
    ) -> Result<Self, HarnessError> {
        let op = operating_point_metrics(scores, labels, target_sensitivity, val_scores, val_labels)?;
        Ok(Self {
            method: method.to_string(),
            rate,
            seed,
            auroc: auroc(scores, labels)?,
            bal_acc: op.balanced_accuracy,
            sens: op.sensitivity,
            spec: op.specificity,
            npv: op.npv,
        })
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| NA.to_string(), |v| format!("{v:.6}"))
}

fn parse_opt(s: &str) -> Result<Option<f64>, HarnessError> {
    if s == NA {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| HarnessError::InvalidInput(format!("bad number {s:?}")))
}

/// Mean and sample standard deviation of one metric over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// `None` with fewer than two values.
    pub std: Option<f64>,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(Self { mean, std, n })
    }
}

/// Summary of one (method, rate) over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub rate: f64,
    pub auroc: Aggregate,
    pub bal_acc: Aggregate,
    pub sens: Aggregate,
    pub spec: Aggregate,
    /// Over the seeds where NPV is defined.
    pub npv: Option<Aggregate>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn push(&mut self, row: MetricRow) -> Result<(), HarnessError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let values = [row.auroc, row.bal_acc, row.sens, row.spec, row.npv.unwrap_or(0.0)];
        if !values.into_iter().all(in_unit) || !(row.rate > 0.0 && row.rate <= 1.0) {
            return Err(HarnessError::InvalidInput(format!("metric outside [0, 1] in {row:?}")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, method: &str, rate: f64, seed: u64) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.rate - rate).abs() < 1e-12 && r.seed == seed)
    }

    /// Rows of one method at one rate, in seed order of insertion.
    pub fn select(&self, method: &str, rate: f64) -> Vec<&MetricRow> {
        self.rows
            .iter()
            .filter(|r| r.method == method && (r.rate - rate).abs() < 1e-12)
            .collect()
    }

    /// Mean AUROC of one method at one rate over all its seeds.
    pub fn mean_auroc(&self, method: &str, rate: f64) -> Option<f64> {
        Aggregate::of(&self.select(method, rate).iter().map(|r| r.auroc).collect::<Vec<_>>()).map(|a| a.mean)
    }

    /// Groups by (method, rate) in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(String, u64)> = Vec::new();
        let mut groups: BTreeMap<(String, u64), Vec<&MetricRow>> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.method.clone(), r.rate.to_bits());
            if !groups.contains_key(&key) {
                keys.push(key.clone());
            }
            groups.entry(key).or_default().push(r);
        }
        keys.into_iter()
            .map(|key| {
                let rows = &groups[&key];
                let col = |f: fn(&MetricRow) -> f64| Aggregate::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("non-empty");
                let npv: Vec<f64> = rows.iter().filter_map(|r| r.npv).collect();
                SummaryRow {
                    method: key.0,
                    rate: f64::from_bits(key.1),
                    auroc: col(|r| r.auroc),
                    bal_acc: col(|r| r.bal_acc),
                    sens: col(|r| r.sens),
                    spec: col(|r| r.spec),
                    npv: Aggregate::of(&npv),
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(METRICS_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                format!("{}", r.rate),
                r.seed.to_string(),
                format!("{:.6}", r.auroc),
                format!("{:.6}", r.bal_acc),
                format!("{:.6}", r.sens),
                format!("{:.6}", r.spec),
                fmt_opt(r.npv),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| HarnessError::Io(e.to_string()))
    }

    pub fn read_csv(path: &Path) -> Result<Self, HarnessError> {
        let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.iter().ne(METRICS_HEADER) {
            return Err(HarnessError::InvalidInput(format!("unexpected header {header:?}")));
        }
        let mut table = Self::default();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let num = |i: usize| parse_opt(&rec[i])?.ok_or_else(|| HarnessError::InvalidInput(format!("missing {}", METRICS_HEADER[i])));
            table.push(MetricRow {
                method: rec[0].to_string(),
                rate: num(1)?,
                seed: rec[2]
                    .parse()
                    .map_err(|_| HarnessError::InvalidInput(format!("bad seed {:?}", &rec[2])))?,
                auroc: num(3)?,
                bal_acc: num(4)?,
                sens: num(5)?,
                spec: num(6)?,
                npv: parse_opt(&rec[7])?,
            })?;
        }
        Ok(table)
    }

    /// `method,rate,n,<metric>_mean,<metric>_std,...` with `NA` for absent
    /// values.
    pub fn write_summary_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["method".to_string(), "rate".into(), "n".into()];
        for m in &METRICS_HEADER[3..] {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        w.write_record(&header).map_err(csv_err)?;
        for s in self.summary() {
            let mut rec = vec![s.method.clone(), format!("{}", s.rate), s.auroc.n.to_string()];
            for a in [Some(s.auroc), Some(s.bal_acc), Some(s.sens), Some(s.spec), s.npv] {
                rec.push(fmt_opt(a.map(|a| a.mean)));
                rec.push(fmt_opt(a.and_then(|a| a.std)));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| HarnessError::Io(e.to_string()))
    }

    /// Human-readable `mean ± std` table.
    pub fn render_summary(&self) -> String {
        let pm = |a: Aggregate| match a.std {
            Some(s) => format!("{:.3} ± {:.3}", a.mean, s),
            None => format!("{:.3}", a.mean),
        };
        let mut out = format!(
            "{:<18} {:>6} {:>3}  {:>15} {:>15} {:>15} {:>15} {:>15}\n",
            "method", "rate", "n", "auroc", "bal_acc", "sens", "spec", "npv"
        );
        for s in self.summary() {
            out.push_str(&format!(
                "{:<18} {:>6} {:>3}  {:>15} {:>15} {:>15} {:>15} {:>15}\n",
                s.method,
                s.rate,
                s.auroc.n,
                pm(s.auroc),
                pm(s.bal_acc),
                pm(s.sens),
                pm(s.spec),
                s.npv.map_or_else(|| NA.to_string(), pm)
            ));
        }
        out
    }
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Io(e.to_string())
}
