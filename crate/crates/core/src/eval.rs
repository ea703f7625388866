//! Comparison of simulated runs against measured ones (CodeCarbon CSV output).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::engine::SimulationResult;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("true values have zero variance")]
    ZeroVariance,
    #[error("true value at index {0} is zero")]
    ZeroTrueValue(usize),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: column {column:?} is not a non-negative number: {value:?}")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("run count mismatch for {label:?}: {real} real vs {simulated} simulated")]
    CountMismatch { label: String, real: usize, simulated: usize },
    #[error("label mismatch at pair {index}: {real:?} vs {simulated:?}")]
    LabelMismatch { index: usize, real: String, simulated: String },
    #[error("{0}")]
    Csv(String),
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        EvalError::Csv(e.to_string())
    }
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y_true, y_pred, 2)?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean absolute percentage error, in percent. Refuses zero true values.
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y_true, y_pred, 1)?;
    if let Some(i) = y_true.iter().position(|&y| y == 0.0) {
        return Err(EvalError::ZeroTrueValue(i));
    }
    let sum: f64 = y_true.iter().zip(y_pred).map(|(y, p)| ((y - p) / y).abs()).sum();
    Ok(100.0 * sum / y_true.len() as f64)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y_true, y_pred, 1)?;
    let mse = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / y_true.len() as f64;
    Ok(mse.sqrt())
}

fn check_lengths(a: &[f64], b: &[f64], min: usize) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < min {
        return Err(EvalError::TooFewSamples { needed: min, got: a.len() });
    }
    Ok(())
}

/// One measured (or simulated) benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRun {
    pub run_id: String,
    pub label: String,
    pub energy_kwh: f64,
    pub emissions_kg: f64,
}

impl MeasurementRun {
    /// Expresses a simulation's totals in the units CodeCarbon reports.
    pub fn from_simulation(run_id: impl Into<String>, label: impl Into<String>, result: &SimulationResult) -> Self {
        Self {
            run_id: run_id.into(),
            label: label.into(),
            energy_kwh: result.total_energy_j() / crate::carbon::JOULES_PER_KWH,
            emissions_kg: result.total_carbon_g() / 1000.0,
        }
    }
}

/// Column names to read from a measurement CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    /// Run identifier column; falls back to the row number when absent.
    pub run_id: String,
    /// Benchmark label column; falls back to an empty label when absent.
    pub label: String,
    pub energy_kwh: String,
    pub emissions_kg: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            run_id: "run_id".into(),
            label: "project_name".into(),
            energy_kwh: "cpu_energy".into(),
            emissions_kg: "emissions".into(),
        }
    }
}

pub fn parse_measurements(text: &str, columns: &ColumnMap) -> Result<Vec<MeasurementRun>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| find(name).ok_or_else(|| EvalError::MissingColumn(name.to_string()));
    let energy_idx = required(&columns.energy_kwh)?;
    let emissions_idx = required(&columns.emissions_kg)?;
    let run_idx = find(&columns.run_id);
    let label_idx = find(&columns.label);

    let mut runs = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let number = |idx: usize, column: &str| {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| EvalError::NonNumeric {
                    row: row + 1,
                    column: column.to_string(),
                    value: raw.to_string(),
                })
        };
        runs.push(MeasurementRun {
            run_id: run_idx
                .and_then(|i| record.get(i))
                .map_or_else(|| (row + 1).to_string(), str::to_string),
            label: label_idx.and_then(|i| record.get(i)).unwrap_or("").to_string(),
            energy_kwh: number(energy_idx, &columns.energy_kwh)?,
            emissions_kg: number(emissions_idx, &columns.emissions_kg)?,
        });
    }
    Ok(runs)
}

pub fn load_measurements(path: &Path, columns: &ColumnMap) -> Result<Vec<MeasurementRun>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Csv(format!("{}: {e}", path.display())))?;
    parse_measurements(&text, columns)
}

/// Renders runs in the default CodeCarbon column layout.
pub fn render_measurements(runs: &[MeasurementRun]) -> String {
    let mut out = String::from("run_id,project_name,cpu_energy,emissions\n");
    for r in runs {
        out.push_str(&format!("{},{},{:e},{:e}\n", r.run_id, r.label, r.energy_kwh, r.emissions_kg));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    EnergyKwh,
    EmissionsKg,
}

impl Quantity {
    pub fn of(self, run: &MeasurementRun) -> f64 {
        match self {
            Quantity::EnergyKwh => run.energy_kwh,
            Quantity::EmissionsKg => run.emissions_kg,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantity::EnergyKwh => "energy_kwh",
            Quantity::EmissionsKg => "emissions_kg",
        }
    }
}

impl std::str::FromStr for Quantity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "energy_kwh" => Ok(Quantity::EnergyKwh),
            "emissions_kg" => Ok(Quantity::EmissionsKg),
            other => Err(format!("unknown quantity {other:?} (expected energy_kwh or emissions_kg)")),
        }
    }
}

/// R², MAPE and RMSE of one benchmark. `r2` is `None` when fewer than two
/// samples or constant true values make it undefined; `mape_percent` is
/// `None` when a true value is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub quantity: Quantity,
    pub r2: Option<f64>,
    pub mape_percent: Option<f64>,
    pub rmse: f64,
    pub n: usize,
}

pub const METRICS_HEADER: &str = "label,quantity,n,r2,mape_percent,rmse";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.label,
            self.quantity.name(),
            self.n,
            opt(self.r2),
            opt(self.mape_percent),
            self.rmse
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.3}"));
        write!(
            f,
            "{:<20} {:<13} n={:<3} R2={:>8}  MAPE={:>8}%  RMSE={:.3e}",
            self.label,
            self.quantity.name(),
            self.n,
            show(self.r2),
            show(self.mape_percent),
            self.rmse
        )
    }
}

fn sort_runs(runs: &mut [MeasurementRun]) {
    runs.sort_by(|a, b| match (a.run_id.parse::<f64>(), b.run_id.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.run_id.cmp(&b.run_id),
    });
}

/// Compares one benchmark's runs. Both sides are sorted by run id and paired by position.
pub fn compare(real: &[MeasurementRun], simulated: &[MeasurementRun], quantity: Quantity) -> Result<MetricsReport, EvalError> {
    let label = real.first().map(|r| r.label.clone()).unwrap_or_default();
    if real.len() != simulated.len() {
        return Err(EvalError::CountMismatch {
            label,
            real: real.len(),
            simulated: simulated.len(),
        });
    }
    let mut real = real.to_vec();
    let mut simulated = simulated.to_vec();
    sort_runs(&mut real);
    sort_runs(&mut simulated);
    for (index, (r, s)) in real.iter().zip(&simulated).enumerate() {
        if r.label != s.label || r.label != label {
            return Err(EvalError::LabelMismatch {
                index,
                real: r.label.clone(),
                simulated: s.label.clone(),
            });
        }
    }
    let y_true: Vec<f64> = real.iter().map(|r| quantity.of(r)).collect();
    let y_pred: Vec<f64> = simulated.iter().map(|r| quantity.of(r)).collect();
    let r2 = match r2(&y_true, &y_pred) {
        Ok(v) => Some(v),
        Err(EvalError::ZeroVariance | EvalError::TooFewSamples { .. }) => None,
        Err(e) => return Err(e),
    };
    let mape = match mape(&y_true, &y_pred) {
        Ok(v) => Some(v),
        Err(EvalError::ZeroTrueValue(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        label,
        quantity,
        r2,
        mape_percent: mape,
        rmse: rmse(&y_true, &y_pred)?,
        n: y_true.len(),
    })
}

fn group(runs: &[MeasurementRun]) -> BTreeMap<&str, Vec<MeasurementRun>> {
    let mut groups: BTreeMap<&str, Vec<MeasurementRun>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.label.as_str()).or_default().push(r.clone());
    }
    groups
}

/// Splits both sides by label and compares each benchmark separately.
pub fn compare_by_label(
    real: &[MeasurementRun],
    simulated: &[MeasurementRun],
    quantity: Quantity,
) -> Result<Vec<MetricsReport>, EvalError> {
    let real_groups = group(real);
    let sim_groups = group(simulated);
    if let Some(label) = sim_groups.keys().find(|l| !real_groups.contains_key(*l)) {
        return Err(EvalError::CountMismatch {
            label: label.to_string(),
            real: 0,
            simulated: sim_groups[label].len(),
        });
    }
    real_groups
        .iter()
        .map(|(label, runs)| {
            let sims = sim_groups.get(label).map_or(&[][..], Vec::as_slice);
            compare(runs, sims, quantity)
        })
        .collect()
}

/// Five-number summary for boxplots, quartiles by linear interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some(Quartiles {
        min: v[0],
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: v[v.len() - 1],
    })
}

/// Plot-ready quartile rows (`label,source,min,q1,median,q3,max`) for both sides.
pub fn render_quartiles(real: &[MeasurementRun], simulated: &[MeasurementRun], quantity: Quantity) -> String {
    let mut out = String::from("label,source,min,q1,median,q3,max\n");
    for (source, runs) in [("real", real), ("simulated", simulated)] {
        for (label, group) in group(runs) {
            let values: Vec<f64> = group.iter().map(|r| quantity.of(r)).collect();
            if let Some(q) = quartiles(&values) {
                out.push_str(&format!(
                    "{label},{source},{:e},{:e},{:e},{:e},{:e}\n",
                    q.min, q.q1, q.median, q.q3, q.max
                ));
            }
        }
    }
    out
}

pub fn render_metrics(reports: &[MetricsReport]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2(&y, &[3.0, 2.0, 1.0]).unwrap(), -3.0);
        assert_eq!(r2(&y, &[1.0]), Err(EvalError::LengthMismatch(3, 1)));
        assert_eq!(r2(&[5.0, 5.0], &[1.0, 2.0]), Err(EvalError::ZeroVariance));
        assert!(matches!(r2(&[1.0], &[1.0]), Err(EvalError::TooFewSamples { .. })));
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!((mape(&[100.0], &[77.0]).unwrap() - 23.0).abs() < 1e-12);
        assert_eq!(mape(&[2.0, 4.0], &[1.0, 5.0]).unwrap(), 37.5);
        assert_eq!(mape(&[1.0, 0.0], &[1.0, 1.0]), Err(EvalError::ZeroTrueValue(1)));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), (12.5f64).sqrt());
        assert_eq!(rmse(&[1.0], &[2.0]).unwrap(), 1.0);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[]).is_err());
    }

    const CODECARBON: &str = "timestamp,project_name,run_id,duration,emissions,cpu_energy,energy_consumed\n\
        2025-01-01,resnet18,2,3.1,2.9e-6,2.8e-5,3.0e-5\n\
        2025-01-01,resnet18,1,3.0,3.1e-6,3.2e-5,3.4e-5\n";

    #[test]
    fn loads_codecarbon_rows() {
        let runs = parse_measurements(CODECARBON, &ColumnMap::default()).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].run_id, "2");
        assert_eq!(runs[0].label, "resnet18");
        assert_eq!(runs[0].energy_kwh, 2.8e-5);
        assert_eq!(runs[1].emissions_kg, 3.1e-6);

        assert!(parse_measurements("", &ColumnMap::default()).unwrap().is_empty());
        assert!(parse_measurements("cpu_energy,emissions\n", &ColumnMap::default()).unwrap().is_empty());
    }

    #[test]
    fn column_mapping() {
        let renamed = CODECARBON.replace("cpu_energy", "cpu_kwh");
        assert_eq!(
            parse_measurements(&renamed, &ColumnMap::default()),
            Err(EvalError::MissingColumn("cpu_energy".into()))
        );
        let map = ColumnMap {
            energy_kwh: "cpu_kwh".into(),
            ..Default::default()
        };
        assert_eq!(
            parse_measurements(&renamed, &map).unwrap(),
            parse_measurements(CODECARBON, &ColumnMap::default()).unwrap()
        );
        let bad = "cpu_energy,emissions\nabc,1\n";
        assert!(matches!(
            parse_measurements(bad, &ColumnMap::default()),
            Err(EvalError::NonNumeric { row: 1, .. })
        ));
    }

    fn run(id: &str, label: &str, e: f64) -> MeasurementRun {
        MeasurementRun {
            run_id: id.into(),
            label: label.into(),
            energy_kwh: e,
            emissions_kg: e * 0.1,
        }
    }

    #[test]
    fn compare_pairs_sorted_runs() {
        let real = vec![run("3", "m", 3.0), run("1", "m", 1.0), run("2", "m", 2.0)];
        let sim = vec![run("1", "m", 3.0), run("2", "m", 2.0), run("3", "m", 1.0)];
        let rep = compare(&real, &sim, Quantity::EnergyKwh).unwrap();
        assert_eq!(rep.r2, Some(-3.0));
        assert_eq!(rep.n, 3);
        assert_eq!(rep.rmse, (8.0f64 / 3.0).sqrt());

        let same = compare(&real, &real, Quantity::EmissionsKg).unwrap();
        assert_eq!((same.r2, same.mape_percent, same.rmse), (Some(1.0), Some(0.0), 0.0));

        assert!(matches!(
            compare(&real, &sim[..2], Quantity::EnergyKwh),
            Err(EvalError::CountMismatch { .. })
        ));
        let other = vec![run("1", "x", 3.0), run("2", "m", 2.0), run("3", "m", 1.0)];
        assert!(matches!(
            compare(&real, &other, Quantity::EnergyKwh),
            Err(EvalError::LabelMismatch { index: 0, .. })
        ));
    }

    #[test]
    fn constant_prediction_is_not_better_than_mean() {
        let real = vec![run("1", "m", 1.0), run("2", "m", 1.3), run("3", "m", 0.8)];
        let sim = vec![run("1", "m", 1.0), run("2", "m", 1.0), run("3", "m", 1.0)];
        let rep = compare(&real, &sim, Quantity::EnergyKwh).unwrap();
        assert!(rep.r2.unwrap() <= 0.0);
    }

    #[test]
    fn per_label_reports() {
        let real = vec![run("1", "a", 1.0), run("2", "a", 2.0), run("1", "b", 5.0)];
        let sim = vec![run("1", "b", 5.0), run("1", "a", 1.0), run("2", "a", 2.0)];
        let reps = compare_by_label(&real, &sim, Quantity::EnergyKwh).unwrap();
        assert_eq!(reps.len(), 2);
        assert_eq!(reps[0].label, "a");
        assert_eq!(reps[1].r2, None);
        assert_eq!(reps[1].rmse, 0.0);
    }

    #[test]
    fn quartile_summary() {
        let q = quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((q.min, q.q1, q.median, q.q3, q.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        let q = quartiles(&[1.0, 2.0]).unwrap();
        assert_eq!(q.median, 1.5);
        assert!(quartiles(&[]).is_none());
    }

    #[test]
    fn measurement_csv_round_trip() {
        let runs = vec![run("1", "a", 2.8e-5)];
        let parsed = parse_measurements(&render_measurements(&runs), &ColumnMap::default()).unwrap();
        assert_eq!(parsed, runs);
    }
}
