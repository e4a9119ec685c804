//! Plot-ready tables: rate against SNR, one column per method.

use std::path::{Path, PathBuf};

use crate::error::{write_file, CliError};
use crate::runner::{read_results, ResultRow};

/// Rows of a plot table; `snr[i][j]` is method `j` at `rates[i]`, averaged
/// over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub methods: Vec<String>,
    pub rates: Vec<f64>,
    pub snr: Vec<Vec<f64>>,
}

impl PlotTable {
    /// Builds the table from result rows. With `methods` unset every method
    /// in the rows is used, in order of first appearance.
    pub fn from_rows(rows: &[ResultRow], methods: Option<&[String]>) -> Result<Self, CliError> {
        let methods: Vec<String> = match methods {
            Some(m) => m.to_vec(),
            None => {
                let mut seen: Vec<String> = Vec::new();
                for r in rows {
                    if !seen.contains(&r.method) {
                        seen.push(r.method.clone());
                    }
                }
                seen
            }
        };
        let mut rates: Vec<f64> = rows.iter().map(|r| r.rate_bits).collect();
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        if methods.is_empty() || rates.is_empty() {
            return Err(CliError::Results(PathBuf::new(), "no results".into()));
        }

        let mut snr = Vec::with_capacity(rates.len());
        for &rate in &rates {
            let mut line = Vec::with_capacity(methods.len());
            for method in &methods {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|r| &r.method == method && r.rate_bits == rate && r.is_ok())
                    .filter_map(ResultRow::snr)
                    .collect();
                if values.is_empty() {
                    return Err(CliError::MissingMethod { method: method.clone(), rate_bits: rate });
                }
                line.push(values.iter().sum::<f64>() / values.len() as f64);
            }
            snr.push(line);
        }
        Ok(Self { methods, rates, snr })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rate_bits");
        for m in &self.methods {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for (rate, line) in self.rates.iter().zip(&self.snr) {
            out.push_str(&rate.to_string());
            for v in line {
                out.push(',');
                if v.is_infinite() {
                    out.push_str("lossless");
                } else {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Writes the plot table for one results file to `out_dir` and returns its
/// path. `fig1.results.csv` becomes `fig1.plot.csv`.
pub fn emit_plot_data(results: &Path, out_dir: &Path, methods: Option<&[String]>) -> Result<PathBuf, CliError> {
    let rows = read_results(results)?;
    let table = PlotTable::from_rows(&rows, methods).map_err(|e| match e {
        CliError::Results(_, msg) => CliError::Results(results.into(), msg),
        other => other,
    })?;
    let stem = results.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let stem = stem.strip_suffix(".results").unwrap_or(stem);
    let path = out_dir.join(format!("{stem}.plot.csv"));
    write_file(&path, &table.to_csv())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(method: &str, rate: f64, seed: u64, snr: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            rate_bits: rate,
            n: None,
            k: None,
            t: 1,
            seed,
            avg_distortion: Some(1.0),
            snr_db: Some(snr.to_string()),
            status: "ok".into(),
        }
    }

    #[test]
    fn averages_seeds_and_sorts_rates() {
        let rows = vec![ok("b", 2.0, 1, 4.0), ok("a", 2.0, 1, 1.0), ok("a", 1.0, 1, 2.0), ok("a", 1.0, 2, 3.0), ok("b", 1.0, 1, 0.0)];
        let t = PlotTable::from_rows(&rows, None).unwrap();
        assert_eq!(t.methods, ["b", "a"]);
        assert_eq!(t.rates, [1.0, 2.0]);
        assert_eq!(t.snr, [[0.0, 2.5], [4.0, 1.0]]);
        assert_eq!(t.to_csv(), "rate_bits,b,a\n1,0,2.5\n2,4,1\n");
    }

    #[test]
    fn single_cell_is_one_by_two() {
        let t = PlotTable::from_rows(&[ok("a", 1.0, 0, 3.0)], None).unwrap();
        assert_eq!(t.to_csv().lines().count(), 2);
        assert_eq!(t.to_csv().lines().nth(1).unwrap().split(',').count(), 2);
    }

    #[test]
    fn missing_method_or_rate_is_an_error() {
        let rows = vec![ok("a", 1.0, 1, 2.0), ok("a", 2.0, 1, 3.0), ok("b", 1.0, 1, 0.0)];
        let err = PlotTable::from_rows(&rows, None).unwrap_err();
        assert!(matches!(err, CliError::MissingMethod { ref method, rate_bits } if method == "b" && rate_bits == 2.0));
        let only_a = ["a".to_string(), "c".to_string()];
        let err = PlotTable::from_rows(&rows, Some(&only_a)).unwrap_err();
        assert!(matches!(err, CliError::MissingMethod { ref method, .. } if method == "c"));

        let mut failed = ok("a", 3.0, 1, 0.0);
        failed.status = "failed".into();
        let err = PlotTable::from_rows(&[ok("a", 1.0, 1, 1.0), failed], None).unwrap_err();
        assert!(matches!(err, CliError::MissingMethod { rate_bits, .. } if rate_bits == 3.0));
    }
}
