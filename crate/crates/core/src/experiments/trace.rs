use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "sweep_value,mean,stderr";

/// Ensemble-averaged signal over a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalTrace {
    pub parameter: String,
    pub sweep: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_realizations: usize,
    pub seed: u64,
    /// SHA-256 of the config that produced this trace, if known.
    pub config_hash: Option<String>,
}

impl SignalTrace {
    pub fn len(&self) -> usize {
        self.sweep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sweep.is_empty()
    }

    /// `sweep_value,mean,stderr` rows, LF line endings, shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * (self.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for i in 0..self.len() {
            s.push_str(&format!("{:?},{:?},{:?}\n", self.sweep[i], self.mean[i], self.stderr[i]));
        }
        s
    }

    /// Parse the output of [`Self::to_csv`]. Metadata is not stored in the CSV.
    pub fn from_csv(text: &str, parameter: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| Error::Config(format!("csv: {e}")))?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER.split(',').collect::<Vec<_>>() {
            return Err(Error::Config(format!("csv header must be `{CSV_HEADER}`")));
        }
        let (mut sweep, mut mean, mut stderr) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("csv: {e}")))?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("csv row {}: bad number in column {}", row + 2, k + 1)))
            };
            sweep.push(field(0)?);
            mean.push(field(1)?);
            stderr.push(field(2)?);
        }
        Ok(Self { parameter: parameter.to_string(), sweep, mean, stderr, n_realizations: 0, seed: 0, config_hash: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let t = SignalTrace {
            parameter: "lock_us".into(),
            sweep: vec![0.0, 0.1, 1.0 / 3.0],
            mean: vec![0.999_999_999_999_1, -1e-300, 2.5e17],
            stderr: vec![0.0, f64::MIN_POSITIVE, 1e-3],
            n_realizations: 4,
            seed: 9,
            config_hash: None,
        };
        let csv = t.to_csv();
        assert!(csv.starts_with("sweep_value,mean,stderr\n"));
        assert!(!csv.contains('\r'));
        let back = SignalTrace::from_csv(&csv, "lock_us").unwrap();
        assert_eq!(back.sweep, t.sweep);
        assert_eq!(back.mean, t.mean);
        assert_eq!(back.stderr, t.stderr);
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(SignalTrace::from_csv("a,b,c\n1,2,3\n", "x").is_err());
        assert!(SignalTrace::from_csv("sweep_value,mean,stderr\n1,zz,3\n", "x").is_err());
        assert!(SignalTrace::from_csv("sweep_value,mean,stderr\r\n1,2,3\r\n", "x").is_ok());
    }
}
