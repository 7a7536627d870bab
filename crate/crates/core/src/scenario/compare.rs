//! Paired-seed comparison of two batches.

use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::batch::{BatchResult, Exceedance, BANDS};
use super::metrics::RunMetrics;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("batches differ in replica count ({a} vs {b})")]
    ReplicaCount { a: usize, b: usize },
    #[error("batches are not paired: seed {a} against seed {b}")]
    Unpaired { a: u64, b: u64 },
}

/// The columns a comparison needs, per run.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSummary {
    pub label: String,
    pub seeds: Vec<u64>,
    pub errors_pct: Vec<f64>,
    pub convergence: Vec<Option<f64>>,
}

impl BatchSummary {
    pub fn from_runs(label: impl Into<String>, runs: &[RunMetrics]) -> Self {
        Self {
            label: label.into(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            errors_pct: runs.iter().map(|r| r.abs_error_pct).collect(),
            convergence: runs.iter().map(|r| r.convergence_time).collect(),
        }
    }

    pub fn from_batch(batch: &BatchResult) -> Self {
        Self::from_runs(batch.name.clone(), &batch.runs)
    }

    /// Reads `runs.csv` from a batch output directory.
    pub fn load(dir: &Path) -> Result<Self, CompareError> {
        let path = dir.join("runs.csv");
        let shown = path.display().to_string();
        let text = fs::read_to_string(&path).map_err(|source| CompareError::Io {
            path: shown.clone(),
            source,
        })?;
        let bad = |reason: String| CompareError::Format {
            path: shown.clone(),
            reason,
        };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
        let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| bad(format!("missing column {name}")));
        let (c_seed, c_err, c_conv) = (col("seed")?, col("abs_error_pct")?, col("convergence_time_s")?);
        let mut out = Self {
            label: dir.display().to_string(),
            seeds: Vec::new(),
            errors_pct: Vec::new(),
            convergence: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(bad(format!("row {} has {} fields", i + 1, f.len())));
            }
            out.seeds
                .push(f[c_seed].parse().map_err(|_| bad(format!("row {}: bad seed", i + 1)))?);
            out.errors_pct
                .push(f[c_err].parse().map_err(|_| bad(format!("row {}: bad error", i + 1)))?);
            out.convergence.push(if f[c_conv].is_empty() {
                None
            } else {
                Some(f[c_conv].parse().map_err(|_| bad(format!("row {}: bad convergence time", i + 1)))?)
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandComparison {
    pub a: Exceedance,
    pub b: Exceedance,
    /// Seeds exceeding the band in A only, and in B only.
    pub only_a: u64,
    pub only_b: u64,
}

impl BandComparison {
    pub fn delta(&self) -> f64 {
        self.b.p - self.a.p
    }

    pub fn intervals_overlap(&self) -> bool {
        self.a.overlaps(&self.b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub n: usize,
    pub bands: Vec<BandComparison>,
    pub mean_convergence_a: Option<f64>,
    pub mean_convergence_b: Option<f64>,
    pub identical: bool,
}

fn mean_some(xs: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = xs.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn compare(a: &BatchSummary, b: &BatchSummary) -> Result<Comparison, CompareError> {
    if a.seeds.len() != b.seeds.len() {
        return Err(CompareError::ReplicaCount {
            a: a.seeds.len(),
            b: b.seeds.len(),
        });
    }
    if let Some((x, y)) = a.seeds.iter().zip(&b.seeds).find(|(x, y)| x != y) {
        return Err(CompareError::Unpaired { a: *x, b: *y });
    }
    let bands = BANDS
        .iter()
        .map(|&band| {
            let (mut only_a, mut only_b) = (0, 0);
            for (ea, eb) in a.errors_pct.iter().zip(&b.errors_pct) {
                match (*ea > band, *eb > band) {
                    (true, false) => only_a += 1,
                    (false, true) => only_b += 1,
                    _ => {}
                }
            }
            BandComparison {
                a: Exceedance::of(&a.errors_pct, band),
                b: Exceedance::of(&b.errors_pct, band),
                only_a,
                only_b,
            }
        })
        .collect();
    Ok(Comparison {
        label_a: a.label.clone(),
        label_b: b.label.clone(),
        n: a.seeds.len(),
        bands,
        mean_convergence_a: mean_some(&a.convergence),
        mean_convergence_b: mean_some(&b.convergence),
        identical: a.errors_pct == b.errors_pct && a.convergence == b.convergence,
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "A: {}", self.label_a)?;
        writeln!(f, "B: {}", self.label_b)?;
        writeln!(f, "paired seeds: {}", self.n)?;
        for band in &self.bands {
            writeln!(
                f,
                "P(|error| > {:.0}%): A {:.4} [{:.4}, {:.4}]  B {:.4} [{:.4}, {:.4}]  delta {:+.4}  discordant A-only {} B-only {}  intervals {}",
                band.a.band_pct,
                band.a.p,
                band.a.lo,
                band.a.hi,
                band.b.p,
                band.b.lo,
                band.b.hi,
                band.delta(),
                band.only_a,
                band.only_b,
                if band.intervals_overlap() { "overlap" } else { "disjoint" }
            )?;
        }
        let show = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4} s"));
        writeln!(
            f,
            "mean convergence time: A {}  B {}",
            show(self.mean_convergence_a),
            show(self.mean_convergence_b)
        )?;
        if self.identical {
            writeln!(f, "batches are identical")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(errors: &[f64]) -> BatchSummary {
        BatchSummary {
            label: "x".into(),
            seeds: (0..errors.len() as u64).collect(),
            errors_pct: errors.to_vec(),
            convergence: vec![Some(1.5); errors.len()],
        }
    }

    #[test]
    fn identical_batches_have_zero_deltas() {
        let a = summary(&[1.0, 6.0, 12.0]);
        let c = compare(&a, &a).unwrap();
        assert!(c.identical);
        assert!(c.bands.iter().all(|b| b.delta() == 0.0 && b.only_a == 0 && b.only_b == 0));
    }

    #[test]
    fn mismatched_counts_rejected() {
        let err = compare(&summary(&[1.0]), &summary(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, CompareError::ReplicaCount { a: 1, b: 2 }));
    }

    #[test]
    fn discordant_pairs() {
        let c = compare(&summary(&[6.0, 1.0, 7.0]), &summary(&[1.0, 1.0, 8.0])).unwrap();
        assert_eq!((c.bands[0].only_a, c.bands[0].only_b), (1, 0));
    }
}
