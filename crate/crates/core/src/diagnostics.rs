//! Comparing posteriors: two-sample KS statistics, summaries and plot data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::hmc::PosteriorSamples;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Largest distance between the empirical CDFs of `a` and `b`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        // step past every copy of the smaller value in both samples before
        // comparing, so ties never open a spurious gap
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Median of a nonempty slice; the mean of the middle pair for even lengths.
pub fn median(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptySample);
    }
    let s = sorted(v);
    let n = s.len();
    Ok(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub per_marginal: Vec<(String, f64)>,
    pub median_ks: f64,
}

impl KsReport {
    pub fn new(per_marginal: Vec<(String, f64)>) -> Result<Self> {
        let ks: Vec<f64> = per_marginal.iter().map(|p| p.1).collect();
        let median_ks = median(&ks)?;
        Ok(KsReport {
            per_marginal,
            median_ks,
        })
    }

    /// KS for every parameter named in both posteriors, in `a`'s order.
    pub fn compare(a: &PosteriorSamples, b: &PosteriorSamples) -> Result<Self> {
        let mut out = Vec::new();
        for (j, name) in a.names.iter().enumerate() {
            if let Some(col) = b.column_by_name(name) {
                out.push((name.clone(), ks_two_sample(&a.column(j), &col)?));
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidData(
                "the posteriors share no parameter names".into(),
            ));
        }
        Self::new(out)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.per_marginal
            .iter()
            .find(|(n, _)| n == name)
            .map(|p| p.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_column(name: &str, col: &[f64]) -> Result<Summary> {
    if col.len() < 2 {
        return Err(Error::TooFewDraws {
            needed: 2,
            have: col.len(),
        });
    }
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let s = sorted(col);
    Ok(Summary {
        name: name.to_string(),
        mean,
        sd: var.sqrt(),
        q05: quantile(&s, 0.05),
        q50: quantile(&s, 0.5),
        q95: quantile(&s, 0.95),
    })
}

pub fn summarize(samples: &PosteriorSamples) -> Result<Vec<Summary>> {
    samples
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| summarize_column(name, &samples.column(j)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub label: String,
    pub wall_time_seconds: f64,
    pub burn_in: usize,
    pub draws: usize,
    pub seed: u64,
}

/// Bin edges by the Freedman-Diaconis rule; one bin when the spread is zero.
pub fn histogram(col: &[f64]) -> Result<Vec<(f64, f64, usize)>> {
    if col.is_empty() {
        return Err(Error::EmptySample);
    }
    let s = sorted(col);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let iqr = if s.len() > 1 {
        quantile(&s, 0.75) - quantile(&s, 0.25)
    } else {
        0.0
    };
    let width = 2.0 * iqr * (s.len() as f64).powf(-1.0 / 3.0);
    let bins = if width > 0.0 && hi > lo {
        (((hi - lo) / width).ceil() as usize).clamp(1, s.len())
    } else {
        1
    };
    let step = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in &s {
        let k = if step > 0.0 {
            (((x - lo) / step) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            let left = lo + step * k as f64;
            let right = if k + 1 == bins { hi } else { lo + step * (k + 1) as f64 };
            (left, right, c)
        })
        .collect())
}

/// Points `(x_(i), i / n)` of the empirical CDF.
pub fn ecdf(col: &[f64]) -> Vec<(f64, f64)> {
    let s = sorted(col);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| (x, (i + 1) as f64 / n))
        .collect()
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `<name>.hist.csv` and `<name>.ecdf.csv` per parameter into `dir`
/// and returns the paths written.
pub fn emit_plot_data(samples: &PosteriorSamples, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (j, name) in samples.names.iter().enumerate() {
        let col = samples.column(j);
        let stem = file_stem(name);
        let mut hist = String::from("bin_left,bin_right,count\n");
        for (l, r, c) in histogram(&col)? {
            writeln!(hist, "{l},{r},{c}").expect("string write");
        }
        let mut cdf = String::from("x,F\n");
        for (x, f) in ecdf(&col) {
            writeln!(cdf, "{x},{f}").expect("string write");
        }
        for (suffix, body) in [("hist", hist), ("ecdf", cdf)] {
            let p = dir.join(format!("{stem}.{suffix}.csv"));
            write_atomic(&p, body.as_bytes())?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Writes one `name,ks` row per marginal.
pub fn emit_ks_data(report: &KsReport, path: &Path) -> Result<()> {
    let mut body = String::from("name,ks\n");
    for (n, k) in &report.per_marginal {
        writeln!(body, "{n},{k}").expect("string write");
    }
    write_atomic(path, body.as_bytes())
}
