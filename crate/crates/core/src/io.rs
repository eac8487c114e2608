//! JSON files for posterior draws and stumps.
//!
//! Reals are written in scientific notation with 17 significant digits, so
//! reading a file and writing it again reproduces it byte for byte.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::hmc::{HmcConfig, PosteriorSamples};
use crate::stump::{StumpMeta, WeightedSampleSet};

struct ExactFloats;

impl Formatter for ExactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloats);
    value.serialize(&mut ser).expect("in-memory serialization");
    out.push(b'\n');
    out
}

/// Compact JSON, as written to disk.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    String::from_utf8(to_json(value)).expect("JSON is UTF-8")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorFile {
    pub model_id: String,
    pub names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    pub seed: u64,
    pub config: HmcConfig,
    pub accept_rate: f64,
    pub step_size: f64,
    pub divergences: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}

impl PosteriorFile {
    /// Wall time is left out unless `timing` is set, keeping files
    /// reproducible.
    pub fn new(model_id: &str, samples: &PosteriorSamples, config: &HmcConfig, timing: bool) -> Self {
        PosteriorFile {
            model_id: model_id.to_string(),
            names: samples.names.clone(),
            draws: samples.rows().map(|r| r.to_vec()).collect(),
            seed: config.seed,
            config: config.clone(),
            accept_rate: samples.accept_rate,
            step_size: samples.step_size,
            divergences: samples.divergences,
            wall_time_seconds: timing.then_some(samples.wall_time_seconds),
        }
    }

    pub fn samples(&self) -> Result<PosteriorSamples> {
        let mut s = PosteriorSamples::from_rows(self.names.clone(), self.draws.clone())?;
        s.accept_rate = self.accept_rate;
        s.step_size = self.step_size;
        s.divergences = self.divergences;
        s.wall_time_seconds = self.wall_time_seconds.unwrap_or(0.0);
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &to_json(self))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Weights {
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StumpDoc {
    model_id: String,
    #[serde(rename = "M")]
    m: usize,
    per_component: bool,
    samples: Vec<Vec<f64>>,
    weights: Weights,
    meta: StumpMeta,
}

/// The stump as JSON bytes; per-component weights are nested one row per
/// sample.
pub fn stump_to_json(set: &WeightedSampleSet) -> Vec<u8> {
    let weights = if set.per_component() {
        Weights::Nested(set.weights().chunks(set.factors()).map(|c| c.to_vec()).collect())
    } else {
        Weights::Flat(set.weights().to_vec())
    };
    to_json(&StumpDoc {
        model_id: set.model_id.clone(),
        m: set.len(),
        per_component: set.per_component(),
        samples: set.samples().to_vec(),
        weights,
        meta: set.meta.clone(),
    })
}

pub fn save_stump(set: &WeightedSampleSet, path: &Path) -> Result<()> {
    write_atomic(path, &stump_to_json(set))
}

pub fn load_stump(path: &Path) -> Result<WeightedSampleSet> {
    let doc: StumpDoc = read_json(path)?;
    let bad = |m: String| Error::SampleSet(format!("{}: {m}", path.display()));
    if doc.m != doc.samples.len() {
        return Err(bad(format!("M = {} but {} samples", doc.m, doc.samples.len())));
    }
    let (weights, factors) = match (doc.weights, doc.per_component) {
        (Weights::Flat(w), false) => (w, 1),
        (Weights::Nested(rows), true) => {
            let f = rows.first().map_or(1, Vec::len);
            if rows.len() != doc.m || rows.iter().any(|r| r.len() != f) {
                return Err(bad("ragged per-component weights".into()));
            }
            (rows.concat(), f)
        }
        _ => return Err(bad("weight layout does not match per_component".into())),
    };
    WeightedSampleSet::new(doc.model_id, doc.samples, doc.per_component, factors, doc.meta)?
        .with_weights(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> StumpMeta {
        StumpMeta {
            seed: 4,
            n_hyper: 100,
            created: None,
        }
    }

    #[test]
    fn floats_keep_every_bit() {
        let vals = [0.1, 1.0 / 3.0, -2.5e-300, 1e300, f64::MIN_POSITIVE, 0.0];
        let s = to_json_string(&vals.to_vec());
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vals);
        assert!(s.contains("1.0000000000000001e-1"));
    }

    #[test]
    fn posterior_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("post.json");
        let s = PosteriorSamples::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![0.1, 2.0 / 3.0], vec![-1e-8, 7.0]],
        )
        .unwrap();
        let f = PosteriorFile::new("m", &s, &HmcConfig::default(), false);
        f.save(&p).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = PosteriorFile::load(&p).unwrap();
        assert_eq!(back, f);
        back.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
        assert!(!String::from_utf8(first).unwrap().contains("wall_time"));
    }

    #[test]
    fn stump_round_trips_both_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stump.json");
        let joint = WeightedSampleSet::new("m", vec![vec![0.25], vec![0.5]], false, 1, meta())
            .unwrap()
            .with_weights(vec![0.3, -1.25])
            .unwrap();
        save_stump(&joint, &p).unwrap();
        assert_eq!(load_stump(&p).unwrap(), joint);
        let per = WeightedSampleSet::new("m", vec![vec![0.25, 1.0], vec![0.5, 2.0]], true, 2, meta())
            .unwrap()
            .with_weights(vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        save_stump(&per, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"M\":2"));
        assert!(text.contains("\"N\":100"));
        assert_eq!(load_stump(&p).unwrap(), per);
    }

    #[test]
    fn malformed_json_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{").unwrap();
        let e = load_stump(&p).unwrap_err();
        assert!(e.to_string().contains("bad.json"));
    }
}
