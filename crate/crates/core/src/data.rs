//! Case-study datasets: CSV loading, saving and synthetic generation.
//!
//! Every format has a header row. Saving a loaded dataset reproduces the
//! file byte for byte as long as it was written by this module.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

fn read_rows<T: DeserializeOwned, R: Read>(reader: R, label: &str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let row: T = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            let message = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                _ => e.to_string(),
            };
            Error::Parse {
                path: label.to_string(),
                line,
                message,
            }
        })?;
        out.push(row);
    }
    Ok(out)
}

fn write_rows<T: Serialize, W: Write>(writer: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::InvalidData(format!("{other:?}")),
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp_name = format!(".{}.tmp{}", name.to_string_lossy(), std::process::id());
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => tmp_name.into(),
    };
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Re-labels parse errors with the file they came from.
fn with_path<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}

#[derive(Serialize, Deserialize)]
struct MarbleRow {
    #[serde(rename = "box")]
    box_index: usize,
    outcome: u8,
}

/// Draws with replacement from boxes of marbles; `true` is a white marble.
#[derive(Clone, Debug, PartialEq)]
pub struct MarblesData {
    draws: Vec<(usize, bool)>,
    boxes: usize,
    marbles_per_box: usize,
}

impl MarblesData {
    pub const BOXES: usize = 6;
    pub const MARBLES_PER_BOX: usize = 4;

    pub fn new(draws: Vec<(usize, bool)>, boxes: usize, marbles_per_box: usize) -> Result<Self> {
        if boxes == 0 || marbles_per_box == 0 {
            return Err(Error::InvalidData("need at least one box and one marble".into()));
        }
        if let Some(&(b, _)) = draws.iter().find(|(b, _)| *b >= boxes) {
            return Err(Error::InvalidData(format!("box {b} out of range")));
        }
        Ok(MarblesData {
            draws,
            boxes,
            marbles_per_box,
        })
    }

    /// Box compositions used by [`MarblesData::synthesize`]: white marbles
    /// out of four in each of the six boxes.
    pub const DEFAULT_WHITE: [usize; 6] = [1, 3, 2, 4, 0, 2];

    /// `draws_per_box` draws with replacement from each box, box `b` holding
    /// `white[b]` white marbles out of `marbles_per_box`.
    pub fn synthesize(
        seed: u64,
        white: &[usize],
        marbles_per_box: usize,
        draws_per_box: usize,
    ) -> Result<Self> {
        if white.iter().any(|&w| w > marbles_per_box) {
            return Err(Error::InvalidData("more white marbles than marbles".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draws = Vec::with_capacity(white.len() * draws_per_box);
        for (b, &w) in white.iter().enumerate() {
            for _ in 0..draws_per_box {
                draws.push((b, rng.random_range(0..marbles_per_box) < w));
            }
        }
        Self::new(draws, white.len(), marbles_per_box)
    }

    pub fn from_reader<R: Read>(reader: R, label: &str) -> Result<Self> {
        let rows: Vec<MarbleRow> = read_rows(reader, label)?;
        let mut draws = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let line = i as u64 + 2;
            let bad = |message: String| Error::Parse {
                path: label.to_string(),
                line,
                message,
            };
            if r.box_index >= Self::BOXES {
                return Err(bad(format!("box {} out of range 0..{}", r.box_index, Self::BOXES)));
            }
            if r.outcome > 1 {
                return Err(bad(format!("outcome {} is not 0 or 1", r.outcome)));
            }
            draws.push((r.box_index, r.outcome == 1));
        }
        Self::new(draws, Self::BOXES, Self::MARBLES_PER_BOX)
    }

    pub fn load(path: &Path) -> Result<Self> {
        with_path(Self::from_reader(open(path)?, ""), path)
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        write_rows(
            w,
            self.draws.iter().map(|&(b, y)| MarbleRow {
                box_index: b,
                outcome: y as u8,
            }),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        write_atomic(path, &buf)
    }

    pub fn draws(&self) -> &[(usize, bool)] {
        &self.draws
    }

    pub fn boxes(&self) -> usize {
        self.boxes
    }

    pub fn marbles_per_box(&self) -> usize {
        self.marbles_per_box
    }

    /// `(white, black)` counts per box.
    pub fn counts(&self) -> Vec<(u32, u32)> {
        let mut c = vec![(0, 0); self.boxes];
        for &(b, y) in &self.draws {
            if y {
                c[b].0 += 1;
            } else {
                c[b].1 += 1;
            }
        }
        c
    }
}

#[derive(Serialize, Deserialize)]
struct RatsRow {
    n: u64,
    y: u64,
}

/// Tumor counts `y_i` out of `n_i` animals per experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RatsData {
    rows: Vec<(u64, u64)>,
}

const BUNDLED_RATS: &str = include_str!("../data/rats.csv");

impl RatsData {
    pub fn new(rows: Vec<(u64, u64)>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|&(n, y)| y > n) {
            return Err(Error::InvalidData(format!("row {i}: y exceeds n")));
        }
        Ok(RatsData { rows })
    }

    /// The 71-experiment tumor table shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_reader(BUNDLED_RATS.as_bytes(), "rats.csv").expect("bundled data is valid")
    }

    pub fn from_reader<R: Read>(reader: R, label: &str) -> Result<Self> {
        let rows: Vec<RatsRow> = read_rows(reader, label)?;
        for (i, r) in rows.iter().enumerate() {
            if r.y > r.n {
                return Err(Error::Parse {
                    path: label.to_string(),
                    line: i as u64 + 2,
                    message: format!("y = {} exceeds n = {}", r.y, r.n),
                });
            }
        }
        Self::new(rows.into_iter().map(|r| (r.n, r.y)).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        with_path(Self::from_reader(open(path)?, ""), path)
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, self.rows.iter().map(|&(n, y)| RatsRow { n, y }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        write_atomic(path, &buf)
    }

    /// `(n, y)` per experiment.
    pub fn rows(&self) -> &[(u64, u64)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn head(&self, k: usize) -> Self {
        RatsData {
            rows: self.rows[..k.min(self.rows.len())].to_vec(),
        }
    }
}

/// One pupil: school memberships, two predictors and the response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttainRow {
    pub sid: usize,
    pub sex: usize,
    pub pid: usize,
    pub cc: f64,
    pub vrq: f64,
    pub attain: f64,
}

impl AttainRow {
    /// Predictor vector `(1, cc, vrq)`.
    pub fn x(&self) -> [f64; 3] {
        [1.0, self.cc, self.vrq]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttainSizes {
    pub pupils: usize,
    pub primary: usize,
    pub secondary: usize,
}

impl Default for AttainSizes {
    fn default() -> Self {
        AttainSizes {
            pupils: 3435,
            primary: 148,
            secondary: 19,
        }
    }
}

impl AttainSizes {
    /// The reduced problem used by the shipped study.
    pub fn reduced() -> Self {
        AttainSizes {
            pupils: 500,
            primary: 20,
            secondary: 6,
        }
    }
}

/// Ground-truth hyperparameters of one hierarchy for synthetic data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttainTruth {
    pub mu_beta: [f64; 3],
    pub sigma_beta: [f64; 3],
    pub mu_log_sigma: f64,
    pub sigma_log_sigma: f64,
}

/// Truths for the secondary-school, sex and primary-school hierarchies.
pub const ATTAIN_TRUTH: [AttainTruth; 3] = [
    AttainTruth {
        mu_beta: [0.0, 0.3, 0.5],
        sigma_beta: [0.5, 0.2, 0.2],
        mu_log_sigma: 0.0,
        sigma_log_sigma: 0.2,
    },
    AttainTruth {
        mu_beta: [0.0, 0.2, 0.2],
        sigma_beta: [0.2, 0.1, 0.1],
        mu_log_sigma: 0.2,
        sigma_log_sigma: 0.1,
    },
    AttainTruth {
        mu_beta: [0.0, 0.4, 0.3],
        sigma_beta: [0.4, 0.2, 0.2],
        mu_log_sigma: 0.1,
        sigma_log_sigma: 0.2,
    },
];

#[derive(Clone, Debug, PartialEq)]
pub struct AttainData {
    rows: Vec<AttainRow>,
    secondary: usize,
    primary: usize,
}

impl AttainData {
    pub const SEXES: usize = 2;

    /// Group counts default to one past the largest index seen.
    pub fn new(rows: Vec<AttainRow>) -> Result<Self> {
        let secondary = rows.iter().map(|r| r.sid + 1).max().unwrap_or(0);
        let primary = rows.iter().map(|r| r.pid + 1).max().unwrap_or(0);
        Self::with_groups(rows, secondary, primary)
    }

    pub fn with_groups(rows: Vec<AttainRow>, secondary: usize, primary: usize) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.sid >= secondary || r.pid >= primary || r.sex >= Self::SEXES {
                return Err(Error::InvalidData(format!("row {i}: group index out of range")));
            }
            if !(r.cc.is_finite() && r.vrq.is_finite() && r.attain.is_finite()) {
                return Err(Error::InvalidData(format!("row {i}: non-finite value")));
            }
        }
        Ok(AttainData {
            rows,
            secondary,
            primary,
        })
    }

    /// Draws group parameters from [`ATTAIN_TRUTH`] and each response from
    /// the normalized product of the three hierarchies' normals. Predictors
    /// are standard normal; school memberships and sex are uniform.
    pub fn synthesize(seed: u64, sizes: AttainSizes) -> Result<Self> {
        if sizes.primary == 0 || sizes.secondary == 0 {
            return Err(Error::InvalidData("need at least one school of each kind".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = [sizes.secondary, Self::SEXES, sizes.primary];
        let params: Vec<Vec<([f64; 3], f64)>> = ATTAIN_TRUTH
            .iter()
            .zip(counts)
            .map(|(t, c)| {
                (0..c)
                    .map(|_| {
                        let beta = std::array::from_fn(|k| {
                            t.mu_beta[k] + t.sigma_beta[k] * std_normal(&mut rng)
                        });
                        let sigma = (t.mu_log_sigma + t.sigma_log_sigma * std_normal(&mut rng)).exp();
                        (beta, sigma)
                    })
                    .collect()
            })
            .collect();
        let mut rows = Vec::with_capacity(sizes.pupils);
        for _ in 0..sizes.pupils {
            let sid = rng.random_range(0..sizes.secondary);
            let sex = rng.random_range(0..Self::SEXES);
            let pid = rng.random_range(0..sizes.primary);
            let cc = std_normal(&mut rng);
            let vrq = std_normal(&mut rng);
            let x = [1.0, cc, vrq];
            let (mut prec, mut weighted) = (0.0, 0.0);
            for (h, g) in [sid, sex, pid].into_iter().enumerate() {
                let (beta, sigma) = params[h][g];
                let mean: f64 = beta.iter().zip(&x).map(|(b, x)| b * x).sum();
                prec += sigma.powi(-2);
                weighted += mean * sigma.powi(-2);
            }
            let attain = Normal::new(weighted / prec, prec.sqrt().recip())
                .expect("positive scale")
                .sample(&mut rng);
            rows.push(AttainRow {
                sid,
                sex,
                pid,
                cc,
                vrq,
                attain,
            });
        }
        Self::with_groups(rows, sizes.secondary, sizes.primary)
    }

    pub fn from_reader<R: Read>(reader: R, label: &str) -> Result<Self> {
        let rows: Vec<AttainRow> = read_rows(reader, label)?;
        for (i, r) in rows.iter().enumerate() {
            let msg = if r.sex >= Self::SEXES {
                Some(format!("sex {} is not 0 or 1", r.sex))
            } else if !(r.cc.is_finite() && r.vrq.is_finite() && r.attain.is_finite()) {
                Some("non-finite value".to_string())
            } else {
                None
            };
            if let Some(message) = msg {
                return Err(Error::Parse {
                    path: label.to_string(),
                    line: i as u64 + 2,
                    message,
                });
            }
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        with_path(Self::from_reader(open(path)?, ""), path)
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, self.rows.iter())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        write_atomic(path, &buf)
    }

    pub fn rows(&self) -> &[AttainRow] {
        &self.rows
    }

    pub fn secondary(&self) -> usize {
        self.secondary
    }

    pub fn primary(&self) -> usize {
        self.primary
    }

    /// Rows with `sid != school`, group counts unchanged.
    pub fn without_secondary(&self, school: usize) -> Self {
        AttainData {
            rows: self.rows.iter().filter(|r| r.sid != school).copied().collect(),
            ..*self
        }
    }
}

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
