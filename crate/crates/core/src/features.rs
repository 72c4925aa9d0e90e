//! The candidate-mediator library `Φ`.
//!
//! A [`FeatureLibrary`] is an ordered list of named feature definitions
//! `φ_i(x, z) → ℝ`. Three kinds exist:
//!
//! - `convolution`: the weighted sum of one image quadrant, with the 5×5
//!   kernel selected by the pattern index stored in `z`;
//! - `product`: `φ_x(x) · φ_z(z)`, whose conditional mean factorizes as
//!   `E[φ_x(X) | w, z] · φ_z(z)`;
//! - `builtin`: coordinates of `x` or `z`, fixed linear maps of `x`, constants.
//!
//! Libraries are described declaratively by a JSON [`FeatureManifest`].

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds;

pub const IMAGE_SIDE: usize = 10;
pub const QUADRANT_SIDE: usize = 5;
pub const N_PATTERNS: usize = 5;
pub const KERNEL_LEN: usize = QUADRANT_SIDE * QUADRANT_SIDE;

/// Seed of the shipped convolution bank.
pub const DEFAULT_CONV_SEED: u64 = 42;

/// Five 5×5 kernels, one per pattern index, with weights drawn from
/// `Unif(0, 1)` under a fixed seed.
///
/// Kernel `t` is applied to every quadrant of a 10×10 image: pixel `(r, c)`
/// of a quadrant is weighted by `kernel[t][(r % 5) * 5 + c % 5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBank {
    pub seed: u64,
    pub kernels: Vec<Vec<f64>>,
}

impl ConvBank {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = seeds::rng(seed);
        let kernels = (0..N_PATTERNS)
            .map(|_| (0..KERNEL_LEN).map(|_| rng.random::<f64>()).collect())
            .collect();
        ConvBank { seed, kernels }
    }

    /// Bank with caller-provided kernels (each of length 25).
    pub fn from_kernels(kernels: Vec<Vec<f64>>) -> Result<Self> {
        if kernels.len() != N_PATTERNS {
            return Err(Error::invalid(format!(
                "conv bank needs {N_PATTERNS} kernels, got {}",
                kernels.len()
            )));
        }
        for k in &kernels {
            crate::error::check_dim("kernel", KERNEL_LEN, k.len())?;
        }
        Ok(ConvBank { seed: 0, kernels })
    }
}

impl Default for ConvBank {
    fn default() -> Self {
        ConvBank::from_seed(DEFAULT_CONV_SEED)
    }
}

/// Quadrant order: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
pub fn quadrant_of(r: usize, c: usize) -> usize {
    (r / QUADRANT_SIDE) * 2 + c / QUADRANT_SIDE
}

/// Kernel-weighted sums of the four quadrants of a 10×10 row-major image.
pub fn quadrant_convolution(bank: &ConvBank, image: &[f64], t: usize) -> Result<[f64; 4]> {
    if t >= N_PATTERNS {
        return Err(Error::invalid(format!("pattern index {t} outside 0..{N_PATTERNS}")));
    }
    crate::error::check_dim("image", IMAGE_SIDE * IMAGE_SIDE, image.len())?;
    let k = &bank.kernels[t];
    let mut out = [0.0; 4];
    for r in 0..IMAGE_SIDE {
        for c in 0..IMAGE_SIDE {
            let kw = k[(r % QUADRANT_SIDE) * QUADRANT_SIDE + c % QUADRANT_SIDE];
            out[quadrant_of(r, c)] += kw * image[r * IMAGE_SIDE + c];
        }
    }
    Ok(out)
}

/// Reads a pattern index stored as a float.
pub fn pattern_index(v: f64) -> Result<usize> {
    let t = v.round();
    if (v - t).abs() > 1e-9 || t < 0.0 || t >= N_PATTERNS as f64 {
        return Err(Error::invalid(format!("`{v}` is not a pattern index")));
    }
    Ok(t as usize)
}

/// Definition of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureDef {
    Convolution {
        quadrant: usize,
        pattern_column: usize,
    },
    Product {
        x_factor: Box<FeatureDef>,
        z_factor: Box<FeatureDef>,
    },
    Builtin(Builtin),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case")]
pub enum Builtin {
    /// `x[index]`
    X { index: usize },
    /// `z[index]`
    Z { index: usize },
    /// `Σ_j weights[j] · x[j]`
    Linear { weights: Vec<f64> },
    Constant { value: f64 },
}

impl FeatureDef {
    pub fn x(index: usize) -> Self {
        FeatureDef::Builtin(Builtin::X { index })
    }

    pub fn z(index: usize) -> Self {
        FeatureDef::Builtin(Builtin::Z { index })
    }

    pub fn constant(value: f64) -> Self {
        FeatureDef::Builtin(Builtin::Constant { value })
    }

    pub fn linear(weights: Vec<f64>) -> Self {
        FeatureDef::Builtin(Builtin::Linear { weights })
    }

    pub fn product(x_factor: FeatureDef, z_factor: FeatureDef) -> Self {
        FeatureDef::Product {
            x_factor: Box::new(x_factor),
            z_factor: Box::new(z_factor),
        }
    }

    fn reads_x(&self) -> bool {
        match self {
            FeatureDef::Convolution { .. } => true,
            FeatureDef::Product { x_factor, z_factor } => x_factor.reads_x() || z_factor.reads_x(),
            FeatureDef::Builtin(b) => matches!(b, Builtin::X { .. } | Builtin::Linear { .. }),
        }
    }

    fn reads_z(&self) -> bool {
        match self {
            FeatureDef::Convolution { .. } => true,
            FeatureDef::Product { x_factor, z_factor } => x_factor.reads_z() || z_factor.reads_z(),
            FeatureDef::Builtin(b) => matches!(b, Builtin::Z { .. }),
        }
    }

    /// Minimum `(d_x, d_z)` the definition reads.
    fn required_dims(&self) -> (usize, usize) {
        match self {
            FeatureDef::Convolution { pattern_column, .. } => {
                (IMAGE_SIDE * IMAGE_SIDE, pattern_column + 1)
            }
            FeatureDef::Product { x_factor, z_factor } => {
                let (ax, az) = x_factor.required_dims();
                let (bx, bz) = z_factor.required_dims();
                (ax.max(bx), az.max(bz))
            }
            FeatureDef::Builtin(Builtin::X { index }) => (index + 1, 0),
            FeatureDef::Builtin(Builtin::Z { index }) => (0, index + 1),
            FeatureDef::Builtin(Builtin::Linear { weights }) => (weights.len(), 0),
            FeatureDef::Builtin(Builtin::Constant { .. }) => (0, 0),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FeatureDef::Convolution { quadrant, .. } if *quadrant >= 4 => Err(Error::invalid(
                format!("quadrant {quadrant} outside 0..4"),
            )),
            FeatureDef::Product { x_factor, z_factor } => {
                if x_factor.reads_z() || z_factor.reads_x() {
                    return Err(Error::invalid(
                        "product features need an x-only factor and a z-only factor",
                    ));
                }
                x_factor.validate()?;
                z_factor.validate()
            }
            _ => Ok(()),
        }
    }

    fn eval(&self, bank: &ConvBank, x: &[f64], z: &[f64]) -> Result<f64> {
        Ok(match self {
            FeatureDef::Convolution {
                quadrant,
                pattern_column,
            } => {
                let t = pattern_index(z[*pattern_column])?;
                quadrant_convolution(bank, x, t)?[*quadrant]
            }
            FeatureDef::Product { x_factor, z_factor } => {
                x_factor.eval(bank, x, z)? * z_factor.eval(bank, x, z)?
            }
            FeatureDef::Builtin(Builtin::X { index }) => x[*index],
            FeatureDef::Builtin(Builtin::Z { index }) => z[*index],
            FeatureDef::Builtin(Builtin::Linear { weights }) => {
                weights.iter().zip(x).map(|(a, b)| a * b).sum()
            }
            FeatureDef::Builtin(Builtin::Constant { value }) => *value,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFeature {
    pub name: String,
    #[serde(flatten)]
    pub def: FeatureDef,
}

/// JSON description of a library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub version: u32,
    /// Seed for the convolution bank; the shipped default when absent.
    #[serde(default)]
    pub conv_seed: Option<u64>,
    pub features: Vec<NamedFeature>,
}

pub const MANIFEST_VERSION: u32 = 1;

impl FeatureManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: FeatureManifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported feature manifest version {}",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Ordered, immutable set of named features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLibrary {
    names: Vec<String>,
    defs: Vec<FeatureDef>,
    bank: ConvBank,
    required: (usize, usize),
}

impl FeatureLibrary {
    pub fn new(features: Vec<(String, FeatureDef)>, bank: ConvBank) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid("a feature library needs at least one feature"));
        }
        let mut names = Vec::with_capacity(features.len());
        let mut defs = Vec::with_capacity(features.len());
        let mut required = (0, 0);
        for (name, def) in features {
            if names.contains(&name) {
                return Err(Error::invalid(format!("duplicate feature name `{name}`")));
            }
            def.validate()?;
            let (rx, rz) = def.required_dims();
            required = (required.0.max(rx), required.1.max(rz));
            names.push(name);
            defs.push(def);
        }
        Ok(FeatureLibrary {
            names,
            defs,
            bank,
            required,
        })
    }

    pub fn from_manifest(m: &FeatureManifest) -> Result<Self> {
        let bank = ConvBank::from_seed(m.conv_seed.unwrap_or(DEFAULT_CONV_SEED));
        FeatureLibrary::new(
            m.features
                .iter()
                .map(|f| (f.name.clone(), f.def.clone()))
                .collect(),
            bank,
        )
    }

    pub fn to_manifest(&self) -> FeatureManifest {
        FeatureManifest {
            version: MANIFEST_VERSION,
            conv_seed: Some(self.bank.seed),
            features: self
                .names
                .iter()
                .zip(&self.defs)
                .map(|(name, def)| NamedFeature {
                    name: name.clone(),
                    def: def.clone(),
                })
                .collect(),
        }
    }

    /// `φ_i(x) = x_i` for `i < d_x`.
    pub fn identity(d_x: usize) -> Result<Self> {
        FeatureLibrary::new(
            (0..d_x).map(|i| (format!("x{i}"), FeatureDef::x(i))).collect(),
            ConvBank::default(),
        )
    }

    /// The four quadrant features `phi1..phi4` of the image benchmark.
    pub fn quadrant_library(bank: ConvBank, pattern_column: usize) -> Self {
        FeatureLibrary::new(
            (0..4)
                .map(|q| {
                    (
                        format!("phi{}", q + 1),
                        FeatureDef::Convolution {
                            quadrant: q,
                            pattern_column,
                        },
                    )
                })
                .collect(),
            bank,
        )
        .expect("valid quadrant library")
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn defs(&self) -> &[FeatureDef] {
        &self.defs
    }

    pub fn bank(&self) -> &ConvBank {
        &self.bank
    }

    /// Library with features reordered by `order` (a permutation of indices).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        FeatureLibrary::new(
            order
                .iter()
                .map(|&i| (self.names[i].clone(), self.defs[i].clone()))
                .collect(),
            self.bank.clone(),
        )
    }

    /// Library restricted to feature `i`.
    pub fn single(&self, i: usize) -> Self {
        FeatureLibrary::new(
            vec![(self.names[i].clone(), self.defs[i].clone())],
            self.bank.clone(),
        )
        .expect("subset of a valid library")
    }

    /// `(φ_1(x, z), …, φ_d(x, z))`.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if x.len() < self.required.0 {
            return Err(Error::DimensionMismatch {
                what: "feature input x",
                expected: self.required.0,
                found: x.len(),
            });
        }
        if z.len() < self.required.1 {
            return Err(Error::DimensionMismatch {
                what: "feature input z",
                expected: self.required.1,
                found: z.len(),
            });
        }
        self.defs
            .iter()
            .zip(&self.names)
            .map(|(def, name)| {
                let v = def.eval(&self.bank, x, z)?;
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("feature `{name}` produced {v}")));
                }
                Ok(v)
            })
            .collect()
    }

    /// `n × d` matrix of feature values over a dataset.
    pub fn eval_dataset(&self, d: &Dataset) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = d
            .samples()
            .par_iter()
            .map(|s| self.eval(&s.x, &s.z))
            .collect::<Result<_>>()?;
        Matrix::from_rows(&rows, self.len())
    }
}

/// Free-function form of [`FeatureLibrary::eval`].
pub fn eval_features(lib: &FeatureLibrary, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    lib.eval(x, z)
}

/// Draws `X | w, z` from a generative model.
pub trait ConditionalSampler: Sync {
    fn sample_x(&self, w: &[f64], z: &[f64], rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64>;
}

/// Monte Carlo estimate of `E[φ(X, Z) | w, z]` with per-coordinate standard
/// errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub draws: usize,
}

/// Averages `φ` over `m` fresh draws of `X | w, z`. Draw `k` uses the seed
/// derived from `(seed, k)`, so the estimate does not depend on threading.
pub fn conditional_expectation_oracle<G: ConditionalSampler + ?Sized>(
    gen: &G,
    lib: &FeatureLibrary,
    w: &[f64],
    z: &[f64],
    m: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    if m == 0 {
        return Err(Error::invalid("oracle needs at least one draw"));
    }
    let d = lib.len();
    const CHUNK: usize = 4096;
    let n_chunks = m.div_ceil(CHUNK);
    let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![0.0; d];
            let mut sq = vec![0.0; d];
            for k in c * CHUNK..((c + 1) * CHUNK).min(m) {
                let mut rng = seeds::rng(seeds::derive(seed, k as u64));
                let x = gen.sample_x(w, z, &mut rng);
                let phi = lib.eval(&x, z)?;
                for i in 0..d {
                    sum[i] += phi[i];
                    sq[i] += phi[i] * phi[i];
                }
            }
            Ok((sum, sq))
        })
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for (s, q) in partial {
        for i in 0..d {
            sum[i] += s[i];
            sq[i] += q[i];
        }
    }
    let mf = m as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / mf).collect();
    let std_err = if m == 1 {
        vec![0.0; d]
    } else {
        sq.iter()
            .zip(&mean)
            .map(|(q, mu)| {
                let var = ((q - mf * mu * mu) / (mf - 1.0)).max(0.0);
                (var / mf).sqrt()
            })
            .collect()
    };
    Ok(OracleEstimate {
        mean,
        std_err,
        draws: m,
    })
}
