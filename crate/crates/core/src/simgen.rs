//! Synthetic data: the image-perturbation benchmark and a linear-Gaussian
//! testbed whose conditional expectations are known in closed form.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Dataset, RegimeId, Sample, Schema};
use crate::error::{Error, Result};
use crate::features::{
    pattern_index, quadrant_convolution, ConditionalSampler, ConvBank, FeatureDef,
    FeatureLibrary, IMAGE_SIDE, N_PATTERNS,
};
use crate::matrix::Matrix;
use crate::seeds;

const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Column of `z` holding the pattern index in benchmark data.
pub const PATTERN_COLUMN: usize = PIXELS;
pub const BENCHMARK_THETA: [f64; 4] = [0.7, 0.0, 0.0, -0.5];
pub const HISTORIC_N: usize = 10_000;
pub const NEW_REGIME_N: usize = 2_000;
pub const NEW_REGIME_W: f64 = 5.0;

const BUILTIN_PATTERNS: &str = include_str!("../fixtures/patterns.txt");

/// Binary pixel templates, one per pattern index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSet {
    pub names: Vec<String>,
    pub masks: Vec<Vec<f64>>,
}

impl PatternSet {
    /// Parses `[name]` headers each followed by ten rows of `#`/`.`; lines
    /// starting with `#` before a header and blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut masks: Vec<Vec<f64>> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                names.push(name.to_string());
                masks.push(Vec::with_capacity(PIXELS));
                continue;
            }
            let Some(mask) = masks.last_mut() else {
                if line.starts_with('#') {
                    continue;
                }
                return Err(Error::invalid(format!("pattern row before any header at line {}", lineno + 1)));
            };
            if line.len() != IMAGE_SIDE || mask.len() >= PIXELS {
                return Err(Error::invalid(format!("malformed pattern row at line {}", lineno + 1)));
            }
            for ch in line.chars() {
                mask.push(match ch {
                    '#' => 1.0,
                    '.' => 0.0,
                    _ => return Err(Error::invalid(format!("bad pattern pixel `{ch}` at line {}", lineno + 1))),
                });
            }
        }
        if masks.len() != N_PATTERNS || masks.iter().any(|m| m.len() != PIXELS) {
            return Err(Error::invalid(format!(
                "expected {N_PATTERNS} complete {IMAGE_SIDE}x{IMAGE_SIDE} patterns"
            )));
        }
        Ok(PatternSet { names, masks })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PatternSet::parse(&text)
    }

    /// Cross, square, crossing diagonal, pyramid and diamond.
    pub fn builtin() -> Self {
        PatternSet::parse(BUILTIN_PATTERNS).expect("bundled pattern fixture parses")
    }

    pub fn hash(&self) -> u64 {
        self.masks
            .iter()
            .flatten()
            .fold(seeds::derive(0, N_PATTERNS as u64), |h, v| seeds::derive(h, v.to_bits()))
    }
}

/// How the scalar treatment value becomes a 2-D perturbation centre
/// `(row, col)`.
///
/// The default walks the main diagonal in half-pixel steps, so historic
/// treatments 0..3 perturb the top-left quadrant (spilling little into its
/// neighbours and nothing into the bottom-right one) and `w = 5` lands on
/// the centre of the top-left quadrant, inside the historic support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocationMap {
    /// `w ↦ (w, w)`.
    Diagonal,
    /// `w ↦ offset + scale · (w, w)`.
    Affine { scale: f64, offset: [f64; 2] },
    /// Explicit lookup; `w` must equal one of `w_values`.
    Table { w_values: Vec<f64>, centres: Vec<[f64; 2]> },
}

impl Default for LocationMap {
    fn default() -> Self {
        LocationMap::Affine {
            scale: 0.5,
            offset: [0.0, 0.0],
        }
    }
}

impl LocationMap {
    pub fn centre(&self, w: f64) -> Result<[f64; 2]> {
        match self {
            LocationMap::Diagonal => Ok([w, w]),
            LocationMap::Affine { scale, offset } => Ok([offset[0] + scale * w, offset[1] + scale * w]),
            LocationMap::Table { w_values, centres } => w_values
                .iter()
                .position(|v| *v == w)
                .and_then(|i| centres.get(i).copied())
                .ok_or_else(|| Error::invalid(format!("no location for treatment {w}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub theta0: f64,
    pub theta: Vec<f64>,
    pub noise_std: f64,
}

impl OutcomeSpec {
    pub fn benchmark() -> Self {
        OutcomeSpec {
            theta0: 0.0,
            theta: BENCHMARK_THETA.to_vec(),
            noise_std: 0.1,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        crate::error::check_dim("outcome theta", d, self.theta.len())?;
        if !(self.noise_std >= 0.0) || !self.theta0.is_finite() || self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("outcome parameters must be finite with noise_std ≥ 0"));
        }
        Ok(())
    }
}

impl Default for OutcomeSpec {
    fn default() -> Self {
        OutcomeSpec::benchmark()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// The benchmark weights `(0.7, 0, 0, −0.5)`.
    #[default]
    Fixed,
    /// Fresh `Unif(−0.3, 0.3)⁴` weights per trial.
    Sampled,
}

pub fn sample_theta_trial(mode: ThetaMode, seed: u64) -> OutcomeSpec {
    match mode {
        ThetaMode::Fixed => OutcomeSpec::benchmark(),
        ThetaMode::Sampled => {
            let mut rng = seeds::rng(seed);
            OutcomeSpec {
                theta0: 0.0,
                theta: (0..4).map(|_| rng.random_range(-0.3..0.3)).collect(),
                noise_std: 0.1,
            }
        }
    }
}

/// Pattern `t` puts 0.55 on treatment `t mod 4` and 0.15 on the others.
pub fn default_delta() -> Vec<Vec<f64>> {
    (0..N_PATTERNS)
        .map(|t| (0..4).map(|w| if w == t % 4 { 0.55 } else { 0.15 }).collect())
        .collect()
}

fn default_n() -> usize {
    HISTORIC_N
}
fn default_p() -> Vec<f64> {
    vec![1.0 / N_PATTERNS as f64; N_PATTERNS]
}
fn default_w_values() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 3.0]
}
fn default_eta() -> f64 {
    0.1
}
fn default_draws() -> usize {
    1000
}
fn default_noise_x() -> f64 {
    0.5
}
fn default_conv_seed() -> u64 {
    crate::features::DEFAULT_CONV_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImgPertConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    /// Pattern probabilities.
    #[serde(default = "default_p")]
    pub p: Vec<f64>,
    /// Row `t` gives the treatment probabilities under pattern `t`.
    #[serde(default = "default_delta")]
    pub delta: Vec<Vec<f64>>,
    /// Treatment value of each `delta` column.
    #[serde(default = "default_w_values")]
    pub w_values: Vec<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_noise_x")]
    pub noise_x: f64,
    #[serde(default)]
    pub location: LocationMap,
    #[serde(default = "default_conv_seed")]
    pub conv_seed: u64,
    #[serde(default)]
    pub outcome: OutcomeSpec,
    /// Pattern fixture file; the bundled set when absent.
    #[serde(default)]
    pub patterns: Option<std::path::PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ImgPertConfig {
    fn default() -> Self {
        ImgPertConfig {
            n: default_n(),
            p: default_p(),
            delta: default_delta(),
            w_values: default_w_values(),
            eta: default_eta(),
            draws: default_draws(),
            noise_x: default_noise_x(),
            location: LocationMap::default(),
            conv_seed: default_conv_seed(),
            outcome: OutcomeSpec::benchmark(),
            patterns: None,
            seed: 0,
        }
    }
}

fn check_simplex(what: &str, v: &[f64]) -> Result<()> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{what} is not a probability simplex: {v:?}")));
    }
    Ok(())
}

impl ImgPertConfig {
    pub fn validate(&self) -> Result<()> {
        crate::error::check_dim("pattern probabilities", N_PATTERNS, self.p.len())?;
        check_simplex("p", &self.p)?;
        crate::error::check_dim("delta rows", N_PATTERNS, self.delta.len())?;
        for (t, row) in self.delta.iter().enumerate() {
            crate::error::check_dim("delta row", self.w_values.len(), row.len())?;
            check_simplex(&format!("delta row {t}"), row)?;
        }
        if !(self.eta >= 0.0) || !(self.noise_x >= 0.0) {
            return Err(Error::invalid("eta and noise_x must be non-negative"));
        }
        self.outcome.validate(4)
    }
}

/// Image-perturbation generator with its patterns and kernels resolved.
#[derive(Debug, Clone)]
pub struct ImgPert {
    pub cfg: ImgPertConfig,
    pub patterns: PatternSet,
    pub bank: ConvBank,
    w_dist: Vec<WeightedIndex<f64>>,
    t_dist: WeightedIndex<f64>,
}

impl ImgPert {
    pub fn new(cfg: ImgPertConfig) -> Result<Self> {
        cfg.validate()?;
        let patterns = match &cfg.patterns {
            Some(p) => PatternSet::load(p)?,
            None => PatternSet::builtin(),
        };
        let bank = ConvBank::from_seed(cfg.conv_seed);
        let weighted = |w: &[f64]| {
            WeightedIndex::new(w.iter().copied()).map_err(|e| Error::invalid(format!("bad weights: {e}")))
        };
        let w_dist = cfg.delta.iter().map(|r| weighted(r)).collect::<Result<_>>()?;
        let t_dist = weighted(&cfg.p)?;
        Ok(ImgPert {
            cfg,
            patterns,
            bank,
            w_dist,
            t_dist,
        })
    }

    pub fn schema(&self) -> Schema {
        let mut s = Schema::new(1, PIXELS + 1, PIXELS, true);
        s.z_names[PATTERN_COLUMN] = "z_pattern".into();
        s
    }

    /// The four quadrant features, indexed by the pattern column.
    pub fn library(&self) -> FeatureLibrary {
        FeatureLibrary::quadrant_library(self.bank.clone(), PATTERN_COLUMN)
    }

    fn z_of(&self, t: usize) -> Vec<f64> {
        let mut z = self.patterns.masks[t].clone();
        z.push(t as f64);
        z
    }

    /// Additive perturbation mask `f_w` from `draws` Gaussian locations.
    fn perturbation(&self, w: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let [r0, c0] = self.cfg.location.centre(w)?;
        let mut f = vec![0.0; PIXELS];
        for _ in 0..self.cfg.draws {
            let gr: f64 = r0 + rng.sample::<f64, _>(StandardNormal);
            let gc: f64 = c0 + rng.sample::<f64, _>(StandardNormal);
            let (r, c) = (gr.floor(), gc.floor());
            if (0.0..IMAGE_SIDE as f64).contains(&r) && (0.0..IMAGE_SIDE as f64).contains(&c) {
                f[r as usize * IMAGE_SIDE + c as usize] += self.cfg.eta;
            }
        }
        Ok(f)
    }

    fn draw_x(&self, w: f64, z: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let f = self.perturbation(w, rng)?;
        Ok((0..PIXELS)
            .map(|j| z[j] + f[j] + self.cfg.noise_x * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }

    /// `n` labeled samples of `regime`. Treatments follow `delta` unless
    /// `w_override` fixes them. Sample `i` uses the seed derived from
    /// `(cfg.seed, regime, i)`.
    pub fn generate(&self, regime: RegimeId, w_override: Option<f64>) -> Result<Dataset> {
        let base = seeds::derive(self.cfg.seed, regime.0 as u64);
        let samples = (0..self.cfg.n)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeds::rng(seeds::derive(base, i as u64));
                let t = self.t_dist.sample(&mut rng);
                let w = match w_override {
                    Some(w) => w,
                    None => self.cfg.w_values[self.w_dist[t].sample(&mut rng)],
                };
                let z = self.z_of(t);
                let x = self.draw_x(w, &z, &mut rng)?;
                let phi = quadrant_convolution(&self.bank, &x, t)?;
                let out = &self.cfg.outcome;
                let noise: f64 = rng.sample(StandardNormal);
                let y = out.theta0
                    + out.theta.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>()
                    + out.noise_std * noise;
                Ok(Sample {
                    id: i as u64,
                    regime,
                    w: vec![w],
                    z,
                    x,
                    y: Some(y),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.schema(), samples)
    }

    /// Probability that one location draw lands in pixel `(r, c)`.
    pub fn pixel_probability(&self, w: f64, r: usize, c: usize) -> Result<f64> {
        let [r0, c0] = self.cfg.location.centre(w)?;
        let n = Normal::standard();
        let cell = |lo: f64, mu: f64| n.cdf(lo + 1.0 - mu) - n.cdf(lo - mu);
        Ok(cell(r as f64, r0) * cell(c as f64, c0))
    }

    /// `E[X | w, z]` in closed form.
    pub fn expected_x(&self, w: f64, z: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_dim("benchmark z", PIXELS + 1, z.len())?;
        let scale = self.cfg.eta * self.cfg.draws as f64;
        (0..PIXELS)
            .map(|j| Ok(z[j] + scale * self.pixel_probability(w, j / IMAGE_SIDE, j % IMAGE_SIDE)?))
            .collect()
    }

    /// `E[φ | w, z]`, exact because the features are linear in `x`.
    pub fn expected_features(&self, w: f64, z: &[f64]) -> Result<[f64; 4]> {
        let t = pattern_index(z[PATTERN_COLUMN])?;
        quadrant_convolution(&self.bank, &self.expected_x(w, z)?, t)
    }

    /// `E[Y | do(w), z]` under the configured outcome.
    pub fn causal_effect(&self, w: f64, z: &[f64]) -> Result<f64> {
        let g = self.expected_features(w, z)?;
        let out = &self.cfg.outcome;
        Ok(out.theta0 + out.theta.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
    }
}

impl ConditionalSampler for ImgPert {
    fn sample_x(&self, w: &[f64], z: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.draw_x(w[0], z, rng).expect("treatment has a location")
    }
}

pub fn gen_imgpert(cfg: &ImgPertConfig, regime: RegimeId, w_override: Option<f64>) -> Result<Dataset> {
    ImgPert::new(cfg.clone())?.generate(regime, w_override)
}

/// JSON sidecar describing how a generated file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub regime: u32,
    pub w_override: Option<f64>,
    pub seed: u64,
    pub n: usize,
    pub config: serde_json::Value,
    pub template_hash: Option<String>,
}

impl Provenance {
    pub fn for_imgpert(gen: &ImgPert, regime: RegimeId, w_override: Option<f64>) -> Result<Self> {
        Ok(Provenance {
            generator: "imgpert".into(),
            regime: regime.0,
            w_override,
            seed: gen.cfg.seed,
            n: gen.cfg.n,
            config: serde_json::to_value(&gen.cfg)?,
            template_hash: Some(format!("{:016x}", gen.patterns.hash())),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn default_noise() -> f64 {
    1.0
}
fn default_noise_y() -> f64 {
    0.1
}

/// `z ~ N(0, I)`, `w = Az + ε_w`, `x = Bw + Cz + ε_x`, `φ = Dx`,
/// `y = θ₀ + θᵀφ + ε_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianConfig {
    pub d_w: usize,
    pub d_z: usize,
    pub d_x: usize,
    pub d_phi: usize,
    pub n: usize,
    pub seed: u64,
    /// Forces `B = 0`, making every feature independent of `w` given `z`.
    #[serde(default)]
    pub null_b: bool,
    #[serde(default = "default_noise")]
    pub noise_w: f64,
    #[serde(default = "default_noise")]
    pub noise_x: f64,
    #[serde(default = "default_noise_y")]
    pub noise_y: f64,
    /// Outcome weights; drawn from `Unif(−1, 1)` when absent.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
}

impl LinearGaussianConfig {
    pub fn new(d_w: usize, d_z: usize, d_x: usize, d_phi: usize, n: usize, seed: u64) -> Self {
        LinearGaussianConfig {
            d_w,
            d_z,
            d_x,
            d_phi,
            n,
            seed,
            null_b: false,
            noise_w: default_noise(),
            noise_x: default_noise(),
            noise_y: default_noise_y(),
            theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianTruth {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub theta0: f64,
    pub theta: Vec<f64>,
    pub noise_w: f64,
    pub noise_x: f64,
    pub noise_y: f64,
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    m.rows().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

impl LinearGaussianTruth {
    /// `Bw + Cz`.
    pub fn expected_x(&self, w: &[f64], z: &[f64]) -> Vec<f64> {
        mat_vec(&self.b, w).iter().zip(mat_vec(&self.c, z)).map(|(a, b)| a + b).collect()
    }

    /// `D(Bw + Cz)`.
    pub fn expected_phi(&self, w: &[f64], z: &[f64]) -> Vec<f64> {
        mat_vec(&self.d, &self.expected_x(w, z))
    }

    pub fn causal_effect(&self, w: &[f64], z: &[f64]) -> f64 {
        self.theta0 + self.theta.iter().zip(self.expected_phi(w, z)).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Features `φ_i(x) = D_i · x`.
    pub fn library(&self) -> FeatureLibrary {
        FeatureLibrary::new(
            self.d
                .rows()
                .enumerate()
                .map(|(i, r)| (format!("phi{}", i + 1), FeatureDef::linear(r.to_vec())))
                .collect(),
            ConvBank::default(),
        )
        .expect("linear features are valid")
    }

    /// Matrix of `E[φ | w, z]` over the rows of `data`.
    pub fn expected_phi_matrix(&self, data: &Dataset) -> Matrix {
        let rows: Vec<Vec<f64>> = data.samples().iter().map(|s| self.expected_phi(&s.w, &s.z)).collect();
        Matrix::from_rows(&rows, self.d.nrows()).expect("consistent feature count")
    }
}

impl ConditionalSampler for LinearGaussianTruth {
    fn sample_x(&self, w: &[f64], z: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.expected_x(w, z)
            .into_iter()
            .map(|m| m + self.noise_x * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

impl LinearGaussianTruth {
    pub fn draw(cfg: &LinearGaussianConfig) -> Result<Self> {
        if cfg.d_w == 0 || cfg.d_z == 0 || cfg.d_x == 0 || cfg.d_phi == 0 {
            return Err(Error::invalid("linear-Gaussian dimensions must be ≥ 1"));
        }
        let mut rng = seeds::rng(seeds::derive(cfg.seed, u64::MAX));
        let a = uniform_matrix(cfg.d_w, cfg.d_z, &mut rng);
        let mut b = uniform_matrix(cfg.d_x, cfg.d_w, &mut rng);
        if cfg.null_b {
            b = Matrix::zeros(cfg.d_x, cfg.d_w);
        }
        let c = uniform_matrix(cfg.d_x, cfg.d_z, &mut rng);
        let d = uniform_matrix(cfg.d_phi, cfg.d_x, &mut rng);
        let theta = match &cfg.theta {
            Some(t) => {
                crate::error::check_dim("linear-Gaussian theta", cfg.d_phi, t.len())?;
                t.clone()
            }
            None => (0..cfg.d_phi).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        Ok(LinearGaussianTruth {
            a,
            b,
            c,
            d,
            theta0: 0.0,
            theta,
            noise_w: cfg.noise_w,
            noise_x: cfg.noise_x,
            noise_y: cfg.noise_y,
        })
    }

    /// `n` labeled samples of `regime`. `w_shift` is added to the mean of `w`,
    /// which changes the treatment distribution without touching the
    /// downstream mechanisms.
    pub fn sample(&self, n: usize, regime: RegimeId, w_shift: Option<&[f64]>, seed: u64) -> Result<Dataset> {
        let (d_w, d_z) = (self.a.nrows(), self.a.ncols());
        if let Some(s) = w_shift {
            crate::error::check_dim("w shift", d_w, s.len())?;
        }
        let base = seeds::derive(seed, regime.0 as u64);
        let samples: Vec<Sample> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeds::rng(seeds::derive(base, i as u64));
                let z: Vec<f64> = (0..d_z).map(|_| rng.sample(StandardNormal)).collect();
                let mut w = mat_vec(&self.a, &z);
                for (k, wk) in w.iter_mut().enumerate() {
                    *wk += self.noise_w * rng.sample::<f64, _>(StandardNormal);
                    if let Some(s) = w_shift {
                        *wk += s[k];
                    }
                }
                let x = self.sample_x(&w, &z, &mut rng);
                let phi = mat_vec(&self.d, &x);
                let noise: f64 = rng.sample(StandardNormal);
                let y = self.theta0
                    + self.theta.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>()
                    + self.noise_y * noise;
                Sample {
                    id: i as u64,
                    regime,
                    w,
                    z,
                    x,
                    y: Some(y),
                }
            })
            .collect();
        Dataset::new(Schema::new(d_w, d_z, self.d.ncols(), true), samples)
    }
}

pub fn gen_linear_gaussian(cfg: &LinearGaussianConfig) -> Result<(Dataset, LinearGaussianTruth)> {
    let truth = LinearGaussianTruth::draw(cfg)?;
    let data = truth.sample(cfg.n, RegimeId(0), None, cfg.seed)?;
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::conditional_expectation_oracle;

    fn small(n: usize, seed: u64) -> ImgPertConfig {
        ImgPertConfig {
            n,
            seed,
            ..ImgPertConfig::default()
        }
    }

    #[test]
    fn builtin_patterns_parse() {
        let p = PatternSet::builtin();
        assert_eq!(p.names, ["cross", "square", "crossing_diagonal", "pyramid", "diamond"]);
        assert!(p.masks.iter().all(|m| m.iter().all(|v| *v == 0.0 || *v == 1.0)));
        assert!(PatternSet::parse("[a]\n#.\n").is_err());
    }

    #[test]
    fn delta_rows_are_simplices() {
        for row in default_delta() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut cfg = ImgPertConfig::default();
        cfg.delta[2][0] = 0.9;
        assert!(ImgPert::new(cfg).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let g = ImgPert::new(small(50, 3)).unwrap();
        let a = g.generate(RegimeId(0), None).unwrap();
        let b = g.generate(RegimeId(0), None).unwrap();
        assert_eq!(a, b);
        let c = g.generate(RegimeId(1), None).unwrap();
        assert_ne!(a, c);
        assert!(a.samples().iter().all(|s| s.w[0] <= 3.0));
        let d = g.generate(RegimeId(9), Some(5.0)).unwrap();
        assert!(d.samples().iter().all(|s| s.w[0] == 5.0));
    }

    #[test]
    fn outcome_matches_features() {
        let mut cfg = small(20, 1);
        cfg.outcome.noise_std = 0.0;
        let g = ImgPert::new(cfg).unwrap();
        let d = g.generate(RegimeId(0), None).unwrap();
        let lib = g.library();
        for s in d.samples() {
            let phi = lib.eval(&s.x, &s.z).unwrap();
            let y = 0.7 * phi[0] - 0.5 * phi[3];
            assert!((s.y.unwrap() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        let g = ImgPert::new(small(1, 0)).unwrap();
        let lib = g.library();
        let z = g.z_of(3);
        for w in [0.0, 2.0, 5.0] {
            let exact = g.expected_features(w, &z).unwrap();
            let mc = conditional_expectation_oracle(&g, &lib, &[w], &z, 2000, 11).unwrap();
            for i in 0..4 {
                assert!((exact[i] - mc.mean[i]).abs() < 4.0 * mc.std_err[i] + 1e-9, "w={w} i={i}");
            }
        }
    }

    #[test]
    fn theta_sampling() {
        assert_eq!(sample_theta_trial(ThetaMode::Fixed, 9).theta, BENCHMARK_THETA);
        let a = sample_theta_trial(ThetaMode::Sampled, 9);
        assert_eq!(a, sample_theta_trial(ThetaMode::Sampled, 9));
        assert!(a.theta.iter().all(|t| (-0.3..0.3).contains(t)));
        assert_eq!(a.noise_std, 0.1);
    }

    #[test]
    fn linear_gaussian_null_and_shapes() {
        let mut cfg = LinearGaussianConfig::new(2, 3, 6, 4, 100, 5);
        cfg.null_b = true;
        let (d, truth) = gen_linear_gaussian(&cfg).unwrap();
        assert_eq!(d.len(), 100);
        assert_eq!(d.schema().d_x(), 6);
        assert!(truth.b.as_slice().iter().all(|v| *v == 0.0));
        let z = [0.3, -1.0, 2.0];
        assert_eq!(truth.expected_phi(&[1.0, 2.0], &z), truth.expected_phi(&[-4.0, 0.0], &z));
        assert!(LinearGaussianTruth::draw(&LinearGaussianConfig::new(0, 1, 1, 1, 1, 0)).is_err());
    }

    #[test]
    fn linear_gaussian_closed_form_vs_oracle() {
        let cfg = LinearGaussianConfig::new(2, 3, 6, 4, 10, 8);
        let (_, truth) = gen_linear_gaussian(&cfg).unwrap();
        let lib = truth.library();
        let (w, z) = ([0.5, -1.5], [1.0, 0.0, -0.7]);
        let mc = conditional_expectation_oracle(&truth, &lib, &w, &z, 4000, 2).unwrap();
        for (i, e) in truth.expected_phi(&w, &z).iter().enumerate() {
            assert!((e - mc.mean[i]).abs() < 3.0 * mc.std_err[i]);
        }
    }
}
