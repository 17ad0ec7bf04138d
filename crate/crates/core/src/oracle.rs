//! Deterministic stand-in for a full-wave electromagnetic solver: maps a
//! ternary pattern to a 100-point reflection-coefficient spectrum via three
//! Lorentzian dips driven by simple pattern statistics. Used for dataset
//! labeling and ground-truth evaluation.

use crate::pattern::TernaryPattern;

/// Number of spectral sample points.
pub const SPECTRUM_POINTS: usize = 100;
/// Frequency grid: uniform from 20 to 35 GHz inclusive.
pub const FREQ_MIN_GHZ: f64 = 20.0;
pub const FREQ_MAX_GHZ: f64 = 35.0;

/// f_n = 20 + 15 (n-1)/99 GHz, n = 1..=100.
pub fn frequency_ghz(index: usize) -> f64 {
    FREQ_MIN_GHZ + (FREQ_MAX_GHZ - FREQ_MIN_GHZ) * index as f64 / (SPECTRUM_POINTS - 1) as f64
}

/// 100 reflection values on the fixed frequency grid, each in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResponse {
    values: [f64; SPECTRUM_POINTS],
}

impl SpectralResponse {
    pub fn new(values: [f64; SPECTRUM_POINTS]) -> Self {
        debug_assert!(values.iter().all(|v| (-1.0..=1.0).contains(v)));
        SpectralResponse { values }
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        let arr: [f64; SPECTRUM_POINTS] = values.try_into().ok()?;
        Some(SpectralResponse { values: arr })
    }

    pub fn values(&self) -> &[f64; SPECTRUM_POINTS] {
        &self.values
    }

    /// Mean absolute deviation from another response.
    pub fn mae(&self, other: &SpectralResponse) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / SPECTRUM_POINTS as f64
    }
}

/// Scalar pattern statistics feeding the resonance model, all in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatternFeatures {
    /// Metal fill fraction: mean of (1 - code).
    pub fill: f64,
    /// Edge density: differing 4-neighbor pairs over the pair count.
    pub edges: f64,
    /// Metal-weighted normalized radial moment about the grid center.
    pub radial: f64,
}

/// Compute (fill, edge, radial) statistics of a pattern.
pub fn features(p: &TernaryPattern) -> PatternFeatures {
    let n = p.size();
    let mut metal_sum = 0.0;
    let mut weighted_r = 0.0;
    let center = n as f64 / 2.0;
    let r_norm = (n as f64 / 2.0) * std::f64::consts::SQRT_2;
    for i in 0..n {
        for j in 0..n {
            let mu = 1.0 - p.code(i, j);
            metal_sum += mu;
            let dy = (i as f64 + 0.5) - center;
            let dx = (j as f64 + 0.5) - center;
            weighted_r += mu * (dx * dx + dy * dy).sqrt() / r_norm;
        }
    }
    let fill = metal_sum / (n * n) as f64;
    let radial = weighted_r / metal_sum.max(1e-9);

    let edges = edge_density(n, p.levels());
    PatternFeatures { fill, edges, radial }
}

/// Fraction of horizontally/vertically adjacent cell pairs with differing
/// levels, out of the 2n(n-1) such pairs.
fn edge_density(n: usize, levels: &[u8]) -> f64 {
    let mut differing = 0usize;
    for i in 0..n {
        for j in 0..n {
            if j + 1 < n && levels[i * n + j] != levels[i * n + j + 1] {
                differing += 1;
            }
            if i + 1 < n && levels[i * n + j] != levels[(i + 1) * n + j] {
                differing += 1;
            }
        }
    }
    differing as f64 / (2 * n * (n - 1)) as f64
}

/// Reflection spectrum of a pattern: three Lorentzian dips whose centers,
/// widths and amplitudes are fixed functions of the pattern statistics.
/// Pure and deterministic; identical patterns give bit-identical output.
pub fn simulate(p: &TernaryPattern) -> SpectralResponse {
    let PatternFeatures { fill: f, edges: e, radial: c } = features(p);
    let centers = [22.0 + 10.0 * f, 25.0 + 8.0 * e, 28.0 + 6.0 * c];
    let widths = [0.4 + 1.2 * e, 0.6 + 1.0 * c, 0.5 + 0.8 * f];
    let amps = [f, 0.7 * f, 0.5 * f];
    let mut values = [0.0f64; SPECTRUM_POINTS];
    for (i, v) in values.iter_mut().enumerate() {
        let freq = frequency_ghz(i);
        let mut dip = 0.0;
        for k in 0..3 {
            let d = freq - centers[k];
            dip += amps[k] * widths[k] * widths[k] / (d * d + widths[k] * widths[k]);
        }
        *v = (1.0 - 2.0 * dip).clamp(-1.0, 1.0);
    }
    SpectralResponse { values }
}
