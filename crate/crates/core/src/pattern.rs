//! Ternary metasurface patterns: representation, validation, random
//! sampling and symmetrization.
//!
//! Cell coding: 1 = air, 0 = square metal, 0.5 = triangular metal. Codes are
//! stored as byte levels {0, 1, 2} = {0, 0.5, 1} so the ternary constraint is
//! structural. Full patterns are invariant under 90-degree rotation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("entry at ({row}, {col}) is {value}, not in {{0, 0.5, 1}}")]
    NonTernary { row: usize, col: usize, value: f64 },
    #[error("entry at ({row}, {col}) is {value}, outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },
    #[error("pattern is not 90-degree rotation symmetric")]
    NotRotationSymmetric,
    #[error("bad dimensions: expected {expected}x{expected}, got {got} cells")]
    BadDimensions { expected: usize, got: usize },
    #[error("bad pattern text: {0}")]
    BadText(String),
}

/// Physical edge length of the full pattern in millimetres (metadata only).
pub const PATTERN_EDGE_MM: f64 = 5.4;
/// Shipped grid size. The codec itself is size-generic.
pub const FULL_SIZE: usize = 32;

fn level_to_code(level: u8) -> f64 {
    level as f64 * 0.5
}

fn code_to_level(code: f64) -> Option<u8> {
    if code == 0.0 {
        Some(0)
    } else if code == 0.5 {
        Some(1)
    } else if code == 1.0 {
        Some(2)
    } else {
        None
    }
}

/// n x n ternary matrix with 90-degree rotation symmetry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TernaryPattern {
    n: usize,
    levels: Vec<u8>,
}

impl TernaryPattern {
    /// Build from byte levels {0, 1, 2}; checks ternary range and rotation
    /// symmetry.
    pub fn from_levels(n: usize, levels: Vec<u8>) -> Result<Self, PatternError> {
        if levels.len() != n * n {
            return Err(PatternError::BadDimensions { expected: n, got: levels.len() });
        }
        for (i, &l) in levels.iter().enumerate() {
            if l > 2 {
                return Err(PatternError::NonTernary {
                    row: i / n,
                    col: i % n,
                    value: l as f64 * 0.5,
                });
            }
        }
        let p = TernaryPattern { n, levels };
        if !p.is_rot90_invariant() {
            return Err(PatternError::NotRotationSymmetric);
        }
        Ok(p)
    }

    /// Build from real codes; every entry must be exactly 0, 0.5 or 1.
    pub fn from_codes(n: usize, codes: &[f64]) -> Result<Self, PatternError> {
        if codes.len() != n * n {
            return Err(PatternError::BadDimensions { expected: n, got: codes.len() });
        }
        let mut levels = Vec::with_capacity(codes.len());
        for (i, &c) in codes.iter().enumerate() {
            let l = code_to_level(c).ok_or(PatternError::NonTernary {
                row: i / n,
                col: i % n,
                value: c,
            })?;
            levels.push(l);
        }
        Self::from_levels(n, levels)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn level(&self, row: usize, col: usize) -> u8 {
        self.levels[row * self.n + col]
    }

    pub fn code(&self, row: usize, col: usize) -> f64 {
        level_to_code(self.level(row, col))
    }

    /// Codes as a flat row-major vector of reals in {0, 0.5, 1}.
    pub fn codes(&self) -> Vec<f64> {
        self.levels.iter().map(|&l| level_to_code(l)).collect()
    }

    /// Cell pitch in millimetres.
    pub fn cell_pitch_mm(&self) -> f64 {
        PATTERN_EDGE_MM / self.n as f64
    }

    pub fn is_rot90_invariant(&self) -> bool {
        let n = self.n;
        for r in 0..n {
            for c in 0..n {
                // rot90 sends (r, c) to (c, n-1-r)
                if self.levels[r * n + c] != self.levels[c * n + (n - 1 - r)] {
                    return false;
                }
            }
        }
        true
    }

    /// Upper-left quadrant.
    pub fn quadrant(&self) -> Quadrant {
        let h = self.n / 2;
        let mut q = Vec::with_capacity(h * h);
        for r in 0..h {
            for c in 0..h {
                q.push(self.levels[r * self.n + c]);
            }
        }
        Quadrant { n: h, levels: q }
    }

    /// Debug text form: one line per row, characters '0', 't' (0.5), '1'.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.n * (self.n + 1));
        for r in 0..self.n {
            for c in 0..self.n {
                s.push(match self.level(r, c) {
                    0 => '0',
                    1 => 't',
                    _ => '1',
                });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, PatternError> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let n = rows.len();
        let mut levels = Vec::with_capacity(n * n);
        for row in &rows {
            let row = row.trim();
            if row.chars().count() != n {
                return Err(PatternError::BadText(format!(
                    "expected {n} characters per row, got {}",
                    row.chars().count()
                )));
            }
            for ch in row.chars() {
                levels.push(match ch {
                    '0' => 0,
                    't' => 1,
                    '1' => 2,
                    other => {
                        return Err(PatternError::BadText(format!("bad character {other:?}")))
                    }
                });
            }
        }
        Self::from_levels(n, levels)
    }
}

/// One quadrant of a pattern; diagonal-symmetric after symmetrization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quadrant {
    n: usize,
    levels: Vec<u8>,
}

impl Quadrant {
    pub fn from_levels(n: usize, levels: Vec<u8>) -> Result<Self, PatternError> {
        if levels.len() != n * n {
            return Err(PatternError::BadDimensions { expected: n, got: levels.len() });
        }
        for (i, &l) in levels.iter().enumerate() {
            if l > 2 {
                return Err(PatternError::NonTernary {
                    row: i / n,
                    col: i % n,
                    value: l as f64 * 0.5,
                });
            }
        }
        Ok(Quadrant { n, levels })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn is_diagonal_symmetric(&self) -> bool {
        let n = self.n;
        (0..n).all(|r| (0..n).all(|c| self.levels[r * n + c] == self.levels[c * n + r]))
    }
}

/// Quantize reals in [0, 1] to {0, 0.5, 1}: round(2x)/2 with ties at
/// 0.25/0.75 rounding half-up. Idempotent on ternary input.
pub fn round_ternary(values: &[f64], n: usize) -> Result<Vec<f64>, PatternError> {
    if values.len() != n * n {
        return Err(PatternError::BadDimensions { expected: n, got: values.len() });
    }
    let mut out = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(PatternError::OutOfRange { row: i / n, col: i % n, value: v });
        }
        out.push((2.0 * v + 0.5).floor() / 2.0);
    }
    Ok(out)
}

/// Symmetrize a quadrant (average with its transpose, then ternary rounding)
/// and mirror it into all four quadrants of the full pattern. The layer order
/// is: add transpose, multiply by 0.5, round.
pub fn assemble_full(q: &Quadrant) -> Result<TernaryPattern, PatternError> {
    let n = q.n;
    let mut sym = vec![0.0f64; n * n];
    for r in 0..n {
        for c in 0..n {
            let a = level_to_code(q.levels[r * n + c]);
            let b = level_to_code(q.levels[c * n + r]);
            sym[r * n + c] = (a + b) * 0.5;
        }
    }
    let rounded = round_ternary(&sym, n)?;
    let m = 2 * n;
    let mut levels = vec![0u8; m * m];
    for r in 0..n {
        for c in 0..n {
            let l = code_to_level(rounded[r * n + c]).expect("round_ternary output is ternary");
            levels[r * m + c] = l;
            levels[r * m + (m - 1 - c)] = l;
            levels[(m - 1 - r) * m + c] = l;
            levels[(m - 1 - r) * m + (m - 1 - c)] = l;
        }
    }
    TernaryPattern::from_levels(m, levels)
}

/// Sample a random symmetric quadrant (i.i.d. uniform ternary on the upper
/// triangle, mirrored) and assemble the full pattern. Deterministic per seed.
pub fn random_pattern(seed: u64) -> TernaryPattern {
    random_pattern_sized(seed, FULL_SIZE)
}

pub fn random_pattern_sized(seed: u64, full_size: usize) -> TernaryPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_quadrant(&mut rng, full_size / 2);
    assemble_full(&q).expect("sampled quadrant is valid")
}

/// Random diagonal-symmetric ternary quadrant.
pub fn random_quadrant(rng: &mut ChaCha8Rng, n: usize) -> Quadrant {
    let mut levels = vec![0u8; n * n];
    for r in 0..n {
        for c in r..n {
            let l = rng.gen_range(0..3u8);
            levels[r * n + c] = l;
            levels[c * n + r] = l;
        }
    }
    Quadrant { n, levels }
}
