//! Simulated-annealing inverse design over quadrant codes, used as the
//! optimization baseline. Chains mutate one quadrant cell at a time and score
//! candidates with a caller-supplied objective (the frozen surrogate in the
//! pipeline, the oracle in tests).

use crate::oracle::{simulate, SpectralResponse};
use crate::pattern::{assemble_full, random_pattern, Quadrant, TernaryPattern};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const QUAD: usize = 16;

#[derive(Clone, Copy, Debug)]
pub struct SaConfig {
    pub t0: f64,
    pub alpha: f64,
    /// Geometric cooling is applied after every `moves_per_temp` moves.
    pub moves_per_temp: usize,
    pub t_min: f64,
    pub max_moves: usize,
    pub seed: u64,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig { t0: 1.0, alpha: 0.95, moves_per_temp: 50, t_min: 1e-3, max_moves: 5000, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SaMove {
    pub mv: usize,
    pub t: f64,
    pub j: f64,
    pub accepted: bool,
    pub best_j: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SaTrace {
    /// Objective of the random starting state.
    pub init_j: f64,
    pub moves: Vec<SaMove>,
}

impl SaTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("move,T,J,accepted,bestJ\n");
        for m in &self.moves {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.mv, m.t, m.j, m.accepted as u8, m.best_j
            ));
        }
        out
    }
}

/// Metropolis rule: non-worsening moves always pass, worsening ones with
/// probability exp(-dj/t).
pub fn accept(dj: f64, t: f64, rng: &mut ChaCha8Rng) -> bool {
    dj <= 0.0 || rng.gen_range(0.0..1.0) < (-dj / t).exp()
}

struct Chain {
    quad: Vec<u8>,
    rng: ChaCha8Rng,
    current_j: f64,
    best_quad: Vec<u8>,
    best_j: f64,
    trace: SaTrace,
}

impl Chain {
    fn pattern_of(levels: &[u8]) -> TernaryPattern {
        let q = Quadrant::from_levels(QUAD, levels.to_vec()).expect("valid ternary quadrant");
        assemble_full(&q).expect("quadrant assembles")
    }

    /// Propose a single-cell reassignment; returns the mutated quadrant.
    fn propose(&mut self) -> (usize, u8, Vec<u8>) {
        let cell = self.rng.gen_range(0..QUAD * QUAD);
        let old = self.quad[cell];
        let new = (old + 1 + self.rng.gen_range(0..2u8)) % 3;
        let mut next = self.quad.clone();
        next[cell] = new;
        (cell, new, next)
    }
}

/// Run one chain per target in lockstep, scoring every chain's candidate in
/// one batched objective call per move. Each chain draws from its own
/// `cfg.seed + index` stream, so results match independent runs and do not
/// depend on how many targets share the batch.
///
/// The objective receives (chain index, full pattern) pairs — one per still
/// active chain — and must return one value per pair, in order.
pub fn sa_design_batch(
    n_targets: usize,
    objective: &mut dyn FnMut(&[(usize, TernaryPattern)]) -> Vec<f64>,
    cfg: &SaConfig,
) -> Vec<(TernaryPattern, SaTrace)> {
    assert!(cfg.alpha > 0.0 && cfg.alpha < 1.0, "alpha in (0,1)");
    assert!(cfg.t0 >= cfg.t_min && cfg.t_min > 0.0, "T0 >= T_min > 0");

    let mut chains: Vec<Chain> = (0..n_targets)
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            Chain {
                quad: random_pattern(seed).quadrant().levels().to_vec(),
                rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_5a5a),
                current_j: f64::NAN,
                best_quad: Vec::new(),
                best_j: f64::INFINITY,
                trace: SaTrace::default(),
            }
        })
        .collect();

    // initial objective for every chain
    let init: Vec<(usize, TernaryPattern)> =
        chains.iter().enumerate().map(|(i, c)| (i, Chain::pattern_of(&c.quad))).collect();
    for (slot, j) in init.iter().zip(objective(&init)) {
        let c = &mut chains[slot.0];
        c.current_j = j;
        c.best_j = j;
        c.best_quad = c.quad.clone();
        c.trace.init_j = j;
    }

    let mut t = cfg.t0;
    let mut mv = 0usize;
    while mv < cfg.max_moves && t >= cfg.t_min {
        let proposals: Vec<(usize, u8, Vec<u8>)> = chains.iter_mut().map(Chain::propose).collect();
        let batch: Vec<(usize, TernaryPattern)> = proposals
            .iter()
            .enumerate()
            .map(|(i, (_, _, next))| (i, Chain::pattern_of(next)))
            .collect();
        let scores = objective(&batch);
        for ((chain, (_, _, next)), j) in chains.iter_mut().zip(proposals).zip(scores) {
            let dj = j - chain.current_j;
            let accepted = accept(dj, t, &mut chain.rng);
            if accepted {
                chain.quad = next;
                chain.current_j = j;
                if j < chain.best_j {
                    chain.best_j = j;
                    chain.best_quad = chain.quad.clone();
                }
            }
            chain.trace.moves.push(SaMove { mv, t, j, accepted, best_j: chain.best_j });
        }
        mv += 1;
        if mv % cfg.moves_per_temp == 0 {
            t *= cfg.alpha;
        }
    }

    chains
        .into_iter()
        .map(|c| (Chain::pattern_of(&c.best_quad), c.trace))
        .collect()
}

/// Single-target convenience wrapper over [`sa_design_batch`].
pub fn sa_design(
    objective: &mut dyn FnMut(&TernaryPattern) -> f64,
    cfg: &SaConfig,
) -> (TernaryPattern, SaTrace) {
    let mut wrap = |batch: &[(usize, TernaryPattern)]| {
        batch.iter().map(|(_, p)| objective(p)).collect()
    };
    sa_design_batch(1, &mut wrap, cfg).remove(0)
}

/// Ground-truth score of a finished design: mean |oracle(p) - target|.
pub fn final_evaluate(p: &TernaryPattern, c_target: &SpectralResponse) -> f64 {
    simulate(p).mae(c_target)
}
