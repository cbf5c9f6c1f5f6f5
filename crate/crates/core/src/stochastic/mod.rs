//! Survival schedules, gate sampling and Monte Carlo prediction under the
//! three inference regimes:
//!
//! - `DET`: every block on, no noise; all passes are identical.
//! - `MCDO`: every block on, fresh unit-dropout masks inside each branch per
//!   pass.
//! - `MCSD`: fresh Bernoulli block gates per pass; a kept block's branch is
//!   scaled by `1/q_l` so the gated block is mean-preserving.
//!
//! Pass `t` draws its gate for block `l` from the stream
//! `(base_seed, pass t, layer l)`, so results do not depend on how passes are
//! spread over threads. Reductions run in pass order.

mod enumerate;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::softmax_rows;
use crate::numerics::Matrix;
use crate::parallel;
use crate::resnet::{DropoutMasks, GateMask, Mode, ResidualNet};
use crate::rng::{self, Domain};

pub use enumerate::{enumerate_expectation, enumerate_predict, enumerate_predict_with, gate_patterns, MAX_ENUMERATED_BLOCKS};

/// Number of stochastic passes used when none is configured.
pub const DEFAULT_PASSES: usize = 50;

/// Passes per unit of parallel work. Fixed so the summation order is fixed.
const PASS_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "DET")]
    Det,
    #[serde(rename = "MCDO")]
    Mcdo,
    #[serde(rename = "MCSD")]
    Mcsd,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Det => "DET",
            Regime::Mcdo => "MCDO",
            Regime::Mcsd => "MCSD",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DET" => Ok(Regime::Det),
            "MCDO" => Ok(Regime::Mcdo),
            "MCSD" => Ok(Regime::Mcsd),
            _ => Err(Error::invalid(format!("unknown regime {s:?} (expected DET, MCDO or MCSD)"))),
        }
    }
}

/// How a gate is drawn from `q_l` and how a kept branch is scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateConvention {
    /// Keep with probability `q_l`, no scaling (training).
    Unscaled,
    /// Keep with probability `q_l`, scale the branch by `1/q_l`.
    #[default]
    Inverted,
    /// Compatibility mode reading the schedule as drop rates
    /// `p_l = 1 − q_l`: keep with probability `p_l`, scale by `1/(1 − p_l)`.
    LiteralDropRate,
}

impl GateConvention {
    /// Probability that the gate for survival `q` is on.
    pub fn keep_probability(self, q: f64) -> f64 {
        match self {
            GateConvention::Unscaled | GateConvention::Inverted => q,
            GateConvention::LiteralDropRate => 1.0 - q,
        }
    }

    /// Multiplier applied to a kept branch.
    pub fn kept_scale(self, q: f64) -> f64 {
        match self {
            GateConvention::Unscaled => 1.0,
            GateConvention::Inverted | GateConvention::LiteralDropRate => 1.0 / q,
        }
    }
}

/// Per-block survival probabilities `q_l ∈ (0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSchedule {
    survival: Vec<f64>,
}

impl DepthSchedule {
    pub fn new(survival: Vec<f64>) -> Result<Self> {
        if survival.is_empty() {
            return Err(Error::invalid("schedule needs at least one block"));
        }
        if let Some(q) = survival.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
            return Err(Error::invalid(format!("survival probability must be in (0, 1], got {q}")));
        }
        Ok(DepthSchedule { survival })
    }

    /// `q_l = 1 − (l/L)(1 − q_final)` for `l = 1..=L`.
    pub fn linear_decay(blocks: usize, q_final: f64) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::invalid("schedule needs at least one block"));
        }
        if !(q_final > 0.0 && q_final <= 1.0) {
            return Err(Error::invalid(format!("q_final must be in (0, 1], got {q_final}")));
        }
        let l_total = blocks as f64;
        let survival = (1..=blocks)
            .map(|l| {
                if l == blocks {
                    q_final
                } else {
                    1.0 - (l as f64 / l_total) * (1.0 - q_final)
                }
            })
            .collect();
        DepthSchedule::new(survival)
    }

    pub fn constant(blocks: usize, q: f64) -> Result<Self> {
        DepthSchedule::new(vec![q; blocks])
    }

    pub fn all_survive(blocks: usize) -> Self {
        DepthSchedule {
            survival: vec![1.0; blocks],
        }
    }

    pub fn len(&self) -> usize {
        self.survival.len()
    }

    pub fn is_empty(&self) -> bool {
        self.survival.is_empty()
    }

    pub fn survival(&self) -> &[f64] {
        &self.survival
    }

    fn check_blocks(&self, net: &ResidualNet) -> Result<()> {
        if self.len() != net.num_blocks() {
            return Err(Error::shape(format!(
                "schedule covers {} blocks, network has {}",
                self.len(),
                net.num_blocks()
            )));
        }
        Ok(())
    }
}

#[inline]
fn draw_gate<R: Rng + ?Sized>(keep: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < keep
}

/// Draws one gate per block from `rng`, in block order.
pub fn sample_gates<R: Rng + ?Sized>(
    schedule: &DepthSchedule,
    rng: &mut R,
    convention: GateConvention,
) -> GateMask {
    let (gates, scales) = schedule
        .survival
        .iter()
        .map(|&q| {
            let on = draw_gate(convention.keep_probability(q), rng);
            (on, if on { convention.kept_scale(q) } else { 1.0 })
        })
        .unzip();
    GateMask::new(gates, scales).expect("scales are positive for q in (0, 1]")
}

/// Gates for MC pass `pass`: block `l` uses stream `(seed, pass, l)`.
pub fn pass_gates(schedule: &DepthSchedule, seed: u64, pass: u64, convention: GateConvention) -> GateMask {
    let (gates, scales) = schedule
        .survival
        .iter()
        .enumerate()
        .map(|(l, &q)| {
            let mut rng = rng::stream(seed, Domain::Gates, pass, l as u64);
            let on = draw_gate(convention.keep_probability(q), &mut rng);
            (on, if on { convention.kept_scale(q) } else { 1.0 })
        })
        .unzip();
    GateMask::new(gates, scales).expect("scales are positive for q in (0, 1]")
}

/// Dropout masks for MC pass `pass`: block `l` uses stream `(seed, pass, l)`.
pub fn pass_dropout(net: &ResidualNet, batch: usize, rate: f64, seed: u64, pass: u64) -> Result<DropoutMasks> {
    DropoutMasks::sample(net.num_blocks(), batch, net.spec().hidden_dim, rate, |l| {
        rng::stream(seed, Domain::Dropout, pass, l as u64)
    })
}

/// Eval-mode logits with fresh unit dropout (keep `1 − rate`, kept units
/// scaled by `1/(1 − rate)`) after the batch norm of every block. All blocks
/// stay on.
pub fn mcdo_forward<R: Rng>(net: &ResidualNet, x: &Matrix, rate: f64, rng: &mut R) -> Result<Matrix> {
    let masks = DropoutMasks::sample(net.num_blocks(), x.rows(), net.spec().hidden_dim, rate, |_| {
        let seed: [u8; 32] = rng.random();
        <rand_chacha::ChaCha8Rng as rand::SeedableRng>::from_seed(seed)
    })?;
    net.forward_dropout(x, &GateMask::all_on(net.num_blocks()), Mode::Eval, &masks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub passes: usize,
    pub base_seed: u64,
    pub regime: Regime,
    /// Unit dropout rate, used by `MCDO` only.
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub convention: GateConvention,
    /// Keep every pass's probabilities in the summary.
    #[serde(default)]
    pub keep_passes: bool,
    /// Worker cap; `None` reads `UQ_THREADS`. Never changes results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl McConfig {
    pub fn new(regime: Regime, passes: usize, base_seed: u64) -> Self {
        McConfig {
            passes,
            base_seed,
            regime,
            dropout_rate: 0.0,
            convention: GateConvention::Inverted,
            keep_passes: false,
            threads: None,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::invalid("number of passes must be >= 1"));
        }
        if self.regime == Regime::Mcdo && !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// MC predictive distribution for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSummary {
    /// Per-sample average of per-pass softmax outputs.
    pub mean_probs: Matrix,
    /// Natural-log entropy of `mean_probs`, per sample.
    pub entropy: Vec<f64>,
    pub per_pass_probs: Option<Vec<Matrix>>,
    pub passes: usize,
    pub regime: Regime,
    pub seed: u64,
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    mean_probs: Vec<Vec<f64>>,
    entropy: &'a [f64],
    #[serde(rename = "T")]
    passes: usize,
    regime: Regime,
    seed: u64,
}

impl PredictiveSummary {
    fn from_mean(mean_probs: Matrix, per_pass_probs: Option<Vec<Matrix>>, passes: usize, regime: Regime, seed: u64) -> Self {
        let entropy = mean_probs.iter_rows().map(predictive_entropy).collect();
        PredictiveSummary {
            mean_probs,
            entropy,
            per_pass_probs,
            passes,
            regime,
            seed,
        }
    }

    /// JSON document `{mean_probs, entropy, T, regime, seed}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&SummaryJson {
            mean_probs: self.mean_probs.to_rows(),
            entropy: &self.entropy,
            passes: self.passes,
            regime: self.regime,
            seed: self.seed,
        })?)
    }
}

/// `−Σ_c p_c ln p_c`, clamped to `[0, ln C]`.
pub fn predictive_entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.clamp(0.0, (probs.len() as f64).ln())
}

/// Softmax probabilities of one MC pass.
fn pass_probs(net: &ResidualNet, x: &Matrix, schedule: &DepthSchedule, cfg: &McConfig, pass: usize) -> Result<Matrix> {
    let pass = pass as u64;
    let logits = match cfg.regime {
        Regime::Det => net.forward(x, &GateMask::all_on(net.num_blocks()), Mode::Eval)?,
        Regime::Mcsd => {
            let mask = pass_gates(schedule, cfg.base_seed, pass, cfg.convention);
            net.forward(x, &mask, Mode::Eval)?
        }
        Regime::Mcdo => {
            let masks = pass_dropout(net, x.rows(), cfg.dropout_rate, cfg.base_seed, pass)?;
            net.forward_dropout(x, &GateMask::all_on(net.num_blocks()), Mode::Eval, &masks)?
        }
    };
    Ok(softmax_rows(&logits))
}

/// Averages `cfg.passes` stochastic eval-mode passes (MC estimate of the
/// predictive distribution) and reports its entropy.
pub fn mc_predict(net: &ResidualNet, x: &Matrix, schedule: &DepthSchedule, cfg: &McConfig) -> Result<PredictiveSummary> {
    cfg.validate()?;
    schedule.check_blocks(net)?;
    let t = cfg.passes;

    if cfg.regime == Regime::Det {
        let probs = pass_probs(net, x, schedule, cfg, 0)?;
        let per_pass = cfg.keep_passes.then(|| vec![probs.clone(); t]);
        return Ok(PredictiveSummary::from_mean(probs, per_pass, t, cfg.regime, cfg.base_seed));
    }

    let chunks = t.div_ceil(PASS_CHUNK);
    let partials: Vec<(Matrix, Vec<Matrix>)> = parallel::install(cfg.threads, || {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut sum = Matrix::zeros(x.rows(), net.spec().num_classes);
                let mut kept = Vec::new();
                for pass in c * PASS_CHUNK..((c + 1) * PASS_CHUNK).min(t) {
                    let p = pass_probs(net, x, schedule, cfg, pass)?;
                    sum.add_assign_unchecked(&p);
                    if cfg.keep_passes {
                        kept.push(p);
                    }
                }
                Ok((sum, kept))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut total = Matrix::zeros(x.rows(), net.spec().num_classes);
    let mut per_pass = cfg.keep_passes.then(|| Vec::with_capacity(t));
    for (sum, kept) in partials {
        total.add_assign_unchecked(&sum);
        if let Some(all) = per_pass.as_mut() {
            all.extend(kept);
        }
    }
    let mean = total.scale(1.0 / t as f64);
    Ok(PredictiveSummary::from_mean(mean, per_pass, t, cfg.regime, cfg.base_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resnet::{Block, Linear, NetworkSpec};
    use rand::SeedableRng;

    fn small_net(blocks: usize, seed: u64) -> ResidualNet {
        ResidualNet::new(
            NetworkSpec {
                input_dim: 2,
                hidden_dim: 6,
                num_blocks: blocks,
                num_classes: 3,
                use_batchnorm: true,
            },
            seed,
        )
        .unwrap()
    }

    fn batch() -> Matrix {
        Matrix::new(3, 2, vec![0.3, -1.2, 1.0, 0.5, -0.7, 0.0]).unwrap()
    }

    #[test]
    fn linear_decay_values() {
        let s = DepthSchedule::linear_decay(54, 1.0).unwrap();
        assert!(s.survival().iter().all(|q| *q == 1.0));
        let s = DepthSchedule::linear_decay(54, 0.5).unwrap();
        assert_eq!(s.survival()[53], 0.5);
        assert!((s.survival()[26] - 0.75).abs() < 1e-15);
        assert!(s.survival().windows(2).all(|w| w[0] >= w[1]));
        let s = DepthSchedule::linear_decay(7, 0.3).unwrap();
        assert_eq!(*s.survival().last().unwrap(), 0.3);
    }

    #[test]
    fn zero_survival_is_rejected() {
        assert!(DepthSchedule::linear_decay(4, 0.0).is_err());
        assert!(DepthSchedule::new(vec![1.0, 0.0]).is_err());
        assert!(DepthSchedule::new(vec![1.5]).is_err());
    }

    #[test]
    fn certain_survival_keeps_every_gate_unscaled() {
        let s = DepthSchedule::all_survive(5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for conv in [GateConvention::Unscaled, GateConvention::Inverted] {
            let m = sample_gates(&s, &mut rng, conv);
            assert!(m.gates().iter().all(|g| *g));
            assert!(m.scales().iter().all(|s| *s == 1.0));
        }
    }

    #[test]
    fn gate_on_rate_concentrates() {
        // 100k draws of Bernoulli(0.5): 3σ = 3·sqrt(0.25/1e5) ≈ 0.0047.
        let s = DepthSchedule::constant(1, 0.5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let on = (0..100_000)
            .filter(|_| sample_gates(&s, &mut rng, GateConvention::Inverted).is_on(0))
            .count();
        let rate = on as f64 / 1e5;
        assert!((rate - 0.5).abs() < 0.005, "rate {rate}");
    }

    #[test]
    fn inverted_scale_is_reciprocal_survival() {
        let s = DepthSchedule::new(vec![0.25, 0.8]).unwrap();
        let mut seen_on = [false; 2];
        for pass in 0..200 {
            let m = pass_gates(&s, 5, pass, GateConvention::Inverted);
            for (l, seen) in seen_on.iter_mut().enumerate() {
                if m.is_on(l) {
                    *seen = true;
                    assert_eq!(m.scales()[l], 1.0 / s.survival()[l]);
                } else {
                    assert_eq!(m.scales()[l], 1.0);
                }
            }
        }
        assert_eq!(seen_on, [true, true]);
    }

    #[test]
    fn literal_convention_keeps_with_drop_rate() {
        let s = DepthSchedule::constant(1, 0.8).unwrap();
        let on = (0..20_000)
            .filter(|&p| pass_gates(&s, 1, p, GateConvention::LiteralDropRate).is_on(0))
            .count();
        // keep rate 0.2; 3σ ≈ 0.0085
        assert!((on as f64 / 20_000.0 - 0.2).abs() < 0.0085);
        assert_eq!(GateConvention::LiteralDropRate.kept_scale(0.8), 1.0 / 0.8);
    }

    #[test]
    fn pass_gates_are_reproducible() {
        let s = DepthSchedule::linear_decay(6, 0.5).unwrap();
        for pass in 0..20 {
            assert_eq!(
                pass_gates(&s, 77, pass, GateConvention::Inverted),
                pass_gates(&s, 77, pass, GateConvention::Inverted)
            );
        }
    }

    #[test]
    fn det_passes_are_identical_single_softmax() {
        let net = small_net(3, 1);
        let s = DepthSchedule::linear_decay(3, 0.5).unwrap();
        let mut cfg = McConfig::new(Regime::Det, 7, 0);
        cfg.keep_passes = true;
        let out = mc_predict(&net, &batch(), &s, &cfg).unwrap();
        let single = softmax_rows(&net.forward(&batch(), &GateMask::all_on(3), Mode::Eval).unwrap());
        assert_eq!(out.mean_probs, single);
        let passes = out.per_pass_probs.unwrap();
        assert_eq!(passes.len(), 7);
        assert!(passes.iter().all(|p| *p == single));
        for (h, row) in out.entropy.iter().zip(single.iter_rows()) {
            assert_eq!(*h, predictive_entropy(row));
        }
    }

    #[test]
    fn identity_blocks_make_mcsd_equal_det() {
        let mut net = small_net(4, 2);
        for b in &mut net.blocks {
            b.fc2 = Linear::zeros(6, 6);
        }
        let s = DepthSchedule::linear_decay(4, 0.3).unwrap();
        let det = mc_predict(&net, &batch(), &s, &McConfig::new(Regime::Det, 1, 0)).unwrap();
        let mcsd = mc_predict(&net, &batch(), &s, &McConfig::new(Regime::Mcsd, 100, 9)).unwrap();
        assert!(mcsd.mean_probs.max_abs_diff(&det.mean_probs).unwrap() < 1e-14);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let net = small_net(4, 3);
        let s = DepthSchedule::linear_decay(4, 0.5).unwrap();
        for regime in [Regime::Mcsd, Regime::Mcdo] {
            let mut cfg = McConfig::new(regime, 300, 11).with_dropout(0.3);
            cfg.threads = Some(1);
            let a = mc_predict(&net, &batch(), &s, &cfg).unwrap();
            cfg.threads = Some(4);
            let b = mc_predict(&net, &batch(), &s, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mean_probs_are_in_the_simplex_and_entropy_is_bounded() {
        let net = small_net(3, 4);
        let s = DepthSchedule::linear_decay(3, 0.5).unwrap();
        for regime in [Regime::Det, Regime::Mcsd, Regime::Mcdo] {
            let cfg = McConfig::new(regime, 40, 2).with_dropout(0.5);
            let out = mc_predict(&net, &batch(), &s, &cfg).unwrap();
            for (row, h) in out.mean_probs.iter_rows().zip(&out.entropy) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(*h >= 0.0 && *h <= 3f64.ln());
            }
        }
    }

    #[test]
    fn zero_rate_dropout_is_plain_forward() {
        let net = small_net(3, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let a = mcdo_forward(&net, &batch(), 0.0, &mut rng).unwrap();
        let b = net.forward(&batch(), &GateMask::all_on(3), Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert!(mcdo_forward(&net, &batch(), 1.0, &mut rng).is_err());
    }

    #[test]
    fn inverted_dropout_is_unbiased_on_a_hidden_unit() {
        // One block, fc1 = identity-ish, no BN, fc2 reads one unit: the
        // branch output equals the dropped post-BN activation of unit 0.
        let spec = NetworkSpec {
            input_dim: 1,
            hidden_dim: 1,
            num_blocks: 1,
            num_classes: 2,
            use_batchnorm: false,
        };
        let one = |i, o| Linear {
            weight: Matrix::filled(i, o, 1.0),
            bias: vec![0.0; o],
        };
        let block = Block {
            fc1: one(1, 1),
            bn: None,
            fc2: one(1, 1),
        };
        let net = ResidualNet::from_parts(spec, one(1, 1), vec![block], one(1, 2)).unwrap();
        let x = Matrix::new(1, 1, vec![0.8]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            // logit 0 = x + dropout(x)
            let v = mcdo_forward(&net, &x, 0.5, &mut rng).unwrap().get(0, 0) - 0.8;
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let sd = (sum_sq / n as f64 - mean * mean).sqrt();
        assert!((mean - 0.8).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn mcdo_never_drops_blocks() {
        let mut net = small_net(2, 6);
        // With identity blocks, dropout cannot matter; with all blocks on it is
        // DET-equivalent.
        for b in &mut net.blocks {
            b.fc2 = Linear::zeros(6, 6);
        }
        let s = DepthSchedule::constant(2, 0.1).unwrap();
        let det = mc_predict(&net, &batch(), &s, &McConfig::new(Regime::Det, 1, 0)).unwrap();
        let mcdo = mc_predict(&net, &batch(), &s, &McConfig::new(Regime::Mcdo, 10, 0).with_dropout(0.9)).unwrap();
        assert!(mcdo.mean_probs.max_abs_diff(&det.mean_probs).unwrap() < 1e-14);
    }

    #[test]
    fn summary_json_shape() {
        let net = small_net(2, 7);
        let s = DepthSchedule::all_survive(2);
        let out = mc_predict(&net, &batch(), &s, &McConfig::new(Regime::Mcsd, 3, 99)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out.to_json().unwrap()).unwrap();
        assert_eq!(v["T"], 3);
        assert_eq!(v["regime"], "MCSD");
        assert_eq!(v["seed"], 99);
        assert_eq!(v["mean_probs"].as_array().unwrap().len(), 3);
        assert_eq!(v["entropy"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn regime_parses_case_insensitively() {
        assert_eq!("mcsd".parse::<Regime>().unwrap(), Regime::Mcsd);
        assert_eq!("DET".parse::<Regime>().unwrap(), Regime::Det);
        assert!("sbn".parse::<Regime>().is_err());
    }

    #[test]
    fn passes_must_be_positive() {
        let net = small_net(2, 8);
        let s = DepthSchedule::all_survive(2);
        assert!(mc_predict(&net, &batch(), &s, &McConfig::new(Regime::Mcsd, 0, 0)).is_err());
        assert!(mc_predict(&net, &batch(), &DepthSchedule::all_survive(3), &McConfig::new(Regime::Mcsd, 1, 0)).is_err());
    }
}
