//! Uncertainty-aware verification: MC-sampled embeddings, cosine decisions
//! against a calibrated threshold, binary entropy of the accept fraction,
//! and morph blend sweeps.
//!
//! Similarities are compared with `sim > τ` throughout (higher means more
//! alike).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};
use crate::parallel;
use crate::resnet::{GateMask, ResidualNet};
use crate::rng::{self, Domain};
use crate::stochastic::{DepthSchedule, GateConvention, DEFAULT_PASSES};

pub const DEFAULT_FAR: f64 = 0.001;

/// `−y log₂ y − (1−y) log₂(1−y)`, with `0·log₂0 = 0`.
pub fn binary_entropy(y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::invalid(format!("binary entropy needs y in [0, 1], got {y}")));
    }
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    // Evaluate in a canonical order so that H(y) and H(1 − y) agree bitwise.
    let (a, b) = if y <= 0.5 { (y, 1.0 - y) } else { (1.0 - y, y) };
    Ok(term(a) + term(b))
}

/// Threshold accepting at most `m = ⌊n·far⌋` of the impostor similarities
/// under `sim > τ`: the `(m+1)`-th largest value.
pub fn select_threshold(impostor_sims: &[f64], far_target: f64) -> Result<f64> {
    let n = impostor_sims.len();
    if n == 0 {
        return Err(Error::invalid("impostor similarity set is empty"));
    }
    if far_target.is_nan() || far_target < 0.0 {
        return Err(Error::invalid("far_target must be >= 0"));
    }
    if impostor_sims.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("impostor similarities must be finite"));
    }
    let m = accepted_budget(n, far_target);
    if m >= n {
        return Err(Error::invalid(format!(
            "far_target {far_target} accepts every one of {n} impostors"
        )));
    }
    let mut sorted = impostor_sims.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[m])
}

/// Largest `m` with `m / n ≤ far`, robust to rounding in `n·far`.
fn accepted_budget(n: usize, far: f64) -> usize {
    let nf = n as f64;
    let mut m = (nf * far).floor().max(0.0).min(nf) as usize;
    while m < n && (m + 1) as f64 / nf <= far {
        m += 1;
    }
    while m > 0 && m as f64 / nf > far {
        m -= 1;
    }
    m
}

/// Fraction of `sims` strictly above `threshold`.
pub fn accept_rate(sims: &[f64], threshold: f64) -> f64 {
    if sims.is_empty() {
        return 0.0;
    }
    sims.iter().filter(|&&s| s > threshold).count() as f64 / sims.len() as f64
}

/// How the two sides of a pair draw their gates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamAssignment {
    /// Each side has its own streams.
    #[default]
    Independent,
    /// Both sides use the same gates per pass; swapping the pair then leaves
    /// the trial unchanged.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationConfig {
    pub passes: usize,
    pub threshold: f64,
    #[serde(default = "default_far")]
    pub far_target: f64,
    pub seed: u64,
    #[serde(default)]
    pub streams: StreamAssignment,
    /// Keep the `T×T` similarity grid in each trial.
    #[serde(default)]
    pub keep_scores: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_far() -> f64 {
    DEFAULT_FAR
}

impl VerificationConfig {
    pub fn new(passes: usize, threshold: f64, seed: u64) -> Self {
        VerificationConfig {
            passes,
            threshold,
            far_target: DEFAULT_FAR,
            seed,
            streams: StreamAssignment::Independent,
            keep_scores: false,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::invalid("number of passes must be >= 1"));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold must be in [-1, 1], got {}", self.threshold)));
        }
        if !(0.0..1.0).contains(&self.far_target) {
            return Err(Error::invalid("far_target must be in [0, 1)"));
        }
        Ok(())
    }
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig::new(DEFAULT_PASSES, 0.0, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationTrial {
    pub accept_fraction: f64,
    /// Bits.
    pub entropy: f64,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_scores: Option<Vec<Vec<f64>>>,
}

impl VerificationTrial {
    fn from_scores(scores: Vec<Vec<f64>>, threshold: f64, keep: bool) -> Result<Self> {
        let total: usize = scores.iter().map(Vec::len).sum();
        let accepted: usize = scores.iter().map(|r| r.iter().filter(|&&s| s > threshold).count()).sum();
        let y = accepted as f64 / total as f64;
        Ok(VerificationTrial {
            accept_fraction: y,
            entropy: binary_entropy(y)?,
            decision: if y > 0.5 { Decision::Accept } else { Decision::Reject },
            pair_scores: keep.then_some(scores),
        })
    }

    pub fn accepted(&self) -> bool {
        self.decision == Decision::Accept
    }
}

fn side_gates(schedule: &DepthSchedule, seed: u64, domain: Domain, pass: u64) -> GateMask {
    let convention = GateConvention::Inverted;
    let (gates, scales) = schedule
        .survival()
        .iter()
        .enumerate()
        .map(|(l, &q)| {
            let mut rng = rng::stream(seed, domain, pass, l as u64);
            let on = rand::Rng::random::<f64>(&mut rng) < convention.keep_probability(q);
            (on, if on { convention.kept_scale(q) } else { 1.0 })
        })
        .unzip();
    GateMask::new(gates, scales).expect("scales are positive")
}

/// `passes` gated embeddings of every row of `x`; pass `t` gates the whole
/// batch with stream `(seed, domain, t, l)`.
pub fn mc_embeddings(
    net: &ResidualNet,
    x: &Matrix,
    schedule: &DepthSchedule,
    passes: usize,
    seed: u64,
    domain: Domain,
    threads: Option<usize>,
) -> Result<Vec<Matrix>> {
    if schedule.len() != net.num_blocks() {
        return Err(Error::shape("schedule does not match network"));
    }
    if x.cols() != net.spec().input_dim {
        return Err(Error::shape("inputs do not match network"));
    }
    parallel::install(threads, || {
        (0..passes)
            .into_par_iter()
            .map(|t| {
                let mask = side_gates(schedule, seed, domain, t as u64);
                Ok(net.embed(x, &mask)?.vectors)
            })
            .collect()
    })
}

fn domains(streams: StreamAssignment) -> (Domain, Domain) {
    match streams {
        StreamAssignment::Independent => (Domain::VerifyFirst, Domain::VerifySecond),
        StreamAssignment::Shared => (Domain::VerifyFirst, Domain::VerifyFirst),
    }
}

/// `T×T` pass similarities of each row pair `(a_i, b_i)`.
pub fn pair_scores(
    net: &ResidualNet,
    a: &Matrix,
    b: &Matrix,
    schedule: &DepthSchedule,
    cfg: &VerificationConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if cfg.passes == 0 {
        return Err(Error::invalid("number of passes must be >= 1"));
    }
    if a.shape() != b.shape() {
        return Err(Error::shape("pair sides differ in shape"));
    }
    let (da, db) = domains(cfg.streams);
    let ea = mc_embeddings(net, a, schedule, cfg.passes, cfg.seed, da, cfg.threads)?;
    let eb = mc_embeddings(net, b, schedule, cfg.passes, cfg.seed, db, cfg.threads)?;
    Ok((0..a.rows())
        .map(|i| {
            ea.iter()
                .map(|ua| eb.iter().map(|ub| dot(ua.row(i), ub.row(i)).clamp(-1.0, 1.0)).collect())
                .collect()
        })
        .collect())
}

/// One trial per row pair.
pub fn mc_verify_batch(
    net: &ResidualNet,
    a: &Matrix,
    b: &Matrix,
    schedule: &DepthSchedule,
    cfg: &VerificationConfig,
) -> Result<Vec<VerificationTrial>> {
    cfg.validate()?;
    pair_scores(net, a, b, schedule, cfg)?
        .into_iter()
        .map(|s| VerificationTrial::from_scores(s, cfg.threshold, cfg.keep_scores))
        .collect()
}

/// Verifies a single pair of inputs (feature slices).
pub fn mc_verify(
    net: &ResidualNet,
    x_a: &[f64],
    x_b: &[f64],
    schedule: &DepthSchedule,
    cfg: &VerificationConfig,
) -> Result<VerificationTrial> {
    let a = Matrix::new(1, x_a.len(), x_a.to_vec())?;
    let b = Matrix::new(1, x_b.len(), x_b.to_vec())?;
    Ok(mc_verify_batch(net, &a, &b, schedule, cfg)?.remove(0))
}

/// All `T×T` pass similarities over every impostor pair, pooled: the
/// calibration set for [`select_threshold`].
pub fn impostor_similarities(
    net: &ResidualNet,
    a: &Matrix,
    b: &Matrix,
    schedule: &DepthSchedule,
    cfg: &VerificationConfig,
) -> Result<Vec<f64>> {
    if a.rows() == 0 {
        return Err(Error::invalid("impostor set is empty"));
    }
    Ok(pair_scores(net, a, b, schedule, cfg)?
        .into_iter()
        .flatten()
        .flatten()
        .collect())
}

/// Calibrated threshold and its realized FAR on the calibration set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub far_target: f64,
    pub realized_far: f64,
    pub impostor_scores: usize,
}

pub fn calibrate(
    net: &ResidualNet,
    a: &Matrix,
    b: &Matrix,
    schedule: &DepthSchedule,
    cfg: &VerificationConfig,
) -> Result<Calibration> {
    let sims = impostor_similarities(net, a, b, schedule, cfg)?;
    let threshold = select_threshold(&sims, cfg.far_target)?;
    Ok(Calibration {
        threshold,
        far_target: cfg.far_target,
        realized_far: accept_rate(&sims, threshold),
        impostor_scores: sims.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphPoint {
    pub alpha: f64,
    /// Fraction of pairs whose template is accepted as both identities.
    pub attack_success_rate: f64,
    /// `1 − attack_success_rate`.
    pub accuracy: f64,
    /// Mean binary entropy over both trials of every pair.
    pub mean_entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphTrial {
    pub alpha: f64,
    pub pair: usize,
    pub accomplice: VerificationTrial,
    pub impostor: VerificationTrial,
    pub attack_success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphSweep {
    pub threshold: f64,
    pub points: Vec<MorphPoint>,
    #[serde(skip)]
    pub trials: Vec<MorphTrial>,
}

impl MorphSweep {
    pub fn alphas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.alpha).collect()
    }

    pub fn entropy_at(&self, alpha: f64) -> Option<f64> {
        self.points.iter().find(|p| p.alpha == alpha).map(|p| p.mean_entropy)
    }

    /// Mean entropy over the whole sweep.
    pub fn mean_entropy(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().map(|p| p.mean_entropy).sum::<f64>() / self.points.len() as f64
    }

    /// `alpha,attack_success_rate,mean_entropy` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,attack_success_rate,mean_entropy\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.alpha, p.attack_success_rate, p.mean_entropy));
        }
        out
    }

    /// One JSON object per trial.
    pub fn trials_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for t in &self.trials {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Row-wise `α·a + (1−α)·b`.
pub fn blend(accomplice: &Matrix, impostor: &Matrix, alpha: f64) -> Result<Matrix> {
    if accomplice.shape() != impostor.shape() {
        return Err(Error::shape("accomplice and impostor inputs differ in shape"));
    }
    if alpha == 1.0 {
        return Ok(accomplice.clone());
    }
    if alpha == 0.0 {
        return Ok(impostor.clone());
    }
    Ok(accomplice.zip_map(impostor, |a, b| alpha * a + (1.0 - alpha) * b))
}

/// For every α, verifies the blended template against both contributors.
/// Each α reuses the same gate streams.
pub fn morph_sweep(
    net: &ResidualNet,
    accomplices: &Matrix,
    impostors: &Matrix,
    alphas: &[f64],
    schedule: &DepthSchedule,
    cfg: &VerificationConfig,
) -> Result<MorphSweep> {
    cfg.validate()?;
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::invalid(format!("blending factor {a} outside [0, 1]")));
    }
    if accomplices.rows() == 0 {
        return Err(Error::invalid("morph sweep needs at least one pair"));
    }
    let mut points = Vec::with_capacity(alphas.len());
    let mut trials = Vec::with_capacity(alphas.len() * accomplices.rows());
    for &alpha in alphas {
        let template = blend(accomplices, impostors, alpha)?;
        let vs_acc = mc_verify_batch(net, &template, accomplices, schedule, cfg)?;
        let vs_imp = mc_verify_batch(net, &template, impostors, schedule, cfg)?;
        let n = vs_acc.len() as f64;
        let mut successes = 0usize;
        let mut entropy = 0.0;
        for (pair, (ta, ti)) in vs_acc.into_iter().zip(vs_imp).enumerate() {
            let success = ta.accepted() && ti.accepted();
            successes += success as usize;
            entropy += 0.5 * (ta.entropy + ti.entropy);
            trials.push(MorphTrial {
                alpha,
                pair,
                accomplice: ta,
                impostor: ti,
                attack_success: success,
            });
        }
        let rate = successes as f64 / n;
        points.push(MorphPoint {
            alpha,
            attack_success_rate: rate,
            accuracy: 1.0 - rate,
            mean_entropy: entropy / n,
        });
    }
    Ok(MorphSweep {
        threshold: cfg.threshold,
        points,
        trials,
    })
}
