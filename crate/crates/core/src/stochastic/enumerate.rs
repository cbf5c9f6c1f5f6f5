//! Exact expectation over all `2^L` gate patterns; the reference against
//! which the MC estimator is checked.

use super::{predictive_entropy, DepthSchedule, GateConvention, PredictiveSummary, Regime};
use crate::error::{Error, Result};
use crate::numerics::ops::softmax_rows;
use crate::numerics::Matrix;
use crate::resnet::{GateMask, Mode, ResidualNet};

pub const MAX_ENUMERATED_BLOCKS: usize = 16;

/// Every gate pattern with its probability `Π_l k_l^{b_l} (1 − k_l)^{1 − b_l}`
/// (`k_l` the keep probability), scaled per `convention`. Bit `l` of the
/// pattern index is the gate of block `l`.
pub fn gate_patterns(schedule: &DepthSchedule, convention: GateConvention) -> Result<Vec<(GateMask, f64)>> {
    let l_total = schedule.len();
    if l_total > MAX_ENUMERATED_BLOCKS {
        return Err(Error::invalid(format!(
            "refusing to enumerate 2^{l_total} gate patterns (limit {MAX_ENUMERATED_BLOCKS} blocks)"
        )));
    }
    let q = schedule.survival();
    let patterns = (0..1usize << l_total)
        .map(|bits| {
            let mut weight = 1.0;
            let mut gates = Vec::with_capacity(l_total);
            let mut scales = Vec::with_capacity(l_total);
            for (l, &ql) in q.iter().enumerate() {
                let keep = convention.keep_probability(ql);
                let on = bits >> l & 1 == 1;
                weight *= if on { keep } else { 1.0 - keep };
                gates.push(on);
                scales.push(if on { convention.kept_scale(ql) } else { 1.0 });
            }
            (GateMask::new(gates, scales).expect("positive scales"), weight)
        })
        .collect();
    Ok(patterns)
}

/// `Σ_patterns weight · f(mask)` for a matrix-valued `f`. Zero-weight
/// patterns are skipped.
pub fn enumerate_expectation(
    schedule: &DepthSchedule,
    convention: GateConvention,
    mut f: impl FnMut(&GateMask) -> Result<Matrix>,
) -> Result<Matrix> {
    let mut acc: Option<Matrix> = None;
    for (mask, w) in gate_patterns(schedule, convention)? {
        if w == 0.0 {
            continue;
        }
        let term = f(&mask)?.scale(w);
        match acc.as_mut() {
            Some(a) => {
                if a.shape() != term.shape() {
                    return Err(Error::shape("expectation terms differ in shape"));
                }
                a.add_assign_unchecked(&term);
            }
            None => acc = Some(term),
        }
    }
    acc.ok_or_else(|| Error::invalid("every gate pattern has zero probability"))
}

/// Exact predictive distribution under the inverted (mean-preserving) gate
/// convention used by [`super::mc_predict`].
pub fn enumerate_predict(net: &ResidualNet, x: &Matrix, schedule: &DepthSchedule) -> Result<PredictiveSummary> {
    enumerate_predict_with(net, x, schedule, GateConvention::Inverted)
}

pub fn enumerate_predict_with(
    net: &ResidualNet,
    x: &Matrix,
    schedule: &DepthSchedule,
    convention: GateConvention,
) -> Result<PredictiveSummary> {
    schedule.check_blocks(net)?;
    let mean = enumerate_expectation(schedule, convention, |mask| {
        Ok(softmax_rows(&net.forward(x, mask, Mode::Eval)?))
    })?;
    let entropy = mean.iter_rows().map(predictive_entropy).collect();
    Ok(PredictiveSummary {
        mean_probs: mean,
        entropy,
        per_pass_probs: None,
        passes: 1usize << schedule.len(),
        regime: Regime::Mcsd,
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resnet::{Block, Linear, NetworkSpec};

    /// Scalar net: stem = head = identity, F(x) = 1 (bias only).
    fn scalar_net(blocks: usize) -> ResidualNet {
        let spec = NetworkSpec {
            input_dim: 1,
            hidden_dim: 1,
            num_blocks: blocks,
            num_classes: 2,
            use_batchnorm: false,
        };
        let block = Block {
            fc1: Linear::zeros(1, 1),
            bn: None,
            fc2: Linear {
                weight: Matrix::zeros(1, 1),
                bias: vec![1.0],
            },
        };
        let stem = Linear {
            weight: Matrix::filled(1, 1, 1.0),
            bias: vec![0.0],
        };
        // Logits (h, 0): class-0 probability is sigmoid(h).
        let head = Linear {
            weight: Matrix::new(1, 2, vec![1.0, 0.0]).unwrap(),
            bias: vec![0.0, 0.0],
        };
        ResidualNet::from_parts(spec, stem, vec![block; blocks], head).unwrap()
    }

    fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    #[test]
    fn single_certain_block_is_deterministic_forward() {
        let net = scalar_net(1);
        let x = Matrix::new(1, 1, vec![0.3]).unwrap();
        let s = DepthSchedule::all_survive(1);
        let exact = enumerate_predict(&net, &x, &s).unwrap();
        let det = softmax_rows(&net.forward(&x, &GateMask::all_on(1), Mode::Eval).unwrap());
        assert_eq!(exact.mean_probs, det);
    }

    #[test]
    fn half_survival_mixes_two_outcomes() {
        // Off: h = x. On (scale 2): h = x + 2. Each with weight 1/2.
        let net = scalar_net(1);
        let x = 0.3;
        let s = DepthSchedule::constant(1, 0.5).unwrap();
        let exact = enumerate_predict(&net, &Matrix::new(1, 1, vec![x]).unwrap(), &s).unwrap();
        let expected = 0.5 * sigmoid(x) + 0.5 * sigmoid(x + 2.0);
        assert!((exact.mean_probs.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn pattern_weights_sum_to_one() {
        for q in [vec![0.5, 0.5, 0.5], vec![1.0, 0.75, 0.625, 0.5], vec![0.9, 0.3, 0.1]] {
            let s = DepthSchedule::new(q).unwrap();
            let total: f64 = gate_patterns(&s, GateConvention::Inverted)
                .unwrap()
                .iter()
                .map(|(_, w)| w)
                .sum();
            assert!((total - 1.0).abs() < 1e-15, "{total}");
        }
        // Dyadic probabilities are exact.
        let s = DepthSchedule::new(vec![0.5, 0.75, 0.25]).unwrap();
        let total: f64 = gate_patterns(&s, GateConvention::Inverted).unwrap().iter().map(|(_, w)| w).sum();
        assert_eq!(total, 1.0);
    }

    #[test]
    fn gated_block_is_mean_preserving() {
        let net = scalar_net(1);
        let x = Matrix::new(2, 1, vec![0.3, -1.1]).unwrap();
        for q in [0.2, 0.5, 0.9] {
            let s = DepthSchedule::constant(1, q).unwrap();
            let mean_hidden = enumerate_expectation(&s, GateConvention::Inverted, |m| {
                Ok(net.trace(&x, m, Mode::Eval, None)?.hidden().clone())
            })
            .unwrap();
            for r in 0..2 {
                assert!((mean_hidden.get(r, 0) - (x.get(r, 0) + 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn refuses_large_enumerations() {
        let s = DepthSchedule::constant(17, 0.5).unwrap();
        assert!(gate_patterns(&s, GateConvention::Inverted).is_err());
    }
}
