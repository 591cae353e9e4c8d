//! Multipath transport endpoints: a sender striping one byte stream across
//! two subflows with per-subflow NewReno machinery and pluggable coupled
//! window-increase laws, plus the shared in-order receive buffer.

mod receiver;
mod sender;

pub use receiver::Receiver;
pub use sender::{AckOutcome, Phase, Sender};

use std::fmt;
use std::str::FromStr;

/// Window-increase law applied on each congestion-avoidance ACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CcAlgorithm {
    /// Linked increase: every subflow gains `alpha / W`.
    Lia,
    /// Linked increase capped at a single flow's `1 / w_i` gain.
    RttCompensator,
    /// Independent per-subflow NewReno: `1 / w_i`.
    Uncoupled,
    /// All subflows share one window's worth of growth: `1 / W`.
    FullyCoupled,
}

impl CcAlgorithm {
    pub const ALL: [CcAlgorithm; 4] = [
        CcAlgorithm::Lia,
        CcAlgorithm::RttCompensator,
        CcAlgorithm::Uncoupled,
        CcAlgorithm::FullyCoupled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CcAlgorithm::Lia => "lia",
            CcAlgorithm::RttCompensator => "rtt-compensator",
            CcAlgorithm::Uncoupled => "uncoupled",
            CcAlgorithm::FullyCoupled => "fully-coupled",
        }
    }
}

impl fmt::Display for CcAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CcAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CcAlgorithm::ALL
            .into_iter()
            .find(|alg| alg.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown congestion control `{s}` (expected one of: lia, \
                     rtt-compensator, uncoupled, fully-coupled)"
                )
            })
    }
}

/// Atomic snapshot of every active subflow's `(window in MSS, smoothed RTT
/// in seconds)`, captured at the instant an increase is computed so the
/// coupling never mixes state from different moments.
#[derive(Debug, Clone)]
pub struct CouplingView {
    pub subflows: Vec<(f64, f64)>,
}

impl CouplingView {
    pub fn total_window(&self) -> f64 {
        self.subflows.iter().map(|&(w, _)| w).sum()
    }
}

/// Aggressiveness factor shared by the coupled laws:
/// `W * max_i(w_i / rtt_i^2) / (sum_i w_i / rtt_i)^2`.
///
/// Requires at least one subflow and a positive RTT estimate on each —
/// callers must wait for the first RTT sample before coupling.
pub fn alpha(view: &CouplingView) -> f64 {
    assert!(!view.subflows.is_empty(), "alpha of an empty coupling view");
    let total = view.total_window();
    assert!(total > 0.0, "alpha requires positive total window");
    let mut peak = 0.0f64;
    let mut denom = 0.0f64;
    for &(w, rtt) in &view.subflows {
        assert!(rtt > 0.0, "alpha requires an RTT sample on every subflow");
        peak = peak.max(w / (rtt * rtt));
        denom += w / rtt;
    }
    total * peak / (denom * denom)
}

/// Congestion-avoidance window increase for subflow `i`, in MSS per ACK.
pub fn increase_per_ack(alg: CcAlgorithm, view: &CouplingView, i: usize) -> f64 {
    let total = view.total_window();
    let w_i = view.subflows[i].0;
    match alg {
        CcAlgorithm::Lia => alpha(view) / total,
        CcAlgorithm::RttCompensator => (alpha(view) / total).min(1.0 / w_i),
        CcAlgorithm::Uncoupled => 1.0 / w_i,
        CcAlgorithm::FullyCoupled => 1.0 / total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(subflows: &[(f64, f64)]) -> CouplingView {
        CouplingView {
            subflows: subflows.to_vec(),
        }
    }

    #[test]
    fn alpha_of_a_single_subflow_is_one() {
        for &(w, rtt) in &[(1.0, 0.001), (7.3, 0.123), (46.2, 0.9)] {
            let a = alpha(&view(&[(w, rtt)]));
            assert!((a - 1.0).abs() <= 1e-12, "alpha({w},{rtt}) = {a}");
        }
    }

    #[test]
    fn alpha_of_two_identical_subflows_is_half() {
        let a = alpha(&view(&[(10.0, 0.1), (10.0, 0.1)]));
        assert!((a - 0.5).abs() <= 1e-12, "got {a}");
    }

    #[test]
    fn alpha_asymmetric_worked_value() {
        // By hand: total 10, peak 8/0.05^2 = 3200, denominator
        // (8/0.05 + 2/0.2)^2 = 170^2 = 28900, so 32000/28900.
        let a = alpha(&view(&[(8.0, 0.05), (2.0, 0.2)]));
        let expected = 32000.0 / 28900.0;
        assert!((a - expected).abs() / expected <= 1e-12, "got {a}");
        assert!((a - 1.1073).abs() < 5e-4);
    }

    #[test]
    fn lia_increase_is_alpha_over_total() {
        // Single subflow of 10 MSS: alpha = 1, total = 10.
        let v = view(&[(10.0, 0.2)]);
        let d = increase_per_ack(CcAlgorithm::Lia, &v, 0);
        assert!((d - 0.1).abs() <= 1e-12, "got {d}");
    }

    #[test]
    fn rtt_compensator_takes_the_smaller_of_linked_and_single_flow() {
        // Two identical subflows: alpha = 0.5, total = 20, so the linked
        // share 0.025 undercuts the single-flow 0.1.
        let v = view(&[(10.0, 0.1), (10.0, 0.1)]);
        let d = increase_per_ack(CcAlgorithm::RttCompensator, &v, 0);
        assert!((d - 0.025).abs() <= 1e-12, "got {d}");
    }

    #[test]
    fn uncoupled_increase_is_one_over_own_window() {
        let v = view(&[(4.0, 0.1), (16.0, 0.3)]);
        let d = increase_per_ack(CcAlgorithm::Uncoupled, &v, 0);
        assert!((d - 0.25).abs() <= 1e-12, "got {d}");
    }

    #[test]
    fn fully_coupled_increase_is_one_over_total() {
        let v = view(&[(10.0, 0.1), (10.0, 0.1)]);
        let d = increase_per_ack(CcAlgorithm::FullyCoupled, &v, 0);
        assert!((d - 0.05).abs() <= 1e-12, "got {d}");
    }

    #[test]
    fn all_laws_reduce_to_one_over_w_for_a_single_subflow() {
        for &(w, rtt) in &[(2.0, 0.004), (9.5, 0.21), (46.2, 1.3)] {
            let v = view(&[(w, rtt)]);
            for alg in CcAlgorithm::ALL {
                let d = increase_per_ack(alg, &v, 0);
                let want = 1.0 / w;
                assert!(
                    (d - want).abs() / want <= 1e-12,
                    "{alg} at w={w}: {d} vs {want}"
                );
            }
        }
    }

    #[test]
    fn compensator_never_exceeds_lia_or_uncoupled() {
        // Deterministic sweep over a small lattice of two-subflow states.
        for wa in 1..=8u32 {
            for wb in 1..=8u32 {
                for (ra, rb) in [(0.01, 0.3), (0.1, 0.1), (0.25, 0.02)] {
                    let v = view(&[(wa as f64, ra), (wb as f64, rb)]);
                    for i in 0..2 {
                        let comp = increase_per_ack(CcAlgorithm::RttCompensator, &v, i);
                        let lia = increase_per_ack(CcAlgorithm::Lia, &v, i);
                        let unc = increase_per_ack(CcAlgorithm::Uncoupled, &v, i);
                        assert!(comp <= lia + 1e-15);
                        assert!(comp <= unc + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for alg in CcAlgorithm::ALL {
            assert_eq!(alg.to_string().parse::<CcAlgorithm>().unwrap(), alg);
        }
        assert!("reno".parse::<CcAlgorithm>().is_err());
        let err = "blob".parse::<CcAlgorithm>().unwrap_err();
        assert!(err.contains("rtt-compensator"), "diagnostic lists options");
    }
}
