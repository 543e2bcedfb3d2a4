//! Manchester line code and the positive-event-only soft demapper.
//!
//! Bit 1 maps to chips (0,1) (rising edge mid-bit), bit 0 to (1,0). Because an
//! event camera in positive-only mode reports rising edges alone, the edge a
//! bit produces depends on the previous bit; the demapper tracks a soft
//! previous-bit belief across the slot sequence.

use serde::{Deserialize, Serialize};

/// Where a positive edge is expected inside one bit slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgePosition {
    /// Rising edge at the slot boundary (first chip).
    Boundary,
    /// Rising edge at mid-bit (second chip).
    Mid,
    /// No positive edge in this slot.
    None,
}

/// Positive-event mass observed in one bit slot, split into its two chips.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotObservation {
    pub boundary_weight: f64,
    pub mid_weight: f64,
}

/// Soft decoder input for one LED cluster. Positive LLR means bit 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSoftBits {
    pub cluster_index: usize,
    pub llrs: Vec<f64>,
}

/// Encode bits to chips; length doubles.
pub fn manchester_encode(bits: &[u8]) -> Vec<u8> {
    let mut chips = Vec::with_capacity(bits.len() * 2);
    for &b in bits {
        if b != 0 {
            chips.extend_from_slice(&[0, 1]);
        } else {
            chips.extend_from_slice(&[1, 0]);
        }
    }
    chips
}

/// Hard-decision inverse of [`manchester_encode`].
pub fn manchester_decode_chips(chips: &[u8]) -> Vec<u8> {
    chips
        .chunks(2)
        .map(|pair| if pair == [0, 1] { 1 } else { 0 })
        .collect()
}

/// Per-slot positive-edge positions for a bit sequence following `prev_bit`.
///
/// (prev 1, cur 1) -> mid; (prev 0, cur 1) -> mid; (prev 1, cur 0) -> none;
/// (prev 0, cur 0) -> boundary.
pub fn expected_positive_edges(bits: &[u8], prev_bit: u8) -> Vec<EdgePosition> {
    let mut prev = prev_bit;
    bits.iter()
        .map(|&b| {
            let pos = match (prev, b) {
                (_, 1) => EdgePosition::Mid,
                (1, 0) => EdgePosition::None,
                _ => EdgePosition::Boundary,
            };
            prev = b;
            pos
        })
        .collect()
}

/// Rising edges of a chip string given the level of the preceding chip.
/// Returns chip indices whose level is 1 with a 0 before them.
pub fn rising_edge_chips(chips: &[u8], prev_level: u8) -> Vec<usize> {
    let mut prev = prev_level;
    let mut out = Vec::new();
    for (i, &c) in chips.iter().enumerate() {
        if prev == 0 && c == 1 {
            out.push(i);
        }
        prev = c;
    }
    out
}

/// Reconstruct per-bit LLRs from positive-event mass.
///
/// Keeps a posterior on the previous bit and blends the two conditional
/// likelihood branches. Evidence for bit 1 is mid-chip mass in both branches;
/// evidence for bit 0 is boundary mass when the previous bit was 0, and
/// absence of mass when it was 1 (absence measured against the mean nonzero
/// slot mass, so the scale adapts to the scene). When a slot carries mass in
/// both chips the branch with the larger zero-hypothesis likelihood wins
/// outright instead of being blended.
pub fn soft_demap(obs: &[SlotObservation], noise_floor: f64) -> Vec<f64> {
    assert!(noise_floor > 0.0, "noise_floor must be positive");
    let nonzero: Vec<f64> = obs
        .iter()
        .map(|o| o.boundary_weight + o.mid_weight)
        .filter(|&m| m > 0.0)
        .collect();
    let unit_mass = if nonzero.is_empty() {
        noise_floor
    } else {
        nonzero.iter().sum::<f64>() / nonzero.len() as f64
    };

    let mut p_prev_one = 0.0; // frames start after a low pilot chip
    let mut llrs = Vec::with_capacity(obs.len());
    for o in obs {
        let ev_one = o.mid_weight + noise_floor;
        let ev_zero_p0 = o.boundary_weight + noise_floor;
        let missing = (unit_mass - o.boundary_weight - o.mid_weight).max(0.0);
        let ev_zero_p1 = missing + noise_floor;
        let llr_p0 = (ev_zero_p0 / ev_one).ln();
        let llr_p1 = (ev_zero_p1 / ev_one).ln();
        let llr = if o.boundary_weight > 0.0 && o.mid_weight > 0.0 {
            // Both zero-hypothesis branches see support; larger likelihood wins.
            if ev_zero_p0 >= ev_zero_p1 {
                llr_p0
            } else {
                llr_p1
            }
        } else {
            (1.0 - p_prev_one) * llr_p0 + p_prev_one * llr_p1
        };
        p_prev_one = 1.0 / (1.0 + llr.exp());
        llrs.push(llr);
    }
    llrs
}

/// Convenience: hard bit decisions from LLR signs (ties decode as 0).
pub fn hard_decisions(llrs: &[f64]) -> Vec<u8> {
    llrs.iter().map(|&l| (l < 0.0) as u8).collect()
}

/// Build the ideal observation sequence a noiseless positive-only sensor
/// would produce for `bits` after `prev_bit`, one unit of mass per edge.
pub fn ideal_observations(bits: &[u8], prev_bit: u8) -> Vec<SlotObservation> {
    expected_positive_edges(bits, prev_bit)
        .iter()
        .map(|e| match e {
            EdgePosition::Boundary => SlotObservation {
                boundary_weight: 1.0,
                mid_weight: 0.0,
            },
            EdgePosition::Mid => SlotObservation {
                boundary_weight: 0.0,
                mid_weight: 1.0,
            },
            EdgePosition::None => SlotObservation::default(),
        })
        .collect()
}
