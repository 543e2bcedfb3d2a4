//! End-to-end latency arithmetic and the cooperative-perception budget check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{frame_duration_us, FrameLayout};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatencyError {
    #[error("packet count must be at least 1")]
    NoPackets,
}

/// Components of the command-to-decoded latency, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub t_cmd_us: u64,
    pub t_blink_us: u64,
    pub t_transfer_us: u64,
    pub t_proc_us: u64,
    pub total_us: u64,
}

pub const DEFAULT_T_CMD_US: u64 = 1000;
pub const DEFAULT_T_TRANSFER_US: u64 = 2000;

/// Blinking time covers `n` frames plus the inter-packet gaps between them;
/// the total is the plain sum of the four components.
pub fn latency_model(
    n_packets: u64,
    layout: &FrameLayout,
    t_cmd_us: u64,
    t_transfer_us: u64,
    t_proc_us: u64,
) -> Result<LatencyBreakdown, LatencyError> {
    if n_packets == 0 {
        return Err(LatencyError::NoPackets);
    }
    let gap = layout.inter_packet_gap_slots as u64 * layout.chip_period_us as u64;
    let t_blink_us = n_packets * frame_duration_us(layout) + (n_packets - 1) * gap;
    Ok(LatencyBreakdown {
        t_cmd_us,
        t_blink_us,
        t_transfer_us,
        t_proc_us,
        total_us: t_cmd_us + t_blink_us + t_transfer_us + t_proc_us,
    })
}

/// ETSI cooperative-perception compliance report: at least 200 bytes must be
/// delivered within 100 ms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtsiReport {
    pub pass: bool,
    pub payload_bytes: u64,
    /// payload_bytes - 200 (negative when short of the requirement).
    pub payload_margin_bytes: i64,
    /// 100 000 us - total (negative when over budget).
    pub latency_margin_us: i64,
}

pub const ETSI_MIN_PAYLOAD_BYTES: u64 = 200;
pub const ETSI_MAX_LATENCY_US: u64 = 100_000;

pub fn etsi_check(breakdown: &LatencyBreakdown, payload_bytes: u64) -> EtsiReport {
    let payload_margin_bytes = payload_bytes as i64 - ETSI_MIN_PAYLOAD_BYTES as i64;
    let latency_margin_us = ETSI_MAX_LATENCY_US as i64 - breakdown.total_us as i64;
    EtsiReport {
        pass: payload_margin_bytes >= 0 && latency_margin_us >= 0,
        payload_bytes,
        payload_margin_bytes,
        latency_margin_us,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_packet_total() {
        let layout = FrameLayout::default();
        let b = latency_model(1, &layout, 1000, 2000, 13_000).unwrap();
        assert_eq!(b.t_blink_us, 27_400);
        assert_eq!(b.total_us, 43_400);
    }

    #[test]
    fn three_packets_with_and_without_gap() {
        let layout = FrameLayout::default();
        let with_gap = latency_model(3, &layout, 1000, 2000, 16_000).unwrap();
        // 3 * 27 400 + 2 * 1000 = 84 200 blink.
        assert_eq!(with_gap.t_blink_us, 84_200);
        assert_eq!(with_gap.total_us, 103_200);
        let mut no_gap = layout.clone();
        no_gap.inter_packet_gap_slots = 0;
        let b = latency_model(3, &no_gap, 0, 0, 16_000).unwrap();
        assert_eq!(b.total_us, 98_200);
    }

    #[test]
    fn zero_packets_rejected() {
        assert_eq!(
            latency_model(0, &FrameLayout::default(), 0, 0, 0),
            Err(LatencyError::NoPackets)
        );
    }

    #[test]
    fn total_is_component_sum_for_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let layout = FrameLayout::default();
        for _ in 0..200 {
            let n = rng.gen_range(1..20);
            let cmd = rng.gen_range(0..10_000);
            let xfer = rng.gen_range(0..10_000);
            let proc = rng.gen_range(0..50_000);
            let b = latency_model(n, &layout, cmd, xfer, proc).unwrap();
            assert_eq!(b.total_us, b.t_cmd_us + b.t_blink_us + b.t_transfer_us + b.t_proc_us);
        }
    }

    #[test]
    fn etsi_rules() {
        let ok = LatencyBreakdown {
            t_cmd_us: 0,
            t_blink_us: 82_200,
            t_transfer_us: 0,
            t_proc_us: 16_000,
            total_us: 98_200,
        };
        assert!(etsi_check(&ok, 288).pass);
        let small = LatencyBreakdown {
            t_cmd_us: 1000,
            t_blink_us: 27_400,
            t_transfer_us: 2000,
            t_proc_us: 13_000,
            total_us: 43_400,
        };
        assert!(!etsi_check(&small, 96).pass);
        let slow = LatencyBreakdown { total_us: 110_000, ..ok };
        assert!(!etsi_check(&slow, 288).pass);
    }
}
