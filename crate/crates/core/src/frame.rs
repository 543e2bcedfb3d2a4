//! Packet framing: sync preamble, pilot block, and per-cluster chip schedules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manchester;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("layout invalid: {0}")]
    InvalidLayout(String),
    #[error("payload length {got} bytes does not match layout capacity {want} bytes")]
    PayloadSize { got: usize, want: usize },
    #[error("expected {want} coded-bit sequences, got {got}")]
    ClusterCount { got: usize, want: usize },
    #[error(
        "cluster {cluster}: {bits} coded bits expand to {chips} chips, layout carries {want}"
    )]
    DataSize {
        cluster: usize,
        bits: usize,
        chips: usize,
        want: usize,
    },
}

/// Chip-level frame structure shared by transmitter and receiver.
///
/// A frame is `sync ‖ (pilot blocks interleaved with data chips)`. Pilot
/// positions are offsets into the post-sync slot stream where a copy of
/// `pilot_chips` is inserted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameLayout {
    pub chip_period_us: u32,
    pub sync_pulse_slots: Vec<usize>,
    pub pilot_chips: Vec<u8>,
    pub pilot_positions: Vec<usize>,
    pub data_chips_per_cluster: usize,
    pub cluster_count: usize,
    /// Darkness between consecutive frames, in chip slots.
    pub inter_packet_gap_slots: usize,
}

impl Default for FrameLayout {
    fn default() -> Self {
        // 13 sync slots + 5 pilot chips + 256 data chips = 274 slots = 27.4 ms.
        FrameLayout {
            chip_period_us: 100,
            sync_pulse_slots: vec![0, 5, 9, 12],
            pilot_chips: vec![1, 0, 1, 1, 0],
            pilot_positions: vec![0],
            data_chips_per_cluster: 256,
            cluster_count: 16,
            inter_packet_gap_slots: 10,
        }
    }
}

/// What a given chip slot of the frame carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Sync,
    /// Index into the pilot chip pattern (per inserted block).
    Pilot(usize),
    /// Index into the per-cluster data chip sequence.
    Data(usize),
}

impl FrameLayout {
    pub fn validate(&self) -> Result<(), FrameError> {
        if self.chip_period_us == 0 {
            return Err(FrameError::InvalidLayout("chip_period_us must be > 0".into()));
        }
        if self.cluster_count == 0 {
            return Err(FrameError::InvalidLayout("cluster_count must be >= 1".into()));
        }
        if self.sync_pulse_slots.is_empty() {
            return Err(FrameError::InvalidLayout("sync pattern needs pulses".into()));
        }
        if !self.sync_pulse_slots.windows(2).all(|w| w[0] < w[1]) {
            return Err(FrameError::InvalidLayout(
                "sync pulse slots must be strictly increasing".into(),
            ));
        }
        if self.data_chips_per_cluster % 2 != 0 {
            return Err(FrameError::InvalidLayout(
                "data chips must pair into Manchester bits".into(),
            ));
        }
        let post = self.post_sync_slots();
        let mut seen = vec![false; post];
        for &p in &self.pilot_positions {
            if p + self.pilot_chips.len() > post {
                return Err(FrameError::InvalidLayout("pilot block overruns frame".into()));
            }
            for s in &mut seen[p..p + self.pilot_chips.len()] {
                if *s {
                    return Err(FrameError::InvalidLayout("pilot blocks overlap".into()));
                }
                *s = true;
            }
        }
        Ok(())
    }

    /// Number of slots occupied by the sync pattern.
    pub fn sync_slots(&self) -> usize {
        self.sync_pulse_slots.last().map_or(0, |&s| s + 1)
    }

    fn post_sync_slots(&self) -> usize {
        self.pilot_chips.len() * self.pilot_positions.len() + self.data_chips_per_cluster
    }

    /// Total chip slots in one frame.
    pub fn total_slots(&self) -> usize {
        self.sync_slots() + self.post_sync_slots()
    }

    /// Coded (pre-Manchester) bits carried per cluster.
    pub fn coded_bits_per_cluster(&self) -> usize {
        self.data_chips_per_cluster / 2
    }

    /// Map each frame slot to what it carries.
    pub fn slot_map(&self) -> Vec<SlotKind> {
        let sync = self.sync_slots();
        let mut map = vec![SlotKind::Sync; sync];
        let post = self.post_sync_slots();
        let mut kinds = vec![None; post];
        for &p in &self.pilot_positions {
            for (i, k) in kinds[p..p + self.pilot_chips.len()].iter_mut().enumerate() {
                *k = Some(SlotKind::Pilot(i));
            }
        }
        let mut data_idx = 0;
        for k in kinds {
            map.push(k.unwrap_or_else(|| {
                let s = SlotKind::Data(data_idx);
                data_idx += 1;
                s
            }));
        }
        map
    }

    /// Frame slot indices carrying rising edges of the pilot pattern.
    ///
    /// An edge is expected where a pilot chip is 1 and the previous frame chip
    /// is 0. The chip preceding a pilot block is taken from the sync pattern or
    /// surrounding data; only edges that are known regardless of the payload
    /// count, so a pilot chip following a data chip is never an expected edge.
    pub fn pilot_edge_slots(&self) -> Vec<usize> {
        let map = self.slot_map();
        let sync = build_sync_pattern(self);
        let mut edges = Vec::new();
        for (slot, kind) in map.iter().enumerate() {
            let SlotKind::Pilot(i) = kind else { continue };
            if self.pilot_chips[*i] == 0 {
                continue;
            }
            let prev = if slot == 0 {
                Some(0)
            } else {
                match map[slot - 1] {
                    SlotKind::Sync => Some(sync[slot - 1]),
                    SlotKind::Pilot(j) => Some(self.pilot_chips[j]),
                    SlotKind::Data(_) => None, // payload dependent
                }
            };
            if prev == Some(0) {
                edges.push(slot);
            }
        }
        edges
    }

    /// Bytes of packet payload one frame carries, given the per-cluster
    /// payload bit count of the FEC configuration.
    pub fn payload_capacity_bytes(&self, payload_bits_per_cluster: usize) -> usize {
        self.cluster_count * payload_bits_per_cluster / 8
    }
}

/// A packet awaiting transmission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub payload: Vec<u8>,
    pub packet_id: u64,
}

/// On/off chip pattern for one LED cluster over one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterChipSchedule {
    pub cluster_index: usize,
    pub chips: Vec<u8>,
}

/// Sync preamble: single-chip pulses whose rising edges are spaced 5T, 4T, 3T.
pub fn build_sync_pattern(layout: &FrameLayout) -> Vec<u8> {
    let len = layout.sync_slots();
    let mut chips = vec![0u8; len];
    for &s in &layout.sync_pulse_slots {
        chips[s] = 1;
    }
    chips
}

/// Expand per-cluster coded bits into full chip schedules.
pub fn assemble_frame(
    packet: &Packet,
    coded_bits: &[Vec<u8>],
    layout: &FrameLayout,
    payload_bits_per_cluster: usize,
) -> Result<Vec<ClusterChipSchedule>, FrameError> {
    layout.validate()?;
    let want = layout.payload_capacity_bytes(payload_bits_per_cluster);
    if packet.payload.len() != want {
        return Err(FrameError::PayloadSize {
            got: packet.payload.len(),
            want,
        });
    }
    if coded_bits.len() != layout.cluster_count {
        return Err(FrameError::ClusterCount {
            got: coded_bits.len(),
            want: layout.cluster_count,
        });
    }
    let sync = build_sync_pattern(layout);
    let map = layout.slot_map();
    let mut schedules = Vec::with_capacity(layout.cluster_count);
    for (cluster_index, bits) in coded_bits.iter().enumerate() {
        let data = manchester::manchester_encode(bits);
        if data.len() != layout.data_chips_per_cluster {
            return Err(FrameError::DataSize {
                cluster: cluster_index,
                bits: bits.len(),
                chips: data.len(),
                want: layout.data_chips_per_cluster,
            });
        }
        let chips = map
            .iter()
            .map(|kind| match kind {
                SlotKind::Sync => 0, // filled below
                SlotKind::Pilot(i) => self_pilot(layout, *i),
                SlotKind::Data(i) => data[*i],
            })
            .enumerate()
            .map(|(slot, c)| if slot < sync.len() { sync[slot] } else { c })
            .collect();
        schedules.push(ClusterChipSchedule { cluster_index, chips });
    }
    Ok(schedules)
}

fn self_pilot(layout: &FrameLayout, i: usize) -> u8 {
    layout.pilot_chips[i]
}

/// Extract the coded bits back out of a schedule (inverse of the data part
/// of [`assemble_frame`]); used for noiseless round-trip checks.
pub fn extract_coded_bits(schedule: &ClusterChipSchedule, layout: &FrameLayout) -> Vec<u8> {
    let map = layout.slot_map();
    let mut chips = vec![0u8; layout.data_chips_per_cluster];
    for (slot, kind) in map.iter().enumerate() {
        if let SlotKind::Data(i) = kind {
            chips[*i] = schedule.chips[slot];
        }
    }
    manchester::manchester_decode_chips(&chips)
}

/// Duration of one frame in microseconds.
pub fn frame_duration_us(layout: &FrameLayout) -> u64 {
    layout.total_slots() as u64 * layout.chip_period_us as u64
}
