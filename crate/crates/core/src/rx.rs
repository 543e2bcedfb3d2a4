//! Receiver: time-shift recording, transmitter-region identification,
//! synchronization, pilot weighting, waveform accumulation, and decoding.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{FrameLayout, SlotKind};
use crate::manchester::{self, SlotObservation};
use crate::polar::{self, PolarCodeConfig};
use crate::sensor::Event;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RxError {
    #[error("no synchronization peak (max bin {max_count} < min {min_peak})")]
    NoPeak { max_count: usize, min_peak: usize },
    #[error("region height {height} px cannot hold {clusters} cluster bands")]
    BandTooThin { height: usize, clusters: usize },
}

/// Per-pixel state built from the sync-sequence interval matcher.
///
/// Events whose interval to the previous event at the same pixel is 5T, 4T or
/// 3T are shifted forward by 7T, 3T or 0 respectively, so every event of one
/// sync sequence records at the final sync-edge time.
#[derive(Debug, Default, Clone)]
pub struct ShiftRecord {
    last: HashMap<(u16, u16), i64>,
    /// Aligned-event count per pixel.
    pub counts: HashMap<(u16, u16), u32>,
    /// Aligned (timestamp, x, y) triples.
    pub aligned: Vec<(i64, u16, u16)>,
}

/// Single pass over a sorted positive-event stream.
pub fn time_shift_record(events: &[Event], t_chip: i64, tol: i64) -> ShiftRecord {
    assert!(t_chip > 0 && tol < t_chip / 2, "tolerance must stay below T/2");
    let mut rec = ShiftRecord::default();
    for e in events {
        if e.polarity <= 0 {
            continue;
        }
        let key = (e.x, e.y);
        if let Some(&last) = rec.last.get(&key) {
            let dt = e.t_us - last;
            let shift = if (dt - 5 * t_chip).abs() <= tol {
                Some(7 * t_chip)
            } else if (dt - 4 * t_chip).abs() <= tol {
                Some(3 * t_chip)
            } else if (dt - 3 * t_chip).abs() <= tol {
                Some(0)
            } else {
                None
            };
            if let Some(s) = shift {
                rec.aligned.push((e.t_us + s, e.x, e.y));
                *rec.counts.entry(key).or_insert(0) += 1;
            }
        }
        rec.last.insert(key, e.t_us);
    }
    rec
}

/// Detected transmitter bounding rectangle (inclusive pixel bounds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub x_min: u16,
    pub y_min: u16,
    pub x_max: u16,
    pub y_max: u16,
    /// Aligned-event mass inside the box.
    pub score: f64,
}

impl RegionBox {
    pub fn width(&self) -> usize {
        self.x_max as usize - self.x_min as usize + 1
    }
    pub fn height(&self) -> usize {
        self.y_max as usize - self.y_min as usize + 1
    }
    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
    pub fn contains(&self, x: u16, y: u16) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Intersection-over-union with another box.
    pub fn iou(&self, other: &RegionBox) -> f64 {
        let ix = (self.x_max.min(other.x_max) as i64 - self.x_min.max(other.x_min) as i64 + 1)
            .max(0) as f64;
        let iy = (self.y_max.min(other.y_max) as i64 - self.y_min.max(other.y_min) as i64 + 1)
            .max(0) as f64;
        let inter = ix * iy;
        let union = self.area() as f64 + other.area() as f64 - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    fn gap_to(&self, other: &RegionBox) -> i64 {
        let dx = (other.x_min as i64 - self.x_max as i64)
            .max(self.x_min as i64 - other.x_max as i64)
            .max(0);
        let dy = (other.y_min as i64 - self.y_max as i64)
            .max(self.y_min as i64 - other.y_max as i64)
            .max(0);
        dx.max(dy)
    }

    fn union_with(&self, other: &RegionBox) -> RegionBox {
        RegionBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
            score: self.score + other.score,
        }
    }
}

/// Region-detection and synchronization thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub sigma: f64,
    pub count_threshold: f64,
    pub merge_gap_px: u16,
    pub min_area: usize,
    pub max_area: usize,
    pub min_hot_pixels: usize,
    pub min_peak: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            sigma: 1.5,
            count_threshold: 1.0,
            merge_gap_px: 8,
            min_area: 12,
            max_area: 200_000,
            min_hot_pixels: 4,
            min_peak: 3,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Gaussian filter, binarize, flood fill, merge, and area/hot-pixel filter.
pub fn detect_regions(
    record: &ShiftRecord,
    width: u32,
    height: u32,
    params: &DetectParams,
) -> Vec<RegionBox> {
    if record.counts.is_empty() {
        return Vec::new();
    }
    // Work on the padded bounding box of nonzero counts only.
    let radius = (3.0 * params.sigma).ceil() as i64 + 1;
    let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for &(x, y) in record.counts.keys() {
        x0 = x0.min(x as i64);
        y0 = y0.min(y as i64);
        x1 = x1.max(x as i64);
        y1 = y1.max(y as i64);
    }
    let x0 = (x0 - radius).max(0) as usize;
    let y0 = (y0 - radius).max(0) as usize;
    let x1 = (x1 + radius).min(width as i64 - 1) as usize;
    let y1 = (y1 + radius).min(height as i64 - 1) as usize;
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);

    let mut img = vec![0.0f64; w * h];
    for (&(x, y), &c) in &record.counts {
        img[(y as usize - y0) * w + (x as usize - x0)] = c as f64;
    }
    let kernel = gaussian_kernel(params.sigma);
    let r = kernel.len() as i64 / 2;
    let mut tmp = vec![0.0f64; w * h];
    for yy in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sx = xx as i64 + ki as i64 - r;
                if sx >= 0 && (sx as usize) < w {
                    acc += kv * img[yy * w + sx as usize];
                }
            }
            tmp[yy * w + xx] = acc;
        }
    }
    let mut blurred = vec![0.0f64; w * h];
    for yy in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sy = yy as i64 + ki as i64 - r;
                if sy >= 0 && (sy as usize) < h {
                    acc += kv * tmp[sy as usize * w + xx];
                }
            }
            blurred[yy * w + xx] = acc;
        }
    }

    let mask: Vec<bool> = blurred.iter().map(|&v| v >= params.count_threshold).collect();

    // 4-connected flood fill over the mask.
    let mut label = vec![0u32; w * h];
    let mut boxes: Vec<RegionBox> = Vec::new();
    let mut next = 1u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || label[start] != 0 {
            continue;
        }
        let id = next;
        next += 1;
        label[start] = id;
        stack.push(start);
        let (mut bx0, mut by0, mut bx1, mut by1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(p) = stack.pop() {
            let (px, py) = (p % w, p / w);
            bx0 = bx0.min(px);
            by0 = by0.min(py);
            bx1 = bx1.max(px);
            by1 = by1.max(py);
            let mut visit = |q: usize| {
                if mask[q] && label[q] == 0 {
                    label[q] = id;
                    stack.push(q);
                }
            };
            if px > 0 {
                visit(p - 1);
            }
            if px + 1 < w {
                visit(p + 1);
            }
            if py > 0 {
                visit(p - w);
            }
            if py + 1 < h {
                visit(p + w);
            }
        }
        boxes.push(RegionBox {
            x_min: (bx0 + x0) as u16,
            y_min: (by0 + y0) as u16,
            x_max: (bx1 + x0) as u16,
            y_max: (by1 + y0) as u16,
            score: 0.0,
        });
    }

    // Merge nearby rectangles until stable.
    let mut merged = true;
    while merged {
        merged = false;
        'outer: for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if boxes[i].gap_to(&boxes[j]) <= params.merge_gap_px as i64 {
                    let b = boxes[i].union_with(&boxes[j]);
                    boxes[i] = b;
                    boxes.swap_remove(j);
                    merged = true;
                    break 'outer;
                }
            }
        }
    }

    // Score, shrink to the hot-pixel support (the blur halo inflates the
    // mask and would skew the cluster bands), then filter.
    let mut out = Vec::new();
    for mut b in boxes {
        let mut score = 0.0;
        let mut hot = 0usize;
        let (mut hx0, mut hy0, mut hx1, mut hy1) = (u16::MAX, u16::MAX, 0u16, 0u16);
        for (&(x, y), &c) in &record.counts {
            if b.contains(x, y) {
                score += c as f64;
                if c as f64 >= params.count_threshold {
                    hot += 1;
                    hx0 = hx0.min(x);
                    hy0 = hy0.min(y);
                    hx1 = hx1.max(x);
                    hy1 = hy1.max(y);
                }
            }
        }
        b.score = score;
        if hot > 0 {
            b = RegionBox { x_min: hx0, y_min: hy0, x_max: hx1, y_max: hy1, score };
        }
        if b.area() < params.min_area || b.area() > params.max_area || hot < params.min_hot_pixels {
            continue;
        }
        out.push(b);
    }
    out.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    out
}

/// Temporal-density peak of aligned timestamps inside a region: histogram
/// with bin width T/2, largest bin wins, ties resolved to the earliest bin.
pub fn synchronize(
    record: &ShiftRecord,
    region: &RegionBox,
    t_chip: i64,
    min_peak: usize,
) -> Result<i64, RxError> {
    let bin = (t_chip / 2).max(1);
    let mut hist: HashMap<i64, usize> = HashMap::new();
    for &(t, x, y) in &record.aligned {
        if region.contains(x, y) {
            *hist.entry(t.div_euclid(bin)).or_insert(0) += 1;
        }
    }
    let best = hist
        .iter()
        .max_by_key(|(&b, &c)| (c, std::cmp::Reverse(b)))
        .map(|(&b, &c)| (b, c));
    match best {
        Some((b, c)) if c >= min_peak => {
            // Median of the timestamps near the winning bin; the raw bin
            // center is biased by up to half a bin.
            let center = b * bin + bin / 2;
            let mut near: Vec<i64> = record
                .aligned
                .iter()
                .filter(|&&(t, x, y)| region.contains(x, y) && (t - center).abs() <= t_chip / 2)
                .map(|&(t, _, _)| t)
                .collect();
            near.sort_unstable();
            Ok(near[near.len() / 2])
        }
        Some((_, c)) => Err(RxError::NoPeak {
            max_count: c,
            min_peak,
        }),
        None => Err(RxError::NoPeak {
            max_count: 0,
            min_peak,
        }),
    }
}

/// Per-pixel weight in [0, 1] inside a region.
pub type PixelWeightMap = HashMap<(u16, u16), f64>;

/// Frame start time implied by a sync estimate: `t_sync` marks the rising
/// edge of the final sync pulse.
pub fn frame_start_us(t_sync: i64, layout: &FrameLayout) -> i64 {
    let last = *layout.sync_pulse_slots.last().expect("validated layout");
    t_sync - last as i64 * layout.chip_period_us as i64
}

/// Pilot-correlation weighting: matched expected pilot edges over expected
/// edge count, clipped to [0, 1]. Pixels with no events weigh 0; spurious
/// events do not reduce the match count.
pub fn pixel_weights(
    events: &[Event],
    region: &RegionBox,
    t_sync: i64,
    layout: &FrameLayout,
) -> PixelWeightMap {
    let t_chip = layout.chip_period_us as i64;
    let t0 = frame_start_us(t_sync, layout);
    let edge_times: Vec<i64> = layout
        .pilot_edge_slots()
        .iter()
        .map(|&s| t0 + s as i64 * t_chip)
        .collect();
    let mut weights = PixelWeightMap::new();
    if edge_times.is_empty() {
        return weights;
    }
    let mut by_pixel: HashMap<(u16, u16), Vec<i64>> = HashMap::new();
    for e in events {
        if e.polarity > 0 && region.contains(e.x, e.y) {
            by_pixel.entry((e.x, e.y)).or_default().push(e.t_us);
        }
    }
    for (pixel, times) in by_pixel {
        let matched = edge_times
            .iter()
            .filter(|&&et| times.iter().any(|&t| (t - et).abs() <= t_chip / 2))
            .count();
        let w = (matched as f64 / edge_times.len() as f64).clamp(0.0, 1.0);
        weights.insert(pixel, w);
    }
    weights
}

/// Sum weighted event mass into per-cluster, per-bit-slot observations.
///
/// The region's vertical extent splits into equal cluster bands (top band is
/// cluster 0). Signal events mark rising edges, i.e. slot starts, so each
/// event maps to the slot whose start edge is nearest; a timestamp exactly on
/// a slot edge belongs to the later slot.
pub fn accumulate_cluster_observations(
    events: &[Event],
    region: &RegionBox,
    weights: &PixelWeightMap,
    t_sync: i64,
    layout: &FrameLayout,
) -> Result<Vec<Vec<SlotObservation>>, RxError> {
    if region.height() < layout.cluster_count {
        return Err(RxError::BandTooThin {
            height: region.height(),
            clusters: layout.cluster_count,
        });
    }
    let t_chip = layout.chip_period_us as i64;
    let t0 = frame_start_us(t_sync, layout);
    let map = layout.slot_map();
    let bits = layout.coded_bits_per_cluster();
    let band_h = region.height() as f64 / layout.cluster_count as f64;
    let mut obs = vec![vec![SlotObservation::default(); bits]; layout.cluster_count];
    for e in events {
        if e.polarity <= 0 || e.y < region.y_min || e.y > region.y_max {
            continue;
        }
        let slot = (e.t_us - t0 + t_chip / 2).div_euclid(t_chip);
        if slot < 0 || slot as usize >= map.len() {
            continue;
        }
        let SlotKind::Data(chip) = map[slot as usize] else {
            continue;
        };
        let w = weights.get(&(e.x, e.y)).copied().unwrap_or(0.0);
        if w == 0.0 {
            continue;
        }
        let cluster = (((e.y - region.y_min) as f64 / band_h) as usize)
            .min(layout.cluster_count - 1);
        let slot_obs = &mut obs[cluster][chip / 2];
        if chip % 2 == 0 {
            slot_obs.boundary_weight += w;
        } else {
            slot_obs.mid_weight += w;
        }
    }
    Ok(obs)
}

/// A decoded packet plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedPacket {
    /// Payload bytes assembled from per-cluster decoder outputs.
    pub payload: Vec<u8>,
    pub cluster_crc_ok: Vec<bool>,
    pub region: RegionBox,
    pub t_sync_us: i64,
    /// Bit errors against a supplied ground truth, when known.
    pub bit_errors_vs_truth: Option<usize>,
}

impl DecodedPacket {
    pub fn all_crc_ok(&self) -> bool {
        self.cluster_crc_ok.iter().all(|&ok| ok)
    }
}

/// Receiver tuning knobs beyond the detection thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RxParams {
    pub detect: DetectParams,
    /// Interval-match tolerance as a fraction of T.
    pub shift_tol_frac: f64,
    /// Horizontal widening of a detected region before data extraction, to
    /// keep a moving footprint's later chips inside the decode window.
    pub expand_px: u16,
    /// Weight applied to region pixels that missed the pilot edges, so a
    /// footprint that drifted off the pilot-verified pixels still accumulates.
    pub weight_floor: f64,
    pub noise_floor: f64,
}

impl Default for RxParams {
    fn default() -> Self {
        RxParams {
            detect: DetectParams::default(),
            shift_tol_frac: 0.25,
            expand_px: 32,
            weight_floor: 0.25,
            noise_floor: 0.5,
        }
    }
}

fn expand_region(region: &RegionBox, expand: u16, width: u32) -> RegionBox {
    RegionBox {
        x_min: region.x_min.saturating_sub(expand),
        x_max: (region.x_max as u32 + expand as u32).min(width - 1) as u16,
        ..*region
    }
}

fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b))
        .collect()
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1))
        .collect()
}

/// Full per-region receive chain: synchronize, weight, accumulate, demap,
/// list-decode every cluster, and assemble the payload.
pub fn decode_region(
    events: &[Event],
    region: &RegionBox,
    layout: &FrameLayout,
    fec: &PolarCodeConfig,
    params: &RxParams,
    sensor_width: u32,
) -> Result<DecodedPacket, RxError> {
    let t_chip = layout.chip_period_us as i64;
    let tol = ((t_chip as f64) * params.shift_tol_frac) as i64;
    let region_events: Vec<Event> = events
        .iter()
        .filter(|e| region.contains(e.x, e.y))
        .copied()
        .collect();
    let record = time_shift_record(&region_events, t_chip, tol);
    let t_sync = synchronize(&record, region, t_chip, params.detect.min_peak)?;

    let wide = expand_region(region, params.expand_px, sensor_width);
    let wide_events: Vec<Event> = events
        .iter()
        .filter(|e| wide.contains(e.x, e.y))
        .copied()
        .collect();

    let pilot_w = pixel_weights(&region_events, region, t_sync, layout);
    let mut weights: PixelWeightMap = PixelWeightMap::new();
    for e in &wide_events {
        let w = pilot_w
            .get(&(e.x, e.y))
            .copied()
            .unwrap_or(0.0)
            .max(params.weight_floor);
        weights.insert((e.x, e.y), w);
    }

    let obs = accumulate_cluster_observations(&wide_events, region, &weights, t_sync, layout)?;

    let mut payload_bits = Vec::with_capacity(layout.cluster_count * fec.payload_bits);
    let mut crc_flags = Vec::with_capacity(layout.cluster_count);
    for cluster_obs in &obs {
        let llrs = manchester::soft_demap(cluster_obs, params.noise_floor);
        let result = polar::scl_decode(&llrs, fec).expect("layout/fec dimensions agree");
        crc_flags.push(result.crc_ok);
        payload_bits.extend(result.payload);
    }
    Ok(DecodedPacket {
        payload: bits_to_bytes(&payload_bits),
        cluster_crc_ok: crc_flags,
        region: *region,
        t_sync_us: t_sync,
        bit_errors_vs_truth: None,
    })
}

/// Detect all transmitter regions in a stream and decode each one.
pub fn receive(
    events: &[Event],
    layout: &FrameLayout,
    fec: &PolarCodeConfig,
    params: &RxParams,
    sensor_width: u32,
    sensor_height: u32,
) -> Vec<Result<DecodedPacket, RxError>> {
    let t_chip = layout.chip_period_us as i64;
    let tol = ((t_chip as f64) * params.shift_tol_frac) as i64;
    let record = time_shift_record(events, t_chip, tol);
    let regions = detect_regions(&record, sensor_width, sensor_height, &params.detect);
    regions
        .iter()
        .map(|r| decode_region(events, r, layout, fec, params, sensor_width))
        .collect()
}

/// Same as iterating [`decode_region`], but with one worker per region.
pub fn decode_regions_parallel(
    events: &[Event],
    regions: &[RegionBox],
    layout: &FrameLayout,
    fec: &PolarCodeConfig,
    params: &RxParams,
    sensor_width: u32,
) -> Vec<Result<DecodedPacket, RxError>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = regions
            .iter()
            .map(|r| {
                scope.spawn(move || decode_region(events, r, layout, fec, params, sensor_width))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: i64, x: u16, y: u16) -> Event {
        Event { t_us: t, x, y, polarity: 1 }
    }

    #[test]
    fn shift_record_sync_arithmetic() {
        let events: Vec<Event> = [0, 500, 900, 1200].iter().map(|&t| ev(t, 4, 4)).collect();
        let rec = time_shift_record(&events, 100, 25);
        let times: Vec<i64> = rec.aligned.iter().map(|&(t, _, _)| t).collect();
        assert_eq!(times, vec![1200, 1200, 1200]);
        assert_eq!(rec.counts[&(4, 4)], 3);
    }

    #[test]
    fn shift_record_empty_stream() {
        let rec = time_shift_record(&[], 100, 25);
        assert!(rec.aligned.is_empty() && rec.counts.is_empty());
    }

    #[test]
    fn shift_record_random_noise_rarely_matches() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        // Poisson-ish noise on one pixel: exponential inter-arrival, mean 700 us.
        let mut t = 0i64;
        let mut events = Vec::new();
        for _ in 0..20_000 {
            t += (-(rng.gen::<f64>().max(1e-12)).ln() * 700.0) as i64 + 1;
            events.push(ev(t, 1, 1));
        }
        let rec = time_shift_record(&events, 100, 25);
        // Intervals land in {3T,4T,5T}+-tol with probability roughly
        // 3 * 51/700; allow generous slack around that expectation.
        let frac = rec.aligned.len() as f64 / events.len() as f64;
        assert!(frac < 0.35, "noise match fraction {frac}");
        // A genuine sync pixel records 3 of 4 events; noise stays well below.
    }

    fn synthetic_record(blobs: &[(u16, u16)], spread: u16, count: u32) -> ShiftRecord {
        let mut rec = ShiftRecord::default();
        for &(cx, cy) in blobs {
            for dx in 0..spread {
                for dy in 0..spread * 2 {
                    let (x, y) = (cx + dx, cy + dy);
                    rec.counts.insert((x, y), count);
                    for _ in 0..count {
                        rec.aligned.push((1200, x, y));
                    }
                }
            }
        }
        rec
    }

    #[test]
    fn detect_three_blobs() {
        let rec = synthetic_record(&[(100, 100), (400, 100), (700, 100)], 8, 3);
        let boxes = detect_regions(&rec, 1280, 720, &DetectParams::default());
        assert_eq!(boxes.len(), 3);
        for b in &boxes {
            assert!(b.width() >= 8 && b.height() >= 16);
        }
    }

    #[test]
    fn detect_nothing_on_empty_record() {
        let rec = ShiftRecord::default();
        assert!(detect_regions(&rec, 1280, 720, &DetectParams::default()).is_empty());
    }

    #[test]
    fn split_blob_merges_across_small_gap() {
        // Two halves separated by a 2 px occlusion gap.
        let mut rec = synthetic_record(&[(100, 100)], 6, 3);
        let other = synthetic_record(&[(108, 100)], 6, 3);
        rec.counts.extend(other.counts);
        rec.aligned.extend(other.aligned);
        let boxes = detect_regions(&rec, 1280, 720, &DetectParams::default());
        assert_eq!(boxes.len(), 1);
    }

    #[test]
    fn synchronize_peak_and_ties() {
        let mut rec = ShiftRecord::default();
        let region = RegionBox { x_min: 0, y_min: 0, x_max: 10, y_max: 10, score: 0.0 };
        for _ in 0..5 {
            rec.aligned.push((1200, 2, 2));
        }
        for _ in 0..3 {
            rec.aligned.push((5000, 2, 2));
        }
        let t = synchronize(&rec, &region, 100, 3).unwrap();
        assert!((t - 1200).abs() <= 50);
        // Equal peaks: earliest bin wins.
        let mut rec2 = ShiftRecord::default();
        for _ in 0..4 {
            rec2.aligned.push((1200, 2, 2));
            rec2.aligned.push((9000, 2, 2));
        }
        let t2 = synchronize(&rec2, &region, 100, 3).unwrap();
        assert!((t2 - 1200).abs() <= 50);
    }

    #[test]
    fn synchronize_no_peak_on_sparse_noise() {
        let mut rec = ShiftRecord::default();
        let region = RegionBox { x_min: 0, y_min: 0, x_max: 10, y_max: 10, score: 0.0 };
        for i in 0..10 {
            rec.aligned.push((i * 777, 1, 1));
        }
        assert!(matches!(
            synchronize(&rec, &region, 100, 3),
            Err(RxError::NoPeak { .. })
        ));
    }

    #[test]
    fn pixel_weight_definitions() {
        let layout = FrameLayout::default();
        let region = RegionBox { x_min: 0, y_min: 0, x_max: 30, y_max: 30, score: 0.0 };
        let t_sync = 1200; // frame start 0; pilot edge at slot 15 -> 1500 us
        let mut events = vec![ev(1500, 5, 5)];
        // Spurious extras must not reduce the match.
        events.push(ev(3000, 5, 5));
        events.push(ev(9000, 5, 5));
        events.push(ev(8000, 7, 7)); // pixel with no pilot match
        let w = pixel_weights(&events, &region, t_sync, &layout);
        assert_eq!(w[&(5, 5)], 1.0);
        assert_eq!(w[&(7, 7)], 0.0);
        assert!(!w.contains_key(&(9, 9))); // dead pixel: no entry, weight 0
    }

    #[test]
    fn accumulate_band_too_thin() {
        let layout = FrameLayout::default();
        let region = RegionBox { x_min: 0, y_min: 0, x_max: 5, y_max: 5, score: 0.0 };
        let err =
            accumulate_cluster_observations(&[], &region, &PixelWeightMap::new(), 1200, &layout)
                .unwrap_err();
        assert!(matches!(err, RxError::BandTooThin { .. }));
    }

    #[test]
    fn accumulate_zero_weights_zero_observations() {
        let layout = FrameLayout::default();
        let region = RegionBox { x_min: 0, y_min: 0, x_max: 3, y_max: 31, score: 0.0 };
        let events: Vec<Event> = (0..50).map(|i| ev(2000 + i * 100, 1, (i % 32) as u16)).collect();
        let obs = accumulate_cluster_observations(
            &events,
            &region,
            &PixelWeightMap::new(),
            1200,
            &layout,
        )
        .unwrap();
        for cluster in obs {
            for o in cluster {
                assert_eq!(o, SlotObservation::default());
            }
        }
    }

    #[test]
    fn accumulate_slot_edge_goes_to_later_slot() {
        let layout = FrameLayout::default();
        let region = RegionBox { x_min: 0, y_min: 0, x_max: 3, y_max: 31, score: 0.0 };
        let mut weights = PixelWeightMap::new();
        weights.insert((1, 0), 1.0);
        // Frame start 0 (t_sync 1200); first data slot is 18 -> 1800 us.
        // An event exactly at 1900 us sits on the edge of data chips 0|1 and
        // must land in chip 1, the mid chip of bit 0.
        let events = vec![ev(1900, 1, 0)];
        let obs =
            accumulate_cluster_observations(&events, &region, &weights, 1200, &layout).unwrap();
        assert_eq!(obs[0][0].boundary_weight, 0.0);
        assert_eq!(obs[0][0].mid_weight, 1.0);
    }
}
