//! Deterministic event-camera and scene simulator.
//!
//! Moving LED-bar transmitters are rendered into per-pixel piecewise-constant
//! log-intensity traces; a contrast-threshold model turns the traces into a
//! sorted event stream with refractory period, timestamp jitter, Poisson
//! background noise, and an optional transfer-bandwidth cap.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("event csv parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One sensor output sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t_us: i64,
    pub x: u16,
    pub y: u16,
    pub polarity: i8,
}

/// One roadside LED-bar transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransmitterPlacement {
    /// Longitudinal offset (m) from the camera at t = 0, along the road.
    pub longitudinal_m: f64,
    /// Vertical offset (m) of the bar center from the optical axis.
    pub height_offset_m: f64,
    pub bar_height_m: f64,
    pub bar_width_m: f64,
    pub cluster_count: usize,
    pub leds_per_cluster: usize,
}

impl Default for TransmitterPlacement {
    fn default() -> Self {
        TransmitterPlacement {
            longitudinal_m: 0.0,
            height_offset_m: 0.0,
            bar_height_m: 1.0,
            bar_width_m: 0.15,
            cluster_count: 16,
            leds_per_cluster: 6,
        }
    }
}

/// Scene geometry and motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub width: u32,
    pub height: u32,
    pub transmitters: Vec<TransmitterPlacement>,
    pub vehicle_speed_kmh: f64,
    pub lateral_distance_m: f64,
    /// Pinhole focal length in pixels.
    pub focal_px: f64,
    pub duration_us: i64,
    /// Ambient log intensity.
    pub ambient_log: f64,
    /// Log-intensity step of a lit cluster.
    pub on_level: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            width: 1280,
            height: 720,
            transmitters: vec![TransmitterPlacement::default()],
            vehicle_speed_kmh: 0.0,
            lateral_distance_m: 2.0,
            focal_px: 120.0,
            duration_us: 40_000,
            ambient_log: 0.0,
            on_level: 1.0,
        }
    }
}

/// Event-generation model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub contrast_threshold: f64,
    pub refractory_us: i64,
    pub jitter_sigma_us: f64,
    /// Background events per second per pixel.
    pub background_noise_rate: f64,
    /// Whole-sensor admitted events per second; infinite (JSON null) = no cap.
    #[serde(with = "cap_serde")]
    pub bandwidth_cap: f64,
    pub polarity_mode: PolarityMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityMode {
    PositiveOnly,
    Bipolar,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            contrast_threshold: 0.5,
            refractory_us: 50,
            jitter_sigma_us: 20.0,
            background_noise_rate: 0.05,
            bandwidth_cap: f64::INFINITY,
            polarity_mode: PolarityMode::PositiveOnly,
        }
    }
}

/// JSON has no infinity; an uncapped sensor round-trips through null.
mod cap_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Image-plane rectangle of a transmitter at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Footprint {
    /// Vertical pixel bands, one per cluster, top band = cluster 0.
    pub fn cluster_bands(&self, cluster_count: usize) -> Vec<(f64, f64)> {
        let h = (self.y1 - self.y0) / cluster_count as f64;
        (0..cluster_count)
            .map(|c| (self.y0 + c as f64 * h, self.y0 + (c + 1) as f64 * h))
            .collect()
    }
}

pub fn speed_mps(scenario: &ScenarioConfig) -> f64 {
    scenario.vehicle_speed_kmh / 3.6
}

/// Pinhole projection of a transmitter at time `t_us`. `None` when the
/// footprint is degenerate (behind the camera) or fully off-image.
pub fn project_transmitter(
    scenario: &ScenarioConfig,
    tx: &TransmitterPlacement,
    t_us: i64,
) -> Option<Footprint> {
    let z = scenario.lateral_distance_m;
    if z <= 0.0 {
        return None;
    }
    let f = scenario.focal_px;
    let cx = scenario.width as f64 / 2.0;
    let cy = scenario.height as f64 / 2.0;
    let longitudinal = tx.longitudinal_m - speed_mps(scenario) * t_us as f64 * 1e-6;
    let x_center = cx + f * longitudinal / z;
    let half_w = f * tx.bar_width_m / z / 2.0;
    let y_center = cy + f * tx.height_offset_m / z;
    let half_h = f * tx.bar_height_m / z / 2.0;
    let fp = Footprint {
        x0: x_center - half_w,
        y0: y_center - half_h,
        x1: x_center + half_w,
        y1: y_center + half_h,
    };
    if fp.x1 < 0.0 || fp.x0 > scenario.width as f64 || fp.y1 < 0.0 || fp.y0 > scenario.height as f64
    {
        return None;
    }
    Some(fp)
}

/// Piecewise-constant log intensity of one pixel: (t_us, level) breakpoints,
/// level holds from each breakpoint until the next.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelTrace {
    pub breakpoints: Vec<(i64, f64)>,
}

/// Traces for every pixel ever covered by a transmitter.
#[derive(Debug, Clone)]
pub struct SceneTraces {
    pub ambient: f64,
    pub pixels: BTreeMap<(u16, u16), PixelTrace>,
}

/// Render per-transmitter chip sequences into pixel traces. `per_tx_chips`
/// holds, per transmitter, one chip sequence per cluster (all the same
/// length); the footprint is re-evaluated at each chip boundary.
pub fn render_traces(
    scenario: &ScenarioConfig,
    per_tx_chips: &[Vec<Vec<u8>>],
    chip_period_us: u32,
) -> SceneTraces {
    assert_eq!(per_tx_chips.len(), scenario.transmitters.len());
    let t_chip = chip_period_us as i64;
    let total_slots = per_tx_chips
        .iter()
        .flat_map(|tx| tx.iter().map(|c| c.len()))
        .max()
        .unwrap_or(0);

    // Per-pixel lit level per slot, summed over transmitters.
    let mut levels: BTreeMap<(u16, u16), Vec<f64>> = BTreeMap::new();
    for (tx, chips) in scenario.transmitters.iter().zip(per_tx_chips) {
        assert_eq!(chips.len(), tx.cluster_count);
        for slot in 0..total_slots {
            let t0 = slot as i64 * t_chip;
            let Some(fp) = project_transmitter(scenario, tx, t0) else {
                continue;
            };
            let bands = fp.cluster_bands(tx.cluster_count);
            let px0 = fp.x0.floor().max(0.0) as u16;
            let px1 = (fp.x1.ceil() as i64).min(scenario.width as i64 - 1).max(0) as u16;
            for (cluster, &(by0, by1)) in bands.iter().enumerate() {
                let on = chips[cluster].get(slot).copied().unwrap_or(0);
                if on == 0 {
                    continue;
                }
                let py0 = by0.floor().max(0.0) as u16;
                let py1 = (by1.ceil() as i64).min(scenario.height as i64 - 1).max(0) as u16;
                for py in py0..=py1 {
                    let yc = py as f64 + 0.5;
                    if yc < by0 || yc >= by1 {
                        continue;
                    }
                    for px in px0..=px1 {
                        let xc = px as f64 + 0.5;
                        if xc < fp.x0 || xc >= fp.x1 {
                            continue;
                        }
                        levels
                            .entry((px, py))
                            .or_insert_with(|| vec![0.0; total_slots])[slot] +=
                            scenario.on_level;
                    }
                }
            }
        }
    }

    let mut pixels = BTreeMap::new();
    for ((px, py), lv) in levels {
        let mut trace = PixelTrace::default();
        let mut last = 0.0;
        for (slot, &l) in lv.iter().enumerate() {
            if l != last {
                trace
                    .breakpoints
                    .push((slot as i64 * t_chip, scenario.ambient_log + l));
                last = l;
            }
        }
        if !trace.breakpoints.is_empty() {
            pixels.insert((px, py), trace);
        }
    }
    SceneTraces {
        ambient: scenario.ambient_log,
        pixels,
    }
}

fn pixel_rng(seed: u64, x: u16, y: u16, salt: u64) -> ChaCha8Rng {
    let mut h = seed ^ salt;
    h ^= (x as u64) << 20 | y as u64;
    h = h.wrapping_mul(0x9E3779B97F4A7C15);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58476D1CE4E5B9);
    h ^= h >> 32;
    ChaCha8Rng::seed_from_u64(h)
}

/// Threshold-crossing event generation. Deterministic for a fixed seed.
pub fn generate_events(
    traces: &SceneTraces,
    scenario: &ScenarioConfig,
    sensor: &SensorConfig,
    seed: u64,
) -> Vec<Event> {
    let mut events = Vec::new();
    let jitter = if sensor.jitter_sigma_us > 0.0 {
        Some(Normal::new(0.0, sensor.jitter_sigma_us).unwrap())
    } else {
        None
    };

    for (&(x, y), trace) in &traces.pixels {
        let mut rng = pixel_rng(seed, x, y, 0x5157);
        let mut reference = traces.ambient;
        let mut last_emit: Option<i64> = None;
        for &(t, level) in &trace.breakpoints {
            let delta = level - reference;
            if delta.abs() < sensor.contrast_threshold {
                continue;
            }
            reference = level;
            let rising = delta > 0.0;
            if !rising && sensor.polarity_mode == PolarityMode::PositiveOnly {
                continue;
            }
            let mut t_e = t;
            if let Some(j) = &jitter {
                t_e += j.sample(&mut rng).round() as i64;
            }
            if let Some(last) = last_emit {
                // Keep per-pixel order and refractory spacing after jitter.
                t_e = t_e.max(last + sensor.refractory_us);
            }
            t_e = t_e.max(0);
            last_emit = Some(t_e);
            events.push(Event {
                t_us: t_e,
                x,
                y,
                polarity: if rising { 1 } else { -1 },
            });
        }
    }

    // Poisson background, positive polarity.
    if sensor.background_noise_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB6_u64);
        let pixels = scenario.width as f64 * scenario.height as f64;
        let lambda = sensor.background_noise_rate * pixels * scenario.duration_us as f64 * 1e-6;
        if lambda > 0.0 {
            let n = Poisson::new(lambda).unwrap().sample(&mut rng) as u64;
            for _ in 0..n {
                events.push(Event {
                    t_us: rng.gen_range(0..scenario.duration_us.max(1)),
                    x: rng.gen_range(0..scenario.width) as u16,
                    y: rng.gen_range(0..scenario.height) as u16,
                    polarity: 1,
                });
            }
        }
    }

    sort_events(&mut events);
    events
}

/// Sort by timestamp, ties broken by (y, x).
pub fn sort_events(events: &mut [Event]) {
    events.sort_by_key(|e| (e.t_us, e.y, e.x));
}

/// Tail-drop saturation: a sliding 1 ms window admits at most `cap / 1000`
/// events; later events in a saturated window are lost.
pub fn apply_bandwidth_cap(events: &[Event], cap_events_per_s: f64) -> Vec<Event> {
    if !cap_events_per_s.is_finite() {
        return events.to_vec();
    }
    let budget = (cap_events_per_s / 1000.0).floor() as usize;
    let mut admitted_times = std::collections::VecDeque::new();
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        while admitted_times.front().is_some_and(|&t| t <= e.t_us - 1000) {
            admitted_times.pop_front();
        }
        if admitted_times.len() < budget {
            admitted_times.push_back(e.t_us);
            out.push(*e);
        }
    }
    out
}

/// Write the stream as CSV: header then `t_us,x,y,polarity` lines.
pub fn write_events_csv<W: Write>(mut w: W, events: &[Event]) -> std::io::Result<()> {
    writeln!(w, "t_us,x,y,polarity")?;
    for e in events {
        writeln!(w, "{},{},{},{}", e.t_us, e.x, e.y, e.polarity)?;
    }
    Ok(())
}

pub fn read_events_csv<R: BufRead>(r: R) -> Result<Vec<Event>, SensorError> {
    let mut events = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| SensorError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if i == 0 && line.starts_with("t_us") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = |name: &str| {
            parts
                .next()
                .ok_or_else(|| SensorError::Parse {
                    line: i + 1,
                    msg: format!("missing {name}"),
                })
        };
        let t_us = field("t_us")?.trim().parse().map_err(|e| SensorError::Parse {
            line: i + 1,
            msg: format!("t_us: {e}"),
        })?;
        let x = field("x")?.trim().parse().map_err(|e| SensorError::Parse {
            line: i + 1,
            msg: format!("x: {e}"),
        })?;
        let y = field("y")?.trim().parse().map_err(|e| SensorError::Parse {
            line: i + 1,
            msg: format!("y: {e}"),
        })?;
        let polarity = field("polarity")?
            .trim()
            .parse()
            .map_err(|e| SensorError::Parse {
                line: i + 1,
                msg: format!("polarity: {e}"),
            })?;
        events.push(Event { t_us, x, y, polarity });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless_sensor() -> SensorConfig {
        SensorConfig {
            jitter_sigma_us: 0.0,
            background_noise_rate: 0.0,
            ..SensorConfig::default()
        }
    }

    #[test]
    fn static_projection_is_constant() {
        let scenario = ScenarioConfig::default();
        let a = project_transmitter(&scenario, &scenario.transmitters[0], 0).unwrap();
        let b = project_transmitter(&scenario, &scenario.transmitters[0], 20_000).unwrap();
        assert_eq!(a, b);
        let bands = a.cluster_bands(16);
        assert_eq!(bands.len(), 16);
        let h0 = bands[0].1 - bands[0].0;
        for &(y0, y1) in &bands {
            assert!((y1 - y0 - h0).abs() < 1e-9);
        }
    }

    #[test]
    fn pixel_velocity_matches_pinhole_arithmetic() {
        let scenario = ScenarioConfig {
            vehicle_speed_kmh: 40.0,
            focal_px: 700.0,
            lateral_distance_m: 2.0,
            ..ScenarioConfig::default()
        };
        let tx = &scenario.transmitters[0];
        let a = project_transmitter(&scenario, tx, 0).unwrap();
        let b = project_transmitter(&scenario, tx, 100_000).unwrap();
        let v_px_per_s = (a.x0 - b.x0) / 0.1;
        // 700 * (40/3.6) / 2 ≈ 3888.9 px/s
        assert!((v_px_per_s - 700.0 * (40.0 / 3.6) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn doubling_distance_halves_height() {
        let near = ScenarioConfig::default();
        let far = ScenarioConfig {
            lateral_distance_m: 4.0,
            ..ScenarioConfig::default()
        };
        let a = project_transmitter(&near, &near.transmitters[0], 0).unwrap();
        let b = project_transmitter(&far, &far.transmitters[0], 0).unwrap();
        assert!(((a.y1 - a.y0) / (b.y1 - b.y0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_empty() {
        let scenario = ScenarioConfig {
            lateral_distance_m: -1.0,
            ..ScenarioConfig::default()
        };
        assert!(project_transmitter(&scenario, &scenario.transmitters[0], 0).is_none());
    }

    #[test]
    fn all_on_static_scene_has_single_breakpoint() {
        let scenario = ScenarioConfig::default();
        let chips = vec![vec![vec![1u8; 40]; 16]];
        let traces = render_traces(&scenario, &chips, 100);
        assert!(!traces.pixels.is_empty());
        for trace in traces.pixels.values() {
            assert_eq!(trace.breakpoints.len(), 1);
            assert_eq!(trace.breakpoints[0].0, 0);
        }
    }

    #[test]
    fn one_pulse_has_rise_and_fall() {
        let scenario = ScenarioConfig::default();
        let mut chips = vec![vec![vec![0u8; 40]; 16]];
        for c in &mut chips[0] {
            c[10] = 1;
        }
        let traces = render_traces(&scenario, &chips, 100);
        for trace in traces.pixels.values() {
            assert_eq!(trace.breakpoints.len(), 2);
            assert_eq!(trace.breakpoints[0].0, 1000);
            assert_eq!(trace.breakpoints[1].0, 1100);
        }
    }

    #[test]
    fn single_large_step_gives_one_event() {
        let scenario = ScenarioConfig::default();
        let traces = SceneTraces {
            ambient: 0.0,
            pixels: [(
                (5u16, 5u16),
                PixelTrace {
                    breakpoints: vec![(1000, 1.0)], // 2x threshold
                },
            )]
            .into(),
        };
        let events = generate_events(&traces, &scenario, &noiseless_sensor(), 1);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].polarity, 1);
        assert_eq!(events[0].t_us, 1000);
    }

    #[test]
    fn positive_only_is_half_of_bipolar_on_square_wave() {
        let scenario = ScenarioConfig {
            duration_us: 20_000,
            ..ScenarioConfig::default()
        };
        let breakpoints: Vec<(i64, f64)> = (1..=100)
            .map(|i| (i * 200, if i % 2 == 1 { 1.0 } else { 0.0 }))
            .collect();
        let traces = SceneTraces {
            ambient: 0.0,
            pixels: [((3, 3), PixelTrace { breakpoints })].into(),
        };
        let mut bipolar_cfg = noiseless_sensor();
        bipolar_cfg.polarity_mode = PolarityMode::Bipolar;
        let bipolar = generate_events(&traces, &scenario, &bipolar_cfg, 9);
        let positive = generate_events(&traces, &scenario, &noiseless_sensor(), 9);
        let pos_in_bipolar = bipolar.iter().filter(|e| e.polarity > 0).count();
        let neg_in_bipolar = bipolar.len() - pos_in_bipolar;
        assert_eq!(pos_in_bipolar, neg_in_bipolar);
        assert_eq!(positive.len() * 2, bipolar.len());
        // Alternating polarity.
        for w in bipolar.windows(2) {
            assert_ne!(w[0].polarity, w[1].polarity);
        }
    }

    #[test]
    fn determinism_and_sortedness() {
        let scenario = ScenarioConfig {
            duration_us: 30_000,
            ..ScenarioConfig::default()
        };
        let chips = vec![vec![(0..300).map(|i| (i % 2) as u8).collect::<Vec<u8>>(); 16]];
        let traces = render_traces(&scenario, &chips, 100);
        let sensor = SensorConfig::default();
        let a = generate_events(&traces, &scenario, &sensor, 42);
        let b = generate_events(&traces, &scenario, &sensor, 42);
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!((w[0].t_us, w[0].y, w[0].x) <= (w[1].t_us, w[1].y, w[1].x));
        }
        for e in &a {
            assert!((e.x as u32) < scenario.width && (e.y as u32) < scenario.height);
        }
        // Per-pixel refractory spacing.
        let mut last: std::collections::HashMap<(u16, u16), i64> = Default::default();
        for e in &a {
            if let Some(&t) = last.get(&(e.x, e.y)) {
                assert!(e.t_us - t >= sensor.refractory_us, "refractory violated");
            }
            last.insert((e.x, e.y), e.t_us);
        }
        let c = generate_events(&traces, &scenario, &sensor, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn background_rate_statistics() {
        let scenario = ScenarioConfig {
            width: 40,
            height: 25, // 1000 pixels
            transmitters: vec![],
            duration_us: 1_000_000,
            ..ScenarioConfig::default()
        };
        let sensor = SensorConfig {
            background_noise_rate: 5.0,
            ..SensorConfig::default()
        };
        let traces = SceneTraces {
            ambient: 0.0,
            pixels: BTreeMap::new(),
        };
        let events = generate_events(&traces, &scenario, &sensor, 11);
        let expected = 5.0 * 1000.0;
        let got = events.len() as f64;
        assert!(
            (got - expected).abs() / expected < 0.05,
            "rate off: {got} vs {expected}"
        );
    }

    #[test]
    fn bandwidth_cap_semantics() {
        let events: Vec<Event> = (0..10_000)
            .map(|i| Event {
                t_us: i % 1000,
                x: (i % 100) as u16,
                y: (i / 100) as u16,
                polarity: 1,
            })
            .collect();
        let mut sorted = events.clone();
        sort_events(&mut sorted);
        let capped = apply_bandwidth_cap(&sorted, 1_000_000.0);
        assert_eq!(capped.len(), 1000);
        assert_eq!(capped, sorted[..1000]);
        assert_eq!(apply_bandwidth_cap(&sorted, f64::INFINITY), sorted);
        // Below-cap stream is untouched.
        let sparse: Vec<Event> = (0..50)
            .map(|i| Event {
                t_us: i * 1000,
                x: 0,
                y: 0,
                polarity: 1,
            })
            .collect();
        assert_eq!(apply_bandwidth_cap(&sparse, 10_000.0), sparse);
    }

    #[test]
    fn csv_round_trip() {
        let events = vec![
            Event { t_us: 0, x: 1, y: 2, polarity: 1 },
            Event { t_us: 150, x: 3, y: 4, polarity: -1 },
        ];
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &events).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_us,x,y,polarity\n"));
        let back = read_events_csv(&buf[..]).unwrap();
        assert_eq!(back, events);
    }
}
