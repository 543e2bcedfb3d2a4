//! Experiment driver: scenario sweeps, the bipolar-baseline comparison,
//! BER/PER metrics and the latency/compliance reports.
//!
//! Everything here is deliberately deterministic for a fixed config + seed;
//! the only nondeterministic quantity is the measured wall-clock processing
//! time, which is reported separately and never enters the metrics CSV.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use evlc_core::frame::{assemble_frame, frame_duration_us, FrameLayout, Packet};
use evlc_core::latency::{latency_model, LatencyBreakdown, DEFAULT_T_CMD_US, DEFAULT_T_TRANSFER_US};
use evlc_core::polar::{polar_encode, PolarCodeConfig};
use evlc_core::rx::{self, bytes_to_bits, RegionBox, RxParams};
use evlc_core::sensor::{
    apply_bandwidth_cap, generate_events, project_transmitter, render_traces, speed_mps, Event,
    PolarityMode, ScenarioConfig, SensorConfig, TransmitterPlacement,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Lateral camera-to-bar distance in metres.
    Distance,
    /// Vehicle speed in km/h.
    Speed,
    /// Number of simultaneously transmitting bars.
    Transmitters,
    /// Payload size expressed in packets (96 bytes each at defaults).
    PayloadPackets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub sensor: SensorConfig,
    pub layout: FrameLayout,
    pub fec: PolarCodeConfig,
    pub rx: RxParams,
    pub sweep: SweepSpec,
    pub trials_per_point: usize,
    pub seed: u64,
    pub t_cmd_us: u64,
    pub t_transfer_us: u64,
    /// Fixed processing time used for the deterministic latency columns;
    /// the measured wall clock lives only in the JSON summary.
    pub t_proc_fixed_us: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            sensor: SensorConfig::default(),
            layout: FrameLayout::default(),
            fec: PolarCodeConfig::default(),
            rx: RxParams::default(),
            sweep: SweepSpec {
                variable: SweepVariable::Speed,
                values: vec![15.0, 30.0, 45.0],
            },
            trials_per_point: 10,
            seed: 1,
            t_cmd_us: DEFAULT_T_CMD_US,
            t_transfer_us: DEFAULT_T_TRANSFER_US,
            t_proc_fixed_us: 13_000,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(!self.sweep.values.is_empty(), "sweep values must be nonempty");
        anyhow::ensure!(self.trials_per_point >= 1, "trials_per_point must be >= 1");
        self.layout.validate()?;
        self.fec.validate()?;
        Ok(())
    }
}

/// Spacing between bars in a multi-transmitter scene, along the road.
const TX_SPACING_M: f64 = 1.5;

/// Specialize a config to one sweep value. Returns the adjusted config and
/// the number of packets per trial.
pub fn apply_sweep_value(config: &ExperimentConfig, value: f64) -> (ExperimentConfig, u64) {
    let mut c = config.clone();
    let mut n_packets = 1u64;
    match config.sweep.variable {
        SweepVariable::Distance => c.scenario.lateral_distance_m = value,
        SweepVariable::Speed => c.scenario.vehicle_speed_kmh = value,
        SweepVariable::Transmitters => {
            let n = value.round().max(1.0) as usize;
            let base = c.scenario.transmitters.first().cloned().unwrap_or_default();
            c.scenario.transmitters = (0..n)
                .map(|i| TransmitterPlacement {
                    longitudinal_m: base.longitudinal_m
                        + (i as f64 - (n - 1) as f64 / 2.0) * TX_SPACING_M,
                    ..base.clone()
                })
                .collect();
        }
        SweepVariable::PayloadPackets => n_packets = value.round().max(1.0) as u64,
    }
    (c, n_packets)
}

pub fn random_payload(layout: &FrameLayout, fec: &PolarCodeConfig, rng: &mut impl Rng) -> Vec<u8> {
    (0..layout.payload_capacity_bytes(fec.payload_bits)).map(|_| rng.gen()).collect()
}

/// Per-cluster chip schedules for one packet on one transmitter.
pub fn encode_packet_chips(
    payload: &[u8],
    layout: &FrameLayout,
    fec: &PolarCodeConfig,
) -> anyhow::Result<Vec<Vec<u8>>> {
    let bits = bytes_to_bits(payload);
    let coded: Vec<Vec<u8>> = bits
        .chunks(fec.payload_bits)
        .map(|c| polar_encode(c, fec))
        .collect::<Result<_, _>>()?;
    let packet = Packet { payload: payload.to_vec(), packet_id: 0 };
    let schedules = assemble_frame(&packet, &coded, layout, fec.payload_bits)?;
    Ok(schedules.into_iter().map(|s| s.chips).collect())
}

/// Bounding box of a transmitter's projected footprint swept over
/// `[0, duration_us]`, for IoU matching against detected regions.
pub fn true_region(scenario: &ScenarioConfig, tx: &TransmitterPlacement, duration_us: i64) -> Option<RegionBox> {
    let mut acc: Option<(f64, f64, f64, f64)> = None;
    let step = 1000.max(duration_us / 64);
    let mut t = 0;
    while t <= duration_us {
        if let Some(fp) = project_transmitter(scenario, tx, t) {
            let e = acc.get_or_insert((fp.x0, fp.y0, fp.x1, fp.y1));
            e.0 = e.0.min(fp.x0);
            e.1 = e.1.min(fp.y0);
            e.2 = e.2.max(fp.x1);
            e.3 = e.3.max(fp.y1);
        }
        t += step;
    }
    let (x0, y0, x1, y1) = acc?;
    Some(RegionBox {
        x_min: x0.floor().max(0.0) as u16,
        y_min: y0.floor().max(0.0) as u16,
        x_max: (x1.ceil().max(0.0) as u32).min(scenario.width - 1) as u16,
        y_max: (y1.ceil().max(0.0) as u32).min(scenario.height - 1) as u16,
        score: 0.0,
    })
}

/// Outcome of one trial (one packet transmitted by every transmitter).
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrialOutcome {
    pub packets: u64,
    pub packets_bad: u64,
    /// Bits compared against a matched decode.
    pub bits_known: u64,
    pub bit_errors: u64,
    pub events_generated: u64,
    pub events_post_cap: u64,
    pub t_proc_wall_us: u64,
}

impl TrialOutcome {
    pub fn absorb(&mut self, other: &TrialOutcome) {
        self.packets += other.packets;
        self.packets_bad += other.packets_bad;
        self.bits_known += other.bits_known;
        self.bit_errors += other.bit_errors;
        self.events_generated += other.events_generated;
        self.events_post_cap += other.events_post_cap;
        self.t_proc_wall_us += other.t_proc_wall_us;
    }
}

/// Transmit one packet per transmitter, simulate the sensor, cap, receive,
/// and score against ground truth. A transmitter whose region is never
/// detected or never matched counts as one bad packet with no known bits.
pub fn run_trial(config: &ExperimentConfig, trial_seed: u64) -> anyhow::Result<TrialOutcome> {
    let scenario = &config.scenario;
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let payloads: Vec<Vec<u8>> = scenario
        .transmitters
        .iter()
        .map(|_| random_payload(&config.layout, &config.fec, &mut rng))
        .collect();
    let per_tx: Vec<Vec<Vec<u8>>> = payloads
        .iter()
        .map(|p| encode_packet_chips(p, &config.layout, &config.fec))
        .collect::<Result<_, _>>()?;

    let traces = render_traces(scenario, &per_tx, config.layout.chip_period_us);
    let events = generate_events(&traces, scenario, &config.sensor, trial_seed);
    let capped = apply_bandwidth_cap(&events, config.sensor.bandwidth_cap);
    // The protocol consumes positive events only; under the bipolar sensor
    // mode the negatives still spend bandwidth before this filter.
    let positives: Vec<Event> = capped.iter().filter(|e| e.polarity > 0).copied().collect();

    let start = Instant::now();
    let decoded = rx::receive(
        &positives,
        &config.layout,
        &config.fec,
        &config.rx,
        scenario.width,
        scenario.height,
    );
    let t_proc_wall_us = start.elapsed().as_micros() as u64;

    let mut out = TrialOutcome {
        packets: scenario.transmitters.len() as u64,
        events_generated: events.len() as u64,
        events_post_cap: capped.len() as u64,
        t_proc_wall_us,
        ..TrialOutcome::default()
    };
    let ok_packets: Vec<_> = decoded.into_iter().flatten().collect();
    for (tx, payload) in scenario.transmitters.iter().zip(&payloads) {
        let truth = true_region(scenario, tx, scenario.duration_us);
        let best = truth.and_then(|t| {
            ok_packets
                .iter()
                .map(|p| (p, t.iou(&p.region)))
                .filter(|&(_, iou)| iou >= 0.3)
                .max_by(|a, b| a.1.total_cmp(&b.1))
        });
        match best {
            Some((pkt, _)) => {
                let want = bytes_to_bits(payload);
                let got = bytes_to_bits(&pkt.payload);
                let errs = want.iter().zip(&got).filter(|(a, b)| a != b).count() as u64;
                out.bits_known += want.len() as u64;
                out.bit_errors += errs;
                if !pkt.all_crc_ok() || errs > 0 {
                    out.packets_bad += 1;
                }
            }
            None => out.packets_bad += 1,
        }
    }
    Ok(out)
}

/// Independent trials of one fixed config, seeds derived from `base_seed`.
pub fn run_trials(
    config: &ExperimentConfig,
    n: usize,
    base_seed: u64,
) -> anyhow::Result<Vec<TrialOutcome>> {
    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|i| run_trial(config, base_seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(i as u64)))
        .collect()
}

/// One aggregated row of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub sweep_value: f64,
    pub trials: usize,
    pub packets: u64,
    pub ber: f64,
    pub per: f64,
    pub events_generated: u64,
    pub events_post_cap: u64,
    /// Deterministic latency (fixed t_proc).
    pub latency: LatencyBreakdown,
    /// Same breakdown with fixed t_proc; with constant processing time the
    /// per-trial max equals the mean.
    pub max_total_us: u64,
    /// Mean measured wall clock around the receive call; JSON summary only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_t_proc_wall_us: Option<u64>,
    /// Total with the measured t_proc; JSON summary only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_total_wall_us: Option<u64>,
}

pub const CSV_HEADER: &str = "sweep_value,trials,packets,ber,per,events_generated,\
events_post_cap,t_cmd_us,t_blink_us,t_transfer_us,t_proc_us,total_us,max_total_us";

impl MetricsRow {
    /// Deterministic columns only — no wall-clock fields.
    pub fn to_csv_line(&self) -> String {
        let l = &self.latency;
        format!(
            "{},{},{},{:.9},{:.9},{},{},{},{},{},{},{},{}",
            self.sweep_value,
            self.trials,
            self.packets,
            self.ber,
            self.per,
            self.events_generated,
            self.events_post_cap,
            l.t_cmd_us,
            l.t_blink_us,
            l.t_transfer_us,
            l.t_proc_us,
            l.total_us,
            self.max_total_us
        )
    }
}

/// Run all trials of one sweep point and aggregate.
pub fn run_point(config: &ExperimentConfig, sweep_value: f64) -> anyhow::Result<MetricsRow> {
    let (point_cfg, n_packets) = apply_sweep_value(config, sweep_value);
    let mut total = TrialOutcome::default();
    use rayon::prelude::*;
    let outcomes: Vec<TrialOutcome> = (0..config.trials_per_point)
        .into_par_iter()
        .map(|trial| {
            // One packet per frame; later packets see the scene advanced by
            // the elapsed blink time.
            let frame_us = frame_duration_us(&point_cfg.layout)
                + point_cfg.layout.inter_packet_gap_slots as u64
                    * point_cfg.layout.chip_period_us as u64;
            let mut acc = TrialOutcome::default();
            for k in 0..n_packets {
                let mut cfg = point_cfg.clone();
                let dt_s = (k * frame_us) as f64 * 1e-6;
                let v = speed_mps(&cfg.scenario);
                for tx in &mut cfg.scenario.transmitters {
                    tx.longitudinal_m -= v * dt_s;
                }
                let seed = config
                    .seed
                    .wrapping_mul(0x9E3779B97F4A7C15)
                    .wrapping_add((trial as u64) << 20 | k);
                acc.absorb(&run_trial(&cfg, seed)?);
            }
            Ok::<_, anyhow::Error>(acc)
        })
        .collect::<Result<_, _>>()?;
    for o in &outcomes {
        total.absorb(o);
    }

    let ber = if total.bits_known > 0 {
        total.bit_errors as f64 / total.bits_known as f64
    } else {
        1.0
    };
    let per = total.packets_bad as f64 / total.packets.max(1) as f64;
    let latency = latency_model(
        n_packets,
        &point_cfg.layout,
        config.t_cmd_us,
        config.t_transfer_us,
        config.t_proc_fixed_us,
    )?;
    let n_receives = (config.trials_per_point as u64 * n_packets).max(1);
    let mean_wall = total.t_proc_wall_us / n_receives;
    let wall_latency = latency_model(
        n_packets,
        &point_cfg.layout,
        config.t_cmd_us,
        config.t_transfer_us,
        mean_wall,
    )?;
    Ok(MetricsRow {
        sweep_value,
        trials: config.trials_per_point,
        packets: total.packets,
        ber,
        per,
        events_generated: total.events_generated,
        events_post_cap: total.events_post_cap,
        max_total_us: latency.total_us,
        latency,
        mean_t_proc_wall_us: Some(mean_wall),
        mean_total_wall_us: Some(wall_latency.total_us),
    })
}

#[derive(Debug, Serialize)]
pub struct SweepOutput {
    pub csv: String,
    pub summary: serde_json::Value,
}

/// One row per sweep value; the CSV is byte-identical across runs with the
/// same config and seed.
pub fn run_sweep(config: &ExperimentConfig) -> anyhow::Result<SweepOutput> {
    config.validate()?;
    let started = Instant::now();
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut rows = Vec::new();
    for &v in &config.sweep.values {
        let row = run_point(config, v)?;
        csv.push_str(&row.to_csv_line());
        csv.push('\n');
        rows.push(row);
    }
    let summary = serde_json::json!({
        "config": config,
        "rows": rows,
        "wall_clock_ms": started.elapsed().as_millis() as u64,
    });
    Ok(SweepOutput { csv, summary })
}

/// Saturation comparison: one seed, one cap, both polarity modes.
#[derive(Debug, Clone, Serialize)]
pub struct SaturationComparison {
    pub cap_events_per_s: f64,
    pub positive_only: TrialOutcome,
    pub bipolar: TrialOutcome,
    /// Fraction of generated events dropped by the cap, per mode.
    pub positive_loss: f64,
    pub bipolar_loss: f64,
}

pub fn saturation_compare(
    config: &ExperimentConfig,
    cap_events_per_s: f64,
    seed: u64,
) -> anyhow::Result<SaturationComparison> {
    let run = |mode: PolarityMode| -> anyhow::Result<TrialOutcome> {
        let mut c = config.clone();
        c.sensor.polarity_mode = mode;
        c.sensor.bandwidth_cap = cap_events_per_s;
        run_trial(&c, seed)
    };
    let positive_only = run(PolarityMode::PositiveOnly)?;
    let bipolar = run(PolarityMode::Bipolar)?;
    let loss = |o: &TrialOutcome| {
        1.0 - o.events_post_cap as f64 / o.events_generated.max(1) as f64
    };
    Ok(SaturationComparison {
        cap_events_per_s,
        positive_loss: loss(&positive_only),
        bipolar_loss: loss(&bipolar),
        positive_only,
        bipolar,
    })
}
