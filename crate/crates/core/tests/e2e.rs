//! Whole-chain checks: encode -> render -> events -> detect -> decode.

use evlc_core::frame::{assemble_frame, FrameLayout, Packet};
use evlc_core::polar::{polar_encode, PolarCodeConfig};
use evlc_core::rx::{
    bytes_to_bits, decode_regions_parallel, detect_regions, pixel_weights, receive,
    time_shift_record, RxParams,
};
use evlc_core::sensor::{
    generate_events, render_traces, ScenarioConfig, SensorConfig, TransmitterPlacement,
};

fn tx_chips(
    payload: &[u8],
    layout: &FrameLayout,
    fec: &PolarCodeConfig,
) -> Vec<Vec<u8>> {
    let bits = bytes_to_bits(payload);
    let coded: Vec<Vec<u8>> = bits
        .chunks(fec.payload_bits)
        .map(|c| polar_encode(c, fec).unwrap())
        .collect();
    let packet = Packet { payload: payload.to_vec(), packet_id: 0 };
    assemble_frame(&packet, &coded, layout, fec.payload_bits)
        .unwrap()
        .into_iter()
        .map(|s| s.chips)
        .collect()
}

fn payload_bytes(layout: &FrameLayout, fec: &PolarCodeConfig, seed: u64) -> Vec<u8> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..layout.payload_capacity_bytes(fec.payload_bits))
        .map(|_| rng.gen())
        .collect()
}

fn quiet_sensor() -> SensorConfig {
    SensorConfig {
        jitter_sigma_us: 0.0,
        background_noise_rate: 0.0,
        ..SensorConfig::default()
    }
}

#[test]
fn noiseless_static_roundtrip() {
    let layout = FrameLayout::default();
    let fec = PolarCodeConfig::default();
    let payload = payload_bytes(&layout, &fec, 7);
    let chips = tx_chips(&payload, &layout, &fec);

    let scenario = ScenarioConfig::default();
    let traces = render_traces(&scenario, &[chips], layout.chip_period_us);
    let events = generate_events(&traces, &scenario, &quiet_sensor(), 1);
    assert!(!events.is_empty());

    let params = RxParams::default();
    let decoded = receive(&events, &layout, &fec, &params, scenario.width, scenario.height);
    assert_eq!(decoded.len(), 1, "expected exactly one region");
    let pkt = decoded[0].as_ref().expect("decode succeeds");
    assert!(pkt.all_crc_ok());
    assert_eq!(pkt.payload, payload);
}

#[test]
fn noisy_moving_roundtrip() {
    let layout = FrameLayout::default();
    let fec = PolarCodeConfig::default();
    let payload = payload_bytes(&layout, &fec, 8);
    let chips = tx_chips(&payload, &layout, &fec);

    let scenario = ScenarioConfig {
        vehicle_speed_kmh: 40.0,
        ..ScenarioConfig::default()
    };
    let traces = render_traces(&scenario, &[chips], layout.chip_period_us);
    let events = generate_events(&traces, &scenario, &SensorConfig::default(), 2);

    let params = RxParams::default();
    let decoded = receive(&events, &layout, &fec, &params, scenario.width, scenario.height);
    assert_eq!(decoded.len(), 1);
    let pkt = decoded[0].as_ref().expect("decode succeeds");
    assert!(pkt.all_crc_ok());
    assert_eq!(pkt.payload, payload);
}

#[test]
fn parallel_decode_matches_sequential() {
    let layout = FrameLayout::default();
    let fec = PolarCodeConfig::default();
    let params = RxParams::default();

    let scenario = ScenarioConfig {
        transmitters: vec![
            TransmitterPlacement { height_offset_m: -1.2, ..TransmitterPlacement::default() },
            TransmitterPlacement { height_offset_m: 1.2, ..TransmitterPlacement::default() },
        ],
        ..ScenarioConfig::default()
    };
    let payloads: Vec<Vec<u8>> = (0..2).map(|i| payload_bytes(&layout, &fec, 20 + i)).collect();
    let per_tx: Vec<Vec<Vec<u8>>> =
        payloads.iter().map(|p| tx_chips(p, &layout, &fec)).collect();
    let traces = render_traces(&scenario, &per_tx, layout.chip_period_us);
    let events = generate_events(&traces, &scenario, &SensorConfig::default(), 3);

    let t_chip = layout.chip_period_us as i64;
    let tol = (t_chip as f64 * params.shift_tol_frac) as i64;
    let record = time_shift_record(&events, t_chip, tol);
    let regions = detect_regions(&record, scenario.width, scenario.height, &params.detect);
    assert_eq!(regions.len(), 2);

    let sequential: Vec<_> = regions
        .iter()
        .map(|r| {
            evlc_core::rx::decode_region(&events, r, &layout, &fec, &params, scenario.width)
        })
        .collect();
    let parallel =
        decode_regions_parallel(&events, &regions, &layout, &fec, &params, scenario.width);
    assert_eq!(sequential, parallel);

    let mut got: Vec<Vec<u8>> = parallel
        .into_iter()
        .map(|r| r.expect("decode succeeds").payload)
        .collect();
    let mut want = payloads.clone();
    got.sort();
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn pilot_weights_suppress_background_pixels() {
    let layout = FrameLayout::default();
    let fec = PolarCodeConfig::default();
    let payload = payload_bytes(&layout, &fec, 9);
    let chips = tx_chips(&payload, &layout, &fec);

    let scenario = ScenarioConfig::default();
    let traces = render_traces(&scenario, &[chips], layout.chip_period_us);
    let sensor = SensorConfig {
        background_noise_rate: 5.0,
        ..SensorConfig::default()
    };
    let events = generate_events(&traces, &scenario, &sensor, 4);

    let params = RxParams::default();
    let t_chip = layout.chip_period_us as i64;
    let tol = (t_chip as f64 * params.shift_tol_frac) as i64;
    let record = time_shift_record(&events, t_chip, tol);
    let regions = detect_regions(&record, scenario.width, scenario.height, &params.detect);
    assert_eq!(regions.len(), 1);
    let region = regions[0];

    let region_events: Vec<_> =
        events.iter().filter(|e| region.contains(e.x, e.y)).copied().collect();
    let t_sync = evlc_core::rx::synchronize(&record, &region, t_chip, params.detect.min_peak)
        .unwrap();
    let weights = pixel_weights(&region_events, &region, t_sync, &layout);

    // Lit pixels carry the pilot edge; pixels only touched by background
    // noise should score much lower.
    let lit: Vec<f64> = traces
        .pixels
        .keys()
        .filter_map(|k| weights.get(k))
        .copied()
        .collect();
    assert!(!lit.is_empty());
    let lit_avg = lit.iter().sum::<f64>() / lit.len() as f64;
    assert!(lit_avg > 0.9, "lit pixel weight avg {lit_avg}");

    let noise: Vec<f64> = weights
        .iter()
        .filter(|(k, _)| !traces.pixels.contains_key(k))
        .map(|(_, &w)| w)
        .collect();
    if !noise.is_empty() {
        let noise_avg = noise.iter().sum::<f64>() / noise.len() as f64;
        assert!(noise_avg < 0.3, "noise pixel weight avg {noise_avg}");
        for &w in weights.values() {
            assert!((0.0..=1.0).contains(&w));
        }
    }
}
