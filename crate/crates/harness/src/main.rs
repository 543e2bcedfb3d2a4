use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use evlc_core::frame::FrameLayout;
use evlc_core::latency::{etsi_check, latency_model};
use evlc_core::rx;
use evlc_core::sensor::{
    apply_bandwidth_cap, generate_events, read_events_csv, render_traces, write_events_csv,
};
use evlc_harness::{encode_packet_chips, random_payload, run_sweep, ExperimentConfig};

#[derive(Parser)]
#[command(name = "evlc", about = "Event-camera VLC simulation and decoding harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the event stream as CSV.
    Simulate {
        /// Experiment config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path ("-" for stdout).
        #[arg(long, default_value = "-")]
        out: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Decode an event CSV into packet records (JSON lines on stdout).
    Decode {
        /// Input event CSV ("-" for stdin).
        #[arg(long, default_value = "-")]
        events: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1280)]
        width: u32,
        #[arg(long, default_value_t = 720)]
        height: u32,
    },
    /// Run a sweep from a config file; writes a metrics CSV and JSON summary.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        summary: PathBuf,
    },
    /// Evaluate the latency model.
    Latency {
        #[arg(long, default_value_t = 1)]
        packets: u64,
        #[arg(long)]
        gap_slots: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        t_cmd_us: u64,
        #[arg(long, default_value_t = 2000)]
        t_transfer_us: u64,
        #[arg(long, default_value_t = 13_000)]
        t_proc_us: u64,
    },
    /// Check a payload/latency pair against the cooperative-perception budget.
    EtsiCheck {
        #[arg(long)]
        payload_bytes: u64,
        #[arg(long, default_value_t = 3)]
        packets: u64,
        #[arg(long)]
        gap_slots: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        t_cmd_us: u64,
        #[arg(long, default_value_t = 2000)]
        t_transfer_us: u64,
        #[arg(long, default_value_t = 16_000)]
        t_proc_us: u64,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn layout_with_gap(gap_slots: Option<usize>) -> FrameLayout {
    let mut layout = FrameLayout::default();
    if let Some(g) = gap_slots {
        layout.inter_packet_gap_slots = g;
    }
    layout
}

fn out_writer(path: &str) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        "-" => Box::new(BufWriter::new(io::stdout())),
        p => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {p}"))?,
        )),
    })
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, out, seed } => {
            let cfg = load_config(&config)?;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let per_tx: Vec<Vec<Vec<u8>>> = cfg
                .scenario
                .transmitters
                .iter()
                .map(|_| {
                    let payload = random_payload(&cfg.layout, &cfg.fec, &mut rng);
                    encode_packet_chips(&payload, &cfg.layout, &cfg.fec)
                })
                .collect::<Result<_, _>>()?;
            let traces = render_traces(&cfg.scenario, &per_tx, cfg.layout.chip_period_us);
            let events = generate_events(&traces, &cfg.scenario, &cfg.sensor, seed);
            let capped = apply_bandwidth_cap(&events, cfg.sensor.bandwidth_cap);
            write_events_csv(out_writer(&out)?, &capped)?;
        }
        Command::Decode { events, config, width, height } => {
            let cfg = load_config(&config)?;
            let stream = match events.as_str() {
                "-" => {
                    let mut buf = String::new();
                    io::stdin().read_to_string(&mut buf)?;
                    read_events_csv(BufReader::new(buf.as_bytes()))?
                }
                p => read_events_csv(BufReader::new(
                    File::open(p).with_context(|| format!("opening {p}"))?,
                ))?,
            };
            let decoded = rx::receive(&stream, &cfg.layout, &cfg.fec, &cfg.rx, width, height);
            let mut out = BufWriter::new(io::stdout());
            let mut failures = 0usize;
            for result in decoded {
                match result {
                    Ok(pkt) => {
                        let hex: String =
                            pkt.payload.iter().map(|b| format!("{b:02x}")).collect();
                        let line = serde_json::json!({
                            "payload_hex": hex,
                            "crc_ok": pkt.cluster_crc_ok,
                            "region": pkt.region,
                            "t_sync_us": pkt.t_sync_us,
                        });
                        writeln!(out, "{line}")?;
                    }
                    Err(e) => {
                        failures += 1;
                        writeln!(out, "{}", serde_json::json!({ "error": e.to_string() }))?;
                    }
                }
            }
            out.flush()?;
            anyhow::ensure!(failures == 0, "{failures} region(s) failed to decode");
        }
        Command::Sweep { config, csv, summary } => {
            let cfg = load_config(&Some(config))?;
            let out = run_sweep(&cfg)?;
            std::fs::write(&csv, &out.csv)
                .with_context(|| format!("writing {}", csv.display()))?;
            std::fs::write(&summary, serde_json::to_string_pretty(&out.summary)?)
                .with_context(|| format!("writing {}", summary.display()))?;
        }
        Command::Latency { packets, gap_slots, t_cmd_us, t_transfer_us, t_proc_us } => {
            let layout = layout_with_gap(gap_slots);
            let b = latency_model(packets, &layout, t_cmd_us, t_transfer_us, t_proc_us)?;
            println!("{}", serde_json::to_string_pretty(&b)?);
        }
        Command::EtsiCheck {
            payload_bytes,
            packets,
            gap_slots,
            t_cmd_us,
            t_transfer_us,
            t_proc_us,
        } => {
            let layout = layout_with_gap(gap_slots);
            let b = latency_model(packets, &layout, t_cmd_us, t_transfer_us, t_proc_us)?;
            let report = etsi_check(&b, payload_bytes);
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "breakdown": b,
                    "report": report,
                }))?
            );
            anyhow::ensure!(report.pass, "ETSI budget violated");
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
