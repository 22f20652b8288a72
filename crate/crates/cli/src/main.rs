//! Scenario runner: executes simulated resolutions, checks the deployment
//! matrix, and pretty-prints transcripts.
//!
//! Exit codes for `run`: 0 validated (Secure, BridgedSecure),
//! 1 unvalidated answer (BridgedEncrypted, Insecure), 2 rejected
//! (Bogus, Aborted), 3 harness errors (bad files, topology, resolution
//! machinery). `matrix` exits 0 when every cell matches the expected
//! table, 1 on any mismatch, 3 on harness errors.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use islandbridge::resolver::{Event, OutcomeStatus, Transcript};
use islandbridge::simnet::{
    expected_outcome, run_scenario, MatrixSpec, OutcomeReport, ScenarioFile,
};

/// Seed override environment variable.
const SEED_ENV: &str = "ISLANDBRIDGE_SEED";

#[derive(Parser)]
#[command(
    name = "islandbridge",
    about = "Simulated DNS hierarchy with a certificate bridge over broken chains of trust"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and print `STATUS answer rtt=N extra_rtt=M`.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed (also settable via ISLANDBRIDGE_SEED).
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full run report as JSON to this path.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Print nothing; communicate through the exit code only.
        #[arg(long)]
        quiet: bool,
    },
    /// Run every cell of a deployment matrix and compare against the
    /// expected-outcome table.
    Matrix {
        spec: PathBuf,
        /// Write the cell results as JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run a scenario and pretty-print its transcript with protocol step
    /// labels.
    Trace {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            transcript,
            quiet,
        } => cmd_run(&scenario, seed, transcript.as_deref(), quiet),
        Command::Matrix { spec, json } => cmd_matrix(&spec, json.as_deref()),
        Command::Trace { scenario, seed } => cmd_trace(&scenario, seed),
    }
}

fn effective_seed(flag: Option<u64>) -> anyhow::Result<Option<u64>> {
    if let Some(seed) = flag {
        return Ok(Some(seed));
    }
    match std::env::var(SEED_ENV) {
        Ok(value) => {
            let seed = value
                .parse::<u64>()
                .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got {value:?}"))?;
            Ok(Some(seed))
        }
        Err(_) => Ok(None),
    }
}

fn load_scenario(path: &std::path::Path, seed: Option<u64>) -> anyhow::Result<ScenarioFile> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading scenario file {}", path.display()))?;
    let mut file = ScenarioFile::parse(&text)?;
    if let Some(seed) = effective_seed(seed)? {
        file.seed = seed;
    }
    Ok(file)
}

fn exit_code_for(status: &OutcomeStatus) -> ExitCode {
    match status {
        OutcomeStatus::Secure | OutcomeStatus::BridgedSecure => ExitCode::from(0),
        OutcomeStatus::BridgedEncrypted | OutcomeStatus::Insecure => ExitCode::from(1),
        OutcomeStatus::Bogus { .. } | OutcomeStatus::Aborted { .. } => ExitCode::from(2),
    }
}

fn outcome_line(outcome: &OutcomeReport) -> String {
    let answer = outcome
        .answer
        .first()
        .map(|a| a.to_string())
        .unwrap_or_else(|| "-".to_string());
    format!(
        "{} {} rtt={} extra_rtt={}",
        outcome.status_text, answer, outcome.rtt_count, outcome.extra_rtt
    )
}

fn cmd_run(
    path: &std::path::Path,
    seed: Option<u64>,
    transcript_out: Option<&std::path::Path>,
    quiet: bool,
) -> anyhow::Result<ExitCode> {
    let file = load_scenario(path, seed)?;
    let report = run_scenario(&file)?;
    if let Some(out) = transcript_out {
        fs::write(out, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing transcript to {}", out.display()))?;
    }
    let last = report.last();
    if !quiet {
        println!("{}", outcome_line(last));
    }
    Ok(exit_code_for(&last.status))
}

fn cmd_matrix(path: &std::path::Path, json_out: Option<&std::path::Path>) -> anyhow::Result<ExitCode> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading matrix spec {}", path.display()))?;
    let spec = MatrixSpec::parse(&text)?;
    let check_expectations = spec.adversary == islandbridge::simnet::Adversary::None;

    #[derive(serde::Serialize)]
    struct CellResult {
        cell: String,
        outcome: String,
        expected: Option<String>,
        matches: Option<bool>,
    }

    let mut results = Vec::new();
    let mut mismatches = 0usize;
    for cell in spec.cells() {
        let scenario = spec.cell_scenario(&cell);
        let report = run_scenario(&scenario)?;
        let outcome = report.last().status.clone();
        let expected = check_expectations.then(|| expected_outcome(&cell));
        let matches = expected.as_ref().map(|e| *e == outcome);
        if matches == Some(false) {
            mismatches += 1;
        }
        let line = match (&expected, matches) {
            (Some(exp), Some(true)) => format!("{} {} expected={} ok", cell.label(), outcome, exp),
            (Some(exp), _) => format!("{} {} expected={} MISMATCH", cell.label(), outcome, exp),
            (None, _) => format!("{} {}", cell.label(), outcome),
        };
        println!("{line}");
        results.push(CellResult {
            cell: cell.label(),
            outcome: outcome.to_string(),
            expected: expected.map(|e| e.to_string()),
            matches,
        });
    }
    let total = results.len();
    if check_expectations {
        println!("matrix: {}/{} cells match", total - mismatches, total);
    } else {
        println!("matrix: {total} cells run (adversary set; expectations not checked)");
    }
    if let Some(out) = json_out {
        fs::write(out, serde_json::to_string_pretty(&results)?)
            .with_context(|| format!("writing matrix results to {}", out.display()))?;
    }
    Ok(if mismatches == 0 {
        ExitCode::from(0)
    } else {
        ExitCode::from(1)
    })
}

fn cmd_trace(path: &std::path::Path, seed: Option<u64>) -> anyhow::Result<ExitCode> {
    let file = load_scenario(path, seed)?;
    let report = run_scenario(&file)?;
    for (index, outcome) in report.outcomes.iter().enumerate() {
        if report.outcomes.len() > 1 {
            println!("resolution {}", index + 1);
        }
        print_transcript(&outcome.transcript, &outcome.status);
        println!("{}", outcome_line(outcome));
        if index + 1 < report.outcomes.len() {
            println!();
        }
    }
    Ok(exit_code_for(&report.last().status))
}

/// Maps transcript events onto the numbered steps of the bridged
/// resolution flow documented in the README (1-15). Events inside an
/// aborted bridge inherit the abort step instead of jumping ahead.
fn print_transcript(transcript: &Transcript, status: &OutcomeStatus) {
    let mut queries_seen = 0usize;
    let mut responses_seen = 0usize;
    let mut last_step = 1u8;
    for (i, event) in transcript.events.iter().enumerate() {
        let step: u8 = match event {
            Event::CacheHit { .. } => 2,
            Event::Query { ds_absent_flag, .. } => {
                queries_seen += 1;
                if *ds_absent_flag {
                    6
                } else if queries_seen == 1 {
                    2
                } else {
                    4
                }
            }
            Event::Response { bridge_advert, .. } => {
                responses_seen += 1;
                let opens_gap = transcript.events[i + 1..]
                    .iter()
                    .take(2)
                    .any(|e| matches!(e, Event::GapOpened { .. }));
                if bridge_advert.is_some() {
                    7
                } else if opens_gap {
                    5
                } else {
                    3
                }
            }
            Event::ForgeryRejected { .. } => last_step,
            Event::LevelValidated { .. } | Event::ValidationFailed { .. } => 4,
            Event::GapOpened { .. } => 5,
            Event::TcpConnect { .. } => 8,
            Event::ClientHelloSent => 9,
            Event::ServerFlightReceived { .. } => 10,
            Event::CertChecked { .. } | Event::ClientFlightSent => 11,
            Event::HandshakeEstablished => 12,
            Event::BridgeAborted { .. } => last_step,
            Event::SealedQuerySent => 13,
            Event::SealedResponseReceived { .. } | Event::SealedReferral { .. } => 14,
            Event::DowngradeSuspected => 7,
            Event::OutcomeReached { .. } => {
                if status.has_answer() {
                    15
                } else {
                    last_step
                }
            }
        };
        last_step = step;
        println!("[step {:>2}] {}", step, event_line(event));
    }
    let _ = responses_seen;
}

fn event_line(event: &Event) -> String {
    match event {
        Event::CacheHit { name, status } => format!("cache_hit name={name} status={status}"),
        Event::Query {
            server,
            name,
            qtype,
            txid,
            ds_absent_flag,
        } => {
            let flag = if *ds_absent_flag { " flag=ds_absent" } else { "" };
            format!("query server={server} name={name} type={qtype} txid={txid:#06x}{flag}")
        }
        Event::Response {
            server,
            rcode,
            answers,
            authority,
            additional,
            ds_present,
            bridge_advert,
        } => {
            let mut line = format!(
                "response server={server} rcode={rcode} sections={answers}/{authority}/{additional} ds={}",
                if *ds_present { "present" } else { "absent" }
            );
            if let Some(port) = bridge_advert {
                line.push_str(&format!(" bridge_advert={port}"));
            }
            line
        }
        Event::ForgeryRejected { server, reason } => {
            format!("forgery_rejected server={server} reason={reason}")
        }
        Event::LevelValidated { zone } => format!("level_validated zone={zone}"),
        Event::GapOpened { zone } => format!("gap_opened zone={zone}"),
        Event::ValidationFailed { zone, reason } => {
            format!("validation_failed zone={zone} reason={reason}")
        }
        Event::TcpConnect { server, port } => format!("tcp_connect server={server} port={port}"),
        Event::ClientHelloSent => "client_hello_sent".to_string(),
        Event::ServerFlightReceived { cert_ip } => {
            format!("server_flight_received cert_ip={cert_ip}")
        }
        Event::CertChecked { accepted, reason } => match reason {
            Some(reason) => format!(
                "cert_checked accepted={accepted} reason={reason}",
            ),
            None => format!("cert_checked accepted={accepted}"),
        },
        Event::ClientFlightSent => "client_flight_sent".to_string(),
        Event::HandshakeEstablished => "handshake_established".to_string(),
        Event::BridgeAborted { reason } => format!("bridge_aborted reason={reason}"),
        Event::SealedQuerySent => "sealed_query_sent".to_string(),
        Event::SealedResponseReceived { validated } => {
            format!("sealed_response validated={validated}")
        }
        Event::SealedReferral { zone } => format!("sealed_referral zone={zone}"),
        Event::DowngradeSuspected => "downgrade_suspected".to_string(),
        Event::OutcomeReached { status } => format!("outcome {status}"),
    }
}
