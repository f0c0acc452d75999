//! `llmfp`: fingerprint export, mock serving, probing and verification.
//!
//! Exit codes: 0 when the suspect is the same model / derived from the victim,
//! 1 when it is not, 2 on any error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use llmfp_core::defaults;
use llmfp_core::format::{self, RawMatrix};
use llmfp_core::mocknet::{server, MockConfig, MockNet};
use llmfp_core::probe::{collect, transcript, CollectConfig, HttpEndpoint};
use llmfp_core::reconstruct::ReconstructOptions;
use llmfp_core::verify::{
    compat_test, dimension_difference, render_report, AlignVerdict, CompatVerdict, ReportFormat,
    VerificationReport,
};
use llmfp_core::{
    DisclosureKind, DisclosurePolicy, Dtype, Fingerprint, ProbeVector, QuerySet, Threshold,
};

#[derive(Parser)]
#[command(
    name = "llmfp",
    version,
    about = "Black-box LLM ownership verification via the logits subspace"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw weight matrix file into an LLMFP/1 fingerprint.
    FingerprintExport {
        /// Raw matrix file (LLMRAW header, row-major values).
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Expected vocabulary size (rows).
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Expected hidden size (columns).
        #[arg(long)]
        hidden_size: Option<usize>,
        /// Storage precision; defaults to that of the input.
        #[arg(long, value_enum)]
        dtype: Option<DtypeArg>,
    },
    /// Write a mock model's victim weights as a raw matrix file.
    MockWeights {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "f64")]
        dtype: DtypeArg,
    },
    /// Serve a mock model over HTTP until interrupted.
    ServeMock {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's port; 0 picks a free one.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Collect probe vectors from an endpoint into a transcript.
    Probe {
        #[command(flatten)]
        probe: ProbeArgs,
        /// Fingerprint whose vocabulary size the endpoint must match.
        #[arg(long)]
        fingerprint: Option<PathBuf>,
        #[arg(long)]
        transcript: PathBuf,
    },
    /// Compatibility test: are all probe vectors in the span of the fingerprint?
    VerifyCompat {
        #[command(flatten)]
        verify: VerifyArgs,
    },
    /// Alignment verification: how many dimensions do probe vectors add?
    VerifyAlign {
        #[command(flatten)]
        verify: VerifyArgs,
        /// Include the all-ones direction in the starting span for probability samples.
        #[arg(long, value_enum, default_value = "on")]
        mode_ones_column: Switch,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Dtype {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    FullLogits,
    FullProbs,
    TopK,
    #[value(name = "top-1")]
    Top1,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Human,
    Machine,
}

#[derive(Args)]
struct ProbeArgs {
    /// Server root, e.g. http://127.0.0.1:8080.
    #[arg(long)]
    endpoint: Option<String>,
    /// Prompt corpus, one prompt per line.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full-logits")]
    policy: PolicyArg,
    /// Disclosure width for top-k.
    #[arg(long)]
    k: Option<usize>,
    /// Logit bias for restricted policies (default 30, or 20 for top-1).
    #[arg(long)]
    bias: Option<f64>,
    #[arg(long, default_value_t = defaults::N_MIN)]
    n_min: usize,
    /// Seed for the prompt order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Positions per request for full-disclosure policies.
    #[arg(long, default_value_t = defaults::POSITIONS)]
    positions: u32,
    #[arg(long, default_value_t = defaults::IN_FLIGHT)]
    in_flight: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    fingerprint: PathBuf,
    /// Transcript to read, or to write when probing with --endpoint.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[command(flatten)]
    probe: ProbeArgs,
    /// Relative residual threshold; defaults to 1e-6 (direct) or 1e-5 (reconstructed).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "human")]
    format: FormatArg,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn policy(args: &ProbeArgs) -> Result<DisclosurePolicy> {
    let kind = match args.policy {
        PolicyArg::FullLogits => DisclosureKind::FullLogits,
        PolicyArg::FullProbs => DisclosureKind::FullProbs,
        PolicyArg::TopK => match args.k {
            Some(k) if k >= 1 => DisclosureKind::TopK { k },
            _ => bail!("--policy top-k needs --k >= 1"),
        },
        PolicyArg::Top1 => DisclosureKind::Top1,
    };
    Ok(DisclosurePolicy::with_bias(kind))
}

fn run_probe(args: &ProbeArgs, expected_vocab: Option<usize>) -> Result<Vec<ProbeVector>> {
    let endpoint = args
        .endpoint
        .as_deref()
        .context("--endpoint is required to probe")?;
    let queries_path = args
        .queries
        .as_deref()
        .context("--queries is required to probe")?;
    if args.n_min == 0 {
        bail!("--n-min must be at least 1");
    }
    let text = fs::read_to_string(queries_path)
        .with_context(|| format!("reading {}", queries_path.display()))?;
    let queries = QuerySet::from_text(&text, args.seed)?;
    let cfg = CollectConfig {
        policy: policy(args)?,
        n_min: args.n_min,
        positions: args.positions,
        reconstruct: ReconstructOptions {
            bias: args.bias,
            in_flight: args.in_flight,
            expected_vocab,
        },
    };
    let client = HttpEndpoint::new(endpoint);
    let c = collect(&client, &queries, &cfg)?;
    eprintln!(
        "collected {} vectors from {} prompts with {} queries",
        c.vectors.len(),
        c.prompts,
        c.queries
    );
    Ok(c.vectors)
}

fn load_fingerprint(path: &Path) -> Result<Fingerprint> {
    let (fp, _) = format::load_fingerprint(path)
        .with_context(|| format!("loading fingerprint {}", path.display()))?;
    Ok(fp)
}

fn samples_for(args: &VerifyArgs, fp: &Fingerprint) -> Result<Vec<ProbeVector>> {
    if args.probe.endpoint.is_some() {
        let vectors = run_probe(&args.probe, Some(fp.vocab_size()))?;
        if let Some(path) = &args.transcript {
            transcript::save(path, &vectors)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        return Ok(vectors);
    }
    let path = args
        .transcript
        .as_deref()
        .context("either --transcript or --endpoint is required")?;
    transcript::load(path).with_context(|| format!("reading transcript {}", path.display()))
}

fn emit(report: &VerificationReport, args: &VerifyArgs) -> Result<()> {
    let format = match args.format {
        FormatArg::Human => ReportFormat::Human,
        FormatArg::Machine => ReportFormat::Machine,
    };
    let text = render_report(report, format);
    if let Some(path) = &args.out {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(text.as_bytes())?;
    stdout.flush()?;
    Ok(())
}

fn threshold(args: &VerifyArgs, samples: &[ProbeVector]) -> Result<Threshold> {
    Ok(match args.threshold {
        Some(e) => Threshold::new(e)?,
        None => Threshold::default_for(samples),
    })
}

fn read_mock_config(path: &Path) -> Result<MockConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MockConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Runs a command; `Ok(true)` means the verdict favours the victim.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::FingerprintExport {
            weights,
            out,
            vocab_size,
            hidden_size,
            dtype,
        } => {
            let raw = format::load_raw_matrix(&weights)
                .with_context(|| format!("reading {}", weights.display()))?;
            if let Some(v) = vocab_size.filter(|&v| v != raw.rows) {
                bail!(
                    "weight file has {} rows, expected vocabulary size {v}",
                    raw.rows
                );
            }
            if let Some(h) = hidden_size.filter(|&h| h != raw.cols) {
                bail!(
                    "weight file has {} columns, expected hidden size {h}",
                    raw.cols
                );
            }
            let id = out
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let fp = Fingerprint::from_row_major(id, raw.rows, raw.cols, &raw.values)?;
            let dtype = dtype.map(Dtype::from).unwrap_or(raw.dtype);
            format::save_fingerprint(&out, &fp, dtype)?;
            eprintln!(
                "wrote {}x{} fingerprint to {}",
                raw.rows,
                raw.cols,
                out.display()
            );
            Ok(true)
        }
        Command::MockWeights { config, out, dtype } => {
            let net = MockNet::new(read_mock_config(&config)?)?;
            let w = net.victim_fingerprint();
            let raw = RawMatrix {
                rows: w.vocab_size(),
                cols: w.hidden_size(),
                dtype: dtype.into(),
                values: w.to_row_major(),
            };
            format::save_raw_matrix(&out, &raw)?;
            eprintln!(
                "wrote {}x{} victim weights to {}",
                raw.rows,
                raw.cols,
                out.display()
            );
            Ok(true)
        }
        Command::ServeMock { config, port, host } => {
            let cfg = read_mock_config(&config)?;
            let port = port.unwrap_or(cfg.port);
            let addr = format!("{host}:{port}")
                .parse()
                .with_context(|| format!("bad listen address {host}:{port}"))?;
            let handle = server::spawn(Arc::new(MockNet::new(cfg)?), addr)?;
            println!("listening on {}", handle.url());
            std::io::stdout().flush()?;
            handle.wait()?;
            Ok(true)
        }
        Command::Probe {
            probe,
            fingerprint,
            transcript: path,
        } => {
            let expected = match fingerprint {
                Some(p) => Some(load_fingerprint(&p)?.vocab_size()),
                None => None,
            };
            let vectors = run_probe(&probe, expected)?;
            transcript::save(&path, &vectors)
                .with_context(|| format!("writing {}", path.display()))?;
            Ok(true)
        }
        Command::VerifyCompat { verify } => {
            let fp = load_fingerprint(&verify.fingerprint)?;
            let samples = samples_for(&verify, &fp)?;
            let report = compat_test(&fp, &samples, threshold(&verify, &samples)?)?;
            let same = report.verdict == CompatVerdict::SameLastLayer;
            emit(&VerificationReport::Compat(report), &verify)?;
            Ok(same)
        }
        Command::VerifyAlign {
            verify,
            mode_ones_column,
        } => {
            let fp = load_fingerprint(&verify.fingerprint)?;
            let samples = samples_for(&verify, &fp)?;
            let ones = matches!(mode_ones_column, Switch::On);
            let report = dimension_difference(&fp, &samples, threshold(&verify, &samples)?, ones)?;
            let derived = report.verdict == AlignVerdict::DerivedFromVictim;
            emit(&VerificationReport::Align(report), &verify)?;
            Ok(derived)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
