use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hcb_core::backend::{fit_empirical, ConditionalBackend, ExactMarginalModel, JointTable};
use hcb_core::oracle::{ci_residual, hcb_identity_check, pivot_spread};
use hcb_core::rng::rng_for;
use hcb_core::sampling::{SamplerConfig, SamplerKind};
use hcb_core::search::{all_spans, BeamConfig, OrderPolicy};
use hcb_core::{ScoringMode, TokenId};
use hcb_harness::config::{Ablation, BackendSpec, DataSource, ExperimentConfig, Method, SyntheticJoint};
use hcb_harness::dataset::parse_ids;
use hcb_harness::experiment::{run_with_backend, ExperimentResult, MethodSummary};
use hcb_harness::output::{summary_path, write_rows, write_summary, Format};
use hcb_harness::sweep::{constant_pivots, pivot_sweep};
use hcb_harness::tasks::generate_tasks;
use rand::Rng;

#[derive(Parser)]
#[command(name = "hcb-infill", version, about = "Masked-LM infilling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run beam-search and sampling methods over generated gap tasks.
    Run {
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        methods: MethodArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Pivot-corrected beam search once per pivot over a shared task set.
    SweepPivots {
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Pivot as space-separated ids; repeatable. Defaults to every
        /// constant content pivot plus the all-mask pivot.
        #[arg(long)]
        pivot: Vec<String>,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, value_enum, default_value_t = OrderArg::Ltr)]
        order: OrderArg,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Check the telescoping identity on random joints and report
    /// independence and pivot residuals for a backend.
    CheckIdentities {
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 2)]
        gap: usize,
        #[arg(long, default_value_t = 50)]
        num_examples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the count-based masked estimator and report its residual against
    /// the exact model.
    FitEmpirical {
        #[command(flatten)]
        joint: JointArgs,
        #[arg(long, default_value_t = 0.15)]
        mask_rate: f64,
        /// Masking draws; repeatable.
        #[arg(long = "num-samples", value_delimiter = ',', default_values_t = [1_000usize, 10_000, 100_000])]
        num_samples: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        corpus_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct JointArgs {
    #[arg(long, default_value_t = 3)]
    alphabet: usize,
    #[arg(long, default_value_t = 5)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    joint_seed: u64,
    /// Standard deviation of the joint's Gaussian log-weights.
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
}

impl JointArgs {
    fn joint(&self) -> SyntheticJoint {
        SyntheticJoint {
            alphabet: self.alphabet,
            length: self.length,
            seed: self.joint_seed,
            spread: self.spread,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Exact,
    Empirical,
    Perturbed,
    Remote,
}

#[derive(Args, Clone)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Exact)]
    backend: BackendKind,
    #[command(flatten)]
    joint: JointArgs,
    /// Perturbation strength for the perturbed backend.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.15)]
    mask_rate: f64,
    /// Masking draws for the empirical backend.
    #[arg(long, default_value_t = 100_000)]
    fit_samples: usize,
    #[arg(long, default_value_t = 10_000)]
    corpus_size: usize,
    #[arg(long, env = "MLM_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

impl BackendArgs {
    fn spec(&self) -> Result<BackendSpec> {
        let joint = self.joint.joint();
        Ok(match self.backend {
            BackendKind::Exact => BackendSpec::Exact { joint },
            BackendKind::Empirical => BackendSpec::Empirical {
                joint,
                mask_rate: self.mask_rate,
                num_samples: self.fit_samples,
                corpus_size: self.corpus_size,
            },
            BackendKind::Perturbed => BackendSpec::Perturbed {
                joint,
                delta: self.delta,
            },
            BackendKind::Remote => BackendSpec::Remote {
                endpoint: self
                    .endpoint
                    .clone()
                    .context("remote backend needs --endpoint or MLM_ENDPOINT")?,
                timeout_ms: self.timeout_ms,
                batch_size: self.batch_size,
            },
        })
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Newline-delimited examples; sampled from the joint when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Size of the sampled corpus when no dataset is given.
    #[arg(long, default_value_t = 1000)]
    num_sequences: usize,
    #[arg(long, default_value_t = 2)]
    gap: usize,
    #[arg(long, default_value_t = 100)]
    num_examples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long = "top-k", value_delimiter = ',', default_values_t = [1usize, 5])]
    top_k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = AblationArg::None)]
    ablation: AblationArg,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ModeArg {
    Standard,
    Hcb,
    HcbPivot,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Ltr,
    B2w,
}

impl From<OrderArg> for OrderPolicy {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Ltr => OrderPolicy::LeftToRight,
            OrderArg::B2w => OrderPolicy::BestToWorst,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    None,
    Context,
    Token,
}

#[derive(Args, Clone)]
struct MethodArgs {
    /// Beam sizes; one beam method per size, mode and order.
    #[arg(long, value_delimiter = ',', default_values_t = [5usize])]
    beam: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModeArg::Standard, ModeArg::Hcb])]
    mode: Vec<ModeArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [OrderArg::Ltr])]
    order: Vec<OrderArg>,
    /// Pivot for hcb-pivot as space-separated ids; repeatable.
    #[arg(long)]
    pivot: Vec<String>,
    /// Candidates per sampler; adds sampling baselines when given.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    temperature: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    nucleus: Vec<f64>,
}

#[derive(Args, Clone)]
struct OutputArgs {
    #[arg(long, default_value = "results.jsonl")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
}

fn parse_pivots(raw: &[String]) -> Result<Vec<Vec<TokenId>>> {
    raw.iter().map(|p| Ok(parse_ids(p)?)).collect()
}

fn methods(args: &MethodArgs, content_pivot: TokenId, gap: usize) -> Result<Vec<Method>> {
    let pivots = if args.pivot.is_empty() {
        vec![vec![content_pivot; gap]]
    } else {
        parse_pivots(&args.pivot)?
    };
    let mut out = Vec::new();
    for &b in &args.beam {
        for &mode in &args.mode {
            let modes = match mode {
                ModeArg::Standard => vec![ScoringMode::Standard],
                ModeArg::Hcb => vec![ScoringMode::HcbMask],
                ModeArg::HcbPivot => pivots.iter().cloned().map(ScoringMode::pivot).collect(),
            };
            for m in modes {
                for &order in &args.order {
                    out.push(Method::Beam(BeamConfig::new(b, m.clone(), order.into())));
                }
            }
        }
    }
    if let Some(n) = args.samples {
        let mut kinds = Vec::new();
        if args.temperature.is_empty() && args.nucleus.is_empty() {
            kinds.push(SamplerKind::Pure);
        }
        kinds.extend(args.temperature.iter().map(|&t| SamplerKind::Temperature(t)));
        kinds.extend(args.nucleus.iter().map(|&p| SamplerKind::Nucleus(p)));
        out.extend(kinds.into_iter().map(|k| Method::Sample(SamplerConfig::new(k, n, 0))));
    }
    Ok(out)
}

fn experiment_config(backend: BackendSpec, data: &DataArgs, methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        backend,
        data: match &data.dataset {
            Some(path) => DataSource::File { path: path.clone() },
            None => DataSource::Synthetic {
                num_sequences: data.num_sequences,
            },
        },
        gap: data.gap,
        num_examples: data.num_examples,
        methods,
        ablation: match data.ablation {
            AblationArg::None => Ablation::None,
            AblationArg::Context => Ablation::ContextScramble,
            AblationArg::Token => Ablation::TokenSwap,
        },
        seed: data.seed,
        workers: data.workers,
        top_k: data.top_k.clone(),
    }
}

fn print_summaries(summaries: &[MethodSummary]) {
    for s in summaries {
        let acc: Vec<String> = s.top_k.iter().map(|(k, a)| format!("top{k}={:.3}", a)).collect();
        let oracle = s
            .oracle_agreement
            .map(|a| format!(" oracle={a:.3}"))
            .unwrap_or_default();
        println!(
            "{:<40} {} bleu={:.2}{oracle} calls={} probes={} errors={}",
            s.method,
            acc.join(" "),
            s.mean_bleu,
            s.scoring_calls,
            s.probe_calls,
            s.errors
        );
    }
}

fn emit(result: &ExperimentResult, output: &OutputArgs) -> Result<ExitCode> {
    write_rows(&output.out, &result.rows, output.format)?;
    write_summary(&summary_path(&output.out), &result.summaries, &result.config.top_k)?;
    if result.skipped_examples > 0 {
        eprintln!("skipped {} examples too short for the gap", result.skipped_examples);
    }
    print_summaries(&result.summaries);
    if result.aborted {
        eprintln!(
            "aborted: {:.1}% of rows failed (limit 10%)",
            100.0 * result.failure_rate
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn check_identities(backend: &BackendArgs, trials: usize, gap: usize, num_examples: usize, seed: u64) -> Result<()> {
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let mut rng = rng_for(&[seed, trial as u64]);
        let a = rng.random_range(2..=5usize);
        let n = rng.random_range(3..=7usize);
        let joint = JointTable::random(a, n, 1.0, &mut rng)?;
        let x: Vec<TokenId> = (0..n).map(|_| rng.random_range(0..a as TokenId)).collect();
        let y: Vec<TokenId> = (0..n).map(|_| rng.random_range(0..a as TokenId)).collect();
        worst = worst.max(hcb_identity_check(&joint, &x, &y)?);
    }
    println!("identity: {trials} trials, max residual {worst:.3e}");

    let spec = backend.spec()?;
    if matches!(spec, BackendSpec::Remote { .. }) {
        return Ok(());
    }
    let built = spec.build()?;
    let reference = built.reference.as_ref().expect("synthetic backends carry a reference");
    let joint = spec.joint().expect("synthetic backend");
    let corpus = joint.corpus(num_examples.max(100))?;
    let set = generate_tasks(built.backend.vocab(), &corpus, gap, num_examples, seed)?;
    let pairs: Vec<_> = set.tasks.iter().map(|t| (t.task.clone(), t.truth.clone())).collect();
    let ci = ci_residual(built.backend.as_ref(), reference, &pairs)?;
    let content: Vec<TokenId> = built.backend.vocab().content_ids().to_vec();
    let pivots = constant_pivots(built.backend.vocab(), gap, false);
    let completions = all_spans(&content, gap);
    let mut spread = 0.0f64;
    for t in &set.tasks {
        spread = spread.max(pivot_spread(built.backend.as_ref(), &t.task, &pivots, &completions)?);
    }
    println!(
        "{}: ci mean_kl {:.3e} max_kl {:.3e} mean_abs {:.3e} max_abs {:.3e} over {} queries; pivot spread {:.3e}",
        built.backend.name(),
        ci.mean_kl,
        ci.max_kl,
        ci.mean_abs,
        ci.max_abs,
        ci.queries,
        spread
    );
    Ok(())
}

fn fit(joint: &JointArgs, mask_rate: f64, num_samples: &[usize], corpus_size: usize, seed: u64) -> Result<()> {
    let synth = joint.joint();
    let exact = ExactMarginalModel::new(synth.build()?);
    let corpus = synth.corpus(corpus_size)?;
    let set = generate_tasks(exact.vocab(), &corpus, 1, 200, seed)?;
    let pairs: Vec<_> = set.tasks.iter().map(|t| (t.task.clone(), t.truth.clone())).collect();
    for &n in num_samples {
        let est = fit_empirical(&corpus, synth.alphabet, mask_rate, n, seed)?;
        let ci = ci_residual(&est, &exact, &pairs)?;
        println!(
            "samples {n:>9}: contexts {:>6} mean_kl {:.4} mean_abs {:.4} max_abs {:.4}",
            est.num_contexts(),
            ci.mean_kl,
            ci.mean_abs,
            ci.max_abs
        );
    }
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            backend,
            data,
            methods: m,
            output,
        } => {
            let spec = backend.spec()?;
            let built = spec.build()?;
            let content_pivot = *built
                .backend
                .vocab()
                .content_ids()
                .first()
                .context("vocabulary has no content tokens")?;
            let cfg = experiment_config(spec, &data, methods(&m, content_pivot, data.gap)?);
            let result = run_with_backend(&cfg, &built)?;
            emit(&result, &output)
        }
        Command::SweepPivots {
            backend,
            data,
            pivot,
            beam,
            order,
            output,
        } => {
            let spec = backend.spec()?;
            let built = spec.build()?;
            let pivots = if pivot.is_empty() {
                if matches!(spec, BackendSpec::Remote { .. }) {
                    bail!("give --pivot explicitly for remote backends");
                }
                constant_pivots(built.backend.vocab(), data.gap, true)
            } else {
                parse_pivots(&pivot)?
            };
            let cfg = experiment_config(spec, &data, Vec::new());
            let (table, result) = pivot_sweep(&cfg, &built, &pivots, beam, order.into())?;
            let code = emit(&result, &output)?;
            println!("pivot ranking:");
            for row in &table {
                let acc: Vec<String> = row.top_k.iter().map(|(k, a)| format!("top{k}={a:.3}")).collect();
                println!("  {:<30} {}", row.method, acc.join(" "));
            }
            Ok(code)
        }
        Command::CheckIdentities {
            backend,
            trials,
            gap,
            num_examples,
            seed,
        } => {
            check_identities(&backend, trials, gap, num_examples, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::FitEmpirical {
            joint,
            mask_rate,
            num_samples,
            corpus_size,
            seed,
        } => {
            fit(&joint, mask_rate, &num_samples, corpus_size, seed)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
