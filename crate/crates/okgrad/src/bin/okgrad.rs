//! Command-line entry point: training runs, gradient-noise analysis,
//! estimator oracles and cost benchmarks. All commands are deterministic
//! under fixed flags.
//!
//! CSV schemas:
//!   train: `step,loss_bpc,context,wallclock_s,updates_done`
//!     (`context` is the curriculum length for the copy task, or the split
//!      tag `train`/`valid`/`test` for language modeling)
//!   noise repetitions: `step,cosine,true_norm,approx_norm,filtered`
//!     (floats printed with 17 significant digits; empty cosine marks a
//!      missing datum)
//!   noise aggregate: `step,mean_cosine,std_cosine,reps_used`

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use okgrad::analysis::{estimator_moments, kf_avg_compress, noise_protocol, Moments,
    SampleBudget, FILTER_THRESHOLD};
use okgrad::approximators::AlgoSpec;
use okgrad::kronsum::{ok_compress, KronFormat, KroneckerSum};
use okgrad::lowrank::{sample_opt_diag, split_index};
use okgrad::rng::CounterRng;
use okgrad::rnn::{forward, load_checkpoint, save_checkpoint, RhnParams};
use okgrad::smalllin::Mat;
use okgrad::train::{train_loop, RunRecord, TaskKind, TrainConfig};
use okgrad::Error;

#[derive(Parser)]
#[command(
    name = "okgrad",
    version,
    about = "Online recurrent learning with unbiased Kronecker-sum gradient estimators"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a recurrent highway network on a task, writing a CSV record
    /// stream and a final checkpoint.
    Train(TrainArgs),
    /// Freeze a checkpoint and measure per-step cosines between an
    /// estimator and the exact gradient.
    Noise(NoiseArgs),
    /// Exhaustive-enumeration checks of the randomized estimators; prints
    /// target, mean, variance and the theoretical bound, then PASS or FAIL.
    Oracle(OracleArgs),
    /// Measure per-element state size and step time of an estimator.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Copy,
    Lm,
}

#[derive(Args)]
struct TrainArgs {
    /// Task to train on.
    #[arg(value_enum)]
    task: TaskArg,
    /// Gradient algorithm: exact | tbptt:<T> | uoro | kf | kfavg:<r> |
    /// ok:<r> | bok:<r> | kfapprox:<r> | ktp:<r>.
    #[arg(long)]
    algo: String,
    /// Hidden units.
    #[arg(long, default_value_t = 64)]
    units: usize,
    /// Batch lanes.
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Training steps.
    #[arg(long, default_value_t = 10_000)]
    steps: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// UTF-8 corpus (lm task only).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Record cadence in steps.
    #[arg(long, default_value_t = 100)]
    eval_every: u64,
    /// Per-step hidden reset probability (lm task).
    #[arg(long, default_value_t = 0.01)]
    reset_prob: f64,
    /// Checkpoint path (defaults to <out>.ckpt).
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Estimator to compare against the exact gradient.
    #[arg(long)]
    algo: String,
    /// Steps per repetition.
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    /// Independent repetitions.
    #[arg(long, default_value_t = 20)]
    repetitions: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output prefix: writes <out>.rep<k>.csv and <out>.agg.csv.
    #[arg(long)]
    out: PathBuf,
    /// Records with true-gradient norm below this are flagged filtered.
    #[arg(long, default_value_t = FILTER_THRESHOLD)]
    filter_threshold: f64,
    /// Cap on the dense exact-sensitivity state, in gibibytes.
    #[arg(long, default_value_t = 4.0)]
    mem_cap_gb: f64,
}

#[derive(Args)]
struct OracleArgs {
    #[command(subcommand)]
    which: OracleCmd,
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Optimal unbiased low-rank sampler on an explicit diagonal.
    OptDiag {
        /// Comma-separated non-increasing diagonal, e.g. 1,1,1.
        #[arg(long)]
        d: String,
        #[arg(long)]
        rank: usize,
    },
    /// Optimal unbiased low-rank sampler on a seeded random matrix.
    Opt {
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 3)]
        cols: usize,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Shared-left-factor instance: optimal compression is noiseless, the
    /// sign trick is not.
    OkCase1,
    /// Orthogonal-factor instance: the sign trick is already optimal.
    OkCase2,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    algo: String,
    #[arg(long, default_value_t = 64)]
    units: usize,
    #[arg(long, default_value_t = 26)]
    vocab: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("OKGRAD_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Noise(args) => cmd_noise(args),
        Cmd::Oracle(args) => cmd_oracle(args),
        Cmd::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Error> {
    let algo: AlgoSpec = args.algo.parse()?;
    let cfg = TrainConfig {
        task: match args.task {
            TaskArg::Copy => TaskKind::Copy,
            TaskArg::Lm => TaskKind::Lm,
        },
        algo,
        units: args.units,
        batch: args.batch,
        lr: args.lr,
        steps: args.steps,
        seed: args.seed,
        eval_every: args.eval_every,
        data: args.data,
        reset_prob: args.reset_prob,
    };
    let mut csv = BufWriter::new(File::create(&args.out)?);
    writeln!(csv, "step,loss_bpc,context,wallclock_s,updates_done")?;
    let mut write_err: Option<std::io::Error> = None;
    let outcome = {
        let mut emit = |r: &RunRecord| {
            if write_err.is_some() {
                return;
            }
            let res = writeln!(
                csv,
                "{},{},{},{:.3},{}",
                r.step,
                fmt_bpc(r.loss_bpc),
                r.context,
                r.wallclock_s,
                r.updates_done
            )
            .and_then(|_| csv.flush());
            if let Err(e) = res {
                write_err = Some(e);
            }
        };
        train_loop(&cfg, &mut emit)
    };
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let outcome = outcome?;
    let ckpt = args.checkpoint_out.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".ckpt");
        PathBuf::from(p)
    });
    save_checkpoint(&outcome.params, cfg.seed, &ckpt)?;
    if let Some(t_max) = outcome.final_t_max {
        println!("final_t_max={t_max} updates={}", outcome.updates_done);
    }
    if let (Some(v), Some(t), Some(u)) = (outcome.valid_bpc, outcome.test_bpc, outcome.unigram_bpc)
    {
        println!("valid_bpc={v:.4} test_bpc={t:.4} unigram_baseline_bpc={u:.4}");
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt_bpc(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.6}")
    }
}

/// 17 significant decimal digits, enough to round-trip an f64.
fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn cmd_noise(args: NoiseArgs) -> Result<ExitCode, Error> {
    let algo: AlgoSpec = args.algo.parse()?;
    let (params, _) = load_checkpoint(&args.checkpoint)?;
    let cap = (args.mem_cap_gb * (1u64 << 30) as f64) as usize;

    let steps = args.steps as usize;
    let mut per_step: Vec<Vec<f64>> = vec![Vec::new(); steps];
    for rep in 0..args.repetitions {
        let records = noise_protocol(
            &params,
            algo,
            args.steps,
            args.seed.wrapping_add(rep),
            args.filter_threshold,
            cap,
        )?;
        let mut w = BufWriter::new(File::create(rep_path(&args.out, rep))?);
        writeln!(w, "step,cosine,true_norm,approx_norm,filtered")?;
        for r in &records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.step,
                r.cosine.map(fmt17).unwrap_or_default(),
                fmt17(r.true_norm),
                fmt17(r.approx_norm),
                r.filtered
            )?;
            if let (Some(c), false) = (r.cosine, r.filtered) {
                per_step[r.step as usize].push(c);
            }
        }
    }

    let mut agg = BufWriter::new(File::create(agg_path(&args.out))?);
    writeln!(agg, "step,mean_cosine,std_cosine,reps_used")?;
    let mut grand_sum = 0.0;
    let mut grand_count = 0usize;
    for (step, vals) in per_step.iter().enumerate() {
        if vals.is_empty() {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        writeln!(agg, "{step},{},{},{}", fmt17(mean), fmt17(var.sqrt()), vals.len())?;
        grand_sum += vals.iter().sum::<f64>();
        grand_count += vals.len();
    }
    if grand_count > 0 {
        println!(
            "mean_cosine={:.6} over {grand_count} unfiltered records",
            grand_sum / grand_count as f64
        );
    } else {
        println!("mean_cosine=nan over 0 unfiltered records");
    }
    Ok(ExitCode::SUCCESS)
}

fn rep_path(prefix: &std::path::Path, rep: u64) -> PathBuf {
    let mut p = prefix.to_path_buf().into_os_string();
    p.push(format!(".rep{rep}.csv"));
    PathBuf::from(p)
}

fn agg_path(prefix: &std::path::Path) -> PathBuf {
    let mut p = prefix.to_path_buf().into_os_string();
    p.push(".agg.csv");
    PathBuf::from(p)
}

/// Shared oracle reporting: the four quantities, then the verdict line.
fn report_oracle(name: &str, target: &Mat, m: &Moments, bound: f64) -> ExitCode {
    println!("oracle={name}");
    println!("target_norm={}", fmt17(target.frob_norm()));
    println!("mean_rel_err={}", fmt17(m.rel_mean_err));
    println!("variance={}", fmt17(m.variance));
    println!("bound={}", fmt17(bound));
    println!("outcomes={}", m.outcomes);
    let tol = 1e-9;
    if m.rel_mean_err <= tol && (m.variance - bound).abs() <= tol * bound.max(1.0) {
        println!("PASS");
        ExitCode::SUCCESS
    } else if m.rel_mean_err > tol {
        println!("FAIL mean");
        ExitCode::from(1)
    } else {
        println!("FAIL variance");
        ExitCode::from(1)
    }
}

fn cmd_oracle(args: OracleArgs) -> Result<ExitCode, Error> {
    match args.which {
        OracleCmd::OptDiag { d, rank } => {
            let diag: Vec<f64> = d
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad diagonal list {d:?}")))?;
            let split = split_index(&diag, rank)?;
            let n = diag.len();
            let target = Mat::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 });
            let m = estimator_moments(
                &target,
                |s| Ok(sample_opt_diag(&diag, rank, s)?.product()),
                SampleBudget::Exhaustive { max_draws: 16 },
            )?;
            Ok(report_oracle("opt-diag", &target, &m, split.variance_bound))
        }
        OracleCmd::Opt { rows, cols, rank, seed } => {
            let mut rng = CounterRng::new(seed);
            let c = Mat::from_fn(rows, cols, |_, _| rng.normal());
            let dec = okgrad::smalllin::svd(&c)?;
            let bound = if dec.d.len() > rank {
                split_index(&dec.d, rank)?.variance_bound
            } else {
                0.0
            };
            let m = estimator_moments(
                &c,
                |s| Ok(okgrad::lowrank::opt(&c, rank, s)?.product()),
                SampleBudget::Exhaustive { max_draws: 16 },
            )?;
            Ok(report_oracle("opt", &c, &m, bound))
        }
        OracleCmd::OkCase1 => oracle_case(true),
        OracleCmd::OkCase2 => oracle_case(false),
    }
}

/// The two worked two-term instances: shared left factor (case 1, optimal
/// compression is exact while the sign trick has variance ‖A + D‖^2 = 2) or
/// orthogonal unit factors (case 2, both coincide).
fn oracle_case(shared_left: bool) -> Result<ExitCode, Error> {
    let fmt = KronFormat::new(1, 2, 2, 2).unwrap();
    let u = Mat::row_vec(vec![1.0, 0.0]);
    let h = if shared_left { u.clone() } else { Mat::row_vec(vec![0.0, 1.0]) };
    let a = Mat::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let d = Mat::new(2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
    let mut g = KroneckerSum::new(fmt);
    g.push_term(u, a.clone()).unwrap();
    g.push_term(h, d.clone()).unwrap();
    let target = g.dense()?;

    let m_ok = estimator_moments(
        &target,
        |s| ok_compress(&g, 1, s)?.dense(),
        SampleBudget::Exhaustive { max_draws: 16 },
    )?;
    let m_st = estimator_moments(
        &target,
        |s| kf_avg_compress(&g, 1, s)?.dense(),
        SampleBudget::Exhaustive { max_draws: 16 },
    )?;
    println!("oracle=ok-case{}", if shared_left { 1 } else { 2 });
    println!("ok_variance={}", fmt17(m_ok.variance));
    println!("sign_trick_variance={}", fmt17(m_st.variance));
    let unbiased = m_ok.rel_mean_err <= 1e-9 && m_st.rel_mean_err <= 1e-9;
    let variance_ok = if shared_left {
        let a_plus_d = a.add(&d);
        m_ok.variance.abs() <= 1e-9
            && (m_st.variance - a_plus_d.frob_dot(&a_plus_d)).abs() <= 1e-9
    } else {
        (m_ok.variance - m_st.variance).abs() <= 1e-9
    };
    if unbiased && variance_ok {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else if !unbiased {
        println!("FAIL mean");
        Ok(ExitCode::from(1))
    } else {
        println!("FAIL variance");
        Ok(ExitCode::from(1))
    }
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, Error> {
    let algo: AlgoSpec = args.algo.parse()?;
    if args.steps == 0 {
        return Err(Error::Config("steps must be positive".into()));
    }
    let params = RhnParams::glorot(args.units, args.vocab, args.vocab, args.seed);
    let mut state = algo.build(&params, CounterRng::new(args.seed).derive(&[0xbe7c]));
    let mut data = CounterRng::new(args.seed).derive(&[0xda7a]);
    let mut h = vec![0.0; args.units];

    // Warm up, then time advances one by one and take the median.
    let mut times = Vec::with_capacity(args.steps);
    for i in 0..args.steps + 10 {
        let input = data.below(args.vocab as u64) as usize;
        let step = forward(&params, &h, input)?;
        let t0 = Instant::now();
        state.advance(&params, &step);
        let dt = t0.elapsed();
        if i >= 10 {
            times.push(dt.as_nanos() as u64);
        }
        h = step.h_next;
    }
    times.sort_unstable();
    let median = times[times.len() / 2];
    let reals = state.state_reals();
    println!(
        "algo={algo} units={} vocab={} state_reals={reals} state_bytes={} ns_per_step={median}",
        args.units,
        args.vocab,
        reals * std::mem::size_of::<f64>()
    );
    Ok(ExitCode::SUCCESS)
}
