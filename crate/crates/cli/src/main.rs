mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;
use sic_core::convex_sic::{fit_from_data, ConvexConfig, FeatureMapConfig};
use sic_core::datasets::{self, tpr_fdr, GeneratorSpec, Metrics, SyntheticDataset};
use sic_core::hrt::{fit_gaussian_conditional, hrt_select, HrtConfig, Witness};
use sic_core::knockoffs::{knockoff_select, FilterOptions, KnockoffConfig, BOOST_BATCH_SIZES};
use sic_core::neural_sic::{self, ranking, NeuralConfig};

use report::*;

#[derive(Parser)]
#[command(name = "sic", version, about = "Sobolev Independence Criterion feature selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV plus a ground-truth sidecar.
    Gen(GenArgs),
    /// Split a CSV into train and holdout parts.
    Split(SplitArgs),
    /// Fit convex or neural SIC and write η with the fitted model.
    Fit(FitArgs),
    /// Holdout randomization test on a fitted witness.
    Hrt(HrtArgs),
    /// Gaussian knockoffs with neural SIC importance.
    Knockoff(KnockoffArgs),
    /// Score result files against ground truth.
    Eval(EvalArgs),
    /// Repeat generate, select and score over many seeds.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Sinexp,
    Liang,
    Null,
}

#[derive(Args, Clone, serde::Serialize)]
struct DataArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    n: usize,
    /// Noise standard deviation for sinexp.
    #[arg(long, default_value_t = 0.1)]
    noise_sd: f64,
    /// Noise standard deviation for liang.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Seed of the liang weight vector.
    #[arg(long, default_value_t = 100)]
    weights_seed: u64,
    /// Dimension for null data.
    #[arg(long, default_value_t = 20)]
    d: usize,
}

impl DataArgs {
    fn generate(&self, seed: u64) -> Result<SyntheticDataset> {
        Ok(match self.kind {
            Kind::Sinexp => datasets::gen_sinexp(self.n, seed, self.noise_sd)?,
            Kind::Liang => datasets::gen_liang(self.n, seed, self.sigma, self.weights_seed)?,
            Kind::Null => datasets::gen_null(self.n, self.d, seed),
        })
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Fraction of rows in the train part.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_holdout: PathBuf,
}

#[derive(Args, Clone)]
struct NeuralArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-3)]
    rho: f64,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 4000)]
    iterations: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    lr_eta: f64,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
}

impl NeuralArgs {
    fn config(&self, seed: u64) -> NeuralConfig {
        let mut cfg = NeuralConfig {
            lambda: self.lambda,
            rho: self.rho,
            eps: self.eps,
            lr_eta: self.lr_eta,
            batch_size: self.batch_size,
            max_iter: self.iterations,
            seed,
            ..NeuralConfig::default()
        };
        cfg.adam.lr = self.lr;
        cfg.architecture.dropout = self.dropout;
        cfg
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    neural: NeuralArgs,
    /// Ridge term of the convex problem.
    #[arg(long, default_value_t = 1e-4)]
    tau: f64,
    /// Number of random Fourier features.
    #[arg(long, default_value_t = 256)]
    features: usize,
    /// Kernel bandwidth; median heuristic when omitted.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HrtArgs {
    /// Holdout CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output of `sic fit` on the train part.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long, default_value_t = 20)]
    shortlist: usize,
    #[arg(long, default_value_t = 99)]
    rounds: usize,
    #[arg(long, default_value_t = 0.1)]
    target_fdr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct KnockoffFlags {
    #[arg(long, default_value_t = 0.2)]
    target_fdr: f64,
    /// Use the knockoff+ threshold (offset 1).
    #[arg(long)]
    knockoff_plus: bool,
    /// Count ties at the threshold as selected.
    #[arg(long)]
    inclusive: bool,
    /// Boost over batch sizes 10, 30 and 50.
    #[arg(long)]
    boost: bool,
}

impl KnockoffFlags {
    fn config(&self, sic: NeuralConfig, seed: u64) -> KnockoffConfig {
        KnockoffConfig {
            sic,
            target_fdr: self.target_fdr,
            options: FilterOptions {
                knockoff_plus: self.knockoff_plus,
                inclusive: self.inclusive,
            },
            boost_batch_sizes: self.boost.then(|| BOOST_BATCH_SIZES.to_vec()),
            seed,
        }
    }
}

#[derive(Args)]
struct KnockoffArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    neural: NeuralArgs,
    #[command(flatten)]
    filter: KnockoffFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, num_args = 1.., required = true)]
    results: Vec<PathBuf>,
    /// Truth sidecar written by `sic gen`.
    #[arg(long)]
    truth: PathBuf,
    /// Ranking cutoff for files without a selection; defaults to the number of true features.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
enum Method {
    Topk,
    Hrt,
    Knockoff,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "topk")]
    method: Method,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Repetition i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    neural: NeuralArgs,
    /// Ranking cutoff for topk; defaults to the number of true features.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, default_value_t = 20)]
    shortlist: usize,
    #[arg(long, default_value_t = 99)]
    rounds: usize,
    /// Target FDR for hrt (knockoff uses --target-fdr).
    #[arg(long, default_value_t = 0.1)]
    hrt_fdr: f64,
    #[command(flatten)]
    filter: KnockoffFlags,
    #[arg(long)]
    out: PathBuf,
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn truth_path(csv: &Path) -> PathBuf {
    csv.with_extension("truth.json")
}

fn names(idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&j| feature_name(j)).collect()
}

fn selection_summary(selected: &[usize], q: f64) -> String {
    format!(
        "selected {} feature(s) at target FDR {q}: [{}]",
        selected.len(),
        names(selected).join(", ")
    )
}

fn gen(a: &GenArgs) -> Result<()> {
    let ds = a.data.generate(a.seed)?;
    datasets::write_csv(&a.out, &ds.x, &ds.y)?;
    let truth = TruthFile {
        n: ds.x.nrows(),
        d_x: ds.x.ncols(),
        truth: one_based(&ds.truth),
        truth_names: names(&ds.truth),
        spec: ds.spec,
    };
    let sidecar = truth_path(&a.out);
    write_json(&sidecar, &truth)?;
    println!("wrote {} ({} x {}) and {}", a.out.display(), truth.n, truth.d_x, sidecar.display());
    Ok(())
}

fn split(a: &SplitArgs) -> Result<()> {
    let (x, y) = datasets::read_csv(&a.data)?;
    let ((xa, ya), (xb, yb)) = datasets::split_rows(&x, &y, a.fraction, a.seed)?;
    datasets::write_csv(&a.out_train, &xa, &ya)?;
    datasets::write_csv(&a.out_holdout, &xb, &yb)?;
    println!("train {} rows, holdout {} rows", xa.nrows(), xb.nrows());
    Ok(())
}

fn fit(a: &FitArgs) -> Result<FitReport> {
    let (x, y) = datasets::read_csv(&a.data)?;
    let (config, model, eta) = match a.mode {
        Mode::Convex => {
            let cfg = ConvexConfig {
                lambda: a.neural.lambda,
                rho: a.neural.rho,
                tau: a.tau,
                eps: a.neural.eps,
                ..ConvexConfig::default()
            };
            let map_cfg = FeatureMapConfig {
                num_features: a.features,
                bandwidth: a.bandwidth,
                seed: a.seed,
            };
            let f = fit_from_data(&x, &y, &cfg, &map_cfg)?;
            if !f.solution.converged {
                eprintln!("warning: convex solver stopped after {} iterations", f.solution.iterations);
            }
            let eta = f.solution.eta.clone();
            let config = FitConfig {
                mode: Mode::Convex,
                convex: Some(cfg),
                feature_map: Some(map_cfg),
                neural: None,
            };
            let model = FitModel::Convex {
                witness: f.witness,
                solution: f.solution,
            };
            (config, model, eta)
        }
        Mode::Neural => {
            let cfg = a.neural.config(a.seed);
            let solution = neural_sic::fit(&x, &y, &cfg)?;
            let eta = solution.eta.clone();
            let config = FitConfig {
                mode: Mode::Neural,
                convex: None,
                feature_map: None,
                neural: Some(cfg),
            };
            (config, FitModel::Neural { solution }, eta)
        }
    };
    let report = FitReport {
        command: "fit".into(),
        data: display(&a.data),
        config,
        ranking: ranked(&eta),
        eta,
        model,
    };
    write_json(&a.out, &report)?;
    let top: Vec<&str> = report.ranking.iter().take(5).map(|r| r.name.as_str()).collect();
    println!("top features: {}", top.join(", "));
    Ok(report)
}

fn hrt(a: &HrtArgs) -> Result<SelectionReport> {
    let (x, y) = datasets::read_csv(&a.data)?;
    let fitted: FitReport = read_json(&a.fit)?;
    let witness: &dyn Witness = match &fitted.model {
        FitModel::Convex { witness, .. } => witness,
        FitModel::Neural { solution } => &solution.net,
    };
    if witness.input_split() != (x.ncols(), y.ncols()) {
        bail!(
            "fit expects {:?} (x, y) columns but {} has {:?}",
            witness.input_split(),
            a.data.display(),
            (x.ncols(), y.ncols())
        );
    }
    let cfg = HrtConfig {
        shortlist: a.shortlist,
        rounds: a.rounds,
        target_fdr: a.target_fdr,
        seed: a.seed,
    };
    let generator = fit_gaussian_conditional(&x)?;
    let r = hrt_select(witness, &fitted.eta, &x, &y, &generator, &cfg)?;
    let report = SelectionReport {
        command: "hrt".into(),
        data: display(&a.data),
        config: SelectionConfig::Hrt {
            fit: display(&a.fit),
            hrt: cfg,
        },
        target_fdr: a.target_fdr,
        selected: one_based(&r.selected),
        selected_names: names(&r.selected),
        summary: selection_summary(&r.selected, a.target_fdr),
        hrt: Some(HrtReport::from(&r)),
        knockoff: None,
    };
    write_json(&a.out, &report)?;
    println!("{}", report.summary);
    Ok(report)
}

fn knockoff(a: &KnockoffArgs) -> Result<SelectionReport> {
    let (x, y) = datasets::read_csv(&a.data)?;
    let cfg = a.filter.config(a.neural.config(a.seed), a.seed);
    let r = knockoff_select(&x, &y, &cfg)?;
    let report = SelectionReport {
        command: "knockoff".into(),
        data: display(&a.data),
        target_fdr: cfg.target_fdr,
        selected: one_based(&r.selected),
        selected_names: names(&r.selected),
        summary: selection_summary(&r.selected, cfg.target_fdr),
        config: SelectionConfig::Knockoff { knockoff: cfg },
        hrt: None,
        knockoff: Some(KnockoffReport::from(&r)),
    };
    write_json(&a.out, &report)?;
    println!("{}", report.summary);
    Ok(report)
}

fn eval(a: &EvalArgs) -> Result<ResultReport> {
    let truth: TruthFile = read_json(&a.truth)?;
    let truth0 = truth.zero_based();
    let k = a.top_k.unwrap_or(truth0.len());
    let mut records = Vec::with_capacity(a.results.len());
    for (rep, path) in a.results.iter().enumerate() {
        let res: AnyResult = read_json(path)?;
        let selected: Vec<usize> = match (res.selected, res.ranking) {
            (Some(s), _) => s,
            (None, Some(r)) => r.iter().take(k).map(|f| f.feature).collect(),
            (None, None) => bail!("{} has neither `selected` nor `ranking`", path.display()),
        };
        if let Some(&bad) = selected.iter().find(|&&j| j == 0 || j > truth.d_x) {
            bail!("{}: feature {bad} outside 1..={}", path.display(), truth.d_x);
        }
        let zero: Vec<usize> = selected.iter().map(|j| j - 1).collect();
        records.push(RepRecord {
            rep,
            seed: None,
            source: Some(display(path)),
            eta: None,
            metrics: score(&zero, &truth0)?,
            selected,
            pvalues: None,
            w: None,
        });
    }
    let report = ResultReport {
        command: "eval".into(),
        config: json!({ "truth": display(&a.truth), "top_k": k }),
        summary: Summary::of(&records),
        records,
    };
    write_json(&a.out, &report)?;
    print_summary(&report.summary);
    Ok(report)
}

/// TPR is reported as 0 when there is nothing to find.
fn score(selected: &[usize], truth: &[usize]) -> Result<Metrics> {
    if truth.is_empty() {
        return Ok(Metrics {
            tpr: 0.0,
            fdr: datasets::false_discovery_proportion(selected, truth),
        });
    }
    Ok(tpr_fdr(selected, truth)?)
}

fn top_k(eta: &[f64], k: usize) -> Vec<usize> {
    let mut s: Vec<usize> = ranking(eta).into_iter().take(k).collect();
    s.sort_unstable();
    s
}

fn bench_rep(a: &BenchArgs, rep: usize) -> Result<RepRecord> {
    let seed = a.seed + rep as u64;
    let ds = a.data.generate(seed)?;
    let sic = a.neural.config(seed);
    let (selected, eta, pvalues, w) = match a.method {
        Method::Topk => {
            let k = a.top_k.unwrap_or(ds.truth.len());
            let sol = neural_sic::fit(&ds.x, &ds.y, &sic)?;
            (top_k(&sol.eta, k), Some(sol.eta), None, None)
        }
        Method::Hrt => {
            let (train, hold) = datasets::split(&ds, 0.5, seed)?;
            let sol = neural_sic::fit(&train.x, &train.y, &sic)?;
            let generator = fit_gaussian_conditional(&hold.x)?;
            let cfg = HrtConfig {
                shortlist: a.shortlist,
                rounds: a.rounds,
                target_fdr: a.hrt_fdr,
                seed,
            };
            let r = hrt_select(&sol.net, &sol.eta, &hold.x, &hold.y, &generator, &cfg)?;
            (r.selected, Some(sol.eta), Some(r.pvalues), None)
        }
        Method::Knockoff => {
            let r = knockoff_select(&ds.x, &ds.y, &a.filter.config(sic, seed))?;
            (r.selected, None, None, Some(r.w))
        }
    };
    let metrics = score(&selected, &ds.truth)?;
    Ok(RepRecord {
        rep,
        seed: Some(seed),
        source: None,
        eta,
        selected: one_based(&selected),
        pvalues,
        w,
        metrics,
    })
}

fn bench(a: &BenchArgs) -> Result<ResultReport> {
    if a.reps == 0 {
        bail!("--reps must be positive");
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;
    let records = pool.install(|| {
        (0..a.reps)
            .into_par_iter()
            .map(|rep| bench_rep(a, rep).with_context(|| format!("repetition {rep}")))
            .collect::<Result<Vec<_>>>()
    })?;
    let sic = a.neural.config(a.seed);
    let method_config = match a.method {
        Method::Topk => json!({ "top_k": a.top_k }),
        Method::Hrt => json!({
            "split_fraction": 0.5,
            "hrt": HrtConfig { shortlist: a.shortlist, rounds: a.rounds, target_fdr: a.hrt_fdr, seed: a.seed },
        }),
        Method::Knockoff => json!({ "knockoff": a.filter.config(sic.clone(), a.seed) }),
    };
    let spec: GeneratorSpec = a.data.generate(a.seed).map(|d| d.spec)?;
    let report = ResultReport {
        command: "bench".into(),
        config: json!({
            "data": a.data,
            "first_spec": spec,
            "method": a.method,
            "reps": a.reps,
            "jobs": a.jobs,
            "seed": a.seed,
            "sic": sic,
            "method_config": method_config,
        }),
        summary: Summary::of(&records),
        records,
    };
    write_json(&a.out, &report)?;
    print_summary(&report.summary);
    Ok(report)
}

fn print_summary(s: &Summary) {
    println!(
        "{} repetition(s): TPR mean {:.3} median {:.3}, FDR mean {:.3} median {:.3}",
        s.repetitions, s.tpr.mean, s.tpr.median, s.fdr.mean, s.fdr.median
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Split(a) => split(&a),
        Command::Fit(a) => fit(&a).map(drop),
        Command::Hrt(a) => hrt(&a).map(drop),
        Command::Knockoff(a) => knockoff(&a).map(drop),
        Command::Eval(a) => eval(&a).map(drop),
        Command::Bench(a) => bench(&a).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
