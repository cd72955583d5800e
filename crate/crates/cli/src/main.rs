use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use lagspaces_core::corpus::CorpusSpec;
use lagspaces_core::kernels::{decay_bound_check, gaussian_bound_check, heat_kernel_closed, patm_series_auto, BoundGrid, KernelQuery, SweepSpec};
use lagspaces_core::molecular::{decompose, molecule_verify, MoleculeOptions};
use lagspaces_core::spaces::{besov_norm_report, t_grid_for, tl_norm_report};
use lagspaces_core::specfun::{bessel_i_scaled, ell_eval, laguerre_polynomial, phi_eval};
use lagspaces_core::spectral::eigenvalue;
use lagspaces_core::verify::run_suite;
use lagspaces_core::{to_json, AlphaIndex, CoeffField, CubeSet, MultiIndex, QuadGrid, SpaceParams, Suite, VerifyConfig};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_SCHEMA: u8 = 3;
const EXIT_OUT_DIR: u8 = 4;
const EXIT_BREACH: u8 = 5;

#[derive(Parser)]
#[command(name = "lagspaces", version, about = "Laguerre expansions: evaluation, norms, molecules and verification suites")]
struct Cli {
    /// JSON verification plan.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (LAGSPACES_THREADS takes precedence).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Corpus seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate a special function or kernel at one point.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Besov or Triebel–Lizorkin norm of a coefficient field.
    Norm {
        #[arg(value_enum)]
        kind: NormKindArg,
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        space: SpaceArgs,
    },
    /// Molecular decomposition of a coefficient field.
    Molecules {
        #[arg(value_enum)]
        action: MoleculeAction,
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        space: SpaceArgs,
        #[arg(long, default_value_t = -4, allow_hyphen_values = true)]
        nu_lo: i32,
        #[arg(long, default_value_t = 4, allow_hyphen_values = true)]
        nu_hi: i32,
        #[arg(long, default_value_t = 8.0)]
        b: f64,
        #[arg(long, default_value_t = 4)]
        refinement: usize,
    },
    /// Run verification suites.
    Verify {
        #[arg(long = "suite", num_args = 1..)]
        suites: Vec<Suite>,
    },
    /// Kernel bound certification sweep (CSV).
    Sweep {
        #[arg(long)]
        d: Option<usize>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// φ_k^α(x).
    Phi(PointArgs),
    /// ℓ_k^α(x).
    Ell(PointArgs),
    /// L_k^a(x).
    Laguerre {
        #[arg(long)]
        k: usize,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long)]
        x: f64,
    },
    /// e^{-z} I_ν(z).
    Bessel {
        #[arg(long, allow_hyphen_values = true)]
        nu: f64,
        #[arg(long)]
        z: f64,
    },
    /// Heat kernel (closed form) or P_{t,m} kernel (series).
    Kernel {
        #[arg(long, value_enum, default_value_t = KernelKind::Heat)]
        kind: KernelKind,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 0)]
        m: u32,
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        alpha: Vec<f64>,
    },
}

#[derive(Args)]
struct PointArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<u32>,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelKind {
    Heat,
    Poisson,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormKindArg {
    Besov,
    Tl,
}

#[derive(Clone, Copy, ValueEnum)]
enum MoleculeAction {
    Decompose,
    Verify,
}

#[derive(Args)]
struct FieldArgs {
    /// Coefficient field JSON `{alpha, d, entries: [[k, c], ...]}`; defaults to a
    /// field of the standard corpus.
    #[arg(long)]
    field: Option<PathBuf>,
    /// Corpus field used when no file is given.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Args)]
struct SpaceArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    sigma: f64,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    #[arg(long)]
    m: Option<u32>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<lagspaces_core::Error> for Failure {
    fn from(e: lagspaces_core::Error) -> Self {
        Failure::new(EXIT_RUNTIME, e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = setup_threads(cli.threads) {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn setup_threads(flag: Option<usize>) -> Outcome {
    let env = match std::env::var("LAGSPACES_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| Failure::new(EXIT_USAGE, format!("LAGSPACES_THREADS={v:?} is not a count")))?),
        Err(_) => None,
    };
    if let Some(n) = env.or(flag) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(EXIT_RUNTIME, e.to_string()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    match &cli.cmd {
        Cmd::Eval(e) => eval(e),
        Cmd::Norm { kind, field, space } => norm(cli, *kind, field, space),
        Cmd::Molecules { action, field, space, nu_lo, nu_hi, b, refinement } => {
            let f = load_field(cli, field)?;
            let params = space_params(&f, space, true)?;
            let set = CubeSet::new(f.dim(), *nu_lo, *nu_hi, *b)?;
            let opts = MoleculeOptions { refinement: *refinement, ..MoleculeOptions::for_field(&f) };
            let dec = decompose(&f, &params, &set, &opts)?;
            let text = match action {
                MoleculeAction::Decompose => to_json(&dec),
                MoleculeAction::Verify => {
                    let lam_top = eigenvalue(opts.proj_degree, f.alpha());
                    let mut rows = Vec::new();
                    for nu in *nu_lo..=*nu_hi {
                        let best = dec.records.iter().filter(|r| r.cube.nu == nu).max_by(|a, b| a.s_q.total_cmp(&b.s_q));
                        if let Some(rec) = best {
                            let h = 2f64.powi(nu).min(1.0 / lam_top.sqrt()) / 8.0;
                            let rep = molecule_verify(rec, *b, h, 4.0 * rec.cube.side())?;
                            rows.push(json!({"cube": rec.cube, "s_q": rec.s_q, "report": rep}));
                        }
                    }
                    to_json(&rows)
                }
            };
            emit(cli, "molecules.json", &text)
        }
        Cmd::Verify { suites } => verify(cli, suites),
        Cmd::Sweep { d } => sweep(cli, *d),
    }
}

fn eval(e: &EvalCmd) -> Outcome {
    let v = match e {
        EvalCmd::Phi(a) | EvalCmd::Ell(a) => {
            let alpha = AlphaIndex::new(a.alpha.clone())?;
            let k = MultiIndex::new(a.k.clone());
            if matches!(e, EvalCmd::Phi(_)) {
                phi_eval(&k, &alpha, &a.x)?
            } else {
                ell_eval(&k, &alpha, &a.x)?
            }
        }
        EvalCmd::Laguerre { k, alpha, x } => laguerre_polynomial(*k, *alpha, *x)?,
        EvalCmd::Bessel { nu, z } => bessel_i_scaled(*nu, *z)?,
        EvalCmd::Kernel { kind, t, m, x, y, alpha } => {
            let q = KernelQuery::new(*t, *m, x.clone(), y.clone(), AlphaIndex::new(alpha.clone())?)?;
            match kind {
                KernelKind::Heat => heat_kernel_closed(&q)?.value,
                KernelKind::Poisson => patm_series_auto(&q, 1e-12)?.value,
            }
        }
    };
    println!("{v:.16e}");
    Ok(())
}

fn load_field(cli: &Cli, args: &FieldArgs) -> std::result::Result<CoeffField, Failure> {
    if let Some(path) = &args.field {
        let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_RUNTIME, format!("{}: {e}", path.display())))?;
        return serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_SCHEMA, format!("{}: {e}", path.display())));
    }
    let spec = CorpusSpec::standard().with_seed(cli.seed.unwrap_or(CorpusSpec::standard().seed));
    let fields = spec.fields()?;
    let n = fields.len();
    fields.into_iter().nth(args.index).ok_or_else(|| Failure::new(EXIT_USAGE, format!("corpus has {n} fields")))
}

fn space_params(f: &CoeffField, s: &SpaceArgs, molecules: bool) -> std::result::Result<SpaceParams, Failure> {
    let base = if molecules {
        SpaceParams::with_defaults(f.dim(), s.sigma, s.p, s.q)?
    } else {
        SpaceParams::norm_only(f.dim(), s.sigma, s.p, s.q)?
    };
    Ok(match s.m {
        Some(m) => base.with_m(m),
        None => base,
    })
}

fn norm(cli: &Cli, kind: NormKindArg, field: &FieldArgs, space: &SpaceArgs) -> Outcome {
    let f = load_field(cli, field)?;
    let params = space_params(&f, space, false)?;
    let tg = t_grid_for(&f, &params, 1e-12, 16)?;
    let xg = QuadGrid::for_spectrum(f.dim(), eigenvalue(f.degree(), f.alpha()));
    let (name, rep) = match kind {
        NormKindArg::Besov => ("besov", besov_norm_report(&f, &params, &tg, &xg, false)?),
        NormKindArg::Tl => ("tl", tl_norm_report(&f, &params, &tg, &xg, false)?),
    };
    emit(cli, "norm.json", &to_json(&json!({"norm": name, "params": params, "report": rep})))
}

fn load_config(cli: &Cli) -> std::result::Result<VerifyConfig, Failure> {
    match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_RUNTIME, format!("{}: {e}", path.display())))?;
            VerifyConfig::from_json(&text).map_err(|e| Failure::new(EXIT_SCHEMA, e.to_string()))
        }
        None => Ok(VerifyConfig::default()),
    }
}

fn out_dir(cli: &Cli, cfg: Option<&VerifyConfig>) -> std::result::Result<Option<PathBuf>, Failure> {
    let dir = cli.out.clone().or_else(|| cfg.and_then(|c| c.out_dir.as_ref().map(PathBuf::from)));
    if let Some(d) = &dir {
        if !d.is_dir() {
            return Err(Failure::new(EXIT_OUT_DIR, format!("output directory {} does not exist", d.display())));
        }
    }
    Ok(dir)
}

fn write(dir: &Path, file: &str, text: &str) -> Outcome {
    let path = dir.join(file);
    fs::write(&path, text).map_err(|e| Failure::new(EXIT_RUNTIME, format!("{}: {e}", path.display())))
}

fn emit(cli: &Cli, file: &str, text: &str) -> Outcome {
    match out_dir(cli, None)? {
        Some(dir) => write(&dir, file, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn verify(cli: &Cli, suites: &[Suite]) -> Outcome {
    let mut cfg = load_config(cli)?;
    if !suites.is_empty() {
        cfg.suites = suites.to_vec();
    }
    if let Some(seed) = cli.seed {
        cfg.corpus_seed = seed;
    }
    if cfg.suites.is_empty() {
        return Err(Failure::new(EXIT_USAGE, "no suites selected (use --suite or the config's suites list)"));
    }
    let dir = out_dir(cli, Some(&cfg))?;
    let mut reports = Vec::new();
    for &suite in &cfg.suites {
        let report = run_suite(suite, &cfg)?;
        for check in report.sections.iter().flat_map(|s| &s.checks) {
            eprintln!("{}", check.line());
        }
        if let Some(dir) = &dir {
            write(dir, &format!("{}.json", suite.name()), &to_json(&report))?;
            for a in report.artifacts() {
                write(dir, &a.file, &a.contents)?;
            }
        }
        reports.push(report);
    }
    if dir.is_none() {
        print!("{}", to_json(&reports));
    }
    if reports.iter().all(|r| r.pass) {
        Ok(())
    } else {
        Err(Failure::new(EXIT_BREACH, "tolerance breach"))
    }
}

fn sweep(cli: &Cli, d: Option<usize>) -> Outcome {
    let cfg = if cli.config.is_some() { load_config(cli)? } else { VerifyConfig::default() };
    let dims = match d {
        Some(d) => vec![d],
        None => cfg.grids.kernel_dims.clone(),
    };
    let grid = BoundGrid::standard();
    let mut csv = String::from("d,kind,alpha,m,sup_coarse,sup_fine,rel_change,stable\n");
    let mut stable = true;
    for d in dims {
        let spec = SweepSpec::pinned(d)?;
        for alpha in &spec.alphas {
            let mut reports = vec![("gaussian", gaussian_bound_check(alpha, &grid)?)];
            for m in 1..=3 {
                reports.push(("decay", decay_bound_check(alpha, m, &grid)?));
            }
            for (kind, r) in reports {
                let a: Vec<String> = r.alpha.iter().map(|v| format!("{v:.16e}")).collect();
                csv.push_str(&format!(
                    "{d},{kind},{},{},{:.16e},{:.16e},{:.16e},{}\n",
                    a.join(";"),
                    r.m,
                    r.sup_coarse,
                    r.sup_fine,
                    r.rel_change,
                    r.stable
                ));
                stable &= r.stable;
            }
        }
    }
    emit(cli, "kernel_bounds.csv", &csv)?;
    if stable {
        Ok(())
    } else {
        Err(Failure::new(EXIT_BREACH, "bound sup not refinement-stable"))
    }
}
