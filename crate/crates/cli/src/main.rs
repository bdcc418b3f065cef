use std::io::Read;
use std::process::ExitCode;

use bethe_perm::analysis::{self, BoundsOptions};
use bethe_perm::covers::{self, LiftCount};
use bethe_perm::energy::FracCoefficients;
use bethe_perm::exact::{perm_bruteforce, perm_ryser_threads};
use bethe_perm::fw::{self, FwOptions, LineSearch};
use bethe_perm::io::{parse_matrix, Format};
use bethe_perm::spa::{self, Init, SpaOptions};
use bethe_perm::{DoublyStochastic, Error, LogVal, Matrix};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

/// Linear values are emitted alongside logs only below this magnitude.
const LINEAR_LOG_LIMIT: f64 = 700.0;

#[derive(Parser)]
#[command(name = "bethe-perm", version, about = "Exact and Bethe permanents of non-negative matrices")]
struct Cli {
    /// Worker threads for exact permanents.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Input format; guessed from the file name (or content for stdin) when omitted.
    #[arg(long, global = true)]
    format: Option<InputFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum PermMethod {
    Ryser,
    Brute,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Uniform,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoverMode {
    Enumerate,
    Sample,
}

#[derive(Subcommand)]
enum Command {
    /// Exact permanent.
    Perm {
        input: String,
        #[arg(long, value_enum, default_value = "ryser")]
        method: PermMethod,
    },
    /// Bethe permanent by message passing.
    Bethe {
        input: String,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long, value_enum, default_value = "uniform")]
        init: InitKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Include the pseudo-dual value after every iteration.
        #[arg(long)]
        trace: bool,
    },
    /// Degree-M Bethe permanent over graph covers.
    Cover {
        input: String,
        #[arg(long = "M")]
        m: usize,
        #[arg(long, value_enum, default_value = "enumerate")]
        mode: CoverMode,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fractional Bethe permanent by Frank-Wolfe.
    Frac {
        input: String,
        /// `one`, `special`, or `file:PATH` with a JSON coefficient set.
        #[arg(long, default_value = "one")]
        kappa: String,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 20_000)]
        max_iters: usize,
    },
    /// Permanent, Bethe permanent and the bounds relating them.
    Bounds { input: String },
    /// Best vertex, its spectral classification and Sinkhorn scaling.
    Analyze { input: String },
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_size_error() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn input_error(message: String) -> Failure {
    Failure { code: 2, message }
}

fn read_matrix(input: &str, format: Option<InputFormat>) -> Result<Matrix, Failure> {
    let text = if input == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| input_error(format!("cannot read stdin: {e}")))?;
        s
    } else {
        std::fs::read_to_string(input).map_err(|e| input_error(format!("cannot read {input}: {e}")))?
    };
    let format = match format {
        Some(InputFormat::Json) => Format::Json,
        Some(InputFormat::Csv) => Format::Csv,
        None if input == "-" => {
            let t = text.trim_start();
            if t.starts_with('[') || t.starts_with('{') {
                Format::Json
            } else {
                Format::Csv
            }
        }
        None => Format::from_path(input),
    };
    Ok(parse_matrix(&text, format)?)
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x + 0.0) // no negative zero
    } else if x == f64::NEG_INFINITY {
        json!("-inf")
    } else if x == f64::INFINITY {
        json!("inf")
    } else {
        Value::Null
    }
}

/// Inserts `log_<key>` and, when representable, `<key>`.
fn put_log(obj: &mut Map<String, Value>, key: &str, v: LogVal) {
    let l = v.ln();
    obj.insert(format!("log_{key}"), num(l));
    if v.is_zero || l.abs() < LINEAR_LOG_LIMIT {
        obj.insert(key.to_string(), json!(v.value()));
    }
}

fn rows(g: &DoublyStochastic<f64>) -> Value {
    json!(g.rows())
}

fn cmd_perm(m: &Matrix, method: PermMethod, threads: usize) -> Result<Value, Failure> {
    let (v, name) = match method {
        PermMethod::Ryser => (perm_ryser_threads(m, threads)?, "ryser"),
        PermMethod::Brute => (perm_bruteforce(m)?, "brute_force"),
    };
    let mut out = Map::new();
    out.insert("n".into(), json!(m.n()));
    out.insert("method".into(), json!(name));
    put_log(&mut out, "perm", v);
    Ok(Value::Object(out))
}

fn cmd_bethe(m: &Matrix, opts: SpaOptions<f64>, trace: bool) -> Result<Value, Failure> {
    let r = spa::run_spa(m, &opts)?;
    let mut out = Map::new();
    out.insert("n".into(), json!(m.n()));
    put_log(&mut out, "perm_bethe", r.log_perm_bethe);
    out.insert("gamma".into(), rows(&r.gamma));
    out.insert("converged".into(), json!(r.converged));
    out.insert("iterations".into(), json!(r.iterations_used));
    out.insert("oscillation_detected".into(), json!(r.oscillation_detected));
    out.insert("used_fallback".into(), json!(r.used_fallback()));
    out.insert("stop_reason".into(), serde_json::to_value(r.stop_reason).expect("enum"));
    out.insert("belief_disagreement".into(), num(r.belief_disagreement));
    if trace {
        out.insert(
            "trace".into(),
            Value::Array(r.pseudo_dual_trace.iter().map(|&f| num(f)).collect()),
        );
    }
    Ok(Value::Object(out))
}

fn cmd_cover(m: &Matrix, degree: usize, mode: CoverMode, samples: usize, seed: u64) -> Result<Value, Failure> {
    let mut out = Map::new();
    out.insert("n".into(), json!(m.n()));
    out.insert("M".into(), json!(degree));
    match covers::count_lifts(m.n(), degree) {
        LiftCount::Exact(c) => out.insert("lift_count".into(), json!(c.to_string())),
        LiftCount::Log(l) => out.insert("log_lift_count".into(), num(l)),
    };
    match mode {
        CoverMode::Enumerate => {
            out.insert("mode".into(), json!("enumerate"));
            put_log(&mut out, "perm_bethe_m", covers::degree_m_bethe_exact(m, degree)?);
        }
        CoverMode::Sample => {
            let s = covers::degree_m_bethe_sampled(m, degree, samples, seed)?;
            out.insert("mode".into(), json!("sample"));
            put_log(&mut out, "perm_bethe_m", s.estimate);
            out.insert("stderr_log".into(), num(s.stderr_log));
            out.insert("samples".into(), json!(s.samples));
            out.insert("seed".into(), json!(seed));
        }
    }
    Ok(Value::Object(out))
}

fn parse_kappa(spec: &str, n: usize) -> Result<(FracCoefficients<f64>, &str), Failure> {
    match spec {
        "one" => Ok((FracCoefficients::ones(n), "one")),
        "special" => Ok((FracCoefficients::special(n), "special")),
        _ => {
            let path = spec
                .strip_prefix("file:")
                .ok_or_else(|| input_error(format!("--kappa must be one, special or file:PATH, got '{spec}'")))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| input_error(format!("cannot read {path}: {e}")))?;
            let k: FracCoefficients<f64> = serde_json::from_str(&text)
                .map_err(|e| input_error(format!("bad coefficient file {path}: {e}")))?;
            k.check_admissible(n)?;
            Ok((k, "file"))
        }
    }
}

fn cmd_frac(m: &Matrix, kappa: &str, tol: f64, max_iters: usize) -> Result<Value, Failure> {
    let (k, label) = parse_kappa(kappa, m.n())?;
    let opts = FwOptions {
        max_iters,
        dual_gap_tol: tol,
        line_search: LineSearch::ExactBisection,
        boundary_eps: None,
    };
    let r = fw::minimize_frac_bethe(m, &k, &opts)?;
    let mut out = Map::new();
    out.insert("n".into(), json!(m.n()));
    out.insert("kappa".into(), json!(label));
    put_log(&mut out, "perm_frac", r.log_perm());
    out.insert("f_star".into(), num(r.f_star));
    out.insert("dual_gap".into(), num(r.dual_gap));
    out.insert("iterations".into(), json!(r.iterations));
    out.insert("converged".into(), json!(r.converged));
    out.insert("gamma".into(), rows(&r.gamma_star));
    Ok(Value::Object(out))
}

fn cmd_bounds(m: &Matrix, threads: usize) -> Result<Value, Failure> {
    let opts = BoundsOptions {
        threads,
        ..BoundsOptions::default()
    };
    let r = analysis::bounds_report(m, &opts)?;
    let mut out = Map::new();
    out.insert("n".into(), json!(r.n));
    if let Some(lp) = r.log_perm {
        put_log(&mut out, "perm", LogVal::from_log(lp));
    }
    put_log(&mut out, "perm_bethe", LogVal::from_log(r.log_perm_bethe));
    put_log(&mut out, "perm_frac_special", LogVal::from_log(r.log_perm_frac_special));
    if let Some(lr) = r.log_ratio {
        put_log(&mut out, "ratio", LogVal::from_log(lr));
    }
    out.insert("gurvits_ok".into(), json!(r.gurvits_ok));
    out.insert("conjecture_ok".into(), json!(r.conjecture_ok));
    out.insert("spa_converged".into(), json!(r.spa_converged));
    out.insert("spa_fallback".into(), json!(r.spa_fallback));
    out.insert(
        "regular".into(),
        match &r.regular {
            None => Value::Null,
            Some(c) => {
                let mut reg = Map::new();
                reg.insert("d".into(), json!(c.d));
                put_log(&mut reg, "bound", LogVal::from_log(c.log_bound));
                reg.insert("chain_ok".into(), json!(c.chain_ok));
                Value::Object(reg)
            }
        },
    );
    Ok(Value::Object(out))
}

fn cmd_analyze(m: &Matrix) -> Result<Value, Failure> {
    let sigma = analysis::best_permutation(m)?;
    let class = analysis::classify_vertex(m, &sigma)?;
    let sink = if m.is_positive() {
        let s = analysis::sinkhorn(m, analysis::sinkhorn::DEFAULT_TOL, analysis::sinkhorn::DEFAULT_MAX_ITERS)?;
        json!({
            "converged": s.converged,
            "iterations": s.iterations,
            "deviation": num(s.deviation),
            "log_scale": num(s.log_scale()),
            "d1": s.d1,
            "d2": s.d2,
            "theta_prime": rows(&s.theta_prime),
        })
    } else {
        Value::Null
    };
    Ok(json!({
        "n": m.n(),
        "sigma_star": sigma,
        "rho": num(class.rho),
        "verdict": class.verdict,
        "power_iteration_converged": class.converged,
        "sinkhorn": sink,
    }))
}

fn run(cli: Cli) -> Result<Value, Failure> {
    let threads = cli.threads.max(1);
    match cli.command {
        Command::Perm { input, method } => cmd_perm(&read_matrix(&input, cli.format)?, method, threads),
        Command::Bethe {
            input,
            tol,
            max_iters,
            init,
            seed,
            trace,
        } => {
            let opts = SpaOptions {
                max_iters,
                tol,
                init: match init {
                    InitKind::Uniform => Init::Uniform,
                    InitKind::Random => Init::Random(seed),
                },
                ..SpaOptions::default()
            };
            cmd_bethe(&read_matrix(&input, cli.format)?, opts, trace)
        }
        Command::Cover {
            input,
            m,
            mode,
            samples,
            seed,
        } => cmd_cover(&read_matrix(&input, cli.format)?, m, mode, samples, seed),
        Command::Frac {
            input,
            kappa,
            tol,
            max_iters,
        } => cmd_frac(&read_matrix(&input, cli.format)?, &kappa, tol, max_iters),
        Command::Bounds { input } => cmd_bounds(&read_matrix(&input, cli.format)?, threads),
        Command::Analyze { input } => cmd_analyze(&read_matrix(&input, cli.format)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
