//! `biased-rip` command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 invalid arguments,
//! 3 capacity exceeded.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use biased_rip::kwise::{verify_embedding_rank, GeneratorSpec};
use biased_rip::moments::{moment_report, moment_report_mc, MomentMode};
use biased_rip::ripmatrix::{choose_params, sample_matrix, ParamOverrides};
use biased_rip::smallbias::{audit_bias_exhaustive, BitGenerator, PoweringSpec, UniformGenerator};
use biased_rip::verify::{
    jl_sweep, randomness_budget, recovery_experiment, rip_constant_exact, SignSource,
};
use biased_rip::{BitVector, Error, Mode, RipMatrix, RipParams, SparseVector, SymmetricMatrix, VERSION};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, TryRngCore};
use rand_distr::StandardNormal;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "biased-rip", version, about = "Seeded RIP sign matrices and exact verification tools")]
struct Cli {
    /// Worker thread cap (falls back to BIASED_RIP_THREADS).
    #[arg(long, global = true, env = "BIASED_RIP_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "subcommand")]
enum Command {
    /// Sample a matrix from an explicit construction seed and write the matrix file.
    Sample(SampleArgs),
    /// Exhaustively audit the bias of a small generator.
    AuditBias(AuditArgs),
    /// Exact or Monte Carlo Hanson-Wright moments against both bounds.
    HwMoments(MomentArgs),
    /// Exact RIP constant by enumerating every k-subset of columns.
    RipExact(RipArgs),
    /// JL tail failure rates over a sweep of row counts.
    JlTail(JlArgs),
    /// Noiseless OMP recovery success rate.
    RecoverDemo(RecoverArgs),
    /// Seed length versus the naive N·Q bits.
    Budget(BudgetArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Direct,
    Composed,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Direct => Mode::Direct,
            ModeArg::Composed => Mode::Composed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ParamArgs {
    /// Number of columns.
    #[arg(short = 'N', long = "n-cols")]
    #[serde(rename = "N")]
    n: usize,
    /// Sparsity.
    #[arg(short = 'k', long, default_value_t = 2)]
    k: usize,
    /// Distortion in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    /// Row-count override.
    #[arg(short = 'Q', long = "rows")]
    #[serde(rename = "Q")]
    q: Option<usize>,
    /// Moment-order override (power of two).
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long = "c-q")]
    c_q: Option<f64>,
    #[arg(long = "c-ell")]
    c_ell: Option<f64>,
    #[arg(long = "c-hw")]
    c_hw: Option<f64>,
}

impl ParamArgs {
    fn overrides(&self) -> ParamOverrides {
        ParamOverrides { q: self.q, ell: self.ell, c_q: self.c_q, c_ell: self.c_ell, c_hw: self.c_hw }
    }

    fn resolve(&self) -> Result<RipParams, Error> {
        choose_params(self.n, self.k, self.eta, self.overrides())
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct OutArgs {
    /// Output file; standard output when absent.
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SeedArgs {
    /// Hex seed. Construction commands need exactly the generator's seed
    /// bits (whole bytes, zero padding); experiment commands take 8 bytes.
    #[arg(long = "master-seed")]
    master_seed: Option<String>,
    /// Draw the seed from the platform entropy source and print it.
    #[arg(long, conflicts_with = "master_seed")]
    entropy: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Composed)]
    mode: ModeArg,
    #[command(flatten)]
    #[serde(flatten)]
    seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct AuditArgs {
    /// Output bits of the generator.
    #[arg(long = "n-bits")]
    n_bits: usize,
    /// Field degree of a bare powering space; when absent, a k-wise
    /// generator is built from --mode/--parity-limit/--log2-inv-eps.
    #[arg(long)]
    r: Option<u32>,
    #[arg(long, value_enum, default_value_t = ModeArg::Composed)]
    mode: ModeArg,
    #[arg(long = "parity-limit", default_value_t = 2)]
    parity_limit: u64,
    #[arg(long = "log2-inv-eps", default_value_t = 2)]
    log2_inv_eps: u64,
    /// Largest parity size audited.
    #[arg(long = "max-parity")]
    max_parity: usize,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum MomentSource {
    Uniform,
    Powering,
}

#[derive(Debug, Clone, Args, Serialize)]
struct MomentArgs {
    /// Dimension of B (ignored with --matrix).
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    ell: u32,
    #[arg(long, value_enum, default_value_t = MomentSource::Uniform)]
    generator: MomentSource,
    /// Field degree for the powering generator.
    #[arg(long, default_value_t = 6)]
    r: u32,
    /// JSON file holding B as an array of rows; asymmetric input is symmetrized.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Monte Carlo trials; exact enumeration when absent.
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long = "c-hw", default_value_t = 8.0)]
    c_hw: f64,
    #[command(flatten)]
    #[serde(flatten)]
    seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct RipArgs {
    /// Matrix file to analyse.
    #[arg(long)]
    matrix: PathBuf,
    /// Sparsity level.
    #[arg(short = 'k', long)]
    k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum VectorKind {
    /// Equal weights on the first k coordinates.
    Flat,
    /// Gaussian entries on a random k-support.
    Random,
}

#[derive(Debug, Clone, Args, Serialize)]
struct JlArgs {
    #[command(flatten)]
    #[serde(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Composed)]
    mode: ModeArg,
    /// Use fully independent signs instead of the construction.
    #[arg(long)]
    baseline: bool,
    /// Row counts to sweep; defaults to the single resolved Q.
    #[arg(long, value_delimiter = ',')]
    qs: Vec<usize>,
    #[arg(long, default_value_t = 2000)]
    trials: u64,
    #[arg(long, value_enum, default_value_t = VectorKind::Flat)]
    x: VectorKind,
    #[command(flatten)]
    #[serde(flatten)]
    seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct RecoverArgs {
    #[command(flatten)]
    #[serde(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Composed)]
    mode: ModeArg,
    #[arg(long)]
    baseline: bool,
    /// Upper limit on the resolved Q.
    #[arg(long = "q-cap")]
    q_cap: Option<usize>,
    #[arg(long, default_value_t = 50)]
    trials: u64,
    #[command(flatten)]
    #[serde(flatten)]
    seed: SeedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct BudgetArgs {
    #[command(flatten)]
    #[serde(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Composed)]
    mode: ModeArg,
    #[command(flatten)]
    #[serde(flatten)]
    out: OutArgs,
}

/// A failed command: exit code plus message.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::Format(_) => EXIT_INVALID,
            Error::Capacity(_) => EXIT_CAPACITY,
            Error::DegenerateSupport(_) => EXIT_VERIFICATION,
        };
        Failure { code, message: e.to_string() }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_INVALID, message: msg.into() }
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    config: &'a C,
    report: &'a R,
}

fn emit(out: &OutArgs, text: &str) -> Result<(), Failure> {
    match &out.output {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure { code: EXIT_VERIFICATION, message: format!("writing {}: {e}", path.display()) }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure { code: EXIT_VERIFICATION, message: e.to_string() })
        }
    }
}

/// CSV projection: one `field,value` row per scalar field of the report.
fn csv_projection(report: &serde_json::Value) -> String {
    let mut s = String::from("field,value\n");
    if let serde_json::Value::Object(map) = report {
        for (k, v) in map {
            match v {
                serde_json::Value::Object(_) | serde_json::Value::Array(_) => {}
                serde_json::Value::String(t) => s.push_str(&format!("{k},{t}\n")),
                other => s.push_str(&format!("{k},{other}\n")),
            }
        }
    }
    s
}

fn emit_report<R: Serialize>(command: &Command, out: &OutArgs, report: &R) -> Result<(), Failure> {
    let text = match out.format {
        Format::Json => {
            let env = Envelope { tool: "biased-rip", version: VERSION, config: command, report };
            let mut t = serde_json::to_string_pretty(&env).expect("reports serialize");
            t.push('\n');
            t
        }
        Format::Csv => csv_projection(&serde_json::to_value(report).expect("reports serialize")),
    };
    emit(out, &text)
}

fn os_entropy(bytes: usize) -> Result<Vec<u8>, Failure> {
    let mut buf = vec![0u8; bytes];
    rand::rngs::OsRng
        .try_fill_bytes(&mut buf)
        .map_err(|e| Failure { code: EXIT_VERIFICATION, message: format!("entropy source: {e}") })?;
    Ok(buf)
}

/// Construction seed of exactly `bits` bits.
fn construction_seed(seed: &SeedArgs, bits: usize) -> Result<BitVector, Failure> {
    if seed.entropy {
        let mut bytes = os_entropy(bits.div_ceil(8))?;
        if !bits.is_multiple_of(8) {
            let last = bytes.len() - 1;
            bytes[last] &= (1u8 << (bits % 8)) - 1;
        }
        let v = BitVector::from_bytes(bytes, bits)?;
        eprintln!("master seed: {}", v.to_hex());
        return Ok(v);
    }
    let hex = seed.master_seed.as_deref().ok_or_else(|| {
        invalid(format!("--master-seed is required ({bits} bits = {} hex bytes) or pass --entropy", bits.div_ceil(8)))
    })?;
    BitVector::from_hex(hex, bits).map_err(|e| {
        invalid(format!("construction needs exactly {bits} seed bits ({} bytes): {e}", bits.div_ceil(8)))
    })
}

/// 64-bit experiment seed from 8 hex bytes.
fn experiment_seed(seed: &SeedArgs) -> Result<u64, Failure> {
    if seed.entropy {
        let bytes = os_entropy(8)?;
        let v = u64::from_be_bytes(bytes.try_into().expect("8 bytes"));
        eprintln!("master seed: {v:016x}");
        return Ok(v);
    }
    let hex = seed
        .master_seed
        .as_deref()
        .ok_or_else(|| invalid("--master-seed (8 hex bytes) is required, or pass --entropy"))?;
    let bytes = BitVector::from_hex(hex, 64).map_err(|e| invalid(format!("experiment seed must be 8 bytes: {e}")))?;
    Ok(u64::from_be_bytes(bytes.as_bytes().try_into().expect("8 bytes")))
}

fn cmd_sample(command: &Command, a: &SampleArgs) -> Result<i32, Failure> {
    let _ = command;
    let params = a.params.resolve()?;
    let bits = params.seed_bits(a.mode.into())? as usize;
    let seed = construction_seed(&a.seed, bits)?;
    let phi = sample_matrix(&params, a.mode.into(), &seed)?;
    emit(&a.out, &phi.to_json())?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct AuditOutput {
    #[serde(flatten)]
    audit: biased_rip::smallbias::BiasAuditReport,
    generator: Option<GeneratorSpec>,
    embedding_rank_passed: Option<bool>,
    within_bound: bool,
}

fn cmd_audit(command: &Command, a: &AuditArgs) -> Result<i32, Failure> {
    let (audit, generator, rank) = match a.r {
        Some(r) => (audit_bias_exhaustive(&PoweringSpec::new(a.n_bits, r)?, a.max_parity)?, None, None),
        None => {
            let spec = GeneratorSpec::new(a.mode.into(), a.n_bits as u64, a.parity_limit, a.log2_inv_eps)?;
            let gen = spec.build()?;
            let rank = gen
                .embedding()
                .map(|e| verify_embedding_rank(e, a.parity_limit as usize).map(|c| c.passed))
                .transpose()?;
            (audit_bias_exhaustive(&gen, a.max_parity)?, Some(spec), rank)
        }
    };
    // The k-wise guarantee only covers parities up to the parity limit.
    let guaranteed = a.r.is_some() || a.mode == ModeArg::Direct || a.max_parity as u64 <= a.parity_limit;
    let within = audit.within_bound();
    let out = AuditOutput { audit, generator, embedding_rank_passed: rank, within_bound: within };
    emit_report(command, &a.out, &out)?;
    let failed = (guaranteed && !within) || rank == Some(false);
    Ok(if failed { EXIT_VERIFICATION } else { EXIT_OK })
}

fn cmd_moments(command: &Command, a: &MomentArgs) -> Result<i32, Failure> {
    let b = match &a.matrix {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let rows: Vec<Vec<f64>> =
                serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            SymmetricMatrix::symmetrize(rows)?
        }
        None => {
            let master = experiment_seed(&a.seed)?;
            let mut rng = biased_rip::rng::stream(master, biased_rip::rng::Domain::TestVector, 0);
            SymmetricMatrix::from_upper(a.n, |_, _| rng.sample(StandardNormal))
        }
    };
    let n = b.n();
    let powering;
    let uniform = UniformGenerator { n_bits: n };
    let (generator, log2_inv_eps): (&dyn BitGenerator, Option<f64>) = match a.generator {
        MomentSource::Uniform => (&uniform, None),
        MomentSource::Powering => {
            powering = PoweringSpec::new(n, a.r)?;
            let limit = (2 * a.ell as usize).min(n);
            // measured exact bias when the audit is feasible, else the guarantee
            let eps = match audit_bias_exhaustive(&powering, limit) {
                Ok(rep) => rep.max_bias().log2_inv(),
                Err(Error::Capacity(_)) => powering.bias_bound().log2_inv(),
                Err(e) => return Err(e.into()),
            };
            (&powering, Some(eps))
        }
    };
    let report = match a.trials {
        None => match a.generator {
            MomentSource::Uniform => moment_report(&b, a.ell, a.c_hw, None, None)?,
            MomentSource::Powering => moment_report(&b, a.ell, a.c_hw, Some(generator), log2_inv_eps)?,
        },
        Some(trials) => {
            let master = experiment_seed(&a.seed)?;
            moment_report_mc(&b, a.ell, a.c_hw, generator, log2_inv_eps, trials, master)?
        }
    };
    emit_report(command, &a.out, &report)?;
    let exact = report.mode != MomentMode::MonteCarlo;
    Ok(if exact && !report.within_bound() { EXIT_VERIFICATION } else { EXIT_OK })
}

fn cmd_rip(command: &Command, a: &RipArgs) -> Result<i32, Failure> {
    let text = fs::read_to_string(&a.matrix).map_err(|e| invalid(format!("{}: {e}", a.matrix.display())))?;
    let phi = RipMatrix::from_json(&text)?;
    let csv = a.out.format == Format::Csv;
    let report = rip_constant_exact(&phi.to_dense(), a.k, csv)?;
    if csv {
        let mut s = String::from("subset,delta\n");
        for (subset, d) in report.per_subset.as_deref().unwrap_or_default() {
            let idx: Vec<String> = subset.iter().map(usize::to_string).collect();
            s.push_str(&format!("{},{d:.17e}\n", idx.join(";")));
        }
        emit(&a.out, &s)?;
    } else {
        emit_report(command, &a.out, &report)?;
    }
    Ok(EXIT_OK)
}

fn test_vector(kind: VectorKind, n: usize, k: usize, master: u64) -> Result<SparseVector, Failure> {
    let x = match kind {
        VectorKind::Flat => SparseVector::new(n, (0..k).map(|i| (i, 1.0)).collect())?,
        VectorKind::Random => biased_rip::verify::random_sparse(n, k, master, u64::MAX),
    };
    Ok(x.normalized()?)
}

fn source(mode: ModeArg, baseline: bool) -> SignSource {
    if baseline {
        SignSource::Independent
    } else {
        SignSource::Biased(mode.into())
    }
}

fn cmd_jl(command: &Command, a: &JlArgs) -> Result<i32, Failure> {
    let master = experiment_seed(&a.seed)?;
    let base = a.params.resolve()?;
    let qs = if a.qs.is_empty() { vec![base.q] } else { a.qs.clone() };
    let x = test_vector(a.x, base.n, base.k, master)?;
    let overrides = ParamOverrides { q: None, ..a.params.overrides() };
    let report = jl_sweep(base.n, base.k, &qs, overrides, source(a.mode, a.baseline), &x, base.eta, a.trials, master)?;
    emit_report(command, &a.out, &report)?;
    Ok(EXIT_OK)
}

fn cmd_recover(command: &Command, a: &RecoverArgs) -> Result<i32, Failure> {
    let master = experiment_seed(&a.seed)?;
    let mut params = a.params.resolve()?;
    if let Some(cap) = a.q_cap {
        if params.q > cap {
            let ov = ParamOverrides { q: Some(cap), ..a.params.overrides() };
            params = choose_params(a.params.n, a.params.k, a.params.eta, ov)?;
        }
    }
    let report = recovery_experiment(&params, source(a.mode, a.baseline), a.trials, master)?;
    emit_report(command, &a.out, &report)?;
    Ok(EXIT_OK)
}

fn cmd_budget(command: &Command, a: &BudgetArgs) -> Result<i32, Failure> {
    let params = a.params.resolve()?;
    let report = randomness_budget(&params, a.mode.into())?;
    emit_report(command, &a.out, &report)?;
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli) -> Result<i32, Failure> {
    let c = &cli.command;
    match c {
        Command::Sample(a) => cmd_sample(c, a),
        Command::AuditBias(a) => cmd_audit(c, a),
        Command::HwMoments(a) => cmd_moments(c, a),
        Command::RipExact(a) => cmd_rip(c, a),
        Command::JlTail(a) => cmd_jl(c, a),
        Command::RecoverDemo(a) => cmd_recover(c, a),
        Command::Budget(a) => cmd_budget(c, a),
    }
}

/// Parses `argv`, runs the subcommand, and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(invalid("--threads must be at least 1")),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(invalid(format!("thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(hex: &str) -> SeedArgs {
        SeedArgs { master_seed: Some(hex.to_string()), entropy: false }
    }

    #[test]
    fn csv_projection_skips_nested_fields() {
        let v = serde_json::json!({"a": 1, "b": "x", "c": [1, 2], "d": {"e": 1}, "f": null});
        assert_eq!(csv_projection(&v), "field,value\na,1\nb,x\nf,null\n");
    }

    #[test]
    fn construction_seed_requires_exact_length() {
        assert_eq!(construction_seed(&seed("0a0b"), 12).unwrap().to_hex(), "0a0b");
        assert_eq!(construction_seed(&seed("0a"), 12).unwrap_err().code, EXIT_INVALID);
        // 12 bits leave four padding bits that must be zero.
        assert_eq!(construction_seed(&seed("0aff"), 12).unwrap_err().code, EXIT_INVALID);
        let none = SeedArgs { master_seed: None, entropy: false };
        assert!(construction_seed(&none, 12).unwrap_err().message.contains("12 bits"));
    }

    #[test]
    fn experiment_seed_is_big_endian() {
        assert_eq!(experiment_seed(&seed("0000000000000102")).unwrap(), 0x102);
        assert_eq!(experiment_seed(&seed("0102")).unwrap_err().code, EXIT_INVALID);
    }

    #[test]
    fn errors_map_to_exit_codes() {
        let code = |e: Error| Failure::from(e).code;
        assert_eq!(code(Error::InvalidArgument(String::new())), EXIT_INVALID);
        assert_eq!(code(Error::Format(String::new())), EXIT_INVALID);
        assert_eq!(code(Error::Capacity(String::new())), EXIT_CAPACITY);
        assert_eq!(code(Error::DegenerateSupport(String::new())), EXIT_VERIFICATION);
    }

    #[test]
    fn zero_threads_rejected() {
        assert_eq!(run(["biased-rip", "--threads", "0", "budget", "-N", "64"]), EXIT_INVALID);
    }
}
