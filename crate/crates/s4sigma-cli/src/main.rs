//! Batch front end: key generation, file encryption and decryption,
//! synchronization demos, attack experiments and the security grid.
//!
//! Exit codes: 0 success, 1 usage error, 2 crypto or validation failure,
//! 3 security-grid disagreement.

use clap::{Args, Parser, Subcommand};
use s4sigma::attack::{run_table1, standard_factory, AttackName};
use s4sigma::channel::{emit_csv, run_channel_sim, run_paper_example_with, ChannelModel};
use s4sigma::frame::{decrypt_bytes, encrypt_bytes};
use s4sigma::gf::is_prime;
use s4sigma::modes::{make_mode, ModeConfig};
use s4sigma::oracle::{estimate_advantage, Model};
use s4sigma::prp::{gen_key, KeyFile};
use s4sigma::rng::{absorb, DeterministicRng};
use s4sigma::s4::{gen_params, params_from_key, validate_params, S4Scheme, SwitchRule};
use s4sigma::scheme::{Scheme, SchemeId};
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

const EXIT_USAGE: u8 = 1;
const EXIT_CRYPTO: u8 = 2;
const EXIT_GRID: u8 = 3;

#[derive(Parser)]
#[command(
    name = "s4",
    about = "Switched self-synchronizing stream cipher toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key file with its public parameter seed.
    Keygen(KeygenArgs),
    /// Encrypt a file into a framed ciphertext.
    Encrypt(CryptArgs),
    /// Decrypt a framed ciphertext.
    Decrypt(CryptArgs),
    /// Synchronization traces: the worked example or a corrupted channel.
    SyncDemo(SyncDemoArgs),
    /// Run one attack experiment and print its JSON report line.
    Attack(AttackArgs),
    /// Run every applicable attack against every grid cell.
    Table1(Table1Args),
}

#[derive(Args)]
struct KeygenArgs {
    /// Security parameter in bits (multiple of 8).
    #[arg(long, default_value_t = 128)]
    k: usize,
    /// Prime field size.
    #[arg(long, default_value_t = 257)]
    q: u64,
    /// Block dimension.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Number of switching modes.
    #[arg(long, default_value_t = 2)]
    ell: usize,
    /// Seed for all randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the key file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CryptArgs {
    /// Key file from keygen.
    #[arg(long)]
    key: PathBuf,
    #[arg(long = "in", value_name = "IN")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed for the initial vectors and dummy blocks (encrypt only).
    #[arg(long, default_value_t = 0)]
    iv_seed: u64,
    /// Optional plaintext digest check (decrypt): 16 hex digits from encrypt.
    #[arg(long)]
    expect_digest: Option<String>,
}

#[derive(Args)]
struct SyncDemoArgs {
    /// Run the worked 3-dimensional example over GF(7).
    #[arg(long, conflicts_with_all = ["scheme", "corrupt"])]
    paper_example: bool,
    /// Scheme to simulate (s4, cbc, cfb, dcbc, mdcbc, mcfb).
    #[arg(long)]
    scheme: Option<String>,
    /// Corrupt wire blocks a through b (1-based, inclusive), as a:b.
    #[arg(long)]
    corrupt: Option<String>,
    /// Number of plaintext blocks.
    #[arg(long, default_value_t = 30)]
    blocks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    /// Attack name: dcbc-blockwise, fixed-iv-collision, mdcbc-se,
    /// mcfb-chosen-iv, mixed-sync.
    #[arg(long)]
    name: String,
    /// Target scheme.
    #[arg(long)]
    scheme: String,
    /// Model: riv-e, iv-e, riv-se, iv-se, riv-mixed, iv-mixed.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 400)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for trials.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct Table1Args {
    #[arg(long, default_value_t = 400)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn crypto_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_CRYPTO)
}

fn plaintext_digest(data: &[u8]) -> String {
    format!("{:016x}", absorb(0x00D1_6E57, data))
}

fn cmd_keygen(args: KeygenArgs) -> ExitCode {
    if args.q > 1 << 16 {
        return usage_error(&format!("--q {} exceeds the table-mode limit 2^16", args.q));
    }
    if !is_prime(args.q) {
        return usage_error(&format!("--q {} is not prime", args.q));
    }
    if args.n < 2 || args.ell < 1 {
        return usage_error("need --n >= 2 and --ell >= 1");
    }
    if args.k < 8 || !args.k.is_multiple_of(8) {
        return usage_error("--k must be a positive multiple of 8");
    }
    let mut rng = DeterministicRng::new(args.seed);
    let (key, seed_public, params) = match gen_params(args.k, args.q, args.n, args.ell, &mut rng)
    {
        Ok(v) => v,
        Err(e) => return crypto_error(&format!("parameter generation failed: {e}")),
    };
    let report = validate_params(&params);
    if !report.all_ok() {
        return crypto_error("generated parameters failed validation");
    }
    let key_file = KeyFile::new(&key, args.q, args.n, args.ell, seed_public);
    let json = serde_json::to_string_pretty(&key_file).expect("key file serializes");
    if let Err(e) = fs::write(&args.out, json) {
        return crypto_error(&format!("cannot write {}: {e}", args.out.display()));
    }
    println!(
        "wrote {} (q={} n={} ell={} n0={} seed_public={:#x})",
        args.out.display(),
        args.q,
        args.n,
        args.ell,
        params.n0,
        seed_public
    );
    ExitCode::SUCCESS
}

fn load_key(path: &PathBuf) -> Result<(KeyFile, s4sigma::s4::S4Params), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let kf: KeyFile =
        serde_json::from_str(&text).map_err(|e| format!("bad key file {}: {e}", path.display()))?;
    if kf.version != 1 {
        return Err(format!("unsupported key file version {}", kf.version));
    }
    let key = kf.secret_key()?;
    let params = params_from_key(&key, kf.q, kf.n, kf.ell, kf.seed_public)
        .map_err(|e| format!("cannot rebuild parameters: {e}"))?;
    Ok((kf, params))
}

fn cmd_encrypt(args: CryptArgs) -> ExitCode {
    let (kf, params) = match load_key(&args.key) {
        Ok(v) => v,
        Err(e) => return crypto_error(&e),
    };
    let rule = SwitchRule::TimeMod { ell: kf.ell };
    let data = match fs::read(&args.input) {
        Ok(d) => d,
        Err(e) => return crypto_error(&format!("cannot read {}: {e}", args.input.display())),
    };
    let mut rng = DeterministicRng::new(args.iv_seed);
    let frame = match encrypt_bytes(&params, &rule, &data, &mut rng) {
        Ok(f) => f,
        Err(e) => return crypto_error(&format!("encryption failed: {e}")),
    };
    if let Err(e) = fs::write(&args.out, frame) {
        return crypto_error(&format!("cannot write {}: {e}", args.out.display()));
    }
    println!("{} bytes encrypted, digest={}", data.len(), plaintext_digest(&data));
    ExitCode::SUCCESS
}

fn cmd_decrypt(args: CryptArgs) -> ExitCode {
    let (kf, params) = match load_key(&args.key) {
        Ok(v) => v,
        Err(e) => return crypto_error(&e),
    };
    let rule = SwitchRule::TimeMod { ell: kf.ell };
    let frame = match fs::read(&args.input) {
        Ok(d) => d,
        Err(e) => return crypto_error(&format!("cannot read {}: {e}", args.input.display())),
    };
    // The receiver state is free; any seed decrypts identically beyond the
    // discarded dummy prefix.
    let mut rng = DeterministicRng::new(args.iv_seed);
    let data = match decrypt_bytes(&params, &rule, &frame, &mut rng) {
        Ok(d) => d,
        Err(e) => return crypto_error(&format!("decryption failed: {e}")),
    };
    if let Some(expected) = &args.expect_digest {
        let got = plaintext_digest(&data);
        if &got != expected {
            return crypto_error(&format!(
                "digest mismatch: expected {expected}, recovered {got} (wrong key or corrupted frame)"
            ));
        }
    }
    if let Err(e) = fs::write(&args.out, data) {
        return crypto_error(&format!("cannot write {}: {e}", args.out.display()));
    }
    println!("decrypted to {}", args.out.display());
    ExitCode::SUCCESS
}

fn parse_corrupt(spec: &str) -> Result<(usize, usize), String> {
    let (a, b) = spec
        .split_once(':')
        .ok_or_else(|| format!("--corrupt wants a:b, got {spec}"))?;
    let a: usize = a.parse().map_err(|_| format!("bad corruption start {a}"))?;
    let b: usize = b.parse().map_err(|_| format!("bad corruption end {b}"))?;
    if a == 0 || b < a {
        return Err(format!("corruption range {a}:{b} is empty or 0-based"));
    }
    Ok((a, b))
}

fn cmd_sync_demo(args: SyncDemoArgs) -> ExitCode {
    let trace = if args.paper_example {
        match run_paper_example_with(args.blocks.max(10), 0x5eed, args.seed) {
            Ok(t) => t,
            Err(e) => return crypto_error(&format!("example run failed: {e}")),
        }
    } else {
        let scheme_name = match &args.scheme {
            Some(s) => s.clone(),
            None => return usage_error("need --paper-example or --scheme"),
        };
        let id = match SchemeId::parse(&scheme_name) {
            Some(id) => id,
            None => return usage_error(&format!("unknown scheme {scheme_name}")),
        };
        let channel = match &args.corrupt {
            None => ChannelModel::Clean,
            Some(spec) => match parse_corrupt(spec) {
                Ok((a, b)) => {
                    ChannelModel::ResyncBurst { start: a, length: b - a + 1, seed: args.seed }
                }
                Err(e) => return usage_error(&e),
            },
        };
        let mut rng = DeterministicRng::new(args.seed);
        let scheme: Box<dyn Scheme> = match id {
            SchemeId::S4 => {
                let (_, _, params) = match gen_params(128, 257, 4, 2, &mut rng) {
                    Ok(v) => v,
                    Err(e) => return crypto_error(&format!("parameter generation failed: {e}")),
                };
                Box::new(S4Scheme::new(Arc::new(params), SwitchRule::TimeMod { ell: 2 }))
            }
            other => {
                let key = match gen_key(128, &mut rng) {
                    Ok(k) => k,
                    Err(e) => return crypto_error(&format!("key generation failed: {e}")),
                };
                match make_mode(other, &key, &ModeConfig::default(), &mut rng) {
                    Ok(m) => Box::new(m),
                    Err(e) => return crypto_error(&format!("mode setup failed: {e}")),
                }
            }
        };
        match run_channel_sim(scheme.as_ref(), &channel, args.blocks, args.seed ^ 0x51) {
            Ok(t) => t,
            Err(e) => return crypto_error(&format!("simulation failed: {e}")),
        }
    };
    let mut buf = Vec::new();
    if emit_csv(&trace, &mut buf).is_err() {
        return crypto_error("trace rendering failed");
    }
    match &args.out {
        None => {
            std::io::stdout().write_all(&buf).ok();
        }
        Some(path) => {
            if let Err(e) = fs::write(path, &buf) {
                return crypto_error(&format!("cannot write {}: {e}", path.display()));
            }
            println!("wrote {}", path.display());
        }
    }
    ExitCode::SUCCESS
}

fn cmd_attack(args: AttackArgs) -> ExitCode {
    let name = match AttackName::parse(&args.name) {
        Some(n) => n,
        None => return usage_error(&format!("unknown attack {}", args.name)),
    };
    let scheme = match SchemeId::parse(&args.scheme) {
        Some(s) => s,
        None => return usage_error(&format!("unknown scheme {}", args.scheme)),
    };
    let model = match Model::parse(&args.model) {
        Some(m) => m,
        None => return usage_error(&format!("unknown model {}", args.model)),
    };
    if !name.applicable(scheme, model) {
        return usage_error(&format!(
            "attack {name} is not applicable to {scheme} under {model}"
        ));
    }
    if args.trials < 30 {
        return usage_error("need --trials >= 30");
    }
    let factory = standard_factory(scheme, absorb(args.seed, b"map"));
    let adv = name.build();
    let report = estimate_advantage(
        adv.as_ref(),
        factory.as_ref(),
        model,
        args.trials,
        args.seed,
        args.jobs,
    );
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    ExitCode::SUCCESS
}

fn cmd_table1(args: Table1Args) -> ExitCode {
    if args.trials < 30 {
        return usage_error("need --trials >= 30");
    }
    let report = run_table1(args.trials, args.seed, args.jobs);
    for cell in &report.cells {
        println!("{}", serde_json::to_string(&cell.best).expect("report serializes"));
    }
    eprint!("{}", report.render());
    if report.all_match() {
        ExitCode::SUCCESS
    } else {
        eprintln!("grid disagrees with the published classification");
        ExitCode::from(EXIT_GRID)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Keygen(args) => cmd_keygen(args),
        Command::Encrypt(args) => cmd_encrypt(args),
        Command::Decrypt(args) => cmd_decrypt(args),
        Command::SyncDemo(args) => cmd_sync_demo(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Table1(args) => cmd_table1(args),
    }
}
