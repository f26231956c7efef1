mod flags;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use blocklab::corpus::{hunt_mutant, run_corpus, CorpusConfig};
use blocklab::demos::{render_table, run_scenario, scenario, scenarios};
use blocklab::ir::{parse_program, print_program, Program};
use blocklab::passes::mutants::Mutant;
use blocklab::passes::{apply_pipeline, stage_for, Pass, PassConfig};
use blocklab::semantics::{int_args, run, Outcome, RunResult, DEFAULT_FUEL};
use blocklab::validate::{validate_stage, Verdict};

const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_NOINPUT: u8 = 66;
const EXIT_SOFTWARE: u8 = 70;

#[derive(Parser, Debug)]
#[command(
    name = "blocklab",
    version,
    about = "Interpret, transform and validate block-memory IR programs",
    after_help = "Pass flags: -ftailcalls -ftailrec -fstack-protector -fstack-protector-all \
                  -fretaddr-pac -fretaa, each negated by -fno-<name>. Later flags win."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Integer arguments for main, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    args: Vec<i64>,
    /// Seed for the canary value
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step budget
    #[arg(long, default_value_t = DEFAULT_FUEL)]
    fuel: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Kv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a program after the enabled passes
    Run {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the program after the enabled passes, with a rewrite report
    Transform {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Apply one pass and check it by co-execution on the given input
    Validate {
        file: PathBuf,
        /// refine_div, tailcall, tailrec, canary, lower_ra, pac or peephole
        #[arg(long)]
        pass: String,
        /// Use a deliberately broken variant of the pass instead
        #[arg(long)]
        mutant: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a bundled scenario in each of its protection modes
    Demo {
        /// Scenario name, or `all`
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Generate programs and validate every enabled pass on each
    Corpus {
        #[arg(long, default_value_t = 500)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = blocklab::gen::DEFAULT_BUDGET)]
        budget: usize,
        /// Values of main's argument each program runs with
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "0,3,7"
        )]
        inputs: Vec<i64>,
        /// Also check that every seeded pass bug is caught
        #[arg(long)]
        mutants: bool,
        #[command(flatten)]
        common: Common,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Failure {
        Failure {
            code,
            msg: msg.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Failure {
        Failure::new(EXIT_NOINPUT, format!("{e:#}"))
    }
}

fn load(path: &Path) -> Result<Program, Failure> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_program(&text).map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", path.display())))
}

fn pipeline(
    p: &Program,
    cfg: &PassConfig,
) -> Result<(Program, blocklab::passes::PipelineReport), Failure> {
    apply_pipeline(p, cfg).map_err(|e| Failure::new(EXIT_SOFTWARE, format!("pass failed: {e}")))
}

/// Exit status of a run, by outcome kind.
fn run_status(o: &Outcome) -> u8 {
    match o {
        Outcome::Final(_) => 0,
        Outcome::Stuck(_) => 2,
        Outcome::Aborted(_) => 3,
        Outcome::OutOfFuel => 4,
    }
}

fn render_run(r: &RunResult, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Text => {
            for e in &r.trace {
                writeln!(out, "{e}").unwrap();
            }
            writeln!(out, "result: {}", r.outcome).unwrap();
            writeln!(
                out,
                "steps {}  allocs {}  frees {}  max live frames {}",
                r.stats.steps, r.stats.allocs, r.stats.frees, r.stats.max_live_frames
            )
            .unwrap();
        }
        Format::Kv => {
            writeln!(out, "outcome={}", r.outcome.label()).unwrap();
            match &r.outcome {
                Outcome::Final(v) => writeln!(out, "value={v}").unwrap(),
                Outcome::Aborted(m) => writeln!(out, "message={m}").unwrap(),
                Outcome::Stuck(s) => {
                    writeln!(out, "reason={}", s.reason.kind()).unwrap();
                    writeln!(out, "at={}", s.at).unwrap();
                    writeln!(out, "detail={}", s.reason).unwrap();
                }
                Outcome::OutOfFuel => {}
            }
            for e in &r.trace {
                writeln!(out, "event={e}").unwrap();
            }
            writeln!(out, "steps={}", r.stats.steps).unwrap();
            writeln!(out, "allocs={}", r.stats.allocs).unwrap();
            writeln!(out, "frees={}", r.stats.frees).unwrap();
            writeln!(out, "max_live_frames={}", r.stats.max_live_frames).unwrap();
            writeln!(out, "exit={}", run_status(&r.outcome)).unwrap();
        }
    }
    out
}

fn render_verdict(v: &Verdict, format: Format) -> String {
    if format == Format::Text {
        return v.report();
    }
    let mut out = String::new();
    let l = &v.log;
    writeln!(
        out,
        "verdict={}",
        if v.accepted { "accepted" } else { "rejected" }
    )
    .unwrap();
    writeln!(out, "reason={}", v.reason).unwrap();
    if !v.detail.is_empty() {
        writeln!(out, "detail={}", v.detail).unwrap();
    }
    for (k, n) in [
        ("sync_points", l.sync_points),
        ("deferred", l.deferred),
        ("register_checks", l.register_checks),
        ("memory_checks", l.memory_checks),
        ("slot_checks", l.slot_checks),
        ("canary_probes", l.canary_probes),
        ("remaps", l.remaps),
        ("original_steps", l.original_steps),
        ("transformed_steps", l.transformed_steps),
    ] {
        writeln!(out, "{k}={n}").unwrap();
    }
    if let Some(c) = &v.counterexample {
        writeln!(out, "step={}", c.step).unwrap();
        writeln!(out, "original={}", c.original).unwrap();
        writeln!(out, "transformed={}", c.transformed).unwrap();
    }
    out
}

fn cmd_run(file: &Path, c: &Common, cfg: &PassConfig) -> Result<u8, Failure> {
    let (p, _) = pipeline(&load(file)?, cfg)?;
    let r = run(&p, int_args(&c.args), c.fuel, c.seed);
    print!("{}", render_run(&r, c.format));
    Ok(run_status(&r.outcome))
}

fn cmd_transform(file: &Path, c: &Common, cfg: &PassConfig) -> Result<u8, Failure> {
    let (p, report) = pipeline(&load(file)?, cfg)?;
    print!("{}", print_program(&p));
    println!();
    match c.format {
        Format::Text => print!("{}", report.to_table()),
        Format::Kv => print!("{}", report.to_kv()),
    }
    Ok(0)
}

fn cmd_validate(
    file: &Path,
    pass: &str,
    mutant: Option<&str>,
    c: &Common,
    cfg: &PassConfig,
) -> Result<u8, Failure> {
    let pass = Pass::from_name(pass).ok_or_else(|| {
        let names: Vec<&str> = Pass::ALL.iter().map(|p| p.name()).collect();
        Failure::new(
            EXIT_USAGE,
            format!(
                "unknown pass `{pass}`; expected one of {}",
                names.join(", ")
            ),
        )
    })?;
    let p = load(file)?;
    let stage = match mutant {
        None => stage_for(pass, &p, cfg),
        Some(m) => {
            let m = Mutant::ALL
                .into_iter()
                .find(|x| x.name() == m)
                .ok_or_else(|| Failure::new(EXIT_USAGE, format!("unknown mutant `{m}`")))?;
            if m.pass() != pass {
                return Err(Failure::new(
                    EXIT_USAGE,
                    format!("mutant `{m}` replaces {}, not {pass}", m.pass()),
                ));
            }
            m.stage(&p, cfg)
        }
    }
    .map_err(|e| Failure::new(EXIT_SOFTWARE, format!("pass failed: {e}")))?;
    let v = validate_stage(&stage, cfg, &int_args(&c.args), c.fuel, c.seed);
    print!("{}", render_verdict(&v, c.format));
    Ok(if v.accepted { 0 } else { 1 })
}

fn cmd_demo(name: &str, c: &Common) -> Result<u8, Failure> {
    let list = if name == "all" {
        scenarios()
    } else {
        let names: Vec<&str> = scenarios().iter().map(|s| s.name).collect();
        vec![scenario(name).ok_or_else(|| {
            Failure::new(
                EXIT_USAGE,
                format!(
                    "unknown demo `{name}`; expected one of {} or all",
                    names.join(", ")
                ),
            )
        })?]
    };
    for (i, s) in list.iter().enumerate() {
        let rows = run_scenario(s, c.fuel, c.seed)
            .map_err(|e| Failure::new(EXIT_SOFTWARE, e.to_string()))?;
        match c.format {
            Format::Text => {
                if i > 0 {
                    println!();
                }
                println!("{} ({})", s.name, s.file);
                print!("{}", render_table(&rows));
            }
            Format::Kv => {
                for (j, r) in rows.iter().enumerate() {
                    let key = format!("{}.{j}", s.name);
                    let args: Vec<String> = r.args.iter().map(i64::to_string).collect();
                    println!("{key}.mode={}", r.mode);
                    println!("{key}.args={}", args.join(","));
                    println!("{key}.outcome={}", r.outcome);
                    println!("{key}.events={}", r.trace.len());
                    println!("{key}.steps={}", r.stats.steps);
                    println!("{key}.allocs={}", r.stats.allocs);
                    println!("{key}.max_live_frames={}", r.stats.max_live_frames);
                }
            }
        }
    }
    Ok(0)
}

struct CorpusArgs {
    count: u64,
    first_seed: u64,
    budget: usize,
    inputs: Vec<i64>,
    mutants: bool,
}

fn cmd_corpus(a: CorpusArgs, c: &Common, cfg: &PassConfig) -> Result<u8, Failure> {
    let cc = CorpusConfig {
        first_seed: a.first_seed,
        count: a.count,
        budget: a.budget,
        inputs: a.inputs,
        fuel: c.fuel,
        canary_seed: c.seed,
        passes: *cfg,
    };
    let summary = run_corpus(&cc);
    let mut ok = summary.all_accepted();
    let mut mutant_lines = Vec::new();
    if a.mutants {
        for m in Mutant::ALL {
            let hit = hunt_mutant(&cc, m);
            ok &= hit.is_some();
            mutant_lines.push((m, hit));
        }
    }
    match c.format {
        Format::Text => {
            print!("{}", summary.render());
            for (m, hit) in &mutant_lines {
                match hit {
                    Some(h) => println!(
                        "mutant {m}: caught at seed {} input {} ({})",
                        h.seed, h.input, h.reason
                    ),
                    None => println!("mutant {m}: not caught"),
                }
            }
        }
        Format::Kv => {
            println!("programs={}", summary.programs.len());
            for (o, n) in summary.outcomes() {
                println!("original.{o}={n}");
            }
            for (p, t) in summary.per_pass() {
                println!("pass.{}.accepted={}", p.name(), t.accepted);
                println!("pass.{}.rejected={}", p.name(), t.rejected);
            }
            println!("problems={}", summary.problems().count());
            for (m, hit) in &mutant_lines {
                match hit {
                    Some(h) => println!("mutant.{m}={}:{}", h.seed, h.input),
                    None => println!("mutant.{m}=none"),
                }
            }
        }
    }
    Ok(if ok { 0 } else { 1 })
}

fn dispatch(cli: Cli, cfg: PassConfig, any_flag: bool) -> Result<u8, Failure> {
    match cli.command {
        Command::Run { file, common } => cmd_run(&file, &common, &cfg),
        Command::Transform { file, common } => cmd_transform(&file, &common, &cfg),
        Command::Validate {
            file,
            pass,
            mutant,
            common,
        } => cmd_validate(&file, &pass, mutant.as_deref(), &common, &cfg),
        Command::Demo { name, common } => cmd_demo(&name, &common),
        Command::Corpus {
            count,
            first_seed,
            budget,
            inputs,
            mutants,
            common,
        } => cmd_corpus(
            CorpusArgs {
                count,
                first_seed,
                budget,
                inputs,
                mutants,
            },
            &common,
            // With no pass flags at all, the corpus exercises every pass.
            &if any_flag { cfg } else { PassConfig::all() },
        ),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let extracted = match flags::extract(&argv[1..]) {
        Ok(e) => e,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(std::iter::once(argv[0].clone()).chain(extracted.rest)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli, extracted.cfg, extracted.any) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
