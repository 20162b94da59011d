use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mts_regalloc::allocator::Policy;
use mts_regalloc::cli::{self, CliError, FuzzOptions, Injection, RunConfig};
use mts_regalloc::machine::DEFAULT_FUEL;

#[derive(Parser)]
#[command(name = "mts", version, about = "Model-driven register allocator for a small intermediate language")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Number of machine registers.
    #[arg(long, default_value_t = 4)]
    registers: usize,
    /// Eviction policy: furthest, lifo, or fifo.
    #[arg(long, default_value_t = Policy::Furthest)]
    policy: Policy,
    /// Do not steer else-branch register choices toward the then-branch.
    #[arg(long)]
    no_preference: bool,
    /// Interleave model transitions with the assembly.
    #[arg(long)]
    trace: bool,
    /// Step budget for simulation.
    #[arg(long, default_value_t = DEFAULT_FUEL)]
    fuel: u64,
    /// Seed for heap contents and program generation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
}

impl Common {
    fn config(&self) -> RunConfig {
        RunConfig {
            registers: self.registers,
            policy: self.policy,
            preferences: !self.no_preference,
            trace: self.trace,
            fuel: self.fuel,
            seed: self.seed,
            json: self.json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the allocated assembly for a program.
    Alloc {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Allocate, simulate, and print the result with traffic counts.
    Run {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate dynamic traffic per program, register count, and policy.
    Compare {
        /// `.uil` files or directories containing them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Register counts to compare, comma separated.
        #[arg(long = "registers-list", value_delimiter = ',', default_value = "2,3,4")]
        registers_list: Vec<usize>,
        /// Policies to compare, comma separated.
        #[arg(long = "policies", value_delimiter = ',', default_value = "furthest,lifo,fifo")]
        policies: Vec<Policy>,
        #[command(flatten)]
        common: Common,
    },
    /// Check generated programs against the reference interpreter.
    Fuzz {
        #[arg(long, default_value_t = 100)]
        count: u64,
        /// Directory for reproducers of failing programs.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Miscompile on purpose to exercise failure reporting.
        #[arg(long)]
        inject_fault: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Alloc { input, common } => cli::cmd_alloc(&cli::load_file(&input)?, &common.config()),
        Command::Run { input, common } => cli::cmd_run(&cli::load_file(&input)?, &common.config()),
        Command::Compare { inputs, registers_list, policies, common } => {
            let (text, report) = cli::cmd_compare(&inputs, &registers_list, &policies, &common.config())?;
            if report.errors.is_empty() {
                Ok(text)
            } else {
                print!("{text}");
                for e in &report.errors {
                    eprintln!("error: {e}");
                }
                Err(CliError::Diagnostics(format!("{} comparison(s) failed", report.errors.len())))
            }
        }
        Command::Fuzz { count, out_dir, inject_fault, common } => {
            let opts = FuzzOptions { count, out_dir, inject: inject_fault.then_some(Injection::CorruptResult) };
            let report = cli::cmd_fuzz(&common.config(), &opts)?;
            let text = if common.json {
                serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?
            } else {
                report.summary()
            };
            if report.failures.is_empty() {
                Ok(text)
            } else {
                print!("{text}");
                Err(CliError::Internal(format!("{} program(s) miscompiled", report.failures.len())))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(text) => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
