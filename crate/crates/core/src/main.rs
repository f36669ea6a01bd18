use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use memforge::arch::MemoryArchitecture;
use memforge::eval::{simulate_with_trace, EvalReport};
use memforge::ir::{parse_kernel, Kernel, DEFAULT_CAP};
use memforge::pipeline::{effective_platform, format_eval, run_phases, run_pipeline, Phase, PipelineOptions};
use memforge::platform::{parse_platform, PlatformSpec};

/// Specializes an accelerator memory template for a kernel.
#[derive(Parser)]
#[command(name = "memforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full flow and write arch.json, lowered.ir and a report.
    Compile {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        flags: Flags,
        /// Also write a per-instance CSV trace of the specialized design.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the flow up to one phase and print that phase's plan.
    Phase {
        name: PhaseName,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        flags: Flags,
    },
    /// Evaluate an existing architecture description.
    Simulate {
        #[arg(long)]
        arch: PathBuf,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        report: ReportFormat,
        #[arg(long, env = "MEMFORGE_CAP", default_value_t = DEFAULT_CAP)]
        cap: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Parse and validate inputs only.
    Check {
        kernel: PathBuf,
        platform: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Inputs {
    kernel: PathBuf,
    platform: PathBuf,
}

#[derive(Args)]
struct Flags {
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
    #[arg(long, env = "MEMFORGE_CAP", default_value_t = DEFAULT_CAP)]
    cap: u64,
    /// Override the per-port area penalty.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    no_data_org: bool,
    #[arg(long)]
    no_layout: bool,
    #[arg(long)]
    no_comm: bool,
    #[arg(long)]
    no_partition: bool,
}

impl Flags {
    fn options(&self) -> PipelineOptions {
        PipelineOptions {
            cap: self.cap,
            alpha: self.alpha,
            data_org: !self.no_data_org,
            layout: !self.no_layout,
            comm: !self.no_comm,
            partition: !self.no_partition,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseName {
    DataOrg,
    Layout,
    Comm,
    Partition,
    Emit,
}

impl From<PhaseName> for Phase {
    fn from(p: PhaseName) -> Phase {
        match p {
            PhaseName::DataOrg => Phase::DataOrg,
            PhaseName::Layout => Phase::Layout,
            PhaseName::Comm => Phase::Comm,
            PhaseName::Partition => Phase::Partition,
            PhaseName::Emit => Phase::Emit,
        }
    }
}

type Fallible<T> = Result<T, String>;

fn read(path: &Path) -> Fallible<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_kernel(path: &Path) -> Fallible<Kernel> {
    parse_kernel(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_platform(path: &Path) -> Fallible<PlatformSpec> {
    parse_platform(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Fallible<()> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    memforge::canonical_json(&serde_json::to_value(v).expect("plans serialize"))
}

fn eval_json(r: &EvalReport) -> String {
    to_json(r)
}

fn run(cli: Cli) -> Fallible<()> {
    match cli.command {
        Command::Compile { inputs, out, flags, csv } => {
            let k = load_kernel(&inputs.kernel)?;
            let p = load_platform(&inputs.platform)?;
            let options = flags.options();
            let o = run_pipeline(&k, &p, &options).map_err(|e| e.to_string())?;
            fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            let arch = o.state.architecture.as_ref().expect("compile builds the architecture");
            write(&out.join("arch.json"), &arch.to_json())?;
            write(&out.join("lowered.ir"), &o.lowered_ir)?;
            match flags.report {
                ReportFormat::Text => write(&out.join("report.txt"), &o.report_text())?,
                ReportFormat::Json => write(&out.join("report.json"), &o.report_json())?,
            }
            if let Some(path) = csv {
                trace_csv(&o.state.kernel, arch, &o.state.platform, options.cap, &path)?;
            }
            for d in &o.state.diagnostics {
                eprintln!("note: {d}");
            }
            Ok(())
        }
        Command::Phase { name, inputs, flags } => {
            let k = load_kernel(&inputs.kernel)?;
            let p = load_platform(&inputs.platform)?;
            let st = run_phases(&k, &p, &flags.options(), name.into()).map_err(|e| e.to_string())?;
            let text = match name {
                PhaseName::DataOrg => to_json(&st.placement),
                PhaseName::Layout => to_json(&st.layout),
                PhaseName::Comm => to_json(&serde_json::json!({ "tiling": st.tiling, "prefetch": st.prefetch })),
                PhaseName::Partition => to_json(&serde_json::json!({
                    "banking": st.banking,
                    "lifetimes": st.lifetimes,
                    "sharing": st.sharing,
                })),
                PhaseName::Emit => st.architecture.as_ref().expect("emit builds the architecture").to_json(),
            };
            print!("{text}");
            Ok(())
        }
        Command::Simulate { arch, inputs, report, cap, csv } => {
            let k = load_kernel(&inputs.kernel)?;
            let p = load_platform(&inputs.platform)?;
            let a = MemoryArchitecture::from_json(&read(&arch)?).map_err(|e| format!("{}: {e}", arch.display()))?;
            let p = effective_platform(&p, &PipelineOptions::default());
            let r = match &csv {
                Some(path) => trace_csv(&k, &a, &p, cap, path)?,
                None => simulate_with_trace(&k, &a, &p, cap, None).map_err(|e| e.to_string())?,
            };
            match report {
                ReportFormat::Text => print!("{}", format_eval("simulated", &r)),
                ReportFormat::Json => print!("{}", eval_json(&r)),
            }
            Ok(())
        }
        Command::Check { kernel, platform } => {
            let k = load_kernel(&kernel)?;
            if let Some(p) = platform {
                load_platform(&p)?;
            }
            println!("ok: kernel {} ({} arrays, {} statements)", k.name, k.arrays.len(), k.statements.len());
            Ok(())
        }
    }
}

fn trace_csv(k: &Kernel, a: &MemoryArchitecture, p: &PlatformSpec, cap: u64, path: &Path) -> Fallible<EvalReport> {
    let mut f = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    simulate_with_trace(k, a, p, cap, Some(&mut f)).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
