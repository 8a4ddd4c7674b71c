use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gridkern_bench::{
    emit_ratio_report, emit_report, report_notes, run_bench, time_cost_ratio, Assembly,
    BenchConfig, BenchError, Derivatives, Method, OutputFormat, Reduction, Storage,
};

/// Times the per-step kernels of the Ybus and element-wise methods.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// MATPOWER case file; repeat for several cases. Bare names also
    /// resolve to the bundled cases.
    #[arg(long = "case", required = true)]
    cases: Vec<PathBuf>,
    /// Number of disconnected copies of each case.
    #[arg(long, default_value_t = 1)]
    replicate: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, value_delimiter = ',', default_value = "ybus,elementwise")]
    methods: Vec<Method>,
    #[arg(long, value_enum, default_value_t = Storage::Interleaved)]
    storage: Storage,
    #[arg(long, value_enum, default_value_t = Reduction::TwoStep)]
    reduction: Reduction,
    #[arg(long, value_enum, default_value_t = Derivatives::TwoPass)]
    derivatives: Derivatives,
    #[arg(long, value_enum, default_value_t = Assembly::Inplace)]
    assembly: Assembly,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    out: OutputFormat,
    /// Check cross-method agreement before timing.
    #[arg(long)]
    verify: bool,
    /// Uniform perturbation half-width for vm and va, fixed seed.
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    /// Also print per-bus times relative to this case.
    #[arg(long)]
    ratio_ref: Option<String>,
    #[arg(long, hide = true)]
    inject_sign_error: bool,
}

impl Cli {
    fn config(&self, case: &PathBuf) -> BenchConfig {
        let mut cfg = BenchConfig::new(case);
        cfg.replicate_k = self.replicate;
        cfg.reps = self.reps;
        cfg.warmup = self.warmup;
        cfg.methods = self.methods.clone();
        cfg.storage = self.storage;
        cfg.reduction = self.reduction;
        cfg.derivatives = self.derivatives;
        cfg.assembly = self.assembly;
        cfg.verify = self.verify;
        cfg.perturb = self.perturb;
        cfg.inject_sign_error = self.inject_sign_error;
        cfg
    }
}

fn run(cli: &Cli) -> Result<(), BenchError> {
    let mut results = Vec::with_capacity(cli.cases.len());
    let mut last_cfg = None;
    for case in &cli.cases {
        let cfg = cli.config(case);
        results.push(run_bench(&cfg)?);
        last_cfg = Some(cfg);
    }
    let cfg = last_cfg.expect("at least one case");
    let ratios = match &cli.ratio_ref {
        Some(r) => Some((r, time_cost_ratio(&results, r)?)),
        None => None,
    };

    let mut out = emit_report(&results, cli.out);
    if let Some((reference, rows)) = &ratios {
        out.push('\n');
        out.push_str(&emit_ratio_report(rows, reference, cli.out));
    }
    let notes = report_notes(&results, &cfg);
    match cli.out {
        OutputFormat::Csv => {
            print!("{out}");
            for n in notes {
                eprintln!("note: {n}");
            }
        }
        OutputFormat::Md => {
            print!("{out}");
            println!();
            for n in notes {
                println!("- {n}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
