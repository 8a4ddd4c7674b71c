//! Timing records, the per-bus scaling ratio and report rendering.

use std::fmt::Write as _;

use clap::ValueEnum;

use crate::config::{BenchConfig, OutputFormat, Storage};
use crate::error::{BenchError, Result};

/// Cases at least this large are where the element-wise power path is
/// expected to overtake the sparse product on wide-SIMD hosts.
pub const SIMD_CROSSOVER_BUSES: usize = 2736;

pub const CSV_HEADER: [&str; 11] = [
    "case",
    "n_b",
    "n_l",
    "ybus_phasor",
    "ybus_power",
    "ybus_jcalc",
    "ybus_jred",
    "ew_power",
    "ew_pred",
    "ew_jcalc",
    "ew_jred",
];

/// Minimum nanoseconds per Ybus step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YbusTimings {
    pub phasor_calc: u64,
    pub power_calc: u64,
    pub j_calc: u64,
    pub j_red: u64,
}

/// Minimum nanoseconds per element-wise step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementwiseTimings {
    pub power_calc: u64,
    pub power_red: u64,
    pub j_calc: u64,
    pub j_red: u64,
}

impl YbusTimings {
    pub fn steps(&self) -> [u64; 4] {
        [self.phasor_calc, self.power_calc, self.j_calc, self.j_red]
    }
}

impl ElementwiseTimings {
    pub fn steps(&self) -> [u64; 4] {
        [self.power_calc, self.power_red, self.j_calc, self.j_red]
    }

    /// Everything needed to produce bus injections.
    pub fn total_power(&self) -> u64 {
        self.power_calc + self.power_red
    }
}

/// Largest cross-method mismatches seen by the untimed verification run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub max_power: f64,
    pub max_jacobian: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTimings {
    pub case: String,
    pub n_b: usize,
    pub n_l: usize,
    pub ybus: Option<YbusTimings>,
    pub elementwise: Option<ElementwiseTimings>,
    pub verification: Option<Verification>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub case: String,
    pub n_b: usize,
    pub ybus: Option<[f64; 4]>,
    pub elementwise: Option<[f64; 4]>,
}

/// Per-bus step time of every case relative to the per-bus time of the
/// reference case. Steps the reference did not time are left empty.
pub fn time_cost_ratio(t: &[StepTimings], reference: &str) -> Result<Vec<RatioRow>> {
    let r = t
        .iter()
        .find(|s| s.case == reference)
        .ok_or_else(|| BenchError::MissingReference(reference.to_string()))?;
    let ratio = |steps: [u64; 4], n_b: usize, ref_steps: [u64; 4]| {
        let mut out = [0.0; 4];
        for (o, (&s, &q)) in out.iter_mut().zip(steps.iter().zip(&ref_steps)) {
            *o = (s as f64 / n_b as f64) / (q as f64 / r.n_b as f64);
        }
        out
    };
    Ok(t.iter()
        .map(|s| RatioRow {
            case: s.case.clone(),
            n_b: s.n_b,
            ybus: s
                .ybus
                .zip(r.ybus)
                .map(|(a, b)| ratio(a.steps(), s.n_b, b.steps())),
            elementwise: s
                .elementwise
                .zip(r.elementwise)
                .map(|(a, b)| ratio(a.steps(), s.n_b, b.steps())),
        })
        .collect())
}

fn cells<T: ToString>(steps: Option<[T; 4]>, empty: &str) -> [String; 4] {
    match steps {
        Some(s) => s.map(|v| v.to_string()),
        None => std::array::from_fn(|_| empty.to_string()),
    }
}

fn timing_row(s: &StepTimings, empty: &str) -> Vec<String> {
    let mut row = vec![s.case.clone(), s.n_b.to_string(), s.n_l.to_string()];
    row.extend(cells(s.ybus.map(|y| y.steps()), empty));
    row.extend(cells(s.elementwise.map(|e| e.steps()), empty));
    row
}

fn ratio_row(r: &RatioRow, empty: &str) -> Vec<String> {
    let fmt = |v: Option<[f64; 4]>| v.map(|a| a.map(|x| format!("{x:.4}")));
    let mut row = vec![r.case.clone(), r.n_b.to_string()];
    row.extend(cells(fmt(r.ybus), empty));
    row.extend(cells(fmt(r.elementwise), empty));
    row
}

fn write_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Writing into a Vec cannot fail.
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv of utf-8 fields")
}

fn write_markdown(title: &str, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out);
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(
        out,
        "|{}|",
        header
            .iter()
            .enumerate()
            .map(|(i, _)| if i == 0 { ":---" } else { "---:" })
            .collect::<Vec<_>>()
            .join("|")
    );
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out
}

const MD_HEADER: [&str; 11] = [
    "Case",
    "n_b",
    "n_l",
    "Ybus Phasor Calc.",
    "Ybus Power Calc.",
    "Ybus J Calc.",
    "Ybus J Red.",
    "EW Power Calc.",
    "EW Power Red.",
    "EW J Calc.",
    "EW J Red.",
];

/// Renders the timing table. CSV carries empty cells for methods that were
/// not run, markdown carries `-`.
pub fn emit_report(t: &[StepTimings], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => write_csv(&CSV_HEADER, t.iter().map(|s| timing_row(s, ""))),
        OutputFormat::Md => write_markdown(
            "Computation time per step (ns, minimum over repetitions).",
            &MD_HEADER,
            t.iter().map(|s| timing_row(s, "-")),
        ),
    }
}

/// Renders the time-cost ratio table with the same step columns as the
/// timing report, minus `n_l`.
pub fn emit_ratio_report(rows: &[RatioRow], reference: &str, format: OutputFormat) -> String {
    let header: Vec<&str> = CSV_HEADER.iter().copied().filter(|&h| h != "n_l").collect();
    match format {
        OutputFormat::Csv => write_csv(&header, rows.iter().map(|r| ratio_row(r, ""))),
        OutputFormat::Md => {
            let title = format!("Time-cost ratio, per-bus time relative to {reference}.");
            let md: Vec<&str> = MD_HEADER.iter().copied().filter(|&h| h != "n_l").collect();
            write_markdown(&title, &md, rows.iter().map(|r| ratio_row(r, "-")))
        }
    }
}

/// Whether the host can run 256-bit vector instructions.
pub fn host_has_256bit_simd() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn value_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value()
        .map(|p| p.get_name().to_string())
        .unwrap_or_default()
}

/// Human-readable notes that accompany a report: how numbers were
/// aggregated, what each step contains and the informational SIMD check.
pub fn report_notes(t: &[StepTimings], cfg: &BenchConfig) -> Vec<String> {
    let mut notes = vec![format!(
        "timing: minimum over {} repetitions after {} warmup repetitions, nanoseconds, monotonic clock",
        cfg.reps, cfg.warmup
    )];
    let conversion = match cfg.storage {
        Storage::Separate => "includes the separate-to-interleaved conversion",
        Storage::Interleaved => "writes interleaved storage directly",
    };
    notes.push(format!(
        "ybus: phasor = unit phasors and voltages ({conversion}), power = I = Y V and S = V conj(I); \
         derivatives {}, assembly {}; setup of Ybus and positions untimed",
        value_name(cfg.derivatives),
        value_name(cfg.assembly)
    ));
    notes.push(format!(
        "elementwise: power = gather and per-branch injections, pred = bus reduction; \
         reduction {}; setup of constants and scatter plan untimed",
        value_name(cfg.reduction)
    ));
    for s in t {
        if let Some(v) = s.verification {
            notes.push(format!(
                "verification {}: passed, max |dS| = {:.3e}, max |dJ| = {:.3e}",
                s.case, v.max_power, v.max_jacobian
            ));
        }
    }
    let simd = host_has_256bit_simd();
    for s in t.iter().filter(|s| s.n_b >= SIMD_CROSSOVER_BUSES) {
        if let (Some(y), Some(e)) = (s.ybus, s.elementwise) {
            notes.push(format!(
                "informational {}: elementwise power {} ns vs ybus power {} ns, elementwise faster: {}, host 256-bit SIMD: {}",
                s.case,
                e.total_power(),
                y.power_calc,
                if e.total_power() < y.power_calc { "yes" } else { "no" },
                if simd { "yes" } else { "no" },
            ));
        }
    }
    notes.push("hardware counters: run under an external profiler such as `perf stat`".into());
    notes
}
