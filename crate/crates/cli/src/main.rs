mod manifest;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use manifest::{build_image, Manifest, Program, RunPlan};
use pimsim_core::config::{RunConfig, CONFIG_ENV};
use pimsim_core::frontend::{assemble, disassemble, link, LinkOptions, MemoryImage, ObjectFile};
use pimsim_core::kernels::Kernel;
use pimsim_core::report::{self, RunReport};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pimsim", version, about = "Cycle-level simulator and toolchain for UPMEM-style PIM DPUs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble one source file into a JSON object file.
    Asm {
        source: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Link sources (.s) and/or object files into a program image.
    Link {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Tasklets whose stacks are reserved in WRAM.
        #[arg(long, default_value_t = 16)]
        threads: u32,
        /// Spill WRAM sections that do not fit into MRAM-backed space.
        #[arg(long)]
        allow_overflow: bool,
        /// Move a WRAM section into MRAM-backed space (repeatable).
        #[arg(long = "relocate", value_name = "SECTION")]
        relocations: Vec<String>,
    },
    /// Print the disassembly of a program image.
    Disasm { image: PathBuf },
    /// Run a bundled kernel or a manifest and write the results JSON.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Results JSON path; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Render results JSON files as CSV tables.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Table::Summary)]
        table: Table,
    },
    /// Run once per value of one parameter and print a CSV table.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// threads, dpus, scale, seed, mram-scale, ilp, simt, or any dotted config key.
        #[arg(long)]
        axis: String,
        /// Comma-separated values (`none` means no ILP knobs).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_enum, default_value_t = Table::Summary)]
        table: Table,
    },
    /// List the bundled kernels.
    Kernels,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Bundled kernel (VA, RED, BS, HST, GEMV, SCAN).
    #[arg(long, conflicts_with = "manifest")]
    kernel: Option<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    dpus: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Problem size (elements, queries, or GEMV rows).
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Configuration file of dotted keys.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Cumulative ILP knobs, e.g. DRSF.
    #[arg(long)]
    ilp: Option<String>,
    /// SIMT lanes per group.
    #[arg(long)]
    simt: Option<usize>,
    /// Coalesce SIMT lane accesses.
    #[arg(long)]
    coalescing: bool,
    #[arg(long)]
    mmu: bool,
    /// Cache-based kernel variants with hardware caches.
    #[arg(long)]
    cache: bool,
    /// Multiply MRAM bandwidth.
    #[arg(long)]
    mram_scale: Option<u64>,
    /// Override one config key (repeatable), e.g. core.revolver=8.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Table {
    Summary,
    Phases,
    Mix,
    Tlp,
    TlpSeries,
}

impl Table {
    fn render(self, runs: &[RunReport]) -> String {
        match self {
            Table::Summary => report::summary_csv(runs),
            Table::Phases => report::phases_csv(runs),
            Table::Mix => report::mix_csv(runs),
            Table::Tlp => report::tlp_histogram_csv(runs),
            Table::TlpSeries => report::tlp_series_csv(runs),
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Asm { source, out } => {
            let obj = assemble_file(&source)?;
            let out = out.unwrap_or_else(|| source.with_extension("obj.json"));
            std::fs::write(&out, serde_json::to_string_pretty(&obj)? + "\n")
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Cmd::Link { inputs, out, threads, allow_overflow, relocations } => {
            let mut objects = Vec::new();
            for p in &inputs {
                objects.push(load_object(p)?);
            }
            let cfg = RunConfig::from_env()?;
            let image = link(&objects, &cfg.map, &LinkOptions { allow_overflow, relocations, threads })?;
            image.emit(&out)?;
        }
        Cmd::Disasm { image } => print!("{}", disassemble(&MemoryImage::load(&image)?)),
        Cmd::Run { run, out } => {
            let report = plan_from(&run)?.execute()?;
            let json = report.to_json();
            match out {
                Some(p) => std::fs::write(&p, &json).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{json}"),
            }
            eprintln!(
                "{} {}x{}: {} in {} cycles ({:.3} us kernel, {:.3} us total)",
                report.kernel,
                report.dpus,
                report.threads,
                if report.passed { "pass" } else { "MISMATCH" },
                report.kernel_cycles,
                report.kernel_seconds * 1e6,
                report.total_seconds * 1e6
            );
            if let Some(m) = &report.mismatch {
                eprintln!("first mismatch at word {}: expected {:?}, got {:?}", m.index, m.expected, m.got);
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Report { results, table } => {
            let mut runs = Vec::new();
            for p in &results {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                runs.push(RunReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))?);
            }
            print!("{}", table.render(&runs));
        }
        Cmd::Sweep { run, axis, values, table } => {
            let (csv, all_passed) = sweep(&run, &axis, &values, table)?;
            print!("{csv}");
            if !all_passed {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Kernels => {
            for k in Kernel::ALL {
                println!("{:5} {:>6}  {}", k.name(), k.default_scale(), k.description());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn assemble_file(path: &Path) -> Result<ObjectFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(assemble(&text, &path.display().to_string())?)
}

fn load_object(path: &Path) -> Result<ObjectFile> {
    if path.extension().is_some_and(|e| e == "s") {
        return assemble_file(path);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not an object file", path.display()))
}

/// Layer the configuration (defaults, file, manifest, flags) and pick the program.
fn plan_from(args: &RunArgs) -> Result<RunPlan> {
    let manifest = match &args.manifest {
        Some(p) => Manifest::load(p)?,
        None => Manifest::default(),
    };
    let mut cfg = match &args.config {
        Some(p) if !p.as_os_str().is_empty() => RunConfig::from_file(p)?,
        _ => RunConfig::default(),
    };
    if let Some(c) = &manifest.config {
        cfg.merge_json(&c.to_string())?;
    }
    if let Some(k) = &args.ilp {
        cfg.apply_ilp(k)?;
    }
    if let Some(l) = args.simt {
        cfg.core.simt.lanes = l;
    }
    if args.coalescing {
        cfg.core.simt.coalescing = true;
    }
    if args.mmu {
        cfg.mmu.enabled = true;
    }
    if args.cache {
        cfg.cache.enabled = true;
    }
    if let Some(s) = args.mram_scale {
        cfg.memsys.dma.scale = s;
    }
    for kv in &args.sets {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set_str(k.trim(), v.trim())?;
    }
    cfg.validate()?;

    let dpus = args.dpus.or(manifest.dpus).unwrap_or(1);
    let threads = args.threads.or(manifest.threads).unwrap_or(16);
    let kernel = args.kernel.as_ref().or(manifest.kernel.as_ref());
    let program = match (kernel, &manifest.image, manifest.sources.is_empty()) {
        (Some(k), None, true) => Program::Kernel(k.parse()?),
        (None, Some(img), true) => image_program(MemoryImage::load(img)?, img, &manifest),
        (None, None, false) => {
            let opts = LinkOptions::default();
            let image = build_image(&manifest.sources, threads, &cfg, opts)?;
            image_program(image, &manifest.sources[0], &manifest)
        }
        (None, None, true) => bail!("nothing to run: give --kernel or a manifest"),
        _ => bail!("a manifest names exactly one of kernel, image or sources"),
    };
    Ok(RunPlan { program, dpus, threads, scale: args.scale.or(manifest.scale), seed: args.seed.or(manifest.seed).unwrap_or(1), config: cfg })
}

fn image_program(image: MemoryImage, path: &Path, m: &Manifest) -> Program {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    Program::Image {
        name,
        image: Box::new(image),
        inputs: m.inputs.clone(),
        launches: m.launches.unwrap_or(1),
        outputs: m.outputs.clone(),
    }
}

/// One run per value, in the order given. The first two columns name the
/// axis and the value.
fn sweep(base: &RunArgs, axis: &str, values: &[String], table: Table) -> Result<(String, bool)> {
    let mut out = String::new();
    let mut all_passed = true;
    for (i, v) in values.iter().enumerate() {
        let mut args = base.clone();
        let parse = |what: &str| -> Result<usize> { v.parse().with_context(|| format!("bad {what} value `{v}`")) };
        match axis {
            "threads" => args.threads = Some(parse("threads")?),
            "dpus" => args.dpus = Some(parse("dpus")?),
            "scale" => args.scale = Some(parse("scale")?),
            "seed" => args.seed = Some(parse("seed")? as u64),
            "mram-scale" => args.mram_scale = Some(parse("mram-scale")? as u64),
            "simt" => args.simt = Some(parse("simt")?),
            "ilp" => {
                let knobs = if v.eq_ignore_ascii_case("none") { "" } else { v.as_str() };
                let prior = args.ilp.take().unwrap_or_default();
                args.ilp = Some(prior + knobs);
            }
            key => args.sets.push(format!("{key}={v}")),
        }
        let report = plan_from(&args)?.execute()?;
        all_passed &= report.passed;
        let csv = table.render(std::slice::from_ref(&report));
        for (j, line) in csv.lines().enumerate() {
            if j == 0 {
                if i == 0 {
                    out += &format!("axis,value,{line}\n");
                }
            } else {
                out += &format!("{axis},{v},{line}\n");
            }
        }
    }
    Ok((out, all_passed))
}
