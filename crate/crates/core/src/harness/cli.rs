use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::checkpoint::{load_checkpoint, read_manifest, save_checkpoint};
use super::config::TrainConfig;
use super::metrics::write_metrics_csv;
use super::train::train;
use crate::analysis::{compare_flops, compare_speed, BenchOptions};
use crate::error::Error;
use crate::model::{model_grad_check, ArchSpec, Model};
use crate::prune::{extract_compact, hard_prune, MaskState, PruneConfig, PruneMode, Rounding};
use crate::tensor::gradcheck::{layer_suite, GradCheckOptions};

pub const USAGE: &str = "\
usage: filterprune <command> [flags]

commands:
  train     --config <file> [--out <dir>]
  extract   --checkpoint <manifest> --mask <file> --out <manifest>
  flops     --arch <json|file> [--mask <file> | --rate <P>] [--rounding prune-floor|keep-floor] [--json]
  bench     (--checkpoint <manifest> | --arch <json|file> --rate <P> [--rounding ...])
            [--batch N] [--reps R] [--warmup W] [--threads T] [--seed S] [--json]
  gradcheck [--seed S]

exit status: 0 success, 1 usage error, 2 runtime error
";

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

struct Flags {
    values: BTreeMap<String, String>,
    switches: Vec<String>,
}

impl Flags {
    fn parse(args: &[String], valued: &[&str], switches: &[&str]) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        let mut on = Vec::new();
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let name = a
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("unexpected argument `{a}`")))?;
            if valued.contains(&name) {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{name} needs a value")))?;
                values.insert(name.to_string(), v.clone());
            } else if switches.contains(&name) {
                on.push(name.to_string());
            } else {
                return Err(CliError::Usage(format!("unknown flag `{a}`")));
            }
        }
        Ok(Self { values, switches: on })
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    fn require(&self, name: &str) -> CliResult<&str> {
        self.get(name)
            .ok_or_else(|| CliError::Usage(format!("missing required flag --{name}")))
    }

    fn num<T: std::str::FromStr>(&self, name: &str, default: T) -> CliResult<T> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("--{name}: cannot parse `{v}`"))),
        }
    }

    fn on(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }
}

/// Inline JSON, or a path to a JSON file.
fn parse_arch(arg: &str) -> CliResult<ArchSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| Error::io(arg, e))?
    };
    let arch: ArchSpec = serde_json::from_str(&text).map_err(Error::from)?;
    arch.validate()?;
    Ok(arch)
}

fn parse_rounding(flags: &Flags) -> CliResult<Rounding> {
    match flags.get("rounding") {
        None => Ok(Rounding::default()),
        Some(r) => serde_json::from_value(serde_json::Value::String(r.to_string()))
            .map_err(|_| CliError::Usage(format!("--rounding: unknown value `{r}`"))),
    }
}

fn read_mask(path: &str) -> CliResult<MaskState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MaskState::from_json(&text).map_err(|e| CliError::Run(Error::format(path, e.to_string())))
}

/// Builds a random-weight model from `arch` and its pruned counterpart.
fn pruned_pair(flags: &Flags, arch: &ArchSpec) -> CliResult<(Model<f32>, Model<f32>)> {
    let full: Model<f32> = Model::from_arch(arch, flags.num("seed", 0u64)?)?;
    if let Some(mask) = flags.get("mask") {
        if flags.get("rate").is_some() {
            return Err(CliError::Usage("--mask and --rate are exclusive".into()));
        }
        let compact = extract_compact(&full, &read_mask(mask)?)?;
        return Ok((full, compact.model));
    }
    let rate: f64 = flags.num("rate", 0.0)?;
    let cfg = PruneConfig {
        rounding: parse_rounding(flags)?,
        ..PruneConfig::new(PruneMode::Hard, rate, 1)
    };
    let (compact, _) = hard_prune(&full, &cfg)?;
    Ok((full, compact.model))
}

fn cmd_train(args: &[String], out: &mut dyn Write) -> CliResult {
    let flags = Flags::parse(args, &["config", "out"], &[])?;
    let cfg = TrainConfig::load(Path::new(flags.require("config")?))?;
    let dir = PathBuf::from(flags.get("out").unwrap_or("run"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let res = train(&cfg)?;
    write_metrics_csv(&res.metrics, &dir.join("metrics.csv"))?;
    let mask_path = dir.join("mask.json");
    std::fs::write(&mask_path, res.mask.to_json()?).map_err(|e| Error::io(&mask_path, e))?;
    save_checkpoint(&res.model, Some(&res.mask), &dir.join("model.json"))?;
    save_checkpoint(&res.compact.model, None, &dir.join("compact.json"))?;
    let report = compare_flops(&res.model, &res.compact.model)?;
    let _ = writeln!(
        out,
        "epochs {}  final compact accuracy {:.4}  pruned filters {}  FLOPs reduced {:.2}%  outputs in {}",
        cfg.epochs,
        res.final_accuracy,
        res.mask.pruned_count(),
        100.0 * report.pruned_ratio,
        dir.display()
    );
    Ok(())
}

fn cmd_extract(args: &[String], out: &mut dyn Write) -> CliResult {
    let flags = Flags::parse(args, &["checkpoint", "mask", "out"], &[])?;
    let (model, _) = load_checkpoint(Path::new(flags.require("checkpoint")?))?;
    let mask = read_mask(flags.require("mask")?)?;
    let dest = PathBuf::from(flags.require("out")?);
    let compact = extract_compact(&model, &mask)?;
    save_checkpoint(&compact.model, None, &dest)?;
    let _ = writeln!(
        out,
        "extracted {} filters: {} -> {} parameters, written to {}",
        mask.pruned_count(),
        model.param_count(),
        compact.model.param_count(),
        dest.display()
    );
    Ok(())
}

fn cmd_flops(args: &[String], out: &mut dyn Write) -> CliResult {
    let flags = Flags::parse(args, &["arch", "mask", "rate", "rounding", "seed"], &["json"])?;
    let arch = parse_arch(flags.require("arch")?)?;
    let (full, pruned) = pruned_pair(&flags, &arch)?;
    let report = compare_flops(&full, &pruned)?;
    if flags.on("json") {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
    } else {
        let _ = write!(out, "{}", report.to_table());
        let _ = writeln!(out, "pruned ratio {:.2}%", 100.0 * report.pruned_ratio);
    }
    Ok(())
}

fn cmd_bench(args: &[String], out: &mut dyn Write) -> CliResult {
    let flags = Flags::parse(
        args,
        &["checkpoint", "arch", "mask", "rate", "rounding", "batch", "reps", "warmup", "threads", "seed"],
        &["json"],
    )?;
    let (baseline, pruned) = match flags.get("checkpoint") {
        Some(p) => {
            let manifest = read_manifest(Path::new(p))?;
            let (m, _) = load_checkpoint(Path::new(p))?;
            (Model::from_arch(&manifest.arch, 0)?, m)
        }
        None => pruned_pair(&flags, &parse_arch(flags.require("arch")?)?)?,
    };
    let opts = BenchOptions {
        batch: flags.num("batch", 16)?,
        reps: flags.num("reps", 5)?,
        warmup: flags.num("warmup", 1)?,
        threads: flags.num("threads", 1)?,
        seed: flags.num("seed", 0)?,
    };
    if opts.reps < 3 {
        return Err(CliError::Usage("--reps must be at least 3".into()));
    }
    let report = compare_speed(&baseline, &pruned, &opts)?;
    if flags.on("json") {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
    } else {
        let _ = write!(out, "{}", report.to_table());
    }
    Ok(())
}

fn cmd_gradcheck(args: &[String], out: &mut dyn Write) -> CliResult {
    let flags = Flags::parse(args, &["seed"], &[])?;
    let seed = flags.num("seed", 0u64)?;
    let mut ok = true;
    for c in layer_suite(seed, 1e-5)? {
        let pass = c.max_rel_error < 1e-4;
        ok &= pass;
        let _ = writeln!(out, "{:<24} {:.3e}  {}", c.name, c.max_rel_error, if pass { "ok" } else { "FAIL" });
    }
    let arch = ArchSpec::resnet(1, &[2, 4, 4], [3, 8, 8], 5);
    let opts = GradCheckOptions {
        max_coords: Some(12),
        seed,
        ..GradCheckOptions::default()
    };
    let err = model_grad_check(&arch, 3, seed, opts)?;
    let pass = err < 1e-3;
    ok &= pass;
    let _ = writeln!(out, "{:<24} {:.3e}  {}", "model_resnet_n1", err, if pass { "ok" } else { "FAIL" });
    if ok {
        Ok(())
    } else {
        Err(CliError::Run(Error::Numeric("gradient check above tolerance".into())))
    }
}

/// Runs one command line (without the program name), writing normal output
/// to `out` and diagnostics to `err`. Returns the exit status.
pub fn run_cli_with(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some((cmd, rest)) = args.split_first() else {
        let _ = write!(err, "{USAGE}");
        return 1;
    };
    let res = match cmd.as_str() {
        "train" => cmd_train(rest, out),
        "extract" => cmd_extract(rest, out),
        "flops" => cmd_flops(rest, out),
        "bench" => cmd_bench(rest, out),
        "gradcheck" => cmd_gradcheck(rest, out),
        "help" | "--help" | "-h" => {
            let _ = write!(out, "{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    };
    match res {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n");
            let _ = write!(err, "{USAGE}");
            1
        }
        Err(CliError::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

pub fn run_cli(args: &[String]) -> i32 {
    run_cli_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
