//! Experiment runner behind the `propchaos` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod plotdata;

use std::path::{Path, PathBuf};

use config::{parse_lines, parse_override, Config};
pub use error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.cfg";
pub const PLOTDATA_MANIFEST: &str = "plotdata.manifest";

fn write(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
}

/// Resolves the config from a file and `key=value` overrides.
pub fn load(config: Option<&Path>, sets: &[String]) -> CliResult<Config> {
    let file = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            parse_lines(&text)?
        }
        None => Vec::new(),
    };
    let overrides = sets.iter().map(|s| parse_override(s)).collect::<CliResult<Vec<_>>>()?;
    Config::resolve(&file, &overrides)
}

/// Runs the command and writes its outputs plus `manifest.cfg` into the
/// output directory (`--out`, else the `out` key, else the working directory).
pub fn run(cfg: &Config, out: Option<&Path>) -> CliResult<PathBuf> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let outputs = commands::dispatch(cfg)?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for (name, bytes) in &outputs {
        write(&dir, name, bytes)?;
    }
    let names: Vec<&str> = outputs.iter().map(|(n, _)| *n).collect();
    let manifest = format!(
        "# propchaos-cli {}\n# outputs: {}\n{}",
        env!("CARGO_PKG_VERSION"),
        names.join(" "),
        cfg.render()
    );
    write(&dir, MANIFEST, manifest.as_bytes())?;
    Ok(dir)
}

/// Writes `plot.dat`, `fit.dat` and `plotdata.manifest` for a report.
pub fn emit_plotdata(report: &Path, out: &Path) -> CliResult<plotdata::PlotData> {
    let data = plotdata::read_report(report)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write(out, "plot.dat", data.table().as_bytes())?;
    write(out, "fit.dat", data.coefficients().as_bytes())?;
    let manifest = format!(
        "# propchaos-cli {}\nreport = {}\ndropped = {}\n",
        env!("CARGO_PKG_VERSION"),
        report.display(),
        data.dropped
    );
    write(out, PLOTDATA_MANIFEST, manifest.as_bytes())?;
    Ok(data)
}
