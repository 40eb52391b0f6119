use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use amirl_core::panel::{extract_window, read_long_csv, select_balanced_window, write_wide_csv, Availability};
use anyhow::{Context, Result};

pub fn cmd_select_window(
    input: &Path,
    min_length: usize,
    slack: f64,
    require: Vec<String>,
    emit_balanced: Option<&Path>,
    top: Option<usize>,
) -> Result<()> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let table = read_long_csv(BufReader::new(file))?;
    let availability = if require.is_empty() {
        Availability::AnyNonZero
    } else {
        Availability::RequireNonZero(require)
    };
    let ranked = select_balanced_window(&table, min_length, slack, &availability)?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "rank,start_year,end_year,length,n_units,panel_size")?;
    for (i, w) in ranked.iter().take(top.unwrap_or(usize::MAX)).enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            w.start_year,
            w.end_year,
            w.length(),
            w.n_units,
            w.panel_size
        )?;
    }
    if let Some(path) = emit_balanced {
        let panel = extract_window(&table, &ranked[0], &availability)?;
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        write_wide_csv(&mut w, &panel, None, None)?;
        w.flush()?;
        log::info!(
            "wrote {} units x {} years to {}",
            panel.n_units(),
            panel.n_periods(),
            path.display()
        );
    }
    Ok(())
}
