use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use attnmosaic::curvefit::{fit_theta, FitDocument, PointSet};
use attnmosaic::experiment::{run_attn_trial, run_kv, KvParams};
use attnmosaic::mosaic::{
    compose, export_knowledge, ingest_tiles, load_target, plan_grid, render_and_emit, TileRecord,
};
use attnmosaic::prflash::AttnConfig;
use serde::Serialize;

use crate::error::CliError;
use crate::{AttnArgs, Cli, Command, ComposeArgs, ExportArgs, FitArgs, Format, KvArgs};

// Thumbnail size used when tiles are only needed for their ids and names.
const EXPORT_THUMB_SIZE: u32 = 8;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Compose(a) => cmd_compose(cli, a),
        Command::Attn(a) => cmd_attn(cli, a),
        Command::Kv(a) => cmd_kv(cli, a),
        Command::Fit(a) => cmd_fit(cli, a),
        Command::ExportKnowledge(a) => cmd_export_knowledge(cli, a),
    }
}

fn require_out(cli: &Cli) -> Result<&Path, CliError> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::new("usage", "--out is required for this command"))
}

/// Report sink: the `--out` file when given, stdout otherwise.
fn report_sink(cli: &Cli) -> Result<Box<dyn Write>, CliError> {
    Ok(match &cli.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Box::new(BufWriter::new(File::create(path)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn record_line<T: Serialize>(out: &mut dyn Write, rec: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, rec)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn fmt_time(t: Option<f64>) -> String {
    t.map_or_else(|| "-".to_string(), |s| format!("{:.3} ms", s * 1e3))
}

/// Reads `file name,text` rows (CSV, `#` comments) and resolves names to tile ids.
fn load_knowledge(path: &Path, tiles: &[TileRecord]) -> Result<BTreeMap<usize, String>, CliError> {
    let by_name: BTreeMap<String, usize> = tiles.iter().map(|t| (t.file_name(), t.id)).collect();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CliError::new("input", format!("{}: {e}", path.display())))?;
        if row.len() != 2 {
            return Err(CliError::new(
                "input",
                format!("{} record {}: expected 2 columns, found {}", path.display(), idx + 1, row.len()),
            ));
        }
        let id = by_name.get(&row[0]).ok_or_else(|| {
            CliError::new("validation", format!("knowledge names unknown tile file {:?}", &row[0]))
        })?;
        map.insert(*id, row[1].to_string());
    }
    Ok(map)
}

#[derive(Serialize)]
struct ComposeSummary {
    record: &'static str,
    rows: u32,
    cols: u32,
    tile_size: u32,
    tiles: usize,
    skipped: usize,
    cells: usize,
    distinct_tiles_used: usize,
    mean_score: f64,
    bundle: String,
    elapsed_s: Option<f64>,
}

fn cmd_compose(cli: &Cli, a: &ComposeArgs) -> Result<(), CliError> {
    let out_dir = require_out(cli)?;
    let ingested = ingest_tiles(&a.tiles, a.tile_size)?;
    for skip in &ingested.skipped {
        eprintln!("warning[skipped]: {}: {}", skip.path.display(), skip.reason);
    }
    let tiles = ingested.tiles;
    let target = load_target(&a.target)?;
    let skeleton = plan_grid(target.width(), target.height(), a.tile_size, a.rows, a.cols)?;
    let knowledge = match &a.knowledge {
        Some(p) => load_knowledge(p, &tiles)?,
        None => BTreeMap::new(),
    };

    let start = Instant::now();
    let grid = compose(&target, &tiles, &skeleton)?;
    let elapsed = start.elapsed().as_secs_f64();

    let bundle = render_and_emit(&grid, &tiles, &knowledge, out_dir)?;
    let summary = ComposeSummary {
        record: "compose",
        rows: grid.rows,
        cols: grid.cols,
        tile_size: grid.tile_size,
        tiles: tiles.len(),
        skipped: ingested.skipped.len(),
        cells: grid.cells.len(),
        distinct_tiles_used: bundle.metadata.tiles.len(),
        mean_score: grid.mean_score(),
        bundle: out_dir.display().to_string(),
        elapsed_s: (!cli.no_timing).then_some(elapsed),
    };
    let mut stdout = io::stdout().lock();
    match cli.format {
        Format::Records => record_line(&mut stdout, &summary)?,
        Format::Human => writeln!(
            stdout,
            "composed {}x{} grid (tile {} px) from {} tiles ({} skipped), {} distinct used\nmean score {:.6}, compose time {}\nbundle written to {}",
            summary.rows,
            summary.cols,
            summary.tile_size,
            summary.tiles,
            summary.skipped,
            summary.distinct_tiles_used,
            summary.mean_score,
            fmt_time(summary.elapsed_s),
            summary.bundle
        )?,
    }
    Ok(())
}

fn cmd_attn(cli: &Cli, a: &AttnArgs) -> Result<(), CliError> {
    if a.trials == 0 {
        return Err(CliError::new("usage", "--trials must be at least 1"));
    }
    let base = AttnConfig {
        context_length: a.seq_len,
        head_dim: a.head_dim,
        block_rows: a.block_r,
        block_cols: a.block_c,
        threshold_range: a.k,
        weight: a.w,
        target_drop: a.sparsity,
        seed: cli.seed,
        causal: a.causal,
    };
    base.validate()?;
    let mut out = report_sink(cli)?;
    for trial in 0..a.trials {
        let cfg = AttnConfig {
            seed: cli.seed.wrapping_add(trial as u64),
            ..base.clone()
        };
        let rec = run_attn_trial(&cfg, trial, !cli.no_timing)?;
        match cli.format {
            Format::Records => record_line(&mut out, &rec)?,
            Format::Human => writeln!(
                out,
                "trial {:>3} seed {}: kept rows {:.3} cols {:.3}, max |sparse-dense| {:.3e}, dense {}, sparse {}",
                rec.trial,
                rec.seed,
                rec.kept_row_fraction,
                rec.kept_col_fraction,
                rec.max_abs_diff_vs_dense,
                fmt_time(rec.wall_time_dense),
                fmt_time(rec.wall_time_sparse)
            )?,
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_kv(cli: &Cli, a: &KvArgs) -> Result<(), CliError> {
    let params = KvParams {
        prompt_len: a.prompt_len,
        gen_len: a.gen_len,
        segment_size: a.segment,
        group_size: a.group,
        ladder: a.bits.clone(),
        dim: a.dim,
        seed: cli.seed,
    };
    let run = run_kv(&params, !cli.no_timing)?;
    let mut out = report_sink(cli)?;
    match cli.format {
        Format::Records => {
            for step in &run.steps {
                record_line(&mut out, step)?;
            }
            record_line(&mut out, &run.summary)?;
        }
        Format::Human => {
            for s in &run.steps {
                writeln!(
                    out,
                    "step {:>4}: max |err| {:.3e}, mean |err| {:.3e}, cache {} / {} bits",
                    s.step, s.max_abs_err, s.mean_abs_err, s.theoretical_cache_bits, s.baseline_cache_bits
                )?;
            }
            let s = &run.summary;
            writeln!(
                out,
                "ladder {:?}, S={}, G={}: prompt {} + {} generated\nprefill cache {} / {} bits, final cache {} / {} bits (ratio {:.4})\nmax |err| {:.3e}, mean |err| {:.3e}, saq {}, baseline {}",
                s.ladder,
                s.segment_size,
                s.group_size,
                s.l_prompt,
                s.gen_len,
                s.prefill_cache_bits,
                s.prefill_baseline_bits,
                s.theoretical_cache_bits,
                s.baseline_cache_bits,
                s.cache_bits_ratio,
                s.max_abs_err,
                s.mean_abs_err,
                fmt_time(s.wall_time_saq),
                fmt_time(s.wall_time_baseline)
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_fit(cli: &Cli, a: &FitArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.points)
        .map_err(|e| CliError::new("io", format!("{}: {e}", a.points.display())))?;
    let points = PointSet::parse(&text)?;
    let report = fit_theta(&points, None)?;
    let doc = FitDocument::from(&report);
    if let Some(path) = &cli.out {
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(path, text)?;
    }
    let mut stdout = io::stdout().lock();
    match cli.format {
        Format::Records => record_line(&mut stdout, &doc)?,
        Format::Human => writeln!(
            stdout,
            "a1 = {}\na2 = {}\na3 = {}\na4 = {}\nresidual = {:e} after {} iterations",
            doc.a1, doc.a2, doc.a3, doc.a4, doc.residual, doc.iterations
        )?,
    }
    Ok(())
}

fn cmd_export_knowledge(cli: &Cli, a: &ExportArgs) -> Result<(), CliError> {
    let out = require_out(cli)?;
    let ingested = ingest_tiles(&a.tiles, EXPORT_THUMB_SIZE)?;
    let knowledge = load_knowledge(&a.knowledge, &ingested.tiles)?;
    let pack = export_knowledge(&ingested.tiles, &knowledge, out)?;
    let filled = pack.records.iter().filter(|r| !r.knowledge.is_empty()).count();
    let mut stdout = io::stdout().lock();
    match cli.format {
        Format::Records => record_line(
            &mut stdout,
            &serde_json::json!({
                "record": "knowledge_pack",
                "records": pack.records.len(),
                "with_knowledge": filled,
                "out": out.display().to_string(),
            }),
        )?,
        Format::Human => writeln!(
            stdout,
            "wrote {} records ({} with knowledge) to {}",
            pack.records.len(),
            filled,
            out.display()
        )?,
    }
    Ok(())
}
