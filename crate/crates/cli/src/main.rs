use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use plotters::prelude::*;

use tabevo::metrics::{self, MetricSpec};
use tabevo::schema::{load_csv, TableSchema};
use tabevo::toy;
use tabevo::trainer::{self, Checkpoint, PopulationSummary, RunConfig, Selection};

#[derive(Parser)]
#[command(name = "tabevo", version, about = "Privacy-aware tabular data synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a population of generators and write a run directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Run configuration JSON: {"train": {...}, "metrics": {...}}.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Column schema JSON; inferred from the CSV when omitted.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample rows from a checkpoint.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the size of the training data.
        #[arg(long)]
        rows: Option<usize>,
        /// improvement, max_utility, or a population index.
        #[arg(long, default_value = "improvement")]
        selection: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full-size utility and risk report for a synthetic table.
    Evaluate {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        /// Metric spec JSON, or a run configuration containing one.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Training-curve and population-scatter images for a run directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
    /// Write the bundled toy dataset with its schema and configuration.
    Toy {
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            data,
            config,
            out,
            schema,
            epochs,
            seed,
        } => train(&data, &config, &out, schema.as_deref(), epochs, seed),
        Command::Synthesize {
            checkpoint,
            rows,
            selection,
            seed,
            out,
        } => synthesize(&checkpoint, rows, &selection, seed, &out),
        Command::Evaluate {
            original,
            synthetic,
            spec,
            out,
            schema,
        } => evaluate(&original, &synthetic, &spec, &out, schema.as_deref()),
        Command::Plot { run } => plot(&run),
        Command::Toy { rows, seed, out } => write_toy(rows, seed, &out),
    }
}

fn read_schema(path: Option<&Path>) -> Result<Option<TableSchema>> {
    path.map(|p| TableSchema::from_json_file(p).with_context(|| format!("reading schema {}", p.display())))
        .transpose()
}

fn train(
    data: &Path,
    config: &Path,
    out: &Path,
    schema: Option<&Path>,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let schema = read_schema(schema)?;
    let table = load_csv(data, schema.as_ref()).with_context(|| format!("loading {}", data.display()))?;
    let mut run = RunConfig::from_json_file(config).with_context(|| format!("reading {}", config.display()))?;
    if let Some(e) = epochs {
        run.train.epochs = e;
    }
    if let Some(s) = seed {
        run.train.seed = s;
    }
    log::info!(
        "training on {} rows x {} columns for {} epochs",
        table.n_rows(),
        table.n_cols(),
        run.train.epochs
    );
    let outcome = trainer::train(&table, &run.train, &run.metrics, Some(out))?;
    let ckpt = outcome.checkpoint(&run.train, &run.metrics);
    let synthetic = trainer::synthesize(&ckpt, table.n_rows(), run.train.seed, Selection::Improvement)?;
    let report = metrics::evaluate(&table, &synthetic, &run.metrics)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    log::info!(
        "incumbent on full data: utility {:.4}, risk {:.4}",
        report.utility,
        report.risk
    );
    Ok(())
}

fn synthesize(checkpoint: &Path, rows: Option<usize>, selection: &str, seed: u64, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let selection: Selection = selection.parse()?;
    let rows = match rows {
        Some(r) => r,
        None => ckpt
            .model
            .category_counts
            .first()
            .map(|c| c.iter().sum())
            .context("checkpoint has no category counts")?,
    };
    let table = trainer::synthesize(&ckpt, rows, seed, selection)?;
    table.save_csv(out)?;
    log::info!("wrote {rows} rows to {}", out.display());
    Ok(())
}

fn read_metric_spec(path: &Path) -> Result<MetricSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(spec) = serde_json::from_str::<MetricSpec>(&text) {
        return Ok(spec);
    }
    let run: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("{} is neither a metric spec nor a run config", path.display()))?;
    Ok(run.metrics)
}

fn evaluate(original: &Path, synthetic: &Path, spec: &Path, out: &Path, schema: Option<&Path>) -> Result<()> {
    let schema = read_schema(schema)?;
    let orig = load_csv(original, schema.as_ref())?;
    let synth = load_csv(synthetic, Some(orig.schema()))
        .with_context(|| format!("loading {} with the original's schema", synthetic.display()))?;
    let spec = read_metric_spec(spec)?;
    let report = metrics::evaluate(&orig, &synth, &spec)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    fs::write(out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "utility {:.4} (cio {:.4}, roc {:.4}), risk {:.4}",
        report.utility, report.cio, report.roc, report.risk
    );
    Ok(())
}

fn write_toy(rows: usize, seed: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let table = toy::toy_table(rows, seed)?;
    table.save_csv(out.join("toy.csv"))?;
    fs::write(out.join("toy_schema.json"), serde_json::to_string_pretty(table.schema())?)?;
    fs::write(
        out.join("toy_metrics.json"),
        serde_json::to_string_pretty(&toy::toy_metric_spec())?,
    )?;
    let run = RunConfig {
        train: toy::toy_train_config(0),
        metrics: toy::toy_metric_spec(),
    };
    fs::write(out.join("toy_config.json"), serde_json::to_string_pretty(&run)?)?;
    Ok(())
}

struct Curve {
    epoch: f64,
    f_u: f64,
    f_r: f64,
}

fn read_curves(path: &Path) -> Result<Vec<Curve>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .context("short curves row")?
                .parse()
                .with_context(|| format!("bad number in {}", path.display()))
        };
        out.push(Curve {
            epoch: field(0)?,
            f_u: field(1)?,
            f_r: field(2)?,
        });
    }
    Ok(out)
}

fn padded_range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad)..(hi + pad)
}

fn plot(run: &Path) -> Result<()> {
    let curves = read_curves(&run.join("curves.csv"))?;
    if curves.is_empty() {
        bail!("{} has no epochs", run.join("curves.csv").display());
    }
    let curves_svg = run.join("curves.svg");
    {
        let root = SVGBackend::new(&curves_svg, (800, 500)).into_drawing_area();
        root.fill(&WHITE)?;
        let x_max = curves.last().map_or(1.0, |c| c.epoch);
        let y = padded_range(curves.iter().flat_map(|c| [c.f_u, c.f_r]));
        let mut chart = ChartBuilder::on(&root)
            .caption("Training curves", ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..x_max, y)?;
        chart.configure_mesh().x_desc("epoch").draw()?;
        chart
            .draw_series(LineSeries::new(curves.iter().map(|c| (c.epoch, c.f_u)), &BLUE))?
            .label("utility")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
        chart
            .draw_series(LineSeries::new(curves.iter().map(|c| (c.epoch, c.f_r)), &RED))?
            .label("risk")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
        chart.configure_series_labels().border_style(BLACK).draw()?;
        root.present()?;
    }

    let pop_path = run.join("population.json");
    let summary: PopulationSummary = serde_json::from_str(
        &fs::read_to_string(&pop_path).with_context(|| format!("reading {}", pop_path.display()))?,
    )?;
    let mut writer = csv::Writer::from_path(run.join("population.csv"))?;
    writer.write_record(["label", "id", "f_u", "f_r"])?;
    let mut points: Vec<(String, u64, f64, f64)> = summary
        .population
        .iter()
        .map(|p| (format!("population[{}]", p.index), p.id, p.f_u, p.f_r))
        .collect();
    if let Some((id, _, u, r)) = summary.incumbent {
        points.push(("incumbent".into(), id, u, r));
    }
    if let Some((id, _, u, r)) = summary.max_utility {
        points.push(("max_utility".into(), id, u, r));
    }
    for (label, id, u, r) in &points {
        writer.write_record([label.clone(), id.to_string(), u.to_string(), r.to_string()])?;
    }
    writer.flush()?;

    let scatter_svg = run.join("population.svg");
    {
        let root = SVGBackend::new(&scatter_svg, (600, 500)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Population", ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(50)
            .build_cartesian_2d(
                padded_range(points.iter().map(|p| p.3)),
                padded_range(points.iter().map(|p| p.2)),
            )?;
        chart.configure_mesh().x_desc("risk").y_desc("utility").draw()?;
        for (label, colour) in [("population", BLUE), ("incumbent", GREEN), ("max_utility", RED)] {
            chart
                .draw_series(
                    points
                        .iter()
                        .filter(|p| p.0.starts_with(label))
                        .map(|p| Circle::new((p.3, p.2), 5, colour.filled())),
                )?
                .label(label)
                .legend(move |(x, y)| Circle::new((x, y), 5, colour.filled()));
        }
        chart.configure_series_labels().border_style(BLACK).draw()?;
        root.present()?;
    }
    println!(
        "wrote {}, {}, {}",
        curves_svg.display(),
        scatter_svg.display(),
        run.join("population.csv").display()
    );
    Ok(())
}
