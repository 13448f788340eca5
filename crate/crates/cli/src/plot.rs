//! Static SVG charts from the CSV files the other commands emit.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use plotters::prelude::*;

/// A parsed CSV: header names plus rows of raw fields.
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .filter(|l| !l.trim().is_empty())
            .ok_or_else(|| anyhow!("{}: empty CSV", path.display()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if row.len() != header.len() {
                bail!(
                    "{}:{}: expected {} fields, found {}",
                    path.display(),
                    lineno + 2,
                    header.len(),
                    row.len()
                );
            }
            rows.push(row);
        }
        if rows.is_empty() {
            bail!("{}: no data rows", path.display());
        }
        Ok(Csv { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("CSV has no '{name}' column (header: {:?})", self.header))
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.column_index(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[idx]
                    .parse::<f64>()
                    .map_err(|e| anyhow!("bad number '{}' in column '{name}': {e}", r[idx]))
            })
            .collect()
    }
}

const SIZE: (u32, u32) = (960, 640);
const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

fn span(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Draws labeled line series over a shared x axis.
fn line_chart(
    out: &Path,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    x: &[f64],
    series: &[(String, Vec<f64>)],
    log_y: bool,
) -> Result<()> {
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let (x_lo, x_hi) = span(x);
    let all_y: Vec<f64> = series.iter().flat_map(|(_, ys)| ys.iter().copied()).collect();
    let (mut y_lo, y_hi) = span(&all_y);
    if log_y {
        y_lo = all_y
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min)
            / 2.0;
    }

    macro_rules! draw_with {
        ($chart:expr) => {{
            let mut chart = $chart;
            chart
                .configure_mesh()
                .x_desc(x_desc)
                .y_desc(y_desc)
                .draw()
                .map_err(|e| anyhow!("{e}"))?;
            for (i, (name, ys)) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                chart
                    .draw_series(LineSeries::new(
                        x.iter().copied().zip(ys.iter().copied()),
                        color.stroke_width(2),
                    ))
                    .map_err(|e| anyhow!("{e}"))?
                    .label(name.clone())
                    .legend(move |(px, py)| {
                        PathElement::new(vec![(px, py), (px + 18, py)], color.stroke_width(2))
                    });
            }
            chart
                .configure_series_labels()
                .border_style(BLACK)
                .background_style(WHITE.mix(0.85))
                .draw()
                .map_err(|e| anyhow!("{e}"))?;
        }};
    }

    let mut builder = ChartBuilder::on(&root);
    builder
        .caption(title, ("sans-serif", 26))
        .margin(14)
        .x_label_area_size(44)
        .y_label_area_size(70);
    if log_y {
        draw_with!(builder
            .build_cartesian_2d(x_lo..x_hi, (y_lo..y_hi).log_scale())
            .map_err(|e| anyhow!("{e}"))?);
    } else {
        draw_with!(builder
            .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
            .map_err(|e| anyhow!("{e}"))?);
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// Training log: per-epoch train loss and validation MAE.
pub fn plot_loss(input: &Path, out: &Path) -> Result<()> {
    let csv = Csv::load(input)?;
    let epochs = csv.numeric_column("epoch")?;
    let series = vec![
        ("train loss".to_string(), csv.numeric_column("train_loss")?),
        ("val MAE".to_string(), csv.numeric_column("val_mae")?),
    ];
    line_chart(out, "Training curves", "epoch", "raw-scale error", &epochs, &series, false)
}

/// Per-horizon metric breakdown from an eval run.
pub fn plot_horizons(input: &Path, out: &Path) -> Result<()> {
    let csv = Csv::load(input)?;
    let h = csv.numeric_column("horizon")?;
    let series = vec![
        ("MAE".to_string(), csv.numeric_column("mae")?),
        ("RMSE".to_string(), csv.numeric_column("rmse")?),
    ];
    line_chart(out, "Error by horizon", "horizon step", "error", &h, &series, false)
}

/// Prediction vs truth per node from the predict command.
pub fn plot_predictions(input: &Path, out: &Path) -> Result<()> {
    let csv = Csv::load(input)?;
    let nodes = csv.numeric_column("node")?;
    let steps = csv.numeric_column("step")?;
    let truth = csv.numeric_column("truth")?;
    let pred = csv.numeric_column("prediction")?;

    let mut ids: Vec<i64> = nodes.iter().map(|&n| n as i64).collect();
    ids.sort_unstable();
    ids.dedup();

    let mut x = Vec::new();
    let mut series = Vec::new();
    for &id in &ids {
        let mut t_line = Vec::new();
        let mut p_line = Vec::new();
        let mut xs = Vec::new();
        for i in 0..nodes.len() {
            if nodes[i] as i64 == id {
                xs.push(steps[i]);
                t_line.push(truth[i]);
                p_line.push(pred[i]);
            }
        }
        if x.is_empty() {
            x = xs;
        }
        series.push((format!("node {id} truth"), t_line));
        series.push((format!("node {id} predicted"), p_line));
    }
    line_chart(out, "Prediction vs truth", "horizon step", "traffic", &x, &series, false)
}

/// MAC/memory scaling from the bench command; log-scale y over whichever
/// of the node count / horizon sweeps actually varies.
pub fn plot_macs(input: &Path, out: &Path) -> Result<()> {
    let csv = Csv::load(input)?;
    let n = csv.numeric_column("n")?;
    let t_p = csv.numeric_column("t_p")?;
    let macs = csv.numeric_column("macs_per_epoch")?;
    let mode_idx = csv.column_index("mode")?;

    let n_varies = n.iter().any(|&v| v != n[0]);
    let (x_all, x_desc) = if n_varies {
        (n, "nodes")
    } else {
        (t_p, "prediction horizon")
    };

    let mut modes: Vec<String> = csv.rows.iter().map(|r| r[mode_idx].clone()).collect();
    modes.sort();
    modes.dedup();
    let mut series = Vec::new();
    let mut x = Vec::new();
    for mode in &modes {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, row) in csv.rows.iter().enumerate() {
            if &row[mode_idx] == mode {
                xs.push(x_all[i]);
                ys.push(macs[i]);
            }
        }
        if x.is_empty() {
            x = xs;
        }
        series.push((format!("{mode} MACs/epoch"), ys));
    }
    line_chart(out, "MAC scaling", x_desc, "MACs per epoch", &x, &series, true)
}
