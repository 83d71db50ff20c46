use std::fmt::Write as _;
use std::path::Path;

use super::RetrievalError;
use crate::training::EpochRecord;

/// Per-epoch means over the runs of one training register.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCurve {
    pub register: String,
    pub n_runs: usize,
    pub points: Vec<EpochRecord>,
}

fn epochs(log: &[EpochRecord]) -> Vec<usize> {
    log.iter().map(|r| r.epoch).collect()
}

/// Average each group of runs epoch by epoch. Every log, in every group,
/// must cover the same epochs.
pub fn trajectory_report(groups: &[(String, Vec<Vec<EpochRecord>>)]) -> Result<Vec<TrajectoryCurve>, RetrievalError> {
    let reference = groups
        .iter()
        .flat_map(|(_, logs)| logs.first())
        .next()
        .map(|log| epochs(log))
        .ok_or(RetrievalError::NoRuns)?;
    if reference.is_empty() {
        return Err(RetrievalError::EpochMismatch("empty log".into()));
    }
    groups
        .iter()
        .map(|(register, logs)| {
            if logs.is_empty() {
                return Err(RetrievalError::NoRuns);
            }
            for (i, log) in logs.iter().enumerate() {
                if epochs(log) != reference {
                    return Err(RetrievalError::EpochMismatch(format!(
                        "{register} run {} covers epochs {:?}, expected {:?}",
                        i + 1,
                        epochs(log),
                        reference
                    )));
                }
            }
            let n = logs.len() as f64;
            let points = (0..reference.len())
                .map(|e| {
                    let avg = |f: fn(&EpochRecord) -> f64| logs.iter().map(|l| f(&l[e])).sum::<f64>() / n;
                    EpochRecord {
                        epoch: reference[e],
                        mean_loss: avg(|r| r.mean_loss),
                        lr_end: avg(|r| r.lr_end),
                        val_recall1: avg(|r| r.val_recall1),
                        val_recall5: avg(|r| r.val_recall5),
                        val_recall10: avg(|r| r.val_recall10),
                        val_median_rank: avg(|r| r.val_median_rank),
                    }
                })
                .collect();
            Ok(TrajectoryCurve {
                register: register.clone(),
                n_runs: logs.len(),
                points,
            })
        })
        .collect()
}

/// CSV of the mean curves: the trajectory log columns prefixed by `register`.
pub fn write_trajectory_curves(path: impl AsRef<Path>, curves: &[TrajectoryCurve]) -> Result<(), RetrievalError> {
    let path = path.as_ref();
    let err = |source| RetrievalError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record([
        "register",
        "epoch",
        "mean_loss",
        "lr_end",
        "val_recall1",
        "val_recall5",
        "val_recall10",
        "val_median_rank",
    ])
    .map_err(err)?;
    for c in curves {
        for p in &c.points {
            let mut row = vec![c.register.clone()];
            row.extend(p.csv_fields());
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush().map_err(|source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
type Metric = fn(&EpochRecord) -> f64;

const SERIES: [(&str, &str, Metric); 3] = [
    ("R@1", "#1f77b4", |r| r.val_recall1),
    ("R@5", "#ff7f0e", |r| r.val_recall5),
    ("R@10", "#2ca02c", |r| r.val_recall10),
];

/// First group solid, second dotted, any further ones dashed.
fn dash(group: usize) -> &'static str {
    match group {
        0 => "",
        1 => " stroke-dasharray=\"2 3\"",
        _ => " stroke-dasharray=\"8 4\"",
    }
}

/// Standalone SVG line chart of validation recall@{1,5,10} over epochs.
pub fn render_trajectory_svg(curves: &[TrajectoryCurve]) -> String {
    let all_epochs: Vec<usize> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.epoch)).collect();
    let (lo, hi) = (
        all_epochs.iter().copied().min().unwrap_or(1) as f64,
        all_epochs.iter().copied().max().unwrap_or(1) as f64,
    );
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |e: f64| {
        LEFT + if hi > lo {
            (e - lo) / (hi - lo) * plot_w
        } else {
            plot_w / 2.0
        }
    };
    let y = |v: f64| TOP + (1.0 - v.clamp(0.0, 1.0)) * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").unwrap();
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"#dddddd\"/><text x=\"{2:.1}\" y=\"{3:.1}\" text-anchor=\"end\">{v:.2}</text>",
            y(v),
            LEFT + plot_w,
            LEFT - 6.0,
            y(v) + 4.0
        )
        .unwrap();
    }
    let span = (hi - lo) as usize;
    let step = (span / 10).max(1);
    let mut e = lo as usize;
    while e as f64 <= hi {
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{e}</text>",
            x(e as f64),
            TOP + plot_h + 18.0
        )
        .unwrap();
        e += step;
    }
    writeln!(
        s,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"black\"/>"
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">epoch</text>",
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">validation recall</text>",
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )
    .unwrap();

    let mut legend_y = TOP + 10.0;
    for (g, curve) in curves.iter().enumerate() {
        for (label, color, metric) in SERIES {
            let pts: Vec<String> = curve
                .points
                .iter()
                .map(|p| format!("{:.1},{:.1}", x(p.epoch as f64), y(metric(p))))
                .collect();
            writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{} points=\"{}\"/>",
                dash(g),
                pts.join(" ")
            )
            .unwrap();
            if curve.points.len() == 1 {
                let p = &curve.points[0];
                writeln!(
                    s,
                    "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>",
                    x(p.epoch as f64),
                    y(metric(p))
                )
                .unwrap();
            }
            let lx = LEFT + plot_w + 16.0;
            writeln!(
                s,
                "<line x1=\"{lx:.1}\" y1=\"{legend_y:.1}\" x2=\"{:.1}\" y2=\"{legend_y:.1}\" stroke=\"{color}\" stroke-width=\"2\"{}/><text x=\"{:.1}\" y=\"{:.1}\">{} {label}</text>",
                lx + 30.0,
                dash(g),
                lx + 36.0,
                legend_y + 4.0,
                escape(&curve.register.to_uppercase())
            )
            .unwrap();
            legend_y += 18.0;
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
