//! Small hand-rolled SVG emitters for the three figure kinds the harness
//! produces: factual/counterfactual series overlays, validation convergence
//! curves, and the donor-noise sweep.

use crate::error::{CfError, Result};
use crate::synthcontrol::SweepPoint;
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 45.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#7f7f7f", "#9467bd", "#ff7f0e",
];

/// One named curve; points are (x, y).
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Optional symmetric error bar half-heights, matched to `points`.
    pub bars: Option<Vec<f64>>,
}

struct Frame {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn from_curves(curves: &[Curve]) -> Result<Self> {
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for c in curves {
            for (i, &(x, y)) in c.points.iter().enumerate() {
                let bar = c.bars.as_ref().map_or(0.0, |b| b[i]);
                xmin = xmin.min(x);
                xmax = xmax.max(x);
                ymin = ymin.min(y - bar);
                ymax = ymax.max(y + bar);
            }
        }
        if !(xmin.is_finite() && ymin.is_finite()) {
            return Err(CfError::Input("plot needs non-empty, finite data".into()));
        }
        if xmax == xmin {
            xmax = xmin + 1.0;
        }
        if ymax == ymin {
            ymax = ymin + 1.0;
        }
        let pad = (ymax - ymin) * 0.05;
        Ok(Self {
            xmin,
            xmax,
            ymin: ymin - pad,
            ymax: ymax + pad,
        })
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.xmin) / (self.xmax - self.xmin) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.ymin) / (self.ymax - self.ymin) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn render(
    title: &str,
    x_label: &str,
    y_label: &str,
    curves: &[Curve],
    vlines: &[(f64, String)],
    hlines: &[(f64, String)],
) -> Result<String> {
    if curves.iter().all(|c| c.points.is_empty()) {
        return Err(CfError::Input("plot needs at least one data point".into()));
    }
    let f = Frame::from_curves(curves)?;
    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        title
    )
    .unwrap();
    // axes
    let (x0, x1) = (MARGIN_L, WIDTH - MARGIN_R);
    let (y0, y1) = (HEIGHT - MARGIN_B, MARGIN_T);
    writeln!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    )
    .unwrap();
    // ticks: 5 per axis
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.xmin + t * (f.xmax - f.xmin);
        let yv = f.ymin + t * (f.ymax - f.ymin);
        let xp = f.px(xv);
        let yp = f.py(yv);
        writeln!(
            s,
            "<line x1=\"{xp}\" y1=\"{y0}\" x2=\"{xp}\" y2=\"{}\" stroke=\"black\"/>\
             <text x=\"{xp}\" y=\"{}\" text-anchor=\"middle\">{xv:.3}</text>",
            y0 + 5.0,
            y0 + 18.0
        )
        .unwrap();
        writeln!(
            s,
            "<line x1=\"{}\" y1=\"{yp}\" x2=\"{x0}\" y2=\"{yp}\" stroke=\"black\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{yv:.3}</text>",
            x0 - 5.0,
            x0 - 8.0,
            yp + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 8.0
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{y_label}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    )
    .unwrap();
    for (xv, label) in vlines {
        let xp = f.px(*xv);
        writeln!(
            s,
            "<line x1=\"{xp}\" y1=\"{y0}\" x2=\"{xp}\" y2=\"{y1}\" stroke=\"black\" \
             stroke-dasharray=\"4 3\"/>\
             <text x=\"{}\" y=\"{}\" font-size=\"11\">{label}</text>",
            xp + 4.0,
            y1 + 12.0
        )
        .unwrap();
    }
    for (yv, label) in hlines {
        let yp = f.py(*yv);
        writeln!(
            s,
            "<line x1=\"{x0}\" y1=\"{yp}\" x2=\"{x1}\" y2=\"{yp}\" stroke=\"#555555\" \
             stroke-dasharray=\"6 3\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{label}</text>",
            x1 - 4.0,
            yp - 4.0
        )
        .unwrap();
    }
    for (ci, c) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        )
        .unwrap();
        if let Some(bars) = &c.bars {
            for (&(x, y), &b) in c.points.iter().zip(bars) {
                let xp = f.px(x);
                writeln!(
                    s,
                    "<line x1=\"{xp}\" y1=\"{}\" x2=\"{xp}\" y2=\"{}\" stroke=\"{color}\"/>\
                     <circle cx=\"{xp}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\"/>",
                    f.py(y - b),
                    f.py(y + b),
                    f.py(y)
                )
                .unwrap();
            }
        }
        // legend entry
        let lx = MARGIN_L + 10.0 + 140.0 * (ci % 4) as f64;
        let ly = MARGIN_T - 8.0 + 14.0 * (ci / 4) as f64;
        writeln!(
            s,
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/><text x=\"{}\" y=\"{}\">{}</text>",
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            c.label
        )
        .unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    Ok(s)
}

fn write_svg(body: &str, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body)?;
    Ok(())
}

/// Full-window overlay of history, factual outcome, predicted and true
/// counterfactuals, with the pre/post-event divider.
pub fn series_overlay(
    h: &[f64],
    y_f: &[f64],
    y_cf_hat: &[f64],
    y_cf_true: Option<&[f64]>,
    path: &Path,
) -> Result<()> {
    if h.is_empty() || y_f.is_empty() {
        return Err(CfError::Input("series overlay needs data".into()));
    }
    let t1 = h.len();
    let step_points = |offset: usize, v: &[f64]| -> Vec<(f64, f64)> {
        v.iter()
            .enumerate()
            .map(|(i, &y)| ((offset + i) as f64, y))
            .collect()
    };
    let mut curves = vec![
        Curve {
            label: "history".into(),
            points: step_points(0, h),
            bars: None,
        },
        Curve {
            label: "factual".into(),
            points: step_points(t1, y_f),
            bars: None,
        },
        Curve {
            label: "predicted cf".into(),
            points: step_points(t1, y_cf_hat),
            bars: None,
        },
    ];
    if let Some(t) = y_cf_true {
        curves.push(Curve {
            label: "true cf".into(),
            points: step_points(t1, t),
            bars: None,
        });
    }
    let body = render(
        "Counterfactual estimate",
        "step",
        "value",
        &curves,
        &[(t1 as f64, "event".into())],
        &[],
    )?;
    write_svg(&body, path)
}

/// Validation counterfactual MAE against training epoch, one curve per run.
pub fn convergence(curves: &[(String, Vec<(usize, f64)>)], path: &Path) -> Result<()> {
    let cs: Vec<Curve> = curves
        .iter()
        .map(|(label, pts)| Curve {
            label: label.clone(),
            points: pts.iter().map(|&(e, v)| (e as f64, v)).collect(),
            bars: None,
        })
        .collect();
    let body = render("Validation convergence", "epoch", "cf MAE", &cs, &[], &[])?;
    write_svg(&body, path)
}

/// Donor sweep: MAE against donor noise, error bars over seeds, with an
/// optional horizontal reference level (e.g. a model's counterfactual MAE).
pub fn sweep(points: &[SweepPoint], reference: Option<(&str, f64)>, path: &Path) -> Result<()> {
    let curve = Curve {
        label: "synthetic control".into(),
        points: points.iter().map(|p| (p.sigma, p.mae_mean)).collect(),
        bars: Some(points.iter().map(|p| p.mae_std).collect()),
    };
    let hlines: Vec<(f64, String)> = reference
        .map(|(label, v)| vec![(v, label.to_string())])
        .unwrap_or_default();
    let body = render(
        "Donor-noise sweep",
        "donor noise sigma",
        "cf MAE",
        &[curve],
        &[],
        &hlines,
    )?;
    write_svg(&body, path)
}
