//! CSV reports and the SVG curve plot.

use std::io::Write;

use adair_core::analysis::CurveReport;
use adair_core::train::StepRecord;

use crate::error::Result;

/// `L,mean_magnitude` rows, raw magnitudes.
pub fn write_curve_csv<W: Write>(out: W, report: &CurveReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["L", "mean_magnitude"])?;
    for (i, v) in report.curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `step,loss,psnr_val` rows; `psnr_val` is empty on steps without validation.
pub fn write_loss_csv<W: Write>(out: W, records: &[StepRecord], validation: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "loss", "psnr_val"])?;
    for r in records {
        let val = validation
            .iter()
            .find(|(s, _)| *s == r.step)
            .map(|(_, p)| p.to_string())
            .unwrap_or_default();
        w.write_record([r.step.to_string(), r.loss.to_string(), val])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Line plot of `log(1 + value)` against `L` for one or more curves.
pub fn curve_svg(reports: &[CurveReport]) -> String {
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let (width, height, margin) = (640.0, 400.0, 50.0);
    let logged: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| r.curve.iter().map(|v| v.ln_1p()).collect())
        .collect();
    let top = logged.iter().flatten().cloned().fold(0.0, f64::max).max(1e-12);
    let n = reports.iter().map(|r| r.curve.len()).max().unwrap_or(1).max(2);
    let x = |i: usize| margin + (width - 2.0 * margin) * i as f64 / (n - 1) as f64;
    let y = |v: f64| height - margin - (height - 2.0 * margin) * v / top;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{margin}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lx}\" text-anchor=\"middle\" font-size=\"12\">square half-side L</text>\n\
         <text x=\"14\" y=\"{cy}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {cy})\">log(1 + mean magnitude)</text>\n",
        b = height - margin,
        r = width - margin,
        cx = width / 2.0,
        lx = height - 15.0,
        cy = height / 2.0,
    );
    for (k, (curve, report)) in logged.iter().zip(reports).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = curve.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v))).collect();
        svg += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        );
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            width - margin - 120.0,
            margin + 16.0 * (k as f64 + 1.0),
            escape(&report.tag)
        );
    }
    svg + "</svg>\n"
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
