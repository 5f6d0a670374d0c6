//! Phase ribbons: truth above prediction, one rectangle per second, with the
//! SPI estimate and target drawn as polylines underneath.

use std::fmt::Write;

use crate::error::{Error, Result};

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];
const ROW: f64 = 24.0;
const CURVE: f64 = 60.0;
const WIDTH: f64 = 800.0;

fn check(
    truth: &[usize],
    pred: &[usize],
    spi_pred: Option<&[f64]>,
    spi_target: Option<&[f64]>,
) -> Result<()> {
    let n = truth.len();
    if pred.len() != n
        || spi_pred.is_some_and(|s| s.len() != n)
        || spi_target.is_some_and(|s| s.len() != n)
    {
        return Err(Error::Length("ribbon inputs differ in length".into()));
    }
    Ok(())
}

fn polyline(values: &[f64], step: f64, top: f64, colour: &str, dash: bool) -> String {
    let mut points = String::new();
    for (t, v) in values.iter().enumerate() {
        let x = (t as f64 + 0.5) * step;
        let y = top + (1.0 - v.clamp(0.0, 1.0)) * CURVE;
        if t > 0 {
            points.push(' ');
        }
        write!(points, "{x:.3},{y:.3}").expect("string write");
    }
    let dash = if dash {
        " stroke-dasharray=\"4 2\""
    } else {
        ""
    };
    format!("<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"{dash} points=\"{points}\"/>\n")
}

pub fn ribbon_svg(
    truth: &[usize],
    pred: &[usize],
    spi_pred: Option<&[f64]>,
    spi_target: Option<&[f64]>,
) -> Result<String> {
    check(truth, pred, spi_pred, spi_target)?;
    let n = truth.len().max(1);
    let step = WIDTH / n as f64;
    let curves = spi_pred.is_some() || spi_target.is_some();
    let height = 2.0 * ROW + 8.0 + if curves { CURVE + 8.0 } else { 0.0 };
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" viewBox=\"0 0 {WIDTH} {height}\">"
    )
    .expect("string write");
    for (row, labels) in [(0.0, truth), (ROW + 4.0, pred)] {
        let name = if row == 0.0 { "truth" } else { "prediction" };
        writeln!(svg, "<g class=\"{name}\">").expect("string write");
        for (t, &p) in labels.iter().enumerate() {
            writeln!(
                svg,
                "<rect x=\"{:.3}\" y=\"{row:.3}\" width=\"{step:.3}\" height=\"{ROW}\" fill=\"{}\"/>",
                t as f64 * step,
                PALETTE[p % PALETTE.len()]
            )
            .expect("string write");
        }
        svg.push_str("</g>\n");
    }
    let top = 2.0 * ROW + 8.0;
    if let Some(s) = spi_target {
        svg.push_str(&polyline(s, step, top, "#555555", true));
    }
    if let Some(s) = spi_pred {
        svg.push_str(&polyline(s, step, top, "#d62728", false));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// `t,truth,pred,spi_pred,spi_target`; absent SPI columns are left empty.
pub fn ribbon_csv(
    truth: &[usize],
    pred: &[usize],
    spi_pred: Option<&[f64]>,
    spi_target: Option<&[f64]>,
) -> Result<String> {
    check(truth, pred, spi_pred, spi_target)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "truth", "pred", "spi_pred", "spi_target"])?;
    let cell = |s: Option<&[f64]>, t: usize| s.map_or_else(String::new, |s| s[t].to_string());
    for t in 0..truth.len() {
        w.write_record([
            t.to_string(),
            truth[t].to_string(),
            pred[t].to_string(),
            cell(spi_pred, t),
            cell(spi_target, t),
        ])?;
    }
    Ok(String::from_utf8(
        w.into_inner()
            .map_err(|e| Error::io("<ribbon>", e.into_error()))?,
    )
    .expect("utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_frame_and_ribbon() {
        let truth = [0, 0, 1, 1, 1, 2, 2, 3, 3, 4];
        let pred = [0, 1, 1, 1, 1, 2, 3, 3, 3, 4];
        let svg = ribbon_svg(&truth, &pred, Some(&[0.5; 10]), Some(&[0.4; 10])).unwrap();
        assert_eq!(svg.matches("<rect").count(), 20);
        assert_eq!(
            svg,
            ribbon_svg(&truth, &pred, Some(&[0.5; 10]), Some(&[0.4; 10])).unwrap()
        );
    }

    #[test]
    fn identical_labels_give_identical_rows() {
        let labels = [2, 2, 0, 1];
        let svg = ribbon_svg(&labels, &labels, None, None).unwrap();
        let groups: Vec<&str> = svg.split("<g class=").skip(1).collect();
        let strip = |g: &str| -> Vec<String> {
            g.lines()
                .filter(|l| l.starts_with("<rect"))
                .map(|l| l.replace("y=\"0.000\"", "").replace("y=\"28.000\"", ""))
                .collect()
        };
        assert_eq!(strip(groups[0]), strip(groups[1]));
    }

    #[test]
    fn csv_mirrors_inputs() {
        let csv = ribbon_csv(&[0, 1], &[1, 1], Some(&[0.25, 0.75]), None).unwrap();
        assert_eq!(
            csv,
            "t,truth,pred,spi_pred,spi_target\n0,0,1,0.25,\n1,1,1,0.75,\n"
        );
        assert!(ribbon_csv(&[0], &[0, 1], None, None).is_err());
    }
}
