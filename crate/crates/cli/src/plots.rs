//! Static SVG charts of training, schedule, PR and ablation outputs.

use plotters::prelude::*;

use crate::error::{CliError, Result};

const SIZE: (u32, u32) = (640, 400);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err(name: &str) -> impl Fn(Box<dyn std::fmt::Display>) -> CliError + '_ {
    move |e| CliError::Plot(name.to_string(), e.to_string())
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Line chart of one or more named series into an SVG string.
pub fn line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<String> {
    let err = plot_err(title);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| err(Box::new(e)))?;
        let (x0, x1) = range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
        let (y0, y1) = range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| err(Box::new(e)))?;
        chart.configure_mesh().draw().map_err(|e| err(Box::new(e)))?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(|e| err(Box::new(e)))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        if series.len() > 1 {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(|e| err(Box::new(e)))?;
        }
        root.present().map_err(|e| err(Box::new(e)))?;
    }
    Ok(svg)
}

/// Bars of per-class values (one group per class, one bar per series).
pub fn bar_chart(title: &str, classes: &[String], series: &[(String, Vec<Option<f64>>)]) -> Result<String> {
    let err = plot_err(title);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (SIZE.0.max(48 * classes.len() as u32), SIZE.1)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| err(Box::new(e)))?;
        let (y0, y1) = range(series.iter().flat_map(|s| s.1.iter().flatten().copied()).chain([0.0]));
        let n = classes.len().max(1) as f64;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(48)
            .y_label_area_size(56)
            .build_cartesian_2d(0.0..n, y0..y1)
            .map_err(|e| err(Box::new(e)))?;
        let names = classes.to_vec();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(classes.len().max(1))
            .x_label_formatter(&move |x| names.get(x.floor() as usize).cloned().unwrap_or_default())
            .draw()
            .map_err(|e| err(Box::new(e)))?;
        let width = 0.8 / series.len().max(1) as f64;
        for (j, (name, values)) in series.iter().enumerate() {
            let color = PALETTE[j % PALETTE.len()];
            let bars = values.iter().enumerate().filter_map(|(k, v)| {
                let v = (*v)?;
                let x = k as f64 + 0.1 + j as f64 * width;
                Some(Rectangle::new([(x, 0.0), (x + width, v)], color.filled()))
            });
            chart
                .draw_series(bars)
                .map_err(|e| err(Box::new(e)))?
                .label(name.as_str())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
        }
        if !series.is_empty() {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(|e| err(Box::new(e)))?;
        }
        root.present().map_err(|e| err(Box::new(e)))?;
    }
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_render_deterministically() {
        let s = vec![("a".to_string(), vec![(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)])];
        let one = line_chart("loss", &s).unwrap();
        assert_eq!(one, line_chart("loss", &s).unwrap());
        assert!(one.starts_with("<svg"));
        assert!(one.contains("<text"));
        let bars = bar_chart(
            "gain",
            &["x".to_string(), "y".to_string()],
            &[("arm".to_string(), vec![Some(0.1), None])],
        )
        .unwrap();
        assert!(bars.contains("<rect"));
    }
}
