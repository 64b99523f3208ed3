use std::fmt::Write as _;

use super::Summary;

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Centered moving average over `window` points, shrinking at the ends.
/// Display only; CSV data is never smoothed.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(xs.len());
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Learning curves as SVG: the across-seed mean with a band of half a
/// standard deviation on each side.
pub fn render_svg(series: &[(String, Summary)], window: usize, title: &str) -> String {
    let (w, h, pad) = (720.0, 440.0, 60.0);
    let mut x_max = 1.0_f64;
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let prepared: Vec<_> = series
        .iter()
        .map(|(label, s)| {
            let mean = smooth(&s.mean, window);
            let half: Vec<f64> = smooth(&s.std, window).iter().map(|d| d / 2.0).collect();
            for ((m, d), &step) in mean.iter().zip(&half).zip(&s.steps) {
                y_min = y_min.min(m - d);
                y_max = y_max.max(m + d);
                x_max = x_max.max(step as f64);
            }
            (label, &s.steps, mean, half)
        })
        .collect();
    if !y_min.is_finite() || !y_max.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-12 {
        y_max = y_min + 1.0;
    }
    let px = |x: f64| pad + x / x_max * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y_min) / (y_max - y_min) * (h - 2.0 * pad);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
         <path d=\"M{pad},{pad} V{} H{}\" fill=\"none\" stroke=\"black\"/>\n",
        w / 2.0,
        escape(title),
        h - pad,
        w - pad
    );
    for k in 0..=4 {
        let y = y_min + (y_max - y_min) * k as f64 / 4.0;
        let x = x_max * k as f64 / 4.0;
        writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{y:.1}</text>", pad - 6.0, py(y) + 4.0).unwrap();
        writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{x:.0}</text>", px(x), h - pad + 18.0).unwrap();
    }
    for (i, (label, steps, mean, half)) in prepared.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let upper = steps.iter().zip(mean.iter().zip(half.iter())).map(|(&x, (m, d))| (x, m + d));
        let lower = steps.iter().zip(mean.iter().zip(half.iter())).map(|(&x, (m, d))| (x, m - d)).rev();
        let band: Vec<String> = upper
            .chain(lower)
            .map(|(x, y)| format!("{:.1},{:.1}", px(x as f64), py(y)))
            .collect();
        let line: Vec<String> = steps
            .iter()
            .zip(mean.iter())
            .map(|(&x, &y)| format!("{:.1},{:.1}", px(x as f64), py(y)))
            .collect();
        writeln!(s, "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>", band.join(" ")).unwrap();
        writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", line.join(" ")).unwrap();
        let ly = pad + 16.0 * i as f64;
        writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"3\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            w - pad - 130.0,
            ly,
            w - pad - 112.0,
            ly + 5.0,
            escape(label)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{aggregate, Curve};

    #[test]
    fn smoothing_window() {
        assert_eq!(smooth(&[1.0, 2.0, 3.0], 1), vec![1.0, 2.0, 3.0]);
        assert_eq!(smooth(&[0.0, 3.0, 6.0, 9.0], 3), vec![1.5, 3.0, 6.0, 7.5]);
    }

    #[test]
    fn svg_has_one_band_and_line_per_series() {
        let c = |seed, r: &[f64]| Curve {
            config_hash: "h".into(),
            seed,
            steps: vec![0, 10, 20],
            returns: r.to_vec(),
            failed: false,
        };
        let s = aggregate(&[c(0, &[1.0, 2.0, 3.0]), c(1, &[2.0, 2.0, 5.0])]).unwrap();
        let svg = render_svg(&[("TD3".into(), s.clone()), ("A<B".into(), s)], 3, "pendulum");
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("A&lt;B") && svg.ends_with("</svg>\n"));
    }
}
