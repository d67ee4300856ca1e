//! Minimal SVG output for signals, masks and report summaries.

use std::fmt::Write;

pub const WAVE_COLORS: [&str; 3] = ["#4c9be8", "#e8574c", "#53b86a"];

pub struct Trace {
    pub label: String,
    pub values: Vec<f64>,
    pub color: String,
}

/// A shaded `[start, end]` span, in sample indices.
pub struct Band {
    pub start: usize,
    pub end: usize,
    pub color: String,
}

pub struct SignalPlot {
    pub title: String,
    pub fs: f64,
    /// Sample index of the first value, for the time axis.
    pub offset: usize,
    pub traces: Vec<Trace>,
    pub bands: Vec<Band>,
}

const W: f64 = 1000.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        escape(title)
    );
}

impl SignalPlot {
    pub fn render(&self) -> String {
        let n = self.traces.iter().map(|t| t.values.len()).max().unwrap_or(0).max(2);
        let (lo, hi) = self
            .traces
            .iter()
            .flat_map(|t| t.values.iter().copied())
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (lo, hi) = if lo < hi { (lo, hi) } else { (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0) };
        let x = |i: f64| PAD + (W - 2.0 * PAD) * i / (n - 1) as f64;
        let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);

        let mut out = String::new();
        header(&mut out, &self.title);
        for b in &self.bands {
            let x0 = x(b.start.saturating_sub(self.offset) as f64);
            let x1 = x((b.end.saturating_sub(self.offset) as f64 + 1.0).min((n - 1) as f64));
            let _ = writeln!(
                out,
                "<rect x=\"{x0:.1}\" y=\"{PAD}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\" fill-opacity=\"0.25\"/>",
                (x1 - x0).max(0.5),
                H - 2.0 * PAD,
                b.color
            );
        }
        let _ = writeln!(
            out,
            "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#999\"/>",
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        for (k, t) in self.traces.iter().enumerate() {
            let pts: Vec<String> = t
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(i, &v)| format!("{:.1},{:.1}", x(i as f64), y(v)))
                .collect();
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1\" points=\"{}\"/>",
                t.color,
                pts.join(" ")
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>",
                W - PAD - 150.0,
                PAD + 14.0 * (k as f64 + 1.0),
                t.color,
                escape(&t.label)
            );
        }
        let t0 = self.offset as f64 / self.fs;
        let t1 = (self.offset + n - 1) as f64 / self.fs;
        let _ = write!(
            out,
            "<text x=\"{PAD}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{t0:.2} s</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{t1:.2} s</text>\n\
             <text x=\"5\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{hi:.2}</text>\n\
             <text x=\"5\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{lo:.2}</text>\n</svg>\n",
            H - PAD + 16.0,
            W - PAD,
            H - PAD + 16.0,
            PAD + 4.0,
            H - PAD
        );
        out
    }
}

/// Grouped bars in `[0, 1]`: one group per row label, one bar per series.
pub fn bar_chart(title: &str, groups: &[(String, Vec<Option<f64>>)], series: &[&str]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let n_groups = groups.len().max(1) as f64;
    let gw = (W - 2.0 * PAD) / n_groups;
    let bw = gw * 0.8 / series.len().max(1) as f64;
    let base = H - PAD;
    let scale = H - 2.0 * PAD - 20.0;
    let _ = writeln!(
        out,
        "<line x1=\"{PAD}\" y1=\"{base}\" x2=\"{:.1}\" y2=\"{base}\" stroke=\"#333\"/>",
        W - PAD
    );
    for (g, (label, values)) in groups.iter().enumerate() {
        let gx = PAD + gw * g as f64 + gw * 0.1;
        for (s, v) in values.iter().enumerate() {
            let color = WAVE_COLORS[s % WAVE_COLORS.len()];
            let bx = gx + bw * s as f64;
            match v {
                Some(v) => {
                    let h = scale * v.clamp(0.0, 1.0);
                    let _ = writeln!(
                        out,
                        "<rect x=\"{bx:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{color}\"/>\n\
                         <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{v:.3}</text>",
                        base - h,
                        bw * 0.9,
                        bx + bw * 0.45,
                        base - h - 3.0
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">n/a</text>",
                        bx + bw * 0.45,
                        base - 3.0
                    );
                }
            }
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            gx + gw * 0.4,
            base + 16.0,
            escape(label)
        );
    }
    for (s, name) in series.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>",
            W - PAD - 100.0,
            PAD + 14.0 * s as f64,
            WAVE_COLORS[s % WAVE_COLORS.len()],
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_documents() {
        let p = SignalPlot {
            title: "a < b".into(),
            fs: 250.0,
            offset: 10,
            traces: vec![Trace {
                label: "lead 0".into(),
                values: (0..100).map(|i| (i as f64 / 10.0).sin()).collect(),
                color: "#000".into(),
            }],
            bands: vec![Band {
                start: 20,
                end: 30,
                color: WAVE_COLORS[1].into(),
            }],
        };
        let s = p.render();
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<polyline").count(), 1);
        let b = bar_chart("r", &[("P".into(), vec![Some(0.5), None])], &["f1", "dice"]);
        assert!(b.contains("n/a") && b.contains("0.500"));
    }
}
