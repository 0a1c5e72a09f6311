//! Side-by-side comparison of metric reports: merged CSV, text table and
//! an SVG grouped bar chart.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, VolumeMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Psnr,
    SsimSlice,
    SsimVol,
    Nmse,
    Rmse,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Psnr, Metric::SsimSlice, Metric::SsimVol, Metric::Nmse, Metric::Rmse];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::SsimSlice => "ssim_slice",
            Metric::SsimVol => "ssim_vol",
            Metric::Nmse => "nmse",
            Metric::Rmse => "rmse",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Psnr | Metric::SsimSlice | Metric::SsimVol)
    }

    pub fn of(self, v: &VolumeMetrics) -> f64 {
        match self {
            Metric::Psnr => v.psnr,
            Metric::SsimSlice => v.ssim_slice,
            Metric::SsimVol => v.ssim_vol,
            Metric::Nmse => v.nmse,
            Metric::Rmse => v.rmse,
        }
    }
}

/// Reports of several methods over the same volumes.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub methods: Vec<String>,
    pub reports: Vec<MetricsReport>,
    averages: Vec<VolumeMetrics>,
}

impl Comparison {
    /// Needs at least two reports listing identical volume ids in the same order.
    pub fn new(runs: Vec<(String, MetricsReport)>) -> Result<Self> {
        if runs.len() < 2 {
            return Err(Error::Comparison(format!("need at least two runs, got {}", runs.len())));
        }
        let ids = |r: &MetricsReport| r.volumes.iter().map(|v| v.id.clone()).collect::<Vec<_>>();
        let first = ids(&runs[0].1);
        for (name, r) in &runs[1..] {
            let other = ids(r);
            if other != first {
                let diff = first.iter().zip(&other).find(|(a, b)| a != b);
                let detail = match diff {
                    Some((a, b)) => format!("`{a}` vs `{b}`"),
                    None => format!("{} vs {} volumes", first.len(), other.len()),
                };
                return Err(Error::Comparison(format!("run `{name}` covers different volumes than `{}`: {detail}", runs[0].0)));
            }
        }
        let averages = runs.iter().map(|(_, r)| r.average()).collect::<Result<Vec<_>>>()?;
        let (methods, reports) = runs.into_iter().unzip();
        Ok(Comparison { methods, reports, averages })
    }

    pub fn average(&self, method: usize) -> &VolumeMetrics {
        &self.averages[method]
    }

    /// Method indices ranked best first for `m` (stable on ties).
    pub fn ranking(&self, m: Metric) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.methods.len()).collect();
        idx.sort_by(|&a, &b| {
            let (va, vb) = (m.of(&self.averages[a]), m.of(&self.averages[b]));
            let ord = va.partial_cmp(&vb).unwrap_or(std::cmp::Ordering::Equal);
            if m.higher_is_better() { ord.reverse() } else { ord }
        });
        idx
    }

    /// 0 for best, 1 for second best, `None` otherwise. Ties share a rank.
    pub fn rank_mark(&self, method: usize, m: Metric) -> Option<usize> {
        let order = self.ranking(m);
        let value = m.of(&self.averages[method]);
        let best = m.of(&self.averages[order[0]]);
        if value == best {
            return Some(0);
        }
        let second = order.iter().map(|&i| m.of(&self.averages[i])).find(|&v| v != best)?;
        (value == second).then_some(1)
    }

    /// Long-format CSV: one row per method, volume and metric, with the
    /// difference to the first method.
    pub fn merged_csv(&self) -> String {
        let mut s = String::from("method,volume,metric,value,delta\n");
        for (mi, (name, r)) in self.methods.iter().zip(&self.reports).enumerate() {
            let rows = r.volumes.iter().chain(std::iter::once(&self.averages[mi]));
            let base = self.reports[0].volumes.iter().chain(std::iter::once(&self.averages[0]));
            for (v, b) in rows.zip(base) {
                for m in Metric::ALL {
                    let (x, y) = (m.of(v), m.of(b));
                    let delta = if x == y { 0.0 } else { x - y };
                    let _ = writeln!(s, "{name},{},{},{x},{delta}", v.id, m.as_str());
                }
            }
        }
        s
    }

    /// Markdown table of averages; best in bold, second best underlined.
    pub fn table(&self) -> String {
        let mut s = String::from("| method |");
        for m in Metric::ALL {
            let _ = write!(s, " {} {} |", m.as_str(), if m.higher_is_better() { "↑" } else { "↓" });
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(Metric::ALL.len()));
        s.push('\n');
        for (i, name) in self.methods.iter().enumerate() {
            let _ = write!(s, "| {name} |");
            for m in Metric::ALL {
                let cell = format_value(m, m.of(&self.averages[i]));
                let cell = match self.rank_mark(i, m) {
                    Some(0) => format!("**{cell}**"),
                    Some(_) => format!("<u>{cell}</u>"),
                    None => cell,
                };
                let _ = write!(s, " {cell} |");
            }
            s.push('\n');
        }
        s
    }

    /// Grouped bar chart: one `<g class="method">` per method holding one
    /// bar per metric. Bar heights are normalized per metric to the largest
    /// value; labels carry the raw averages.
    pub fn svg(&self) -> String {
        const PALETTE: [&str; 5] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2"];
        let nm = Metric::ALL.len();
        let bar_w = 22.0;
        let group_w = nm as f64 * bar_w + 30.0;
        let (left, top, plot_h) = (50.0, 40.0, 220.0);
        let width = left + group_w * self.methods.len() as f64 + 160.0;
        let height = top + plot_h + 70.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
        );
        let _ = writeln!(s, r#"  <title>Method comparison (volume averages)</title>"#);
        let _ = writeln!(
            s,
            r#"  <line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            top + plot_h,
            width - 150.0,
            top + plot_h
        );
        let scale: Vec<f64> = Metric::ALL
            .iter()
            .map(|&m| self.averages.iter().map(|a| m.of(a)).filter(|v| v.is_finite()).map(f64::abs).fold(0.0, f64::max))
            .collect();
        for (i, name) in self.methods.iter().enumerate() {
            let gx = left + i as f64 * group_w;
            let _ = writeln!(s, r#"  <g class="method" data-method="{}">"#, escape(name));
            for (j, &m) in Metric::ALL.iter().enumerate() {
                let v = m.of(&self.averages[i]);
                let frac = if !v.is_finite() { 1.0 } else if scale[j] > 0.0 { v.abs() / scale[j] } else { 0.0 };
                let h = frac * plot_h;
                let x = gx + j as f64 * bar_w;
                let y = top + plot_h - h;
                let _ = writeln!(
                    s,
                    r#"    <rect class="bar" data-metric="{}" x="{x:.1}" y="{y:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                    m.as_str(),
                    bar_w - 2.0,
                    PALETTE[j % PALETTE.len()]
                );
                let style = match self.rank_mark(i, m) {
                    Some(0) => r#" font-weight="bold""#,
                    Some(_) => r#" text-decoration="underline""#,
                    None => "",
                };
                let _ = writeln!(
                    s,
                    r#"    <text x="{:.1}" y="{:.1}" transform="rotate(-90 {:.1} {:.1})"{style}>{}</text>"#,
                    x + bar_w / 2.0 + 3.0,
                    y - 4.0,
                    x + bar_w / 2.0 + 3.0,
                    y - 4.0,
                    format_value(m, v)
                );
            }
            let _ = writeln!(
                s,
                r#"    <text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
                gx + nm as f64 * bar_w / 2.0,
                top + plot_h + 18.0,
                escape(name)
            );
            let _ = writeln!(s, "  </g>");
        }
        let lx = width - 140.0;
        let _ = writeln!(s, r#"  <g class="legend">"#);
        for (j, m) in Metric::ALL.iter().enumerate() {
            let y = top + j as f64 * 16.0;
            let _ = writeln!(s, r#"    <rect x="{lx}" y="{y}" width="10" height="10" fill="{}"/>"#, PALETTE[j % PALETTE.len()]);
            let arrow = if m.higher_is_better() { "higher is better" } else { "lower is better" };
            let _ = writeln!(s, r#"    <text x="{}" y="{}">{} ({arrow})</text>"#, lx + 14.0, y + 9.0, m.as_str());
        }
        let _ = writeln!(s, r#"    <text x="{lx}" y="{}" font-weight="bold">bold: best</text>"#, top + 100.0);
        let _ = writeln!(s, r#"    <text x="{lx}" y="{}" text-decoration="underline">underline: second</text>"#, top + 116.0);
        let _ = writeln!(s, "  </g>");
        s.push_str("</svg>\n");
        s
    }
}

fn format_value(m: Metric, v: f64) -> String {
    if v.is_infinite() {
        return "inf".into();
    }
    match m {
        Metric::Psnr => format!("{v:.2}"),
        Metric::SsimSlice | Metric::SsimVol => format!("{v:.4}"),
        Metric::Nmse | Metric::Rmse => format!("{v:.3e}"),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::VolumeWindow;

    fn report(psnr: [f64; 2]) -> MetricsReport {
        MetricsReport {
            volume_window: VolumeWindow::Planar,
            notes: Vec::new(),
            volumes: psnr
                .iter()
                .enumerate()
                .map(|(i, &p)| VolumeMetrics {
                    id: format!("vol{i:03}"),
                    psnr: p,
                    ssim_slice: p / 40.0,
                    ssim_vol: p / 41.0,
                    nmse: 1.0 / p,
                    rmse: 0.5 / p,
                    skipped_slices: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let c = Comparison::new(vec![("a".into(), report([30.0, 31.0])), ("b".into(), report([30.0, 31.0]))]).unwrap();
        for line in c.merged_csv().lines().skip(1) {
            assert!(line.ends_with(",0"), "{line}");
        }
    }

    #[test]
    fn ranks_respect_direction() {
        let c = Comparison::new(vec![
            ("lo".into(), report([20.0, 20.0])),
            ("hi".into(), report([30.0, 30.0])),
            ("mid".into(), report([25.0, 25.0])),
        ])
        .unwrap();
        assert_eq!(c.ranking(Metric::Psnr), vec![1, 2, 0]);
        assert_eq!(c.ranking(Metric::Nmse), vec![1, 2, 0]);
        assert_eq!(c.rank_mark(1, Metric::Psnr), Some(0));
        assert_eq!(c.rank_mark(2, Metric::Rmse), Some(1));
        assert_eq!(c.rank_mark(0, Metric::SsimVol), None);
        assert!(c.table().contains("**30.00**"));
    }

    #[test]
    fn mismatched_volumes_rejected() {
        let mut b = report([1.0, 2.0]);
        b.volumes[1].id = "other".into();
        let err = Comparison::new(vec![("a".into(), report([1.0, 2.0])), ("b".into(), b)]).unwrap_err();
        assert!(matches!(err, Error::Comparison(_)));
        assert!(matches!(Comparison::new(vec![("a".into(), report([1.0, 2.0]))]), Err(Error::Comparison(_))));
    }
}
