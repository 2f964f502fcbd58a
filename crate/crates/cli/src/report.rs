use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use pseudoradar::metrics::ChamferReport;
use pseudoradar::pointcloud::write_atomic;
use serde::Serialize;

use crate::config::RunConfig;

pub const TOOL: &str = "pseudoradar";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Envelope shared by every JSON report.
#[derive(Serialize)]
pub struct Report<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub result: T,
}

pub fn write_report<T: Serialize>(path: &Path, command: &str, config: &RunConfig, result: T) -> anyhow::Result<()> {
    let report = Report { tool: TOOL, version: VERSION, command, config, result };
    let json = serde_json::to_string_pretty(&report)?;
    write_file(path, json.as_bytes())
}

/// Atomic write, creating the parent directory if needed.
pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter of per-frame Chamfer values with the mean drawn as a dashed line.
pub fn chamfer_svg(report: &ChamferReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const M: f64 = 48.0;
    let n = report.per_frame.len();
    let top = report.per_frame.iter().map(|f| f.value).fold(0.0, f64::max);
    let top = if top > 0.0 { top * 1.05 } else { 1.0 };
    let x = |i: usize| M + (W - 2.0 * M) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let y = |v: f64| H - M - (H - 2.0 * M) * v / top;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{M} {M} L{M} {b} L{r} {b}" fill="none" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    let _ = writeln!(s, r#"<text x="{M}" y="{}" font-size="12">{top:.3}</text>"#, M - 6.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">frame</text>"#, W / 2.0, H - 12.0);
    let ym = y(report.mean);
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{ym:.2}" x2="{}" y2="{ym:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
        W - M
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{:.2}" font-size="12" text-anchor="end">mean {:.4}</text>"#,
        W - M,
        ym - 4.0,
        report.mean
    );
    for (i, f) in report.per_frame.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"><title>{}: {}</title></circle>"#,
            x(i),
            y(f.value),
            escape(&f.frame_id),
            f.value
        );
    }
    s.push_str("</svg>\n");
    s
}
