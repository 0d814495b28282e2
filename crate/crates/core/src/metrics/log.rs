use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::StepMetrics;
use crate::error::Result;

/// Append-only list of step records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<StepMetrics>,
}

impl MetricsLog {
    pub fn push(&mut self, m: StepMetrics) {
        self.records.push(m);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(StepMetrics::from_json_line(&line)?);
            }
        }
        Ok(Self { records })
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv(path: &Path, records: &[StepMetrics]) -> Result<()> {
    let mut out = String::from(
        "step,mean_solver_reward,mean_observer_reward,caption_reward_std,leakage_rate,\
         degenerate_group_rate,mean_attempts,loss,num_tokens,solver_image_visible,eval_accuracy,\
         perception_error,reasoning_error,other_error\n",
    );
    for r in records {
        let e = r.error_rates;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.mean_solver_reward,
            opt(r.mean_observer_reward),
            opt(r.caption_reward_std),
            opt(r.leakage_rate),
            r.degenerate_group_rate,
            r.mean_attempts,
            r.loss,
            r.num_tokens,
            r.solver_image_visible,
            opt(r.eval_accuracy),
            opt(e.map(|e| e.perception)),
            opt(e.map(|e| e.reasoning)),
            opt(e.map(|e| e.other)),
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Static line chart of the reward, caption-std and accuracy curves
/// (all on a shared [0, 1] axis).
pub fn render_svg(records: &[StepMetrics]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 360.0;
    const PAD: f64 = 40.0;
    let max_step = records.iter().map(|r| r.step).max().unwrap_or(1).max(1) as f64;
    let x = |s: u64| PAD + (W - 2.0 * PAD) * s as f64 / max_step;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v.clamp(0.0, 1.0);

    type Series<'a> = (&'a str, &'a str, fn(&StepMetrics) -> Option<f64>);
    let series: [Series; 4] = [
        ("solver reward", "#1f77b4", |r| Some(r.mean_solver_reward)),
        ("observer reward", "#2ca02c", |r| r.mean_observer_reward),
        ("caption reward std", "#d62728", |r| r.caption_reward_std),
        ("eval accuracy", "#9467bd", |r| r.eval_accuracy),
    ];

    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<path d="M{PAD} {PAD} V{} H{}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD
    )
    .unwrap();
    for tick in [0.0, 0.5, 1.0] {
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{tick}</text>"#, PAD - 4.0, y(tick) + 4.0).unwrap();
    }
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">step {}</text>"#, W - PAD, H - PAD + 16.0, max_step).unwrap();
    for (i, (name, color, get)) in series.iter().enumerate() {
        let pts: Vec<String> = records
            .iter()
            .filter_map(|r| get(r).map(|v| format!("{:.1},{:.1}", x(r.step), y(v))))
            .collect();
        if pts.is_empty() {
            continue;
        }
        writeln!(svg, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, pts.join(" ")).unwrap();
        let ly = PAD + 14.0 * i as f64;
        writeln!(svg, r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#, W - PAD - 120.0).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
