//! Evaluation rollouts, trajectory metrics and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{ActMode, Agent, ChunkState, LogRecord, Phase, RunLog};
use crate::env::{make_env, mix_seed, EnvSpec};
use crate::error::{Error, Result};

/// Agent positions recorded every `stride` environment steps, split into
/// segments at episode boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    stride: usize,
    positions: Vec<Vec<f64>>,
    segment_starts: Vec<usize>,
}

impl Trace {
    pub fn new(stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("eval.stride must be at least 1".into()));
        }
        Ok(Self {
            stride,
            positions: Vec::new(),
            segment_starts: vec![0],
        })
    }

    /// A single-segment trace.
    pub fn from_positions(stride: usize, positions: Vec<Vec<f64>>) -> Result<Self> {
        let mut t = Self::new(stride)?;
        for p in positions {
            t.push(p);
        }
        Ok(t)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: Vec<f64>) {
        self.positions.push(position);
    }

    /// Later positions are not paired with earlier ones.
    pub fn start_segment(&mut self) {
        if self.segment_starts.last() != Some(&self.positions.len()) {
            self.segment_starts.push(self.positions.len());
        }
    }

    /// The first `n` positions, keeping segment boundaries.
    pub fn prefix(&self, n: usize) -> Trace {
        let n = n.min(self.positions.len());
        Trace {
            stride: self.stride,
            positions: self.positions[..n].to_vec(),
            segment_starts: self.segment_starts.iter().copied().filter(|&s| s <= n).collect(),
        }
    }

    fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        let starts = &self.segment_starts;
        (1..self.positions.len())
            .filter(move |i| !starts.contains(i))
            .map(move |i| (self.positions[i - 1].as_slice(), self.positions[i].as_slice()))
    }
}

/// Mean distance between consecutive recorded positions within a segment.
pub fn temporal_coherency(trace: &Trace) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in trace.pairs() {
        sum += a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Usage("temporal coherency needs two consecutive positions".into()));
    }
    Ok(sum / n as f64)
}

/// Number of distinct cells of a `grid`-per-axis partition of [-1, 1]^d
/// visited by the trace.
pub fn state_coverage(trace: &Trace, grid: usize) -> Result<usize> {
    if grid == 0 {
        return Err(Error::Config("eval.grid must be at least 1".into()));
    }
    let mut cells: Vec<Vec<usize>> = trace
        .positions
        .iter()
        .map(|p| {
            p.iter()
                .map(|&x| (((x.clamp(-1.0, 1.0) + 1.0) / 2.0 * grid as f64) as usize).min(grid - 1))
                .collect()
        })
        .collect();
    cells.sort_unstable();
    cells.dedup();
    Ok(cells.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub success_rate: f64,
    pub mean_return: f64,
    /// Temporal coherency of the evaluation rollouts; NaN if too short.
    pub coherency: f64,
}

/// Runs `episodes` episodes of `policy`. Episode `i` resets with seed
/// `mix(seed, i)` and gets its own RNG; `policy` receives the observation,
/// whether this is the first step, and that RNG.
pub fn evaluate_policy<F>(spec: &EnvSpec, episodes: usize, seed: u64, stride: usize, mut policy: F) -> Result<EvalOutcome>
where
    F: FnMut(&[f64], bool, &mut ChaCha8Rng) -> Result<Vec<f64>>,
{
    if episodes == 0 {
        return Err(Error::Config("eval.episodes must be at least 1".into()));
    }
    let mut env = make_env(spec)?;
    let mut trace = Trace::new(stride)?;
    let (mut successes, mut total_return) = (0usize, 0.0);
    for i in 0..episodes as u64 {
        let mut obs = env.reset(mix_seed(seed, i));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0xE7A1_5EED, i));
        trace.start_segment();
        trace.push(env.position());
        let mut first = true;
        let mut t = 0usize;
        loop {
            let action = policy(&obs, first, &mut rng)?;
            first = false;
            let out = env.step(&action)?;
            t += 1;
            total_return += out.reward;
            obs = out.obs;
            if out.terminal {
                successes += 1;
            }
            if out.terminal || out.truncated {
                break;
            }
            if t % stride == 0 {
                trace.push(env.position());
            }
        }
    }
    Ok(EvalOutcome {
        success_rate: successes as f64 / episodes as f64,
        mean_return: total_return / episodes as f64,
        coherency: temporal_coherency(&trace).unwrap_or(f64::NAN),
    })
}

/// Success rate of the agent's evaluation policy (best-of-N for flow
/// variants, `z = 0` for noise policies). The agent is only read.
pub fn evaluate_success(agent: &Agent, spec: &EnvSpec, episodes: usize, seed: u64, stride: usize) -> Result<EvalOutcome> {
    let mut chunk = ChunkState::new();
    evaluate_policy(spec, episodes, seed, stride, |obs, first, rng| {
        if first {
            chunk.reset();
        }
        agent.act(obs, &mut chunk, ActMode::Evaluate, rng)
    })
}

pub const CSV_HEADER: &str = "step,phase,success_rate,mean_return,critic_loss,flow_loss,actor_loss,coherency";

pub fn render_csv(log: &RunLog) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &log.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.phase.name(),
            r.success_rate,
            r.mean_return,
            r.critic_loss,
            r.flow_loss,
            r.actor_loss,
            r.coherency
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<RunLog> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format {
            offset: 0,
            message: "missing log header".into(),
        });
    }
    let mut log = RunLog::default();
    for (i, line) in lines.enumerate() {
        let bad = |what: &str| Error::Format {
            offset: i as u64 + 2,
            message: format!("line {}: {what}", i + 2),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad("expected 8 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
        log.push(LogRecord {
            step: f[0].parse().map_err(|_| bad("bad step"))?,
            phase: Phase::parse(f[1]).ok_or_else(|| bad("bad phase"))?,
            success_rate: num(f[2])?,
            mean_return: num(f[3])?,
            critic_loss: num(f[4])?,
            flow_loss: num(f[5])?,
            actor_loss: num(f[6])?,
            coherency: num(f[7])?,
        })
        .map_err(|_| bad("steps not increasing"))?;
    }
    Ok(log)
}

pub fn emit_csv(log: &RunLog, path: &Path) -> Result<()> {
    fs::write(path, render_csv(log)).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<RunLog> {
    parse_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// A named curve for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// SVG 1.1 line plot, 800x500, with axes, tick labels and a legend.
pub fn render_svg(title: &str, series: &[Series]) -> String {
    let (w, h) = (800.0, 500.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="800" height="500" viewBox="0 0 800 500">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="800" height="500" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<path d="M{left:.1},{top:.1} L{left:.1},{:.1} L{:.1},{:.1}" stroke="black" fill="none"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            left - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if pts.len() == 1 {
            let (cx, cy) = pts[0].split_once(',').unwrap();
            let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="4" fill="{color}"/>"#);
        } else if !pts.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
                pts.join(" ")
            );
        }
        let ly = top + 16.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_plot_svg(title: &str, series: &[Series], path: &Path) -> Result<()> {
    fs::write(path, render_svg(title, series)).map_err(|e| Error::io(path, e))
}

/// Success-rate and return curves from a run log.
pub fn log_series(log: &RunLog) -> Vec<Series> {
    let pick = |f: fn(&LogRecord) -> f64| log.records.iter().map(|r| (r.step as f64, f(r))).collect();
    vec![
        Series {
            name: "success_rate".into(),
            points: pick(|r| r.success_rate),
        },
        Series {
            name: "coherency".into(),
            points: pick(|r| r.coherency),
        },
    ]
}
