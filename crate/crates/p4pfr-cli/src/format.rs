//! File formats: the TOML correspondence file, the ground-truth sidecar, and
//! the structured-text solution documents.
//!
//! Floats in text documents are written with 17 significant digits, which
//! round-trips `f64` exactly.

use anyhow::{bail, Context, Result};
use nalgebra::{Matrix3, Vector3};
use p4pfr::solver::{PoseSolution, RootRejection};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const CORRESPONDENCE_FORMAT: &str = "planar-p4pfr/1";
pub const SOLUTIONS_FORMAT: &str = "planar-p4pfr-solutions/1";
pub const RANSAC_FORMAT: &str = "planar-p4pfr-ransac/1";

/// Input document: world points (one plane), distorted image observations
/// and an optional scale hint for pixel-valued coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrespondenceFile {
    pub format: String,
    pub world: Vec<[f64; 3]>,
    pub image: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_scale_hint: Option<f64>,
}

impl CorrespondenceFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("input: cannot read {}", path.display()))?;
        let file: CorrespondenceFile =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("input: parse error: {e}"))?;
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CORRESPONDENCE_FORMAT {
            bail!(
                "input: unsupported format {:?} (expected {:?})",
                self.format,
                CORRESPONDENCE_FORMAT
            );
        }
        if self.world.len() != self.image.len() {
            bail!(
                "input: world has {} points but image has {}",
                self.world.len(),
                self.image.len()
            );
        }
        if self.world.len() < 4 {
            bail!("input: need at least 4 points, got {}", self.world.len());
        }
        let finite = self
            .world
            .iter()
            .flatten()
            .chain(self.image.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            bail!("input: non-finite coordinate");
        }
        if let Some(h) = self.image_scale_hint {
            if !(h.is_finite() && h > 0.0) {
                bail!("input: image_scale_hint must be a positive real");
            }
        }
        Ok(())
    }

    pub fn world_points(&self) -> Vec<Vector3<f64>> {
        self.world
            .iter()
            .map(|w| Vector3::new(w[0], w[1], w[2]))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut doc = String::new();
        writeln!(doc, "format = \"{}\"", self.format)?;
        writeln!(doc)?;
        writeln!(doc, "world = [")?;
        for w in &self.world {
            writeln!(doc, "  [{}, {}, {}],", fmt(w[0]), fmt(w[1]), fmt(w[2]))?;
        }
        writeln!(doc, "]")?;
        writeln!(doc)?;
        writeln!(doc, "image = [")?;
        for p in &self.image {
            writeln!(doc, "  [{}, {}],", fmt(p[0]), fmt(p[1]))?;
        }
        writeln!(doc, "]")?;
        if let Some(h) = self.image_scale_hint {
            writeln!(doc)?;
            writeln!(doc, "image_scale_hint = {}", fmt(h))?;
        }
        std::fs::write(path, doc).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}

/// Ground truth written next to an emitted instance for round-trip checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthSidecar {
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub f: f64,
    pub k: f64,
}

impl GroundTruthSidecar {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serialize sidecar")?;
        std::fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        Ok(toml::from_str(&text)?)
    }
}

/// One solution as serialized in output documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionRecord {
    /// Rotation, row-major.
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub f: f64,
    pub k: f64,
    pub max_reproj_err: f64,
    pub per_point_err: Vec<f64>,
}

impl SolutionRecord {
    pub fn from_solution(sol: &PoseSolution, per_point_err: Vec<f64>) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = sol.r[(i, j)];
            }
        }
        Self {
            r,
            t: [sol.t.x, sol.t.y, sol.t.z],
            f: sol.f,
            k: sol.k,
            max_reproj_err: sol.max_reproj_err,
            per_point_err,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.r)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.t[0], self.t[1], self.t[2])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub beta: f64,
    pub reason: String,
}

impl RejectionRecord {
    pub fn from_rejection(r: &RootRejection) -> Self {
        Self {
            beta: r.beta,
            reason: r.reason.to_string(),
        }
    }
}

/// JSON payload for `solve --json-out`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveDocument {
    pub format: String,
    pub solutions: Vec<SolutionRecord>,
    pub rejections: Vec<RejectionRecord>,
}

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Render the human-readable solve document.
pub fn render_solve_document(doc: &SolveDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format: {}", SOLUTIONS_FORMAT);
    let _ = writeln!(out, "solutions: {}", doc.solutions.len());
    for (i, sol) in doc.solutions.iter().enumerate() {
        let _ = writeln!(out, "solution {}", i + 1);
        let _ = writeln!(out, "  r: {}", join(&sol.r));
        let _ = writeln!(out, "  t: {}", join(&sol.t));
        let _ = writeln!(out, "  f: {}", fmt(sol.f));
        let _ = writeln!(out, "  k: {}", fmt(sol.k));
        let _ = writeln!(out, "  max_reproj_err: {}", fmt(sol.max_reproj_err));
        let _ = writeln!(out, "  per_point_err: {}", join(&sol.per_point_err));
    }
    let _ = writeln!(out, "rejections: {}", doc.rejections.len());
    for rej in &doc.rejections {
        let _ = writeln!(out, "  root beta={} reason={}", fmt(rej.beta), rej.reason);
    }
    out
}

/// Parse a document produced by [`render_solve_document`]. Used by the
/// round-trip tests; tolerant of the ransac prologue lines.
pub fn parse_solution_records(text: &str) -> Result<Vec<SolutionRecord>> {
    let mut records = Vec::new();
    let mut current: Option<SolutionRecord> = None;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("solution ") {
            if let Some(rec) = current.take() {
                records.push(rec);
            }
            current = Some(SolutionRecord {
                r: [0.0; 9],
                t: [0.0; 3],
                f: 0.0,
                k: 0.0,
                max_reproj_err: 0.0,
                per_point_err: Vec::new(),
            });
            continue;
        }
        let Some(rec) = current.as_mut() else {
            continue;
        };
        if let Some(rest) = trimmed.strip_prefix("r: ") {
            let v = parse_floats(rest)?;
            if v.len() != 9 {
                bail!("bad rotation row");
            }
            rec.r.copy_from_slice(&v);
        } else if let Some(rest) = trimmed.strip_prefix("t: ") {
            let v = parse_floats(rest)?;
            if v.len() != 3 {
                bail!("bad translation row");
            }
            rec.t.copy_from_slice(&v);
        } else if let Some(rest) = trimmed.strip_prefix("f: ") {
            rec.f = rest.trim().parse()?;
        } else if let Some(rest) = trimmed.strip_prefix("k: ") {
            rec.k = rest.trim().parse()?;
        } else if let Some(rest) = trimmed.strip_prefix("max_reproj_err: ") {
            rec.max_reproj_err = rest.trim().parse()?;
        } else if let Some(rest) = trimmed.strip_prefix("per_point_err: ") {
            rec.per_point_err = parse_floats(rest)?;
        } else if trimmed.starts_with("rejections:") {
            if let Some(rec) = current.take() {
                records.push(rec);
            }
        }
    }
    if let Some(rec) = current.take() {
        records.push(rec);
    }
    Ok(records)
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| tok.parse::<f64>().context("bad float"))
        .collect()
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(" ")
}
