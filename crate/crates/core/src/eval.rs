//! Geometry-distance metric over annotated point matches and report output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FlowField, Point2};
use crate::io::{read_json, to_json_string, IoError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("eval: annotation for `{key}` is invalid: {msg}")]
    InvalidAnnotation { key: String, msg: String },
    #[error("eval: point ({x}, {y}) of `{key}` lies outside the {w}x{h} flow")]
    OutOfBounds {
        key: String,
        x: f64,
        y: f64,
        w: usize,
        h: usize,
    },
    #[error("eval: no annotation for pair `{0}`")]
    MissingAnnotation(String),
    #[error("eval: no flow for annotated pair `{0}`")]
    MissingFlow(String),
    #[error("eval: nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Scene categories of the evaluation set; `Synth` marks simulator pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "RE")]
    Re,
    #[serde(rename = "LT")]
    Lt,
    #[serde(rename = "LL")]
    Ll,
    #[serde(rename = "MF")]
    Mf,
    #[serde(rename = "SYNTH")]
    Synth,
}

impl Category {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Re => "RE",
            Self::Lt => "LT",
            Self::Ll => "LL",
            Self::Mf => "MF",
            Self::Synth => "SYNTH",
        }
    }
}

/// Matched points marked in frame `a` and frame `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationPair {
    pub category: Category,
    pub points_a: Vec<[f64; 2]>,
    pub points_b: Vec<[f64; 2]>,
}

impl AnnotationPair {
    pub fn validate(&self, key: &str) -> Result<(), EvalError> {
        let bad = |msg: String| {
            Err(EvalError::InvalidAnnotation {
                key: key.to_string(),
                msg,
            })
        };
        if self.points_a.is_empty() {
            return bad("no points".into());
        }
        if self.points_a.len() != self.points_b.len() {
            return bad(format!(
                "{} points in a, {} in b",
                self.points_a.len(),
                self.points_b.len()
            ));
        }
        if !self
            .points_a
            .iter()
            .chain(&self.points_b)
            .flatten()
            .all(|v| v.is_finite())
        {
            return bad("non-finite coordinate".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Ok(read_json(path)?)
    }
}

/// Mean of `|(p_a + flow(p_a)) - p_b|` over the marked points, sampling the
/// flow bilinearly.
pub fn geometry_distance(flow: &FlowField, ann: &AnnotationPair) -> Result<f64, EvalError> {
    keyed_distance(flow, ann, "")
}

fn keyed_distance(flow: &FlowField, ann: &AnnotationPair, key: &str) -> Result<f64, EvalError> {
    ann.validate(key)?;
    let mut sum = 0.0;
    for (a, b) in ann.points_a.iter().zip(&ann.points_b) {
        let uv = flow
            .sample_bilinear(&Point2::new(a[0], a[1]))
            .ok_or_else(|| EvalError::OutOfBounds {
                key: key.to_string(),
                x: a[0],
                y: a[1],
                w: flow.width(),
                h: flow.height(),
            })?;
        sum += (a[0] + uv[0] - b[0]).hypot(a[1] + uv[1] - b[1]);
    }
    Ok(sum / ann.points_a.len() as f64)
}

/// Distance achieved by the zero flow (identity warp).
pub fn identity_distance(ann: &AnnotationPair) -> f64 {
    let sum: f64 = ann
        .points_a
        .iter()
        .zip(&ann.points_b)
        .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
        .sum();
    sum / ann.points_a.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub key: String,
    pub category: Category,
    /// Reported distance, after clamping to the identity baseline.
    pub distance: f64,
    pub raw_distance: f64,
    pub identity_distance: f64,
    pub clamped: bool,
}

impl PairScore {
    pub fn new(key: impl Into<String>, category: Category, raw: f64, identity: f64) -> Self {
        let clamped = raw > identity;
        Self {
            key: key.into(),
            category,
            distance: if clamped { identity } else { raw },
            raw_distance: raw,
            identity_distance: identity,
            clamped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMean {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Mean over pairs, not over category means.
    pub overall_mean: f64,
    pub categories: BTreeMap<Category, CategoryMean>,
    pub pairs: Vec<PairScore>,
}

impl EvalReport {
    /// Aggregates scores; pairs are sorted by key so the result does not
    /// depend on evaluation order.
    pub fn from_scores(
        method: impl Into<String>,
        mut pairs: Vec<PairScore>,
    ) -> Result<Self, EvalError> {
        if pairs.is_empty() {
            return Err(EvalError::Empty);
        }
        pairs.sort_by(|a, b| a.key.cmp(&b.key));
        let mut sums: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
        let mut total = 0.0;
        for p in &pairs {
            let e = sums.entry(p.category).or_default();
            e.0 += p.distance;
            e.1 += 1;
            total += p.distance;
        }
        let categories = sums
            .into_iter()
            .map(|(c, (s, n))| {
                (
                    c,
                    CategoryMean {
                        mean: s / n as f64,
                        count: n,
                    },
                )
            })
            .collect();
        Ok(Self {
            method: method.into(),
            overall_mean: total / pairs.len() as f64,
            categories,
            pairs,
        })
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }

    /// Aligned plain-text table: one line per category, then the overall mean.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method: {}", self.method);
        let _ = writeln!(s, "{:<10} {:>7} {:>12}", "category", "pairs", "mean_px");
        for (c, m) in &self.categories {
            let _ = writeln!(s, "{:<10} {:>7} {:>12.6}", c.name(), m.count, m.mean);
        }
        let _ = writeln!(
            s,
            "{:<10} {:>7} {:>12.6}",
            "overall",
            self.pairs.len(),
            self.overall_mean
        );
        s
    }

    /// Per-pair CSV for plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,category,distance,raw_distance,identity_distance,clamped\n");
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                p.key,
                p.category.name(),
                p.distance,
                p.raw_distance,
                p.identity_distance,
                p.clamped
            );
        }
        s
    }
}

/// Scores every pair, clamping each to its identity-flow distance.
pub fn evaluate_method(
    method: &str,
    flows: &BTreeMap<String, FlowField>,
    anns: &BTreeMap<String, AnnotationPair>,
) -> Result<EvalReport, EvalError> {
    if let Some(k) = flows.keys().find(|k| !anns.contains_key(*k)) {
        return Err(EvalError::MissingAnnotation(k.clone()));
    }
    if let Some(k) = anns.keys().find(|k| !flows.contains_key(*k)) {
        return Err(EvalError::MissingFlow(k.clone()));
    }
    let keys: Vec<&String> = flows.keys().collect();
    let scores = keys
        .par_iter()
        .map(|k| {
            let ann = &anns[*k];
            let raw = keyed_distance(&flows[*k], ann, k)?;
            Ok(PairScore::new(
                k.as_str(),
                ann.category,
                raw,
                identity_distance(ann),
            ))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    EvalReport::from_scores(method, scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(a: Vec<[f64; 2]>, b: Vec<[f64; 2]>) -> AnnotationPair {
        AnnotationPair {
            category: Category::Synth,
            points_a: a,
            points_b: b,
        }
    }

    #[test]
    fn three_four_five() {
        let a = vec![[1.0, 1.0], [5.5, 2.25], [0.0, 9.0]];
        let b = a.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        let d = geometry_distance(&FlowField::zeros(10, 10), &ann(a, b)).unwrap();
        assert_eq!(format!("{d:.6}"), "5.000000");
    }

    #[test]
    fn zero_on_identity() {
        let pts = vec![[2.0, 3.0], [7.5, 1.5]];
        let d = geometry_distance(&FlowField::zeros(10, 10), &ann(pts.clone(), pts)).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn flow_is_sampled_bilinearly() {
        // u = x, so at x = 2.5 the warped point is 5.0
        let uv = (0..4 * 3).map(|i| [(i % 4) as f64, 0.0]).collect();
        let flow = FlowField::from_vec(4, 3, uv).unwrap();
        let d = geometry_distance(&flow, &ann(vec![[2.5, 1.0]], vec![[5.0, 1.0]])).unwrap();
        assert!(d.abs() < 1e-15);
    }

    #[test]
    fn out_of_bounds_and_invalid() {
        let flow = FlowField::zeros(4, 4);
        assert!(matches!(
            geometry_distance(&flow, &ann(vec![[4.5, 0.0]], vec![[0.0, 0.0]])),
            Err(EvalError::OutOfBounds { .. })
        ));
        assert!(matches!(
            geometry_distance(&flow, &ann(vec![], vec![])),
            Err(EvalError::InvalidAnnotation { .. })
        ));
        assert!(matches!(
            geometry_distance(&flow, &ann(vec![[1.0, 1.0]], vec![])),
            Err(EvalError::InvalidAnnotation { .. })
        ));
    }

    #[test]
    fn worse_than_identity_is_clamped() {
        let flows = BTreeMap::from([("p".to_string(), FlowField::zeros(8, 8).offset(10.0, 0.0))]);
        let anns = BTreeMap::from([("p".to_string(), ann(vec![[1.0, 1.0]], vec![[2.0, 1.0]]))]);
        let r = evaluate_method("bad", &flows, &anns).unwrap();
        assert!(r.pairs[0].clamped);
        assert_eq!(r.pairs[0].raw_distance, 9.0);
        assert_eq!(r.overall_mean, 1.0);
    }

    #[test]
    fn overall_is_mean_over_pairs() {
        let mut flows = BTreeMap::new();
        let mut anns = BTreeMap::new();
        for (i, (cat, dx)) in [
            (Category::Re, 1.0),
            (Category::Re, 3.0),
            (Category::Lt, 8.0),
        ]
        .into_iter()
        .enumerate()
        {
            let key = format!("k{i}");
            // flow overshoots by half the offset; identity distance is dx
            flows.insert(key.clone(), FlowField::zeros(20, 20).offset(1.5 * dx, 0.0));
            let mut a = ann(vec![[1.0, 1.0]], vec![[1.0 + dx, 1.0]]);
            a.category = cat;
            anns.insert(key, a);
        }
        let r = evaluate_method("m", &flows, &anns).unwrap();
        assert_eq!(r.categories[&Category::Re].mean, 1.0);
        assert_eq!(r.categories[&Category::Lt].mean, 4.0);
        assert_eq!(r.overall_mean, 2.0);
        assert!(r.to_text().contains("overall"));
        assert_eq!(r.to_csv().lines().count(), 4);
    }

    #[test]
    fn key_sets_must_match() {
        let flows = BTreeMap::from([("x".to_string(), FlowField::zeros(2, 2))]);
        let anns = BTreeMap::new();
        assert!(matches!(
            evaluate_method("m", &flows, &anns),
            Err(EvalError::MissingAnnotation(_))
        ));
        let anns = BTreeMap::from([("y".to_string(), ann(vec![[0.0, 0.0]], vec![[0.0, 0.0]]))]);
        assert!(matches!(
            evaluate_method("m", &BTreeMap::new(), &anns),
            Err(EvalError::MissingFlow(_))
        ));
    }

    #[test]
    fn annotation_json_round_trip() {
        let a = ann(vec![[1.25, 2.0]], vec![[3.0, 4.5]]);
        let text = a.to_json();
        assert!(text.contains("\"SYNTH\""));
        let back: AnnotationPair = serde_json::from_str(&text).unwrap();
        assert_eq!(back, a);
    }
}
