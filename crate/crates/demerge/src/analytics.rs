//! Weight-space geometry of fine-tuned models and their distribution
//! vectors: distances from the base, pairwise cosine similarity, and
//! per-layer distance profiles.

use std::collections::BTreeMap;
use std::path::Path;

use demerge_core::geometry::{
    layer_rows, CosineAccumulator, Gram, LayerDistanceRow, SquaredDistance, UNGROUPED,
};
use demerge_core::{check_compatibility, CheckpointKind, WeightConfig};
use regex::Regex;
use serde_json::{json, Value};

use crate::checkpoint::TensorSource;
use crate::error::{Error, Result};
use crate::merge::Labeled;

/// Maps tensor names to layer keys.
#[derive(Debug, Clone)]
pub struct LayerPattern {
    re: Regex,
}

impl LayerPattern {
    /// Matches `layers.<N>.` and keys by `N`.
    pub const DEFAULT: &'static str = r"layers\.(\d+)\.";

    pub fn new(pattern: &str) -> Result<Self> {
        let re = Regex::new(pattern)
            .map_err(|e| Error::config(format!("invalid layer pattern: {e}")))?;
        Ok(LayerPattern { re })
    }

    /// First capture group when present, otherwise the whole match;
    /// unmatched names fall into [`UNGROUPED`].
    pub fn key(&self, name: &str) -> String {
        match self.re.captures(name) {
            Some(c) => c.get(1).or_else(|| c.get(0)).unwrap().as_str().to_string(),
            None => UNGROUPED.to_string(),
        }
    }
}

impl Default for LayerPattern {
    fn default() -> Self {
        LayerPattern::new(Self::DEFAULT).expect("default pattern compiles")
    }
}

fn compatible(a: &dyn TensorSource, b: &dyn TensorSource) -> Result<()> {
    Ok(check_compatibility(a.metas(), b.metas())?)
}

/// Euclidean distance between the flattened checkpoints.
pub fn euclidean_distance(a: &dyn TensorSource, b: &dyn TensorSource) -> Result<f64> {
    compatible(a, b)?;
    let mut acc = SquaredDistance::new();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, meta) in a.metas().iter().enumerate() {
        a.read_tensor_into(i, &mut x)?;
        b.read_tensor_into(i, &mut y)?;
        acc.add(meta.dtype, &x, &y);
    }
    Ok(acc.distance())
}

/// Cosine similarity of the flattened checkpoints. Zero-norm inputs are a
/// `DegenerateInput` error.
pub fn cosine_similarity(a: &dyn TensorSource, b: &dyn TensorSource) -> Result<f64> {
    compatible(a, b)?;
    let mut acc = CosineAccumulator::new();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, meta) in a.metas().iter().enumerate() {
        a.read_tensor_into(i, &mut x)?;
        b.read_tensor_into(i, &mut y)?;
        acc.add(meta.dtype, &x, &y);
    }
    Ok(acc.finish()?)
}

/// Euclidean distance per layer group, normalized by the largest group.
pub fn layerwise_distance(
    a: &dyn TensorSource,
    b: &dyn TensorSource,
    pattern: &LayerPattern,
) -> Result<Vec<LayerDistanceRow>> {
    compatible(a, b)?;
    let mut groups: BTreeMap<String, SquaredDistance> = BTreeMap::new();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, meta) in a.metas().iter().enumerate() {
        a.read_tensor_into(i, &mut x)?;
        b.read_tensor_into(i, &mut y)?;
        groups.entry(pattern.key(&meta.name)).or_default().add(meta.dtype, &x, &y);
    }
    Ok(layer_rows(groups.into_iter().map(|(k, d)| (k, d.sum()))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorSource {
    /// `model - base`
    Model,
    /// A distribution vector given directly.
    Dv,
    /// `sum_i w_i * dv_i`
    Dem,
}

impl VectorSource {
    pub fn as_str(self) -> &'static str {
        match self {
            VectorSource::Model => "model",
            VectorSource::Dv => "dv",
            VectorSource::Dem => "dem",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub label: String,
    pub source: VectorSource,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatrix {
    pub labels: Vec<String>,
    /// `None` where either vector has zero norm.
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemCosine {
    pub weights: WeightConfig,
    pub cosine: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub label: String,
    pub source: VectorSource,
    pub rows: Vec<LayerDistanceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticsReport {
    pub base_tensors: usize,
    pub base_elements: u64,
    pub distance_from_base: Vec<DistanceRow>,
    pub dv_cosine_matrix: Option<CosineMatrix>,
    pub dem_vs_dv_cosine: Option<DemCosine>,
    pub layerwise: Vec<LayerProfile>,
}

/// Builds the full report. Every model contributes the vector
/// `model - base`; every dv contributes itself. With `dem` weights, the
/// weighted sum of all those vectors is analyzed as well.
///
/// Per tensor, one `f64` buffer per vector is resident.
pub fn analytics_report(
    base: &dyn TensorSource,
    models: &[Labeled<'_>],
    dvs: &[Labeled<'_>],
    dem: Option<&WeightConfig>,
    pattern: &LayerPattern,
) -> Result<AnalyticsReport> {
    let mut vectors: Vec<(&str, VectorSource, &dyn TensorSource)> = Vec::new();
    for &(label, m) in models {
        if m.kind() != CheckpointKind::Model {
            return Err(Error::config(format!("'{label}' is not a model checkpoint")));
        }
        vectors.push((label, VectorSource::Model, m));
    }
    for &(label, d) in dvs {
        if d.kind() != CheckpointKind::Delta {
            return Err(Error::config(format!("'{label}' is not a delta checkpoint")));
        }
        vectors.push((label, VectorSource::Dv, d));
    }
    for (i, (label, _, src)) in vectors.iter().enumerate() {
        if vectors[..i].iter().any(|(l, _, _)| l == label) {
            return Err(Error::config(format!("duplicate label '{label}'")));
        }
        compatible(base, *src)?;
    }
    let labels: Vec<&str> = vectors.iter().map(|(l, _, _)| *l).collect();
    let dem_terms: Option<Vec<(usize, f64)>> = match dem {
        Some(w) if !vectors.is_empty() => {
            w.validate()?;
            let order = w.align(&labels)?;
            Some(order.into_iter().zip(w.entries.iter().map(|e| e.weight)).collect())
        }
        _ => None,
    };

    let n = vectors.len() + usize::from(dem_terms.is_some());
    let mut gram = Gram::new(n);
    let mut groups: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); n];
    let mut base_buf = Vec::new();
    let mut raw = Vec::new();
    let mut bufs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut elements = 0u64;

    for (i, meta) in base.metas().iter().enumerate() {
        elements += meta.element_count();
        base.read_tensor_into(i, &mut raw)?;
        base_buf.clear();
        base_buf.extend(meta.dtype.values(&raw));
        for (v, (_, source, src)) in vectors.iter().enumerate() {
            let idx = src
                .tensor_index(&meta.name)
                .ok_or_else(|| demerge_core::Error::Compatibility(vec![meta.name.clone()]))?;
            src.read_tensor_into(idx, &mut raw)?;
            let buf = &mut bufs[v];
            buf.clear();
            match source {
                VectorSource::Model => buf.extend(
                    meta.dtype.values(&raw).zip(&base_buf).map(|(m, b)| m - b),
                ),
                _ => buf.extend(meta.dtype.values(&raw)),
            }
        }
        if let Some(terms) = &dem_terms {
            let (head, tail) = bufs.split_at_mut(vectors.len());
            let acc = &mut tail[0];
            acc.clear();
            acc.resize(base_buf.len(), -0.0);
            for &(v, w) in terms {
                if w == 0.0 {
                    continue;
                }
                for (a, x) in acc.iter_mut().zip(&head[v]) {
                    *a += w * x;
                }
            }
        }
        let views: Vec<&[f64]> = bufs.iter().map(|b| b.as_slice()).collect();
        gram.add(&views);
        let key = pattern.key(&meta.name);
        for (v, b) in bufs.iter().enumerate() {
            let sq: f64 = b.iter().map(|x| x * x).sum();
            *groups[v].entry(key.clone()).or_insert(0.0) += sq;
        }
    }

    let mut entries: Vec<(String, VectorSource)> = vectors
        .iter()
        .map(|(l, s, _)| (l.to_string(), *s))
        .collect();
    if dem_terms.is_some() {
        entries.push(("dem".to_string(), VectorSource::Dem));
    }
    let cos = |i: usize, j: usize| gram.cosine(i, j).ok();

    let distance_from_base = entries
        .iter()
        .enumerate()
        .map(|(i, (label, source))| DistanceRow {
            label: label.clone(),
            source: *source,
            distance: gram.norm(i),
        })
        .collect();
    let dv_cosine_matrix = (!vectors.is_empty()).then(|| CosineMatrix {
        labels: labels.iter().map(|l| l.to_string()).collect(),
        values: (0..vectors.len())
            .map(|i| (0..vectors.len()).map(|j| cos(i, j)).collect())
            .collect(),
    });
    let dem_vs_dv_cosine = dem_terms.as_ref().map(|_| DemCosine {
        weights: dem.cloned().unwrap(),
        cosine: labels
            .iter()
            .enumerate()
            .map(|(j, l)| (l.to_string(), cos(vectors.len(), j)))
            .collect(),
    });
    let layerwise = entries
        .into_iter()
        .zip(groups)
        .map(|((label, source), g)| LayerProfile {
            label,
            source,
            rows: layer_rows(g),
        })
        .collect();

    Ok(AnalyticsReport {
        base_tensors: base.metas().len(),
        base_elements: elements,
        distance_from_base,
        dv_cosine_matrix,
        dem_vs_dv_cosine,
        layerwise,
    })
}

impl AnalyticsReport {
    pub fn to_json(&self) -> Value {
        json!({
            "base": {"tensors": self.base_tensors, "elements": self.base_elements},
            "distance_from_base": self.distance_from_base.iter().map(|r| json!({
                "label": r.label, "source": r.source.as_str(), "distance": r.distance,
            })).collect::<Vec<_>>(),
            "dv_cosine_matrix": self.dv_cosine_matrix.as_ref().map(|m| json!({
                "labels": m.labels, "values": m.values,
            })),
            "dem_vs_dv_cosine": self.dem_vs_dv_cosine.as_ref().map(|d| json!({
                "weights": crate::weights::to_json(&d.weights),
                "cosine": d.cosine.iter().map(|(l, c)| json!({"label": l, "cosine": c})).collect::<Vec<_>>(),
            })),
            "layerwise": self.layerwise.iter().map(|p| json!({
                "label": p.label,
                "source": p.source.as_str(),
                "rows": p.rows.iter().map(|r| json!({
                    "layer": r.layer_key, "distance": r.distance, "normalized": r.normalized,
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }

    /// CSV mirrors of each section, as `(file suffix, contents)`.
    pub fn to_csv(&self) -> Result<Vec<(&'static str, String)>> {
        let mut out = Vec::new();

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "source", "distance"]).map_err(csv_err)?;
        for r in &self.distance_from_base {
            w.write_record([r.label.as_str(), r.source.as_str(), &r.distance.to_string()])
                .map_err(csv_err)?;
        }
        out.push(("distance_from_base.csv", finish_csv(w)?));

        if let Some(m) = &self.dv_cosine_matrix {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec![String::new()];
            header.extend(m.labels.iter().cloned());
            w.write_record(&header).map_err(csv_err)?;
            for (label, row) in m.labels.iter().zip(&m.values) {
                let mut rec = vec![label.clone()];
                rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
                w.write_record(&rec).map_err(csv_err)?;
            }
            out.push(("dv_cosine_matrix.csv", finish_csv(w)?));
        }

        if let Some(d) = &self.dem_vs_dv_cosine {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["label", "cosine"]).map_err(csv_err)?;
            for (l, c) in &d.cosine {
                w.write_record([l.clone(), c.map(|v| v.to_string()).unwrap_or_default()])
                    .map_err(csv_err)?;
            }
            out.push(("dem_vs_dv_cosine.csv", finish_csv(w)?));
        }

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "source", "layer", "distance", "normalized"])
            .map_err(csv_err)?;
        for p in &self.layerwise {
            for r in &p.rows {
                w.write_record([
                    p.label.as_str(),
                    p.source.as_str(),
                    r.layer_key.as_str(),
                    &r.distance.to_string(),
                    &r.normalized.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.push(("layerwise.csv", finish_csv(w)?));
        Ok(out)
    }

    /// Writes `<path>` as JSON plus one `<stem>.<section>.csv` per section,
    /// each atomically.
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.to_json()).expect("report serializes");
        crate::fsutil::write_atomic(path, &json)?;
        let stem = path.with_extension("");
        for (suffix, text) in self.to_csv()? {
            let p = stem.with_file_name(format!(
                "{}.{suffix}",
                stem.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
            ));
            crate::fsutil::write_atomic(&p, text.as_bytes())?;
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::io("writing csv", std::io::Error::other(e))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("writing csv", e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::io("writing csv", std::io::Error::other(e)))
}
