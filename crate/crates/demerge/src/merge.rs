//! Streaming distribution-vector extraction, DEM composition and model
//! interpolation.
//!
//! Each operation walks the base index once. Per tensor it holds one input
//! payload buffer, one scratch buffer and one `f64` accumulator; sources are
//! read in weight-entry order.

use demerge_core::arith::{difference, INTERPOLATION_SUM_TOLERANCE};
use demerge_core::{check_compatibility, Accumulator, CheckpointKind, TensorMeta, WeightConfig};

use crate::checkpoint::{Checkpoint, CheckpointBuilder, TensorSink, TensorSource};
use crate::error::{Error, Result};

/// A source tagged with the label its weight is keyed by.
pub type Labeled<'a> = (&'a str, &'a dyn TensorSource);

fn numerics(meta: &TensorMeta, index: usize) -> Error {
    demerge_core::Error::Numerics {
        tensor: meta.name.clone(),
        index,
    }
    .into()
}

fn expect_kind(src: &dyn TensorSource, kind: CheckpointKind, what: &str) -> Result<()> {
    if src.kind() != kind {
        return Err(Error::config(format!(
            "{what} must be a {} checkpoint, got {}",
            kind.as_str(),
            src.kind().as_str()
        )));
    }
    Ok(())
}

fn log_warnings(weights: &WeightConfig) -> Result<()> {
    for w in weights.validate()? {
        log::warn!("{w}");
    }
    Ok(())
}

/// Resolves weight entries against labeled sources, checking compatibility
/// of every source with `base`.
fn plan<'a>(
    base: &dyn TensorSource,
    sources: &[Labeled<'a>],
    weights: &WeightConfig,
) -> Result<Vec<(&'a dyn TensorSource, f64)>> {
    let labels: Vec<&str> = sources.iter().map(|(l, _)| *l).collect();
    let order = weights.align(&labels)?;
    for (_, src) in sources {
        check_compatibility(base.metas(), src.metas())?;
    }
    Ok(order
        .into_iter()
        .zip(&weights.entries)
        .map(|(i, e)| (sources[i].1, e.weight))
        .collect())
}

/// `delta = tuned - base`, element-wise in each tensor's dtype.
pub fn extract_dv_into(
    base: &dyn TensorSource,
    tuned: &dyn TensorSource,
    out: &mut dyn TensorSink,
) -> Result<()> {
    expect_kind(base, CheckpointKind::Model, "base")?;
    expect_kind(tuned, CheckpointKind::Model, "fine-tuned model")?;
    check_compatibility(base.metas(), tuned.metas())?;
    let (mut b, mut t, mut d) = (Vec::new(), Vec::new(), Vec::new());
    for (i, meta) in base.metas().iter().enumerate() {
        base.read_tensor_into(i, &mut b)?;
        tuned.read_tensor_into(i, &mut t)?;
        difference(meta.dtype, &b, &t, &mut d).map_err(|idx| numerics(meta, idx))?;
        out.put(&meta.spec(), &d)?;
    }
    Ok(())
}

/// `base + sum_i w_i * delta_i`, accumulated in `f64` in weight-entry order.
pub fn compose_dem_into(
    base: &dyn TensorSource,
    dvs: &[Labeled<'_>],
    weights: &WeightConfig,
    out: &mut dyn TensorSink,
) -> Result<()> {
    expect_kind(base, CheckpointKind::Model, "base")?;
    for (label, dv) in dvs {
        expect_kind(*dv, CheckpointKind::Delta, &format!("distribution vector '{label}'"))?;
    }
    log_warnings(weights)?;
    let terms = plan(base, dvs, weights)?;
    let mut acc = Accumulator::new();
    let (mut buf, mut cast) = (Vec::new(), Vec::new());
    for (i, meta) in base.metas().iter().enumerate() {
        base.read_tensor_into(i, &mut buf)?;
        acc.load(meta.dtype, &buf);
        for &(dv, w) in &terms {
            if w == 0.0 {
                continue;
            }
            dv.read_tensor_into(dv_index(dv, meta, i)?, &mut buf)?;
            acc.add_scaled(meta.dtype, &buf, w);
        }
        acc.finish(meta.dtype, &mut cast).map_err(|idx| numerics(meta, idx))?;
        out.put(&meta.spec(), &cast)?;
    }
    Ok(())
}

/// `sum_i w_i * model_i` with `sum_i w_i = 1`.
pub fn interpolate_into(
    models: &[Labeled<'_>],
    weights: &WeightConfig,
    out: &mut dyn TensorSink,
) -> Result<()> {
    check_unit_sum(weights)?;
    let Some(&(_, first)) = models.first() else {
        return Err(Error::config("interpolation needs at least one model"));
    };
    for (label, m) in models {
        expect_kind(*m, CheckpointKind::Model, &format!("model '{label}'"))?;
    }
    log_warnings(weights)?;
    let terms = plan(first, models, weights)?;
    let mut acc = Accumulator::new();
    let (mut buf, mut cast) = (Vec::new(), Vec::new());
    for (i, meta) in first.metas().iter().enumerate() {
        acc.reset_zero(meta.element_count() as usize);
        for &(m, w) in &terms {
            if w == 0.0 {
                continue;
            }
            m.read_tensor_into(dv_index(m, meta, i)?, &mut buf)?;
            acc.add_scaled(meta.dtype, &buf, w);
        }
        acc.finish(meta.dtype, &mut cast).map_err(|idx| numerics(meta, idx))?;
        out.put(&meta.spec(), &cast)?;
    }
    Ok(())
}

/// Max absolute element difference between interpolating `models` and
/// composing `base` with the distribution vectors `model_i - base` under the
/// same weights. Both routes cast to the storage dtype before comparing.
pub fn equivalence_check(
    base: &dyn TensorSource,
    models: &[Labeled<'_>],
    weights: &WeightConfig,
) -> Result<f64> {
    check_unit_sum(weights)?;
    expect_kind(base, CheckpointKind::Model, "base")?;
    for (label, m) in models {
        expect_kind(*m, CheckpointKind::Model, &format!("model '{label}'"))?;
    }
    let terms = plan(base, models, weights)?;
    let (mut interp, mut dem) = (Accumulator::new(), Accumulator::new());
    let (mut b, mut m, mut d, mut cast_i, mut cast_d) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut max_diff = 0.0f64;
    for (i, meta) in base.metas().iter().enumerate() {
        base.read_tensor_into(i, &mut b)?;
        dem.load(meta.dtype, &b);
        interp.reset_zero(meta.element_count() as usize);
        for &(model, w) in &terms {
            model.read_tensor_into(dv_index(model, meta, i)?, &mut m)?;
            interp.add_scaled(meta.dtype, &m, w);
            difference(meta.dtype, &b, &m, &mut d).map_err(|idx| numerics(meta, idx))?;
            dem.add_scaled(meta.dtype, &d, w);
        }
        interp.finish(meta.dtype, &mut cast_i).map_err(|idx| numerics(meta, idx))?;
        dem.finish(meta.dtype, &mut cast_d).map_err(|idx| numerics(meta, idx))?;
        for (x, y) in meta.dtype.values(&cast_i).zip(meta.dtype.values(&cast_d)) {
            max_diff = max_diff.max((x - y).abs());
        }
    }
    Ok(max_diff)
}

fn check_unit_sum(weights: &WeightConfig) -> Result<()> {
    let sum = weights.sum();
    if (sum - 1.0).abs() > INTERPOLATION_SUM_TOLERANCE {
        return Err(Error::config(format!(
            "interpolation weights sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

// Compatible sources share the canonical order, so the index usually
// matches; fall back to a name lookup otherwise.
fn dv_index(src: &dyn TensorSource, meta: &TensorMeta, i: usize) -> Result<usize> {
    match src.metas().get(i) {
        Some(m) if m.name == meta.name => Ok(i),
        _ => src
            .tensor_index(&meta.name)
            .ok_or_else(|| demerge_core::Error::Compatibility(vec![meta.name.clone()]).into()),
    }
}

pub fn extract_dv(base: &dyn TensorSource, tuned: &dyn TensorSource) -> Result<Checkpoint> {
    let mut out = CheckpointBuilder::new(CheckpointKind::Delta);
    extract_dv_into(base, tuned, &mut out)?;
    Ok(out.finish())
}

pub fn compose_dem(
    base: &dyn TensorSource,
    dvs: &[Labeled<'_>],
    weights: &WeightConfig,
) -> Result<Checkpoint> {
    let mut out = CheckpointBuilder::new(CheckpointKind::Model);
    compose_dem_into(base, dvs, weights, &mut out)?;
    Ok(out.finish())
}

pub fn interpolate(models: &[Labeled<'_>], weights: &WeightConfig) -> Result<Checkpoint> {
    let mut out = CheckpointBuilder::new(CheckpointKind::Model);
    interpolate_into(models, weights, &mut out)?;
    Ok(out.finish())
}
