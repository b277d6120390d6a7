//! Closed-form parameter and FLOP accounting, and weight-norm profiles of
//! cross-layer convolutions.
//!
//! Cost convention: one multiply-accumulate (MAC) is 2 FLOPs for conv,
//! cross-layer and linear layers. Batch norm, ReLU and pooling cost 1 FLOP
//! per output element, and an unweighted sum of S maps costs S − 1 adds per
//! element. A cross-layer convolution costs one MAC per live source and
//! output element. Counts are per image. Only learnable parameters are
//! counted; running statistics are not.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::cldc::Cldc;
use crate::error::{Error, Result};
use crate::model::{Connectivity, Model, ModelSpec, Stem};
use crate::tensor::Shape4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub model: String,
    pub input: Shape4,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
    pub total_flops: u64,
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    /// Rows whose name satisfies `pred`, summed as (params, macs, flops).
    pub fn sum_where(&self, pred: impl Fn(&str) -> bool) -> (u64, u64, u64) {
        self.rows
            .iter()
            .filter(|r| pred(&r.name))
            .fold((0, 0, 0), |acc, r| {
                (acc.0 + r.params, acc.1 + r.macs, acc.2 + r.flops)
            })
    }

    /// One CSV row per layer: name, params, macs, flops.
    pub fn write_records<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(
            f,
            "model {} input {}x{}x{}",
            self.model, self.input.c, self.input.h, self.input.w
        )?;
        writeln!(
            f,
            "{:<width$} {:>12} {:>15} {:>15}",
            "layer", "params", "macs", "flops"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<width$} {:>12} {:>15} {:>15}",
                r.name, r.params, r.macs, r.flops
            )?;
        }
        writeln!(
            f,
            "{:<width$} {:>12} {:>15} {:>15}",
            "total", self.total_params, self.total_macs, self.total_flops
        )?;
        write!(
            f,
            "params {:.3}M  gflops {:.3}",
            self.mparams(),
            self.gflops()
        )
    }
}

struct Builder {
    rows: Vec<CostRow>,
}

impl Builder {
    fn push(&mut self, name: String, params: usize, macs: usize, elementwise: usize) {
        let (params, macs, elementwise) = (params as u64, macs as u64, elementwise as u64);
        self.rows.push(CostRow {
            name,
            params,
            macs,
            flops: 2 * macs + elementwise,
        });
    }

    fn conv(&mut self, name: String, c_in: usize, c_out: usize, k: usize, h: usize, w: usize) {
        let params = c_out * c_in * k * k;
        self.push(name, params, params * h * w, 0);
    }

    fn bn_relu(&mut self, prefix: &str, bn: &str, relu: &str, c: usize, h: usize, w: usize) {
        self.push(format!("{prefix}.{bn}"), 2 * c, 0, c * h * w);
        self.push(format!("{prefix}.{relu}"), 0, 0, c * h * w);
    }

    fn mix(
        &mut self,
        prefix: &str,
        connectivity: Connectivity,
        rows: usize,
        live: usize,
        m: usize,
        hw: usize,
    ) {
        match connectivity {
            // unused weight rows are stored but never multiplied
            Connectivity::Cldc => {
                self.push(format!("{prefix}.cldc"), rows * m + m, live * m * hw, 0)
            }
            Connectivity::Residual => self.push(format!("{prefix}.sum"), 0, 0, (live - 1) * m * hw),
        }
    }
}

fn conv_len(len: usize, k: usize, s: usize, p: usize) -> usize {
    (len + 2 * p - k) / s + 1
}

/// Per-layer parameter, MAC and FLOP counts for one image of `input`.
pub fn count_flops(spec: &ModelSpec, input: Shape4) -> Result<CostReport> {
    spec.validate()?;
    if input.n != 1 || input.c != 3 {
        return Err(Error::InvalidArgument(format!(
            "cost input must be 1x3xHxW, got {input}"
        )));
    }
    let sizes = spec.block_input_sizes(input.h, input.w)?;
    let mut b = Builder { rows: Vec::new() };
    let w0 = spec.stem_width();
    match spec.stem {
        Stem::Cifar => b.conv("stem.conv".into(), 3, w0, 3, input.h, input.w),
        Stem::Imagenet => {
            let (h, w) = (conv_len(input.h, 7, 2, 3), conv_len(input.w, 7, 2, 3));
            b.conv("stem.conv".into(), 3, w0, 7, h, w);
            b.push("stem.pool".into(), 0, 0, w0 * sizes[0].0 * sizes[0].1);
        }
    }
    for (k, &(h, w)) in sizes.iter().enumerate() {
        let (base, width, count) = (spec.base_widths[k], spec.width(k), spec.layer_counts[k]);
        let hw = h * w;
        for l in 1..=count {
            let p = format!("block{}.layer{l}", k + 1);
            b.mix(&p, spec.connectivity, spec.cldc_rows(k, l), l, width, hw);
            b.bn_relu(&p, "bn1", "relu1", width, h, w);
            b.conv(format!("{p}.conv1"), width, base, 1, h, w);
            b.bn_relu(&p, "bn2", "relu2", base, h, w);
            b.conv(format!("{p}.conv2"), base, base, 3, h, w);
            b.bn_relu(&p, "bn3", "relu3", base, h, w);
            b.conv(format!("{p}.conv3"), base, width, 1, h, w);
        }
        if k + 1 < sizes.len() {
            let p = format!("transition{}", k + 1);
            b.mix(&p, spec.connectivity, count + 1, count + 1, width, hw);
            b.bn_relu(&p, "bn", "relu", width, h, w);
            let (hn, wn) = sizes[k + 1];
            b.conv(
                format!("{p}.conv"),
                width,
                spec.width(k + 1),
                spec.transition.kernel(),
                hn,
                wn,
            );
        } else {
            b.mix("head", spec.connectivity, count + 1, count + 1, width, hw);
            b.bn_relu("head", "bn", "relu", width, h, w);
            b.push("head.pool".into(), 0, 0, width);
            let c = spec.num_classes;
            b.push("head.linear".into(), c * width + c, c * width, 0);
        }
    }
    let rows = b.rows;
    Ok(CostReport {
        model: spec.name.clone(),
        input,
        total_params: rows.iter().map(|r| r.params).sum(),
        total_macs: rows.iter().map(|r| r.macs).sum(),
        total_flops: rows.iter().map(|r| r.flops).sum(),
        rows,
    })
}

/// Parameter counts; they do not depend on the input size, so the report
/// uses the stem's native resolution.
pub fn count_params(spec: &ModelSpec) -> Result<CostReport> {
    count_flops(spec, spec.default_input())
}

/// Share of parameters and FLOPs spent in cross-layer convolutions at the
/// stem's native resolution.
pub fn cldc_overhead(spec: &ModelSpec) -> Result<(f64, f64)> {
    if spec.connectivity != Connectivity::Cldc {
        return Err(Error::InvalidArgument(format!(
            "model `{}` has no cross-layer convolutions",
            spec.name
        )));
    }
    let report = count_params(spec)?;
    let (params, _, flops) = report.sum_where(|n| n.ends_with(".cldc"));
    Ok((
        params as f64 / report.total_params as f64,
        flops as f64 / report.total_flops as f64,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormEntry {
    pub source_index: usize,
    pub l2_norm: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormProfile {
    pub site: String,
    pub entries: Vec<NormEntry>,
}

/// Per-source L2 norms over the first `live` weight rows of `cldc`,
/// divided by their maximum. An all-zero site normalizes to zeros.
pub fn profile_cldc(site: &str, cldc: &Cldc, live: usize) -> NormProfile {
    let m = cldc.channels();
    let norms: Vec<f64> = (0..live.min(cldc.sources()))
        .map(|i| {
            (0..m)
                .map(|c| cldc.weight_at(i, c).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    let entries = norms
        .into_iter()
        .enumerate()
        .map(|(i, n)| NormEntry {
            source_index: i,
            l2_norm: n,
            normalized: if max > 0.0 { n / max } else { 0.0 },
        })
        .collect();
    NormProfile {
        site: site.to_string(),
        entries,
    }
}

/// Norm profiles for every transition mix and the pre-classifier mix.
/// With `all_layers`, the mixes feeding composite layers are included too,
/// restricted to their live sources.
pub fn extract_norms(model: &Model, all_layers: bool) -> Result<Vec<NormProfile>> {
    let spec = model.spec();
    if spec.connectivity != Connectivity::Cldc {
        return Err(Error::InvalidArgument(format!(
            "model `{}` has no cross-layer convolutions",
            spec.name
        )));
    }
    let mut out = Vec::new();
    for (k, layers) in model.blocks.iter().enumerate() {
        if all_layers {
            for (l, layer) in layers.iter().enumerate() {
                if let Some(c) = layer.mixer.as_cldc() {
                    out.push(profile_cldc(
                        &format!("block{}_layer{}", k + 1, l + 1),
                        c,
                        l + 1,
                    ));
                }
            }
        }
        let (site, mixer) = match model.transitions.get(k) {
            Some(t) => (format!("transition_{}", k + 1), &t.mixer),
            None => ("pre_classifier".to_string(), &model.head.mixer),
        };
        if let Some(c) = mixer.as_cldc() {
            out.push(profile_cldc(&site, c, layers.len() + 1));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct NormRecord<'a> {
    site: &'a str,
    source_index: usize,
    l2_norm: f64,
    normalized_norm: f64,
}

/// CSV with columns site, source_index, l2_norm, normalized_norm.
pub fn write_norms<W: Write>(profiles: &[NormProfile], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in profiles {
        for e in &p.entries {
            w.serialize(NormRecord {
                site: &p.site,
                source_index: e.source_index,
                l2_norm: e.l2_norm,
                normalized_norm: e.normalized,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
