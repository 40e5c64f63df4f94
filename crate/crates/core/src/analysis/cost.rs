//! Analytic parameter and MAC census of the cloud-side networks.
//!
//! One MAC counts as one FLOP. Attention products are itemised separately
//! from the projections so attention-only totals can be inspected.

use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{DecoderConfig, Variant, HEAD_UPSAMPLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    BatchNorm,
    Linear,
    SelfAttention,
    CrossAttention,
    ClassTokens,
    Upsample,
    EntropyModel,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::ConvTranspose => "conv_transpose",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::Linear => "linear",
            LayerKind::SelfAttention => "self_attention",
            LayerKind::CrossAttention => "cross_attention",
            LayerKind::ClassTokens => "class_tokens",
            LayerKind::Upsample => "upsample",
            LayerKind::EntropyModel => "entropy_model",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEntry {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub title: String,
    /// Image height and width the MACs were counted at.
    pub resolution: Option<(usize, usize)>,
    pub entries: Vec<CostEntry>,
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    #[serde(flatten)]
    report: CostReport,
    total_params: u64,
    total_macs: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("declared total {field} = {declared} but entries sum to {actual}")]
    Totals {
        field: &'static str,
        declared: u64,
        actual: u64,
    },
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.entries.iter().map(|e| e.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.entries.iter().map(|e| e.macs).sum()
    }

    pub fn macs_of(&self, kind: LayerKind) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.macs)
            .sum()
    }

    pub fn params_of(&self, kind: LayerKind) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.params)
            .sum()
    }

    /// Entries whose name starts with `prefix`.
    pub fn section(&self, prefix: &str) -> impl Iterator<Item = &CostEntry> {
        let p = prefix.to_string();
        self.entries.iter().filter(move |e| e.name.starts_with(&p))
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| ReportError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(
        title: &str,
        resolution: Option<(usize, usize)>,
        text: &str,
    ) -> Result<Self, ReportError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let entries = r.deserialize().collect::<Result<Vec<CostEntry>, _>>()?;
        Ok(Self {
            title: title.to_string(),
            resolution,
            entries,
        })
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        Ok(serde_json::to_string_pretty(&ReportJson {
            report: self.clone(),
            total_params: self.total_params(),
            total_macs: self.total_macs(),
        })?)
    }

    /// Parses [`to_json`](Self::to_json) output and checks the stored totals.
    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let j: ReportJson = serde_json::from_str(text)?;
        for (field, declared, actual) in [
            ("params", j.total_params, j.report.total_params()),
            ("macs", j.total_macs, j.report.total_macs()),
        ] {
            if declared != actual {
                return Err(ReportError::Totals {
                    field,
                    declared,
                    actual,
                });
            }
        }
        Ok(j.report)
    }
}

/// Networks that may appear in a census.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    StubEncoder,
    FeatureEncoder,
    HyperEncoder,
    HyperDecoder,
    EntropyModels,
    FeatureDecoder,
    Decoder,
}

/// A named collection of networks sharing one [`DecoderConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct CostTarget {
    pub name: String,
    pub config: DecoderConfig,
    pub parts: Vec<Part>,
}

impl CostTarget {
    /// Everything the cloud runs: `CD + FD + D` for the baseline, `CD + JD`
    /// for the joint decoder. `CD` is the hyper decoder plus entropy models.
    pub fn cloud(config: DecoderConfig) -> Self {
        let mut parts = vec![Part::HyperDecoder, Part::EntropyModels];
        if config.variant == Variant::Baseline {
            parts.push(Part::FeatureDecoder);
        }
        parts.push(Part::Decoder);
        let name = match config.variant {
            Variant::Baseline => "CD+FD+D",
            Variant::Joint => "CD+JD",
        };
        Self {
            name: name.into(),
            config,
            parts,
        }
    }

    /// The decoding head alone.
    pub fn decoder(config: DecoderConfig) -> Self {
        let name = match config.variant {
            Variant::Baseline => "D",
            Variant::Joint => "JD",
        };
        Self {
            name: name.into(),
            config,
            parts: vec![Part::Decoder],
        }
    }

    pub fn with_parts(name: &str, config: DecoderConfig, parts: Vec<Part>) -> Self {
        Self {
            name: name.into(),
            config,
            parts,
        }
    }
}

struct Census {
    entries: Vec<CostEntry>,
}

impl Census {
    fn push(&mut self, name: String, kind: LayerKind, params: u64, macs: u64) {
        self.entries.push(CostEntry {
            name,
            kind,
            params,
            macs,
        });
    }

    /// Plain convolution with bias, `hw` the output grid.
    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, g: usize, out_hw: usize) {
        let w = (cout * (cin / g) * k * k) as u64;
        self.push(
            format!("{name}.conv"),
            LayerKind::Conv,
            w + cout as u64,
            w * out_hw as u64,
        );
    }

    /// Transposed convolution with bias, `hw` the input grid: each input
    /// element scatters `out/G * k^2` products.
    fn conv_t(&mut self, name: &str, k: usize, cin: usize, cout: usize, g: usize, in_hw: usize) {
        let w = (cin * (cout / g) * k * k) as u64;
        self.push(
            format!("{name}.conv"),
            LayerKind::ConvTranspose,
            w + cout as u64,
            w * in_hw as u64,
        );
    }

    fn bn(&mut self, name: &str, c: usize, hw: usize) {
        self.push(
            format!("{name}.bn"),
            LayerKind::BatchNorm,
            2 * c as u64,
            (c * hw) as u64,
        );
    }

    fn linear(&mut self, name: &str, rows: usize, din: usize, dout: usize) {
        self.push(
            name.to_string(),
            LayerKind::Linear,
            (din * dout + dout) as u64,
            (rows * din * dout) as u64,
        );
    }

    fn self_attention(&mut self, name: &str, d: usize, t: usize) {
        for p in ["query", "key", "value"] {
            self.conv(&format!("{name}.{p}"), 1, d, d, 1, t);
            self.bn(&format!("{name}.{p}"), d, t);
        }
        let tt = (t * t * d) as u64;
        self.push(format!("{name}.scores"), LayerKind::SelfAttention, 0, tt);
        self.push(format!("{name}.mix"), LayerKind::SelfAttention, 0, tt);
        self.conv(&format!("{name}.output"), 1, d, d, 1, t);
        self.bn(&format!("{name}.output"), d, t);
    }

    fn cross_attention(&mut self, name: &str, d: usize, s: usize, t: usize) {
        self.linear(&format!("{name}.query"), t + s, d, d);
        self.linear(&format!("{name}.key"), s, d, d);
        self.push(
            format!("{name}.scores"),
            LayerKind::CrossAttention,
            0,
            ((t + s) * s * d) as u64,
        );
        self.push(
            format!("{name}.mix"),
            LayerKind::CrossAttention,
            0,
            (t * s * d) as u64,
        );
        self.push(
            format!("{name}.class_tokens"),
            LayerKind::ClassTokens,
            (s * d) as u64,
            0,
        );
    }

    fn decoder(&mut self, c: &DecoderConfig, h: usize, w: usize) {
        let (d, s) = (c.dim, c.classes);
        let (gh, gw) = c.grid(h, w);
        let t = gh * gw;
        self.self_attention("decoder.mining.stage1", d, t);
        self.conv("decoder.mining.skip", 1, d, d, 1, t);
        self.cross_attention("decoder.mining.cross", d, s, t);
        self.self_attention("decoder.mining.stage2", d, t);
        let mut grid = t;
        if c.variant == Variant::Joint {
            self.conv_t("decoder.up", 5, d, d, c.groups, t);
            grid = t * c.stride * c.stride;
            self.bn("decoder.up", d, grid);
        }
        self.conv("decoder.classifier", 1, d, s, 1, grid);
        let up = HEAD_UPSAMPLE * HEAD_UPSAMPLE;
        self.push(
            "decoder.upsample".into(),
            LayerKind::Upsample,
            0,
            (4 * s * grid * up) as u64,
        );
    }

    fn add(&mut self, part: Part, c: &DecoderConfig, h: usize, w: usize) {
        let f = c.features;
        let z = (h / 4) * (w / 4);
        let r = (h / 8) * (w / 8);
        let hy = (h / 16) * (w / 16);
        match part {
            Part::StubEncoder => {
                let x2 = (h / 2) * (w / 2);
                self.conv("stub.stem", 3, 3, 32, 1, x2);
                self.bn("stub.stem", 32, x2);
                self.conv("stub.down", 3, 32, 64, 1, z);
                self.bn("stub.down", 64, z);
                self.conv("stub.project", 1, 64, f, 1, z);
                self.bn("stub.project", f, z);
            }
            Part::FeatureEncoder => {
                self.conv("fe.down", 3, f, f, c.groups, r);
                self.bn("fe.down", f, r);
                self.conv("fe.project", 1, f, f, 1, r);
                self.bn("fe.project", f, r);
            }
            Part::HyperEncoder => {
                self.conv("hyper.encoder.down", 3, f, f, 1, hy);
                self.bn("hyper.encoder.down", f, hy);
                self.conv("hyper.encoder.project", 1, f, f, 1, hy);
                self.bn("hyper.encoder.project", f, hy);
            }
            Part::HyperDecoder => {
                self.conv_t("hyper.decoder.project", 1, f, f, 1, hy);
                self.bn("hyper.decoder.project", f, hy);
                self.conv_t("hyper.decoder.up", 3, f, f, 1, hy);
                self.bn("hyper.decoder.up", f, r);
            }
            Part::EntropyModels => {
                self.push(
                    "entropy.hyper_scales".into(),
                    LayerKind::EntropyModel,
                    f as u64,
                    0,
                );
            }
            Part::FeatureDecoder => {
                self.conv_t("fd.project", 1, f, f, 1, r);
                self.bn("fd.project", f, r);
                self.conv_t("fd.up", 3, f, f, c.groups, r);
                self.bn("fd.up", f, z);
            }
            Part::Decoder => self.decoder(c, h, w),
        }
    }
}

/// Parameter and MAC census of `target` on an `h x w` image.
pub fn count_flops(target: &CostTarget, h: usize, w: usize) -> CostReport {
    let mut census = Census {
        entries: Vec::new(),
    };
    for &p in &target.parts {
        census.add(p, &target.config, h, w);
    }
    CostReport {
        title: target.name.clone(),
        resolution: Some((h, w)),
        entries: census.entries,
    }
}

/// Parameter census; MAC columns are zero.
pub fn count_params(target: &CostTarget) -> CostReport {
    let mut r = count_flops(target, 0, 0);
    r.resolution = None;
    for e in &mut r.entries {
        e.macs = 0;
    }
    r
}

/// One row of the cloud-side comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub system: String,
    pub gflops: f64,
    pub mparams: f64,
}

/// Cloud-side cost of the baseline (`CD+FD+D`, d=256) against `CD+JD`.
pub fn cloud_comparison(classes: usize, jd_dim: usize, h: usize, w: usize) -> Vec<ComparisonRow> {
    [
        DecoderConfig::baseline(classes),
        DecoderConfig::joint(jd_dim, classes),
    ]
    .into_iter()
    .map(|c| {
        let r = count_flops(&CostTarget::cloud(c), h, w);
        ComparisonRow {
            system: r.title.clone(),
            gflops: r.total_macs() as f64 / 1e9,
            mparams: r.total_params() as f64 / 1e6,
        }
    })
    .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ReportError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `HxW` as used on the command line, e.g. `1024x2048`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad dimension {v:?}"))
        };
        Ok(Self {
            height: parse(a)?,
            width: parse(b)?,
        })
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}
