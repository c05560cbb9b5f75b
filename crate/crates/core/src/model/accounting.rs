//! Closed-form parameter, FLOP and layer counts. These are computed from the
//! configuration alone and are cross-checked against the built model in
//! tests.

use serde::Serialize;

use crate::nn::dsc_param_count;

use super::config::{HybridModelConfig, Toggles};

/// Resource totals. `flops` counts 2 per multiply-accumulate of every
/// convolution and dense layer at the configured input size, for one image;
/// normalisation, activations, pooling and bias adds are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub params: usize,
    pub flops: u64,
    /// Convolution layers; a depthwise-separable convolution counts as two
    /// (depthwise and pointwise) and 1x1 projections count as one each.
    pub conv_layers: usize,
    pub dense_layers: usize,
}

impl Counts {
    const ZERO: Counts = Counts { params: 0, flops: 0, conv_layers: 0, dense_layers: 0 };

    /// One `k x k` convolution on a `side x side` map.
    pub fn conv_layer(in_ch: usize, out_ch: usize, k: usize, side: usize, bias: bool) -> Counts {
        let mut n = Counts::ZERO;
        n.conv(in_ch, out_ch, k, side, bias);
        n
    }

    /// One depthwise-separable convolution (3x3 depthwise, 1x1 pointwise, bias).
    pub fn dsc_layer(in_ch: usize, out_ch: usize, side: usize) -> Counts {
        let mut n = Counts::ZERO;
        n.dsc(in_ch, out_ch, side);
        n
    }

    fn conv(&mut self, in_ch: usize, out_ch: usize, k: usize, side: usize, bias: bool) {
        self.params += in_ch * out_ch * k * k + if bias { out_ch } else { 0 };
        self.flops += 2 * (side * side * in_ch * out_ch * k * k) as u64;
        self.conv_layers += 1;
    }

    fn bn(&mut self, ch: usize) {
        self.params += 2 * ch;
    }

    fn dsc(&mut self, in_ch: usize, out_ch: usize, side: usize) {
        self.params += dsc_param_count(in_ch, out_ch);
        self.flops += 2 * (side * side * in_ch * (9 + out_ch)) as u64;
        self.conv_layers += 2;
    }

    fn residual(&mut self, width: usize, side: usize) {
        for _ in 0..2 {
            self.conv(width, width, 3, side, true);
            self.bn(width);
        }
    }
}

pub fn count_params_and_flops(c: &HybridModelConfig) -> Counts {
    let mut n = Counts::ZERO;
    let s = c.input_size;
    if c.use_attention {
        let a = c.attention_width;
        n.conv(3, a, 3, s, true);
        n.bn(a);
        for _ in 0..c.attention_residual_blocks {
            n.residual(a, s);
        }
        n.residual(a, s / 2);
        n.conv(a, a, 1, s, true);
        n.conv(a, 3, 1, s, true);
    }
    let w = c.channel_widths;
    for i in 0..4 {
        let side = s >> i;
        let prev = if i == 0 { 3 } else { w[i - 1] };
        if c.use_cnc_branch {
            n.conv(prev, w[i], 3, side, false);
            n.bn(w[i]);
        }
        if c.use_dsc_branch {
            n.dsc(prev, w[i], side);
            n.bn(w[i]);
        }
        if c.use_mfe_branch {
            let in_ch = if i == 0 { 3 } else { c.mfe_stat_channels() };
            n.conv(in_ch, w[i], 3, side, true);
            n.bn(w[i]);
        }
    }
    let mut fan_in = c.concat_width();
    for &out in &c.fc_widths {
        n.params += fan_in * out + out;
        n.flops += 2 * (fan_in * out) as u64;
        n.dense_layers += 1;
        fan_in = out;
    }
    n
}

/// Published parameter (millions) and FLOP (billions) totals, in the row
/// order of [`super::config::ABLATION_GRID`]. For side-by-side reporting
/// only: the published channel widths are unknown.
pub const REFERENCE_TOTALS: [(f64, f64); 8] = [
    (1.94, 14.0),
    (1.58, 11.0),
    (1.32, 5.37),
    (0.99, 4.9),
    (0.69, 1.78),
    (1.21, 3.16),
    (0.96, 2.81),
    (0.64, 0.36),
];

/// Published exact parameter total of the full model.
pub const REFERENCE_FULL_PARAMS: usize = 1_943_096;

/// Published convolution-layer total of the full model, attention included.
pub const REFERENCE_CONV_LAYERS: usize = 50;

/// One line of the accounting comparison.
#[derive(Debug, Clone, Serialize)]
pub struct AccountingRow {
    pub toggles: Toggles,
    pub ours: Counts,
    pub reference_params_millions: f64,
    pub reference_gflops: f64,
}

/// Our counts for each ablation row of `base`, alongside the published
/// totals.
pub fn accounting_table(base: &HybridModelConfig) -> Vec<AccountingRow> {
    super::config::ABLATION_GRID
        .iter()
        .zip(REFERENCE_TOTALS)
        .map(|(&t, (p, f))| AccountingRow {
            toggles: t,
            ours: count_params_and_flops(&base.with_toggles(t)),
            reference_params_millions: p,
            reference_gflops: f,
        })
        .collect()
}

fn mark(b: bool) -> &'static str {
    if b {
        "y"
    } else {
        "-"
    }
}

/// Plain-text rendering of [`accounting_table`].
pub fn render_accounting(rows: &[AccountingRow]) -> String {
    let mut out = String::from(
        "att dsc mfe cnc |   params (M)   ref |  GFLOPs    ref | conv layers\n",
    );
    for r in rows {
        let t = r.toggles;
        out.push_str(&format!(
            " {}   {}   {}   {}  | {:>11.3} {:>5.2} | {:>7.3} {:>6.2} | {}\n",
            mark(t.attention),
            mark(t.dsc),
            mark(t.mfe),
            mark(t.cnc),
            r.ours.params as f64 / 1e6,
            r.reference_params_millions,
            r.ours.flops as f64 / 1e9,
            r.reference_gflops,
            r.ours.conv_layers,
        ));
    }
    out
}
