use crate::autodiff::{Reduction, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Per-pixel statistics across the `k` feature maps of one block, each
/// `[N, 1, h, w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatFeatureMaps {
    pub max_map: Var,
    /// Population variance (divides by `k`).
    pub var_map: Var,
}

/// Pixelwise maximum and variance over the channel axis of `[N, k, h, w]`.
pub fn compute_sfm<T: Real>(tape: &mut Tape<T>, feature_maps: Var) -> Result<StatFeatureMaps> {
    let (n, k, h, w) = tape.value(feature_maps).dims4()?;
    if k == 0 {
        return Err(Error::Shape("compute_sfm needs at least one feature map".into()));
    }
    let max = tape.reduce(feature_maps, Reduction::Max, 1)?;
    let var = tape.reduce(feature_maps, Reduction::Variance, 1)?;
    Ok(StatFeatureMaps {
        max_map: tape.reshape(max, &[n, 1, h, w])?,
        var_map: tape.reshape(var, &[n, 1, h, w])?,
    })
}

/// Input of MFE blocks 2..=4: channel concatenation in the fixed order
/// `[FN1.max, FN1.var, FN2.max, FN2.var, MFE.max, MFE.var]`. A disabled
/// feeder network contributes no channels.
pub fn mfe_block_input<T: Real>(
    tape: &mut Tape<T>,
    fn1: Option<&StatFeatureMaps>,
    fn2: Option<&StatFeatureMaps>,
    mfe_prev: &StatFeatureMaps,
) -> Result<Var> {
    let mut parts = Vec::with_capacity(6);
    for s in [fn1, fn2, Some(mfe_prev)].into_iter().flatten() {
        parts.push(s.max_map);
        parts.push(s.var_map);
    }
    let spatial = |v: Var| -> Result<(usize, usize, usize)> {
        let (n, _, h, w) = tape.value(v).dims4()?;
        Ok((n, h, w))
    };
    let want = spatial(parts[0])?;
    for &p in &parts[1..] {
        let got = spatial(p)?;
        if got != want {
            return Err(Error::Shape(format!(
                "statistical maps disagree on [N, h, w]: {want:?} vs {got:?}"
            )));
        }
    }
    tape.concat(&parts, 1)
}
