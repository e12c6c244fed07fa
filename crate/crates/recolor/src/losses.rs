//! Training objectives: reconstruction, perceptual, adversarial, and the
//! optical-flow temporal losses (short-term, dense long-term, and the
//! first-anchor long-term ablation baseline).
//!
//! Loss functions build onto a caller-supplied [`Tape`]; masks and flows
//! enter the graph as constants, so no gradient ever reaches them. Every
//! mask-weighted term is normalized by element count (mean), keeping loss
//! magnitudes resolution independent; normalization by pair count is an
//! explicit option because the summed form is equally defensible.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::flow::{FlowField, OcclusionMask};
use crate::model::{params::Bound, PerceptualNet};
use ndarray::IxDyn;
use std::collections::BTreeMap;

/// Flow + mask for an ordered frame pair, keyed by 0-based `(m, t)`.
pub type PairMap = BTreeMap<(usize, usize), (FlowField, OcclusionMask)>;

/// Objective coefficients. `lambda_lt` weights the first-anchor long-term
/// baseline and stays zero outside ablation runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_1: f64,
    pub lambda_p: f64,
    pub lambda_g: f64,
    pub lambda_st: f64,
    pub lambda_dlt: f64,
    pub lambda_lt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_1: 10.0,
            lambda_p: 5.0,
            lambda_g: 1.0,
            lambda_st: 3.0,
            lambda_dlt: 5.0,
            lambda_lt: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_1,
            self.lambda_p,
            self.lambda_g,
            self.lambda_st,
            self.lambda_dlt,
            self.lambda_lt,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// How mask-weighted temporal terms are aggregated over pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TermReduction {
    /// Plain sum over pairs (the literal reading of the objectives).
    #[default]
    SumOverPairs,
    /// Additionally divide by the number of evaluated pairs.
    MeanOverPairs,
}

/// A temporal loss value plus the exact pairs it evaluated.
pub struct TemporalLoss {
    pub value: Var,
    pub pairs: Vec<(usize, usize)>,
}

fn check_same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            tape.value(a).shape(),
            tape.value(b).shape()
        )));
    }
    Ok(())
}

fn zero_scalar(tape: &mut Tape) -> Var {
    tape.constant(crate::autodiff::Arr::zeros(IxDyn(&[])))
}

/// Mean absolute difference over all elements.
pub fn l1_loss(tape: &mut Tape, s: Var, z: Var) -> Result<Var> {
    check_same_shape(tape, s, z, "l1_loss")?;
    let d = tape.sub(s, z);
    let a = tape.abs(d);
    Ok(tape.mean_all(a))
}

/// Mean absolute difference of frozen features at the designated layer.
pub fn perceptual_loss(
    tape: &mut Tape,
    net: &PerceptualNet,
    net_bound: &Bound,
    s: Var,
    z: Var,
) -> Result<Var> {
    check_same_shape(tape, s, z, "perceptual_loss")?;
    let fs = net.features(tape, net_bound, s);
    let fz = net.features(tape, net_bound, z);
    let d = tape.sub(fs, fz);
    let a = tape.abs(d);
    Ok(tape.mean_all(a))
}

fn check_finite(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if tape.value(v).iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("{what}: non-finite score map")));
    }
    Ok(())
}

/// Wasserstein generator loss `-E[D(fake)]`.
pub fn wgan_g_loss(tape: &mut Tape, fake_scores: Var) -> Result<Var> {
    check_finite(tape, fake_scores, "wgan_g_loss")?;
    let m = tape.mean_all(fake_scores);
    Ok(tape.scale(m, -1.0))
}

/// Wasserstein critic loss `E[D(fake)] - E[D(real)]`.
pub fn wgan_d_loss(tape: &mut Tape, fake_scores: Var, real_scores: Var) -> Result<Var> {
    check_finite(tape, fake_scores, "wgan_d_loss")?;
    check_finite(tape, real_scores, "wgan_d_loss")?;
    let mf = tape.mean_all(fake_scores);
    let mr = tape.mean_all(real_scores);
    let neg = tape.scale(mr, -1.0);
    Ok(tape.add(mf, neg))
}

/// Mask node shaped `[1, 1, H, W]` for broadcasting over RGB outputs.
fn mask_node(tape: &mut Tape, mask: &OcclusionMask) -> Var {
    let (h, w) = (mask.height(), mask.width());
    let data = mask
        .data()
        .to_owned()
        .into_shape_with_order(IxDyn(&[1, 1, h, w]))
        .unwrap();
    tape.constant(data)
}

/// One mask-weighted L1 disparity: `mean(mask * |s_t - warp(s_m, flow)|)`.
fn pair_term(
    tape: &mut Tape,
    s_t: Var,
    s_m: Var,
    flow: &FlowField,
    mask: &OcclusionMask,
) -> Result<Var> {
    check_same_shape(tape, s_t, s_m, "temporal pair")?;
    let shape = tape.value(s_t).shape().to_vec();
    if (shape[2], shape[3]) != (mask.height(), mask.width())
        || (shape[2], shape[3]) != (flow.height(), flow.width())
    {
        return Err(Error::ShapeMismatch("temporal pair: flow/mask size".into()));
    }
    let warped = tape.warp_bilinear(s_m, flow);
    let d = tape.sub(s_t, warped);
    let a = tape.abs(d);
    let m = mask_node(tape, mask);
    let weighted = tape.mul_bcast(a, m);
    Ok(tape.mean_all(weighted))
}

fn reduce_pairs(tape: &mut Tape, terms: Vec<Var>, reduction: TermReduction) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    match reduction {
        TermReduction::SumOverPairs => acc,
        TermReduction::MeanOverPairs => tape.scale(acc, 1.0 / terms.len() as f64),
    }
}

/// Short-term temporal loss over adjacent pairs `(t-1, t)`.
///
/// `outputs[t]` is the generated frame at time t (`[1, 3, H, W]`);
/// `flows[t-1]`/`masks[t-1]` align frame t-1 onto frame t's grid.
/// A clip shorter than 2 frames yields zero (with a warning).
pub fn short_term_loss(
    tape: &mut Tape,
    outputs: &[Var],
    flows: &[FlowField],
    masks: &[OcclusionMask],
    reduction: TermReduction,
) -> Result<TemporalLoss> {
    let t_len = outputs.len();
    if t_len < 2 {
        log::warn!("short_term_loss on a clip of length {t_len}; returning 0");
        return Ok(TemporalLoss { value: zero_scalar(tape), pairs: vec![] });
    }
    if flows.len() != t_len - 1 || masks.len() != t_len - 1 {
        return Err(Error::InvalidArgument(format!(
            "short_term_loss: need {} flows and masks, got {} and {}",
            t_len - 1,
            flows.len(),
            masks.len()
        )));
    }
    let mut terms = Vec::new();
    let mut pairs = Vec::new();
    for t in 1..t_len {
        terms.push(pair_term(tape, outputs[t], outputs[t - 1], &flows[t - 1], &masks[t - 1])?);
        pairs.push((t - 1, t));
    }
    Ok(TemporalLoss { value: reduce_pairs(tape, terms, reduction), pairs })
}

/// Dense long-term loss over every remote pair `(m, t)` with `t - m >= 2`
/// (0-based), i.e. `(T-1)(T-2)/2` pairs for a clip of length T.
/// A clip shorter than 3 frames yields zero (with a warning); a missing
/// pair in `pair_map` is an error.
pub fn dense_long_term_loss(
    tape: &mut Tape,
    outputs: &[Var],
    pair_map: &PairMap,
    reduction: TermReduction,
) -> Result<TemporalLoss> {
    let t_len = outputs.len();
    if t_len < 3 {
        log::warn!("dense_long_term_loss on a clip of length {t_len}; returning 0");
        return Ok(TemporalLoss { value: zero_scalar(tape), pairs: vec![] });
    }
    let mut terms = Vec::new();
    let mut pairs = Vec::new();
    for t in 2..t_len {
        for m in 0..=t - 2 {
            let (flow, mask) = pair_map.get(&(m, t)).ok_or_else(|| {
                Error::InvalidArgument(format!("dense_long_term_loss: missing pair ({m}, {t})"))
            })?;
            terms.push(pair_term(tape, outputs[t], outputs[m], flow, mask)?);
            pairs.push((m, t));
        }
    }
    Ok(TemporalLoss { value: reduce_pairs(tape, terms, reduction), pairs })
}

/// Ablation baseline: long-term loss anchored at the first frame only,
/// pairs `(0, t)` for `t >= 2` (0-based).
pub fn long_term_loss_first_anchor(
    tape: &mut Tape,
    outputs: &[Var],
    pair_map: &PairMap,
    reduction: TermReduction,
) -> Result<TemporalLoss> {
    let t_len = outputs.len();
    if t_len < 3 {
        log::warn!("long_term_loss_first_anchor on a clip of length {t_len}; returning 0");
        return Ok(TemporalLoss { value: zero_scalar(tape), pairs: vec![] });
    }
    let mut terms = Vec::new();
    let mut pairs = Vec::new();
    for t in 2..t_len {
        let (flow, mask) = pair_map.get(&(0, t)).ok_or_else(|| {
            Error::InvalidArgument(format!("long_term_loss_first_anchor: missing pair (0, {t})"))
        })?;
        terms.push(pair_term(tape, outputs[t], outputs[0], flow, mask)?);
        pairs.push((0, t));
    }
    Ok(TemporalLoss { value: reduce_pairs(tape, terms, reduction), pairs })
}

/// First-stage objective `lambda_1 * L1 + lambda_p * Lp`.
pub fn stage1_objective(tape: &mut Tape, l1: Var, lp: Var, weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    let a = tape.scale(l1, weights.lambda_1);
    let b = tape.scale(lp, weights.lambda_p);
    Ok(tape.add(a, b))
}

/// Raw (unweighted) term nodes of the second-stage objective.
#[derive(Clone, Copy)]
pub struct Stage2Components {
    pub l1: Var,
    pub lp: Var,
    pub lg: Var,
    pub lst: Var,
    pub ldlt: Var,
    /// First-anchor long-term term; only ablation configs set this.
    pub llt: Option<Var>,
}

/// Weighted total plus the recoverable per-term decomposition.
pub struct Stage2Breakdown {
    pub total: Var,
    /// `(name, raw value, weighted value)` in summation order.
    pub terms: Vec<(&'static str, f64, f64)>,
}

/// Second-stage objective: the weighted sum of all components in a fixed
/// summation order (l1, p, g, st, dlt, then lt if present).
pub fn stage2_objective(
    tape: &mut Tape,
    comps: &Stage2Components,
    weights: &LossWeights,
) -> Result<Stage2Breakdown> {
    weights.validate()?;
    let mut terms = Vec::new();
    let mut total: Option<Var> = None;
    let mut push = |tape: &mut Tape, name: &'static str, v: Var, w: f64| {
        let raw = tape.scalar_value(v);
        terms.push((name, raw, w * raw));
        let scaled = tape.scale(v, w);
        total = Some(match total {
            Some(acc) => tape.add(acc, scaled),
            None => scaled,
        });
    };
    push(tape, "l1", comps.l1, weights.lambda_1);
    push(tape, "lp", comps.lp, weights.lambda_p);
    push(tape, "lg", comps.lg, weights.lambda_g);
    push(tape, "lst", comps.lst, weights.lambda_st);
    push(tape, "ldlt", comps.ldlt, weights.lambda_dlt);
    if let Some(llt) = comps.llt {
        push(tape, "llt", llt, weights.lambda_lt);
    }
    Ok(Stage2Breakdown { total: total.unwrap(), terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Arr;
    use crate::data::{ColorSpace, Frame};
    use crate::model::frame_to_var;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    fn frame_of(c: usize, h: usize, w: usize, v: f64) -> Frame {
        let space = if c == 1 { ColorSpace::Grayscale } else { ColorSpace::Rgb };
        Frame::new(Array3::from_elem((c, h, w), v), space).unwrap()
    }

    #[test]
    fn l1_known_values() {
        let mut tape = Tape::new();
        let a = frame_to_var(&mut tape, &frame_of(3, 2, 2, 0.25));
        let b = frame_to_var(&mut tape, &frame_of(3, 2, 2, -0.25));
        let same = l1_loss(&mut tape, a, a).unwrap();
        assert_eq!(tape.scalar_value(same), 0.0);
        let diff = l1_loss(&mut tape, a, b).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(diff), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn l1_rejects_shape_mismatch() {
        let mut tape = Tape::new();
        let a = frame_to_var(&mut tape, &frame_of(3, 2, 2, 0.0));
        let b = frame_to_var(&mut tape, &frame_of(3, 4, 4, 0.0));
        assert!(l1_loss(&mut tape, a, b).is_err());
    }

    #[test]
    fn perceptual_zero_on_identical_and_nonnegative() {
        let net = PerceptualNet::new(1);
        let mut tape = Tape::new();
        let nb = net.bind(&mut tape);
        let a = frame_to_var(&mut tape, &frame_of(3, 8, 8, 0.3));
        let b = frame_to_var(&mut tape, &frame_of(3, 8, 8, -0.4));
        let zero = perceptual_loss(&mut tape, &net, &nb, a, a).unwrap();
        assert_eq!(tape.scalar_value(zero), 0.0);
        let pos = perceptual_loss(&mut tape, &net, &nb, a, b).unwrap();
        assert!(tape.scalar_value(pos) >= 0.0);
    }

    #[test]
    fn wgan_losses_match_formulas() {
        let mut tape = Tape::new();
        let fake = tape.constant(Arr::from_elem(ndarray::IxDyn(&[1, 2, 2]), 0.3));
        let real = tape.constant(Arr::from_elem(ndarray::IxDyn(&[1, 2, 2]), 0.7));
        let g = wgan_g_loss(&mut tape, fake).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(g), -0.3, epsilon = 1e-12);
        let d = wgan_d_loss(&mut tape, fake, real).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(d), -0.4, epsilon = 1e-12);
        let sym = wgan_d_loss(&mut tape, fake, fake).unwrap();
        assert_eq!(tape.scalar_value(sym), 0.0);
    }

    #[test]
    fn wgan_rejects_non_finite() {
        let mut tape = Tape::new();
        let bad = tape.constant(Arr::from_elem(ndarray::IxDyn(&[2]), f64::NAN));
        assert!(wgan_g_loss(&mut tape, bad).is_err());
    }

    fn ones_mask(h: usize, w: usize) -> OcclusionMask {
        OcclusionMask::ones(h, w)
    }

    #[test]
    fn short_term_static_outputs_zero() {
        let mut tape = Tape::new();
        let s: Vec<Var> = (0..3).map(|_| frame_to_var(&mut tape, &frame_of(3, 4, 4, 0.2))).collect();
        let flows = vec![FlowField::zeros(4, 4), FlowField::zeros(4, 4)];
        let masks = vec![ones_mask(4, 4), ones_mask(4, 4)];
        let out = short_term_loss(&mut tape, &s, &flows, &masks, TermReduction::SumOverPairs).unwrap();
        assert_eq!(tape.scalar_value(out.value), 0.0);
        assert_eq!(out.pairs, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn short_term_constant_offset() {
        let mut tape = Tape::new();
        let s1 = frame_to_var(&mut tape, &frame_of(3, 4, 4, 0.1));
        let s2 = frame_to_var(&mut tape, &frame_of(3, 4, 4, 0.3));
        let out = short_term_loss(
            &mut tape,
            &[s1, s2],
            &[FlowField::zeros(4, 4)],
            &[ones_mask(4, 4)],
            TermReduction::SumOverPairs,
        )
        .unwrap();
        assert_abs_diff_eq!(tape.scalar_value(out.value), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn short_term_zero_mask_annihilates() {
        let mut tape = Tape::new();
        let s1 = frame_to_var(&mut tape, &frame_of(3, 4, 4, -0.5));
        let s2 = frame_to_var(&mut tape, &frame_of(3, 4, 4, 0.5));
        let zero_mask =
            OcclusionMask::new(Array3::zeros((1, 4, 4))).unwrap();
        let out = short_term_loss(
            &mut tape,
            &[s1, s2],
            &[FlowField::zeros(4, 4)],
            &[zero_mask],
            TermReduction::SumOverPairs,
        )
        .unwrap();
        assert_eq!(tape.scalar_value(out.value), 0.0);
    }

    #[test]
    fn short_term_degenerate_clip_warns_zero() {
        let mut tape = Tape::new();
        let s1 = frame_to_var(&mut tape, &frame_of(3, 4, 4, 0.1));
        let out = short_term_loss(&mut tape, &[s1], &[], &[], TermReduction::SumOverPairs).unwrap();
        assert_eq!(tape.scalar_value(out.value), 0.0);
        assert!(out.pairs.is_empty());
    }

    fn full_pair_map(t_len: usize, h: usize, w: usize) -> PairMap {
        let mut map = PairMap::new();
        for t in 0..t_len {
            for m in 0..t {
                map.insert((m, t), (FlowField::zeros(h, w), ones_mask(h, w)));
            }
        }
        map
    }

    #[test]
    fn dense_pair_enumeration() {
        let mut tape = Tape::new();
        let s: Vec<Var> = (0..5).map(|_| frame_to_var(&mut tape, &frame_of(3, 4, 4, 0.0))).collect();
        let map = full_pair_map(5, 4, 4);
        let out = dense_long_term_loss(&mut tape, &s, &map, TermReduction::SumOverPairs).unwrap();
        // 0-based pairs for T=5: exactly (T-1)(T-2)/2 = 6.
        assert_eq!(
            out.pairs,
            vec![(0, 2), (0, 3), (1, 3), (0, 4), (1, 4), (2, 4)]
        );
    }

    #[test]
    fn dense_missing_pair_is_error() {
        let mut tape = Tape::new();
        let s: Vec<Var> = (0..4).map(|_| frame_to_var(&mut tape, &frame_of(3, 4, 4, 0.0))).collect();
        let mut map = full_pair_map(4, 4, 4);
        map.remove(&(0, 3));
        assert!(dense_long_term_loss(&mut tape, &s, &map, TermReduction::SumOverPairs).is_err());
    }

    #[test]
    fn first_anchor_pairs_and_t3_equivalence() {
        let mut tape = Tape::new();
        let s: Vec<Var> = (0..5)
            .map(|i| frame_to_var(&mut tape, &frame_of(3, 4, 4, 0.1 * i as f64)))
            .collect();
        let map = full_pair_map(5, 4, 4);
        let lt = long_term_loss_first_anchor(&mut tape, &s, &map, TermReduction::SumOverPairs).unwrap();
        assert_eq!(lt.pairs, vec![(0, 2), (0, 3), (0, 4)]);

        let s3 = &s[..3];
        let lt3 = long_term_loss_first_anchor(&mut tape, s3, &map, TermReduction::SumOverPairs).unwrap();
        let dlt3 = dense_long_term_loss(&mut tape, s3, &map, TermReduction::SumOverPairs).unwrap();
        assert_eq!(tape.scalar_value(lt3.value), tape.scalar_value(dlt3.value));
    }

    #[test]
    fn objectives_combine_linearly() {
        let mut tape = Tape::new();
        let one = tape.constant(Arr::ones(ndarray::IxDyn(&[])));
        let w = LossWeights::default();
        let s1 = stage1_objective(&mut tape, one, one, &w).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(s1), 15.0, epsilon = 1e-12);

        let comps = Stage2Components { l1: one, lp: one, lg: one, lst: one, ldlt: one, llt: None };
        let s2 = stage2_objective(&mut tape, &comps, &w).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(s2.total), 24.0, epsilon = 1e-12);
        let dot: f64 = s2.terms.iter().map(|(_, _, wv)| wv).sum();
        assert_eq!(tape.scalar_value(s2.total), dot);

        // Zeroing the temporal weights isolates the colorization terms.
        let mut w2 = w;
        w2.lambda_st = 0.0;
        w2.lambda_dlt = 0.0;
        let s3 = stage2_objective(&mut tape, &comps, &w2).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(s3.total), 16.0, epsilon = 1e-12);

        let zero = LossWeights {
            lambda_1: 0.0,
            lambda_p: 0.0,
            lambda_g: 0.0,
            lambda_st: 0.0,
            lambda_dlt: 0.0,
            lambda_lt: 0.0,
        };
        let s4 = stage1_objective(&mut tape, one, one, &zero).unwrap();
        assert_eq!(tape.scalar_value(s4), 0.0);
    }

    #[test]
    fn negative_weights_rejected() {
        let mut tape = Tape::new();
        let one = tape.constant(Arr::ones(ndarray::IxDyn(&[])));
        let w = LossWeights { lambda_1: -1.0, ..Default::default() };
        assert!(stage1_objective(&mut tape, one, one, &w).is_err());
    }

    #[test]
    fn temporal_losses_have_zero_gradient_into_masks() {
        // Masks enter as constants; backward must not produce a gradient
        // for them, and the frame gradient must be mask-shaped.
        let mut tape = Tape::new();
        let base = Arr::from_shape_simple_fn(ndarray::IxDyn(&[1, 3, 4, 4]), || 0.3);
        let s1 = tape.leaf(base.clone(), true);
        let s2 = tape.leaf(base.mapv(|v| v + 0.2), true);
        let mut mask = Array3::ones((1, 4, 4));
        mask[[0, 0, 0]] = 0.0;
        let masks = vec![OcclusionMask::new(mask).unwrap()];
        let out = short_term_loss(
            &mut tape,
            &[s1, s2],
            &[FlowField::zeros(4, 4)],
            &masks,
            TermReduction::SumOverPairs,
        )
        .unwrap();
        let grads = tape.backward(out.value);
        let g2 = grads.wrt(s2).unwrap();
        assert_eq!(g2[[0, 0, 0, 0]], 0.0); // masked-out pixel
        assert!(g2[[0, 1, 1, 1]] > 0.0);
    }
}
