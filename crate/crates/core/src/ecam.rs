//! Per-electrode attribution maps.

use dceeg_autodiff::{Graph, Mode, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::clip::HeadNames;
use crate::conformer::EegEncoder;
use crate::error::Result;
use crate::nn;
use crate::samples::{chunks, Samples};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcamMethod {
    /// |input × ∂logit/∂input| of the predicted class, summed over time.
    #[default]
    GradientInput,
    /// Mean |temporal-conv output| per electrode.
    ConvActivation,
}

/// Scores for one epoch, min-max normalized to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMap {
    pub scores: Vec<f64>,
    pub predicted: usize,
    /// Set when the raw attribution was constant and the map was made uniform.
    pub warning: Option<String>,
}

/// Min-max normalize; a constant map becomes all ones with a warning.
pub fn normalize_map(raw: &[f64]) -> (Vec<f64>, Option<String>) {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 0.0) || !hi.is_finite() || !lo.is_finite() {
        let w = if raw.iter().all(|v| *v == 0.0) {
            "all-zero attribution"
        } else {
            "constant attribution"
        };
        return (
            vec![1.0; raw.len()],
            Some(format!("{w}; uniform map emitted")),
        );
    }
    (raw.iter().map(|v| (v - lo) / (hi - lo)).collect(), None)
}

/// One map per epoch in `data`, eval mode.
pub fn ecam<T: Real>(
    enc: &EegEncoder,
    heads: &HeadNames,
    store: &ParamStore<T>,
    data: &Samples<T>,
    method: EcamMethod,
    batch: usize,
) -> Result<Vec<ChannelMap>> {
    let (e, l) = (enc.cfg.electrodes, enc.cfg.window_samples);
    let c_in = enc.cfg.input_channels;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for idx in chunks(&all, batch) {
        let b = idx.len();
        let mut g = Graph::new(Mode::Eval, 0, 0);
        let xt = data.batch(idx);
        let x = g.input_with_grad("x", xt.shape());
        let tr = enc.encode(&mut g, store, x)?;
        let logits = nn::linear(&mut g, store, &heads.classifier, tr.features)?;
        g.forward(store, &[("x", &xt)])
            .map_err(|err| tr.locate(err))?;
        let k = g.shape(logits)[1];
        let predicted: Vec<usize> = g
            .data(logits)?
            .chunks(k)
            .map(|r| (0..k).fold(0, |best, j| if r[j] > r[best] { j } else { best }))
            .collect();
        let raw: Vec<Vec<f64>> = match method {
            EcamMethod::GradientInput => {
                let mut sel = vec![0.0; b * k];
                for (i, &p) in predicted.iter().enumerate() {
                    sel[i * k + p] = 1.0;
                }
                let sel = g.constant(&Tensor::from_f64(&[b, k], &sel)?);
                let picked = g.mul(logits, sel)?;
                let target = g.sum(picked)?;
                g.forward(store, &[("x", &xt)])?;
                g.backward(target)?;
                let grad = g
                    .grad(x)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); xt.numel()]);
                let xs = xt.data();
                (0..b)
                    .map(|i| {
                        (0..e)
                            .map(|ch| {
                                let mut s = 0.0;
                                for c in 0..c_in {
                                    let base = ((i * c_in + c) * e + ch) * l;
                                    for t in 0..l {
                                        s +=
                                            (xs[base + t].as_f64() * grad[base + t].as_f64()).abs();
                                    }
                                }
                                s
                            })
                            .collect()
                    })
                    .collect()
            }
            EcamMethod::ConvActivation => {
                let conv = g.data(tr.conv)?;
                let per = conv.len() / (b * e);
                (0..b)
                    .map(|i| {
                        (0..e)
                            .map(|ch| {
                                let s = &conv[(i * e + ch) * per..(i * e + ch + 1) * per];
                                s.iter().map(|v| v.as_f64().abs()).sum::<f64>() / per as f64
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        for (r, p) in raw.iter().zip(predicted) {
            let (scores, warning) = normalize_map(r);
            out.push(ChannelMap {
                scores,
                predicted: p,
                warning,
            });
        }
    }
    Ok(out)
}
