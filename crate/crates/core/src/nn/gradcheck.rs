//! Central finite-difference certification of the autodiff engine.
//!
//! Analytic gradients are computed in the element type under test; the
//! numerical reference always runs in `f64` on the same (rounded) inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Scalar, Tensor, Var};
use crate::error::Result;
use crate::model::{AvsiModel, ModelConfig};

/// Every differentiable graph operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpCase {
    MatMul,
    Linear,
    LinearNoBias,
    Add,
    AddRow,
    Scale,
    ConcatRows,
    SliceRows,
    LayerNorm,
    Gelu,
    Elu,
    Softplus,
    Dropout,
    Attention,
    AttentionDropout,
    WeightedSum,
    Sum,
    RegionMae,
}

impl OpCase {
    pub const ALL: [OpCase; 18] = [
        OpCase::MatMul,
        OpCase::Linear,
        OpCase::LinearNoBias,
        OpCase::Add,
        OpCase::AddRow,
        OpCase::Scale,
        OpCase::ConcatRows,
        OpCase::SliceRows,
        OpCase::LayerNorm,
        OpCase::Gelu,
        OpCase::Elu,
        OpCase::Softplus,
        OpCase::Dropout,
        OpCase::Attention,
        OpCase::AttentionDropout,
        OpCase::WeightedSum,
        OpCase::Sum,
        OpCase::RegionMae,
    ];

    fn input_shapes(self) -> Vec<Vec<usize>> {
        match self {
            OpCase::MatMul => vec![vec![3, 4], vec![4, 5]],
            OpCase::Linear => vec![vec![3, 4], vec![4, 5], vec![5]],
            OpCase::LinearNoBias => vec![vec![3, 4], vec![4, 5]],
            OpCase::Add => vec![vec![3, 4], vec![3, 4]],
            OpCase::AddRow => vec![vec![3, 4], vec![4]],
            OpCase::ConcatRows => vec![vec![2, 4], vec![3, 4]],
            OpCase::LayerNorm => vec![vec![3, 6], vec![6], vec![6]],
            OpCase::Attention | OpCase::AttentionDropout => {
                vec![vec![5, 4], vec![5, 4], vec![5, 4]]
            }
            OpCase::RegionMae => vec![vec![4, 3]],
            _ => vec![vec![3, 4]],
        }
    }

    /// Scalar-valued graph exercising the op.
    fn build<T: Scalar>(self, g: &mut Graph<T>, x: &[Var], weights: &[f64]) -> Result<Var> {
        let out = match self {
            OpCase::MatMul => g.matmul(x[0], x[1])?,
            OpCase::Linear => g.linear(x[0], x[1], Some(x[2]))?,
            OpCase::LinearNoBias => g.linear(x[0], x[1], None)?,
            OpCase::Add => g.add(x[0], x[1])?,
            OpCase::AddRow => g.add_row(x[0], x[1])?,
            OpCase::Scale => g.scale(x[0], T::from_f64(-1.7)),
            OpCase::ConcatRows => g.concat_rows(x[0], x[1])?,
            OpCase::SliceRows => g.slice_rows(x[0], 1, 2)?,
            OpCase::LayerNorm => g.layer_norm(x[0], x[1], x[2])?,
            OpCase::Gelu => g.gelu(x[0]),
            OpCase::Elu => g.elu(x[0]),
            OpCase::Softplus => g.softplus(x[0]),
            OpCase::Dropout => g.dropout(x[0], 0.3),
            OpCase::Attention => g.attention(x[0], x[1], x[2], 2, 0.0)?,
            OpCase::AttentionDropout => g.attention(x[0], x[1], x[2], 2, 0.3)?,
            OpCase::WeightedSum => {
                let w = weights.iter().take(12).map(|&v| T::from_f64(v)).collect();
                return g.weighted_sum(x[0], w);
            }
            OpCase::Sum => return Ok(g.sum(x[0])),
            OpCase::RegionMae => {
                let target: Vec<T> = weights.iter().take(12).map(|&v| T::from_f64(v)).collect();
                let known = [true, false, true, false];
                return g.region_mae(x[0], &target, &known, T::from_f64(10.0), T::from_f64(1.0));
            }
        };
        let n = g.value(out).numel();
        let w = weights.iter().cycle().take(n).map(|&v| T::from_f64(v)).collect();
        g.weighted_sum(out, w)
    }
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn eval<T: Scalar>(case: OpCase, inputs: &[Tensor<f64>], weights: &[f64], seed: u64) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::<T>::training(seed);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.cast())).collect();
    let loss = case.build(&mut g, &vars, weights)?;
    g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| match g.grad(*v) {
            Some(d) => d.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.numel()],
        })
        .collect();
    Ok((g.value(loss).item().as_f64(), grads))
}

/// Relative error between the analytic gradient in `T` and central
/// differences in `f64` for one op.
pub fn certify_op<T: Scalar>(case: OpCase, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // values kept away from the kinks of |.| in the loss
    let inputs: Vec<Tensor<f64>> = case
        .input_shapes()
        .iter()
        .map(|s| {
            let n = s.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|_| T::from_f64(rng.gen_range(-1.5..1.5)).as_f64())
                .collect();
            Tensor::new(s, data)
        })
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, analytic) = eval::<T>(case, &inputs, &weights, seed)?;
    let h = 1e-5;
    let mut a = Vec::new();
    let mut n = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= h;
            let fp = eval::<f64>(case, &plus, &weights, seed)?.0;
            let fm = eval::<f64>(case, &minus, &weights, seed)?.0;
            n.push((fp - fm) / (2.0 * h));
            a.push(analytic[i][j]);
        }
    }
    Ok(relative_error(&a, &n))
}

/// Loss of the full model on fixed random inputs; `f64` throughout.
fn model_loss(model: &AvsiModel<f64>, audio: &Tensor<f64>, visual: &Tensor<f64>, target: &[f64], known: &[bool]) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let a = g.constant(audio.clone());
    let v = g.constant(visual.clone());
    let out = model.build(&mut g, a, Some(v))?;
    let loss = g.region_mae(out, target, known, 10.0, 1.0)?;
    Ok(g.value(loss).item())
}

/// Certify the whole network: analytic parameter gradients in `T` against
/// `f64` central differences on `coords_per_param` random coordinates of
/// every parameter tensor. Dropout is disabled.
pub fn certify_model<T: Scalar>(mut cfg: ModelConfig, frames: usize, video_frames: usize, coords_per_param: usize, seed: u64) -> Result<f64> {
    cfg.dropout = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = AvsiModel::<f64>::new(cfg.clone(), seed)?;
    // round the weights to T so both sides see identical parameters
    let reference: AvsiModel<f64> = reference.cast::<T>().cast();
    let rounded = |v: f64| T::from_f64(v).as_f64();
    let audio = Tensor::new(
        &[frames, cfg.n_bins],
        (0..frames * cfg.n_bins).map(|_| rounded(rng.gen_range(-1.0..1.0))).collect(),
    )?;
    let visual = Tensor::new(
        &[video_frames, cfg.visual_dim],
        (0..video_frames * cfg.visual_dim).map(|_| rounded(rng.gen_range(-1.0..1.0))).collect(),
    )?;
    let target: Vec<f64> = (0..frames * cfg.n_bins).map(|_| rng.gen_range(0.0..2.0)).collect();
    let known: Vec<bool> = (0..frames).map(|l| !(frames / 3..frames / 2).contains(&l)).collect();

    let mut model = reference.cast::<T>();
    let mut g = Graph::<T>::new();
    let a = g.constant(audio.cast());
    let v = g.constant(visual.cast());
    let out = model.build(&mut g, a, Some(v))?;
    let target_t: Vec<T> = target.iter().map(|&x| T::from_f64(x)).collect();
    let loss = g.region_mae(out, &target_t, &known, T::from_f64(10.0), T::one())?;
    g.backward(loss)?;
    model.params_mut().zero_grads();
    g.accumulate_param_grads(model.params_mut());

    let h = 1e-5;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let ids: Vec<_> = reference.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        let numel = reference.params().value(id).numel();
        let grad = model.params().get(id).grad.as_ref().expect("zeroed then accumulated");
        for _ in 0..coords_per_param.min(numel) {
            let j = rng.gen_range(0..numel);
            let mut plus = reference.clone();
            plus.params_mut().get_mut(id).value.data_mut()[j] += h;
            let mut minus = reference.clone();
            minus.params_mut().get_mut(id).value.data_mut()[j] -= h;
            let d = (model_loss(&plus, &audio, &visual, &target, &known)?
                - model_loss(&minus, &audio, &visual, &target, &known)?)
                / (2.0 * h);
            numeric.push(d);
            analytic.push(grad.data()[j].as_f64());
        }
    }
    Ok(relative_error(&analytic, &numeric))
}
