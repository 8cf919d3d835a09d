//! Fully connected feature extractor with ReLU between layers.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `in×out`.
    pub weight: Matrix,
    /// `1×out`.
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackboneParams {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
pub struct BackboneCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl BackboneParams {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Layers `widths[0] → widths[1] → …`; fewer than two widths gives the identity.
    /// Weights are He-uniform, biases zero.
    pub fn init(widths: &[usize], rng: &mut RngState) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("backbone widths must be >= 1, got {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| rng.uniform(-bound, bound)).collect();
                Ok(Layer { weight: Matrix::new(w[0], w[1], data)?, bias: Matrix::zeros(1, w[1]) })
            })
            .collect::<Result<_>>()?;
        Ok(BackboneParams { layers })
    }

    pub fn from_tensors(tensors: Vec<Matrix>) -> Result<Self> {
        if !tensors.len().is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!("odd backbone tensor count {}", tensors.len())));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::new();
        while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
            layers.push(Layer { weight, bias });
        }
        let p = BackboneParams { layers };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.shape() != (1, l.weight.cols()) {
                return Err(Error::ShapeMismatch(format!("layer {i} bias must be 1x{}", l.weight.cols())));
            }
            if i > 0 && self.layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(Error::ShapeMismatch(format!("layer {i} input {} does not chain", l.weight.rows())));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::NonFinite("backbone parameters"));
            }
        }
        Ok(())
    }

    /// Layer widths, input first; empty for the identity.
    pub fn widths(&self) -> Vec<usize> {
        match self.layers.first() {
            None => Vec::new(),
            Some(first) => std::iter::once(first.weight.rows()).chain(self.layers.iter().map(|l| l.weight.cols())).collect(),
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, |l| l.weight.cols())
    }

    /// Weight then bias for each layer.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

pub fn backbone_forward(params: &BackboneParams, x: &Matrix) -> Result<(Matrix, BackboneCache)> {
    let mut cache = BackboneCache { inputs: Vec::new(), pre: Vec::new() };
    let mut h = x.clone();
    let last = params.layers.len().saturating_sub(1);
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = h.matmul(&layer.weight)?;
        let b = layer.bias.as_slice();
        for r in 0..z.rows() {
            for (v, bb) in z.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        let next = if i < last { z.map(|v| v.max(0.0)) } else { z.clone() };
        cache.inputs.push(h);
        cache.pre.push(z);
        h = next;
    }
    Ok((h, cache))
}

/// Returns parameter gradients in [`BackboneParams::tensors`] order and the input gradient.
pub fn backbone_vjp(params: &BackboneParams, cache: &BackboneCache, upstream: &Matrix) -> Result<(Vec<Matrix>, Matrix)> {
    if cache.pre.len() != params.layers.len() {
        return Err(Error::ShapeMismatch("backbone cache does not match parameters".into()));
    }
    let mut grads = vec![Matrix::zeros(0, 0); 2 * params.layers.len()];
    let mut g = upstream.clone();
    let last = params.layers.len().saturating_sub(1);
    for i in (0..params.layers.len()).rev() {
        if g.shape() != cache.pre[i].shape() {
            return Err(Error::ShapeMismatch(format!(
                "backbone upstream {}x{} at layer {i}, expected {}x{}",
                g.rows(),
                g.cols(),
                cache.pre[i].rows(),
                cache.pre[i].cols()
            )));
        }
        if i < last {
            for (gv, &z) in g.as_mut_slice().iter_mut().zip(cache.pre[i].as_slice()) {
                if z <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let mut db = vec![0.0; g.cols()];
        for row in g.row_iter() {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        grads[2 * i] = cache.inputs[i].t_matmul(&g)?;
        grads[2 * i + 1] = Matrix::new(1, db.len(), db)?;
        g = g.matmul_t(&params.layers[i].weight)?;
    }
    Ok((grads, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::common::oracles::{central_diff, max_rel_err};

    #[test]
    fn identity_cases() {
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]]).unwrap();
        let (y, _) = backbone_forward(&BackboneParams::identity(), &x).unwrap();
        assert_eq!(y, x);
        let eye = BackboneParams { layers: vec![Layer { weight: Matrix::identity(3), bias: Matrix::zeros(1, 3) }] };
        assert_eq!(backbone_forward(&eye, &x).unwrap().0, x);
        assert!(BackboneParams::init(&[4], &mut RngState::from_seed(0)).unwrap().layers.is_empty());
        assert_eq!(BackboneParams::init(&[16, 32, 16], &mut RngState::from_seed(0)).unwrap().widths(), vec![16, 32, 16]);
    }

    #[test]
    fn two_layer_gradient_check() {
        let mut rng = RngState::from_seed(4);
        let mut p = BackboneParams::init(&[5, 7, 3], &mut rng).unwrap();
        for t in p.tensors_mut() {
            for v in t.as_mut_slice() {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        let x = Matrix::new(4, 5, (0..20).map(|_| rng.normal()).collect()).unwrap();
        let w = Matrix::new(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
        let loss = |p: &BackboneParams, x: &Matrix| -> f64 {
            let (y, _) = backbone_forward(p, x).unwrap();
            y.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = backbone_forward(&p, &x).unwrap();
        let (grads, dx) = backbone_vjp(&p, &cache, &w).unwrap();
        let fd = central_diff(x.as_slice(), 1e-5, |v| loss(&p, &Matrix::new(4, 5, v.to_vec()).unwrap()));
        assert!(max_rel_err(dx.as_slice(), &fd, 1e-8) < 1e-4);
        for (t, g) in grads.iter().enumerate() {
            let base = p.tensors()[t].clone();
            let fd = central_diff(base.as_slice(), 1e-5, |v| {
                let mut probe = p.clone();
                probe.tensors_mut()[t].as_mut_slice().copy_from_slice(v);
                loss(&probe, &x)
            });
            assert!(max_rel_err(g.as_slice(), &fd, 1e-8) < 1e-4, "tensor {t}");
        }
    }

    #[test]
    fn shape_errors() {
        let p = BackboneParams::init(&[3, 2], &mut RngState::from_seed(0)).unwrap();
        assert!(matches!(backbone_forward(&p, &Matrix::zeros(2, 4)), Err(Error::ShapeMismatch(_))));
        let (_, cache) = backbone_forward(&p, &Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(backbone_vjp(&p, &cache, &Matrix::zeros(2, 3)), Err(Error::ShapeMismatch(_))));
        let round = BackboneParams::from_tensors(p.tensors().into_iter().cloned().collect()).unwrap();
        assert_eq!(round, p);
    }
}
