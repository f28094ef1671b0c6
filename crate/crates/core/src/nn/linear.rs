use rand::Rng;

use super::tensor::{gemm, Trans};
use super::{uniform_init, ParamId, ParamSet, Shape, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = W x + b`, applied row-wise to a batch.
///
/// `W` is stored `out x in`; inputs are `(batch, in)` matrices or a single
/// `(in,)` vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Argument(format!(
                "layer `{name}` needs positive sizes, got {in_dim} -> {out_dim}"
            )));
        }
        let weight = params.register(
            format!("{name}.weight"),
            uniform_init(rng, Shape::Matrix(out_dim, in_dim), in_dim),
        )?;
        let bias = params.register(
            format!("{name}.bias"),
            uniform_init(rng, Shape::Vector(out_dim), in_dim),
        )?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Re-binds a layer to tensors already present in `params` (e.g. loaded
    /// from a checkpoint), checking their shapes.
    pub fn bind(params: &ParamSet, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = lookup(params, &format!("{name}.weight"), Shape::Matrix(out_dim, in_dim))?;
        let bias = lookup(params, &format!("{name}.bias"), Shape::Vector(out_dim))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Draws fresh values for both tensors.
    pub fn reinitialize<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        params.set_value(
            self.weight,
            uniform_init(rng, Shape::Matrix(self.out_dim, self.in_dim), self.in_dim),
        )?;
        params.set_value(self.bias, uniform_init(rng, Shape::Vector(self.out_dim), self.in_dim))
    }

    pub fn num_values(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let (batch, cols) = x.as_rows();
        if cols != self.in_dim {
            return Err(Error::shape(
                "linear_forward",
                x.shape(),
                params.value(self.weight).shape(),
            ));
        }
        let mut out = vec![0.0; batch * self.out_dim];
        let bias = params.value(self.bias).data();
        for row in out.chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(bias);
        }
        gemm(
            batch,
            self.in_dim,
            self.out_dim,
            1.0,
            x.data(),
            Trans::No,
            params.value(self.weight).data(),
            Trans::Yes,
            1.0,
            &mut out,
        );
        let shape = match x.shape() {
            Shape::Vector(_) => Shape::Vector(self.out_dim),
            Shape::Matrix(..) => Shape::Matrix(batch, self.out_dim),
        };
        let t = Tensor::new(shape, out)?;
        t.ensure_finite("linear_forward")?;
        Ok(t)
    }

    /// Accumulates `dW += g^T x`, `db += sum_rows(g)` and returns `dx = g W`.
    /// `x` is the input seen by the matching forward call.
    pub fn backward(&self, params: &mut ParamSet, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        let (batch, cols) = x.as_rows();
        let (g_rows, g_cols) = upstream.as_rows();
        if cols != self.in_dim || g_rows != batch || g_cols != self.out_dim {
            return Err(Error::shape("linear_backward", x.shape(), upstream.shape()));
        }
        let mut dx = vec![0.0; batch * self.in_dim];
        gemm(
            batch,
            self.out_dim,
            self.in_dim,
            1.0,
            upstream.data(),
            Trans::No,
            params.value(self.weight).data(),
            Trans::No,
            0.0,
            &mut dx,
        );
        gemm(
            self.out_dim,
            batch,
            self.in_dim,
            1.0,
            upstream.data(),
            Trans::Yes,
            x.data(),
            Trans::No,
            1.0,
            params.grad_mut(self.weight).data_mut(),
        );
        let db = params.grad_mut(self.bias).data_mut();
        for row in upstream.data().chunks_exact(self.out_dim) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        Tensor::new(x.shape(), dx)
    }
}

pub(crate) fn lookup(params: &ParamSet, name: &str, shape: Shape) -> Result<ParamId> {
    let id = params
        .find(name)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor `{name}`")))?;
    let found = params.value(id).shape();
    if found != shape {
        return Err(Error::CheckpointShape {
            name: name.to_string(),
            found: found.dims(),
            expected: shape.dims(),
        });
    }
    Ok(id)
}
