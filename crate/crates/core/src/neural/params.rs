use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learnable tensors of the recurrent identifier, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    /// Maps the reciprocal regressor power to a per-coefficient scale.
    NormVec,
    FcW,
    FcB,
    ResetW,
    ResetU,
    ResetB,
    UpdateW,
    UpdateU,
    UpdateB,
    Head0W,
    Head0B,
    Head1W,
    Head1B,
    Head2W,
    Head2B,
}

impl Field {
    pub const ALL: [Field; 15] = [
        Field::NormVec,
        Field::FcW,
        Field::FcB,
        Field::ResetW,
        Field::ResetU,
        Field::ResetB,
        Field::UpdateW,
        Field::UpdateU,
        Field::UpdateB,
        Field::Head0W,
        Field::Head0B,
        Field::Head1W,
        Field::Head1B,
        Field::Head2W,
        Field::Head2B,
    ];

    pub fn is_matrix(self) -> bool {
        matches!(
            self,
            Field::FcW
                | Field::ResetW
                | Field::ResetU
                | Field::UpdateW
                | Field::UpdateU
                | Field::Head0W
                | Field::Head1W
                | Field::Head2W
        )
    }

    pub fn len(self, d: usize) -> usize {
        if self.is_matrix() {
            d * d
        } else {
            d
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::NormVec => "norm_vec",
            Field::FcW => "fc_c.weight",
            Field::FcB => "fc_c.bias",
            Field::ResetW => "gate_r.w",
            Field::ResetU => "gate_r.u",
            Field::ResetB => "gate_r.bias",
            Field::UpdateW => "gate_z.w",
            Field::UpdateU => "gate_z.u",
            Field::UpdateB => "gate_z.bias",
            Field::Head0W => "head.0.weight",
            Field::Head0B => "head.0.bias",
            Field::Head1W => "head.1.weight",
            Field::Head1B => "head.1.bias",
            Field::Head2W => "head.2.weight",
            Field::Head2B => "head.2.bias",
        }
    }

    fn index(self) -> usize {
        Field::ALL.iter().position(|&f| f == self).unwrap()
    }
}

/// All parameters as one flat buffer, fields laid out in [`Field::ALL`] order.
/// Matrices are row-major `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnParams {
    d: usize,
    offsets: [usize; 16],
    data: Vec<f64>,
}

impl DnnParams {
    pub fn zeros(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("state width d must be >= 1"));
        }
        let mut offsets = [0usize; 16];
        for (i, f) in Field::ALL.iter().enumerate() {
            offsets[i + 1] = offsets[i] + f.len(d);
        }
        Ok(Self {
            d,
            offsets,
            data: vec![0.0; offsets[15]],
        })
    }

    pub fn from_flat(d: usize, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(d)?;
        if data.len() != p.data.len() {
            return Err(Error::invalid(format!(
                "parameter buffer has {} values, expected {} for d = {d}",
                data.len(),
                p.data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        p.data = data;
        Ok(p)
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, field: Field) -> &[f64] {
        let i = field.index();
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn get_mut(&mut self, field: Field) -> &mut [f64] {
        let i = field.index();
        &mut self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Parameter count of a width-`d` model, counted field by field.
pub fn parameter_count(d: usize) -> usize {
    Field::ALL.iter().map(|f| f.len(d)).sum()
}

/// FC and head weights are identities, every bias is zero, the
/// normalization vector is all ones and gate weights are zero.
///
/// With `c = 0` and small inputs the cell then returns roughly the
/// unit-step NLMS update `x e / (x·x)`.
pub fn init_identity(d: usize) -> Result<DnnParams> {
    let mut p = DnnParams::zeros(d)?;
    p.get_mut(Field::NormVec).fill(1.0);
    for f in [Field::FcW, Field::Head0W, Field::Head1W, Field::Head2W] {
        let w = p.get_mut(f);
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
    }
    Ok(p)
}
