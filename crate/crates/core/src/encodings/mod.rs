//! Input encodings: Fourier features, real spherical harmonics, and the
//! trainable multi-resolution hash grid.

mod fourier;
mod hash_grid;
mod sh;

pub use fourier::{fourier, fourier_encode, fourier_width};
pub use hash_grid::{hash_index, HashGrid, HashGridConfig};
pub use sh::{sh_encode, sh_polynomials, spherical_harmonics, SH_WIDTH};

use crate::autodiff::{ops, Value};
use crate::error::Result;

/// Degree of the Fourier features applied to sample positions.
pub const POSITION_DEGREE: usize = 10;

/// Degree used when viewing directions are Fourier-encoded instead of
/// spherical harmonics.
pub const DIRECTION_FOURIER_DEGREE: usize = 4;

/// Embedding of unit viewing directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionEncoding {
    /// `γ(φ)` with [`DIRECTION_FOURIER_DEGREE`].
    Fourier,
    /// Bands `ℓ = 0..=3`, 16 functions.
    SphericalHarmonics,
}

impl DirectionEncoding {
    pub fn width(self) -> usize {
        match self {
            DirectionEncoding::Fourier => fourier_width(3, DIRECTION_FOURIER_DEGREE),
            DirectionEncoding::SphericalHarmonics => SH_WIDTH,
        }
    }

    pub fn encode(self, dirs: &Value) -> Result<Value> {
        match self {
            DirectionEncoding::Fourier => Ok(fourier(dirs, DIRECTION_FOURIER_DEGREE)),
            DirectionEncoding::SphericalHarmonics => spherical_harmonics(dirs),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DirectionEncoding::Fourier => "fe",
            DirectionEncoding::SphericalHarmonics => "sh",
        }
    }
}

impl std::str::FromStr for DirectionEncoding {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fe" => Ok(DirectionEncoding::Fourier),
            "sh" => Ok(DirectionEncoding::SphericalHarmonics),
            other => Err(crate::Error::Config(format!(
                "encoding_dir must be `fe` or `sh`, got `{other}`"
            ))),
        }
    }
}

/// Affine map of NDC points from `[-1,1]³` onto the hash grid's `[0,1]³`.
pub fn ndc_to_unit(points: &Value) -> Value {
    let half = ops::scale(points, 0.5);
    let shift = Value::constant(crate::autodiff::Tensor::full(
        points.shape().0,
        points.shape().1,
        0.5,
    ));
    ops::add(&half, &shift).expect("same shape by construction")
}
