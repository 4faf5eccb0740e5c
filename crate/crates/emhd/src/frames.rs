//! Three-phase reference frames and the maps between them.
//!
//! Four frames are supported: physical phase coordinates `abc`, the fixed
//! orthonormal frame `αβ0` reached by the power-invariant Clarke transform,
//! a synchronously rotating frame `dq0` (orientation angle θ_s), and the
//! rotor-fixed frame `DQ0` (rotor angle θ). All transforms are orthogonal,
//! so lengths, inner products and energies are preserved.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::Scalar;

/// Identifies which frame a three-phase quantity is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameId {
    /// Physical winding coordinates a, b, c.
    #[serde(rename = "abc")]
    Abc,
    /// Fixed frame after the orthonormal Clarke transform.
    #[serde(rename = "alpha_beta0")]
    AlphaBeta0,
    /// Rotating frame tied to an arbitrary orientation angle θ_s.
    #[serde(rename = "dq0")]
    Dq0,
    /// Rotor-fixed frame tied to the (electrical) rotor angle θ.
    #[serde(rename = "DQ0")]
    DQ0,
}

impl std::fmt::Display for FrameId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FrameId::Abc => "abc",
            FrameId::AlphaBeta0 => "alpha_beta0",
            FrameId::Dq0 => "dq0",
            FrameId::DQ0 => "DQ0",
        };
        write!(f, "{s}")
    }
}

impl FrameId {
    /// Per-axis column suffixes used in CSV headers.
    pub fn axis_labels(&self) -> [&'static str; 3] {
        match self {
            FrameId::Abc => ["a", "b", "c"],
            FrameId::AlphaBeta0 => ["alpha", "beta", "0"],
            FrameId::Dq0 => ["d", "q", "0"],
            FrameId::DQ0 => ["D", "Q", "0"],
        }
    }
}

/// Which winding system a vector belongs to. Stator and rotor quantities
/// rotate differently into dq0/DQ0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindingSide {
    Stator,
    Rotor,
}

/// An angle in radians. Kept unwrapped (it may grow without bound during a
/// simulation); use [`RotationAngle::wrapped`] for display or comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RotationAngle(pub f64);

impl RotationAngle {
    /// The same angle reduced to `[0, 2π)`.
    pub fn wrapped(self) -> f64 {
        let two_pi = std::f64::consts::TAU;
        self.0.rem_euclid(two_pi)
    }
}

#[derive(Debug, Error)]
pub enum FramesError {
    #[error("frame mismatch: expected {expected}, found {found}")]
    FrameMismatch { expected: FrameId, found: FrameId },
    #[error("conversion {from} -> {to} ({side:?}) requires angle {angle}")]
    MissingAngle { from: FrameId, to: FrameId, side: WindingSideTag, angle: &'static str },
}

/// `Debug`-printable copy of [`WindingSide`] for error messages.
#[derive(Clone, Copy, Debug)]
pub enum WindingSideTag {
    Stator,
    Rotor,
}

impl From<WindingSide> for WindingSideTag {
    fn from(s: WindingSide) -> Self {
        match s {
            WindingSide::Stator => WindingSideTag::Stator,
            WindingSide::Rotor => WindingSideTag::Rotor,
        }
    }
}

/// A three-phase quantity tagged with the frame it lives in. Arithmetic is
/// only defined between same-frame vectors and is checked at run time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriVector {
    components: [f64; 3],
    frame: FrameId,
}

impl TriVector {
    pub fn new(components: [f64; 3], frame: FrameId) -> Self {
        TriVector { components, frame }
    }

    pub fn components(&self) -> [f64; 3] {
        self.components
    }

    pub fn frame(&self) -> FrameId {
        self.frame
    }

    fn check(&self, other: &TriVector) -> Result<(), FramesError> {
        if self.frame == other.frame {
            Ok(())
        } else {
            Err(FramesError::FrameMismatch { expected: self.frame, found: other.frame })
        }
    }

    pub fn try_add(&self, other: &TriVector) -> Result<TriVector, FramesError> {
        self.check(other)?;
        let mut c = self.components;
        for k in 0..3 {
            c[k] += other.components[k];
        }
        Ok(TriVector::new(c, self.frame))
    }

    pub fn try_sub(&self, other: &TriVector) -> Result<TriVector, FramesError> {
        self.check(other)?;
        let mut c = self.components;
        for k in 0..3 {
            c[k] -= other.components[k];
        }
        Ok(TriVector::new(c, self.frame))
    }

    pub fn dot(&self, other: &TriVector) -> Result<f64, FramesError> {
        self.check(other)?;
        Ok(self
            .components
            .iter()
            .zip(other.components.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn scale(&self, k: f64) -> TriVector {
        TriVector::new(self.components.map(|x| x * k), self.frame)
    }
}

/// Power-invariant Clarke matrix. Entries are built from square roots at
/// startup; no rounded decimal literals are involved.
pub static CLARKE: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| {
    let k = (2.0f64 / 3.0).sqrt();
    let s3 = 3.0f64.sqrt();
    let s2 = 2.0f64.sqrt();
    [
        [k, -k / 2.0, -k / 2.0],
        [0.0, k * s3 / 2.0, -k * s3 / 2.0],
        [k * s2 / 2.0, k * s2 / 2.0, k * s2 / 2.0],
    ]
});

/// Transpose of [`CLARKE`]; equals its inverse since the matrix is orthogonal.
pub static CLARKE_INV: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| transpose(&CLARKE));

fn transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

/// `m · v` for a 3×3 matrix.
pub fn apply3(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
    }
    out
}

/// abc → αβ0.
pub fn clarke(v: &[f64; 3]) -> [f64; 3] {
    apply3(&CLARKE, v)
}

/// αβ0 → abc.
pub fn inverse_clarke(v: &[f64; 3]) -> [f64; 3] {
    apply3(&CLARKE_INV, v)
}

/// Planar rotation by `eta`.
pub fn rot2(eta: f64) -> [[f64; 2]; 2] {
    let (s, c) = eta.sin_cos();
    [[c, -s], [s, c]]
}

/// Rotation by `eta` in the first two axes; the third axis is untouched.
pub fn rot3(eta: f64) -> [[f64; 3]; 3] {
    let (s, c) = eta.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Generic `R₂(eta) · v`, usable with dual numbers (`eta` may carry seeds).
pub fn rotate2<T: Scalar>(eta: T, v: &[T; 2]) -> [T; 2] {
    let s = eta.sin();
    let c = eta.cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Generic `R₃(eta) · v`; third component passes through.
pub fn rotate3<T: Scalar>(eta: T, v: &[T; 3]) -> [T; 3] {
    let s = eta.sin();
    let c = eta.cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// The planar symplectic matrix applied to a 2-vector: `J·(x,y) = (-y, x)`.
pub fn j_apply2(v: &[f64; 2]) -> [f64; 2] {
    [-v[1], v[0]]
}

/// Its 3-axis embedding: the 0-axis maps to zero.
pub fn j_apply3(v: &[f64; 3]) -> [f64; 3] {
    [-v[1], v[0], 0.0]
}

fn need(
    angle: Option<RotationAngle>,
    name: &'static str,
    from: FrameId,
    to: FrameId,
    side: WindingSide,
) -> Result<f64, FramesError> {
    angle
        .map(|a| a.0)
        .ok_or(FramesError::MissingAngle { from, to, side: side.into(), angle: name })
}

/// Convert `v` into frame `to`, routing through αβ0.
///
/// `theta` is the rotor angle (needed for DQ0, and for rotor quantities in
/// dq0); `theta_s` is the dq0 orientation angle. Angles that a particular
/// path does not use may be `None`.
pub fn convert(
    v: &TriVector,
    to: FrameId,
    side: WindingSide,
    theta: Option<RotationAngle>,
    theta_s: Option<RotationAngle>,
) -> Result<TriVector, FramesError> {
    let from = v.frame();
    // Leg 1: into αβ0.
    let ab0 = match from {
        FrameId::Abc => clarke(&v.components()),
        FrameId::AlphaBeta0 => v.components(),
        FrameId::Dq0 => {
            let ts = need(theta_s, "theta_s", from, to, side)?;
            match side {
                WindingSide::Stator => apply3(&rot3(ts), &v.components()),
                WindingSide::Rotor => {
                    let th = need(theta, "theta", from, to, side)?;
                    apply3(&rot3(ts - th), &v.components())
                }
            }
        }
        FrameId::DQ0 => match side {
            WindingSide::Stator => {
                let th = need(theta, "theta", from, to, side)?;
                apply3(&rot3(th), &v.components())
            }
            WindingSide::Rotor => v.components(),
        },
    };
    // Leg 2: out of αβ0.
    let out = match to {
        FrameId::Abc => inverse_clarke(&ab0),
        FrameId::AlphaBeta0 => ab0,
        FrameId::Dq0 => {
            let ts = need(theta_s, "theta_s", from, to, side)?;
            match side {
                WindingSide::Stator => apply3(&rot3(-ts), &ab0),
                WindingSide::Rotor => {
                    let th = need(theta, "theta", from, to, side)?;
                    apply3(&rot3(th - ts), &ab0)
                }
            }
        }
        FrameId::DQ0 => match side {
            WindingSide::Stator => {
                let th = need(theta, "theta", from, to, side)?;
                apply3(&rot3(-th), &ab0)
            }
            WindingSide::Rotor => ab0,
        },
    };
    Ok(TriVector::new(out, to))
}
