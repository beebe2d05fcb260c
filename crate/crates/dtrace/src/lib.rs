//! Bi-directional image↔report generation trained with dynamic complementary
//! masking and a traceback stage, exercised end-to-end on a synthetic glyph
//! corpus whose image and report semantics are exactly invertible.

pub mod corpus;
pub mod eval;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod svg;
pub mod tape;
pub mod text;
pub mod trainer;
pub mod vision;

/// Round-half-up to a count. Makes β=1 exact and monotone in the ratio.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}
