//! Copula regression for hierarchical data.
//!
//! A cluster holds `n` pairs `(x_j, y_j)`. The joint law combines parametric
//! margins for `X` and `Y`, an exchangeable copula for the `X` values within a
//! cluster, a bivariate copula linking each `x_j` to its `y_j`, and a second
//! exchangeable copula for the residual ranks `w_j = h(v_j | u_j)`.

pub mod bivariate;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod exchangeable;
pub mod margins;
pub mod model;
pub mod optim;
pub mod prediction;
pub mod quadrature;
pub mod roots;
pub mod special;
pub mod study;
pub mod transform;

pub use error::{Error, Result};

/// Copula arguments are clipped to `[CLIP, 1 − CLIP]` before evaluation.
pub const CLIP: f64 = 1e-12;

#[inline]
pub(crate) fn clip(p: f64) -> f64 {
    p.clamp(CLIP, 1.0 - CLIP)
}

/// Independent random stream `index` derived from `master`: ChaCha8 seeded
/// with `master`, on stream number `index`. Replicate k of a study or
/// bootstrap always uses stream k, so results do not depend on scheduling.
pub fn substream_rng(master: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}
