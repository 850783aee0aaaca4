//! Numerical laboratory for the parabolic complex Monge-Ampère flow
//!
//! ```text
//! u̇ = log det(u_{αβ̄}) − A·u + f(z, t)   in Ω × (0, T)
//! u  = φ                                 on ∂Ω × [0, T)
//! u  = u₀                                at t = 0
//! ```
//!
//! on the unit disc (n = 1) or the unit ball of ℂ² (n = 2), with `u₀`
//! plurisubharmonic and possibly carrying logarithmic poles. Singular data is
//! never handed to the discrete solver directly: it is mollified into a
//! decreasing family of smooth problems whose pointwise minimum estimates the
//! weak solution. Lelong numbers of that estimate are tracked in time to
//! measure when each pole disappears.
//!
//! Module map:
//!
//! - [`grid`]: embedded-boundary grids and the discrete complex Hessian
//! - [`theory`]: closed-form resolution-time bounds and a-priori constants
//! - [`initial`]: singular potentials, mollification and boundary ramps
//! - [`flow`]: backward-Euler Newton solver and the approximating sequence
//! - [`lelong`]: Lelong-number estimation and resolution-time detection
//! - [`demailly`]: weighted Bergman bases and Demailly potentials on the disc
//! - [`verify`]: a-posteriori comparison, bound and monotonicity checks
//! - [`rescale`]: the time change that removes the `−A·u` term
//! - [`expr`], [`config`], [`io`], [`tasks`]: expression language, run
//!   configuration, file formats and the command-line task runners

pub mod config;
pub mod demailly;
pub mod error;
pub mod expr;
pub mod flow;
pub mod grid;
pub mod initial;
pub mod io;
pub mod lelong;
pub mod linalg;
pub mod rescale;
pub mod tasks;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};

/// Clip depth used to store −∞ on the grid.
pub const DEFAULT_M_CAP: f64 = 40.0;

/// A real function of space and time. Points are given in real coordinates
/// `(x1, y1[, x2, y2])`.
pub trait SpaceTimeFn: Send + Sync {
    fn eval(&self, x: &[f64], t: f64) -> f64;
}

/// Adapter turning a closure into a [`SpaceTimeFn`].
pub struct FnOf<F>(pub F);

impl<F> SpaceTimeFn for FnOf<F>
where
    F: Fn(&[f64], f64) -> f64 + Send + Sync,
{
    fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.0)(x, t)
    }
}

/// A constant function.
#[derive(Debug, Clone, Copy)]
pub struct Const(pub f64);

impl SpaceTimeFn for Const {
    fn eval(&self, _x: &[f64], _t: f64) -> f64 {
        self.0
    }
}

/// Squared Euclidean norm of a real coordinate vector.
pub fn abs2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Size the global rayon pool from `PCMA_THREADS` when set. Safe to call
/// more than once.
pub fn init_threads() {
    if let Some(n) = std::env::var("PCMA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
