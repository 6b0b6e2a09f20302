//! Physics-informed neural surrogates for the McKendrick–von Foerster
//! age-structured population equation, together with the finite-difference
//! reference solver used to validate them.
//!
//! Module map:
//!
//! - [`autodiff`]: `Dual2` forward tangents and a reverse-mode tape over them.
//! - [`networks`]: the feed-forward and stacked-LSTM surrogates.
//! - [`demography`]: mortality, fertility policies, initial profile, birth quadrature.
//! - [`solver`]: upwind scheme and characteristic solution of the PDE.
//! - [`training`]: collocation losses, Adam, the epoch loop and checkpoints.
//! - [`plot`]: dependency-free SVG rendering of loss curves and density fields.

pub mod autodiff;
pub mod demography;
mod error;
pub mod networks;
pub mod plot;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
