//! Light retraining of VAE-based time-series anomaly detectors.
//!
//! A detector trained on one distribution is adapted to a shifted one by
//! fitting two affine maps around the frozen model: one on the latent code and
//! one on the reconstruction. Targets for the latent map come from a
//! Monte-Carlo posterior estimate that also weighs data regenerated from the
//! old model, which keeps the update small and hard to overfit.
//!
//! ```no_run
//! use lara::{dataio, retrain, numerics::Rng};
//!
//! # fn main() -> lara::Result<()> {
//! let state = dataio::load_state("model.state")?.into_lara(Default::default());
//! let frame = dataio::load_csv("new.csv")?;
//! let windows = dataio::make_windows(&frame, Default::default())?;
//! let (next, report) = retrain::lara_retrain(
//!     &state,
//!     &windows.windows[..50],
//!     &Default::default(),
//!     &mut Rng::new(7),
//! )?;
//! println!("L_x = {}, L_z = {}", report.loss_x, report.loss_z);
//! # let _ = next;
//! # Ok(())
//! # }
//! ```

pub mod adjusters;
pub mod bench;
pub mod dataio;
pub mod detect;
mod error;
pub mod numerics;
pub mod retrain;
pub mod ruminate;
pub mod vae;

pub use adjusters::{fit_affine_closed_form, AffineAdjuster, PairSet};
pub use dataio::{SeriesFrame, ShiftSpec, WindowSpec};
pub use detect::{best_f1, pot_fit_threshold, EvalReport, PotThreshold};
pub use error::{Error, Result};
pub use numerics::{GaussianDiag, Mat64, Rng, Vec64};
pub use retrain::{lara_retrain, LaraConfig, LaraState, MxInput, RetrainConfig, RetrainReport, Solver};
pub use ruminate::{RuminateConfig, RuminateEstimate};
pub use vae::{GaussianVae, TrainConfig, VaeModel};
