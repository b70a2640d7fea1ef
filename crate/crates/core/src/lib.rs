// SPDX-License-Identifier: MIT OR Apache-2.0

//! Householder pseudo-rotation (HPR) editing of neural activations.
//!
//! A bias-free linear probe separates positive from negative activations.
//! Activations the probe calls negative are reflected about the probe's
//! hyperplane and then rotated, inside the plane spanned by the original
//! and its reflection, by an angle predicted by a small MLP. The edit
//! changes direction only, so activation norms are preserved.
//!
//! The core is generic over the storage scalar ([`Scalar`], implemented for
//! `f32` and `f64`); all reductions accumulate in `f64`.
//!
//! ```
//! use hpr_core::linalg::{householder_reflect, norm};
//!
//! let a = [3.0f64, 4.0];
//! let reflected = householder_reflect(&a, &[1.0, 0.0]).unwrap();
//! assert_eq!(reflected, vec![-3.0, 4.0]);
//! assert_eq!(norm(&reflected), 5.0);
//! ```

pub mod angle;
pub mod baselines;
pub mod bundle;
pub mod data;
pub mod editor;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod probe;
pub mod scalar;
pub mod seed;
pub mod train;

pub use angle::{joint_train, AnglePredictor};
pub use baselines::{apply_diff, fit_diff, fit_steering, DiffPredictor, SteeringVector};
pub use bundle::{load_bundle, save_bundle, AnyBundle, Method};
pub use data::{ActivationRecord, Corpus, Label};
pub use editor::{
    edit_stream, select_layers, Bundle, BundleMeta, EditMode, EditTrace, EditorBundle, LayerEditor,
};
pub use error::{HprError, Result};
pub use linalg::Angle;
pub use probe::LinearProbe;
pub use scalar::Scalar;
pub use train::TrainConfig;

pub type Corpus32 = Corpus<f32>;
pub type Corpus64 = Corpus<f64>;
pub type Probe = LinearProbe<f64>;
pub type Editor = LayerEditor<f64>;
