//! Copula-based hidden Markov models: copula families, margins, forward-backward
//! posteriors, EIFM estimation, local decoding, standard errors and copula
//! family selection.

pub mod copulas;
pub mod decode_loss;
pub mod eifm;
pub mod error;
pub mod fb;
pub mod gof;
pub mod io;
pub mod margins;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod uncertainty;

pub use copulas::{Copula, CopulaFamily};
pub use eifm::{fit, initialize, FitConfig, FitResult, InitConfig};
pub use error::{Error, Result};
pub use fb::{forward_backward, PosteriorSummaries};
pub use margins::{Margin, MarginFamily};
pub use model::{CopulaHmm, StateSpec, Trajectory};
pub use uncertainty::{UncertaintyMethod, UncertaintyReport};
