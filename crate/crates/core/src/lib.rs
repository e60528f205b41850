//! Policy search on a toy ecological-economic model.
//!
//! A two-variable consumer-resource system is simulated for each policy
//! `(c, eta)` and scored against a "Doughnut" objective: positive when the
//! environmental budget stays above its tipping point and social
//! provisioning stays above its foundation on average. On top of the model:
//!
//! * [`forest`]: a bounded-depth random forest that learns which policies
//!   land inside the Doughnut, with decision paths and feature importance;
//! * [`agreement`]: forest-wide agreement scores that rank parameter-range
//!   bins by how confidently the trees place them inside;
//! * [`qlearn`]: tabular Q-learning of a transition path across the policy
//!   grid that reaches the Doughnut while avoiding barrier states.

pub mod agreement;
pub mod cli;
pub mod dataset;
pub mod doughnut;
pub mod dynamics;
pub mod error;
pub mod forest;
pub mod qlearn;

pub use error::{Error, Result};
