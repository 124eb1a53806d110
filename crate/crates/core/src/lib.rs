//! Convex analysis over L0-modules on finite atomic measure spaces.
//!
//! Every object is a table over atoms; every construction (conjugates,
//! subdifferentials, directional derivatives, Ekeland points) is computed
//! per scenario and glued back, with the extended arithmetic conventions
//! `0 * (+-inf) = 0` and `inf - inf = inf`.

pub mod convexfn;
pub mod differential;
pub mod ekeland;
pub mod error;
pub mod legendre;
pub mod measure_l0;
pub mod oracle;
pub mod riemann;
pub mod rnmodule;
pub mod serial;
pub mod subdiff;

pub use convexfn::{Blackbox, BlackboxKind, ConvexFn, EffectivePartition, Leaf, Properness, Pwl1};
pub use differential::{DirectionalDerivative, FrechetReport, Gateaux};
pub use ekeland::{EkelandCertificate, ExactSubgradient, SmallGradient};
pub use error::{Error, Result};
pub use legendre::{GridSpec, Transform, TransformPath, TrustInterval};
pub use measure_l0::{AtomicBase, EventSet, FinitePartition, L0Bar};
pub use oracle::{GridFn1, GridFn2, ScenarioFn};
pub use riemann::{Curve, CurvePath, Integral, IntervalPartition, TagRule};
pub use rnmodule::{
    Envelope, EnvelopeKind, L0Seminorm, ModuleHom, RandomFunctional, RandomPoint, SeminormFamily,
    SequenceDescriptor,
};
pub use subdiff::{ConvexSet, Interval, SeparationResult, SubdiffSet};
