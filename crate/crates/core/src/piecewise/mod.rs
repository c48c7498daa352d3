//! Piecewise potentials on planar decompositions and the conductivity built
//! cell by cell from them.

pub mod admissible;
pub mod build;
pub mod cells;
pub mod flux;
pub mod transport;

pub use admissible::{check_admissible, ChainPlan, Parent, PlanStep, Violation, ViolationReport};
pub use build::{build_piecewise_sigma, BuildError, BuildReport};
pub use cells::{
    classify_face, Cell, CellGeometry, CellMap, Classified, Decomposition, Face, FaceClass,
    PiecewiseSettings, Region, TopologyError,
};
pub use flux::{flux_match_value, FluxError};
pub use transport::{transport, CellData, PiecewiseSigma, Source, TransportError};
