//! First-return maps, return-time tails, Farey maps with designed tails and
//! the deviation sets `A_u`.

mod deviation;
mod farey;
mod induced;

pub use deviation::{
    default_horizon, deviation_measure, deviation_table, polynomial_obstruction_probe, DeviationRow, DeviationTable,
    ObstructionReport,
};
pub use farey::{build_farey, TailClass, TailSpec};
pub use induced::{
    farey_induced, first_return_map, first_return_map_with, induced_hitting, invariant_density, lsv_induced,
    tower_profile, Excursion, InducedHit, InducedMap, ReturnBranch, TowerProfile, DEFAULT_UNRESOLVED_TOL,
};
