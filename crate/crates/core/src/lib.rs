//! Verification toolkit for compositional causal models and their abstractions.
//!
//! The crate is organised in layers:
//!
//! - [`scalar`] and [`stoch`]: exact-rational or floating scalars, and finite
//!   stochastic channels with the categorical operations (composition, tensor,
//!   copying, discarding, feedback) used by everything else;
//! - [`model`] and [`oracle`]: open causal models with interventions, opening,
//!   parallel mechanisms and model induction, plus brute-force reference semantics
//!   used to cross-check the optimised evaluator;
//! - [`queries`]: the query families (observational, interventional, interchange,
//!   counterfactual) evaluated against models;
//! - [`abstraction`]: checkers for the abstraction relations between a low-level and
//!   a high-level model, with counterexample witnesses;
//! - [`mechlevel`]: mechanism-level structure analysis and the two independent routes
//!   to constructive abstraction;
//! - [`distributed`]: interventions and interchanges transported across deterministic
//!   isomorphisms of joint state spaces;
//! - [`quantum`] and [`qabs`]: finite-dimensional quantum channels in superoperator
//!   form and quantum-to-classical abstraction checks;
//! - [`gen`]: seeded random generators for models, alignments and isomorphisms, used
//!   by the randomised test suites and benchmarks.

pub mod abstraction;
pub mod distributed;
pub mod gen;
pub mod mechlevel;
pub mod model;
pub mod oracle;
pub mod qabs;
pub mod quantum;
pub mod queries;
pub mod scalar;
pub mod stoch;

pub use abstraction::{
    AbstractionError, AlignedQuery, CheckOptions, InterventionMap, VariableAlignment, Verdict,
    Witness,
};
pub use gen::{
    expand_with_alignment, gen_kraus_morphism, gen_model, gen_value_iso, rng_for, LatentFlavor,
    ModelShape,
};

pub use distributed::{
    check_iso_cca, distributed_do_conjugated, distributed_do_direct,
    distributed_interchange_conjugated, distributed_interchange_direct, DistributedError,
    DistributedFlavor, DistributedReport, IsoSetup,
};
pub use mechlevel::{
    check_mechanism_level, classify_partition, mechanism_fragment, mechanism_var_set,
    MechanismFragment, MechanismLevelReport, MechanismPartition, StructureClass,
};
pub use model::{
    CausalModel, FunctionalCausalModel, InducedModel, Intervention, Mechanism, ModelError,
    OpenDag,
};
pub use qabs::{check_qc_abstraction, QabsError, QcTier, QuantumDagModel, TauSpec};
pub use quantum::{QMorphism, QObject, QWire, QuantumError, SuperOp, C64};
pub use queries::{CfWorld, EnumBounds, Query, QueryError, QueryFamily};
pub use scalar::{Rat, Scalar};
pub use stoch::{Channel, ChannelKind, Deviation, FinVar, StochError, WireList};

/// Default absolute tolerance for floating-point comparisons.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Default cap on the number of recorded counterexample witnesses.
pub const DEFAULT_WITNESS_CAP: usize = 16;
