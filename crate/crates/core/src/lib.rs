//! Policy synthesis for continuous-state MDPs whose objective is given as a
//! limit-deterministic Büchi automaton.

pub mod automata;
pub mod bench;
pub mod environment;
pub mod eval;
pub mod fvi;
pub mod lcnfq;
pub mod neural;
pub mod oracle;
pub mod policy;
pub mod product;
pub mod rng;
pub mod vq;
