//! Deterministic virtual-time simulator for sequential and parallel
//! proof-of-work protocols, their reward schemes, and withholding attacks.
//!
//! The layers build on each other:
//!
//! * [`dag`] stores proofs-of-work; [`view`] is one node's knowledge of it.
//! * [`protocol`] validates proofs-of-work, groups them into epochs, and
//!   builds mining templates; [`rewards`] pays epochs out.
//! * [`sim`] runs the network; [`attacker`] adds a withholding miner and
//!   [`env`] exposes it as a step/reset environment.
//! * [`policy`], [`qlearn`] and [`eval`] decide and measure attacks;
//!   [`harness`] runs configured experiments.

pub mod attacker;
pub mod dag;
pub mod env;
pub mod eval;
pub mod harness;
pub mod policy;
pub mod protocol;
pub mod qlearn;
pub mod rewards;
pub mod sim;
pub mod view;

// Guide chapters; their code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/protocols.md")]
    mod protocols {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/attacks.md")]
    mod attacks {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
