//! Numerical laboratory for yield tokenization: SDE simulation, risk-neutral
//! pricing of yield tokens and yield futures, tokenizer accounting, lending-pool
//! hedging and welfare analysis, utility-based AMM bonding curves, liquidity
//! aggregation, fixed-rate quoting, and liquid-staking pricing/insurance.

pub mod aggregation;
pub mod amm;
pub mod cli;
pub mod dist;
pub mod fixed_rate;
pub mod lending;
pub mod pricing;
pub mod staking;
pub mod stochastic;
pub mod tokenizer;
pub mod utility;
