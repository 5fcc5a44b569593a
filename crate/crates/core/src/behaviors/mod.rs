//! The explicit behavior families: mobility, social interaction, economy.

pub mod economy;
pub mod mobility;
pub mod social;
