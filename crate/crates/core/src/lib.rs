pub mod advtrain;
pub mod balance;
pub mod corpus;
pub mod error;
pub mod expcli;
pub mod gantext;
pub mod genmetrics;
pub mod numerics;
pub mod sentclass;
pub mod textprep;

pub use error::{Error, Result};
