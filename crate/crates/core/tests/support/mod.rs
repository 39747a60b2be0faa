pub mod fixtures;
pub mod oracles;
pub mod reference;
