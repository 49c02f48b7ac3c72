//! Output formats shared by the `tandem` command.

pub mod plot;
pub mod report;
