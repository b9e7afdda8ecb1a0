//! File formats, trajectory ingestion, the command-line tool and the
//! streaming service built on `midar-core`.

pub mod cli;
pub mod dataio;
pub mod serve;
