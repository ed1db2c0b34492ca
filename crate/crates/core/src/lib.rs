pub mod cli;
pub mod corpus;
pub mod demos;
pub mod guest;
pub mod host;
pub mod machine;
pub mod proto;
pub mod record;
pub mod replay;
pub mod ttd;
