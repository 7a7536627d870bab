pub mod attack;
pub mod consensus;
pub mod engine;
pub mod mac;
pub mod powergrid;
pub mod protocol;
pub mod scenario;
