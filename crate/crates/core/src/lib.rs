pub mod graph;
pub mod hardware;
pub mod numerics;
pub mod partition;
pub mod quantizer;
pub mod experiment;
pub mod sim;
