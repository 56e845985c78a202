pub mod certify;
pub mod engine;
pub mod genchk;
pub mod history;
pub mod mvsg;
pub mod stamp;
pub mod tictoc;
