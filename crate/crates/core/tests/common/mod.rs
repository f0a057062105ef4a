pub mod dsp;
pub mod gradcheck;
