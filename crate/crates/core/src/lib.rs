//! Adversarial image colorization in CIE Lab: a generator that regresses
//! chrominance and a class distribution from luminance, trained against a
//! patch Wasserstein critic with gradient penalty.

pub mod archive;
pub mod autograd;
pub mod colorspace;
pub mod data;
pub mod eval;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod study;
pub mod tensor;
pub mod trainer;
