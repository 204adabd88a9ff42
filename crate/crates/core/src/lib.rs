//! Real-time hand-gesture recognition and participation telemetry.
//!
//! The vision side runs a fixed chain per frame: a codebook background model
//! yields a motion mask, a Haar cascade finds the hand, CamShift tracks it on
//! a skin-hue backprojection, the two masks are fused, and the hand contour is
//! classified by its contour point distribution histogram. Recognized
//! gestures become events that learners' machines stream to a supervisor,
//! which turns them into per-learner participation indicators.

pub mod imaging;
pub mod codebook;
pub mod cascade;
pub mod skintrack;
pub mod cpdh;
pub mod pipeline;
pub mod telemetry;
