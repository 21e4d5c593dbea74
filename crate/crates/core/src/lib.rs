//! FitzHugh-Nagumo neurons at three scales: a finite network, the kinetic
//! equation with strong local interaction, and its nonlocal reaction-diffusion
//! limit, tied together by relative-entropy diagnostics.

// `!(x <= limit)` is used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fhn;
pub mod grid;
pub mod kinetic;
pub mod hydro;
pub mod micro;
pub mod diagnostics;
pub mod harness;
