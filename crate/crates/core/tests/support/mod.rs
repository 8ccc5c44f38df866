#![allow(dead_code)]

pub mod kn;
pub mod recurrent;
