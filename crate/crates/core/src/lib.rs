//! Cycle-level simulator and toolchain for a per-bank processing-in-memory
//! DPU architecture.
//!
//! The crate is organised bottom-up:
//!
//! - [`isa`]: registers, opcodes and the 48-bit instruction encoding.
//! - [`frontend`]: assembler, linker, image container and disassembler.
//! - [`memsys`]: WRAM port, DRAM bank timing with FR-FCFS, and the DMA engine.
//! - [`vm`] and [`cache`]: optional MRAM translation and caches.
//! - [`dpu`]: the multithreaded pipeline, functional execution, SIMT.
//! - [`stats`]: cycle accounting and instruction mix.
//! - [`system`]: multi-DPU host model with transfer phases.
//! - [`config`]: run configuration with dotted-key overrides.
//! - [`kernels`]: bundled assembly kernels, input generators and references.
//! - [`report`]: deterministic results JSON and CSV tables.

pub mod frontend;
pub mod isa;
pub mod memsys;
pub mod vm;
pub mod cache;
pub mod dpu;
pub mod stats;
pub mod system;
pub mod config;
pub mod kernels;
pub mod report;
