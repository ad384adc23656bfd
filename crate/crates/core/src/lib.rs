// SPDX-License-Identifier: Apache-2.0
//! Backend-aware logic synthesis optimization.
//!
//! A fixed-strategy sweep establishes baselines, an advisor rewrites ABC
//! command sequences using measured post-layout metrics, and the loop
//! accepts strict improvements until it converges. Everything is exposed
//! to agents through an MCP tool server on stdio.

pub mod abc;
pub mod advisor;
pub mod backend;
pub mod config;
pub mod docstore;
pub mod mcp;
pub mod metrics;
pub mod optimizer;
pub mod report;
