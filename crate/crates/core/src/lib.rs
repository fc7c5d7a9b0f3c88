//! A crypto-free mapping store for confidential databases, and the pieces
//! needed to exercise it end to end.
//!
//! Sensitive fields are replaced by 64-bit [`fid::Fid`]s that reference
//! plaintext held in a trusted privacy zone. The integrity-zone engine in
//! [`dbms`] stores only FIDs and reaches plaintext operators through
//! [`proxy`]. [`sim`] wires both zones together behind a byte-level channel
//! with crash injection and an adversary trace; [`bench`] measures cost,
//! storage and workload behaviour.

pub mod atrest;
pub mod bench;
pub mod codec;
pub mod dbms;
pub mod fid;
pub mod proxy;
pub mod sim;
pub mod store;
pub mod vfs;
pub mod wal;
