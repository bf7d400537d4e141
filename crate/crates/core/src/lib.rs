//! Factorized all-to-all exchange over a d-dimensional torus of ranks.
//!
//! A group of `p` ranks is viewed as a `D[0] x … x D[d-1]` torus. The
//! exchange runs `d` rounds, each an all-to-all among the `D[k]` ranks that
//! differ only in one coordinate, moving every block through at most `d`
//! hops instead of sending `p - 1` messages per rank.
//!
//! ```
//! use torus_alltoall::{dims_create, group::threads, Region, RegionMut, TorusComm};
//!
//! let results = threads::run(12, |world| {
//!     let mut tc = TorusComm::new(world);
//!     tc.factorize(dims_create(12, 2).unwrap()).unwrap();
//!     let rank = tc.parent().rank() as u32;
//!     let send: Vec<u32> = (0..12).map(|i| rank * 100 + i).collect();
//!     let mut recv = vec![0u32; 12];
//!     tc.alltoall(&Region::from_elems(&send, 1), &mut RegionMut::from_elems(&mut recv, 1)).unwrap();
//!     recv
//! });
//! assert_eq!(results[5], (0..12).map(|i| i * 100 + 5).collect::<Vec<u32>>());
//! ```

pub mod bench;
pub mod engine;
pub mod error;
pub mod factorization;
pub mod group;
pub mod layout;
pub mod oracle;

pub use engine::{factorize_group, TorusComm};
pub use error::{Error, Result};
pub use factorization::{dims_create, Coord, Dims};
pub use group::{ProcessGroup, Region, RegionMut};
pub use layout::{build_round_layout, BlockSpec, RoundLayout};
