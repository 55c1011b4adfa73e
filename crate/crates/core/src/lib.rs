//! Global-local graph neural networks for node classification.
//!
//! The crate trains GCN, GAT and GCNII backbones topped with a head that
//! learns one feature vector per class and scores nodes against them. All
//! arithmetic runs in `f64` on a small reverse-mode autodiff tape.
//!
//! ```no_run
//! use glgnn::{data, train, config::TrainConfig};
//!
//! let ds = data::load_dataset("data/cora".as_ref())?;
//! let split = ds.split("public")?;
//! let out = train::train(&ds, split, &TrainConfig::default())?;
//! println!("test accuracy {:.4}", out.metrics.test_acc);
//! # Ok::<(), glgnn::Error>(())
//! ```

pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod graph;
pub mod grid;
pub mod head;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DenseMatrix, SparseMatrix};
