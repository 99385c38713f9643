//! Quantized embedding storage with exact cosine kNN search.
//!
//! Vectors are stored as FP32, BF16, or symmetric INT8/INT4 codes with one
//! scale per group of consecutive elements. Search is brute force and exact
//! over whatever representation is stored. A product-quantization baseline and
//! an evaluation harness (pairwise cosine RMSE, top-k overlap, STS correlation)
//! are included for comparing the representations.

pub mod bf16;
pub mod dtype;
pub mod error;
pub mod eval;
pub mod io;
pub mod matrix;
pub mod pq;
pub mod quantize;
pub mod report;
pub mod rng;
pub mod search;
pub mod similarity;

pub use dtype::{dtype_parse, DType, GroupSize, Kind};
pub use eval::{EvalReport, Experiment, Method, RetrievalOptions, StsOptions};
pub use error::{Error, ErrorClass, Result};
pub use matrix::EmbeddingMatrix;
pub use quantize::{QuantizedStore, QuantizedVector, ScaleDenominator};
pub use rng::Rng;
pub use search::{knn_float, knn_quantized, Queries, SearchOptions, TopKResult};
pub use pq::{PQCodebook, PQCodes, PQConfig};
