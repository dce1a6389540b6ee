//! Training and evaluation.

mod checkpoint;
mod config;
mod data;
mod eval;
mod gradsuite;
mod suite;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{ConfigDoc, DataPlan, Precision, TrainConfig};
pub use data::{frames_from_sequences, generate_plan, load_sequences, make_batch, tiles, Batch, Frame, Split, Tile};
pub use eval::{argmax_channels, evaluate, frame_logits, predict_frame, render_table, EvalReport, EvalRow};
pub use gradsuite::{arch_suite, op_suite, run_grad_suite, GradSuiteConfig, CHECKED_OPS};
pub use suite::{run_suite, SuiteCell, SuiteConfig, SuiteReport, SuiteRun, Verdict, VerdictStatus};
pub use train::{check_labels, mean_loss, train, LogRow, TrainRun, CHECKPOINT_FILE, LAST_GOOD_FILE, METRICS_FILE, METRICS_HEADER};
