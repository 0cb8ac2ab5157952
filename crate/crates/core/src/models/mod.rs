//! Classifiers: classical baselines, in-context foundation models and
//! fine-tuned foundation models behind one interface.

pub mod classical;
pub mod classifier;
pub mod finetuned;
pub mod icl;
pub mod registry;
pub mod tfm;

pub use classifier::{Classifier, ClassifierKind, Hyperparameters};
pub use finetuned::FinetunedClassifier;
pub use icl::{subsample_context, IclClassifier, IclContext};
pub use registry::{BackendContext, BackendFactory, BackendRegistry, ExternalTfm, TfmSettings, TfmSource};
