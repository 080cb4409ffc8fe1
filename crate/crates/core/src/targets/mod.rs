//! Targets to examine: analytic landscapes with known optima, and a
//! render-then-classify pipeline over procedurally drawn 2D shapes.

mod classifier;
mod landscape;
mod oracle;
mod render;

pub use classifier::{
    train_classifier, Architecture, Classifier, Optimizer, ShapeTarget, TrainingMetrics, TrainingOptions,
    NUM_CLASSES,
};
pub use landscape::{AnalyticLandscape, Bump, LandscapeKind};
pub use oracle::{grid_oracle, restrict_training_space, GRID_BUDGET};
pub use render::{render, render_space, Image, ShapeClass, ShapeInstance, IMAGE_SIZE};
