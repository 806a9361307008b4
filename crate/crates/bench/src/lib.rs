//! Criterion benchmarks for the renderer, the 3D deconvolution and a training step.
