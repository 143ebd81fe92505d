#pragma once

#include <map>
#include <string>
#include <vector>

#include "tcbm/nn.hpp"
#include "tcbm/pipeline.hpp"

// File formats.
//
// Dataset (.tcds):  "TCDS" | u8 version=1 | u32 count | u32 n_frames |
//   u32 feature_dim | f32 data, sequence-major, frame-major, feature
//   innermost.  All multi-byte fields little-endian.
//
// Checkpoint (.tcvb):  "TCVB" | u8 version=1 | u32 n_widths | u32 widths[] |
//   u32 temb_width | u32 adam_step | f32 arrays in declaration order:
//   per-layer weights (row-major) and biases, AdamW first moments in the
//   same order, AdamW second moments, then the EMA shadow weights.
namespace tcbm::io {

void save_dataset(const std::string& path, const pipeline::Dataset& data);
pipeline::Dataset load_dataset(const std::string& path);

struct Checkpoint {
    nn::Mlp<float> model;
    nn::AdamW<float> opt;
    nn::Ema<float> ema;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Optimizer hyperparameters are not stored in the file; the caller supplies
// them (they live in the run config sidecar).
Checkpoint load_checkpoint(const std::string& path);

// One strip per sequence: frames as vertical signal columns (8 px wide)
// tiled horizontally, [-1, 1] mapped to [0, 255].
void write_pgm_strip(const std::string& path, const MatrixF& sequence);

// Resolved key=value pairs, sorted, one per line.
void write_sidecar(const std::string& output_path, const std::map<std::string, std::string>& cfg);

}  // namespace tcbm::io
