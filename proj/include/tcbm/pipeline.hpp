#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tcbm/bridge.hpp"
#include "tcbm/nn.hpp"
#include "tcbm/prior.hpp"
#include "tcbm/rng.hpp"
#include "tcbm/types.hpp"

namespace tcbm::pipeline {

enum class TaskKind { Interpolation, ImageToVideo, SuperResolution };

// How the corrupted endpoint X_T is built from the clean sequence.  Fixed
// frames always pass through unchanged.
enum class CouplingKind {
    GaussianNoise,   // free frames ~ N(0, I)
    LinearInterp,    // free frames linearly interpolate the two endpoints
    StaticCopy,      // every frame a copy of the first
    LowresUpsample,  // block-mean downsample then nearest-neighbour upsample
    LowresNoise,     // lowres upsample plus unit Gaussian noise
};

struct TaskConfig {
    TaskKind kind = TaskKind::Interpolation;
    int n_frames = 8;
    int feature_dim = 16;
    CouplingKind coupling = CouplingKind::GaussianNoise;
    int sr_factor = 4;

    // Defaults pick the winning corruption per task: noise fill for
    // interpolation, static copy for image-to-video, noise-free lowres for
    // super-resolution.
    static TaskConfig make(TaskKind kind, int n_frames, int feature_dim);
};

TaskKind parse_task(const std::string& name);
const char* task_name(TaskKind kind);
CouplingKind parse_coupling(const std::string& name);

// The prior acts on the free frames only: interpolation pins both end
// frames, image-to-video pins the first, super-resolution pins none.
int free_begin(const TaskConfig& task);
int free_count(const TaskConfig& task);

struct Dataset {
    int n_frames = 0;
    int feature_dim = 0;
    std::vector<MatrixF> sequences;  // each n_frames x feature_dim, values in [-1, 1]

    int count() const { return static_cast<int>(sequences.size()); }
};

// 1-D bouncing dot: a Gaussian bump translating at constant speed and
// reflecting at the signal boundaries.
struct DotParams {
    Scalar speed_min = 0.5;
    Scalar speed_max = 2.0;
    Scalar width_min = 1.0;
    Scalar width_max = 2.0;
};

Dataset generate_bouncing_dot(int count, int n_frames, int feature_dim, std::uint64_t seed,
                              const DotParams& params = {});

// Triangle-wave reflection of p into [0, limit].
Scalar reflect_position(Scalar p, Scalar limit);

struct Split {
    std::vector<int> train;
    std::vector<int> val;
};

// Disjoint random split, deterministic per seed.
Split split_dataset(int count, int val_count, std::uint64_t seed);

MatrixF corrupt(const TaskConfig& task, const MatrixF& x0, Rng& rng);

// Trivial task predictor used as the metrics floor: nearest endpoint for
// interpolation, first-frame copy for image-to-video, the upsampled lowres
// input for super-resolution.
MatrixF baseline_prediction(const TaskConfig& task, const MatrixF& x0);

struct PriorParams {
    Scalar eps = 0.1;
    Scalar alpha = 1.0;
    Scalar horizon = 1.0;
    prior::CorrelationSchedule schedule;
};

// Free-block prior for one sequence: b is the task boundary pattern scaled
// by alpha (the drift is alpha * (A x + b_pattern)).
prior::PriorSpec task_prior(const spectral::SpectralOperator& op, const PriorParams& params,
                            const TaskConfig& task, const MatrixRef& full_seq);

struct TrainConfig {
    long steps = 20000;
    int batch = 128;
    float lr = 3e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.95f;
    float weight_decay = 1e-4f;
    float ema_rate = 0.999f;
    std::vector<int> hidden = {256, 256};
    int temb_width = 16;
    int val_count = 64;
    std::uint64_t seed = 1;
};

struct TrainResult {
    nn::Mlp<float> model;
    nn::AdamW<float> opt;
    nn::Ema<float> ema;
    std::vector<float> loss_trace;
    Split split;
};

TrainResult train(const PriorParams& params, const TaskConfig& task, const Dataset& data,
                  const TrainConfig& cfg);

// Full-sequence clean-data predictor: given the current states (one n x d
// matrix per sequence) and the time, produce the X0 estimates.
using BatchPredictor = std::function<std::vector<Matrix>(const std::vector<Matrix>&, Scalar)>;

BatchPredictor mlp_predictor(const nn::Mlp<float>& model);

// Posterior-sampling inference over a uniform time schedule t_n = n T / N.
// Fixed frames of each input are preserved bit-identically.
std::vector<MatrixF> sample_batch(const PriorParams& params, const TaskConfig& task,
                                  const BatchPredictor& predict,
                                  const std::vector<MatrixF>& x_terminal, int n_steps, Rng& rng);

MatrixF sample_sequence(const PriorParams& params, const TaskConfig& task,
                        const BatchPredictor& predict, const MatrixF& x_terminal, int n_steps,
                        Rng& rng);

// 10 log10(range^2 / mse) with range 2.0 for [-1, 1] signals, capped at
// 100 dB.
double psnr(const MatrixF& a, const MatrixF& b);

// Mean 1-D windowed structural similarity per frame: window 11, Gaussian
// sigma 1.5, C1 = (0.01 range)^2, C2 = (0.03 range)^2.
double ssim(const MatrixF& a, const MatrixF& b);

struct EvalResult {
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double baseline_psnr = 0.0;
    double baseline_ssim = 0.0;
    int count = 0;
};

// Metrics over the free block of generated vs clean pairs.
EvalResult evaluate_pairs(const TaskConfig& task, const std::vector<MatrixF>& generated,
                          const std::vector<MatrixF>& clean);

struct SweepCell {
    double eps = 0.0;
    double alpha = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double final_loss = 0.0;
    bool ok = false;
    std::string error;
};

// Train + evaluate one cell per (eps, alpha) pair; a failing cell is marked
// and the sweep continues.
std::vector<SweepCell> sweep(const std::vector<Scalar>& eps_grid,
                             const std::vector<Scalar>& alpha_grid, PriorParams params,
                             const TaskConfig& task, const Dataset& data, const TrainConfig& cfg,
                             int n_sample_steps);

}  // namespace tcbm::pipeline
