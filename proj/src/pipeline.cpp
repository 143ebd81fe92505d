#include "tcbm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tcbm::pipeline {

TaskConfig TaskConfig::make(TaskKind kind, int n_frames, int feature_dim) {
    TaskConfig t;
    t.kind = kind;
    t.n_frames = n_frames;
    t.feature_dim = feature_dim;
    switch (kind) {
        case TaskKind::Interpolation: t.coupling = CouplingKind::GaussianNoise; break;
        case TaskKind::ImageToVideo: t.coupling = CouplingKind::StaticCopy; break;
        case TaskKind::SuperResolution: t.coupling = CouplingKind::LowresUpsample; break;
    }
    return t;
}

TaskKind parse_task(const std::string& name) {
    if (name == "interpolation") return TaskKind::Interpolation;
    if (name == "image_to_video") return TaskKind::ImageToVideo;
    if (name == "super_resolution") return TaskKind::SuperResolution;
    throw std::invalid_argument("unknown task: " + name);
}

const char* task_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::Interpolation: return "interpolation";
        case TaskKind::ImageToVideo: return "image_to_video";
        case TaskKind::SuperResolution: return "super_resolution";
    }
    return "?";
}

CouplingKind parse_coupling(const std::string& name) {
    if (name == "gaussian_noise") return CouplingKind::GaussianNoise;
    if (name == "linear_interp") return CouplingKind::LinearInterp;
    if (name == "static_copy") return CouplingKind::StaticCopy;
    if (name == "lowres_upsample") return CouplingKind::LowresUpsample;
    if (name == "lowres_noise") return CouplingKind::LowresNoise;
    throw std::invalid_argument("unknown coupling: " + name);
}

int free_begin(const TaskConfig& task) {
    return task.kind == TaskKind::SuperResolution ? 0 : 1;
}

int free_count(const TaskConfig& task) {
    switch (task.kind) {
        case TaskKind::Interpolation: return task.n_frames - 2;
        case TaskKind::ImageToVideo: return task.n_frames - 1;
        case TaskKind::SuperResolution: return task.n_frames;
    }
    return 0;
}

Scalar reflect_position(Scalar p, Scalar limit) {
    if (limit <= 0.0) return 0.0;
    const Scalar period = 2.0 * limit;
    Scalar q = std::fmod(p, period);
    if (q < 0.0) q += period;
    return q <= limit ? q : period - q;
}

Dataset generate_bouncing_dot(int count, int n_frames, int feature_dim, std::uint64_t seed,
                              const DotParams& params) {
    if (count < 1) throw std::invalid_argument("generate_bouncing_dot: count must be >= 1");
    if (n_frames < 1 || feature_dim < 2)
        throw std::invalid_argument("generate_bouncing_dot: bad dimensions");

    Dataset data;
    data.n_frames = n_frames;
    data.feature_dim = feature_dim;
    data.sequences.reserve(count);

    Rng master(seed);
    const Scalar limit = feature_dim - 1;
    for (int i = 0; i < count; ++i) {
        Rng rng = master.substream(static_cast<std::uint64_t>(i));
        const Scalar p0 = rng.uniform() * limit;
        const Scalar speed = params.speed_min + rng.uniform() * (params.speed_max - params.speed_min);
        const Scalar sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const Scalar width = params.width_min + rng.uniform() * (params.width_max - params.width_min);

        MatrixF seq(n_frames, feature_dim);
        for (int n = 0; n < n_frames; ++n) {
            const Scalar center = reflect_position(p0 + sign * speed * n, limit);
            for (int d = 0; d < feature_dim; ++d) {
                const Scalar z = (d - center) / width;
                seq(n, d) = static_cast<float>(2.0 * std::exp(-0.5 * z * z) - 1.0);
            }
        }
        data.sequences.push_back(std::move(seq));
    }
    return data;
}

Split split_dataset(int count, int val_count, std::uint64_t seed) {
    if (val_count < 0 || val_count >= count)
        throw std::invalid_argument("split_dataset: need 0 <= val_count < count");
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed ^ 0x73706c6974ULL);  // split stream, independent of training draws
    for (int i = count - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform() * (i + 1));
        std::swap(order[i], order[std::min(j, i)]);
    }
    Split s;
    s.val.assign(order.begin(), order.begin() + val_count);
    s.train.assign(order.begin() + val_count, order.end());
    return s;
}

namespace {

MatrixF lowres_upsample(const MatrixF& x0, int factor) {
    const int d = static_cast<int>(x0.cols());
    MatrixF out(x0.rows(), d);
    for (int start = 0; start < d; start += factor) {
        const int len = std::min(factor, d - start);
        const VectorF block_mean = x0.middleCols(start, len).rowwise().mean();
        for (int j = 0; j < len; ++j) out.col(start + j) = block_mean;
    }
    return out;
}

}  // namespace

MatrixF corrupt(const TaskConfig& task, const MatrixF& x0, Rng& rng) {
    if (x0.rows() != task.n_frames || x0.cols() != task.feature_dim)
        throw std::invalid_argument("corrupt: sequence shape mismatch");
    const int fb = free_begin(task);
    const int nf = free_count(task);

    MatrixF xt = x0;
    switch (task.coupling) {
        case CouplingKind::GaussianNoise:
            for (int n = fb; n < fb + nf; ++n)
                for (int d = 0; d < task.feature_dim; ++d)
                    xt(n, d) = static_cast<float>(rng.normal());
            break;
        case CouplingKind::LinearInterp: {
            if (task.kind != TaskKind::Interpolation)
                throw std::invalid_argument("corrupt: linear_interp needs two fixed endpoints");
            const int last = task.n_frames - 1;
            for (int n = fb; n < fb + nf; ++n) {
                const float w = static_cast<float>(n) / static_cast<float>(last);
                xt.row(n) = (1.0f - w) * x0.row(0) + w * x0.row(last);
            }
            break;
        }
        case CouplingKind::StaticCopy:
            for (int n = fb; n < fb + nf; ++n) xt.row(n) = x0.row(0);
            break;
        case CouplingKind::LowresUpsample:
            xt = lowres_upsample(x0, task.sr_factor);
            break;
        case CouplingKind::LowresNoise: {
            xt = lowres_upsample(x0, task.sr_factor);
            for (int n = fb; n < fb + nf; ++n)
                for (int d = 0; d < task.feature_dim; ++d)
                    xt(n, d) += static_cast<float>(rng.normal());
            break;
        }
    }
    // fixed frames pass through unchanged
    for (int n = 0; n < fb; ++n) xt.row(n) = x0.row(n);
    for (int n = fb + nf; n < task.n_frames; ++n) xt.row(n) = x0.row(n);
    return xt;
}

MatrixF baseline_prediction(const TaskConfig& task, const MatrixF& x0) {
    MatrixF out = x0;
    const int fb = free_begin(task);
    const int nf = free_count(task);
    switch (task.kind) {
        case TaskKind::Interpolation: {
            const int last = task.n_frames - 1;
            for (int n = fb; n < fb + nf; ++n)
                out.row(n) = (n <= last - n) ? x0.row(0) : x0.row(last);
            break;
        }
        case TaskKind::ImageToVideo:
            for (int n = fb; n < fb + nf; ++n) out.row(n) = x0.row(0);
            break;
        case TaskKind::SuperResolution:
            out = lowres_upsample(x0, task.sr_factor);
            break;
    }
    return out;
}

prior::PriorSpec task_prior(const spectral::SpectralOperator& op, const PriorParams& params,
                            const TaskConfig& task, const MatrixRef& full_seq) {
    const int nf = free_count(task);
    if (nf < 1) throw std::invalid_argument("task_prior: task leaves no free frames");
    if (op.n != nf) throw std::invalid_argument("task_prior: operator size != free frame count");
    if (full_seq.rows() != task.n_frames || full_seq.cols() != task.feature_dim)
        throw std::invalid_argument("task_prior: sequence shape mismatch");

    // Boundary pattern of the stencil's clamped neighbours, scaled by alpha
    // along with the operator.
    Matrix b = Matrix::Zero(nf, task.feature_dim);
    switch (task.kind) {
        case TaskKind::Interpolation:
            b.row(0) = full_seq.row(0);
            b.row(nf - 1) = full_seq.row(task.n_frames - 1);
            break;
        case TaskKind::ImageToVideo: b.row(0) = full_seq.row(0); break;
        case TaskKind::SuperResolution: break;
    }
    b *= params.alpha;
    return prior::make_prior(op, params.eps, std::move(b), params.horizon, params.schedule);
}

namespace {

Vector flatten(const MatrixRef& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Matrix unflatten(const VectorRef& v, int rows, int cols) {
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace

TrainResult train(const PriorParams& params, const TaskConfig& task, const Dataset& data,
                  const TrainConfig& cfg) {
    if (data.n_frames != task.n_frames || data.feature_dim != task.feature_dim)
        throw std::invalid_argument("train: dataset shape does not match task");
    if (cfg.steps < 1 || cfg.batch < 1) throw std::invalid_argument("train: bad budget");

    const int nd = task.n_frames * task.feature_dim;
    const int fb = free_begin(task);
    const int nf = free_count(task);
    const auto op = spectral::build_operator(nf, params.alpha);

    std::vector<int> widths;
    widths.push_back(nd + cfg.temb_width);
    for (int h : cfg.hidden) widths.push_back(h);
    widths.push_back(nd);

    TrainResult result;
    result.model = nn::Mlp<float>::init(widths, cfg.temb_width, cfg.seed ^ 0x696e6974ULL);
    result.opt = nn::AdamW<float>::for_model(result.model, cfg.lr, cfg.beta1, cfg.beta2,
                                             cfg.weight_decay);
    result.ema = nn::Ema<float>::of(result.model, cfg.ema_rate);
    result.split = split_dataset(data.count(), cfg.val_count, cfg.seed);
    result.loss_trace.reserve(cfg.steps);

    const int train_size = static_cast<int>(result.split.train.size());
    if (train_size < 1) throw std::invalid_argument("train: empty training split");

    Rng rng(cfg.seed);
    nn::Mat<float> seq_batch(nd, cfg.batch), target(nd, cfg.batch);
    nn::Vec<float> ts(cfg.batch);
    nn::Gradients<float> grads;

    for (long step = 0; step < cfg.steps; ++step) {
        for (int j = 0; j < cfg.batch; ++j) {
            const int pick = std::min(static_cast<int>(rng.uniform() * train_size), train_size - 1);
            const MatrixF& x0f = data.sequences[result.split.train[pick]];
            const Matrix x0 = x0f.cast<Scalar>();
            const Scalar t = rng.uniform() * params.horizon;
            const MatrixF xtf = corrupt(task, x0f, rng);

            const auto spec = task_prior(op, params, task, x0);
            const auto stats =
                bridge::posterior(spec, x0.middleRows(fb, nf),
                                  xtf.cast<Scalar>().middleRows(fb, nf), t, params.horizon);
            Matrix xt_full = x0;
            xt_full.middleRows(fb, nf) = bridge::sample_bridge(op, stats, rng);

            seq_batch.col(j) = flatten(xt_full).cast<float>();
            target.col(j) = x0f.reshaped();
            ts[j] = static_cast<float>(t);
        }
        const auto input = result.model.assemble_input(seq_batch, ts);
        float loss = 0.0f;
        try {
            loss = result.model.backward(input, target, grads);
        } catch (const DivergedError&) {
            throw DivergedError("train: loss diverged at step " + std::to_string(step));
        }
        result.opt.update(result.model, grads);
        result.ema.update(result.model);
        result.loss_trace.push_back(loss);
    }
    return result;
}

BatchPredictor mlp_predictor(const nn::Mlp<float>& model) {
    return [model](const std::vector<Matrix>& states, Scalar t) {
        const int batch = static_cast<int>(states.size());
        const int rows = static_cast<int>(states.front().rows());
        const int cols = static_cast<int>(states.front().cols());
        nn::Mat<float> seq_flat(rows * cols, batch);
        for (int j = 0; j < batch; ++j) seq_flat.col(j) = flatten(states[j]).cast<float>();
        const nn::Vec<float> ts = nn::Vec<float>::Constant(batch, static_cast<float>(t));
        const nn::Mat<float> out = model.predict(seq_flat, ts);
        std::vector<Matrix> preds(batch);
        for (int j = 0; j < batch; ++j)
            preds[j] = unflatten(out.col(j).cast<Scalar>(), rows, cols);
        return preds;
    };
}

std::vector<MatrixF> sample_batch(const PriorParams& params, const TaskConfig& task,
                                  const BatchPredictor& predict,
                                  const std::vector<MatrixF>& x_terminal, int n_steps, Rng& rng) {
    if (n_steps < 1) throw std::invalid_argument("sample_batch: n_steps must be >= 1");
    if (x_terminal.empty()) return {};
    const int fb = free_begin(task);
    const int nf = free_count(task);
    const int batch = static_cast<int>(x_terminal.size());
    const auto op = spectral::build_operator(nf, params.alpha);

    std::vector<Matrix> states(batch);
    std::vector<Rng> streams;
    streams.reserve(batch);
    const std::uint64_t nonce = rng.next_u64();  // fresh substreams per call
    for (int j = 0; j < batch; ++j) {
        if (x_terminal[j].rows() != task.n_frames || x_terminal[j].cols() != task.feature_dim)
            throw std::invalid_argument("sample_batch: sequence shape mismatch");
        states[j] = x_terminal[j].cast<Scalar>();
        streams.push_back(rng.substream(nonce + static_cast<std::uint64_t>(j)));
    }

    for (int n = n_steps; n >= 1; --n) {
        const Scalar t_cur = params.horizon * n / n_steps;
        const Scalar t_next = params.horizon * (n - 1) / n_steps;
        std::vector<Matrix> x0_hat = predict(states, t_cur);
        for (int j = 0; j < batch; ++j) {
            // conditioning frames are authoritative; the predictor never
            // overrides them
            for (int r = 0; r < fb; ++r) x0_hat[j].row(r) = states[j].row(r);
            for (int r = fb + nf; r < task.n_frames; ++r) x0_hat[j].row(r) = states[j].row(r);

            const auto spec = task_prior(op, params, task, x0_hat[j]);
            const auto stats = bridge::posterior(spec, x0_hat[j].middleRows(fb, nf),
                                                 states[j].middleRows(fb, nf), t_next, t_cur);
            states[j].middleRows(fb, nf) = bridge::sample_bridge(op, stats, streams[j]);
        }
    }

    std::vector<MatrixF> out(batch);
    for (int j = 0; j < batch; ++j) {
        out[j] = states[j].cast<float>();
        for (int r = 0; r < fb; ++r) out[j].row(r) = x_terminal[j].row(r);
        for (int r = fb + nf; r < task.n_frames; ++r) out[j].row(r) = x_terminal[j].row(r);
    }
    return out;
}

MatrixF sample_sequence(const PriorParams& params, const TaskConfig& task,
                        const BatchPredictor& predict, const MatrixF& x_terminal, int n_steps,
                        Rng& rng) {
    return sample_batch(params, task, predict, {x_terminal}, n_steps, rng).front();
}

double psnr(const MatrixF& a, const MatrixF& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("psnr: shape mismatch");
    const double mse = (a.cast<double>() - b.cast<double>()).squaredNorm() / a.size();
    if (mse <= 0.0) return 100.0;
    const double range = 2.0;
    return std::min(100.0, 10.0 * std::log10(range * range / mse));
}

double ssim(const MatrixF& a, const MatrixF& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("ssim: shape mismatch");
    const int window = 11;
    const int d = static_cast<int>(a.cols());
    if (d < window) throw std::invalid_argument("ssim: feature dim below window size 11");

    Vector w(window);
    for (int i = 0; i < window; ++i) {
        const double z = (i - (window - 1) / 2.0) / 1.5;
        w[i] = std::exp(-0.5 * z * z);
    }
    w /= w.sum();

    const double range = 2.0;
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);

    double acc = 0.0;
    long terms = 0;
    for (int n = 0; n < a.rows(); ++n) {
        for (int p = 0; p + window <= d; ++p) {
            double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
            for (int i = 0; i < window; ++i) {
                const double xa = a(n, p + i), xb = b(n, p + i);
                mu_a += w[i] * xa;
                mu_b += w[i] * xb;
                aa += w[i] * (xa * xa);
                bb += w[i] * (xb * xb);
                ab += w[i] * (xa * xb);  // grouped so ssim(a,b) == ssim(b,a) bitwise
            }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++terms;
        }
    }
    return acc / terms;
}

EvalResult evaluate_pairs(const TaskConfig& task, const std::vector<MatrixF>& generated,
                          const std::vector<MatrixF>& clean) {
    if (generated.size() != clean.size())
        throw std::invalid_argument("evaluate_pairs: sequence counts differ");
    const int fb = free_begin(task);
    const int nf = free_count(task);

    EvalResult r;
    r.count = static_cast<int>(generated.size());
    for (std::size_t i = 0; i < generated.size(); ++i) {
        const MatrixF gen_free = generated[i].middleRows(fb, nf);
        const MatrixF ref_free = clean[i].middleRows(fb, nf);
        const MatrixF base_free = baseline_prediction(task, clean[i]).middleRows(fb, nf);
        r.mean_psnr += psnr(gen_free, ref_free);
        r.mean_ssim += ssim(gen_free, ref_free);
        r.baseline_psnr += psnr(base_free, ref_free);
        r.baseline_ssim += ssim(base_free, ref_free);
    }
    if (r.count > 0) {
        r.mean_psnr /= r.count;
        r.mean_ssim /= r.count;
        r.baseline_psnr /= r.count;
        r.baseline_ssim /= r.count;
    }
    return r;
}

std::vector<SweepCell> sweep(const std::vector<Scalar>& eps_grid,
                             const std::vector<Scalar>& alpha_grid, PriorParams params,
                             const TaskConfig& task, const Dataset& data, const TrainConfig& cfg,
                             int n_sample_steps) {
    if (eps_grid.empty() || alpha_grid.empty())
        throw std::invalid_argument("sweep: empty grid");

    std::vector<SweepCell> cells;
    for (const Scalar eps : eps_grid) {
        for (const Scalar alpha : alpha_grid) {
            SweepCell cell;
            cell.eps = eps;
            cell.alpha = alpha;
            try {
                params.eps = eps;
                params.alpha = alpha;
                const TrainResult tr = train(params, task, data, cfg);
                const auto eval_model = tr.ema.snapshot(tr.model);

                std::vector<MatrixF> clean, corrupted;
                Rng rng(cfg.seed ^ 0x6576616cULL);
                for (int idx : tr.split.val) {
                    clean.push_back(data.sequences[idx]);
                    corrupted.push_back(corrupt(task, data.sequences[idx], rng));
                }
                const auto generated = sample_batch(params, task, mlp_predictor(eval_model),
                                                    corrupted, n_sample_steps, rng);
                const EvalResult ev = evaluate_pairs(task, generated, clean);
                cell.psnr = ev.mean_psnr;
                cell.ssim = ev.mean_ssim;
                cell.final_loss = tr.loss_trace.empty() ? 0.0 : tr.loss_trace.back();
                cell.ok = true;
            } catch (const std::exception& e) {
                cell.ok = false;
                cell.error = e.what();
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

}  // namespace tcbm::pipeline
