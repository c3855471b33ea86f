#include "bsm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "bsm/rng.hpp"

namespace fs = std::filesystem;

namespace bsm {

LabelBatch labels_from_masks(const BoolBatch& masks) {
  LabelBatch out(masks.n, masks.h, masks.w);
  for (std::size_t i = 0; i < masks.v.size(); ++i) out.v[i] = masks.v[i] ? 1 : 0;
  return out;
}

LabelBatch downsample_nearest(const LabelBatch& labels, int factor) {
  if (factor < 1 || labels.h % factor || labels.w % factor)
    throw std::invalid_argument("downsample_nearest: bad factor");
  LabelBatch out(labels.n, labels.h / factor, labels.w / factor);
  for (int i = 0; i < labels.n; ++i)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.at(i, y, x) = labels.at(i, y * factor, x * factor);
  return out;
}

BoolBatch downsample_nearest(const BoolBatch& flags, int factor) {
  if (factor < 1 || flags.h % factor || flags.w % factor)
    throw std::invalid_argument("downsample_nearest: bad factor");
  BoolBatch out(flags.n, flags.h / factor, flags.w / factor);
  for (int i = 0; i < flags.n; ++i)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.at(i, y, x) = flags.at(i, y * factor, x * factor);
  return out;
}

double pixel_ce_loss(const Tensor& scores, const LabelBatch& labels,
                     const BoolBatch& valid, Tensor* dscores) {
  if (scores.n != labels.n || scores.h != labels.h || scores.w != labels.w)
    throw std::invalid_argument("pixel_ce_loss: scores/labels shape mismatch");
  if (labels.n != valid.n || labels.h != valid.h || labels.w != valid.w)
    throw std::invalid_argument("pixel_ce_loss: labels/valid shape mismatch");
  const int C = scores.c;
  for (std::int32_t l : labels.v)
    if (l < 0 || l >= C)
      throw std::invalid_argument("pixel_ce_loss: label " + std::to_string(l) +
                                  " out of range for C=" + std::to_string(C));

  if (dscores) {
    *dscores = Tensor::zeros_like(scores);
  }

  // Per-row partials summed serially afterwards keep the reduction order
  // independent of the thread count.
  const long rows = static_cast<long>(scores.n) * scores.h;
  std::vector<double> row_loss(static_cast<std::size_t>(rows), 0.0);
  std::vector<long> row_count(static_cast<std::size_t>(rows), 0);
  #pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const int n = static_cast<int>(r / scores.h);
    const int y = static_cast<int>(r % scores.h);
    double acc = 0.0;
    long cnt = 0;
    for (int x = 0; x < scores.w; ++x) {
      if (!valid.at(n, y, x)) continue;
      double m = scores.at(n, 0, y, x);
      for (int c = 1; c < C; ++c) m = std::max(m, scores.at(n, c, y, x));
      double sum = 0.0;
      for (int c = 0; c < C; ++c) sum += std::exp(scores.at(n, c, y, x) - m);
      const double lse = m + std::log(sum);
      acc += lse - scores.at(n, labels.at(n, y, x), y, x);
      ++cnt;
    }
    row_loss[r] = acc;
    row_count[r] = cnt;
  }
  double total = 0.0;
  long count = 0;
  for (long r = 0; r < rows; ++r) {
    total += row_loss[r];
    count += row_count[r];
  }
  if (count == 0) return 0.0;
  const double loss = total / static_cast<double>(count);

  if (dscores) {
    const double inv = 1.0 / static_cast<double>(count);
    #pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
      const int n = static_cast<int>(r / scores.h);
      const int y = static_cast<int>(r % scores.h);
      for (int x = 0; x < scores.w; ++x) {
        if (!valid.at(n, y, x)) continue;
        double m = scores.at(n, 0, y, x);
        for (int c = 1; c < C; ++c) m = std::max(m, scores.at(n, c, y, x));
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += std::exp(scores.at(n, c, y, x) - m);
        for (int c = 0; c < C; ++c) {
          const double p = std::exp(scores.at(n, c, y, x) - m) / sum;
          dscores->at(n, c, y, x) =
              (p - (labels.at(n, y, x) == c ? 1.0 : 0.0)) * inv;
        }
      }
    }
  }
  return loss;
}

double combine_scale_losses(const std::array<double, 5>& per_scale,
                            const std::array<double, 5>& weights) {
  double total = 0.0;
  for (int i = 0; i < 5; ++i) total += weights[i] * per_scale[i];
  return total;
}

MultiscaleLoss multiscale_loss(const PredictionPyramid& pyramid,
                               const LabelBatch& labels, const BoolBatch& valid,
                               const std::array<double, 5>& weights,
                               std::array<Tensor, 5>* dmaps) {
  MultiscaleLoss out;
  const int factors[5] = {16, 8, 4, 2, 1};
  for (int i = 0; i < 5; ++i) {
    const Tensor& map = pyramid.maps[i];
    if (map.h * factors[i] != labels.h || map.w * factors[i] != labels.w)
      throw std::invalid_argument("multiscale_loss: map " + std::to_string(i) +
                                  " disagrees with label resolution");
    const LabelBatch l = downsample_nearest(labels, factors[i]);
    const BoolBatch v = downsample_nearest(valid, factors[i]);
    Tensor* d = nullptr;
    if (dmaps) d = &(*dmaps)[i];
    out.per_scale[i] = pixel_ce_loss(map, l, v, d);
    if (d)
      for (double& g : d->data) g *= weights[i];
  }
  out.total = combine_scale_losses(out.per_scale, weights);
  return out;
}

double poly_lr(double base_lr, long iteration, long total_iterations, double power) {
  if (total_iterations <= 0)
    throw std::invalid_argument("poly_lr: total_iterations must be positive");
  if (iteration < 0 || iteration > total_iterations)
    throw std::invalid_argument("poly_lr: iteration outside [0, total]");
  return base_lr *
         std::pow(1.0 - static_cast<double>(iteration) / total_iterations, power);
}

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw std::invalid_argument("train: base_lr must be > 0");
  if (weight_decay < 0) throw std::invalid_argument("train: negative weight_decay");
  if (!(poly_power > 0)) throw std::invalid_argument("train: poly_power must be > 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (total_iterations < 0)
    throw std::invalid_argument("train: total_iterations must be set");
  if (checkpoint_every < 0) throw std::invalid_argument("train: bad checkpoint cadence");
}

namespace {

// Adam with decoupled weight decay applied at the scheduled learning rate.
class Adam {
 public:
  explicit Adam(const std::vector<Param>& params) {
    for (const Param& p : params) {
      m_.push_back(Tensor::zeros_like(p.value));
      v_.push_back(Tensor::zeros_like(p.value));
    }
  }

  void step(std::vector<Param>& params, double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& value = params[i].value;
      const Tensor& grad = params[i].grad;
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      #pragma omp parallel for schedule(static)
      for (long k = 0; k < static_cast<long>(value.size()); ++k) {
        const double g = grad.data[k];
        m.data[k] = kBeta1 * m.data[k] + (1.0 - kBeta1) * g;
        v.data[k] = kBeta2 * v.data[k] + (1.0 - kBeta2) * g * g;
        const double mhat = m.data[k] / bc1;
        const double vhat = v.data[k] / bc2;
        value.data[k] -= lr * mhat / (std::sqrt(vhat) + kEps);
        value.data[k] -= lr * weight_decay * value.data[k];
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

std::string fmt17(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

std::uint64_t fnv1a_update(std::uint64_t h, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) {
    h ^= (v >> (8 * b)) & 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

}  // namespace

TrainResult train(SegNet& model, const std::vector<Tile>& train_tiles,
                  const BsmConfig& bsm_cfg, const TrainConfig& tc,
                  const std::string& out_dir, const std::string& config_hash,
                  bool trace_enabled) {
  tc.validate();
  if (train_tiles.empty()) throw std::invalid_argument("train: empty training set");
  fs::create_directories(out_dir);

  TrainResult result;
  result.log_path = (fs::path(out_dir) / "train_log.tsv").string();
  result.checkpoint_path = (fs::path(out_dir) / "checkpoint_final.bsa").string();

  std::ofstream log(result.log_path);
  if (!log) throw std::runtime_error("train: cannot write " + result.log_path);
  std::ofstream trace;
  if (trace_enabled) {
    trace.open((fs::path(out_dir) / "augment_trace.log").string());
    if (!trace) throw std::runtime_error("train: cannot write augmentation trace");
  }

  BsmPipeline pipeline(bsm_cfg);
  Adam adam(model.params());

  const int n_tiles = static_cast<int>(train_tiles.size());
  const int batch = std::min<int>(tc.batch_size, n_tiles);
  Rng data_rng(derive_seed(tc.seed, 0xDA7AuLL));
  std::vector<int> order(n_tiles);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), data_rng);
  std::size_t cursor = 0;
  std::uint64_t order_hash = 1469598103934665603ULL;

  auto save_meta = [&](const std::string& path, long iteration) {
    save_checkpoint(path, model,
                    {{"iteration", std::to_string(iteration)},
                     {"config_hash", config_hash}});
  };

  for (long it = 0; it < tc.total_iterations; ++it) {
    std::vector<int> idx(batch);
    for (int k = 0; k < batch; ++k) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), data_rng);
        cursor = 0;
      }
      idx[k] = order[cursor++];
      order_hash = fnv1a_update(order_hash, static_cast<std::uint64_t>(idx[k]));
    }
    SampleBatch raw = make_batch(train_tiles, idx);

    Rng batch_rng(derive_seed(tc.seed, static_cast<std::uint64_t>(it) + 1));
    BatchTrace tr;
    tr.seed = derive_seed(tc.seed, static_cast<std::uint64_t>(it) + 1);
    SampleBatch aug = pipeline.apply(raw, batch_rng, &tr);
    if (trace_enabled) trace << tr.to_line(it) << '\n';

    const LabelBatch labels = labels_from_masks(aug.masks);
    PredictionPyramid pyr = model.forward_train(aug.images);
    std::array<Tensor, 5> dmaps;
    const MultiscaleLoss ml =
        multiscale_loss(pyr, labels, aug.valid, tc.loss_weights, &dmaps);

    if (!std::isfinite(ml.total)) {
      result.aborted = true;
      result.abort_reason = "non-finite loss at iteration " + std::to_string(it);
      log << "# aborted: " << result.abort_reason << '\n';
      save_meta(result.checkpoint_path, it);  // params predate the bad step
      result.data_order_hash = hex64(order_hash);
      return result;
    }

    model.backward(dmaps);
    const double lr = poly_lr(tc.base_lr, it, tc.total_iterations, tc.poly_power);
    adam.step(model.params(), lr, tc.weight_decay);

    result.losses.push_back(ml.total);
    log << it << '\t' << fmt17(ml.total) << '\t' << fmt17(lr) << '\n';

    if (tc.checkpoint_every > 0 && (it + 1) % tc.checkpoint_every == 0)
      save_meta((fs::path(out_dir) / ("checkpoint_iter" + std::to_string(it + 1) + ".bsa"))
                    .string(),
                it + 1);
  }

  save_meta(result.checkpoint_path, tc.total_iterations);
  result.data_order_hash = hex64(order_hash);
  return result;
}

}  // namespace bsm
