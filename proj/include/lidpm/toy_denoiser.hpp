#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lidpm/denoiser.hpp"

namespace lidpm {

// Where normalisation statistics of the first hidden layer are pooled.
enum class NormMode {
  PerBatch,     // over every point of every query in the forward call
  PerInstance,  // over the points of each query separately
};

std::string to_string(NormMode mode);
NormMode norm_mode_from_string(const std::string& name);

struct ToyDenoiserConfig {
  std::vector<int> hidden{64, 64};
  NormMode norm_mode = NormMode::PerInstance;
  int time_frequencies = 16;
  // Coordinates (and condition statistics) are divided by this before entering the network.
  double coord_scale = 1.0;
};

// How training targets are noised.
enum class Objective {
  Global,  // x_t = sqrt(ab) x0 + sqrt(1 - ab) eps
  Local,   // p_t = p0 + sqrt(1 - ab) eps, offsets around the ground truth
};

struct TrainItem {
  std::span<const Vec3> x0;
  std::optional<std::span<const Vec3>> condition;
};

enum class Optimizer { Sgd, Adam };

struct TrainOptions {
  double learning_rate = 0.01;
  Optimizer optimizer = Optimizer::Sgd;
  // Probability that an item keeps its condition; otherwise it is trained with
  // the all-zero condition.
  double condition_probability = 0.1;
  Objective objective = Objective::Global;
  // Weight of the mean/std regulariser on predicted noise (0 disables it).
  double reg_weight = 0.0;
};

/// Noised training batch: inputs, targets and sampled steps, fixed once drawn.
struct PreparedBatch {
  std::vector<Points> noisy;
  std::vector<Points> targets;
  std::vector<double> steps;
  std::vector<std::optional<std::span<const Vec3>>> conditions;

  std::size_t size() const noexcept { return noisy.size(); }
  std::vector<DenoiserQuery> queries() const;
};

// Draws t ~ U{1..T}, the condition-drop coin and eps ~ N(0, I) for every item.
PreparedBatch prepare_batch(std::span<const TrainItem> batch, const NoiseSchedule& sched,
                            std::uint64_t seed, const TrainOptions& opts);

struct LossReport {
  double loss = 0.0;       // mean over items of (denoise + reg_weight * reg)
  double denoise = 0.0;    // mean squared error per point, averaged over items
  double reg = 0.0;        // mean regulariser value over items
  std::vector<double> item_losses;
};

// Loss of an arbitrary denoiser on a prepared batch (no parameter update).
LossReport evaluate_loss(const Denoiser& d, const PreparedBatch& batch, double reg_weight);

/// Small pointwise network standing in for the sparse-convolution backbone.
///
/// Input per point: coordinates, a sinusoidal embedding of t, and a summary of
/// the condition cloud (mean and per-axis variance, zeros for the all-zero
/// condition). The first hidden layer is normalised (per batch or per
/// instance) with a learned affine; deeper layers also see the raw input.
class ToyDenoiser final : public Denoiser {
 public:
  ToyDenoiser(ToyDenoiserConfig config, NoiseSchedule schedule, std::uint64_t init_seed);

  Points predict_noise(const DenoiserQuery& q) const override;
  const NoiseSchedule& schedule() const override { return schedule_; }

  // Joint forward pass; with PerBatch statistics queries influence each other.
  std::vector<Points> predict_batch(std::span<const DenoiserQuery> queries) const;

  // Loss on a prepared batch and, when grad is non-null, its gradient with
  // respect to every parameter.
  LossReport loss_and_gradient(const PreparedBatch& batch, double reg_weight,
                               std::vector<double>* grad) const;

  // Draws a batch, evaluates the loss, applies one gradient-descent step and
  // returns the pre-update loss. Throws NumericalError on a non-finite loss.
  LossReport train_step(std::span<const TrainItem> batch, std::uint64_t seed,
                        const TrainOptions& opts);

  const ToyDenoiserConfig& config() const noexcept { return config_; }
  std::size_t input_dim() const noexcept { return input_dim_; }

  std::vector<double>& parameters() noexcept { return params_; }
  const std::vector<double>& parameters() const noexcept { return params_; }

  // Named parameter blocks in storage order, used for serialisation.
  struct Block {
    std::string name;
    int rows;
    int cols;
    std::size_t offset;
  };
  const std::vector<Block>& blocks() const noexcept { return blocks_; }

  // Rounds every parameter to the nearest float32 value.
  void snap_to_float32();

  // Flat little-endian float32 parameters plus a JSON sidecar (<path>.json).
  void save(const std::filesystem::path& path) const;
  static ToyDenoiser load(const std::filesystem::path& path);

 private:
  struct Forward;

  void build_layout();
  Eigen::MatrixXd features(std::span<const Vec3> pts, double t,
                           const Eigen::VectorXd& cond_summary) const;
  Eigen::VectorXd condition_summary(const std::optional<std::span<const Vec3>>& cond) const;

  ToyDenoiserConfig config_;
  NoiseSchedule schedule_;
  std::size_t input_dim_ = 0;
  std::vector<Block> blocks_;
  std::vector<double> params_;
  // Adam moments, sized lazily on the first Adam step.
  std::vector<double> adam_m_;
  std::vector<double> adam_v_;
  long adam_steps_ = 0;
};

struct GradientCheckOptions {
  double eps = 1e-5;
  int num_params = 20;
  std::uint64_t seed = 0;
  double reg_weight = 0.0;
  // Parameter indices that are always checked in addition to the random draw.
  std::vector<std::size_t> always_check;
  // Applied to the analytic gradient before comparison (negative controls).
  std::function<void(std::vector<double>&)> corrupt_gradient;
};

struct GradientCheckReport {
  double max_rel_error = 0.0;
  std::vector<std::size_t> checked;
};

// Compares analytic gradients with central finite differences on randomly
// chosen parameters. eps must lie in [1e-6, 1e-3].
GradientCheckReport gradient_check(const ToyDenoiser& model, const PreparedBatch& probe,
                                   const GradientCheckOptions& opts);

// Convenience form: one query with seeded standard-normal targets.
GradientCheckReport gradient_check(const ToyDenoiser& model, const DenoiserQuery& probe,
                                   const GradientCheckOptions& opts);

}  // namespace lidpm
