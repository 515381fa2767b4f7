#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stnlab/affine_pose.hpp"
#include "stnlab/datagen.hpp"
#include "stnlab/network.hpp"

namespace stnlab {

struct TrainStage {
  std::size_t iterations = 0;
  double lr_factor = 1.0;  // multiplies the base learning rate
};

struct TrainConfig {
  ArchitectureSpec spec;
  std::uint64_t seed = 0;
  std::size_t batch_size = 64;
  std::vector<TrainStage> stages{{3000, 1.0}, {1000, 0.1}};
  double learning_rate = 0.02;
  double loc_multiplier = 1.0;  // applies to non-shared localization parameters
  double momentum = 0.0;
  bool nesterov = false;
  double l2 = 0.0;
  Variant variant = Variant::R;
  std::size_t train_subset = 10000;
  std::size_t log_every = 100;
  bool freeze_localization = false;  // keep every ST at its identity initialization

  std::size_t total_iterations() const;
};

/// Base learning rate used for a dataset variant: 0.01 on (T), 0.02 otherwise.
double default_learning_rate(Variant v);

/// Validates counts and rates; throws ValidationError.
void validate(const TrainConfig& cfg);

struct LogEntry {
  std::size_t step = 0;  // last step of the logged window (1-based)
  double loss = 0;       // mean loss over the window
  double lr = 0;
};

struct TrainResult {
  std::unique_ptr<Network<float>> net;
  Normalization normalization;
  std::vector<LogEntry> log;
};

using StepCallback = std::function<void(const LogEntry&)>;

/// Statistics of one perturbed pass over the training images.
Normalization training_normalization(const LabeledImageSet& plain_train, Variant v, std::uint64_t seed);

/// Trains from the plain training images, drawing fresh perturbations for
/// every step. Throws DivergenceError when the loss stops being finite.
TrainResult train(const TrainConfig& cfg, const LabeledImageSet& plain_train,
                  const StepCallback& on_log = {});

/// Test images perturbed `transforms` times each with a fixed seed and
/// normalized with the training statistics.
LabeledImageSet make_eval_set(const LabeledImageSet& plain_test, Variant v, std::uint64_t seed,
                              std::size_t transforms, const Normalization& norm);

inline constexpr std::uint64_t kDefaultEvalSeed = 20200101;

struct BatchOutput {
  Tensor<float> logits;                      // N x K
  std::optional<std::vector<AffineTransform>> theta;  // GridSpace matrix per sample
};

/// Anything that classifies a batch; receives the labels so harness checks
/// can plug in oracle stubs.
using BatchPredictor = std::function<BatchOutput(const Tensor<float>& images, std::span<const std::uint8_t> labels)>;

struct EvalOptions {
  std::size_t batch_size = 250;
  double pixel_scale = 1.0;  // m for translation compensation
};

struct EvalReport {
  std::size_t samples = 0;
  double error_pct = 0;
  std::vector<PoseRecord> records;  // empty without an ST
  std::optional<PoseSummary> pose;
  double mean_det = 0;
  std::vector<std::array<double, 2>> heatmap;  // (theta, -theta') per sample
  std::optional<LineFit> heatmap_fit;
  std::size_t degenerate = 0;  // reflections / undetermined angles
};

PoseKind pose_kind_for(Variant v);

EvalReport evaluate(const BatchPredictor& predictor, const LabeledImageSet& eval_set,
                    const EvalOptions& opt = {});

/// Evaluates the first ST of `net` (if any) with its effective pixel scale.
EvalReport evaluate(const Network<float>& net, const LabeledImageSet& eval_set, std::size_t batch_size = 250);

/// Index of the median run by pose spread (the 5th best of 10).
std::size_t median_model_index(const std::vector<double>& pose_spread);

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
  std::unique_ptr<Network<float>> net;
  Normalization normalization;
  Variant variant = Variant::Plain;
};

std::vector<std::uint8_t> encode_checkpoint(const Network<float>& net, const Normalization& norm, Variant v);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                             const ArchitectureSpec* expected = nullptr);
void checkpoint_save(const Network<float>& net, const Normalization& norm, Variant v,
                     const std::filesystem::path& path);
/// With `expected`, a checkpoint written for another spec is rejected.
Checkpoint checkpoint_load(const std::filesystem::path& path, const ArchitectureSpec* expected = nullptr);

}  // namespace stnlab
