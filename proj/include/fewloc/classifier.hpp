#pragma once

#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "fewloc/descriptors.hpp"
#include "fewloc/kernels.hpp"
#include "fewloc/partition_tree.hpp"

namespace fewloc {

struct ClassifierConfig {
  uint32_t dim = 32;          // descriptor dimension D
  uint32_t hidden = 64;       // base head hidden width
  uint32_t classes = 64;      // m, classes per level
  uint32_t levels = 2;        // n, tree depth
  uint32_t hyper_hidden = 0;  // 0 -> defaults to dim
  double ln_eps = 1e-5;

  uint32_t hyper_width() const { return hyper_hidden == 0 ? dim : hyper_hidden; }
  bool operator==(const ClassifierConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;  // 1 for vectors
  std::size_t size() const { return rows * cols; }
};

// All per-level classifier and hyper-network weights, stored as one flat
// f64 vector so the optimizers and the meta-learner treat parameters as a
// plain vector space. Per level: a base head D->hidden->classes (affine,
// layer norm, relu, affine). Levels >= 2 add two hyper networks mapping the
// concatenated previous-level class distributions to the modulation
// coefficients gamma and beta; gamma is emitted as 1 + network output so a
// zero-initialized hyper net starts as the identity modulation.
class ClassifierParams {
 public:
  ClassifierParams(const ClassifierConfig& cfg, uint64_t seed);

  const ClassifierConfig& config() const { return cfg_; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  double* tensor(std::size_t index) { return data_.data() + tensors_[index].offset; }
  const double* tensor(std::size_t index) const {
    return data_.data() + tensors_[index].offset;
  }
  // Index into tensors() by name; throws DataError when missing.
  std::size_t tensor_index(const std::string& name) const;

 private:
  ClassifierConfig cfg_;
  std::vector<TensorInfo> tensors_;
  std::vector<double> data_;

  void build_layout();
};

// Per-sample, per-level probability vectors, each summing to 1.
struct LevelProbs {
  uint32_t classes = 0;
  uint32_t levels = 0;
  std::size_t samples = 0;
  std::vector<double> data;  // samples x levels x classes

  const double* probs(std::size_t sample, uint32_t level) const {
    return data.data() + (sample * levels + level) * classes;
  }
  double* probs(std::size_t sample, uint32_t level) {
    return data.data() + (sample * levels + level) * classes;
  }
};

// Elementwise F_out = gamma * F_in + beta.
inline void modulate(const double* f, const double* gamma, const double* beta,
                     double* out, std::size_t n) {
  kernels::active().modulate(f, gamma, beta, out, n);
}

// Hierarchical forward pass. Level 1 applies the base head to the raw
// descriptor; deeper levels modulate the descriptor with hyper-net
// coefficients computed from previous-level distributions — ground-truth
// one-hot rows when teacher labels are given, the predicted distributions
// otherwise.
LevelProbs forward(const ClassifierParams& params, const DescriptorMap& desc,
                   const std::vector<RegionLabel>* teacher_labels = nullptr);

// argmax per level (ties to the lowest index) composed into a RegionLabel.
RegionLabel compose_label(const LevelProbs& probs, std::size_t sample);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as ClassifierParams::data()
};

// Teacher-forced cross-entropy over all levels: mean over samples of the
// per-level loss sum, with exact backpropagation. level_mask restricts the
// loss to a subset of levels (used by branch-parallel training and the
// cross-gradient tests); null means all levels.
LossGrad loss_and_grad(const ClassifierParams& params,
                       const DescriptorMap& desc,
                       const std::vector<RegionLabel>& labels,
                       const std::vector<uint32_t>* level_mask = nullptr);

struct LabeledView {
  DescriptorMap desc;
  std::vector<RegionLabel> labels;
};

struct TrainConfig {
  uint32_t iterations = 1000;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint32_t log_every = 25;  // accuracy evaluation interval; 0 disables
};

struct TrainLogRow {
  uint32_t iteration = 0;
  double loss = 0.0;
  // Self-predicted (inference-mode) accuracies; empty between eval points.
  std::vector<double> level_accuracy;
  double composite_accuracy = -1.0;  // -1 when not evaluated this row
};

// Adam fast memorization: one view's samples per step, views cycled in
// order. Deterministic given data order. Throws NumericalError when the
// loss turns non-finite.
ClassifierParams train_fast(ClassifierParams params,
                            const std::vector<LabeledView>& data,
                            const TrainConfig& cfg,
                            std::vector<TrainLogRow>* log = nullptr);

struct MetaConfig {
  uint32_t tasks = 3;
  uint32_t inner_steps = 2;    // k
  double inner_lr = 5e-4;      // plain SGD rate for the inner loop
  double outer_step = 5e-4;    // epsilon
  uint32_t iterations = 1000;  // meta-iteration budget
};

// Reptile: sample a task, run k SGD steps from the current parameters, and
// move the parameters toward the adapted copy by outer_step times the
// parameter difference.
ClassifierParams reptile_pretrain(ClassifierParams params,
                                  const std::vector<std::vector<LabeledView>>& tasks,
                                  const MetaConfig& cfg, uint64_t seed);

// Self-predicted accuracy over a dataset: per-level argmax agreement and
// full composite agreement.
struct AccuracyReport {
  std::vector<double> level_accuracy;
  double composite_accuracy = 0.0;
  std::size_t samples = 0;
};
AccuracyReport evaluate_accuracy(const ClassifierParams& params,
                                 const std::vector<LabeledView>& data);

// Checkpoint: magic "SRCC", version, config, then the raw little-endian f64
// parameter vector in declared tensor order. A JSON metadata sidecar
// (<path>.json) records seeds and config.
void save_checkpoint(const std::string& path, const ClassifierParams& params,
                     const nlohmann::json& metadata);
ClassifierParams load_checkpoint(const std::string& path,
                                 nlohmann::json* metadata = nullptr);

}  // namespace fewloc
