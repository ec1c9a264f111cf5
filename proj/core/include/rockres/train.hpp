#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rockres/backbone.hpp"
#include "rockres/dataset.hpp"

namespace rockres {

struct TrainConfig {
  double lr = 1e-4;
  int epochs = 10;
  std::int64_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  /// Fail fast on the first non-finite op output or loss.
  bool check_numerics = false;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Adam with bias correction. State is keyed by parameter name.
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedTensor<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  /// Applies one update from the accumulated gradients. Parameters without a
  /// gradient are treated as having gradient zero.
  void step();
  void zero_grad();

  std::int64_t step_count() const noexcept { return step_; }
  void set_step_count(std::int64_t s) noexcept { step_ = s; }
  const std::vector<NamedTensor<T>>& params() const noexcept { return params_; }
  std::vector<NDArray<T>>& first_moments() noexcept { return m_; }
  std::vector<NDArray<T>>& second_moments() noexcept { return v_; }
  const std::vector<NDArray<T>>& first_moments() const noexcept { return m_; }
  const std::vector<NDArray<T>>& second_moments() const noexcept { return v_; }

 private:
  std::vector<NamedTensor<T>> params_;
  std::vector<NDArray<T>> m_;
  std::vector<NDArray<T>> v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

struct MetricsRecord {
  int epoch = 0;
  Split split = Split::train;
  double loss = 0.0;  // mean per-sample cross entropy
  double top1_accuracy = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline constexpr const char* kMetricsHeader = "epoch,split,loss,top1_accuracy";
std::string to_csv_row(const MetricsRecord& r);
std::string metrics_csv(std::span<const MetricsRecord> records);

/// Number of rows whose argmax equals the label; ties go to the smallest index.
template <typename T>
std::int64_t top1_correct(const NDArray<T>& logits, std::span<const std::int32_t> labels);
template <typename T>
double top1_accuracy(const NDArray<T>& logits, std::span<const std::int32_t> labels);

/// Per-row -log softmax(logits)[label], evaluated in double precision.
template <typename T>
std::vector<double> per_sample_loss(const NDArray<T>& logits, std::span<const std::int32_t> labels);

struct NamedArray {
  std::string name;
  NDArray<float> value;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

/// Binary layout: "RKCP", u32 version, then three tensor sections
/// (parameters, optimizer state, buffers and standardization constants), each
/// u32 count followed by tensors encoded as u16 name length, name, u8 ndim,
/// ndim x u32 dims, little-endian f32 payload; finally u32 length and the
/// resolved configuration text.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<NamedArray> params;
  std::vector<NamedArray> optimizer;
  std::vector<NamedArray> state;
  std::string config_text;

  std::vector<std::uint8_t> serialize() const;
  /// Malformed content throws ConfigError.
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Throws ConfigError when absent.
  const NDArray<float>& find_state(const std::string& name) const;
  ChannelStats channel_stats() const;
  ModelConfig model_config() const;
  TrainConfig train_config() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint make_checkpoint(Network<float>& model, const Adam<float>* optimizer,
                           const ChannelStats& stats, const TrainConfig& train_config);

/// Copies parameters and buffers into `model`. Throws ConfigError when the
/// checkpoint was written for a different model configuration.
void load_into(Network<float>& model, const Checkpoint& ckpt);
/// Restores the optimizer moments and step count.
void load_optimizer(Adam<float>& optimizer, const Checkpoint& ckpt);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRecord> metrics;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

/// Adam updates on every train batch. After each epoch a train record (mean
/// loss and accuracy over that epoch's batches, train mode) and a test record
/// (eval mode) are appended. Batch order is keyed by (config.seed, data_seed).
TrainResult train(Network<float>& model, const Dataset& data, const TrainConfig& config,
                  std::uint64_t data_seed = 0, const EpochCallback& on_record = {});

/// Eval-mode pass over `split` in index order.
MetricsRecord evaluate_split(Network<float>& model, const DatasetIndex& split,
                             const ChannelStats& stats, std::int64_t batch_size = 32,
                             int epoch = 0);
/// Loads `ckpt` into `model`, then evaluates with its stored constants.
MetricsRecord evaluate(Network<float>& model, const Checkpoint& ckpt, const DatasetIndex& split,
                       std::int64_t batch_size = 32);

/// Order-sensitive digest of every epoch's batch plan.
std::uint64_t data_order_hash(std::size_t train_size, const TrainConfig& config,
                              std::uint64_t data_seed);

struct GridEntry {
  std::string config_id;
  ModelConfig model;
  /// Empty selects the primary dataset; otherwise a named variant supplied
  /// by the dataset provider (for example "augmented").
  std::string data_variant;
};

/// Named grids: table1 (raw vs augmented data), table2 (kernel modification
/// ladder), table3 (attention layouts), full (ladder x layouts).
std::vector<GridEntry> ablation_preset(const std::string& name, const ModelConfig& base);
std::vector<std::string> ablation_preset_names();

struct AblationRow {
  GridEntry entry;
  double test_accuracy = 0.0;
  std::int64_t param_count = 0;
  double wall_seconds = 0.0;
  std::uint64_t data_order = 0;
  std::string error;  // non-empty when the row failed
};

inline constexpr const char* kAblationHeader =
    "config_id,bot_blocks,irc,kernel_mod,test_accuracy,param_count,wall_seconds";
std::string ablation_csv(std::span<const AblationRow> rows);
/// Seeds, data-order digests and failures of every row.
std::string ablation_manifest(std::span<const AblationRow> rows, const TrainConfig& config,
                              std::uint64_t data_seed);

using DatasetProvider = std::function<const Dataset&(const std::string& variant)>;
using RowCallback = std::function<void(const AblationRow&)>;

/// Trains every entry with the same train config and data seed. A failing
/// row is recorded with its error and the grid continues.
std::vector<AblationRow> run_ablation(std::span<const GridEntry> grid,
                                      const DatasetProvider& datasets, const TrainConfig& config,
                                      std::uint64_t data_seed = 0,
                                      const RowCallback& on_row = {});

}  // namespace rockres
