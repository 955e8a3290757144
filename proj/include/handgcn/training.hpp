#pragma once

#include "handgcn/gcn_net.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace handgcn {

inline constexpr int kCheckpointVersion = 1;

struct TrainConfig {
    double learning_rate = 3e-4;
    std::size_t batch_size = 64;
    double dropout_p = 0.4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double leaky_alpha = 0.2;
    std::size_t patience = 15;
    std::size_t max_epochs = 500;
    std::uint64_t seed = 0;
    std::size_t hidden_dim = 128;
    double desired_distance = 1.0;
    /// AdamW-style decay applied to the weights instead of added to the gradient.
    bool decoupled_weight_decay = false;
    /// A validation loss counts as an improvement only if it beats the best by this much.
    double min_improvement = 1e-6;

    void validate() const;
    ModelConfig model_config() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::uint64_t step = 0;

    /// Zero moments shaped like the trainable tensors of `params`.
    static AdamState for_params(const ModelParams& params);
};

/// One Adam update of a single tensor at (already incremented) step t >= 1.
///   coupled:   g' = g + wd·θ
///   decoupled: θ ← θ - lr·wd·θ, g' = g
///   m ← β1·m + (1-β1)·g',  v ← β2·v + (1-β2)·g'²
///   θ ← θ - lr · (m / (1-β1ᵗ)) / (sqrt(v / (1-β2ᵗ)) + ε)
void adam_update(Matrix& theta, const Matrix& grad, Matrix& m, Matrix& v, std::uint64_t t,
                 const TrainConfig& cfg);

/// Increments the step counter and updates every trainable tensor.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainConfig& cfg);

/// Patience-based stop rule on a loss that should decrease.
class EarlyStopping {
public:
    EarlyStopping(std::size_t patience, double min_improvement);

    /// Records one epoch's loss; returns true if it is a new best.
    bool update(double loss);
    bool should_stop() const { return stale_epochs_ >= patience_; }
    double best() const { return best_; }
    std::size_t stale_epochs() const { return stale_epochs_; }

private:
    std::size_t patience_;
    double min_improvement_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t stale_epochs_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct Checkpoint {
    int format_version = kCheckpointVersion;
    ModelConfig model;
    ModelParams params;
    TrainConfig train;
    std::size_t best_epoch = 0; // 1-based; 0 when untrained
    std::vector<EpochRecord> history;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double seconds = 0.0;
    bool improved = false;
};

using EpochObserver = std::function<void(const EpochStats&)>;

/// Trains from a Xavier initialization seeded by cfg.seed. Each epoch shuffles the
/// training set with a stream derived from (seed, epoch), runs mini-batch
/// forward/backward/Adam, then scores the validation set in inference mode.
/// Stops after `patience` epochs without improvement or at max_epochs and returns
/// the weights of the best validation epoch.
/// Throws EmptyDataset or NonFiniteLoss.
Checkpoint fit(std::span<const PoseGraph> train_set, std::span<const PoseGraph> val_set,
               const TrainConfig& cfg, const EpochObserver& observer = {});

/// Mean NLL of `graphs` in inference mode.
double evaluate_loss(std::span<const PoseGraph> graphs, const ModelParams& params, const ModelConfig& config);

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CorruptFile (with byte offset when known) or VersionMismatch.
Checkpoint parse_checkpoint(std::string_view text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Lossless hexadecimal text form of a double ("0x1.8p+1", "-0x1p-3", "0x0p+0").
std::string encode_hex_double(double value);
/// Inverse of encode_hex_double; throws CorruptFile on malformed text.
double decode_hex_double(std::string_view text);

} // namespace handgcn
