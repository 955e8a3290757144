#pragma once

#include "handgcn/gcn_net.hpp"
#include "handgcn/training.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace handgcn {

/// K×K counts indexed [true class][predicted class].
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = kNumClasses);

    std::size_t num_classes() const { return k_; }
    std::uint64_t operator()(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
    void add(std::size_t truth, std::size_t predicted);

    std::uint64_t total() const;
    std::uint64_t trace() const;
    std::uint64_t actual(std::size_t cls) const;    // row sum
    std::uint64_t predicted(std::size_t cls) const; // column sum

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

/// Throws LabelOutOfRange for entries >= k, DimensionMismatch for unequal lengths.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                 std::size_t k = kNumClasses);

struct ClassificationMetrics {
    double accuracy = 0.0;
    double precision = 0.0; // macro
    double recall = 0.0;    // macro
    double f1 = 0.0;        // macro
    std::vector<double> class_precision;
    std::vector<double> class_recall;
    std::vector<double> class_f1;
};

/// Accuracy = trace / total. Macro averages run over every class that occurs
/// as a true label or a prediction; a class with no predictions has precision 0,
/// one with no true samples has recall 0, and F1 is 0 when P + R = 0.
ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);

/// P(score of a random positive > score of a random negative) + ½ P(tie),
/// via average ranks. NaN when either group is empty.
double binary_auc(std::span<const double> scores, std::span<const bool> positive);

struct AucResult {
    double macro_auc = 0.0;
    double weighted_auc = 0.0;
    std::vector<double> class_auc;              // NaN for skipped classes
    std::vector<std::size_t> skipped_classes;   // no positives or no negatives
};

/// One-vs-rest AUC per column of `scores` (N×K). Macro = mean over non-skipped
/// classes; weighted = mean weighted by each class's positive count.
AucResult roc_auc_ovr(const Matrix& scores, std::span<const std::size_t> labels);

struct RocPoint {
    double fpr;
    double tpr;
};

/// ROC curve points for one class vs rest, one point per distinct threshold.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const bool> positive);

struct KFoldSplit {
    /// Held-out index sets.
    std::vector<std::vector<std::size_t>> folds;
    /// Samples of classes with fewer than k members; they train in every fold.
    std::vector<std::size_t> train_only;
    std::vector<std::size_t> rare_classes;

    std::vector<std::size_t> train_indices(std::size_t fold) const;
};

/// Shuffles each class (seeded) and deals its samples round-robin over the folds,
/// continuing the deal position from class to class so fold totals stay within one.
/// Throws TooFewSamples when there are fewer samples than folds.
KFoldSplit stratified_kfold(std::span<const std::size_t> labels, std::size_t k, std::uint64_t seed);

struct HoldoutSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> held_out;
};

/// Per class, holds out round(fraction·n) samples, always leaving at least one in train.
HoldoutSplit stratified_holdout(std::span<const std::size_t> labels, double fraction, std::uint64_t seed);

struct MetricsReport {
    std::string split; // "training" or "testing"
    std::size_t fold = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double macro_auc = 0.0;
    double weighted_auc = 0.0;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct SplitEvaluation {
    MetricsReport report;
    ConfusionMatrix confusion;
    AucResult auc;
    Matrix probabilities; // N×K
    std::vector<std::size_t> labels;
};

/// Inference-mode predictions and the full metric set for one split.
SplitEvaluation evaluate_split(std::span<const PoseGraph> graphs, const ModelParams& params,
                               const ModelConfig& config, std::string split, std::size_t fold);

struct FoldResult {
    std::size_t fold = 0;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    std::optional<SplitEvaluation> training;
    std::optional<SplitEvaluation> testing;
    std::size_t epochs = 0;
    std::size_t best_epoch = 0;
    double mean_epoch_seconds = 0.0;
    std::string error; // non-empty if this fold failed
};

struct CrossValidationResult {
    std::size_t k = 0;
    std::vector<std::size_t> rare_classes;
    std::vector<FoldResult> folds;
};

using FoldObserver = std::function<void(std::size_t fold, const EpochStats&)>;

/// For each fold: carve a stratified 20% early-stopping split out of the training
/// folds, fit, then score the whole training portion and the held-out fold in
/// inference mode. A failing fold records its error and the remaining folds still run.
CrossValidationResult cross_validate(std::span<const PoseGraph> dataset, const TrainConfig& cfg,
                                     std::size_t k = 5, const FoldObserver& observer = {});

/// Comma-separated table: fold,split,accuracy,precision,recall,f1,macro_auc,weighted_auc.
std::string metrics_csv(std::span<const MetricsReport> reports);

/// Structured report of a cross-validation run (metrics, confusion matrices, class map).
std::string cross_validation_report(const CrossValidationResult& result, std::span<const std::string> class_names);

/// Structured report of one evaluated split, including per-class ROC points.
std::string evaluation_report(const SplitEvaluation& eval, std::span<const std::string> class_names);

} // namespace handgcn
