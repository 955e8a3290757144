#include "handgcn/evaluation.hpp"

#include "handgcn/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

namespace handgcn {

namespace {

using nlohmann::json;

constexpr std::uint64_t kFoldStream = 0x666f6c64;  // "fold"
constexpr std::uint64_t kInnerStream = 0x696e6e72; // "innr"
constexpr std::uint64_t kSplitStream = 0x73706c74; // "splt"

std::map<std::size_t, std::vector<std::size_t>> group_by_class(std::span<const std::size_t> labels) {
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
    return groups;
}

template <typename T>
std::vector<T> gather(std::span<const T> items, std::span<const std::size_t> idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(items[i]);
    return out;
}

json metrics_json(const MetricsReport& r) {
    return {{"split", r.split},         {"fold", r.fold},       {"accuracy", r.accuracy},
            {"precision", r.precision}, {"recall", r.recall},   {"f1", r.f1},
            {"macro_auc", r.macro_auc}, {"weighted_auc", r.weighted_auc}};
}

json confusion_json(const ConfusionMatrix& cm) {
    json rows = json::array();
    for (std::size_t t = 0; t < cm.num_classes(); ++t) {
        json row = json::array();
        for (std::size_t p = 0; p < cm.num_classes(); ++p) row.push_back(cm(t, p));
        rows.push_back(std::move(row));
    }
    return rows;
}

json split_json(const SplitEvaluation& e) {
    json auc = json::array();
    for (double v : e.auc.class_auc) auc.push_back(std::isnan(v) ? json(nullptr) : json(v));
    return {{"metrics", metrics_json(e.report)},
            {"samples", e.labels.size()},
            {"confusion_matrix", confusion_json(e.confusion)},
            {"class_auc", std::move(auc)},
            {"auc_skipped_classes", e.auc.skipped_classes}};
}

json class_map_json(std::span<const std::string> names) {
    json m = json::array();
    for (std::size_t i = 0; i < names.size(); ++i) m.push_back({{"index", i}, {"name", names[i]}});
    return m;
}

} // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
    if (truth >= k_ || predicted >= k_)
        throw LabelOutOfRange("confusion matrix: class index out of range [0, " + std::to_string(k_) + ")");
    ++counts_[truth * k_ + predicted];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) t += (*this)(i, i);
    return t;
}

std::uint64_t ConfusionMatrix::actual(std::size_t cls) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < k_; ++p) s += (*this)(cls, p);
    return s;
}

std::uint64_t ConfusionMatrix::predicted(std::size_t cls) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < k_; ++t) s += (*this)(t, cls);
    return s;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                 std::size_t k) {
    if (predictions.size() != labels.size())
        throw DimensionMismatch("confusion_matrix: predictions and labels differ in length");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predictions[i]);
    return cm;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
    const std::size_t k = cm.num_classes();
    ClassificationMetrics m;
    m.class_precision.assign(k, 0.0);
    m.class_recall.assign(k, 0.0);
    m.class_f1.assign(k, 0.0);
    const std::uint64_t total = cm.total();
    if (total == 0) return m;
    m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);

    std::size_t active = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const auto tp = static_cast<double>(cm(c, c));
        const std::uint64_t actual = cm.actual(c), predicted = cm.predicted(c);
        if (actual == 0 && predicted == 0) continue;
        ++active;
        const double p = predicted ? tp / static_cast<double>(predicted) : 0.0;
        const double r = actual ? tp / static_cast<double>(actual) : 0.0;
        const double f = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        m.class_precision[c] = p;
        m.class_recall[c] = r;
        m.class_f1[c] = f;
        m.precision += p;
        m.recall += r;
        m.f1 += f;
    }
    m.precision /= static_cast<double>(active);
    m.recall /= static_cast<double>(active);
    m.f1 /= static_cast<double>(active);
    return m;
}

double binary_auc(std::span<const double> scores, std::span<const bool> positive) {
    if (scores.size() != positive.size()) throw DimensionMismatch("binary_auc: length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        // ranks i+1 .. j share their average
        const double mid_rank = static_cast<double>(i + 1 + j) / 2.0;
        for (std::size_t t = i; t < j; ++t) {
            if (positive[order[t]]) {
                rank_sum += mid_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
    const double np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

AucResult roc_auc_ovr(const Matrix& scores, std::span<const std::size_t> labels) {
    if (scores.rows() != labels.size()) throw DimensionMismatch("roc_auc_ovr: score rows differ from labels");
    const std::size_t k = scores.cols();
    AucResult res;
    res.class_auc.assign(k, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> column(labels.size());
    std::unique_ptr<bool[]> flags(new bool[labels.size()]);
    double macro_sum = 0.0, weighted_sum = 0.0, weight_total = 0.0;
    std::size_t valid = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t support = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= k) throw LabelOutOfRange("roc_auc_ovr: label out of range");
            column[i] = scores(i, c);
            flags[i] = labels[i] == c;
            support += labels[i] == c;
        }
        const double auc = binary_auc(column, std::span<const bool>(flags.get(), labels.size()));
        if (std::isnan(auc)) {
            res.skipped_classes.push_back(c);
            continue;
        }
        res.class_auc[c] = auc;
        macro_sum += auc;
        weighted_sum += auc * static_cast<double>(support);
        weight_total += static_cast<double>(support);
        ++valid;
    }
    if (valid == 0) {
        res.macro_auc = res.weighted_auc = std::numeric_limits<double>::quiet_NaN();
    } else {
        res.macro_auc = macro_sum / static_cast<double>(valid);
        res.weighted_auc = weighted_sum / weight_total;
    }
    return res;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const bool> positive) {
    if (scores.size() != positive.size()) throw DimensionMismatch("roc_curve: length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
    const double n_neg = static_cast<double>(n) - n_pos;
    std::vector<RocPoint> pts{{0.0, 0.0}};
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            (positive[order[j]] ? tp : fp) += 1.0;
            ++j;
        }
        pts.push_back({n_neg > 0 ? fp / n_neg : 0.0, n_pos > 0 ? tp / n_pos : 0.0});
        i = j;
    }
    return pts;
}

std::vector<std::size_t> KFoldSplit::train_indices(std::size_t fold) const {
    std::vector<std::size_t> idx = train_only;
    for (std::size_t f = 0; f < folds.size(); ++f)
        if (f != fold) idx.insert(idx.end(), folds[f].begin(), folds[f].end());
    std::sort(idx.begin(), idx.end());
    return idx;
}

KFoldSplit stratified_kfold(std::span<const std::size_t> labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw TooFewSamples("stratified_kfold: k must be at least 2");
    if (labels.size() < k)
        throw TooFewSamples("stratified_kfold: " + std::to_string(labels.size()) + " samples cannot fill " +
                            std::to_string(k) + " folds");
    KFoldSplit split;
    split.folds.resize(k);
    RngStream rng(seed);
    std::size_t next = 0;
    for (auto& [cls, members] : group_by_class(labels)) {
        rng.shuffle(members);
        if (members.size() < k) {
            split.rare_classes.push_back(cls);
            split.train_only.insert(split.train_only.end(), members.begin(), members.end());
            continue;
        }
        for (std::size_t idx : members) {
            split.folds[next].push_back(idx);
            next = (next + 1) % k;
        }
    }
    for (auto& f : split.folds) std::sort(f.begin(), f.end());
    std::sort(split.train_only.begin(), split.train_only.end());
    return split;
}

HoldoutSplit stratified_holdout(std::span<const std::size_t> labels, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw DataError("holdout fraction must be in [0, 1)");
    HoldoutSplit split;
    RngStream rng(seed);
    for (auto& [cls, members] : group_by_class(labels)) {
        rng.shuffle(members);
        std::size_t n_out = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
        n_out = std::min(n_out, members.size() - 1);
        split.held_out.insert(split.held_out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_out));
        split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_out), members.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.held_out.begin(), split.held_out.end());
    return split;
}

SplitEvaluation evaluate_split(std::span<const PoseGraph> graphs, const ModelParams& params,
                               const ModelConfig& config, std::string split, std::size_t fold) {
    if (graphs.empty()) throw EmptyDataset("evaluate_split: no samples in '" + split + "'");
    const Matrix logp = predict_log_probs(graphs, params, config);
    SplitEvaluation e{{}, ConfusionMatrix(config.num_classes), {}, Matrix(logp.rows(), logp.cols()), {}};
    std::vector<std::size_t> predictions;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        e.labels.push_back(graphs[i].label);
        const auto row = logp.row(i);
        predictions.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
        for (std::size_t c = 0; c < row.size(); ++c) e.probabilities(i, c) = std::exp(row[c]);
    }
    e.confusion = confusion_matrix(predictions, e.labels, config.num_classes);
    const ClassificationMetrics cm = classification_metrics(e.confusion);
    e.auc = roc_auc_ovr(e.probabilities, e.labels);
    e.report = {std::move(split), fold, cm.accuracy, cm.precision, cm.recall, cm.f1, e.auc.macro_auc, e.auc.weighted_auc};
    return e;
}

CrossValidationResult cross_validate(std::span<const PoseGraph> dataset, const TrainConfig& cfg, std::size_t k,
                                     const FoldObserver& observer) {
    if (dataset.empty()) throw EmptyDataset("cross_validate: empty dataset");
    cfg.validate();
    std::vector<std::size_t> labels;
    for (const auto& g : dataset) labels.push_back(g.label);

    const KFoldSplit split = stratified_kfold(labels, k, derive_seed(cfg.seed, kSplitStream));
    CrossValidationResult result;
    result.k = k;
    result.rare_classes = split.rare_classes;

    for (std::size_t f = 0; f < k; ++f) {
        FoldResult fr;
        fr.fold = f;
        try {
            const auto pool_idx = split.train_indices(f);
            const auto pool = gather(dataset, std::span<const std::size_t>(pool_idx));
            const auto test = gather(dataset, std::span<const std::size_t>(split.folds[f]));
            fr.train_size = pool.size();
            fr.test_size = test.size();

            std::vector<std::size_t> pool_labels;
            for (const auto& g : pool) pool_labels.push_back(g.label);
            const HoldoutSplit inner = stratified_holdout(pool_labels, 0.2, derive_seed(cfg.seed, kInnerStream, f));
            const auto fit_train = gather(std::span<const PoseGraph>(pool), std::span<const std::size_t>(inner.train));
            const auto fit_val = gather(std::span<const PoseGraph>(pool), std::span<const std::size_t>(inner.held_out));

            TrainConfig fold_cfg = cfg;
            fold_cfg.seed = derive_seed(cfg.seed, kFoldStream, f);
            double seconds = 0.0;
            const Checkpoint ckpt = fit(fit_train, fit_val, fold_cfg, [&](const EpochStats& s) {
                seconds += s.seconds;
                if (observer) observer(f, s);
            });
            fr.epochs = ckpt.history.size();
            fr.best_epoch = ckpt.best_epoch;
            fr.mean_epoch_seconds = fr.epochs ? seconds / static_cast<double>(fr.epochs) : 0.0;
            fr.training = evaluate_split(pool, ckpt.params, ckpt.model, "training", f);
            fr.testing = evaluate_split(test, ckpt.params, ckpt.model, "testing", f);
        } catch (const Error& e) {
            fr.error = e.what();
        }
        result.folds.push_back(std::move(fr));
    }
    return result;
}

std::string metrics_csv(std::span<const MetricsReport> reports) {
    std::ostringstream out;
    out.precision(6);
    out << std::fixed;
    out << "fold,split,accuracy,precision,recall,f1,macro_auc,weighted_auc\n";
    for (const auto& r : reports) {
        out << r.fold << ',' << r.split << ',' << r.accuracy << ',' << r.precision << ',' << r.recall << ',' << r.f1
            << ',' << r.macro_auc << ',' << r.weighted_auc << '\n';
    }
    return out.str();
}

std::string cross_validation_report(const CrossValidationResult& result, std::span<const std::string> class_names) {
    json folds = json::array();
    for (const auto& f : result.folds) {
        json j = {{"fold", f.fold},
                  {"train_size", f.train_size},
                  {"test_size", f.test_size},
                  {"epochs", f.epochs},
                  {"best_epoch", f.best_epoch}};
        if (!f.error.empty()) j["error"] = f.error;
        if (f.testing) j["testing"] = split_json(*f.testing);
        if (f.training) j["training"] = split_json(*f.training);
        folds.push_back(std::move(j));
    }
    json doc = {{"report", "cross-validation"},
                {"version", 1},
                {"folds_requested", result.k},
                {"classes", class_map_json(class_names)},
                {"train_only_classes", result.rare_classes},
                {"folds", std::move(folds)}};
    return doc.dump(1) + "\n";
}

std::string evaluation_report(const SplitEvaluation& eval, std::span<const std::string> class_names) {
    json roc = json::array();
    std::vector<double> column(eval.labels.size());
    std::unique_ptr<bool[]> flags(new bool[eval.labels.size()]);
    for (std::size_t c = 0; c < eval.probabilities.cols(); ++c) {
        for (std::size_t i = 0; i < eval.labels.size(); ++i) {
            column[i] = eval.probabilities(i, c);
            flags[i] = eval.labels[i] == c;
        }
        json pts = json::array();
        for (const auto& p : roc_curve(column, std::span<const bool>(flags.get(), eval.labels.size())))
            pts.push_back({p.fpr, p.tpr});
        roc.push_back({{"class", c}, {"points", std::move(pts)}});
    }
    json doc = {{"report", "evaluation"},
                {"version", 1},
                {"classes", class_map_json(class_names)},
                {"result", split_json(eval)},
                {"roc_curves", std::move(roc)}};
    return doc.dump(1) + "\n";
}

} // namespace handgcn
