#include "handgcn/training.hpp"

#include "handgcn/errors.hpp"

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace handgcn {

namespace {

using nlohmann::json;

constexpr std::uint64_t kInitStream = 0x696e6974;    // "init"
constexpr std::uint64_t kShuffleStream = 0x73687566; // "shuf"
constexpr std::uint64_t kDropoutStream = 0x64726f70; // "drop"

std::vector<std::size_t> labels_of(std::span<const PoseGraph> graphs) {
    std::vector<std::size_t> labels;
    labels.reserve(graphs.size());
    for (const auto& g : graphs) labels.push_back(g.label);
    return labels;
}

json hex(double v) { return encode_hex_double(v); }

double unhex(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw CorruptFile(std::string("missing real field '") + key + "'", std::nullopt);
    return decode_hex_double(it->get_ref<const std::string&>());
}

template <typename T>
T integer(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_number_integer())
        throw CorruptFile(std::string("missing integer field '") + key + "'", std::nullopt);
    return it->get<T>();
}

const json& member(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end()) throw CorruptFile(std::string("missing field '") + key + "'", std::nullopt);
    return *it;
}

json model_config_json(const ModelConfig& c) {
    return {{"hidden_dim", c.hidden_dim},
            {"num_classes", c.num_classes},
            {"num_nodes", c.num_nodes},
            {"in_features", c.in_features},
            {"leaky_alpha", hex(c.leaky_alpha)},
            {"dropout_p", hex(c.dropout_p)},
            {"desired_distance", hex(c.desired_distance)},
            {"bn_momentum", hex(c.bn_momentum)},
            {"bn_eps", hex(c.bn_eps)}};
}

ModelConfig model_config_from(const json& j) {
    ModelConfig c;
    c.hidden_dim = integer<std::size_t>(j, "hidden_dim");
    c.num_classes = integer<std::size_t>(j, "num_classes");
    c.num_nodes = integer<std::size_t>(j, "num_nodes");
    c.in_features = integer<std::size_t>(j, "in_features");
    c.leaky_alpha = unhex(j, "leaky_alpha");
    c.dropout_p = unhex(j, "dropout_p");
    c.desired_distance = unhex(j, "desired_distance");
    c.bn_momentum = unhex(j, "bn_momentum");
    c.bn_eps = unhex(j, "bn_eps");
    return c;
}

json train_config_json(const TrainConfig& c) {
    return {{"learning_rate", hex(c.learning_rate)},
            {"batch_size", c.batch_size},
            {"dropout_p", hex(c.dropout_p)},
            {"weight_decay", hex(c.weight_decay)},
            {"beta1", hex(c.beta1)},
            {"beta2", hex(c.beta2)},
            {"adam_eps", hex(c.adam_eps)},
            {"leaky_alpha", hex(c.leaky_alpha)},
            {"patience", c.patience},
            {"max_epochs", c.max_epochs},
            {"seed", c.seed},
            {"hidden_dim", c.hidden_dim},
            {"desired_distance", hex(c.desired_distance)},
            {"decoupled_weight_decay", c.decoupled_weight_decay},
            {"min_improvement", hex(c.min_improvement)}};
}

TrainConfig train_config_from(const json& j) {
    TrainConfig c;
    c.learning_rate = unhex(j, "learning_rate");
    c.batch_size = integer<std::size_t>(j, "batch_size");
    c.dropout_p = unhex(j, "dropout_p");
    c.weight_decay = unhex(j, "weight_decay");
    c.beta1 = unhex(j, "beta1");
    c.beta2 = unhex(j, "beta2");
    c.adam_eps = unhex(j, "adam_eps");
    c.leaky_alpha = unhex(j, "leaky_alpha");
    c.patience = integer<std::size_t>(j, "patience");
    c.max_epochs = integer<std::size_t>(j, "max_epochs");
    c.seed = integer<std::uint64_t>(j, "seed");
    c.hidden_dim = integer<std::size_t>(j, "hidden_dim");
    c.desired_distance = unhex(j, "desired_distance");
    const json& decoupled = member(j, "decoupled_weight_decay");
    if (!decoupled.is_boolean()) throw CorruptFile("decoupled_weight_decay must be a boolean", std::nullopt);
    c.decoupled_weight_decay = decoupled.get<bool>();
    c.min_improvement = unhex(j, "min_improvement");
    return c;
}

} // namespace

void TrainConfig::validate() const {
    const auto bad = [](const std::string& what) { throw DataError("invalid training config: " + what); };
    if (!(learning_rate >= 0.0)) bad("learning rate must be >= 0");
    if (batch_size < 1) bad("batch size must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) bad("dropout probability must be in [0, 1)");
    if (!(weight_decay >= 0.0)) bad("weight decay must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) bad("betas must be in (0, 1)");
    if (!(adam_eps > 0.0)) bad("adam epsilon must be positive");
    if (!(leaky_alpha > 0.0 && leaky_alpha < 1.0)) bad("leaky alpha must be in (0, 1)");
    if (max_epochs < 1) bad("max epochs must be >= 1");
    if (hidden_dim < 1) bad("hidden dim must be >= 1");
    if (!(desired_distance > 0.0)) bad("desired distance must be positive");
    if (!(min_improvement >= 0.0)) bad("min improvement must be >= 0");
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.hidden_dim = hidden_dim;
    m.leaky_alpha = leaky_alpha;
    m.dropout_p = dropout_p;
    m.desired_distance = desired_distance;
    return m;
}

AdamState AdamState::for_params(const ModelParams& params) {
    AdamState s;
    for (const auto& r : params.trainables()) {
        s.m.emplace_back(r.tensor->rows(), r.tensor->cols());
        s.v.emplace_back(r.tensor->rows(), r.tensor->cols());
    }
    return s;
}

void adam_update(Matrix& theta, const Matrix& grad, Matrix& m, Matrix& v, std::uint64_t t,
                 const TrainConfig& cfg) {
    if (!theta.same_shape(grad) || !theta.same_shape(m) || !theta.same_shape(v))
        throw DimensionMismatch("adam_update: tensor shapes differ");
    if (t == 0) throw Error("adam_update: step counter must be incremented before use");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double g = grad[i];
        if (cfg.decoupled_weight_decay) {
            theta[i] -= cfg.learning_rate * cfg.weight_decay * theta[i];
        } else {
            g += cfg.weight_decay * theta[i];
        }
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainConfig& cfg) {
    auto p = params.trainables();
    const auto g = grads.trainables();
    if (state.m.size() != p.size() || state.v.size() != p.size())
        throw DimensionMismatch("adam_step: optimizer state does not match parameters");
    ++state.step;
    for (std::size_t i = 0; i < p.size(); ++i)
        adam_update(*p[i].tensor, *g[i].tensor, state.m[i], state.v[i], state.step, cfg);
}

EarlyStopping::EarlyStopping(std::size_t patience, double min_improvement)
    : patience_(patience), min_improvement_(min_improvement) {}

bool EarlyStopping::update(double loss) {
    if (std::isfinite(loss) && (!std::isfinite(best_) || loss <= best_ - min_improvement_)) {
        best_ = loss;
        stale_epochs_ = 0;
        return true;
    }
    ++stale_epochs_;
    return false;
}

double evaluate_loss(std::span<const PoseGraph> graphs, const ModelParams& params, const ModelConfig& config) {
    if (graphs.empty()) throw EmptyDataset("evaluate_loss: no samples");
    const Matrix logp = predict_log_probs(graphs, params, config);
    const auto labels = labels_of(graphs);
    return nll_loss(logp, labels);
}

Checkpoint fit(std::span<const PoseGraph> train_set, std::span<const PoseGraph> val_set,
               const TrainConfig& cfg, const EpochObserver& observer) {
    cfg.validate();
    if (train_set.empty()) throw EmptyDataset("fit: empty training set");
    if (val_set.empty()) throw EmptyDataset("fit: empty validation set");

    Checkpoint ckpt;
    ckpt.model = cfg.model_config();
    ckpt.train = cfg;
    RngStream init_rng(derive_seed(cfg.seed, kInitStream));
    ModelParams params = init_params(ckpt.model, init_rng);
    ckpt.params = params;

    AdamState adam = AdamState::for_params(params);
    RngStream dropout_rng(derive_seed(cfg.seed, kDropoutStream));
    EarlyStopping stopper(cfg.patience, cfg.min_improvement);

    std::vector<std::size_t> order(train_set.size());
    std::vector<PoseGraph> batch;
    std::vector<std::size_t> labels;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        RngStream shuffle_rng(derive_seed(cfg.seed, kShuffleStream, epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            batch.clear();
            labels.clear();
            for (std::size_t i = 0; i < count; ++i) {
                batch.push_back(train_set[order[start + i]]);
                labels.push_back(batch.back().label);
            }
            ForwardResult fwd = model_forward(batch, params, ckpt.model, Mode::kTraining, &dropout_rng);
            const double loss = nll_loss(fwd.log_probs, labels);
            if (!std::isfinite(loss)) throw NonFiniteLoss(epoch, batch_index);
            const ModelParams grads = model_backward(*fwd.cache, params, labels);
            adam_step(params, grads, adam, cfg);
            params.bn_running_mean = std::move(fwd.cache->running_mean);
            params.bn_running_var = std::move(fwd.cache->running_var);
            loss_sum += loss * static_cast<double>(count);
        }

        const double train_loss = loss_sum / static_cast<double>(train_set.size());
        const double val_loss = evaluate_loss(val_set, params, ckpt.model);
        if (!std::isfinite(val_loss)) throw NonFiniteLoss(epoch);
        const bool improved = stopper.update(val_loss);
        ckpt.history.push_back({epoch, train_loss, val_loss});
        if (improved) {
            ckpt.params = params;
            ckpt.best_epoch = epoch;
        }
        if (observer) {
            const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
            observer({epoch, train_loss, val_loss, elapsed.count(), improved});
        }
        if (stopper.should_stop()) break;
    }
    return ckpt;
}

std::string encode_hex_double(double value) {
    char buf[64];
    std::string out;
    if (std::signbit(value)) {
        out += '-';
        value = -value;
    }
    if (std::isfinite(value)) out += "0x";
    const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::hex);
    out.append(buf, res.ptr);
    return out;
}

double decode_hex_double(std::string_view text) {
    const std::string_view original = text;
    bool negative = false;
    if (!text.empty() && text.front() == '-') {
        negative = true;
        text.remove_prefix(1);
    }
    if (text.starts_with("0x") || text.starts_with("0X")) text.remove_prefix(2);
    double value = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value, std::chars_format::hex);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw CorruptFile("malformed hexadecimal real '" + std::string(original) + "'", std::nullopt);
    return negative ? -value : value;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    json history = json::array();
    for (const auto& h : ckpt.history)
        history.push_back({{"epoch", h.epoch}, {"train_loss", hex(h.train_loss)}, {"val_loss", hex(h.val_loss)}});

    json tensors = json::array();
    for (const auto& r : ckpt.params.all_tensors()) {
        json data = json::array();
        for (double v : r.tensor->data()) data.push_back(encode_hex_double(v));
        tensors.push_back({{"name", std::string(r.name)},
                           {"shape", {r.tensor->rows(), r.tensor->cols()}},
                           {"data", std::move(data)}});
    }

    json doc = {{"format", "handgcn-checkpoint"},
                {"version", ckpt.format_version},
                {"model_config", model_config_json(ckpt.model)},
                {"train_config", train_config_json(ckpt.train)},
                {"best_epoch", ckpt.best_epoch},
                {"history", std::move(history)},
                {"tensors", std::move(tensors)}};
    return doc.dump(1) + "\n";
}

Checkpoint parse_checkpoint(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw CorruptFile(std::string("checkpoint is not valid structured text: ") + e.what(), e.byte);
    }
    try {
        if (!doc.is_object() || doc.value("format", "") != "handgcn-checkpoint")
            throw CorruptFile("not a handgcn checkpoint", std::nullopt);
        const int version = integer<int>(doc, "version");
        if (version != kCheckpointVersion)
            throw VersionMismatch("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                  std::to_string(kCheckpointVersion) + ")");

        Checkpoint ckpt;
        ckpt.format_version = version;
        ckpt.model = model_config_from(member(doc, "model_config"));
        ckpt.train = train_config_from(member(doc, "train_config"));
        ckpt.best_epoch = integer<std::size_t>(doc, "best_epoch");
        for (const auto& h : member(doc, "history")) {
            ckpt.history.push_back({integer<std::size_t>(h, "epoch"), unhex(h, "train_loss"), unhex(h, "val_loss")});
        }

        try {
            ckpt.model.validate();
        } catch (const Error& e) {
            throw CorruptFile(std::string("invalid model config: ") + e.what(), std::nullopt);
        }
        ckpt.params = ModelParams::zeros(ckpt.model);
        auto slots = ckpt.params.all_tensors();
        const json& tensors = member(doc, "tensors");
        if (!tensors.is_array() || tensors.size() != slots.size())
            throw CorruptFile("checkpoint must hold " + std::to_string(slots.size()) + " tensors", std::nullopt);
        for (std::size_t i = 0; i < slots.size(); ++i) {
            const json& t = tensors[i];
            if (member(t, "name") != slots[i].name)
                throw CorruptFile("tensor " + std::to_string(i) + " should be '" + std::string(slots[i].name) + "'",
                                  std::nullopt);
            const json& shape = member(t, "shape");
            Matrix& dst = *slots[i].tensor;
            if (shape != json{dst.rows(), dst.cols()})
                throw CorruptFile("tensor '" + std::string(slots[i].name) + "' has the wrong shape", std::nullopt);
            const json& data = member(t, "data");
            if (!data.is_array() || data.size() != dst.size())
                throw CorruptFile("tensor '" + std::string(slots[i].name) + "' has the wrong length", std::nullopt);
            for (std::size_t k = 0; k < dst.size(); ++k) {
                if (!data[k].is_string()) throw CorruptFile("tensor entries must be hex strings", std::nullopt);
                dst[k] = decode_hex_double(data[k].get_ref<const std::string&>());
            }
        }
        return ckpt;
    } catch (const json::exception& e) {
        throw CorruptFile(std::string("malformed checkpoint: ") + e.what(), std::nullopt);
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << serialize_checkpoint(ckpt);
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str());
}

} // namespace handgcn
