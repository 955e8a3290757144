#include "handgcn/gcn_net.hpp"

#include "handgcn/errors.hpp"

#include <cmath>
#include <string>

namespace handgcn {

namespace {

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, std::string_view what) {
    if (m.rows() != rows || m.cols() != cols) {
        throw DimensionMismatch(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
    }
}

// Block-diagonal product: rows [s·N, (s+1)·N) of the result are Â_s times the
// same rows of z. A single adjacency is shared by every block.
Matrix propagate(const std::vector<Matrix>& a_hats, const Matrix& z, std::size_t nodes,
                 bool transposed) {
    Matrix out(z.rows(), z.cols());
    const std::size_t batch = z.rows() / nodes;
    const std::size_t width = z.cols();
    for (std::size_t s = 0; s < batch; ++s) {
        const Matrix& a = a_hats.size() == 1 ? a_hats.front() : a_hats[s];
        for (std::size_t i = 0; i < nodes; ++i) {
            double* dst = out.row(s * nodes + i).data();
            for (std::size_t j = 0; j < nodes; ++j) {
                const double w = transposed ? a(j, i) : a(i, j);
                if (w == 0.0) continue;
                const double* src = z.row(s * nodes + j).data();
                for (std::size_t c = 0; c < width; ++c) dst[c] += w * src[c];
            }
        }
    }
    return out;
}

void scale_node_rows(Matrix& m, const std::vector<GraphDropout>& site, std::size_t nodes) {
    for (std::size_t s = 0; s < site.size(); ++s) {
        for (std::size_t i = 0; i < nodes; ++i) {
            const double k = site[s].node_scale[i];
            if (k == 1.0) continue;
            for (double& v : m.row(s * nodes + i)) v *= k;
        }
    }
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix z = matmul(x, w);
    add_row_vector(z, b);
    return z;
}

void check_params(const ModelParams& p, const ModelConfig& c) {
    const std::size_t h = c.hidden_dim;
    require_shape(p.gcn1_weight, c.in_features, h, "gcn1_weight");
    require_shape(p.gcn1_bias, 1, h, "gcn1_bias");
    require_shape(p.gcn2_weight, h, h, "gcn2_weight");
    require_shape(p.gcn2_bias, 1, h, "gcn2_bias");
    require_shape(p.gcn3_weight, h, h, "gcn3_weight");
    require_shape(p.gcn3_bias, 1, h, "gcn3_bias");
    require_shape(p.input_proj_weight, c.in_features, h, "input_proj_weight");
    require_shape(p.input_proj_bias, 1, h, "input_proj_bias");
    require_shape(p.bn_gamma, 1, h, "bn_gamma");
    require_shape(p.bn_beta, 1, h, "bn_beta");
    require_shape(p.bn_running_mean, 1, h, "bn_running_mean");
    require_shape(p.bn_running_var, 1, h, "bn_running_var");
    require_shape(p.head_weight, c.num_nodes * h, c.num_classes, "head_weight");
    require_shape(p.head_bias, 1, c.num_classes, "head_bias");
}

ForwardResult forward_impl(const Matrix& x, std::size_t batch, const ModelParams& p,
                           const ModelConfig& cfg, Mode mode, DropoutMasks* masks) {
    cfg.validate();
    check_params(p, cfg);
    const std::size_t n = cfg.num_nodes;
    const bool training = mode == Mode::kTraining;

    std::array<std::vector<Matrix>, 3> a_hat;
    a_hat[0] = {hand_normalized_adjacency()};
    if (training) {
        for (std::size_t layer = 1; layer < 3; ++layer) {
            a_hat[layer].reserve(batch);
            for (const auto& g : masks->sites[layer - 1]) a_hat[layer].push_back(normalized_adjacency(g.adjacency));
        }
    } else {
        a_hat[1] = a_hat[0];
        a_hat[2] = a_hat[0];
    }

    Matrix s0 = affine(x, p.input_proj_weight, p.input_proj_bias);

    Matrix pre1 = propagate(a_hat[0], affine(x, p.gcn1_weight, p.gcn1_bias), n, false);
    Matrix d1 = leaky_relu(pre1, cfg.leaky_alpha) + s0;
    if (training) scale_node_rows(d1, masks->sites[0], n);
    Matrix r1 = d1 + s0;

    Matrix pre2 = propagate(a_hat[1], affine(r1, p.gcn2_weight, p.gcn2_bias), n, false);
    Matrix g2 = leaky_relu(pre2, cfg.leaky_alpha) + r1;
    BatchNormOutput bn = batch_norm_forward(g2, p.bn_gamma, p.bn_beta, p.bn_running_mean,
                                            p.bn_running_var, mode, cfg.bn_momentum, cfg.bn_eps);
    Matrix d2 = std::move(bn.output);
    if (training) scale_node_rows(d2, masks->sites[1], n);
    Matrix r2 = d2 + r1;

    Matrix pre3 = propagate(a_hat[2], affine(r2, p.gcn3_weight, p.gcn3_bias), n, false);
    Matrix d3 = leaky_relu(pre3, cfg.leaky_alpha) + r2;
    if (training) scale_node_rows(d3, masks->sites[2], n);
    Matrix r3 = d3 + r2;

    Matrix logits = affine(r3.reshaped(batch, n * cfg.hidden_dim), p.head_weight, p.head_bias);
    ForwardResult result{log_softmax_rows(logits), std::nullopt};

    if (training) {
        ForwardCache c;
        c.batch_size = batch;
        c.config = cfg;
        c.input = x;
        c.masks = std::move(*masks);
        c.a_hat = std::move(a_hat);
        c.s0 = std::move(s0);
        c.pre_activation = {std::move(pre1), std::move(pre2), std::move(pre3)};
        c.r1 = std::move(r1);
        c.r2 = std::move(r2);
        c.r3 = std::move(r3);
        c.bn = std::move(bn.cache);
        c.log_probs = result.log_probs;
        c.running_mean = std::move(bn.running_mean);
        c.running_var = std::move(bn.running_var);
        result.cache = std::move(c);
    }
    return result;
}

} // namespace

void ModelConfig::validate() const {
    if (hidden_dim < 1) throw DimensionMismatch("hidden_dim must be >= 1");
    if (num_classes < 2) throw DimensionMismatch("num_classes must be >= 2");
    if (num_nodes != kNumLandmarks) throw DimensionMismatch("num_nodes must be 21 (hand skeleton)");
    if (in_features != kNumNodeFeatures) throw DimensionMismatch("in_features must be 4");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw DimensionMismatch("dropout_p must be in [0, 1)");
    if (!(leaky_alpha > 0.0 && leaky_alpha < 1.0)) throw DimensionMismatch("leaky_alpha must be in (0, 1)");
    if (!(desired_distance > 0.0)) throw DimensionMismatch("desired_distance must be positive");
}

ModelParams ModelParams::zeros(const ModelConfig& c) {
    const std::size_t h = c.hidden_dim;
    ModelParams p;
    p.gcn1_weight = Matrix(c.in_features, h);
    p.gcn1_bias = Matrix(1, h);
    p.gcn2_weight = Matrix(h, h);
    p.gcn2_bias = Matrix(1, h);
    p.gcn3_weight = Matrix(h, h);
    p.gcn3_bias = Matrix(1, h);
    p.input_proj_weight = Matrix(c.in_features, h);
    p.input_proj_bias = Matrix(1, h);
    p.bn_gamma = Matrix(1, h);
    p.bn_beta = Matrix(1, h);
    p.bn_running_mean = Matrix(1, h);
    p.bn_running_var = Matrix(1, h);
    p.head_weight = Matrix(c.num_nodes * h, c.num_classes);
    p.head_bias = Matrix(1, c.num_classes);
    return p;
}

std::vector<ModelParams::Ref> ModelParams::trainables() {
    return {{"gcn1_weight", &gcn1_weight}, {"gcn1_bias", &gcn1_bias},
            {"gcn2_weight", &gcn2_weight}, {"gcn2_bias", &gcn2_bias},
            {"gcn3_weight", &gcn3_weight}, {"gcn3_bias", &gcn3_bias},
            {"input_proj_weight", &input_proj_weight}, {"input_proj_bias", &input_proj_bias},
            {"bn_gamma", &bn_gamma}, {"bn_beta", &bn_beta},
            {"head_weight", &head_weight}, {"head_bias", &head_bias}};
}

std::vector<ModelParams::ConstRef> ModelParams::trainables() const {
    std::vector<ConstRef> out;
    for (const auto& r : const_cast<ModelParams*>(this)->trainables()) out.push_back({r.name, r.tensor});
    return out;
}

std::vector<ModelParams::Ref> ModelParams::all_tensors() {
    auto refs = trainables();
    refs.push_back({"bn_running_mean", &bn_running_mean});
    refs.push_back({"bn_running_var", &bn_running_var});
    return refs;
}

std::vector<ModelParams::ConstRef> ModelParams::all_tensors() const {
    std::vector<ConstRef> out;
    for (const auto& r : const_cast<ModelParams*>(this)->all_tensors()) out.push_back({r.name, r.tensor});
    return out;
}

ModelParams init_params(const ModelConfig& c, RngStream& rng) {
    c.validate();
    const std::size_t h = c.hidden_dim;
    ModelParams p = ModelParams::zeros(c);
    p.gcn1_weight = xavier_uniform(c.in_features, h, rng);
    p.gcn2_weight = xavier_uniform(h, h, rng);
    p.gcn3_weight = xavier_uniform(h, h, rng);
    p.input_proj_weight = xavier_uniform(c.in_features, h, rng);
    p.head_weight = xavier_uniform(c.num_nodes * h, c.num_classes, rng);
    p.bn_gamma.fill(1.0);
    p.bn_running_var.fill(1.0);
    return p;
}

std::size_t parameter_count(const ModelParams& params) {
    std::size_t total = 0;
    for (const auto& r : params.trainables()) total += r.tensor->size();
    return total;
}

Matrix normalized_adjacency(const Matrix& adjacency) {
    const std::size_t n = adjacency.rows();
    if (adjacency.cols() != n) throw DimensionMismatch("normalized_adjacency: matrix must be square");
    Matrix with_loops = adjacency;
    for (std::size_t i = 0; i < n; ++i) with_loops(i, i) += 1.0;
    std::vector<double> degree(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (double v : with_loops.row(i)) degree[i] += v;
    Matrix a_hat(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            a_hat(i, j) = with_loops(i, j) / std::sqrt(degree[i] * degree[j]);
    return a_hat;
}

const Matrix& hand_normalized_adjacency() {
    static const Matrix a_hat = normalized_adjacency(build_adjacency());
    return a_hat;
}

Matrix gcn_layer_forward(const Matrix& a_hat, const Matrix& h_in, const Matrix& weight,
                         const Matrix& bias, const Matrix& residual, double alpha) {
    const std::size_t n = h_in.rows();
    require_shape(a_hat, n, n, "gcn_layer_forward: a_hat");
    require_shape(residual, n, weight.cols(), "gcn_layer_forward: residual");
    Matrix pre = propagate({a_hat}, affine(h_in, weight, bias), n, false);
    return leaky_relu(pre, alpha) + residual;
}

GraphDropout sample_graph_dropout(const Matrix& adjacency, double p, RngStream& rng) {
    const std::size_t n = adjacency.rows();
    GraphDropout g{std::vector<double>(n), adjacency};
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < n; ++i) g.node_scale[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (g.adjacency(i, j) == 0.0) continue;
            if (rng.bernoulli(p)) {
                g.adjacency(i, j) = 0.0;
                g.adjacency(j, i) = 0.0;
            }
        }
    }
    return g;
}

NodeEdgeDropout node_edge_dropout(const Matrix& features, const Matrix& adjacency, double p,
                                  RngStream& rng, bool training) {
    if (!(p >= 0.0 && p < 1.0)) throw DimensionMismatch("dropout probability must be in [0, 1)");
    if (adjacency.rows() != features.rows()) throw DimensionMismatch("node_edge_dropout: node counts differ");
    if (!training) return {features, adjacency, std::vector<double>(features.rows(), 1.0)};
    GraphDropout g = sample_graph_dropout(adjacency, p, rng);
    Matrix out = features;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (double& v : out.row(i)) v *= g.node_scale[i];
    return {std::move(out), std::move(g.adjacency), std::move(g.node_scale)};
}

DropoutMasks sample_dropout_masks(std::size_t batch_size, const ModelConfig& config, RngStream& rng) {
    DropoutMasks masks;
    masks.batch_size = batch_size;
    for (auto& site : masks.sites) site.reserve(batch_size);
    const Matrix full = build_adjacency();
    for (std::size_t s = 0; s < batch_size; ++s) {
        const Matrix* prev = &full;
        for (auto& site : masks.sites) {
            site.push_back(sample_graph_dropout(*prev, config.dropout_p, rng));
            prev = &site.back().adjacency;
        }
    }
    return masks;
}

BatchNormOutput batch_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                                   const Matrix& running_mean, const Matrix& running_var, Mode mode,
                                   double momentum, double eps) {
    const std::size_t rows = x.rows(), ch = x.cols();
    require_shape(gamma, 1, ch, "batch_norm gamma");
    require_shape(beta, 1, ch, "batch_norm beta");
    require_shape(running_mean, 1, ch, "batch_norm running_mean");
    require_shape(running_var, 1, ch, "batch_norm running_var");

    BatchNormOutput out{Matrix(rows, ch), {Matrix(rows, ch), Matrix(1, ch)}, running_mean, running_var};
    Matrix mean(1, ch), var(1, ch);
    if (mode == Mode::kTraining) {
        if (rows < 2) throw InsufficientBatch("batch norm needs at least two rows in training mode");
        const double m = static_cast<double>(rows);
        mean = column_sums(x) * (1.0 / m);
        for (std::size_t i = 0; i < rows; ++i) {
            auto r = x.row(i);
            for (std::size_t c = 0; c < ch; ++c) {
                const double d = r[c] - mean[c];
                var[c] += d * d;
            }
        }
        var *= 1.0 / m;
        for (std::size_t c = 0; c < ch; ++c) {
            out.running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
            out.running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c] * m / (m - 1.0);
        }
    } else {
        mean = running_mean;
        var = running_var;
    }

    for (std::size_t c = 0; c < ch; ++c) out.cache.inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    for (std::size_t i = 0; i < rows; ++i) {
        auto xr = x.row(i);
        auto hr = out.cache.x_hat.row(i);
        auto yr = out.output.row(i);
        for (std::size_t c = 0; c < ch; ++c) {
            hr[c] = (xr[c] - mean[c]) * out.cache.inv_std[c];
            yr[c] = gamma[c] * hr[c] + beta[c];
        }
    }
    return out;
}

Matrix batch_norm_backward(const Matrix& grad_out, const BatchNormCache& cache, const Matrix& gamma,
                           Matrix& grad_gamma, Matrix& grad_beta) {
    const std::size_t rows = grad_out.rows(), ch = grad_out.cols();
    const double m = static_cast<double>(rows);
    Matrix sum_dxhat(1, ch), sum_dxhat_xhat(1, ch);
    for (std::size_t i = 0; i < rows; ++i) {
        auto g = grad_out.row(i);
        auto h = cache.x_hat.row(i);
        for (std::size_t c = 0; c < ch; ++c) {
            grad_gamma[c] += g[c] * h[c];
            grad_beta[c] += g[c];
            const double dxhat = g[c] * gamma[c];
            sum_dxhat[c] += dxhat;
            sum_dxhat_xhat[c] += dxhat * h[c];
        }
    }
    Matrix dx(rows, ch);
    for (std::size_t i = 0; i < rows; ++i) {
        auto g = grad_out.row(i);
        auto h = cache.x_hat.row(i);
        auto d = dx.row(i);
        for (std::size_t c = 0; c < ch; ++c) {
            const double dxhat = g[c] * gamma[c];
            d[c] = cache.inv_std[c] / m * (m * dxhat - sum_dxhat[c] - h[c] * sum_dxhat_xhat[c]);
        }
    }
    return dx;
}

Matrix stack_features(std::span<const PoseGraph> batch, const ModelConfig& config) {
    Matrix x(batch.size() * config.num_nodes, config.in_features);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const Matrix& f = batch[s].features;
        require_shape(f, config.num_nodes, config.in_features, "graph features");
        for (std::size_t i = 0; i < config.num_nodes; ++i)
            for (std::size_t c = 0; c < config.in_features; ++c) x(s * config.num_nodes + i, c) = f(i, c);
    }
    return x;
}

ForwardResult model_forward(std::span<const PoseGraph> batch, const ModelParams& params,
                            const ModelConfig& config, Mode mode, RngStream* rng) {
    if (batch.empty()) throw EmptyDataset("model_forward: empty batch");
    const Matrix x = stack_features(batch, config);
    if (mode == Mode::kInference) return forward_impl(x, batch.size(), params, config, mode, nullptr);
    if (rng == nullptr) throw Error("model_forward: training mode needs an RNG stream");
    DropoutMasks masks = sample_dropout_masks(batch.size(), config, *rng);
    return forward_impl(x, batch.size(), params, config, mode, &masks);
}

ForwardResult model_forward_with_masks(std::span<const PoseGraph> batch, const ModelParams& params,
                                       const ModelConfig& config, DropoutMasks masks) {
    if (batch.empty()) throw EmptyDataset("model_forward: empty batch");
    if (masks.batch_size != batch.size())
        throw DimensionMismatch("dropout masks were drawn for a different batch size");
    for (const auto& site : masks.sites)
        if (site.size() != batch.size()) throw DimensionMismatch("dropout masks are incomplete");
    const Matrix x = stack_features(batch, config);
    return forward_impl(x, batch.size(), params, config, Mode::kTraining, &masks);
}

double nll_loss(const Matrix& log_probs, std::span<const std::size_t> labels) {
    if (labels.size() != log_probs.rows()) throw DimensionMismatch("nll_loss: label count differs from batch");
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= log_probs.cols()) throw LabelOutOfRange("nll_loss: label out of range");
        total -= log_probs(i, labels[i]);
    }
    return total / static_cast<double>(labels.size());
}

ModelParams model_backward(const ForwardCache& cache, const ModelParams& p,
                           std::span<const std::size_t> labels) {
    const ModelConfig& cfg = cache.config;
    const std::size_t batch = cache.batch_size;
    const std::size_t n = cfg.num_nodes;
    const std::size_t h = cfg.hidden_dim;
    if (labels.size() != batch || cache.log_probs.rows() != batch)
        throw StaleCache("model_backward: cache holds " + std::to_string(batch) + " samples, got " +
                         std::to_string(labels.size()) + " labels");
    try {
        check_params(p, cfg);
    } catch (const DimensionMismatch& e) {
        throw StaleCache(std::string("model_backward: parameters do not match cache: ") + e.what());
    }
    if (cache.r3.rows() != batch * n || cache.r3.cols() != h)
        throw StaleCache("model_backward: cache activations have the wrong shape");

    ModelParams grad = ModelParams::zeros(cfg);
    const double inv_b = 1.0 / static_cast<double>(batch);

    // d loss / d logits = (softmax - onehot) / B
    Matrix dlogits(batch, cfg.num_classes);
    for (std::size_t i = 0; i < batch; ++i) {
        if (labels[i] >= cfg.num_classes) throw LabelOutOfRange("model_backward: label out of range");
        for (std::size_t k = 0; k < cfg.num_classes; ++k) dlogits(i, k) = std::exp(cache.log_probs(i, k)) * inv_b;
        dlogits(i, labels[i]) -= inv_b;
    }
    const Matrix flat = cache.r3.reshaped(batch, n * h);
    grad.head_weight = matmul_tn(flat, dlogits);
    grad.head_bias = column_sums(dlogits);
    Matrix dr = matmul_nt(dlogits, p.head_weight).reshaped(batch * n, h);

    const auto gcn_backward = [&](std::size_t layer, const Matrix& dg, const Matrix& layer_in,
                                  const Matrix& weight, Matrix& dweight, Matrix& dbias) {
        Matrix da = hadamard(dg, leaky_relu_grad(cache.pre_activation[layer], cfg.leaky_alpha));
        Matrix dz = propagate(cache.a_hat[layer], da, n, true);
        dweight = matmul_tn(layer_in, dz);
        dbias = column_sums(dz);
        return matmul_nt(dz, weight);
    };

    // r3 = d3 + r2
    Matrix dg3 = dr;
    scale_node_rows(dg3, cache.masks.sites[2], n);
    dr += gcn_backward(2, dg3, cache.r2, p.gcn3_weight, grad.gcn3_weight, grad.gcn3_bias);
    dr += dg3; // internal residual of GCN3

    // r2 = d2 + r1
    Matrix dbn = dr;
    scale_node_rows(dbn, cache.masks.sites[1], n);
    Matrix dg2 = batch_norm_backward(dbn, cache.bn, p.bn_gamma, grad.bn_gamma, grad.bn_beta);
    dr += gcn_backward(1, dg2, cache.r1, p.gcn2_weight, grad.gcn2_weight, grad.gcn2_bias);
    dr += dg2;

    // r1 = d1 + s0
    Matrix dg1 = dr;
    scale_node_rows(dg1, cache.masks.sites[0], n);
    Matrix ds0 = dr;
    gcn_backward(0, dg1, cache.input, p.gcn1_weight, grad.gcn1_weight, grad.gcn1_bias);
    ds0 += dg1;

    grad.input_proj_weight = matmul_tn(cache.input, ds0);
    grad.input_proj_bias = column_sums(ds0);
    return grad;
}

Matrix predict_log_probs(std::span<const PoseGraph> graphs, const ModelParams& params,
                         const ModelConfig& config, std::size_t chunk) {
    Matrix out(graphs.size(), config.num_classes);
    for (std::size_t start = 0; start < graphs.size(); start += chunk) {
        const std::size_t count = std::min(chunk, graphs.size() - start);
        const auto res = model_forward(graphs.subspan(start, count), params, config, Mode::kInference);
        for (std::size_t i = 0; i < count; ++i)
            std::copy(res.log_probs.row(i).begin(), res.log_probs.row(i).end(), out.row(start + i).begin());
    }
    return out;
}

} // namespace handgcn
